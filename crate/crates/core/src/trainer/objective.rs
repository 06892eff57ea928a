use crate::error::{Error, Result};

fn check_group(similarities: &[f64], positive: usize, gamma: f64) -> Result<()> {
    if similarities.is_empty() {
        return Err(Error::Empty("sample group"));
    }
    if positive >= similarities.len() {
        return Err(Error::invalid(format!(
            "positive index {positive} outside a group of {}",
            similarities.len()
        )));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!("gamma must be > 0, got {gamma}")));
    }
    if similarities.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("similarity"));
    }
    Ok(())
}

/// Softmax probabilities `exp(γ·s_i) / Σ exp(γ·s_j)`.
pub fn softmax(similarities: &[f64], gamma: f64) -> Vec<f64> {
    let max = similarities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = similarities.iter().map(|s| (gamma * (s - max)).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Probability the positive wins its group.
pub fn group_probability(similarities: &[f64], positive: usize, gamma: f64) -> Result<f64> {
    check_group(similarities, positive, gamma)?;
    Ok(softmax(similarities, gamma)[positive])
}

/// `-log P(positive | group)`, computed as a log-sum-exp.
pub fn group_loss(similarities: &[f64], positive: usize, gamma: f64) -> Result<f64> {
    check_group(similarities, positive, gamma)?;
    let max = similarities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = similarities.iter().map(|s| (gamma * (s - max)).exp()).sum::<f64>().ln() + gamma * max;
    Ok(lse - gamma * similarities[positive])
}

/// Loss and its derivative with respect to each similarity.
pub fn group_loss_grad(similarities: &[f64], positive: usize, gamma: f64) -> Result<(f64, Vec<f64>)> {
    let loss = group_loss(similarities, positive, gamma)?;
    let mut grad: Vec<f64> = softmax(similarities, gamma).into_iter().map(|p| gamma * p).collect();
    grad[positive] -= gamma;
    Ok((loss, grad))
}

/// Mean negative log probability over groups given as
/// (similarities, positive index).
pub fn objective(groups: &[(Vec<f64>, usize)], gamma: f64) -> Result<f64> {
    if groups.is_empty() {
        return Err(Error::Empty("sample groups"));
    }
    let total = groups
        .iter()
        .map(|(s, p)| group_loss(s, *p, gamma))
        .sum::<Result<f64>>()?;
    Ok(total / groups.len() as f64)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine of `a` and `b`, zero when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// Cosine with its gradients with respect to `a` and `b`.
pub fn cosine_grad(a: &[f64], b: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return (0.0, vec![0.0; a.len()], vec![0.0; b.len()]);
    }
    let c = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
    let ga = a.iter().zip(b).map(|(x, y)| y / (na * nb) - c * x / (na * na)).collect();
    let gb = a.iter().zip(b).map(|(x, y)| x / (na * nb) - c * y / (nb * nb)).collect();
    (c, ga, gb)
}

/// Area under the ROC curve via the Mann-Whitney statistic; ties count half.
pub fn evaluate_auc(scored: &[(f64, bool)]) -> Result<f64> {
    if scored.iter().any(|(s, _)| !s.is_finite()) {
        return Err(Error::NonFinite("score"));
    }
    let positives = scored.iter().filter(|(_, l)| *l).count();
    let negatives = scored.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::invalid("AUC needs at least one positive and one negative"));
    }
    let mut sorted: Vec<(f64, bool)> = scored.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            j += 1;
        }
        let mid_rank = (i + 1 + j) as f64 / 2.0;
        rank_sum += mid_rank * sorted[i..j].iter().filter(|(_, l)| *l).count() as f64;
        i = j;
    }
    let p = positives as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * negatives as f64))
}
