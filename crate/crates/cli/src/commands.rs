use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rbe::analysis::{binomial_std_error, simulate_miss, MissModel};
use rbe::bench::{binary_vs_float, time_index, time_single, BenchMode, Timing};
use rbe::engine::{read_embeddings, search_text, write_embeddings, write_results, KeywordIndex, ScanGeometry};
use rbe::model::{RbeModel, Side};
use rbe::trainer::{load_pairs, train as train_model, write_metrics};

use crate::config::{input_file, required, Settings};
use crate::error::{CliError, CliResult};

pub enum QueryInput {
    Text(String),
    Batch(PathBuf),
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

/// Standard output, or the file named by `output`.
fn sink(output: &Option<PathBuf>) -> CliResult<Box<dyn Write>> {
    Ok(match output {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

pub fn train(s: &Settings) -> CliResult<()> {
    let cfg = s.train_config()?;
    let pairs_path = input_file(&s.pairs, "pairs")?;
    let checkpoint = required(&s.checkpoint, "checkpoint")?;
    let pairs = load_pairs(pairs_path)?;
    let m = &cfg.model;
    eprintln!(
        "training on {} pairs: m={} n={} u={} v={} estimator={} gamma={} epochs={} lr={}",
        pairs.len(),
        m.feature_dim,
        m.code_dim,
        m.query_steps,
        m.keyword_steps,
        m.estimator,
        m.gamma,
        cfg.epochs,
        cfg.learning_rate
    );
    let out = train_model(&pairs, &cfg)?;
    for e in &out.history {
        eprintln!(
            "epoch {:>3}  train loss {:.4}  valid loss {:.4}  auc {:.4}  lr {:.4}",
            e.epoch, e.train_loss, e.valid_loss, e.auc, e.learning_rate
        );
    }
    out.model.save(checkpoint)?;
    if let Some(path) = &s.metrics {
        let mut w = create(path)?;
        write_metrics(&mut w, &out.history)?;
        w.flush()?;
    }
    let best = &out.history[out.best_epoch];
    println!(
        "checkpoint {}: {} query planes, {} keyword planes; best epoch {} (valid loss {:.4}, auc {:.4})",
        checkpoint.display(),
        m.query_steps + 1,
        m.keyword_steps + 1,
        out.best_epoch,
        best.valid_loss,
        best.auc
    );
    Ok(())
}

pub fn encode(s: &Settings) -> CliResult<()> {
    let side = s.side(Side::Keyword)?;
    let model = RbeModel::load(input_file(&s.checkpoint, "checkpoint")?)?;
    let input = input_file(&s.keywords, "keywords")?;
    let output = required(&s.embeddings, "embeddings")?;
    let mut records = Vec::new();
    let mut skipped = 0usize;
    for (i, line) in open(input)?.lines().enumerate() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            eprintln!("warning: line {}: empty line skipped", i + 1);
            skipped += 1;
            continue;
        }
        match model.encode(side, text) {
            Ok(e) => records.push((i as u64, e)),
            Err(e) => {
                eprintln!("warning: line {}: {e}; skipped", i + 1);
                skipped += 1;
            }
        }
    }
    let planes = model.config.steps(side) + 1;
    let mut w = create(output)?;
    write_embeddings(&mut w, model.config.code_dim, planes, model.config.residual_weights, &records)?;
    w.flush()?;
    println!(
        "encoded {} lines into {} ({} planes of {} bits); skipped {skipped}",
        records.len(),
        output.display(),
        planes,
        model.config.code_dim
    );
    Ok(())
}

pub fn build(s: &Settings) -> CliResult<()> {
    let partitions = s.partitions()?;
    let input = input_file(&s.embeddings, "embeddings")?;
    let output = required(&s.index, "index")?;
    let (header, records) = read_embeddings(&mut open(input)?)?;
    let index = KeywordIndex::build(records, partitions, header.residual_weights)?;
    index.save(output)?;
    println!(
        "indexed {} keywords in {} partitions to {}: plane payload {} bytes ({} bytes/keyword)",
        index.len(),
        index.partitions().len(),
        output.display(),
        index.plane_payload_bytes(),
        index.plane_bytes_per_keyword()
    );
    Ok(())
}

/// The configured geometry, made lossless when `n` asks for every keyword.
fn query_geometry(s: &Settings, index: &KeywordIndex, n: usize) -> CliResult<ScanGeometry> {
    let shape = s.geometry()?;
    let queue_len = if n >= index.len() {
        eprintln!("note: top_n {n} covers all {} keywords; keeping every candidate", index.len());
        shape.items_per_thread
    } else {
        shape.queue_len
    };
    Ok(index.covering_geometry(shape.threads_per_block, shape.items_per_thread, queue_len)?)
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

pub fn query(s: &Settings, input: QueryInput) -> CliResult<()> {
    let n = s.top_n()?;
    let index = KeywordIndex::load(input_file(&s.index, "index")?)?;
    let model = RbeModel::load(input_file(&s.checkpoint, "checkpoint")?)?;
    let geometry = query_geometry(s, &index, n)?;
    let mut out = sink(&s.output)?;
    let mut latencies = Vec::new();
    match input {
        QueryInput::Text(text) => {
            let start = Instant::now();
            let result = search_text(&model, &text, &index, &geometry, n)?;
            latencies.push(start.elapsed().as_secs_f64());
            write_results(&mut out, &result)?;
        }
        QueryInput::Batch(path) => {
            if !path.is_file() {
                return Err(CliError::usage(format!("batch: file not found: {}", path.display())));
            }
            for (i, line) in open(&path)?.lines().enumerate() {
                let line = line?;
                let text = line.trim();
                if text.is_empty() {
                    continue;
                }
                let start = Instant::now();
                match search_text(&model, text, &index, &geometry, n) {
                    Ok(result) => {
                        latencies.push(start.elapsed().as_secs_f64());
                        writeln!(out, "# query {}: {text}", i + 1)?;
                        write_results(&mut out, &result)?;
                    }
                    Err(e) => eprintln!("warning: line {}: {e}; skipped", i + 1),
                }
            }
        }
    }
    out.flush()?;
    if !latencies.is_empty() {
        let mean = latencies.iter().sum::<f64>() / latencies.len() as f64;
        latencies.sort_by(f64::total_cmp);
        eprintln!(
            "{} queries over {} keywords: mean {:.3} ms, p99 {:.3} ms",
            latencies.len(),
            index.len(),
            mean * 1e3,
            percentile(&latencies, 0.99) * 1e3
        );
    }
    Ok(())
}

pub fn analyze(s: &Settings) -> CliResult<()> {
    let p = s.analyze()?;
    let model = MissModel::new(p.candidates, p.relevant, p.per_thread)?;
    let simulated = if p.simulate {
        Some(simulate_miss(p.candidates, p.relevant, p.per_thread, p.queue_len, p.trials, p.seed)?)
    } else {
        None
    };
    let mut out = sink(&s.output)?;
    write!(out, "candidates,relevant,per_thread,l,p_at_most_percent")?;
    if simulated.is_some() {
        write!(out, ",simulated_percent,std_error_percent")?;
    }
    writeln!(out)?;
    for l in 0..=p.max_missed {
        let exact = model.p_l_at_most(l)?;
        write!(out, "{},{},{},{l},{:.6}", p.candidates, p.relevant, p.per_thread, exact * 100.0)?;
        if let Some(d) = &simulated {
            let empirical = d.at_most(l as usize);
            write!(out, ",{:.6},{:.6}", empirical * 100.0, binomial_std_error(empirical, d.trials) * 100.0)?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

fn describe(t: &Timing) -> String {
    format!(
        "{}: {:.3e} keywords/s over {} keywords (mean {:.4} s, sd {:.4} s, {} runs)",
        t.mode, t.throughput, t.keywords, t.mean_seconds, t.stddev_seconds, t.runs
    )
}

pub fn bench(s: &Settings) -> CliResult<()> {
    let (cfg, mode) = s.bench()?;
    if let Some(path) = &s.index {
        if mode == BenchMode::Float {
            return Err(CliError::usage("mode: an index can only be timed in binary mode"));
        }
        let index = KeywordIndex::load(input_file(&Some(path.clone()), "index")?)?;
        let geometry = index.covering_geometry(cfg.threads_per_block, cfg.items_per_thread, 1)?;
        let t = time_index(&index, cfg.query_planes, &geometry, cfg.top_n, cfg.runs, cfg.seed)?;
        println!("{}", describe(&t));
        return Ok(());
    }
    match mode {
        BenchMode::Both => {
            let r = binary_vs_float(&cfg)?;
            println!("{}", describe(&r.binary));
            println!("{}", describe(&r.float));
            println!("ratio binary/float: {:.2} +- {:.2}", r.ratio, r.ratio_stddev);
        }
        single => println!("{}", describe(&time_single(&cfg, single)?)),
    }
    Ok(())
}
