use std::collections::HashSet;

use super::*;

#[test]
fn default_table_and_recall() {
    let r = miss_report(1_000_000_000, 1000, 256, 2, 0, 0).unwrap();
    let at_most: Vec<f64> = r.rows.iter().map(|row| row.exact_at_most.unwrap() * 100.0).collect();
    for (v, t) in at_most.iter().zip([88.039606, 99.256299, 99.968922]) {
        assert!((v - t).abs() < 1e-6, "{v} vs {t}");
    }
    assert!((r.expected_recall - 0.999873).abs() < 1e-6);
    assert_eq!(r.threads, 1_000_000_000 / 256);
    assert!(r.rows.iter().all(|row| row.simulated.is_none()));
    assert!(r.exact_note.is_none());
}

#[test]
fn simulation_agrees_and_extends_past_the_exact_range() {
    let r = miss_report(2560, 10, 256, 5, 20_000, 9).unwrap();
    assert_eq!(r.rows.len(), 6);
    for row in &r.rows[..4] {
        let (exact, sim, se) = (row.exact_at_most.unwrap(), row.simulated_at_most.unwrap(), row.std_error.unwrap());
        assert!((exact - sim).abs() <= 4.0 * se.max(1e-4), "{row:?}");
    }
    assert!(r.rows[4].exact.is_none() && r.rows[4].simulated.is_some());
    assert!(r.exact_note.unwrap().contains("l = 3"));
}

#[test]
fn ragged_threads_keep_the_simulation() {
    let r = miss_report(1000, 20, 64, 2, 2000, 1).unwrap();
    assert_eq!(r.threads, 16);
    assert!(r.exact_note.is_some());
    assert!(r.rows.iter().all(|row| row.exact.is_none() && row.simulated.is_some()));
    assert!(r.expected_recall > 0.0 && r.expected_recall < 1.0);
}

#[test]
fn miss_report_rejects_bad_input() {
    assert!(miss_report(10, 11, 2, 1, 0, 0).is_err());
    assert!(miss_report(10, 1, 0, 1, 0, 0).is_err());
    assert!(miss_report(10, 1, 2, 1, MAX_TRIALS + 1, 0).is_err());
}

#[test]
fn weighted_levels_are_evenly_spaced_and_unique() {
    for planes in 1..=6 {
        let r = refined_levels(planes, true).unwrap();
        assert_eq!(r.levels.len(), 1 << planes);
        assert!(r.levels.iter().all(|l| l.patterns == 1));
        let step = r.levels[1].value - r.levels[0].value;
        assert!((step - 2.0 * 0.5f64.powi(planes as i32 - 1)).abs() < 1e-12);
        for pair in r.levels.windows(2) {
            assert!((pair[1].value - pair[0].value - step).abs() < 1e-12);
        }
        let top = 2.0 - 0.5f64.powi(planes as i32 - 1);
        assert!((r.levels.last().unwrap().value - top).abs() < 1e-12);
    }
}

#[test]
fn unweighted_levels_are_binomial() {
    let r = refined_levels(4, false).unwrap();
    let values: Vec<f64> = r.levels.iter().map(|l| l.value).collect();
    let counts: Vec<u64> = r.levels.iter().map(|l| l.patterns).collect();
    assert_eq!(values, vec![-4.0, -2.0, 0.0, 2.0, 4.0]);
    assert_eq!(counts, vec![1, 4, 6, 4, 1]);
    assert_eq!(r.sign_patterns, 16);
    assert!(refined_levels(0, true).is_err());
    assert!(refined_levels(MAX_LEVEL_PLANES + 1, true).is_err());
}

#[test]
fn approximation_starts_from_signs_and_improves() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x: Vec<f64> = (0..64).map(|_| rand::Rng::gen_range(&mut rng, -2.0..2.0)).collect();
    let a = approximate(&x, 3, true).unwrap();
    let signs: Vec<i8> = x.iter().map(|v| if *v >= 0.0 { 1 } else { -1 }).collect();
    assert_eq!(a.planes[0], signs);
    assert_eq!(a.refined.len(), 3);
    assert!(a.cosines[2] > a.cosines[0]);
    assert!(a.cosines.iter().all(|c| *c <= 1.0 + 1e-12));
    assert!(approximate(&[], 2, true).is_err());
    assert!(approximate(&[1.0, f64::NAN], 2, true).is_err());
}

#[test]
fn scan_map_matches_the_geometry() {
    let m = scan_map(1000, 8, 16, 30, 3).unwrap();
    assert_eq!(m.geometry.blocks, 8);
    assert_eq!(m.thread_of.len(), 1000);
    assert_eq!(m.thread_sizes.iter().sum::<u64>(), 1000);
    for thread in [0usize, 7, 9, 60] {
        let (block, y) = (thread / 8, thread % 8);
        for slot in m.geometry.thread_assignment(block, y, 1000).unwrap() {
            assert_eq!(m.thread_of[slot] as usize, thread);
        }
    }
    let occupied: HashSet<u32> = m.relevant_slots.iter().map(|&s| m.thread_of[s]).collect();
    assert_eq!(m.missed as usize, 30 - occupied.len());
    assert!(m.relevant_slots.windows(2).all(|w| w[0] < w[1]));
    assert!(scan_map(MAX_MAP_SLOTS + 1, 8, 8, 1, 0).is_err());
    assert!(scan_map(100, 8, 8, 0, 0).is_err());
}

#[test]
fn javascript_numbers_must_be_counts() {
    assert_eq!(count("x", 12.0).unwrap(), 12);
    assert!(count("x", -1.0).is_err());
    assert!(count("x", 1.5).is_err());
    assert!(count("x", f64::INFINITY).is_err());
}

#[test]
fn reports_serialize() {
    let json = serde_json::to_string(&miss_report(2560, 10, 256, 2, 100, 0).unwrap()).unwrap();
    assert!(json.contains("\"expected_recall\""));
    let json = serde_json::to_string(&scan_map(64, 4, 4, 5, 0).unwrap()).unwrap();
    assert!(json.contains("\"thread_of\""));
}
