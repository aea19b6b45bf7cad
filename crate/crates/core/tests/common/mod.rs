#![allow(dead_code)]

use std::collections::BTreeMap;

use cotscore_core::gateway::{OutputCriterion, OutputDocument};
use cotscore_core::rubric::Rubric;
use cotscore_core::workspace::Workspace;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Fresh workspace populated with the shipped fixtures.
pub fn fixture_workspace() -> (tempfile::TempDir, Workspace) {
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::init(dir.path(), true).unwrap();
    (dir, ws)
}

/// Full observed-count matrix, rows = first rater.
fn observed(pairs: &[(i64, i64)], lo: i64, k: usize) -> Vec<Vec<f64>> {
    let mut o = vec![vec![0.0; k]; k];
    for &(a, b) in pairs {
        o[(a - lo) as usize][(b - lo) as usize] += 1.0;
    }
    o
}

/// Both raters gave one and the same label to every item.
fn single_shared_level(pairs: &[(i64, i64)]) -> bool {
    let v = pairs[0].0;
    pairs.iter().all(|&(a, b)| a == v && b == v)
}

fn all_agree(pairs: &[(i64, i64)]) -> bool {
    pairs.iter().all(|(a, b)| a == b)
}

/// Cohen's kappa from materialized O and E matrices.
pub fn oracle_kappa(pairs: &[(i64, i64)], lo: i64, hi: i64) -> f64 {
    if single_shared_level(pairs) {
        return 1.0;
    }
    let k = (hi - lo + 1) as usize;
    let n = pairs.len() as f64;
    let o = observed(pairs, lo, k);
    let rows: Vec<f64> = (0..k).map(|i| o[i].iter().sum()).collect();
    let cols: Vec<f64> = (0..k).map(|j| (0..k).map(|i| o[i][j]).sum()).collect();
    let po: f64 = (0..k).map(|i| o[i][i]).sum::<f64>() / n;
    let pe: f64 = (0..k).map(|i| rows[i] * cols[i]).sum::<f64>() / (n * n);
    if pe == 1.0 {
        return if all_agree(pairs) { 1.0 } else { 0.0 };
    }
    (po - pe) / (1.0 - pe)
}

/// Quadratic weighted kappa from materialized O, E and w matrices.
pub fn oracle_qwk(pairs: &[(i64, i64)], lo: i64, hi: i64) -> f64 {
    let k = (hi - lo + 1) as usize;
    let n = pairs.len() as f64;
    let o = observed(pairs, lo, k);
    let rows: Vec<f64> = (0..k).map(|i| o[i].iter().sum()).collect();
    let cols: Vec<f64> = (0..k).map(|j| (0..k).map(|i| o[i][j]).sum()).collect();
    let denom_w = ((k - 1) * (k - 1)) as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..k {
        for j in 0..k {
            let w = ((i as f64 - j as f64).powi(2)) / denom_w;
            let e = rows[i] * cols[j] / n;
            num += w * o[i][j];
            den += w * e;
        }
    }
    if single_shared_level(pairs) || den == 0.0 {
        return if all_agree(pairs) { 1.0 } else { 0.0 };
    }
    1.0 - num / den
}

/// Seeded random series with K in 2..=5 levels and N in 1..=12 pairs.
pub fn random_series(seed: u64) -> (Vec<(i64, i64)>, i64, i64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k: i64 = rng.gen_range(2..=5);
    let lo: i64 = rng.gen_range(-2..=2);
    let hi = lo + k - 1;
    let n = rng.gen_range(1..=12);
    let pairs = (0..n)
        .map(|_| (rng.gen_range(lo..=hi), rng.gen_range(lo..=hi)))
        .collect();
    (pairs, lo, hi)
}

/// Pairs reproducing a 2x2 contingency table `[[a, b], [c, d]]`.
pub fn table_pairs(t: [[usize; 2]; 2]) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    for (i, row) in t.iter().enumerate() {
        for (j, &count) in row.iter().enumerate() {
            out.extend(std::iter::repeat_n((i as i64, j as i64), count));
        }
    }
    out
}

/// Output document with the given slot scores and reported total.
pub fn document(rubric: &Rubric, scores: &BTreeMap<String, i64>, total: i64) -> String {
    let doc = OutputDocument {
        criteria: rubric
            .slots()
            .into_iter()
            .map(|s| OutputCriterion {
                id: s.to_string(),
                reasoning: format!("Reasoning for {s}."),
                score: scores[s],
            })
            .collect(),
        total_score: total,
    };
    serde_json::to_string(&doc).unwrap()
}
