//! Random-forest classifier used only for mean-decrease-in-impurity
//! importance ranking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            seed: 0,
        }
    }
}

/// Normalized importance scores (sum to 1) plus the descending order.
#[derive(Debug, Clone)]
pub struct ImportanceRanking {
    pub scores: Vec<f64>,
    /// Feature indices sorted by descending score (ties by index).
    pub order: Vec<usize>,
}

/// Train a seeded random forest (bootstrap sampling, sqrt(p) features per
/// split, Gini impurity, unlimited depth) and return per-feature
/// impurity-decrease importances normalized to sum 1.
pub fn rank_importance(
    x: &[Vec<f64>],
    labels: &[usize],
    cfg: &ForestConfig,
) -> Result<ImportanceRanking> {
    if x.is_empty() || x.len() != labels.len() {
        return Err(Error::Size(format!(
            "feature matrix ({} rows) and labels ({}) must be non-empty and aligned",
            x.len(),
            labels.len()
        )));
    }
    let n_classes = labels.iter().max().unwrap() + 1;
    let mut seen = vec![false; n_classes];
    for &l in labels {
        seen[l] = true;
    }
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(Error::DegenerateLabels(
            "importance ranking needs at least two distinct classes".to_string(),
        ));
    }
    let p = x[0].len();
    let n = x.len();
    let m_try = ((p as f64).sqrt().floor() as usize).max(1);

    let mut total = vec![0.0; p];
    for tree_idx in 0..cfg.n_trees {
        let mut rng =
            ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5851f42d4c957f2du64.wrapping_mul(tree_idx as u64 + 1));
        let sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let mut importances = vec![0.0; p];
        let mut scratch = TreeScratch {
            x,
            labels,
            n_classes,
            n_total: sample.len(),
            m_try,
            importances: &mut importances,
        };
        grow(&mut scratch, sample, &mut rng);
        let sum: f64 = importances.iter().sum();
        if sum > 0.0 {
            for (t, imp) in total.iter_mut().zip(&importances) {
                *t += imp / sum;
            }
        }
    }
    let sum: f64 = total.iter().sum();
    if sum <= 0.0 {
        return Err(Error::Numeric(
            "random forest produced no informative splits".to_string(),
        ));
    }
    let scores: Vec<f64> = total.iter().map(|t| t / sum).collect();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    Ok(ImportanceRanking { scores, order })
}

struct TreeScratch<'a> {
    x: &'a [Vec<f64>],
    labels: &'a [usize],
    n_classes: usize,
    n_total: usize,
    m_try: usize,
    importances: &'a mut [f64],
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts
        .iter()
        .map(|&c| {
            let f = c as f64 / t;
            f * f
        })
        .sum::<f64>()
}

fn grow(t: &mut TreeScratch, indices: Vec<usize>, rng: &mut ChaCha8Rng) {
    let n_node = indices.len();
    if n_node < 2 {
        return;
    }
    let mut counts = vec![0usize; t.n_classes];
    for &i in &indices {
        counts[t.labels[i]] += 1;
    }
    let node_impurity = gini(&counts, n_node);
    if node_impurity <= 0.0 {
        return;
    }

    // sample m_try distinct features (partial Fisher-Yates)
    let p = t.x[0].len();
    let mut features: Vec<usize> = (0..p).collect();
    for k in 0..t.m_try.min(p) {
        let j = k + rng.random_range(0..p - k);
        features.swap(k, j);
    }
    features.truncate(t.m_try.min(p));

    let mut best: Option<(usize, f64, f64)> = None; // (feature, threshold, decrease)
    let mut sorted = indices.clone();
    for &f in &features {
        sorted.sort_by(|&a, &b| t.x[a][f].partial_cmp(&t.x[b][f]).unwrap().then(a.cmp(&b)));
        let mut left = vec![0usize; t.n_classes];
        let mut right = counts.clone();
        for split in 1..n_node {
            let prev = sorted[split - 1];
            left[t.labels[prev]] += 1;
            right[t.labels[prev]] -= 1;
            let (va, vb) = (t.x[prev][f], t.x[sorted[split]][f]);
            if va == vb {
                continue;
            }
            let nl = split;
            let nr = n_node - split;
            let decrease = node_impurity
                - (nl as f64 / n_node as f64) * gini(&left, nl)
                - (nr as f64 / n_node as f64) * gini(&right, nr);
            if decrease > best.map_or(1e-12, |(_, _, d)| d) {
                best = Some((f, 0.5 * (va + vb), decrease));
            }
        }
    }

    let (feature, threshold, decrease) = match best {
        Some(b) => b,
        None => return,
    };
    t.importances[feature] += n_node as f64 / t.n_total as f64 * decrease;

    let (mut left_idx, mut right_idx) = (Vec::new(), Vec::new());
    for &i in &indices {
        if t.x[i][feature] <= threshold {
            left_idx.push(i);
        } else {
            right_idx.push(i);
        }
    }
    if left_idx.is_empty() || right_idx.is_empty() {
        return;
    }
    grow(t, left_idx, rng);
    grow(t, right_idx, rng);
}
