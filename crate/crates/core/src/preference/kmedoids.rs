//! PAM k-medoids clustering with silhouette-based model selection.

use crate::{Error, Result};

/// Dense symmetric distance matrix.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_points(points: &[Vec<f64>]) -> Self {
        let n = points.len();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let dist = euclidean(&points[i], &points[j]);
                d[i * n + j] = dist;
                d[j * n + i] = dist;
            }
        }
        DistanceMatrix { n, d }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Result of one PAM run at a fixed cluster count.
#[derive(Debug, Clone)]
pub struct PamResult {
    pub medoids: Vec<usize>,
    pub labels: Vec<usize>,
    /// Sum of distances from every point to its medoid.
    pub objective: f64,
    /// Objective after initialization and after each applied swap.
    pub objective_history: Vec<f64>,
}

/// Instances with at most this many medoid subsets are solved exactly; the
/// swap heuristic can stall in a local optimum on tiny inputs where exact
/// enumeration is cheap anyway.
const EXACT_SUBSET_BUDGET: u128 = 2000;

fn subset_count(n: usize, k: usize) -> u128 {
    let mut c: u128 = 1;
    for i in 0..k {
        c = c.saturating_mul((n - i) as u128) / (i as u128 + 1);
        if c > EXACT_SUBSET_BUDGET {
            return c;
        }
    }
    c
}

/// k-medoids minimizing the total distance of points to their medoid.
///
/// Small instances are solved by exhaustive medoid-subset search; larger
/// ones run PAM (greedy BUILD initialization, then best-improvement swaps
/// until no swap lowers the total distance). Fully deterministic.
pub fn pam(dist: &DistanceMatrix, k: usize) -> Result<PamResult> {
    let n = dist.len();
    if n == 0 {
        return Err(Error::Size("cannot cluster an empty set".to_string()));
    }
    if k == 0 || k > n {
        return Err(Error::Size(format!("invalid cluster count {k} for {n} points")));
    }
    if subset_count(n, k) <= EXACT_SUBSET_BUDGET {
        return Ok(exact_kmedoids(dist, k));
    }

    // BUILD: first medoid minimizes total distance, each next maximizes the
    // decrease in total distance.
    let mut medoids: Vec<usize> = Vec::with_capacity(k);
    let first = (0..n)
        .min_by(|&a, &b| {
            let ta: f64 = (0..n).map(|j| dist.get(a, j)).sum();
            let tb: f64 = (0..n).map(|j| dist.get(b, j)).sum();
            ta.partial_cmp(&tb).unwrap()
        })
        .unwrap();
    medoids.push(first);
    let mut near: Vec<f64> = (0..n).map(|j| dist.get(first, j)).collect();
    while medoids.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for c in 0..n {
            if medoids.contains(&c) {
                continue;
            }
            let gain: f64 = (0..n)
                .map(|j| (near[j] - dist.get(c, j)).max(0.0))
                .sum();
            if best.map_or(true, |(_, g)| gain > g) {
                best = Some((c, gain));
            }
        }
        let (c, _) = best.expect("k <= n guarantees a candidate");
        medoids.push(c);
        for j in 0..n {
            near[j] = near[j].min(dist.get(c, j));
        }
    }

    // SWAP: apply the best improving (medoid, candidate) swap until none.
    let mut history = vec![near.iter().sum::<f64>()];
    loop {
        let (near_idx, near_d, seco_d) = nearest_two(dist, &medoids);
        let mut best: Option<(usize, usize, f64)> = None;
        for (mi, _m) in medoids.iter().enumerate() {
            for h in 0..n {
                if medoids.contains(&h) {
                    continue;
                }
                let mut delta = 0.0;
                for j in 0..n {
                    let dh = dist.get(j, h);
                    let new_d = if near_idx[j] == mi {
                        dh.min(seco_d[j])
                    } else {
                        dh.min(near_d[j])
                    };
                    delta += new_d - near_d[j];
                }
                if delta < -1e-12 && best.map_or(true, |(_, _, b)| delta < b) {
                    best = Some((mi, h, delta));
                }
            }
        }
        match best {
            Some((mi, h, _)) => {
                medoids[mi] = h;
                let (_, d, _) = nearest_two(dist, &medoids);
                history.push(d.iter().sum());
            }
            None => break,
        }
    }

    let (near_idx, near_d, _) = nearest_two(dist, &medoids);
    let objective = near_d.iter().sum();
    Ok(PamResult {
        labels: near_idx,
        medoids,
        objective,
        objective_history: history,
    })
}

/// Exhaustive search over all medoid subsets; ties resolve to the first
/// subset in lexicographic order.
fn exact_kmedoids(dist: &DistanceMatrix, k: usize) -> PamResult {
    let n = dist.len();
    let mut best_subset: Vec<usize> = (0..k).collect();
    let mut best_total = f64::INFINITY;
    let mut subset: Vec<usize> = (0..k).collect();
    loop {
        let total: f64 = (0..n)
            .map(|j| {
                subset
                    .iter()
                    .map(|&m| dist.get(j, m))
                    .fold(f64::INFINITY, f64::min)
            })
            .sum();
        if total < best_total {
            best_total = total;
            best_subset = subset.clone();
        }
        // next lexicographic k-subset of 0..n
        let mut i = k;
        loop {
            if i == 0 {
                let (labels, near, _) = nearest_two(dist, &best_subset);
                return PamResult {
                    medoids: best_subset,
                    labels,
                    objective: near.iter().sum(),
                    objective_history: vec![best_total],
                };
            }
            i -= 1;
            if subset[i] != i + n - k {
                subset[i] += 1;
                for j in i + 1..k {
                    subset[j] = subset[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Per point: (nearest medoid position, its distance, second-nearest distance).
fn nearest_two(dist: &DistanceMatrix, medoids: &[usize]) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = dist.len();
    let mut idx = vec![0usize; n];
    let mut near = vec![f64::INFINITY; n];
    let mut seco = vec![f64::INFINITY; n];
    for j in 0..n {
        for (mi, &m) in medoids.iter().enumerate() {
            let d = dist.get(j, m);
            if d < near[j] {
                seco[j] = near[j];
                near[j] = d;
                idx[j] = mi;
            } else if d < seco[j] {
                seco[j] = d;
            }
        }
    }
    // k = 1 leaves seco infinite, which makes swap deltas reduce to d(j, h).
    (idx, near, seco)
}

/// Mean silhouette coefficient. Points in singleton clusters score 0.
pub fn silhouette_score(dist: &DistanceMatrix, labels: &[usize], k: usize) -> f64 {
    let n = dist.len();
    if n == 0 || k < 2 {
        return 0.0;
    }
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    let mut total = 0.0;
    for i in 0..n {
        let li = labels[i];
        if sizes[li] <= 1 {
            continue; // contributes 0
        }
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if j != i {
                sums[labels[j]] += dist.get(i, j);
            }
        }
        let a = sums[li] / (sizes[li] - 1) as f64;
        let mut b = f64::INFINITY;
        for c in 0..k {
            if c != li && sizes[c] > 0 {
                b = b.min(sums[c] / sizes[c] as f64);
            }
        }
        if b.is_finite() {
            let denom = a.max(b);
            if denom > 0.0 {
                total += (b - a) / denom;
            }
        }
    }
    total / n as f64
}

/// Clustering with the cluster count chosen by silhouette.
#[derive(Debug, Clone)]
pub struct PreferenceModel {
    pub k: usize,
    pub medoids: Vec<usize>,
    pub labels: Vec<usize>,
    /// (k, silhouette) for every candidate cluster count.
    pub silhouette_by_k: Vec<(usize, f64)>,
}

/// Run PAM for every k in the range and keep the silhouette-maximizing
/// clustering (ties resolve to the smaller k).
pub fn cluster_kmedoids(
    points: &[Vec<f64>],
    k_range: std::ops::RangeInclusive<usize>,
) -> Result<PreferenceModel> {
    if points.is_empty() {
        return Err(Error::Size("cannot cluster an empty set".to_string()));
    }
    let n = points.len();
    let dist = DistanceMatrix::from_points(points);
    let lo = (*k_range.start()).max(2);
    let hi = (*k_range.end()).min(n.saturating_sub(1));
    if lo > hi {
        return Err(Error::Size(format!(
            "cluster range {k_range:?} is empty for {n} points"
        )));
    }

    let mut best: Option<(f64, PamResult, usize)> = None;
    let mut table = Vec::new();
    for k in lo..=hi {
        let result = pam(&dist, k)?;
        let score = silhouette_score(&dist, &result.labels, k);
        table.push((k, score));
        if best.as_ref().map_or(true, |(s, _, _)| score > *s) {
            best = Some((score, result, k));
        }
    }
    let (_, result, k) = best.expect("non-empty k range");
    Ok(PreferenceModel {
        k,
        medoids: result.medoids,
        labels: result.labels,
        silhouette_by_k: table,
    })
}
