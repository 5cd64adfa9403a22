//! Weighted dynamic time warping.

/// Logistic phase-difference weight: w(d) = w_max / (1 + exp(-g (d - m/2))).
fn phase_weight(d: usize, g: f64, w_max: f64, half_len: f64) -> f64 {
    w_max / (1.0 + (-g * (d as f64 - half_len)).exp())
}

/// Weighted DTW distance between two sequences.
///
/// Alignment cost is `w(|i - j|) * (a_i - b_j)^2` minimized over all monotone
/// alignments; `g = 0` makes every weight `w_max / 2`, reducing to a scaled
/// classic squared-cost DTW.
pub fn wdtw(a: &[f64], b: &[f64], g: f64, w_max: f64) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let (n, m) = (a.len(), b.len());
    let max_len = n.max(m);
    let half_len = max_len as f64 / 2.0;
    let weights: Vec<f64> = (0..max_len)
        .map(|d| phase_weight(d, g, w_max, half_len))
        .collect();

    let mut prev = vec![f64::INFINITY; m + 1];
    let mut curr = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for i in 1..=n {
        curr[0] = f64::INFINITY;
        for j in 1..=m {
            let d = i.abs_diff(j);
            let cost = weights[d] * (a[i - 1] - b[j - 1]).powi(2);
            let best = prev[j].min(curr[j - 1]).min(prev[j - 1]);
            curr[j] = cost + best;
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[m]
}
