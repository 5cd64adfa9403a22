//! Situation-specific driving-preference identification.
//!
//! Indicator rows are z-scored, embedded to 2-D with exact t-SNE, and
//! clustered with PAM k-medoids (silhouette-selected K). A random forest
//! ranks indicator importance against the preference labels; indicators are
//! kept up to a cumulative-importance threshold, pruned by a relative spread
//! floor, and each survivor is quantized to its silhouette-selected 1-D
//! medoid centroids. A window's behavior vector is its selected indicators
//! snapped to those centroids.

mod forest;
mod kmedoids;
mod tsne;

pub use forest::{rank_importance, ForestConfig, ImportanceRanking};
pub use kmedoids::{
    cluster_kmedoids, pam, silhouette_score, DistanceMatrix, PamResult, PreferenceModel,
};
pub use tsne::{reduce_tsne, Embedding, TsneConfig};

use serde::{Deserialize, Serialize};

use crate::features::{IndicatorSet, INDICATOR_COUNT, INDICATOR_NAMES};
use crate::{Error, Result};

/// Column-wise z-scoring. Constant columns map to zeros (std snaps to 1).
pub fn zscore_columns(rows: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    if rows.is_empty() {
        return (Vec::new(), Vec::new(), Vec::new());
    }
    let p = rows[0].len();
    let n = rows.len() as f64;
    let mut means = vec![0.0; p];
    for row in rows {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= n;
    }
    let mut stds = vec![0.0; p];
    for row in rows {
        for ((s, v), m) in stds.iter_mut().zip(row).zip(&means) {
            *s += (v - m).powi(2);
        }
    }
    for s in &mut stds {
        *s = (*s / n).sqrt();
        if *s < 1e-12 {
            *s = 1.0;
        }
    }
    let z = rows
        .iter()
        .map(|row| {
            row.iter()
                .zip(&means)
                .zip(&stds)
                .map(|((v, m), s)| (v - m) / s)
                .collect()
        })
        .collect();
    (z, means, stds)
}

/// Linear-interpolation percentile of unsorted data, `q` in [0, 1].
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let alpha = pos - lo as f64;
        sorted[lo] * (1.0 - alpha) + sorted[hi] * alpha
    }
}

/// Select indicators by cumulative importance, then drop those whose value
/// spread (p95 - p5) does not clear `spread_rel_floor` times the median
/// absolute level. Returns indicator indices in descending-importance order.
pub fn select_key_indicators(
    ranking: &ImportanceRanking,
    columns: &[Vec<f64>],
    cumulative_threshold: f64,
    spread_rel_floor: f64,
) -> Vec<usize> {
    let mut selected = Vec::new();
    let mut cumulative = 0.0;
    for &idx in &ranking.order {
        selected.push(idx);
        cumulative += ranking.scores[idx];
        if cumulative >= cumulative_threshold - 1e-12 {
            break;
        }
    }
    selected.retain(|&idx| {
        let values = &columns[idx];
        let spread = percentile(values, 0.95) - percentile(values, 0.05);
        let mut abs_values: Vec<f64> = values.iter().map(|v| v.abs()).collect();
        abs_values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median_abs = percentile(&abs_values, 0.5);
        spread > spread_rel_floor * median_abs
    });
    selected
}

/// 1-D k-medoids centroids for one indicator, sorted ascending; K selected
/// by silhouette over `k_range`.
pub fn quantize_indicator(
    values: &[f64],
    k_range: std::ops::RangeInclusive<usize>,
) -> Result<Vec<f64>> {
    let mut distinct = values.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    if distinct.len() < 4 {
        return Err(Error::DegenerateDistribution(format!(
            "need at least 4 distinct values to quantize, got {}",
            distinct.len()
        )));
    }
    let points: Vec<Vec<f64>> = values.iter().map(|&v| vec![v]).collect();
    let model = cluster_kmedoids(&points, k_range)?;
    let mut centroids: Vec<f64> = model.medoids.iter().map(|&m| values[m]).collect();
    centroids.sort_by(|a, b| a.partial_cmp(b).unwrap());
    centroids.dedup();
    Ok(centroids)
}

/// Nearest centroid, resolving exact midpoints to the lower centroid.
pub fn nearest_centroid(value: f64, centroids: &[f64]) -> f64 {
    let mut best = centroids[0];
    let mut best_d = (value - best).abs();
    for &c in &centroids[1..] {
        let d = (value - c).abs();
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

/// Quantizer for one selected indicator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorQuantizer {
    pub name: String,
    /// Column index in [`INDICATOR_NAMES`] order.
    pub index: usize,
    /// Strictly increasing centroid values.
    pub centroids: Vec<f64>,
}

/// Per-indicator quantizers, in selection (descending importance) order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct QuantizerSet {
    pub indicators: Vec<IndicatorQuantizer>,
}

impl QuantizerSet {
    pub fn dim(&self) -> usize {
        self.indicators.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.indicators.iter().map(|q| q.name.clone()).collect()
    }
}

/// Quantize a window's selected indicators into its behavior vector.
pub fn behavior_vector(indicators: &IndicatorSet, quantizers: &QuantizerSet) -> Result<Vec<f64>> {
    let row = indicators.to_row();
    behavior_vector_from_row(&row, quantizers)
}

/// Same as [`behavior_vector`] but starting from an indicator row.
pub fn behavior_vector_from_row(
    row: &[f64],
    quantizers: &QuantizerSet,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(quantizers.dim());
    for q in &quantizers.indicators {
        if q.index >= row.len() || q.centroids.is_empty() {
            return Err(Error::Schema(format!(
                "quantizer for {} does not cover the indicator row",
                q.name
            )));
        }
        out.push(nearest_centroid(row[q.index], &q.centroids));
    }
    Ok(out)
}

/// Adjusted Rand index between two labelings.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must align");
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let ka = a.iter().max().map_or(0, |&m| m + 1);
    let kb = b.iter().max().map_or(0, |&m| m + 1);
    let mut table = vec![vec![0usize; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let comb2 = |x: usize| (x * x.saturating_sub(1)) as f64 / 2.0;
    let sum_cells: f64 = table.iter().flatten().map(|&c| comb2(c)).sum();
    let sum_rows: f64 = table.iter().map(|r| comb2(r.iter().sum())).sum();
    let sum_cols: f64 = (0..kb)
        .map(|j| comb2(table.iter().map(|r| r[j]).sum()))
        .sum();
    let total = comb2(n);
    let expected = sum_rows * sum_cols / total;
    let max_index = 0.5 * (sum_rows + sum_cols);
    if (max_index - expected).abs() < 1e-12 {
        return 1.0;
    }
    (sum_cells - expected) / (max_index - expected)
}

/// Settings for the full preference-identification pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreferenceConfig {
    pub perplexity: f64,
    pub tsne_iterations: usize,
    pub cluster_k_min: usize,
    pub cluster_k_max: usize,
    pub forest_trees: usize,
    pub importance_threshold: f64,
    pub spread_rel_floor: f64,
    pub quantizer_k_min: usize,
    pub quantizer_k_max: usize,
    pub seed: u64,
}

impl Default for PreferenceConfig {
    fn default() -> Self {
        PreferenceConfig {
            perplexity: 30.0,
            tsne_iterations: 1000,
            cluster_k_min: 2,
            cluster_k_max: 8,
            forest_trees: 100,
            importance_threshold: 0.9,
            spread_rel_floor: 0.05,
            quantizer_k_min: 2,
            quantizer_k_max: 5,
            seed: 0,
        }
    }
}

/// Everything the downstream stages need from preference identification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreferenceArtifacts {
    pub version: u32,
    /// 2-D embedding, one point per window.
    pub embedding: Vec<[f64; 2]>,
    /// Preference label per window.
    pub labels: Vec<usize>,
    /// Selected cluster count.
    pub k: usize,
    /// Window indices of the cluster medoids.
    pub medoids: Vec<usize>,
    pub silhouette_by_k: Vec<(usize, f64)>,
    /// (indicator name, importance) in descending order.
    pub importance: Vec<(String, f64)>,
    /// Names of the selected key indicators, descending importance.
    pub selected: Vec<String>,
    pub quantizers: QuantizerSet,
    /// z-score statistics of the indicator matrix (29 columns).
    pub indicator_means: Vec<f64>,
    pub indicator_stds: Vec<f64>,
    /// z-scored indicator rows of the medoid windows, for assigning
    /// preference labels to unseen windows.
    pub medoid_rows_z: Vec<Vec<f64>>,
    /// Cluster label of each medoid (medoid i belongs to cluster i by
    /// construction, kept explicit for serialization clarity).
    pub medoid_labels: Vec<usize>,
}

impl PreferenceArtifacts {
    /// Preference label for an unseen indicator row: the label of the
    /// nearest medoid window in z-scored indicator space.
    pub fn assign_preference(&self, row: &[f64]) -> usize {
        let z: Vec<f64> = row
            .iter()
            .zip(&self.indicator_means)
            .zip(&self.indicator_stds)
            .map(|((v, m), s)| (v - m) / s)
            .collect();
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (mi, medoid_row) in self.medoid_rows_z.iter().enumerate() {
            let d: f64 = medoid_row
                .iter()
                .zip(&z)
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            if d < best_d {
                best_d = d;
                best = mi;
            }
        }
        self.medoid_labels[best]
    }
}

/// Run the full preference pipeline on an indicator matrix (one row per
/// window, [`INDICATOR_COUNT`] columns).
pub fn identify_preferences(
    rows: &[Vec<f64>],
    cfg: &PreferenceConfig,
) -> Result<PreferenceArtifacts> {
    if rows.is_empty() {
        return Err(Error::Size("no indicator rows".to_string()));
    }
    if rows[0].len() != INDICATOR_COUNT {
        return Err(Error::Shape(format!(
            "indicator rows must have {INDICATOR_COUNT} columns, got {}",
            rows[0].len()
        )));
    }

    let (z_rows, means, stds) = zscore_columns(rows);

    let tsne_cfg = TsneConfig {
        perplexity: cfg.perplexity,
        iterations: cfg.tsne_iterations,
        seed: cfg.seed,
        ..TsneConfig::default()
    };
    let embedding = reduce_tsne(&z_rows, &tsne_cfg)?;

    let points: Vec<Vec<f64>> = embedding.points.iter().map(|p| p.to_vec()).collect();
    let model = cluster_kmedoids(&points, cfg.cluster_k_min..=cfg.cluster_k_max)?;

    let ranking = rank_importance(
        rows,
        &model.labels,
        &ForestConfig {
            n_trees: cfg.forest_trees,
            seed: cfg.seed,
        },
    )?;

    let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(rows.len()); INDICATOR_COUNT];
    for row in rows {
        for (col, &v) in columns.iter_mut().zip(row) {
            col.push(v);
        }
    }
    let selected_idx = select_key_indicators(
        &ranking,
        &columns,
        cfg.importance_threshold,
        cfg.spread_rel_floor,
    );

    let mut quantizers = QuantizerSet::default();
    for &idx in &selected_idx {
        let centroids = quantize_indicator(
            &columns[idx],
            cfg.quantizer_k_min..=cfg.quantizer_k_max,
        )?;
        quantizers.indicators.push(IndicatorQuantizer {
            name: INDICATOR_NAMES[idx].to_string(),
            index: idx,
            centroids,
        });
    }

    let importance = ranking
        .order
        .iter()
        .map(|&i| (INDICATOR_NAMES[i].to_string(), ranking.scores[i]))
        .collect();
    let medoid_rows_z = model.medoids.iter().map(|&m| z_rows[m].clone()).collect();
    let medoid_labels = model.medoids.iter().map(|&m| model.labels[m]).collect();

    Ok(PreferenceArtifacts {
        version: 1,
        embedding: embedding.points,
        labels: model.labels,
        k: model.k,
        medoids: model.medoids,
        silhouette_by_k: model.silhouette_by_k,
        importance,
        selected: selected_idx
            .iter()
            .map(|&i| INDICATOR_NAMES[i].to_string())
            .collect(),
        quantizers,
        indicator_means: means,
        indicator_stds: stds,
        medoid_rows_z,
        medoid_labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn selection_by_cumulative_importance() {
        let ranking = ImportanceRanking {
            scores: vec![0.5, 0.3, 0.15, 0.05],
            order: vec![0, 1, 2, 3],
        };
        let columns: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..50).map(|i| i as f64).collect())
            .collect();
        let selected = select_key_indicators(&ranking, &columns, 0.9, 0.05);
        assert_eq!(selected, vec![0, 1, 2]);
    }

    #[test]
    fn constant_indicator_excluded() {
        let ranking = ImportanceRanking {
            scores: vec![0.6, 0.4],
            order: vec![0, 1],
        };
        let spread_col: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let constant_col = vec![4.2; 50];
        let selected = select_key_indicators(&ranking, &[spread_col, constant_col], 1.0, 0.05);
        assert_eq!(selected, vec![0]);
    }

    #[test]
    fn full_threshold_selects_all() {
        let ranking = ImportanceRanking {
            scores: vec![0.25; 4],
            order: vec![0, 1, 2, 3],
        };
        let columns: Vec<Vec<f64>> = (0..4)
            .map(|k| (0..50).map(|i| (i + k) as f64).collect())
            .collect();
        let selected = select_key_indicators(&ranking, &columns, 1.0, 0.05);
        assert_eq!(selected.len(), 4);
    }

    #[test]
    fn quantizer_recovers_bimodal_centroids() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut values = Vec::new();
        for _ in 0..20 {
            values.push(16.5 + (rng.random::<f64>() - 0.5) * 0.2);
        }
        for _ in 0..20 {
            values.push(21.6 + (rng.random::<f64>() - 0.5) * 0.2);
        }
        let centroids = quantize_indicator(&values, 2..=5).unwrap();
        assert_eq!(centroids.len(), 2);
        assert_abs_diff_eq!(centroids[0], 16.5, epsilon = 0.15);
        assert_abs_diff_eq!(centroids[1], 21.6, epsilon = 0.15);
    }

    #[test]
    fn quantizer_covers_uniform_grid() {
        let values: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let centroids = quantize_indicator(&values, 2..=5).unwrap();
        // every point within one inter-centroid half-gap of some centroid
        let max_gap = centroids
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0f64, f64::max);
        for &v in &values {
            let d = centroids
                .iter()
                .map(|&c| (v - c).abs())
                .fold(f64::INFINITY, f64::min);
            assert!(d <= max_gap / 2.0 + 1e-9, "value {v} uncovered (d = {d})");
        }
    }

    #[test]
    fn quantizer_rejects_degenerate_distribution() {
        let values = vec![1.0, 1.0, 2.0, 2.0, 3.0];
        assert!(matches!(
            quantize_indicator(&values, 2..=5),
            Err(Error::DegenerateDistribution(_))
        ));
    }

    #[test]
    fn quantizer_deterministic() {
        let values: Vec<f64> = (0..60).map(|i| ((i * 37) % 101) as f64).collect();
        let a = quantize_indicator(&values, 2..=5).unwrap();
        let b = quantize_indicator(&values, 2..=5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn nearest_centroid_rules() {
        let centroids = [1.0, 2.0];
        assert_eq!(nearest_centroid(1.05, &centroids), 1.0);
        // exact midpoint resolves to the lower centroid
        assert_eq!(nearest_centroid(1.5, &centroids), 1.0);
        assert_eq!(nearest_centroid(2.0, &centroids), 2.0);
    }

    #[test]
    fn behavior_vector_idempotent() {
        let quantizers = QuantizerSet {
            indicators: vec![
                IndicatorQuantizer {
                    name: "MAX_v".to_string(),
                    index: 0,
                    centroids: vec![10.0, 20.0, 30.0],
                },
                IndicatorQuantizer {
                    name: "VAR_v".to_string(),
                    index: 3,
                    centroids: vec![0.5, 2.5],
                },
            ],
        };
        let mut row = vec![0.0; INDICATOR_COUNT];
        row[0] = 17.0;
        row[3] = 2.0;
        let v1 = behavior_vector_from_row(&row, &quantizers).unwrap();
        assert_eq!(v1, vec![20.0, 2.5]);
        // feed the quantized values back through: identity
        row[0] = v1[0];
        row[3] = v1[1];
        let v2 = behavior_vector_from_row(&row, &quantizers).unwrap();
        assert_eq!(v1, v2);
    }

    #[test]
    fn behavior_vector_missing_quantizer_errors() {
        let quantizers = QuantizerSet {
            indicators: vec![IndicatorQuantizer {
                name: "MAX_v".to_string(),
                index: 40,
                centroids: vec![1.0],
            }],
        };
        let row = vec![0.0; INDICATOR_COUNT];
        assert!(matches!(
            behavior_vector_from_row(&row, &quantizers),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn ari_bounds_and_identity() {
        let a = vec![0, 0, 1, 1, 2, 2];
        assert_abs_diff_eq!(adjusted_rand_index(&a, &a), 1.0, epsilon = 1e-12);
        // permuted label names leave ARI at 1
        let b = vec![2, 2, 0, 0, 1, 1];
        assert_abs_diff_eq!(adjusted_rand_index(&a, &b), 1.0, epsilon = 1e-12);
        // independent labels hover near 0
        let c = vec![0, 1, 0, 1, 0, 1];
        assert!(adjusted_rand_index(&a, &c) < 0.5);
    }
}
