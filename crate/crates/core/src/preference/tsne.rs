//! Exact (non-approximated) t-SNE to two dimensions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub momentum_initial: f64,
    pub momentum_final: f64,
    pub momentum_switch_iter: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            momentum_initial: 0.5,
            momentum_final: 0.8,
            momentum_switch_iter: 250,
            seed: 0,
        }
    }
}

/// 2-D embedding plus the KL divergence trace (one value per iteration,
/// measured against the non-exaggerated affinities).
#[derive(Debug, Clone)]
pub struct Embedding {
    pub points: Vec<[f64; 2]>,
    pub kl_history: Vec<f64>,
}

const P_MIN: f64 = 1e-12;

/// Exact t-SNE with Gaussian-perplexity affinities, early exaggeration,
/// momentum and per-component adaptive gains; deterministic under the seed.
pub fn reduce_tsne(data: &[Vec<f64>], cfg: &TsneConfig) -> Result<Embedding> {
    let n = data.len();
    if (n as f64) < 3.0 * cfg.perplexity {
        return Err(Error::Size(format!(
            "t-SNE needs at least 3 * perplexity = {} rows, got {n}",
            (3.0 * cfg.perplexity).ceil()
        )));
    }

    let p = joint_affinities(data, cfg.perplexity);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = Normal::new(0.0, 1e-4).expect("valid init normal");
    let mut y: Vec<[f64; 2]> = (0..n)
        .map(|_| [init.sample(&mut rng), init.sample(&mut rng)])
        .collect();
    let mut velocity = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];

    let mut w = vec![0.0; n * n];
    let mut kl_history = Vec::with_capacity(cfg.iterations);

    for iter in 0..cfg.iterations {
        // Student-t kernel weights and their normalizer.
        let mut z = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                let wij = 1.0 / (1.0 + dx * dx + dy * dy);
                w[i * n + j] = wij;
                w[j * n + i] = wij;
                z += 2.0 * wij;
            }
        }
        let z = z.max(P_MIN);

        let exaggeration = if iter < cfg.exaggeration_iters {
            cfg.early_exaggeration
        } else {
            1.0
        };
        let momentum = if iter < cfg.momentum_switch_iter {
            cfg.momentum_initial
        } else {
            cfg.momentum_final
        };

        let mut kl = 0.0;
        for i in 0..n {
            let mut grad = [0.0f64; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let pij = p[i * n + j];
                let wij = w[i * n + j];
                let qij = (wij / z).max(P_MIN);
                let coef = 4.0 * (exaggeration * pij - qij) * wij;
                grad[0] += coef * (y[i][0] - y[j][0]);
                grad[1] += coef * (y[i][1] - y[j][1]);
                kl += pij * (pij / qij).ln();
            }
            for d in 0..2 {
                // adaptive gains from the reference implementation
                let g = &mut gains[i][d];
                if grad[d].signum() != velocity[i][d].signum() {
                    *g += 0.2;
                } else {
                    *g = (*g * 0.8).max(0.01);
                }
                velocity[i][d] = momentum * velocity[i][d] - cfg.learning_rate * *g * grad[d];
            }
        }
        for i in 0..n {
            y[i][0] += velocity[i][0];
            y[i][1] += velocity[i][1];
        }
        // keep the embedding centered
        let mut mean = [0.0f64; 2];
        for yi in &y {
            mean[0] += yi[0];
            mean[1] += yi[1];
        }
        mean[0] /= n as f64;
        mean[1] /= n as f64;
        for yi in &mut y {
            yi[0] -= mean[0];
            yi[1] -= mean[1];
        }
        kl_history.push(kl);
    }

    Ok(Embedding {
        points: y,
        kl_history,
    })
}

/// Symmetric joint affinities with per-row bandwidths found by binary search
/// on the Shannon entropy (target = ln perplexity).
fn joint_affinities(data: &[Vec<f64>], perplexity: f64) -> Vec<f64> {
    let n = data.len();
    let mut d2 = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let dist: f64 = data[i]
                .iter()
                .zip(&data[j])
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            d2[i * n + j] = dist;
            d2[j * n + i] = dist;
        }
    }

    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    let mut row = vec![0.0; n];
    for i in 0..n {
        let mut beta = 1.0;
        let mut beta_min = f64::NEG_INFINITY;
        let mut beta_max = f64::INFINITY;
        for _ in 0..64 {
            let mut sum = 0.0;
            for j in 0..n {
                row[j] = if j == i {
                    0.0
                } else {
                    (-beta * d2[i * n + j]).exp()
                };
                sum += row[j];
            }
            let mut entropy = 0.0;
            if sum > 0.0 {
                for rj in row.iter_mut() {
                    *rj /= sum;
                    if *rj > 1e-300 {
                        entropy -= *rj * rj.ln();
                    }
                }
            }
            let diff = entropy - target;
            if diff.abs() < 1e-7 {
                break;
            }
            if diff > 0.0 {
                beta_min = beta;
                beta = if beta_max.is_infinite() {
                    beta * 2.0
                } else {
                    0.5 * (beta + beta_max)
                };
            } else {
                beta_max = beta;
                beta = if beta_min.is_infinite() {
                    beta * 0.5
                } else {
                    0.5 * (beta + beta_min)
                };
            }
        }
        for j in 0..n {
            p[i * n + j] = row[j];
        }
    }

    // symmetrize and normalize over all pairs
    let mut joint = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                joint[i * n + j] = ((p[i * n + j] + p[j * n + i]) / (2.0 * n as f64)).max(P_MIN);
            }
        }
    }
    joint
}

#[cfg(test)]
mod tests {
    use super::*;


    fn blob_data(seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.1).unwrap();
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for (ci, center) in [0.0f64, 10.0].iter().enumerate() {
            for _ in 0..50 {
                data.push(vec![
                    center + normal.sample(&mut rng),
                    center + normal.sample(&mut rng),
                    center + normal.sample(&mut rng),
                ]);
                labels.push(ci);
            }
        }
        (data, labels)
    }

    fn small_cfg(seed: u64) -> TsneConfig {
        TsneConfig {
            perplexity: 20.0,
            iterations: 400,
            exaggeration_iters: 100,
            momentum_switch_iter: 100,
            seed,
            ..TsneConfig::default()
        }
    }

    #[test]
    fn too_few_rows_rejected() {
        let data: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        assert!(matches!(
            reduce_tsne(&data, &TsneConfig::default()),
            Err(Error::Size(_))
        ));
    }

    #[test]
    fn deterministic_under_seed() {
        let (data, _) = blob_data(3);
        let cfg = small_cfg(11);
        let a = reduce_tsne(&data, &cfg).unwrap();
        let b = reduce_tsne(&data, &cfg).unwrap();
        assert_eq!(a.points, b.points);
    }

    #[test]
    fn identical_rows_stay_neighbours() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let mut data: Vec<Vec<f64>> = Vec::new();
        for center in [0.0f64, 10.0] {
            for _ in 0..49 {
                data.push((0..4).map(|_| center + noise.sample(&mut rng)).collect());
            }
        }
        // identical pair planted at the first blob center
        data.push(vec![0.0; 4]);
        data.push(vec![0.0; 4]);
        let emb = reduce_tsne(&data, &small_cfg(5)).unwrap();
        let a = emb.points[98];
        let b = emb.points[99];
        let d_dup = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        let mut closer = 0;
        for i in 0..98 {
            let p = emb.points[i];
            let d = ((a[0] - p[0]).powi(2) + (a[1] - p[1]).powi(2)).sqrt();
            if d < d_dup {
                closer += 1;
            }
        }
        assert!(
            closer <= 4,
            "duplicates should be mutual nearest neighbours; {closer} points are closer"
        );
    }

    #[test]
    fn separated_blobs_linearly_separable() {
        let (data, labels) = blob_data(7);
        let emb = reduce_tsne(&data, &small_cfg(7)).unwrap();
        // project onto the line joining class means, split at the midpoint
        let mut means = [[0.0f64; 2]; 2];
        let mut counts = [0usize; 2];
        for (p, &l) in emb.points.iter().zip(&labels) {
            means[l][0] += p[0];
            means[l][1] += p[1];
            counts[l] += 1;
        }
        for (m, c) in means.iter_mut().zip(counts) {
            m[0] /= c as f64;
            m[1] /= c as f64;
        }
        let axis = [means[1][0] - means[0][0], means[1][1] - means[0][1]];
        let mid = [
            0.5 * (means[0][0] + means[1][0]),
            0.5 * (means[0][1] + means[1][1]),
        ];
        let mut correct = 0;
        for (p, &l) in emb.points.iter().zip(&labels) {
            let proj = (p[0] - mid[0]) * axis[0] + (p[1] - mid[1]) * axis[1];
            let predicted = usize::from(proj > 0.0);
            if predicted == l {
                correct += 1;
            }
        }
        let accuracy = correct as f64 / labels.len() as f64;
        assert!(accuracy >= 0.98, "separability {accuracy}");
    }

    #[test]
    fn kl_non_increasing_in_tail() {
        let (data, _) = blob_data(9);
        let emb = reduce_tsne(&data, &small_cfg(9)).unwrap();
        let h = &emb.kl_history;
        let tail = &h[h.len() - 50..];
        for w in tail.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0),
                "KL rose in final stretch: {} -> {}",
                w[0],
                w[1]
            );
        }
    }
}
