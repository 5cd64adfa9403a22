//! Training loop, dataset splitting, metrics, and the multi-variant
//! comparison harness.

use ndarray::Array2;
use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::preference::{behavior_vector_from_row, PreferenceArtifacts, QuantizerSet};
use crate::seqmodel::{
    batch_loss, forward, loss_and_grad, sample_traces, Batch, Checkpoint, Mode,
    ModelConfig, ModelParams, Normalization, PredictedDistribution, Variant,
};
use crate::trajdata::SceneWindow;
use crate::{Error, Result};

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub clip_norm: f64,
    /// train:validation ratio, e.g. (4, 1).
    pub split_ratio: (usize, usize),
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 100,
            epochs: 50,
            seed: 0,
            clip_norm: 5.0,
            split_ratio: (4, 1),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0)
            || self.batch_size == 0
            || self.epochs == 0
            || !(self.clip_norm > 0.0)
            || self.split_ratio.0 == 0
            || self.split_ratio.1 == 0
        {
            return Err(Error::Config("invalid training configuration".to_string()));
        }
        Ok(())
    }
}

/// One raw training sample (unnormalized).
#[derive(Debug, Clone)]
pub struct SampleInputs {
    pub track_id: u64,
    /// (encoder_len x channels) observation.
    pub obs: Array2<f64>,
    pub behavior: Option<Vec<f64>>,
    pub target: Vec<f64>,
    pub last_position: f64,
    pub last_velocity: f64,
}

/// Build one sample from a window plus its (variant-specific) behavior input.
pub fn make_sample(window: &SceneWindow, behavior: Option<Vec<f64>>) -> SampleInputs {
    let t = window.observation_segment.len();
    let c = crate::trajdata::SCENE_CHANNELS;
    let mut obs = Array2::zeros((t, c));
    for (i, frame) in window.observation_segment.iter().enumerate() {
        obs.row_mut(i)
            .assign(&ndarray::Array1::from(frame.channels().to_vec()));
    }
    SampleInputs {
        track_id: window.track_id,
        obs,
        behavior,
        target: window.future_velocity.clone(),
        last_position: window.last_position,
        last_velocity: window.last_velocity,
    }
}

/// Behavior inputs for a variant: quantized vectors for DBV, one-hot
/// preference labels for DP, nothing otherwise. Rows/labels are parallel to
/// the windows.
pub fn behavior_inputs(
    variant: Variant,
    indicator_rows: &[Vec<f64>],
    artifacts: &PreferenceArtifacts,
) -> Result<Option<Vec<Vec<f64>>>> {
    match variant {
        Variant::LstmmdDbv => {
            let mut out = Vec::with_capacity(indicator_rows.len());
            for row in indicator_rows {
                out.push(behavior_vector_from_row(row, &artifacts.quantizers)?);
            }
            Ok(Some(out))
        }
        Variant::LstmmdDp => {
            let k = artifacts.k;
            let mut out = Vec::with_capacity(artifacts.labels.len());
            for &label in &artifacts.labels {
                let mut one_hot = vec![0.0; k];
                one_hot[label] = 1.0;
                out.push(one_hot);
            }
            Ok(Some(out))
        }
        _ => Ok(None),
    }
}

/// Context width a variant needs given the preference artifacts.
pub fn context_dim(variant: Variant, artifacts: &PreferenceArtifacts) -> usize {
    match variant {
        Variant::LstmmdDbv => artifacts.quantizers.dim(),
        Variant::LstmmdDp => artifacts.k,
        _ => 0,
    }
}

/// Split sample indices by source track so no track straddles the split.
/// Deterministic under the seed; proportions approach the ratio as closely
/// as whole tracks allow.
pub fn split_by_track(
    track_ids: &[u64],
    ratio: (usize, usize),
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if track_ids.len() < 5 {
        return Err(Error::Size(format!(
            "need at least 5 windows to split, got {}",
            track_ids.len()
        )));
    }
    let mut tracks: Vec<u64> = Vec::new();
    for &id in track_ids {
        if !tracks.contains(&id) {
            tracks.push(id);
        }
    }
    if tracks.len() < 2 {
        return Err(Error::Size(
            "need at least 2 tracks for a track-disjoint split".to_string(),
        ));
    }
    let mut windows_per_track: std::collections::HashMap<u64, usize> =
        std::collections::HashMap::new();
    for &id in track_ids {
        *windows_per_track.entry(id).or_default() += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    tracks.shuffle(&mut rng);

    let total = track_ids.len() as f64;
    let target = total * ratio.1 as f64 / (ratio.0 + ratio.1) as f64;
    let mut val_tracks: std::collections::HashSet<u64> = std::collections::HashSet::new();
    let mut val_count = 0usize;
    for &t in &tracks {
        if val_tracks.len() + 1 >= tracks.len() {
            break; // keep at least one training track
        }
        let w = windows_per_track[&t];
        let before = (val_count as f64 - target).abs();
        let after = ((val_count + w) as f64 - target).abs();
        if after < before {
            val_tracks.insert(t);
            val_count += w;
        }
    }
    if val_tracks.is_empty() {
        val_tracks.insert(tracks[0]);
    }

    let mut train_idx = Vec::new();
    let mut val_idx = Vec::new();
    for (i, id) in track_ids.iter().enumerate() {
        if val_tracks.contains(id) {
            val_idx.push(i);
        } else {
            train_idx.push(i);
        }
    }
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::Size(
            "split produced an empty side; need more tracks".to_string(),
        ));
    }
    Ok((train_idx, val_idx))
}

/// Per-channel statistics over the training split.
pub fn fit_normalization(samples: &[SampleInputs], idx: &[usize], variant: Variant) -> Normalization {
    let channels = samples[idx[0]].obs.ncols();
    let mut mean = vec![0.0; channels];
    let mut count = 0usize;
    for &i in idx {
        for row in samples[i].obs.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        count += samples[i].obs.nrows();
    }
    for m in &mut mean {
        *m /= count as f64;
    }
    let mut var = vec![0.0; channels];
    for &i in idx {
        for row in samples[i].obs.rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
    }
    let std: Vec<f64> = var
        .iter()
        .map(|v| {
            let s = (v / count as f64).sqrt();
            if s < 1e-8 {
                1.0
            } else {
                s
            }
        })
        .collect();

    // behavior-vector statistics only for continuous (DBV) inputs
    let (ctx_mean, ctx_std) = if variant == Variant::LstmmdDbv {
        let dim = samples[idx[0]].behavior.as_ref().map_or(0, Vec::len);
        let mut m = vec![0.0; dim];
        for &i in idx {
            for (mm, v) in m.iter_mut().zip(samples[i].behavior.as_ref().unwrap()) {
                *mm += v;
            }
        }
        for mm in &mut m {
            *mm /= idx.len() as f64;
        }
        let mut s = vec![0.0; dim];
        for &i in idx {
            for ((ss, v), mm) in s
                .iter_mut()
                .zip(samples[i].behavior.as_ref().unwrap())
                .zip(&m)
            {
                *ss += (v - mm).powi(2);
            }
        }
        let s: Vec<f64> = s
            .iter()
            .map(|v| {
                let sd = (v / idx.len() as f64).sqrt();
                if sd < 1e-8 {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        (m, s)
    } else {
        (Vec::new(), Vec::new())
    };

    Normalization {
        obs_mean: mean,
        obs_std: std,
        ctx_mean,
        ctx_std,
    }
}

/// Assemble a normalized, time-major batch from sample indices.
pub fn make_batch(samples: &[SampleInputs], idx: &[usize], norm: &Normalization) -> Batch {
    let b = idx.len();
    let t = samples[idx[0]].obs.nrows();
    let channels = samples[idx[0]].obs.ncols();
    let mut obs = vec![Array2::zeros((b, channels)); t];
    for (row, &i) in idx.iter().enumerate() {
        for step in 0..t {
            for ch in 0..channels {
                obs[step][[row, ch]] =
                    (samples[i].obs[[step, ch]] - norm.obs_mean[ch]) / norm.obs_std[ch];
            }
        }
    }
    let behavior = samples[idx[0]].behavior.as_ref().map(|first| {
        let dim = first.len();
        let mut bv = Array2::zeros((b, dim));
        for (row, &i) in idx.iter().enumerate() {
            for (col, &v) in samples[i].behavior.as_ref().unwrap().iter().enumerate() {
                bv[[row, col]] = if norm.ctx_mean.is_empty() {
                    v
                } else {
                    (v - norm.ctx_mean[col]) / norm.ctx_std[col]
                };
            }
        }
        bv
    });
    let horizon = samples[idx[0]].target.len();
    let mut targets = Array2::zeros((b, horizon));
    for (row, &i) in idx.iter().enumerate() {
        for (col, &v) in samples[i].target.iter().enumerate() {
            targets[[row, col]] = v;
        }
    }
    Batch {
        obs,
        behavior,
        targets,
    }
}

/// Adam with bias correction.
struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

fn clip_global_norm(grads: &mut [f64], max_norm: f64) {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
}

fn mix_seed(seed: u64, tag: u64) -> u64 {
    let mut x = seed ^ tag.wrapping_mul(0x9e3779b97f4a7c15);
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58476d1ce4e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Loss history row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

fn eval_loss(
    params: &ModelParams,
    samples: &[SampleInputs],
    idx: &[usize],
    norm: &Normalization,
    chunk: usize,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk_idx in idx.chunks(chunk.max(1)) {
        let batch = make_batch(samples, chunk_idx, norm);
        let (head, _) = forward(params, &batch, Mode::Eval)?;
        total += batch_loss(&head, &batch.targets)? * chunk_idx.len() as f64;
        count += chunk_idx.len();
    }
    Ok(total / count as f64)
}

/// Train a variant with Adam on shuffled minibatches; returns the
/// best-validation checkpoint and the per-epoch loss history.
pub fn train(
    model_cfg: &ModelConfig,
    samples: &[SampleInputs],
    train_idx: &[usize],
    val_idx: &[usize],
    cfg: &TrainConfig,
    quantizers: Option<&QuantizerSet>,
) -> Result<(Checkpoint, Vec<EpochStats>)> {
    model_cfg.validate()?;
    cfg.validate()?;
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::Size("empty training or validation set".to_string()));
    }

    let norm = fit_normalization(samples, train_idx, model_cfg.variant);
    let mut params = ModelParams::init(model_cfg);

    // target statistics seed the output-layer biases
    let mut t_mean = 0.0;
    let mut t_count = 0usize;
    for &i in train_idx {
        for &v in &samples[i].target {
            t_mean += v;
            t_count += 1;
        }
    }
    t_mean /= t_count as f64;
    let mut t_var = 0.0;
    for &i in train_idx {
        for &v in &samples[i].target {
            t_var += (v - t_mean).powi(2);
        }
    }
    let t_std = (t_var / t_count as f64).sqrt();
    params.init_output_bias(t_mean, t_std);

    let mut flat = params.to_flat();
    let mut adam = Adam::new(flat.len(), cfg.learning_rate);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, Vec<f64>)> = None;

    let mut order: Vec<usize> = train_idx.to_vec();
    for epoch in 0..cfg.epochs {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, epoch as u64 * 2 + 1));
        order.shuffle(&mut shuffle_rng);
        let mut dropout_rng =
            ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, epoch as u64 * 2 + 2));

        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for (batch_no, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = make_batch(samples, chunk, &norm);
            let (loss, grads) = loss_and_grad(
                &params,
                &batch,
                Mode::Train {
                    rng: &mut dropout_rng,
                },
            )
            .map_err(|e| Error::Diverged {
                epoch,
                batch: batch_no,
                msg: e.to_string(),
            })?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_no,
                    msg: format!("loss = {loss}"),
                });
            }
            epoch_loss += loss * chunk.len() as f64;
            seen += chunk.len();

            let mut grad_flat = grads.to_flat();
            clip_global_norm(&mut grad_flat, cfg.clip_norm);
            adam.step(&mut flat, &grad_flat);
            params.assign_from_flat(&flat);
        }

        let val_loss = eval_loss(&params, samples, val_idx, &norm, cfg.batch_size)?;
        history.push(EpochStats {
            epoch,
            train_loss: epoch_loss / seen as f64,
            val_loss,
        });
        if best.as_ref().map_or(true, |(b, _)| val_loss < *b) {
            best = Some((val_loss, flat.clone()));
        }
    }

    let (_, best_flat) = best.expect("at least one epoch ran");
    params.assign_from_flat(&best_flat);
    let checkpoint = Checkpoint::from_params(&params, norm, quantizers.cloned());
    Ok((checkpoint, history))
}

/// Pooled root mean squared error between mean traces and truths.
pub fn rmse(predicted: &Array2<f64>, truth: &Array2<f64>) -> f64 {
    assert_eq!(predicted.shape(), truth.shape(), "shape mismatch");
    let n = predicted.len() as f64;
    let sq = predicted
        .iter()
        .zip(truth.iter())
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>();
    (sq / n).sqrt()
}

/// Monte Carlo root-weighted square error: `n` simulated traces per
/// trajectory, squared deviations pooled over trajectories, steps and
/// traces. Deterministic under the seed (per-trajectory derived streams).
pub fn rwse(
    distributions: &[PredictedDistribution],
    truths: &[Vec<f64>],
    n: usize,
    seed: u64,
) -> f64 {
    assert_eq!(distributions.len(), truths.len(), "sample count mismatch");
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, (dist, truth)) in distributions.iter().zip(truths).enumerate() {
        let traces = sample_traces(dist, n, mix_seed(seed, i as u64 + 1));
        for trace in &traces {
            for (p, t) in trace.iter().zip(truth) {
                total += (p - t).powi(2);
                count += 1;
            }
        }
    }
    (total / count as f64).sqrt()
}

/// Per-variant evaluation results.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariantMetrics {
    pub variant: Variant,
    pub rmse: f64,
    pub rwse: f64,
    pub per_step_rmse: Vec<f64>,
    pub per_step_rwse: Vec<f64>,
}

/// Evaluate a checkpoint on a sample subset: pooled and per-horizon RMSE of
/// the mean traces plus Monte Carlo RWSE.
pub fn evaluate_checkpoint(
    ckpt: &Checkpoint,
    samples: &[SampleInputs],
    idx: &[usize],
    n_traces: usize,
    seed: u64,
) -> Result<VariantMetrics> {
    let params = ckpt.to_params()?;
    let horizon = ckpt.config.decoder_len;
    let mut sq_mean = vec![0.0; horizon];
    let mut sq_rwse = vec![0.0; horizon];
    let mut rwse_draws = 0usize;
    let mut count = 0usize;

    for (chunk_no, chunk) in idx.chunks(256).enumerate() {
        let batch = make_batch(samples, chunk, &ckpt.normalization);
        let (head, _) = forward(&params, &batch, Mode::Eval)?;
        let means = head.mean_matrix();
        for (row, &i) in chunk.iter().enumerate() {
            for t in 0..horizon {
                sq_mean[t] += (means[[row, t]] - samples[i].target[t]).powi(2);
            }
            count += 1;

            let dist = head.distribution(row);
            let sample_seed = mix_seed(seed, (chunk_no * 256 + row) as u64 + 1);
            let traces = sample_traces(&dist, n_traces, sample_seed);
            for trace in &traces {
                for t in 0..horizon {
                    sq_rwse[t] += (trace[t] - samples[i].target[t]).powi(2);
                }
            }
            rwse_draws += n_traces;
        }
    }

    let per_step_rmse: Vec<f64> = sq_mean.iter().map(|s| (s / count as f64).sqrt()).collect();
    let per_step_rwse: Vec<f64> = sq_rwse
        .iter()
        .map(|s| (s / rwse_draws as f64).sqrt())
        .collect();
    let pooled_rmse = (sq_mean.iter().sum::<f64>() / (count * horizon) as f64).sqrt();
    let pooled_rwse =
        (sq_rwse.iter().sum::<f64>() / (rwse_draws * horizon) as f64).sqrt();
    Ok(VariantMetrics {
        variant: ckpt.config.variant,
        rmse: pooled_rmse,
        rwse: pooled_rwse,
        per_step_rmse,
        per_step_rwse,
    })
}

/// The comparison-harness output: per-variant metrics on the shared split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<VariantMetrics>,
    pub n_traces: usize,
    pub train_windows: usize,
    pub val_windows: usize,
    pub epochs: usize,
}

impl EvalReport {
    pub fn metrics(&self, variant: Variant) -> Option<&VariantMetrics> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    /// Relative RWSE improvement of `a` over `b`, in percent.
    pub fn improvement_pct(&self, a: Variant, b: Variant) -> Option<f64> {
        let ra = self.metrics(a)?.rwse;
        let rb = self.metrics(b)?.rwse;
        Some(100.0 * (rb - ra) / rb)
    }
}

/// Train every variant on the identical track-disjoint split and seed, then
/// evaluate on the validation windows.
#[allow(clippy::too_many_arguments)]
pub fn compare(
    variants: &[Variant],
    windows: &[SceneWindow],
    indicator_rows: &[Vec<f64>],
    artifacts: &PreferenceArtifacts,
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    n_traces: usize,
) -> Result<EvalReport> {
    if variants.len() < 2 {
        return Err(Error::Size(
            "comparison needs at least two variants".to_string(),
        ));
    }
    let track_ids: Vec<u64> = windows.iter().map(|w| w.track_id).collect();
    let (train_idx, val_idx) = split_by_track(&track_ids, train_cfg.split_ratio, train_cfg.seed)?;

    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let behaviors = behavior_inputs(variant, indicator_rows, artifacts)?;
        let samples: Vec<SampleInputs> = windows
            .iter()
            .enumerate()
            .map(|(i, w)| make_sample(w, behaviors.as_ref().map(|b| b[i].clone())))
            .collect();
        let model_cfg = ModelConfig {
            variant,
            context_dim: context_dim(variant, artifacts),
            ..base.clone()
        };
        let quantizers = (variant == Variant::LstmmdDbv).then(|| artifacts.quantizers.clone());
        let (ckpt, _history) = train(
            &model_cfg,
            &samples,
            &train_idx,
            &val_idx,
            train_cfg,
            quantizers.as_ref(),
        )?;
        rows.push(evaluate_checkpoint(
            &ckpt,
            &samples,
            &val_idx,
            n_traces,
            mix_seed(train_cfg.seed, 0xe7a1),
        )?);
    }
    Ok(EvalReport {
        rows,
        n_traces,
        train_windows: train_idx.len(),
        val_windows: val_idx.len(),
        epochs: train_cfg.epochs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqmodel::MixtureParams;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn rmse_examples() {
        let p = ndarray::arr2(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(rmse(&p, &p), 0.0);
        let t = &p + 1.0;
        assert_abs_diff_eq!(rmse(&p, &t), 1.0, epsilon = 1e-12);
        let a = ndarray::arr2(&[[3.0, 4.0]]);
        let z = ndarray::arr2(&[[0.0, 0.0]]);
        assert_abs_diff_eq!(rmse(&a, &z), (12.5f64).sqrt(), epsilon = 1e-9);
        assert_abs_diff_eq!(rmse(&a, &z), 3.5355339059327378, epsilon = 1e-9);
    }

    #[test]
    fn rwse_point_mass_near_zero() {
        let truth = vec![vec![5.0; 10]];
        let dist = vec![vec![MixtureParams::point_mass(5.0); 10]];
        let r = rwse(&dist, &truth, 500, 1);
        assert!(r <= 10.0 * crate::seqmodel::SIGMA_FLOOR, "rwse {r}");
    }

    #[test]
    fn rwse_unit_gaussian_near_one() {
        let truth = vec![vec![3.0; 40]];
        let step = MixtureParams {
            weights: vec![1.0],
            means: vec![3.0],
            stds: vec![1.0],
        };
        let dist = vec![vec![step; 40]];
        let r = rwse(&dist, &truth, 500, 7);
        assert_abs_diff_eq!(r, 1.0, epsilon = 0.05);
    }

    #[test]
    fn rwse_at_least_rmse_of_means() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..100 {
            let horizon = 5;
            let mut dist = Vec::new();
            let mut means = Vec::new();
            for _ in 0..horizon {
                let w1: f64 = rng.random::<f64>();
                let step = MixtureParams {
                    weights: vec![w1, 1.0 - w1],
                    means: vec![rng.random::<f64>() * 10.0, rng.random::<f64>() * 10.0],
                    stds: vec![
                        0.1 + rng.random::<f64>(),
                        0.1 + rng.random::<f64>(),
                    ],
                };
                means.push(step.mean());
                dist.push(step);
            }
            let truth: Vec<f64> = (0..horizon).map(|_| rng.random::<f64>() * 10.0).collect();
            let r = rwse(&[dist.clone()], &[truth.clone()], 400, trial);
            let pred = ndarray::Array2::from_shape_vec((1, horizon), means.clone()).unwrap();
            let tm = ndarray::Array2::from_shape_vec((1, horizon), truth.clone()).unwrap();
            let rm = rmse(&pred, &tm);
            assert!(
                r >= rm - 0.08,
                "trial {trial}: rwse {r} < rmse of means {rm}"
            );
        }
    }

    #[test]
    fn split_examples() {
        // 10 tracks x 4 windows each
        let track_ids: Vec<u64> = (0..10u64).flat_map(|t| vec![t; 4]).collect();
        let (train, val) = split_by_track(&track_ids, (4, 1), 3).unwrap();
        assert_eq!(train.len(), 32);
        assert_eq!(val.len(), 8);

        // determinism
        let (t2, v2) = split_by_track(&track_ids, (4, 1), 3).unwrap();
        assert_eq!(train, t2);
        assert_eq!(val, v2);

        // disjointness
        let train_tracks: std::collections::HashSet<u64> =
            train.iter().map(|&i| track_ids[i]).collect();
        let val_tracks: std::collections::HashSet<u64> =
            val.iter().map(|&i| track_ids[i]).collect();
        assert!(train_tracks.is_disjoint(&val_tracks));
    }

    proptest! {
        #[test]
        fn splits_track_disjoint_all_seeds(seed in 0u64..500) {
            let track_ids: Vec<u64> = (0..12u64).flat_map(|t| vec![t; 3]).collect();
            let (train, val) = split_by_track(&track_ids, (4, 1), seed).unwrap();
            prop_assert_eq!(train.len() + val.len(), track_ids.len());
            let train_tracks: std::collections::HashSet<u64> =
                train.iter().map(|&i| track_ids[i]).collect();
            let val_tracks: std::collections::HashSet<u64> =
                val.iter().map(|&i| track_ids[i]).collect();
            prop_assert!(train_tracks.is_disjoint(&val_tracks));
            prop_assert!(!val.is_empty() && !train.is_empty());
        }
    }
}
