//! The LSTMMD-DBV network family.
//!
//! An embedding layer feeds a stacked LSTM encoder over the 5 s observation
//! segment; the final encoder vector is concatenated with an embedded
//! behavior input (variant-dependent) into the trajectory encoding vector R;
//! a stacked LSTM decoder conditioned on R emits, per future step, either
//! Gaussian-mixture parameters over velocity or a deterministic velocity.
//! Gradients are exact backpropagation through time, all in f64.

mod backward;
mod checkpoint;
mod forward;
mod params;

pub use backward::loss_and_grad;
pub use checkpoint::{Checkpoint, Normalization};
pub use forward::{
    batch_loss, build_context, decode, encode, forward, mdn_head, Batch, ForwardCache,
    HeadOutput, MdnStep, Mode,
};
pub use params::{HeadParams, LstmLayerParams, ModelParams, TensorMut, TensorRef};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Lower bound added to every mixture standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-3;

/// Model variants in ablation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Deterministic head trained with mean squared error.
    LstmDet,
    /// Mixture-density head, no behavior input.
    Lstmmd,
    /// Mixture-density head plus one-hot driving-preference label.
    LstmmdDp,
    /// Mixture-density head plus quantized behavior vector.
    LstmmdDbv,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::LstmDet,
        Variant::Lstmmd,
        Variant::LstmmdDp,
        Variant::LstmmdDbv,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::LstmDet => "lstm-det",
            Variant::Lstmmd => "lstmmd",
            Variant::LstmmdDp => "lstmmd-dp",
            Variant::LstmmdDbv => "lstmmd-dbv",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lstm-det" | "lstm" => Some(Variant::LstmDet),
            "lstmmd" => Some(Variant::Lstmmd),
            "lstmmd-dp" => Some(Variant::LstmmdDp),
            "lstmmd-dbv" => Some(Variant::LstmmdDbv),
            _ => None,
        }
    }

    /// Whether the decoder receives an embedded behavior input.
    pub fn uses_context(&self) -> bool {
        matches!(self, Variant::LstmmdDp | Variant::LstmmdDbv)
    }

    pub fn is_probabilistic(&self) -> bool {
        !matches!(self, Variant::LstmDet)
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub input_channels: usize,
    pub encoder_len: usize,
    pub decoder_len: usize,
    pub hidden: usize,
    pub layers: usize,
    pub dropout: f64,
    pub mixtures: usize,
    /// Behavior-vector dimension (DBV), preference-class count (DP), else 0.
    pub context_dim: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// The tuned full-scale configuration (192 neurons, 3 stacked layers,
    /// dropout 0.2, 5 mixtures, 50-step encoder, 40-step decoder).
    pub fn full_scale(variant: Variant, context_dim: usize, seed: u64) -> Self {
        ModelConfig {
            variant,
            input_channels: crate::trajdata::SCENE_CHANNELS,
            encoder_len: crate::trajdata::OBS_FRAMES,
            decoder_len: crate::trajdata::FUTURE_FRAMES,
            hidden: 192,
            layers: 3,
            dropout: 0.2,
            mixtures: 5,
            context_dim: if variant.uses_context() { context_dim } else { 0 },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0
            || self.layers == 0
            || self.encoder_len == 0
            || self.decoder_len == 0
            || self.input_channels == 0
        {
            return Err(Error::Config("model dimensions must be positive".to_string()));
        }
        if self.variant.is_probabilistic() && self.mixtures == 0 {
            return Err(Error::Config("mixture count must be positive".to_string()));
        }
        if self.variant.uses_context() && self.context_dim == 0 {
            return Err(Error::Config(format!(
                "variant {} requires a behavior input (context_dim > 0)",
                self.variant.name()
            )));
        }
        if !self.variant.uses_context() && self.context_dim != 0 {
            return Err(Error::Config(format!(
                "variant {} takes no behavior input",
                self.variant.name()
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".to_string()));
        }
        Ok(())
    }

    /// Width of the trajectory encoding vector R.
    pub fn r_width(&self) -> usize {
        if self.variant.uses_context() {
            2 * self.hidden
        } else {
            self.hidden
        }
    }
}

/// Mixture parameters for one future step of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl MixtureParams {
    pub fn point_mass(mean: f64) -> Self {
        MixtureParams {
            weights: vec![1.0],
            means: vec![mean],
            stds: vec![SIGMA_FLOOR],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.weights.len();
        if c == 0 || self.means.len() != c || self.stds.len() != c {
            return Err(Error::Shape("mixture component mismatch".to_string()));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || self.weights.iter().any(|&w| w < 0.0) {
            return Err(Error::Numeric(format!(
                "mixture weights must be a distribution (sum {sum})"
            )));
        }
        if self.stds.iter().any(|&s| s < SIGMA_FLOOR - 1e-15) {
            return Err(Error::Numeric("mixture std below floor".to_string()));
        }
        Ok(())
    }

    /// Expected velocity.
    pub fn mean(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.means)
            .map(|(w, m)| w * m)
            .sum()
    }

    /// Mixture CDF at `v`.
    pub fn cdf(&self, v: f64) -> f64 {
        self.weights
            .iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(w, (m, s))| w * normal_cdf((v - m) / s))
            .sum()
    }

    /// Quantile by bisection on the CDF (interval tolerance 1e-6).
    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(1e-12, 1.0 - 1e-12);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (m, s) in self.means.iter().zip(&self.stds) {
            lo = lo.min(m - 12.0 * s);
            hi = hi.max(m + 12.0 * s);
        }
        for _ in 0..200 {
            if hi - lo <= 1e-6 {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Log-density at `v` (stable log-sum-exp over components).
    pub fn log_density(&self, v: f64) -> f64 {
        const HALF_LN_2PI: f64 = 0.9189385332046727;
        let mut terms = Vec::with_capacity(self.weights.len());
        for ((&w, &m), &s) in self.weights.iter().zip(&self.means).zip(&self.stds) {
            if w <= 0.0 {
                continue;
            }
            let z = (v - m) / s;
            terms.push(w.ln() - s.ln() - HALF_LN_2PI - 0.5 * z * z);
        }
        log_sum_exp(&terms)
    }
}

pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Standard normal CDF via erf (absolute error below 1.5e-7).
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// Abramowitz & Stegun 7.1.26 rational approximation.
fn erf(x: f64) -> f64 {
    let sign = x.signum();
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

/// Per-step mixture parameters over the full prediction horizon.
pub type PredictedDistribution = Vec<MixtureParams>;

/// Negative log-likelihood of target velocities under a predicted
/// distribution, summed over steps.
pub fn nll(prediction: &PredictedDistribution, targets: &[f64]) -> Result<f64> {
    if prediction.len() != targets.len() {
        return Err(Error::Shape(format!(
            "prediction has {} steps, targets {}",
            prediction.len(),
            targets.len()
        )));
    }
    let mut total = 0.0;
    for (step, (p, &y)) in prediction.iter().zip(targets).enumerate() {
        let ld = p.log_density(y);
        if !ld.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite likelihood at step {step}"
            )));
        }
        total -= ld;
    }
    Ok(total)
}

/// Expected velocity per step.
pub fn mean_trace(prediction: &PredictedDistribution) -> Vec<f64> {
    prediction.iter().map(MixtureParams::mean).collect()
}

/// Draw `n` velocity traces; per step the component is drawn by weight, then
/// a Gaussian by its (mean, std). Steps are independent. Deterministic under
/// the seed.
pub fn sample_traces(
    prediction: &PredictedDistribution,
    n: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut traces = Vec::with_capacity(n);
    for _ in 0..n {
        let mut trace = Vec::with_capacity(prediction.len());
        for step in prediction {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut comp = step.weights.len() - 1;
            for (ci, &w) in step.weights.iter().enumerate() {
                acc += w;
                if u <= acc {
                    comp = ci;
                    break;
                }
            }
            let normal = Normal::new(step.means[comp], step.stds[comp])
                .expect("stds are floored above zero");
            trace.push(normal.sample(&mut rng));
        }
        traces.push(trace);
    }
    traces
}

/// Cumulative trapezoidal integration of a velocity trace starting from the
/// last observed position and velocity.
pub fn integrate_position(
    trace: &[f64],
    dt: f64,
    start_position: f64,
    start_velocity: f64,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(trace.len());
    let mut pos = start_position;
    let mut prev_v = start_velocity;
    for &v in trace {
        pos += 0.5 * (prev_v + v) * dt;
        prev_v = v;
        out.push(pos);
    }
    out
}
