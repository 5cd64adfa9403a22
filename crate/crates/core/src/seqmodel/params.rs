//! Model parameter containers with a canonical flat ordering.
//!
//! The flat ordering backs the optimizer state, gradient clipping,
//! finite-difference checks and checkpoint serialization, so it must stay
//! stable: tensors are visited in declaration order, row-major.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, Variant};

/// Gate weights for one LSTM layer. Gate order within the 4H rows is
/// input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayerParams {
    /// (4H x input_dim) input weights.
    pub w: Array2<f64>,
    /// (4H x H) recurrent weights.
    pub u: Array2<f64>,
    /// (4H) bias; the forget slice is initialized to 1.
    pub b: Array1<f64>,
}

/// Output head: mixture-density parameters or a deterministic velocity.
#[derive(Debug, Clone, PartialEq)]
pub enum HeadParams {
    Mdn {
        pi_w: Array2<f64>,
        pi_b: Array1<f64>,
        mu_w: Array2<f64>,
        mu_b: Array1<f64>,
        sigma_w: Array2<f64>,
        sigma_b: Array1<f64>,
    },
    Det {
        w: Array2<f64>,
        b: Array1<f64>,
    },
}

/// All trainable tensors of one model instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// Input embedding (H x channels), applied before the encoder stack.
    pub embed_w: Array2<f64>,
    pub embed_b: Array1<f64>,
    pub encoder: Vec<LstmLayerParams>,
    /// Encoder-vector projection (H x H).
    pub ev_w: Array2<f64>,
    pub ev_b: Array1<f64>,
    /// Behavior embedding (H x context_dim); present for DP / DBV variants.
    pub ctx_w: Option<Array2<f64>>,
    pub ctx_b: Option<Array1<f64>>,
    pub decoder: Vec<LstmLayerParams>,
    /// Output-combination weights (H x (2H + r_width)), sigmoid-activated.
    pub q_w: Array2<f64>,
    pub q_b: Array1<f64>,
    /// Head-alignment projection (H x H).
    pub z_w: Array2<f64>,
    pub z_b: Array1<f64>,
    pub head: HeadParams,
}

pub enum TensorRef<'a> {
    M(&'a Array2<f64>),
    V(&'a Array1<f64>),
}

pub enum TensorMut<'a> {
    M(&'a mut Array2<f64>),
    V(&'a mut Array1<f64>),
}

impl<'a> TensorRef<'a> {
    pub fn len(&self) -> usize {
        match self {
            TensorRef::M(m) => m.len(),
            TensorRef::V(v) => v.len(),
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        match self {
            TensorRef::M(m) => m.shape().to_vec(),
            TensorRef::V(v) => v.shape().to_vec(),
        }
    }

    pub fn iter(&self) -> Box<dyn Iterator<Item = &f64> + '_> {
        match self {
            TensorRef::M(m) => Box::new(m.iter()),
            TensorRef::V(v) => Box::new(v.iter()),
        }
    }
}

fn uniform_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| (rng.random::<f64>() * 2.0 - 1.0) * scale)
}

fn lstm_layer(rng: &mut ChaCha8Rng, hidden: usize, input_dim: usize) -> LstmLayerParams {
    let sw = 1.0 / (input_dim as f64).sqrt();
    let su = 1.0 / (hidden as f64).sqrt();
    let mut b = Array1::zeros(4 * hidden);
    // forget-gate bias 1 keeps early gradients alive through time
    for i in hidden..2 * hidden {
        b[i] = 1.0;
    }
    LstmLayerParams {
        w: uniform_mat(rng, 4 * hidden, input_dim, sw),
        u: uniform_mat(rng, 4 * hidden, hidden, su),
        b,
    }
}

impl ModelParams {
    /// Seeded initialization: uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))
    /// weights, zero biases except the LSTM forget gates.
    pub fn init(config: &ModelConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let h = config.hidden;
        let r_width = config.r_width();
        let sh = 1.0 / (h as f64).sqrt();

        let embed_w = uniform_mat(&mut rng, h, config.input_channels, 1.0 / (config.input_channels as f64).sqrt());
        let embed_b = Array1::zeros(h);

        let mut encoder = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let input_dim = if l == 0 { h } else { h };
            encoder.push(lstm_layer(&mut rng, h, input_dim));
        }
        let ev_w = uniform_mat(&mut rng, h, h, sh);
        let ev_b = Array1::zeros(h);

        let (ctx_w, ctx_b) = if config.variant.uses_context() {
            (
                Some(uniform_mat(
                    &mut rng,
                    h,
                    config.context_dim,
                    1.0 / (config.context_dim.max(1) as f64).sqrt(),
                )),
                Some(Array1::zeros(h)),
            )
        } else {
            (None, None)
        };

        let mut decoder = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let input_dim = if l == 0 { h + r_width } else { h };
            decoder.push(lstm_layer(&mut rng, h, input_dim));
        }

        let q_in = 2 * h + r_width;
        let q_w = uniform_mat(&mut rng, h, q_in, 1.0 / (q_in as f64).sqrt());
        let q_b = Array1::zeros(h);
        let z_w = uniform_mat(&mut rng, h, h, sh);
        let z_b = Array1::zeros(h);

        let head = match config.variant {
            Variant::LstmDet => HeadParams::Det {
                w: uniform_mat(&mut rng, 1, h, sh),
                b: Array1::zeros(1),
            },
            _ => {
                let c = config.mixtures;
                HeadParams::Mdn {
                    pi_w: uniform_mat(&mut rng, c, h, sh),
                    pi_b: Array1::zeros(c),
                    mu_w: uniform_mat(&mut rng, c, h, sh),
                    mu_b: Array1::zeros(c),
                    sigma_w: uniform_mat(&mut rng, c, h, sh),
                    sigma_b: Array1::zeros(c),
                }
            }
        };

        ModelParams {
            config: config.clone(),
            embed_w,
            embed_b,
            encoder,
            ev_w,
            ev_b,
            ctx_w,
            ctx_b,
            decoder,
            q_w,
            q_b,
            z_w,
            z_b,
            head,
        }
    }

    /// Same shapes as `self`, all zeros; the gradient container.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, t) in out.visit_mut() {
            match t {
                TensorMut::M(m) => m.fill(0.0),
                TensorMut::V(v) => v.fill(0.0),
            }
        }
        out
    }

    /// Spread the mixture means around the target statistics so components
    /// start distinct, and set the log-sigma bias to the target std.
    pub fn init_output_bias(&mut self, target_mean: f64, target_std: f64) {
        let std = target_std.max(0.05);
        match &mut self.head {
            HeadParams::Mdn { mu_b, sigma_b, .. } => {
                let c = mu_b.len();
                for (i, m) in mu_b.iter_mut().enumerate() {
                    let offset = if c == 1 {
                        0.0
                    } else {
                        -1.0 + 2.0 * i as f64 / (c - 1) as f64
                    };
                    *m = target_mean + offset * std;
                }
                sigma_b.fill(std.ln());
            }
            HeadParams::Det { b, .. } => b.fill(target_mean),
        }
    }

    /// Tensors in canonical order.
    pub fn visit(&self) -> Vec<(String, TensorRef<'_>)> {
        let mut out: Vec<(String, TensorRef)> = vec![
            ("embed.w".into(), TensorRef::M(&self.embed_w)),
            ("embed.b".into(), TensorRef::V(&self.embed_b)),
        ];
        for (l, layer) in self.encoder.iter().enumerate() {
            out.push((format!("enc{l}.w"), TensorRef::M(&layer.w)));
            out.push((format!("enc{l}.u"), TensorRef::M(&layer.u)));
            out.push((format!("enc{l}.b"), TensorRef::V(&layer.b)));
        }
        out.push(("ev.w".into(), TensorRef::M(&self.ev_w)));
        out.push(("ev.b".into(), TensorRef::V(&self.ev_b)));
        if let (Some(w), Some(b)) = (&self.ctx_w, &self.ctx_b) {
            out.push(("ctx.w".into(), TensorRef::M(w)));
            out.push(("ctx.b".into(), TensorRef::V(b)));
        }
        for (l, layer) in self.decoder.iter().enumerate() {
            out.push((format!("dec{l}.w"), TensorRef::M(&layer.w)));
            out.push((format!("dec{l}.u"), TensorRef::M(&layer.u)));
            out.push((format!("dec{l}.b"), TensorRef::V(&layer.b)));
        }
        out.push(("q.w".into(), TensorRef::M(&self.q_w)));
        out.push(("q.b".into(), TensorRef::V(&self.q_b)));
        out.push(("z.w".into(), TensorRef::M(&self.z_w)));
        out.push(("z.b".into(), TensorRef::V(&self.z_b)));
        match &self.head {
            HeadParams::Mdn {
                pi_w,
                pi_b,
                mu_w,
                mu_b,
                sigma_w,
                sigma_b,
            } => {
                out.push(("head.pi_w".into(), TensorRef::M(pi_w)));
                out.push(("head.pi_b".into(), TensorRef::V(pi_b)));
                out.push(("head.mu_w".into(), TensorRef::M(mu_w)));
                out.push(("head.mu_b".into(), TensorRef::V(mu_b)));
                out.push(("head.sigma_w".into(), TensorRef::M(sigma_w)));
                out.push(("head.sigma_b".into(), TensorRef::V(sigma_b)));
            }
            HeadParams::Det { w, b } => {
                out.push(("head.w".into(), TensorRef::M(w)));
                out.push(("head.b".into(), TensorRef::V(b)));
            }
        }
        out
    }

    pub fn visit_mut(&mut self) -> Vec<(String, TensorMut<'_>)> {
        let mut out: Vec<(String, TensorMut)> = vec![
            ("embed.w".into(), TensorMut::M(&mut self.embed_w)),
            ("embed.b".into(), TensorMut::V(&mut self.embed_b)),
        ];
        for (l, layer) in self.encoder.iter_mut().enumerate() {
            out.push((format!("enc{l}.w"), TensorMut::M(&mut layer.w)));
            out.push((format!("enc{l}.u"), TensorMut::M(&mut layer.u)));
            out.push((format!("enc{l}.b"), TensorMut::V(&mut layer.b)));
        }
        out.push(("ev.w".into(), TensorMut::M(&mut self.ev_w)));
        out.push(("ev.b".into(), TensorMut::V(&mut self.ev_b)));
        if let (Some(w), Some(b)) = (&mut self.ctx_w, &mut self.ctx_b) {
            out.push(("ctx.w".into(), TensorMut::M(w)));
            out.push(("ctx.b".into(), TensorMut::V(b)));
        }
        for (l, layer) in self.decoder.iter_mut().enumerate() {
            out.push((format!("dec{l}.w"), TensorMut::M(&mut layer.w)));
            out.push((format!("dec{l}.u"), TensorMut::M(&mut layer.u)));
            out.push((format!("dec{l}.b"), TensorMut::V(&mut layer.b)));
        }
        out.push(("q.w".into(), TensorMut::M(&mut self.q_w)));
        out.push(("q.b".into(), TensorMut::V(&mut self.q_b)));
        out.push(("z.w".into(), TensorMut::M(&mut self.z_w)));
        out.push(("z.b".into(), TensorMut::V(&mut self.z_b)));
        match &mut self.head {
            HeadParams::Mdn {
                pi_w,
                pi_b,
                mu_w,
                mu_b,
                sigma_w,
                sigma_b,
            } => {
                out.push(("head.pi_w".into(), TensorMut::M(pi_w)));
                out.push(("head.pi_b".into(), TensorMut::V(pi_b)));
                out.push(("head.mu_w".into(), TensorMut::M(mu_w)));
                out.push(("head.mu_b".into(), TensorMut::V(mu_b)));
                out.push(("head.sigma_w".into(), TensorMut::M(sigma_w)));
                out.push(("head.sigma_b".into(), TensorMut::V(sigma_b)));
            }
            HeadParams::Det { w, b } => {
                out.push(("head.w".into(), TensorMut::M(w)));
                out.push(("head.b".into(), TensorMut::V(b)));
            }
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.visit().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for (_, t) in self.visit() {
            out.extend(t.iter().copied());
        }
        out
    }

    pub fn assign_from_flat(&mut self, flat: &[f64]) {
        let mut cursor = 0usize;
        for (_, t) in self.visit_mut() {
            match t {
                TensorMut::M(m) => {
                    for v in m.iter_mut() {
                        *v = flat[cursor];
                        cursor += 1;
                    }
                }
                TensorMut::V(vec) => {
                    for v in vec.iter_mut() {
                        *v = flat[cursor];
                        cursor += 1;
                    }
                }
            }
        }
        assert_eq!(cursor, flat.len(), "flat vector length mismatch");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(variant: Variant) -> ModelConfig {
        ModelConfig {
            variant,
            input_channels: 14,
            encoder_len: 5,
            decoder_len: 3,
            hidden: 8,
            layers: 2,
            dropout: 0.0,
            mixtures: 2,
            context_dim: if variant.uses_context() { 3 } else { 0 },
            seed: 1,
        }
    }

    #[test]
    fn flat_round_trip() {
        for variant in [
            Variant::LstmDet,
            Variant::Lstmmd,
            Variant::LstmmdDp,
            Variant::LstmmdDbv,
        ] {
            let params = ModelParams::init(&tiny_config(variant));
            let flat = params.to_flat();
            assert_eq!(flat.len(), params.n_params());
            let mut other = params.zeros_like();
            other.assign_from_flat(&flat);
            assert_eq!(params, other);
        }
    }

    #[test]
    fn forget_bias_initialized() {
        let params = ModelParams::init(&tiny_config(Variant::Lstmmd));
        let h = params.config.hidden;
        for layer in params.encoder.iter().chain(&params.decoder) {
            for i in 0..h {
                assert_eq!(layer.b[i], 0.0);
                assert_eq!(layer.b[h + i], 1.0);
            }
        }
    }

    #[test]
    fn init_deterministic_under_seed() {
        let cfg = tiny_config(Variant::LstmmdDbv);
        let a = ModelParams::init(&cfg);
        let b = ModelParams::init(&cfg);
        assert_eq!(a, b);
    }
}
