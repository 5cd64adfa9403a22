//! Batched forward evaluation with caches for backpropagation.

use ndarray::{concatenate, s, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{HeadParams, LstmLayerParams, ModelParams};
use super::{MixtureParams, PredictedDistribution, SIGMA_FLOOR};
use crate::{Error, Result};

/// One minibatch, time-major observations.
#[derive(Debug, Clone)]
pub struct Batch {
    /// encoder_len entries of (B x channels), z-scored.
    pub obs: Vec<Array2<f64>>,
    /// (B x context_dim) behavior input for DP / DBV variants.
    pub behavior: Option<Array2<f64>>,
    /// (B x decoder_len) target velocities, m/s.
    pub targets: Array2<f64>,
}

impl Batch {
    pub fn batch_size(&self) -> usize {
        self.obs.first().map_or(0, |o| o.nrows())
    }
}

/// Training mode draws dropout masks from the rng; evaluation never drops.
pub enum Mode<'a> {
    Train { rng: &'a mut ChaCha8Rng },
    Eval,
}

impl Mode<'_> {
    fn mask(
        &mut self,
        rows: usize,
        cols: usize,
        dropout: f64,
    ) -> Option<Array2<f64>> {
        match self {
            Mode::Train { rng } if dropout > 0.0 => {
                let keep = 1.0 - dropout;
                Some(Array2::from_shape_fn((rows, cols), |_| {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                }))
            }
            _ => None,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-layer activations kept for backpropagation.
#[derive(Debug, Clone)]
pub struct LayerCache {
    /// Input to the layer at each step, after dropout.
    pub inputs: Vec<Array2<f64>>,
    /// Dropout mask applied to this layer's input (layers above the first).
    pub masks: Vec<Option<Array2<f64>>>,
    /// Hidden states; index 0 is the initial state.
    pub h: Vec<Array2<f64>>,
    /// Cell states; index 0 is the initial state.
    pub c: Vec<Array2<f64>>,
    pub gate_i: Vec<Array2<f64>>,
    pub gate_f: Vec<Array2<f64>>,
    pub gate_g: Vec<Array2<f64>>,
    pub gate_o: Vec<Array2<f64>>,
}

impl LayerCache {
    fn new(h0: Array2<f64>, c0: Array2<f64>, t: usize) -> Self {
        LayerCache {
            inputs: Vec::with_capacity(t),
            masks: Vec::with_capacity(t),
            h: {
                let mut v = Vec::with_capacity(t + 1);
                v.push(h0);
                v
            },
            c: {
                let mut v = Vec::with_capacity(t + 1);
                v.push(c0);
                v
            },
            gate_i: Vec::with_capacity(t),
            gate_f: Vec::with_capacity(t),
            gate_g: Vec::with_capacity(t),
            gate_o: Vec::with_capacity(t),
        }
    }

    fn last_h(&self) -> &Array2<f64> {
        self.h.last().expect("cache holds the initial state")
    }

    fn last_c(&self) -> &Array2<f64> {
        self.c.last().expect("cache holds the initial state")
    }
}

/// One LSTM cell step over the batch; pushes activations into the cache.
fn lstm_step(layer: &LstmLayerParams, cache: &mut LayerCache, input: Array2<f64>, hidden: usize) {
    let h_prev = cache.last_h().clone();
    let c_prev = cache.last_c().clone();
    let mut pre = input.dot(&layer.w.t());
    pre += &h_prev.dot(&layer.u.t());
    pre += &layer.b;

    let gi = pre.slice(s![.., 0..hidden]).mapv(sigmoid);
    let gf = pre.slice(s![.., hidden..2 * hidden]).mapv(sigmoid);
    let gg = pre.slice(s![.., 2 * hidden..3 * hidden]).mapv(f64::tanh);
    let go = pre.slice(s![.., 3 * hidden..4 * hidden]).mapv(sigmoid);

    let c = &gf * &c_prev + &gi * &gg;
    let h = &go * &c.mapv(f64::tanh);

    cache.inputs.push(input);
    cache.h.push(h);
    cache.c.push(c);
    cache.gate_i.push(gi);
    cache.gate_f.push(gf);
    cache.gate_g.push(gg);
    cache.gate_o.push(go);
}

/// Advance a whole stack one step: the bottom layer consumes `input`, upper
/// layers consume the (possibly dropped-out) hidden state below.
fn stack_step(
    layers: &[LstmLayerParams],
    caches: &mut [LayerCache],
    input: Array2<f64>,
    hidden: usize,
    dropout: f64,
    mode: &mut Mode<'_>,
) {
    let mut current = input;
    for (l, layer) in layers.iter().enumerate() {
        let (masked, mask) = if l == 0 {
            (current, None)
        } else {
            match mode.mask(current.nrows(), current.ncols(), dropout) {
                Some(m) => (&current * &m, Some(m)),
                None => (current, None),
            }
        };
        caches[l].masks.push(mask);
        lstm_step(layer, &mut caches[l], masked, hidden);
        current = caches[l].last_h().clone();
    }
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub enc: Vec<LayerCache>,
    pub ev_final: Array2<f64>,
    pub ed: Option<Array2<f64>>,
    pub r: Array2<f64>,
    pub dec: Vec<LayerCache>,
    /// Decoder output vectors; index 0 is the zero bootstrap.
    pub q: Vec<Array2<f64>>,
    pub z: Vec<Array2<f64>>,
}

/// Per-step mixture parameters over the batch.
#[derive(Debug, Clone)]
pub struct MdnStep {
    /// (B x C) mixture weights (softmax normalized).
    pub pi: Array2<f64>,
    /// (B x C) stable log weights.
    pub log_pi: Array2<f64>,
    /// (B x C) component means, m/s.
    pub mu: Array2<f64>,
    /// (B x C) component standard deviations, floored at [`SIGMA_FLOOR`].
    pub sigma: Array2<f64>,
}

/// Batched head outputs over the decoding horizon.
#[derive(Debug, Clone)]
pub enum HeadOutput {
    Mdn(Vec<MdnStep>),
    /// Deterministic velocity per step, (B x 1).
    Det(Vec<Array2<f64>>),
}

impl HeadOutput {
    pub fn steps(&self) -> usize {
        match self {
            HeadOutput::Mdn(v) => v.len(),
            HeadOutput::Det(v) => v.len(),
        }
    }

    /// Extract the per-sample distribution (deterministic heads become
    /// near-point masses).
    pub fn distribution(&self, sample: usize) -> PredictedDistribution {
        match self {
            HeadOutput::Mdn(steps) => steps
                .iter()
                .map(|s| MixtureParams {
                    weights: s.pi.row(sample).to_vec(),
                    means: s.mu.row(sample).to_vec(),
                    stds: s.sigma.row(sample).to_vec(),
                })
                .collect(),
            HeadOutput::Det(steps) => steps
                .iter()
                .map(|s| MixtureParams::point_mass(s[[sample, 0]]))
                .collect(),
        }
    }

    /// Expected velocity per (sample, step).
    pub fn mean_matrix(&self) -> Array2<f64> {
        match self {
            HeadOutput::Mdn(steps) => {
                let b = steps[0].pi.nrows();
                let mut out = Array2::zeros((b, steps.len()));
                for (t, s) in steps.iter().enumerate() {
                    let m = (&s.pi * &s.mu).sum_axis(Axis(1));
                    out.column_mut(t).assign(&m);
                }
                out
            }
            HeadOutput::Det(steps) => {
                let b = steps[0].nrows();
                let mut out = Array2::zeros((b, steps.len()));
                for (t, s) in steps.iter().enumerate() {
                    out.column_mut(t).assign(&s.column(0));
                }
                out
            }
        }
    }
}

fn validate_batch(params: &ModelParams, batch: &Batch) -> Result<usize> {
    let cfg = &params.config;
    if batch.obs.len() != cfg.encoder_len {
        return Err(Error::Shape(format!(
            "observation has {} steps, encoder expects {}",
            batch.obs.len(),
            cfg.encoder_len
        )));
    }
    let b = batch.batch_size();
    for (t, o) in batch.obs.iter().enumerate() {
        if o.shape() != [b, cfg.input_channels] {
            return Err(Error::Shape(format!(
                "observation step {t} has shape {:?}, expected [{b}, {}]",
                o.shape(),
                cfg.input_channels
            )));
        }
    }
    match (&batch.behavior, cfg.variant.uses_context()) {
        (Some(bv), true) => {
            if bv.shape() != [b, cfg.context_dim] {
                return Err(Error::Shape(format!(
                    "behavior input has shape {:?}, expected [{b}, {}]",
                    bv.shape(),
                    cfg.context_dim
                )));
            }
        }
        (None, false) => {}
        (Some(_), false) => {
            return Err(Error::Config(format!(
                "variant {} takes no behavior input",
                cfg.variant.name()
            )))
        }
        (None, true) => {
            return Err(Error::Config(format!(
                "variant {} requires a behavior input",
                cfg.variant.name()
            )))
        }
    }
    if batch.targets.nrows() != b && batch.targets.len() != 0 {
        return Err(Error::Shape("target batch mismatch".to_string()));
    }
    Ok(b)
}

/// Run the encoder stack; returns per-layer caches and the final encoder
/// vector EV (projection of the top hidden state at the last step).
fn forward_encoder(
    params: &ModelParams,
    obs: &[Array2<f64>],
    mode: &mut Mode<'_>,
) -> (Vec<LayerCache>, Array2<f64>) {
    let cfg = &params.config;
    let h = cfg.hidden;
    let b = obs[0].nrows();
    let mut caches: Vec<LayerCache> = (0..cfg.layers)
        .map(|_| LayerCache::new(Array2::zeros((b, h)), Array2::zeros((b, h)), cfg.encoder_len))
        .collect();
    for obs_t in obs {
        let mut x = obs_t.dot(&params.embed_w.t());
        x += &params.embed_b;
        stack_step(&params.encoder, &mut caches, x, h, cfg.dropout, mode);
    }
    let top = caches[cfg.layers - 1].last_h();
    let mut ev = top.dot(&params.ev_w.t());
    ev += &params.ev_b;
    (caches, ev)
}

/// The encoder as a standalone operation: per-step encoder vectors plus the
/// final (h, c) state of every layer.
pub fn encode(
    params: &ModelParams,
    obs: &[Array2<f64>],
    mut mode: Mode<'_>,
) -> Result<(Vec<Array2<f64>>, Vec<(Array2<f64>, Array2<f64>)>)> {
    let cfg = &params.config;
    if obs.len() != cfg.encoder_len {
        return Err(Error::Shape(format!(
            "observation has {} steps, encoder expects {}",
            obs.len(),
            cfg.encoder_len
        )));
    }
    let (caches, _) = forward_encoder(params, obs, &mut mode);
    let top = &caches[cfg.layers - 1];
    let mut evs = Vec::with_capacity(cfg.encoder_len);
    for t in 1..=cfg.encoder_len {
        let mut ev = top.h[t].dot(&params.ev_w.t());
        ev += &params.ev_b;
        evs.push(ev);
    }
    let states = caches
        .iter()
        .map(|c| (c.last_h().clone(), c.last_c().clone()))
        .collect();
    Ok((evs, states))
}

/// Embed the behavior input and concatenate it with the final encoder
/// vector into the trajectory encoding vector R.
pub fn build_context(
    params: &ModelParams,
    ev_final: &Array2<f64>,
    behavior: Option<&Array2<f64>>,
) -> Result<(Array2<f64>, Option<Array2<f64>>)> {
    let cfg = &params.config;
    match (behavior, cfg.variant.uses_context()) {
        (Some(bv), true) => {
            let (w, b) = (
                params.ctx_w.as_ref().expect("context params exist"),
                params.ctx_b.as_ref().expect("context params exist"),
            );
            if bv.ncols() != cfg.context_dim {
                return Err(Error::Config(format!(
                    "behavior input has {} entries, expected {}",
                    bv.ncols(),
                    cfg.context_dim
                )));
            }
            let mut ed = bv.dot(&w.t());
            ed += b;
            let r = concatenate(Axis(1), &[ev_final.view(), ed.view()])
                .expect("batch dimensions agree");
            Ok((r, Some(ed)))
        }
        (None, false) => Ok((ev_final.clone(), None)),
        (Some(_), false) => Err(Error::Config(format!(
            "variant {} takes no behavior input",
            cfg.variant.name()
        ))),
        (None, true) => Err(Error::Config(format!(
            "variant {} requires a behavior input",
            cfg.variant.name()
        ))),
    }
}

/// The mixture-density head for one step: softmax weights, affine means,
/// exponential-plus-floor standard deviations.
pub fn mdn_head(params: &ModelParams, z: &Array2<f64>) -> Result<MdnStep> {
    match &params.head {
        HeadParams::Mdn {
            pi_w,
            pi_b,
            mu_w,
            mu_b,
            sigma_w,
            sigma_b,
        } => {
            let mut pi_pre = z.dot(&pi_w.t());
            pi_pre += pi_b;
            let mut log_pi = pi_pre.clone();
            for mut row in log_pi.rows_mut() {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max
                    + row
                        .iter()
                        .map(|v| (v - max).exp())
                        .sum::<f64>()
                        .ln();
                row.mapv_inplace(|v| v - lse);
            }
            let pi = log_pi.mapv(f64::exp);
            let mut mu = z.dot(&mu_w.t());
            mu += mu_b;
            let mut sg_pre = z.dot(&sigma_w.t());
            sg_pre += sigma_b;
            let sigma = sg_pre.mapv(|v| v.exp() + SIGMA_FLOOR);
            Ok(MdnStep {
                pi,
                log_pi,
                mu,
                sigma,
            })
        }
        HeadParams::Det { .. } => Err(Error::Config(
            "deterministic head has no mixture parameters".to_string(),
        )),
    }
}

struct DecoderRun {
    caches: Vec<LayerCache>,
    q: Vec<Array2<f64>>,
    z: Vec<Array2<f64>>,
    head: HeadOutput,
}

fn run_decoder(
    params: &ModelParams,
    r: &Array2<f64>,
    init_states: &[(Array2<f64>, Array2<f64>)],
    mode: &mut Mode<'_>,
) -> DecoderRun {
    let cfg = &params.config;
    let h = cfg.hidden;
    let b = r.nrows();
    let mut caches: Vec<LayerCache> = init_states
        .iter()
        .map(|(h0, c0)| LayerCache::new(h0.clone(), c0.clone(), cfg.decoder_len))
        .collect();
    let mut q_all: Vec<Array2<f64>> = vec![Array2::zeros((b, h))];
    let mut z_all: Vec<Array2<f64>> = Vec::with_capacity(cfg.decoder_len);
    let mut mdn_steps: Vec<MdnStep> = Vec::new();
    let mut det_steps: Vec<Array2<f64>> = Vec::new();

    for _t in 0..cfg.decoder_len {
        let q_prev = q_all.last().unwrap().clone();
        let input = concatenate(Axis(1), &[q_prev.view(), r.view()])
            .expect("batch dimensions agree");
        stack_step(&params.decoder, &mut caches, input, h, cfg.dropout, mode);

        let h_top = caches[cfg.layers - 1].last_h().clone();
        let cat = concatenate(Axis(1), &[h_top.view(), q_prev.view(), r.view()])
            .expect("batch dimensions agree");
        let mut q_pre = cat.dot(&params.q_w.t());
        q_pre += &params.q_b;
        let q = q_pre.mapv(sigmoid);

        let mut z = q.dot(&params.z_w.t());
        z += &params.z_b;

        match &params.head {
            HeadParams::Mdn { .. } => {
                mdn_steps.push(mdn_head(params, &z).expect("head is MDN"));
            }
            HeadParams::Det { w, b: bias } => {
                let mut out = z.dot(&w.t());
                out += bias;
                det_steps.push(out);
            }
        }
        q_all.push(q);
        z_all.push(z);
    }

    let head = match &params.head {
        HeadParams::Mdn { .. } => HeadOutput::Mdn(mdn_steps),
        HeadParams::Det { .. } => HeadOutput::Det(det_steps),
    };
    DecoderRun {
        caches,
        q: q_all,
        z: z_all,
        head,
    }
}

/// The decoder as a standalone operation.
pub fn decode(
    params: &ModelParams,
    r: &Array2<f64>,
    init_states: &[(Array2<f64>, Array2<f64>)],
    mut mode: Mode<'_>,
) -> Result<HeadOutput> {
    if init_states.len() != params.config.layers {
        return Err(Error::Shape(format!(
            "decoder needs {} initial layer states, got {}",
            params.config.layers,
            init_states.len()
        )));
    }
    if r.ncols() != params.config.r_width() {
        return Err(Error::Shape(format!(
            "R has width {}, expected {}",
            r.ncols(),
            params.config.r_width()
        )));
    }
    Ok(run_decoder(params, r, init_states, &mut mode).head)
}

/// Full forward pass with caches.
pub fn forward(
    params: &ModelParams,
    batch: &Batch,
    mut mode: Mode<'_>,
) -> Result<(HeadOutput, ForwardCache)> {
    validate_batch(params, batch)?;
    let (enc, ev_final) = forward_encoder(params, &batch.obs, &mut mode);
    let (r, ed) = build_context(params, &ev_final, batch.behavior.as_ref())?;
    let init_states: Vec<(Array2<f64>, Array2<f64>)> = enc
        .iter()
        .map(|c| (c.last_h().clone(), c.last_c().clone()))
        .collect();
    let run = run_decoder(params, &r, &init_states, &mut mode);
    Ok((
        run.head,
        ForwardCache {
            enc,
            ev_final,
            ed,
            r,
            dec: run.caches,
            q: run.q,
            z: run.z,
        },
    ))
}

/// Training loss: negative log-likelihood for mixture heads (summed over
/// steps, averaged over the batch), mean squared error for the
/// deterministic head.
pub fn batch_loss(head: &HeadOutput, targets: &Array2<f64>) -> Result<f64> {
    const HALF_LN_2PI: f64 = 0.9189385332046727;
    let b = targets.nrows() as f64;
    match head {
        HeadOutput::Mdn(steps) => {
            let mut total = 0.0;
            for (t, step) in steps.iter().enumerate() {
                for (row, &y) in targets.column(t).iter().enumerate() {
                    let mut terms = Vec::with_capacity(step.pi.ncols());
                    for c in 0..step.pi.ncols() {
                        let sigma = step.sigma[[row, c]];
                        let zsc = (y - step.mu[[row, c]]) / sigma;
                        terms.push(
                            step.log_pi[[row, c]] - sigma.ln() - HALF_LN_2PI - 0.5 * zsc * zsc,
                        );
                    }
                    let ll = super::log_sum_exp(&terms);
                    if !ll.is_finite() {
                        return Err(Error::Numeric(format!(
                            "non-finite likelihood at step {t}"
                        )));
                    }
                    total -= ll;
                }
            }
            Ok(total / b)
        }
        HeadOutput::Det(steps) => {
            let mut total = 0.0;
            for (t, step) in steps.iter().enumerate() {
                for (row, &y) in targets.column(t).iter().enumerate() {
                    let e = step[[row, 0]] - y;
                    total += e * e;
                }
                if !total.is_finite() {
                    return Err(Error::Numeric(format!("non-finite loss at step {t}")));
                }
            }
            Ok(total / b)
        }
    }
}
