//! Exact gradients by backpropagation through time.
//!
//! Mirrors the forward pass over the cached activations: head loss
//! gradients flow through the z / q projections, down the decoder stack and
//! its recurrence, into the trajectory encoding vector R (and the behavior
//! embedding), and on through the encoder stack to the input embedding.

use ndarray::{s, Array2, Axis};

use super::forward::{batch_loss, forward, Batch, ForwardCache, HeadOutput, LayerCache, Mode};
use super::params::{HeadParams, LstmLayerParams, ModelParams};
use super::SIGMA_FLOOR;
use crate::Result;

/// Forward + loss + full parameter gradients for one minibatch.
pub fn loss_and_grad(
    params: &ModelParams,
    batch: &Batch,
    mode: Mode<'_>,
) -> Result<(f64, ModelParams)> {
    let (head, cache) = forward(params, batch, mode)?;
    let loss = batch_loss(&head, &batch.targets)?;
    let grads = backward(params, batch, &cache, &head);
    Ok((loss, grads))
}

/// Gradient of the head outputs w.r.t. the training loss, per step: returns
/// d(loss)/d(z_t).
fn head_backward(
    params: &ModelParams,
    grads: &mut ModelParams,
    head: &HeadOutput,
    z: &[Array2<f64>],
    targets: &Array2<f64>,
) -> Vec<Array2<f64>> {
    let inv_b = 1.0 / targets.nrows() as f64;
    let mut dz_all = Vec::with_capacity(z.len());
    match (head, &params.head, &mut grads.head) {
        (
            HeadOutput::Mdn(steps),
            HeadParams::Mdn {
                pi_w,
                mu_w,
                sigma_w,
                ..
            },
            HeadParams::Mdn {
                pi_w: g_pi_w,
                pi_b: g_pi_b,
                mu_w: g_mu_w,
                mu_b: g_mu_b,
                sigma_w: g_sigma_w,
                sigma_b: g_sigma_b,
            },
        ) => {
            const HALF_LN_2PI: f64 = 0.9189385332046727;
            for (t, step) in steps.iter().enumerate() {
                let (b, c) = (step.pi.nrows(), step.pi.ncols());
                // responsibilities
                let mut resp = Array2::zeros((b, c));
                for row in 0..b {
                    let y = targets[[row, t]];
                    let mut lp = Vec::with_capacity(c);
                    for k in 0..c {
                        let sigma = step.sigma[[row, k]];
                        let zsc = (y - step.mu[[row, k]]) / sigma;
                        lp.push(
                            step.log_pi[[row, k]] - sigma.ln() - HALF_LN_2PI - 0.5 * zsc * zsc,
                        );
                    }
                    let lse = super::log_sum_exp(&lp);
                    for k in 0..c {
                        resp[[row, k]] = (lp[k] - lse).exp();
                    }
                }

                let dpi_pre = (&step.pi - &resp) * inv_b;
                let mut dmu = Array2::zeros((b, c));
                let mut dsg_pre = Array2::zeros((b, c));
                for row in 0..b {
                    let y = targets[[row, t]];
                    for k in 0..c {
                        let sigma = step.sigma[[row, k]];
                        let err = y - step.mu[[row, k]];
                        let r = resp[[row, k]];
                        dmu[[row, k]] = -r * inv_b * err / (sigma * sigma);
                        let dsigma = -r * inv_b * (-1.0 / sigma + err * err / sigma.powi(3));
                        dsg_pre[[row, k]] = dsigma * (sigma - SIGMA_FLOOR);
                    }
                }

                let zt = &z[t];
                *g_pi_w += &dpi_pre.t().dot(zt);
                *g_pi_b += &dpi_pre.sum_axis(Axis(0));
                *g_mu_w += &dmu.t().dot(zt);
                *g_mu_b += &dmu.sum_axis(Axis(0));
                *g_sigma_w += &dsg_pre.t().dot(zt);
                *g_sigma_b += &dsg_pre.sum_axis(Axis(0));

                let dz = dpi_pre.dot(pi_w) + dmu.dot(mu_w) + dsg_pre.dot(sigma_w);
                dz_all.push(dz);
            }
        }
        (HeadOutput::Det(steps), HeadParams::Det { w, .. }, HeadParams::Det { w: g_w, b: g_b }) => {
            for (t, step) in steps.iter().enumerate() {
                let mut dout = Array2::zeros((step.nrows(), 1));
                for row in 0..step.nrows() {
                    dout[[row, 0]] = 2.0 * (step[[row, 0]] - targets[[row, t]]) * inv_b;
                }
                *g_w += &dout.t().dot(&z[t]);
                *g_b += &dout.sum_axis(Axis(0));
                dz_all.push(dout.dot(w));
            }
        }
        _ => unreachable!("head output and parameters always agree"),
    }
    dz_all
}

/// One LSTM cell step backward. Returns (dh_prev, dc_prev, d_input).
#[allow(clippy::too_many_arguments)]
fn cell_backward(
    layer: &LstmLayerParams,
    grad: &mut LstmLayerParams,
    cache: &LayerCache,
    t: usize,
    dh: &Array2<f64>,
    dc_carry: &Array2<f64>,
    hidden: usize,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let i = &cache.gate_i[t];
    let f = &cache.gate_f[t];
    let g = &cache.gate_g[t];
    let o = &cache.gate_o[t];
    let c_prev = &cache.c[t];
    let tanh_c = cache.c[t + 1].mapv(f64::tanh);

    let d_o = dh * &tanh_c;
    let dc = dc_carry + &(dh * o * &tanh_c.mapv(|v| 1.0 - v * v));
    let d_i = &dc * g;
    let d_f = &dc * c_prev;
    let d_g = &dc * i;

    let b = dh.nrows();
    let mut dpre = Array2::zeros((b, 4 * hidden));
    dpre.slice_mut(s![.., 0..hidden])
        .assign(&(&d_i * i * &i.mapv(|v| 1.0 - v)));
    dpre.slice_mut(s![.., hidden..2 * hidden])
        .assign(&(&d_f * f * &f.mapv(|v| 1.0 - v)));
    dpre.slice_mut(s![.., 2 * hidden..3 * hidden])
        .assign(&(&d_g * &g.mapv(|v| 1.0 - v * v)));
    dpre.slice_mut(s![.., 3 * hidden..4 * hidden])
        .assign(&(&d_o * o * &o.mapv(|v| 1.0 - v)));

    grad.w += &dpre.t().dot(&cache.inputs[t]);
    grad.u += &dpre.t().dot(&cache.h[t]);
    grad.b += &dpre.sum_axis(Axis(0));

    let dh_prev = dpre.dot(&layer.u);
    let dc_prev = &dc * f;
    let d_input = dpre.dot(&layer.w);
    (dh_prev, dc_prev, d_input)
}

/// Backward through a whole stack at one time step. `dh_top` is the external
/// gradient on the top layer's hidden state; carried state gradients are
/// updated in place. Returns the gradient on the bottom layer's input.
#[allow(clippy::too_many_arguments)]
fn stack_backward_step(
    layers: &[LstmLayerParams],
    grads: &mut [LstmLayerParams],
    caches: &[LayerCache],
    t: usize,
    dh_top: Array2<f64>,
    dh_carry: &mut [Array2<f64>],
    dc_carry: &mut [Array2<f64>],
    hidden: usize,
) -> Array2<f64> {
    let mut dh_from_above: Option<Array2<f64>> = Some(dh_top);
    let mut d_input_out = None;
    for l in (0..layers.len()).rev() {
        let mut dh = dh_carry[l].clone();
        if let Some(extra) = dh_from_above.take() {
            dh += &extra;
        }
        let (dh_prev, dc_prev, d_input) = cell_backward(
            &layers[l],
            &mut grads[l],
            &caches[l],
            t,
            &dh,
            &dc_carry[l],
            hidden,
        );
        dh_carry[l] = dh_prev;
        dc_carry[l] = dc_prev;
        if l > 0 {
            // undo the dropout applied to this layer's input
            let below = match &caches[l].masks[t] {
                Some(mask) => &d_input * mask,
                None => d_input,
            };
            dh_from_above = Some(below);
        } else {
            d_input_out = Some(d_input);
        }
    }
    d_input_out.expect("stack has at least one layer")
}

fn backward(
    params: &ModelParams,
    batch: &Batch,
    cache: &ForwardCache,
    head: &HeadOutput,
) -> ModelParams {
    let cfg = &params.config;
    let hidden = cfg.hidden;
    let b = batch.batch_size();
    let r_width = cfg.r_width();
    let mut grads = params.zeros_like();

    let dz_all = head_backward(params, &mut grads, head, &cache.z, &batch.targets);

    let mut d_r: Array2<f64> = Array2::zeros((b, r_width));
    let mut dq_carry: Array2<f64> = Array2::zeros((b, hidden));
    let mut dh_carry: Vec<Array2<f64>> = (0..cfg.layers)
        .map(|_| Array2::zeros((b, hidden)))
        .collect();
    let mut dc_carry: Vec<Array2<f64>> = dh_carry.clone();

    for t in (0..cfg.decoder_len).rev() {
        // q_t receives gradient from z_t and from step t+1 (already carried)
        let dz = &dz_all[t];
        grads.z_w += &dz.t().dot(&cache.q[t + 1]);
        grads.z_b += &dz.sum_axis(Axis(0));
        let mut dq = dz.dot(&params.z_w);
        dq += &dq_carry;

        // q_t = sigmoid([h_top, q_prev, R] . Wq^T + bq)
        let q_t = &cache.q[t + 1];
        let du = &dq * q_t * &q_t.mapv(|v| 1.0 - v);
        let cat = ndarray::concatenate(
            Axis(1),
            &[
                cache.dec[cfg.layers - 1].h[t + 1].view(),
                cache.q[t].view(),
                cache.r.view(),
            ],
        )
        .expect("batch dimensions agree");
        grads.q_w += &du.t().dot(&cat);
        grads.q_b += &du.sum_axis(Axis(0));
        let dcat = du.dot(&params.q_w);
        let dh_top = dcat.slice(s![.., 0..hidden]).to_owned();
        let mut dq_prev = dcat.slice(s![.., hidden..2 * hidden]).to_owned();
        d_r += &dcat.slice(s![.., 2 * hidden..]);

        // decoder stack
        let d_input = stack_backward_step(
            &params.decoder,
            &mut grads.decoder,
            &cache.dec,
            t,
            dh_top,
            &mut dh_carry,
            &mut dc_carry,
            hidden,
        );
        dq_prev += &d_input.slice(s![.., 0..hidden]);
        d_r += &d_input.slice(s![.., hidden..]);

        dq_carry = dq_prev;
    }
    // dq_carry at t = 0 lands on the constant zero bootstrap; dropped.

    // R splits into the final encoder vector and the behavior embedding.
    let d_ev = d_r.slice(s![.., 0..hidden]).to_owned();
    if cfg.variant.uses_context() {
        let d_ed = d_r.slice(s![.., hidden..]).to_owned();
        let bv = batch.behavior.as_ref().expect("validated in forward");
        *grads.ctx_w.as_mut().expect("context grads exist") += &d_ed.t().dot(bv);
        *grads.ctx_b.as_mut().expect("context grads exist") += &d_ed.sum_axis(Axis(0));
    }

    // EV = h_top_T . Wev^T + bev
    let enc_top_final = cache.enc[cfg.layers - 1].h[cfg.encoder_len].clone();
    grads.ev_w += &d_ev.t().dot(&enc_top_final);
    grads.ev_b += &d_ev.sum_axis(Axis(0));

    // encoder: initial decoder states were the encoder's final states
    let mut enc_dh = dh_carry;
    let mut enc_dc = dc_carry;
    enc_dh[cfg.layers - 1] += &d_ev.dot(&params.ev_w);

    for t in (0..cfg.encoder_len).rev() {
        let dh_top = Array2::zeros((b, hidden));
        let d_xemb = stack_backward_step(
            &params.encoder,
            &mut grads.encoder,
            &cache.enc,
            t,
            dh_top,
            &mut enc_dh,
            &mut enc_dc,
            hidden,
        );
        grads.embed_w += &d_xemb.t().dot(&batch.obs[t]);
        grads.embed_b += &d_xemb.sum_axis(Axis(0));
    }

    grads
}
