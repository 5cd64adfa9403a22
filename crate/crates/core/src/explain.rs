//! Shapley-value attribution of predictions to input-feature groups.
//!
//! A feature group is either one observation channel across all encoder
//! steps or one behavior-vector entry. "Switching a group off" replaces its
//! values with the background's. The attributed scalar is the
//! horizon-averaged mean predicted velocity.

use ndarray::Array2;
use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::seqmodel::{forward, Batch, Checkpoint, Mode, ModelParams};
use crate::{Error, Result};

/// One maskable group of model inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GroupKind {
    /// Observation channel index, masked across all encoder steps.
    Channel(usize),
    /// Behavior-vector entry index.
    Behavior(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureGroup {
    pub name: String,
    pub kind: GroupKind,
}

/// The group layout for a model; groups must partition the inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub groups: Vec<FeatureGroup>,
}

impl ChannelSpec {
    /// One group per observation channel plus one per behavior entry.
    pub fn per_channel(channel_names: &[String], behavior_names: &[String]) -> Self {
        let mut groups: Vec<FeatureGroup> = channel_names
            .iter()
            .enumerate()
            .map(|(i, n)| FeatureGroup {
                name: n.clone(),
                kind: GroupKind::Channel(i),
            })
            .collect();
        groups.extend(behavior_names.iter().enumerate().map(|(i, n)| FeatureGroup {
            name: n.clone(),
            kind: GroupKind::Behavior(i),
        }));
        ChannelSpec { groups }
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn validate(&self, channels: usize, behavior_dim: usize) -> Result<()> {
        let mut chan_seen = vec![false; channels];
        let mut beh_seen = vec![false; behavior_dim];
        for g in &self.groups {
            match g.kind {
                GroupKind::Channel(i) => {
                    if i >= channels || chan_seen[i] {
                        return Err(Error::Config(format!(
                            "group {} does not partition the channels",
                            g.name
                        )));
                    }
                    chan_seen[i] = true;
                }
                GroupKind::Behavior(i) => {
                    if i >= behavior_dim || beh_seen[i] {
                        return Err(Error::Config(format!(
                            "group {} does not partition the behavior vector",
                            g.name
                        )));
                    }
                    beh_seen[i] = true;
                }
            }
        }
        if chan_seen.iter().any(|s| !s) || beh_seen.iter().any(|s| !s) {
            return Err(Error::Config(
                "groups must cover every input channel and behavior entry".to_string(),
            ));
        }
        Ok(())
    }
}

/// One model instance in normalized input space.
#[derive(Debug, Clone)]
pub struct Instance {
    /// (encoder_len x channels), normalized.
    pub obs: Array2<f64>,
    pub behavior: Option<Vec<f64>>,
}

/// A scalar-valued model of an [`Instance`].
pub trait ScalarModel {
    fn eval(&self, instance: &Instance) -> f64;
}

/// The trained network's horizon-averaged mean predicted velocity.
pub struct MeanVelocityModel {
    params: ModelParams,
}

impl MeanVelocityModel {
    pub fn new(checkpoint: &Checkpoint) -> Result<Self> {
        Ok(MeanVelocityModel {
            params: checkpoint.to_params()?,
        })
    }
}

impl ScalarModel for MeanVelocityModel {
    fn eval(&self, instance: &Instance) -> f64 {
        let cfg = &self.params.config;
        let obs: Vec<Array2<f64>> = (0..cfg.encoder_len)
            .map(|t| {
                Array2::from_shape_fn((1, cfg.input_channels), |(_, c)| instance.obs[[t, c]])
            })
            .collect();
        let behavior = instance.behavior.as_ref().map(|b| {
            Array2::from_shape_fn((1, b.len()), |(_, c)| b[c])
        });
        let batch = Batch {
            obs,
            behavior,
            targets: Array2::zeros((1, cfg.decoder_len)),
        };
        let (head, _) = forward(&self.params, &batch, Mode::Eval)
            .expect("instance shapes validated by the channel spec");
        let means = head.mean_matrix();
        means.row(0).mean().expect("horizon is non-empty")
    }
}

/// Per-instance attribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Attribution {
    /// Base value: model output with every group set to the background.
    pub base_value: f64,
    /// Model output on the unmasked instance.
    pub model_output: f64,
    /// Shapley value per group, in [`ChannelSpec`] order.
    pub phi: Vec<f64>,
    /// Representative raw value per group (mean over steps for channels).
    pub feature_values: Vec<f64>,
    pub group_names: Vec<String>,
}

fn masked_instance(
    instance: &Instance,
    background: &Instance,
    spec: &ChannelSpec,
    on_mask: u64,
) -> Instance {
    let mut out = background.clone();
    for (gi, g) in spec.groups.iter().enumerate() {
        if on_mask & (1 << gi) == 0 {
            continue;
        }
        match g.kind {
            GroupKind::Channel(c) => {
                for t in 0..out.obs.nrows() {
                    out.obs[[t, c]] = instance.obs[[t, c]];
                }
            }
            GroupKind::Behavior(b) => {
                if let (Some(dst), Some(src)) = (out.behavior.as_mut(), instance.behavior.as_ref())
                {
                    dst[b] = src[b];
                }
            }
        }
    }
    out
}

fn group_values(instance: &Instance, spec: &ChannelSpec) -> Vec<f64> {
    spec.groups
        .iter()
        .map(|g| match g.kind {
            GroupKind::Channel(c) => {
                instance.obs.column(c).mean().expect("non-empty observation")
            }
            GroupKind::Behavior(b) => instance
                .behavior
                .as_ref()
                .map_or(0.0, |v| v[b]),
        })
        .collect()
}

/// Exact Shapley values by full coalition enumeration (2^M model calls).
pub fn shap_exact(
    model: &dyn ScalarModel,
    instance: &Instance,
    background: &Instance,
    spec: &ChannelSpec,
) -> Result<Attribution> {
    let m = spec.len();
    if m == 0 {
        return Err(Error::Size("no feature groups".to_string()));
    }
    if m > 12 {
        return Err(Error::Size(format!(
            "{m} groups exceed the exact-enumeration limit of 12; use shap_sampled"
        )));
    }

    // model value for every coalition
    let n_masks = 1u64 << m;
    let mut values = vec![0.0; n_masks as usize];
    for mask in 0..n_masks {
        values[mask as usize] = model.eval(&masked_instance(instance, background, spec, mask));
    }

    // factorial weights |S|! (M - |S| - 1)! / M!
    let mut factorial = vec![1.0f64; m + 1];
    for i in 1..=m {
        factorial[i] = factorial[i - 1] * i as f64;
    }
    let weight = |s: usize| factorial[s] * factorial[m - s - 1] / factorial[m];

    let mut phi = vec![0.0; m];
    for i in 0..m {
        let bit = 1u64 << i;
        for mask in 0..n_masks {
            if mask & bit != 0 {
                continue;
            }
            let s = (mask as u64).count_ones() as usize;
            phi[i] += weight(s) * (values[(mask | bit) as usize] - values[mask as usize]);
        }
    }

    Ok(Attribution {
        base_value: values[0],
        model_output: values[(n_masks - 1) as usize],
        phi,
        feature_values: group_values(instance, spec),
        group_names: spec.groups.iter().map(|g| g.name.clone()).collect(),
    })
}

/// Permutation-sampling Shapley estimate; converges to [`shap_exact`] as the
/// permutation count grows. The telescoping residual against
/// `f(x) - f(background)` is redistributed proportionally to |phi| so local
/// accuracy holds exactly.
pub fn shap_sampled(
    model: &dyn ScalarModel,
    instance: &Instance,
    background: &Instance,
    spec: &ChannelSpec,
    permutations: usize,
    seed: u64,
) -> Result<Attribution> {
    let m = spec.len();
    if m == 0 {
        return Err(Error::Size("no feature groups".to_string()));
    }
    if permutations == 0 {
        return Err(Error::Size("need at least one permutation".to_string()));
    }

    let base_value = model.eval(&masked_instance(instance, background, spec, 0));
    let full = (1u64 << m) - 1;
    let model_output = model.eval(&masked_instance(instance, background, spec, full));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..m).collect();
    let mut phi = vec![0.0; m];
    for _ in 0..permutations {
        order.shuffle(&mut rng);
        let mut mask = 0u64;
        let mut prev = base_value;
        for &g in &order {
            mask |= 1 << g;
            let v = model.eval(&masked_instance(instance, background, spec, mask));
            phi[g] += v - prev;
            prev = v;
        }
    }
    for p in phi.iter_mut() {
        *p /= permutations as f64;
    }

    // enforce local accuracy
    let residual = (model_output - base_value) - phi.iter().sum::<f64>();
    let total_abs: f64 = phi.iter().map(|p| p.abs()).sum();
    if total_abs > 0.0 {
        for p in phi.iter_mut() {
            *p += residual * p.abs() / total_abs;
        }
    }

    Ok(Attribution {
        base_value,
        model_output,
        phi,
        feature_values: group_values(instance, spec),
        group_names: spec.groups.iter().map(|g| g.name.clone()).collect(),
    })
}

/// Global ranking: groups sorted by mean |phi| (ties broken by name), plus
/// the per-instance (feature value, phi) scatter points per group.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    /// (group name, mean |phi|) in descending order.
    pub ranking: Vec<(String, f64)>,
    /// Per group (in ranking order): (feature value, phi) pairs.
    pub scatter: Vec<Vec<(f64, f64)>>,
}

pub fn summarize(attributions: &[Attribution]) -> Result<Summary> {
    let first = attributions
        .first()
        .ok_or_else(|| Error::Size("no attributions to summarize".to_string()))?;
    let m = first.phi.len();
    let mut mean_abs = vec![0.0; m];
    for a in attributions {
        if a.phi.len() != m {
            return Err(Error::Shape("attribution group count mismatch".to_string()));
        }
        for (s, p) in mean_abs.iter_mut().zip(&a.phi) {
            *s += p.abs();
        }
    }
    for s in mean_abs.iter_mut() {
        *s /= attributions.len() as f64;
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        mean_abs[b]
            .partial_cmp(&mean_abs[a])
            .unwrap()
            .then(first.group_names[a].cmp(&first.group_names[b]))
    });
    let ranking = order
        .iter()
        .map(|&i| (first.group_names[i].clone(), mean_abs[i]))
        .collect();
    let scatter = order
        .iter()
        .map(|&i| {
            attributions
                .iter()
                .map(|a| (a.feature_values[i], a.phi[i]))
                .collect()
        })
        .collect();
    Ok(Summary { ranking, scatter })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// f(x) = sum_i w_i * mean_t(obs[:, i]) + sum_j v_j * behavior[j]
    struct LinearModel {
        w: Vec<f64>,
        v: Vec<f64>,
    }

    impl ScalarModel for LinearModel {
        fn eval(&self, instance: &Instance) -> f64 {
            let mut out = 0.0;
            for (c, w) in self.w.iter().enumerate() {
                out += w * instance.obs.column(c).mean().unwrap();
            }
            if let Some(b) = &instance.behavior {
                for (j, v) in self.v.iter().enumerate() {
                    out += v * b[j];
                }
            }
            out
        }
    }

    fn spec(channels: usize, behaviors: usize) -> ChannelSpec {
        let chan: Vec<String> = (0..channels).map(|i| format!("ch{i}")).collect();
        let beh: Vec<String> = (0..behaviors).map(|i| format!("bv{i}")).collect();
        ChannelSpec::per_channel(&chan, &beh)
    }

    fn constant_instance(channels: usize, behaviors: usize, values: &[f64]) -> Instance {
        let obs = Array2::from_shape_fn((4, channels), |(_, c)| values[c]);
        let behavior = if behaviors > 0 {
            Some(values[channels..channels + behaviors].to_vec())
        } else {
            None
        };
        Instance { obs, behavior }
    }

    /// Literal factorial-weighted enumeration over index subsets, written
    /// independently of the bitmask implementation.
    fn shap_oracle(
        model: &dyn ScalarModel,
        instance: &Instance,
        background: &Instance,
        spec: &ChannelSpec,
    ) -> Vec<f64> {
        fn subsets(pool: &[usize]) -> Vec<Vec<usize>> {
            let mut out = vec![vec![]];
            for &x in pool {
                let mut more = Vec::new();
                for s in &out {
                    let mut s2 = s.clone();
                    s2.push(x);
                    more.push(s2);
                }
                out.extend(more);
            }
            out
        }
        let m = spec.len();
        let fact = |n: usize| -> f64 { (1..=n).map(|i| i as f64).product::<f64>().max(1.0) };
        let eval_set = |s: &[usize]| -> f64 {
            let mut mask = 0u64;
            for &i in s {
                mask |= 1 << i;
            }
            model.eval(&masked_instance(instance, background, spec, mask))
        };
        (0..m)
            .map(|i| {
                let pool: Vec<usize> = (0..m).filter(|&j| j != i).collect();
                subsets(&pool)
                    .iter()
                    .map(|s| {
                        let w = fact(s.len()) * fact(m - s.len() - 1) / fact(m);
                        let mut with = s.clone();
                        with.push(i);
                        w * (eval_set(&with) - eval_set(s))
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn linear_model_closed_form() {
        let model = LinearModel {
            w: vec![2.0, -1.0, 0.5],
            v: vec![3.0],
        };
        let spec = spec(3, 1);
        let x = constant_instance(3, 1, &[1.0, 2.0, -1.0, 0.7]);
        let b = constant_instance(3, 1, &[0.2, 0.0, 1.0, 0.1]);
        let attr = shap_exact(&model, &x, &b, &spec).unwrap();
        // additive model: phi_i = w_i (x_i - b_i)
        let expected = [
            2.0 * (1.0 - 0.2),
            -1.0 * (2.0 - 0.0),
            0.5 * (-1.0 - 1.0),
            3.0 * (0.7 - 0.1),
        ];
        for (p, e) in attr.phi.iter().zip(expected) {
            assert_abs_diff_eq!(p, &e, epsilon = 1e-9);
        }
        // local accuracy
        let total: f64 = attr.base_value + attr.phi.iter().sum::<f64>();
        assert_abs_diff_eq!(total, attr.model_output, epsilon = 1e-6);
    }

    #[test]
    fn symmetric_groups_equal_phi() {
        struct SymModel;
        impl ScalarModel for SymModel {
            fn eval(&self, instance: &Instance) -> f64 {
                let a = instance.obs.column(0).mean().unwrap();
                let b = instance.obs.column(1).mean().unwrap();
                a + b + a * b
            }
        }
        let spec = spec(2, 0);
        let x = constant_instance(2, 0, &[1.5, 1.5]);
        let bg = constant_instance(2, 0, &[0.5, 0.5]);
        let attr = shap_exact(&SymModel, &x, &bg, &spec).unwrap();
        assert_abs_diff_eq!(attr.phi[0], attr.phi[1], epsilon = 1e-9);
    }

    #[test]
    fn instance_equals_background_zero_phi() {
        let model = LinearModel {
            w: vec![1.0, 2.0],
            v: vec![],
        };
        let spec = spec(2, 0);
        let x = constant_instance(2, 0, &[0.4, -0.6]);
        let attr = shap_exact(&model, &x, &x, &spec).unwrap();
        for p in &attr.phi {
            assert_abs_diff_eq!(*p, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn dummy_group_gets_zero() {
        // channel 1 never affects the output
        let model = LinearModel {
            w: vec![2.0, 0.0],
            v: vec![],
        };
        let spec = spec(2, 0);
        let x = constant_instance(2, 0, &[1.0, 5.0]);
        let bg = constant_instance(2, 0, &[0.0, -5.0]);
        let attr = shap_exact(&model, &x, &bg, &spec).unwrap();
        assert_abs_diff_eq!(attr.phi[1], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn scaling_model_scales_phi() {
        struct Scaled(f64);
        impl ScalarModel for Scaled {
            fn eval(&self, instance: &Instance) -> f64 {
                self.0
                    * (instance.obs.column(0).mean().unwrap()
                        + instance.obs.column(1).mean().unwrap().powi(2))
            }
        }
        let spec = spec(2, 0);
        let x = constant_instance(2, 0, &[1.0, 2.0]);
        let bg = constant_instance(2, 0, &[0.0, 0.5]);
        let a1 = shap_exact(&Scaled(1.0), &x, &bg, &spec).unwrap();
        let a3 = shap_exact(&Scaled(3.0), &x, &bg, &spec).unwrap();
        for (p1, p3) in a1.phi.iter().zip(&a3.phi) {
            assert_abs_diff_eq!(3.0 * p1, *p3, epsilon = 1e-9);
        }
    }

    #[test]
    fn exact_matches_literal_oracle() {
        struct Nonlinear;
        impl ScalarModel for Nonlinear {
            fn eval(&self, instance: &Instance) -> f64 {
                let a = instance.obs.column(0).mean().unwrap();
                let b = instance.obs.column(1).mean().unwrap();
                let c = instance.obs.column(2).mean().unwrap();
                let d = instance.obs.column(3).mean().unwrap();
                a * b + (c - d).tanh() + 0.3 * a * c * d
            }
        }
        let spec = spec(4, 0);
        let x = constant_instance(4, 0, &[1.0, -0.5, 2.0, 0.3]);
        let bg = constant_instance(4, 0, &[0.1, 0.2, -0.4, 1.1]);
        let fast = shap_exact(&Nonlinear, &x, &bg, &spec).unwrap();
        let slow = shap_oracle(&Nonlinear, &x, &bg, &spec);
        for (f, s) in fast.phi.iter().zip(&slow) {
            assert_abs_diff_eq!(f, s, epsilon = 1e-9);
        }
    }

    #[test]
    fn sampled_agrees_with_exact() {
        struct Mixed;
        impl ScalarModel for Mixed {
            fn eval(&self, instance: &Instance) -> f64 {
                let mut v = 0.0;
                for c in 0..8 {
                    let x = instance.obs.column(c).mean().unwrap();
                    v += (c as f64 + 1.0) * 0.2 * x + 0.1 * x * x;
                }
                v += 0.5
                    * instance.obs.column(0).mean().unwrap()
                    * instance.obs.column(3).mean().unwrap();
                v
            }
        }
        let spec = spec(8, 0);
        let xv: Vec<f64> = (0..8).map(|i| 0.3 * i as f64 - 1.0).collect();
        let bv: Vec<f64> = (0..8).map(|i| 0.1 * i as f64).collect();
        let x = constant_instance(8, 0, &xv);
        let bg = constant_instance(8, 0, &bv);
        let exact = shap_exact(&Mixed, &x, &bg, &spec).unwrap();
        let sampled = shap_sampled(&Mixed, &x, &bg, &spec, 2000, 11).unwrap();
        let range = exact.phi.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - exact.phi.iter().cloned().fold(f64::INFINITY, f64::min);
        for (e, s) in exact.phi.iter().zip(&sampled.phi) {
            assert!(
                (e - s).abs() <= 0.05 * range,
                "exact {e} vs sampled {s} (range {range})"
            );
        }
        // local accuracy after residual correction
        let total = sampled.base_value + sampled.phi.iter().sum::<f64>();
        assert_abs_diff_eq!(total, sampled.model_output, epsilon = 1e-9);
        // determinism
        let again = shap_sampled(&Mixed, &x, &bg, &spec, 2000, 11).unwrap();
        assert_eq!(sampled.phi, again.phi);
    }

    #[test]
    fn exact_rejects_large_group_counts() {
        let model = LinearModel {
            w: vec![0.0; 13],
            v: vec![],
        };
        let spec = spec(13, 0);
        let x = constant_instance(13, 0, &vec![0.0; 13]);
        let err = shap_exact(&model, &x, &x, &spec).unwrap_err();
        match err {
            Error::Size(msg) => assert!(msg.contains("shap_sampled")),
            other => panic!("expected size error, got {other:?}"),
        }
    }

    #[test]
    fn summary_ranking_and_ties() {
        let mk = |phi: Vec<f64>| Attribution {
            base_value: 0.0,
            model_output: phi.iter().sum(),
            feature_values: vec![0.0; phi.len()],
            group_names: vec!["b".into(), "a".into(), "c".into()],
            phi,
        };
        let s = summarize(&[mk(vec![1.0, -2.0, 0.0]), mk(vec![-1.0, 2.0, 0.0])]).unwrap();
        assert_eq!(s.ranking[0].0, "a");
        assert_abs_diff_eq!(s.ranking[0].1, 2.0, epsilon = 1e-12);
        assert_eq!(s.ranking[1].0, "b");
        assert_eq!(s.ranking[2].0, "c");

        // all-zero attributions: deterministic name order
        let z = summarize(&[mk(vec![0.0, 0.0, 0.0])]).unwrap();
        let names: Vec<&str> = z.ranking.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, vec!["a", "b", "c"]);
    }
}
