//! Driving-behavior feature indicators.
//!
//! All indicators are computed from the 20 s behavior segment of a window:
//! time-domain statistics and volatility of velocity and acceleration,
//! spectral features (DFT moments, wavelet entropies), warped similarity
//! between the TV and LV velocity traces, and car-following safety minima.

mod spectral;
mod wdtw;

pub use spectral::{dft_features, dwt_features, power_spectrum, SpectralFeatures, WaveletEntropies};
pub use wdtw::wdtw;

use serde::{Deserialize, Serialize};

use crate::trajdata::{SceneFrame, RATE_HZ};

/// Guard against log-ratios of near-zero speeds in [`tsv`], m/s.
pub const TSV_EPSILON: f64 = 0.1;
/// Minimum TV speed for a time-headway sample, m/s.
pub const THW_MIN_SPEED: f64 = 0.1;
/// Exported stand-in for absent MIN_thw / MIN_ttc values, seconds.
pub const ABSENT_CAP_S: f64 = 300.0;
/// Default WDTW steepness.
pub const WDTW_DEFAULT_G: f64 = 0.05;
/// Default WDTW weight cap.
pub const WDTW_DEFAULT_WMAX: f64 = 1.0;

pub const INDICATOR_COUNT: usize = 29;

/// Stable indicator order used by every matrix/CSV emission.
pub const INDICATOR_NAMES: [&str; INDICATOR_COUNT] = [
    "MAX_v", "MIN_v", "MEAN_v", "VAR_v", "MAD_v", "TSV_v", "GCF_v", "RMSF_v", "MSF_v", "STDF_v",
    "WEE_v", "WSE_v", "WDTW_v", "MAX_a", "MIN_a", "MAX_d", "MIN_d", "MEAN_a", "MEAN_d", "VAR_a",
    "MAD_a", "GCF_a", "RMSF_a", "MSF_a", "STDF_a", "WEE_a", "WSE_a", "MIN_thw", "MIN_ttc",
];

/// All indicators for one behavior window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorSet {
    pub max_v: f64,
    pub min_v: f64,
    pub mean_v: f64,
    pub var_v: f64,
    pub mad_v: f64,
    pub tsv_v: f64,
    pub gcf_v: f64,
    pub rmsf_v: f64,
    pub msf_v: f64,
    pub stdf_v: f64,
    pub wee_v: f64,
    pub wse_v: f64,
    pub wdtw_v: f64,
    pub max_a: f64,
    pub min_a: f64,
    pub max_d: f64,
    pub min_d: f64,
    pub mean_a: f64,
    pub mean_d: f64,
    pub var_a: f64,
    pub mad_a: f64,
    pub gcf_a: f64,
    pub rmsf_a: f64,
    pub msf_a: f64,
    pub stdf_a: f64,
    pub wee_a: f64,
    pub wse_a: f64,
    /// Minimum time headway over the window, absent when no LV frame qualifies.
    pub min_thw: Option<f64>,
    /// Minimum time to collision, absent when the TV never closes on an LV.
    pub min_ttc: Option<f64>,
}

impl IndicatorSet {
    /// Row in [`INDICATOR_NAMES`] order; absent safety minima map to
    /// [`ABSENT_CAP_S`].
    pub fn to_row(&self) -> [f64; INDICATOR_COUNT] {
        [
            self.max_v,
            self.min_v,
            self.mean_v,
            self.var_v,
            self.mad_v,
            self.tsv_v,
            self.gcf_v,
            self.rmsf_v,
            self.msf_v,
            self.stdf_v,
            self.wee_v,
            self.wse_v,
            self.wdtw_v,
            self.max_a,
            self.min_a,
            self.max_d,
            self.min_d,
            self.mean_a,
            self.mean_d,
            self.var_a,
            self.mad_a,
            self.gcf_a,
            self.rmsf_a,
            self.msf_a,
            self.stdf_a,
            self.wee_a,
            self.wse_a,
            self.min_thw.unwrap_or(ABSENT_CAP_S),
            self.min_ttc.unwrap_or(ABSENT_CAP_S),
        ]
    }
}

/// Simple time-domain statistics (population variance).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeStats {
    pub max: f64,
    pub min: f64,
    pub mean: f64,
    pub variance: f64,
}

pub fn time_stats(values: &[f64]) -> TimeStats {
    if values.is_empty() {
        return TimeStats {
            max: 0.0,
            min: 0.0,
            mean: 0.0,
            variance: 0.0,
        };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let variance = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    TimeStats {
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        mean,
        variance,
    }
}

/// Mean absolute deviation from the mean.
pub fn mad(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|x| (x - mean).abs()).sum::<f64>() / n
}

/// Time-varying stochastic volatility: sample std-dev of the percent
/// log-returns over consecutive pairs with both values above
/// [`TSV_EPSILON`]. `None` when fewer than two valid ratios exist.
pub fn tsv(values: &[f64]) -> Option<f64> {
    let mut returns = Vec::new();
    for w in values.windows(2) {
        if w[0] > TSV_EPSILON && w[1] > TSV_EPSILON {
            returns.push((w[1] / w[0]).ln() * 100.0);
        }
    }
    if returns.len() < 2 {
        return None;
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some(var.sqrt())
}

/// Minimum time headway and time to collision over a frame sequence.
///
/// THW uses frames with a present LV and TV speed above [`THW_MIN_SPEED`];
/// TTC uses frames where the TV closes on the LV (`v_tv > v_lv`).
pub fn safety_indicators(frames: &[SceneFrame]) -> (Option<f64>, Option<f64>) {
    let mut min_thw: Option<f64> = None;
    let mut min_ttc: Option<f64> = None;
    for f in frames {
        if !f.slot_present(0) {
            continue;
        }
        let dx = f.sv_rel_distance[0];
        let dv = f.sv_rel_velocity[0]; // v_lv - v_tv
        if dx <= 0.0 {
            continue;
        }
        if f.tv_velocity > THW_MIN_SPEED {
            let thw = dx / f.tv_velocity;
            min_thw = Some(min_thw.map_or(thw, |m: f64| m.min(thw)));
        }
        if dv < 0.0 {
            let ttc = dx / (-dv);
            min_ttc = Some(min_ttc.map_or(ttc, |m: f64| m.min(ttc)));
        }
    }
    (min_thw, min_ttc)
}

/// Compute the full indicator set from a window's behavior segment.
///
/// Velocity indicators use the TV velocity trace; acceleration indicators use
/// the positive-acceleration subsequence and deceleration indicators the
/// magnitudes of the negative-acceleration subsequence (empty subsequences
/// yield zeros). WDTW_v compares the TV velocity trace against the LV
/// velocity trace.
pub fn extract_all(behavior: &[SceneFrame]) -> IndicatorSet {
    let velocity: Vec<f64> = behavior.iter().map(|f| f.tv_velocity).collect();
    let accel_full: Vec<f64> = behavior.iter().map(|f| f.tv_acceleration).collect();
    let accel_pos: Vec<f64> = accel_full.iter().copied().filter(|&a| a > 0.0).collect();
    let decel_mag: Vec<f64> = accel_full
        .iter()
        .copied()
        .filter(|&a| a < 0.0)
        .map(f64::abs)
        .collect();
    let lv_velocity: Vec<f64> = behavior
        .iter()
        .map(|f| f.tv_velocity + f.sv_rel_velocity[0])
        .collect();

    let vs = time_stats(&velocity);
    let spec_v = dft_features(&velocity, RATE_HZ);
    let wav_v = dwt_features(&velocity);

    let accel_stats = time_stats(&accel_pos);
    let spec_a = dft_features(&accel_pos, RATE_HZ);
    let wav_a = dwt_features(&accel_pos);
    let decel_stats = time_stats(&decel_mag);

    let zero_if_empty = |stats: TimeStats, values: &[f64]| {
        if values.is_empty() {
            TimeStats {
                max: 0.0,
                min: 0.0,
                mean: 0.0,
                variance: 0.0,
            }
        } else {
            stats
        }
    };
    let acc = zero_if_empty(accel_stats, &accel_pos);
    let dec = zero_if_empty(decel_stats, &decel_mag);

    let (min_thw, min_ttc) = safety_indicators(behavior);

    IndicatorSet {
        max_v: vs.max,
        min_v: vs.min,
        mean_v: vs.mean,
        var_v: vs.variance,
        mad_v: mad(&velocity),
        tsv_v: tsv(&velocity).unwrap_or(0.0),
        gcf_v: spec_v.gcf,
        rmsf_v: spec_v.rmsf,
        msf_v: spec_v.msf,
        stdf_v: spec_v.stdf,
        wee_v: wav_v.wee,
        wse_v: wav_v.wse,
        wdtw_v: wdtw(
            &velocity,
            &lv_velocity,
            WDTW_DEFAULT_G,
            WDTW_DEFAULT_WMAX,
        ),
        max_a: acc.max,
        min_a: acc.min,
        max_d: dec.max,
        min_d: dec.min,
        mean_a: acc.mean,
        mean_d: dec.mean,
        var_a: acc.variance,
        mad_a: if accel_pos.is_empty() { 0.0 } else { mad(&accel_pos) },
        gcf_a: spec_a.gcf,
        rmsf_a: spec_a.rmsf,
        msf_a: spec_a.msf,
        stdf_a: spec_a.stdf,
        wee_a: wav_a.wee,
        wse_a: wav_a.wse,
        min_thw,
        min_ttc,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajdata::{SENSOR_RANGE_M, SV_SLOTS};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn frame(v: f64, a: f64, lv_dx: Option<f64>, lv_dv: f64) -> SceneFrame {
        let mut rel_v = [0.0; SV_SLOTS];
        let mut rel_x = [SENSOR_RANGE_M; SV_SLOTS];
        if let Some(dx) = lv_dx {
            rel_x[0] = dx;
            rel_v[0] = lv_dv;
        }
        SceneFrame {
            tv_velocity: v,
            tv_acceleration: a,
            sv_rel_velocity: rel_v,
            sv_rel_distance: rel_x,
        }
    }

    #[test]
    fn time_stats_examples() {
        let s = time_stats(&[2.0, 2.0, 2.0]);
        assert_eq!((s.max, s.min, s.mean, s.variance), (2.0, 2.0, 2.0, 0.0));
        let s = time_stats(&[1.0, 2.0, 3.0]);
        assert_abs_diff_eq!(s.mean, 2.0);
        assert_abs_diff_eq!(s.variance, 2.0 / 3.0, epsilon = 1e-12);
        let s = time_stats(&[-1.0, 1.0]);
        assert_eq!((s.max, s.min, s.mean), (1.0, -1.0, 0.0));
    }

    #[test]
    fn mad_examples() {
        assert_eq!(mad(&[5.0, 5.0, 5.0]), 0.0);
        assert_abs_diff_eq!(mad(&[1.0, 2.0, 3.0]), 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(mad(&[0.0, 10.0]), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn tsv_examples() {
        assert_abs_diff_eq!(tsv(&[3.0, 3.0, 3.0, 3.0]).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            tsv(&[1.0, 2.0, 4.0, 8.0]).unwrap(),
            0.0,
            epsilon = 1e-9
        );
        // r = {ln 2, -ln 2} * 100; sample std over two points
        let expected = (2.0 * (100.0 * 2.0_f64.ln()).powi(2)).sqrt();
        assert_abs_diff_eq!(tsv(&[1.0, 2.0, 1.0]).unwrap(), expected, epsilon = 1e-9);
        assert_abs_diff_eq!(tsv(&[1.0, 2.0, 1.0]).unwrap(), 98.02581, epsilon = 1e-4);
    }

    #[test]
    fn tsv_guards_low_speeds() {
        // pairs touching values <= 0.1 are skipped entirely
        assert!(tsv(&[0.05, 1.0, 0.0, 2.0]).is_none());
        let v = vec![0.0, 1.0, 2.0, 1.0, 0.05];
        // valid pairs: (1,2), (2,1)
        assert!(tsv(&v).is_some());
    }

    #[test]
    fn safety_examples() {
        // lead 10 m ahead, closing at 2 m/s -> TTC 5 s
        let frames = vec![frame(12.0, 0.0, Some(10.0), -2.0)];
        let (_, ttc) = safety_indicators(&frames);
        assert_abs_diff_eq!(ttc.unwrap(), 5.0, epsilon = 1e-12);

        // never closing -> no TTC
        let frames = vec![frame(10.0, 0.0, Some(40.0), 3.0); 5];
        let (thw, ttc) = safety_indicators(&frames);
        assert!(ttc.is_none());
        // v=10, dx=40 -> THW 4
        assert_abs_diff_eq!(thw.unwrap(), 4.0, epsilon = 1e-12);

        // v_tv = 20, dx = 40 constant -> MIN_thw = 2
        let frames = vec![frame(20.0, 0.0, Some(40.0), 0.0); 10];
        let (thw, _) = safety_indicators(&frames);
        assert_abs_diff_eq!(thw.unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn extract_all_degenerate_window() {
        let frames = vec![frame(20.0, 0.0, None, 0.0); 200];
        let ind = extract_all(&frames);
        assert_eq!(ind.var_v, 0.0);
        assert_eq!(ind.mad_v, 0.0);
        assert_eq!(ind.tsv_v, 0.0);
        assert_eq!(ind.gcf_v, 0.0);
        assert_eq!(ind.rmsf_v, 0.0);
        assert_eq!(ind.stdf_v, 0.0);
        // db4 filter sums cancel only to float precision, so the wavelet
        // entropies of a constant signal are zero up to ~1e-30
        assert_abs_diff_eq!(ind.wee_v, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ind.wse_v, 0.0, epsilon = 1e-12);
        assert_eq!(ind.wdtw_v, 0.0);
        assert_eq!(ind.max_a, 0.0);
        assert_eq!(ind.max_d, 0.0);
        assert!(ind.min_thw.is_none());
        assert!(ind.min_ttc.is_none());
    }

    #[test]
    fn extract_all_has_29_indicators() {
        let frames = vec![frame(20.0, 0.1, Some(30.0), -1.0); 200];
        let ind = extract_all(&frames);
        let row = ind.to_row();
        assert_eq!(row.len(), INDICATOR_COUNT);
        assert_eq!(INDICATOR_NAMES.len(), INDICATOR_COUNT);
        assert!(row.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn extract_all_is_pure() {
        let frames: Vec<SceneFrame> = (0..200)
            .map(|i| {
                let t = i as f64 * 0.1;
                frame(
                    20.0 + 2.0 * (t * 0.8).sin(),
                    1.6 * (t * 0.8).cos(),
                    Some(25.0 + (t * 0.3).sin()),
                    -0.5 * (t * 0.5).cos(),
                )
            })
            .collect();
        let a = extract_all(&frames);
        let b = extract_all(&frames);
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn nonnegative_indicators(values in proptest::collection::vec(-50.0f64..50.0, 8..64)) {
            prop_assert!(mad(&values) >= 0.0);
            prop_assert!(time_stats(&values).variance >= 0.0);
            if let Some(t) = tsv(&values) {
                prop_assert!(t >= 0.0);
            }
        }

        #[test]
        fn mad_scale_equivariant(
            values in proptest::collection::vec(-10.0f64..10.0, 4..32),
            c in 0.1f64..20.0,
        ) {
            let scaled: Vec<f64> = values.iter().map(|x| c * x).collect();
            let lhs = mad(&scaled);
            let rhs = c * mad(&values);
            prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1.0));
        }

        #[test]
        fn tsv_scale_invariant(
            values in proptest::collection::vec(0.5f64..30.0, 4..32),
            c in 0.5f64..10.0,
        ) {
            // log-ratios are unchanged by positive scaling (all values stay
            // above the epsilon guard by construction)
            let scaled: Vec<f64> = values.iter().map(|x| c * x).collect();
            let a = tsv(&values);
            let b = tsv(&scaled);
            match (a, b) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0)),
                (None, None) => {}
                _ => prop_assert!(false, "scaling changed definedness"),
            }
        }
    }
}
