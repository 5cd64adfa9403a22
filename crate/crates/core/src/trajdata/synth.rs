//! Synthetic heterogeneous car-following data.
//!
//! Each trajectory is a lead/follower pair: the lead vehicle tracks a
//! scripted, periodically repeating speed profile while the follower runs an
//! intelligent-driver-model law with parameters drawn from one of several
//! driver archetypes. Pairs are offset in time so scene assembly never
//! matches vehicles across pairs. Observation noise (optionally with a
//! heavy-tail glitch component) is added to the recorded channels only; the
//! underlying simulation stays noise-free.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{RawTrack, TrackRecord, VehicleType, FRAME_DT, RATE_HZ};
use crate::{Error, Result};

/// Front-to-front spacing consumed by the vehicle body.
pub const VEHICLE_LENGTH_M: f64 = 5.0;
/// Quiet gap inserted between consecutive trajectory pairs, seconds.
const PAIR_GAP_S: f64 = 10.0;

/// A truncated-normal parameter distribution (clamped at two standard
/// deviations and at a positivity floor).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamDist {
    pub mean: f64,
    pub std: f64,
}

impl ParamDist {
    pub fn new(mean: f64, std: f64) -> Self {
        ParamDist { mean, std }
    }

    fn sample(&self, rng: &mut ChaCha8Rng, floor: f64) -> f64 {
        let normal = Normal::new(self.mean, self.std.max(1e-12)).expect("valid normal");
        let v = normal.sample(rng);
        v.clamp(self.mean - 2.0 * self.std, self.mean + 2.0 * self.std)
            .max(floor)
    }
}

/// Car-following parameter distributions for one driver archetype.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeSpec {
    /// Desired free-flow speed, m/s.
    pub desired_speed: ParamDist,
    /// Maximum acceleration, m/s^2.
    pub max_accel: ParamDist,
    /// Comfortable deceleration, m/s^2.
    pub comfort_decel: ParamDist,
    /// Desired time headway, s.
    pub time_headway: ParamDist,
    /// Jam distance (standstill gap), m.
    pub jam_distance: ParamDist,
}

impl ArchetypeSpec {
    fn validate(&self, idx: usize) -> Result<()> {
        let fields = [
            ("desired_speed", self.desired_speed),
            ("max_accel", self.max_accel),
            ("comfort_decel", self.comfort_decel),
            ("time_headway", self.time_headway),
            ("jam_distance", self.jam_distance),
        ];
        for (name, d) in fields {
            if !(d.mean > 0.0) || !(d.std >= 0.0) || !d.mean.is_finite() || !d.std.is_finite() {
                return Err(Error::Config(format!(
                    "archetype {idx}: {name} must have positive mean and non-negative std"
                )));
            }
        }
        Ok(())
    }
}

/// Default four-archetype palette, ordered from most aggressive to most timid.
pub fn default_archetypes() -> Vec<ArchetypeSpec> {
    let d = ParamDist::new;
    vec![
        ArchetypeSpec {
            desired_speed: d(33.0, 0.6),
            max_accel: d(2.8, 0.1),
            comfort_decel: d(3.4, 0.12),
            time_headway: d(0.7, 0.04),
            jam_distance: d(1.2, 0.08),
        },
        ArchetypeSpec {
            desired_speed: d(30.0, 0.6),
            max_accel: d(2.0, 0.08),
            comfort_decel: d(2.7, 0.1),
            time_headway: d(1.3, 0.05),
            jam_distance: d(1.8, 0.08),
        },
        ArchetypeSpec {
            desired_speed: d(27.5, 0.6),
            max_accel: d(1.3, 0.06),
            comfort_decel: d(2.0, 0.08),
            time_headway: d(1.9, 0.06),
            jam_distance: d(2.4, 0.1),
        },
        ArchetypeSpec {
            desired_speed: d(25.5, 0.6),
            max_accel: d(0.7, 0.04),
            comfort_decel: d(1.4, 0.06),
            time_headway: d(2.6, 0.08),
            jam_distance: d(3.0, 0.1),
        },
    ]
}

/// Piecewise-linear lead speed schedule, repeated periodically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadProfile {
    /// (time s, speed m/s) knots; times strictly increasing from 0.
    pub knots: Vec<(f64, f64)>,
}

impl Default for LeadProfile {
    fn default() -> Self {
        // Accelerate/brake episodes every few seconds; the 12 s period keeps
        // every 20 s behavior window exposed to comparable maneuvering.
        LeadProfile {
            knots: vec![
                (0.0, 21.0),
                (3.0, 16.0),
                (6.5, 23.0),
                (9.5, 17.0),
                (12.0, 21.0),
            ],
        }
    }
}

impl LeadProfile {
    fn validate(&self) -> Result<()> {
        if self.knots.len() < 2 {
            return Err(Error::Config(
                "lead profile needs at least two knots".to_string(),
            ));
        }
        if self.knots[0].0 != 0.0 {
            return Err(Error::Config("lead profile must start at t=0".to_string()));
        }
        for w in self.knots.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::Config(
                    "lead profile knot times must be strictly increasing".to_string(),
                ));
            }
        }
        for &(_, v) in &self.knots {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(
                    "lead profile speeds must be positive".to_string(),
                ));
            }
        }
        Ok(())
    }

    fn period(&self) -> f64 {
        self.knots.last().unwrap().0
    }

    /// Speed at time `t` (periodic extension, phase-shifted by `phase`).
    pub fn speed(&self, t: f64, phase: f64) -> f64 {
        let period = self.period();
        let mut tt = (t + phase) % period;
        if tt < 0.0 {
            tt += period;
        }
        for w in self.knots.windows(2) {
            let (t0, v0) = w[0];
            let (t1, v1) = w[1];
            if tt <= t1 {
                let alpha = (tt - t0) / (t1 - t0);
                return v0 * (1.0 - alpha) + v1 * alpha;
            }
        }
        self.knots.last().unwrap().1
    }

    pub fn max_speed(&self) -> f64 {
        self.knots.iter().map(|&(_, v)| v).fold(0.0, f64::max)
    }
}

/// Configuration for the synthetic generator. The seed fully determines the
/// output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub archetypes: Vec<ArchetypeSpec>,
    pub lead_profile: LeadProfile,
    pub trajectory_count: usize,
    pub duration_s: f64,
    /// Std-dev of Gaussian observation noise on recorded velocity, m/s.
    /// Position noise uses half this value.
    pub noise_std: f64,
    /// Probability that a frame's noise draws from the widened component.
    pub glitch_prob: f64,
    /// Scale multiplier of the widened noise component.
    pub glitch_scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            archetypes: default_archetypes(),
            lead_profile: LeadProfile::default(),
            trajectory_count: 100,
            duration_s: 60.0,
            noise_std: 0.05,
            glitch_prob: 0.02,
            glitch_scale: 6.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.archetypes.is_empty() {
            return Err(Error::Config("at least one archetype required".to_string()));
        }
        for (i, a) in self.archetypes.iter().enumerate() {
            a.validate(i)?;
        }
        self.lead_profile.validate()?;
        if self.trajectory_count == 0 {
            return Err(Error::Config("trajectory_count must be positive".to_string()));
        }
        if !(self.duration_s > 0.0) {
            return Err(Error::Config("duration_s must be positive".to_string()));
        }
        if self.noise_std < 0.0 || self.glitch_prob < 0.0 || self.glitch_prob > 1.0 {
            return Err(Error::Config("invalid noise settings".to_string()));
        }
        if self.glitch_scale < 1.0 {
            return Err(Error::Config("glitch_scale must be >= 1".to_string()));
        }
        Ok(())
    }
}

/// Sampled per-trajectory intelligent-driver-model parameters.
#[derive(Debug, Clone, Copy)]
struct IdmParams {
    desired_speed: f64,
    max_accel: f64,
    comfort_decel: f64,
    time_headway: f64,
    jam_distance: f64,
}

impl IdmParams {
    fn sample(spec: &ArchetypeSpec, rng: &mut ChaCha8Rng) -> Self {
        IdmParams {
            desired_speed: spec.desired_speed.sample(rng, 1.0),
            max_accel: spec.max_accel.sample(rng, 0.1),
            comfort_decel: spec.comfort_decel.sample(rng, 0.1),
            time_headway: spec.time_headway.sample(rng, 0.1),
            jam_distance: spec.jam_distance.sample(rng, 0.1),
        }
    }

    /// IDM acceleration for net gap `s`, own speed `v`, lead speed `v_lead`.
    fn accel(&self, s: f64, v: f64, v_lead: f64) -> f64 {
        let s = s.max(0.01);
        let dv = v - v_lead;
        let s_star = self.jam_distance
            + v * self.time_headway
            + v * dv / (2.0 * (self.max_accel * self.comfort_decel).sqrt());
        self.max_accel * (1.0 - (v / self.desired_speed).powi(4) - (s_star.max(0.0) / s).powi(2))
    }

    /// Net gap at which acceleration is zero for steady speed `v`.
    fn equilibrium_gap(&self, v: f64) -> f64 {
        let free = 1.0 - (v / self.desired_speed).powi(4);
        (self.jam_distance + v * self.time_headway) / free.max(1e-6).sqrt()
    }
}

/// Generate labeled lead/follower trajectory pairs.
///
/// Track ids: pair `k` uses `2k` for the lead and `2k + 1` for the follower;
/// only follower tracks carry an archetype label.
pub fn gen_synthetic(config: &SynthConfig) -> Result<Vec<RawTrack>> {
    config.validate()?;
    let frames = (config.duration_s * RATE_HZ).round() as usize;
    if frames < 2 {
        return Err(Error::Config("duration too short".to_string()));
    }
    let pair_stride_frames = frames as i64 + (PAIR_GAP_S * RATE_HZ).round() as i64;
    let period = config.lead_profile.period();

    let mut out = Vec::with_capacity(config.trajectory_count * 2);
    for k in 0..config.trajectory_count {
        // One independent stream per pair: trajectories are reproducible
        // individually regardless of count.
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (0x9e3779b97f4a7c15u64
            .wrapping_mul(k as u64 + 1)));
        let archetype = (k % config.archetypes.len()) as u32;
        let params = IdmParams::sample(&config.archetypes[archetype as usize], &mut rng);
        let phase: f64 = rng.random::<f64>() * period;

        let base_frame = k as i64 * pair_stride_frames;
        let (lead_v, lead_x, fol_v, fol_x) = simulate_pair(config, &params, phase, frames);

        let noise = Normal::new(0.0, 1.0).expect("unit normal");
        let emit = |track_id: u64,
                        xs: &[f64],
                        vs: &[f64],
                        archetype: Option<u32>,
                        rng: &mut ChaCha8Rng| {
            let mut records = Vec::with_capacity(frames);
            for i in 0..frames {
                let scale = if config.glitch_prob > 0.0
                    && rng.random::<f64>() < config.glitch_prob
                {
                    config.glitch_scale
                } else {
                    1.0
                };
                let nv = noise.sample(rng) * config.noise_std * scale;
                let nx = noise.sample(rng) * config.noise_std * 0.5 * scale;
                records.push(TrackRecord {
                    track_id,
                    timestamp: (base_frame + i as i64) as f64 * FRAME_DT,
                    lane_id: 1,
                    longitudinal_position: xs[i] + nx,
                    lateral_offset: 0.0,
                    longitudinal_velocity: (vs[i] + nv).max(0.0),
                    vehicle_type: VehicleType::Car,
                });
            }
            RawTrack {
                track_id,
                records,
                archetype,
            }
        };

        out.push(emit(2 * k as u64, &lead_x, &lead_v, None, &mut rng));
        out.push(emit(2 * k as u64 + 1, &fol_x, &fol_v, Some(archetype), &mut rng));
    }
    Ok(out)
}

/// Simulate one lead/follower pair without noise. Returns per-frame
/// (lead velocity, lead position, follower velocity, follower position).
fn simulate_pair(
    config: &SynthConfig,
    params: &IdmParams,
    phase: f64,
    frames: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let profile = &config.lead_profile;
    let mut lead_v = Vec::with_capacity(frames);
    let mut lead_x = Vec::with_capacity(frames);
    let v0 = profile.speed(0.0, phase);
    // Follower starts at the equilibrium gap for the initial lead speed.
    let gap0 = params.equilibrium_gap(v0);
    let mut lx = gap0 + VEHICLE_LENGTH_M;
    lead_v.push(v0);
    lead_x.push(lx);
    for i in 1..frames {
        let t = i as f64 * FRAME_DT;
        let v = profile.speed(t, phase);
        lx += (v + lead_v[i - 1]) * 0.5 * FRAME_DT;
        lead_v.push(v);
        lead_x.push(lx);
    }

    let mut fol_v = Vec::with_capacity(frames);
    let mut fol_x = Vec::with_capacity(frames);
    let mut fv = v0;
    let mut fx = 0.0;
    fol_v.push(fv);
    fol_x.push(fx);
    for i in 1..frames {
        let gap = lead_x[i - 1] - fx - VEHICLE_LENGTH_M;
        let a = params.accel(gap, fv, lead_v[i - 1]);
        let nv = (fv + a * FRAME_DT).max(0.0);
        fx += (fv + nv) * 0.5 * FRAME_DT;
        fv = nv;
        fol_v.push(fv);
        fol_x.push(fx);
    }
    (lead_v, lead_x, fol_v, fol_x)
}
