//! Trajectory ingest, cleaning, scene assembly and windowing.
//!
//! Raw tracks arrive as frame-series CSV rows sampled at 10 Hz. They are
//! grouped per track, repaired onto the 0.1 s grid, smoothed, and cut into
//! sliding windows of 20 s behavior + 5 s observation + 4 s future. Each
//! frame of a window is a [`SceneFrame`]: the target vehicle's kinematics
//! plus relative state for the six surrounding-vehicle slots.

mod synth;

pub use synth::{gen_synthetic, ArchetypeSpec, LeadProfile, ParamDist, SynthConfig};

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Sampling interval of the trajectory grid (10 Hz).
pub const FRAME_DT: f64 = 0.1;
/// Sampling rate in Hz.
pub const RATE_HZ: f64 = 10.0;
/// Longitudinal sensor range; also the sentinel relative distance for empty slots.
pub const SENSOR_RANGE_M: f64 = 150.0;
/// Frames in the behavior segment (20 s).
pub const BEHAVIOR_FRAMES: usize = 200;
/// Frames in the observation segment (5 s).
pub const OBS_FRAMES: usize = 50;
/// Frames in the future segment (4 s).
pub const FUTURE_FRAMES: usize = 40;
/// Total frames per sample window.
pub const WINDOW_FRAMES: usize = BEHAVIOR_FRAMES + OBS_FRAMES + FUTURE_FRAMES;
/// Tracks with fewer records than this are dropped at ingest.
pub const MIN_TRACK_RECORDS: usize = 100;
/// Default stride between consecutive windows, in frames.
pub const DEFAULT_STRIDE: usize = 10;
/// Default centered moving-average window for velocity smoothing, seconds.
pub const DEFAULT_SMOOTHING_S: f64 = 0.5;
/// Number of surrounding-vehicle slots.
pub const SV_SLOTS: usize = 6;
/// Model input channels per frame: 6 relative velocities, 6 relative
/// distances, TV velocity, TV acceleration.
pub const SCENE_CHANNELS: usize = 2 * SV_SLOTS + 2;

/// Surrounding-vehicle slot order used everywhere (matches the input layout).
pub const SLOT_NAMES: [&str; SV_SLOTS] = ["lv", "fv", "llv", "lfv", "rlv", "rfv"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VehicleType {
    Car,
    Truck,
    Bus,
    Other,
}

impl VehicleType {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "car" => Some(VehicleType::Car),
            "truck" => Some(VehicleType::Truck),
            "bus" => Some(VehicleType::Bus),
            "other" => Some(VehicleType::Other),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            VehicleType::Car => "car",
            VehicleType::Truck => "truck",
            VehicleType::Bus => "bus",
            VehicleType::Other => "other",
        }
    }
}

/// One raw frame-series row for one vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub track_id: u64,
    /// Seconds, on (or near) the 0.1 s grid.
    pub timestamp: f64,
    pub lane_id: i32,
    pub longitudinal_position: f64,
    pub lateral_offset: f64,
    pub longitudinal_velocity: f64,
    pub vehicle_type: VehicleType,
}

impl TrackRecord {
    /// Grid frame index of this record (timestamps are snapped to 0.1 s).
    pub fn frame(&self) -> i64 {
        (self.timestamp * RATE_HZ).round() as i64
    }
}

/// An ungrouped track as loaded from disk or the synthetic generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawTrack {
    pub track_id: u64,
    pub records: Vec<TrackRecord>,
    /// Ground-truth driver archetype, when the track is synthetic.
    pub archetype: Option<u32>,
}

/// A preprocessed track: gap-free on the 0.1 s grid, with smoothed velocity
/// and a derived acceleration channel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Track {
    pub track_id: u64,
    /// Frame index of the first sample; frame f is at time f * 0.1 s.
    pub start_frame: i64,
    pub lane_id: Vec<i32>,
    pub position: Vec<f64>,
    pub lateral_offset: Vec<f64>,
    pub velocity: Vec<f64>,
    pub acceleration: Vec<f64>,
    pub archetype: Option<u32>,
}

impl Track {
    pub fn len(&self) -> usize {
        self.velocity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.velocity.is_empty()
    }

    pub fn end_frame(&self) -> i64 {
        self.start_frame + self.len() as i64 - 1
    }

    /// Index into the sample vectors for an absolute frame, if covered.
    pub fn index_of(&self, frame: i64) -> Option<usize> {
        if frame < self.start_frame || frame > self.end_frame() {
            None
        } else {
            Some((frame - self.start_frame) as usize)
        }
    }
}

/// One frame of an assembled scene around a target vehicle.
///
/// Slot order is LV, FV, LLV, LFV, RLV, RFV. Empty slots carry the sentinel
/// (rel_distance = +150 m, rel_velocity = 0). Relative quantities are
/// "other minus TV".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneFrame {
    pub tv_velocity: f64,
    pub tv_acceleration: f64,
    pub sv_rel_velocity: [f64; SV_SLOTS],
    pub sv_rel_distance: [f64; SV_SLOTS],
}

impl SceneFrame {
    /// Flat channel layout: [dv_1..dv_6, dx_1..dx_6, v, a].
    pub fn channels(&self) -> [f64; SCENE_CHANNELS] {
        let mut out = [0.0; SCENE_CHANNELS];
        out[..SV_SLOTS].copy_from_slice(&self.sv_rel_velocity);
        out[SV_SLOTS..2 * SV_SLOTS].copy_from_slice(&self.sv_rel_distance);
        out[2 * SV_SLOTS] = self.tv_velocity;
        out[2 * SV_SLOTS + 1] = self.tv_acceleration;
        out
    }

    /// True when the slot holds a real vehicle rather than the sentinel.
    pub fn slot_present(&self, slot: usize) -> bool {
        self.sv_rel_distance[slot].abs() < SENSOR_RANGE_M
    }

    fn empty(tv_velocity: f64, tv_acceleration: f64) -> Self {
        SceneFrame {
            tv_velocity,
            tv_acceleration,
            sv_rel_velocity: [0.0; SV_SLOTS],
            sv_rel_distance: [SENSOR_RANGE_M; SV_SLOTS],
        }
    }
}

/// Channel names matching [`SceneFrame::channels`].
pub fn channel_names() -> Vec<String> {
    let mut names = Vec::with_capacity(SCENE_CHANNELS);
    for slot in SLOT_NAMES {
        names.push(format!("dv_{slot}"));
    }
    for slot in SLOT_NAMES {
        names.push(format!("dx_{slot}"));
    }
    names.push("tv_velocity".to_string());
    names.push("tv_acceleration".to_string());
    names
}

/// One training / evaluation sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneWindow {
    pub track_id: u64,
    /// Absolute frame of the first behavior-segment frame.
    pub start_frame: i64,
    /// 200 frames (20 s) used for behavior characterization.
    pub behavior_segment: Vec<SceneFrame>,
    /// 50 frames (5 s) fed to the encoder; immediately follows the behavior segment.
    pub observation_segment: Vec<SceneFrame>,
    /// 40 future TV velocities (m/s).
    pub future_velocity: Vec<f64>,
    /// 40 future TV longitudinal positions (m).
    pub future_position: Vec<f64>,
    /// TV position at the last observation frame.
    pub last_position: f64,
    /// TV velocity at the last observation frame.
    pub last_velocity: f64,
    pub archetype_label: Option<u32>,
}

/// A set of preprocessed tracks with a per-frame occupancy index for scene
/// assembly.
#[derive(Debug, Clone)]
pub struct TrackSet {
    tracks: Vec<Track>,
    by_id: HashMap<u64, usize>,
    /// frame -> indices of tracks that have a sample at that frame.
    active: HashMap<i64, Vec<usize>>,
}

impl TrackSet {
    pub fn new(tracks: Vec<Track>) -> Self {
        let mut by_id = HashMap::new();
        let mut active: HashMap<i64, Vec<usize>> = HashMap::new();
        for (idx, t) in tracks.iter().enumerate() {
            by_id.insert(t.track_id, idx);
            for f in t.start_frame..=t.end_frame() {
                active.entry(f).or_default().push(idx);
            }
        }
        TrackSet {
            tracks,
            by_id,
            active,
        }
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn get(&self, track_id: u64) -> Option<&Track> {
        self.by_id.get(&track_id).map(|&i| &self.tracks[i])
    }
}

fn parse_field<T: std::str::FromStr>(s: &str, line: u64, col: &str) -> Result<T> {
    s.trim().parse().map_err(|_| Error::Parse {
        line,
        msg: format!("invalid value {s:?} for column {col}"),
    })
}

/// Load and group frame-series CSV rows.
///
/// Schema (header required): `track_id,timestamp,lane_id,x,y,vx,vehicle_type`
/// with an optional trailing `archetype` column. Duplicate
/// (track_id, timestamp) rows collapse to the first occurrence and tracks
/// with fewer than [`MIN_TRACK_RECORDS`] records are dropped.
pub fn load_tracks(path: &Path) -> Result<Vec<RawTrack>> {
    let file = std::fs::File::open(path)?;
    load_tracks_from_reader(file)
}

pub fn load_tracks_from_reader<R: Read>(reader: R) -> Result<Vec<RawTrack>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);

    let expected = ["track_id", "timestamp", "lane_id", "x", "y", "vx", "vehicle_type"];
    let headers = rdr.headers()?.clone();
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    for (i, want) in expected.iter().enumerate() {
        match names.get(i) {
            Some(got) if got == want => {}
            Some(got) => {
                return Err(Error::Schema(format!(
                    "column {i} is {got:?}, expected {want:?}"
                )))
            }
            None => return Err(Error::Schema(format!("missing column {want:?}"))),
        }
    }
    let has_archetype = match names.len() {
        7 => false,
        8 if names[7] == "archetype" => true,
        _ => {
            return Err(Error::Schema(format!(
                "unexpected trailing columns: {:?}",
                &names[7..]
            )))
        }
    };

    // Preserve first-seen track order; dedup on (track_id, frame).
    let mut order: Vec<u64> = Vec::new();
    let mut grouped: HashMap<u64, (Vec<TrackRecord>, HashMap<i64, ()>, Option<u32>)> =
        HashMap::new();

    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != names.len() {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", names.len(), rec.len()),
            });
        }
        let track_id: u64 = parse_field(&rec[0], line, "track_id")?;
        let timestamp: f64 = parse_field(&rec[1], line, "timestamp")?;
        let lane_id: i32 = parse_field(&rec[2], line, "lane_id")?;
        let x: f64 = parse_field(&rec[3], line, "x")?;
        let y: f64 = parse_field(&rec[4], line, "y")?;
        let vx: f64 = parse_field(&rec[5], line, "vx")?;
        let vtype = VehicleType::parse(&rec[6]).ok_or_else(|| Error::Parse {
            line,
            msg: format!("invalid value {:?} for column vehicle_type", &rec[6]),
        })?;
        if !timestamp.is_finite() || !x.is_finite() || !y.is_finite() || !vx.is_finite() {
            return Err(Error::Parse {
                line,
                msg: "non-finite numeric value".to_string(),
            });
        }
        let archetype = if has_archetype {
            let raw = rec[7].trim();
            if raw.is_empty() {
                None
            } else {
                Some(parse_field::<u32>(raw, line, "archetype")?)
            }
        } else {
            None
        };

        let record = TrackRecord {
            track_id,
            timestamp,
            lane_id,
            longitudinal_position: x,
            lateral_offset: y,
            longitudinal_velocity: vx,
            vehicle_type: vtype,
        };
        let entry = grouped.entry(track_id).or_insert_with(|| {
            order.push(track_id);
            (Vec::new(), HashMap::new(), None)
        });
        if entry.1.insert(record.frame(), ()).is_none() {
            entry.0.push(record);
        }
        if entry.2.is_none() {
            entry.2 = archetype;
        }
    }

    let mut out = Vec::new();
    for id in order {
        let (mut records, _, archetype) = grouped.remove(&id).unwrap();
        if records.len() < MIN_TRACK_RECORDS {
            continue;
        }
        records.sort_by_key(TrackRecord::frame);
        out.push(RawTrack {
            track_id: id,
            records,
            archetype,
        });
    }
    Ok(out)
}

/// Write tracks in the ingest CSV schema (with the archetype column).
pub fn write_tracks_csv<W: std::io::Write>(tracks: &[RawTrack], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "track_id",
        "timestamp",
        "lane_id",
        "x",
        "y",
        "vx",
        "vehicle_type",
        "archetype",
    ])?;
    for t in tracks {
        let arch = t.archetype.map(|a| a.to_string()).unwrap_or_default();
        for r in &t.records {
            w.write_record([
                r.track_id.to_string(),
                format!("{}", r.timestamp),
                r.lane_id.to_string(),
                format!("{}", r.longitudinal_position),
                format!("{}", r.lateral_offset),
                format!("{}", r.longitudinal_velocity),
                r.vehicle_type.as_str().to_string(),
                arch.clone(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Repair a raw track onto the 0.1 s grid, smooth velocity, and derive
/// acceleration.
///
/// Missing frames are linearly interpolated, velocity is smoothed by a
/// centered moving average whose window shrinks symmetrically at the track
/// ends (so affine profiles pass through unchanged), and acceleration is the
/// central difference of the smoothed velocity.
pub fn preprocess(raw: &RawTrack, smoothing_window_s: f64) -> Result<Track> {
    if raw.records.len() < 2 {
        return Err(Error::TooShort(format!(
            "track {} has {} record(s); need at least 2",
            raw.track_id,
            raw.records.len()
        )));
    }
    let mut recs: Vec<(i64, &TrackRecord)> = raw.records.iter().map(|r| (r.frame(), r)).collect();
    recs.sort_by_key(|(f, _)| *f);
    recs.dedup_by_key(|(f, _)| *f);

    let start = recs[0].0;
    let end = recs[recs.len() - 1].0;
    let n = (end - start + 1) as usize;

    let mut lane_id = vec![0i32; n];
    let mut position = vec![0.0; n];
    let mut lateral = vec![0.0; n];
    let mut velocity = vec![0.0; n];

    // Fill known frames first, then interpolate gaps between neighbours.
    for (f, r) in &recs {
        let idx = (f - start) as usize;
        lane_id[idx] = r.lane_id;
        position[idx] = r.longitudinal_position;
        lateral[idx] = r.lateral_offset;
        velocity[idx] = r.longitudinal_velocity.max(0.0);
    }
    for w in recs.windows(2) {
        let (f0, _r0) = w[0];
        let (f1, _r1) = w[1];
        let gap = f1 - f0;
        if gap <= 1 {
            continue;
        }
        let i0 = (f0 - start) as usize;
        let i1 = (f1 - start) as usize;
        for k in 1..gap {
            let idx = i0 + k as usize;
            let alpha = k as f64 / gap as f64;
            position[idx] = position[i0] * (1.0 - alpha) + position[i1] * alpha;
            lateral[idx] = lateral[i0] * (1.0 - alpha) + lateral[i1] * alpha;
            velocity[idx] = velocity[i0] * (1.0 - alpha) + velocity[i1] * alpha;
            // lane from the nearer known neighbour, earlier on ties
            lane_id[idx] = if alpha <= 0.5 {
                lane_id[i0]
            } else {
                lane_id[i1]
            };
        }
    }

    let smoothed = smooth_centered(&velocity, smoothing_window_s);
    let acceleration = central_difference(&smoothed, FRAME_DT);

    Ok(Track {
        track_id: raw.track_id,
        start_frame: start,
        lane_id,
        position,
        lateral_offset: lateral,
        velocity: smoothed,
        acceleration,
        archetype: raw.archetype,
    })
}

/// Centered moving average with symmetric shrink at the boundaries.
fn smooth_centered(values: &[f64], window_s: f64) -> Vec<f64> {
    let n = values.len();
    let half = ((window_s * RATE_HZ / 2.0).round() as usize).max(0);
    if half == 0 || n < 3 {
        return values.to_vec();
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let w = half.min(i).min(n - 1 - i);
        let lo = i - w;
        let hi = i + w;
        let sum: f64 = values[lo..=hi].iter().sum();
        out.push(sum / (hi - lo + 1) as f64);
    }
    out
}

/// Central difference; one-sided at the two ends.
fn central_difference(values: &[f64], dt: f64) -> Vec<f64> {
    let n = values.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    out[0] = (values[1] - values[0]) / dt;
    out[n - 1] = (values[n - 1] - values[n - 2]) / dt;
    for i in 1..n - 1 {
        out[i] = (values[i + 1] - values[i - 1]) / (2.0 * dt);
    }
    out
}

/// Preprocess every raw track, dropping none (callers filtered at ingest).
pub fn preprocess_all(raw: &[RawTrack], smoothing_window_s: f64) -> Result<TrackSet> {
    let mut tracks = Vec::with_capacity(raw.len());
    for r in raw {
        tracks.push(preprocess(r, smoothing_window_s)?);
    }
    Ok(TrackSet::new(tracks))
}

/// Lane-relative slot classification. Left lane is `lane_id + 1`.
fn slot_of(tv_lane: i32, other_lane: i32, dx: f64) -> Option<usize> {
    let ahead = dx > 0.0;
    let behind = dx < 0.0;
    match other_lane - tv_lane {
        0 if ahead => Some(0),  // LV
        0 if behind => Some(1), // FV
        1 if ahead => Some(2),  // LLV
        1 if behind => Some(3), // LFV
        -1 if ahead => Some(4), // RLV
        -1 if behind => Some(5),// RFV
        _ => None,
    }
}

/// Assemble the scene around a target vehicle at one frame.
///
/// Each slot takes the nearest qualifying vehicle within 150 m
/// longitudinally; empty slots carry the sentinel (dx = +150, dv = 0).
pub fn assemble_scene(set: &TrackSet, tv_id: u64, frame: i64) -> Result<SceneFrame> {
    let tv = set
        .get(tv_id)
        .ok_or_else(|| Error::Lookup(format!("track {tv_id} not found")))?;
    let ti = tv
        .index_of(frame)
        .ok_or_else(|| Error::Lookup(format!("track {tv_id} has no record at frame {frame}")))?;
    let tv_pos = tv.position[ti];
    let tv_vel = tv.velocity[ti];
    let tv_lane = tv.lane_id[ti];

    let mut scene = SceneFrame::empty(tv_vel, tv.acceleration[ti]);
    let mut best_abs = [f64::INFINITY; SV_SLOTS];

    if let Some(candidates) = set.active.get(&frame) {
        for &ci in candidates {
            let other = &set.tracks[ci];
            if other.track_id == tv_id {
                continue;
            }
            let oi = match other.index_of(frame) {
                Some(i) => i,
                None => continue,
            };
            let dx = other.position[oi] - tv_pos;
            if dx == 0.0 || dx.abs() > SENSOR_RANGE_M {
                continue;
            }
            let slot = match slot_of(tv_lane, other.lane_id[oi], dx) {
                Some(s) => s,
                None => continue,
            };
            if dx.abs() < best_abs[slot] {
                best_abs[slot] = dx.abs();
                scene.sv_rel_distance[slot] = dx;
                scene.sv_rel_velocity[slot] = other.velocity[oi] - tv_vel;
            }
        }
    }
    Ok(scene)
}

/// Number of windows a track of `len` frames yields at the given stride.
pub fn window_count(len: usize, stride: usize) -> usize {
    if len < WINDOW_FRAMES {
        0
    } else {
        (len - WINDOW_FRAMES) / stride + 1
    }
}

/// Cut sliding sample windows out of every track in the set.
///
/// Windows never cross track boundaries; tracks shorter than one window
/// yield nothing.
pub fn window_samples(set: &TrackSet, stride: usize) -> Vec<SceneWindow> {
    let stride = stride.max(1);
    let mut out = Vec::new();
    for track in set.tracks() {
        let n = track.len();
        if n < WINDOW_FRAMES {
            continue;
        }
        let mut start = 0usize;
        while start + WINDOW_FRAMES <= n {
            out.push(build_window(set, track, start));
            start += stride;
        }
    }
    out
}

fn build_window(set: &TrackSet, track: &Track, start: usize) -> SceneWindow {
    let abs_start = track.start_frame + start as i64;
    let mut behavior = Vec::with_capacity(BEHAVIOR_FRAMES);
    let mut observation = Vec::with_capacity(OBS_FRAMES);
    for k in 0..BEHAVIOR_FRAMES + OBS_FRAMES {
        let frame = abs_start + k as i64;
        let scene = assemble_scene(set, track.track_id, frame)
            .expect("window frames lie inside the track");
        if k < BEHAVIOR_FRAMES {
            behavior.push(scene);
        } else {
            observation.push(scene);
        }
    }
    let fut_start = start + BEHAVIOR_FRAMES + OBS_FRAMES;
    let future_velocity = track.velocity[fut_start..fut_start + FUTURE_FRAMES].to_vec();
    let future_position = track.position[fut_start..fut_start + FUTURE_FRAMES].to_vec();
    let last_idx = fut_start - 1;
    SceneWindow {
        track_id: track.track_id,
        start_frame: abs_start,
        behavior_segment: behavior,
        observation_segment: observation,
        future_velocity,
        future_position,
        last_position: track.position[last_idx],
        last_velocity: track.velocity[last_idx],
        archetype_label: track.archetype,
    }
}

/// Rebuild one window from its (track_id, start_frame) reference.
pub fn rebuild_window(set: &TrackSet, track_id: u64, start_frame: i64) -> Result<SceneWindow> {
    let track = set
        .get(track_id)
        .ok_or_else(|| Error::Lookup(format!("track {track_id} not found")))?;
    let start = track
        .index_of(start_frame)
        .ok_or_else(|| Error::Lookup(format!("frame {start_frame} outside track {track_id}")))?;
    if start + WINDOW_FRAMES > track.len() {
        return Err(Error::Lookup(format!(
            "window at frame {start_frame} exceeds track {track_id}"
        )));
    }
    Ok(build_window(set, track, start))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rec(track_id: u64, t: f64, lane: i32, x: f64, vx: f64) -> TrackRecord {
        TrackRecord {
            track_id,
            timestamp: t,
            lane_id: lane,
            longitudinal_position: x,
            lateral_offset: 0.0,
            longitudinal_velocity: vx,
            vehicle_type: VehicleType::Car,
        }
    }

    fn raw_track(track_id: u64, records: Vec<TrackRecord>) -> RawTrack {
        RawTrack {
            track_id,
            records,
            archetype: None,
        }
    }

    fn csv_of(rows: &[&str]) -> String {
        let mut s = String::from("track_id,timestamp,lane_id,x,y,vx,vehicle_type\n");
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    #[test]
    fn load_dedups_identical_rows() {
        let mut rows = Vec::new();
        for i in 0..100 {
            rows.push(format!("1,{:.1},1,{},0.0,20.0,car", i as f64 * 0.1, i));
        }
        // duplicate of the first row, byte-identical
        rows.push("1,0.0,1,0,0.0,20.0,car".to_string());
        let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
        let tracks = load_tracks_from_reader(csv_of(&refs).as_bytes()).unwrap();
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].records.len(), 100);
    }

    #[test]
    fn load_drops_short_tracks() {
        let mut rows = Vec::new();
        for i in 0..99 {
            rows.push(format!("7,{:.1},1,{},0.0,20.0,car", i as f64 * 0.1, i));
        }
        for i in 0..100 {
            rows.push(format!("8,{:.1},1,{},0.0,20.0,car", i as f64 * 0.1, i));
        }
        let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
        let tracks = load_tracks_from_reader(csv_of(&refs).as_bytes()).unwrap();
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].track_id, 8);
    }

    #[test]
    fn load_reports_parse_error_line() {
        let s = csv_of(&["1,0.0,1,0.0,0.0,abc,car"]);
        let err = load_tracks_from_reader(s.as_bytes()).unwrap_err();
        match err {
            Error::Parse { line, ref msg } => {
                assert_eq!(line, 2);
                assert!(msg.contains("vx"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_missing_column() {
        let s = "track_id,timestamp,lane_id,x,y,vx\n1,0.0,1,0.0,0.0,1.0\n";
        let err = load_tracks_from_reader(s.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn preprocess_constant_velocity_zero_acceleration() {
        let records: Vec<TrackRecord> = (0..101)
            .map(|i| rec(1, i as f64 * 0.1, 1, 2.0 * i as f64, 20.0))
            .collect();
        let track = preprocess(&raw_track(1, records), DEFAULT_SMOOTHING_S).unwrap();
        for &a in &track.acceleration {
            assert_abs_diff_eq!(a, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn preprocess_interpolates_gap() {
        let mut records: Vec<TrackRecord> = Vec::new();
        for i in 0..5 {
            if i == 2 {
                continue; // missing frame
            }
            records.push(rec(1, i as f64 * 0.1, 1, i as f64, 10.0 + i as f64 * 0.5));
        }
        let track = preprocess(&raw_track(1, records), 0.0).unwrap();
        assert_eq!(track.len(), 5);
        // v at the gap midpoint: between 11.0 (i=1 -> 10.5) wait, i=1 v=10.5, i=3 v=11.5
        assert_abs_diff_eq!(track.velocity[2], 11.0, epsilon = 1e-12);
        assert_abs_diff_eq!(track.position[2], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn preprocess_gap_linear_midpoint_velocity() {
        let records = vec![rec(1, 0.0, 1, 0.0, 10.0), rec(1, 0.2, 1, 2.1, 11.0)];
        let track = preprocess(&raw_track(1, records), 0.0).unwrap();
        assert_eq!(track.len(), 3);
        assert_abs_diff_eq!(track.velocity[1], 10.5, epsilon = 1e-12);
    }

    #[test]
    fn preprocess_ramp_acceleration() {
        // 0 -> 10 m/s over 10 s: slope 1 m/s^2
        let records: Vec<TrackRecord> = (0..=100)
            .map(|i| rec(1, i as f64 * 0.1, 1, 0.0, 0.1 * i as f64))
            .collect();
        let track = preprocess(&raw_track(1, records), DEFAULT_SMOOTHING_S).unwrap();
        for i in 3..track.len() - 3 {
            assert_abs_diff_eq!(track.acceleration[i], 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn preprocess_single_record_errors() {
        let err = preprocess(&raw_track(1, vec![rec(1, 0.0, 1, 0.0, 1.0)]), 0.5).unwrap_err();
        assert!(matches!(err, Error::TooShort(_)));
    }

    #[test]
    fn preprocess_idempotent_on_clean_affine_tracks() {
        // Constant and linear-ramp velocity profiles are fixed points of the
        // symmetric moving average, so a second pass changes nothing.
        for ramp in [0.0, 0.7] {
            let records: Vec<TrackRecord> = (0..200)
                .map(|i| {
                    let t = i as f64 * 0.1;
                    rec(1, t, 1, 15.0 * t, 15.0 + ramp * t)
                })
                .collect();
            let once = preprocess(&raw_track(1, records), DEFAULT_SMOOTHING_S).unwrap();
            let again_raw = RawTrack {
                track_id: 1,
                records: (0..once.len())
                    .map(|i| {
                        let mut r = rec(
                            1,
                            (once.start_frame + i as i64) as f64 * 0.1,
                            once.lane_id[i],
                            once.position[i],
                            once.velocity[i],
                        );
                        r.lateral_offset = once.lateral_offset[i];
                        r
                    })
                    .collect(),
                archetype: None,
            };
            let twice = preprocess(&again_raw, DEFAULT_SMOOTHING_S).unwrap();
            for i in 0..once.len() {
                assert_abs_diff_eq!(once.velocity[i], twice.velocity[i], epsilon = 1e-12);
                assert_abs_diff_eq!(once.position[i], twice.position[i], epsilon = 1e-12);
            }
        }
    }

    fn two_vehicle_set(lead_x0: f64, lead_v: f64, tv_v: f64) -> TrackSet {
        let lead: Vec<TrackRecord> = (0..100)
            .map(|i| rec(2, i as f64 * 0.1, 1, lead_x0 + lead_v * i as f64 * 0.1, lead_v))
            .collect();
        let tv: Vec<TrackRecord> = (0..100)
            .map(|i| rec(1, i as f64 * 0.1, 1, tv_v * i as f64 * 0.1, tv_v))
            .collect();
        preprocess_all(
            &[raw_track(1, tv), raw_track(2, lead)],
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn scene_empty_slots_use_sentinel() {
        let tv: Vec<TrackRecord> = (0..100)
            .map(|i| rec(1, i as f64 * 0.1, 1, i as f64, 10.0))
            .collect();
        let set = preprocess_all(&[raw_track(1, tv)], 0.0).unwrap();
        let scene = assemble_scene(&set, 1, 10).unwrap();
        for slot in 0..SV_SLOTS {
            assert_eq!(scene.sv_rel_distance[slot], SENSOR_RANGE_M);
            assert_eq!(scene.sv_rel_velocity[slot], 0.0);
            assert!(!scene.slot_present(slot));
        }
    }

    #[test]
    fn scene_lead_vehicle_relative_state() {
        let set = two_vehicle_set(30.0, 22.0, 20.0);
        let scene = assemble_scene(&set, 1, 0).unwrap();
        assert_abs_diff_eq!(scene.sv_rel_distance[0], 30.0, epsilon = 1e-9);
        assert_abs_diff_eq!(scene.sv_rel_velocity[0], 2.0, epsilon = 1e-9);
    }

    #[test]
    fn scene_nearest_candidate_wins() {
        let mk = |id: u64, x0: f64| -> RawTrack {
            raw_track(
                id,
                (0..100)
                    .map(|i| rec(id, i as f64 * 0.1, 1, x0 + 20.0 * i as f64 * 0.1, 20.0))
                    .collect(),
            )
        };
        let set = preprocess_all(&[mk(1, 0.0), mk(2, 40.0), mk(3, 80.0)], 0.0).unwrap();
        let scene = assemble_scene(&set, 1, 0).unwrap();
        assert_abs_diff_eq!(scene.sv_rel_distance[0], 40.0, epsilon = 1e-9);
    }

    #[test]
    fn scene_out_of_range_ignored() {
        let set = two_vehicle_set(151.0, 20.0, 20.0);
        let scene = assemble_scene(&set, 1, 0).unwrap();
        assert!(!scene.slot_present(0));
    }

    #[test]
    fn scene_missing_tv_errors() {
        let set = two_vehicle_set(30.0, 20.0, 20.0);
        assert!(matches!(
            assemble_scene(&set, 99, 0),
            Err(Error::Lookup(_))
        ));
    }

    fn constant_track(id: u64, frames: usize) -> RawTrack {
        raw_track(
            id,
            (0..frames)
                .map(|i| rec(id, i as f64 * 0.1, 1, 20.0 * i as f64 * 0.1, 20.0))
                .collect(),
        )
    }

    #[test]
    fn window_counts_match_examples() {
        // 290 frames -> exactly one window
        let set = preprocess_all(&[constant_track(1, 290)], 0.0).unwrap();
        assert_eq!(window_samples(&set, 10).len(), 1);
        // 289 frames -> none
        let set = preprocess_all(&[constant_track(1, 289)], 0.0).unwrap();
        assert_eq!(window_samples(&set, 10).len(), 0);
        // 300 frames, stride 10 -> two
        let set = preprocess_all(&[constant_track(1, 300)], 0.0).unwrap();
        assert_eq!(window_samples(&set, 10).len(), 2);
    }

    #[test]
    fn window_count_formula_exhaustive() {
        for len in 0..=1000usize {
            for stride in [1usize, 7, 10, 25] {
                let expected = if len < WINDOW_FRAMES {
                    0
                } else {
                    (len - WINDOW_FRAMES) / stride + 1
                };
                assert_eq!(window_count(len, stride), expected, "len={len} stride={stride}");
            }
        }
        // cross-check the formula against actual windowing on a few lengths
        for len in [289usize, 290, 291, 310, 500] {
            let set = preprocess_all(&[constant_track(1, len)], 0.0).unwrap();
            assert_eq!(window_samples(&set, 10).len(), window_count(len, 10));
        }
    }

    #[test]
    fn window_segments_are_contiguous() {
        let set = preprocess_all(&[constant_track(1, 300)], 0.0).unwrap();
        let windows = window_samples(&set, 10);
        let w = &windows[0];
        assert_eq!(w.behavior_segment.len(), BEHAVIOR_FRAMES);
        assert_eq!(w.observation_segment.len(), OBS_FRAMES);
        assert_eq!(w.future_velocity.len(), FUTURE_FRAMES);
        assert_eq!(w.future_position.len(), FUTURE_FRAMES);
        // future position continues from last observed position at constant speed
        assert_abs_diff_eq!(
            w.future_position[0] - w.last_position,
            2.0,
            epsilon = 1e-9
        );
    }
}
