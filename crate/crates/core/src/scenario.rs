//! Synthetic platooning data on a rounded-rectangle track, plus CSV ingestion.
//!
//! Vehicles follow the track centreline counter-clockwise. Steering is a
//! wheelbase proxy `atan(wheelbase * kappa)` with curvature ramped linearly
//! over one metre at arc boundaries; power is proportional to speed and grows
//! with cornering load. Noise is specified on the normalized scale and mapped
//! back through each channel's nominal span.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::io::write_atomic;
use crate::statespace::{RawSeries, CHANNELS};
use crate::{Error, Result};

const WHEELBASE: f64 = 1.2;
const CURVATURE_RAMP: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackSpec {
    pub width: f64,
    pub height: f64,
    /// Distance between the arena boundary and the centreline.
    pub margin: f64,
    pub corner_radius: f64,
    pub speed: f64,
    pub laps: usize,
    pub samples_per_lap: usize,
    /// Power per unit speed on straights.
    pub power_gain: f64,
    /// Relative power increase at full cornering curvature.
    pub cornering_load: f64,
}

impl Default for TrackSpec {
    fn default() -> Self {
        TrackSpec {
            width: 38.0,
            height: 33.0,
            margin: 1.0,
            corner_radius: 3.0,
            speed: 2.0,
            laps: 4,
            samples_per_lap: 800,
            power_gain: 1.0,
            cornering_load: 2.0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Segment {
    Straight { x0: f64, y0: f64, heading: f64 },
    Arc { cx: f64, cy: f64, start_angle: f64 },
}

impl TrackSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if !(self.width > 0.0 && self.height > 0.0) {
            return bad("track width and height must be positive");
        }
        if !(self.margin >= 0.0 && self.corner_radius > 0.0) {
            return bad("margin must be non-negative and corner radius positive");
        }
        let (w, h) = self.inner();
        if !(w >= 2.0 * self.corner_radius && h >= 2.0 * self.corner_radius) {
            return bad("corner radius does not fit inside the track");
        }
        if !(self.speed > 0.0) {
            return bad("speed must be positive");
        }
        if self.laps < 1 || self.samples_per_lap < 4 {
            return bad("need at least one lap of four samples");
        }
        if !(self.power_gain > 0.0 && self.cornering_load >= 0.0) {
            return bad("power gain must be positive and cornering load non-negative");
        }
        Ok(())
    }

    fn inner(&self) -> (f64, f64) {
        (self.width - 2.0 * self.margin, self.height - 2.0 * self.margin)
    }

    fn straight_lengths(&self) -> (f64, f64) {
        let (w, h) = self.inner();
        (w - 2.0 * self.corner_radius, h - 2.0 * self.corner_radius)
    }

    pub fn perimeter(&self) -> f64 {
        let (a, b) = self.straight_lengths();
        2.0 * (a + b) + 2.0 * PI * self.corner_radius
    }

    /// Sampling period that makes one lap exactly `samples_per_lap` samples.
    pub fn dt(&self) -> f64 {
        self.perimeter() / (self.speed * self.samples_per_lap as f64)
    }

    pub fn n_samples(&self) -> usize {
        self.laps * self.samples_per_lap
    }

    fn segments(&self) -> [(f64, Segment); 8] {
        let (a, b) = self.straight_lengths();
        let r = self.corner_radius;
        let m = self.margin;
        let (w, h) = self.inner();
        let q = FRAC_PI_2 * r;
        [
            (a, Segment::Straight { x0: m + r, y0: m, heading: 0.0 }),
            (q, Segment::Arc { cx: m + w - r, cy: m + r, start_angle: -FRAC_PI_2 }),
            (b, Segment::Straight { x0: m + w, y0: m + r, heading: FRAC_PI_2 }),
            (q, Segment::Arc { cx: m + w - r, cy: m + h - r, start_angle: 0.0 }),
            (a, Segment::Straight { x0: m + w - r, y0: m + h, heading: PI }),
            (q, Segment::Arc { cx: m + r, cy: m + h - r, start_angle: FRAC_PI_2 }),
            (b, Segment::Straight { x0: m, y0: m + h - r, heading: -FRAC_PI_2 }),
            (q, Segment::Arc { cx: m + r, cy: m + r, start_angle: PI }),
        ]
    }

    /// Centreline position at arc length `s` (wrapped to one lap).
    pub fn position(&self, s: f64) -> (f64, f64) {
        let mut s = s.rem_euclid(self.perimeter());
        let r = self.corner_radius;
        let segs = self.segments();
        for (i, (len, seg)) in segs.iter().enumerate() {
            if s <= *len || i == segs.len() - 1 {
                let s = s.min(*len);
                return match *seg {
                    Segment::Straight { x0, y0, heading } => (x0 + s * heading.cos(), y0 + s * heading.sin()),
                    Segment::Arc { cx, cy, start_angle } => {
                        let a = start_angle + s / r;
                        (cx + r * a.cos(), cy + r * a.sin())
                    }
                };
            }
            s -= len;
        }
        unreachable!("segment loop always returns")
    }

    /// Curvature averaged over a window of `CURVATURE_RAMP` metres centred on
    /// `s`, i.e. raw curvature ramped linearly at arc boundaries.
    pub fn smoothed_curvature(&self, s: f64) -> f64 {
        let l = self.perimeter();
        let half = 0.5 * CURVATURE_RAMP;
        let (lo, hi) = (s - half, s + half);
        let k = 1.0 / self.corner_radius;
        let mut arc_overlap = 0.0;
        // arcs repeat every lap; check the neighbouring laps as well
        for lap in -1..=1 {
            let mut start = lap as f64 * l;
            for (len, seg) in self.segments() {
                if let Segment::Arc { .. } = seg {
                    let (a, b) = (start, start + len);
                    arc_overlap += (hi.min(b) - lo.max(a)).max(0.0);
                }
                start += len;
            }
        }
        k * arc_overlap / CURVATURE_RAMP
    }

    pub fn steering(&self, s: f64) -> f64 {
        (WHEELBASE * self.smoothed_curvature(s)).atan()
    }

    pub fn power(&self, s: f64, speed: f64) -> f64 {
        let load = self.smoothed_curvature(s) * self.corner_radius;
        self.power_gain * speed * (1.0 + self.cornering_load * load)
    }

    /// Nominal span of each channel, used to scale normalized noise.
    fn channel_spans(&self) -> [f64; 4] {
        let (w, h) = self.inner();
        let steer = (WHEELBASE / self.corner_radius).atan();
        let power = self.power_gain * self.speed * self.cornering_load.max(1.0);
        [w, h, steer, power]
    }
}

/// A series with one ground-truth anomaly flag per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSeries {
    pub series: RawSeries,
    pub anomaly: Vec<bool>,
}

impl LabeledSeries {
    pub fn validate(&self) -> Result<()> {
        self.series.validate()?;
        if self.anomaly.len() != self.series.len() {
            return Err(Error::LengthMismatch {
                left: self.series.len(),
                right: self.anomaly.len(),
            });
        }
        Ok(())
    }
}

/// Piecewise-linear speed profile over time.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeedProfile {
    /// `(t_start, v_start)` knots; speed is linear between knots and constant
    /// after the last.
    knots: Vec<(f64, f64)>,
}

impl SpeedProfile {
    pub fn constant(v: f64) -> Self {
        SpeedProfile { knots: vec![(0.0, v)] }
    }

    fn push(&mut self, t: f64, v: f64) {
        self.knots.push((t, v));
    }

    pub fn speed(&self, t: f64) -> f64 {
        let i = self.knots.partition_point(|k| k.0 <= t);
        if i == 0 {
            return self.knots[0].1;
        }
        if i == self.knots.len() {
            return self.knots[i - 1].1;
        }
        let (t0, v0) = self.knots[i - 1];
        let (t1, v1) = self.knots[i];
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }

    /// Distance travelled since `t = 0`.
    pub fn distance(&self, t: f64) -> f64 {
        let mut d = 0.0;
        let mut prev = (0.0, self.knots[0].1);
        for &(tk, vk) in &self.knots[1..] {
            if tk >= t {
                let v_t = self.speed(t);
                return d + 0.5 * (prev.1 + v_t) * (t - prev.0);
            }
            d += 0.5 * (prev.1 + vk) * (tk - prev.0);
            prev = (tk, vk);
        }
        d + prev.1 * (t - prev.0)
    }
}

fn sample_vehicle(
    spec: &TrackSpec,
    agent: &str,
    arc: impl Fn(f64) -> f64,
    speed: impl Fn(f64) -> f64,
    noise_sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<RawSeries> {
    if !(noise_sigma >= 0.0) {
        return Err(Error::InvalidParameter("noise sigma must be non-negative".into()));
    }
    let dt = spec.dt();
    let n = spec.n_samples();
    let spans = spec.channel_spans();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut ts = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    for k in 0..n {
        let t = k as f64 * dt;
        let s = arc(t);
        let (x, y) = spec.position(s);
        let mut row = [x, y, spec.steering(s), spec.power(s, speed(t))];
        if noise_sigma > 0.0 {
            for (c, v) in row.iter_mut().enumerate() {
                *v += noise_sigma * spans[c] * normal.sample(rng);
            }
        }
        ts.push(t);
        rows.push(row);
    }
    RawSeries::from_rows(agent, ts, &rows)
}

/// One vehicle circulating at constant speed, `agent_offset` metres behind
/// the start line. Labels are all false.
pub fn generate_perimeter(
    spec: &TrackSpec,
    agent_id: &str,
    agent_offset: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<LabeledSeries> {
    spec.validate()?;
    let l = spec.perimeter();
    if !(0.0..l).contains(&agent_offset) {
        return Err(Error::InvalidParameter(format!(
            "agent offset {agent_offset} must lie in [0, perimeter {l:.3})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spl = spec.samples_per_lap;
    let v = spec.speed;
    // arc length on the exact sample lattice keeps laps bit-periodic
    let step = l / spl as f64;
    let dt = spec.dt();
    let arc = |t: f64| {
        let k = (t / dt).round() as usize;
        ((k % spl) as f64 * step - agent_offset).rem_euclid(l)
    };
    let series = sample_vehicle(spec, agent_id, arc, |_| v, noise_sigma, &mut rng)?;
    let n = series.len();
    Ok(LabeledSeries { series, anomaly: vec![false; n] })
}

/// Leader/follower pair on the perimeter track.
pub fn generate_platoon(spec: &TrackSpec, offset: f64, noise_sigma: f64, seed: u64) -> Result<(LabeledSeries, LabeledSeries)> {
    let leader = generate_perimeter(spec, "leader", 0.0, noise_sigma, crate::derive_seed(seed, 0))?;
    let follower = generate_perimeter(spec, "follower", offset, noise_sigma, crate::derive_seed(seed, 1))?;
    Ok((leader, follower))
}

/// Follower gap oscillating as `mean + amplitude * sin(2 pi t / period)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapProfile {
    pub mean: f64,
    pub amplitude: f64,
    pub period: f64,
}

/// Leader at constant speed and a follower whose gap varies over time, for
/// distance-dependent link experiments.
pub fn generate_varying_gap(
    spec: &TrackSpec,
    gap: &GapProfile,
    noise_sigma: f64,
    seed: u64,
) -> Result<(LabeledSeries, LabeledSeries)> {
    spec.validate()?;
    let omega = 2.0 * PI / gap.period;
    if !(gap.period > 0.0) || !(gap.mean - gap.amplitude.abs() > 0.0) {
        return Err(Error::InvalidParameter("gap must stay positive and period be positive".into()));
    }
    if gap.amplitude.abs() * omega >= spec.speed {
        return Err(Error::InvalidParameter("gap oscillation would stop or reverse the follower".into()));
    }
    if gap.mean + gap.amplitude.abs() >= spec.perimeter() {
        return Err(Error::InvalidParameter("gap exceeds the track perimeter".into()));
    }
    let v = spec.speed;
    let l = spec.perimeter();
    let leader_arc = |t: f64| (v * t).rem_euclid(l);
    let g = |t: f64| gap.mean + gap.amplitude * (omega * t).sin();
    let follower_arc = |t: f64| (v * t - g(t)).rem_euclid(l);
    let follower_speed = |t: f64| v - gap.amplitude * omega * (omega * t).cos();
    let mut rng_l = ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, 0));
    let mut rng_f = ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, 1));
    let leader = sample_vehicle(spec, "leader", leader_arc, |_| v, noise_sigma, &mut rng_l)?;
    let follower = sample_vehicle(spec, "follower", follower_arc, follower_speed, noise_sigma, &mut rng_f)?;
    let n = leader.len();
    Ok((
        LabeledSeries { series: leader, anomaly: vec![false; n] },
        LabeledSeries { series: follower, anomaly: vec![false; n] },
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstopSpec {
    /// Brake point as a fraction of the whole run's path length.
    pub stop_at: f64,
    pub stop_duration: f64,
    pub follower_decel: f64,
    pub follower_offset: f64,
    pub reaction_delay: f64,
    /// Leader brake and restart ramps, in samples.
    pub leader_ramp_samples: usize,
    pub noise_sigma: f64,
}

impl Default for EstopSpec {
    fn default() -> Self {
        EstopSpec {
            stop_at: 2.0 / 3.0,
            stop_duration: 2.0,
            follower_decel: 0.75,
            follower_offset: 8.0,
            reaction_delay: 0.5,
            leader_ramp_samples: 2,
            noise_sigma: DEFAULT_NOISE_SIGMA,
        }
    }
}

/// Default per-channel noise on the normalized scale.
pub const DEFAULT_NOISE_SIGMA: f64 = 5e-4;

/// Leader emergency stop with a gently braking follower.
///
/// The leader brakes to zero within `leader_ramp_samples`, waits for
/// `stop_duration` and returns to cruise speed over the same ramp. The
/// follower reacts after `reaction_delay`, decelerates at `follower_decel`
/// until the leader restarts (plus the delay) and then accelerates back at
/// the same rate. Labels cover each vehicle from brake start until its cruise
/// speed is restored.
pub fn generate_emergency_stop(spec: &TrackSpec, estop: &EstopSpec, seed: u64) -> Result<(LabeledSeries, LabeledSeries)> {
    spec.validate()?;
    let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
    if !(estop.stop_at > 0.0 && estop.stop_at < 1.0) {
        return bad("stop_at must lie strictly between 0 and 1");
    }
    if !(estop.stop_duration > 0.0) {
        return bad("stop duration must be positive");
    }
    if !(estop.follower_decel > 0.0) || !(estop.reaction_delay >= 0.0) {
        return bad("follower deceleration must be positive and reaction delay non-negative");
    }
    if estop.leader_ramp_samples < 1 {
        return bad("leader ramp needs at least one sample");
    }
    let l = spec.perimeter();
    if !(estop.follower_offset > 0.0 && estop.follower_offset < l) {
        return bad("follower offset must lie inside the perimeter");
    }
    let v = spec.speed;
    let dt = spec.dt();
    let ramp = estop.leader_ramp_samples as f64 * dt;
    let run_time = spec.n_samples() as f64 * dt;
    // snap the brake onset to a sample so the label block is exact
    let t_brake = ((estop.stop_at * run_time) / dt).round() * dt;
    let t_stop = t_brake + ramp;
    let t_go = t_stop + estop.stop_duration;
    let t_cruise = t_go + ramp;
    if t_cruise >= run_time - dt {
        return bad("stop window does not fit inside the run");
    }
    let mut leader_v = SpeedProfile::constant(v);
    leader_v.push(t_brake, v);
    leader_v.push(t_stop, 0.0);
    leader_v.push(t_go, 0.0);
    leader_v.push(t_cruise, v);

    let a = estop.follower_decel;
    let f_brake = t_brake + estop.reaction_delay;
    let f_release = t_go + estop.reaction_delay;
    let brake_span = (f_release - f_brake).min(v / a);
    let v_min = v - a * brake_span;
    let f_low = f_brake + brake_span;
    let mut follower_v = SpeedProfile::constant(v);
    follower_v.push(f_brake, v);
    follower_v.push(f_low, v_min);
    if f_release > f_low {
        follower_v.push(f_release, v_min);
    }
    let f_resume = f_low.max(f_release);
    let f_cruise = f_resume + (v - v_min) / a;
    follower_v.push(f_cruise, v);
    if f_cruise >= run_time - dt {
        return bad("follower recovery does not fit inside the run");
    }

    let offset = estop.follower_offset;
    let n = spec.n_samples();
    for k in 0..n {
        let t = k as f64 * dt;
        let gap = offset + leader_v.distance(t) - follower_v.distance(t);
        if gap < 1.0 {
            return bad("follower would close within one metre of the leader");
        }
    }

    let mut rng_l = ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, 0));
    let mut rng_f = ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, 1));
    let leader_series = sample_vehicle(
        spec,
        "leader",
        |t| leader_v.distance(t).rem_euclid(l),
        |t| leader_v.speed(t),
        estop.noise_sigma,
        &mut rng_l,
    )?;
    let follower_series = sample_vehicle(
        spec,
        "follower",
        |t| (follower_v.distance(t) - offset).rem_euclid(l),
        |t| follower_v.speed(t),
        estop.noise_sigma,
        &mut rng_f,
    )?;
    let eps = 1e-9;
    let label = |from: f64, to: f64| -> Vec<bool> {
        (0..n)
            .map(|k| {
                let t = k as f64 * dt;
                t >= from - eps && t <= to + eps
            })
            .collect()
    };
    Ok((
        LabeledSeries { anomaly: label(t_brake, t_cruise), series: leader_series },
        LabeledSeries { anomaly: label(f_brake, f_cruise), series: follower_series },
    ))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: line as u64,
        message: message.into(),
    }
}

/// Reads a `t,x,y,steering,power` CSV. The agent id is the file stem.
pub fn load_csv(path: &Path) -> Result<RawSeries> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let t_col = find("t").ok_or_else(|| parse_err(path, 1, "missing column `t`"))?;
    let mut cols = [0usize; 4];
    for (c, name) in CHANNELS.iter().enumerate() {
        cols[c] = find(name).ok_or_else(|| parse_err(path, 1, format!("missing column `{name}`")))?;
    }
    let mut ts = Vec::new();
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(path, line, e.to_string()))?;
        let cell = |c: usize, name: &str| -> Result<f64> {
            let raw = rec.get(c).ok_or_else(|| parse_err(path, line, format!("missing value for `{name}`")))?;
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(path, line, format!("`{name}` is not a finite number: {raw:?}")))
        };
        ts.push(cell(t_col, "t")?);
        let mut row = [0.0; 4];
        for (c, name) in CHANNELS.iter().enumerate() {
            row[c] = cell(cols[c], name)?;
        }
        rows.push(row);
    }
    let agent = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    RawSeries::from_rows(agent, ts, &rows)
}

pub fn csv_bytes(series: &RawSeries) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "x", "y", "steering", "power"])?;
    for k in 0..series.len() {
        let row = series.row(k);
        let mut rec = vec![series.timestamps[k].to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn write_csv(path: &Path, series: &RawSeries) -> Result<()> {
    write_atomic(path, &csv_bytes(series)?)
}

/// Sibling label path: `<dir>/<stem>.labels.csv`.
pub fn labels_path(data_path: &Path) -> std::path::PathBuf {
    let stem = data_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    data_path.with_file_name(format!("{stem}.labels.csv"))
}

pub fn write_labels(path: &Path, timestamps: &[f64], anomaly: &[bool]) -> Result<()> {
    if timestamps.len() != anomaly.len() {
        return Err(Error::LengthMismatch {
            left: timestamps.len(),
            right: anomaly.len(),
        });
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "anomaly"])?;
    for (t, a) in timestamps.iter().zip(anomaly) {
        w.write_record([t.to_string(), (*a as u8).to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

pub fn load_labels(path: &Path) -> Result<(Vec<f64>, Vec<bool>)> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let t_col = headers.iter().position(|h| h == "t").ok_or_else(|| parse_err(path, 1, "missing column `t`"))?;
    let a_col = headers
        .iter()
        .position(|h| h == "anomaly")
        .ok_or_else(|| parse_err(path, 1, "missing column `anomaly`"))?;
    let mut ts = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(path, line, e.to_string()))?;
        let t = rec
            .get(t_col)
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| parse_err(path, line, "`t` is not a number"))?;
        let a = match rec.get(a_col) {
            Some("1") | Some("true") => true,
            Some("0") | Some("false") => false,
            other => return Err(parse_err(path, line, format!("bad anomaly flag {other:?}"))),
        };
        ts.push(t);
        labels.push(a);
    }
    Ok((ts, labels))
}

pub fn write_labeled(path: &Path, data: &LabeledSeries) -> Result<()> {
    data.validate()?;
    write_csv(path, &data.series)?;
    write_labels(&labels_path(path), &data.series.timestamps, &data.anomaly)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(laps: usize) -> TrackSpec {
        TrackSpec { laps, ..TrackSpec::default() }
    }

    #[test]
    fn sample_counts_and_dt() {
        let s = spec(4);
        let d = generate_perimeter(&s, "leader", 0.0, 0.0, 1).unwrap();
        assert_eq!(d.series.len(), 3200);
        assert!((s.dt() * s.speed * 800.0 - s.perimeter()).abs() < 1e-9);
    }

    #[test]
    fn zero_noise_is_periodic() {
        let s = spec(3);
        let d = generate_perimeter(&s, "leader", 0.0, 0.0, 1).unwrap();
        for k in 0..800 {
            assert_eq!(d.series.row(k), d.series.row(k + 800));
            assert_eq!(d.series.row(k), d.series.row(k + 1600));
        }
    }

    #[test]
    fn follower_is_shifted_leader() {
        let s = spec(2);
        // offset of a whole number of samples
        let step = s.perimeter() / 800.0;
        let lag = 37;
        let l = generate_perimeter(&s, "leader", 0.0, 0.0, 1).unwrap();
        let f = generate_perimeter(&s, "follower", lag as f64 * step, 0.0, 1).unwrap();
        for k in lag..1600 {
            let a = f.series.row(k);
            let b = l.series.row(k - lag);
            for c in 0..4 {
                assert!((a[c] - b[c]).abs() < 1e-9, "k={k} c={c}");
            }
        }
    }

    #[test]
    fn steering_zero_on_straights_positive_on_arcs() {
        let s = spec(1);
        let (a, _) = s.straight_lengths();
        assert_eq!(s.steering(a / 2.0), 0.0);
        let arc_mid = a + FRAC_PI_2 * s.corner_radius / 2.0;
        assert!((s.steering(arc_mid) - (1.2f64 / 3.0).atan()).abs() < 1e-12);
        // ramp midpoint at the arc boundary
        assert!((s.smoothed_curvature(a) - 0.5 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn trajectory_inside_arena() {
        let s = spec(1);
        let d = generate_perimeter(&s, "leader", 0.0, 0.0, 1).unwrap();
        for k in 0..d.series.len() {
            let [x, y, _, _] = d.series.row(k);
            assert!((0.0..=38.0).contains(&x) && (0.0..=33.0).contains(&y));
        }
    }

    #[test]
    fn offset_beyond_perimeter_rejected() {
        let s = spec(1);
        assert!(generate_perimeter(&s, "f", s.perimeter(), 0.0, 1).is_err());
    }

    #[test]
    fn speed_profile_integrates_trapezoids() {
        let mut p = SpeedProfile::constant(2.0);
        p.push(1.0, 2.0);
        p.push(2.0, 0.0);
        assert!((p.distance(1.0) - 2.0).abs() < 1e-12);
        assert!((p.distance(2.0) - 3.0).abs() < 1e-12);
        assert!((p.distance(5.0) - 3.0).abs() < 1e-12);
        assert!((p.speed(1.5) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn estop_labels_and_decelerations() {
        let s = spec(1);
        let e = EstopSpec { noise_sigma: 0.0, ..EstopSpec::default() };
        let (l, f) = generate_emergency_stop(&s, &e, 3).unwrap();
        for lab in [&l.anomaly, &f.anomaly] {
            let first = lab.iter().position(|&a| a).unwrap();
            let last = lab.iter().rposition(|&a| a).unwrap();
            assert!(lab[first..=last].iter().all(|&a| a));
        }
        // leader stationary during the stop
        let first = l.anomaly.iter().position(|&a| a).unwrap();
        let k = first + 2 + 5;
        assert_eq!(l.series.row(k)[0], l.series.row(k + 1)[0]);
        assert_eq!(l.series.row(k)[3], 0.0);
        let dt = s.dt();
        let max_decel = |d: &LabeledSeries| {
            let pos: Vec<(f64, f64)> = (0..d.series.len()).map(|k| (d.series.row(k)[0], d.series.row(k)[1])).collect();
            let v: Vec<f64> = pos.windows(2).map(|w| ((w[1].0 - w[0].0).hypot(w[1].1 - w[0].1)) / dt).collect();
            v.windows(2).map(|w| (w[0] - w[1]) / dt).fold(0.0, f64::max)
        };
        assert!(max_decel(&f) < max_decel(&l));
    }

    #[test]
    fn estop_rejects_zero_duration() {
        let e = EstopSpec { stop_duration: 0.0, ..EstopSpec::default() };
        assert!(generate_emergency_stop(&spec(1), &e, 1).is_err());
    }

    #[test]
    fn varying_gap_stays_in_bounds() {
        let g = GapProfile { mean: 30.0, amplitude: 20.0, period: 100.0 };
        let (l, f) = generate_varying_gap(&spec(2), &g, 0.0, 1).unwrap();
        assert_eq!(l.series.len(), f.series.len());
        let bad = GapProfile { mean: 30.0, amplitude: 20.0, period: 10.0 };
        assert!(generate_varying_gap(&spec(2), &bad, 0.0, 1).is_err());
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("leader.csv");
        let d = generate_perimeter(&spec(1), "leader", 0.0, 1e-3, 9).unwrap();
        write_labeled(&path, &d).unwrap();
        let back = load_csv(&path).unwrap();
        assert_eq!(back, d.series);
        let (_, labels) = load_labels(&labels_path(&path)).unwrap();
        assert_eq!(labels, d.anomaly);

        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "t,x,y,steering\n0,1,2,3\n").unwrap();
        let msg = load_csv(&bad).unwrap_err().to_string();
        assert!(msg.contains("power"), "{msg}");
        std::fs::write(&bad, "t,x,y,steering,power\n0,1,2,3,4\n1,1,zz,3,4\n").unwrap();
        let msg = load_csv(&bad).unwrap_err().to_string();
        assert!(msg.contains("line 3"), "{msg}");
        std::fs::write(&bad, "t,x,y,steering,power\n0,1,2,3,4\n1,1,2,3,4\n2,1,2,3,4\n").unwrap();
        assert_eq!(load_csv(&bad).unwrap().len(), 3);
    }
}
