//! Sensor series ingestion and the continuous state layer.
//!
//! A [`RawSeries`] holds the four fixed channels `x, y, steering, power`.
//! Training selects a [`ChannelSet`] from them, normalizes with min-max
//! parameters learned on the training data, lifts every sample to a
//! generalized state (value block followed by derivative blocks) and runs the
//! null-force filter whose innovations feed clustering.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Channel names in storage order.
pub const CHANNELS: [&str; 4] = ["x", "y", "steering", "power"];

/// Timestamped multi-channel measurements of one agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawSeries {
    pub agent_id: String,
    pub timestamps: Vec<f64>,
    /// One column per entry of [`CHANNELS`], each as long as `timestamps`.
    pub columns: Vec<Vec<f64>>,
}

impl RawSeries {
    /// Builds a validated series.
    pub fn new(agent_id: impl Into<String>, timestamps: Vec<f64>, columns: Vec<Vec<f64>>) -> Result<Self> {
        let s = RawSeries {
            agent_id: agent_id.into(),
            timestamps,
            columns,
        };
        s.validate()?;
        Ok(s)
    }

    /// Builds a series from per-sample rows `[x, y, steering, power]`.
    pub fn from_rows(agent_id: impl Into<String>, timestamps: Vec<f64>, rows: &[[f64; 4]]) -> Result<Self> {
        let mut columns = vec![Vec::with_capacity(rows.len()); CHANNELS.len()];
        for r in rows {
            for (c, v) in r.iter().enumerate() {
                columns[c].push(*v);
            }
        }
        Self::new(agent_id, timestamps, columns)
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Checks the column count, equal lengths, strictly increasing time and
    /// finite values.
    pub fn validate(&self) -> Result<()> {
        if self.columns.len() != CHANNELS.len() {
            return Err(Error::DimensionMismatch {
                expected: CHANNELS.len(),
                got: self.columns.len(),
            });
        }
        for col in &self.columns {
            if col.len() != self.timestamps.len() {
                return Err(Error::LengthMismatch {
                    left: col.len(),
                    right: self.timestamps.len(),
                });
            }
        }
        for (i, w) in self.timestamps.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(Error::NonMonotonicTime {
                    agent: self.agent_id.clone(),
                    index: i + 1,
                });
            }
        }
        let finite = self.timestamps.iter().chain(self.columns.iter().flatten()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter(format!(
                "series `{}` contains non-finite values",
                self.agent_id
            )));
        }
        Ok(())
    }

    /// All four channel values at sample `k`.
    pub fn row(&self, k: usize) -> [f64; 4] {
        [self.columns[0][k], self.columns[1][k], self.columns[2][k], self.columns[3][k]]
    }

    /// Selected channels at sample `k`.
    pub fn sample(&self, k: usize, channels: &ChannelSet) -> Vec<f64> {
        channels.indices().iter().map(|&c| self.columns[c][k]).collect()
    }

    /// Selected channels for every sample.
    pub fn state_vectors(&self, channels: &ChannelSet) -> Vec<Vec<f64>> {
        (0..self.len()).map(|k| self.sample(k, channels)).collect()
    }

    /// Sampling interval when the grid is uniform to within `1e-6` relative.
    pub fn uniform_dt(&self) -> Option<f64> {
        if self.len() < 2 {
            return None;
        }
        let span = self.timestamps[self.len() - 1] - self.timestamps[0];
        let dt = span / (self.len() - 1) as f64;
        let uniform = self
            .timestamps
            .windows(2)
            .all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-6 * dt.max(1e-12));
        uniform.then_some(dt)
    }
}

/// Ordered subset of [`CHANNELS`] used as the state vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct ChannelSet(Vec<usize>);

impl ChannelSet {
    /// `[x, y, steering, power]`.
    pub fn all() -> Self {
        ChannelSet(vec![0, 1, 2, 3])
    }

    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let mut idx = Vec::with_capacity(names.len());
        for n in names {
            let n = n.as_ref().trim();
            let i = CHANNELS
                .iter()
                .position(|c| *c == n)
                .ok_or_else(|| Error::InvalidParameter(format!("unknown channel `{n}`")))?;
            if idx.contains(&i) {
                return Err(Error::InvalidParameter(format!("channel `{n}` listed twice")));
            }
            idx.push(i);
        }
        if idx.is_empty() {
            return Err(Error::InvalidParameter("empty channel set".into()));
        }
        Ok(ChannelSet(idx))
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn names(&self) -> Vec<String> {
        self.0.iter().map(|&i| CHANNELS[i].to_string()).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Positions (within this set) of the `x` and `y` channels.
    pub fn position_slots(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &c)| c < 2)
            .map(|(slot, _)| slot)
            .collect()
    }
}

impl Default for ChannelSet {
    fn default() -> Self {
        Self::all()
    }
}

impl TryFrom<Vec<String>> for ChannelSet {
    type Error = Error;
    fn try_from(v: Vec<String>) -> Result<Self> {
        ChannelSet::from_names(&v)
    }
}

impl From<ChannelSet> for Vec<String> {
    fn from(c: ChannelSet) -> Self {
        c.names()
    }
}

/// Resamples every series onto one shared grid `{k * dt}` inside the common
/// time window, by linear interpolation.
pub fn synchronize(series_list: &[RawSeries], dt: f64) -> Result<Vec<RawSeries>> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    if series_list.is_empty() {
        return Ok(Vec::new());
    }
    for s in series_list {
        s.validate()?;
        if s.is_empty() {
            return Err(Error::NoCommonSpan);
        }
    }
    let start = series_list.iter().map(|s| s.timestamps[0]).fold(f64::NEG_INFINITY, f64::max);
    let end = series_list
        .iter()
        .map(|s| s.timestamps[s.len() - 1])
        .fold(f64::INFINITY, f64::min);
    if start > end {
        return Err(Error::NoCommonSpan);
    }
    let eps = 1e-9;
    let k0 = (start / dt - eps).ceil() as i64;
    let k1 = (end / dt + eps).floor() as i64;
    if k1 < k0 {
        return Err(Error::NoCommonSpan);
    }
    let grid: Vec<f64> = (k0..=k1).map(|k| k as f64 * dt).collect();

    series_list
        .iter()
        .map(|s| {
            let columns = s.columns.iter().map(|col| interpolate(&s.timestamps, col, &grid)).collect();
            Ok(RawSeries {
                agent_id: s.agent_id.clone(),
                timestamps: grid.clone(),
                columns,
            })
        })
        .collect()
}

/// Piecewise-linear interpolation of `(ts, vs)` at sorted query times, with
/// clamping at the ends.
fn interpolate(ts: &[f64], vs: &[f64], query: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(query.len());
    let mut i = 0;
    for &t in query {
        while i + 1 < ts.len() && ts[i + 1] < t {
            i += 1;
        }
        if t <= ts[0] {
            out.push(vs[0]);
        } else if i + 1 >= ts.len() {
            out.push(vs[ts.len() - 1]);
        } else {
            let (t0, t1) = (ts[i], ts[i + 1]);
            let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
            out.push(vs[i] + w * (vs[i + 1] - vs[i]));
        }
    }
    out
}

/// Per-channel min-max parameters over all four storage channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormalizationParams {
    pub fn apply(&self, channel: usize, v: f64) -> f64 {
        (v - self.min[channel]) / (self.max[channel] - self.min[channel])
    }

    pub fn invert(&self, channel: usize, v: f64) -> f64 {
        self.min[channel] + v * (self.max[channel] - self.min[channel])
    }

    /// Normalizes a full `[x, y, steering, power]` row and keeps `channels`.
    pub fn apply_row(&self, row: &[f64; 4], channels: &ChannelSet) -> Vec<f64> {
        channels.indices().iter().map(|&c| self.apply(c, row[c])).collect()
    }

    /// Normalizes another series with these (training) parameters. Values
    /// outside the training range are kept as they are.
    pub fn normalize(&self, series: &RawSeries) -> RawSeries {
        let columns = series
            .columns
            .iter()
            .enumerate()
            .map(|(c, col)| col.iter().map(|&v| self.apply(c, v)).collect())
            .collect();
        RawSeries {
            agent_id: series.agent_id.clone(),
            timestamps: series.timestamps.clone(),
            columns,
        }
    }

    pub fn denormalize(&self, series: &RawSeries) -> RawSeries {
        let columns = series
            .columns
            .iter()
            .enumerate()
            .map(|(c, col)| col.iter().map(|&v| self.invert(c, v)).collect())
            .collect();
        RawSeries {
            agent_id: series.agent_id.clone(),
            timestamps: series.timestamps.clone(),
            columns,
        }
    }
}

/// Min-max normalizes every channel to `[0, 1]` and returns the parameters.
pub fn normalize(series: &RawSeries) -> Result<(RawSeries, NormalizationParams)> {
    series.validate()?;
    if series.is_empty() {
        return Err(Error::TooFewSamples { need: 1, got: 0 });
    }
    let mut min = Vec::with_capacity(CHANNELS.len());
    let mut max = Vec::with_capacity(CHANNELS.len());
    for (c, col) in series.columns.iter().enumerate() {
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            return Err(Error::DegenerateChannel(CHANNELS[c].to_string()));
        }
        min.push(lo);
        max.push(hi);
    }
    let params = NormalizationParams { min, max };
    Ok((params.normalize(series), params))
}

/// A state vector followed by its time derivatives up to `order`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedState {
    pub x: Vec<f64>,
    pub order: usize,
    pub dt: f64,
}

impl GeneralizedState {
    /// Number of base channels `j`.
    pub fn base_dim(&self) -> usize {
        self.x.len() / (self.order + 1)
    }

    /// Block `l` (0 = values, 1 = first derivative, ...).
    pub fn block(&self, l: usize) -> &[f64] {
        let j = self.base_dim();
        &self.x[l * j..(l + 1) * j]
    }
}

/// The generalized states of all agents at one instant, in agent order.
#[derive(Clone, Debug, PartialEq)]
pub struct CollectiveState {
    pub agents: Vec<GeneralizedState>,
}

/// Zips per-agent sequences into collective states.
pub fn collective_states(per_agent: &[Vec<GeneralizedState>]) -> Result<Vec<CollectiveState>> {
    let n = per_agent.first().map_or(0, Vec::len);
    if let Some(bad) = per_agent.iter().find(|s| s.len() != n) {
        return Err(Error::LengthMismatch { left: bad.len(), right: n });
    }
    Ok((0..n)
        .map(|k| CollectiveState {
            agents: per_agent.iter().map(|s| s[k].clone()).collect(),
        })
        .collect())
}

/// Lifts samples to generalized states with backward differences. The
/// derivative blocks of the first sample are zero.
pub fn generalized_states(samples: &[Vec<f64>], order: usize, dt: f64) -> Result<Vec<GeneralizedState>> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    if order < 1 {
        return Err(Error::InvalidParameter("derivative order must be at least 1".into()));
    }
    if samples.len() < 2 {
        return Err(Error::TooFewSamples {
            need: 2,
            got: samples.len(),
        });
    }
    let j = samples[0].len();
    if let Some(bad) = samples.iter().find(|s| s.len() != j) {
        return Err(Error::DimensionMismatch {
            expected: j,
            got: bad.len(),
        });
    }

    let mut out: Vec<GeneralizedState> = Vec::with_capacity(samples.len());
    for (k, s) in samples.iter().enumerate() {
        let mut x = vec![0.0; j * (order + 1)];
        x[..j].copy_from_slice(s);
        if k > 0 {
            let prev = &out[k - 1].x;
            for l in 1..=order {
                for d in 0..j {
                    x[l * j + d] = (x[(l - 1) * j + d] - prev[(l - 1) * j + d]) / dt;
                }
            }
        }
        out.push(GeneralizedState { x, order, dt });
    }
    Ok(out)
}

/// A filtered state with the null-force prediction error of its derivative.
#[derive(Clone, Debug, PartialEq)]
pub struct InnovationSample {
    pub state: GeneralizedState,
    pub error: Vec<f64>,
}

/// Runs the single-model filter that assumes no state change. Its
/// prediction of the derivative block is zero, so the innovation equals the
/// observed first derivative.
pub fn null_force_filter(states: &[GeneralizedState]) -> Result<Vec<InnovationSample>> {
    let Some(first) = states.first() else {
        return Ok(Vec::new());
    };
    let j = first.base_dim();
    states
        .iter()
        .map(|s| {
            if s.x.len() != j * (s.order + 1) || s.base_dim() != j {
                return Err(Error::DimensionMismatch {
                    expected: j * (s.order + 1),
                    got: s.x.len(),
                });
            }
            let error = s.block(1).to_vec();
            Ok(InnovationSample { state: s.clone(), error })
        })
        .collect()
}
