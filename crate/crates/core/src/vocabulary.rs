//! The discrete layer of the switching model and the model file.
//!
//! A word pairs a state letter with a derivative letter. Each word owns a
//! linear model `X' = A X + B U + w` with
//!
//! ```text
//! A = | I  0 |      B = | I*dt |
//!     | 0  0 |          | I    |
//! ```
//!
//! so the value block advances by `U * dt` and the derivative block is reset
//! to the letter's mean derivative `U`. Word-to-word switching follows a
//! row-stochastic transition matrix counted from the training sequence.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::gng::{self, GngParams, NodeSet};
use crate::statespace::{self, ChannelSet, InnovationSample, NormalizationParams, RawSeries};
use crate::{derive_seed, io, Error, Result};

/// Version tag written into every model file.
pub const MODEL_FORMAT: &str = "camjpf-model/1";
/// Additive smoothing applied to transition counts.
pub const TRANSITION_SMOOTHING: f64 = 1e-6;
/// Lower bound on every process-noise variance.
pub const Q_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Word {
    pub id: usize,
    pub state_letter: usize,
    pub deriv_letter: usize,
}

/// Dense row-major word transition probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub rows: Vec<Vec<f64>>,
}

impl TransitionMatrix {
    pub fn n_words(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i][j]
    }

    /// Checks squareness, `[0, 1]` entries and unit row sums (1e-9).
    pub fn validate(&self) -> Result<()> {
        let n = self.rows.len();
        for (i, r) in self.rows.iter().enumerate() {
            if r.len() != n {
                return Err(Error::InvalidModel(format!("transition row {i} has {} entries, expected {n}", r.len())));
            }
            if r.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::InvalidModel(format!("transition row {i} has entries outside [0, 1]")));
            }
            let sum: f64 = r.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidModel(format!("transition row {i} sums to {sum}")));
            }
        }
        Ok(())
    }
}

/// Counts `i -> j` transitions with additive smoothing. A word that is never
/// left in the sequence gets a uniform row.
pub fn estimate_transition_matrix(word_sequence: &[usize], n_words: usize) -> Result<TransitionMatrix> {
    if word_sequence.len() < 2 {
        return Err(Error::TooFewSamples {
            need: 2,
            got: word_sequence.len(),
        });
    }
    if let Some(&id) = word_sequence.iter().find(|&&w| w >= n_words) {
        return Err(Error::WordOutOfRange { id, n_words });
    }
    let mut counts = vec![vec![0.0f64; n_words]; n_words];
    for w in word_sequence.windows(2) {
        counts[w[0]][w[1]] += 1.0;
    }
    let rows = counts
        .into_iter()
        .map(|row| {
            let total: f64 = row.iter().sum();
            let denom = total + TRANSITION_SMOOTHING * n_words as f64;
            let mut r: Vec<f64> = row.iter().map(|c| (c + TRANSITION_SMOOTHING) / denom).collect();
            // absorb rounding so each row sums to one
            let s: f64 = r.iter().sum();
            r.iter_mut().for_each(|p| *p /= s);
            r
        })
        .collect();
    Ok(TransitionMatrix { rows })
}

/// Letter assignments of every innovation sample: (state letter, deriv letter).
pub fn letter_sequence(
    state_nodes: &NodeSet,
    deriv_nodes: &NodeSet,
    innovations: &[InnovationSample],
) -> Result<Vec<(usize, usize)>> {
    innovations
        .iter()
        .map(|s| {
            Ok((
                gng::assign(state_nodes, s.state.block(0))?,
                gng::assign(deriv_nodes, &s.error)?,
            ))
        })
        .collect()
}

/// One word per letter pair observed in the innovation sequence, ordered by
/// (state letter, deriv letter).
pub fn build_words(state_nodes: &NodeSet, deriv_nodes: &NodeSet, innovations: &[InnovationSample]) -> Result<Vec<Word>> {
    if innovations.is_empty() {
        return Err(Error::TooFewSamples { need: 1, got: 0 });
    }
    let mut pairs = letter_sequence(state_nodes, deriv_nodes, innovations)?;
    pairs.sort_unstable();
    pairs.dedup();
    Ok(pairs
        .into_iter()
        .enumerate()
        .map(|(id, (s, d))| Word {
            id,
            state_letter: s,
            deriv_letter: d,
        })
        .collect())
}

/// Word id of every innovation sample.
pub fn word_sequence(
    words: &[Word],
    state_nodes: &NodeSet,
    deriv_nodes: &NodeSet,
    innovations: &[InnovationSample],
) -> Result<Vec<usize>> {
    let pairs = letter_sequence(state_nodes, deriv_nodes, innovations)?;
    pairs
        .into_iter()
        .map(|(s, d)| {
            words
                .binary_search_by(|w| (w.state_letter, w.deriv_letter).cmp(&(s, d)))
                .map(|i| words[i].id)
                .map_err(|_| Error::InvalidModel(format!("letter pair ({s}, {d}) has no word")))
        })
        .collect()
}

/// Linear-Gaussian dynamics of one word, stored as row-major matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicModel {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub u: Vec<f64>,
    pub q: Vec<Vec<f64>>,
}

fn to_dmatrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(nr, nc, |i, j| rows[i][j])
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl DynamicModel {
    /// Base dimension `j`.
    pub fn base_dim(&self) -> usize {
        self.u.len()
    }

    pub fn a_matrix(&self) -> DMatrix<f64> {
        to_dmatrix(&self.a)
    }

    pub fn b_matrix(&self) -> DMatrix<f64> {
        to_dmatrix(&self.b)
    }

    pub fn q_matrix(&self) -> DMatrix<f64> {
        to_dmatrix(&self.q)
    }

    pub fn u_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.u)
    }

    /// `A x + B U` for a generalized state `x` of length `2j`.
    pub fn predict_mean(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = 2 * self.base_dim();
        if x.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: x.len() });
        }
        let out = self.a_matrix() * DVector::from_column_slice(x) + self.b_matrix() * self.u_vector();
        Ok(out.iter().copied().collect())
    }

    /// Checks the block structure of `A`, the shape of `B` and that `Q` is
    /// symmetric with a non-negative diagonal.
    pub fn validate(&self) -> Result<()> {
        let j = self.base_dim();
        let n = 2 * j;
        let shape_ok = self.a.len() == n
            && self.a.iter().all(|r| r.len() == n)
            && self.b.len() == n
            && self.b.iter().all(|r| r.len() == j)
            && self.q.len() == n
            && self.q.iter().all(|r| r.len() == n);
        if !shape_ok {
            return Err(Error::InvalidModel("dynamic model has inconsistent shapes".into()));
        }
        for r in 0..n {
            for c in 0..n {
                let want = if r == c && r < j { 1.0 } else { 0.0 };
                if self.a[r][c] != want {
                    return Err(Error::InvalidModel(format!("A[{r}][{c}] breaks the block structure")));
                }
                if self.q[r][c] != self.q[c][r] {
                    return Err(Error::InvalidModel("Q is not symmetric".into()));
                }
            }
            if self.q[r][r] < 0.0 {
                return Err(Error::InvalidModel("Q has a negative variance".into()));
            }
        }
        Ok(())
    }
}

/// Builds the dynamics of `word` from its derivative letter: `U` is the
/// letter mean and `Q = diag(var * dt^2, var) * q_scale`, floored at
/// [`Q_FLOOR`].
pub fn dynamic_model_for(word: &Word, deriv_nodes: &NodeSet, dt: f64, q_scale: f64) -> Result<DynamicModel> {
    let node = deriv_nodes
        .nodes
        .get(word.deriv_letter)
        .ok_or_else(|| Error::InvalidModel(format!("word {} references missing letter {}", word.id, word.deriv_letter)))?;
    Ok(dynamic_model_from_moments(&node.mean, &node.var, dt, q_scale))
}

/// Linear model `A = [[I, 0], [0, 0]]`, `B = [[I dt], [I]]` with control `u`
/// and process noise `diag(var * dt^2, var) * q_scale`.
pub fn dynamic_model_from_moments(u: &[f64], var: &[f64], dt: f64, q_scale: f64) -> DynamicModel {
    let j = u.len();
    let n = 2 * j;
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, j);
    let mut q = DMatrix::zeros(n, n);
    for d in 0..j {
        a[(d, d)] = 1.0;
        b[(d, d)] = dt;
        b[(j + d, d)] = 1.0;
        q[(d, d)] = (var[d] * dt * dt * q_scale).max(Q_FLOOR);
        q[(j + d, j + d)] = (var[d] * q_scale).max(Q_FLOOR);
    }
    DynamicModel {
        a: to_rows(&a),
        b: to_rows(&b),
        u: u.to_vec(),
        q: to_rows(&q),
    }
}

/// Minimum training samples for a word to get its own derivative moments.
pub const MIN_WORD_SAMPLES: usize = 3;

/// Dynamics of every word from the innovations assigned to it: `U` is the
/// mean derivative within the word's region and the variance its spread.
/// Words with fewer than [`MIN_WORD_SAMPLES`] samples fall back to their
/// derivative letter.
pub fn word_dynamics(
    words: &[Word],
    seq: &[usize],
    innovations: &[InnovationSample],
    deriv_nodes: &NodeSet,
    dt: f64,
    q_scale: f64,
) -> Result<Vec<DynamicModel>> {
    if seq.len() != innovations.len() {
        return Err(Error::LengthMismatch {
            left: seq.len(),
            right: innovations.len(),
        });
    }
    let j = deriv_nodes.dim();
    let mut count = vec![0usize; words.len()];
    let mut sum = vec![vec![0.0; j]; words.len()];
    let mut sq = vec![vec![0.0; j]; words.len()];
    for (&w, s) in seq.iter().zip(innovations) {
        count[w] += 1;
        for d in 0..j {
            sum[w][d] += s.error[d];
            sq[w][d] += s.error[d] * s.error[d];
        }
    }
    words
        .iter()
        .map(|w| {
            let n = count[w.id];
            if n < MIN_WORD_SAMPLES {
                return dynamic_model_for(w, deriv_nodes, dt, q_scale);
            }
            let mean: Vec<f64> = sum[w.id].iter().map(|v| v / n as f64).collect();
            let var: Vec<f64> = sq[w.id]
                .iter()
                .zip(&mean)
                .map(|(s2, m)| (s2 / n as f64 - m * m).max(0.0))
                .collect();
            Ok(dynamic_model_from_moments(&mean, &var, dt, q_scale))
        })
        .collect()
}

/// Training configuration. The two GNG seeds are derived from `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub channels: ChannelSet,
    /// Resampling interval; inferred from the data when absent.
    pub dt: Option<f64>,
    pub state_gng: GngParams,
    pub deriv_gng: GngParams,
    pub q_scale: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            channels: ChannelSet::all(),
            dt: None,
            state_gng: GngParams {
                max_nodes: 150,
                utility_k: 1000.0,
                ..GngParams::default()
            },
            deriv_gng: GngParams::default(),
            q_scale: 10.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GngPair {
    pub state: GngParams,
    pub deriv: GngParams,
}

/// Everything one agent's filter needs; this is the model file content.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentModel {
    pub format: String,
    pub agent_id: String,
    pub dt: f64,
    pub channels: ChannelSet,
    pub normalization: NormalizationParams,
    pub state_nodes: NodeSet,
    pub deriv_nodes: NodeSet,
    /// Per-dimension scale the derivative letters were clustered in.
    pub deriv_scale: Vec<f64>,
    pub words: Vec<Word>,
    pub transition: TransitionMatrix,
    pub dynamics: Vec<DynamicModel>,
    pub gng_params: GngPair,
    pub q_scale: f64,
    pub seed: u64,
}

impl AgentModel {
    /// Base dimension `j` of the state vector.
    pub fn base_dim(&self) -> usize {
        self.channels.len()
    }

    pub fn n_words(&self) -> usize {
        self.words.len()
    }

    /// Normalizes a raw `[x, y, steering, power]` row into this model's
    /// observation space.
    pub fn observation(&self, row: &[f64; 4]) -> Vec<f64> {
        self.normalization.apply_row(row, &self.channels)
    }

    /// Normalized observations of a whole series.
    pub fn observations(&self, series: &RawSeries) -> Vec<Vec<f64>> {
        (0..series.len()).map(|k| self.observation(&series.row(k))).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != MODEL_FORMAT {
            return Err(Error::ModelFormat(self.format.clone()));
        }
        let j = self.base_dim();
        if self.state_nodes.is_empty() || self.deriv_nodes.is_empty() || self.words.is_empty() {
            return Err(Error::InvalidModel("model has no letters or words".into()));
        }
        if self.state_nodes.dim() != j || self.deriv_nodes.dim() != j {
            return Err(Error::InvalidModel("letter dimension does not match the channel set".into()));
        }
        if self.deriv_scale.len() != j || self.deriv_scale.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidModel("derivative scale must be positive per channel".into()));
        }
        for (i, w) in self.words.iter().enumerate() {
            if w.id != i || w.state_letter >= self.state_nodes.len() || w.deriv_letter >= self.deriv_nodes.len() {
                return Err(Error::InvalidModel(format!("word {i} is inconsistent")));
            }
        }
        if self.transition.n_words() != self.words.len() || self.dynamics.len() != self.words.len() {
            return Err(Error::InvalidModel("one transition row and one dynamic model per word required".into()));
        }
        self.transition.validate()?;
        for d in &self.dynamics {
            d.validate()?;
            if d.base_dim() != j {
                return Err(Error::InvalidModel("dynamic model dimension mismatch".into()));
            }
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidModel("dt must be positive".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        self.validate()?;
        Ok(serde_json::to_vec_pretty(self)?)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let m: AgentModel = serde_json::from_slice(bytes)?;
        m.validate()?;
        Ok(m)
    }

    /// Validates and writes the model atomically.
    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, &self.to_json()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read(path)?)
    }
}

/// Infers the resampling interval from the mean timestamp spacing.
fn infer_dt(series: &RawSeries) -> Result<f64> {
    if series.len() < 2 {
        return Err(Error::TooFewSamples {
            need: 2,
            got: series.len(),
        });
    }
    Ok(series
        .uniform_dt()
        .unwrap_or_else(|| (series.timestamps[series.len() - 1] - series.timestamps[0]) / (series.len() - 1) as f64))
}

/// Per-dimension standard deviation; degenerate dimensions get scale 1.
fn standard_deviations<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone) -> Vec<f64> {
    let n = rows.clone().count() as f64;
    let dim = rows.clone().next().map_or(0, |r| r.len());
    let mut mean = vec![0.0; dim];
    for r in rows.clone() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; dim];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    var.into_iter()
        .map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 })
        .collect()
}

fn unscale_nodes(mut nodes: NodeSet, scale: &[f64]) -> NodeSet {
    for n in &mut nodes.nodes {
        for (c, s) in scale.iter().enumerate() {
            n.mean[c] *= s;
            n.var[c] *= s * s;
        }
    }
    nodes
}

/// Full offline pipeline for one agent: resample, normalize, generalized
/// states, null-force filter, two GNG fits, words, transitions and dynamics.
pub fn train_agent_model(series: &RawSeries, config: &TrainConfig) -> Result<AgentModel> {
    series.validate()?;
    if series.len() < 3 {
        return Err(Error::TooFewSamples {
            need: 3,
            got: series.len(),
        });
    }
    if !(config.q_scale > 0.0) {
        return Err(Error::InvalidParameter("q_scale must be positive".into()));
    }
    let dt = match config.dt {
        Some(dt) => dt,
        None => infer_dt(series)?,
    };
    let synced = statespace::synchronize(std::slice::from_ref(series), dt)?.remove(0);
    let (normalized, normalization) = statespace::normalize(&synced)?;
    let samples = normalized.state_vectors(&config.channels);
    let states = statespace::generalized_states(&samples, 1, dt)?;
    let innovations = statespace::null_force_filter(&states)?;
    // sample 0 has an artificial zero derivative
    let innovations = &innovations[1..];

    let state_params = GngParams {
        seed: derive_seed(config.seed, 0),
        ..config.state_gng.clone()
    };
    let deriv_params = GngParams {
        seed: derive_seed(config.seed, 1),
        ..config.deriv_gng.clone()
    };
    // derivative channels live on very different scales (position rates are
    // small next to steering and power rates), so cluster them standardized
    let deriv_scale = standard_deviations(innovations.iter().map(|s| s.error.as_slice()));
    let scaled: Vec<InnovationSample> = innovations
        .iter()
        .map(|s| InnovationSample {
            state: s.state.clone(),
            error: s.error.iter().zip(&deriv_scale).map(|(e, sd)| e / sd).collect(),
        })
        .collect();
    let state_samples: Vec<Vec<f64>> = scaled.iter().map(|s| s.state.block(0).to_vec()).collect();
    let deriv_samples: Vec<Vec<f64>> = scaled.iter().map(|s| s.error.clone()).collect();
    let state_nodes = gng::gng_fit(&state_samples, &state_params, 0)?;
    let scaled_deriv_nodes = gng::gng_fit(&deriv_samples, &deriv_params, 1)?;

    let words = build_words(&state_nodes, &scaled_deriv_nodes, &scaled)?;
    let seq = word_sequence(&words, &state_nodes, &scaled_deriv_nodes, &scaled)?;
    let deriv_nodes = unscale_nodes(scaled_deriv_nodes, &deriv_scale);
    let transition = estimate_transition_matrix(&seq, words.len())?;
    let dynamics = word_dynamics(&words, &seq, innovations, &deriv_nodes, dt, config.q_scale)?;

    log::info!(
        "trained `{}`: {} state letters, {} derivative letters, {} words",
        series.agent_id,
        state_nodes.len(),
        deriv_nodes.len(),
        words.len()
    );
    let model = AgentModel {
        format: MODEL_FORMAT.to_string(),
        agent_id: series.agent_id.clone(),
        dt,
        channels: config.channels.clone(),
        normalization,
        state_nodes,
        deriv_nodes,
        deriv_scale,
        words,
        transition,
        dynamics,
        gng_params: GngPair {
            state: state_params,
            deriv: deriv_params,
        },
        q_scale: config.q_scale,
        seed: config.seed,
    };
    model.validate()?;
    Ok(model)
}

/// Explicit description of one word for [`synthetic_model`].
#[derive(Clone, Debug, PartialEq)]
pub struct WordSpec {
    pub state_mean: Vec<f64>,
    pub state_var: Vec<f64>,
    pub drift: Vec<f64>,
    pub drift_var: Vec<f64>,
}

fn spec_node(id: usize, mean: &[f64], var: &[f64]) -> gng::Node {
    gng::Node {
        id,
        mean: mean.to_vec(),
        var: var.to_vec(),
        error: 0.0,
        utility: 0.0,
        member_count: 1,
    }
}

/// Builds a model directly from word specifications and a transition
/// matrix, with identity normalization. Word `i` uses state and derivative
/// letter `i`.
pub fn synthetic_model(
    agent_id: &str,
    channels: ChannelSet,
    dt: f64,
    specs: &[WordSpec],
    transition: Vec<Vec<f64>>,
    q_scale: f64,
) -> Result<AgentModel> {
    let j = channels.len();
    if specs
        .iter()
        .any(|s| s.state_mean.len() != j || s.state_var.len() != j || s.drift.len() != j || s.drift_var.len() != j)
    {
        return Err(Error::InvalidModel("word specification dimension mismatch".into()));
    }
    let state_nodes = NodeSet {
        nodes: specs.iter().enumerate().map(|(i, s)| spec_node(i, &s.state_mean, &s.state_var)).collect(),
        edges: Vec::new(),
        derivative_order: 0,
    };
    let deriv_nodes = NodeSet {
        nodes: specs.iter().enumerate().map(|(i, s)| spec_node(i, &s.drift, &s.drift_var)).collect(),
        edges: Vec::new(),
        derivative_order: 1,
    };
    let words: Vec<Word> = (0..specs.len())
        .map(|i| Word {
            id: i,
            state_letter: i,
            deriv_letter: i,
        })
        .collect();
    let dynamics = specs
        .iter()
        .map(|s| dynamic_model_from_moments(&s.drift, &s.drift_var, dt, q_scale))
        .collect();
    let model = AgentModel {
        format: MODEL_FORMAT.to_string(),
        agent_id: agent_id.to_string(),
        dt,
        channels,
        normalization: NormalizationParams {
            min: vec![0.0; statespace::CHANNELS.len()],
            max: vec![1.0; statespace::CHANNELS.len()],
        },
        state_nodes,
        deriv_nodes,
        deriv_scale: vec![1.0; j],
        words,
        transition: TransitionMatrix { rows: transition },
        dynamics,
        gng_params: GngPair {
            state: GngParams::default(),
            deriv: GngParams::default(),
        },
        q_scale,
        seed: 0,
    };
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gng::Node;
    use crate::statespace::GeneralizedState;

    fn nodes(means: &[&[f64]], var: f64, order: usize) -> NodeSet {
        NodeSet {
            nodes: means
                .iter()
                .enumerate()
                .map(|(id, m)| Node {
                    id,
                    mean: m.to_vec(),
                    var: vec![var; m.len()],
                    error: 0.0,
                    utility: 0.0,
                    member_count: 1,
                })
                .collect(),
            edges: vec![],
            derivative_order: order,
        }
    }

    fn inn(state: f64, err: f64) -> InnovationSample {
        InnovationSample {
            state: GeneralizedState {
                x: vec![state, err],
                order: 1,
                dt: 1.0,
            },
            error: vec![err],
        }
    }

    #[test]
    fn words_from_observed_pairs() {
        let s = nodes(&[&[0.0], &[1.0]], 0.0, 0);
        let d = nodes(&[&[-1.0], &[1.0]], 0.0, 1);
        let all = vec![inn(0.0, -1.0), inn(0.0, 1.0), inn(1.0, -1.0), inn(1.0, 1.0)];
        assert_eq!(build_words(&s, &d, &all).unwrap().len(), 4);
        let one = vec![inn(1.0, 1.0); 5];
        let w = build_words(&s, &d, &one).unwrap();
        assert_eq!(w, vec![Word { id: 0, state_letter: 1, deriv_letter: 1 }]);
        assert!(build_words(&s, &d, &[]).is_err());
        let seq = word_sequence(&build_words(&s, &d, &all).unwrap(), &s, &d, &all).unwrap();
        assert_eq!(seq, vec![0, 1, 2, 3]);
    }

    #[test]
    fn transition_counts() {
        let t = estimate_transition_matrix(&[0, 0, 0, 1], 2).unwrap();
        assert!((t.get(0, 0) - 2.0 / 3.0).abs() < 1e-5);
        assert!((t.get(0, 1) - 1.0 / 3.0).abs() < 1e-5);
        // word 1 is never left: uniform row
        assert!((t.get(1, 0) - 0.5).abs() < 1e-12);
        t.validate().unwrap();

        let alt: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let t = estimate_transition_matrix(&alt, 2).unwrap();
        assert!(t.get(0, 1) > 1.0 - 1e-6 && t.get(1, 0) > 1.0 - 1e-6);

        let t = estimate_transition_matrix(&[2; 10], 3).unwrap();
        assert!(t.get(2, 2) > 1.0 - 1e-6);

        assert!(matches!(
            estimate_transition_matrix(&[0, 3], 3),
            Err(Error::WordOutOfRange { id: 3, .. })
        ));
        assert!(estimate_transition_matrix(&[0], 3).is_err());
    }

    #[test]
    fn dynamics_block_structure() {
        let d = nodes(&[&[0.0, 0.0], &[0.5, -0.25]], 0.0, 1);
        let w0 = Word { id: 0, state_letter: 0, deriv_letter: 0 };
        let m = dynamic_model_for(&w0, &d, 0.1, 1.0).unwrap();
        m.validate().unwrap();
        let x = [0.3, 0.7, 9.0, -9.0];
        assert_eq!(m.predict_mean(&x).unwrap(), vec![0.3, 0.7, 0.0, 0.0]);
        // zero variance: floor
        for i in 0..4 {
            assert_eq!(m.q[i][i], Q_FLOOR);
        }

        let one = nodes(&[&[0.4]], 0.0, 1);
        let m = dynamic_model_for(&w0, &one, 1.0, 1.0).unwrap();
        assert_eq!(m.predict_mean(&[2.0, -3.0]).unwrap(), vec![2.4, 0.4]);
        assert!(m.predict_mean(&[2.0]).is_err());
    }

    #[test]
    fn q_scales_with_variance() {
        let d = nodes(&[&[0.0]], 4.0, 1);
        let w0 = Word { id: 0, state_letter: 0, deriv_letter: 0 };
        let m = dynamic_model_for(&w0, &d, 0.5, 2.0).unwrap();
        assert_eq!(m.q[0][0], 4.0 * 0.25 * 2.0);
        assert_eq!(m.q[1][1], 8.0);
        assert_eq!(m.q[0][1], 0.0);
    }
}
