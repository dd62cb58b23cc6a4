//! Markov jump particle filter with a Hellinger abnormality measure.
//!
//! Particles carry a word hypothesis and a Gaussian over the generalized
//! state. Prediction samples the next word from the transition row and
//! propagates the Gaussian through the word's linear model; the update runs a
//! Kalman correction per particle, reweights by the predictive likelihood of
//! the observation and resamples systematically when the effective sample
//! size drops below half the particle count.
//!
//! The abnormality score of a step compares the moment-matched predicted
//! mixture with the observation likelihood `N(z, R)` through the Gaussian
//! Bhattacharyya coefficient `lambda`, giving `theta = sqrt(1 - lambda)`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::io::write_atomic;
use crate::vocabulary::AgentModel;
use crate::{Error, Result};

/// A multivariate normal density.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                got: cov.nrows(),
            });
        }
        Ok(Gaussian { mean, cov })
    }

    pub fn diagonal(mean: &[f64], var: &[f64]) -> Result<Self> {
        Self::new(
            DVector::from_column_slice(mean),
            DMatrix::from_diagonal(&DVector::from_column_slice(var)),
        )
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Density at `x`.
    pub fn pdf(&self, x: &[f64]) -> Result<f64> {
        let chol = self.cov.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
        let d = DVector::from_column_slice(x) - &self.mean;
        let m = d.dot(&chol.solve(&d));
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let k = self.dim() as f64;
        Ok((-0.5 * (m + log_det + k * std::f64::consts::TAU.ln())).exp())
    }
}

fn log_det_chol(m: &DMatrix<f64>) -> Result<(f64, nalgebra::Cholesky<f64, nalgebra::Dyn>)> {
    let chol = m.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    let ld = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok((ld, chol))
}

/// Closed-form Bhattacharyya coefficient of two Gaussians.
pub fn bhattacharyya_coefficient(p: &Gaussian, q: &Gaussian) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: q.dim(),
        });
    }
    let avg = (&p.cov + &q.cov) * 0.5;
    let (ld_avg, chol) = log_det_chol(&avg)?;
    let (ld_p, _) = log_det_chol(&p.cov)?;
    let (ld_q, _) = log_det_chol(&q.cov)?;
    let diff = &p.mean - &q.mean;
    let maha = diff.dot(&chol.solve(&diff));
    let distance = 0.125 * maha + 0.5 * (ld_avg - 0.5 * (ld_p + ld_q));
    Ok((-distance).exp().clamp(0.0, 1.0))
}

/// Hellinger distance `sqrt(1 - BC)`, in `[0, 1]`.
pub fn hellinger(p: &Gaussian, q: &Gaussian) -> Result<f64> {
    let bc = bhattacharyya_coefficient(p, q)?;
    Ok((1.0 - bc).max(0.0).sqrt().clamp(0.0, 1.0))
}

/// Moment-matched single Gaussian of a weighted mixture.
pub fn moment_match(weights: &[f64], components: &[Gaussian]) -> Result<Gaussian> {
    let first = components.first().ok_or(Error::TooFewSamples { need: 1, got: 0 })?;
    let n = first.dim();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidParameter("mixture weights sum to zero".into()));
    }
    let mut mean = DVector::zeros(n);
    for (w, c) in weights.iter().zip(components) {
        mean += &c.mean * (w / total);
    }
    let mut cov = DMatrix::zeros(n, n);
    for (w, c) in weights.iter().zip(components) {
        let d = &c.mean - &mean;
        cov += (&c.cov + &d * d.transpose()) * (w / total);
    }
    Gaussian::new(mean, cov)
}

/// Which observation channels enter the abnormality score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaChannels {
    /// `x` and `y` only (all channels if the model has neither).
    #[default]
    Position,
    /// Every observed channel, including steering and power.
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MjpfConfig {
    pub n_particles: usize,
    /// Measurement noise variance on every normalized channel.
    pub meas_noise: f64,
    /// Initial per-dimension variance of each particle's Gaussian.
    pub init_var: f64,
    /// Number of nearest state letters whose words seed the particles.
    pub init_letters: usize,
    /// Resample when the effective sample size falls below this fraction.
    pub resample_fraction: f64,
    pub theta_channels: ThetaChannels,
    /// Variance added to a state letter's spread when scoring how well a
    /// particle's posterior supports its word; `None` disables the term.
    pub letter_evidence_var: Option<f64>,
}

impl Default for MjpfConfig {
    fn default() -> Self {
        MjpfConfig {
            n_particles: 200,
            meas_noise: 1e-5,
            init_var: 1e-2,
            init_letters: 3,
            resample_fraction: 0.5,
            theta_channels: ThetaChannels::Position,
            letter_evidence_var: Some(1e-3),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Particle {
    pub word: usize,
    pub weight: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct FilterState {
    pub particles: Vec<Particle>,
    pub step: u64,
    rng: ChaCha8Rng,
}

impl FilterState {
    pub fn weight_sum(&self) -> f64 {
        self.particles.iter().map(|p| p.weight).sum()
    }

    pub fn effective_sample_size(&self) -> f64 {
        let s2: f64 = self.particles.iter().map(|p| p.weight * p.weight).sum();
        if s2 > 0.0 {
            1.0 / s2
        } else {
            0.0
        }
    }
}

/// Filter output for one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub t: f64,
    /// Weighted mean of the generalized state (empty before the first
    /// observation initialised the filter).
    pub state_estimate: Vec<f64>,
    pub map_word: Option<usize>,
    /// Abnormality score; `None` when no observation was compared this step.
    pub theta: Option<f64>,
    /// An observation was consumed.
    pub measured: bool,
    /// Every particle assigned the observation zero likelihood.
    pub collapsed: bool,
}

impl StepOutput {
    fn unmeasured(t: f64) -> Self {
        StepOutput {
            t,
            state_estimate: Vec::new(),
            map_word: None,
            theta: None,
            measured: false,
            collapsed: false,
        }
    }
}

/// Filter engine for one agent model; cheap to share between filter states.
#[derive(Clone, Debug)]
pub struct Mjpf {
    cfg: MjpfConfig,
    j: usize,
    /// Cumulative transition rows.
    cum_rows: Vec<Vec<f64>>,
    /// `B U` per word.
    drift: Vec<DVector<f64>>,
    q: Vec<DMatrix<f64>>,
    r: DMatrix<f64>,
    theta_slots: Vec<usize>,
    word_state_letter: Vec<usize>,
    letter_means: Vec<Vec<f64>>,
    letter_vars: Vec<Vec<f64>>,
}

impl Mjpf {
    pub fn new(model: &AgentModel, cfg: MjpfConfig) -> Result<Self> {
        model.validate()?;
        if cfg.n_particles < 1 {
            return Err(Error::InvalidParameter("at least one particle is required".into()));
        }
        if !(cfg.meas_noise > 0.0) || !(cfg.init_var > 0.0) || cfg.letter_evidence_var.is_some_and(|v| !(v > 0.0)) {
            return Err(Error::InvalidParameter("noise variances must be positive".into()));
        }
        let j = model.base_dim();
        let cum_rows = model
            .transition
            .rows
            .iter()
            .map(|r| {
                let mut acc = 0.0;
                r.iter()
                    .map(|p| {
                        acc += p;
                        acc
                    })
                    .collect()
            })
            .collect();
        let drift = model
            .dynamics
            .iter()
            .map(|d| d.b_matrix() * d.u_vector())
            .collect();
        let q = model.dynamics.iter().map(|d| d.q_matrix()).collect();
        let mut theta_slots = match cfg.theta_channels {
            ThetaChannels::Position => model.channels.position_slots(),
            ThetaChannels::All => Vec::new(),
        };
        if theta_slots.is_empty() {
            theta_slots = (0..j).collect();
        }
        Ok(Mjpf {
            r: DMatrix::from_diagonal_element(j, j, cfg.meas_noise),
            cfg,
            j,
            cum_rows,
            drift,
            q,
            theta_slots,
            word_state_letter: model.words.iter().map(|w| w.state_letter).collect(),
            letter_means: model.state_nodes.nodes.iter().map(|n| n.mean.clone()).collect(),
            letter_vars: model.state_nodes.nodes.iter().map(|n| n.var.clone()).collect(),
        })
    }

    pub fn config(&self) -> &MjpfConfig {
        &self.cfg
    }

    pub fn obs_dim(&self) -> usize {
        self.j
    }

    fn check_obs(&self, obs: &[f64]) -> Result<()> {
        if obs.len() != self.j {
            return Err(Error::DimensionMismatch {
                expected: self.j,
                got: obs.len(),
            });
        }
        Ok(())
    }

    /// Seeds particles on words whose state letter is among the nearest
    /// letters to `first_obs`, each with a Gaussian centred on the lifted
    /// observation `[obs, 0]`.
    pub fn init(&self, first_obs: &[f64], seed: u64) -> Result<FilterState> {
        self.check_obs(first_obs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut by_dist: Vec<(f64, usize)> = self
            .letter_means
            .iter()
            .enumerate()
            .map(|(i, m)| (m.iter().zip(first_obs).map(|(a, b)| (a - b) * (a - b)).sum(), i))
            .collect();
        by_dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let near: Vec<usize> = by_dist.iter().take(self.cfg.init_letters.max(1)).map(|x| x.1).collect();
        let mut candidates: Vec<usize> = (0..self.word_state_letter.len())
            .filter(|&w| near.contains(&self.word_state_letter[w]))
            .collect();
        if candidates.is_empty() {
            candidates = (0..self.word_state_letter.len()).collect();
        }
        let n = self.cfg.n_particles;
        let mut mean = DVector::zeros(2 * self.j);
        mean.rows_mut(0, self.j).copy_from_slice(first_obs);
        let cov = DMatrix::from_diagonal_element(2 * self.j, 2 * self.j, self.cfg.init_var);
        let particles = (0..n)
            .map(|_| Particle {
                word: candidates[rng.random_range(0..candidates.len())],
                weight: 1.0 / n as f64,
                mean: mean.clone(),
                cov: cov.clone(),
            })
            .collect();
        Ok(FilterState {
            particles,
            step: 0,
            rng,
        })
    }

    /// Samples every particle's next word and propagates its Gaussian:
    /// `mean' = A mean + B U`, `cov' = A cov A^T + Q`.
    pub fn predict(&self, fs: &mut FilterState) {
        let j = self.j;
        for p in &mut fs.particles {
            let u: f64 = fs.rng.random();
            let row = &self.cum_rows[p.word];
            let next = row.partition_point(|&c| c < u).min(row.len() - 1);
            p.word = next;
            // A keeps the value block and zeroes the derivative block
            let mut mean = self.drift[next].clone();
            for d in 0..j {
                mean[d] += p.mean[d];
            }
            let mut cov = self.q[next].clone();
            for r in 0..j {
                for c in 0..j {
                    cov[(r, c)] += p.cov[(r, c)];
                }
            }
            p.mean = mean;
            p.cov = cov;
        }
        fs.step += 1;
    }

    /// Predicted mixture restricted to the abnormality channels.
    fn predicted_theta_gaussian(&self, fs: &FilterState) -> Result<Gaussian> {
        let s = &self.theta_slots;
        let comps: Vec<Gaussian> = fs
            .particles
            .iter()
            .map(|p| Gaussian {
                mean: DVector::from_iterator(s.len(), s.iter().map(|&i| p.mean[i])),
                cov: DMatrix::from_fn(s.len(), s.len(), |r, c| p.cov[(s[r], s[c])]),
            })
            .collect();
        let w: Vec<f64> = fs.particles.iter().map(|p| p.weight).collect();
        moment_match(&w, &comps)
    }

    /// Abnormality of `obs` against the current (predicted) particles.
    pub fn abnormality(&self, fs: &FilterState, obs: &[f64]) -> Result<f64> {
        self.check_obs(obs)?;
        let predicted = self.predicted_theta_gaussian(fs)?;
        let s = &self.theta_slots;
        let lik = Gaussian {
            mean: DVector::from_iterator(s.len(), s.iter().map(|&i| obs[i])),
            cov: DMatrix::from_diagonal_element(s.len(), s.len(), self.cfg.meas_noise),
        };
        hellinger(&predicted, &lik)
    }

    /// Kalman update of every particle, reweighting and resampling. The
    /// abnormality is measured against the prior particle set when
    /// `score` is true.
    fn correct(&self, fs: &mut FilterState, obs: &[f64], t: f64, score: bool) -> Result<StepOutput> {
        self.check_obs(obs)?;
        let j = self.j;
        let mut theta = if score { Some(self.abnormality(fs, obs)?) } else { None };
        let z = DVector::from_column_slice(obs);
        let ln_norm = j as f64 * std::f64::consts::TAU.ln();
        let mut log_w = Vec::with_capacity(fs.particles.len());
        for p in &mut fs.particles {
            let s = p.cov.view((0, 0), (j, j)) + &self.r;
            let chol = s.cholesky().ok_or(Error::NotPositiveDefinite)?;
            let innov = &z - p.mean.rows(0, j);
            let solved = chol.solve(&innov);
            let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let ll = -0.5 * (innov.dot(&solved) + log_det + ln_norm);
            // K = P H^T S^-1
            let pht = p.cov.columns(0, j).into_owned();
            let gain = chol.solve(&pht.transpose()).transpose();
            p.mean += &gain * innov;
            let hp = p.cov.rows(0, j).into_owned();
            p.cov -= &gain * hp;
            p.cov = (&p.cov + p.cov.transpose()) * 0.5;
            let evidence = self.letter_evidence(p);
            log_w.push(ll + evidence + p.weight.ln());
        }

        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let n = fs.particles.len() as f64;
        let collapsed = !(max > -745.0);
        if collapsed {
            fs.particles.iter_mut().for_each(|p| p.weight = 1.0 / n);
            if score {
                theta = Some(1.0);
            }
        } else {
            let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = w.iter().sum();
            for (p, wi) in fs.particles.iter_mut().zip(w) {
                p.weight = wi / total;
            }
        }

        let out = StepOutput {
            t,
            state_estimate: self.estimate(fs),
            map_word: Some(self.map_word(fs)),
            theta,
            measured: true,
            collapsed,
        };
        if fs.effective_sample_size() < self.cfg.resample_fraction * n {
            self.resample(fs);
        }
        Ok(out)
    }

    /// Log density of the posterior value block under the particle's state
    /// letter, widened by the posterior covariance and the configured floor.
    fn letter_evidence(&self, p: &Particle) -> f64 {
        let Some(floor) = self.cfg.letter_evidence_var else {
            return 0.0;
        };
        let letter = self.word_state_letter[p.word];
        let (mean, var) = (&self.letter_means[letter], &self.letter_vars[letter]);
        (0..self.j)
            .map(|d| {
                let v = var[d] + p.cov[(d, d)] + floor;
                let e = p.mean[d] - mean[d];
                -0.5 * (e * e / v + (std::f64::consts::TAU * v).ln())
            })
            .sum()
    }

    /// Corrects the predicted particles with `obs` and scores the step.
    pub fn update(&self, fs: &mut FilterState, obs: &[f64], t: f64) -> Result<StepOutput> {
        self.correct(fs, obs, t, true)
    }

    /// Output of a predict-only step (no observation available).
    pub fn unobserved(&self, fs: &FilterState, t: f64) -> StepOutput {
        StepOutput {
            t,
            state_estimate: self.estimate(fs),
            map_word: Some(self.map_word(fs)),
            theta: None,
            measured: false,
            collapsed: false,
        }
    }

    fn estimate(&self, fs: &FilterState) -> Vec<f64> {
        let mut est = DVector::zeros(2 * self.j);
        for p in &fs.particles {
            est += &p.mean * p.weight;
        }
        est.iter().copied().collect()
    }

    fn map_word(&self, fs: &FilterState) -> usize {
        let mut mass = vec![0.0; self.cum_rows.len()];
        for p in &fs.particles {
            mass[p.word] += p.weight;
        }
        mass.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &m)| if m > acc.1 { (i, m) } else { acc })
            .0
    }

    fn resample(&self, fs: &mut FilterState) {
        let n = fs.particles.len();
        let step = 1.0 / n as f64;
        let start: f64 = fs.rng.random::<f64>() * step;
        let mut out = Vec::with_capacity(n);
        let mut cum = fs.particles[0].weight;
        let mut i = 0;
        for k in 0..n {
            let u = start + k as f64 * step;
            while cum < u && i + 1 < n {
                i += 1;
                cum += fs.particles[i].weight;
            }
            let mut p = fs.particles[i].clone();
            p.weight = step;
            out.push(p);
        }
        fs.particles = out;
    }
}

/// Online tracker combining an engine with its (lazily initialised) state.
#[derive(Clone, Debug)]
pub struct Tracker {
    engine: Mjpf,
    state: Option<FilterState>,
    seed: u64,
}

impl Tracker {
    pub fn new(engine: Mjpf, seed: u64) -> Self {
        Tracker {
            engine,
            state: None,
            seed,
        }
    }

    pub fn engine(&self) -> &Mjpf {
        &self.engine
    }

    pub fn state(&self) -> Option<&FilterState> {
        self.state.as_ref()
    }

    /// Advances one step. The first observation initialises the filter; later
    /// steps predict and, when `obs` is present, update.
    pub fn step(&mut self, obs: Option<&[f64]>, t: f64) -> Result<StepOutput> {
        match (&mut self.state, obs) {
            (None, None) => Ok(StepOutput::unmeasured(t)),
            (None, Some(z)) => {
                let mut fs = self.engine.init(z, self.seed)?;
                let out = self.engine.correct(&mut fs, z, t, false)?;
                self.state = Some(fs);
                Ok(out)
            }
            (Some(fs), obs) => {
                self.engine.predict(fs);
                match obs {
                    Some(z) => self.engine.update(fs, z, t),
                    None => Ok(self.engine.unobserved(fs, t)),
                }
            }
        }
    }
}

/// Runs a filter over a whole observation sequence (`None` = missing).
pub fn run_sequence(
    model: &AgentModel,
    timestamps: &[f64],
    observations: &[Option<Vec<f64>>],
    cfg: &MjpfConfig,
    seed: u64,
) -> Result<Vec<StepOutput>> {
    if timestamps.len() != observations.len() {
        return Err(Error::LengthMismatch {
            left: timestamps.len(),
            right: observations.len(),
        });
    }
    let mut tracker = Tracker::new(Mjpf::new(model, cfg.clone())?, seed);
    timestamps
        .iter()
        .zip(observations)
        .map(|(&t, o)| tracker.step(o.as_deref(), t))
        .collect()
}

/// Serializes a trace as `t,agent,observed_agent,theta,map_word,est_0..,measured`.
/// `state_dim` fixes the number of estimate columns; missing values are empty.
pub fn trace_csv_bytes(agent: &str, observed: &str, outputs: &[StepOutput], state_dim: usize) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["t", "agent", "observed_agent", "theta", "map_word"].map(String::from).to_vec();
    header.extend((0..state_dim).map(|i| format!("est_{i}")));
    header.push("measured".into());
    w.write_record(&header)?;
    for o in outputs {
        let mut rec = vec![
            o.t.to_string(),
            agent.to_string(),
            observed.to_string(),
            o.theta.map(|v| v.to_string()).unwrap_or_default(),
            o.map_word.map(|v| v.to_string()).unwrap_or_default(),
        ];
        rec.extend((0..state_dim).map(|i| o.state_estimate.get(i).map(|v| v.to_string()).unwrap_or_default()));
        rec.push((o.measured as u8).to_string());
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn write_trace(path: &Path, agent: &str, observed: &str, outputs: &[StepOutput], state_dim: usize) -> Result<()> {
    write_atomic(path, &trace_csv_bytes(agent, observed, outputs, state_dim)?)
}

/// Reads the `t` and `theta` columns of a trace file.
pub fn load_theta(path: &Path) -> Result<(Vec<f64>, Vec<Option<f64>>)> {
    let perr = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line: line as u64,
        message,
    };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| perr(1, format!("missing column `{name}`")))
    };
    let (t_col, theta_col) = (col("t")?, col("theta")?);
    let mut ts = Vec::new();
    let mut thetas = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| perr(line, e.to_string()))?;
        let t = rec
            .get(t_col)
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| perr(line, "`t` is not a number".into()))?;
        let theta = match rec.get(theta_col) {
            None | Some("") => None,
            Some(v) => Some(v.parse::<f64>().map_err(|_| perr(line, format!("bad theta `{v}`")))?),
        };
        ts.push(t);
        thetas.push(theta);
    }
    Ok((ts, thetas))
}
