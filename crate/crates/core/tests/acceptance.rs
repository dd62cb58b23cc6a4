//! Acceptance suite: one pass/fail line per criterion; exits non-zero when
//! any criterion fails.

mod common;

use std::f64::consts::TAU;
use std::time::{Duration, Instant};

use camjpf::channel::{sample_nakagami, sample_rician, nakagami_m_for_rician, ChannelConfig};
use camjpf::eval;
use camjpf::mjpf::{hellinger, run_sequence, Gaussian, Mjpf, MjpfConfig, Tracker};
use camjpf::netsim::{self, filter_seed, SimConfig, SweepConfig, PACKET_BYTES};
use camjpf::statespace::ChannelSet;
use camjpf::vocabulary::{synthetic_model, train_agent_model, AgentModel, TrainConfig, WordSpec};
use camjpf::scenario::{self, TrackSpec, DEFAULT_NOISE_SIGMA};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, budget_s: f64) -> bool {
    elapsed.as_secs_f64() < budget_s
}

/// Explicit 2-D normal density for the quadrature oracle.
fn density_2d(m: [f64; 2], c: [[f64; 2]; 2], x: [f64; 2]) -> f64 {
    let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
    let (dx, dy) = (x[0] - m[0], x[1] - m[1]);
    let q = (c[1][1] * dx * dx - 2.0 * c[0][1] * dx * dy + c[0][0] * dy * dy) / det;
    (-0.5 * q).exp() / (TAU * det.sqrt())
}

fn density_1d(m: f64, v: f64, x: f64) -> f64 {
    (-0.5 * (x - m) * (x - m) / v).exp() / (TAU * v).sqrt()
}

/// Composite Simpson weights on `n` (even) intervals.
fn simpson(n: usize) -> Vec<f64> {
    (0..=n)
        .map(|i| if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 })
        .collect()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut self_zero = true;
    for case in 0..200 {
        if case % 2 == 0 {
            let (m0, m1) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let (v0, v1) = (rng.random_range(0.1..2.0), rng.random_range(0.1..2.0));
            let p = Gaussian::diagonal(&[m0], &[v0]).unwrap();
            let q = Gaussian::diagonal(&[m1], &[v1]).unwrap();
            let (lo, hi) = (m0.min(m1) - 12.0, m0.max(m1) + 12.0);
            let n = 4000;
            let h = (hi - lo) / n as f64;
            let bc: f64 = simpson(n)
                .iter()
                .enumerate()
                .map(|(i, w)| {
                    let x = lo + i as f64 * h;
                    w * (density_1d(m0, v0, x) * density_1d(m1, v1, x)).sqrt()
                })
                .sum::<f64>()
                * h
                / 3.0;
            let numeric = (1.0 - bc).max(0.0).sqrt();
            worst = worst.max((hellinger(&p, &q).unwrap() - numeric).abs());
            self_zero &= hellinger(&p, &p).unwrap() == 0.0;
        } else {
            let mut g = || {
                let m = [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)];
                let (s0, s1): (f64, f64) = (rng.random_range(0.3..1.5), rng.random_range(0.3..1.5));
                let c = rng.random_range(-0.7..0.7) * s0 * s1;
                (m, [[s0 * s0, c], [c, s1 * s1]])
            };
            let ((pm, pc), (qm, qc)) = (g(), g());
            let to_g = |m: [f64; 2], c: [[f64; 2]; 2]| {
                Gaussian::new(
                    DVector::from_vec(m.to_vec()),
                    DMatrix::from_row_slice(2, 2, &[c[0][0], c[0][1], c[1][0], c[1][1]]),
                )
                .unwrap()
            };
            let (p, q) = (to_g(pm, pc), to_g(qm, qc));
            let (lo, hi) = (-10.0, 10.0);
            let n = 400;
            let h = (hi - lo) / n as f64;
            let w = simpson(n);
            let mut bc = 0.0;
            for (i, wi) in w.iter().enumerate() {
                for (j, wj) in w.iter().enumerate() {
                    let x = [lo + i as f64 * h, lo + j as f64 * h];
                    bc += wi * wj * (density_2d(pm, pc, x) * density_2d(qm, qc, x)).sqrt();
                }
            }
            bc *= h * h / 9.0;
            let numeric = (1.0 - bc).max(0.0).sqrt();
            worst = worst.max((hellinger(&p, &q).unwrap() - numeric).abs());
            self_zero &= hellinger(&p, &p).unwrap() == 0.0;
        }
    }
    let el = start.elapsed();
    outcome(
        worst < 1e-3 && self_zero && within(el, 10.0),
        format!("max |closed - numeric| = {worst:.2e} over 200 pairs, theta(p,p) = 0: {self_zero}, {el:.1?}"),
    )
}

struct Detection {
    leader: Vec<Option<f64>>,
    follower: Vec<Option<f64>>,
    labels_leader: Vec<bool>,
    labels_follower: Vec<bool>,
}

fn detect(models: &std::collections::BTreeMap<String, AgentModel>, seed: u64) -> Detection {
    let (l, f) = common::estop_run(common::TEST_SEED);
    let cfg = MjpfConfig::default();
    let run = |m: &AgentModel, s: &camjpf::statespace::RawSeries| {
        let obs = m.observations(s).into_iter().map(Some).collect::<Vec<_>>();
        run_sequence(m, &s.timestamps, &obs, &cfg, seed)
            .unwrap()
            .into_iter()
            .map(|o| o.theta)
            .collect::<Vec<_>>()
    };
    Detection {
        leader: run(&models["leader"], &l.series),
        follower: run(&models["follower"], &f.series),
        labels_leader: l.anomaly,
        labels_follower: f.anomaly,
    }
}

fn split(theta: &[Option<f64>], labels: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let mut inside = Vec::new();
    let mut outside = Vec::new();
    for (t, &a) in theta.iter().zip(labels) {
        if let Some(t) = t {
            if a {
                inside.push(*t)
            } else {
                outside.push(*t)
            }
        }
    }
    (inside, outside)
}

fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn criterion_2(models: &std::collections::BTreeMap<String, AgentModel>) -> Outcome {
    let start = Instant::now();
    let d = detect(models, 7);
    let again = detect(models, 7);
    let deterministic = d.leader == again.leader && d.follower == again.follower;
    let (l_in, l_out) = split(&d.leader, &d.labels_leader);
    let (f_in, _) = split(&d.follower, &d.labels_follower);
    let el = start.elapsed();
    let pass = max(&l_in) > 0.4 && mean(&l_out) < 0.4 && max(&f_in) < max(&l_in) && deterministic && within(el, 30.0);
    outcome(
        pass,
        format!(
            "leader peak {:.3}, leader mean outside {:.3}, follower peak {:.3}, deterministic {deterministic}, {el:.1?}",
            max(&l_in),
            mean(&l_out),
            max(&f_in)
        ),
    )
}

fn criterion_3(models: &std::collections::BTreeMap<String, AgentModel>) -> Outcome {
    let d = detect(models, 7);
    let (report, _) = eval::evaluate(&d.leader, &d.labels_leader, eval::DEFAULT_THRESHOLD).unwrap();
    outcome(
        report.auc > 0.85 && report.acc > 0.95,
        format!(
            "AUC {:.4}, ACC {:.4} at 0.4 (TP {} FN {} FP {} TN {})",
            report.auc, report.acc, report.confusion.tp, report.confusion.fn_, report.confusion.fp, report.confusion.tn
        ),
    )
}

fn criterion_4(models: &std::collections::BTreeMap<String, AgentModel>) -> Outcome {
    let start = Instant::now();
    let (l, f) = common::estop_run(common::TEST_SEED);
    let series = [l.series, f.series];
    let cfg = SimConfig {
        channel: Some(ChannelConfig { tx_power: 12.0, ..ChannelConfig::default() }),
        mjpf: MjpfConfig { n_particles: 100, ..MjpfConfig::default() },
        ..SimConfig::default()
    };
    // two links per replicate: 63 * 800 * 2 > 1e5 packets per condition
    let spec = SweepConfig { replicates: 63, ..SweepConfig::default() };
    let s = netsim::sweep(&cfg, &spec, &series, models, &l.anomaly).unwrap();
    let el = start.elapsed();
    for r in &s.rows {
        println!(
            "    {:<14} packets {:>6}  loss {:.4}  AUC {:.4}  ACC {:.4}",
            r.condition, r.sent, r.loss_ratio, r.auc, r.acc
        );
    }
    let c = &s.checks;
    let enough = s.rows.iter().all(|r| r.sent >= 100_000);
    let pass = c.loss_increases_as_k_decreases
        && c.loss_increases_with_rate
        && c.auc_non_increasing_as_k_decreases
        && c.baseline_maximal
        && enough
        && within(el, 300.0);
    outcome(
        pass,
        format!(
            "loss up as K falls {}, loss up with rate {}, AUC non-increasing as K falls {}, no-loss maximal {}, >=1e5 packets {enough}, {el:.1?}",
            c.loss_increases_as_k_decreases,
            c.loss_increases_with_rate,
            c.auc_non_increasing_as_k_decreases,
            c.baseline_maximal
        ),
    )
}

/// Kolmogorov-Smirnov distance against an analytic CDF.
fn ks(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn criterion_5() -> Outcome {
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let rayleigh = |x: f64| 1.0 - (-x).exp();
    let rician0: Vec<f64> = (0..n).map(|_| sample_rician(0.0, 1.0, &mut rng).unwrap()).collect();
    let naka1: Vec<f64> = (0..n).map(|_| sample_nakagami(1.0, 1.0, &mut rng).unwrap()).collect();
    let ks_r = ks(rician0, rayleigh);
    let ks_n = ks(naka1, rayleigh);
    let k = 3.0;
    let moments = |x: &[f64]| {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64)
    };
    let ric: Vec<f64> = (0..n).map(|_| sample_rician(k, 1.0, &mut rng).unwrap()).collect();
    let nak: Vec<f64> = (0..n).map(|_| sample_nakagami(nakagami_m_for_rician(k), 1.0, &mut rng).unwrap()).collect();
    let ((mr, vr), (mn, vn)) = (moments(&ric), moments(&nak));
    let (dm, dv) = (((mn - mr) / mr).abs(), ((vn - vr) / vr).abs());
    outcome(
        ks_r < 0.02 && ks_n < 0.02 && dm < 0.02 && dv < 0.02,
        format!("KS Rician(0) {ks_r:.4}, KS Nakagami(1) {ks_n:.4}, K=3 moment gaps {dm:.4} / {dv:.4}"),
    )
}

fn criterion_6(models: &std::collections::BTreeMap<String, AgentModel>) -> Outcome {
    let (l, f) = common::estop_run(common::TEST_SEED);
    let series = [l.series, f.series];
    let cfg = SimConfig { channel: None, seed: 21, ..SimConfig::default() };
    let out = netsim::run_simulation(&cfg, &series, models).unwrap();
    let mut identical = true;
    for (d, s) in series.iter().enumerate() {
        let m = &models[&s.agent_id];
        let obs = m.observations(s).into_iter().map(Some).collect::<Vec<_>>();
        let local = run_sequence(m, &s.timestamps, &obs, &cfg.mjpf, filter_seed(cfg.seed, d)).unwrap();
        for (o, _) in out.traces.keys().filter(|(_, dd)| *dd == s.agent_id) {
            identical &= out.traces[&(o.clone(), s.agent_id.clone())] == local;
        }
    }
    outcome(identical, format!("remote traces bit-identical to local for all {} pairs: {identical}", out.traces.len()))
}

fn criterion_7(models: &std::collections::BTreeMap<String, AgentModel>) -> Outcome {
    let rows_ok = models.values().all(|m| {
        m.transition.rows.iter().all(|r| (r.iter().sum::<f64>() - 1.0).abs() < 1e-9)
    });

    let (l, _) = common::estop_run(common::TEST_SEED);
    let m = &models["leader"];
    let mut tracker = Tracker::new(Mjpf::new(m, MjpfConfig::default()).unwrap(), 3);
    let (mut weights_ok, mut theta_ok) = (true, true);
    for (k, z) in m.observations(&l.series).iter().enumerate() {
        let o = tracker.step(Some(z), l.series.timestamps[k]).unwrap();
        let fs = tracker.state().unwrap();
        weights_ok &= (fs.weight_sum() - 1.0).abs() < 1e-9;
        theta_ok &= o.theta.is_none_or(|t| (0.0..=1.0).contains(&t));
    }

    let (train, _) = scenario::generate_platoon(&TrackSpec::default(), 8.0, DEFAULT_NOISE_SIGMA, common::TRAIN_SEED).unwrap();
    let again = train_agent_model(&train.series, &TrainConfig::default()).unwrap();
    let deterministic = &again == m;
    let round_trip = AgentModel::from_json(&m.to_json().unwrap()).unwrap() == *m;
    let packet = PACKET_BYTES == 12 + 8 + 20 + 28 + 6 && PACKET_BYTES == 74;
    outcome(
        rows_ok && weights_ok && theta_ok && deterministic && round_trip && packet,
        format!(
            "rows sum to 1 {rows_ok}, weights normalized {weights_ok}, theta in [0,1] {theta_ok}, GNG deterministic {deterministic}, round trip {round_trip}, 74-byte packets {packet}"
        ),
    )
}

fn criterion_8() -> Outcome {
    let dt = 0.1;
    let r = 1e-4;
    let qv = 1e-6;
    let q_scale = 1.0;
    let drift = [0.03, -0.02];
    let spec = WordSpec {
        state_mean: vec![0.5, 0.5],
        state_var: vec![1.0, 1.0],
        drift: drift.to_vec(),
        drift_var: vec![qv / (dt * dt * q_scale); 2],
    };
    let xy = ChannelSet::from_names(&["x", "y"]).unwrap();
    let model = synthetic_model("synthetic", xy, dt, &[spec], vec![vec![1.0]], q_scale).unwrap();
    let cfg = MjpfConfig { n_particles: 50, meas_noise: r, ..MjpfConfig::default() };
    let mut wins = 0;
    for seed in 0..40u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut x = [0.4, 0.6];
        let mut truth = Vec::new();
        let mut obs = Vec::new();
        for _ in 0..1000 {
            truth.push(x);
            let z: Vec<f64> = x.iter().map(|v| v + r.sqrt() * rng.sample::<f64, _>(StandardNormal)).collect();
            obs.push(Some(z));
            for d in 0..2 {
                x[d] += drift[d] * dt + qv.sqrt() * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let ts: Vec<f64> = (0..1000).map(|k| k as f64 * dt).collect();
        let out = run_sequence(&model, &ts, &obs, &cfg, seed).unwrap();
        let (mut se_f, mut se_o) = (0.0, 0.0);
        for ((o, t), z) in out.iter().zip(&truth).zip(&obs) {
            let z = z.as_ref().unwrap();
            for d in 0..2 {
                se_f += (o.state_estimate[d] - t[d]).powi(2);
                se_o += (z[d] - t[d]).powi(2);
            }
        }
        if se_f <= se_o {
            wins += 1;
        }
    }
    outcome(wins as f64 >= 0.95 * 40.0, format!("posterior RMSE <= observation RMSE for {wins}/40 seeds"))
}

fn main() {
    let models = common::trained_models();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("1 hellinger correctness", Box::new(criterion_1)),
        ("2 emergency-stop detection", Box::new(|| criterion_2(&models))),
        ("3 ROC sanity", Box::new(|| criterion_3(&models))),
        ("4 channel-degradation ordering", Box::new(|| criterion_4(&models))),
        ("5 fading equivalences", Box::new(criterion_5)),
        ("6 zero-loss equivalence", Box::new(|| criterion_6(&models))),
        ("7 structural invariants", Box::new(|| criterion_7(&models))),
        ("8 filter benefit", Box::new(criterion_8)),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        let o = run();
        println!("criterion {name}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed += 1;
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
