//! Browser bindings: a Gaussian overlap explorer, channel loss curves and
//! an emergency-stop abnormality trace.

use camjpf::channel::{self, ChannelConfig};
use camjpf::mjpf::{self, Gaussian, MjpfConfig};
use camjpf::scenario::{self, EstopSpec, TrackSpec};
use camjpf::vocabulary::{self, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

fn js_err(e: camjpf::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Hellinger distance between two 2-D Gaussians with diagonal covariances.
#[wasm_bindgen]
pub fn hellinger_diag(mx1: f64, my1: f64, vx1: f64, vy1: f64, mx2: f64, my2: f64, vx2: f64, vy2: f64) -> Result<f64, JsError> {
    let p = Gaussian::diagonal(&[mx1, my1], &[vx1, vy1]).map_err(js_err)?;
    let q = Gaussian::diagonal(&[mx2, my2], &[vx2, vy2]).map_err(js_err)?;
    mjpf::hellinger(&p, &q).map_err(js_err)
}

/// Normalized histogram of `n` Rician power fades over `[0, max_fade)`.
#[wasm_bindgen]
pub fn fading_histogram(k_factor: f64, n: usize, bins: usize, max_fade: f64, seed: u64) -> Result<Vec<f64>, JsError> {
    if bins == 0 || n == 0 || max_fade <= 0.0 {
        return Err(JsError::new("bins, n and max_fade must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hist = vec![0.0; bins];
    let width = max_fade / bins as f64;
    for _ in 0..n {
        let z = channel::sample_rician(k_factor, 1.0, &mut rng).map_err(js_err)?;
        let b = (z / width) as usize;
        if b < bins {
            hist[b] += 1.0;
        }
    }
    for h in &mut hist {
        *h /= n as f64 * width;
    }
    Ok(hist)
}

/// Exact Rician power density at the histogram bin centres.
#[wasm_bindgen]
pub fn fading_density(k_factor: f64, bins: usize, max_fade: f64) -> Vec<f64> {
    let width = max_fade / bins as f64;
    (0..bins)
        .map(|b| {
            let lo = b as f64 * width;
            (channel::rician_power_cdf(lo + width, k_factor, 1.0) - channel::rician_power_cdf(lo, k_factor, 1.0)) / width
        })
        .collect()
}

/// Packet loss probability at `steps` distances in `(0, max_distance]`,
/// each estimated from `trials` packets.
#[wasm_bindgen]
pub fn loss_vs_distance(
    data_rate: f64,
    k_factor: f64,
    tx_power: f64,
    max_distance: f64,
    steps: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<f64>, JsError> {
    let mut cfg = ChannelConfig::for_rate(data_rate, k_factor).map_err(js_err)?;
    cfg.tx_power = tx_power;
    cfg.max_range = f64::INFINITY;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(steps);
    for i in 1..=steps {
        let d = max_distance * i as f64 / steps as f64;
        let mut lost = 0usize;
        for _ in 0..trials {
            if !channel::link_sample(d, &cfg, &mut rng).map_err(js_err)?.delivered {
                lost += 1;
            }
        }
        out.push(lost as f64 / trials.max(1) as f64);
    }
    Ok(out)
}

/// Leader abnormality over one emergency-stop lap, using a model trained
/// on two normal laps.
#[wasm_bindgen]
pub struct EstopTrace {
    t: Vec<f64>,
    theta: Vec<f64>,
    label: Vec<u8>,
}

#[wasm_bindgen]
impl EstopTrace {
    #[wasm_bindgen(getter)]
    pub fn t(&self) -> Vec<f64> {
        self.t.clone()
    }

    /// NaN where no observation was scored.
    #[wasm_bindgen(getter)]
    pub fn theta(&self) -> Vec<f64> {
        self.theta.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn label(&self) -> Vec<u8> {
        self.label.clone()
    }
}

#[wasm_bindgen]
pub fn estop_trace(stop_at: f64, particles: usize, seed: u64) -> Result<EstopTrace, JsError> {
    let train_track = TrackSpec { laps: 2, ..TrackSpec::default() };
    let (leader, _) =
        scenario::generate_platoon(&train_track, 8.0, scenario::DEFAULT_NOISE_SIGMA, seed).map_err(js_err)?;
    let mut cfg = TrainConfig { seed, ..TrainConfig::default() };
    cfg.state_gng.epochs = 10;
    cfg.deriv_gng.epochs = 10;
    let model = vocabulary::train_agent_model(&leader.series, &cfg).map_err(js_err)?;

    let test_track = TrackSpec { laps: 1, ..TrackSpec::default() };
    let estop = EstopSpec { stop_at, ..EstopSpec::default() };
    let (test, _) = scenario::generate_emergency_stop(&test_track, &estop, seed.wrapping_add(100)).map_err(js_err)?;
    let obs: Vec<Option<Vec<f64>>> = model.observations(&test.series).into_iter().map(Some).collect();
    let mcfg = MjpfConfig {
        n_particles: particles.max(1),
        ..MjpfConfig::default()
    };
    let out = mjpf::run_sequence(&model, &test.series.timestamps, &obs, &mcfg, seed).map_err(js_err)?;
    Ok(EstopTrace {
        t: test.series.timestamps.clone(),
        theta: out.iter().map(|o| o.theta.unwrap_or(f64::NAN)).collect(),
        label: test.anomaly.iter().map(|&a| a as u8).collect(),
    })
}
