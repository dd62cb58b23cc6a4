mod common;

use std::collections::BTreeMap;

use camjpf::channel::ChannelConfig;
use camjpf::mjpf::{run_sequence, MjpfConfig};
use camjpf::netsim::*;
use camjpf::scenario::{self, GapProfile, TrackSpec, DEFAULT_NOISE_SIGMA};
use camjpf::statespace::RawSeries;

fn small_filter() -> MjpfConfig {
    MjpfConfig { n_particles: 40, ..MjpfConfig::default() }
}

fn lossy(tx_power: f64) -> ChannelConfig {
    ChannelConfig { tx_power, k_factor: 0.0, ..ChannelConfig::for_rate(27.0, 0.0).unwrap() }
}

fn estop_series() -> Vec<RawSeries> {
    let (l, f) = common::estop_run(common::TEST_SEED);
    vec![l.series, f.series]
}

#[test]
fn ideal_channel_reproduces_local_traces() {
    let models = common::trained_models();
    let series = estop_series();
    for channel in [None, Some(ChannelConfig { sensitivity: f64::NEG_INFINITY, ..ChannelConfig::default() })] {
        let cfg = SimConfig { channel, mjpf: small_filter(), seed: 4, ..SimConfig::default() };
        let out = run_simulation(&cfg, &series, &models).unwrap();
        assert_eq!(out.summary.total.lost(), 0);
        for (d, s) in series.iter().enumerate() {
            let m = &models[&s.agent_id];
            let obs = m.observations(s).into_iter().map(Some).collect::<Vec<_>>();
            let local = run_sequence(m, &s.timestamps, &obs, &cfg.mjpf, filter_seed(cfg.seed, d)).unwrap();
            for observer in ["leader", "follower"] {
                assert_eq!(out.traces[&(observer.to_string(), s.agent_id.clone())], local);
            }
        }
    }
}

#[test]
fn conservation_and_delay_bounds() {
    let models = common::trained_models();
    let cfg = SimConfig { channel: Some(lossy(5.0)), mjpf: small_filter(), ..SimConfig::default() };
    let out = run_simulation(&cfg, &estop_series(), &models).unwrap();
    let tx = cfg.channel.as_ref().unwrap().transmission_time(PACKET_BYTES);
    assert!(out.summary.total.lost() > 0);
    for l in &out.summary.links {
        assert_eq!(l.sent, l.delivered + l.channel_lost + l.range_lost + l.late_lost);
        assert_eq!(l.sent as usize, out.timestamps.len());
    }
    for r in &out.log.records {
        if let Some(t) = r.recv_t {
            assert!(t - r.sent_t >= tx);
        }
        assert_eq!(r.recv_t.is_none(), matches!(r.outcome, Outcome::ChannelLost | Outcome::RangeLost));
    }
    let trace = &out.traces[&("follower".to_string(), "leader".to_string())];
    let delivered = out.log.records.iter().filter(|r| r.src == "leader" && r.outcome == Outcome::Delivered).count();
    assert_eq!(trace.iter().filter(|s| s.measured).count(), delivered);
}

#[test]
fn zero_playout_makes_every_packet_late() {
    let models = common::trained_models();
    let cfg = SimConfig {
        channel: Some(ChannelConfig::default()),
        playout_delay: Some(0.0),
        mjpf: small_filter(),
        pairs: Some(vec![("follower".into(), "leader".into())]),
        ..SimConfig::default()
    };
    let out = run_simulation(&cfg, &estop_series(), &models).unwrap();
    let t = &out.summary.total;
    assert_eq!(t.late_lost, t.sent - t.channel_lost - t.range_lost);
    assert!(out.traces.values().next().unwrap().iter().all(|s| !s.measured));
}

#[test]
fn same_seed_same_log() {
    let models = common::trained_models();
    let cfg = SimConfig { channel: Some(lossy(5.0)), mjpf: small_filter(), seed: 11, ..SimConfig::default() };
    let a = run_simulation(&cfg, &estop_series(), &models).unwrap();
    let b = run_simulation(&cfg, &estop_series(), &models).unwrap();
    assert_eq!(a.log.csv_bytes().unwrap(), b.log.csv_bytes().unwrap());
    assert_eq!(a.traces, b.traces);
    let c = run_simulation(&SimConfig { seed: 12, ..cfg }, &estop_series(), &models).unwrap();
    assert_ne!(a.log, c.log);
}

#[test]
fn losses_cluster_at_large_gaps() {
    let spec = TrackSpec { laps: 2, ..TrackSpec::default() };
    let gap = GapProfile { mean: 30.0, amplitude: 20.0, period: 100.0 };
    let (l, f) = scenario::generate_varying_gap(&spec, &gap, DEFAULT_NOISE_SIGMA, 3).unwrap();
    let models = common::trained_models();
    let cfg = SimConfig {
        channel: Some(lossy(0.0)),
        mjpf: small_filter(),
        pairs: Some(Vec::new()),
        ..SimConfig::default()
    };
    let out = run_simulation(&cfg, &[l.series, f.series], &models).unwrap();
    let mean = |lost: bool| {
        let d: Vec<f64> = out
            .log
            .records
            .iter()
            .filter(|r| (r.outcome != Outcome::Delivered) == lost)
            .map(|r| r.distance)
            .collect();
        (d.iter().sum::<f64>() / d.len() as f64, d.len())
    };
    let (lost_d, n_lost) = mean(true);
    let (ok_d, _) = mean(false);
    assert!(n_lost > 20);
    assert!(lost_d > ok_d + 5.0, "lost at {lost_d:.1} m, delivered at {ok_d:.1} m");
}

#[test]
fn tx_period_thins_remote_observations() {
    let models = common::trained_models();
    let series = estop_series();
    let dt = series[0].uniform_dt().unwrap();
    let cfg = SimConfig {
        channel: None,
        tx_period: Some(2.0 * dt),
        mjpf: small_filter(),
        pairs: Some(vec![("follower".into(), "leader".into()), ("leader".into(), "leader".into())]),
        ..SimConfig::default()
    };
    let out = run_simulation(&cfg, &series, &models).unwrap();
    let remote = &out.traces[&("follower".to_string(), "leader".to_string())];
    let local = &out.traces[&("leader".to_string(), "leader".to_string())];
    assert!(local.iter().all(|s| s.measured));
    assert!(remote.iter().enumerate().all(|(k, s)| s.measured == (k % 2 == 0)));
    assert_eq!(out.summary.total.sent as usize, 2 * series[0].len().div_ceil(2));
}

#[test]
fn abnormality_payload_forwards_sender_theta() {
    let models = common::trained_models();
    let series = estop_series();
    let cfg = SimConfig {
        channel: None,
        payload: PayloadMode::Abnormality,
        mjpf: small_filter(),
        pairs: Some(vec![("follower".into(), "leader".into()), ("leader".into(), "leader".into())]),
        ..SimConfig::default()
    };
    let out = run_simulation(&cfg, &series, &models).unwrap();
    let remote = &out.traces[&("follower".to_string(), "leader".to_string())];
    let local = &out.traces[&("leader".to_string(), "leader".to_string())];
    for (r, l) in remote.iter().zip(local) {
        assert_eq!(r.theta, l.theta);
    }
}

#[test]
fn missing_model_is_rejected() {
    let mut models = common::trained_models();
    models.remove("leader");
    let cfg = SimConfig { mjpf: small_filter(), ..SimConfig::default() };
    assert!(matches!(run_simulation(&cfg, &estop_series(), &models), Err(camjpf::Error::MissingModel(_))));
    let _: BTreeMap<String, _> = models;
}

#[test]
fn outputs_written() {
    let models = common::trained_models();
    let cfg = SimConfig {
        channel: Some(lossy(5.0)),
        mjpf: small_filter(),
        mode_switch_loss_threshold: Some(0.01),
        pairs: Some(vec![("follower".into(), "leader".into())]),
        ..SimConfig::default()
    };
    let out = run_simulation(&cfg, &estop_series(), &models).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_outputs(dir.path(), &out, &models).unwrap();
    let log = std::fs::read_to_string(dir.path().join("comm_log.csv")).unwrap();
    assert!(log.starts_with("src,dst,seq,sent_t,recv_t,delay,distance,pr_dbm,outcome\n"));
    assert!(log.contains(",LOST,"));
    assert!(dir.path().join("abnormality_follower_leader.csv").exists());
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["packet_bytes"], 74);
    assert!(summary["mode_switch"]["exceeded"].is_boolean());
}
