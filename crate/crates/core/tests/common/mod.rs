#![allow(dead_code)]

use std::collections::BTreeMap;

use camjpf::scenario::{self, EstopSpec, LabeledSeries, TrackSpec, DEFAULT_NOISE_SIGMA};
use camjpf::vocabulary::{train_agent_model, AgentModel, TrainConfig};

pub const TRAIN_SEED: u64 = 1;
pub const TEST_SEED: u64 = 101;

/// Leader and follower models trained on a four-lap platoon run.
pub fn trained_models() -> BTreeMap<String, AgentModel> {
    let (leader, follower) = scenario::generate_platoon(&TrackSpec::default(), 8.0, DEFAULT_NOISE_SIGMA, TRAIN_SEED).unwrap();
    let cfg = TrainConfig::default();
    let mut models = BTreeMap::new();
    for s in [leader, follower] {
        let m = train_agent_model(&s.series, &cfg).unwrap();
        models.insert(s.series.agent_id.clone(), m);
    }
    models
}

/// One-lap emergency-stop test run.
pub fn estop_run(seed: u64) -> (LabeledSeries, LabeledSeries) {
    let spec = TrackSpec { laps: 1, ..TrackSpec::default() };
    scenario::generate_emergency_stop(&spec, &EstopSpec::default(), seed).unwrap()
}
