//! Growing neural gas with a utility measure (GNG-U).
//!
//! Nodes are inserted every `lambda_insert` presentations next to the node
//! with the largest accumulated error, edges age out after `max_age`, and the
//! node with the smallest utility is dropped when the largest error exceeds
//! `utility_k` times that utility. After the fixed epoch budget every sample
//! is hard-assigned to its nearest node and the node statistics (mean,
//! per-dimension variance, member count) are recomputed from the members.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GngParams {
    pub eps_b: f64,
    pub eps_n: f64,
    pub max_age: u32,
    pub lambda_insert: usize,
    pub alpha: f64,
    pub beta: f64,
    pub utility_k: f64,
    pub max_nodes: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for GngParams {
    fn default() -> Self {
        GngParams {
            eps_b: 0.05,
            eps_n: 0.005,
            max_age: 100,
            lambda_insert: 100,
            alpha: 0.5,
            beta: 0.995,
            utility_k: 3.0,
            max_nodes: 40,
            epochs: 30,
            seed: 0,
        }
    }
}

impl GngParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !(0.0 < self.eps_n && self.eps_n < self.eps_b && self.eps_b < 1.0) {
            return bad("GNG learning rates must satisfy 0 < eps_n < eps_b < 1");
        }
        if self.max_nodes < 2 {
            return bad("GNG max_nodes must be at least 2");
        }
        if self.lambda_insert < 1 {
            return bad("GNG lambda_insert must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.alpha) || !(0.0..=1.0).contains(&self.beta) {
            return bad("GNG alpha and beta must lie in [0, 1]");
        }
        if !(self.utility_k > 0.0) {
            return bad("GNG utility_k must be positive");
        }
        Ok(())
    }
}

/// One letter: a Gaussian summary of the samples assigned to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub error: f64,
    pub utility: f64,
    pub member_count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub age: u32,
}

/// A fitted vocabulary of letters for one derivative order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSet {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub derivative_order: usize,
}

impl NodeSet {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.nodes.first().map_or(0, |n| n.mean.len())
    }

    /// Node ids sorted by distance to `sample` (ties by id).
    pub fn nearest(&self, sample: &[f64], k: usize) -> Vec<usize> {
        let mut d: Vec<(f64, usize)> = self.nodes.iter().map(|n| (sq_dist(&n.mean, sample), n.id)).collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d.into_iter().take(k).map(|(_, id)| id).collect()
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Id of the node whose mean is closest to `sample`; the lowest id wins ties.
pub fn assign(node_set: &NodeSet, sample: &[f64]) -> Result<usize> {
    let first = node_set.nodes.first().ok_or(Error::EmptyNodeSet)?;
    if first.mean.len() != sample.len() {
        return Err(Error::DimensionMismatch {
            expected: first.mean.len(),
            got: sample.len(),
        });
    }
    let mut best = (f64::INFINITY, first.id);
    for n in &node_set.nodes {
        let d = sq_dist(&n.mean, sample);
        if d < best.0 {
            best = (d, n.id);
        }
    }
    Ok(best.1)
}

/// Mean squared distance from samples to their assigned node mean.
pub fn quantization_error(node_set: &NodeSet, samples: &[Vec<f64>]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for s in samples {
        let id = assign(node_set, s)?;
        total += sq_dist(&node_set.nodes[id].mean, s);
    }
    Ok(total / samples.len() as f64)
}

/// Training-time network; node indices shift when a node is removed.
struct Net {
    w: Vec<Vec<f64>>,
    err: Vec<f64>,
    util: Vec<f64>,
    /// Symmetric edge-age matrix.
    age: Vec<Vec<Option<u32>>>,
}

impl Net {
    fn with_nodes(w: Vec<Vec<f64>>) -> Self {
        let n = w.len();
        Net {
            w,
            err: vec![0.0; n],
            util: vec![0.0; n],
            age: vec![vec![None; n]; n],
        }
    }

    fn len(&self) -> usize {
        self.w.len()
    }

    fn connect(&mut self, a: usize, b: usize) {
        self.age[a][b] = Some(0);
        self.age[b][a] = Some(0);
    }

    fn disconnect(&mut self, a: usize, b: usize) {
        self.age[a][b] = None;
        self.age[b][a] = None;
    }

    fn neighbors(&self, a: usize) -> impl Iterator<Item = usize> + '_ {
        self.age[a].iter().enumerate().filter_map(|(i, e)| e.map(|_| i))
    }

    fn remove(&mut self, i: usize) {
        self.w.remove(i);
        self.err.remove(i);
        self.util.remove(i);
        self.age.remove(i);
        for row in &mut self.age {
            row.remove(i);
        }
    }

    fn push(&mut self, w: Vec<f64>, err: f64, util: f64) -> usize {
        self.w.push(w);
        self.err.push(err);
        self.util.push(util);
        for row in &mut self.age {
            row.push(None);
        }
        self.age.push(vec![None; self.w.len()]);
        self.w.len() - 1
    }

    /// Two nearest nodes and their squared distances.
    fn winners(&self, x: &[f64]) -> (usize, f64, usize, f64) {
        let (mut s1, mut d1, mut s2, mut d2) = (0, f64::INFINITY, 0, f64::INFINITY);
        for (i, w) in self.w.iter().enumerate() {
            let d = sq_dist(w, x);
            if d < d1 {
                (s2, d2) = (s1, d1);
                (s1, d1) = (i, d);
            } else if d < d2 {
                (s2, d2) = (i, d);
            }
        }
        (s1, d1, s2, d2)
    }

    fn adapt(&mut self, x: &[f64], p: &GngParams) {
        let (s1, d1, s2, d2) = self.winners(x);
        for i in 0..self.len() {
            if let Some(a) = self.age[s1][i] {
                self.age[s1][i] = Some(a + 1);
                self.age[i][s1] = Some(a + 1);
            }
        }
        self.err[s1] += d1;
        self.util[s1] += d2 - d1;
        for (wd, xd) in self.w[s1].iter_mut().zip(x) {
            *wd += p.eps_b * (xd - *wd);
        }
        let nb: Vec<usize> = self.neighbors(s1).collect();
        for n in nb {
            for (wd, xd) in self.w[n].iter_mut().zip(x) {
                *wd += p.eps_n * (xd - *wd);
            }
        }
        if s1 != s2 {
            self.connect(s1, s2);
        }
        // only edges at s1 aged, so only they can expire
        let mut dropped = Vec::new();
        for k in 0..self.len() {
            if self.age[s1][k].is_some_and(|a| a > p.max_age) {
                self.disconnect(s1, k);
                dropped.push(k);
            }
        }
        // isolated nodes are dropped, keeping at least two
        dropped.sort_unstable_by(|a, b| b.cmp(a));
        for k in dropped {
            if self.len() > 2 && self.neighbors(k).next().is_none() {
                self.remove(k);
            }
        }
    }

    fn remove_useless(&mut self, p: &GngParams) {
        if self.len() <= 2 {
            return;
        }
        let max_err = self.err.iter().copied().fold(0.0, f64::max);
        let (i_min, u_min) = self
            .util
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, u)| if u < acc.1 { (i, u) } else { acc });
        let ratio = if u_min > 0.0 { max_err / u_min } else { f64::INFINITY };
        if max_err > 0.0 && ratio > p.utility_k {
            self.remove(i_min);
        }
    }

    fn insert(&mut self, p: &GngParams) {
        if self.len() >= p.max_nodes {
            return;
        }
        let q = argmax(&self.err);
        let Some(f) = self.neighbors(q).max_by(|&a, &b| self.err[a].total_cmp(&self.err[b]).then(b.cmp(&a))) else {
            return;
        };
        let w: Vec<f64> = self.w[q].iter().zip(&self.w[f]).map(|(a, b)| 0.5 * (a + b)).collect();
        self.err[q] *= p.alpha;
        self.err[f] *= p.alpha;
        let util = 0.5 * (self.util[q] + self.util[f]);
        let r = self.push(w, self.err[q], util);
        self.disconnect(q, f);
        self.connect(q, r);
        self.connect(r, f);
    }

    fn decay(&mut self, beta: f64) {
        self.err.iter_mut().for_each(|e| *e *= beta);
        self.util.iter_mut().for_each(|u| *u *= beta);
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, x)| if x > acc.1 { (i, x) } else { acc })
        .0
}

fn check_samples(samples: &[Vec<f64>]) -> Result<usize> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples {
            need: 2,
            got: samples.len(),
        });
    }
    let d = samples[0].len();
    if d == 0 {
        return Err(Error::InvalidParameter("samples have zero dimension".into()));
    }
    if let Some(bad) = samples.iter().find(|s| s.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: bad.len(),
        });
    }
    Ok(d)
}

/// Fits a node set to `samples`, starting from two random samples.
pub fn gng_fit(samples: &[Vec<f64>], params: &GngParams, derivative_order: usize) -> Result<NodeSet> {
    check_samples(samples)?;
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let a = rng.random_range(0..samples.len());
    let mut b = rng.random_range(0..samples.len() - 1);
    if b >= a {
        b += 1;
    }
    let init = vec![samples[a].clone(), samples[b].clone()];
    train(samples, params, derivative_order, init, rng)
}

/// Fits a node set from explicit initial node positions (at least two).
pub fn gng_fit_from(
    samples: &[Vec<f64>],
    params: &GngParams,
    derivative_order: usize,
    init: Vec<Vec<f64>>,
) -> Result<NodeSet> {
    let d = check_samples(samples)?;
    params.validate()?;
    if init.len() < 2 || init.iter().any(|w| w.len() != d) {
        return Err(Error::InvalidParameter(
            "initial nodes must be at least two vectors of the sample dimension".into(),
        ));
    }
    let rng = ChaCha8Rng::seed_from_u64(params.seed);
    train(samples, params, derivative_order, init, rng)
}

fn train(
    samples: &[Vec<f64>],
    params: &GngParams,
    derivative_order: usize,
    init: Vec<Vec<f64>>,
    mut rng: ChaCha8Rng,
) -> Result<NodeSet> {
    let mut net = Net::with_nodes(init);
    for i in 0..net.len() {
        for k in (i + 1)..net.len() {
            net.connect(i, k);
        }
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut step = 0usize;
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            net.adapt(&samples[i], params);
            step += 1;
            if step % params.lambda_insert == 0 {
                net.remove_useless(params);
                net.insert(params);
            }
            net.decay(params.beta);
        }
    }
    Ok(finalize(net, samples, derivative_order))
}

/// Hard assignment pass: node statistics from members, empty nodes dropped.
fn finalize(net: Net, samples: &[Vec<f64>], derivative_order: usize) -> NodeSet {
    let d = samples[0].len();
    let n = net.len();
    let mut count = vec![0usize; n];
    let mut sum = vec![vec![0.0; d]; n];
    let mut members: Vec<usize> = Vec::with_capacity(samples.len());
    for s in samples {
        let (s1, ..) = net.winners(s);
        members.push(s1);
        count[s1] += 1;
        for (acc, v) in sum[s1].iter_mut().zip(s) {
            *acc += v;
        }
    }
    let means: Vec<Vec<f64>> = sum
        .iter()
        .zip(&count)
        .map(|(s, &c)| s.iter().map(|v| if c > 0 { v / c as f64 } else { 0.0 }).collect())
        .collect();
    let mut var = vec![vec![0.0; d]; n];
    for (s, &m) in samples.iter().zip(&members) {
        for k in 0..d {
            let e = s[k] - means[m][k];
            var[m][k] += e * e;
        }
    }

    let mut remap = vec![None; n];
    let mut nodes = Vec::new();
    for i in 0..n {
        if count[i] == 0 {
            continue;
        }
        let id = nodes.len();
        remap[i] = Some(id);
        nodes.push(Node {
            id,
            mean: means[i].clone(),
            var: var[i].iter().map(|v| v / count[i] as f64).collect(),
            error: net.err[i],
            utility: net.util[i],
            member_count: count[i],
        });
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for k in (i + 1)..n {
            if let (Some(age), Some(a), Some(b)) = (net.age[i][k], remap[i], remap[k]) {
                edges.push(Edge { a, b, age });
            }
        }
    }
    NodeSet {
        nodes,
        edges,
        derivative_order,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(seed: u64) -> (Vec<Vec<f64>>, Vec<[f64; 2]>) {
        let centers = vec![[0.15, 0.2], [0.8, 0.3], [0.45, 0.85]];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.02).unwrap();
        let mut samples = Vec::new();
        for _ in 0..300 {
            for c in &centers {
                samples.push(vec![c[0] + noise.sample(&mut rng), c[1] + noise.sample(&mut rng)]);
            }
        }
        (samples, centers)
    }

    /// Plain Lloyd iterations, used only to cross-check the cluster centers.
    fn kmeans(samples: &[Vec<f64>], mut centers: Vec<Vec<f64>>, iters: usize) -> Vec<Vec<f64>> {
        for _ in 0..iters {
            let mut sum = vec![vec![0.0; 2]; centers.len()];
            let mut cnt = vec![0usize; centers.len()];
            for s in samples {
                let k = (0..centers.len())
                    .min_by(|&a, &b| sq_dist(&centers[a], s).total_cmp(&sq_dist(&centers[b], s)))
                    .unwrap();
                cnt[k] += 1;
                sum[k][0] += s[0];
                sum[k][1] += s[1];
            }
            for k in 0..centers.len() {
                if cnt[k] > 0 {
                    centers[k] = vec![sum[k][0] / cnt[k] as f64, sum[k][1] / cnt[k] as f64];
                }
            }
        }
        centers
    }

    #[test]
    fn recovers_separated_clusters() {
        let (samples, centers) = blobs(3);
        let params = GngParams {
            max_nodes: 16,
            epochs: 10,
            seed: 11,
            ..GngParams::default()
        };
        let ns = gng_fit(&samples, &params, 0).unwrap();
        assert!(ns.len() <= 16);
        let init: Vec<Vec<f64>> = vec![samples[0].clone(), samples[1].clone(), samples[2].clone()];
        let oracle = kmeans(&samples, init, 20);
        for c in &oracle {
            let best = ns.nodes.iter().map(|n| sq_dist(&n.mean, c).sqrt()).fold(f64::INFINITY, f64::min);
            assert!(best < 0.05, "center {c:?} missed by {best}");
        }
        for c in &centers {
            let best = ns
                .nodes
                .iter()
                .map(|n| sq_dist(&n.mean, c).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 0.05);
        }
    }

    #[test]
    fn identical_samples_collapse() {
        let samples = vec![vec![0.3, 0.7, 0.1]; 200];
        let ns = gng_fit(&samples, &GngParams::default(), 0).unwrap();
        for n in &ns.nodes {
            for (m, v) in n.mean.iter().zip(&samples[0]) {
                assert!((m - v).abs() < 1e-9);
            }
        }
        assert_eq!(ns.nodes.iter().map(|n| n.member_count).sum::<usize>(), 200);
    }

    #[test]
    fn deterministic_per_seed() {
        let (samples, _) = blobs(5);
        let p = GngParams {
            epochs: 3,
            ..GngParams::default()
        };
        let a = gng_fit(&samples, &p, 1).unwrap();
        let b = gng_fit(&samples, &p, 1).unwrap();
        assert_eq!(a, b);
        let c = gng_fit(&samples, &GngParams { seed: 99, ..p }, 1).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn assign_rules() {
        let node = |id, m: Vec<f64>| Node {
            id,
            mean: m,
            var: vec![0.0; 1],
            error: 0.0,
            utility: 0.0,
            member_count: 1,
        };
        let ns = NodeSet {
            nodes: vec![
                node(0, vec![10.0]),
                node(1, vec![20.0]),
                node(2, vec![0.0]),
                node(3, vec![7.0]),
                node(4, vec![30.0]),
                node(5, vec![2.0]),
            ],
            edges: vec![],
            derivative_order: 0,
        };
        assert_eq!(assign(&ns, &[7.0]).unwrap(), 3);
        assert_eq!(assign(&ns, &[1.0]).unwrap(), 2);
        assert_eq!(assign(&ns, &[-1e6]).unwrap(), 2);
        assert_eq!(assign(&ns, &[1e6]).unwrap(), 4);
        for n in &ns.nodes {
            assert_eq!(assign(&ns, &n.mean).unwrap(), n.id);
        }
        let empty = NodeSet {
            nodes: vec![],
            edges: vec![],
            derivative_order: 0,
        };
        assert!(matches!(assign(&empty, &[0.0]), Err(Error::EmptyNodeSet)));
        assert!(assign(&ns, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn beats_single_node_quantization() {
        let (samples, _) = blobs(8);
        let ns = gng_fit(&samples, &GngParams { epochs: 5, ..GngParams::default() }, 0).unwrap();
        let mean: Vec<f64> = (0..2)
            .map(|k| samples.iter().map(|s| s[k]).sum::<f64>() / samples.len() as f64)
            .collect();
        let single = samples.iter().map(|s| sq_dist(s, &mean)).sum::<f64>() / samples.len() as f64;
        assert!(quantization_error(&ns, &samples).unwrap() < single);
    }

    #[test]
    fn isolated_planted_node_is_removed() {
        let (samples, _) = blobs(2);
        let far = vec![50.0, 50.0];
        let init = vec![samples[0].clone(), samples[1].clone(), far.clone()];
        let p = GngParams {
            max_nodes: 6,
            epochs: 2,
            ..GngParams::default()
        };
        let ns = gng_fit_from(&samples, &p, 0, init).unwrap();
        assert!(ns.nodes.iter().all(|n| sq_dist(&n.mean, &far) > 1.0));
        assert!(ns.nodes.iter().all(|n| n.member_count > 0));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            gng_fit(&[vec![0.0, 1.0], vec![1.0]], &GngParams::default(), 0),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(gng_fit(&[vec![0.0]], &GngParams::default(), 0).is_err());
        let bad = GngParams {
            eps_n: 0.5,
            ..GngParams::default()
        };
        assert!(gng_fit(&[vec![0.0], vec![1.0]], &bad, 0).is_err());
    }

    #[test]
    fn edges_reference_nodes_and_respect_age() {
        let (samples, _) = blobs(4);
        let p = GngParams {
            epochs: 4,
            ..GngParams::default()
        };
        let ns = gng_fit(&samples, &p, 0).unwrap();
        for e in &ns.edges {
            assert!(e.a < ns.len() && e.b < ns.len());
            assert!(e.age <= p.max_age);
        }
        assert!(ns.nodes.iter().all(|n| n.var.iter().all(|&v| v >= 0.0)));
    }
}
