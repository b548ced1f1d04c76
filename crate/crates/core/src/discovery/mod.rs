//! Prototype-domain discovery.
//!
//! Alternates k-means in the current embedding space with fine-tuning the
//! embedding net to predict the cluster labels, until fewer than
//! `convergence_frac` of the samples change cluster between passes.

mod align;
pub mod io;
mod kmeans;

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{train_classifier, EmbedNet, InputPipeline, TrainSchedule};
use crate::pool::{DataPool, Sample};

pub use align::{adjusted_rand_index, align_labels, changed_fraction};
pub use io::{load_domain_model, read_domain_model, save_domain_model, write_discovery_log, write_domain_model};
pub use kmeans::{kmeans, kmeans_restarts, lloyd, lloyd_iteration, nearest, seed_plus_plus, sq_dist, ClusterState, MAX_LLOYD_ITERS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscoveryConfig {
    pub k: usize,
    pub restarts: usize,
    /// Unscaled fine-tuning iterations per outer pass.
    pub inner_iters: usize,
    pub lr0: f64,
    /// The learning rate is divided by 10 after this many outer passes.
    pub lr_drop_every_outer: usize,
    pub convergence_frac: f64,
    pub max_outer: usize,
    pub batch_size: usize,
    pub momentum: f64,
    /// Multiplies `inner_iters`.
    pub scale: f64,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        Self {
            k: 8,
            restarts: 25,
            inner_iters: 10_000,
            lr0: 0.001,
            lr_drop_every_outer: 2,
            convergence_frac: 0.01,
            max_outer: 20,
            batch_size: 32,
            momentum: 0.9,
            scale: 1.0,
        }
    }
}

impl DiscoveryConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.k < 2 {
            return bad("k must be ≥ 2");
        }
        if self.restarts == 0 {
            return bad("restarts must be ≥ 1");
        }
        if !(self.convergence_frac > 0.0 && self.convergence_frac < 1.0) {
            return bad("convergence_frac must be in (0, 1)");
        }
        if self.max_outer == 0 {
            return bad("max_outer must be ≥ 1");
        }
        if self.lr_drop_every_outer == 0 {
            return bad("lr_drop_every_outer must be ≥ 1");
        }
        self.inner_schedule(self.lr0).validate()
    }

    /// Learning rate for the fine-tuning that follows outer pass `outer`.
    pub fn lr_for_outer(&self, outer: usize) -> f64 {
        self.lr0 / 10f64.powi((outer / self.lr_drop_every_outer) as i32)
    }

    fn inner_schedule(&self, lr: f64) -> TrainSchedule {
        TrainSchedule {
            total_iters: self.inner_iters.max(1),
            lr0: lr,
            lr_drop_every: 0,
            lr_drop_factor: 10.0,
            batch_size: self.batch_size,
            momentum: self.momentum,
            scale: self.scale,
        }
    }
}

/// One outer discovery pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub outer: usize,
    pub inertia: f64,
    /// 1 for the first pass, which has nothing to compare against.
    pub changed_fraction: f64,
    pub lr: f64,
}

/// How a probe is routed to a domain at deployment time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainSelection {
    /// Nearest final k-means centroid.
    #[default]
    Centroid,
    /// Argmax of the cluster head.
    Head,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainModel {
    /// Cluster-headed embedding net from the last pass.
    pub net: EmbedNet,
    pub centroids: Vec<Vec<f64>>,
    pub assignments: BTreeMap<String, usize>,
    pub inertia: f64,
    pub history: Vec<OuterRecord>,
}

impl DomainModel {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn embed_dim(&self) -> usize {
        self.net.config().embed_dim
    }

    /// True when the last pass met the convergence threshold.
    pub fn converged(&self, convergence_frac: f64) -> bool {
        self.history
            .last()
            .is_some_and(|r| r.changed_fraction < convergence_frac)
    }

    /// Nearest final centroid (Euclidean); ties go to the lowest index.
    pub fn assign_domain(&self, embedding: &[f64]) -> Result<usize> {
        if embedding.len() != self.embed_dim() {
            return Err(Error::dims("domain embedding", self.embed_dim(), embedding.len()));
        }
        Ok(nearest(embedding, &self.centroids).0)
    }

    pub fn select_domain(&self, sample: &Sample, input: &InputPipeline, selection: DomainSelection) -> Result<usize> {
        let x = input.encode(sample)?;
        match selection {
            DomainSelection::Centroid => self.assign_domain(&self.net.embed(&x)?),
            DomainSelection::Head => {
                let d = self.net.predict(&x)?;
                if d >= self.k() {
                    return Err(Error::UnknownDomain(d));
                }
                Ok(d)
            }
        }
    }
}

/// Embeds every sample of `pool` with `net` (no augmentation).
pub fn embed_pool(net: &EmbedNet, pool: &DataPool, input: &InputPipeline) -> Result<Vec<Vec<f64>>> {
    pool.samples()
        .par_iter()
        .map(|s| net.embed(&input.encode(s)?))
        .collect()
}

/// Runs discovery over every sample in `pool`, starting from `init_net`.
pub fn discover<R: Rng + ?Sized>(
    pool: &DataPool,
    init_net: &EmbedNet,
    cfg: &DiscoveryConfig,
    input: &InputPipeline,
    rng: &mut R,
) -> Result<DomainModel> {
    cfg.validate()?;
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let ids: Vec<&str> = pool.samples().iter().map(|s| s.sample_id.as_str()).collect();
    let keyed = |labels: &[usize]| -> BTreeMap<String, usize> {
        ids.iter().map(|s| s.to_string()).zip(labels.iter().copied()).collect()
    };

    let mut net = init_net.clone();
    let mut history = Vec::new();
    let mut prev: Option<Vec<usize>> = None;
    let mut outer = 0;
    loop {
        let points = embed_pool(&net, pool, input)?;
        let mut state = kmeans(&points, cfg.k, cfg.restarts, rng)?;
        let changed = match &prev {
            None => 1.0,
            Some(p) => {
                let map = align_labels(p, &state.assignments, cfg.k)?;
                let fraction = changed_fraction(&keyed(p), &keyed(&state.assignments), &map)?;
                let mut centroids = vec![Vec::new(); cfg.k];
                for (c, centroid) in state.centroids.into_iter().enumerate() {
                    centroids[map[c]] = centroid;
                }
                state.centroids = centroids;
                state.assignments.iter_mut().for_each(|a| *a = map[*a]);
                fraction
            }
        };
        let lr = cfg.lr_for_outer(outer);
        history.push(OuterRecord {
            outer,
            inertia: state.inertia,
            changed_fraction: changed,
            lr,
        });
        let done = changed < cfg.convergence_frac || outer + 1 == cfg.max_outer;
        if done {
            return Ok(DomainModel {
                net,
                centroids: state.centroids,
                assignments: keyed(&state.assignments),
                inertia: state.inertia,
                history,
            });
        }
        // Labels are aligned with the previous pass, so the cluster head is
        // only created once and then keeps training.
        if net.config().head_dim != cfg.k || outer == 0 {
            net = net.replace_head(cfg.k, rng)?;
        }
        train_classifier(&mut net, pool, &state.assignments, &cfg.inner_schedule(lr), input, rng)?;
        prev = Some(state.assignments);
        outer += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetConfig;
    use crate::pool::{AugConfig, Payload, PersonLabel, Split};
    use crate::seeded_rng;

    fn input() -> InputPipeline {
        InputPipeline {
            aug: AugConfig::identity(),
            hist_bins: 4,
        }
    }

    fn identity_net(dim: usize) -> EmbedNet {
        let cfg = NetConfig {
            input_dim: dim,
            hidden_dims: vec![],
            embed_dim: dim,
            head_dim: 3,
            standardize_input: false,
        };
        let mut net = EmbedNet::new(cfg, &mut seeded_rng(0)).unwrap();
        let emb = &mut net.layers_mut()[0];
        emb.scale(0.0);
        for i in 0..dim {
            emb.weights[i * dim + i] = 1.0;
        }
        net
    }

    /// Three tight blobs in 2-D.
    fn blob_pool() -> DataPool {
        let centres = [[0.0, 0.0], [20.0, 0.0], [0.0, 20.0]];
        let mut rng = seeded_rng(3);
        let mut samples = Vec::new();
        for (b, c) in centres.iter().enumerate() {
            for i in 0..10 {
                let x = vec![c[0] + rng.random_range(-0.1..0.1), c[1] + rng.random_range(-0.1..0.1)];
                samples.push(Sample::new(
                    format!("b{b}s{i}"),
                    PersonLabel::Id(format!("b{b}p{}", i % 2)),
                    format!("src{}", i % 2),
                    Split::Train,
                    Payload::Feature(x),
                ));
            }
        }
        DataPool::new(samples).unwrap()
    }

    fn cfg(k: usize) -> DiscoveryConfig {
        DiscoveryConfig {
            k,
            restarts: 5,
            inner_iters: 50,
            ..DiscoveryConfig::default()
        }
    }

    #[test]
    fn planted_blobs_converge_within_two_passes() {
        let pool = blob_pool();
        let model = discover(&pool, &identity_net(2), &cfg(3), &input(), &mut seeded_rng(1)).unwrap();
        assert!(model.history.len() <= 2, "{:?}", model.history);
        assert_eq!(model.history.last().unwrap().changed_fraction, 0.0);
        assert_eq!(model.assignments.len(), pool.len());
    }

    #[test]
    fn single_outer_pass_skips_fine_tuning() {
        let pool = blob_pool();
        let init = identity_net(2);
        let c = DiscoveryConfig { max_outer: 1, ..cfg(3) };
        let model = discover(&pool, &init, &c, &input(), &mut seeded_rng(1)).unwrap();
        assert_eq!(model.history.len(), 1);
        assert_eq!(model.history[0].changed_fraction, 1.0);
        assert_eq!(model.net, init);
    }

    #[test]
    fn terminates_at_cap() {
        let mut rng = seeded_rng(5);
        let samples = (0..30)
            .map(|i| {
                Sample::new(
                    format!("s{i}"),
                    PersonLabel::Id(format!("p{}", i % 3)),
                    "src",
                    Split::Train,
                    Payload::Feature(vec![rng.random::<f64>(), rng.random::<f64>()]),
                )
            })
            .collect();
        let pool = DataPool::new(samples).unwrap();
        let c = DiscoveryConfig {
            max_outer: 3,
            convergence_frac: 1e-9,
            ..cfg(4)
        };
        let model = discover(&pool, &identity_net(2), &c, &input(), &mut seeded_rng(2)).unwrap();
        assert!(model.history.len() <= 3);
        assert!(model.history.len() == 3 || model.converged(c.convergence_frac));
    }

    #[test]
    fn discovery_is_deterministic() {
        let pool = blob_pool();
        let run = || discover(&pool, &identity_net(2), &cfg(3), &input(), &mut seeded_rng(8)).unwrap();
        assert_eq!(run(), run());
    }

    #[test]
    fn lr_drops_every_two_outer_passes() {
        let c = DiscoveryConfig::default();
        assert_eq!(c.lr_for_outer(0), 0.001);
        assert_eq!(c.lr_for_outer(1), 0.001);
        assert!((c.lr_for_outer(2) - 1e-4).abs() < 1e-18);
        assert!((c.lr_for_outer(5) - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn config_rejects_k_below_two() {
        let err = DiscoveryConfig { k: 1, ..DiscoveryConfig::default() }.validate().unwrap_err();
        assert!(err.to_string().contains("k must be ≥ 2"));
    }

    fn model_with(centroids: Vec<Vec<f64>>) -> DomainModel {
        DomainModel {
            net: identity_net(2),
            centroids,
            assignments: BTreeMap::new(),
            inertia: 0.0,
            history: vec![],
        }
    }

    #[test]
    fn assign_domain_rules() {
        let m = model_with(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![-1.0, 0.0], vec![5.0, 5.0]]);
        assert_eq!(m.assign_domain(&[5.0, 5.0]).unwrap(), 3);
        // (0, 3) is equidistant from centroids 1 and 2.
        let m2 = model_with(vec![vec![9.0, 9.0], vec![1.0, 0.0], vec![-1.0, 0.0]]);
        assert_eq!(m2.assign_domain(&[0.0, 3.0]).unwrap(), 1);
        assert!(m.assign_domain(&[1.0]).is_err());
    }

    #[test]
    fn assign_domain_matches_brute_force() {
        let mut rng = seeded_rng(12);
        let centroids: Vec<Vec<f64>> = (0..6).map(|_| vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]).collect();
        let m = model_with(centroids.clone());
        for _ in 0..100 {
            let e = vec![rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
            let dists: Vec<f64> = centroids.iter().map(|c| ((c[0] - e[0]).powi(2) + (c[1] - e[1]).powi(2)).sqrt()).collect();
            let min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
            let expected = dists.iter().position(|&d| d == min).unwrap();
            assert_eq!(m.assign_domain(&e).unwrap(), expected);
        }
    }
}
