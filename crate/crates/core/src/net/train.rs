use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EmbedNet, GradSet, InputNorm, InputPipeline, NetConfig};
use crate::error::{Error, Result};
use crate::pool::{balanced_indices, DataPool, Sample};

/// Step-decay SGD schedule. Iteration counts are multiplied by `scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    pub total_iters: usize,
    pub lr0: f64,
    /// Unscaled iterations between learning-rate drops; 0 disables drops.
    pub lr_drop_every: usize,
    pub lr_drop_factor: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub scale: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self::baseline()
    }
}

impl TrainSchedule {
    /// Generic ID model: 60k iterations from 0.1, divided by 10 every 20k.
    pub fn baseline() -> Self {
        Self {
            total_iters: 60_000,
            lr0: 0.1,
            lr_drop_every: 20_000,
            lr_drop_factor: 10.0,
            batch_size: 32,
            momentum: 0.9,
            scale: 1.0,
        }
    }

    /// Per-domain fine-tuning: 30k iterations at 0.001.
    pub fn domain() -> Self {
        Self {
            total_iters: 30_000,
            lr0: 0.001,
            lr_drop_every: 0,
            ..Self::baseline()
        }
    }

    /// Hard-negative pass: 10k iterations at 1e-5.
    pub fn hard_negative() -> Self {
        Self {
            total_iters: 10_000,
            lr0: 1e-5,
            lr_drop_every: 0,
            ..Self::baseline()
        }
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.total_iters == 0 {
            return bad("total_iters must be >= 1".into());
        }
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be finite and >= 0, got {}", self.lr0));
        }
        if !(self.lr_drop_factor > 1.0) {
            return bad(format!("lr_drop_factor must be > 1, got {}", self.lr_drop_factor));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return bad(format!("scale must be in (0, 1], got {}", self.scale));
        }
        Ok(())
    }

    fn scaled(&self, n: usize) -> usize {
        ((n as f64 * self.scale).ceil() as usize).max(1)
    }

    pub fn effective_iters(&self) -> usize {
        self.scaled(self.total_iters)
    }

    pub fn lr_at(&self, iter: usize) -> f64 {
        if self.lr_drop_every == 0 {
            return self.lr0;
        }
        let drops = iter / self.scaled(self.lr_drop_every);
        self.lr0 / self.lr_drop_factor.powi(drops as i32)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    /// Mini-batch loss before each update.
    pub losses: Vec<f64>,
}

/// Sorted identity list of `pool` and each sample's index into it.
pub fn class_labels(pool: &DataPool) -> Result<(Vec<String>, Vec<usize>)> {
    let classes: Vec<String> = pool.identities().into_iter().map(str::to_owned).collect();
    let index: BTreeMap<&str, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let labels = pool
        .samples()
        .iter()
        .map(|s| {
            s.person_id().map(|p| index[p]).ok_or_else(|| {
                Error::InvalidArgument(format!("sample `{}` has no identity", s.sample_id))
            })
        })
        .collect::<Result<_>>()?;
    Ok((classes, labels))
}

fn run_sgd<R, F>(net: &mut EmbedNet, sched: &TrainSchedule, rng: &mut R, mut draw: F) -> Result<TrainLog>
where
    R: Rng + ?Sized,
    F: FnMut(&mut R) -> Result<(Vec<Vec<f64>>, Vec<usize>)>,
{
    sched.validate()?;
    let mut velocity = GradSet::zeros_like(net.layers());
    let mut log = TrainLog::default();
    for t in 0..sched.effective_iters() {
        let (xs, labels) = draw(rng)?;
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let (loss, grads) = net.loss_and_grads(&refs, &labels)?;
        if !loss.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "training diverged at iteration {t} (loss {loss})"
            )));
        }
        net.sgd_step(&grads, sched.lr_at(t), sched.momentum, &mut velocity);
        log.losses.push(loss);
    }
    if !net.is_finite() {
        return Err(Error::InvalidArgument("training produced non-finite weights".into()));
    }
    Ok(log)
}

/// Trains `net`'s current head on `labels` (aligned with `pool.samples()`)
/// using source-balanced batches and augmentation.
pub fn train_classifier<R: Rng + ?Sized>(
    net: &mut EmbedNet,
    pool: &DataPool,
    labels: &[usize],
    sched: &TrainSchedule,
    input: &InputPipeline,
    rng: &mut R,
) -> Result<TrainLog> {
    if labels.len() != pool.len() {
        return Err(Error::dims("labels", pool.len(), labels.len()));
    }
    let samples = pool.samples();
    run_sgd(net, sched, rng, |rng| {
        let idx = balanced_indices(pool, sched.batch_size, rng)?;
        let xs = idx
            .iter()
            .map(|&i| input.encode_augmented(&samples[i], rng))
            .collect::<Result<_>>()?;
        Ok((xs, idx.iter().map(|&i| labels[i]).collect()))
    })
}

fn check_input_dim(pool: &DataPool, input: &InputPipeline, expected: usize) -> Result<()> {
    for s in pool.samples() {
        let d = input.input_dim(s);
        if d != expected {
            return Err(Error::dims(format!("sample `{}`", s.sample_id), expected, d));
        }
    }
    Ok(())
}

/// Generic ID-supervised model over every identity in `pool`.
///
/// The head is sized to the number of identities; distractor and junk samples
/// are ignored.
pub fn train_id_baseline<R: Rng + ?Sized>(
    pool: &DataPool,
    net_cfg: &NetConfig,
    sched: &TrainSchedule,
    input: &InputPipeline,
    rng: &mut R,
) -> Result<(EmbedNet, TrainLog)> {
    let pool = pool.filter(|s| s.person_id().is_some());
    let (classes, labels) = class_labels(&pool)?;
    if classes.len() < 2 {
        return Err(Error::TooFewIdentities(classes.len()));
    }
    check_input_dim(&pool, input, net_cfg.input_dim)?;
    let cfg = NetConfig {
        head_dim: classes.len(),
        ..net_cfg.clone()
    };
    let mut net = EmbedNet::new(cfg, rng)?;
    if net.config().standardize_input {
        let rows = pool
            .samples()
            .iter()
            .map(|s| input.encode(s))
            .collect::<Result<Vec<_>>>()?;
        net.set_norm(Some(InputNorm::fit(&rows)?));
    }
    let log = train_classifier(&mut net, &pool, &labels, sched, input, rng)?;
    Ok((net, log))
}

/// Continues training `base` on one domain's pool with a head sized to its identities.
pub fn fine_tune_domain<R: Rng + ?Sized>(
    base: &EmbedNet,
    dpool: &DataPool,
    sched: &TrainSchedule,
    input: &InputPipeline,
    rng: &mut R,
) -> Result<(EmbedNet, TrainLog)> {
    let dpool = dpool.filter(|s| s.person_id().is_some());
    if dpool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let (classes, labels) = class_labels(&dpool)?;
    if classes.len() < 2 {
        return Err(Error::TooFewIdentities(classes.len()));
    }
    check_input_dim(&dpool, input, base.config().input_dim)?;
    let mut net = base.replace_head(classes.len(), rng)?;
    let log = train_classifier(&mut net, &dpool, &labels, sched, input, rng)?;
    Ok((net, log))
}

/// Training samples the head currently misclassifies (argmax of the logits
/// differs from the sample's class index in `pool`).
pub fn mine_hard_negatives<'a>(
    net: &EmbedNet,
    pool: &'a DataPool,
    input: &InputPipeline,
) -> Result<Vec<&'a Sample>> {
    let (classes, labels) = class_labels(pool)?;
    if classes.len() != net.config().head_dim {
        return Err(Error::dims("head vs pool identities", classes.len(), net.config().head_dim));
    }
    let mut hard = Vec::new();
    for (s, &label) in pool.samples().iter().zip(&labels) {
        if net.predict(&input.encode(s)?)? != label {
            hard.push(s);
        }
    }
    Ok(hard)
}

/// Fine-tunes on the hard subset only, sampling it uniformly with replacement.
/// Class indices come from `pool`, the pool the hard samples were mined from.
pub fn fine_tune_hard<R: Rng + ?Sized>(
    net: &EmbedNet,
    pool: &DataPool,
    hard: &[&Sample],
    sched: &TrainSchedule,
    input: &InputPipeline,
    rng: &mut R,
) -> Result<EmbedNet> {
    let mut net = net.clone();
    if hard.is_empty() || sched.lr0 == 0.0 {
        return Ok(net);
    }
    let (classes, _) = class_labels(pool)?;
    let index: BTreeMap<&str, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let labels = hard
        .iter()
        .map(|s| {
            s.person_id()
                .and_then(|p| index.get(p).copied())
                .ok_or_else(|| Error::InvalidArgument(format!("hard sample `{}` not in pool", s.sample_id)))
        })
        .collect::<Result<Vec<usize>>>()?;
    run_sgd(&mut net, sched, rng, |rng| {
        let mut xs = Vec::with_capacity(sched.batch_size);
        let mut ys = Vec::with_capacity(sched.batch_size);
        for _ in 0..sched.batch_size {
            let i = rng.random_range(0..hard.len());
            xs.push(input.encode_augmented(hard[i], rng)?);
            ys.push(labels[i]);
        }
        Ok((xs, ys))
    })?;
    Ok(net)
}
