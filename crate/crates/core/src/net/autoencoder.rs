use rand::Rng;

use super::layer::{self, Activation, Dense};
use super::train::{TrainLog, TrainSchedule};
use super::{EmbedNet, GradSet, InputNorm, InputPipeline, NetConfig};
use crate::error::{Error, Result};
use crate::pool::{balanced_indices, DataPool};

/// Encoder with the embedding net's topology plus a mirrored decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    encoder: EmbedNet,
    decoder: Vec<Dense>,
}

impl Autoencoder {
    pub fn new<R: Rng + ?Sized>(config: NetConfig, rng: &mut R) -> Result<Self> {
        let encoder = EmbedNet::new(config, rng)?;
        let cfg = encoder.config();
        let mut decoder = Vec::new();
        let mut prev = cfg.embed_dim;
        for &h in cfg.hidden_dims.iter().rev() {
            decoder.push(Dense::init(prev, h, Activation::Relu, rng));
            prev = h;
        }
        decoder.push(Dense::init(prev, cfg.input_dim, Activation::Linear, rng));
        Ok(Self { encoder, decoder })
    }

    pub fn encoder(&self) -> &EmbedNet {
        &self.encoder
    }

    pub fn into_encoder(self) -> EmbedNet {
        self.encoder
    }

    fn trunk_len(&self) -> usize {
        self.encoder.layers().len() - 1
    }

    fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.encoder.trunk().iter().chain(&self.decoder)
    }

    pub fn num_params(&self) -> usize {
        self.layers().map(Dense::num_params).sum()
    }

    fn locate_mut(&mut self, mut i: usize) -> &mut f64 {
        let n = self.trunk_len();
        for l in 0..n {
            let len = self.encoder.layers()[l].num_params();
            if i < len {
                return self.encoder.layers_mut()[l].param_mut(i);
            }
            i -= len;
        }
        for layer in &mut self.decoder {
            if i < layer.num_params() {
                return layer.param_mut(i);
            }
            i -= layer.num_params();
        }
        panic!("parameter index out of range");
    }

    pub fn param(&self, i: usize) -> f64 {
        let mut i = i;
        for layer in self.layers() {
            if i < layer.num_params() {
                return layer.param(i);
            }
            i -= layer.num_params();
        }
        panic!("parameter index out of range");
    }

    pub fn param_mut(&mut self, i: usize) -> &mut f64 {
        self.locate_mut(i)
    }

    /// Reconstruction of the (standardised, when enabled) input.
    pub fn reconstruct(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let target = self.encoder.prepare(x)?;
        let code = layer::forward_cached(self.encoder.trunk(), &target)
            .pop()
            .expect("embedding layer present");
        let out = layer::forward_cached(&self.decoder, &code)
            .pop()
            .expect("decoder output present");
        Ok((target, out))
    }

    /// Mean over the batch of the per-coordinate squared reconstruction error.
    pub fn loss_and_grads(&self, inputs: &[&[f64]]) -> Result<(f64, GradSet)> {
        if inputs.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let trunk = self.encoder.trunk();
        let mut enc_grads: Vec<Dense> = trunk.iter().map(Dense::zeros_like).collect();
        let mut dec_grads: Vec<Dense> = self.decoder.iter().map(Dense::zeros_like).collect();
        let dim = self.encoder.config().input_dim as f64;
        let scale = 2.0 / (dim * inputs.len() as f64);
        let mut loss = 0.0;
        for x in inputs {
            let target = self.encoder.prepare(x)?;
            let enc_outs = layer::forward_cached(trunk, &target);
            let code = enc_outs.last().expect("embedding layer present");
            let dec_outs = layer::forward_cached(&self.decoder, code);
            let recon = dec_outs.last().expect("decoder output present");
            let mut dout = Vec::with_capacity(recon.len());
            for (r, t) in recon.iter().zip(&target) {
                let e = r - t;
                loss += e * e / dim;
                dout.push(scale * e);
            }
            let dcode = layer::backward_cached(&self.decoder, code, &dec_outs, dout, &mut dec_grads, true)
                .expect("requested input gradient");
            layer::backward_cached(trunk, &target, &enc_outs, dcode, &mut enc_grads, false);
        }
        enc_grads.extend(dec_grads);
        Ok((loss / inputs.len() as f64, GradSet { layers: enc_grads }))
    }

    pub fn sgd_step(&mut self, grads: &GradSet, lr: f64, momentum: f64, velocity: &mut GradSet) {
        let n = self.trunk_len();
        let (gt, gd) = grads.layers.split_at(n);
        let (vt, vd) = velocity.layers.split_at_mut(n);
        layer::sgd_update(&mut self.encoder.layers_mut()[..n], gt, lr, momentum, vt);
        layer::sgd_update(&mut self.decoder, gd, lr, momentum, vd);
    }

    fn zero_grads(&self) -> GradSet {
        GradSet {
            layers: self.layers().map(Dense::zeros_like).collect(),
        }
    }

    pub fn reconstruction_mse(&self, pool: &DataPool, input: &InputPipeline) -> Result<f64> {
        let mut total = 0.0;
        for s in pool.samples() {
            let (t, r) = self.reconstruct(&input.encode(s)?)?;
            total += t.iter().zip(&r).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / t.len() as f64;
        }
        Ok(total / pool.len() as f64)
    }
}

/// Unsupervised initialisation: trains an autoencoder with MSE loss and
/// returns its encoder as an [`EmbedNet`] whose head is left untrained.
pub fn train_autoencoder<R: Rng + ?Sized>(
    pool: &DataPool,
    net_cfg: &NetConfig,
    sched: &TrainSchedule,
    input: &InputPipeline,
    rng: &mut R,
) -> Result<(Autoencoder, TrainLog)> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    sched.validate()?;
    let mut ae = Autoencoder::new(net_cfg.clone(), rng)?;
    let samples = pool.samples();
    for s in samples {
        let d = input.input_dim(s);
        if d != net_cfg.input_dim {
            return Err(Error::dims(format!("sample `{}`", s.sample_id), net_cfg.input_dim, d));
        }
    }
    if net_cfg.standardize_input {
        let rows = samples.iter().map(|s| input.encode(s)).collect::<Result<Vec<_>>>()?;
        ae.encoder.set_norm(Some(InputNorm::fit(&rows)?));
    }
    let mut velocity = ae.zero_grads();
    let mut log = TrainLog::default();
    for t in 0..sched.effective_iters() {
        let idx = balanced_indices(pool, sched.batch_size, rng)?;
        let xs = idx
            .iter()
            .map(|&i| input.encode_augmented(&samples[i], rng))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let (loss, grads) = ae.loss_and_grads(&refs)?;
        if !loss.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "autoencoder diverged at iteration {t}"
            )));
        }
        ae.sgd_step(&grads, sched.lr_at(t), sched.momentum, &mut velocity);
        log.losses.push(loss);
    }
    Ok((ae, log))
}
