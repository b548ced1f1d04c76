//! Hand-built nets and banks for unit tests.

use std::collections::BTreeMap;

use crate::discovery::DomainModel;
use crate::net::{Activation, Dense, EmbedNet, NetConfig};
use crate::pool::{Payload, PersonLabel, Sample, Split};
use crate::reid::DomainBank;

/// Net whose embedding is `w x` (no hidden layers, no normalization).
pub fn linear_net(w: &[Vec<f64>]) -> EmbedNet {
    let (out, inp) = (w.len(), w[0].len());
    let cfg = NetConfig {
        input_dim: inp,
        hidden_dims: vec![],
        embed_dim: out,
        head_dim: 2,
        standardize_input: false,
    };
    let embed = Dense {
        inputs: inp,
        outputs: out,
        activation: Activation::Linear,
        weights: w.concat(),
        bias: vec![0.0; out],
    };
    let mut head = Dense::zeros(out, 2, Activation::Linear);
    head.weights[0] = 1.0;
    EmbedNet::from_parts(cfg, vec![embed, head], None).unwrap()
}

pub fn identity(d: usize) -> Vec<Vec<f64>> {
    (0..d).map(|i| (0..d).map(|j| f64::from(u8::from(i == j))).collect()).collect()
}

/// Bank with identity nets everywhere; domains split on the sign of x[0].
pub fn identity_bank(d: usize) -> DomainBank {
    let id = linear_net(&identity(d));
    let mut c0 = vec![0.0; d];
    let mut c1 = vec![0.0; d];
    c0[0] = 1.0;
    c1[0] = -1.0;
    let model = DomainModel {
        net: id.clone(),
        centroids: vec![c0, c1],
        assignments: BTreeMap::new(),
        inertia: 0.0,
        history: vec![],
    };
    DomainBank::new(id.clone(), vec![id.clone(), id], model).unwrap()
}

pub fn feature_sample(id: &str, person: &str, split: Split, f: Vec<f64>) -> Sample {
    Sample::new(id, PersonLabel::parse(person), "s0", split, Payload::Feature(f))
}
