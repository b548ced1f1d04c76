//! Brute-force metric oracle over randomized toy instances.
//!
//! Embeddings are the raw features (identity nets), so the oracle ranks
//! straight from the pairwise distance matrix, independently of the index.

use std::collections::BTreeMap;

use dldp_core::discovery::DomainModel;
use dldp_core::eval::{evaluate, EvalConfig, EvalReport};
use dldp_core::net::{Activation, Dense, EmbedNet, InputPipeline, NetConfig};
use dldp_core::pool::{DataPool, Payload, PersonLabel, Sample, Split};
use dldp_core::reid::DomainBank;
use rand::Rng;

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
    let head = Dense::zeros(out, 2, Activation::Linear);
    EmbedNet::from_parts(cfg, vec![embed, head], None).unwrap()
}

/// Identity nets everywhere; two domains split on the sign of `x[0]`.
pub fn identity_bank(d: usize) -> DomainBank {
    let w: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let id = linear_net(&w);
    let mut c0 = vec![0.0; d];
    c0[0] = 1.0;
    let c1: Vec<f64> = c0.iter().map(|v| -v).collect();
    let model = DomainModel {
        net: id.clone(),
        centroids: vec![c0, c1],
        assignments: BTreeMap::new(),
        inertia: 0.0,
        history: vec![],
    };
    DomainBank::new(id.clone(), vec![id.clone(), id], model).unwrap()
}

pub struct Instance {
    pub gallery: Vec<Sample>,
    pub queries: Vec<Sample>,
}

fn random_feature<R: Rng>(rng: &mut R) -> Vec<f64> {
    // Small integer grid so exact distance ties occur.
    loop {
        let f: Vec<f64> = (0..3).map(|_| f64::from(rng.random_range(-2i32..=2))).collect();
        if f.iter().any(|&v| v != 0.0) {
            return f;
        }
    }
}

fn random_label<R: Rng>(rng: &mut R, persons: usize) -> String {
    match rng.random_range(0..10) {
        0 => "-".into(),
        1 => "?".into(),
        _ => format!("p{}", rng.random_range(0..persons)),
    }
}

pub fn random_instance<R: Rng>(rng: &mut R) -> Instance {
    let n = rng.random_range(1..=50);
    let q = rng.random_range(1..=20);
    let persons = rng.random_range(2..8);
    let sample = |id: String, person: String, split, f| Sample::new(id, PersonLabel::parse(&person), "s", split, Payload::Feature(f));
    let gallery = (0..n)
        .map(|i| sample(format!("g{i:02}"), random_label(rng, persons), Split::Gallery, random_feature(rng)))
        .collect();
    let queries = (0..q)
        .map(|i| sample(format!("q{i:02}"), format!("p{}", rng.random_range(0..persons + 1)), Split::Probe, random_feature(rng)))
        .collect();
    Instance { gallery, queries }
}

pub struct OracleMetrics {
    pub map: f64,
    pub cmc: Vec<f64>,
    pub evaluated: usize,
    pub skipped: usize,
}

/// Direct recomputation: distance matrix, sort, drop junk, count hits.
pub fn oracle(inst: &Instance, max_rank: usize) -> OracleMetrics {
    let dist = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        (1.0 - dot / (na * nb)).clamp(0.0, 2.0)
    };
    let feat = |s: &Sample| s.payload.as_feature().unwrap().to_vec();
    let mut aps = Vec::new();
    let mut hits = Vec::new();
    let mut skipped = 0;
    for q in &inst.queries {
        let qf = feat(q);
        let mut order: Vec<(f64, &Sample)> = inst.gallery.iter().map(|g| (dist(&qf, &feat(g)), g)).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.sample_id.cmp(&b.1.sample_id)));
        let rel: Vec<bool> = order
            .iter()
            .filter(|(_, g)| g.person != PersonLabel::Junk && g.sample_id != q.sample_id)
            .map(|(_, g)| g.person == q.person)
            .collect();
        let total = rel.iter().filter(|&&r| r).count();
        if total == 0 {
            skipped += 1;
            continue;
        }
        let mut ap = 0.0;
        for k in 0..rel.len() {
            if rel[k] {
                let within = rel[..=k].iter().filter(|&&r| r).count();
                ap += within as f64 / (k + 1) as f64;
            }
        }
        aps.push(ap / total as f64);
        hits.push(rel.iter().position(|&r| r).unwrap() + 1);
    }
    let cmc = (1..=max_rank)
        .map(|r| hits.iter().filter(|&&h| h <= r).count() as f64 / hits.len().max(1) as f64)
        .collect();
    OracleMetrics {
        map: aps.iter().sum::<f64>() / aps.len().max(1) as f64,
        cmc,
        evaluated: aps.len(),
        skipped,
    }
}

/// Largest absolute deviation between engine and oracle, or `None` when
/// the instance has no evaluable query (both sides must agree on that).
pub fn compare(inst: &Instance, max_rank: usize) -> Result<Option<f64>, String> {
    let bank = identity_bank(3);
    let gallery = DataPool::new(inst.gallery.clone()).unwrap();
    let queries: Vec<&Sample> = inst.queries.iter().collect();
    let cfg = EvalConfig {
        max_rank,
        ..EvalConfig::default()
    };
    let want = oracle(inst, max_rank);
    let got: EvalReport = match evaluate(&bank, &gallery, &queries, None, &cfg, &InputPipeline::default()) {
        Ok(r) => r,
        Err(_) if want.evaluated == 0 => return Ok(None),
        Err(e) => return Err(e.to_string()),
    };
    if got.queries_evaluated != want.evaluated || got.queries_skipped != want.skipped {
        return Err(format!(
            "counts differ: engine {}/{} oracle {}/{}",
            got.queries_evaluated, got.queries_skipped, want.evaluated, want.skipped
        ));
    }
    let dev = got
        .cmc
        .iter()
        .zip(&want.cmc)
        .map(|(a, b)| (a - b).abs())
        .fold((got.map - want.map).abs(), f64::max);
    Ok(Some(dev))
}
