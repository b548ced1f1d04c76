//! Deployment path: route each probe to a domain, embed it with that
//! domain's net and rank the gallery by cosine distance.

mod index;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::discovery::{DomainModel, DomainSelection};
use crate::error::{Error, Result};
use crate::net::{EmbedNet, InputPipeline};
use crate::pool::Sample;

pub use index::{build_gallery_index, load_index, read_index, save_index, write_index, GalleryIndex, ItemMeta, INDEX_MAGIC};

const MIN_NORM: f64 = 1e-12;

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `1 - a.b / (|a||b|)`, clamped to `[0, 2]`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dims("cosine distance", a.len(), b.len()));
    }
    let (na, nb) = (norm(a), norm(b));
    if na < MIN_NORM || nb < MIN_NORM {
        return Err(Error::ZeroNorm("cosine operand".into()));
    }
    Ok(cosine_with_norms(a, na, b, nb))
}

#[inline]
fn cosine_with_norms(a: &[f64], na: f64, b: &[f64], nb: f64) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (1.0 - dot / (na * nb)).clamp(0.0, 2.0)
}

/// The generic baseline plus one fine-tuned net per discovered domain.
#[derive(Debug, Clone)]
pub struct DomainBank {
    pub baseline: EmbedNet,
    pub domain_nets: Vec<EmbedNet>,
    pub domain_model: DomainModel,
    pub selection: DomainSelection,
}

impl DomainBank {
    pub fn new(baseline: EmbedNet, domain_nets: Vec<EmbedNet>, domain_model: DomainModel) -> Result<Self> {
        if domain_nets.len() != domain_model.k() {
            return Err(Error::dims("domain nets vs k", domain_model.k(), domain_nets.len()));
        }
        let (input_dim, embed_dim) = (baseline.config().input_dim, baseline.config().embed_dim);
        for (d, net) in domain_nets.iter().chain(std::iter::once(&domain_model.net)).enumerate() {
            if net.config().input_dim != input_dim || net.config().embed_dim != embed_dim {
                return Err(Error::InvalidArgument(format!(
                    "net {d} has shape {}->{}, baseline has {input_dim}->{embed_dim}",
                    net.config().input_dim,
                    net.config().embed_dim
                )));
            }
        }
        Ok(Self {
            baseline,
            domain_nets,
            domain_model,
            selection: DomainSelection::Centroid,
        })
    }

    pub fn k(&self) -> usize {
        self.domain_nets.len()
    }

    pub fn with_selection(mut self, selection: DomainSelection) -> Self {
        self.selection = selection;
        self
    }

    pub fn select_domain(&self, probe: &Sample, input: &InputPipeline) -> Result<usize> {
        self.domain_model.select_domain(probe, input, self.selection)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedItem {
    /// Row in the gallery index.
    pub index: usize,
    pub item_id: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    pub probe_id: String,
    /// `None` when the baseline net was used.
    pub domain: Option<usize>,
    /// Ascending distance; ties by item id.
    pub ranked: Vec<RankedItem>,
}

fn rank_with_matrix(
    probe_id: &str,
    probe_emb: &[f64],
    index: &GalleryIndex,
    matrix: usize,
    domain: Option<usize>,
) -> Result<RankingResult> {
    if probe_emb.len() != index.embed_dim() {
        return Err(Error::dims("probe embedding", index.embed_dim(), probe_emb.len()));
    }
    let pn = norm(probe_emb);
    if !(pn >= MIN_NORM) {
        return Err(Error::ZeroNorm(probe_id.to_owned()));
    }
    let mut ranked: Vec<RankedItem> = (0..index.len())
        .map(|i| RankedItem {
            index: i,
            item_id: index.item_ids()[i].clone(),
            distance: cosine_with_norms(probe_emb, pn, index.embedding(matrix, i), index.norm(matrix, i)),
        })
        .collect();
    ranked.sort_by(|a, b| a.distance.total_cmp(&b.distance).then_with(|| a.item_id.cmp(&b.item_id)));
    Ok(RankingResult {
        probe_id: probe_id.to_owned(),
        domain,
        ranked,
    })
}

/// Ranks the gallery for `probe` with the net of its selected domain.
pub fn rank_gallery(bank: &DomainBank, index: &GalleryIndex, probe: &Sample, input: &InputPipeline) -> Result<RankingResult> {
    if index.k() != bank.k() {
        return Err(Error::dims("index domains vs bank", bank.k(), index.k()));
    }
    let d = bank.select_domain(probe, input)?;
    let emb = bank.domain_nets[d].embed(&input.encode(probe)?)?;
    rank_with_matrix(&probe.sample_id, &emb, index, d, Some(d))
}

/// Ranks the gallery with the generic baseline net; no domain selection.
pub fn rank_with_baseline(bank: &DomainBank, index: &GalleryIndex, probe: &Sample, input: &InputPipeline) -> Result<RankingResult> {
    let emb = bank.baseline.embed(&input.encode(probe)?)?;
    rank_with_matrix(&probe.sample_id, &emb, index, index.baseline_matrix(), None)
}

/// One row per `(probe, rank, item, distance, selected_domain)`, rank 1-based.
pub fn write_rankings(path: impl AsRef<Path>, rankings: &[RankingResult], provenance: &str) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# DLDPRNK1 {provenance}")?;
    writeln!(w, "probe\trank\titem\tdistance\tselected_domain")?;
    for r in rankings {
        let domain = r.domain.map_or_else(|| "baseline".to_owned(), |d| d.to_string());
        for (i, item) in r.ranked.iter().enumerate() {
            writeln!(w, "{}\t{}\t{}\t{}\t{}", r.probe_id, i + 1, item.item_id, item.distance, domain)?;
        }
    }
    w.flush()?;
    Ok(())
}
