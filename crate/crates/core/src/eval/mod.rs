//! Open-set evaluation: relevant sets from person ids, AP/CMC aggregation,
//! gallery-size sweeps and tagged-probe subsets.

mod detect;
mod metrics;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::InputPipeline;
use crate::pool::{DataPool, PersonLabel, Sample, Tag};
use crate::reid::{build_gallery_index, rank_gallery, rank_with_baseline, DomainBank, GalleryIndex, RankingResult};

pub use detect::{iou, match_detections, top_k_boxes, Detection, GroundTruth};
pub use metrics::{average_precision, cmc, cmc_from_first_hits, first_hit};

/// Which embedding ranks the gallery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankMethod {
    /// Per-probe domain selection, then that domain's net.
    #[default]
    Domain,
    /// The generic baseline net for every probe.
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub iou_thr: f64,
    pub boxes_per_image: usize,
    pub max_rank: usize,
    pub method: RankMethod,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thr: 0.5,
            boxes_per_image: 5,
            max_rank: 50,
            method: RankMethod::Domain,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_thr > 0.0 && self.iou_thr <= 1.0) {
            return Err(Error::InvalidArgument("iou_thr must be in (0, 1]".into()));
        }
        if self.boxes_per_image == 0 {
            return Err(Error::InvalidArgument("boxes_per_image must be ≥ 1".into()));
        }
        if self.max_rank == 0 {
            return Err(Error::InvalidArgument("max_rank must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub probe_id: String,
    /// Selected domain; `None` under the baseline.
    pub domain: Option<usize>,
    pub ap: f64,
    /// 1-based rank of the first relevant item.
    pub first_hit: usize,
    pub num_relevant: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(rename = "mAP")]
    pub map: f64,
    pub rank1: f64,
    pub cmc: Vec<f64>,
    pub per_query: Vec<QueryResult>,
    pub queries_evaluated: usize,
    pub queries_skipped: usize,
    /// Probes skipped for having no relevant gallery item.
    pub skipped: Vec<String>,
    pub gallery_size: usize,
    /// Set when detection filtering was applied.
    pub boxes_per_image: Option<usize>,
    pub config: EvalConfig,
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
}

/// One scored query.
#[derive(Debug, Clone, PartialEq)]
struct Scored {
    ap: f64,
    first_hit: usize,
    num_relevant: usize,
}

/// Scores `ranking` for `probe`, keeping only rows accepted by `keep`.
///
/// The probe's own item and junk items are dropped before scoring;
/// relevant items share the probe's person id.
fn score(ranking: &RankingResult, probe: &Sample, index: &GalleryIndex, keep: Option<&[bool]>) -> Option<Scored> {
    let pid = probe.person_id()?;
    let flags: Vec<bool> = ranking
        .ranked
        .iter()
        .filter(|r| keep.is_none_or(|k| k[r.index]) && r.item_id != probe.sample_id)
        .filter(|r| index.meta()[r.index].person != PersonLabel::Junk)
        .map(|r| index.meta()[r.index].person.id() == Some(pid))
        .collect();
    let num_relevant = flags.iter().filter(|&&f| f).count();
    if num_relevant == 0 {
        return None;
    }
    Some(Scored {
        ap: metrics::ap_from_flags(&flags),
        first_hit: flags.iter().position(|&f| f).map_or(0, |p| p + 1),
        num_relevant,
    })
}

fn rank(bank: &DomainBank, index: &GalleryIndex, probe: &Sample, method: RankMethod, input: &InputPipeline) -> Result<RankingResult> {
    match method {
        RankMethod::Domain => rank_gallery(bank, index, probe, input),
        RankMethod::Baseline => rank_with_baseline(bank, index, probe, input),
    }
    .map_err(|e| e.context(format!("query `{}`", probe.sample_id)))
}

fn rank_all(
    bank: &DomainBank,
    index: &GalleryIndex,
    queries: &[&Sample],
    method: RankMethod,
    input: &InputPipeline,
) -> Result<Vec<RankingResult>> {
    queries.par_iter().map(|q| rank(bank, index, q, method, input)).collect()
}

fn aggregate(
    rankings: &[RankingResult],
    queries: &[&Sample],
    index: &GalleryIndex,
    keep: Option<&[Vec<bool>]>,
    gallery_size: usize,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let mut per_query = Vec::new();
    let mut skipped = Vec::new();
    for (i, (r, q)) in rankings.iter().zip(queries).enumerate() {
        match score(r, q, index, keep.map(|k| k[i].as_slice())) {
            Some(s) => per_query.push(QueryResult {
                probe_id: q.sample_id.clone(),
                domain: r.domain,
                ap: s.ap,
                first_hit: s.first_hit,
                num_relevant: s.num_relevant,
            }),
            None => skipped.push(q.sample_id.clone()),
        }
    }
    if per_query.is_empty() {
        return Err(Error::EmptyRelevant);
    }
    let hits: Vec<Option<usize>> = per_query.iter().map(|q| Some(q.first_hit)).collect();
    let cmc = cmc_from_first_hits(&hits, cfg.max_rank)?;
    let map = per_query.iter().map(|q| q.ap).sum::<f64>() / per_query.len() as f64;
    Ok(EvalReport {
        map,
        rank1: cmc[0],
        cmc,
        queries_evaluated: per_query.len(),
        queries_skipped: skipped.len(),
        per_query,
        skipped,
        gallery_size,
        boxes_per_image: None,
        config: *cfg,
        seed: None,
        config_hash: None,
    })
}

/// Scores every query against a prebuilt index.
pub fn evaluate_index(
    bank: &DomainBank,
    index: &GalleryIndex,
    queries: &[&Sample],
    cfg: &EvalConfig,
    input: &InputPipeline,
) -> Result<EvalReport> {
    cfg.validate()?;
    let rankings = rank_all(bank, index, queries, cfg.method, input)?;
    aggregate(&rankings, queries, index, None, index.len(), cfg)
}

/// Applies the detection protocol to a gallery: per-frame top-k on scored
/// items and, when ground truth is given, relabelling by IoU matching.
/// Items without a score pass through unchanged. Returns the new pool and
/// whether any detections were present.
pub fn prepare_gallery(gallery: &DataPool, gts: Option<&[GroundTruth]>, cfg: &EvalConfig) -> Result<(DataPool, bool)> {
    let mut det_rows = Vec::new();
    let mut dets = Vec::new();
    for (i, s) in gallery.samples().iter().enumerate() {
        if let Some(d) = Detection::of(s)? {
            det_rows.push(i);
            dets.push(d);
        }
    }
    if dets.is_empty() {
        return Ok((gallery.clone(), false));
    }
    let kept = top_k_boxes(&dets, cfg.boxes_per_image)?;
    let mut drop: Vec<bool> = vec![false; gallery.len()];
    det_rows.iter().for_each(|&r| drop[r] = true);
    kept.iter().for_each(|&k| drop[det_rows[k]] = false);
    let mut samples: Vec<Sample> = Vec::with_capacity(gallery.len());
    let labels = gts.map(|g| match_detections(&dets, g, cfg.iou_thr));
    let mut det_pos = 0;
    for (i, s) in gallery.samples().iter().enumerate() {
        let is_det = det_rows.get(det_pos) == Some(&i);
        if is_det {
            det_pos += 1;
        }
        if drop[i] {
            continue;
        }
        let mut s = s.clone();
        if let (true, Some(labels)) = (is_det, &labels) {
            s.person = labels[det_pos - 1].clone();
        }
        samples.push(s);
    }
    Ok((DataPool::new(samples)?, true))
}

/// Full protocol: detection filtering/matching, indexing, ranking, scoring.
pub fn evaluate(
    bank: &DomainBank,
    gallery: &DataPool,
    queries: &[&Sample],
    gts: Option<&[GroundTruth]>,
    cfg: &EvalConfig,
    input: &InputPipeline,
) -> Result<EvalReport> {
    cfg.validate()?;
    let (gallery, has_dets) = prepare_gallery(gallery, gts, cfg)?;
    let index = build_gallery_index(bank, &gallery, input)?;
    let mut report = evaluate_index(bank, &index, queries, cfg, input)?;
    report.boxes_per_image = has_dets.then_some(cfg.boxes_per_image);
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub size: usize,
    #[serde(rename = "mAP")]
    pub map: f64,
    pub rank1: f64,
    pub queries_evaluated: usize,
    pub queries_skipped: usize,
}

/// Per-query nested gallery subsets: `masks[size][query]` keeps every item
/// relevant to that query plus the first fillers of one random permutation
/// of the gallery (shared by all queries), so smaller subsets are contained
/// in larger ones. The probe's own item is never included.
pub fn nested_subsets<R: Rng + ?Sized>(
    index: &GalleryIndex,
    queries: &[&Sample],
    sizes: &[usize],
    rng: &mut R,
) -> Result<Vec<Vec<Vec<bool>>>> {
    if sizes.is_empty() {
        return Err(Error::InvalidArgument("no gallery sizes given".into()));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("gallery sizes must be strictly ascending".into()));
    }
    let n = index.len();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let mut masks = vec![Vec::with_capacity(queries.len()); sizes.len()];
    for q in queries {
        let own: Vec<bool> = index.item_ids().iter().map(|id| *id == q.sample_id).collect();
        let available = n - own.iter().filter(|&&o| o).count();
        if let Some(&big) = sizes.iter().find(|&&s| s > available) {
            return Err(Error::GallerySize { size: big, available });
        }
        let relevant: Vec<bool> = (0..n)
            .map(|i| !own[i] && q.person_id().is_some() && index.meta()[i].person.id() == q.person_id())
            .collect();
        let num_relevant = relevant.iter().filter(|&&r| r).count();
        if sizes[0] < num_relevant {
            return Err(Error::InvalidArgument(format!(
                "gallery size {} cannot hold the {num_relevant} items relevant to `{}`",
                sizes[0], q.sample_id
            )));
        }
        let fillers: Vec<usize> = perm.iter().copied().filter(|&i| !relevant[i] && !own[i]).collect();
        for (m, &s) in masks.iter_mut().zip(sizes) {
            let mut mask = relevant.clone();
            fillers.iter().take(s - num_relevant).for_each(|&i| mask[i] = true);
            m.push(mask);
        }
    }
    Ok(masks)
}

/// mAP and Rank-1 over nested per-query gallery subsets of the given sizes.
pub fn gallery_sweep<R: Rng + ?Sized>(
    bank: &DomainBank,
    index: &GalleryIndex,
    queries: &[&Sample],
    sizes: &[usize],
    cfg: &EvalConfig,
    input: &InputPipeline,
    rng: &mut R,
) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let masks = nested_subsets(index, queries, sizes, rng)?;
    // Restricting a full ranking to a subset equals ranking the subset.
    let rankings = rank_all(bank, index, queries, cfg.method, input)?;
    sizes
        .iter()
        .zip(&masks)
        .map(|(&size, mask)| {
            let r = aggregate(&rankings, queries, index, Some(mask), size, cfg)?;
            Ok(SweepRow {
                size,
                map: r.map,
                rank1: r.rank1,
                queries_evaluated: r.queries_evaluated,
                queries_skipped: r.queries_skipped,
            })
        })
        .collect()
}

/// Evaluation restricted to probes carrying `tag`; the gallery is unchanged.
pub fn subset_report(
    bank: &DomainBank,
    index: &GalleryIndex,
    queries: &[&Sample],
    tag: Tag,
    cfg: &EvalConfig,
    input: &InputPipeline,
) -> Result<EvalReport> {
    let tagged: Vec<&Sample> = queries.iter().copied().filter(|q| q.has_tag(tag)).collect();
    if tagged.is_empty() {
        return Err(Error::NoTaggedQueries(tag.to_string()));
    }
    evaluate_index(bank, index, &tagged, cfg, input)
}

pub fn write_report(path: impl AsRef<Path>, report: &EvalReport) -> Result<()> {
    let text = serde_json::to_string_pretty(report).map_err(|e| Error::format("eval report", e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn write_cmc(path: impl AsRef<Path>, cmc: &[f64], provenance: &str) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# DLDPCMC1 {provenance}")?;
    writeln!(w, "rank\taccuracy")?;
    for (i, v) in cmc.iter().enumerate() {
        writeln!(w, "{}\t{v}", i + 1)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep(path: impl AsRef<Path>, rows: &[SweepRow], provenance: &str) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# DLDPSWP1 {provenance}")?;
    writeln!(w, "size\tmAP\trank1")?;
    for r in rows {
        writeln!(w, "{}\t{}\t{}", r.size, r.map, r.rank1)?;
    }
    w.flush()?;
    Ok(())
}
