//! Detection-side protocol: IoU, per-frame top-k and greedy GT matching.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::pool::{BBox, DataPool, PersonLabel, Sample};

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame_id: String,
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub frame_id: String,
    pub bbox: BBox,
    pub person: String,
}

impl Detection {
    /// Detection view of a gallery item; `None` for items without a score.
    pub fn of(sample: &Sample) -> Result<Option<Self>> {
        let Some(score) = sample.score else { return Ok(None) };
        match (&sample.frame_id, sample.bbox) {
            (Some(f), Some(b)) => Ok(Some(Self {
                frame_id: f.clone(),
                bbox: b,
                score,
            })),
            _ => Err(Error::InvalidArgument(format!(
                "detection `{}` needs both frame_id and bbox",
                sample.sample_id
            ))),
        }
    }
}

impl GroundTruth {
    /// Boxes of every identity-labelled sample that has a frame and bbox.
    pub fn from_pool(pool: &DataPool) -> Vec<Self> {
        pool.samples()
            .iter()
            .filter_map(|s| match (&s.frame_id, s.bbox, s.person_id()) {
                (Some(f), Some(b), Some(p)) => Some(Self {
                    frame_id: f.clone(),
                    bbox: b,
                    person: p.to_owned(),
                }),
                _ => None,
            })
            .collect()
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(0.0);
    let ih = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Indices of `dets` grouped by frame, each group in descending score
/// (stable, so equal scores keep detection order).
fn by_frame_desc(dets: &[Detection]) -> BTreeMap<&str, Vec<usize>> {
    let mut frames: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, d) in dets.iter().enumerate() {
        frames.entry(d.frame_id.as_str()).or_default().push(i);
    }
    for idx in frames.values_mut() {
        idx.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    }
    frames
}

/// Indices (ascending) of the `k` highest-scoring detections in each frame.
pub fn top_k_boxes(dets: &[Detection], k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidArgument("boxes per image must be ≥ 1".into()));
    }
    let mut keep: Vec<usize> = by_frame_desc(dets).into_values().flat_map(|idx| idx.into_iter().take(k)).collect();
    keep.sort_unstable();
    Ok(keep)
}

/// Label per detection: in each frame, detections in descending score take
/// the still-unmatched GT of highest IoU ≥ `thr` (ties: lowest GT index).
/// Unmatched detections become distractors.
pub fn match_detections(dets: &[Detection], gts: &[GroundTruth], thr: f64) -> Vec<PersonLabel> {
    let mut out = vec![PersonLabel::Distractor; dets.len()];
    let mut gt_by_frame: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (j, g) in gts.iter().enumerate() {
        gt_by_frame.entry(g.frame_id.as_str()).or_default().push(j);
    }
    for (frame, order) in by_frame_desc(dets) {
        let Some(cands) = gt_by_frame.get(frame) else { continue };
        let mut taken = vec![false; cands.len()];
        for i in order {
            let mut best: Option<(usize, f64)> = None;
            for (c, &j) in cands.iter().enumerate() {
                if taken[c] {
                    continue;
                }
                let o = iou(&dets[i].bbox, &gts[j].bbox);
                if o >= thr && best.is_none_or(|(_, b)| o > b) {
                    best = Some((c, o));
                }
            }
            if let Some((c, _)) = best {
                taken[c] = true;
                out[i] = PersonLabel::Id(gts[cands[c]].person.clone());
            }
        }
    }
    out
}
