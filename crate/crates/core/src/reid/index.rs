//! Precomputed gallery embeddings under every domain net plus the baseline.
//!
//! File layout (`DLDPIDX1`): magic, provenance, k, N, embed_dim, item id
//! table, metadata table, then k domain matrices followed by the baseline
//! matrix, each `N × embed_dim` little-endian `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use super::{norm, DomainBank, MIN_NORM};
use crate::binio::{self, Reader};
use crate::error::{Error, Result};
use crate::net::{EmbedNet, InputPipeline};
use crate::pool::{BBox, DataPool, PersonLabel, Sample};

pub const INDEX_MAGIC: &[u8; 8] = b"DLDPIDX1";

#[derive(Debug, Clone, PartialEq)]
pub struct ItemMeta {
    pub frame_id: Option<String>,
    pub bbox: Option<BBox>,
    pub person: PersonLabel,
    pub score: Option<f64>,
}

impl ItemMeta {
    pub fn of(sample: &Sample) -> Self {
        Self {
            frame_id: sample.frame_id.clone(),
            bbox: sample.bbox,
            person: sample.person.clone(),
            score: sample.score,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GalleryIndex {
    item_ids: Vec<String>,
    meta: Vec<ItemMeta>,
    k: usize,
    embed_dim: usize,
    /// `k + 1` matrices, the last one from the baseline net.
    matrices: Vec<Vec<f64>>,
    norms: Vec<Vec<f64>>,
}

impl GalleryIndex {
    pub fn from_parts(
        item_ids: Vec<String>,
        meta: Vec<ItemMeta>,
        k: usize,
        embed_dim: usize,
        matrices: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = item_ids.len();
        if meta.len() != n {
            return Err(Error::dims("index metadata rows", n, meta.len()));
        }
        if matrices.len() != k + 1 {
            return Err(Error::dims("index matrices", k + 1, matrices.len()));
        }
        let mut norms = Vec::with_capacity(k + 1);
        for (m, mat) in matrices.iter().enumerate() {
            if mat.len() != n * embed_dim {
                return Err(Error::dims("index matrix size", n * embed_dim, mat.len()));
            }
            let mut col = Vec::with_capacity(n);
            for (i, row) in mat.chunks(embed_dim.max(1)).take(n).enumerate() {
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidArgument(format!("non-finite embedding for {} (matrix {m})", item_ids[i])));
                }
                let nr = norm(row);
                if nr < MIN_NORM {
                    return Err(Error::ZeroNorm(item_ids[i].clone()));
                }
                col.push(nr);
            }
            norms.push(col);
        }
        Ok(Self {
            item_ids,
            meta,
            k,
            embed_dim,
            matrices,
            norms,
        })
    }

    pub fn len(&self) -> usize {
        self.item_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_ids.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn meta(&self) -> &[ItemMeta] {
        &self.meta
    }

    /// Matrix slot of the baseline embeddings.
    pub fn baseline_matrix(&self) -> usize {
        self.k
    }

    /// Row `item` of matrix `m` (`m == k` for the baseline).
    pub fn embedding(&self, m: usize, item: usize) -> &[f64] {
        &self.matrices[m][item * self.embed_dim..(item + 1) * self.embed_dim]
    }

    pub(crate) fn norm(&self, m: usize, item: usize) -> f64 {
        self.norms[m][item]
    }

    /// Index restricted to `rows`, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.len()) {
            return Err(Error::InvalidArgument(format!("row {bad} out of range for {} items", self.len())));
        }
        let d = self.embed_dim;
        let matrices = self
            .matrices
            .iter()
            .map(|mat| rows.iter().flat_map(|&r| mat[r * d..(r + 1) * d].iter().copied()).collect())
            .collect();
        let norms = self.norms.iter().map(|col| rows.iter().map(|&r| col[r]).collect()).collect();
        Ok(Self {
            item_ids: rows.iter().map(|&r| self.item_ids[r].clone()).collect(),
            meta: rows.iter().map(|&r| self.meta[r].clone()).collect(),
            k: self.k,
            embed_dim: d,
            matrices,
            norms,
        })
    }

    /// Overrides per-item person labels, e.g. after detection matching.
    pub fn relabel(&mut self, persons: Vec<PersonLabel>) -> Result<()> {
        if persons.len() != self.len() {
            return Err(Error::dims("relabel", self.len(), persons.len()));
        }
        for (m, p) in self.meta.iter_mut().zip(persons) {
            m.person = p;
        }
        Ok(())
    }
}

fn embed_all(net: &EmbedNet, gallery: &DataPool, input: &InputPipeline) -> Result<Vec<f64>> {
    let rows = gallery
        .samples()
        .par_iter()
        .map(|s| {
            input
                .encode(s)
                .and_then(|x| net.embed(&x))
                .map_err(|e| e.context(format!("gallery item {}", s.sample_id)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows.concat())
}

/// Embeds every gallery item under each domain net and the baseline.
pub fn build_gallery_index(bank: &DomainBank, gallery: &DataPool, input: &InputPipeline) -> Result<GalleryIndex> {
    let mut matrices = Vec::with_capacity(bank.k() + 1);
    for net in bank.domain_nets.iter().chain(std::iter::once(&bank.baseline)) {
        matrices.push(embed_all(net, gallery, input)?);
    }
    GalleryIndex::from_parts(
        gallery.samples().iter().map(|s| s.sample_id.clone()).collect(),
        gallery.samples().iter().map(ItemMeta::of).collect(),
        bank.k(),
        bank.baseline.config().embed_dim,
        matrices,
    )
}

fn write_opt_str<W: Write>(w: &mut W, s: &Option<String>) -> Result<()> {
    match s {
        Some(s) => {
            w.write_all(&[1])?;
            binio::write_str(w, s)
        }
        None => Ok(w.write_all(&[0])?),
    }
}

pub fn write_index<W: Write>(w: &mut W, index: &GalleryIndex, provenance: &str) -> Result<()> {
    binio::write_magic(w, INDEX_MAGIC)?;
    binio::write_str(w, provenance)?;
    binio::write_len(w, index.k)?;
    binio::write_len(w, index.len())?;
    binio::write_len(w, index.embed_dim)?;
    for id in &index.item_ids {
        binio::write_str(w, id)?;
    }
    for m in &index.meta {
        write_opt_str(w, &m.frame_id)?;
        binio::write_str(w, &m.person.to_string())?;
        match m.bbox {
            Some(b) => {
                w.write_all(&[1])?;
                for v in [b.x, b.y, b.w, b.h] {
                    binio::write_f64(w, v)?;
                }
            }
            None => w.write_all(&[0])?,
        }
        match m.score {
            Some(s) => {
                w.write_all(&[1])?;
                binio::write_f64(w, s)?;
            }
            None => w.write_all(&[0])?,
        }
    }
    for mat in &index.matrices {
        for &v in mat {
            binio::write_f64(w, v)?;
        }
    }
    Ok(())
}

fn read_flag<R: Read>(rd: &mut Reader<R>) -> Result<bool> {
    match rd.u8()? {
        0 => Ok(false),
        1 => Ok(true),
        b => Err(Error::format("gallery index", format!("bad option flag {b}"))),
    }
}

pub fn read_index<R: Read>(r: R) -> Result<(GalleryIndex, String)> {
    let mut rd = Reader::new(r, "gallery index");
    rd.magic(INDEX_MAGIC)?;
    let provenance = rd.string()?;
    let k = rd.len()?;
    let n = rd.len()?;
    let embed_dim = rd.len()?;
    let item_ids = (0..n).map(|_| rd.string()).collect::<Result<Vec<_>>>()?;
    let mut meta = Vec::with_capacity(n);
    for _ in 0..n {
        let frame_id = if read_flag(&mut rd)? { Some(rd.string()?) } else { None };
        let person = PersonLabel::parse(&rd.string()?);
        let bbox = if read_flag(&mut rd)? {
            let (x, y, w, h) = (rd.f64()?, rd.f64()?, rd.f64()?, rd.f64()?);
            Some(BBox::new(x, y, w, h).map_err(|e| Error::format("gallery index", e.to_string()))?)
        } else {
            None
        };
        let score = if read_flag(&mut rd)? { Some(rd.f64()?) } else { None };
        meta.push(ItemMeta {
            frame_id,
            bbox,
            person,
            score,
        });
    }
    let matrices = (0..=k)
        .map(|_| (0..n * embed_dim).map(|_| rd.f64()).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    rd.finish()?;
    let index = GalleryIndex::from_parts(item_ids, meta, k, embed_dim, matrices)?;
    Ok((index, provenance))
}

pub fn save_index(path: impl AsRef<Path>, index: &GalleryIndex, provenance: &str) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_index(&mut w, index, provenance)?;
    w.flush()?;
    Ok(())
}

pub fn load_index(path: impl AsRef<Path>) -> Result<(GalleryIndex, String)> {
    read_index(BufReader::new(File::open(path)?))
}
