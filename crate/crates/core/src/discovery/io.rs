//! `DLDPDOM1` domain model files and the discovery log.
//!
//! Layout: magic, provenance, k, embed_dim, centroids (`f64`), assignment
//! count and `(sample_id, u32)` pairs, the cluster net checkpoint, then the
//! outer-pass history.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DomainModel, OuterRecord};
use crate::binio::{self, Reader};
use crate::error::{Error, Result};
use crate::net::{read_net, write_net};

pub const DOMAIN_MAGIC: &[u8; 8] = b"DLDPDOM1";
pub const LOG_MAGIC: &str = "DLDPLOG1";

pub fn write_domain_model<W: Write>(w: &mut W, model: &DomainModel, provenance: &str) -> Result<()> {
    binio::write_magic(w, DOMAIN_MAGIC)?;
    binio::write_str(w, provenance)?;
    binio::write_len(w, model.k())?;
    binio::write_len(w, model.embed_dim())?;
    for c in &model.centroids {
        for &v in c {
            binio::write_f64(w, v)?;
        }
    }
    binio::write_len(w, model.assignments.len())?;
    for (id, &d) in &model.assignments {
        binio::write_str(w, id)?;
        binio::write_len(w, d)?;
    }
    write_net(w, &model.net, provenance)?;
    binio::write_len(w, model.history.len())?;
    for r in &model.history {
        binio::write_len(w, r.outer)?;
        binio::write_f64(w, r.inertia)?;
        binio::write_f64(w, r.changed_fraction)?;
        binio::write_f64(w, r.lr)?;
    }
    Ok(())
}

pub fn read_domain_model<R: Read>(r: &mut R) -> Result<(DomainModel, String)> {
    let mut rd = Reader::new(&mut *r, "domain model");
    rd.magic(DOMAIN_MAGIC)?;
    let provenance = rd.string()?;
    let k = rd.len()?;
    let embed_dim = rd.len()?;
    let centroids = (0..k)
        .map(|_| (0..embed_dim).map(|_| rd.f64()).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let n = rd.len()?;
    let mut assignments = std::collections::BTreeMap::new();
    for _ in 0..n {
        let id = rd.string()?;
        let d = rd.len()?;
        if d >= k {
            return Err(Error::format("domain model", format!("assignment {d} >= k = {k}")));
        }
        assignments.insert(id, d);
    }
    let (net, _) = read_net(rd.into_inner())?;
    if net.config().embed_dim != embed_dim {
        return Err(Error::format("domain model", "net embedding width differs from centroids"));
    }
    let mut rd = Reader::new(r, "domain model");
    let h = rd.len()?;
    let history = (0..h)
        .map(|_| {
            Ok(OuterRecord {
                outer: rd.len()?,
                inertia: rd.f64()?,
                changed_fraction: rd.f64()?,
                lr: rd.f64()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let inertia = 0.0;
    let mut model = DomainModel {
        net,
        centroids,
        assignments,
        inertia,
        history,
    };
    model.inertia = model.history.last().map_or(0.0, |r| r.inertia);
    Ok((model, provenance))
}

pub fn save_domain_model(path: impl AsRef<Path>, model: &DomainModel, provenance: &str) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_domain_model(&mut w, model, provenance)?;
    w.flush()?;
    Ok(())
}

pub fn load_domain_model(path: impl AsRef<Path>) -> Result<(DomainModel, String)> {
    let mut r = BufReader::new(File::open(path)?);
    let out = read_domain_model(&mut r)?;
    Reader::new(r, "domain model").finish()?;
    Ok(out)
}

/// Tab-separated `outer, inertia, changed_fraction, lr`, one row per pass.
pub fn write_discovery_log(path: impl AsRef<Path>, history: &[OuterRecord], provenance: &str) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# {LOG_MAGIC} {provenance}")?;
    writeln!(w, "outer\tinertia\tchanged_fraction\tlr")?;
    for r in history {
        writeln!(w, "{}\t{}\t{}\t{}", r.outer, r.inertia, r.changed_fraction, r.lr)?;
    }
    w.flush()?;
    Ok(())
}
