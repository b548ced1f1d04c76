//! `DLDPNET1` checkpoints: magic, provenance string, config, then every
//! layer's weights and bias (declaration order) and the optional input
//! normaliser, all as little-endian `f32`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::layer::Dense;
use super::{EmbedNet, InputNorm, NetConfig};
use crate::binio::{self, Reader};
use crate::error::{Error, Result};

pub const NET_MAGIC: &[u8; 8] = b"DLDPNET1";

pub fn write_net<W: Write>(w: &mut W, net: &EmbedNet, provenance: &str) -> Result<()> {
    let cfg = net.config();
    binio::write_magic(w, NET_MAGIC)?;
    binio::write_str(w, provenance)?;
    binio::write_len(w, cfg.input_dim)?;
    binio::write_len(w, cfg.hidden_dims.len())?;
    for &h in &cfg.hidden_dims {
        binio::write_len(w, h)?;
    }
    binio::write_len(w, cfg.embed_dim)?;
    binio::write_len(w, cfg.head_dim)?;
    w.write_all(&[cfg.standardize_input as u8, net.norm().is_some() as u8])?;
    for layer in net.layers() {
        binio::write_f32_slice(w, &layer.weights)?;
        binio::write_f32_slice(w, &layer.bias)?;
    }
    if let Some(n) = net.norm() {
        binio::write_f32_slice(w, &n.mean)?;
        binio::write_f32_slice(w, &n.std)?;
    }
    Ok(())
}

/// Reads one checkpoint from the stream, leaving any following bytes unread.
pub fn read_net<R: Read>(r: &mut R) -> Result<(EmbedNet, String)> {
    let mut r = Reader::new(r, "net checkpoint");
    r.magic(NET_MAGIC)?;
    let provenance = r.string()?;
    let input_dim = r.len()?;
    let n_hidden = r.len()?;
    if n_hidden > 1024 {
        return Err(Error::format("net checkpoint", format!("{n_hidden} hidden layers")));
    }
    let hidden_dims = (0..n_hidden).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
    let embed_dim = r.len()?;
    let head_dim = r.len()?;
    let standardize_input = r.u8()? != 0;
    let has_norm = r.u8()? != 0;
    let config = NetConfig {
        input_dim,
        hidden_dims,
        embed_dim,
        head_dim,
        standardize_input,
    };
    config
        .validate()
        .map_err(|e| Error::format("net checkpoint", e.to_string()))?;
    let mut layers = Vec::new();
    for (inputs, outputs, activation) in config.layer_dims() {
        let weights = r.f32_vec(inputs * outputs)?;
        let bias = r.f32_vec(outputs)?;
        layers.push(Dense {
            inputs,
            outputs,
            activation,
            weights,
            bias,
        });
    }
    let norm = if has_norm {
        Some(InputNorm {
            mean: r.f32_vec(input_dim)?,
            std: r.f32_vec(input_dim)?,
        })
    } else {
        None
    };
    let net = EmbedNet::from_parts(config, layers, norm)
        .map_err(|e| Error::format("net checkpoint", e.to_string()))?;
    Ok((net, provenance))
}

pub fn save_net(path: impl AsRef<Path>, net: &EmbedNet, provenance: &str) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_net(&mut w, net, provenance)?;
    w.flush()?;
    Ok(())
}

pub fn load_net(path: impl AsRef<Path>) -> Result<(EmbedNet, String)> {
    let mut r = BufReader::new(File::open(path)?);
    let out = read_net(&mut r)?;
    Reader::new(r, "net checkpoint").finish()?;
    Ok(out)
}
