//! Text manifest plus the binary feature and grid payload files.
//!
//! A manifest has one tab-separated record per sample:
//!
//! ```text
//! sample_id  person_id|-|?  source_id  split  tags  x,y,w,h|-  grid:<path>|feat:<path>#<row>  [frame_id|-  [score|-]]
//! ```
//!
//! Lines starting with `#` and blank lines are ignored. Payload paths are
//! resolved relative to the manifest's directory.

use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{BBox, DataPool, Payload, PersonLabel, PixelGrid, Sample, Split, Tag};
use crate::binio::{self, Reader};
use crate::error::{Error, Result};

pub const MANIFEST_MAGIC: &str = "DLDPMAN1";
pub const FEATURE_MAGIC: &[u8; 8] = b"DLDPFEAT";
pub const GRID_MAGIC: &[u8; 8] = b"DLDPGRID";

/// Row-major `count x dim` matrix as stored in a feature file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn count(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

pub fn read_feature_file(path: &Path) -> Result<FeatureMatrix> {
    let mut r = Reader::new(BufReader::new(File::open(path)?), "feature file");
    r.magic(FEATURE_MAGIC)?;
    let count = r.len()?;
    let dim = r.len()?;
    let data = r.f32_vec(count * dim)?;
    r.finish()?;
    Ok(FeatureMatrix { dim, data })
}

pub fn write_feature_file(path: &Path, rows: &[&[f64]], dim: usize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    binio::write_magic(&mut w, FEATURE_MAGIC)?;
    binio::write_len(&mut w, rows.len())?;
    binio::write_len(&mut w, dim)?;
    for row in rows {
        if row.len() != dim {
            return Err(Error::dims("feature row", dim, row.len()));
        }
        binio::write_f32_slice(&mut w, row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_grid_file(path: &Path) -> Result<PixelGrid> {
    let mut r = Reader::new(BufReader::new(File::open(path)?), "grid file");
    r.magic(GRID_MAGIC)?;
    let (h, w, c) = (r.len()?, r.len()?, r.len()?);
    let values = r.f32_vec(h * w * c)?;
    r.finish()?;
    PixelGrid::new(h, w, c, values)
}

pub fn write_grid_file(path: &Path, grid: &PixelGrid) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    binio::write_magic(&mut w, GRID_MAGIC)?;
    binio::write_len(&mut w, grid.height())?;
    binio::write_len(&mut w, grid.width())?;
    binio::write_len(&mut w, grid.channels())?;
    binio::write_f32_slice(&mut w, grid.values())?;
    w.flush()?;
    Ok(())
}

fn opt_field(s: &str) -> Option<&str> {
    match s {
        "" | "-" => None,
        v => Some(v),
    }
}

struct LineParser<'a> {
    path: &'a Path,
    base: &'a Path,
    features: HashMap<PathBuf, FeatureMatrix>,
    feature_dim: Option<usize>,
    grid_shape: Option<(usize, usize, usize)>,
}

impl LineParser<'_> {
    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::ManifestLine {
            path: self.path.to_owned(),
            line,
            msg: msg.into(),
        }
    }

    fn parse(&mut self, line_no: usize, line: &str) -> Result<Sample> {
        let fields: Vec<&str> = line.split('\t').collect();
        if !(7..=9).contains(&fields.len()) {
            return Err(self.err(
                line_no,
                format!("expected 7 to 9 tab-separated fields, found {}", fields.len()),
            ));
        }
        let wrap = |e: Error| self.err(line_no, e.to_string());

        let sample_id = fields[0];
        if sample_id.is_empty() {
            return Err(self.err(line_no, "empty sample_id"));
        }
        let person = PersonLabel::parse(fields[1]);
        let source_id = fields[2];
        if source_id.is_empty() {
            return Err(self.err(line_no, "empty source_id"));
        }
        let split: Split = fields[3].parse().map_err(wrap)?;
        let tags = match opt_field(fields[4]) {
            None => BTreeSet::new(),
            Some(t) => t
                .split(',')
                .map(|x| x.trim().parse::<Tag>())
                .collect::<Result<_>>()
                .map_err(wrap)?,
        };
        let bbox = opt_field(fields[5])
            .map(|b| b.parse::<BBox>())
            .transpose()
            .map_err(wrap)?;
        let payload = self.payload(line_no, fields[6])?;
        let frame_id = fields.get(7).and_then(|f| opt_field(f)).map(str::to_owned);
        let score = fields
            .get(8)
            .and_then(|f| opt_field(f))
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| self.err(line_no, format!("bad score `{s}`")))
            })
            .transpose()?;

        Ok(Sample {
            sample_id: sample_id.to_owned(),
            person,
            source_id: source_id.to_owned(),
            split,
            tags,
            frame_id,
            bbox,
            score,
            payload,
        })
    }

    fn payload(&mut self, line_no: usize, field: &str) -> Result<Payload> {
        if let Some(rest) = field.strip_prefix("feat:") {
            let (file, row) = rest
                .rsplit_once('#')
                .ok_or_else(|| self.err(line_no, format!("feature ref `{field}` lacks #row")))?;
            let row: usize = row
                .parse()
                .map_err(|_| self.err(line_no, format!("bad row index `{row}`")))?;
            let full = self.base.join(file);
            if !self.features.contains_key(&full) {
                let m = read_feature_file(&full)
                    .map_err(|e| self.err(line_no, format!("{}: {e}", full.display())))?;
                self.features.insert(full.clone(), m);
            }
            let m = &self.features[&full];
            if row >= m.count() {
                return Err(self.err(
                    line_no,
                    format!("row {row} out of range for {} ({} rows)", file, m.count()),
                ));
            }
            let dim = m.dim;
            let v = m.row(row).to_vec();
            match self.feature_dim {
                Some(d) if d != dim => {
                    return Err(self.err(
                        line_no,
                        format!("payload dimension mismatch: expected {d}, got {dim}"),
                    ))
                }
                _ => self.feature_dim = Some(dim),
            }
            Ok(Payload::Feature(v))
        } else if let Some(file) = field.strip_prefix("grid:") {
            let full = self.base.join(file);
            let g = read_grid_file(&full)
                .map_err(|e| self.err(line_no, format!("{}: {e}", full.display())))?;
            let shape = (g.height(), g.width(), g.channels());
            match self.grid_shape {
                Some(s) if s != shape => {
                    return Err(self.err(
                        line_no,
                        format!("payload dimension mismatch: expected grid {s:?}, got {shape:?}"),
                    ))
                }
                _ => self.grid_shape = Some(shape),
            }
            Ok(Payload::Grid(g))
        } else {
            Err(self.err(line_no, format!("unknown payload ref `{field}`")))
        }
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DataPool> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let reader = BufReader::new(File::open(path)?);
    let mut parser = LineParser {
        path,
        base,
        features: HashMap::new(),
        feature_dim: None,
        grid_shape: None,
    };
    let mut samples = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let sample = parser.parse(i + 1, trimmed)?;
        if !seen.insert(sample.sample_id.clone()) {
            return Err(Error::DuplicateSample(sample.sample_id));
        }
        samples.push(sample);
    }
    if samples.is_empty() {
        return Err(Error::EmptyManifest);
    }
    DataPool::new(samples)
}

/// Writes `pool` as a manifest at `path`.
///
/// Feature payloads go to `<stem>.feat.bin` (one row per feature sample, in
/// pool order) and grids to `<stem>.grids/<n>.grid`. `provenance` is
/// recorded on the header line.
pub fn save_manifest(pool: &DataPool, path: impl AsRef<Path>, provenance: &str) -> Result<()> {
    let path = path.as_ref();
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    if !dir.as_os_str().is_empty() {
        fs::create_dir_all(dir)?;
    }
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "manifest".into());
    let feat_name = format!("{stem}.feat.bin");
    let grid_dir = format!("{stem}.grids");

    let feature_rows: Vec<&[f64]> = pool
        .samples()
        .iter()
        .filter_map(|s| s.payload.as_feature())
        .collect();
    if let Some(first) = feature_rows.first() {
        write_feature_file(&dir.join(&feat_name), &feature_rows, first.len())?;
    }
    let has_grids = pool
        .samples()
        .iter()
        .any(|s| matches!(s.payload, Payload::Grid(_)));
    if has_grids {
        fs::create_dir_all(dir.join(&grid_dir))?;
    }

    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# {MANIFEST_MAGIC} {provenance}")?;
    let mut feat_row = 0usize;
    for (i, s) in pool.samples().iter().enumerate() {
        let tags = if s.tags.is_empty() {
            "-".to_owned()
        } else {
            s.tags.iter().map(Tag::as_str).collect::<Vec<_>>().join(",")
        };
        let bbox = s.bbox.map_or_else(|| "-".to_owned(), |b| b.to_string());
        let payload = match &s.payload {
            Payload::Feature(_) => {
                feat_row += 1;
                format!("feat:{feat_name}#{}", feat_row - 1)
            }
            Payload::Grid(g) => {
                let rel = format!("{grid_dir}/{i}.grid");
                write_grid_file(&dir.join(&rel), g)?;
                format!("grid:{rel}")
            }
        };
        let frame = s.frame_id.as_deref().unwrap_or("-");
        let score = s.score.map_or_else(|| "-".to_owned(), |v| v.to_string());
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            s.sample_id,
            s.person,
            s.source_id,
            s.split.as_str(),
            tags,
            bbox,
            payload,
            frame,
            score
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    fn feature_file(dir: &Path, rows: usize, dim: usize) {
        let data: Vec<Vec<f64>> = (0..rows)
            .map(|r| (0..dim).map(|d| (r * dim + d) as f64).collect())
            .collect();
        let refs: Vec<&[f64]> = data.iter().map(|v| v.as_slice()).collect();
        write_feature_file(&dir.join("f.bin"), &refs, dim).unwrap();
    }

    #[test]
    fn three_records_two_sources() {
        let dir = tempdir().unwrap();
        feature_file(dir.path(), 3, 2);
        let m = write(
            dir.path(),
            "m.tsv",
            "# comment\n\
             a\tp1\tS1\ttrain\t-\t-\tfeat:f.bin#0\n\
             b\tp2\tS2\ttrain\tocclusion\t0,0,10,20\tfeat:f.bin#1\n\
             c\t-\tS1\tgallery\t\t-\tfeat:f.bin#2\tframe7\t0.9\n",
        );
        let pool = load_manifest(&m).unwrap();
        assert_eq!(pool.len(), 3);
        assert_eq!(pool.sources().len(), 2);
        let c = pool.get("c").unwrap();
        assert_eq!(c.person, PersonLabel::Distractor);
        assert_eq!(c.frame_id.as_deref(), Some("frame7"));
        assert_eq!(c.score, Some(0.9));
        assert_eq!(c.payload, Payload::Feature(vec![4.0, 5.0]));
        assert!(pool.get("b").unwrap().has_tag(Tag::Occlusion));
    }

    #[test]
    fn empty_manifest() {
        let dir = tempdir().unwrap();
        let m = write(dir.path(), "m.tsv", "");
        assert_eq!(load_manifest(&m).unwrap_err().to_string(), "empty manifest");
    }

    #[test]
    fn duplicate_id_is_named() {
        let dir = tempdir().unwrap();
        feature_file(dir.path(), 2, 2);
        let m = write(
            dir.path(),
            "m.tsv",
            "dup\tp1\tS\ttrain\t-\t-\tfeat:f.bin#0\ndup\tp1\tS\ttrain\t-\t-\tfeat:f.bin#1\n",
        );
        let err = load_manifest(&m).unwrap_err();
        assert!(matches!(&err, Error::DuplicateSample(id) if id == "dup"), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempdir().unwrap();
        feature_file(dir.path(), 1, 2);
        let m = write(
            dir.path(),
            "m.tsv",
            "a\tp1\tS\ttrain\t-\t-\tfeat:f.bin#0\nbroken line\n",
        );
        let err = load_manifest(&m).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
    }

    #[test]
    fn row_out_of_range_and_dim_mismatch() {
        let dir = tempdir().unwrap();
        feature_file(dir.path(), 1, 2);
        let m = write(dir.path(), "m.tsv", "a\tp1\tS\ttrain\t-\t-\tfeat:f.bin#3\n");
        assert!(load_manifest(&m).unwrap_err().to_string().contains("out of range"));

        let refs: Vec<&[f64]> = vec![&[1.0, 2.0, 3.0]];
        write_feature_file(&dir.path().join("g.bin"), &refs, 3).unwrap();
        let m = write(
            dir.path(),
            "m2.tsv",
            "a\tp1\tS\ttrain\t-\t-\tfeat:f.bin#0\nb\tp1\tS\ttrain\t-\t-\tfeat:g.bin#0\n",
        );
        let err = load_manifest(&m).unwrap_err().to_string();
        assert!(err.contains("dimension mismatch") && err.contains(":2:"), "{err}");
    }

    #[test]
    fn grid_payloads_load() {
        let dir = tempdir().unwrap();
        let g = PixelGrid::new(2, 1, 1, vec![0.25, 0.75]).unwrap();
        write_grid_file(&dir.path().join("x.grid"), &g).unwrap();
        let m = write(dir.path(), "m.tsv", "a\tp\tS\tprobe\tlowres\t-\tgrid:x.grid\n");
        let pool = load_manifest(&m).unwrap();
        assert_eq!(pool.samples()[0].payload, Payload::Grid(g));
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempdir().unwrap();
        fs::write(dir.path().join("f.bin"), b"NOTMAGIC\0\0\0\0\0\0\0\0").unwrap();
        assert!(read_feature_file(&dir.path().join("f.bin")).is_err());
    }
}
