//! Subcommand implementations. Every stage reads and writes files under the
//! output directory only, so stages can be rerun independently.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dldp_core::discovery::{discover, load_domain_model, save_domain_model, write_discovery_log, DomainModel};
use dldp_core::eval::{
    evaluate_index, gallery_sweep, prepare_gallery, subset_report, write_cmc, write_report, write_sweep, EvalReport,
    GroundTruth, RankMethod,
};
use dldp_core::net::{
    fine_tune_domain, fine_tune_hard, load_net, mine_hard_negatives, save_net, train_autoencoder, train_id_baseline,
    EmbedNet, NetConfig, TrainLog,
};
use dldp_core::pool::{domain_pool, generate_synthetic, load_manifest, save_manifest, DataPool, Payload, Sample, Split, Tag};
use dldp_core::reid::{build_gallery_index, load_index, rank_gallery, save_index, write_rankings, DomainBank, GalleryIndex};
use dldp_core::{seeded_rng, Error as CoreError};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{InitKind, PipelineConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Synth,
    Extract,
    Baseline,
    Discover,
    Domains,
    Index,
    Rank,
    Eval,
    Sweep,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Extract => "extract",
            Command::Baseline => "baseline",
            Command::Discover => "discover",
            Command::Domains => "domains",
            Command::Index => "index",
            Command::Rank => "rank",
            Command::Eval => "eval",
            Command::Sweep => "sweep",
            Command::Report => "report",
        }
    }
}

pub const BASELINE_NET: &str = "models/baseline.net";
pub const AUTOENCODER_NET: &str = "models/autoencoder.net";
pub const DOMAIN_MODEL: &str = "models/domain.dom";
pub const GALLERY_INDEX: &str = "index/gallery.idx";
pub const SYNTH_MANIFEST: &str = "data/manifest.tsv";
pub const SYNTH_TRUTH: &str = "data/truth.tsv";
pub const FEATURE_MANIFEST: &str = "features/manifest.tsv";
pub const DISCOVERY_LOG: &str = "logs/discovery.tsv";

pub fn domain_net(d: usize) -> String {
    format!("models/domain_{d}.net")
}

#[derive(Debug, Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

/// Per-command record written to `runs/<command>.json`.
#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    version: &'a str,
    config_hash: String,
    seed: u64,
    /// Resolved config with paths omitted.
    config: PipelineConfig,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    notes: Vec<String>,
}

struct Run<'a> {
    cfg: &'a PipelineConfig,
    out: PathBuf,
    manifest: PathBuf,
    provenance: String,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    notes: Vec<String>,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl<'a> Run<'a> {
    fn new(cfg: &'a PipelineConfig) -> Self {
        let out = PathBuf::from(&cfg.paths.out_dir);
        let manifest = if cfg.paths.manifest.is_empty() {
            out.join(SYNTH_MANIFEST)
        } else {
            PathBuf::from(&cfg.paths.manifest)
        };
        Self {
            cfg,
            out,
            manifest,
            provenance: cfg.provenance(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    /// Path of an artifact from an earlier stage; errors name it and its producer.
    fn require(&mut self, rel: &str, producer: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        self.require_path(p, producer)
    }

    fn require_path(&mut self, p: PathBuf, producer: &str) -> Result<PathBuf> {
        if !p.is_file() {
            bail!("missing artifact {} (run `dldp {producer}` first)", p.display());
        }
        self.inputs.push(p.clone());
        Ok(p)
    }

    /// Output path, with parent directories created.
    fn output(&mut self, rel: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        self.outputs.push(p.clone());
        Ok(p)
    }

    fn display(&self, p: &Path) -> String {
        p.strip_prefix(&self.out)
            .map(|r| r.display().to_string())
            .unwrap_or_else(|_| p.file_name().map_or_else(String::new, |f| f.to_string_lossy().into_owned()))
    }

    fn digests(&self, paths: &[PathBuf]) -> Result<Vec<FileDigest>> {
        paths
            .iter()
            .map(|p| {
                Ok(FileDigest {
                    path: self.display(p),
                    sha256: sha256_file(p)?,
                })
            })
            .collect()
    }

    fn finish(self, command: Command) -> Result<()> {
        let mut config = self.cfg.clone();
        config.paths = Default::default();
        let record = RunManifest {
            command: command.name(),
            version: env!("CARGO_PKG_VERSION"),
            config_hash: self.cfg.hash(),
            seed: self.cfg.seed,
            config,
            inputs: self.digests(&self.inputs)?,
            outputs: self.digests(&self.outputs)?,
            notes: self.notes,
        };
        let path = self.out.join("runs").join(format!("{}.json", command.name()));
        fs::create_dir_all(path.parent().expect("runs dir has a parent"))?;
        fs::write(&path, serde_json::to_string_pretty(&record)? + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    fn load_pool(&mut self) -> Result<DataPool> {
        let p = self.require_path(self.manifest.clone(), "synth")?;
        load_manifest(&p).with_context(|| format!("loading manifest {}", p.display()))
    }

    fn load_net(&mut self, rel: &str, producer: &str) -> Result<EmbedNet> {
        let p = self.require(rel, producer)?;
        Ok(load_net(&p).with_context(|| format!("loading {}", p.display()))?.0)
    }

    fn load_domain_model(&mut self) -> Result<DomainModel> {
        let p = self.require(DOMAIN_MODEL, "discover")?;
        Ok(load_domain_model(&p).with_context(|| format!("loading {}", p.display()))?.0)
    }

    fn load_bank(&mut self) -> Result<DomainBank> {
        let baseline = self.load_net(BASELINE_NET, "baseline")?;
        let model = self.load_domain_model()?;
        let nets = (0..model.k())
            .map(|d| self.load_net(&domain_net(d), "domains"))
            .collect::<Result<Vec<_>>>()?;
        Ok(DomainBank::new(baseline, nets, model)?.with_selection(self.cfg.strategy.selection))
    }

    fn load_index(&mut self) -> Result<GalleryIndex> {
        let p = self.require(GALLERY_INDEX, "index")?;
        Ok(load_index(&p).with_context(|| format!("loading {}", p.display()))?.0)
    }

    fn write_train_log(&mut self, rel: &str, log: &TrainLog) -> Result<()> {
        let p = self.output(rel)?;
        let mut w = std::io::BufWriter::new(fs::File::create(&p)?);
        writeln!(w, "# DLDPTRN1 {}", self.provenance)?;
        writeln!(w, "iter\tloss")?;
        for (i, l) in log.losses.iter().enumerate() {
            writeln!(w, "{i}\t{l}")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Network shape for `pool`; `input_dim = 0` is filled in from the data.
fn net_config(cfg: &PipelineConfig, pool: &DataPool) -> Result<NetConfig> {
    let first = pool.samples().first().context("empty pool")?;
    let dim = cfg.input.input_dim(first);
    let mut net = cfg.net.clone();
    if net.input_dim == 0 {
        net.input_dim = dim;
    } else if net.input_dim != dim {
        bail!("net.input_dim = {} but the data encodes to width {dim}", net.input_dim);
    }
    net.validate()?;
    Ok(net)
}

fn queries(pool: &DataPool) -> Vec<&Sample> {
    pool.samples().iter().filter(|s| s.split == Split::Probe).collect()
}

fn stamp(mut report: EvalReport, cfg: &PipelineConfig, index: &GalleryIndex) -> EvalReport {
    report.seed = Some(cfg.seed);
    report.config_hash = Some(cfg.hash());
    if index.meta().iter().any(|m| m.score.is_some()) {
        report.boxes_per_image = Some(cfg.eval.boxes_per_image);
    }
    report
}

fn synth(run: &mut Run) -> Result<()> {
    let synth = generate_synthetic(&run.cfg.synth, &mut seeded_rng(run.cfg.seed))?;
    let manifest = run.manifest.clone();
    if let Some(dir) = manifest.parent() {
        fs::create_dir_all(dir)?;
    }
    save_manifest(&synth.pool, &manifest, &run.provenance)?;
    run.outputs.push(manifest);
    let truth = run.output(SYNTH_TRUTH)?;
    let mut w = std::io::BufWriter::new(fs::File::create(&truth)?);
    writeln!(w, "# DLDPTRU1 {}", run.provenance)?;
    writeln!(w, "sample_id\tmode\tsource")?;
    for (s, m) in synth.pool.samples().iter().zip(&synth.modes) {
        writeln!(w, "{}\t{m}\t{}", s.sample_id, s.source_id)?;
    }
    w.flush()?;
    run.notes.push(format!("{} samples", synth.pool.len()));
    Ok(())
}

fn extract(run: &mut Run) -> Result<()> {
    let pool = run.load_pool()?;
    let input = run.cfg.input;
    let samples = pool
        .samples()
        .par_iter()
        .map(|s| {
            let mut s = s.clone();
            s.payload = Payload::Feature(input.encode(&s)?);
            Ok(s)
        })
        .collect::<Result<Vec<_>, CoreError>>()?;
    let out = run.output(FEATURE_MANIFEST)?;
    save_manifest(&DataPool::new(samples)?, &out, &run.provenance)?;
    let stem = out.with_extension("feat.bin");
    if stem.is_file() {
        run.outputs.push(stem);
    }
    Ok(())
}

fn baseline(run: &mut Run) -> Result<()> {
    let pool = run.load_pool()?.training_pool();
    let net_cfg = net_config(run.cfg, &pool)?;
    let (net, log) = train_id_baseline(&pool, &net_cfg, &run.cfg.train.baseline, &run.cfg.input, &mut seeded_rng(run.cfg.seed))?;
    save_net(run.output(BASELINE_NET)?, &net, &run.provenance)?;
    run.write_train_log("logs/baseline.tsv", &log)?;
    run.notes.push(format!("{} identities", net.config().head_dim));
    Ok(())
}

fn discover_stage(run: &mut Run) -> Result<()> {
    let pool = run.load_pool()?.training_pool();
    let mut rng = seeded_rng(run.cfg.seed);
    let init = match run.cfg.strategy.init {
        InitKind::Supervised => run.load_net(BASELINE_NET, "baseline")?,
        InitKind::Autoencoder => {
            let net_cfg = net_config(run.cfg, &pool)?;
            let (ae, log) = train_autoencoder(&pool, &net_cfg, &run.cfg.train.autoencoder, &run.cfg.input, &mut rng)?;
            run.write_train_log("logs/autoencoder.tsv", &log)?;
            let enc = ae.into_encoder();
            save_net(run.output(AUTOENCODER_NET)?, &enc, &run.provenance)?;
            enc
        }
    };
    let model = discover(&pool, &init, &run.cfg.discovery, &run.cfg.input, &mut rng)?;
    save_domain_model(run.output(DOMAIN_MODEL)?, &model, &run.provenance)?;
    write_discovery_log(run.output(DISCOVERY_LOG)?, &model.history, &run.provenance)?;
    let last = model.history.last().expect("discovery runs at least one pass");
    run.notes.push(if model.converged(run.cfg.discovery.convergence_frac) {
        format!(
            "terminated: converged after {} passes (changed_fraction {} < {})",
            model.history.len(),
            last.changed_fraction,
            run.cfg.discovery.convergence_frac
        )
    } else {
        format!("terminated: max_outer = {} reached", run.cfg.discovery.max_outer)
    });
    Ok(())
}

fn domains(run: &mut Run) -> Result<()> {
    let pool = run.load_pool()?.training_pool();
    let baseline = run.load_net(BASELINE_NET, "baseline")?;
    let model = run.load_domain_model()?;
    let k = model.k();
    let cfg = run.cfg;
    let trained = (0..k)
        .into_par_iter()
        .map(|d| -> Result<(EmbedNet, Option<TrainLog>, String)> {
            let dpool = domain_pool(&pool, &model.assignments, d, k)?;
            let mut rng = seeded_rng(cfg.seed.wrapping_add(d as u64));
            match fine_tune_domain(&baseline, &dpool, &cfg.train.domain, &cfg.input, &mut rng) {
                Ok((net, log)) => {
                    let hard = mine_hard_negatives(&net, &dpool, &cfg.input)?;
                    let net = fine_tune_hard(&net, &dpool, &hard, &cfg.train.hard, &cfg.input, &mut rng)?;
                    let note = format!(
                        "domain {d}: {} samples, {} identities, {} hard negatives",
                        dpool.len(),
                        dpool.identities().len(),
                        hard.len()
                    );
                    Ok((net, Some(log), note))
                }
                Err(e @ (CoreError::TooFewIdentities(_) | CoreError::EmptyPool)) => {
                    Ok((baseline.clone(), None, format!("domain {d}: {e}; using the baseline net")))
                }
                Err(e) => Err(anyhow::Error::from(e).context(format!("domain {d}"))),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    for (d, (net, log, note)) in trained.into_iter().enumerate() {
        save_net(run.output(&domain_net(d))?, &net, &run.provenance)?;
        if let Some(log) = log {
            run.write_train_log(&format!("logs/domain_{d}.tsv"), &log)?;
        }
        run.notes.push(note);
    }
    Ok(())
}

fn index(run: &mut Run) -> Result<()> {
    let pool = run.load_pool()?;
    let bank = run.load_bank()?;
    let gts = if run.cfg.paths.ground_truth.is_empty() {
        None
    } else {
        let p = run.require_path(PathBuf::from(&run.cfg.paths.ground_truth), "synth")?;
        Some(GroundTruth::from_pool(&load_manifest(&p)?))
    };
    let gallery = pool.split(Split::Gallery);
    let (gallery, has_dets) = prepare_gallery(&gallery, gts.as_deref(), &run.cfg.eval)?;
    let index = build_gallery_index(&bank, &gallery, &run.cfg.input)?;
    save_index(run.output(GALLERY_INDEX)?, &index, &run.provenance)?;
    run.notes.push(format!("{} gallery items, k = {}", index.len(), index.k()));
    if has_dets {
        run.notes.push(format!("detections filtered to {} per frame", run.cfg.eval.boxes_per_image));
    }
    Ok(())
}

fn rank(run: &mut Run) -> Result<()> {
    let pool = run.load_pool()?;
    let bank = run.load_bank()?;
    let index = run.load_index()?;
    let input = run.cfg.input;
    let rankings = queries(&pool)
        .par_iter()
        .map(|q| rank_gallery(&bank, &index, q, &input).with_context(|| format!("probe {}", q.sample_id)))
        .collect::<Result<Vec<_>>>()?;
    write_rankings(run.output("results/rankings.tsv")?, &rankings, &run.provenance)?;
    Ok(())
}

fn eval(run: &mut Run) -> Result<()> {
    let index = run.load_index()?;
    let pool = run.load_pool()?;
    let bank = run.load_bank()?;
    let q = queries(&pool);
    for (method, suffix) in [(RankMethod::Domain, ""), (RankMethod::Baseline, "_baseline")] {
        let cfg = dldp_core::eval::EvalConfig { method, ..run.cfg.eval };
        let report = stamp(evaluate_index(&bank, &index, &q, &cfg, &run.cfg.input)?, run.cfg, &index);
        write_report(run.output(&format!("results/report{suffix}.json"))?, &report)?;
        write_cmc(run.output(&format!("results/cmc{suffix}.tsv"))?, &report.cmc, &run.provenance)?;
        run.notes.push(format!(
            "{}: mAP {:.4}, rank-1 {:.4}, {} evaluated, {} skipped",
            if suffix.is_empty() { "domains" } else { "baseline" },
            report.map,
            report.rank1,
            report.queries_evaluated,
            report.queries_skipped
        ));
    }
    Ok(())
}

fn sweep(run: &mut Run) -> Result<()> {
    let index = run.load_index()?;
    let pool = run.load_pool()?;
    let bank = run.load_bank()?;
    let rows = gallery_sweep(
        &bank,
        &index,
        &queries(&pool),
        &run.cfg.sweep.gallery_sizes,
        &run.cfg.eval,
        &run.cfg.input,
        &mut seeded_rng(run.cfg.seed),
    )?;
    write_sweep(run.output("results/sweep.tsv")?, &rows, &run.provenance)?;
    Ok(())
}

#[derive(Serialize)]
struct SubsetSummary {
    tag: String,
    #[serde(rename = "mAP")]
    map: Option<f64>,
    rank1: Option<f64>,
    queries_evaluated: usize,
    note: Option<String>,
}

#[derive(Serialize)]
struct Summary {
    config_hash: String,
    seed: u64,
    #[serde(rename = "mAP")]
    map: f64,
    rank1: f64,
    queries_evaluated: usize,
    subsets: Vec<SubsetSummary>,
}

fn report(run: &mut Run) -> Result<()> {
    let index = run.load_index()?;
    let pool = run.load_pool()?;
    let bank = run.load_bank()?;
    let q = queries(&pool);
    let (cfg, input) = (&run.cfg.eval, &run.cfg.input);
    let all = evaluate_index(&bank, &index, &q, cfg, input)?;
    let mut subsets = Vec::new();
    for name in &run.cfg.report.subset_tags {
        let tag: Tag = name.parse()?;
        subsets.push(match subset_report(&bank, &index, &q, tag, cfg, input) {
            Ok(r) => SubsetSummary {
                tag: name.clone(),
                map: Some(r.map),
                rank1: Some(r.rank1),
                queries_evaluated: r.queries_evaluated,
                note: None,
            },
            Err(e @ (CoreError::NoTaggedQueries(_) | CoreError::EmptyRelevant)) => SubsetSummary {
                tag: name.clone(),
                map: None,
                rank1: None,
                queries_evaluated: 0,
                note: Some(e.to_string()),
            },
            Err(e) => return Err(e.into()),
        });
    }
    let summary = Summary {
        config_hash: run.cfg.hash(),
        seed: run.cfg.seed,
        map: all.map,
        rank1: all.rank1,
        queries_evaluated: all.queries_evaluated,
        subsets,
    };
    let p = run.output("results/summary.json")?;
    fs::write(&p, serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(())
}

/// Runs one subcommand and writes its run manifest.
pub fn run(command: Command, cfg: &PipelineConfig) -> Result<()> {
    let mut run = Run::new(cfg);
    match command {
        Command::Synth => synth(&mut run),
        Command::Extract => extract(&mut run),
        Command::Baseline => baseline(&mut run),
        Command::Discover => discover_stage(&mut run),
        Command::Domains => domains(&mut run),
        Command::Index => index(&mut run),
        Command::Rank => rank(&mut run),
        Command::Eval => eval(&mut run),
        Command::Sweep => sweep(&mut run),
        Command::Report => report(&mut run),
    }
    .with_context(|| format!("`{}` failed", command.name()))?;
    run.finish(command)
}
