//! Synthetic person pools with planted appearance modes and source bias.
//!
//! Feature layout (dimension `num_modes + sources + identity block`):
//!
//! - one axis per appearance mode; mode `m` is centred at `sep / sqrt(2) * e_m`,
//!   so any two mode centres are exactly `mode_separation` apart;
//! - one axis per source carrying that source's bias offset;
//! - identity axes where each person's own offset lives, either shared by all
//!   modes or a separate block per mode.
//!
//! Every image adds isotropic Gaussian noise of std `noise` to its person's
//! point.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DataPool, Payload, PersonLabel, PixelGrid, Sample, Split, Tag};
use super::{DOWNSAMPLE_H, DOWNSAMPLE_W};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceAssignment {
    /// Person `p` (global index) belongs to source `p % sources`.
    PerPerson,
    /// Image `i` of every person comes from source `i % sources`.
    PerImage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PayloadKind {
    Feature,
    /// Rendered as an RGB grid whose 8x4 cells hold logistic-squashed feature values.
    Grid { height: usize, width: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub num_modes: usize,
    pub persons_per_mode: usize,
    pub images_per_person: usize,
    pub sources: usize,
    pub mode_separation: f64,
    pub noise: f64,
    pub person_spread: f64,
    pub identity_dims: usize,
    pub mode_specific_identity: bool,
    pub source_bias: f64,
    pub source_assignment: SourceAssignment,
    /// Held-out persons per mode: first image is a probe, the rest go to the gallery.
    pub test_persons_per_mode: usize,
    /// Gallery-only items without identity.
    pub distractors: usize,
    /// Fraction of probes tagged `occlusion` and degraded by `degrade_noise`.
    pub occlusion_fraction: f64,
    /// Fraction of probes tagged `lowres` and degraded by `degrade_noise`.
    pub lowres_fraction: f64,
    pub degrade_noise: f64,
    pub payload: PayloadKind,
    /// Divisor applied before the logistic squashing of grid payloads.
    pub grid_scale: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_modes: 4,
            persons_per_mode: 10,
            images_per_person: 10,
            sources: 2,
            mode_separation: 10.0,
            noise: 0.5,
            person_spread: 1.0,
            identity_dims: 4,
            mode_specific_identity: false,
            source_bias: 0.0,
            source_assignment: SourceAssignment::PerPerson,
            test_persons_per_mode: 0,
            distractors: 0,
            occlusion_fraction: 0.0,
            lowres_fraction: 0.0,
            degrade_noise: 2.0,
            payload: PayloadKind::Feature,
            grid_scale: 4.0,
        }
    }
}

impl SynthSpec {
    pub fn feature_dim(&self) -> usize {
        let id_block = if self.mode_specific_identity {
            self.identity_dims * self.num_modes
        } else {
            self.identity_dims
        };
        self.num_modes + self.sources + id_block
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_modes", self.num_modes),
            ("persons_per_mode", self.persons_per_mode),
            ("images_per_person", self.images_per_person),
            ("sources", self.sources),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be >= 1")));
            }
        }
        let reals = [
            ("mode_separation", self.mode_separation),
            ("noise", self.noise),
            ("person_spread", self.person_spread),
            ("source_bias", self.source_bias),
            ("degrade_noise", self.degrade_noise),
        ];
        for (name, v) in reals {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be finite and >= 0")));
            }
        }
        for (name, v) in [
            ("occlusion_fraction", self.occlusion_fraction),
            ("lowres_fraction", self.lowres_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} must be in [0, 1]")));
            }
        }
        if let PayloadKind::Grid { height, width } = self.payload {
            let cells = DOWNSAMPLE_H * DOWNSAMPLE_W * 3;
            if self.feature_dim() > cells {
                return Err(Error::InvalidArgument(format!(
                    "grid payloads hold at most {cells} feature values, spec needs {}",
                    self.feature_dim()
                )));
            }
            if height < DOWNSAMPLE_H || width < DOWNSAMPLE_W {
                return Err(Error::InvalidArgument(format!(
                    "grid must be at least {DOWNSAMPLE_H}x{DOWNSAMPLE_W}"
                )));
            }
            if !(self.grid_scale > 0.0) {
                return Err(Error::InvalidArgument("grid_scale must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// A generated pool together with the planted mode of every sample.
#[derive(Debug, Clone)]
pub struct SyntheticPool {
    pub pool: DataPool,
    /// Planted appearance mode, aligned with `pool.samples()`.
    pub modes: Vec<usize>,
}

impl SyntheticPool {
    pub fn mode_of(&self, sample_id: &str) -> Option<usize> {
        self.pool
            .samples()
            .iter()
            .position(|s| s.sample_id == sample_id)
            .map(|i| self.modes[i])
    }
}

/// Paints `latent` into an RGB grid: value `i` fills channel `i % 3` of
/// thumbnail cell `i / 3`, squashed by `1 / (1 + exp(-x / scale))`.
pub fn render_grid(latent: &[f64], height: usize, width: usize, scale: f64) -> Result<PixelGrid> {
    let mut values = Vec::with_capacity(height * width * 3);
    for r in 0..height {
        let cr = r * DOWNSAMPLE_H / height;
        for c in 0..width {
            let cc = c * DOWNSAMPLE_W / width;
            let cell = cr * DOWNSAMPLE_W + cc;
            for ch in 0..3 {
                let z = latent.get(cell * 3 + ch).copied().unwrap_or(0.0);
                values.push(1.0 / (1.0 + (-z / scale).exp()));
            }
        }
    }
    PixelGrid::new(height, width, 3, values)
}

struct Builder<'a, R: ?Sized> {
    spec: &'a SynthSpec,
    dim: usize,
    rng: &'a mut R,
    samples: Vec<Sample>,
    modes: Vec<usize>,
}

impl<R: Rng + ?Sized> Builder<'_, R> {
    fn person_point(&mut self, mode: usize) -> Vec<f64> {
        let s = self.spec;
        let mut p = vec![0.0; self.dim];
        p[mode] = s.mode_separation / std::f64::consts::SQRT_2;
        let start = s.num_modes
            + s.sources
            + if s.mode_specific_identity { mode * s.identity_dims } else { 0 };
        for v in &mut p[start..start + s.identity_dims] {
            let z: f64 = StandardNormal.sample(&mut *self.rng);
            *v += s.person_spread * z;
        }
        p
    }

    fn image(&mut self, point: &[f64], source: usize, extra_noise: f64) -> Vec<f64> {
        let s = self.spec;
        let sigma = (s.noise * s.noise + extra_noise * extra_noise).sqrt();
        let mut x = point.to_vec();
        x[s.num_modes + source] += s.source_bias / std::f64::consts::SQRT_2;
        if sigma > 0.0 {
            let n = Normal::new(0.0, sigma).expect("validated");
            for v in &mut x {
                *v += n.sample(&mut *self.rng);
            }
        }
        x
    }

    fn payload(&self, x: Vec<f64>) -> Result<Payload> {
        match self.spec.payload {
            PayloadKind::Feature => Ok(Payload::Feature(x)),
            PayloadKind::Grid { height, width } => Ok(Payload::Grid(render_grid(
                &x,
                height,
                width,
                self.spec.grid_scale,
            )?)),
        }
    }

    fn push(&mut self, sample: Sample, mode: usize) {
        self.samples.push(sample);
        self.modes.push(mode);
    }
}

/// Generates a pool with `num_modes` planted appearance modes.
///
/// Training persons get split `train`. Held-out persons contribute one probe
/// and `images_per_person - 1` gallery items. Sources are assigned round-robin
/// so that modes and sources are decorrelated.
pub fn generate_synthetic<R: Rng + ?Sized>(spec: &SynthSpec, rng: &mut R) -> Result<SyntheticPool> {
    spec.validate()?;
    let mut b = Builder {
        spec,
        dim: spec.feature_dim(),
        rng,
        samples: Vec::new(),
        modes: Vec::new(),
    };
    let source_of = |person: usize, image: usize| match spec.source_assignment {
        SourceAssignment::PerPerson => person % spec.sources,
        SourceAssignment::PerImage => image % spec.sources,
    };

    let mut global = 0usize;
    for mode in 0..spec.num_modes {
        for j in 0..spec.persons_per_mode {
            let point = b.person_point(mode);
            let pid = format!("m{mode:02}p{j:03}");
            for i in 0..spec.images_per_person {
                let src = source_of(global, i);
                let x = b.image(&point, src, 0.0);
                let mut s = Sample::new(
                    format!("{pid}i{i:03}"),
                    PersonLabel::Id(pid.clone()),
                    format!("src{src}"),
                    Split::Train,
                    b.payload(x)?,
                );
                s.tags.insert(Tag::Train);
                b.push(s, mode);
            }
            global += 1;
        }
    }

    let mut probes = Vec::new();
    for mode in 0..spec.num_modes {
        for j in 0..spec.test_persons_per_mode {
            let point = b.person_point(mode);
            let pid = format!("m{mode:02}t{j:03}");
            for i in 0..spec.images_per_person.max(2) {
                let src = source_of(global, i);
                let is_probe = i == 0;
                let mut tags = std::collections::BTreeSet::from([Tag::Test]);
                if is_probe {
                    let u: f64 = b.rng.random();
                    if u < spec.occlusion_fraction {
                        tags.insert(Tag::Occlusion);
                    }
                    let u: f64 = b.rng.random();
                    if u < spec.lowres_fraction {
                        tags.insert(Tag::Lowres);
                    }
                }
                let degraded = tags.contains(&Tag::Occlusion) || tags.contains(&Tag::Lowres);
                let x = b.image(&point, src, if degraded { spec.degrade_noise } else { 0.0 });
                let mut s = Sample::new(
                    format!("{pid}i{i:03}"),
                    PersonLabel::Id(pid.clone()),
                    format!("src{src}"),
                    if is_probe { Split::Probe } else { Split::Gallery },
                    b.payload(x)?,
                );
                s.tags = tags;
                if is_probe {
                    probes.push(b.samples.len());
                }
                b.push(s, mode);
            }
            global += 1;
        }
    }

    for n in 0..spec.distractors {
        let mode = b.rng.random_range(0..spec.num_modes);
        let src = b.rng.random_range(0..spec.sources);
        let point = b.person_point(mode);
        let x = b.image(&point, src, 0.0);
        let mut s = Sample::new(
            format!("dist{n:05}"),
            PersonLabel::Distractor,
            format!("src{src}"),
            Split::Gallery,
            b.payload(x)?,
        );
        s.tags.insert(Tag::Test);
        b.push(s, mode);
    }

    Ok(SyntheticPool {
        pool: DataPool::new(b.samples)?,
        modes: b.modes,
    })
}
