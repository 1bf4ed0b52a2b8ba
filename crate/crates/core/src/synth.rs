//! Synthetic two-robot datasets with a known shared latent structure.
//!
//! Each (object, trial) gets a latent vector: a class mean encoding weight
//! (first axis) and content (a hexagon in the next two axes, empty at the
//! center), a small per-object offset, and trial noise. Every robot and
//! channel observes it through its own affine map plus isotropic noise.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{
    Behavior, Color, Content, DatasetManifest, Modality, ObjectDescriptor, Provenance, RobotDescriptor,
    SensorimotorContext, TrialRecord, Weight,
};
use crate::error::{Error, Result};
use crate::eval::derive_seed;

/// Size of the full object catalog: 5 colors x 3 weights x 6 contents plus
/// one empty container per color.
pub const CATALOG_SIZE: usize = 95;

const FILLED_CONTENTS: [Content; 6] = [
    Content::Buttons,
    Content::Dices,
    Content::Marbles,
    Content::NutsBolts,
    Content::Pasta,
    Content::Rice,
];
const FILLED_WEIGHTS: [Weight; 3] = [Weight::G50, Weight::G100, Weight::G150];

/// The object catalog in color-major order.
pub fn object_catalog() -> Vec<ObjectDescriptor> {
    let mut out = Vec::with_capacity(CATALOG_SIZE);
    for &color in Color::ALL {
        for weight in FILLED_WEIGHTS {
            for content in FILLED_CONTENTS {
                out.push(ObjectDescriptor {
                    id: format!("{color}-{content}-{weight}"),
                    color,
                    content,
                    weight,
                });
            }
        }
        out.push(ObjectDescriptor {
            id: format!("{color}-empty"),
            color,
            content: Content::Empty,
            weight: Weight::Empty,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRobot {
    pub name: String,
    pub behaviors: Vec<Behavior>,
    pub modalities: Vec<Modality>,
    pub effort_joints: usize,
}

impl SynthRobot {
    pub fn new(name: &str, effort_joints: usize, behaviors: &[Behavior], modalities: &[Modality]) -> Self {
        SynthRobot {
            name: name.to_string(),
            behaviors: behaviors.to_vec(),
            modalities: modalities.to_vec(),
            effort_joints,
        }
    }

    fn descriptor(&self, trials: usize) -> RobotDescriptor {
        RobotDescriptor {
            name: self.name.clone(),
            behaviors: self.behaviors.clone(),
            modalities: self.modalities.clone(),
            trials_per_object: trials,
            effort_joints: self.effort_joints,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    /// Taken from the front of the catalog.
    pub objects: usize,
    pub trials_per_object: usize,
    pub latent_dim: usize,
    /// Observation noise added in every feature space.
    pub noise_sigma: f64,
    /// Trial-to-trial noise in the latent space.
    pub latent_sigma: f64,
    /// Spread of the per-object latent offsets.
    pub object_sigma: f64,
    /// Distance between neighboring class means; `None` means four times
    /// `noise_sigma`.
    pub separation: Option<f64>,
    /// Singular values of every map lie in `[1, max_condition]`.
    pub max_condition: f64,
    /// Bias entries are uniform in `[-bias_range, bias_range]`.
    pub bias_range: f64,
    pub robots: Vec<SynthRobot>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            objects: CATALOG_SIZE,
            trials_per_object: 5,
            latent_dim: 3,
            noise_sigma: 1.0,
            latent_sigma: 0.5,
            object_sigma: 0.25,
            separation: None,
            max_condition: 10.0,
            bias_range: 5.0,
            robots: vec![
                SynthRobot::new("baxter", 7, Behavior::ALL, Modality::ALL),
                SynthRobot::new("ur5", 6, Behavior::ALL, Modality::ALL),
            ],
        }
    }
}

impl SynthConfig {
    pub fn separation(&self) -> f64 {
        self.separation.unwrap_or(4.0 * self.noise_sigma)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.objects == 0 || self.objects > CATALOG_SIZE {
            return bad(format!("objects must be in 1..={CATALOG_SIZE}, got {}", self.objects));
        }
        if self.trials_per_object == 0 {
            return bad("at least one trial per object is required".into());
        }
        if self.latent_dim < 3 {
            return bad(format!("latent dimension must be at least 3, got {}", self.latent_dim));
        }
        for (name, v) in [
            ("noise sigma", self.noise_sigma),
            ("latent sigma", self.latent_sigma),
            ("object sigma", self.object_sigma),
            ("bias range", self.bias_range),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(self.separation() > 0.0) {
            return bad("class separation must be positive".into());
        }
        if !(self.max_condition >= 1.0) {
            return bad("condition number cap must be at least 1".into());
        }
        if self.robots.is_empty() {
            return bad("at least one robot is required".into());
        }
        for r in &self.robots {
            let descriptor = r.descriptor(self.trials_per_object);
            for m in &r.modalities {
                let dim = descriptor.feature_dim(*m);
                if dim < self.latent_dim {
                    return bad(format!("{} {m} has {dim} features, fewer than the latent dimension", r.name));
                }
            }
        }
        Ok(())
    }
}

/// `x = matrix * z + bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub matrix: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl AffineMap {
    pub fn apply(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.matrix * z + &self.bias
    }

    pub fn condition_number(&self) -> f64 {
        let s = self.matrix.clone().singular_values();
        s.max() / s.min()
    }
}

/// A generated manifest together with the ground truth behind it.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub manifest: DatasetManifest,
    /// Keyed by context display name.
    pub maps: BTreeMap<String, AffineMap>,
    /// Class mean plus object offset, per object id.
    pub object_means: BTreeMap<String, DVector<f64>>,
    pub config: SynthConfig,
}

/// Latent class mean of an object: weight along the first axis, content on
/// a hexagon of radius `sep` in the next two, empty content at the center.
pub fn class_mean(object: &ObjectDescriptor, latent_dim: usize, sep: f64) -> DVector<f64> {
    let mut mu = DVector::zeros(latent_dim);
    let level = match object.weight {
        Weight::Empty => 0.0,
        Weight::G50 => 1.0,
        Weight::G100 => 2.0,
        Weight::G150 => 3.0,
    };
    mu[0] = sep * (level - 1.5);
    if let Some(k) = FILLED_CONTENTS.iter().position(|&c| c == object.content) {
        let angle = 2.0 * PI * k as f64 / FILLED_CONTENTS.len() as f64;
        mu[1] = sep * angle.cos();
        mu[2] = sep * angle.sin();
    }
    mu
}

fn random_orthonormal(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng));
    g.qr().q().columns(0, cols).into_owned()
}

/// `U diag(s) Vᵀ` with orthonormal `U`, `V` and log-uniform singular values
/// in `[1, max_condition]`.
fn random_map(out_dim: usize, latent_dim: usize, config: &SynthConfig, rng: &mut impl Rng) -> AffineMap {
    let u = random_orthonormal(out_dim, latent_dim, rng);
    let v = random_orthonormal(latent_dim, latent_dim, rng);
    let log_max = config.max_condition.ln();
    let s = DVector::from_fn(latent_dim, |i, _| {
        // Pin the extremes so the cap is reached but never exceeded.
        let t = match i {
            0 => 0.0,
            1 => 1.0,
            _ => rng.random::<f64>(),
        };
        (t * log_max).exp()
    });
    let bias = DVector::from_fn(out_dim, |_, _| rng.random_range(-1.0..=1.0) * config.bias_range);
    AffineMap {
        matrix: u * DMatrix::from_diagonal(&s) * v.transpose(),
        bias,
    }
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("sigma validated")
}

pub fn generate_synthetic_dataset(config: &SynthConfig) -> Result<SynthDataset> {
    config.validate()?;
    let sep = config.separation();
    let objects: Vec<ObjectDescriptor> = object_catalog().into_iter().take(config.objects).collect();
    let l = config.latent_dim;

    let mut object_means = BTreeMap::new();
    let mut latents: BTreeMap<String, Vec<DVector<f64>>> = BTreeMap::new();
    for (oi, o) in objects.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[1, oi as u64]));
        let offset = DVector::from_fn(l, |_, _| normal(config.object_sigma).sample(&mut rng));
        let mean = class_mean(o, l, sep) + offset;
        let trials = (0..config.trials_per_object)
            .map(|_| &mean + DVector::from_fn(l, |_, _| normal(config.latent_sigma).sample(&mut rng)))
            .collect();
        latents.insert(o.id.clone(), trials);
        object_means.insert(o.id.clone(), mean);
    }

    let mut maps = BTreeMap::new();
    let mut records = Vec::new();
    let mut robots = Vec::new();
    for (ri, robot) in config.robots.iter().enumerate() {
        let descriptor = robot.descriptor(config.trials_per_object);
        for context in descriptor.contexts() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                config.seed,
                &[2, ri as u64, context.behavior as u64, context.modality as u64],
            ));
            let map = random_map(context.feature_dim, l, config, &mut rng);
            records.extend(observe(&objects, &latents, &context, &map, config.noise_sigma, &mut rng));
            maps.insert(context.to_string(), map);
        }
        robots.push(descriptor);
    }
    let manifest = DatasetManifest::new(robots, objects, records)?;
    Ok(SynthDataset {
        manifest,
        maps,
        object_means,
        config: config.clone(),
    })
}

fn observe(
    objects: &[ObjectDescriptor],
    latents: &BTreeMap<String, Vec<DVector<f64>>>,
    context: &SensorimotorContext,
    map: &AffineMap,
    noise: f64,
    rng: &mut impl Rng,
) -> Vec<TrialRecord> {
    let mut out = Vec::new();
    for o in objects {
        for (trial, z) in latents[&o.id].iter().enumerate() {
            let clean = map.apply(z);
            out.push(TrialRecord {
                object: o.id.clone(),
                context: context.clone(),
                trial,
                feature: clean.iter().map(|v| v + normal(noise).sample(rng)).collect(),
                provenance: Provenance::Real,
            });
        }
    }
    out
}
