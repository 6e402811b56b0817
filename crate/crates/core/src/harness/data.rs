//! Synthetic labeled shapes for pretraining and probing.
//!
//! Every generator samples a centrally symmetric surface in antithetic
//! pairs `(p, −p)`, applies a random rotation, adds isotropic Gaussian
//! noise, then centers the cloud and scales it to unit max radius.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::{read_xyz, write_labeled_xyz, PointCloud};

use super::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    Sphere,
    Plane,
    Box,
    Cylinder,
}

impl Generator {
    pub const ALL: [Generator; 4] = [Self::Sphere, Self::Plane, Self::Box, Self::Cylinder];

    pub fn label(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Sphere => "sphere",
            Self::Plane => "plane",
            Self::Box => "box",
            Self::Cylinder => "cylinder",
        }
    }

    /// One surface point; the generator also uses its negation.
    fn sample<R: Rng>(self, rng: &mut R, shape: &[f64; 3]) -> [f64; 3] {
        match self {
            Self::Sphere => loop {
                let v: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if n > 1e-12 {
                    break [v[0] / n, v[1] / n, v[2] / n];
                }
            },
            Self::Plane => [
                rng.random_range(-1.0..=1.0) * shape[0],
                rng.random_range(-1.0..=1.0) * shape[1],
                0.0,
            ],
            Self::Box => {
                let [a, b, c] = *shape;
                let areas = [b * c, a * c, a * b];
                let mut pick = rng.random_range(0.0..areas.iter().sum::<f64>());
                let mut axis = 0;
                while axis < 2 && pick >= areas[axis] {
                    pick -= areas[axis];
                    axis += 1;
                }
                let mut p: [f64; 3] =
                    std::array::from_fn(|i| rng.random_range(-1.0..=1.0) * shape[i]);
                p[axis] = shape[axis];
                p
            }
            Self::Cylinder => {
                let (r, h) = (shape[0], shape[1]);
                let side = 2.0 * r * h;
                let cap = r * r;
                if rng.random_range(0.0..side + cap) < side {
                    let t = rng.random_range(0.0..std::f64::consts::TAU);
                    [r * t.cos(), r * t.sin(), rng.random_range(-h..=h)]
                } else {
                    let t = rng.random_range(0.0..std::f64::consts::TAU);
                    let rad = r * rng.random_range(0.0f64..=1.0).sqrt();
                    [rad * t.cos(), rad * t.sin(), h]
                }
            }
        }
    }

    /// Per-instance extents.
    fn shape<R: Rng>(self, rng: &mut R) -> [f64; 3] {
        match self {
            Self::Sphere => [1.0; 3],
            Self::Plane => [1.0, rng.random_range(0.4..=1.0), 0.0],
            Self::Box => std::array::from_fn(|_| rng.random_range(0.4..=1.0)),
            Self::Cylinder => [rng.random_range(0.25..=0.6), rng.random_range(0.6..=1.0), 0.0],
        }
    }
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Generator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown generator `{s}`")))
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticShape {
    pub generator: Generator,
    pub label: usize,
    pub cloud: PointCloud,
}

/// Input of [`generate_dataset`], also the JSON accepted by `gen-data`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    /// `(generator id, count)` pairs.
    pub shapes: Vec<(String, usize)>,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_points")]
    pub points: usize,
}

fn default_points() -> usize {
    1024
}

impl DatasetSpec {
    /// `count` clouds of each of the four generators.
    pub fn balanced(count: usize, points: usize, noise: f64, seed: u64) -> Self {
        Self {
            shapes: Generator::ALL
                .iter()
                .map(|g| (g.name().to_string(), count))
                .collect(),
            noise,
            seed,
            points,
        }
    }
}

fn random_rotation<R: Rng>(rng: &mut R) -> [[f64; 3]; 3] {
    let q: [f64; 4] = loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-12 {
            break q.map(|v| v / n);
        }
    };
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Centers the cloud at the origin and scales its max radius to 1.
pub fn normalize(points: &mut [[f64; 3]]) {
    let n = points.len() as f64;
    let mut mean = [0.0; 3];
    for p in points.iter() {
        for d in 0..3 {
            mean[d] += p[d];
        }
    }
    let mean = mean.map(|m| m / n);
    let mut radius = 0.0f64;
    for p in points.iter_mut() {
        for d in 0..3 {
            p[d] -= mean[d];
        }
        radius = radius.max((p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt());
    }
    if radius > 0.0 {
        for p in points.iter_mut() {
            for v in p.iter_mut() {
                *v /= radius;
            }
        }
    }
}

pub fn generate_shape(generator: Generator, points: usize, noise: f64, seed: u64) -> Result<SyntheticShape> {
    if points == 0 {
        return Err(Error::Config("shapes need at least one point".into()));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Config(format!("noise must be nonnegative, got {noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extents = generator.shape(&mut rng);
    let rot = random_rotation(&mut rng);
    let jitter = Normal::new(0.0, noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut pts = Vec::with_capacity(points);
    while pts.len() < points {
        let p = generator.sample(&mut rng, &extents);
        pts.push(p);
        if pts.len() < points {
            pts.push(p.map(|v| -v));
        }
    }
    for p in pts.iter_mut() {
        let r: [f64; 3] = std::array::from_fn(|i| (0..3).map(|j| rot[i][j] * p[j]).sum());
        *p = if noise > 0.0 {
            r.map(|v| v + jitter.sample(&mut rng))
        } else {
            r
        };
    }
    normalize(&mut pts);
    let label = generator.label();
    Ok(SyntheticShape {
        generator,
        label,
        cloud: PointCloud::new(pts)?.with_label(label),
    })
}

/// Deterministic dataset: shape `i` is drawn from its own stream seeded by
/// `(seed, i)`, in the order given by the spec.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Vec<SyntheticShape>> {
    let mut out = Vec::new();
    for (id, count) in &spec.shapes {
        let generator: Generator = id.parse()?;
        if *count == 0 {
            return Err(Error::Config(format!("count for `{id}` must be positive")));
        }
        for _ in 0..*count {
            let seed = derive_seed(spec.seed, &[out.len() as u64]);
            out.push(generate_shape(generator, spec.points, spec.noise, seed)?);
        }
    }
    Ok(out)
}

/// Writes one labeled XYZ file per shape, named `{index:05}_{generator}.xyz`.
pub fn write_dataset(dir: impl AsRef<Path>, shapes: &[SyntheticShape]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for (i, s) in shapes.iter().enumerate() {
        let labels = vec![s.label as i64; s.cloud.len()];
        let path = dir.join(format!("{i:05}_{}.xyz", s.generator));
        write_labeled_xyz(path, s.cloud.points(), &labels)?;
    }
    Ok(())
}

/// Reads every `*.xyz` file in a directory, in file-name order.
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Vec<PointCloud>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir.as_ref())?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "xyz"));
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Config(format!(
            "no .xyz files in {}",
            dir.as_ref().display()
        )));
    }
    paths.iter().map(read_xyz).collect()
}
