//! Synthetic two-class problems in the plane.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::{index::sample, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autonet::Matrix;
use crate::error::{Error, Result};
use crate::rng::{label_key, rng_from};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    Spirals,
    Moons,
    Circles,
    Xor,
    Gauss,
}

impl Generator {
    pub const ALL: [Generator; 5] = [
        Generator::Spirals,
        Generator::Moons,
        Generator::Circles,
        Generator::Xor,
        Generator::Gauss,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Generator::Spirals => "spirals",
            Generator::Moons => "moons",
            Generator::Circles => "circles",
            Generator::Xor => "xor",
            Generator::Gauss => "gauss",
        }
    }

    /// Jitter (standard deviation) used unless configured otherwise; for
    /// `gauss` this is the spread of each class.
    pub fn default_noise(self) -> f64 {
        match self {
            Generator::Spirals | Generator::Moons => 0.1,
            Generator::Circles => 0.05,
            Generator::Xor => 0.0,
            Generator::Gauss => 0.5,
        }
    }

    /// Training points per class in the small-data procedure.
    pub fn small_data_per_class(self) -> usize {
        match self {
            Generator::Spirals => 25,
            Generator::Moons | Generator::Circles => 10,
            Generator::Xor => 8,
            Generator::Gauss => 2,
        }
    }
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Generator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown generator {s:?}")))
    }
}

/// The six rotation / x-scale pairs applied to every generator.
pub const AUGMENTATIONS: [(f64, f64); 6] = [
    (0.0, 1.0),
    (45.0, 1.0),
    (90.0, 1.0),
    (0.0, 2.0),
    (45.0, 2.0),
    (90.0, 2.0),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub generator: Generator,
    pub rotation_deg: f64,
    pub x_scale: f64,
    pub noise: f64,
    pub samples_per_split: usize,
    pub seed: u64,
}

impl TaskSpec {
    pub fn new(generator: Generator, seed: u64) -> Self {
        Self {
            generator,
            rotation_deg: 0.0,
            x_scale: 1.0,
            noise: generator.default_noise(),
            samples_per_split: 600,
            seed,
        }
    }

    pub fn augmented(mut self, rotation_deg: f64, x_scale: f64) -> Self {
        self.rotation_deg = rotation_deg;
        self.x_scale = x_scale;
        self
    }

    pub fn is_augmented(&self) -> bool {
        self.rotation_deg != 0.0 || self.x_scale != 1.0
    }

    /// Stable name such as `spirals-r45-x2`.
    pub fn id(&self) -> String {
        format!("{}-r{}-x{}", self.generator, self.rotation_deg, self.x_scale)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples_per_split < 4 {
            return Err(Error::Config(format!(
                "{}: at least two samples per class are required",
                self.id()
            )));
        }
        if self.noise < 0.0 || !self.noise.is_finite() {
            return Err(Error::Config(format!("{}: noise must be >= 0", self.id())));
        }
        if self.x_scale <= 0.0 || !self.x_scale.is_finite() || !self.rotation_deg.is_finite() {
            return Err(Error::Config(format!("{}: invalid augmentation", self.id())));
        }
        Ok(())
    }
}

/// Every generator under every augmentation.
pub fn full_roster(samples_per_split: usize, seed: u64) -> Vec<TaskSpec> {
    Generator::ALL
        .into_iter()
        .flat_map(|g| {
            AUGMENTATIONS.into_iter().map(move |(r, s)| TaskSpec {
                samples_per_split,
                ..TaskSpec::new(g, seed).augmented(r, s)
            })
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn matrix(&self) -> Matrix {
        let data = self.points.iter().flat_map(|p| p.iter().copied()).collect();
        Matrix::from_vec(self.points.len(), 2, data).expect("two columns per point")
    }

    pub fn class_count(&self, class: usize) -> usize {
        self.labels.iter().filter(|&&l| l == class).count()
    }

    pub fn select(&self, idx: &[usize]) -> Split {
        Split {
            points: idx.iter().map(|&i| self.points[i]).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset2D {
    pub train: Split,
    pub test: Split,
}

fn class_point<R: Rng + ?Sized>(g: Generator, class: usize, rng: &mut R) -> [f64; 2] {
    let c = class as f64;
    match g {
        Generator::Spirals => {
            let theta = rng.random_range(0.0..3.0 * PI);
            let r = theta / PI;
            let a = theta + c * PI;
            [r * a.cos(), r * a.sin()]
        }
        Generator::Moons => {
            let t = rng.random_range(0.0..PI);
            if class == 0 {
                [t.cos(), t.sin()]
            } else {
                [1.0 - t.cos(), 0.5 - t.sin()]
            }
        }
        Generator::Circles => {
            let t = rng.random_range(0.0..2.0 * PI);
            let r = if class == 0 { 1.0 } else { 0.5 };
            [r * t.cos(), r * t.sin()]
        }
        Generator::Xor => {
            let x: f64 = rng.random_range(-1.0..1.0);
            let y: f64 = rng.random_range(-1.0..1.0);
            if xor_label(x, y) == class {
                [x, y]
            } else {
                [x, -y]
            }
        }
        Generator::Gauss => [2.0 * c - 1.0, 0.0],
    }
}

/// `1` when the coordinates lie in opposite-sign quadrants.
pub fn xor_label(x: f64, y: f64) -> usize {
    usize::from((x < 0.0) != (y < 0.0))
}

fn draw_split(spec: &TaskSpec, which: u64) -> Result<Split> {
    let mut rng = rng_from(spec.seed, &[label_key(spec.generator.as_str()), which]);
    let normal = Normal::new(0.0, spec.noise).map_err(|e| Error::Config(e.to_string()))?;
    let n = spec.samples_per_split;
    let mut pairs: Vec<([f64; 2], usize)> = (0..n)
        .map(|i| {
            let class = i % 2;
            let [x, y] = class_point(spec.generator, class, &mut rng);
            let (jx, jy) = if spec.noise > 0.0 {
                (normal.sample(&mut rng), normal.sample(&mut rng))
            } else {
                (0.0, 0.0)
            };
            ([x + jx, y + jy], class)
        })
        .collect();
    pairs.shuffle(&mut rng);
    let (points, labels) = pairs.into_iter().unzip();
    Ok(augment_split(
        &Split { points, labels },
        spec.rotation_deg,
        spec.x_scale,
    ))
}

/// Train and test splits drawn from independent streams, with the spec's
/// augmentation applied.
pub fn generate(spec: &TaskSpec) -> Result<Dataset2D> {
    spec.validate()?;
    Ok(Dataset2D {
        train: draw_split(spec, 0)?,
        test: draw_split(spec, 1)?,
    })
}

fn augment_split(split: &Split, rotation_deg: f64, x_scale: f64) -> Split {
    let (s, c) = rotation_deg.to_radians().sin_cos();
    Split {
        points: split
            .points
            .iter()
            .map(|&[x, y]| {
                let x = x * x_scale;
                [c * x - s * y, s * x + c * y]
            })
            .collect(),
        labels: split.labels.clone(),
    }
}

/// Maps each point `p` to `R(rotation)·diag(x_scale, 1)·p`.
pub fn augment(data: &Dataset2D, rotation_deg: f64, x_scale: f64) -> Dataset2D {
    Dataset2D {
        train: augment_split(&data.train, rotation_deg, x_scale),
        test: augment_split(&data.test, rotation_deg, x_scale),
    }
}

/// Keeps `per_class` seeded training points of each class; the test split is
/// untouched. Kept points stay in their original order.
pub fn subsample(data: &Dataset2D, per_class: usize, seed: u64) -> Result<Dataset2D> {
    let classes = data.train.labels.iter().max().map_or(0, |m| m + 1);
    let mut keep = Vec::with_capacity(per_class * classes);
    for class in 0..classes {
        let idx: Vec<usize> = (0..data.train.len())
            .filter(|&i| data.train.labels[i] == class)
            .collect();
        if idx.len() < per_class {
            return Err(Error::InvalidInput(format!(
                "class {class} has {} training points, {per_class} requested",
                idx.len()
            )));
        }
        let mut rng = rng_from(seed, &[label_key("subsample"), class as u64]);
        keep.extend(sample(&mut rng, idx.len(), per_class).into_iter().map(|j| idx[j]));
    }
    keep.sort_unstable();
    Ok(Dataset2D {
        train: data.train.select(&keep),
        test: data.test.clone(),
    })
}

/// Writes `x,y,label,split` rows.
pub fn write_csv(data: &Dataset2D, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("x,y,label,split\n");
    for (name, split) in [("train", &data.train), ("test", &data.test)] {
        for (p, l) in split.points.iter().zip(&split.labels) {
            out.push_str(&format!("{},{},{l},{name}\n", p[0], p[1]));
        }
    }
    let path = path.as_ref();
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}
