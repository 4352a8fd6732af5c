//! Point-cloud data model, XYZ/manifest ingestion, normalization and
//! synthetic primitives.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

pub type Point3 = [f64; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    id: String,
    points: Vec<Point3>,
    label: Option<usize>,
}

impl PointCloud {
    /// Fails on an empty point list or any non-finite coordinate.
    pub fn new(id: impl Into<String>, points: Vec<Point3>) -> Result<Self> {
        let id = id.into();
        if points.is_empty() {
            return Err(Error::EmptyCloud(id));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::InvalidParam(format!(
                "cloud `{id}`: point {i} has a non-finite coordinate"
            )));
        }
        Ok(PointCloud {
            id,
            points,
            label: None,
        })
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn point(&self, index: usize) -> Point3 {
        self.points[index]
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }
}

/// What normalization removed from a cloud.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleInfo {
    pub centroid: Point3,
    /// Axis-aligned bounding-box diagonal of the original points.
    pub bbox_diagonal: f64,
    /// Largest centered point norm; normalized = (p - centroid) / scale_factor.
    pub scale_factor: f64,
}

pub fn load_xyz(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_xyz(&id, &text).map_err(|e| match e {
        Error::Parse { line, message, .. } => Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        },
        other => other,
    })
}

/// Parses XYZ text: one `x y z` triple per line, `#` comments and blank lines
/// skipped. Parse errors carry an empty path; [`load_xyz`] fills it in.
pub fn parse_xyz(id: &str, text: &str) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: PathBuf::new(),
            line: lineno + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(err(format!("expected 3 values, found {}", fields.len())));
        }
        let mut p = [0.0; 3];
        for (slot, field) in p.iter_mut().zip(&fields) {
            let v: f64 = field
                .parse()
                .map_err(|_| err(format!("not a number: `{field}`")))?;
            if !v.is_finite() {
                return Err(err(format!("non-finite value `{field}`")));
            }
            *slot = v;
        }
        points.push(p);
    }
    PointCloud::new(id, points)
}

/// Writes a cloud in the XYZ format using shortest round-trip float text.
pub fn write_xyz(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(cloud.len() * 48);
    for p in cloud.points() {
        out.push_str(&format!("{} {} {}\n", p[0], p[1], p[2]));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Centers on the centroid and scales to unit maximum norm.
pub fn normalize(cloud: &PointCloud) -> Result<(PointCloud, ScaleInfo)> {
    let n = cloud.len() as f64;
    let mut centroid = [0.0; 3];
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in cloud.points() {
        for a in 0..3 {
            centroid[a] += p[a];
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    for c in &mut centroid {
        *c /= n;
    }
    let bbox_diagonal = (0..3).map(|a| (hi[a] - lo[a]).powi(2)).sum::<f64>().sqrt();

    let centered: Vec<Point3> = cloud
        .points()
        .iter()
        .map(|p| [p[0] - centroid[0], p[1] - centroid[1], p[2] - centroid[2]])
        .collect();
    let scale_factor = centered.iter().map(|p| norm(*p)).fold(0.0, f64::max);
    if scale_factor == 0.0 {
        return Err(Error::DegenerateCloud);
    }
    let points = centered
        .into_iter()
        .map(|p| [p[0] / scale_factor, p[1] / scale_factor, p[2] / scale_factor])
        .collect();
    let normalized = PointCloud {
        id: cloud.id.clone(),
        points,
        label: cloud.label,
    };
    Ok((
        normalized,
        ScaleInfo {
            centroid,
            bbox_diagonal,
            scale_factor,
        },
    ))
}

fn norm(p: Point3) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Sphere,
    Cube,
    Cylinder,
    Torus,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [
        ShapeKind::Sphere,
        ShapeKind::Cube,
        ShapeKind::Cylinder,
        ShapeKind::Torus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Cube => "cube",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::Torus => "torus",
        }
    }
}

impl std::str::FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownShape(s.to_string()))
    }
}

const TORUS_MAJOR: f64 = 0.7;
const TORUS_MINOR: f64 = 0.3;

/// Samples `n` points uniformly (by area) on a unit-scale primitive:
/// unit sphere, the cube `[-1,1]^3`, a radius-1 cylinder with caps spanning
/// `z ∈ [-1,1]`, and a torus with radii 0.7/0.3.
pub fn synth_shape(kind: ShapeKind, n: usize, seed: u64) -> Result<PointCloud> {
    if n < 8 {
        return Err(Error::InvalidParam(format!("synth_shape needs n >= 8, got {n}")));
    }
    let mut rng = rng::stream(seed, Domain::Synth, kind as u64);
    let two_pi = std::f64::consts::TAU;
    let points = (0..n)
        .map(|_| match kind {
            ShapeKind::Sphere => {
                let z: f64 = rng.gen_range(-1.0..=1.0);
                let phi = rng.gen_range(0.0..two_pi);
                let r = (1.0 - z * z).max(0.0).sqrt();
                [r * phi.cos(), r * phi.sin(), z]
            }
            ShapeKind::Cube => {
                let face = rng.gen_range(0..6usize);
                let axis = face / 2;
                let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
                let mut p = [sign; 3];
                for (a, c) in p.iter_mut().enumerate() {
                    if a != axis {
                        *c = rng.gen_range(-1.0..=1.0);
                    }
                }
                p
            }
            ShapeKind::Cylinder => {
                // side area 4π, caps 2π
                let phi = rng.gen_range(0.0..two_pi);
                if rng.gen_range(0.0..3.0) < 2.0 {
                    [phi.cos(), phi.sin(), rng.gen_range(-1.0..=1.0)]
                } else {
                    let r = rng.gen::<f64>().sqrt();
                    let z = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                    [r * phi.cos(), r * phi.sin(), z]
                }
            }
            ShapeKind::Torus => loop {
                let theta = rng.gen_range(0.0..two_pi);
                let accept = (TORUS_MAJOR + TORUS_MINOR * theta.cos()) / (TORUS_MAJOR + TORUS_MINOR);
                let u: f64 = rng.gen();
                if u <= accept {
                    let phi = rng.gen_range(0.0..two_pi);
                    let ring = TORUS_MAJOR + TORUS_MINOR * theta.cos();
                    break [ring * phi.cos(), ring * phi.sin(), TORUS_MINOR * theta.sin()];
                }
            },
        })
        .collect();
    PointCloud::new(format!("{}_{seed}", kind.name()), points)
}

/// Adds isotropic Gaussian noise of standard deviation `sigma` to every point.
pub fn perturb(cloud: &PointCloud, sigma: f64, seed: u64) -> Result<PointCloud> {
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| Error::InvalidParam(format!("noise sigma {sigma}: {e}")))?;
    let mut rng = rng::stream(seed, Domain::Synth, 0xA0A0);
    let points = cloud
        .points()
        .iter()
        .map(|p| {
            [
                p[0] + normal.sample(&mut rng),
                p[1] + normal.sample(&mut rng),
                p[2] + normal.sample(&mut rng),
            ]
        })
        .collect();
    let mut out = PointCloud::new(cloud.id.clone(), points)?;
    out.label = cloud.label;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    pub id: String,
    pub path: PathBuf,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub entries: Vec<DatasetEntry>,
    pub class_names: Vec<String>,
}

impl LabeledDataset {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Re-indexes labels against an existing class list (e.g. a test split
    /// read against the training split's classes).
    pub fn with_class_names(mut self, class_names: &[String]) -> Result<Self> {
        let index: HashMap<&str, usize> = class_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        for entry in &mut self.entries {
            let name = &self.class_names[entry.label];
            entry.label = *index
                .get(name.as_str())
                .ok_or_else(|| Error::Manifest(format!("label `{name}` not in class list")))?;
        }
        self.class_names = class_names.to_vec();
        Ok(self)
    }
}

/// Reads a `path,label` CSV. Relative paths resolve against the manifest's
/// directory; class indices follow first appearance.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new(""));
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Manifest(e.to_string()))?
        .clone();
    if headers.len() != 2 || &headers[0] != "path" || &headers[1] != "label" {
        return Err(Error::Manifest(format!(
            "{}: header must be `path,label`",
            path.display()
        )));
    }

    let mut class_names: Vec<String> = Vec::new();
    let mut class_index: HashMap<String, usize> = HashMap::new();
    let mut seen: HashSet<PathBuf> = HashSet::new();
    let mut entries = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: row + 2,
            message: e.to_string(),
        })?;
        let file = base.join(&record[0]);
        if !file.is_file() {
            return Err(Error::MissingFile(file));
        }
        if !seen.insert(file.clone()) {
            return Err(Error::DuplicatePath(file));
        }
        let name = record[1].to_string();
        let next = class_names.len();
        let label = *class_index.entry(name.clone()).or_insert_with(|| {
            class_names.push(name);
            next
        });
        let id = file
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        entries.push(DatasetEntry {
            id,
            path: file,
            label,
        });
    }
    Ok(LabeledDataset {
        entries,
        class_names,
    })
}
