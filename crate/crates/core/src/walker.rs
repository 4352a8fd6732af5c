//! Random walks over a point cloud.
//!
//! A walk starts at a uniformly random point and repeatedly steps to one of
//! the unvisited members of the current point's k nearest neighbours. When
//! every neighbour has been visited the walk teleports to a uniformly random
//! unvisited point and carries on from there.
//!
//! Each walk draws from two streams: the navigation stream (origin and
//! teleport targets) and a step stream seeded from the first navigation draw
//! (neighbour choice, and the coin flip of the combined strategy). Keeping
//! them apart means strategies that differ only in how steps are chosen share
//! origins and teleports for the same seed.

use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::point_set::{Point3, PointCloud};
use crate::rng::{self, Domain, StreamRng};
use crate::spatial_index::KdTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Random,
    HighVariance,
    Combined,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::HighVariance => "high_variance",
            Strategy::Combined => "combined",
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Strategy::Random),
            "high_variance" => Ok(Strategy::HighVariance),
            "combined" => Ok(Strategy::Combined),
            _ => Err(Error::InvalidParam(format!("unknown walk strategy `{s}`"))),
        }
    }
}

/// Walk length either as a point count or as a fraction of the cloud size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WalkLength {
    Fixed(usize),
    Fraction(f64),
}

impl WalkLength {
    /// `Fraction(f)` resolves to `floor(f * n)` clamped to `[1, n]`.
    pub fn resolve(self, n: usize) -> usize {
        match self {
            WalkLength::Fixed(l) => l,
            WalkLength::Fraction(f) => ((f * n as f64).floor() as usize).clamp(1, n.max(1)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalkParams {
    pub length: usize,
    pub k: usize,
    pub strategy: Strategy,
    pub combined_variance_prob: f64,
    pub seed: u64,
}

impl WalkParams {
    pub fn new(length: usize, k: usize, seed: u64) -> Self {
        WalkParams {
            length,
            k,
            strategy: Strategy::Random,
            combined_variance_prob: 0.3,
            seed,
        }
    }

    pub fn with_strategy(mut self, strategy: Strategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.length == 0 {
            return Err(Error::InvalidParam("walk length must be >= 1".into()));
        }
        if self.k == 0 {
            return Err(Error::InvalidParam("k must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.combined_variance_prob) {
            return Err(Error::InvalidParam(format!(
                "combined_variance_prob {} outside [0, 1]",
                self.combined_variance_prob
            )));
        }
        Ok(())
    }
}

/// How walks are drawn for a model: length rule, neighbourhood, strategy and
/// walks per shape at inference.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkSetup {
    pub length: WalkLength,
    pub k: usize,
    pub strategy: Strategy,
    pub combined_variance_prob: f64,
    pub walks: usize,
}

impl Default for WalkSetup {
    fn default() -> Self {
        WalkSetup {
            length: WalkLength::Fraction(0.4),
            k: 20,
            strategy: Strategy::Random,
            combined_variance_prob: 0.3,
            walks: 48,
        }
    }
}

impl WalkSetup {
    /// Concrete parameters for a cloud of `n` points.
    pub fn params_for(&self, n: usize, seed: u64) -> WalkParams {
        WalkParams {
            length: self.length.resolve(n),
            k: self.k,
            strategy: self.strategy,
            combined_variance_prob: self.combined_variance_prob,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let WalkLength::Fraction(f) = self.length {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidParam(format!("walk fraction {f} outside (0, 1]")));
            }
        }
        self.params_for(1, 0).validate()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Walk {
    pub cloud_id: String,
    pub indices: Vec<usize>,
    /// Sorted positions `t > 0` where the walk restarted.
    pub teleports: Vec<usize>,
}

impl Walk {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn coords(&self, cloud: &PointCloud) -> Vec<Point3> {
        self.indices.iter().map(|&i| cloud.point(i)).collect()
    }

    /// Rebuilds a walk from bare indices, inferring teleports: a position is a
    /// teleport exactly when its point is not among the predecessor's k-NN
    /// (a teleport only happens once all of those are visited). Fails if the
    /// sequence repeats an index.
    pub fn from_indices(
        cloud_id: impl Into<String>,
        indices: Vec<usize>,
        tree: &KdTree,
        k: usize,
    ) -> Result<Walk> {
        let mut seen = vec![false; tree.len()];
        let mut teleports = Vec::new();
        let mut nn = Vec::with_capacity(k);
        for (t, &i) in indices.iter().enumerate() {
            if i >= tree.len() {
                return Err(Error::InvalidParam(format!("walk index {i} out of range")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidParam(format!("walk repeats index {i}")));
            }
            if t > 0 {
                tree.knn_into(indices[t - 1], k, &mut nn)?;
                if !nn.contains(&i) {
                    teleports.push(t);
                }
            }
        }
        Ok(Walk {
            cloud_id: cloud_id.into(),
            indices,
            teleports,
        })
    }
}

/// Running sums for the trace of the coordinate covariance of a point set.
#[derive(Debug, Clone, Default)]
struct Spread {
    sum: [f64; 3],
    sum_sq: f64,
    count: usize,
}

impl Spread {
    fn push(&mut self, p: Point3) {
        for (s, x) in self.sum.iter_mut().zip(p) {
            *s += x;
        }
        self.sum_sq += p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
        self.count += 1;
    }

    /// Population covariance trace of the current set plus `p`.
    fn trace_with(&self, p: Point3) -> f64 {
        let n = (self.count + 1) as f64;
        let s = [self.sum[0] + p[0], self.sum[1] + p[1], self.sum[2] + p[2]];
        let sq = self.sum_sq + p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
        sq / n - (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]) / (n * n)
    }

    fn best(&self, candidates: impl Iterator<Item = (usize, Point3)>) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for (index, p) in candidates {
            let v = self.trace_with(p);
            best = match best {
                Some((bv, bi)) if bv > v || (bv == v && bi < index) => Some((bv, bi)),
                _ => Some((v, index)),
            };
        }
        best.map(|(_, i)| i)
    }
}

/// Picks the candidate whose addition maximizes the covariance trace of the
/// walk points; ties go to the lower index.
pub fn high_variance_step(walk_points: &[Point3], candidates: &[(usize, Point3)]) -> Result<usize> {
    let mut spread = Spread::default();
    for &p in walk_points {
        spread.push(p);
    }
    spread
        .best(candidates.iter().copied())
        .ok_or(Error::EmptyInput("high_variance_step candidates"))
}

/// Removes visited points in O(1) while keeping uniform sampling of the rest.
struct Unvisited {
    pool: Vec<usize>,
    slot: Vec<usize>,
}

impl Unvisited {
    fn new(n: usize) -> Self {
        Unvisited {
            pool: (0..n).collect(),
            slot: (0..n).collect(),
        }
    }

    fn contains(&self, i: usize) -> bool {
        self.slot[i] != usize::MAX
    }

    fn remove(&mut self, i: usize) {
        let s = self.slot[i];
        let last = *self.pool.last().unwrap();
        self.pool.swap_remove(s);
        if last != i {
            self.slot[last] = s;
        }
        self.slot[i] = usize::MAX;
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        self.pool[rng.gen_range(0..self.pool.len())]
    }
}

pub fn generate_walk(
    cloud: &PointCloud,
    tree: &KdTree,
    params: &WalkParams,
    rng: &mut StreamRng,
) -> Result<Walk> {
    params.validate()?;
    let n = cloud.len();
    let l = params.length;
    if l > n {
        return Err(Error::WalkTooLong {
            cloud_id: cloud.id().to_string(),
            length: l,
            points: n,
        });
    }
    if tree.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "tree over {} points, cloud has {n}",
            tree.len()
        )));
    }
    if l > 1 && params.k + 1 > n {
        return Err(Error::TooManyNeighbors {
            k: params.k,
            points: n,
        });
    }

    let mut step_rng = StreamRng::seed_from_u64(rng.gen());
    let mut unvisited = Unvisited::new(n);
    let mut spread = Spread::default();
    let mut indices = Vec::with_capacity(l);
    let mut teleports = Vec::new();
    let mut nn = Vec::with_capacity(params.k);
    let mut open = Vec::with_capacity(params.k);

    let origin = rng.gen_range(0..n);
    unvisited.remove(origin);
    spread.push(cloud.point(origin));
    indices.push(origin);

    while indices.len() < l {
        let last = *indices.last().unwrap();
        tree.knn_into(last, params.k, &mut nn)?;
        open.clear();
        open.extend(nn.iter().copied().filter(|&i| unvisited.contains(i)));

        let next = if open.is_empty() {
            teleports.push(indices.len());
            unvisited.sample(rng)
        } else {
            let greedy = match params.strategy {
                Strategy::Random => false,
                Strategy::HighVariance => true,
                Strategy::Combined => step_rng.gen::<f64>() < params.combined_variance_prob,
            };
            if greedy {
                spread
                    .best(open.iter().map(|&i| (i, cloud.point(i))))
                    .expect("non-empty candidates")
            } else {
                open[step_rng.gen_range(0..open.len())]
            }
        };
        unvisited.remove(next);
        spread.push(cloud.point(next));
        indices.push(next);
    }

    Ok(Walk {
        cloud_id: cloud.id().to_string(),
        indices,
        teleports,
    })
}

/// `m` walks; walk `j` draws from the stream `(params.seed, j)`.
pub fn generate_walks(
    cloud: &PointCloud,
    tree: &KdTree,
    params: &WalkParams,
    m: usize,
) -> Result<Vec<Walk>> {
    (0..m)
        .map(|j| {
            let mut rng = rng::stream(params.seed, Domain::Walk, j as u64);
            generate_walk(cloud, tree, params, &mut rng)
        })
        .collect()
}

/// Writes `cloud_id idx0 idx1 ...`, one walk per line.
pub fn write_walks<W: Write>(mut out: W, walks: &[Walk]) -> std::io::Result<()> {
    for walk in walks {
        write!(out, "{}", walk.cloud_id)?;
        for i in &walk.indices {
            write!(out, " {i}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Reads lines written by [`write_walks`] as `(cloud_id, indices)` pairs.
pub fn read_walks<R: BufRead>(input: R) -> Result<Vec<(String, Vec<usize>)>> {
    let mut out = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<walks>", e))?;
        let mut fields = line.split_whitespace();
        let Some(id) = fields.next() else { continue };
        let indices = fields
            .map(|f| {
                f.parse::<usize>().map_err(|_| Error::Parse {
                    path: "<walks>".into(),
                    line: lineno + 1,
                    message: format!("bad index `{f}`"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push((id.to_string(), indices));
    }
    Ok(out)
}
