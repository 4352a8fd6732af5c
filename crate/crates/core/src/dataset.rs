//! Shapes ready for walking: normalized cloud, scale record, KD-tree, label.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::point_set::{self, LabeledDataset, PointCloud, ScaleInfo, ShapeKind};
use crate::spatial_index::KdTree;

#[derive(Debug, Clone)]
pub struct PreparedShape {
    pub cloud: PointCloud,
    pub scale: ScaleInfo,
    pub tree: KdTree,
    pub label: usize,
}

impl PreparedShape {
    /// Normalizes `raw` and indexes it.
    pub fn new(raw: &PointCloud, label: usize) -> Result<Self> {
        let (cloud, scale) = point_set::normalize(raw)?;
        let tree = KdTree::build(&cloud);
        Ok(PreparedShape {
            cloud: cloud.with_label(label),
            scale,
            tree,
            label,
        })
    }

    pub fn id(&self) -> &str {
        self.cloud.id()
    }
}

/// Loads, normalizes and indexes every entry of a manifest, in manifest order.
pub fn prepare(dataset: &LabeledDataset) -> Result<Vec<PreparedShape>> {
    dataset
        .entries
        .par_iter()
        .map(|entry| {
            let raw = point_set::load_xyz(&entry.path)?;
            PreparedShape::new(&raw, entry.label).map_err(|e| match e {
                Error::DegenerateCloud => Error::Manifest(format!(
                    "{}: degenerate cloud (all points identical)",
                    entry.path.display()
                )),
                other => other,
            })
        })
        .collect()
}

/// Synthetic set of `per_class` shapes of every [`ShapeKind`], labelled by
/// kind order. Shape `i` of a kind is sampled with seed `first_seed + i`.
pub fn synth_set(per_class: usize, points: usize, first_seed: u64) -> Result<Vec<PreparedShape>> {
    let jobs: Vec<(usize, ShapeKind, u64)> = ShapeKind::ALL
        .iter()
        .enumerate()
        .flat_map(|(label, &kind)| (0..per_class as u64).map(move |i| (label, kind, first_seed + i)))
        .collect();
    jobs.par_iter()
        .map(|&(label, kind, seed)| PreparedShape::new(&point_set::synth_shape(kind, points, seed)?, label))
        .collect()
}

/// `count` shapes with Gaussian noise of deviation `sigma` added before
/// normalization, cycling through the kinds. Ids end in `_noisy`.
pub fn synth_noisy_set(count: usize, points: usize, first_seed: u64, sigma: f64) -> Result<Vec<PreparedShape>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let label = i % ShapeKind::ALL.len();
            let seed = first_seed + i as u64;
            let clean = point_set::synth_shape(ShapeKind::ALL[label], points, seed)?;
            let noisy = point_set::perturb(&clean, sigma, seed)?;
            let renamed = PointCloud::new(format!("{}_noisy", clean.id()), noisy.points().to_vec())?;
            PreparedShape::new(&renamed, label)
        })
        .collect()
}
