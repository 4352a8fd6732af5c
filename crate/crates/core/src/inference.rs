//! Multi-walk prediction, aggregation and descriptor retrieval.

use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;

use crate::dataset::PreparedShape;
use crate::error::{Error, Result};
use crate::neural::{self, ModelParams};
use crate::point_set::{PointCloud, ScaleInfo};
use crate::rng::{self, Domain};
use crate::trainer::argmax;
use crate::walker::{self, Walk, WalkParams, WalkSetup};

/// How per-walk probability vectors become one shape class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    /// Mode of the per-walk argmaxes. Ties go to the highest summed
    /// probability among the tied classes, then to the lowest index.
    Majority,
    /// Argmax of the elementwise mean.
    Mean,
    /// Argmax of the elementwise maximum.
    Max,
}

impl Aggregation {
    pub const ALL: [Aggregation; 3] = [Aggregation::Majority, Aggregation::Mean, Aggregation::Max];

    pub fn name(self) -> &'static str {
        match self {
            Aggregation::Majority => "majority",
            Aggregation::Mean => "mean",
            Aggregation::Max => "max",
        }
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "majority" => Ok(Aggregation::Majority),
            "mean" => Ok(Aggregation::Mean),
            "max" => Ok(Aggregation::Max),
            _ => Err(Error::InvalidParam(format!("unknown aggregation `{s}`"))),
        }
    }
}

/// Class probabilities of one walk.
pub fn predict_walk(
    params: &ModelParams,
    walk: &Walk,
    cloud: &PointCloud,
    scale: &ScaleInfo,
) -> Result<Vec<f64>> {
    if let Some(&i) = walk.indices.iter().find(|&&i| i >= cloud.len()) {
        return Err(Error::InvalidParam(format!(
            "walk index {i} out of range for cloud `{}`",
            cloud.id()
        )));
    }
    let bbox = params.config.use_bbox.then_some(scale.bbox_diagonal);
    Ok(neural::forward(params, &walk.coords(cloud), bbox)?.probs)
}

fn check_width(preds: &[Vec<f64>]) -> Result<usize> {
    let width = preds.first().ok_or(Error::EmptyInput("walk predictions"))?.len();
    if width == 0 || preds.iter().any(|p| p.len() != width) {
        return Err(Error::ShapeMismatch("walk predictions differ in width".into()));
    }
    Ok(width)
}

fn mean_vector(preds: &[Vec<f64>], width: usize) -> Vec<f64> {
    let mut mean = vec![0.0; width];
    for p in preds {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    let inv = 1.0 / preds.len() as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    mean
}

pub fn aggregate(preds: &[Vec<f64>], method: Aggregation) -> Result<usize> {
    let width = check_width(preds)?;
    Ok(match method {
        Aggregation::Mean => argmax(&mean_vector(preds, width)),
        Aggregation::Max => {
            let mut max = vec![f64::NEG_INFINITY; width];
            for p in preds {
                for (m, &v) in max.iter_mut().zip(p) {
                    *m = m.max(v);
                }
            }
            argmax(&max)
        }
        Aggregation::Majority => {
            let mut votes = vec![0usize; width];
            let mut mass = vec![0.0; width];
            for p in preds {
                votes[argmax(p)] += 1;
                for (s, v) in mass.iter_mut().zip(p) {
                    *s += v;
                }
            }
            let mut best = 0;
            for c in 1..width {
                if (votes[c], mass[c]) > (votes[best], mass[best]) {
                    best = c;
                }
            }
            best
        }
    })
}

/// Prediction for one shape: per-walk vectors, their argmaxes, the
/// aggregated class and the mean vector used as a retrieval descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapePrediction {
    pub cloud_id: String,
    pub probs: Vec<Vec<f64>>,
    pub argmaxes: Vec<usize>,
    pub class: usize,
    pub descriptor: Vec<f64>,
}

impl ShapePrediction {
    pub fn from_walks(cloud_id: impl Into<String>, probs: Vec<Vec<f64>>, method: Aggregation) -> Result<Self> {
        let width = check_width(&probs)?;
        let class = aggregate(&probs, method)?;
        Ok(ShapePrediction {
            cloud_id: cloud_id.into(),
            argmaxes: probs.iter().map(|p| argmax(p)).collect(),
            descriptor: mean_vector(&probs, width),
            probs,
            class,
        })
    }

    /// Re-aggregates the cached walk predictions.
    pub fn aggregate(&self, method: Aggregation) -> usize {
        aggregate(&self.probs, method).expect("validated on construction")
    }

    /// The same prediction restricted to the first `m` walks.
    pub fn truncated(&self, m: usize, method: Aggregation) -> Result<Self> {
        if m == 0 || m > self.probs.len() {
            return Err(Error::InvalidParam(format!(
                "cannot keep {m} of {} walks",
                self.probs.len()
            )));
        }
        ShapePrediction::from_walks(self.cloud_id.clone(), self.probs[..m].to_vec(), method)
    }
}

/// Draws `m` walks (walk `j` from stream `(walk_params.seed, j)`, as in
/// [`walker::generate_walks`]), predicts them in parallel and aggregates.
pub fn classify_shape(
    params: &ModelParams,
    shape: &PreparedShape,
    m: usize,
    walk_params: &WalkParams,
    method: Aggregation,
) -> Result<ShapePrediction> {
    if m == 0 {
        return Err(Error::InvalidParam("need at least one walk per shape".into()));
    }
    let probs = (0..m as u64)
        .into_par_iter()
        .map(|j| {
            let mut rng = rng::stream(walk_params.seed, Domain::Walk, j);
            let walk = walker::generate_walk(&shape.cloud, &shape.tree, walk_params, &mut rng)?;
            predict_walk(params, &walk, &shape.cloud, &shape.scale)
        })
        .collect::<Result<Vec<_>>>()?;
    ShapePrediction::from_walks(shape.id(), probs, method)
}

/// Classifies every shape; shape `i` walks with seed `derive(seed, i)`, so a
/// shape's prediction does not depend on the rest of the set.
pub fn classify_all(
    params: &ModelParams,
    shapes: &[PreparedShape],
    setup: &WalkSetup,
    seed: u64,
    method: Aggregation,
) -> Result<Vec<ShapePrediction>> {
    setup.validate()?;
    shapes
        .par_iter()
        .enumerate()
        .map(|(i, shape)| {
            let shape_seed = rng::derive_seed(seed, Domain::EvalShape, i as u64);
            let wp = setup.params_for(shape.cloud.len(), shape_seed);
            classify_shape(params, shape, setup.walks, &wp, method)
        })
        .collect()
}

/// Writes `cloud_id,final_class,walk_id,argmax,p_0,...`, one row per walk.
pub fn write_predictions<W: Write>(mut out: W, preds: &[ShapePrediction]) -> std::io::Result<()> {
    let classes = preds.first().map_or(0, |p| p.descriptor.len());
    write!(out, "cloud_id,final_class,walk_id,argmax")?;
    for c in 0..classes {
        write!(out, ",p_{c}")?;
    }
    writeln!(out)?;
    for p in preds {
        for (j, (probs, am)) in p.probs.iter().zip(&p.argmaxes).enumerate() {
            write!(out, "{},{},{},{}", p.cloud_id, p.class, j, am)?;
            for v in probs {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GalleryItem {
    pub id: String,
    pub descriptor: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranked {
    /// Position in the gallery slice.
    pub index: usize,
    pub id: String,
    pub distance: f64,
}

/// Gallery ordered by Euclidean distance to `query`, ties by id, cut to
/// `top_k`.
pub fn retrieve(query: &[f64], gallery: &[GalleryItem], top_k: usize) -> Result<Vec<Ranked>> {
    let mut ranked = gallery
        .iter()
        .enumerate()
        .map(|(index, item)| {
            if item.descriptor.len() != query.len() {
                return Err(Error::ShapeMismatch(format!(
                    "descriptor of `{}` has width {}, query has {}",
                    item.id,
                    item.descriptor.len(),
                    query.len()
                )));
            }
            let d2: f64 = item.descriptor.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
            Ok(Ranked { index, id: item.id.clone(), distance: d2.sqrt() })
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| a.distance.total_cmp(&b.distance).then_with(|| a.id.cmp(&b.id)));
    ranked.truncate(top_k);
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::ModelConfig;
    use crate::point_set::{synth_shape, ShapeKind};

    fn tiny() -> ModelConfig {
        ModelConfig { mlp_widths: [4, 6, 8], hidden: 8, classes: 3, use_bbox: true, norm_affine: true }
    }

    fn shape() -> PreparedShape {
        PreparedShape::new(&synth_shape(ShapeKind::Torus, 64, 3).unwrap(), 1).unwrap()
    }

    #[test]
    fn zero_model_predicts_uniform() {
        let p = ModelParams::zeros(&tiny()).unwrap();
        let s = shape();
        let walk = walker::generate_walk(&s.cloud, &s.tree, &WalkParams::new(10, 4, 0), &mut rng::stream(0, Domain::Walk, 0)).unwrap();
        let probs = predict_walk(&p, &walk, &s.cloud, &s.scale).unwrap();
        assert!(probs.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        let again = predict_walk(&p, &walk, &s.cloud, &s.scale).unwrap();
        assert_eq!(probs, again);
    }

    #[test]
    fn aggregation_examples() {
        let v = |a: &[f64]| a.to_vec();
        let one_hot = |c: usize| {
            let mut p = vec![0.0; 6];
            p[c] = 1.0;
            p
        };
        assert_eq!(aggregate(&[one_hot(2), one_hot(2), one_hot(5)], Aggregation::Majority).unwrap(), 2);
        let tie = [v(&[0.9, 0.1]), v(&[0.2, 0.8])];
        assert_eq!(aggregate(&tie, Aggregation::Majority).unwrap(), 0);
        let mean = [v(&[0.6, 0.4]), v(&[0.2, 0.8])];
        assert_eq!(aggregate(&mean, Aggregation::Mean).unwrap(), 1);
        assert_eq!(aggregate(&mean, Aggregation::Max).unwrap(), 1);
        // equal votes and equal mass fall back to the lowest index
        let flat = [v(&[0.5, 0.5]), v(&[0.5, 0.5])];
        assert_eq!(aggregate(&flat, Aggregation::Majority).unwrap(), 0);
        assert!(matches!(aggregate(&[], Aggregation::Mean), Err(Error::EmptyInput(_))));
        assert!(aggregate(&[v(&[1.0]), v(&[0.5, 0.5])], Aggregation::Max).is_err());
    }

    #[test]
    fn single_walk_shape_uses_its_argmax() {
        let p = vec![vec![0.2, 0.5, 0.3]];
        for method in Aggregation::ALL {
            let pred = ShapePrediction::from_walks("s", p.clone(), method).unwrap();
            assert_eq!(pred.class, 1);
            assert_eq!(pred.descriptor, p[0]);
        }
    }

    #[test]
    fn identical_walks_give_that_vector_as_descriptor() {
        let params = ModelParams::init(&tiny(), 4).unwrap();
        let s = shape();
        // l = n leaves no randomness in the set of visited points, but the
        // order still depends on the stream; reuse one walk explicitly
        let walk = walker::generate_walk(&s.cloud, &s.tree, &WalkParams::new(64, 4, 0), &mut rng::stream(0, Domain::Walk, 0)).unwrap();
        let probs = predict_walk(&params, &walk, &s.cloud, &s.scale).unwrap();
        let pred = ShapePrediction::from_walks("s", vec![probs.clone(); 5], Aggregation::Majority).unwrap();
        for (a, b) in pred.descriptor.iter().zip(&probs) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn classify_shape_matches_generate_walks() {
        let params = ModelParams::init(&tiny(), 4).unwrap();
        let s = shape();
        let wp = WalkParams::new(20, 5, 17);
        let pred = classify_shape(&params, &s, 4, &wp, Aggregation::Mean).unwrap();
        let walks = walker::generate_walks(&s.cloud, &s.tree, &wp, 4).unwrap();
        for (w, p) in walks.iter().zip(&pred.probs) {
            assert_eq!(&predict_walk(&params, w, &s.cloud, &s.scale).unwrap(), p);
        }
        let sum: f64 = pred.descriptor.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(classify_shape(&params, &s, 0, &wp, Aggregation::Mean).is_err());
        assert!(classify_shape(&params, &s, 2, &WalkParams::new(65, 5, 0), Aggregation::Mean).is_err());
    }

    #[test]
    fn retrieval_example() {
        let item = |id: &str, d: &[f64]| GalleryItem { id: id.into(), descriptor: d.to_vec(), label: 0 };
        let gallery = [item("a", &[1.0, 0.0]), item("b", &[0.0, 1.0]), item("c", &[0.6, 0.4])];
        let ranked = retrieve(&[1.0, 0.0], &gallery, 3).unwrap();
        let ids: Vec<_> = ranked.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["a", "c", "b"]);
        assert_eq!(ranked[0].distance, 0.0);
        assert!((ranked[1].distance - 0.32f64.sqrt()).abs() < 1e-15);
        assert!(retrieve(&[1.0, 0.0], &gallery, 0).unwrap().is_empty());
        assert!(retrieve(&[1.0], &gallery, 1).is_err());
    }

    #[test]
    fn prediction_csv_layout() {
        let pred = ShapePrediction::from_walks("s0", vec![vec![0.25, 0.75], vec![1.0, 0.0]], Aggregation::Mean).unwrap();
        let mut buf = Vec::new();
        write_predictions(&mut buf, &[pred]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "cloud_id,final_class,walk_id,argmax,p_0,p_1\ns0,0,0,1,0.25,0.75\ns0,0,1,0,1,0\n"
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn prob_vectors() -> impl proptest::strategy::Strategy<Value = Vec<Vec<f64>>> {
            (2usize..6).prop_flat_map(|c| {
                prop::collection::vec(prop::collection::vec(0.01f64..1.0, c), 1..8).prop_map(|raw| {
                    raw.into_iter()
                        .map(|v| {
                            let s: f64 = v.iter().sum();
                            v.into_iter().map(|x| x / s).collect()
                        })
                        .collect()
                })
            })
        }

        proptest! {
            #[test]
            fn aggregation_is_permutation_invariant(preds in prob_vectors(), seed in any::<u64>()) {
                use rand::seq::SliceRandom;
                let mut shuffled = preds.clone();
                shuffled.shuffle(&mut rng::stream(seed, Domain::Walk, 0));
                for method in Aggregation::ALL {
                    prop_assert_eq!(aggregate(&preds, method).unwrap(), aggregate(&shuffled, method).unwrap());
                }
                prop_assert_eq!(aggregate(&preds[..1], Aggregation::Majority).unwrap(), argmax(&preds[0]));
            }

            #[test]
            fn logit_shift_leaves_prediction_unchanged(
                logits in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..6),
                shift in -100.0f64..100.0,
            ) {
                let probs: Vec<_> = logits.iter().map(|l| neural::softmax(l)).collect();
                let shifted: Vec<_> = logits
                    .iter()
                    .map(|l| neural::softmax(&l.iter().map(|x| x + shift).collect::<Vec<_>>()))
                    .collect();
                for method in Aggregation::ALL {
                    prop_assert_eq!(aggregate(&probs, method).unwrap(), aggregate(&shifted, method).unwrap());
                }
            }

            #[test]
            fn retrieval_is_a_sorted_permutation(
                descs in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 3), 0..12),
                query in prop::collection::vec(0.0f64..1.0, 3),
                top_k in 0usize..15,
            ) {
                let gallery: Vec<_> = descs
                    .iter()
                    .enumerate()
                    .map(|(i, d)| GalleryItem { id: format!("g{i:02}"), descriptor: d.clone(), label: 0 })
                    .collect();
                let ranked = retrieve(&query, &gallery, top_k).unwrap();
                prop_assert_eq!(ranked.len(), top_k.min(gallery.len()));
                let full = retrieve(&query, &gallery, gallery.len()).unwrap();
                let mut idx: Vec<_> = full.iter().map(|r| r.index).collect();
                idx.sort_unstable();
                prop_assert_eq!(idx, (0..gallery.len()).collect::<Vec<_>>());
                for w in full.windows(2) {
                    prop_assert!((w[0].distance, &w[0].id) <= (w[1].distance, &w[1].id));
                }
                prop_assert_eq!(&full[..ranked.len()], &ranked[..]);
            }
        }
    }
}
