//! Central finite-difference check of the analytic gradients.

use rand::Rng;

use crate::error::Result;
use crate::neural::{self, ModelConfig, ModelParams};
use crate::point_set::Point3;
use crate::rng::{self, Domain};

pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared absolutely rather than relatively.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckResult {
    pub max_rel_error: f64,
    pub tensor: String,
    pub index: usize,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares every parameter's analytic gradient with the central difference
/// `(L(θ+h) − L(θ−h)) / 2h` of the forward loss.
pub fn check_gradients(
    params: &ModelParams,
    coords: &[Point3],
    bbox: Option<f64>,
    target: usize,
) -> Result<GradcheckResult> {
    let fwd = neural::forward(params, coords, bbox)?;
    let (_, grad) = neural::backward(params, &fwd, target)?;
    let names = ModelParams::tensor_names();
    let mut probe = params.clone();
    let mut worst = GradcheckResult {
        max_rel_error: 0.0,
        tensor: String::new(),
        index: 0,
        checked: 0,
    };
    for (ti, g) in grad.tensors().into_iter().enumerate() {
        for i in 0..g.len() {
            let orig = probe.tensors()[ti].data()[i];
            probe.tensors_mut()[ti].data_mut()[i] = orig + FD_STEP;
            let up = neural::walk_loss(&probe, coords, bbox, target)?;
            probe.tensors_mut()[ti].data_mut()[i] = orig - FD_STEP;
            let down = neural::walk_loss(&probe, coords, bbox, target)?;
            probe.tensors_mut()[ti].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let err = relative_error(g.data()[i], numeric);
            worst.checked += 1;
            if err > worst.max_rel_error {
                worst.max_rel_error = err;
                worst.tensor = names[ti].clone();
                worst.index = i;
            }
        }
    }
    Ok(worst)
}

/// A seeded tiny model (d₃ = 8, h = 8, C = 3) with non-trivial biases and
/// norm affine parameters, a random 5-point walk and a random target.
pub fn tiny_case(seed: u64) -> Result<(ModelParams, Vec<Point3>, Option<f64>, usize)> {
    let mut rng = rng::stream(seed, Domain::Gradcheck, 0);
    let config = ModelConfig {
        mlp_widths: [4, 6, 8],
        hidden: 8,
        classes: 3,
        use_bbox: seed % 2 == 1,
        norm_affine: true,
    };
    let mut params = ModelParams::init(&config, seed)?;
    for layer in &mut params.point {
        for v in layer.bias.data_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
        for v in layer.gamma.data_mut() {
            *v = rng.gen_range(0.5..1.5);
        }
        for v in layer.beta.data_mut() {
            *v = rng.gen_range(-0.3..0.5);
        }
    }
    for layer in &mut params.gru {
        for v in layer.bias.data_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
    for v in params.head.bias.data_mut() {
        *v = rng.gen_range(-0.5..0.5);
    }
    let coords = (0..5)
        .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
        .collect();
    let bbox = config.use_bbox.then(|| rng.gen_range(0.5..3.0));
    let target = rng.gen_range(0..config.classes);
    Ok((params, coords, bbox, target))
}

/// Runs [`check_gradients`] over `cases` seeded tiny models.
pub fn run_suite(root_seed: u64, cases: usize) -> Result<Vec<GradcheckResult>> {
    (0..cases as u64)
        .map(|i| {
            let (params, coords, bbox, target) = tiny_case(rng::derive_seed(root_seed, Domain::Gradcheck, i))?;
            check_gradients(&params, &coords, bbox, target)
        })
        .collect()
}
