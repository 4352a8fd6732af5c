//! Forward and reverse passes of the walk classifier:
//! per-point MLP with instance norm, three stacked GRUs, linear head.

use crate::error::{Error, Result};
use crate::neural::linalg::{axpy, dot, gemm_nn, gemm_nt, gemm_tn_acc};
use crate::neural::params::{GruLayer, ModelParams, PointLayer};
use crate::neural::Tensor;
use crate::point_set::Point3;

pub const NORM_EPS: f64 = 1e-5;
pub const PROB_FLOOR: f64 = 1e-12;

pub(crate) struct PointCache {
    pub(crate) xhat: Vec<f64>,
    inv_std: Vec<f64>,
    /// post-ReLU output, l × out
    pub(crate) out: Vec<f64>,
}

struct GruCache {
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    h_prev: Vec<f64>,
    rh: Vec<f64>,
    /// hidden states, l × h
    h: Vec<f64>,
}

/// Everything a reverse pass needs from one walk's forward pass.
pub struct Forward {
    len: usize,
    coords: Vec<f64>,
    point: Vec<PointCache>,
    features: Vec<f64>,
    gru: Vec<GruCache>,
    head_input: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Forward {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Last hidden state of the top GRU layer.
    pub fn representation(&self) -> &[f64] {
        let h = &self.gru[2];
        let width = h.h.len() / self.len;
        &h.h[(self.len - 1) * width..]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }
}

fn flatten(coords: &[Point3]) -> Result<Vec<f64>> {
    if coords.is_empty() {
        return Err(Error::ShapeMismatch("walk has no points".into()));
    }
    let mut out = Vec::with_capacity(coords.len() * 3);
    for p in coords {
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite walk coordinate".into()));
        }
        out.extend_from_slice(p);
    }
    Ok(out)
}

pub(crate) fn point_layer_forward(layer: &PointLayer, input: &[f64], len: usize) -> PointCache {
    let (out_w, in_w) = (layer.weight.shape()[0], layer.weight.shape()[1]);
    let mut y = vec![0.0; len * out_w];
    gemm_nt(len, in_w, out_w, input, layer.weight.data(), 0.0, &mut y);
    let bias = layer.bias.data();
    for row in y.chunks_exact_mut(out_w) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }

    // Deviations are taken against the first row so a constant channel
    // normalizes to exactly zero.
    let first = y[..out_w].to_vec();
    let mut mean = vec![0.0; out_w];
    for row in y.chunks_exact_mut(out_w) {
        for c in 0..out_w {
            row[c] -= first[c];
            mean[c] += row[c];
        }
    }
    let inv_len = 1.0 / len as f64;
    for m in &mut mean {
        *m *= inv_len;
    }
    let mut var = vec![0.0; out_w];
    for row in y.chunks_exact_mut(out_w) {
        for c in 0..out_w {
            row[c] -= mean[c];
            var[c] += row[c] * row[c];
        }
    }
    let inv_std: Vec<f64> = var
        .iter()
        .map(|v| 1.0 / (v * inv_len + NORM_EPS).sqrt())
        .collect();

    let (gamma, beta) = (layer.gamma.data(), layer.beta.data());
    let mut out = vec![0.0; len * out_w];
    for (row, orow) in y.chunks_exact_mut(out_w).zip(out.chunks_exact_mut(out_w)) {
        for c in 0..out_w {
            row[c] *= inv_std[c];
            orow[c] = (gamma[c] * row[c] + beta[c]).max(0.0);
        }
    }
    PointCache {
        xhat: y,
        inv_std,
        out,
    }
}

/// Returns dX and accumulates parameter gradients.
fn point_layer_backward(
    layer: &PointLayer,
    cache: &PointCache,
    input: &[f64],
    len: usize,
    d_out: &[f64],
    grad: &mut PointLayer,
) -> Vec<f64> {
    let (out_w, in_w) = (layer.weight.shape()[0], layer.weight.shape()[1]);
    let gamma = layer.gamma.data();
    let mut dxhat = vec![0.0; len * out_w];
    let mut sum_d = vec![0.0; out_w];
    let mut sum_dx = vec![0.0; out_w];
    let mut dgamma = vec![0.0; out_w];
    let mut dbeta = vec![0.0; out_w];
    for t in 0..len {
        let base = t * out_w;
        for c in 0..out_w {
            let i = base + c;
            let d = if cache.out[i] > 0.0 { d_out[i] } else { 0.0 };
            let xh = cache.xhat[i];
            dgamma[c] += d * xh;
            dbeta[c] += d;
            let g = d * gamma[c];
            dxhat[i] = g;
            sum_d[c] += g;
            sum_dx[c] += g * xh;
        }
    }
    for (a, b) in grad.gamma.data_mut().iter_mut().zip(&dgamma) {
        *a += b;
    }
    for (a, b) in grad.beta.data_mut().iter_mut().zip(&dbeta) {
        *a += b;
    }

    let inv_len = 1.0 / len as f64;
    let mut dy = dxhat;
    let mut dbias = vec![0.0; out_w];
    for t in 0..len {
        let base = t * out_w;
        for c in 0..out_w {
            let i = base + c;
            let v = cache.inv_std[c]
                * (dy[i] - sum_d[c] * inv_len - cache.xhat[i] * sum_dx[c] * inv_len);
            dy[i] = v;
            dbias[c] += v;
        }
    }
    for (a, b) in grad.bias.data_mut().iter_mut().zip(&dbias) {
        *a += b;
    }
    gemm_tn_acc(out_w, len, in_w, &dy, out_w, 0, input, grad.weight.data_mut());
    let mut dx = vec![0.0; len * in_w];
    gemm_nn(len, out_w, in_w, &dy, layer.weight.data(), 0.0, &mut dx);
    dx
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn gru_layer_run(layer: &GruLayer, input: &[f64], len: usize, h0: Option<&[f64]>) -> GruCache {
    let h = layer.hidden();
    let in_w = layer.inputs();
    let mut gx = vec![0.0; len * 3 * h];
    gemm_nt(len, in_w, 3 * h, input, layer.w_input.data(), 0.0, &mut gx);
    let bias = layer.bias.data();
    for row in gx.chunks_exact_mut(3 * h) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }

    let u = layer.w_hidden.data();
    let mut cache = GruCache {
        z: vec![0.0; len * h],
        r: vec![0.0; len * h],
        n: vec![0.0; len * h],
        h_prev: vec![0.0; len * h],
        rh: vec![0.0; len * h],
        h: vec![0.0; len * h],
    };
    let mut prev = match h0 {
        Some(v) => v.to_vec(),
        None => vec![0.0; h],
    };
    for t in 0..len {
        let g = &gx[t * 3 * h..(t + 1) * 3 * h];
        let s = t * h..(t + 1) * h;
        let (z, r) = (&mut cache.z[s.clone()], &mut cache.r[s.clone()]);
        for j in 0..h {
            z[j] = sigmoid(g[j] + dot(&u[j * h..(j + 1) * h], &prev));
            r[j] = sigmoid(g[h + j] + dot(&u[(h + j) * h..(h + j + 1) * h], &prev));
        }
        let rh = &mut cache.rh[s.clone()];
        for j in 0..h {
            rh[j] = r[j] * prev[j];
        }
        let n = &mut cache.n[s.clone()];
        for j in 0..h {
            n[j] = (g[2 * h + j] + dot(&u[(2 * h + j) * h..(2 * h + j + 1) * h], rh)).tanh();
        }
        cache.h_prev[s.clone()].copy_from_slice(&prev);
        let out = &mut cache.h[s];
        for j in 0..h {
            out[j] = (1.0 - z[j]) * prev[j] + z[j] * n[j];
        }
        prev.copy_from_slice(out);
    }
    cache
}

/// Back-propagates through one GRU layer given dL/dH for every step.
fn gru_layer_backward(
    layer: &GruLayer,
    cache: &GruCache,
    input: &[f64],
    len: usize,
    d_h: &[f64],
    grad: &mut GruLayer,
) -> Vec<f64> {
    let h = layer.hidden();
    let in_w = layer.inputs();
    let u = layer.w_hidden.data();
    let mut d_a = vec![0.0; len * 3 * h];
    let mut carry = vec![0.0; h];
    let mut dh = vec![0.0; h];
    let mut d_rh = vec![0.0; h];
    for t in (0..len).rev() {
        let s = t * h;
        for j in 0..h {
            dh[j] = d_h[s + j] + carry[j];
        }
        let da = &mut d_a[t * 3 * h..(t + 1) * 3 * h];
        for j in 0..h {
            let (z, n, hp) = (cache.z[s + j], cache.n[s + j], cache.h_prev[s + j]);
            let dz = dh[j] * (n - hp);
            let dn = dh[j] * z;
            carry[j] = dh[j] * (1.0 - z);
            da[2 * h + j] = dn * (1.0 - n * n);
            da[j] = dz * z * (1.0 - z);
        }
        d_rh.fill(0.0);
        for j in 0..h {
            axpy(da[2 * h + j], &u[(2 * h + j) * h..(2 * h + j + 1) * h], &mut d_rh);
        }
        for j in 0..h {
            let (r, hp) = (cache.r[s + j], cache.h_prev[s + j]);
            carry[j] += d_rh[j] * r;
            da[h + j] = d_rh[j] * hp * r * (1.0 - r);
        }
        for j in 0..2 * h {
            axpy(da[j], &u[j * h..(j + 1) * h], &mut carry);
        }
    }

    let dw_hid = grad.w_hidden.data_mut();
    gemm_tn_acc(2 * h, len, h, &d_a, 3 * h, 0, &cache.h_prev, &mut dw_hid[..2 * h * h]);
    gemm_tn_acc(h, len, h, &d_a, 3 * h, 2 * h, &cache.rh, &mut dw_hid[2 * h * h..]);
    gemm_tn_acc(3 * h, len, in_w, &d_a, 3 * h, 0, input, grad.w_input.data_mut());
    let db = grad.bias.data_mut();
    for row in d_a.chunks_exact(3 * h) {
        for (b, v) in db.iter_mut().zip(row) {
            *b += v;
        }
    }
    let mut dx = vec![0.0; len * in_w];
    gemm_nn(len, 3 * h, in_w, &d_a, layer.w_input.data(), 0.0, &mut dx);
    dx
}

fn check_features(params: &ModelParams, features: &Tensor) -> Result<usize> {
    let width = params.config.feature_width();
    match features.shape() {
        [l, w] if *w == width && *l > 0 => Ok(*l),
        other => Err(Error::ShapeMismatch(format!(
            "walk features {other:?}, expected [l, {width}]"
        ))),
    }
}

/// Per-point embeddings, `l × d₃`.
pub fn point_embed(params: &ModelParams, coords: &[Point3]) -> Result<Tensor> {
    let len = coords.len();
    let mut x = flatten(coords)?;
    for layer in &params.point {
        x = point_layer_forward(layer, &x, len).out;
    }
    Tensor::new(vec![len, params.config.embed_width()], x)
}

/// Embeddings with the raw coordinates appended, `l × (d₃ + 3)`.
pub fn walk_features(params: &ModelParams, coords: &[Point3]) -> Result<Tensor> {
    let emb = point_embed(params, coords)?;
    let d3 = params.config.embed_width();
    let mut out = Vec::with_capacity(coords.len() * (d3 + 3));
    for (t, p) in coords.iter().enumerate() {
        out.extend_from_slice(emb.row(t));
        out.extend_from_slice(p);
    }
    Tensor::new(vec![coords.len(), d3 + 3], out)
}

/// Runs one GRU layer over `inputs` (`l × in`) from initial state `h0`
/// (zeros when `None`) and returns every hidden state, `l × h`.
pub fn gru_layer_forward(layer: &GruLayer, inputs: &Tensor, h0: Option<&[f64]>) -> Result<Tensor> {
    let h = layer.hidden();
    let [len, w] = inputs.shape() else {
        return Err(Error::ShapeMismatch("GRU input must be 2-D".into()));
    };
    if *w != layer.inputs() {
        return Err(Error::ShapeMismatch(format!("GRU input width {w}, layer expects {}", layer.inputs())));
    }
    if h0.is_some_and(|v| v.len() != h) {
        return Err(Error::ShapeMismatch("initial hidden state width".into()));
    }
    let cache = gru_layer_run(layer, inputs.data(), *len, h0);
    Tensor::new(vec![*len, h], cache.h)
}

/// Final hidden state of the top GRU layer.
pub fn gru_forward(params: &ModelParams, features: &Tensor) -> Result<Vec<f64>> {
    let len = check_features(params, features)?;
    let mut x = features.data().to_vec();
    for layer in &params.gru {
        x = gru_layer_run(layer, &x, len, None).h;
    }
    let h = params.config.hidden;
    Ok(x[(len - 1) * h..].to_vec())
}

fn head_input(params: &ModelParams, r: &[f64], bbox: Option<f64>) -> Result<Vec<f64>> {
    if r.len() != params.config.hidden {
        return Err(Error::ShapeMismatch(format!(
            "walk representation width {}, expected {}",
            r.len(),
            params.config.hidden
        )));
    }
    let mut x = r.to_vec();
    match (params.config.use_bbox, bbox) {
        (true, Some(d)) => x.push(d),
        (false, None) => {}
        (true, None) => return Err(Error::ShapeMismatch("model expects a bbox feature".into())),
        (false, Some(_)) => {
            return Err(Error::ShapeMismatch("model not configured for a bbox feature".into()))
        }
    }
    Ok(x)
}

fn linear_head(params: &ModelParams, x: &[f64]) -> Vec<f64> {
    let w = &params.head.weight;
    params
        .head
        .bias
        .data()
        .iter()
        .enumerate()
        .map(|(c, b)| b + dot(w.row(c), x))
        .collect()
}

/// Class logits for a walk representation.
pub fn classify_head(params: &ModelParams, r: &[f64], bbox: Option<f64>) -> Result<Vec<f64>> {
    let x = head_input(params, r, bbox)?;
    Ok(linear_head(params, &x))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-ln p[target]` with the probability floored at 1e-12.
pub fn cross_entropy_loss(probs: &[f64], target: usize) -> Result<f64> {
    let p = probs.get(target).ok_or(Error::ClassOutOfRange {
        index: target,
        classes: probs.len(),
    })?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Full forward pass over one walk's coordinates, keeping what the reverse
/// pass needs.
pub fn forward(params: &ModelParams, coords: &[Point3], bbox: Option<f64>) -> Result<Forward> {
    let len = coords.len();
    let input = flatten(coords)?;
    let mut point = Vec::with_capacity(3);
    for layer in &params.point {
        let x = point.last().map_or(&input, |c: &PointCache| &c.out);
        let cache = point_layer_forward(layer, x, len);
        point.push(cache);
    }

    let d3 = params.config.embed_width();
    let emb = &point[2].out;
    let mut features = Vec::with_capacity(len * (d3 + 3));
    for t in 0..len {
        features.extend_from_slice(&emb[t * d3..(t + 1) * d3]);
        features.extend_from_slice(&input[t * 3..t * 3 + 3]);
    }

    let mut gru = Vec::with_capacity(3);
    for layer in &params.gru {
        let x = gru.last().map_or(&features, |c: &GruCache| &c.h);
        let cache = gru_layer_run(layer, x, len, None);
        gru.push(cache);
    }
    let h = params.config.hidden;
    let head_input = head_input(params, &gru[2].h[(len - 1) * h..], bbox)?;
    let logits = linear_head(params, &head_input);
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite logits".into()));
    }
    let probs = softmax(&logits);
    Ok(Forward {
        len,
        coords: input,
        point,
        features,
        gru,
        head_input,
        logits,
        probs,
    })
}

/// Exact gradients of `cross_entropy(softmax(logits), target)` for the pass
/// recorded in `fwd`, accumulated into `grad`. Returns the loss.
pub fn backward_into(
    params: &ModelParams,
    fwd: &Forward,
    target: usize,
    grad: &mut ModelParams,
) -> Result<f64> {
    let loss = cross_entropy_loss(&fwd.probs, target)?;
    let classes = params.config.classes;
    let mut d_logits = fwd.probs.clone();
    if fwd.probs[target] < PROB_FLOOR {
        // the floored loss is locally constant
        d_logits.fill(0.0);
    } else {
        d_logits[target] -= 1.0;
    }

    let inputs = params.config.head_inputs();
    let mut d_head_in = vec![0.0; inputs];
    {
        let gw = grad.head.weight.data_mut();
        for c in 0..classes {
            axpy(d_logits[c], &fwd.head_input, &mut gw[c * inputs..(c + 1) * inputs]);
            axpy(d_logits[c], params.head.weight.row(c), &mut d_head_in);
        }
        for (b, d) in grad.head.bias.data_mut().iter_mut().zip(&d_logits) {
            *b += d;
        }
    }

    let len = fwd.len;
    let h = params.config.hidden;
    let mut d_h = vec![0.0; len * h];
    d_h[(len - 1) * h..].copy_from_slice(&d_head_in[..h]);
    for i in (0..3).rev() {
        let input = if i == 0 { &fwd.features } else { &fwd.gru[i - 1].h };
        d_h = gru_layer_backward(&params.gru[i], &fwd.gru[i], input, len, &d_h, &mut grad.gru[i]);
    }

    let d3 = params.config.embed_width();
    let width = d3 + 3;
    let mut d_x: Vec<f64> = d_h
        .chunks_exact(width)
        .flat_map(|row| row[..d3].iter().copied())
        .collect();
    for i in (0..3).rev() {
        let input = if i == 0 { &fwd.coords } else { &fwd.point[i - 1].out };
        d_x = point_layer_backward(&params.point[i], &fwd.point[i], input, len, &d_x, &mut grad.point[i]);
    }
    Ok(loss)
}

/// Loss and fresh gradients for one (walk, label) pair.
pub fn backward(params: &ModelParams, fwd: &Forward, target: usize) -> Result<(f64, ModelParams)> {
    let mut grad = params.zeros_like();
    let loss = backward_into(params, fwd, target, &mut grad)?;
    Ok((loss, grad))
}

/// Forward-only loss; the reference for finite-difference checks.
pub fn walk_loss(params: &ModelParams, coords: &[Point3], bbox: Option<f64>, target: usize) -> Result<f64> {
    let fwd = forward(params, coords, bbox)?;
    cross_entropy_loss(&fwd.probs, target)
}
