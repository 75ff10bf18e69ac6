//! Dense f64 tensors with explicit forward and backward passes.
//!
//! This is not a general autodiff graph. Every operation the encoders and
//! losses need comes as a forward function paired with a backward function
//! that accumulates into the `grad` buffers of its inputs. Callers chain
//! the backward calls in reverse order themselves.

use rand::Rng;

use crate::error::{Error, Result};

/// Dense n-dimensional array in row-major order with a same-shape gradient
/// buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
            grad: vec![0.0; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Dim(format!("zero-sized dimension in {shape:?}")));
        }
        if n != data.len() {
            return Err(Error::Dim(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                n,
                data.len()
            )));
        }
        let grad = vec![0.0; n];
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            grad,
        })
    }

    /// Fill with uniform values in `[-bound, bound]`.
    pub fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor {
        let mut t = Tensor::zeros(shape);
        for v in t.data.iter_mut() {
            *v = rng.gen_range(-bound..=bound);
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        &mut self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Rows of a 2-D tensor.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Columns of a 2-D tensor.
    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    /// Row `i` of a 2-D tensor as a slice.
    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    fn expect_2d(&self, what: &str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(Error::Dim(format!(
                "{what}: expected 2-D tensor, got shape {:?}",
                self.shape
            )));
        }
        Ok((self.shape[0], self.shape[1]))
    }

    fn expect_1d(&self, what: &str) -> Result<usize> {
        if self.shape.len() != 1 {
            return Err(Error::Dim(format!(
                "{what}: expected 1-D tensor, got shape {:?}",
                self.shape
            )));
        }
        Ok(self.shape[0])
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---- matrix-vector ----

/// `out[i] = sum_j w[i,j] * x[j]`.
pub fn matvec(w: &Tensor, x: &Tensor) -> Result<Tensor> {
    let (rows, cols) = w.expect_2d("matvec")?;
    let n = x.expect_1d("matvec")?;
    if cols != n {
        return Err(Error::Dim(format!(
            "matvec: W is {rows}x{cols} but x has length {n}"
        )));
    }
    let mut out = Tensor::zeros(&[rows]);
    for i in 0..rows {
        out.data[i] = dot(w.row(i), x.data());
    }
    Ok(out)
}

/// Accumulate `grad_out` through a matvec into `w.grad` and `x.grad`.
pub fn matvec_backward(w: &mut Tensor, x: &mut Tensor, grad_out: &[f64]) {
    let rows = w.shape[0];
    let cols = w.shape[1];
    debug_assert_eq!(grad_out.len(), rows);
    for i in 0..rows {
        let g = grad_out[i];
        if g == 0.0 {
            continue;
        }
        let wrow = i * cols;
        for j in 0..cols {
            w.grad[wrow + j] += g * x.data[j];
            x.grad[j] += g * w.data[wrow + j];
        }
    }
}

// ---- convolution ----

/// 1-D convolution over the rows of `x` (shape `n x k_i`) with kernel
/// `k` of shape `k_h x (m * k_i)`. The window centered at row `i` is the
/// concatenation of rows `i-(m-1)/2 ..= i+(m-1)/2`, zero-padded at the
/// boundaries. Output has shape `n x k_h`.
pub fn conv1d(x: &Tensor, k: &Tensor, m: usize) -> Result<Tensor> {
    if m % 2 == 0 {
        return Err(Error::Config(format!("conv1d: window size {m} must be odd")));
    }
    let (n, ki) = x.expect_2d("conv1d input")?;
    let (kh, kcols) = k.expect_2d("conv1d kernel")?;
    if kcols != m * ki {
        return Err(Error::Dim(format!(
            "conv1d: kernel is {kh}x{kcols}, expected {kh}x{}",
            m * ki
        )));
    }
    let half = (m - 1) / 2;
    let mut out = Tensor::zeros(&[n, kh]);
    for i in 0..n {
        for row in 0..kh {
            let krow = &k.data[row * kcols..(row + 1) * kcols];
            let mut acc = 0.0;
            for w in 0..m {
                // window row index, skipping padded positions
                let src = i as isize + w as isize - half as isize;
                if src < 0 || src >= n as isize {
                    continue;
                }
                let xrow = &x.data[src as usize * ki..(src as usize + 1) * ki];
                let kseg = &krow[w * ki..(w + 1) * ki];
                acc += dot(kseg, xrow);
            }
            out.data[i * kh + row] = acc;
        }
    }
    Ok(out)
}

/// Backward for [`conv1d`]: accumulates into `x.grad` and `k.grad`.
pub fn conv1d_backward(x: &mut Tensor, k: &mut Tensor, m: usize, grad_out: &[f64]) {
    let n = x.shape[0];
    let ki = x.shape[1];
    let kh = k.shape[0];
    let kcols = k.shape[1];
    debug_assert_eq!(grad_out.len(), n * kh);
    let half = (m - 1) / 2;
    for i in 0..n {
        for row in 0..kh {
            let g = grad_out[i * kh + row];
            if g == 0.0 {
                continue;
            }
            let kbase = row * kcols;
            for w in 0..m {
                let src = i as isize + w as isize - half as isize;
                if src < 0 || src >= n as isize {
                    continue;
                }
                let xbase = src as usize * ki;
                for j in 0..ki {
                    k.grad[kbase + w * ki + j] += g * x.data[xbase + j];
                    x.grad[xbase + j] += g * k.data[kbase + w * ki + j];
                }
            }
        }
    }
}

// ---- max pooling ----

/// Column-wise max over a row range `[lo, hi)` of `h`. Returns the pooled
/// vector and the argmax row per column. An empty range pools to zeros with
/// no argmax entries (no gradient flows).
pub fn max_pool_cols_range(h: &Tensor, lo: usize, hi: usize) -> Result<(Tensor, Vec<usize>)> {
    let (n, kh) = h.expect_2d("max_pool_cols")?;
    if lo > hi || hi > n {
        return Err(Error::Dim(format!(
            "max_pool_cols: range {lo}..{hi} out of bounds for {n} rows"
        )));
    }
    let mut out = Tensor::zeros(&[kh]);
    if lo == hi {
        return Ok((out, Vec::new()));
    }
    let mut argmax = vec![lo; kh];
    for j in 0..kh {
        let mut best = h.data[lo * kh + j];
        for i in lo + 1..hi {
            let v = h.data[i * kh + j];
            // ties keep the lowest row index
            if v > best {
                best = v;
                argmax[j] = i;
            }
        }
        out.data[j] = best;
    }
    Ok((out, argmax))
}

/// Column-wise max over all rows of `h`.
pub fn max_pool_cols(h: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let n = h.expect_2d("max_pool_cols")?.0;
    if n == 0 {
        return Err(Error::Dim("max_pool_cols: empty input".into()));
    }
    max_pool_cols_range(h, 0, n)
}

/// Backward for max pooling: routes each column's gradient to its argmax row.
pub fn max_pool_cols_backward(h: &mut Tensor, argmax: &[usize], grad_out: &[f64]) {
    if argmax.is_empty() {
        return;
    }
    let kh = h.shape[1];
    debug_assert_eq!(grad_out.len(), kh);
    for j in 0..kh {
        h.grad[argmax[j] * kh + j] += grad_out[j];
    }
}

// ---- GRU cell ----

/// Trainable parameters of one GRU cell. `w_*` map the input (`k_h x k_i`),
/// `u_*` map the previous hidden state (`k_h x k_h`), `b_*` are biases.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_z: Tensor,
    pub u_z: Tensor,
    pub b_z: Tensor,
    pub w_r: Tensor,
    pub u_r: Tensor,
    pub b_r: Tensor,
    pub w_h: Tensor,
    pub u_h: Tensor,
    pub b_h: Tensor,
}

impl GruParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> GruParams {
        GruParams {
            w_z: Tensor::zeros(&[hidden_dim, input_dim]),
            u_z: Tensor::zeros(&[hidden_dim, hidden_dim]),
            b_z: Tensor::zeros(&[hidden_dim]),
            w_r: Tensor::zeros(&[hidden_dim, input_dim]),
            u_r: Tensor::zeros(&[hidden_dim, hidden_dim]),
            b_r: Tensor::zeros(&[hidden_dim]),
            w_h: Tensor::zeros(&[hidden_dim, input_dim]),
            u_h: Tensor::zeros(&[hidden_dim, hidden_dim]),
            b_h: Tensor::zeros(&[hidden_dim]),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.b_z.len()
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.cols()
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("w_z", &mut self.w_z),
            ("u_z", &mut self.u_z),
            ("b_z", &mut self.b_z),
            ("w_r", &mut self.w_r),
            ("u_r", &mut self.u_r),
            ("b_r", &mut self.b_r),
            ("w_h", &mut self.w_h),
            ("u_h", &mut self.u_h),
            ("b_h", &mut self.b_h),
        ]
    }
}

/// Saved forward values needed by [`gru_cell_backward`].
#[derive(Debug, Clone)]
pub struct GruTrace {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    h_cand: Vec<f64>,
    rh: Vec<f64>,
}

fn affine(w: &Tensor, x: &[f64], u: &Tensor, h: &[f64], b: &Tensor) -> Vec<f64> {
    let kh = w.rows();
    let mut out = vec![0.0; kh];
    for i in 0..kh {
        out[i] = dot(w.row(i), x) + dot(u.row(i), h) + b.data[i];
    }
    out
}

/// One GRU step on plain slices:
/// `z = sigmoid(Wz x + Uz h + bz)`, `r = sigmoid(Wr x + Ur h + br)`,
/// `h~ = tanh(Wh x + Uh (r*h) + bh)`, `h' = (1-z)*h + z*h~`.
pub(crate) fn gru_cell_slices(x: &[f64], h_prev: &[f64], p: &GruParams) -> (Vec<f64>, GruTrace) {
    let kh = p.hidden_dim();
    let z: Vec<f64> = affine(&p.w_z, x, &p.u_z, h_prev, &p.b_z)
        .into_iter()
        .map(sigmoid)
        .collect();
    let r: Vec<f64> = affine(&p.w_r, x, &p.u_r, h_prev, &p.b_r)
        .into_iter()
        .map(sigmoid)
        .collect();
    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(ri, hi)| ri * hi).collect();
    let h_cand: Vec<f64> = affine(&p.w_h, x, &p.u_h, &rh, &p.b_h)
        .into_iter()
        .map(f64::tanh)
        .collect();
    let mut h = vec![0.0; kh];
    for i in 0..kh {
        h[i] = (1.0 - z[i]) * h_prev[i] + z[i] * h_cand[i];
    }
    let trace = GruTrace {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        z,
        r,
        h_cand,
        rh,
    };
    (h, trace)
}

/// Backward for one GRU step. Accumulates into the cell parameter grads and
/// into `grad_x` / `grad_h_prev`.
pub(crate) fn gru_cell_backward_slices(
    trace: &GruTrace,
    p: &mut GruParams,
    grad_h: &[f64],
    grad_x: &mut [f64],
    grad_h_prev: &mut [f64],
) {
    let kh = p.hidden_dim();
    let mut da_z = vec![0.0; kh];
    let mut da_h = vec![0.0; kh];
    let mut d_rh = vec![0.0; kh];
    for i in 0..kh {
        let dz = grad_h[i] * (trace.h_cand[i] - trace.h_prev[i]);
        let dcand = grad_h[i] * trace.z[i];
        grad_h_prev[i] += grad_h[i] * (1.0 - trace.z[i]);
        da_z[i] = dz * trace.z[i] * (1.0 - trace.z[i]);
        da_h[i] = dcand * (1.0 - trace.h_cand[i] * trace.h_cand[i]);
    }
    // candidate path: a_h = Wh x + Uh (r*h_prev) + bh
    for i in 0..kh {
        let g = da_h[i];
        if g == 0.0 {
            continue;
        }
        let ki = trace.x.len();
        for j in 0..ki {
            p.w_h.grad[i * ki + j] += g * trace.x[j];
            grad_x[j] += g * p.w_h.data[i * ki + j];
        }
        for j in 0..kh {
            p.u_h.grad[i * kh + j] += g * trace.rh[j];
            d_rh[j] += g * p.u_h.data[i * kh + j];
        }
        p.b_h.grad[i] += g;
    }
    let mut da_r = vec![0.0; kh];
    for j in 0..kh {
        da_r[j] = d_rh[j] * trace.h_prev[j] * trace.r[j] * (1.0 - trace.r[j]);
        grad_h_prev[j] += d_rh[j] * trace.r[j];
    }
    // gate paths: a = W x + U h_prev + b
    for (da, w, u, b) in [
        (&da_z, &mut p.w_z, &mut p.u_z, &mut p.b_z),
        (&da_r, &mut p.w_r, &mut p.u_r, &mut p.b_r),
    ] {
        for i in 0..kh {
            let g = da[i];
            if g == 0.0 {
                continue;
            }
            let ki = trace.x.len();
            for j in 0..ki {
                w.grad[i * ki + j] += g * trace.x[j];
                grad_x[j] += g * w.data[i * ki + j];
            }
            for j in 0..kh {
                u.grad[i * kh + j] += g * trace.h_prev[j];
                grad_h_prev[j] += g * u.data[i * kh + j];
            }
            b.grad[i] += g;
        }
    }
}

/// One GRU step on tensors. Returns the new hidden state and the trace
/// needed for [`gru_cell_backward`].
pub fn gru_cell(x: &Tensor, h_prev: &Tensor, p: &GruParams) -> Result<(Tensor, GruTrace)> {
    let ki = x.expect_1d("gru_cell input")?;
    let kh = h_prev.expect_1d("gru_cell hidden")?;
    if ki != p.input_dim() || kh != p.hidden_dim() {
        return Err(Error::Dim(format!(
            "gru_cell: got x[{ki}], h[{kh}] for cell with input {} hidden {}",
            p.input_dim(),
            p.hidden_dim()
        )));
    }
    let (h, trace) = gru_cell_slices(x.data(), h_prev.data(), p);
    Ok((Tensor::from_vec(&[kh], h)?, trace))
}

/// Backward for [`gru_cell`], accumulating into `x.grad`, `h_prev.grad`
/// and the cell parameter grads.
pub fn gru_cell_backward(
    trace: &GruTrace,
    p: &mut GruParams,
    grad_h: &[f64],
    x: &mut Tensor,
    h_prev: &mut Tensor,
) {
    let mut gx = vec![0.0; x.len()];
    let mut gh = vec![0.0; h_prev.len()];
    gru_cell_backward_slices(trace, p, grad_h, &mut gx, &mut gh);
    for (g, acc) in gx.iter().zip(x.grad_mut()) {
        *acc += g;
    }
    for (g, acc) in gh.iter().zip(h_prev.grad_mut()) {
        *acc += g;
    }
}

// ---- activations ----

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stabilized softmax; the output sums to 1.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    debug_assert!(!v.is_empty());
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Per-element multipliers applied by a dropout draw (0 for dropped entries,
/// `1/(1-p)` for survivors). Reused by the backward pass.
#[derive(Debug, Clone)]
pub struct DropoutMask(Vec<f64>);

impl DropoutMask {
    pub fn identity(n: usize) -> DropoutMask {
        DropoutMask(vec![1.0; n])
    }

    pub fn factors(&self) -> &[f64] {
        &self.0
    }
}

/// Inverted dropout: zero each entry with probability `p` and scale
/// survivors by `1/(1-p)`. Identity when `training` is false.
pub fn dropout(
    v: &Tensor,
    p: f64,
    training: bool,
    rng: &mut impl Rng,
) -> Result<(Tensor, DropoutMask)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout probability {p} not in [0,1)")));
    }
    if !training || p == 0.0 {
        return Ok((v.clone(), DropoutMask::identity(v.len())));
    }
    let keep = 1.0 / (1.0 - p);
    let mut out = v.clone();
    out.zero_grad();
    let mut mask = vec![0.0; v.len()];
    for (i, o) in out.data.iter_mut().enumerate() {
        if rng.gen::<f64>() < p {
            *o = 0.0;
        } else {
            *o *= keep;
            mask[i] = keep;
        }
    }
    Ok((out, DropoutMask(mask)))
}

/// Backward for [`dropout`]: accumulates `grad_out` through the mask into
/// `v.grad`.
pub fn dropout_backward(v: &mut Tensor, mask: &DropoutMask, grad_out: &[f64]) {
    for ((acc, m), g) in v.grad.iter_mut().zip(mask.factors()).zip(grad_out) {
        *acc += m * g;
    }
}

// ---- SGD ----

/// Plain SGD settings: step size plus an optional global gradient-norm clip.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub clip_norm: Option<f64>,
}

impl SgdConfig {
    pub fn new(learning_rate: f64) -> SgdConfig {
        SgdConfig {
            learning_rate,
            clip_norm: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip_norm must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// Apply one SGD step to every tensor, then zero all grads. With
/// `clip_norm` set, the gradients are first rescaled so their global
/// L2 norm does not exceed it.
pub fn sgd_step(params: &mut [(&str, &mut Tensor)], cfg: &SgdConfig) -> Result<()> {
    cfg.validate()?;
    let mut sq = 0.0;
    for (name, t) in params.iter() {
        for (i, g) in t.grad.iter().enumerate() {
            if !g.is_finite() {
                return Err(Error::Train(format!(
                    "non-finite gradient {g} in '{name}' at index {i}"
                )));
            }
            sq += g * g;
        }
    }
    let mut scale = 1.0;
    if let Some(clip) = cfg.clip_norm {
        let norm = sq.sqrt();
        if norm > clip {
            scale = clip / norm;
        }
    }
    let step = cfg.learning_rate * scale;
    for (_, t) in params.iter_mut() {
        for (v, g) in t.data.iter_mut().zip(t.grad.iter()) {
            *v -= step * g;
        }
        t.zero_grad();
    }
    Ok(())
}
