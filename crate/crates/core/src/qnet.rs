//! Feed-forward Q-value approximator.
//!
//! [`Mlp`] is a plain multilayer perceptron (rectifier hidden layers,
//! identity output) trained by SGD with momentum on a masked mean-squared
//! error. [`QNetwork`] pairs it with the [`InputLayout`] that turns a trading
//! state, a reward weight vector and a discount factor into network inputs.
//!
//! Batched and single-sample forward passes accumulate every output in the
//! same order (bias first, then inputs in index order), so a batch forward is
//! bit-identical to the corresponding single forwards.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::ActionSpace;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    in_dim: usize,
    out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

#[inline]
fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Samples per block in the batched kernels; keeps a block of activations in cache.
const BLOCK: usize = 128;

/// The first `n_in` columns of a layer: row `j` starts at `j * stride`.
#[derive(Clone, Copy)]
struct Affine<'a> {
    weights: &'a [f64],
    bias: &'a [f64],
    stride: usize,
    n_in: usize,
    n_out: usize,
}

impl<'a> Affine<'a> {
    fn of(layer: &'a Layer) -> Self {
        Self::prefix(layer, layer.in_dim)
    }

    fn prefix(layer: &'a Layer, n_in: usize) -> Self {
        Self {
            weights: &layer.weights,
            bias: &layer.bias,
            stride: layer.in_dim,
            n_in,
            n_out: layer.out_dim,
        }
    }

    fn row(&self, j: usize) -> &'a [f64] {
        &self.weights[j * self.stride..j * self.stride + self.n_in]
    }
}

/// `out[j * m + b] = bias[j] + sum_k w[j][k] * x[k * m + b]`, summed in
/// the same order as [`Mlp::forward`] so both paths agree bit for bit.
/// Wider vector units only change how many samples run side by side; Rust
/// never fuses the multiply and add, so results do not depend on the CPU.
fn affine_columns(a: Affine<'_>, x: &[f64], m: usize, out: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") {
            // SAFETY: the feature was detected at runtime.
            unsafe { affine_columns_avx512(a, x, m, out) };
            return;
        }
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: as above.
            unsafe { affine_columns_avx2(a, x, m, out) };
            return;
        }
    }
    affine_columns_tiled::<4, 4>(a, x, m, out);
}

/// Explicit 8 x 16 register tile; the generic tile does not keep
/// accumulators in registers reliably at this width.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
fn affine_columns_avx512(a: Affine<'_>, x: &[f64], m: usize, out: &mut [f64]) {
    use std::arch::x86_64::*;
    const R: usize = 8;
    const C: usize = 16;
    let full_rows = a.n_out - a.n_out % R;
    let full_cols = m - m % C;
    assert!(x.len() >= a.n_in * m && out.len() >= a.n_out * m);
    assert!(a.n_out == 0 || a.weights.len() >= (a.n_out - 1) * a.stride + a.n_in);
    assert!(a.bias.len() >= a.n_out);
    for b0 in (0..full_cols).step_by(C) {
        for j0 in (0..full_rows).step_by(R) {
            // SAFETY: rows j0..j0 + R are below n_out, columns b0..b0 + C are
            // below m and k < n_in, all covered by the asserts above.
            unsafe {
                let wp = a.weights.as_ptr().add(j0 * a.stride);
                let mut lo = [_mm512_setzero_pd(); R];
                for (r, v) in lo.iter_mut().enumerate() {
                    *v = _mm512_set1_pd(*a.bias.get_unchecked(j0 + r));
                }
                let mut hi = lo;
                let mut xp = x.as_ptr().add(b0);
                for k in 0..a.n_in {
                    let x0 = _mm512_loadu_pd(xp);
                    let x1 = _mm512_loadu_pd(xp.add(8));
                    xp = xp.add(m);
                    for r in 0..R {
                        let wk = _mm512_set1_pd(*wp.add(r * a.stride + k));
                        lo[r] = _mm512_add_pd(lo[r], _mm512_mul_pd(wk, x0));
                        hi[r] = _mm512_add_pd(hi[r], _mm512_mul_pd(wk, x1));
                    }
                }
                for r in 0..R {
                    let p = out.as_mut_ptr().add((j0 + r) * m + b0);
                    _mm512_storeu_pd(p, lo[r]);
                    _mm512_storeu_pd(p.add(8), hi[r]);
                }
            }
        }
    }
    for j in 0..full_rows {
        affine_row(a, j, x, m, full_cols, out);
    }
    for j in full_rows..a.n_out {
        affine_row(a, j, x, m, 0, out);
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
fn affine_columns_avx2(a: Affine<'_>, x: &[f64], m: usize, out: &mut [f64]) {
    affine_columns_tiled::<4, 8>(a, x, m, out);
}

/// Register tile of `R` outputs by `C` samples.
#[inline(always)]
fn affine_columns_tiled<const R: usize, const C: usize>(
    a: Affine<'_>,
    x: &[f64],
    m: usize,
    out: &mut [f64],
) {
    let full_rows = a.n_out - a.n_out % R;
    let full_cols = m - m % C;
    // column stripes outermost so a stripe of `x` stays in L1 across rows
    for b0 in (0..full_cols).step_by(C) {
        for j0 in (0..full_rows).step_by(R) {
            let w: [&[f64]; R] = std::array::from_fn(|r| a.row(j0 + r));
            let mut acc: [[f64; C]; R] = std::array::from_fn(|r| [a.bias[j0 + r]; C]);
            for k in 0..a.n_in {
                let xs: &[f64; C] = x[k * m + b0..k * m + b0 + C]
                    .try_into()
                    .expect("tile width");
                for r in 0..R {
                    let wk = w[r][k];
                    for c in 0..C {
                        acc[r][c] += wk * xs[c];
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                out[(j0 + r) * m + b0..(j0 + r) * m + b0 + C].copy_from_slice(row);
            }
        }
    }
    for j in 0..full_rows {
        affine_row(a, j, x, m, full_cols, out);
    }
    for j in full_rows..a.n_out {
        affine_row(a, j, x, m, 0, out);
    }
}

#[inline(always)]
fn affine_row(a: Affine<'_>, j: usize, x: &[f64], m: usize, from: usize, out: &mut [f64]) {
    let acc = &mut out[j * m + from..(j + 1) * m];
    acc.fill(a.bias[j]);
    for (k, &w) in a.row(j).iter().enumerate() {
        for (v, &xv) in acc.iter_mut().zip(&x[k * m + from..(k + 1) * m]) {
            *v += w * xv;
        }
    }
}

/// Completes single-sample forward passes started by [`Mlp::shared_prefix`].
/// Weights are kept input-major so each pass vectorizes across outputs while
/// every output still sums its bias, then its inputs in index order.
#[derive(Debug, Clone)]
pub(crate) struct PrefixFinisher {
    shared: usize,
    /// `[k][j]` blocks, one per layer; layer 0 only holds the inputs past `shared`.
    columns: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    widths: Vec<usize>,
    scratch: [Vec<f64>; 2],
}

impl PrefixFinisher {
    pub(crate) fn new(mlp: &Mlp, shared: usize) -> Self {
        let mut columns = Vec::with_capacity(mlp.layers.len());
        for (li, layer) in mlp.layers.iter().enumerate() {
            let from = if li == 0 { shared } else { 0 };
            let mut col = Vec::with_capacity((layer.in_dim - from) * layer.out_dim);
            for k in from..layer.in_dim {
                col.extend((0..layer.out_dim).map(|j| layer.weights[j * layer.in_dim + k]));
            }
            columns.push(col);
        }
        Self {
            shared,
            columns,
            biases: mlp.layers.iter().map(|l| l.bias.clone()).collect(),
            widths: mlp.widths(),
            scratch: [Vec::new(), Vec::new()],
        }
    }

    /// `out = forward(x ++ rest)` given `prefix = shared_prefix(x)` for this
    /// sample. Bitwise equal to [`Mlp::forward`].
    pub(crate) fn finish(&mut self, prefix: &[f64], rest: &[f64], out: &mut [f64]) {
        assert_eq!(prefix.len(), self.widths[1]);
        assert_eq!(self.shared + rest.len(), self.widths[0]);
        assert_eq!(out.len(), *self.widths.last().expect("output width"));
        #[cfg(target_arch = "x86_64")]
        {
            if std::arch::is_x86_feature_detected!("avx512f") {
                // SAFETY: the feature was detected at runtime.
                unsafe { self.finish_avx512(prefix, rest, out) };
                return;
            }
            if std::arch::is_x86_feature_detected!("avx2") {
                // SAFETY: as above.
                unsafe { self.finish_avx2(prefix, rest, out) };
                return;
            }
        }
        self.finish_with(prefix, rest, out, dense);
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx512f")]
    fn finish_avx512(&mut self, prefix: &[f64], rest: &[f64], out: &mut [f64]) {
        self.finish_with(prefix, rest, out, |c, i, x, o, r| {
            dense_avx512(c, i, x, o, r)
        });
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    fn finish_avx2(&mut self, prefix: &[f64], rest: &[f64], out: &mut [f64]) {
        self.finish_with(prefix, rest, out, |c, i, x, o, r| dense_avx2(c, i, x, o, r));
    }

    #[inline(always)]
    fn finish_with(
        &mut self,
        prefix: &[f64],
        rest: &[f64],
        out: &mut [f64],
        dense: impl Fn(&[f64], &[f64], &[f64], &mut [f64], bool),
    ) {
        let last = self.columns.len() - 1;
        let [mut h, mut next] = std::mem::take(&mut self.scratch);
        for li in 0..=last {
            let (init, input) = if li == 0 {
                (prefix, rest)
            } else {
                (&self.biases[li][..], &h[..])
            };
            if li == last {
                dense(&self.columns[li], init, input, out, false);
            } else {
                next.resize(self.widths[li + 1], 0.0);
                dense(&self.columns[li], init, input, &mut next, true);
                std::mem::swap(&mut h, &mut next);
            }
        }
        self.scratch = [h, next];
    }
}

/// `out[j] = init[j] + sum_k columns[k][j] * x[k]`, adding terms in
/// increasing `k`, then ReLU when `relu` is set.
fn dense(columns: &[f64], init: &[f64], x: &[f64], out: &mut [f64], relu_out: bool) {
    let n = out.len();
    out.copy_from_slice(init);
    for (col, &xk) in columns.chunks_exact(n).zip(x) {
        for (a, &w) in out.iter_mut().zip(col) {
            *a += w * xk;
        }
    }
    if relu_out {
        out.iter_mut().for_each(|a| *a = relu(*a));
    }
}

/// [`dense`] with the accumulators held in registers for the whole pass over
/// `k`; a partial last vector is masked.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
fn dense_avx512(columns: &[f64], init: &[f64], x: &[f64], out: &mut [f64], relu_out: bool) {
    let n = out.len();
    assert!(init.len() == n && columns.len() >= x.len() * n);
    let mut j0 = 0;
    while j0 < n {
        j0 += match n - j0 {
            33.. => dense_chunk_avx512::<8>(columns, init, x, out, j0, relu_out),
            17..=32 => dense_chunk_avx512::<4>(columns, init, x, out, j0, relu_out),
            9..=16 => dense_chunk_avx512::<2>(columns, init, x, out, j0, relu_out),
            _ => dense_chunk_avx512::<1>(columns, init, x, out, j0, relu_out),
        };
    }
}

/// Outputs `j0..j0 + min(V * 8, n - j0)`; returns how many were done.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
#[inline]
fn dense_chunk_avx512<const V: usize>(
    columns: &[f64],
    init: &[f64],
    x: &[f64],
    out: &mut [f64],
    j0: usize,
    relu_out: bool,
) -> usize {
    use std::arch::x86_64::*;
    const L: usize = 8;
    let n = out.len();
    let lanes = (n - j0).min(V * L);
    let masks: [__mmask8; V] = std::array::from_fn(|c| {
        let m = lanes.saturating_sub(c * L).min(L);
        ((1u16 << m) - 1) as __mmask8
    });
    // SAFETY: masked lanes are never touched; live lanes are below n, and
    // with k < x.len() every column lane stays inside `columns` (checked by
    // the caller, as is init.len() == n).
    unsafe {
        let mut a = [_mm512_setzero_pd(); V];
        for c in 0..V {
            a[c] = _mm512_maskz_loadu_pd(masks[c], init.as_ptr().add(j0 + c * L));
        }
        let mut cp = columns.as_ptr().add(j0);
        for &xk in x {
            let xv = _mm512_set1_pd(xk);
            for c in 0..V {
                let w = _mm512_maskz_loadu_pd(masks[c], cp.add(c * L));
                a[c] = _mm512_add_pd(a[c], _mm512_mul_pd(w, xv));
            }
            cp = cp.add(n);
        }
        if relu_out {
            // max returns its second operand for NaN and for +-0, as relu does
            for v in &mut a {
                *v = _mm512_max_pd(*v, _mm512_setzero_pd());
            }
        }
        for c in 0..V {
            _mm512_mask_storeu_pd(out.as_mut_ptr().add(j0 + c * L), masks[c], a[c]);
        }
    }
    lanes
}

/// [`dense`] on 256-bit vectors, up to 32 accumulators at a time.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
fn dense_avx2(columns: &[f64], init: &[f64], x: &[f64], out: &mut [f64], relu_out: bool) {
    let n = out.len();
    assert!(init.len() == n && columns.len() >= x.len() * n);
    let mut j0 = 0;
    while j0 + 4 <= n {
        j0 += match n - j0 {
            32.. => dense_chunk_avx2::<8>(columns, init, x, out, j0, relu_out),
            16..=31 => dense_chunk_avx2::<4>(columns, init, x, out, j0, relu_out),
            8..=15 => dense_chunk_avx2::<2>(columns, init, x, out, j0, relu_out),
            _ => dense_chunk_avx2::<1>(columns, init, x, out, j0, relu_out),
        };
    }
    for j in j0..n {
        let mut s = init[j];
        for (k, &xk) in x.iter().enumerate() {
            s += columns[k * n + j] * xk;
        }
        out[j] = if relu_out { relu(s) } else { s };
    }
}

/// Outputs `j0..j0 + V * 4`, which must not pass `out.len()`.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
#[inline]
fn dense_chunk_avx2<const V: usize>(
    columns: &[f64],
    init: &[f64],
    x: &[f64],
    out: &mut [f64],
    j0: usize,
    relu_out: bool,
) -> usize {
    use std::arch::x86_64::*;
    const L: usize = 4;
    let n = out.len();
    assert!(j0 + V * L <= n);
    // SAFETY: lanes j0..j0 + V * L are below n, and with k < x.len() every
    // column lane stays inside `columns` (checked by the caller).
    unsafe {
        let mut a = [_mm256_setzero_pd(); V];
        for c in 0..V {
            a[c] = _mm256_loadu_pd(init.as_ptr().add(j0 + c * L));
        }
        let mut cp = columns.as_ptr().add(j0);
        for &xk in x {
            let xv = _mm256_set1_pd(xk);
            for c in 0..V {
                a[c] = _mm256_add_pd(a[c], _mm256_mul_pd(_mm256_loadu_pd(cp.add(c * L)), xv));
            }
            cp = cp.add(n);
        }
        if relu_out {
            for v in &mut a {
                *v = _mm256_max_pd(*v, _mm256_setzero_pd());
            }
        }
        for c in 0..V {
            _mm256_storeu_pd(out.as_mut_ptr().add(j0 + c * L), a[c]);
        }
    }
    V * L
}

impl Mlp {
    /// Uniform initialisation in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for
    /// weights and biases. `widths` lists input, hidden and output sizes.
    pub fn init<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(widths)?;
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.in_dim as f64).sqrt();
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn zeros(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::invalid(
                "widths",
                format!("need at least input and output widths, all positive; got {widths:?}"),
            ));
        }
        let layers = widths
            .windows(2)
            .map(|w| Layer {
                in_dim: w[0],
                out_dim: w[1],
                weights: vec![0.0; w[0] * w[1]],
                bias: vec![0.0; w[1]],
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.out_dim))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").out_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: self.input_dim(),
                actual: len,
            });
        }
        Ok(())
    }

    /// Forward pass of one input vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input.len())?;
        let mut act = input.to_vec();
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.out_dim);
            for j in 0..layer.out_dim {
                let row = &layer.weights[j * layer.in_dim..(j + 1) * layer.in_dim];
                let mut acc = layer.bias[j];
                for (w, x) in row.iter().zip(&act) {
                    acc += w * x;
                }
                out.push(if li < last { relu(acc) } else { acc });
            }
            act = out;
        }
        Ok(act)
    }

    /// Forward pass of `n` inputs stored row-major (`n x input_dim`); the
    /// result is row-major `n x output_dim`.
    pub fn forward_batch(&self, inputs: &[f64], n: usize) -> Result<Vec<f64>> {
        if inputs.len() != n * self.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: n * self.input_dim(),
                actual: inputs.len(),
            });
        }
        let mut out = vec![0.0; n * self.output_dim()];
        let mut start = 0;
        while start < n {
            let m = BLOCK.min(n - start);
            let x = transpose(
                &inputs[start * self.input_dim()..(start + m) * self.input_dim()],
                m,
                self.input_dim(),
            );
            let acts = self.forward_columns(x, m, false);
            let y = acts.last().expect("output activations");
            let p = self.output_dim();
            for b in 0..m {
                for j in 0..p {
                    out[(start + b) * p + j] = y[j * m + b];
                }
            }
            start += m;
        }
        Ok(out)
    }

    /// Feature-major forward pass (`x[k * m + b]`). Returns the input and the
    /// post-activation output of every layer; with `keep_all == false` only
    /// the final output is kept.
    fn forward_columns(&self, x: Vec<f64>, m: usize, keep_all: bool) -> Vec<Vec<f64>> {
        let last = self.layers.len() - 1;
        let mut acts = vec![x];
        for (li, layer) in self.layers.iter().enumerate() {
            let input = acts.last().expect("previous activation");
            let mut out = vec![0.0; layer.out_dim * m];
            affine_columns(Affine::of(layer), input, m, &mut out);
            if li < last {
                out.iter_mut().for_each(|a| *a = relu(*a));
            }
            if !keep_all {
                acts.clear();
            }
            acts.push(out);
        }
        acts
    }

    /// Layer-0 pre-activations accumulated over the first `shared` inputs
    /// only, for `m` samples given feature-major (`x[k * m + b]`).
    #[cfg(test)]
    pub(crate) fn shared_prefix(&self, x: &[f64], shared: usize, m: usize) -> Vec<f64> {
        let mut out = Vec::new();
        self.shared_prefix_into(x, shared, m, &mut out);
        out
    }

    /// [`Mlp::shared_prefix`] into a reused buffer (`out_dim x m`, feature-major).
    pub(crate) fn shared_prefix_into(
        &self,
        x: &[f64],
        shared: usize,
        m: usize,
        out: &mut Vec<f64>,
    ) {
        let layer = &self.layers[0];
        debug_assert!(shared <= layer.in_dim && x.len() == shared * m);
        out.resize(layer.out_dim * m, 0.0);
        affine_columns(Affine::prefix(layer, shared), x, m, out);
    }

    /// Mean-squared error over all `n x output_dim` entries and its gradient
    /// with respect to every parameter (same order as [`Mlp::params`]).
    pub fn loss_and_gradient(
        &self,
        inputs: &[f64],
        targets: &[f64],
        n: usize,
    ) -> Result<(f64, Vec<f64>)> {
        let p = self.output_dim();
        if inputs.len() != n * self.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: n * self.input_dim(),
                actual: inputs.len(),
            });
        }
        if targets.len() != n * p {
            return Err(Error::ShapeMismatch {
                expected: n * p,
                actual: targets.len(),
            });
        }
        let scale = 1.0 / (n * p) as f64;
        let mut grad = vec![0.0; self.num_params()];
        let mut loss = 0.0;
        let mut start = 0;
        while start < n {
            let m = BLOCK.min(n - start);
            let x = transpose(
                &inputs[start * self.input_dim()..(start + m) * self.input_dim()],
                m,
                self.input_dim(),
            );
            let acts = self.forward_columns(x, m, true);
            let y = acts.last().expect("output");
            let mut delta = vec![0.0; p * m];
            for b in 0..m {
                for j in 0..p {
                    let err = y[j * m + b] - targets[(start + b) * p + j];
                    loss += err * err;
                    delta[j * m + b] = 2.0 * err * scale;
                }
            }
            self.backprop(&acts, delta, m, &mut grad);
            start += m;
        }
        Ok((loss * scale, grad))
    }

    fn backprop(&self, acts: &[Vec<f64>], mut delta: Vec<f64>, m: usize, grad: &mut [f64]) {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.weights.len() + l.bias.len();
        }
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let input = &acts[li];
            let (gw, gb) = grad[offsets[li]..offsets[li] + layer.weights.len() + layer.bias.len()]
                .split_at_mut(layer.weights.len());
            for j in 0..layer.out_dim {
                let d = &delta[j * m..(j + 1) * m];
                gb[j] += d.iter().sum::<f64>();
                for k in 0..layer.in_dim {
                    let xs = &input[k * m..(k + 1) * m];
                    gw[j * layer.in_dim + k] += d.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            if li == 0 {
                break;
            }
            let mut prev = vec![0.0; layer.in_dim * m];
            for j in 0..layer.out_dim {
                let d = &delta[j * m..(j + 1) * m];
                for k in 0..layer.in_dim {
                    let w = layer.weights[j * layer.in_dim + k];
                    let dst = &mut prev[k * m..(k + 1) * m];
                    for (p, &dv) in dst.iter_mut().zip(d) {
                        *p += w * dv;
                    }
                }
            }
            // rectifier derivative, using the post-activation value
            for (p, &a) in prev.iter_mut().zip(input) {
                if a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }
}

fn transpose(rows: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * d];
    for b in 0..n {
        for k in 0..d {
            out[k * n + b] = rows[b * d + k];
        }
    }
    out
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Plain stochastic gradient descent with optional momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub learn_rate: f64,
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(learn_rate: f64, momentum: f64) -> Self {
        Self {
            learn_rate,
            momentum,
            velocity: Vec::new(),
        }
    }

    pub fn apply(&mut self, net: &mut Mlp, grad: &[f64]) {
        if self.velocity.len() != grad.len() {
            self.velocity = vec![0.0; grad.len()];
        }
        for ((p, v), g) in net.params_mut().zip(self.velocity.iter_mut()).zip(grad) {
            *v = self.momentum * *v - self.learn_rate * g;
            *p += *v;
        }
    }
}

/// One gradient step on the mean-squared error between `net(inputs)` and
/// `targets`. Returns the loss before the step.
pub fn fit_batch(
    net: &mut Mlp,
    opt: &mut Sgd,
    inputs: &[f64],
    targets: &[f64],
    n: usize,
) -> Result<f64> {
    let (loss, grad) = net.loss_and_gradient(inputs, targets, n)?;
    opt.apply(net, &grad);
    Ok(loss)
}

/// One transition, already encoded as network inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub input: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub gamma: f64,
    pub next_input: Vec<f64>,
    pub terminal: bool,
}

/// Blended Bellman targets, row-major `n x P`.
///
/// For the taken action the target is
/// `(1 - alpha) Q(s)[a] + alpha (r + gamma max_a' Q_target(s')[a'])`, with the
/// bootstrap term dropped on terminal transitions. Every other action keeps
/// its current value, so it contributes no error.
pub fn bellman_targets(
    batch: &[Transition],
    net: &Mlp,
    target: &Mlp,
    alpha: f64,
) -> Result<Vec<f64>> {
    let n = batch.len();
    let d = net.input_dim();
    let p = net.output_dim();
    let mut inputs = Vec::with_capacity(n * d);
    let mut next = Vec::with_capacity(n * d);
    for t in batch {
        if t.action >= p {
            return Err(Error::ShapeMismatch {
                expected: p,
                actual: t.action + 1,
            });
        }
        inputs.extend_from_slice(&t.input);
        next.extend_from_slice(&t.next_input);
    }
    let mut targets = net.forward_batch(&inputs, n)?;
    let next_q = target.forward_batch(&next, n)?;
    for (i, t) in batch.iter().enumerate() {
        let bootstrap = if t.terminal {
            0.0
        } else {
            let row = &next_q[i * p..(i + 1) * p];
            t.gamma * row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        };
        let q = &mut targets[i * p + t.action];
        *q = (1.0 - alpha) * *q + alpha * (t.reward + bootstrap);
    }
    Ok(targets)
}

/// Lagged copy of the online network.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetNetwork {
    net: Mlp,
    staleness: u64,
    period: u64,
}

impl TargetNetwork {
    pub fn new(online: &Mlp, period: u64) -> Self {
        Self {
            net: online.clone(),
            staleness: 0,
            period: period.max(1),
        }
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn staleness(&self) -> u64 {
        self.staleness
    }

    pub fn period(&self) -> u64 {
        self.period
    }

    /// Records one training update and hard-copies `online` once the copy is
    /// `period` updates old.
    pub fn sync(&mut self, online: &Mlp) -> bool {
        self.staleness += 1;
        if self.staleness >= self.period {
            self.net.clone_from(online);
            self.staleness = 0;
            true
        } else {
            false
        }
    }
}

/// How a trading state, weight vector and discount factor become inputs.
///
/// Layout: `lookback` scaled log-returns, the position (+1/-1/0), the four
/// reward weights, then the discount factor when it is generalised.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputLayout {
    pub mode: ActionSpace,
    pub lookback: usize,
    pub generalize_gamma: bool,
    /// Multiplier applied to the lookback log-returns.
    pub return_scale: f64,
}

impl InputLayout {
    pub fn input_width(&self) -> usize {
        self.lookback + 1 + 4 + usize::from(self.generalize_gamma)
    }

    /// Appends the encoding of `(state, weights, gamma)` to `out`; `state`
    /// is the lookback followed by the position.
    pub fn encode_into(&self, state: &[f64], weights: &[f64; 4], gamma: f64, out: &mut Vec<f64>) {
        debug_assert_eq!(state.len(), self.lookback + 1);
        out.extend(state[..self.lookback].iter().map(|r| r * self.return_scale));
        out.push(state[self.lookback]);
        out.extend_from_slice(weights);
        if self.generalize_gamma {
            out.push(gamma);
        }
    }

    pub fn encode(&self, state: &[f64], weights: &[f64; 4], gamma: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.input_width());
        self.encode_into(state, weights, gamma, &mut out);
        out
    }
}

/// An [`Mlp`] together with the input layout it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    pub layout: InputLayout,
    pub mlp: Mlp,
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"MRDQNET\0";
const CHECKPOINT_VERSION: u32 = 1;

impl QNetwork {
    pub fn init<R: Rng + ?Sized>(
        layout: InputLayout,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let widths = Self::widths_for(&layout, hidden);
        Ok(Self {
            layout,
            mlp: Mlp::init(&widths, rng)?,
        })
    }

    pub fn widths_for(layout: &InputLayout, hidden: &[usize]) -> Vec<usize> {
        std::iter::once(layout.input_width())
            .chain(hidden.iter().copied())
            .chain(std::iter::once(layout.mode.count()))
            .collect()
    }

    pub fn from_parts(layout: InputLayout, mlp: Mlp) -> Result<Self> {
        if mlp.input_dim() != layout.input_width() {
            return Err(Error::ShapeMismatch {
                expected: layout.input_width(),
                actual: mlp.input_dim(),
            });
        }
        if mlp.output_dim() != layout.mode.count() {
            return Err(Error::ShapeMismatch {
                expected: layout.mode.count(),
                actual: mlp.output_dim(),
            });
        }
        Ok(Self { layout, mlp })
    }

    pub fn q_values(&self, state: &[f64], weights: &[f64; 4], gamma: f64) -> Result<Vec<f64>> {
        self.mlp.forward(&self.layout.encode(state, weights, gamma))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        let mode = match self.layout.mode {
            ActionSpace::LP => 0u8,
            ActionSpace::LSP => 1u8,
        };
        w.write_all(&[mode, u8::from(self.layout.generalize_gamma)])?;
        w.write_all(&(self.layout.lookback as u32).to_le_bytes())?;
        w.write_all(&self.layout.return_scale.to_le_bytes())?;
        let widths = self.mlp.widths();
        w.write_all(&(widths.len() as u32).to_le_bytes())?;
        for width in widths {
            w.write_all(&(width as u32).to_le_bytes())?;
        }
        for p in self.mlp.params() {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let bad = |what: &str| Error::InvalidCheckpoint(what.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let mut flags = [0u8; 2];
        r.read_exact(&mut flags)?;
        let mode = match flags[0] {
            0 => ActionSpace::LP,
            1 => ActionSpace::LSP,
            _ => return Err(bad("bad mode flag")),
        };
        let lookback = read_u32(&mut r)? as usize;
        let return_scale = read_f64(&mut r)?;
        let n_widths = read_u32(&mut r)? as usize;
        if !(2..=64).contains(&n_widths) {
            return Err(bad("bad layer count"));
        }
        let widths = (0..n_widths)
            .map(|_| read_u32(&mut r).map(|w| w as usize))
            .collect::<Result<Vec<_>>>()?;
        let layout = InputLayout {
            mode,
            lookback,
            generalize_gamma: flags[1] != 0,
            return_scale,
        };
        let mut mlp = Mlp::zeros(&widths)?;
        for p in mlp.params_mut() {
            *p = read_f64(&mut r)?;
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Self::from_parts(layout, mlp)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
