//! Single-layer LSTM classifier with exact backpropagation through time.
//!
//! Gate order in the stacked weights is input, forget, cell, output.
//! Batches are time-major: `T × B × D`.

use ndarray::linalg::general_mat_mul;
use std::ops::AddAssign;

use ndarray::{s, Array1, Array2, Array3, ArrayView2, ArrayView3, Axis, LinalgScalar, ScalarOperand, Zip};
use num_traits::Float;
use rand::distr::uniform::SampleUniform;
use rand::Rng;

use super::ProbeError;

pub trait Scalar:
    LinalgScalar + Float + SampleUniform + ScalarOperand + AddAssign + Send + Sync + std::fmt::Debug + 'static
{
}
impl<T> Scalar for T where
    T: LinalgScalar + Float + SampleUniform + ScalarOperand + AddAssign + Send + Sync + std::fmt::Debug + 'static
{
}

fn cast<F: Scalar>(v: f64) -> F {
    F::from(v).unwrap()
}

/// LSTM and head weights; also used for their gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<F> {
    /// `D × 4H`
    pub w_ih: Array2<F>,
    /// `H × 4H`
    pub w_hh: Array2<F>,
    /// `4H`
    pub b: Array1<F>,
    /// `H × C`
    pub w_out: Array2<F>,
    /// `C`
    pub b_out: Array1<F>,
}

pub const TENSOR_NAMES: [&str; 5] = ["w_ih", "w_hh", "b", "w_out", "b_out"];

impl<F: Scalar> Params<F> {
    pub fn zeros(input: usize, hidden: usize, classes: usize) -> Self {
        Self {
            w_ih: Array2::zeros((input, 4 * hidden)),
            w_hh: Array2::zeros((hidden, 4 * hidden)),
            b: Array1::zeros(4 * hidden),
            w_out: Array2::zeros((hidden, classes)),
            b_out: Array1::zeros(classes),
        }
    }

    /// Every weight uniform in `[-k, k]` with `k = 1/√hidden`.
    pub fn init<R: Rng>(input: usize, hidden: usize, classes: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(input, hidden, classes);
        let k: F = cast(1.0 / (hidden as f64).sqrt());
        for t in p.tensors_mut() {
            for v in t.iter_mut() {
                *v = rng.random_range(-k..=k);
            }
        }
        p
    }

    pub fn input_dim(&self) -> usize {
        self.w_ih.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.nrows()
    }

    pub fn classes(&self) -> usize {
        self.b_out.len()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.hidden(), self.classes())
    }

    pub fn tensors(&self) -> [&[F]; 5] {
        [
            self.w_ih.as_slice().unwrap(),
            self.w_hh.as_slice().unwrap(),
            self.b.as_slice().unwrap(),
            self.w_out.as_slice().unwrap(),
            self.b_out.as_slice().unwrap(),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [F]; 5] {
        [
            self.w_ih.as_slice_mut().unwrap(),
            self.w_hh.as_slice_mut().unwrap(),
            self.b.as_slice_mut().unwrap(),
            self.w_out.as_slice_mut().unwrap(),
            self.b_out.as_slice_mut().unwrap(),
        ]
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Activations kept from the forward pass.
pub struct Cache<F> {
    /// Post-activation gates `T × B × 4H`.
    gates: Array3<F>,
    /// Cell states `(T+1) × B × H`, index 0 the zero initial state.
    c: Array3<F>,
    /// Hidden states `(T+1) × B × H`.
    h: Array3<F>,
    pub logits: Array2<F>,
}

fn sigmoid<F: Scalar>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

fn check_width<F: Scalar>(params: &Params<F>, width: usize) -> Result<(), ProbeError> {
    if width != params.input_dim() {
        return Err(ProbeError::ShapeMismatch {
            expected: params.input_dim(),
            found: width,
        });
    }
    Ok(())
}

/// Runs the recurrence from a zero state; logits come from the final hidden state.
pub fn forward<F: Scalar>(params: &Params<F>, x: ArrayView3<F>) -> Result<Cache<F>, ProbeError> {
    let (t_len, batch, d) = x.dim();
    check_width(params, d)?;
    let hdim = params.hidden();
    let flat = x.to_shape((t_len * batch, d)).unwrap();
    let mut gates = (flat.dot(&params.w_ih) + &params.b)
        .into_shape_with_order((t_len, batch, 4 * hdim))
        .unwrap();
    let mut c = Array3::<F>::zeros((t_len + 1, batch, hdim));
    let mut h = Array3::<F>::zeros((t_len + 1, batch, hdim));
    for t in 0..t_len {
        let (h_prev, mut h_next) = h.multi_slice_mut((s![t, .., ..], s![t + 1, .., ..]));
        let mut z = gates.index_axis_mut(Axis(0), t);
        general_mat_mul(F::one(), &h_prev, &params.w_hh, F::one(), &mut z);
        {
            let (mut ifo, mut g) = z.view_mut().split_at(Axis(1), 2 * hdim);
            let (mut g, mut o) = g.view_mut().split_at(Axis(1), hdim);
            ifo.mapv_inplace(sigmoid);
            o.mapv_inplace(sigmoid);
            g.mapv_inplace(F::tanh);
        }
        let (c_prev, mut c_next) = c.multi_slice_mut((s![t, .., ..], s![t + 1, .., ..]));
        let z = gates.index_axis(Axis(0), t);
        Zip::from(&mut c_next)
            .and(&c_prev)
            .and(z.slice(s![.., 0..hdim]))
            .and(z.slice(s![.., hdim..2 * hdim]))
            .and(z.slice(s![.., 2 * hdim..3 * hdim]))
            .for_each(|cn, &cp, &i, &f, &g| *cn = f * cp + i * g);
        Zip::from(&mut h_next)
            .and(&c_next)
            .and(z.slice(s![.., 3 * hdim..]))
            .for_each(|hn, &cn, &o| *hn = o * cn.tanh());
    }
    let logits = h.index_axis(Axis(0), t_len).dot(&params.w_out) + &params.b_out;
    Ok(Cache { gates, c, h, logits })
}

/// Logits for one `T × D` sequence.
pub fn logits<F: Scalar>(params: &Params<F>, seq: ArrayView2<F>) -> Result<Array1<F>, ProbeError> {
    let (t, d) = seq.dim();
    let x = seq.to_shape((t, 1, d)).unwrap();
    Ok(forward(params, x.view())?.logits.row(0).to_owned())
}

/// Row-wise softmax, shifted by the row maximum.
pub fn softmax<F: Scalar>(logits: &Array2<F>) -> Array2<F> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let m = row.fold(F::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    p
}

/// Mean cross-entropy of `labels` under `logits`.
pub fn cross_entropy<F: Scalar>(logits: &Array2<F>, labels: &[usize]) -> F {
    let mut total = F::zero();
    for (row, &y) in logits.rows().into_iter().zip(labels) {
        let m = row.fold(F::neg_infinity(), |a, &b| a.max(b));
        let lse = row.mapv(|v| (v - m).exp()).sum().ln() + m;
        total = total + lse - row[y];
    }
    total / cast(labels.len() as f64)
}

/// Deliberate defects for validating the gradient check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Report a zero gradient for the recurrent weights.
    ZeroRecurrentGradient,
}

/// Loss and exact gradients of the mean cross-entropy over the batch.
pub fn backward<F: Scalar>(
    params: &Params<F>,
    x: ArrayView3<F>,
    cache: &Cache<F>,
    labels: &[usize],
    fault: Fault,
) -> (F, Params<F>) {
    let (t_len, batch, d) = x.dim();
    let hdim = params.hidden();
    let loss = cross_entropy(&cache.logits, labels);
    let mut grads = params.zeros_like();

    let mut dlogits = softmax(&cache.logits);
    let inv_b: F = cast(1.0 / batch as f64);
    for (mut row, &y) in dlogits.rows_mut().into_iter().zip(labels) {
        row[y] = row[y] - F::one();
        row.mapv_inplace(|v| v * inv_b);
    }
    let h_last = cache.h.index_axis(Axis(0), t_len);
    grads.w_out = h_last.t().dot(&dlogits);
    grads.b_out = dlogits.sum_axis(Axis(0));

    let mut dh = dlogits.dot(&params.w_out.t());
    let mut dc = Array2::<F>::zeros((batch, hdim));
    let mut dz = Array3::<F>::zeros((t_len, batch, 4 * hdim));
    let one = F::one();
    for t in (0..t_len).rev() {
        let z = cache.gates.index_axis(Axis(0), t);
        let c_t = cache.c.index_axis(Axis(0), t + 1);
        let c_prev = cache.c.index_axis(Axis(0), t);
        let mut dz_t = dz.index_axis_mut(Axis(0), t);
        for b in 0..batch {
            // Contiguous rows; slicing to `hdim` lets the loop run unchecked.
            let z_row = z.row(b);
            let z_row = z_row.as_slice().unwrap();
            let (zi, rest) = z_row.split_at(hdim);
            let (zf, rest) = rest.split_at(hdim);
            let (zg, zo) = rest.split_at(hdim);
            let (ct, cp) = (c_t.row(b), c_prev.row(b));
            let (ct, cp) = (&ct.as_slice().unwrap()[..hdim], &cp.as_slice().unwrap()[..hdim]);
            let dh_row = dh.row(b);
            let dh_row = &dh_row.as_slice().unwrap()[..hdim];
            let mut dc_row = dc.row_mut(b);
            let dc_row = &mut dc_row.as_slice_mut().unwrap()[..hdim];
            let mut dz_row = dz_t.row_mut(b);
            let dz_row = dz_row.as_slice_mut().unwrap();
            let (dzi, rest) = dz_row.split_at_mut(hdim);
            let (dzf, rest) = rest.split_at_mut(hdim);
            let (dzg, dzo) = rest.split_at_mut(hdim);
            for j in 0..hdim {
                let (i, f, g, o) = (zi[j], zf[j], zg[j], zo[j]);
                let tc = ct[j].tanh();
                let dh_bj = dh_row[j];
                let dc_bj = dc_row[j] + dh_bj * o * (one - tc * tc);
                dzo[j] = dh_bj * tc * o * (one - o);
                dzi[j] = dc_bj * g * i * (one - i);
                dzf[j] = dc_bj * cp[j] * f * (one - f);
                dzg[j] = dc_bj * i * (one - g * g);
                dc_row[j] = dc_bj * f;
            }
        }
        dh = dz.index_axis(Axis(0), t).dot(&params.w_hh.t());
    }
    // Weight gradients summed over all steps at once: one large product each.
    let flat_x = x.to_shape((t_len * batch, d)).unwrap();
    let flat_dz = dz.to_shape((t_len * batch, 4 * hdim)).unwrap();
    let h_prev = cache.h.slice(s![..t_len, .., ..]);
    let flat_h = h_prev.to_shape((t_len * batch, hdim)).unwrap();
    grads.w_ih = flat_x.t().dot(&flat_dz);
    grads.w_hh = flat_h.t().dot(&flat_dz);
    grads.b = flat_dz.sum_axis(Axis(0));
    if fault == Fault::ZeroRecurrentGradient {
        grads.w_hh.fill(F::zero());
    }
    (loss, grads)
}
