use ndarray::{s, Array1, Array2, ArrayView1};

/// LSTM weights. `w` is `4H x (input + H)` acting on `[x ; h_prev]`; gate
/// blocks are ordered input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl LstmWeights {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w: Array2::zeros((4 * hidden, input + hidden)),
            b: Array1::zeros(4 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.b.len() / 4
    }
}

/// Values kept from one forward step for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct LstmStep {
    pub xh: Array1<f64>,
    /// Post-activation gates `[i ; f ; g ; o]`.
    pub gates: Array1<f64>,
    pub c_prev: Array1<f64>,
    pub c: Array1<f64>,
    pub tanh_c: Array1<f64>,
    pub h: Array1<f64>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn concat(parts: &[ArrayView1<'_, f64>]) -> Array1<f64> {
    let n: usize = parts.iter().map(|p| p.len()).sum();
    let mut out = Array1::zeros(n);
    let mut at = 0;
    for p in parts {
        out.slice_mut(s![at..at + p.len()]).assign(p);
        at += p.len();
    }
    out
}

pub(crate) fn lstm_forward(
    weights: &LstmWeights,
    x: ArrayView1<'_, f64>,
    h_prev: ArrayView1<'_, f64>,
    c_prev: ArrayView1<'_, f64>,
) -> LstmStep {
    let hd = weights.hidden();
    let xh = concat(&[x, h_prev]);
    let mut gates = weights.w.dot(&xh) + &weights.b;
    for (k, z) in gates.iter_mut().enumerate() {
        *z = if (2 * hd..3 * hd).contains(&k) { z.tanh() } else { sigmoid(*z) };
    }
    let mut c = Array1::zeros(hd);
    let mut tanh_c = Array1::zeros(hd);
    let mut h = Array1::zeros(hd);
    for k in 0..hd {
        let (i, f, g, o) = (gates[k], gates[hd + k], gates[2 * hd + k], gates[3 * hd + k]);
        c[k] = f * c_prev[k] + i * g;
        tanh_c[k] = c[k].tanh();
        h[k] = o * tanh_c[k];
    }
    LstmStep {
        xh,
        gates,
        c_prev: c_prev.to_owned(),
        c,
        tanh_c,
        h,
    }
}

/// Backward through one step. Accumulates into `grad` and returns the
/// gradients with respect to `[x ; h_prev]` and `c_prev`.
pub(crate) fn lstm_backward(
    weights: &LstmWeights,
    step: &LstmStep,
    dh: ArrayView1<'_, f64>,
    dc_next: ArrayView1<'_, f64>,
    grad: &mut LstmWeights,
) -> (Array1<f64>, Array1<f64>) {
    let hd = weights.hidden();
    let mut dz = Array1::zeros(4 * hd);
    let mut dc_prev = Array1::zeros(hd);
    let g = &step.gates;
    for k in 0..hd {
        let (i, f, gg, o) = (g[k], g[hd + k], g[2 * hd + k], g[3 * hd + k]);
        let tc = step.tanh_c[k];
        let dc = dc_next[k] + dh[k] * o * (1.0 - tc * tc);
        dz[k] = dc * gg * i * (1.0 - i);
        dz[hd + k] = dc * step.c_prev[k] * f * (1.0 - f);
        dz[2 * hd + k] = dc * i * (1.0 - gg * gg);
        dz[3 * hd + k] = dh[k] * tc * o * (1.0 - o);
        dc_prev[k] = dc * f;
    }
    add_outer(&mut grad.w, dz.view(), step.xh.view());
    grad.b += &dz;
    (t_dot(&weights.w, dz.view()), dc_prev)
}

/// `m += a b^T`
pub(crate) fn add_outer(m: &mut Array2<f64>, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) {
    for (mut row, &ai) in m.outer_iter_mut().zip(a.iter()) {
        if ai != 0.0 {
            row.scaled_add(ai, &b);
        }
    }
}

/// `m^T v`
pub(crate) fn t_dot(m: &Array2<f64>, v: ArrayView1<'_, f64>) -> Array1<f64> {
    let mut out = Array1::zeros(m.ncols());
    for (row, &vi) in m.outer_iter().zip(v.iter()) {
        if vi != 0.0 {
            out.scaled_add(vi, &row);
        }
    }
    out
}
