//! `dU/dt = (A(U) - I) U` on a sparse graph, with explicit Euler or RK4
//! steps and exact reverse-mode gradients of the discrete trajectory.

use super::{DiffusionError, Mode, Scheme, StateMatrix};

/// Symmetric sparsity pattern in CSR form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Csr {
    pub offsets: Vec<usize>,
    pub targets: Vec<usize>,
}

impl Csr {
    pub fn from_adjacency(adj: &[Vec<usize>]) -> Self {
        let mut offsets = Vec::with_capacity(adj.len() + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for list in adj {
            targets.extend(list);
            offsets.push(targets.len());
        }
        Self { offsets, targets }
    }

    pub fn rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn row(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Attention scores `(W_K u_i) . (W_Q u_j) / sqrt(d)` written as
/// `u_i . (M u_j) / sqrt(d)` with `M = W_K^T W_Q`.
pub struct Diffusivity {
    mode: Mode,
    d: usize,
    m: Vec<f64>,
}

/// Everything the reverse pass needs from one derivative evaluation.
pub struct Stage {
    u: StateMatrix,
    a: Vec<f64>,
    /// `M u_j` per row (attention only).
    p: Option<StateMatrix>,
}

impl Diffusivity {
    pub fn new(mode: Mode, d: usize, w_k: &[f64], w_q: &[f64]) -> Self {
        let mut m = vec![0.0; d * d];
        if mode == Mode::Attention {
            for c in 0..d {
                for a in 0..d {
                    let wk = w_k[c * d + a];
                    axpy(wk, &w_q[c * d..(c + 1) * d], &mut m[a * d..(a + 1) * d]);
                }
            }
        }
        Self { mode, d, m }
    }

    /// `out_j = M u_j`.
    fn project(&self, u: &StateMatrix) -> StateMatrix {
        let d = self.d;
        let mut out = StateMatrix::zeros(u.rows, d);
        for j in 0..u.rows {
            let x = u.row(j);
            let o = out.row_mut(j);
            for (a, oa) in o.iter_mut().enumerate() {
                *oa = dot(&self.m[a * d..(a + 1) * d], x);
            }
        }
        out
    }

    /// Row-stochastic weights `A_ij` aligned with `csr.targets`.
    fn weights(&self, csr: &Csr, u: &StateMatrix) -> (Vec<f64>, Option<StateMatrix>) {
        let mut a = vec![0.0; csr.targets.len()];
        match self.mode {
            Mode::Uniform => {
                for i in 0..csr.rows() {
                    let r = csr.row(i);
                    let w = 1.0 / r.len() as f64;
                    a[r].fill(w);
                }
                (a, None)
            }
            Mode::Attention => {
                let p = self.project(u);
                let scale = 1.0 / (self.d as f64).sqrt();
                for i in 0..csr.rows() {
                    let r = csr.row(i);
                    if r.is_empty() {
                        continue;
                    }
                    let ui = u.row(i);
                    let mut max = f64::NEG_INFINITY;
                    for k in r.clone() {
                        a[k] = dot(ui, p.row(csr.targets[k])) * scale;
                        max = max.max(a[k]);
                    }
                    let mut sum = 0.0;
                    for k in r.clone() {
                        a[k] = (a[k] - max).exp();
                        sum += a[k];
                    }
                    for k in r {
                        a[k] /= sum;
                    }
                }
                (a, Some(p))
            }
        }
    }

    pub fn matrix(&self, csr: &Csr, u: &StateMatrix) -> Vec<f64> {
        self.weights(csr, u).0
    }

    /// `f(U) = A(U) U - U`; rows without neighbors stay fixed.
    fn eval(&self, csr: &Csr, u: StateMatrix) -> (StateMatrix, Stage) {
        let (a, p) = self.weights(csr, &u);
        let mut out = StateMatrix::zeros(u.rows, u.cols);
        for i in 0..csr.rows() {
            let r = csr.row(i);
            if r.is_empty() {
                continue;
            }
            let o = out.row_mut(i);
            for k in r {
                axpy(a[k], u.row(csr.targets[k]), o);
            }
            axpy(-1.0, u.row(i), o);
        }
        (out, Stage { u, a, p })
    }

    /// Adds `g^T df/dU` into `du` and `g^T df/dM` into `dm`.
    fn vjp(&self, csr: &Csr, s: &Stage, g: &StateMatrix, du: &mut StateMatrix, dm: &mut [f64]) {
        let (u, a) = (&s.u, &s.a);
        for i in 0..csr.rows() {
            let r = csr.row(i);
            if r.is_empty() {
                continue;
            }
            axpy(-1.0, g.row(i), du.row_mut(i));
            for k in r {
                axpy(a[k], g.row(i), du.row_mut(csr.targets[k]));
            }
        }
        let Some(p) = &s.p else { return };
        let d = self.d;
        let scale = 1.0 / (d as f64).sqrt();
        let mut dp = StateMatrix::zeros(u.rows, d);
        for i in 0..csr.rows() {
            let r = csr.row(i);
            if r.is_empty() {
                continue;
            }
            let gi = g.row(i);
            let da: Vec<f64> = r.clone().map(|k| dot(gi, u.row(csr.targets[k]))).collect();
            let mean: f64 = r.clone().zip(&da).map(|(k, x)| a[k] * x).sum();
            for (k, dak) in r.zip(da) {
                let ds = a[k] * (dak - mean) * scale;
                if ds == 0.0 {
                    continue;
                }
                let j = csr.targets[k];
                axpy(ds, p.row(j), du.row_mut(i));
                axpy(ds, u.row(i), dp.row_mut(j));
            }
        }
        // p_j = M u_j: du_j += M^T dp_j, dM += dp_j u_j^T.
        for j in 0..u.rows {
            let dpj = dp.row(j);
            let uj = u.row(j);
            let duj = du.row_mut(j);
            for (c, &x) in dpj.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                axpy(x, &self.m[c * d..(c + 1) * d], duj);
                axpy(x, uj, &mut dm[c * d..(c + 1) * d]);
            }
        }
    }

    /// Maps `dL/dM` to `(dL/dW_K, dL/dW_Q)`.
    pub fn split_grad(&self, dm: &[f64], w_k: &[f64], w_q: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d = self.d;
        let mut dw_k = vec![0.0; d * d];
        let mut dw_q = vec![0.0; d * d];
        // dW_K = W_Q dM^T, dW_Q = W_K dM.
        for a in 0..d {
            for c in 0..d {
                let (q, k) = (w_q[a * d + c], w_k[a * d + c]);
                for b in 0..d {
                    dw_k[a * d + b] += q * dm[b * d + c];
                }
                axpy(k, &dm[c * d..(c + 1) * d], &mut dw_q[a * d..(a + 1) * d]);
            }
        }
        (dw_k, dw_q)
    }
}

/// Stages of every step, kept for the reverse pass.
pub struct Tape {
    steps: Vec<Vec<Stage>>,
    h: f64,
    scheme: Scheme,
}

fn combine(base: &StateMatrix, alpha: f64, dir: &StateMatrix) -> StateMatrix {
    let mut out = base.clone();
    axpy(alpha, &dir.data, &mut out.data);
    out
}

fn scaled(alpha: f64, x: &StateMatrix) -> StateMatrix {
    StateMatrix { rows: x.rows, cols: x.cols, data: x.data.iter().map(|v| alpha * v).collect() }
}

pub fn integrate(
    f: &Diffusivity,
    csr: &Csr,
    u0: &StateMatrix,
    time: f64,
    steps: usize,
    scheme: Scheme,
    record: bool,
) -> Result<(StateMatrix, Option<Tape>), DiffusionError> {
    let h = if steps == 0 { 0.0 } else { time / steps as f64 };
    let mut u = u0.clone();
    let mut tape = Vec::new();
    for step in 0..steps {
        let (next, stages) = match scheme {
            Scheme::Euler => {
                let (k1, s1) = f.eval(csr, u);
                (combine(&s1.u, h, &k1), vec![s1])
            }
            Scheme::Rk4 => {
                let (k1, s1) = f.eval(csr, u);
                let (k2, s2) = f.eval(csr, combine(&s1.u, h / 2.0, &k1));
                let (k3, s3) = f.eval(csr, combine(&s1.u, h / 2.0, &k2));
                let (k4, s4) = f.eval(csr, combine(&s1.u, h, &k3));
                let mut next = s1.u.clone();
                for (idx, x) in next.data.iter_mut().enumerate() {
                    *x += h / 6.0
                        * (k1.data[idx] + 2.0 * k2.data[idx] + 2.0 * k3.data[idx] + k4.data[idx]);
                }
                (next, vec![s1, s2, s3, s4])
            }
        };
        if next.data.iter().any(|x| !x.is_finite()) {
            return Err(DiffusionError::Diverged { step: step + 1 });
        }
        if record {
            tape.push(stages);
        }
        u = next;
    }
    Ok((u, record.then_some(Tape { steps: tape, h, scheme })))
}

/// Pulls the cotangent of `U_T` back to `U_0`, accumulating `dL/dM`.
pub fn backward(f: &Diffusivity, csr: &Csr, tape: &Tape, g_final: StateMatrix, dm: &mut [f64]) -> StateMatrix {
    let h = tape.h;
    let mut g = g_final;
    for stages in tape.steps.iter().rev() {
        match tape.scheme {
            Scheme::Euler => {
                // U' = U + h f(U).
                let mut du = g.clone();
                f.vjp(csr, &stages[0], &scaled(h, &g), &mut du, dm);
                g = du;
            }
            Scheme::Rk4 => {
                // Stage inputs: y4 = U + h k3, y3 = U + h/2 k2, y2 = U + h/2 k1.
                let mut du = g.clone();
                let mut gk = scaled(h / 6.0, &g);
                for (stage, weight, reach) in [(3, h / 3.0, h), (2, h / 3.0, h / 2.0), (1, h / 6.0, h / 2.0)] {
                    let mut gy = StateMatrix::zeros(g.rows, g.cols);
                    f.vjp(csr, &stages[stage], &gk, &mut gy, dm);
                    axpy(1.0, &gy.data, &mut du.data);
                    // Cotangent of the previous stage's slope.
                    gk = scaled(weight, &g);
                    axpy(reach, &gy.data, &mut gk.data);
                }
                f.vjp(csr, &stages[0], &gk, &mut du, dm);
                g = du;
            }
        }
    }
    g
}
