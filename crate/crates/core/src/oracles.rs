//! Reference solvers for 1D TV denoising, `½‖f − y‖² + λ‖∇f‖₁`.
//!
//! [`admm_denoise`] is classic scaled-form ADMM on the split `Q = ∇f` with
//! an exact tridiagonal `f`-update. [`exact_tv_denoise_1d`] is Condat's
//! direct (taut-string) algorithm and serves as ground truth.

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::field::{spatial_gradient, Field, GradField, Shape};
use crate::regularizers::{soft_threshold, unroll_updates, RegularizerConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiseProblem {
    pub y: Field,
    pub lambda: f64,
}

impl DenoiseProblem {
    pub fn new(y: Field, lambda: f64) -> Result<Self> {
        if !matches!(y.shape(), Shape::Line(n) if n > 0) {
            return Err(Error::ShapeMismatch {
                expected: "non-empty 1D signal".into(),
                actual: y.shape().to_string(),
            });
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(invalid("lambda", format!("must be finite and >= 0, got {lambda}")));
        }
        Ok(DenoiseProblem { y, lambda })
    }

    pub fn objective(&self, f: &[f64]) -> f64 {
        let fit: f64 = f.iter().zip(self.y.values()).map(|(a, b)| (a - b).powi(2)).sum();
        let tv: f64 = f.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
        0.5 * fit + self.lambda * tv
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdmmOptions {
    pub rho: f64,
    pub eta: f64,
    pub iters: usize,
    /// Keep every `(Q, β)` pair in the trace.
    pub record_iterates: bool,
}

impl Default for AdmmOptions {
    fn default() -> Self {
        AdmmOptions {
            rho: 1.0,
            eta: 1.0,
            iters: 500,
            record_iterates: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdmmRecord {
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub objective: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct AdmmTrace {
    pub records: Vec<AdmmRecord>,
    /// `(Q, β)` after each iteration when requested.
    pub iterates: Vec<(Vec<f64>, Vec<f64>)>,
}

impl AdmmTrace {
    pub fn converged(&self, tol: f64) -> bool {
        self.records
            .last()
            .is_some_and(|r| r.primal_residual < tol && r.dual_residual < tol)
    }
}

fn forward_diff(f: &[f64]) -> Vec<f64> {
    let mut d = vec![0.0; f.len()];
    for i in 1..f.len() {
        d[i - 1] = f[i] - f[i - 1];
    }
    d
}

/// `Dᵀv` for the forward difference with a pinned last row.
fn forward_diff_adjoint(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut out = vec![0.0; n];
    for i in 0..n.saturating_sub(1) {
        out[i] -= v[i];
        out[i + 1] += v[i];
    }
    out
}

/// LDLᵀ-free Thomas factorization of `I + ρDᵀD`.
struct TridiagonalSolver {
    lower: Vec<f64>,
    diag: Vec<f64>,
}

impl TridiagonalSolver {
    fn new(n: usize, rho: f64) -> Self {
        let degree = |i: usize| -> f64 {
            if n == 1 {
                0.0
            } else if i == 0 || i == n - 1 {
                1.0
            } else {
                2.0
            }
        };
        let off = -rho;
        let mut diag = Vec::with_capacity(n);
        let mut lower = vec![0.0; n];
        for i in 0..n {
            let a = 1.0 + rho * degree(i);
            if i == 0 {
                diag.push(a);
            } else {
                let m = off / diag[i - 1];
                lower[i] = m;
                diag.push(a - m * off);
            }
        }
        TridiagonalSolver { lower, diag }
    }

    fn solve(&self, rhs: &mut [f64], off: f64) {
        let n = rhs.len();
        for i in 1..n {
            rhs[i] -= self.lower[i] * rhs[i - 1];
        }
        rhs[n - 1] /= self.diag[n - 1];
        for i in (0..n - 1).rev() {
            rhs[i] = (rhs[i] - off * rhs[i + 1]) / self.diag[i];
        }
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scaled-form ADMM started from `f = y`, `β = 0`. Each iteration updates
/// `Q`, then `β`, then solves for `f`.
pub fn admm_denoise(p: &DenoiseProblem, options: AdmmOptions) -> Result<(Field, AdmmTrace)> {
    let AdmmOptions {
        rho,
        eta,
        iters,
        record_iterates,
    } = options;
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(invalid("rho", format!("must be finite and > 0, got {rho}")));
    }
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(invalid("eta", format!("must be finite and > 0, got {eta}")));
    }
    if iters == 0 {
        return Err(invalid("iters", "must be >= 1"));
    }
    let y = p.y.values();
    let n = y.len();
    let kappa = p.lambda / rho;
    let solver = TridiagonalSolver::new(n, rho);

    let mut f = y.to_vec();
    let mut df = forward_diff(&f);
    let mut beta = vec![0.0; n];
    let mut q_prev = df.clone();
    let mut trace = AdmmTrace::default();

    for _ in 0..iters {
        let q: Vec<f64> = df
            .iter()
            .zip(&beta)
            .map(|(d, b)| soft_threshold(d - b, kappa))
            .collect();
        for ((b, qi), d) in beta.iter_mut().zip(&q).zip(&df) {
            *b += eta * (qi - d);
        }
        if record_iterates {
            trace.iterates.push((q.clone(), beta.clone()));
        }

        let target: Vec<f64> = q.iter().zip(&beta).map(|(qi, b)| qi + b).collect();
        let mut rhs = forward_diff_adjoint(&target);
        for (r, yi) in rhs.iter_mut().zip(y) {
            *r = yi + rho * *r;
        }
        solver.solve(&mut rhs, -rho);
        f = rhs;
        df = forward_diff(&f);

        let primal: Vec<f64> = q.iter().zip(&df).map(|(a, b)| a - b).collect();
        let dq: Vec<f64> = q.iter().zip(&q_prev).map(|(a, b)| a - b).collect();
        trace.records.push(AdmmRecord {
            primal_residual: norm2(&primal[..n.saturating_sub(1)]),
            dual_residual: rho * norm2(&forward_diff_adjoint(&dq)),
            objective: p.objective(&f),
        });
        q_prev = q;
    }
    Ok((Field::line(f)?, trace))
}

/// Exact minimizer of `½‖f − y‖² + λ Σ|fᵢ₊₁ − fᵢ|` (Condat's direct
/// algorithm, linear time in practice).
pub fn exact_tv_denoise_1d(p: &DenoiseProblem) -> Result<Field> {
    let input = p.y.values();
    let lambda = p.lambda;
    let width = input.len();
    let mut output = vec![0.0; width];
    if lambda == 0.0 {
        return Field::line(input.to_vec());
    }

    let last = width - 1;
    let (mut k, mut k0, mut kplus, mut kminus) = (0usize, 0usize, 0usize, 0usize);
    let mut umin = lambda;
    let mut umax = -lambda;
    let mut vmin = input[0] - lambda;
    let mut vmax = input[0] + lambda;
    let twolambda = 2.0 * lambda;
    let minlambda = -lambda;

    loop {
        while k == last {
            if umin < 0.0 {
                loop {
                    output[k0] = vmin;
                    k0 += 1;
                    if k0 > kminus {
                        break;
                    }
                }
                k = k0;
                kminus = k;
                vmin = input[k];
                umin = lambda;
                umax = vmin + umin - vmax;
            } else if umax > 0.0 {
                loop {
                    output[k0] = vmax;
                    k0 += 1;
                    if k0 > kplus {
                        break;
                    }
                }
                k = k0;
                kplus = k;
                vmax = input[k];
                umax = minlambda;
                umin = vmax + umax - vmin;
            } else {
                vmin += umin / (k - k0 + 1) as f64;
                loop {
                    output[k0] = vmin;
                    k0 += 1;
                    if k0 > k {
                        break;
                    }
                }
                return Field::line(output);
            }
        }
        umin += input[k + 1] - vmin;
        if umin < minlambda {
            loop {
                output[k0] = vmin;
                k0 += 1;
                if k0 > kminus {
                    break;
                }
            }
            k = k0;
            kminus = k;
            kplus = k;
            vmin = input[k];
            vmax = vmin + twolambda;
            umin = lambda;
            umax = minlambda;
            continue;
        }
        umax += input[k + 1] - vmax;
        if umax > lambda {
            loop {
                output[k0] = vmax;
                k0 += 1;
                if k0 > kplus {
                    break;
                }
            }
            k = k0;
            kminus = k;
            kplus = k;
            vmax = input[k];
            vmin = vmax - twolambda;
            umin = lambda;
            umax = minlambda;
            continue;
        }
        k += 1;
        if umin >= lambda {
            kminus = k;
            vmin += (umin - lambda) / (kminus - k0 + 1) as f64;
            umin = lambda;
        }
        if umax <= minlambda {
            kplus = k;
            vmax += (umax + lambda) / (kplus - k0 + 1) as f64;
            umax = minlambda;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepComparison {
    pub step: usize,
    /// `max|Q_unrolled − Q_admm|` with `F` frozen inside ADMM.
    pub frozen_q_diff: f64,
    pub frozen_beta_diff: f64,
    /// Same against ADMM that also refines `F`.
    pub full_q_diff: f64,
    pub full_beta_diff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UnrollAdmmReport {
    pub steps: Vec<StepComparison>,
}

impl UnrollAdmmReport {
    pub fn max_frozen_diff(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| s.frozen_q_diff.max(s.frozen_beta_diff))
            .fold(0.0, f64::max)
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Runs the unrolled `Q/β` recursion on `∇F` and compares it with ADMM's
/// `Q/β` iterates, once with `F` frozen and once with ADMM refining `F`
/// (data term `½‖f − F‖²`), both from `β = 0`.
pub fn unroll_vs_admm_diagnostic(c_source: &Field, cfg: &RegularizerConfig) -> Result<UnrollAdmmReport> {
    cfg.validate()?;
    let problem = DenoiseProblem::new(c_source.clone(), cfg.lambda)?;
    let c: GradField = spatial_gradient(c_source);
    let state = unroll_updates(&c, cfg)?;

    let frozen = frozen_admm_iterates(c_source.values(), cfg.threshold(), cfg.eta, cfg.steps);
    let (_, full) = admm_denoise(
        &problem,
        AdmmOptions {
            rho: cfg.rho,
            eta: cfg.eta,
            iters: cfg.steps,
            record_iterates: true,
        },
    )?;

    let steps = (0..cfg.steps)
        .map(|t| {
            let q = state.q_seq()[t].components()[0].values();
            let b = state.beta_seq()[t].components()[0].values();
            StepComparison {
                step: t,
                frozen_q_diff: max_abs_diff(q, &frozen[t].0),
                frozen_beta_diff: max_abs_diff(b, &frozen[t].1),
                full_q_diff: max_abs_diff(q, &full.iterates[t].0),
                full_beta_diff: max_abs_diff(b, &full.iterates[t].1),
            }
        })
        .collect();
    Ok(UnrollAdmmReport { steps })
}

/// ADMM `Q`/`β` updates with the `F`-update skipped.
fn frozen_admm_iterates(f: &[f64], kappa: f64, eta: f64, iters: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let df = forward_diff(f);
    let mut beta = vec![0.0; f.len()];
    (0..iters)
        .map(|_| {
            let q: Vec<f64> = df
                .iter()
                .zip(&beta)
                .map(|(d, b)| soft_threshold(d - b, kappa))
                .collect();
            for ((b, qi), d) in beta.iter_mut().zip(&q).zip(&df) {
                *b += eta * (qi - d);
            }
            (q, beta.clone())
        })
        .collect()
}
