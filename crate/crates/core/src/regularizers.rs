//! Smoothness terms over spatial gradients `C = ∇F`.
//!
//! Every term returns its scalar value together with `∂value/∂C`. The
//! unrolled term runs `T` soft-threshold / multiplier-update steps with the
//! prediction held fixed and then penalizes the squared distance between
//! `C` and the sparsified targets `Q⁽ᵗ⁾ + β⁽ᵗ⁾`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::GradField;

/// Hyperparameters shared by all smoothness terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegularizerConfig {
    /// TV weight; for the unrolled term it sets the threshold `lambda / rho`.
    pub lambda: f64,
    pub rho: f64,
    /// Multiplier update rate.
    pub eta: f64,
    /// Number of unrolled update steps `T`.
    pub steps: usize,
    pub huber_k: f64,
    pub charbonnier_eps: f64,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        RegularizerConfig {
            lambda: 0.01,
            rho: 1.0,
            eta: 0.5,
            steps: 2,
            huber_k: 0.01,
            charbonnier_eps: 0.01,
        }
    }
}

impl RegularizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(invalid("lambda", format!("must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(invalid("rho", format!("must be finite and > 0, got {}", self.rho)));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(invalid("eta", format!("must be finite and > 0, got {}", self.eta)));
        }
        if self.steps == 0 {
            return Err(invalid("steps", "must be >= 1"));
        }
        if !(self.huber_k > 0.0) || !self.huber_k.is_finite() {
            return Err(invalid("huber_k", format!("must be finite and > 0, got {}", self.huber_k)));
        }
        if !(self.charbonnier_eps > 0.0) || !self.charbonnier_eps.is_finite() {
            return Err(invalid(
                "charbonnier_eps",
                format!("must be finite and > 0, got {}", self.charbonnier_eps),
            ));
        }
        if !self.threshold().is_finite() {
            return Err(invalid("lambda", "lambda / rho overflows"));
        }
        Ok(())
    }

    /// Soft-threshold level `κ = λ/ρ`.
    pub fn threshold(&self) -> f64 {
        self.lambda / self.rho
    }
}

/// The sequence `{Q⁽ᵗ⁾, β⁽ᵗ⁾}` for `t = 0..T-1`. Treated as constants when
/// differentiating the unrolled cost.
#[derive(Clone, Debug, PartialEq)]
pub struct UnrollState {
    q_seq: Vec<GradField>,
    beta_seq: Vec<GradField>,
}

impl UnrollState {
    pub fn q_seq(&self) -> &[GradField] {
        &self.q_seq
    }

    pub fn beta_seq(&self) -> &[GradField] {
        &self.beta_seq
    }

    pub fn steps(&self) -> usize {
        self.q_seq.len()
    }

    /// Final multiplier, used to warm-start the next recursion.
    pub fn last_beta(&self) -> &GradField {
        self.beta_seq.last().expect("unroll state has at least one step")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SmoothnessResult {
    pub value: f64,
    pub grad_wrt_c: GradField,
}

/// `S_κ(x)`: 0 when `|x| < κ`, otherwise `x - κ·sign(x)`.
#[inline]
pub fn soft_threshold(x: f64, kappa: f64) -> f64 {
    debug_assert!(kappa >= 0.0);
    if x.abs() < kappa {
        0.0
    } else {
        x - kappa * x.signum()
    }
}

/// Runs the recursion from `β⁽⁻¹⁾ = 0`.
pub fn unroll_updates(c: &GradField, cfg: &RegularizerConfig) -> Result<UnrollState> {
    unroll_updates_from(c, cfg, None)
}

/// Runs the recursion from an explicit starting multiplier (warm start).
pub fn unroll_updates_from(
    c: &GradField,
    cfg: &RegularizerConfig,
    beta_init: Option<&GradField>,
) -> Result<UnrollState> {
    cfg.validate()?;
    let kappa = cfg.threshold();
    let eta = cfg.eta;
    let mut beta = match beta_init {
        Some(b) => {
            c.check_same_shape(b)?;
            b.clone()
        }
        None => GradField::zeros(c.shape()),
    };
    let mut q_seq = Vec::with_capacity(cfg.steps);
    let mut beta_seq = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let q = c.zip_map(&beta, |ci, bi| soft_threshold(ci - bi, kappa))?;
        let q_minus_c = q.zip_map(c, |qi, ci| qi - ci)?;
        beta = beta.zip_map(&q_minus_c, |bi, d| bi + eta * d)?;
        q_seq.push(q);
        beta_seq.push(beta.clone());
    }
    Ok(UnrollState { q_seq, beta_seq })
}

/// `(ρ/2)(1/T) Σₜ ‖Q⁽ᵗ⁾ + β⁽ᵗ⁾ − C‖²` with its gradient w.r.t. `C`, holding
/// the state fixed.
pub fn unrolled_smoothness(
    c: &GradField,
    state: &UnrollState,
    cfg: &RegularizerConfig,
) -> Result<SmoothnessResult> {
    let steps = state.steps();
    if steps == 0 {
        return Err(invalid("state", "empty unroll state"));
    }
    for (q, b) in state.q_seq.iter().zip(&state.beta_seq) {
        c.check_same_shape(q)?;
        c.check_same_shape(b)?;
    }
    let scale = cfg.rho / steps as f64;
    let mut value = 0.0;
    let mut grad = GradField::zeros(c.shape());
    for (q, b) in state.q_seq.iter().zip(&state.beta_seq) {
        let residual = q.zip_map(b, |qi, bi| qi + bi)?.zip_map(c, |t, ci| t - ci)?;
        value += residual.iter().map(|r| r * r).sum::<f64>();
        grad = grad.zip_map(&residual, |g, r| g - r)?;
    }
    Ok(SmoothnessResult {
        value: 0.5 * scale * value,
        grad_wrt_c: grad.scale(scale),
    })
}

/// The unrolled cost with gradients propagated through the soft-threshold
/// and multiplier recursion instead of holding the iterates fixed.
///
/// The recursion is elementwise, so the derivative of each iterate with
/// respect to its own `Cᵢ` is tracked alongside the forward values.
pub fn unrolled_smoothness_through(c: &GradField, cfg: &RegularizerConfig) -> Result<SmoothnessResult> {
    cfg.validate()?;
    let kappa = cfg.threshold();
    let eta = cfg.eta;
    let steps = cfg.steps;
    let scale = cfg.rho / steps as f64;
    let mut value = 0.0;
    let grad = c.map(|ci| {
        let (mut beta, mut dbeta) = (0.0, 0.0);
        let mut g = 0.0;
        for _ in 0..steps {
            let x = ci - beta;
            let q = soft_threshold(x, kappa);
            let dq = if x.abs() < kappa { 0.0 } else { 1.0 - dbeta };
            beta += eta * (q - ci);
            dbeta += eta * (dq - 1.0);
            let r = q + beta - ci;
            g += r * (dq + dbeta - 1.0);
        }
        scale * g
    });
    for ci in c.iter() {
        let mut beta = 0.0;
        for _ in 0..steps {
            let q = soft_threshold(ci - beta, kappa);
            beta += eta * (q - ci);
            let r = q + beta - ci;
            value += r * r;
        }
    }
    Ok(SmoothnessResult {
        value: 0.5 * scale * value,
        grad_wrt_c: grad,
    })
}

/// `Σ|cᵢ|` with the subgradient `sign(c)`, `sign(0) = 0`.
pub fn tv_smoothness(c: &GradField) -> SmoothnessResult {
    SmoothnessResult {
        value: c.iter().map(f64::abs).sum(),
        grad_wrt_c: c.map(|x| if x == 0.0 { 0.0 } else { x.signum() }),
    }
}

#[inline]
pub fn huber(x: f64, k: f64) -> f64 {
    if x.abs() < k {
        0.5 * x * x
    } else {
        k * x.abs() - 0.5 * k * k
    }
}

pub fn huber_smoothness(c: &GradField, k: f64) -> Result<SmoothnessResult> {
    if !(k > 0.0) {
        return Err(invalid("huber_k", format!("must be > 0, got {k}")));
    }
    Ok(SmoothnessResult {
        value: c.iter().map(|x| huber(x, k)).sum(),
        grad_wrt_c: c.map(|x| x.clamp(-k, k)),
    })
}

#[inline]
pub fn charbonnier(x: f64, eps: f64) -> f64 {
    (x * x + eps * eps).sqrt()
}

pub fn charbonnier_smoothness(c: &GradField, eps: f64) -> Result<SmoothnessResult> {
    if !(eps > 0.0) {
        return Err(invalid("charbonnier_eps", format!("must be > 0, got {eps}")));
    }
    Ok(SmoothnessResult {
        value: c.iter().map(|x| charbonnier(x, eps)).sum(),
        grad_wrt_c: c.map(|x| x / charbonnier(x, eps)),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegularizerKind {
    Tv,
    Huber,
    Charbonnier,
    Unrolled,
}

impl RegularizerKind {
    pub const ALL: [RegularizerKind; 4] = [
        RegularizerKind::Tv,
        RegularizerKind::Huber,
        RegularizerKind::Charbonnier,
        RegularizerKind::Unrolled,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RegularizerKind::Tv => "tv",
            RegularizerKind::Huber => "huber",
            RegularizerKind::Charbonnier => "charbonnier",
            RegularizerKind::Unrolled => "unrolled",
        }
    }
}

impl fmt::Display for RegularizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RegularizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RegularizerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid("regularizer", format!("unknown regularizer `{s}`")))
    }
}

/// How the unrolled cost is differentiated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnrollGradient {
    /// Iterates are constants (detached buffers).
    #[default]
    Frozen,
    /// Differentiate through the soft-threshold recursion.
    Through,
}

/// A smoothness term ready to be evaluated on the current gradients.
///
/// TV, Huber and Charbonnier are weighted by `lambda`; the unrolled term
/// carries `lambda` inside its threshold.
#[derive(Clone, Debug)]
pub struct Smoothness {
    pub kind: RegularizerKind,
    pub config: RegularizerConfig,
    pub gradient: UnrollGradient,
    pub warm_start: bool,
    carried_beta: Option<GradField>,
}

impl Smoothness {
    pub fn new(kind: RegularizerKind, config: RegularizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Smoothness {
            kind,
            config,
            gradient: UnrollGradient::Frozen,
            warm_start: false,
            carried_beta: None,
        })
    }

    pub fn with_unroll_gradient(mut self, gradient: UnrollGradient) -> Self {
        self.gradient = gradient;
        self
    }

    pub fn with_warm_start(mut self, warm_start: bool) -> Self {
        self.warm_start = warm_start;
        self
    }

    /// Evaluates the term at `c`. For the unrolled term the state is rebuilt
    /// from `c` (or from the carried multiplier when warm-starting) and
    /// returned so callers can reuse it with [`unrolled_smoothness`].
    pub fn evaluate(&mut self, c: &GradField) -> Result<(SmoothnessResult, Option<UnrollState>)> {
        let lambda = self.config.lambda;
        let weighted = |r: SmoothnessResult| SmoothnessResult {
            value: lambda * r.value,
            grad_wrt_c: r.grad_wrt_c.scale(lambda),
        };
        match self.kind {
            RegularizerKind::Tv => Ok((weighted(tv_smoothness(c)), None)),
            RegularizerKind::Huber => Ok((weighted(huber_smoothness(c, self.config.huber_k)?), None)),
            RegularizerKind::Charbonnier => Ok((
                weighted(charbonnier_smoothness(c, self.config.charbonnier_eps)?),
                None,
            )),
            RegularizerKind::Unrolled => {
                let init = if self.warm_start {
                    self.carried_beta.as_ref()
                } else {
                    None
                };
                let state = unroll_updates_from(c, &self.config, init)?;
                if self.warm_start {
                    self.carried_beta = Some(state.last_beta().clone());
                }
                let result = match self.gradient {
                    UnrollGradient::Frozen => unrolled_smoothness(c, &state, &self.config)?,
                    UnrollGradient::Through if !self.warm_start => {
                        unrolled_smoothness_through(c, &self.config)?
                    }
                    UnrollGradient::Through => {
                        return Err(invalid(
                            "unroll_gradient",
                            "`through` is only supported without warm start",
                        ))
                    }
                };
                Ok((result, Some(state)))
            }
        }
    }
}
