//! Four-layer fully connected scalar-to-scalar predictor with hand-written
//! reverse mode, plain gradient descent and a central-difference checker.

use std::fmt;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2};
use rand::distributions::{Distribution, Uniform};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::Field;

/// Number of affine layers.
pub const LAYERS: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `out × in`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(input: usize, output: usize) -> Self {
        Dense {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Weights and biases of the predictor; also used for their gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    layers: Vec<Dense>,
}

/// Location of a single scalar parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamIndex {
    Weight { layer: usize, row: usize, col: usize },
    Bias { layer: usize, row: usize },
}

impl fmt::Display for ParamIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamIndex::Weight { layer, row, col } => write!(f, "W{layer}[{row},{col}]"),
            ParamIndex::Bias { layer, row } => write!(f, "b{layer}[{row}]"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub hidden_width: usize,
    /// Multiplier on the fan-in uniform bound `1/√fan_in`.
    pub init_scale: f64,
    /// Extra multiplier on the first layer's bound; larger values give the
    /// hidden features sharper transitions over the input domain.
    pub input_scale: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden_width: 64,
            init_scale: 1.0,
            input_scale: 1.0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_width == 0 {
            return Err(invalid("hidden_width", "must be >= 1"));
        }
        if !(self.init_scale > 0.0) || !self.init_scale.is_finite() {
            return Err(invalid("init_scale", format!("must be finite and > 0, got {}", self.init_scale)));
        }
        if !(self.input_scale > 0.0) || !self.input_scale.is_finite() {
            return Err(invalid("input_scale", format!("must be finite and > 0, got {}", self.input_scale)));
        }
        Ok(())
    }

    pub fn widths(&self) -> [usize; LAYERS + 1] {
        let w = self.hidden_width;
        [1, w, w, w, 1]
    }
}

impl MlpParams {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.len() != LAYERS {
            return Err(invalid("layers", format!("expected {LAYERS} layers, got {}", layers.len())));
        }
        let mut input = 1;
        for (i, l) in layers.iter().enumerate() {
            let (out, inp) = l.weight.dim();
            if inp != input || l.bias.len() != out {
                return Err(Error::ShapeMismatch {
                    expected: format!("layer {i} with {input} inputs and matching bias"),
                    actual: format!("weight {out}x{inp}, bias {}", l.bias.len()),
                });
            }
            input = out;
        }
        if input != 1 {
            return Err(invalid("layers", "output layer must have width 1"));
        }
        let p = MlpParams { layers };
        if let Some(idx) = p.first_non_finite() {
            return Err(Error::NonFinite {
                index: idx,
                value: p.get(idx),
            });
        }
        Ok(p)
    }

    /// Uniform `±scale/√fan_in` initialization for weights and biases from a
    /// seeded ChaCha stream.
    pub fn init(config: &MlpConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = config.widths();
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (input, output) = (w[0], w[1]);
                let extra = if i == 0 { config.input_scale } else { 1.0 };
                let bound = extra * config.init_scale / (input as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound);
                let weight = Array2::from_shape_fn((output, input), |_| dist.sample(&mut rng));
                let bias = Array1::from_shape_fn(output, |_| dist.sample(&mut rng));
                Dense { weight, bias }
            })
            .collect();
        MlpParams::new(layers)
    }

    pub fn zeros_like(&self) -> Self {
        MlpParams {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.weight.ncols(), l.weight.nrows()))
                .collect(),
        }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(Dense::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat iteration order: layer by layer, weights row-major then bias.
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
    }

    fn locate(&self, mut flat: usize) -> (usize, Option<(usize, usize)>, usize) {
        for (li, l) in self.layers.iter().enumerate() {
            if flat < l.weight.len() {
                let cols = l.weight.ncols();
                return (li, Some((flat / cols, flat % cols)), 0);
            }
            flat -= l.weight.len();
            if flat < l.bias.len() {
                return (li, None, flat);
            }
            flat -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn index(&self, flat: usize) -> ParamIndex {
        match self.locate(flat) {
            (layer, Some((row, col)), _) => ParamIndex::Weight { layer, row, col },
            (layer, None, row) => ParamIndex::Bias { layer, row },
        }
    }

    pub fn get(&self, flat: usize) -> f64 {
        match self.locate(flat) {
            (l, Some((r, c)), _) => self.layers[l].weight[[r, c]],
            (l, None, r) => self.layers[l].bias[r],
        }
    }

    pub fn set(&mut self, flat: usize, value: f64) {
        match self.locate(flat) {
            (l, Some((r, c)), _) => self.layers[l].weight[[r, c]] = value,
            (l, None, r) => self.layers[l].bias[r] = value,
        }
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&self, factor: f64) -> Self {
        MlpParams {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weight: &l.weight * factor,
                    bias: &l.bias * factor,
                })
                .collect(),
        }
    }

    fn first_non_finite(&self) -> Option<usize> {
        self.iter().position(|v| !v.is_finite())
    }

    /// Bound on `|net(x)|` for any input: hidden activations lie in
    /// `[-1, 1]`, so the output is at most `Σ|W₄| + |b₄|`.
    pub fn output_bound(&self) -> f64 {
        let last = &self.layers[LAYERS - 1];
        last.weight.iter().map(|w| w.abs()).sum::<f64>() + last.bias[0].abs()
    }

    pub fn forward(&self, xs: &[f64]) -> Vec<f64> {
        self.forward_cached(xs).output().to_vec()
    }

    /// Forward pass keeping every activation for a later backward pass.
    pub fn forward_cached(&self, xs: &[f64]) -> ForwardCache {
        let input = Array2::from_shape_vec((xs.len(), 1), xs.to_vec()).expect("column vector");
        let mut activations = Vec::with_capacity(LAYERS + 1);
        activations.push(input);
        for (i, l) in self.layers.iter().enumerate() {
            let prev = activations.last().expect("input pushed");
            let mut z = matmul(prev.view(), l.weight.t());
            let bias = l.bias.as_slice().expect("owned bias");
            let hidden = i + 1 < LAYERS;
            for row in z.as_slice_mut().expect("fresh product is contiguous").chunks_exact_mut(bias.len()) {
                for (v, b) in row.iter_mut().zip(bias) {
                    *v += b;
                    if hidden {
                        *v = tanh(*v);
                    }
                }
            }
            activations.push(z);
        }
        ForwardCache { activations }
    }

    /// Gradients of `Σᵢ upstreamᵢ · net(xᵢ)` w.r.t. every parameter.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<MlpParams> {
        let batch = cache.activations[0].nrows();
        if upstream.len() != batch {
            return Err(Error::ShapeMismatch {
                expected: format!("[{batch}]"),
                actual: format!("[{}]", upstream.len()),
            });
        }
        let mut delta = Array2::from_shape_vec((batch, 1), upstream.to_vec()).expect("column vector");
        let mut grads = Vec::with_capacity(LAYERS);
        for li in (0..LAYERS).rev() {
            let prev = &cache.activations[li];
            let weight_grad = matmul(delta.t(), prev.view());
            let width = delta.ncols();
            let mut bias_grad = Array1::zeros(width);
            let acc = bias_grad.as_slice_mut().expect("owned");
            for row in delta.as_slice().expect("contiguous delta").chunks_exact(width) {
                for (a, d) in acc.iter_mut().zip(row) {
                    *a += d;
                }
            }
            if li > 0 {
                let mut back = matmul(delta.view(), self.layers[li].weight.view());
                let act = prev.as_slice().expect("contiguous activations");
                for (d, a) in back.as_slice_mut().expect("fresh product is contiguous").iter_mut().zip(act) {
                    *d *= 1.0 - a * a;
                }
                delta = back;
            }
            grads.push(Dense {
                weight: weight_grad,
                bias: bias_grad,
            });
        }
        grads.reverse();
        Ok(MlpParams { layers: grads })
    }
}

/// Row-major product, so callers can walk rows as slices.
fn matmul(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let mut c = Array2::zeros((a.nrows(), b.ncols()));
    general_mat_mul(1.0, &a, &b, 0.0, &mut c);
    c
}

/// `tanh` from a rational fit near zero and `exp` elsewhere; within a few
/// ulps of libm and much cheaper than going through `expm1`.
#[inline]
fn tanh(x: f64) -> f64 {
    const P: [f64; 3] = [-9.643_991_794_250_523e-1, -9.928_772_310_019_186e1, -1.614_687_684_417_084_5e3];
    const Q: [f64; 3] = [1.128_116_784_916_329_3e2, 2.235_488_390_601_006e3, 4.844_063_053_251_255e3];
    let a = x.abs();
    if a < 0.625 {
        let s = x * x;
        let p = (P[0] * s + P[1]) * s + P[2];
        let q = ((s + Q[0]) * s + Q[1]) * s + Q[2];
        x + x * s * p / q
    } else {
        (1.0 - 2.0 / ((2.0 * a).exp() + 1.0)).copysign(x)
    }
}

pub struct ForwardCache {
    activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations[LAYERS]
            .as_slice()
            .expect("output activations are contiguous")
    }
}

/// `f_i = net(x_i)`.
pub fn mlp_forward(params: &MlpParams, xs: &[f64]) -> Result<Field> {
    if let Some((index, &value)) = xs.iter().enumerate().find(|(_, x)| !x.is_finite()) {
        return Err(Error::NonFinite { index, value });
    }
    Field::line(params.forward(xs))
}

pub fn mlp_backward(params: &MlpParams, xs: &[f64], upstream: &Field) -> Result<MlpParams> {
    let cache = params.forward_cached(xs);
    params.backward(&cache, upstream.values())
}

/// `θ ← θ − lr·g`.
pub fn gd_step(params: &MlpParams, grads: &MlpParams, lr: f64) -> Result<MlpParams> {
    if !(lr >= 0.0) || !lr.is_finite() {
        return Err(invalid("lr", format!("must be finite and >= 0, got {lr}")));
    }
    if grads.layers.len() != params.layers.len()
        || grads
            .layers
            .iter()
            .zip(&params.layers)
            .any(|(g, p)| g.weight.dim() != p.weight.dim() || g.bias.len() != p.bias.len())
    {
        return Err(Error::ShapeMismatch {
            expected: "gradients shaped like the parameters".into(),
            actual: "different layer shapes".into(),
        });
    }
    if let Some(i) = grads.first_non_finite() {
        return Err(Error::NonFiniteGradient {
            location: grads.index(i).to_string(),
        });
    }
    let layers = params
        .layers
        .iter()
        .zip(&grads.layers)
        .map(|(p, g)| Dense {
            weight: &p.weight - &(&g.weight * lr),
            bias: &p.bias - &(&g.bias * lr),
        })
        .collect();
    let next = MlpParams { layers };
    if let Some(i) = next.first_non_finite() {
        return Err(Error::NonFiniteGradient {
            location: format!("update of {}", next.index(i)),
        });
    }
    Ok(next)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Stencil {
    /// `(L(θ+h) − L(θ−h)) / 2h`
    #[default]
    TwoPoint,
    /// `(−L(θ+2h) + 8L(θ+h) − 8L(θ−h) + L(θ−2h)) / 12h`
    FourPoint,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    pub stencil: Stencil,
    /// Probe a random subsample of this many parameters when the model is
    /// larger.
    pub max_probes: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            stencil: Stencil::TwoPoint,
            max_probes: 10_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param_index: Option<ParamIndex>,
    pub probes: usize,
    /// Probes dropped because the loss was undefined at a stencil point.
    pub skipped: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Compares `analytic` against central differences of `loss_fn` around
/// `params`.
pub fn finite_diff_check(
    params: &MlpParams,
    analytic: &MlpParams,
    loss_fn: impl Fn(&MlpParams) -> f64,
    options: GradCheckOptions,
) -> Result<GradCheckReport> {
    finite_diff_check_partial(params, analytic, |p| Some(loss_fn(p)), options)
}

/// Like [`finite_diff_check`], but a probe is skipped whenever `loss_fn`
/// returns `None` at any of its stencil points (e.g. a kink was crossed).
pub fn finite_diff_check_partial(
    params: &MlpParams,
    analytic: &MlpParams,
    loss_fn: impl Fn(&MlpParams) -> Option<f64>,
    options: GradCheckOptions,
) -> Result<GradCheckReport> {
    if !(options.step > 0.0) {
        return Err(invalid("step", format!("must be > 0, got {}", options.step)));
    }
    let n = params.len();
    if analytic.len() != n {
        return Err(Error::ShapeMismatch {
            expected: format!("{n} gradient entries"),
            actual: format!("{}", analytic.len()),
        });
    }
    let indices: Vec<usize> = if n > options.max_probes {
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        let mut picked = sample(&mut rng, n, options.max_probes).into_vec();
        picked.sort_unstable();
        picked
    } else {
        (0..n).collect()
    };
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param_index: None,
        probes: 0,
        skipped: 0,
    };
    let h = options.step;
    for i in indices {
        let original = params.get(i);
        let mut at = |offset: f64| {
            probe.set(i, original + offset);
            loss_fn(&probe)
        };
        let numeric = match options.stencil {
            Stencil::TwoPoint => (|| Some((at(h)? - at(-h)?) / (2.0 * h)))(),
            Stencil::FourPoint => {
                (|| Some((-at(2.0 * h)? + 8.0 * at(h)? - 8.0 * at(-h)? + at(-2.0 * h)?) / (12.0 * h)))()
            }
        };
        probe.set(i, original);
        let Some(numeric) = numeric else {
            report.skipped += 1;
            continue;
        };
        report.probes += 1;
        let err = relative_error(analytic.get(i), numeric);
        if err > report.max_rel_error || report.worst_param_index.is_none() {
            report.max_rel_error = err;
            report.worst_param_index = Some(params.index(i));
        }
    }
    Ok(report)
}
