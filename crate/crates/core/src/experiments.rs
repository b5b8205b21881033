//! Piecewise-constant signal prediction: an MLP is over-fit to a handful of
//! samples of a random step signal, with a smoothness term evaluated on a
//! dense prediction grid. Also hosts the 2D masked-smoothness demo.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::{edge_mask, gradient_adjoint, mask_gradients, spatial_gradient, Field, ImportanceMask, Shape};
use crate::mlp::{finite_diff_check_partial, gd_step, GradCheckOptions, GradCheckReport, MlpConfig, MlpParams};
use crate::regularizers::{
    unroll_updates, unrolled_smoothness, RegularizerConfig, RegularizerKind, Smoothness, UnrollGradient,
    UnrollState,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcSignalSpec {
    pub domain: [f64; 2],
    pub segments: usize,
    pub value_range: [f64; 2],
    /// Training samples `N`, uniformly spaced over the domain.
    pub samples: usize,
    /// Resolution of the dense grid used for smoothness and validation.
    pub dense_points: usize,
    /// Smallest allowed level change between neighbouring segments, as a
    /// fraction of the value range.
    pub min_jump: f64,
    /// Shortest segment, as a fraction of the mean segment length.
    pub min_segment: f64,
}

impl Default for PcSignalSpec {
    fn default() -> Self {
        PcSignalSpec {
            domain: [-2.0, 2.0],
            segments: 6,
            value_range: [-1.0, 1.0],
            samples: 40,
            dense_points: 1024,
            min_jump: 0.25,
            min_segment: 0.5,
        }
    }
}

impl PcSignalSpec {
    pub fn validate(&self) -> Result<()> {
        let [a, b] = self.domain;
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(invalid("domain", format!("need finite a < b, got [{a}, {b}]")));
        }
        let [lo, hi] = self.value_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(invalid("value_range", format!("need finite lo < hi, got [{lo}, {hi}]")));
        }
        if self.segments == 0 {
            return Err(invalid("segments", "must be >= 1"));
        }
        if self.samples < 2 {
            return Err(invalid("samples", "must be >= 2"));
        }
        if self.dense_points < 2 {
            return Err(invalid("dense_points", "must be >= 2"));
        }
        if !(0.0..1.0).contains(&self.min_jump) {
            return Err(invalid("min_jump", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.min_segment) {
            return Err(invalid("min_segment", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// A right-continuous step function.
#[derive(Clone, Debug, PartialEq)]
pub struct PcSignal {
    pub jumps: Vec<f64>,
    pub levels: Vec<f64>,
}

impl PcSignal {
    pub fn eval(&self, x: f64) -> f64 {
        let seg = self.jumps.partition_point(|&j| j <= x);
        self.levels[seg]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcData {
    pub signal: PcSignal,
    pub dense_x: Vec<f64>,
    pub target: Field,
    pub sample_x: Vec<f64>,
    pub sample_y: Field,
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    let step = (b - a) / (n - 1) as f64;
    (0..n).map(|i| if i + 1 == n { b } else { a + i as f64 * step }).collect()
}

pub fn generate_pc_signal(spec: &PcSignalSpec, seed: u64) -> Result<PcData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [a, b] = spec.domain;
    let [lo, hi] = spec.value_range;
    let n = spec.segments;
    let span = b - a;

    let min_len = spec.min_segment * span / n as f64;
    let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let free = span - n as f64 * min_len;
    let mut jumps = Vec::with_capacity(n - 1);
    let mut edge = a;
    for w in &weights[..n - 1] {
        edge += min_len + free * w / total;
        jumps.push(edge);
    }

    let min_jump = spec.min_jump * (hi - lo);
    let mut levels: Vec<f64> = Vec::with_capacity(n);
    levels.push(rng.gen_range(lo..=hi));
    while levels.len() < n {
        let prev = *levels.last().expect("first level pushed");
        let candidate = rng.gen_range(lo..=hi);
        if (candidate - prev).abs() >= min_jump && candidate != prev {
            levels.push(candidate);
        }
    }
    let signal = PcSignal { jumps, levels };

    let dense_x = linspace(a, b, spec.dense_points);
    let target = Field::line(dense_x.iter().map(|&x| signal.eval(x)).collect())?;
    let sample_x = linspace(a, b, spec.samples);
    let sample_y = Field::line(sample_x.iter().map(|&x| signal.eval(x)).collect())?;
    Ok(PcData {
        signal,
        dense_x,
        target,
        sample_x,
        sample_y,
    })
}

/// Mean squared error `1/N Σ (fᵢ − yᵢ)²` and its gradient `2(f − y)/N`.
pub fn data_term(pred: &Field, ys: &Field) -> Result<(f64, Field)> {
    if pred.shape() != ys.shape() {
        return Err(Error::ShapeMismatch {
            expected: ys.shape().to_string(),
            actual: pred.shape().to_string(),
        });
    }
    let n = pred.len() as f64;
    let value = pred
        .values()
        .iter()
        .zip(ys.values())
        .map(|(f, y)| (f - y) * (f - y))
        .sum::<f64>()
        / n;
    let grad = pred.zip_map(ys, |f, y| 2.0 * (f - y) / n)?;
    Ok((value, grad))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub regularizer: RegularizerKind,
    pub regularizer_config: RegularizerConfig,
    pub unroll_gradient: UnrollGradient,
    /// Carry the last multiplier across GD steps instead of restarting at 0.
    pub warm_start: bool,
    pub mlp: MlpConfig,
    pub lr: f64,
    pub steps: usize,
    pub signal: PcSignalSpec,
    pub seed: u64,
    /// x-locations where `∂loss/∂f` on the dense grid is logged.
    pub probes: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::preset(RegularizerKind::Unrolled)
    }
}

impl ExperimentConfig {
    /// Defaults with the regularizer hyperparameters selected for `kind`.
    /// The training settings give every regularizer the same budget; see the
    /// README for how the per-regularizer values were chosen.
    pub fn preset(kind: RegularizerKind) -> Self {
        let base = RegularizerConfig::default();
        let regularizer_config = match kind {
            RegularizerKind::Tv => RegularizerConfig { lambda: 2e-3, ..base },
            RegularizerKind::Huber => RegularizerConfig {
                lambda: 3.0,
                huber_k: 1e-3,
                ..base
            },
            RegularizerKind::Charbonnier => RegularizerConfig {
                lambda: 1e-3,
                charbonnier_eps: 1e-3,
                ..base
            },
            RegularizerKind::Unrolled => RegularizerConfig {
                lambda: 2e-3,
                rho: 3.0,
                ..base
            },
        };
        ExperimentConfig {
            regularizer: kind,
            regularizer_config,
            unroll_gradient: UnrollGradient::Frozen,
            warm_start: false,
            mlp: MlpConfig {
                hidden_width: 16,
                init_scale: 1.0,
                input_scale: 4.0,
            },
            lr: 0.3,
            steps: 4000,
            signal: PcSignalSpec::default(),
            seed: 0,
            probes: vec![-1.0, 1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.regularizer_config.validate()?;
        self.mlp.validate()?;
        self.signal.validate()?;
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(invalid("lr", format!("must be finite and > 0, got {}", self.lr)));
        }
        if self.steps == 0 {
            return Err(invalid("steps", "must be >= 1"));
        }
        if self.warm_start && self.unroll_gradient == UnrollGradient::Through {
            return Err(invalid("unroll_gradient", "`through` cannot be combined with warm_start"));
        }
        let [a, b] = self.signal.domain;
        if let Some(p) = self.probes.iter().find(|p| !(a..=b).contains(*p)) {
            return Err(invalid("probes", format!("probe {p} outside the domain")));
        }
        Ok(())
    }

    fn smoothness(&self) -> Result<Smoothness> {
        Ok(Smoothness::new(self.regularizer, self.regularizer_config)?
            .with_unroll_gradient(self.unroll_gradient)
            .with_warm_start(self.warm_start))
    }
}

/// Seed for the predictor's initializer, decorrelated from the signal seed.
pub fn init_seed(seed: u64) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    /// Mean absolute difference from the target on the dense grid.
    pub val_error: f64,
    pub grad_norm: f64,
    /// `∂loss/∂f` at the dense-grid point nearest each probe location.
    pub probes: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingLog {
    pub regularizer: RegularizerKind,
    pub seed: u64,
    pub probe_x: Vec<f64>,
    pub records: Vec<StepRecord>,
    pub dense_x: Vec<f64>,
    pub target: Vec<f64>,
    /// Dense prediction at the last logged step.
    pub prediction: Vec<f64>,
    pub sample_x: Vec<f64>,
    pub sample_y: Vec<f64>,
}

impl TrainingLog {
    pub fn final_error(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.val_error)
    }

    pub fn final_grad_norm(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.grad_norm)
    }

    /// First step whose validation error is at or below `error`.
    pub fn steps_to_error(&self, error: f64) -> Option<usize> {
        self.records.iter().find(|r| r.val_error <= error).map(|r| r.step)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] Error),
    #[error("training diverged at step {step}: {reason}")]
    Diverged {
        step: usize,
        reason: String,
        log: Box<TrainingLog>,
    },
}

/// Everything produced by one loss/gradient evaluation.
pub struct Evaluation {
    pub loss: f64,
    pub grads: MlpParams,
    pub dense_prediction: Vec<f64>,
    /// `∂loss/∂f` on the dense grid.
    pub dense_grad: Vec<f64>,
    pub state: Option<UnrollState>,
}

/// Data term on the samples plus smoothness on the dense grid.
pub struct PcObjective<'a> {
    data: &'a PcData,
    inputs: Vec<f64>,
}

impl<'a> PcObjective<'a> {
    pub fn new(data: &'a PcData) -> Self {
        let inputs = data.sample_x.iter().chain(&data.dense_x).copied().collect();
        PcObjective { data, inputs }
    }

    fn split(&self, out: &[f64]) -> Result<(Field, Field)> {
        let n = self.data.sample_x.len();
        Ok((Field::line(out[..n].to_vec())?, Field::line(out[n..].to_vec())?))
    }

    pub fn evaluate(&self, params: &MlpParams, smoothness: &mut Smoothness) -> Result<Evaluation> {
        let cache = params.forward_cached(&self.inputs);
        let (samples, dense) = self.split(cache.output())?;
        let (data_value, data_grad) = data_term(&samples, &self.data.sample_y)?;
        let c = spatial_gradient(&dense);
        let (smooth, state) = smoothness.evaluate(&c)?;
        let dense_grad = gradient_adjoint(&smooth.grad_wrt_c);
        let upstream: Vec<f64> = data_grad
            .values()
            .iter()
            .chain(dense_grad.values())
            .copied()
            .collect();
        let grads = params.backward(&cache, &upstream)?;
        Ok(Evaluation {
            loss: data_value + smooth.value,
            grads,
            dense_prediction: dense.into_values(),
            dense_grad: dense_grad.into_values(),
            state,
        })
    }

    /// Loss value with the unrolled state held at `state` (ignored for the
    /// other regularizers).
    pub fn loss_with_state(
        &self,
        params: &MlpParams,
        smoothness: &Smoothness,
        state: Option<&UnrollState>,
    ) -> Result<f64> {
        let out = params.forward(&self.inputs);
        let (samples, dense) = self.split(&out)?;
        let (data_value, _) = data_term(&samples, &self.data.sample_y)?;
        let c = spatial_gradient(&dense);
        let smooth = match (smoothness.kind, state) {
            (RegularizerKind::Unrolled, Some(s)) => unrolled_smoothness(&c, s, &smoothness.config)?.value,
            _ => smoothness.clone().evaluate(&c)?.0.value,
        };
        Ok(data_value + smooth)
    }
}

/// Central-difference check of the full loss at the initial parameters of
/// `cfg`. With frozen differentiation the unrolled state stays at its value
/// for the unperturbed parameters. For TV, probes that move any dense
/// difference across zero are skipped.
pub fn pc_gradient_check(cfg: &ExperimentConfig, options: GradCheckOptions) -> Result<GradCheckReport> {
    cfg.validate()?;
    let data = generate_pc_signal(&cfg.signal, cfg.seed)?;
    let params = MlpParams::init(&cfg.mlp, init_seed(cfg.seed))?;
    let mut smoothness = cfg.smoothness()?;
    let objective = PcObjective::new(&data);
    let fresh = smoothness.clone();
    let eval = objective.evaluate(&params, &mut smoothness)?;
    let state = match cfg.unroll_gradient {
        UnrollGradient::Frozen => eval.state.as_ref(),
        UnrollGradient::Through => None,
    };
    let signs = |p: &MlpParams| -> Vec<i8> {
        let out = p.forward(&objective.inputs);
        out[data.sample_x.len()..]
            .windows(2)
            .map(|w| (w[1] - w[0]).partial_cmp(&0.0).map_or(0, |o| o as i8))
            .collect()
    };
    let base_signs = signs(&params);
    finite_diff_check_partial(
        &params,
        &eval.grads,
        |p| {
            if cfg.regularizer == RegularizerKind::Tv && signs(p) != base_signs {
                return None;
            }
            objective.loss_with_state(p, &fresh, state).ok()
        },
        options,
    )
}

fn nearest_index(grid: &[f64], x: f64) -> usize {
    let pos = grid.partition_point(|&g| g < x);
    match pos {
        0 => 0,
        p if p == grid.len() => grid.len() - 1,
        p if (grid[p] - x).abs() < (x - grid[p - 1]).abs() => p,
        p => p - 1,
    }
}

/// Trains the predictor with plain GD and logs every step. The unrolled
/// state is rebuilt from the current prediction at each step.
pub fn train_pc(cfg: &ExperimentConfig) -> std::result::Result<TrainingLog, TrainError> {
    cfg.validate()?;
    let data = generate_pc_signal(&cfg.signal, cfg.seed)?;
    let mut params = MlpParams::init(&cfg.mlp, init_seed(cfg.seed))?;
    let mut smoothness = cfg.smoothness()?;
    let objective = PcObjective::new(&data);
    let probe_idx: Vec<usize> = cfg.probes.iter().map(|&p| nearest_index(&data.dense_x, p)).collect();
    let target = data.target.values();

    let mut log = TrainingLog {
        regularizer: cfg.regularizer,
        seed: cfg.seed,
        probe_x: cfg.probes.clone(),
        records: Vec::with_capacity(cfg.steps),
        dense_x: data.dense_x.clone(),
        target: target.to_vec(),
        prediction: Vec::new(),
        sample_x: data.sample_x.clone(),
        sample_y: data.sample_y.values().to_vec(),
    };

    for step in 0..cfg.steps {
        let eval = objective.evaluate(&params, &mut smoothness)?;
        let grad_norm = eval.grads.norm();
        if !eval.loss.is_finite() || !grad_norm.is_finite() {
            return Err(TrainError::Diverged {
                step,
                reason: format!("loss {} grad norm {grad_norm}", eval.loss),
                log: Box::new(log),
            });
        }
        let val_error = eval
            .dense_prediction
            .iter()
            .zip(target)
            .map(|(f, t)| (f - t).abs())
            .sum::<f64>()
            / target.len() as f64;
        log.records.push(StepRecord {
            step,
            loss: eval.loss,
            val_error,
            grad_norm,
            probes: probe_idx.iter().map(|&i| eval.dense_grad[i]).collect(),
        });
        log.prediction = eval.dense_prediction;
        params = match gd_step(&params, &eval.grads, cfg.lr) {
            Ok(p) => p,
            Err(e) => {
                return Err(TrainError::Diverged {
                    step,
                    reason: e.to_string(),
                    log: Box::new(log),
                })
            }
        };
    }
    Ok(log)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Demo2dConfig {
    pub height: usize,
    pub width: usize,
    /// Mask sharpness in `exp(-alpha |∇I|)`.
    pub alpha: f64,
    pub noise: f64,
    pub seed: u64,
    pub regularizer_config: RegularizerConfig,
    pub lr: f64,
    pub steps: usize,
}

impl Default for Demo2dConfig {
    fn default() -> Self {
        Demo2dConfig {
            height: 24,
            width: 24,
            alpha: 10.0,
            noise: 0.1,
            seed: 0,
            regularizer_config: RegularizerConfig {
                lambda: 0.2,
                ..RegularizerConfig::default()
            },
            lr: 0.2,
            steps: 300,
        }
    }
}

impl Demo2dConfig {
    pub fn validate(&self) -> Result<()> {
        self.regularizer_config.validate()?;
        if self.height < 2 || self.width < 2 {
            return Err(invalid("height", "grid must be at least 2x2"));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(invalid("alpha", format!("must be finite and >= 0, got {}", self.alpha)));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(invalid("noise", format!("must be finite and >= 0, got {}", self.noise)));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(invalid("lr", format!("must be finite and > 0, got {}", self.lr)));
        }
        if self.steps == 0 {
            return Err(invalid("steps", "must be >= 1"));
        }
        Ok(())
    }
}

/// Mean `|∇F|` over positions where the reference image has an edge and
/// over the remaining positions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EdgeStats {
    pub on_edge: f64,
    pub off_edge: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Demo2dReport {
    pub masked: EdgeStats,
    pub unmasked: EdgeStats,
    pub masked_field: Field,
    pub unmasked_field: Field,
}

/// Step image (left half 0, right half 1) and a two-channel field with a
/// motion edge at the same column, plus uniform noise of amplitude `noise`.
pub fn edge_aligned_synthetic(cfg: &Demo2dConfig) -> Result<(Field, Field, Field)> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let edge = w / 2;
    let image: Vec<f64> = (0..h * w).map(|i| if i % w >= edge { 1.0 } else { 0.0 }).collect();
    let clean: Vec<f64> = (0..h * w)
        .flat_map(|i| if i % w >= edge { [1.0, -0.5] } else { [0.0, 0.0] })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noisy: Vec<f64> = clean
        .iter()
        .map(|v| {
            if cfg.noise > 0.0 {
                v + rng.gen_range(-cfg.noise..=cfg.noise)
            } else {
                *v
            }
        })
        .collect();
    Ok((Field::grid(h, w, 1, image)?, Field::grid(h, w, 2, clean)?, Field::grid(h, w, 2, noisy)?))
}

fn optimize_field(noisy: &Field, mask: Option<&ImportanceMask>, cfg: &Demo2dConfig) -> Result<Field> {
    let mut f = noisy.clone();
    for _ in 0..cfg.steps {
        let grad = spatial_gradient(&f);
        let c = match mask {
            Some(m) => mask_gradients(&grad, m)?,
            None => grad,
        };
        let state = unroll_updates(&c, &cfg.regularizer_config)?;
        let smooth = unrolled_smoothness(&c, &state, &cfg.regularizer_config)?;
        let wg = match mask {
            Some(m) => mask_gradients(&smooth.grad_wrt_c, m)?,
            None => smooth.grad_wrt_c,
        };
        let back = gradient_adjoint(&wg);
        let values = f
            .values()
            .iter()
            .zip(noisy.values())
            .zip(back.values())
            .map(|((fi, ni), bi)| fi - cfg.lr * ((fi - ni) + bi))
            .collect();
        f = Field::new(f.shape(), values)?;
    }
    Ok(f)
}

fn edge_stats(field: &Field, image: &Field) -> EdgeStats {
    let grad = spatial_gradient(field);
    let edges = spatial_gradient(image);
    let channels = match field.shape() {
        Shape::Grid { channels, .. } => channels,
        Shape::Line(_) => 1,
    };
    let image_channels = match image.shape() {
        Shape::Grid { channels, .. } => channels,
        Shape::Line(_) => 1,
    };
    let (mut on, mut n_on, mut off, mut n_off) = (0.0, 0usize, 0.0, 0usize);
    for (g, e) in grad.components().iter().zip(edges.components()) {
        let ev = e.values();
        for (i, v) in g.values().iter().enumerate() {
            let pixel = i / channels;
            let is_edge = ev[pixel * image_channels..(pixel + 1) * image_channels]
                .iter()
                .any(|d| *d != 0.0);
            if is_edge {
                on += v.abs();
                n_on += 1;
            } else {
                off += v.abs();
                n_off += 1;
            }
        }
    }
    EdgeStats {
        on_edge: if n_on > 0 { on / n_on as f64 } else { 0.0 },
        off_edge: if n_off > 0 { off / n_off as f64 } else { 0.0 },
    }
}

/// Optimizes the field directly under `½‖F − noisy‖²` plus the unrolled
/// smoothness on `W ⊙ ∇F` (masked) and on `∇F` (unmasked).
pub fn masked_2d_demo(image: &Field, noisy_field: &Field, cfg: &Demo2dConfig) -> Result<Demo2dReport> {
    cfg.validate()?;
    match (image.shape(), noisy_field.shape()) {
        (
            Shape::Grid { height, width, .. },
            Shape::Grid {
                height: fh, width: fw, ..
            },
        ) if height == fh && width == fw => {}
        (a, b) => {
            return Err(Error::ShapeMismatch {
                expected: format!("field with the image's spatial size {a}"),
                actual: b.to_string(),
            })
        }
    }
    let mask = edge_mask(image, cfg.alpha)?;
    let masked_field = optimize_field(noisy_field, Some(&mask), cfg)?;
    let unmasked_field = optimize_field(noisy_field, None, cfg)?;
    Ok(Demo2dReport {
        masked: edge_stats(&masked_field, image),
        unmasked: edge_stats(&unmasked_field, image),
        masked_field,
        unmasked_field,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signal_is_deterministic() {
        let spec = PcSignalSpec::default();
        assert_eq!(generate_pc_signal(&spec, 5).unwrap(), generate_pc_signal(&spec, 5).unwrap());
        assert_ne!(generate_pc_signal(&spec, 5).unwrap(), generate_pc_signal(&spec, 6).unwrap());
    }

    #[test]
    fn single_segment_is_constant() {
        let spec = PcSignalSpec {
            segments: 1,
            ..PcSignalSpec::default()
        };
        let data = generate_pc_signal(&spec, 3).unwrap();
        let tv: f64 = spatial_gradient(&data.target).iter().map(f64::abs).sum();
        assert_eq!(tv, 0.0);
    }

    #[test]
    fn jump_count_matches_segments() {
        for seed in 0..20 {
            let spec = PcSignalSpec {
                segments: 5,
                ..PcSignalSpec::default()
            };
            let data = generate_pc_signal(&spec, seed).unwrap();
            let jumps = spatial_gradient(&data.target).iter().filter(|d| *d != 0.0).count();
            assert_eq!(jumps, 4, "seed {seed}");
            let [a, b] = spec.domain;
            assert!(data.signal.jumps.iter().all(|&j| a < j && j < b));
            assert_eq!(data.sample_x.len(), 40);
            assert_eq!(data.dense_x.len(), 1024);
        }
    }

    #[test]
    fn data_term_examples() {
        let y = Field::line(vec![0.5, -1.0]).unwrap();
        assert_eq!(data_term(&y, &y).unwrap().0, 0.0);
        let shifted = y.map(|v| v + 1.0);
        assert_eq!(data_term(&shifted, &y).unwrap().0, 1.0);
        let (v, g) = data_term(&Field::line(vec![1.0, 3.0]).unwrap(), &Field::line(vec![0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(v, 5.0);
        assert_eq!(g.values(), &[1.0, 3.0]);
        assert!(data_term(&Field::line(vec![1.0]).unwrap(), &y).is_err());
    }

    #[test]
    fn nearest_index_picks_closest() {
        let grid = linspace(-2.0, 2.0, 5);
        assert_eq!(nearest_index(&grid, -1.0), 1);
        assert_eq!(nearest_index(&grid, -1.4), 1);
        assert_eq!(nearest_index(&grid, 1.9), 4);
        assert_eq!(nearest_index(&grid, -5.0), 0);
    }

    #[test]
    fn invalid_experiment_config_names_field() {
        let cfg = ExperimentConfig {
            lr: -1.0,
            ..ExperimentConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::InvalidParameter { name: "lr", .. })));
        let cfg = ExperimentConfig {
            probes: vec![5.0],
            ..ExperimentConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::InvalidParameter { name: "probes", .. })));
    }

    fn short(kind: RegularizerKind) -> ExperimentConfig {
        ExperimentConfig {
            regularizer: kind,
            mlp: MlpConfig {
                hidden_width: 8,
                ..MlpConfig::default()
            },
            signal: PcSignalSpec {
                dense_points: 64,
                ..PcSignalSpec::default()
            },
            steps: 30,
            seed: 11,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn training_is_reproducible() {
        let a = train_pc(&short(RegularizerKind::Tv)).unwrap();
        let b = train_pc(&short(RegularizerKind::Tv)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.records.len(), 30);
        assert_eq!(a.records[0].probes.len(), 2);
    }

    #[test]
    fn divergence_keeps_partial_log() {
        let cfg = ExperimentConfig {
            lr: 1e12,
            ..short(RegularizerKind::Huber)
        };
        match train_pc(&cfg) {
            Err(TrainError::Diverged { log, step, .. }) => {
                assert!(log.records.len() == step || log.records.len() == step + 1);
                assert!(log.records.iter().all(|r| r.loss.is_finite()));
            }
            other => panic!("expected divergence, got {:?}", other.map(|l| l.final_error())),
        }
    }

    #[test]
    fn demo_alpha_zero_matches_unmasked() {
        let cfg = Demo2dConfig {
            alpha: 0.0,
            steps: 40,
            ..Demo2dConfig::default()
        };
        let (image, _, noisy) = edge_aligned_synthetic(&cfg).unwrap();
        let r = masked_2d_demo(&image, &noisy, &cfg).unwrap();
        assert_eq!(r.masked_field, r.unmasked_field);
    }

    #[test]
    fn demo_shape_mismatch_rejected() {
        let cfg = Demo2dConfig::default();
        let image = Field::grid(3, 3, 1, vec![0.0; 9]).unwrap();
        let field = Field::grid(4, 3, 2, vec![0.0; 24]).unwrap();
        assert!(masked_2d_demo(&image, &field, &cfg).is_err());
    }
}
