//! Oracle suite behind `cost-unroll verify`.

use std::fmt::Write as _;
use std::time::Instant;

use cost_unroll::experiments::{pc_gradient_check, ExperimentConfig};
use cost_unroll::mlp::{relative_error, GradCheckOptions, Stencil};
use cost_unroll::oracles::{admm_denoise, exact_tv_denoise_1d, unroll_vs_admm_diagnostic, AdmmOptions, DenoiseProblem};
use cost_unroll::{
    charbonnier_smoothness, huber_smoothness, soft_threshold, tv_smoothness, unroll_updates, unrolled_smoothness,
    Field, GradField, RegularizerConfig, RegularizerKind,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const PROXIMAL: &str = "proximal";
pub const REGULARIZER_FD: &str = "regularizer-fd";
pub const LOSS_FD: &str = "loss-fd";
pub const ADMM_EXACT: &str = "admm-vs-exact";
pub const UNROLL_ADMM: &str = "unroll-vs-admm";

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Level {
    Fast,
    Full,
}

/// Deliberate defects used to confirm that the suite catches them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Fault {
    /// Shrink away from zero instead of towards it.
    SoftThresholdSign,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed error.
    pub worst: f64,
    pub tolerance: f64,
    pub cases: usize,
    pub seconds: f64,
}

fn timed(name: &'static str, tolerance: f64, f: impl FnOnce() -> (f64, usize)) -> CheckResult {
    let start = Instant::now();
    let (worst, cases) = f();
    CheckResult {
        name,
        passed: worst.is_finite() && worst <= tolerance,
        worst,
        tolerance,
        cases,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn faulty_soft_threshold(x: f64, kappa: f64) -> f64 {
    if x.abs() < kappa {
        0.0
    } else {
        x + kappa * x.signum()
    }
}

/// Minimizer of `κ|q| + ½(q − x)²` by scanning a grid of spacing `step`
/// that covers both 0 and `x`.
pub fn brute_force_prox(x: f64, kappa: f64, step: f64) -> f64 {
    let lo = x.min(0.0) - 10.0 * step;
    let n = ((x.abs() + 20.0 * step) / step).ceil() as usize;
    let objective = |q: f64| kappa * q.abs() + 0.5 * (q - x) * (q - x);
    (0..=n)
        .map(|i| lo + i as f64 * step)
        .min_by(|a, b| objective(*a).total_cmp(&objective(*b)))
        .expect("grid is non-empty")
}

/// Largest gap between `prox` and the grid minimizer over `pairs` random
/// `(x, κ)` draws.
pub fn proximal_check(pairs: usize, seed: u64, prox: fn(f64, f64) -> f64) -> CheckResult {
    const STEP: f64 = 1e-4;
    timed(PROXIMAL, STEP, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let worst = (0..pairs)
            .map(|_| {
                let x = rng.gen_range(-3.0..3.0);
                let kappa = rng.gen_range(0.0..2.0);
                (prox(x, kappa) - brute_force_prox(x, kappa, STEP)).abs()
            })
            .fold(0.0, f64::max);
        (worst, pairs)
    })
}

fn random_c(n: usize, rng: &mut ChaCha8Rng, avoid: &[f64], margin: f64) -> GradField {
    let values = (0..n)
        .map(|_| loop {
            let v: f64 = rng.gen_range(-1.0..1.0);
            if avoid.iter().all(|a| (v - a).abs() > margin) {
                break v;
            }
        })
        .collect();
    GradField::line(values).expect("finite draws")
}

/// Central differences of each regularizer's value against its analytic
/// gradient in `C`, with the unrolled state frozen at the unperturbed `C`.
pub fn regularizer_fd_check(seeds: u64) -> CheckResult {
    const H: f64 = 1e-6;
    const N: usize = 32;
    timed(REGULARIZER_FD, 1e-5, || {
        let cfg = RegularizerConfig {
            lambda: 0.3,
            rho: 1.5,
            eta: 0.5,
            steps: 3,
            huber_k: 0.2,
            charbonnier_eps: 0.1,
        };
        let mut worst: f64 = 0.0;
        let mut cases = 0;
        for seed in 0..seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for kind in RegularizerKind::ALL {
                // keep probes clear of each kink
                let avoid: &[f64] = match kind {
                    RegularizerKind::Tv => &[0.0],
                    RegularizerKind::Huber => &[-cfg.huber_k, cfg.huber_k],
                    _ => &[],
                };
                let c = random_c(N, &mut rng, avoid, 10.0 * H);
                let state = unroll_updates(&c, &cfg).expect("valid config");
                let eval = |c: &GradField| match kind {
                    RegularizerKind::Tv => tv_smoothness(c),
                    RegularizerKind::Huber => huber_smoothness(c, cfg.huber_k).expect("valid k"),
                    RegularizerKind::Charbonnier => charbonnier_smoothness(c, cfg.charbonnier_eps).expect("valid eps"),
                    RegularizerKind::Unrolled => unrolled_smoothness(c, &state, &cfg).expect("matching shapes"),
                };
                let analytic = eval(&c).grad_wrt_c.components()[0].values().to_vec();
                let base = c.components()[0].values().to_vec();
                for i in 0..N {
                    let at = |d: f64| {
                        let mut v = base.clone();
                        v[i] += d;
                        eval(&GradField::line(v).expect("finite")).value
                    };
                    let numeric = (at(H) - at(-H)) / (2.0 * H);
                    worst = worst.max(relative_error(analytic[i], numeric));
                    cases += 1;
                }
            }
        }
        (worst, cases)
    })
}

/// Finite-difference check of the full experiment loss through the
/// predictor for every regularizer's preset.
pub fn loss_fd_check(seeds: u64, probes: usize) -> CheckResult {
    timed(LOSS_FD, 1e-5, || {
        let mut worst: f64 = 0.0;
        let mut cases = 0;
        for seed in 0..seeds {
            for kind in RegularizerKind::ALL {
                let cfg = ExperimentConfig {
                    seed,
                    ..ExperimentConfig::preset(kind)
                };
                let options = GradCheckOptions {
                    step: 1e-3,
                    stencil: Stencil::FourPoint,
                    max_probes: probes,
                    seed,
                };
                match pc_gradient_check(&cfg, options) {
                    Ok(r) => {
                        worst = worst.max(r.max_rel_error);
                        cases += r.probes;
                    }
                    Err(_) => return (f64::INFINITY, cases),
                }
            }
        }
        (worst, cases)
    })
}

/// Random step signal plus noise.
pub fn random_step_signal(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut level: f64 = rng.gen_range(-1.0..1.0);
    (0..n)
        .map(|_| {
            if rng.gen_bool(0.1) {
                level = rng.gen_range(-1.0..1.0);
            }
            level + 0.2 * rng.gen_range(-1.0..1.0)
        })
        .collect()
}

/// ∞-norm gap between ADMM and the exact 1D TV denoiser.
pub fn admm_exact_check(problems: u64, n: usize) -> CheckResult {
    timed(ADMM_EXACT, 1e-3, || {
        let mut worst: f64 = 0.0;
        for seed in 0..problems {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xADD);
            let lambda = rng.gen_range(0.05..0.5);
            let y = Field::line(random_step_signal(n, seed)).expect("finite signal");
            let p = DenoiseProblem::new(y, lambda).expect("valid problem");
            let gap = match (admm_denoise(&p, AdmmOptions::default()), exact_tv_denoise_1d(&p)) {
                (Ok((a, _)), Ok(e)) => a.values().iter().zip(e.values()).map(|(a, e)| (a - e).abs()).fold(0.0, f64::max),
                _ => f64::INFINITY,
            };
            worst = worst.max(gap);
        }
        (worst, problems as usize)
    })
}

/// The unrolled `Q/β` recursion against ADMM iterates with `F` frozen, for
/// every `T ≤ 4`.
pub fn unroll_admm_check(seeds: u64) -> CheckResult {
    timed(UNROLL_ADMM, 1e-12, || {
        let mut worst: f64 = 0.0;
        let mut cases = 0;
        for seed in 0..seeds {
            let f = Field::line(random_step_signal(64, 1000 + seed)).expect("finite signal");
            for steps in 1..=4 {
                let cfg = RegularizerConfig {
                    lambda: 0.2,
                    rho: 1.0 + seed as f64 * 0.25,
                    eta: 0.5,
                    steps,
                    ..RegularizerConfig::default()
                };
                worst = worst.max(match unroll_vs_admm_diagnostic(&f, &cfg) {
                    Ok(r) => r.max_frozen_diff(),
                    Err(_) => f64::INFINITY,
                });
                cases += 1;
            }
        }
        (worst, cases)
    })
}

pub fn run_suite(level: Level, fault: Option<Fault>) -> Vec<CheckResult> {
    let prox: fn(f64, f64) -> f64 = match fault {
        Some(Fault::SoftThresholdSign) => faulty_soft_threshold,
        None => soft_threshold,
    };
    match level {
        Level::Fast => vec![
            proximal_check(100, 0, prox),
            regularizer_fd_check(3),
            loss_fd_check(2, 60),
            admm_exact_check(5, 64),
            unroll_admm_check(3),
        ],
        Level::Full => vec![
            proximal_check(1000, 0, prox),
            regularizer_fd_check(20),
            loss_fd_check(20, 200),
            admm_exact_check(20, 64),
            unroll_admm_check(20),
        ],
    }
}

pub fn render_table(results: &[CheckResult]) -> String {
    let mut out = format!(
        "{:<16} {:>6} {:>12} {:>10} {:>7} {:>9}\n",
        "check", "status", "worst", "tolerance", "cases", "seconds"
    );
    for r in results {
        let _ = writeln!(
            out,
            "{:<16} {:>6} {:>12.3e} {:>10.1e} {:>7} {:>9.2}",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.worst,
            r.tolerance,
            r.cases,
            r.seconds
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brute_force_finds_known_minimizers() {
        assert!((brute_force_prox(2.0, 0.5, 1e-4) - 1.5).abs() <= 1e-4);
        assert!(brute_force_prox(0.3, 0.5, 1e-4).abs() <= 1e-4);
        assert!((brute_force_prox(-1.0, 0.25, 1e-4) + 0.75).abs() <= 1e-4);
    }

    #[test]
    fn faulty_prox_is_caught() {
        assert!(proximal_check(100, 0, soft_threshold).passed);
        assert!(!proximal_check(100, 0, faulty_soft_threshold).passed);
    }

    #[test]
    fn table_lists_every_check() {
        let r = CheckResult {
            name: PROXIMAL,
            passed: false,
            worst: 0.5,
            tolerance: 1e-4,
            cases: 1,
            seconds: 0.0,
        };
        let t = render_table(&[r]);
        assert!(t.contains("proximal") && t.contains("FAIL"));
    }
}
