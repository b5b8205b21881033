use cost_unroll::experiments::{
    edge_aligned_synthetic, masked_2d_demo, pc_gradient_check, train_pc, Demo2dConfig, ExperimentConfig, PcSignalSpec,
};
use cost_unroll::mlp::{GradCheckOptions, MlpConfig, Stencil};
use cost_unroll::{RegularizerConfig, RegularizerKind, UnrollGradient};

fn small(kind: RegularizerKind) -> ExperimentConfig {
    ExperimentConfig {
        mlp: MlpConfig {
            hidden_width: 6,
            ..ExperimentConfig::preset(kind).mlp
        },
        signal: PcSignalSpec {
            dense_points: 96,
            ..PcSignalSpec::default()
        },
        steps: 60,
        ..ExperimentConfig::preset(kind)
    }
}

#[test]
fn zero_weight_makes_every_regularizer_identical() {
    let logs: Vec<_> = RegularizerKind::ALL
        .iter()
        .map(|&k| {
            let mut cfg = small(k);
            cfg.regularizer_config.lambda = 0.0;
            train_pc(&cfg).unwrap()
        })
        .collect();
    for w in logs.windows(2) {
        assert_eq!(w[0].records, w[1].records);
        assert_eq!(w[0].prediction, w[1].prediction);
    }
}

#[test]
fn training_is_reproducible() {
    for kind in RegularizerKind::ALL {
        let cfg = ExperimentConfig { seed: 11, ..small(kind) };
        assert_eq!(train_pc(&cfg).unwrap().records, train_pc(&cfg).unwrap().records, "{kind}");
    }
}

#[test]
fn full_loss_gradients_match_finite_differences() {
    let options = GradCheckOptions {
        step: 1e-3,
        stencil: Stencil::FourPoint,
        ..GradCheckOptions::default()
    };
    for seed in 0..3 {
        for kind in RegularizerKind::ALL {
            let cfg = ExperimentConfig { seed, ..small(kind) };
            let r = pc_gradient_check(&cfg, options).unwrap();
            assert!(r.max_rel_error < 1e-5, "{kind} seed {seed}: {r:?}");
            assert!(r.probes > 0);
        }
    }
}

#[test]
fn differentiating_through_the_recursion_is_checked_too() {
    let mut cfg = small(RegularizerKind::Unrolled);
    cfg.unroll_gradient = UnrollGradient::Through;
    cfg.regularizer_config = RegularizerConfig {
        lambda: 0.05,
        steps: 3,
        ..cfg.regularizer_config
    };
    let r = pc_gradient_check(
        &cfg,
        GradCheckOptions {
            step: 1e-3,
            stencil: Stencil::FourPoint,
            ..GradCheckOptions::default()
        },
    )
    .unwrap();
    assert!(r.max_rel_error < 1e-5, "{r:?}");
}

#[test]
fn unrolled_training_reduces_validation_error() {
    let cfg = ExperimentConfig {
        steps: 400,
        ..small(RegularizerKind::Unrolled)
    };
    let log = train_pc(&cfg).unwrap();
    assert!(log.final_error() < 0.5 * log.records[0].val_error, "{}", log.final_error());
}

#[test]
fn masked_demo_keeps_the_true_edge_sharper() {
    let cfg = Demo2dConfig {
        height: 12,
        width: 12,
        ..Demo2dConfig::default()
    };
    let (image, _, noisy) = edge_aligned_synthetic(&cfg).unwrap();
    let report = masked_2d_demo(&image, &noisy, &cfg).unwrap();
    assert!(report.masked.on_edge > report.unmasked.on_edge);
    let flat = masked_2d_demo(&image, &noisy, &Demo2dConfig { alpha: 0.0, ..cfg }).unwrap();
    assert_eq!(flat.masked_field, flat.unmasked_field);
}
