use khorder::diagnostics::median;
use khorder::problems::{Domain, Operator, ProblemOptions, RhsMode, Solution};
use khorder::training::{train, BetaMode, TrainConfig};
use khorder::{Activation, ModelSpec, Problem};

fn quadratic_fit() -> Problem {
    Problem::new("quadratic", Operator::Fit, Domain::UnitCube(1), Solution::PowerSum { degree: 2 }, RhsMode::Analytic).unwrap()
}

#[test]
fn linear_model_reaches_least_squares_line() {
    // L2(0,1) projection of x^2 onto affine functions: x - 1/6
    let problem = quadratic_fit();
    let spec = ModelSpec::pinn(1, 1, 1, Activation::Identity);
    let config = TrainConfig {
        epochs: 2000,
        lr0: 5e-2,
        decay: 0.5,
        decay_every: 250,
        n_f: 20_000,
        seed: 7,
        ..TrainConfig::for_problem(&problem)
    };
    let out = train::<f64>(&spec, &problem, &config).unwrap();
    let at = |x: f64| out.model.eval(&[x]).unwrap();
    let (intercept, slope) = (at(0.0), at(1.0) - at(0.0));
    assert!((intercept + 1.0 / 6.0).abs() <= 1e-3, "intercept {intercept}");
    assert!((slope - 1.0).abs() <= 1e-3, "slope {slope}");
}

#[test]
fn median_window_loss_decreases() {
    let opts = ProblemOptions { jmax: Some(1), ..Default::default() };
    let problem = Problem::from_id("fit2d_eq41", opts).unwrap();
    let spec = ModelSpec::khorder(3, 2, 1, 8, 1, 16, Activation::Tanh);
    let window = 500;
    let epochs = 2500;
    let per_seed: Vec<Vec<f64>> = (0..5)
        .map(|seed| {
            let config = TrainConfig { epochs, n_f: 256, seed, ..TrainConfig::for_problem(&problem) };
            let out = train::<f64>(&spec, &problem, &config).unwrap();
            out.record
                .epochs
                .chunks(window)
                .map(|w| w.iter().map(|e| e.loss_f).sum::<f64>() / w.len() as f64)
                .collect()
        })
        .collect();
    let medians: Vec<f64> = (0..epochs / window).map(|k| median(&per_seed.iter().map(|s| s[k]).collect::<Vec<_>>())).collect();
    for pair in medians.windows(2) {
        assert!(pair[1] < pair[0], "window medians {medians:?}");
    }
}

#[test]
fn pde_training_with_fixed_beta_runs() {
    let problem = Problem::from_id("poisson2d_sin8", ProblemOptions::default()).unwrap();
    let spec = ModelSpec::khorder(3, 2, 1, 6, 1, 12, Activation::Tanh);
    let config = TrainConfig {
        epochs: 30,
        n_f: 64,
        n_b: 32,
        beta_mode: BetaMode::Fixed { beta: 1e4 },
        rel_every: 10,
        ..TrainConfig::for_problem(&problem)
    };
    let out = train::<f64>(&spec, &problem, &config).unwrap();
    assert!(out.record.epochs.iter().all(|e| e.beta == 1e4));
    assert_eq!(out.record.epochs.iter().filter(|e| e.rel.is_some()).count(), 3);
    assert!(out.record.rel_min.unwrap() <= out.record.rel_final.unwrap());
}
