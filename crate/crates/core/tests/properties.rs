//! Structural invariants of layers, the solver, the staged loss and the
//! noise model.

use std::sync::OnceLock;

use chemkan::data::mechanisms::{generate_toy, ToySpec};
use chemkan::data::{NormalizationSpec, Split, TrajectoryDataset};
use chemkan::experiment::train_mse_under_noise;
use chemkan::kan::{eval_activation, KanLayer, LayerShape};
use chemkan::ode::{integrate, IntegratorConfig};
use chemkan::train::{loss, loss_and_gradient, scaling_from_normalization, LossConfig, Stage};
use chemkan::{ChemKanConfig, ChemKanModel, Execution, ParamSelector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn additive_shape() -> impl Strategy<Value = LayerShape> {
    (1usize..5, 1usize..4, 1usize..6, any::<bool>(), any::<bool>()).prop_map(|(n_in, n_out, grid_size, base, normalize_input)| {
        LayerShape {
            n_in,
            n_out,
            n_mu: 0,
            grid_size,
            base,
            normalize_input,
        }
    })
}

fn random_layer(shape: LayerShape, seed: u64) -> KanLayer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    KanLayer::random(shape, 1.0, &mut rng).unwrap()
}

/// Toy data and a thermo-enabled model scaled to it, shared across cases.
fn toy_fixture() -> &'static (TrajectoryDataset, NormalizationSpec, ChemKanConfig) {
    static CELL: OnceLock<(TrajectoryDataset, NormalizationSpec, ChemKanConfig)> = OnceLock::new();
    CELL.get_or_init(|| {
        let spec = ToySpec {
            samples: 11,
            ..ToySpec::default()
        };
        let ds = generate_toy(
            &[(1000.0, 0.8), (1100.0, 0.7)],
            Split::Train,
            &spec,
            &IntegratorConfig::default(),
            Execution::Sequential,
        )
        .unwrap();
        let norm = NormalizationSpec::fit(&ds).unwrap();
        let cfg = ChemKanConfig {
            species: 2,
            hidden: 2,
            n_mu: 1,
            grid_size: 3,
            base: true,
            thermo: true,
            correction: true,
        };
        (ds, norm, cfg)
    })
}

fn toy_model(seed: u64) -> ChemKanModel {
    let (ds, norm, cfg) = toy_fixture();
    let mut m = ChemKanModel::random(*cfg, seed).unwrap();
    let t_end = ds.trajectories[0].span().1;
    m.set_scaling(scaling_from_normalization(norm, t_end)).unwrap();
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// An additive layer is linear in its parameters: y = D(x) p, with D the
    /// parameter Jacobian, and each output is the sum of its edge activations.
    #[test]
    fn additive_layer_matrix_form(shape in additive_shape(), seed in any::<u64>(), xs in prop::collection::vec(-3.0f64..3.0, 5)) {
        let layer = random_layer(shape, seed);
        let x = &xs[..shape.n_in];
        let y = layer.forward(x).unwrap();
        let d = layer.jacobians(x).unwrap().d_params_dense();
        let p = layer.params();
        for i in 0..shape.n_out {
            let lin: f64 = (0..p.len()).map(|c| d[[i, c]] * p[c]).sum();
            prop_assert!((y[i] - lin).abs() <= 1e-12 * (1.0 + y[i].abs()));
            let edges: f64 = (0..shape.n_in)
                .map(|j| {
                    let xt = if shape.normalize_input { x[j].tanh() } else { x[j] };
                    eval_activation(&layer.activation(i, j), layer.grid(), xt).unwrap()
                })
                .sum();
            prop_assert!((y[i] - edges).abs() <= 1e-12 * (1.0 + y[i].abs()));
        }
    }

    /// With tanh-normalized inputs every basis value is at most 1 and the
    /// swish term at most sigmoid(1), whatever the raw input.
    #[test]
    fn normalized_layer_is_bounded(shape in additive_shape(), seed in any::<u64>(), xs in prop::collection::vec(-1e6f64..1e6, 5)) {
        let shape = LayerShape { normalize_input: true, ..shape };
        let layer = random_layer(shape, seed);
        let y = layer.forward(&xs[..shape.n_in]).unwrap();
        let swish_max = 1.0 / (1.0 + (-1.0f64).exp());
        for (i, yi) in y.iter().enumerate() {
            let bound: f64 = (0..shape.n_in)
                .map(|j| {
                    let a = layer.activation(i, j);
                    a.grid_weights.iter().map(|w| w.abs()).sum::<f64>() + a.base_weight.map_or(0.0, |b| b.abs() * swish_max)
                })
                .sum();
            prop_assert!(yi.abs() <= bound * (1.0 + 1e-12), "{} > {bound}", yi.abs());
        }
    }

    #[test]
    fn seeded_construction_is_deterministic(seed in any::<u64>(), hidden in 1usize..5) {
        let cfg = ChemKanConfig { hidden, n_mu: 1, ..ChemKanConfig::biodiesel() };
        let a = ChemKanModel::random(cfg, seed).unwrap();
        let b = ChemKanModel::random(cfg, seed).unwrap();
        prop_assert_eq!(a.params(), b.params());
        let shape = LayerShape { n_in: 3, n_out: 2, n_mu: 1, grid_size: 4, base: true, normalize_input: true };
        prop_assert_eq!(random_layer(shape, seed), random_layer(shape, seed));
    }

    /// Tightening both tolerances a hundredfold never makes the global error
    /// of a smooth linear problem worse.
    #[test]
    fn error_shrinks_with_tolerance(k in 0.1f64..10.0, w in 0.5f64..5.0) {
        let exact = [(-k).exp() * w.cos(), -(-k).exp() * w.sin()];
        let mut prev = f64::INFINITY;
        for tol in [1e-4, 1e-6, 1e-8, 1e-10] {
            let cfg = IntegratorConfig { abs_tol: tol, rel_tol: tol, ..IntegratorConfig::training(vec![1.0]) };
            // damped rotation: u' = -k u + w J u
            let sol = integrate(
                |_, u, du| {
                    du[0] = -k * u[0] + w * u[1];
                    du[1] = -w * u[0] - k * u[1];
                    Ok(())
                },
                &[1.0, 0.0],
                (0.0, 1.0),
                &cfg,
            ).unwrap();
            let u = &sol.states[0];
            let err = (u[0] - exact[0]).abs().max((u[1] - exact[1]).abs());
            prop_assert!(err <= prev + 1e-15, "tol {tol}: {err} > {prev}");
            prev = err;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Stage 1 feeds temperature from the data, so the superstructure cannot
    /// influence its loss and its gradient covers only the kinetic core.
    #[test]
    fn stage_one_ignores_superstructure(seed in any::<u64>(), shift in prop::collection::vec(-1.0f64..1.0, 64)) {
        let (ds, norm, _) = toy_fixture();
        let model = toy_model(seed);
        let integ = IntegratorConfig::default();
        let cfg = LossConfig::new(Stage::Kinetic);
        let base = loss_and_gradient(&model, ds, norm, &cfg, &integ, Execution::Sequential).unwrap();
        prop_assert_eq!(base.partition.clone(), model.partition(ParamSelector::Kinetic));

        let mut p = model.params();
        let sup = model.partition(ParamSelector::Superstructure);
        prop_assert!(!sup.is_empty());
        for (c, s) in sup.zip(shift.iter().cycle()) {
            p[c] += s;
        }
        let mut moved = model.clone();
        moved.set_params(&p).unwrap();
        let after = loss_and_gradient(&moved, ds, norm, &cfg, &integ, Execution::Sequential).unwrap();
        prop_assert_eq!(base.value.total.to_bits(), after.value.total.to_bits());
        prop_assert_eq!(base.grad, after.grad);
    }

    /// For a fixed model and noise seed the noisy residual is
    /// `r - p * e`, so the training MSE is exactly quadratic in the noise
    /// percentage: third differences on an even grid vanish.
    #[test]
    fn noisy_mse_is_quadratic_in_percent(seed in any::<u64>(), step in 0.5f64..5.0) {
        let (ds, norm, _) = toy_fixture();
        let model = toy_model(seed);
        let ps: Vec<f64> = (0..4).map(|i| i as f64 * step).collect();
        let m = train_mse_under_noise(&model, ds, norm, &ps, seed, &IntegratorConfig::default(), Execution::Sequential).unwrap();
        let third = m[3] - 3.0 * m[2] + 3.0 * m[1] - m[0];
        prop_assert!(third.abs() <= 1e-9 * m[3].abs().max(1e-12), "third difference {third} on {m:?}");
        let second = m[2] - 2.0 * m[1] + m[0];
        prop_assert!(second > 0.0, "noise must add a positive quadratic term: {m:?}");
    }
}

#[test]
fn gradient_matches_loss_value() {
    let (ds, norm, _) = toy_fixture();
    let model = toy_model(4);
    let integ = IntegratorConfig::default();
    for stage in [Stage::Kinetic, Stage::Full] {
        let cfg = LossConfig::new(stage);
        let a = loss(&model, ds, norm, &cfg, &integ, Execution::Sequential).unwrap();
        let b = loss_and_gradient(&model, ds, norm, &cfg, &integ, Execution::Parallel).unwrap();
        assert!((a.total - b.value.total).abs() <= 1e-10 * a.total, "{stage:?}: {} vs {}", a.total, b.value.total);
    }
}
