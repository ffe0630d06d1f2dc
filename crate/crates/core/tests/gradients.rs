//! Analytic derivatives against central finite differences, from single
//! layers up to the full integrate-normalize-loss pipeline.

use chemkan::data::{NormalizationSpec, Split, Trajectory, TrajectoryDataset};
use chemkan::kan::{KanLayer, LayerShape};
use chemkan::ode::{integrate, integrate_with_sensitivity, IntegratorConfig, RhsWithJacobians};
use chemkan::train::{loss, loss_and_gradient, LossConfig, Stage};
use chemkan::{ChemKanConfig, ChemKanModel, Execution, ParamSelector, StateScaling, ThermoState};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FD_STEP: f64 = 1e-6;

fn close(analytic: f64, fd: f64, rel: f64, floor: f64) -> bool {
    (analytic - fd).abs() <= rel * fd.abs() + floor
}

fn layer_strategy() -> impl Strategy<Value = (LayerShape, u64, Vec<f64>)> {
    (1usize..4, 1usize..4, 1usize..5, any::<bool>(), any::<bool>(), any::<u64>())
        .prop_flat_map(|(n_in, n_out, grid, base, norm, seed)| {
            (
                (0..=n_in).prop_map(move |n_mu| LayerShape {
                    n_in,
                    n_out,
                    n_mu,
                    grid_size: grid,
                    base,
                    normalize_input: norm,
                }),
                Just(seed),
                prop::collection::vec(-2.0f64..2.0, n_in),
            )
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn layer_jacobians_match_finite_differences((shape, seed, x) in layer_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = KanLayer::random(shape, 1.0, &mut rng).unwrap();
        let jac = layer.jacobians(&x).unwrap();
        prop_assert_eq!(&jac.output, &layer.forward(&x).unwrap());
        for j in 0..shape.n_in {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[j] += FD_STEP;
            xm[j] -= FD_STEP;
            let (fp, fm) = (layer.forward(&xp).unwrap(), layer.forward(&xm).unwrap());
            for i in 0..shape.n_out {
                let fd = (fp[i] - fm[i]) / (2.0 * FD_STEP);
                prop_assert!(close(jac.d_input[[i, j]], fd, 1e-5, 1e-8), "d_input[{i},{j}] {} vs {fd}", jac.d_input[[i, j]]);
            }
        }
        let dense = jac.d_params_dense();
        for c in 0..layer.n_params() {
            let (mut lp, mut lm) = (layer.clone(), layer.clone());
            lp.params_mut()[c] += FD_STEP;
            lm.params_mut()[c] -= FD_STEP;
            let (fp, fm) = (lp.forward(&x).unwrap(), lm.forward(&x).unwrap());
            for i in 0..shape.n_out {
                let fd = (fp[i] - fm[i]) / (2.0 * FD_STEP);
                prop_assert!(close(dense[[i, c]], fd, 1e-5, 1e-8), "d_params[{i},{c}] {} vs {fd}", dense[[i, c]]);
            }
        }
    }

    #[test]
    fn model_sensitivities_match_finite_differences(
        seed in any::<u64>(),
        thermo in any::<bool>(),
        base in any::<bool>(),
        hidden in 1usize..4,
        state in prop::collection::vec(-1.5f64..1.5, 3),
    ) {
        let cfg = ChemKanConfig { species: 2, hidden, n_mu: 1, grid_size: 3, base, thermo, correction: thermo };
        let mut model = ChemKanModel::random(cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let params: Vec<f64> = (0..model.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
        model.set_params(&params).unwrap();
        model.set_scaling(StateScaling {
            offset: vec![0.1, -0.2, 0.3],
            range: vec![0.5, 2.0, 1.5],
            time_scale: 0.7,
        }).unwrap();
        let rhs = |m: &ChemKanModel, u: &[f64]| {
            let ts = ThermoState::from_slice(u).unwrap();
            if thermo { m.full_rhs(&ts).unwrap() } else { m.kinetic_rhs(&ts).unwrap() }
        };
        let sens = model.rhs_sensitivities(&ThermoState::from_slice(&state).unwrap(), ParamSelector::All).unwrap();
        for (a, b) in sens.value.iter().zip(rhs(&model, &state)) {
            prop_assert!((a - b).abs() <= 1e-14 * b.abs().max(1.0));
        }
        for j in 0..3 {
            let (mut up, mut um) = (state.clone(), state.clone());
            up[j] += FD_STEP;
            um[j] -= FD_STEP;
            let (fp, fm) = (rhs(&model, &up), rhs(&model, &um));
            for i in 0..fp.len() {
                let fd = (fp[i] - fm[i]) / (2.0 * FD_STEP);
                prop_assert!(close(sens.d_state[[i, j]], fd, 1e-5, 1e-8), "d_state[{i},{j}] {} vs {fd}", sens.d_state[[i, j]]);
            }
        }
        for c in 0..model.n_params() {
            let (mut pp, mut pm) = (params.clone(), params.clone());
            pp[c] += FD_STEP;
            pm[c] -= FD_STEP;
            let (mut mp, mut mm) = (model.clone(), model.clone());
            mp.set_params(&pp).unwrap();
            mm.set_params(&pm).unwrap();
            let (fp, fm) = (rhs(&mp, &state), rhs(&mm, &state));
            for i in 0..fp.len() {
                let fd = (fp[i] - fm[i]) / (2.0 * FD_STEP);
                prop_assert!(close(sens.d_params[[i, c]], fd, 1e-5, 1e-8), "d_params[{i},{c}] {} vs {fd}", sens.d_params[[i, c]]);
            }
        }
    }
}

#[test]
fn selector_columns_are_slices_of_all() {
    let model = ChemKanModel::random(ChemKanConfig::hydrogen(), 3).unwrap();
    let u = ThermoState::new(vec![0.05; 9], 0.4);
    let all = model.rhs_sensitivities(&u, ParamSelector::All).unwrap();
    for sel in [ParamSelector::Kinetic, ParamSelector::Thermo, ParamSelector::Correction, ParamSelector::Superstructure] {
        let part = model.rhs_sensitivities(&u, sel).unwrap();
        let cols = model.partition(sel);
        assert_eq!(part.d_params.ncols(), cols.len());
        for (k, c) in cols.enumerate() {
            assert_eq!(part.d_params.column(k), all.d_params.column(c));
        }
    }
}

fn small_model(seed: u64, thermo: bool) -> ChemKanModel {
    let cfg = ChemKanConfig {
        species: 2,
        hidden: 2,
        n_mu: 1,
        grid_size: 3,
        base: true,
        thermo,
        correction: thermo,
    };
    let mut model = ChemKanModel::random(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
    let p: Vec<f64> = (0..model.n_params()).map(|_| rng.random_range(-0.5..0.5)).collect();
    model.set_params(&p).unwrap();
    model
}

fn tight() -> IntegratorConfig {
    IntegratorConfig {
        abs_tol: 1e-11,
        rel_tol: 1e-11,
        ..IntegratorConfig::training(vec![1.0])
    }
}

#[test]
fn solver_sensitivities_match_finite_differences() {
    for seed in 0..20 {
        let model = small_model(seed, true);
        let u0 = vec![0.4, 0.6, 0.2];
        let run = |m: &ChemKanModel| {
            integrate(
                |_, u, du| {
                    du.copy_from_slice(&m.full_rhs(&ThermoState::from_slice(u)?)?);
                    Ok(())
                },
                &u0,
                (0.0, 1.0),
                &tight(),
            )
            .unwrap()
            .states[0]
                .clone()
        };
        let sol = integrate_with_sensitivity(
            |_, u| {
                let s = model.rhs_sensitivities(&ThermoState::from_slice(u)?, ParamSelector::All)?;
                Ok(RhsWithJacobians {
                    value: s.value,
                    d_state: s.d_state,
                    d_params: s.d_params,
                })
            },
            &u0,
            Array2::zeros((3, model.n_params())).view(),
            (0.0, 1.0),
            &tight(),
        )
        .unwrap();
        let s = &sol.sensitivities[0];
        let p = model.params();
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for c in 0..p.len() {
            let (mut pp, mut pm) = (p.clone(), p.clone());
            pp[c] += FD_STEP;
            pm[c] -= FD_STEP;
            let (mut mp, mut mm) = (model.clone(), model.clone());
            mp.set_params(&pp).unwrap();
            mm.set_params(&pm).unwrap();
            let (fp, fm) = (run(&mp), run(&mm));
            for i in 0..3 {
                let fd = (fp[i] - fm[i]) / (2.0 * FD_STEP);
                worst = worst.max((s[[i, c]] - fd).abs());
                scale = scale.max(fd.abs());
            }
        }
        assert!(worst / scale < 1e-4, "seed {seed}: relative error {}", worst / scale);
    }
}

fn dataset_for(truth: &ChemKanModel) -> TrajectoryDataset {
    let times: Vec<f64> = (0..9).map(|i| i as f64 * 0.125).collect();
    let mut trajs = Vec::new();
    for (a, t0) in [(0.3, 0.9), (0.7, 1.2)] {
        let sol = integrate(
            |_, u, du| {
                du.copy_from_slice(&truth.full_rhs(&ThermoState::from_slice(u)?)?);
                Ok(())
            },
            &[a, 1.0 - a, t0],
            (0.0, 1.0),
            &IntegratorConfig::oracle(times.clone()),
        )
        .unwrap();
        trajs.push(Trajectory::new(sol.times, sol.states, false).unwrap());
    }
    TrajectoryDataset::new(vec!["A".into(), "B".into()], Split::Train, trajs).unwrap()
}

/// Vector-relative error of the analytic gradient against central
/// differences of the loss.
fn gradient_error(model: &ChemKanModel, ds: &TrajectoryDataset, cfg: &LossConfig, integ: &IntegratorConfig) -> f64 {
    let norm = NormalizationSpec::fit(ds).unwrap();
    let lg = loss_and_gradient(model, ds, &norm, cfg, integ, Execution::Sequential).unwrap();
    let p = model.params();
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (k, c) in lg.partition.clone().enumerate() {
        let (mut pp, mut pm) = (p.clone(), p.clone());
        pp[c] += FD_STEP;
        pm[c] -= FD_STEP;
        let (mut mp, mut mm) = (model.clone(), model.clone());
        mp.set_params(&pp).unwrap();
        mm.set_params(&pm).unwrap();
        let lp = loss(&mp, ds, &norm, cfg, integ, Execution::Sequential).unwrap().total;
        let lm = loss(&mm, ds, &norm, cfg, integ, Execution::Sequential).unwrap().total;
        let fd = (lp - lm) / (2.0 * FD_STEP);
        worst = worst.max((lg.grad[k] - fd).abs());
        scale = scale.max(fd.abs());
    }
    worst / scale
}

#[test]
fn loss_gradient_matches_finite_differences_in_both_stages() {
    let ds = dataset_for(&small_model(99, true));
    let integ = IntegratorConfig {
        abs_tol: 1e-11,
        rel_tol: 1e-11,
        ..IntegratorConfig::training(Vec::new())
    };
    for seed in 0..4 {
        let mut model = small_model(seed, true);
        let norm = NormalizationSpec::fit(&ds).unwrap();
        model
            .set_scaling(chemkan::train::scaling_from_normalization(&norm, 0.5))
            .unwrap();
        for stage in [Stage::Kinetic, Stage::Full] {
            let err = gradient_error(&model, &ds, &LossConfig::new(stage), &integ);
            assert!(err < 1e-4, "seed {seed} {stage:?}: {err}");
        }
    }
}

#[test]
fn pinn_gradient_matches_finite_differences() {
    let ds = dataset_for(&small_model(7, true));
    let elements = chemkan::data::ElementMatrix::new(
        vec!["H".into(), "O".into()],
        vec![1.008, 15.999],
        vec!["A".into(), "B".into()],
        vec![2.016, 17.007],
        vec![vec![2, 1], vec![0, 1]],
    )
    .unwrap();
    let mut cfg = LossConfig::with_pinn(Stage::Full, elements);
    cfg.alpha_pinn = 0.5;
    let integ = IntegratorConfig {
        abs_tol: 1e-11,
        rel_tol: 1e-11,
        ..IntegratorConfig::training(Vec::new())
    };
    let err = gradient_error(&small_model(3, true), &ds, &cfg, &integ);
    assert!(err < 1e-4, "{err}");
}
