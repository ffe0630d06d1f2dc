//! Trajectory-matching loss, its gradient by forward sensitivities, and the
//! two-stage training loop.
//!
//! Models are integrated in their own scaled coordinates (see
//! [`StateScaling`]); the loss compares states after mapping both prediction
//! and data through the dataset's [`NormalizationSpec`].
//!
//! Stage 1 integrates the species only and reads temperature from a
//! piecewise-linear interpolant of the trajectory being fitted. Stage 2
//! integrates the full state.

use std::fs;
use std::ops::Range;
use std::path::Path;
use std::time::Instant;

use ndarray::s;
use serde::{Deserialize, Serialize};

use crate::data::{ElementMatrix, NormalizationSpec, Trajectory, TrajectoryDataset};
use crate::error::{check_dim, Error, Result};
use crate::model::{ChemKanModel, ParamSelector, RhsMode, SensitivityWorkspace, StateScaling};
use crate::ode::{augment, integrate, IntegratorConfig};
use crate::optim::{Adam, AdamConfig};
use crate::par::{self, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Stage {
    /// Species rates only, temperature read from data.
    Kinetic,
    /// Full state including temperature.
    Full,
}

impl TryFrom<u8> for Stage {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Stage::Kinetic),
            2 => Ok(Stage::Full),
            other => Err(format!("stage must be 1 or 2, got {other}")),
        }
    }
}

impl From<Stage> for u8 {
    fn from(s: Stage) -> u8 {
        match s {
            Stage::Kinetic => 1,
            Stage::Full => 2,
        }
    }
}

impl Stage {
    /// Number of leading states entering the loss.
    pub fn n_star(self, species: usize) -> usize {
        match self {
            Stage::Kinetic => species,
            Stage::Full => species + 1,
        }
    }

    /// Parameters updated in this stage.
    pub fn selector(self) -> ParamSelector {
        match self {
            Stage::Kinetic => ParamSelector::Kinetic,
            Stage::Full => ParamSelector::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub stage: Stage,
    pub alpha_pinn: f64,
    pub pinn: bool,
    #[serde(default)]
    pub elements: Option<ElementMatrix>,
}

impl LossConfig {
    pub fn new(stage: Stage) -> Self {
        Self {
            stage,
            alpha_pinn: 1e-4,
            pinn: false,
            elements: None,
        }
    }

    pub fn with_pinn(stage: Stage, elements: ElementMatrix) -> Self {
        Self {
            pinn: true,
            elements: Some(elements),
            ..Self::new(stage)
        }
    }

    fn validate(&self, species: usize) -> Result<()> {
        if self.pinn {
            let e = self
                .elements
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("element conservation term needs an element matrix".into()))?;
            check_dim("element matrix species", species, e.n_species())?;
            if !(self.alpha_pinn >= 0.0) {
                return Err(Error::InvalidConfig("alpha_pinn must be non-negative".into()));
            }
        }
        Ok(())
    }

    fn elements(&self) -> Option<&ElementMatrix> {
        if self.pinn {
            self.elements.as_ref()
        } else {
            None
        }
    }
}

/// Model scaling that maps the normalization window onto the network's
/// input coordinates.
pub fn scaling_from_normalization(norm: &NormalizationSpec, time_scale: f64) -> StateScaling {
    StateScaling {
        offset: norm.min.clone(),
        range: norm.range.clone(),
        time_scale,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub mse: f64,
    /// Weighted element-conservation term (0 when disabled).
    pub pinn: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct LossGradient {
    pub value: LossValue,
    /// Derivative with respect to the columns in `partition`.
    pub grad: Vec<f64>,
    pub partition: Range<usize>,
}

/// One simulated trajectory in scaled coordinates.
struct Simulation {
    /// `z` at every sample, `ns` entries each.
    states: Vec<Vec<f64>>,
    /// Row-major `ns x p` sensitivities at every sample (empty when `p = 0`).
    sens: Vec<Vec<f64>>,
}

fn simulate(
    model: &ChemKanModel,
    traj: &Trajectory,
    stage: Stage,
    cols: Option<Range<usize>>,
    integ: &IntegratorConfig,
) -> Result<Simulation> {
    if stage == Stage::Full && !model.thermo_enabled() {
        return Err(Error::Contract("stage 2 needs the thermo superstructure".into()));
    }
    check_dim("trajectory state", model.state_dim(), traj.dim())?;
    let m = model.species();
    let n = model.state_dim();
    let ns = stage.n_star(m);
    let mode = match stage {
        Stage::Kinetic => RhsMode::Kinetic,
        Stage::Full => RhsMode::Full,
    };
    let scaling = model.scaling().clone();
    let ts = scaling.time_scale;
    let cols = cols.unwrap_or(0..0);
    let p = cols.len();

    let z0 = scaling.to_scaled(traj.initial_state());
    let mut y0 = z0[..ns].to_vec();
    y0.resize(ns + ns * p, 0.0);
    let save: Vec<f64> = traj.times.iter().map(|t| t / ts).collect();
    let span = (save[0], save[save.len() - 1]);
    if save.len() < 2 {
        return Ok(Simulation {
            states: vec![z0[..ns].to_vec()],
            sens: vec![vec![0.0; ns * p]],
        });
    }
    let cfg = integ.with_save_at(save);

    let mut ws = SensitivityWorkspace::new(model);
    let mut z = vec![0.0; n];
    let (off_t, rng_t) = (scaling.offset[m], scaling.range[m]);
    let sol = integrate(
        |tau, y, dy| {
            z[..ns].copy_from_slice(&y[..ns]);
            if stage == Stage::Kinetic {
                z[m] = (traj.temperature_at(tau * ts) - off_t) / rng_t;
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("model state at tau = {tau}"),
                });
            }
            model.eval_scaled(&z, mode, &mut ws);
            dy[..ns].copy_from_slice(&ws.value[..ns]);
            if p > 0 {
                let ju = ws.d_state.slice(s![..ns, ..ns]);
                let jp = ws.d_params.slice(s![..ns, cols.clone()]);
                augment(ju, &y[ns..], jp, &mut dy[ns..]);
            }
            Ok(())
        },
        &y0,
        span,
        &cfg,
    )?;
    let mut states = Vec::with_capacity(sol.states.len());
    let mut sens = Vec::with_capacity(sol.states.len());
    for mut y in sol.states {
        sens.push(y.split_off(ns));
        states.push(y);
    }
    Ok(Simulation { states, sens })
}

/// Physical predicted states at the trajectory's sample times. In stage 1
/// the temperature column is copied from the data.
pub fn predict(model: &ChemKanModel, traj: &Trajectory, stage: Stage, integ: &IntegratorConfig) -> Result<Vec<Vec<f64>>> {
    let sim = simulate(model, traj, stage, None, integ)?;
    let sc = model.scaling();
    Ok(sim
        .states
        .iter()
        .zip(&traj.states)
        .map(|(z, obs)| {
            let mut u: Vec<f64> = z.iter().enumerate().map(|(k, v)| sc.offset[k] + sc.range[k] * v).collect();
            if u.len() < obs.len() {
                u.push(obs[obs.len() - 1]);
            }
            u
        })
        .collect())
}

/// Per-trajectory sums before averaging.
struct Terms {
    sse: f64,
    rows: usize,
    pinn: f64,
    grad_sse: Vec<f64>,
    grad_pinn: Vec<f64>,
}

fn trajectory_terms(
    model: &ChemKanModel,
    traj: &Trajectory,
    norm: &NormalizationSpec,
    cfg: &LossConfig,
    integ: &IntegratorConfig,
    cols: Option<Range<usize>>,
) -> Result<Terms> {
    let p = cols.as_ref().map_or(0, |c| c.len());
    let sim = simulate(model, traj, cfg.stage, cols, integ)?;
    let m = model.species();
    let ns = cfg.stage.n_star(m);
    let sc = model.scaling();
    let mut terms = Terms {
        sse: 0.0,
        rows: traj.len(),
        pinn: 0.0,
        grad_sse: vec![0.0; p],
        grad_pinn: vec![0.0; p],
    };
    let phys = |z: &[f64], k: usize| sc.offset[k] + sc.range[k] * z[k];
    for (j, (z, obs)) in sim.states.iter().zip(&traj.states).enumerate() {
        for k in 0..ns {
            let e = (phys(z, k) - obs[k]) / norm.range[k];
            terms.sse += e * e;
            if p > 0 {
                let c = 2.0 * e * sc.range[k] / norm.range[k];
                let row = &sim.sens[j][k * p..(k + 1) * p];
                for (g, s) in terms.grad_sse.iter_mut().zip(row) {
                    *g += c * s;
                }
            }
        }
    }
    if let Some(elements) = cfg.elements() {
        let z0 = &sim.states[0];
        for (j, z) in sim.states.iter().enumerate().skip(1) {
            for i in 0..elements.n_elements() {
                let r: f64 = (0..m).map(|k| elements.weight(i, k) * (phys(z, k) - phys(z0, k))).sum();
                terms.pinn += r.abs();
                if p > 0 && r != 0.0 {
                    let sign = r.signum();
                    for k in 0..m {
                        let c = sign * elements.weight(i, k) * sc.range[k];
                        if c == 0.0 {
                            continue;
                        }
                        let row = &sim.sens[j][k * p..(k + 1) * p];
                        let row0 = &sim.sens[0][k * p..(k + 1) * p];
                        for ((g, s), s0) in terms.grad_pinn.iter_mut().zip(row).zip(row0) {
                            *g += c * (s - s0);
                        }
                    }
                }
            }
        }
    }
    Ok(terms)
}

fn check_inputs(model: &ChemKanModel, dataset: &TrajectoryDataset, norm: &NormalizationSpec, cfg: &LossConfig) -> Result<()> {
    check_dim("dataset species", model.species(), dataset.species_count())?;
    norm.check(model.state_dim())?;
    cfg.validate(model.species())?;
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("loss over an empty dataset".into()));
    }
    Ok(())
}

fn combine(terms: &[Terms], ns: usize, cfg: &LossConfig, p: usize) -> (LossValue, Vec<f64>) {
    let rows: usize = terms.iter().map(|t| t.rows).sum();
    let mse_scale = 1.0 / (ns * rows) as f64;
    let pinn_scale = if cfg.pinn {
        cfg.alpha_pinn / terms.len() as f64
    } else {
        0.0
    };
    let mut grad = vec![0.0; p];
    let (mut sse, mut pinn) = (0.0, 0.0);
    for t in terms {
        sse += t.sse;
        pinn += t.pinn;
        for i in 0..p {
            grad[i] += mse_scale * t.grad_sse[i] + pinn_scale * t.grad_pinn[i];
        }
    }
    let mse = sse * mse_scale;
    let pinn = pinn * pinn_scale;
    (
        LossValue {
            mse,
            pinn,
            total: mse + pinn,
        },
        grad,
    )
}

/// Loss without gradient.
pub fn loss(
    model: &ChemKanModel,
    dataset: &TrajectoryDataset,
    norm: &NormalizationSpec,
    cfg: &LossConfig,
    integ: &IntegratorConfig,
    exec: Execution,
) -> Result<LossValue> {
    check_inputs(model, dataset, norm, cfg)?;
    let terms = par::try_map(exec, &dataset.trajectories, |_, traj| {
        trajectory_terms(model, traj, norm, cfg, integ, None)
    })?;
    Ok(combine(&terms, cfg.stage.n_star(model.species()), cfg, 0).0)
}

/// Loss and its gradient with respect to the stage's parameter partition.
pub fn loss_and_gradient(
    model: &ChemKanModel,
    dataset: &TrajectoryDataset,
    norm: &NormalizationSpec,
    cfg: &LossConfig,
    integ: &IntegratorConfig,
    exec: Execution,
) -> Result<LossGradient> {
    check_inputs(model, dataset, norm, cfg)?;
    let partition = model.partition(cfg.stage.selector());
    let terms = par::try_map(exec, &dataset.trajectories, |_, traj| {
        trajectory_terms(model, traj, norm, cfg, integ, Some(partition.clone()))
    })?;
    let (value, grad) = combine(&terms, cfg.stage.n_star(model.species()), cfg, partition.len());
    Ok(LossGradient { value, grad, partition })
}

/// Normalized MSE over the first `n*` states of every sample.
pub fn evaluate_mse(
    model: &ChemKanModel,
    dataset: &TrajectoryDataset,
    norm: &NormalizationSpec,
    stage: Stage,
    integ: &IntegratorConfig,
    exec: Execution,
) -> Result<f64> {
    Ok(loss(model, dataset, norm, &LossConfig::new(stage), integ, exec)?.mse)
}

/// MSE against the noise-free parents of a (possibly noisy) dataset.
pub fn evaluate_noise_free(
    model: &ChemKanModel,
    dataset: &TrajectoryDataset,
    norm: &NormalizationSpec,
    stage: Stage,
    integ: &IntegratorConfig,
    exec: Execution,
) -> Result<f64> {
    evaluate_mse(model, &dataset.clean_version(), norm, stage, integ, exec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    pub integrator: IntegratorConfig,
    /// Test metrics every this many epochs; 0 disables them.
    #[serde(default = "one")]
    pub eval_every: usize,
    #[serde(default)]
    pub execution: Execution,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl TrainConfig {
    pub fn new(epochs: usize) -> Self {
        Self {
            epochs,
            adam: AdamConfig::default(),
            integrator: IntegratorConfig {
                max_steps: 20_000,
                ..IntegratorConfig::training(Vec::new())
            },
            eval_every: 1,
            execution: Execution::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub test_mse: Option<f64>,
    pub noisefree_mse: Option<f64>,
    pub pinn: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub stage: Stage,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    /// Epochs whose update was rolled back after a numerical failure.
    pub failed_epochs: Vec<usize>,
    pub final_lr: f64,
    pub final_train_mse: f64,
    pub final_test_mse: Option<f64>,
    pub final_noisefree_mse: Option<f64>,
    pub final_params: Vec<f64>,
}

impl TrainReport {
    pub fn train_trace(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_mse).collect()
    }

    pub fn test_trace(&self) -> Vec<f64> {
        self.epochs.iter().filter_map(|e| e.test_mse).collect()
    }

    pub fn noisefree_trace(&self) -> Vec<f64> {
        self.epochs.iter().filter_map(|e| e.noisefree_mse).collect()
    }

    /// Columns `epoch,train_mse,test_mse,noisefree_mse,pinn,seconds`;
    /// missing values are empty fields.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_epoch_csv(path, &self.epochs)
    }
}

pub(crate) fn write_epoch_csv(path: &Path, epochs: &[EpochRecord]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_mse", "test_mse", "noisefree_mse", "pinn", "seconds"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for e in epochs {
        w.write_record([
            e.epoch.to_string(),
            e.train_mse.to_string(),
            opt(e.test_mse),
            opt(e.noisefree_mse),
            opt(e.pinn),
            e.seconds.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Held-out data for per-epoch metrics.
#[derive(Debug, Clone, Copy)]
pub struct Evaluation<'a> {
    pub test: &'a TrajectoryDataset,
}

fn test_metrics(
    model: &ChemKanModel,
    eval: Option<Evaluation<'_>>,
    norm: &NormalizationSpec,
    stage: Stage,
    cfg: &TrainConfig,
) -> (Option<f64>, Option<f64>) {
    let Some(eval) = eval else {
        return (None, None);
    };
    let run = |ds: &TrajectoryDataset| match evaluate_mse(model, ds, norm, stage, &cfg.integrator, cfg.execution) {
        Ok(v) => Some(v),
        Err(e) => {
            log::warn!("test evaluation failed: {e}");
            None
        }
    };
    let test = run(eval.test);
    let clean = if eval.test.is_noisy() {
        run(&eval.test.clean_version())
    } else {
        test
    };
    (test, clean)
}

/// Full-batch Adam over the stage's parameter partition.
///
/// A numerical failure rolls parameters and optimizer state back to the last
/// successful epoch and halves the learning rate; a second failure aborts.
pub fn train_stage(
    model: &mut ChemKanModel,
    train: &TrajectoryDataset,
    eval: Option<Evaluation<'_>>,
    norm: &NormalizationSpec,
    loss_cfg: &LossConfig,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    check_inputs(model, train, norm, loss_cfg)?;
    if loss_cfg.stage == Stage::Full && !model.thermo_enabled() {
        return Err(Error::Contract("stage 2 needs the thermo superstructure".into()));
    }
    let range = model.partition(loss_cfg.stage.selector());
    let mut params = model.params();
    let mut adam = Adam::new(cfg.adam, range.len())?;
    let mut snapshot = (params.clone(), adam.clone());
    let mut halved = false;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut failed_epochs = Vec::new();

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let step = loss_and_gradient(model, train, norm, loss_cfg, &cfg.integrator, cfg.execution).and_then(|lg| {
            if lg.value.total.is_finite() && lg.grad.iter().all(|g| g.is_finite()) {
                Ok(lg)
            } else {
                Err(Error::NonFinite {
                    context: "loss or gradient".into(),
                })
            }
        });
        let lg = match step {
            Ok(lg) => lg,
            Err(e) if e.is_numerical() => {
                if halved {
                    return Err(Error::TrainingAborted {
                        epoch,
                        reason: format!("{e} (after rollback and learning-rate halving)"),
                    });
                }
                log::warn!("epoch {epoch}: {e}; rolling back and halving the learning rate");
                (params, adam) = snapshot.clone();
                adam.config.lr *= 0.5;
                model.set_params(&params)?;
                halved = true;
                failed_epochs.push(epoch);
                continue;
            }
            Err(e) => return Err(e),
        };
        let due = cfg.eval_every > 0 && epoch % cfg.eval_every == 0;
        let (test_mse, noisefree_mse) = if due {
            test_metrics(model, eval, norm, loss_cfg.stage, cfg)
        } else {
            (None, None)
        };

        snapshot = (params.clone(), adam.clone());
        let mut sub = params[range.clone()].to_vec();
        adam.step(&mut sub, &lg.grad)?;
        params[range.clone()].copy_from_slice(&sub);
        model.set_params(&params)?;

        epochs.push(EpochRecord {
            epoch,
            train_mse: lg.value.mse,
            test_mse,
            noisefree_mse,
            pinn: loss_cfg.pinn.then_some(lg.value.pinn),
            seconds: start.elapsed().as_secs_f64(),
        });
        if epoch % 500 == 0 {
            log::info!("stage {:?} epoch {epoch}: train {:.3e}", loss_cfg.stage, lg.value.mse);
        }
    }

    let final_train_mse = loss(model, train, norm, &LossConfig::new(loss_cfg.stage), &cfg.integrator, cfg.execution)?.mse;
    let (final_test_mse, final_noisefree_mse) = test_metrics(model, eval, norm, loss_cfg.stage, cfg);
    Ok(TrainReport {
        stage: loss_cfg.stage,
        seed: cfg.seed,
        epochs,
        failed_epochs,
        final_lr: adam.config.lr,
        final_train_mse,
        final_test_mse,
        final_noisefree_mse,
        final_params: model.params(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Split, Trajectory};
    use crate::model::ChemKanConfig;

    fn tiny(thermo: bool) -> ChemKanConfig {
        ChemKanConfig {
            species: 2,
            hidden: 2,
            n_mu: 1,
            grid_size: 3,
            base: true,
            thermo,
            correction: thermo,
        }
    }

    fn synthetic(model: &ChemKanModel, stage: Stage) -> TrajectoryDataset {
        // Data produced by the model itself, so the loss is zero there.
        let times: Vec<f64> = (0..6).map(|i| i as f64 * 0.2).collect();
        let mut trajs = Vec::new();
        for (a, temp) in [(0.3, 1.1), (0.6, 0.9)] {
            let base = Trajectory::new(times.clone(), times.iter().map(|t| vec![a, 1.0 - a, temp + 0.1 * t]).collect(), false)
                .unwrap();
            let pred = predict(model, &base, stage, &IntegratorConfig::oracle(Vec::new())).unwrap();
            trajs.push(Trajectory::new(times.clone(), pred, false).unwrap());
        }
        TrajectoryDataset::new(vec!["A".into(), "B".into()], Split::Train, trajs).unwrap()
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let model = ChemKanModel::random(tiny(true), 2).unwrap();
        for stage in [Stage::Kinetic, Stage::Full] {
            let ds = synthetic(&model, stage);
            let norm = NormalizationSpec::fit(&ds).unwrap();
            let v = loss(&model, &ds, &norm, &LossConfig::new(stage), &IntegratorConfig::oracle(Vec::new()), Execution::Sequential)
                .unwrap();
            assert!(v.mse < 1e-20, "{stage:?}: {}", v.mse);
        }
    }

    #[test]
    fn stage_one_ignores_superstructure() {
        let mut model = ChemKanModel::random(tiny(true), 4).unwrap();
        let ds = synthetic(&ChemKanModel::random(tiny(true), 5).unwrap(), Stage::Full);
        let norm = NormalizationSpec::fit(&ds).unwrap();
        let integ = IntegratorConfig::training(Vec::new());
        let cfg = LossConfig::new(Stage::Kinetic);
        let a = loss(&model, &ds, &norm, &cfg, &integ, Execution::Sequential).unwrap();
        let sup = model.partition(ParamSelector::Superstructure);
        model.set_partition(ParamSelector::Superstructure, &vec![0.37; sup.len()]).unwrap();
        let b = loss(&model, &ds, &norm, &cfg, &integ, Execution::Sequential).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let mut model = ChemKanModel::random(tiny(false), 1).unwrap();
        let before = model.clone();
        let ds = synthetic(&ChemKanModel::random(tiny(true), 3).unwrap(), Stage::Full);
        let norm = NormalizationSpec::fit(&ds).unwrap();
        let report = train_stage(&mut model, &ds, None, &norm, &LossConfig::new(Stage::Kinetic), &TrainConfig::new(0)).unwrap();
        assert!(report.epochs.is_empty());
        assert_eq!(model, before);
        assert!(train_stage(&mut model, &ds, None, &norm, &LossConfig::new(Stage::Full), &TrainConfig::new(1)).is_err());
    }

    #[test]
    fn pinn_needs_elements_and_vanishes_on_constant_composition() {
        let model = ChemKanModel::zeros(tiny(true)).unwrap();
        let ds = synthetic(&model, Stage::Full);
        let norm = NormalizationSpec::fit(&ds).unwrap();
        let integ = IntegratorConfig::training(Vec::new());
        let bad = LossConfig {
            pinn: true,
            ..LossConfig::new(Stage::Full)
        };
        assert!(loss(&model, &ds, &norm, &bad, &integ, Execution::Sequential).is_err());
        let elements = ElementMatrix::new(
            vec!["H".into(), "O".into()],
            vec![1.008, 15.999],
            vec!["H2".into(), "O2".into()],
            vec![2.016, 31.998],
            vec![vec![2, 0], vec![0, 2]],
        )
        .unwrap();
        let cfg = LossConfig::with_pinn(Stage::Full, elements);
        assert_eq!(loss(&model, &ds, &norm, &cfg, &integ, Execution::Sequential).unwrap().pinn, 0.0);
    }

    #[test]
    fn report_csv_has_empty_fields_for_missing_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_epoch_csv(
            &path,
            &[EpochRecord {
                epoch: 0,
                train_mse: 0.5,
                test_mse: None,
                noisefree_mse: Some(0.25),
                pinn: None,
                seconds: 1.0,
            }],
        )
        .unwrap();
        let text = fs::read_to_string(path).unwrap();
        assert_eq!(text, "epoch,train_mse,test_mse,noisefree_mse,pinn,seconds\n0,0.5,,0.25,,1\n");
    }
}
