use std::hint::black_box;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{load_data, prepare, require_checkpoint, write_json, DataSource, ExperimentConfig, Surrogate, RESOLVED_CONFIG};
use crate::data::mechanisms::{Biodiesel, Mechanism};
use crate::error::{Error, Result};
use crate::model::{ChemKanModel, ThermoState};
use crate::ode::integrate;

const NOTE: &str = "oracle is the in-repo reference mechanism; no detailed-chemistry baseline is run here";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCondition {
    pub index: usize,
    pub oracle_steps: usize,
    pub surrogate_steps: usize,
    pub oracle_rhs_evals: usize,
    pub surrogate_rhs_evals: usize,
    /// Surrogate over oracle.
    pub step_ratio: f64,
    pub oracle_seconds: f64,
    pub surrogate_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhsTiming {
    pub calls_per_repeat: usize,
    pub oracle_ns_mean: f64,
    pub oracle_ns_std: f64,
    pub surrogate_ns_mean: f64,
    pub surrogate_ns_std: f64,
    /// Surrogate over oracle time per call, over repeats.
    pub ratio_mean: f64,
    pub ratio_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub note: String,
    pub conditions: Vec<BenchCondition>,
    pub rhs: Option<RhsTiming>,
    #[serde(skip)]
    pub files: Vec<PathBuf>,
}

impl BenchReport {
    /// Largest of `surrogate/oracle` and `oracle/surrogate` step counts.
    pub fn worst_step_disparity(&self) -> Option<f64> {
        self.conditions
            .iter()
            .map(|c| c.step_ratio.max(1.0 / c.step_ratio))
            .reduce(f64::max)
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Physical right-hand side of the surrogate over the full state; the
/// temperature rate is zero without the superstructure.
fn surrogate_rhs(model: &ChemKanModel, u: &[f64], du: &mut [f64]) -> Result<()> {
    let s = ThermoState::from_slice(u)?;
    if model.thermo_enabled() {
        du.copy_from_slice(&model.full_rhs(&s)?);
    } else {
        let r = model.kinetic_rhs(&s)?;
        du[..r.len()].copy_from_slice(&r);
        du[r.len()] = 0.0;
    }
    Ok(())
}

/// Times the checkpointed ChemKAN against the reference mechanism: the mean
/// cost of one right-hand-side call over every sampled test state, and
/// end-to-end integrations from each test initial condition at the
/// configured tolerances. Writes `bench.csv` and `bench.json`.
pub fn run_bench(cfg: &ExperimentConfig) -> Result<BenchReport> {
    let Surrogate::ChemKan(model) = require_checkpoint(cfg)? else {
        return Err(Error::InvalidConfig("bench needs a ChemKAN checkpoint".into()));
    };
    let oracle: Box<dyn Mechanism> = match cfg.data.source {
        DataSource::Biodiesel => Box::new(Biodiesel::default()),
        DataSource::Toy => Box::new(cfg.data.toy.mechanism),
        DataSource::Files => {
            return Err(Error::InvalidConfig("no in-repo reference mechanism for file data".into()));
        }
    };
    let data = load_data(cfg)?;
    if model.species() != data.test.species_count() {
        return Err(Error::InvalidConfig("checkpoint and data disagree on the species count".into()));
    }
    let (dir, _) = prepare(cfg, None)?;
    let states: Vec<&Vec<f64>> = data.test.trajectories.iter().flat_map(|t| &t.states).collect();

    let rhs = if states.is_empty() {
        None
    } else {
        let mut du = vec![0.0; model.state_dim()];
        let (mut o, mut s, mut r) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..cfg.bench.repeats.max(1) {
            let t = Instant::now();
            for u in &states {
                oracle.rhs(black_box(u), &mut du);
                black_box(&du);
            }
            let to = t.elapsed().as_secs_f64() * 1e9 / states.len() as f64;
            let t = Instant::now();
            for u in &states {
                surrogate_rhs(&model, black_box(u), &mut du)?;
                black_box(&du);
            }
            let ts = t.elapsed().as_secs_f64() * 1e9 / states.len() as f64;
            o.push(to);
            s.push(ts);
            r.push(ts / to);
        }
        let (oracle_ns_mean, oracle_ns_std) = mean_std(&o);
        let (surrogate_ns_mean, surrogate_ns_std) = mean_std(&s);
        let (ratio_mean, ratio_std) = mean_std(&r);
        Some(RhsTiming {
            calls_per_repeat: states.len(),
            oracle_ns_mean,
            oracle_ns_std,
            surrogate_ns_mean,
            surrogate_ns_std,
            ratio_mean,
            ratio_std,
        })
    };

    let mut conditions = Vec::with_capacity(data.test.len());
    for (index, traj) in data.test.trajectories.iter().enumerate() {
        let u0 = traj.initial_state();
        let span = traj.span();
        let integ = cfg.integrator.with_save_at(Vec::new());
        let t = Instant::now();
        let so = integrate(
            |_, u, du| {
                oracle.rhs(u, du);
                Ok(())
            },
            u0,
            span,
            &integ,
        )?;
        let oracle_seconds = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let ss = integrate(|_, u, du| surrogate_rhs(&model, u, du), u0, span, &integ)?;
        let surrogate_seconds = t.elapsed().as_secs_f64();
        conditions.push(BenchCondition {
            index,
            oracle_steps: so.stats.accepted,
            surrogate_steps: ss.stats.accepted,
            oracle_rhs_evals: so.stats.rhs_evals,
            surrogate_rhs_evals: ss.stats.rhs_evals,
            step_ratio: ss.stats.accepted as f64 / so.stats.accepted.max(1) as f64,
            oracle_seconds,
            surrogate_seconds,
        });
    }

    let report = BenchReport {
        note: NOTE.into(),
        conditions,
        rhs,
        files: Vec::new(),
    };
    let table = dir.join("bench.csv");
    let mut w = csv::Writer::from_path(&table)?;
    w.write_record([
        "index",
        "oracle_steps",
        "surrogate_steps",
        "step_ratio",
        "oracle_rhs_evals",
        "surrogate_rhs_evals",
        "oracle_seconds",
        "surrogate_seconds",
    ])?;
    for c in &report.conditions {
        w.write_record([
            c.index.to_string(),
            c.oracle_steps.to_string(),
            c.surrogate_steps.to_string(),
            c.step_ratio.to_string(),
            c.oracle_rhs_evals.to_string(),
            c.surrogate_rhs_evals.to_string(),
            c.oracle_seconds.to_string(),
            c.surrogate_seconds.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&table, e))?;
    let json = dir.join("bench.json");
    write_json(&json, &report)?;
    Ok(BenchReport {
        files: vec![dir.join(RESOLVED_CONFIG), table, json],
        ..report
    })
}
