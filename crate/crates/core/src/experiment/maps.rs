use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{single, DataSource, ExperimentConfig};
use crate::data::mechanisms::{condition_grid, generate_toy};
use crate::data::{NormalizationSpec, Split};
use crate::error::{Error, Result};
use crate::model::ChemKanModel;
use crate::par;
use crate::train::{evaluate_mse, Stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMapPoint {
    pub t0: f64,
    pub yf0: f64,
    pub training: bool,
    pub mse: f64,
    /// Mean MSE of the training nodes bounding this point's cell.
    pub neighbor_mse: Option<f64>,
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMap {
    pub points: Vec<ErrorMapPoint>,
}

impl ErrorMap {
    /// Worst unseen-to-neighbor MSE ratio.
    pub fn max_ratio(&self) -> Option<f64> {
        self.points.iter().filter_map(|p| p.ratio).reduce(f64::max)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["T0", "YF0", "training", "mse", "neighbor_mse", "ratio"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for p in &self.points {
            w.write_record([
                p.t0.to_string(),
                p.yf0.to_string(),
                p.training.to_string(),
                p.mse.to_string(),
                opt(p.neighbor_mse),
                opt(p.ratio),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Test MSE of the toy model on every node of the configured grid. Nodes
/// with even indices on both axes are training nodes; every other node is
/// compared against the training nodes at the corners of its cell.
pub fn toy_error_map(model: &ChemKanModel, cfg: &ExperimentConfig) -> Result<ErrorMap> {
    if cfg.data.source != DataSource::Toy {
        return Err(Error::InvalidConfig("the error map is defined on toy data".into()));
    }
    let temps = &cfg.data.toy_temperatures;
    let fuel = &cfg.data.toy_fuel;
    if temps.len() < 3 || fuel.len() < 3 {
        return Err(Error::InvalidConfig("the error map needs at least a 3x3 grid".into()));
    }
    let grid = generate_toy(&condition_grid(temps, fuel), Split::Test, &cfg.data.toy, &cfg.data.generator, cfg.execution)?;
    // The map is evaluated against the training normalization, which the
    // model's scaling already encodes.
    let sc = model.scaling();
    let norm = NormalizationSpec {
        min: sc.offset.clone(),
        range: sc.range.clone(),
    };
    let mse = par::try_map(cfg.execution, &grid.trajectories, |_, t| {
        evaluate_mse(model, &single(&grid, t)?, &norm, Stage::Full, &cfg.integrator, par::Execution::Sequential)
    })?;
    let nf = fuel.len();
    let at = |i: usize, j: usize| mse[i * nf + j];
    let bounds = |i: usize, n: usize| -> Vec<usize> {
        if i % 2 == 0 {
            vec![i]
        } else if i + 1 < n {
            vec![i - 1, i + 1]
        } else {
            vec![i - 1]
        }
    };
    let mut points = Vec::with_capacity(mse.len());
    for (i, &t0) in temps.iter().enumerate() {
        for (j, &yf0) in fuel.iter().enumerate() {
            let training = i % 2 == 0 && j % 2 == 0;
            let (neighbor_mse, ratio) = if training {
                (None, None)
            } else {
                let nb: Vec<f64> = bounds(i, temps.len())
                    .iter()
                    .flat_map(|&a| bounds(j, nf).into_iter().map(move |b| (a, b)))
                    .map(|(a, b)| at(a, b))
                    .collect();
                let mean = nb.iter().sum::<f64>() / nb.len() as f64;
                (Some(mean), Some(at(i, j) / mean))
            };
            points.push(ErrorMapPoint {
                t0,
                yf0,
                training,
                mse: at(i, j),
                neighbor_mse,
                ratio,
            });
        }
    }
    Ok(ErrorMap { points })
}
