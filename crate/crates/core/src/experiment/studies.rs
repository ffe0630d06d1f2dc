use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{build_chemkan, load_data, prepare, train_chemkan, train_deeponet, write_json, Datasets, ExperimentConfig, RESOLVED_CONFIG};
use crate::data::{apply_noise, NormalizationSpec, TrajectoryDataset};
use crate::deeponet::DeepOnetConfig;
use crate::error::{Error, Result};
use crate::model::{ChemKanConfig, ChemKanModel};
use crate::ode::IntegratorConfig;
use crate::par::{self, Execution};
use crate::train::{evaluate_mse, TrainReport};

/// Where a metric trace bottomed out and how far it ended above that.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Overshoot {
    /// Index into the trace.
    pub argmin: usize,
    pub min: f64,
    pub last: f64,
    /// `last / min`.
    pub ratio: f64,
}

pub fn overshoot(trace: &[f64]) -> Option<Overshoot> {
    let last = *trace.last()?;
    let (argmin, min) = trace
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, v)| if v < best.1 { (i, v) } else { best });
    Some(Overshoot {
        argmin,
        min,
        last,
        ratio: last / min,
    })
}

/// Least-squares slope of `log10(y)` against `log10(x)`. `None` with fewer
/// than two distinct abscissae or non-positive values.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return None;
    }
    let pts: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.log10(), y.log10())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if pts.len() < 2 || sxx <= 1e-300 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

/// Training MSE of a fixed model against copies of `clean` carrying each
/// noise level. One seed for all levels, so the levels share the same
/// standard-normal draws.
pub fn train_mse_under_noise(
    model: &ChemKanModel,
    clean: &TrajectoryDataset,
    norm: &NormalizationSpec,
    percents: &[f64],
    seed: u64,
    integ: &IntegratorConfig,
    exec: Execution,
) -> Result<Vec<f64>> {
    let stage = super::evaluation_stage(model, clean);
    percents
        .iter()
        .map(|&p| evaluate_mse(model, &apply_noise(clean, p, seed)?, norm, stage, integ, exec))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevelResult {
    pub percent: f64,
    /// Final-stage report of the ChemKAN.
    pub chemkan: Option<TrainReport>,
    pub deeponet: Option<TrainReport>,
    pub chemkan_overshoot: Option<Overshoot>,
    pub deeponet_overshoot: Option<Overshoot>,
    pub errors: Vec<String>,
}

impl NoiseLevelResult {
    /// DeepONet noise-free trace bottoms out early and ends at least 1.2x
    /// above its minimum.
    pub fn deeponet_overfits(&self) -> Option<bool> {
        let o = self.deeponet_overshoot?;
        let n = self.deeponet.as_ref()?.noisefree_trace().len();
        Some(o.argmin + 1 < n && o.ratio >= 1.2)
    }

    /// ChemKAN noise-free trace ends within 1.1x of its minimum.
    pub fn chemkan_stable(&self) -> Option<bool> {
        Some(self.chemkan_overshoot?.ratio <= 1.1)
    }

    pub fn noisefree_ratio(&self) -> Option<f64> {
        Some(self.deeponet.as_ref()?.final_noisefree_mse? / self.chemkan.as_ref()?.final_noisefree_mse?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseStudyReport {
    pub chemkan_parameters: usize,
    pub deeponet_parameters: usize,
    pub levels: Vec<NoiseLevelResult>,
    #[serde(skip)]
    pub files: Vec<PathBuf>,
}

impl NoiseStudyReport {
    pub fn level(&self, percent: f64) -> Option<&NoiseLevelResult> {
        self.levels.iter().find(|l| l.percent == percent)
    }
}

/// Paired ChemKAN and DeepONet training at each noise level. Both models see
/// the same noisy splits; every level shares the clean-data normalization so
/// the metrics are comparable. A failed level is recorded and skipped.
///
/// Writes `noise_summary.csv`, `noise.json` and per-level traces.
pub fn run_noise_study(cfg: &ExperimentConfig) -> Result<NoiseStudyReport> {
    let mut clean_cfg = cfg.clone();
    clean_cfg.data.noise_percent = 0.0;
    let clean = load_data(&clean_cfg)?;
    let (dir, resolved) = prepare(cfg, Some(&clean))?;
    let kan_cfg = resolved.model.expect("resolved");
    let don_cfg = resolved.deeponet.clone().expect("resolved");
    let mut files = vec![dir.join(RESOLVED_CONFIG)];
    let mut levels = Vec::with_capacity(cfg.noise.levels.len());
    for &percent in &cfg.noise.levels {
        log::info!("noise level {percent}%");
        let res = noise_level(&resolved, &clean, percent, kan_cfg, &don_cfg);
        for (name, rep) in [("chemkan", &res.chemkan), ("deeponet", &res.deeponet)] {
            if let Some(r) = rep {
                let p = dir.join(format!("{name}_noise_{percent}.csv"));
                r.write_csv(&p)?;
                files.push(p);
            }
        }
        levels.push(res);
    }
    let report = NoiseStudyReport {
        chemkan_parameters: kan_cfg.parameter_count().total,
        deeponet_parameters: don_cfg.parameter_count(),
        levels,
        files: Vec::new(),
    };
    let table = dir.join("noise_summary.csv");
    write_noise_table(&table, &report)?;
    let json = dir.join("noise.json");
    write_json(&json, &report)?;
    files.extend([table, json]);
    Ok(NoiseStudyReport { files, ..report })
}

fn noise_level(
    cfg: &ExperimentConfig,
    clean: &Datasets,
    percent: f64,
    kan_cfg: ChemKanConfig,
    don_cfg: &DeepOnetConfig,
) -> NoiseLevelResult {
    let mut errors = Vec::new();
    let data = (|| -> Result<Datasets> {
        Ok(Datasets {
            train: apply_noise(&clean.train, percent, cfg.noise.seed)?,
            test: apply_noise(&clean.test, percent, cfg.noise.seed.wrapping_add(1))?,
            ..clean.clone()
        })
    })();
    let data = match data {
        Ok(d) => d,
        Err(e) => {
            errors.push(format!("noise: {e}"));
            return NoiseLevelResult {
                percent,
                chemkan: None,
                deeponet: None,
                chemkan_overshoot: None,
                deeponet_overshoot: None,
                errors,
            };
        }
    };
    let chemkan = build_chemkan(kan_cfg, cfg.training.seed, &data)
        .and_then(|mut m| train_chemkan(cfg, &mut m, &data, cfg.execution))
        .map(|mut reps| reps.pop().expect("at least one stage"))
        .map_err(|e| errors.push(format!("chemkan: {e}")))
        .ok();
    let deeponet = train_deeponet(cfg, don_cfg.clone(), &data, cfg.execution)
        .map(|(_, r)| r)
        .map_err(|e| errors.push(format!("deeponet: {e}")))
        .ok();
    NoiseLevelResult {
        percent,
        chemkan_overshoot: chemkan.as_ref().and_then(|r| overshoot(&r.noisefree_trace())),
        deeponet_overshoot: deeponet.as_ref().and_then(|r| overshoot(&r.noisefree_trace())),
        chemkan,
        deeponet,
        errors,
    }
}

fn write_noise_table(path: &Path, report: &NoiseStudyReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "percent",
        "chemkan_train",
        "chemkan_test",
        "chemkan_noisefree",
        "chemkan_overshoot",
        "chemkan_stable",
        "deeponet_train",
        "deeponet_test",
        "deeponet_noisefree",
        "deeponet_overshoot",
        "deeponet_overfits",
        "noisefree_ratio",
        "errors",
    ])?;
    let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let b = |v: Option<bool>| v.map(|x| x.to_string()).unwrap_or_default();
    for l in &report.levels {
        let k = l.chemkan.as_ref();
        let d = l.deeponet.as_ref();
        w.write_record([
            l.percent.to_string(),
            f(k.map(|r| r.final_train_mse)),
            f(k.and_then(|r| r.final_test_mse)),
            f(k.and_then(|r| r.final_noisefree_mse)),
            f(l.chemkan_overshoot.map(|o| o.ratio)),
            b(l.chemkan_stable()),
            f(d.map(|r| r.final_train_mse)),
            f(d.and_then(|r| r.final_test_mse)),
            f(d.and_then(|r| r.final_noisefree_mse)),
            f(l.deeponet_overshoot.map(|o| o.ratio)),
            b(l.deeponet_overfits()),
            f(l.noisefree_ratio()),
            l.errors.join("; "),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub model: String,
    /// Hidden width (ChemKAN) or layer width (DeepONet).
    pub size: usize,
    pub parameters: usize,
    pub train_mse: Option<f64>,
    pub test_mse: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub entries: Vec<SweepEntry>,
    /// Log-log slope of train MSE against parameter count.
    pub chemkan_slope: Option<f64>,
    pub deeponet_slope: Option<f64>,
    #[serde(skip)]
    pub files: Vec<PathBuf>,
}

/// ChemKAN hidden-width ladder with `n_mu = max(1, hidden / 2)`.
pub fn ladder_config(base: ChemKanConfig, hidden: usize) -> ChemKanConfig {
    ChemKanConfig {
        hidden,
        n_mu: (hidden / 2).max(1),
        ..base
    }
}

enum Rung {
    ChemKan(usize),
    DeepOnet(usize),
}

/// Trains every rung of both ladders (rungs run concurrently under the
/// configured execution), then fits the convergence slopes inside the
/// configured parameter window. Writes `sweep.csv` and `sweep.json`.
pub fn run_scaling_sweep(cfg: &ExperimentConfig) -> Result<SweepReport> {
    let data = load_data(cfg)?;
    let (dir, resolved) = prepare(cfg, Some(&data))?;
    let base = resolved.model.expect("resolved");
    let m = data.train.species_count();
    let rungs: Vec<Rung> = cfg
        .sweep
        .chemkan_hidden
        .iter()
        .map(|&h| Rung::ChemKan(h))
        .chain(cfg.sweep.deeponet_width.iter().map(|&w| Rung::DeepOnet(w)))
        .collect();
    // Parallelism goes across rungs, so each training run is sequential.
    let inner = Execution::Sequential;
    let entries = par::map(cfg.execution, &rungs, |_, rung| match *rung {
        Rung::ChemKan(h) => {
            let c = ladder_config(base, h);
            let run = build_chemkan(c, resolved.training.seed, &data).and_then(|mut model| {
                let r = train_chemkan(&resolved, &mut model, &data, inner)?;
                Ok(r.last().cloned().expect("at least one stage"))
            });
            entry("chemkan", h, c.parameter_count().total, run)
        }
        Rung::DeepOnet(w) => {
            let c = DeepOnetConfig::with_width(m, w);
            let n = c.parameter_count();
            entry("deeponet", w, n, train_deeponet(&resolved, c, &data, inner).map(|(_, r)| r))
        }
    });
    let window = |e: &&SweepEntry| {
        cfg.sweep.fit_min_params.is_none_or(|lo| e.parameters >= lo)
            && cfg.sweep.fit_max_params.is_none_or(|hi| e.parameters <= hi)
    };
    let slope = |name: &str| {
        let pts: Vec<(f64, f64)> = entries
            .iter()
            .filter(|e| e.model == name)
            .filter(window)
            .filter_map(|e| Some((e.parameters as f64, e.train_mse?)))
            .collect();
        log_log_slope(&pts)
    };
    let report = SweepReport {
        chemkan_slope: slope("chemkan"),
        deeponet_slope: slope("deeponet"),
        entries,
        files: Vec::new(),
    };
    let table = dir.join("sweep.csv");
    let mut w = csv::Writer::from_path(&table)?;
    w.write_record(["model", "size", "parameters", "train_mse", "test_mse", "slope", "error"])?;
    let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for e in &report.entries {
        let s = if e.model == "chemkan" { report.chemkan_slope } else { report.deeponet_slope };
        w.write_record([
            e.model.clone(),
            e.size.to_string(),
            e.parameters.to_string(),
            f(e.train_mse),
            f(e.test_mse),
            f(s),
            e.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&table, e))?;
    let json = dir.join("sweep.json");
    write_json(&json, &report)?;
    Ok(SweepReport {
        files: vec![dir.join(RESOLVED_CONFIG), table, json],
        ..report
    })
}

fn entry(model: &str, size: usize, parameters: usize, run: Result<TrainReport>) -> SweepEntry {
    match run {
        Ok(r) => SweepEntry {
            model: model.into(),
            size,
            parameters,
            train_mse: Some(r.final_train_mse),
            test_mse: r.final_test_mse,
            error: None,
        },
        Err(e) => {
            log::warn!("{model} size {size} failed: {e}");
            SweepEntry {
                model: model.into(),
                size,
                parameters,
                train_mse: None,
                test_mse: None,
                error: Some(e.to_string()),
            }
        }
    }
}
