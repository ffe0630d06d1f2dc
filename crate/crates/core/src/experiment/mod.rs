//! Reproducible experiments driven by a TOML configuration.
//!
//! A config file is merged over the built-in defaults, then `key=value`
//! overrides are applied, then the result is validated. Every run writes the
//! fully resolved config next to its outputs, so a run can be repeated from
//! that file alone. Tables are CSV; summaries are JSON.

mod bench;
mod maps;
mod studies;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::io::{read_dataset, read_dataset_split, write_dataset, write_trajectory_csv};
use crate::data::mechanisms::{condition_grid, generate_biodiesel, generate_toy, BiodieselSpec, ToySpec};
use crate::data::{apply_noise, ElementMatrix, Ignition, NormalizationSpec, Split, Trajectory, TrajectoryDataset};
use crate::deeponet::{don_mse, don_train, DeepOnetConfig, DeepOnetModel};
use crate::error::{Error, Result};
use crate::model::{ChemKanConfig, ChemKanModel};
use crate::ode::IntegratorConfig;
use crate::optim::AdamConfig;
use crate::par::Execution;
use crate::train::{
    evaluate_mse, predict, scaling_from_normalization, train_stage, Evaluation, LossConfig, Stage, TrainConfig,
    TrainReport,
};

pub use bench::{run_bench, BenchCondition, BenchReport, RhsTiming};
pub use maps::{toy_error_map, ErrorMap, ErrorMapPoint};
pub use studies::{
    log_log_slope, overshoot, run_noise_study, run_scaling_sweep, train_mse_under_noise, NoiseLevelResult,
    NoiseStudyReport, Overshoot, SweepEntry, SweepReport,
};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "CHEMKAN_OUT";

const DEFAULT_OUTPUT_ROOT: &str = "runs";
const RESOLVED_CONFIG: &str = "resolved_config.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Generate,
    Train,
    Evaluate,
    Sweep,
    NoiseStudy,
    Ignition,
    Bench,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Generate => "generate",
            Self::Train => "train",
            Self::Evaluate => "evaluate",
            Self::Sweep => "sweep",
            Self::NoiseStudy => "noise-study",
            Self::Ignition => "ignition",
            Self::Bench => "bench",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    /// Generated from the built-in transesterification mechanism.
    Biodiesel,
    /// Generated from the synthetic one-step exothermic mechanism.
    Toy,
    /// Read from dataset manifests.
    Files,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub biodiesel: BiodieselSpec,
    pub toy: ToySpec,
    /// Toy grid axes. Even-indexed nodes of both axes train; odd-indexed
    /// temperatures are the held-out test set.
    pub toy_temperatures: Vec<f64>,
    pub toy_fuel: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_manifest: Option<PathBuf>,
    /// Falls back to the withheld entries of the training manifest.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_manifest: Option<PathBuf>,
    pub noise_percent: f64,
    pub noise_seed: u64,
    /// Tolerances used to generate reference trajectories.
    pub generator: IntegratorConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Biodiesel,
            seed: 1,
            n_train: 20,
            n_test: 10,
            biodiesel: BiodieselSpec::default(),
            toy: ToySpec::default(),
            toy_temperatures: vec![1000.0, 1050.0, 1100.0, 1150.0, 1200.0],
            toy_fuel: vec![0.6, 0.7, 0.8, 0.9, 1.0],
            train_manifest: None,
            test_manifest: None,
            noise_percent: 0.0,
            noise_seed: 11,
            generator: IntegratorConfig::oracle(Vec::new()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossBlock {
    pub pinn: bool,
    pub alpha_pinn: f64,
}

impl Default for LossBlock {
    fn default() -> Self {
        Self {
            pinn: false,
            alpha_pinn: LossConfig::new(Stage::Kinetic).alpha_pinn,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingBlock {
    pub stage1_epochs: usize,
    /// Ignored for models without the thermo superstructure.
    pub stage2_epochs: usize,
    pub deeponet_epochs: usize,
    /// Also train the DeepONet baseline in `train` runs.
    pub deeponet: bool,
    pub lr: f64,
    /// Test metrics every this many epochs; 0 disables them.
    pub eval_every: usize,
    pub seed: u64,
    pub deeponet_seed: u64,
    /// Model time unit; the training data's final time when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_scale: Option<f64>,
}

impl Default for TrainingBlock {
    fn default() -> Self {
        Self {
            stage1_epochs: 5000,
            stage2_epochs: 3000,
            deeponet_epochs: 50_000,
            deeponet: false,
            lr: AdamConfig::default().lr,
            eval_every: 50,
            seed: 1,
            deeponet_seed: 1,
            time_scale: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseBlock {
    /// Percent of each trajectory's per-state range.
    pub levels: Vec<f64>,
    pub seed: u64,
}

impl Default for NoiseBlock {
    fn default() -> Self {
        Self {
            levels: vec![0.0, 1.0, 2.0, 5.0, 7.0, 10.0, 15.0],
            seed: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    /// Hidden widths of the ChemKAN ladder.
    pub chemkan_hidden: Vec<usize>,
    /// Layer widths of the DeepONet ladder.
    pub deeponet_width: Vec<usize>,
    /// Parameter-count window of the slope fit.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_min_params: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_max_params: Option<usize>,
}

impl Default for SweepBlock {
    fn default() -> Self {
        Self {
            chemkan_hidden: vec![2, 3, 4, 6, 8],
            deeponet_width: vec![4, 6, 8, 12, 16],
            fit_min_params: None,
            fit_max_params: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchBlock {
    pub repeats: usize,
}

impl Default for BenchBlock {
    fn default() -> Self {
        Self { repeats: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub kind: ExperimentKind,
    /// `$CHEMKAN_OUT/<kind>` (or `runs/<kind>`) when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Trained model for `evaluate`, `ignition` and `bench`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    pub execution: Execution,
    pub data: DataConfig,
    /// Chosen from the data source when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ChemKanConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deeponet: Option<DeepOnetConfig>,
    /// Tolerances for training and prediction.
    pub integrator: IntegratorConfig,
    pub loss: LossBlock,
    pub training: TrainingBlock,
    pub noise: NoiseBlock,
    pub sweep: SweepBlock,
    pub bench: BenchBlock,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            kind,
            output_dir: None,
            checkpoint: None,
            execution: Execution::default(),
            data: DataConfig::default(),
            model: None,
            deeponet: None,
            integrator: TrainConfig::new(0).integrator,
            loss: LossBlock::default(),
            training: TrainingBlock::default(),
            noise: NoiseBlock::default(),
            sweep: SweepBlock::default(),
            bench: BenchBlock::default(),
        }
    }

    /// Parses `text` merged over the defaults for `kind`, then applies
    /// `key.path=value` overrides. Values parse as TOML, falling back to a
    /// bare string.
    pub fn from_toml(text: &str, kind: Option<ExperimentKind>, overrides: &[String]) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("config: {e}")))?;
        let file_kind = match user.get("kind") {
            Some(v) => Some(
                v.clone()
                    .try_into::<ExperimentKind>()
                    .map_err(|e| Error::InvalidConfig(format!("kind: {e}")))?,
            ),
            None => None,
        };
        let kind = kind.or(file_kind).unwrap_or(ExperimentKind::Train);
        let mut table = toml::Table::try_from(Self::new(kind)).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        merge(&mut table, user);
        table.insert("kind".into(), toml::Value::String(kind.name().into()));
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e| Error::InvalidConfig(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, kind: Option<ExperimentKind>, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, kind, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported config schema version {} (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.data.source == DataSource::Files && self.data.train_manifest.is_none() {
            return Err(Error::InvalidConfig("data.source = \"files\" needs data.train_manifest".into()));
        }
        if self.data.source == DataSource::Toy && self.data.toy_temperatures.len() < 3 {
            return Err(Error::InvalidConfig("the toy grid needs at least three temperatures".into()));
        }
        if !(self.training.lr > 0.0) {
            return Err(Error::InvalidConfig("training.lr must be positive".into()));
        }
        if matches!(self.training.time_scale, Some(ts) if !(ts > 0.0)) {
            return Err(Error::InvalidConfig("training.time_scale must be positive".into()));
        }
        for p in self.data.train_manifest.iter().chain(&self.data.test_manifest).chain(&self.checkpoint) {
            if !p.exists() {
                return Err(Error::InvalidConfig(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn output_dir(&self) -> PathBuf {
        match &self.output_dir {
            Some(d) => d.clone(),
            None => std::env::var_os(OUTPUT_ROOT_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
                .join(self.kind.name()),
        }
    }

    fn train_config(&self, epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            adam: AdamConfig {
                lr: self.training.lr,
                ..AdamConfig::default()
            },
            integrator: self.integrator.clone(),
            eval_every: self.training.eval_every,
            execution: self.execution,
            seed,
        }
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("override `{assignment}` is not key=value")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, path) = parts.split_last().expect("split yields one part");
    let mut at = table;
    for p in path {
        at = match at.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new())) {
            toml::Value::Table(t) => t,
            _ => return Err(Error::InvalidConfig(format!("override `{key}`: `{p}` is not a table"))),
        };
    }
    at.insert(last.to_string(), value);
    Ok(())
}

/// Train and test splits plus the normalization fitted on the clean
/// training split.
#[derive(Debug, Clone)]
pub struct Datasets {
    pub train: TrajectoryDataset,
    pub test: TrajectoryDataset,
    pub normalization: NormalizationSpec,
    pub time_scale: f64,
}

/// Training and held-out conditions of the toy grid.
pub fn toy_split(temperatures: &[f64], fuel: &[f64]) -> (Vec<(f64, f64)>, Vec<(f64, f64)>) {
    let even = |v: &[f64]| v.iter().step_by(2).copied().collect::<Vec<_>>();
    let odd = |v: &[f64]| v.iter().skip(1).step_by(2).copied().collect::<Vec<_>>();
    (condition_grid(&even(temperatures), &even(fuel)), condition_grid(&odd(temperatures), fuel))
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<Datasets> {
    let d = &cfg.data;
    let (mut train, mut test) = match d.source {
        DataSource::Biodiesel => generate_biodiesel(d.n_train, d.n_test, d.seed, &d.biodiesel, &d.generator, cfg.execution)?,
        DataSource::Toy => {
            let (tr, te) = toy_split(&d.toy_temperatures, &d.toy_fuel);
            (
                generate_toy(&tr, Split::Train, &d.toy, &d.generator, cfg.execution)?,
                generate_toy(&te, Split::Test, &d.toy, &d.generator, cfg.execution)?,
            )
        }
        DataSource::Files => {
            let path = d.train_manifest.as_ref().expect("validated");
            let (train, withheld) = read_dataset_split(path)?;
            let test = match &d.test_manifest {
                Some(p) => read_dataset(p)?,
                None => withheld,
            };
            if test.species != train.species {
                return Err(Error::InvalidConfig("train and test manifests list different species".into()));
            }
            (train, test)
        }
    };
    if train.is_empty() {
        return Err(Error::InvalidConfig("training split is empty".into()));
    }
    let norm = train.fit_normalization()?;
    test.normalization = Some(norm.clone());
    if d.noise_percent > 0.0 {
        train = apply_noise(&train, d.noise_percent, d.noise_seed)?;
        test = apply_noise(&test, d.noise_percent, d.noise_seed.wrapping_add(1))?;
    }
    let time_scale = match cfg.training.time_scale {
        Some(ts) => ts,
        None => train
            .trajectories
            .iter()
            .map(|t| t.span().1)
            .fold(0.0, f64::max),
    };
    if !(time_scale > 0.0) {
        return Err(Error::InvalidConfig("could not infer a positive time scale from the data".into()));
    }
    Ok(Datasets {
        train,
        test,
        normalization: norm,
        time_scale,
    })
}

/// Small kinetic core plus superstructure for the two-species toy data.
pub fn toy_model_config() -> ChemKanConfig {
    ChemKanConfig {
        species: 2,
        hidden: 3,
        n_mu: 2,
        grid_size: 4,
        base: true,
        thermo: true,
        correction: true,
    }
}

/// Fills the fields whose defaults depend on the data.
pub fn resolve(cfg: &ExperimentConfig, data: &Datasets) -> Result<ExperimentConfig> {
    let mut cfg = cfg.clone();
    let m = data.train.species_count();
    if cfg.model.is_none() {
        cfg.model = Some(match cfg.data.source {
            DataSource::Biodiesel => ChemKanConfig::biodiesel(),
            DataSource::Toy => toy_model_config(),
            DataSource::Files if m == ChemKanConfig::hydrogen().species => ChemKanConfig::hydrogen(),
            DataSource::Files => {
                return Err(Error::InvalidConfig(format!(
                    "no default model for {m} species; set the [model] table"
                )))
            }
        });
    }
    if cfg.deeponet.is_none() {
        cfg.deeponet = Some(if cfg.data.source == DataSource::Biodiesel {
            DeepOnetConfig::biodiesel_308()
        } else {
            DeepOnetConfig::with_width(m, 8)
        });
    }
    cfg.training.time_scale = Some(data.time_scale);
    let model = cfg.model.as_ref().expect("set above");
    if model.species != m {
        return Err(Error::InvalidConfig(format!("model has {} species, data has {m}", model.species)));
    }
    if model.thermo && data.train.trajectories.iter().any(|t| t.constant_temperature) {
        log::warn!("thermo superstructure on isothermal data; stage 2 will be skipped");
    }
    Ok(cfg)
}

fn elements_for(cfg: &ExperimentConfig, species: usize) -> Result<ElementMatrix> {
    match cfg.data.source {
        DataSource::Toy => Ok(ElementMatrix::toy_isomers()),
        DataSource::Files if species == ElementMatrix::hydrogen_air().n_species() => Ok(ElementMatrix::hydrogen_air()),
        _ => Err(Error::InvalidConfig("the physics loss needs an element table for this data".into())),
    }
}

/// Stage whose prediction covers everything the data supports.
pub fn evaluation_stage(model: &ChemKanModel, data: &TrajectoryDataset) -> Stage {
    if model.thermo_enabled() && !data.trajectories.iter().any(|t| t.constant_temperature) {
        Stage::Full
    } else {
        Stage::Kinetic
    }
}

pub fn build_chemkan(config: ChemKanConfig, seed: u64, data: &Datasets) -> Result<ChemKanModel> {
    let mut model = ChemKanModel::random(config, seed)?;
    model.set_scaling(scaling_from_normalization(&data.normalization, data.time_scale))?;
    Ok(model)
}

/// Stage 1, then stage 2 when the model and data have temperature dynamics.
pub fn train_chemkan(
    cfg: &ExperimentConfig,
    model: &mut ChemKanModel,
    data: &Datasets,
    execution: Execution,
) -> Result<Vec<TrainReport>> {
    let eval = (!data.test.is_empty()).then_some(Evaluation { test: &data.test });
    let loss_for = |stage: Stage| -> Result<LossConfig> {
        let mut l = if cfg.loss.pinn {
            LossConfig::with_pinn(stage, elements_for(cfg, data.train.species_count())?)
        } else {
            LossConfig::new(stage)
        };
        l.alpha_pinn = cfg.loss.alpha_pinn;
        Ok(l)
    };
    let mut tc = cfg.train_config(cfg.training.stage1_epochs, cfg.training.seed);
    tc.execution = execution;
    let mut reports = vec![train_stage(model, &data.train, eval, &data.normalization, &loss_for(Stage::Kinetic)?, &tc)?];
    if evaluation_stage(model, &data.train) == Stage::Full && cfg.training.stage2_epochs > 0 {
        tc.epochs = cfg.training.stage2_epochs;
        reports.push(train_stage(model, &data.train, eval, &data.normalization, &loss_for(Stage::Full)?, &tc)?);
    }
    Ok(reports)
}

pub fn train_deeponet(
    cfg: &ExperimentConfig,
    config: DeepOnetConfig,
    data: &Datasets,
    execution: Execution,
) -> Result<(DeepOnetModel, TrainReport)> {
    let mut model = DeepOnetModel::random(
        config,
        data.normalization.clone(),
        data.time_scale,
        cfg.training.deeponet_seed,
    )?;
    let eval = (!data.test.is_empty()).then_some(Evaluation { test: &data.test });
    let mut tc = cfg.train_config(cfg.training.deeponet_epochs, cfg.training.deeponet_seed);
    tc.execution = execution;
    let report = don_train(&mut model, &data.train, eval, &data.normalization, &tc)?;
    Ok((model, report))
}

/// Output directory with the resolved config written into it.
fn prepare(cfg: &ExperimentConfig, data: Option<&Datasets>) -> Result<(PathBuf, ExperimentConfig)> {
    let resolved = match data {
        Some(d) => resolve(cfg, d)?,
        None => cfg.clone(),
    };
    let mut resolved = resolved;
    let dir = cfg.output_dir();
    resolved.output_dir = Some(dir.clone());
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join(RESOLVED_CONFIG);
    fs::write(&path, resolved.to_toml()?).map_err(|e| Error::io(&path, e))?;
    Ok((dir, resolved))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub output_dir: PathBuf,
    pub files: Vec<PathBuf>,
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let output_dir = cfg.output_dir();
    let files = match cfg.kind {
        ExperimentKind::Generate => run_generate(cfg)?,
        ExperimentKind::Train => run_train(cfg)?.files,
        ExperimentKind::Evaluate => run_evaluate(cfg)?.files,
        ExperimentKind::Ignition => run_ignition(cfg)?.files,
        ExperimentKind::NoiseStudy => run_noise_study(cfg)?.files,
        ExperimentKind::Sweep => run_scaling_sweep(cfg)?.files,
        ExperimentKind::Bench => run_bench(cfg)?.files,
    };
    Ok(RunOutput { output_dir, files })
}

/// Writes both splits as trajectory CSVs with manifests.
pub fn run_generate(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let data = load_data(cfg)?;
    let (dir, _) = prepare(cfg, Some(&data))?;
    let mass_fractions = cfg.data.source == DataSource::Toy;
    Ok(vec![
        dir.join(RESOLVED_CONFIG),
        write_dataset(&dir, "train", &data.train, mass_fractions)?,
        write_dataset(&dir, "test", &data.test, mass_fractions)?,
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub parameters: usize,
    pub stages: Vec<StageSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deeponet: Option<StageSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: Stage,
    pub epochs: usize,
    pub failed_epochs: Vec<usize>,
    pub final_lr: f64,
    pub train_mse: f64,
    pub test_mse: Option<f64>,
    pub noisefree_mse: Option<f64>,
}

impl From<&TrainReport> for StageSummary {
    fn from(r: &TrainReport) -> Self {
        Self {
            stage: r.stage,
            epochs: r.epochs.len(),
            failed_epochs: r.failed_epochs.clone(),
            final_lr: r.final_lr,
            train_mse: r.final_train_mse,
            test_mse: r.final_test_mse,
            noisefree_mse: r.final_noisefree_mse,
        }
    }
}

pub struct TrainOutcome {
    pub model: ChemKanModel,
    pub reports: Vec<TrainReport>,
    pub deeponet: Option<(DeepOnetModel, TrainReport)>,
    pub data: Datasets,
    pub files: Vec<PathBuf>,
}

/// Trains a ChemKAN (and optionally the DeepONet baseline), writing
/// `chemkan.json`, per-stage traces and `summary.json`.
pub fn run_train(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    let data = load_data(cfg)?;
    let (dir, resolved) = prepare(cfg, Some(&data))?;
    let mut model = build_chemkan(resolved.model.expect("resolved"), resolved.training.seed, &data)?;
    let reports = train_chemkan(&resolved, &mut model, &data, resolved.execution)?;
    let mut files = vec![dir.join(RESOLVED_CONFIG)];
    for r in &reports {
        let p = dir.join(format!("stage{}_trace.csv", u8::from(r.stage)));
        r.write_csv(&p)?;
        files.push(p);
    }
    let ck = dir.join("chemkan.json");
    Checkpoint::from(&model).save(&ck)?;
    files.push(ck);
    let deeponet = if resolved.training.deeponet {
        let (don, rep) = train_deeponet(&resolved, resolved.deeponet.clone().expect("resolved"), &data, resolved.execution)?;
        let p = dir.join("deeponet_trace.csv");
        rep.write_csv(&p)?;
        let ck = dir.join("deeponet.json");
        Checkpoint::from(&don).save(&ck)?;
        files.extend([p, ck]);
        Some((don, rep))
    } else {
        None
    };
    let summary = TrainSummary {
        parameters: model.n_params(),
        stages: reports.iter().map(StageSummary::from).collect(),
        deeponet: deeponet.as_ref().map(|(_, r)| StageSummary::from(r)),
    };
    let p = dir.join("summary.json");
    write_json(&p, &summary)?;
    files.push(p);
    Ok(TrainOutcome {
        model,
        reports,
        deeponet,
        data,
        files,
    })
}

/// A loaded checkpoint of either model kind.
pub enum Surrogate {
    ChemKan(ChemKanModel),
    DeepOnet(DeepOnetModel),
}

impl Surrogate {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(match Checkpoint::load(path)? {
            Checkpoint::DeepOnet(m) => Surrogate::DeepOnet(m),
            ck => Surrogate::ChemKan(ck.into_chemkan()?),
        })
    }

    pub fn species(&self) -> usize {
        match self {
            Surrogate::ChemKan(m) => m.species(),
            Surrogate::DeepOnet(m) => m.species(),
        }
    }

    /// Predicted physical states at the trajectory's sample times. Columns
    /// the model does not predict are copied from the data.
    pub fn predict(&self, traj: &Trajectory, integ: &IntegratorConfig) -> Result<Vec<Vec<f64>>> {
        match self {
            Surrogate::ChemKan(m) => {
                let stage = if m.thermo_enabled() && !traj.constant_temperature {
                    Stage::Full
                } else {
                    Stage::Kinetic
                };
                predict(m, traj, stage, integ)
            }
            Surrogate::DeepOnet(m) => traj
                .times
                .iter()
                .zip(&traj.states)
                .map(|(&t, obs)| {
                    let mut y = m.forward(traj.initial_state(), t)?;
                    y.push(obs[obs.len() - 1]);
                    Ok(y)
                })
                .collect(),
        }
    }

    pub fn mse(&self, data: &TrajectoryDataset, norm: &NormalizationSpec, cfg: &ExperimentConfig) -> Result<f64> {
        match self {
            Surrogate::ChemKan(m) => evaluate_mse(m, data, norm, evaluation_stage(m, data), &cfg.integrator, cfg.execution),
            Surrogate::DeepOnet(m) => don_mse(m, data, norm, cfg.execution),
        }
    }
}

fn require_checkpoint(cfg: &ExperimentConfig) -> Result<Surrogate> {
    let path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig(format!("`{}` needs a checkpoint", cfg.kind.name())))?;
    Surrogate::load(path)
}

fn condition_keys(datasets: &[&TrajectoryDataset]) -> Vec<String> {
    let keys: BTreeSet<&String> = datasets
        .iter()
        .flat_map(|d| d.trajectories.iter().flat_map(|t| t.conditions.keys()))
        .collect();
    keys.into_iter().cloned().collect()
}

fn single(ds: &TrajectoryDataset, traj: &Trajectory) -> Result<TrajectoryDataset> {
    TrajectoryDataset::new(ds.species.clone(), ds.split, vec![traj.clone()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub train_mse: f64,
    pub test_mse: Option<f64>,
    pub noisefree_train_mse: Option<f64>,
    pub noisefree_test_mse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_map_max_ratio: Option<f64>,
}

pub struct EvaluateOutcome {
    pub summary: EvaluationSummary,
    pub error_map: Option<ErrorMap>,
    pub files: Vec<PathBuf>,
}

/// Per-trajectory errors and predictions of a checkpoint, plus the
/// interpolation error map on toy data.
pub fn run_evaluate(cfg: &ExperimentConfig) -> Result<EvaluateOutcome> {
    let surrogate = require_checkpoint(cfg)?;
    let data = load_data(cfg)?;
    if surrogate.species() != data.train.species_count() {
        return Err(Error::InvalidConfig("checkpoint and data disagree on the species count".into()));
    }
    let (dir, _) = prepare(cfg, None)?;
    let norm = &data.normalization;
    let mut files = vec![dir.join(RESOLVED_CONFIG)];
    let pred_dir = dir.join("predictions");
    fs::create_dir_all(&pred_dir).map_err(|e| Error::io(&pred_dir, e))?;

    let keys = condition_keys(&[&data.train, &data.test]);
    let table = dir.join("evaluation.csv");
    let mut w = csv::Writer::from_path(&table)?;
    let mut header = vec!["split".to_string(), "index".into()];
    header.extend(keys.iter().cloned());
    header.push("mse".into());
    w.write_record(&header)?;
    for ds in [&data.train, &data.test] {
        let split = match ds.split {
            Split::Train => "train",
            Split::Test => "test",
        };
        for (i, traj) in ds.trajectories.iter().enumerate() {
            let mse = surrogate.mse(&single(ds, traj)?, norm, cfg)?;
            let mut rec = vec![split.to_string(), i.to_string()];
            rec.extend(keys.iter().map(|k| traj.conditions.get(k).map(f64::to_string).unwrap_or_default()));
            rec.push(mse.to_string());
            w.write_record(&rec)?;
            let pred = Trajectory::new(traj.times.clone(), surrogate.predict(traj, &cfg.integrator)?, traj.constant_temperature)?;
            write_trajectory_csv(&pred_dir.join(format!("{split}_{i:03}.csv")), &ds.species, &pred)?;
        }
    }
    w.flush().map_err(|e| Error::io(&table, e))?;
    files.extend([table, pred_dir]);

    let noisefree = |ds: &TrajectoryDataset| -> Result<Option<f64>> {
        if ds.is_noisy() {
            surrogate.mse(&ds.clean_version(), norm, cfg).map(Some)
        } else {
            Ok(None)
        }
    };
    let has_test = !data.test.is_empty();
    let error_map = match (&surrogate, cfg.data.source) {
        (Surrogate::ChemKan(m), DataSource::Toy) => {
            let map = toy_error_map(m, cfg)?;
            let p = dir.join("error_map.csv");
            map.write_csv(&p)?;
            files.push(p);
            Some(map)
        }
        _ => None,
    };
    let summary = EvaluationSummary {
        train_mse: surrogate.mse(&data.train, norm, cfg)?,
        test_mse: if has_test { Some(surrogate.mse(&data.test, norm, cfg)?) } else { None },
        noisefree_train_mse: noisefree(&data.train)?,
        noisefree_test_mse: if has_test { noisefree(&data.test)? } else { None },
        error_map_max_ratio: error_map.as_ref().and_then(ErrorMap::max_ratio),
    };
    let p = dir.join("evaluation.json");
    write_json(&p, &summary)?;
    files.push(p);
    Ok(EvaluateOutcome {
        summary,
        error_map,
        files,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IgnitionRow {
    pub split: Split,
    pub index: usize,
    pub conditions: std::collections::BTreeMap<String, f64>,
    pub data: Ignition,
    pub model: Option<Ignition>,
}

pub struct IgnitionOutcome {
    pub rows: Vec<IgnitionRow>,
    pub files: Vec<PathBuf>,
}

/// Ignition delays of every data trajectory and, with a checkpoint, of the
/// model's predictions. Writes `ignition.csv`; `none` marks no ignition.
pub fn run_ignition(cfg: &ExperimentConfig) -> Result<IgnitionOutcome> {
    let surrogate = match &cfg.checkpoint {
        Some(p) => Some(Surrogate::load(p)?),
        None => None,
    };
    let data = load_data(cfg)?;
    let (dir, _) = prepare(cfg, None)?;
    let mut rows = Vec::new();
    for ds in [&data.train, &data.test] {
        for (index, traj) in ds.trajectories.iter().enumerate() {
            let model = match &surrogate {
                Some(s) => {
                    let pred = Trajectory::new(traj.times.clone(), s.predict(traj, &cfg.integrator)?, traj.constant_temperature)?;
                    Some(pred.ignition_delay()?)
                }
                None => None,
            };
            rows.push(IgnitionRow {
                split: ds.split,
                index,
                conditions: traj.conditions.clone(),
                data: traj.ignition_delay()?,
                model,
            });
        }
    }
    let keys = condition_keys(&[&data.train, &data.test]);
    let path = dir.join("ignition.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["split".to_string(), "index".into()];
    header.extend(keys.iter().cloned());
    header.extend(["data_delay".into(), "model_delay".into()]);
    w.write_record(&header)?;
    let fmt = |ig: Ignition| ig.time().map(|t| t.to_string()).unwrap_or_else(|| "none".into());
    for r in &rows {
        let mut rec = vec![
            match r.split {
                Split::Train => "train".to_string(),
                Split::Test => "test".into(),
            },
            r.index.to_string(),
        ];
        rec.extend(keys.iter().map(|k| r.conditions.get(k).map(f64::to_string).unwrap_or_default()));
        rec.push(fmt(r.data));
        rec.push(r.model.map(fmt).unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(IgnitionOutcome {
        rows,
        files: vec![dir.join(RESOLVED_CONFIG), path],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::new(ExperimentKind::NoiseStudy);
        let text = cfg.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text, None, &[]).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_and_overrides() {
        let text = "kind = \"sweep\"\n[training]\nstage1_epochs = 7\n[data.biodiesel]\nt_end = 10.0\n";
        let cfg = ExperimentConfig::from_toml(
            text,
            None,
            &["training.lr=0.01".into(), "data.source=toy".into(), "noise.levels=[0.0, 3.0]".into()],
        )
        .unwrap();
        assert_eq!(cfg.kind, ExperimentKind::Sweep);
        assert_eq!(cfg.training.stage1_epochs, 7);
        assert_eq!(cfg.training.stage2_epochs, TrainingBlock::default().stage2_epochs);
        assert_eq!(cfg.training.lr, 0.01);
        assert_eq!(cfg.data.biodiesel.t_end, 10.0);
        assert_eq!(cfg.data.biodiesel.samples, 30);
        assert_eq!(cfg.data.source, DataSource::Toy);
        assert_eq!(cfg.noise.levels, vec![0.0, 3.0]);
        // Explicit kind wins over the file.
        let cfg = ExperimentConfig::from_toml(text, Some(ExperimentKind::Bench), &[]).unwrap();
        assert_eq!(cfg.kind, ExperimentKind::Bench);
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = [
            ("schema_version = 2", vec![]),
            ("[training]\nepochs = 3", vec![]),
            ("", vec!["training.lr=-1".to_string()]),
            ("", vec!["data.source=files".to_string()]),
            ("checkpoint = \"/definitely/missing.json\"", vec![]),
            ("", vec!["noequals".to_string()]),
            ("", vec!["training.lr.x=1".to_string()]),
        ];
        for (text, o) in bad {
            let e = ExperimentConfig::from_toml(text, None, &o).unwrap_err();
            assert!(matches!(e, Error::InvalidConfig(_)), "{text:?} {o:?}: {e}");
        }
    }

    #[test]
    fn toy_split_holds_out_odd_temperatures() {
        let (tr, te) = toy_split(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.1, 0.2, 0.3]);
        assert_eq!(tr, condition_grid(&[1.0, 3.0, 5.0], &[0.1, 0.3]));
        assert_eq!(te, condition_grid(&[2.0, 4.0], &[0.1, 0.2, 0.3]));
    }

    #[test]
    fn output_dir_defaults_under_kind() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::Ignition);
        assert!(cfg.output_dir().ends_with("ignition"));
        cfg.output_dir = Some("/x/y".into());
        assert_eq!(cfg.output_dir(), PathBuf::from("/x/y"));
    }
}
