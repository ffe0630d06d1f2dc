//! The ChemKAN right-hand side: a two-layer kinetic core producing species
//! rates, plus an optional thermodynamic superstructure that maps those rates
//! linearly to a temperature rate and adds a one-layer KAN correction.
//!
//! The network itself works in scaled coordinates `z = (u - offset) / range`
//! and scaled time `tau = t / time_scale`; [`StateScaling`] converts to
//! physical units. With the identity scaling the two coincide.

use std::ops::Range;

use ndarray::{s, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::kan::{KanLayer, LayerJacobians, LayerShape, Scratch};

/// Initial parameters are uniform on `[-INIT_SCALE, INIT_SCALE]`.
pub const INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChemKanConfig {
    /// Number of species `m`; the state has `m + 1` entries.
    pub species: usize,
    pub hidden: usize,
    /// Multiplication inputs of the second core layer.
    pub n_mu: usize,
    pub grid_size: usize,
    pub base: bool,
    pub thermo: bool,
    #[serde(default = "default_true")]
    pub correction: bool,
}

fn default_true() -> bool {
    true
}

impl ChemKanConfig {
    /// Kinetic-core-only biodiesel model: 7 -> 4 -> 6, three-point grids,
    /// no base term (156 parameters).
    pub fn biodiesel() -> Self {
        Self {
            species: 6,
            hidden: 4,
            n_mu: 2,
            grid_size: 3,
            base: false,
            thermo: false,
            correction: false,
        }
    }

    /// Hydrogen-air model: 10 -> 3 -> 9 with every hidden node multiplicative,
    /// four-point grids plus base term, and the full superstructure
    /// (344 parameters).
    pub fn hydrogen() -> Self {
        Self {
            species: 9,
            hidden: 3,
            n_mu: 3,
            grid_size: 4,
            base: true,
            thermo: true,
            correction: true,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.species + 1
    }

    fn validate(&self) -> Result<()> {
        if self.species == 0 {
            return Err(Error::InvalidConfig("species count must be at least 1".into()));
        }
        if self.hidden == 0 {
            return Err(Error::InvalidConfig("hidden width must be at least 1".into()));
        }
        if self.n_mu == 0 || self.n_mu > self.hidden {
            return Err(Error::InvalidConfig(format!(
                "second core layer needs 0 < n_mu <= hidden, got n_mu = {} with hidden = {}",
                self.n_mu, self.hidden
            )));
        }
        if self.correction && !self.thermo {
            return Err(Error::InvalidConfig("correction layer requires the thermo superstructure".into()));
        }
        Ok(())
    }

    fn core_in_shape(&self) -> LayerShape {
        LayerShape {
            n_in: self.state_dim(),
            n_out: self.hidden,
            n_mu: 0,
            grid_size: self.grid_size,
            base: self.base,
            normalize_input: true,
        }
    }

    fn core_out_shape(&self) -> LayerShape {
        LayerShape {
            n_in: self.hidden,
            n_out: self.species,
            n_mu: self.n_mu,
            grid_size: self.grid_size,
            base: self.base,
            normalize_input: true,
        }
    }

    fn correction_shape(&self) -> LayerShape {
        LayerShape {
            n_in: self.state_dim(),
            n_out: 1,
            n_mu: 0,
            grid_size: self.grid_size,
            base: self.base,
            normalize_input: true,
        }
    }

    /// Closed-form parameter count.
    pub fn parameter_count(&self) -> ParameterCount {
        let stride = self.grid_size + usize::from(self.base);
        let m = self.species;
        let kinetic = ((m + 1) * self.hidden + self.hidden * m) * stride;
        let thermo = if self.thermo { m } else { 0 };
        let correction = if self.correction { (m + 1) * stride } else { 0 };
        ParameterCount {
            total: kinetic + thermo + correction,
            kinetic,
            thermo,
            correction,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterCount {
    pub total: usize,
    pub kinetic: usize,
    pub thermo: usize,
    pub correction: usize,
}

impl ParameterCount {
    pub fn by_name(&self) -> [(&'static str, usize); 3] {
        [
            ("kinetic", self.kinetic),
            ("thermo", self.thermo),
            ("correction", self.correction),
        ]
    }
}

/// Which parameter columns a sensitivity computation should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamSelector {
    Kinetic,
    Thermo,
    Correction,
    /// Thermo and correction together.
    Superstructure,
    All,
}

impl std::str::FromStr for ParamSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kinetic" | "kin" => Ok(Self::Kinetic),
            "thermo" => Ok(Self::Thermo),
            "correction" | "cor" => Ok(Self::Correction),
            "superstructure" | "thermo+cor" => Ok(Self::Superstructure),
            "all" => Ok(Self::All),
            other => Err(Error::InvalidConfig(format!("unknown parameter selector '{other}'"))),
        }
    }
}

/// Affine map between physical states and network coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateScaling {
    pub offset: Vec<f64>,
    pub range: Vec<f64>,
    pub time_scale: f64,
}

impl StateScaling {
    pub fn identity(dim: usize) -> Self {
        Self {
            offset: vec![0.0; dim],
            range: vec![1.0; dim],
            time_scale: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub(crate) fn validate(&self, dim: usize) -> Result<()> {
        check_dim("scaling offset", dim, self.offset.len())?;
        check_dim("scaling range", dim, self.range.len())?;
        if self.range.iter().any(|r| !(r.is_finite() && *r > 0.0)) || !(self.time_scale > 0.0) {
            return Err(Error::InvalidConfig("scaling ranges and time scale must be positive".into()));
        }
        Ok(())
    }

    pub fn to_scaled(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.offset.iter().zip(&self.range))
            .map(|(v, (o, r))| (v - o) / r)
            .collect()
    }

    pub fn to_physical(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.offset.iter().zip(&self.range))
            .map(|(v, (o, r))| o + r * v)
            .collect()
    }
}

/// Thermochemical state `[Y_1 .. Y_m, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermoState {
    pub species: Vec<f64>,
    pub temperature: f64,
}

impl ThermoState {
    pub fn new(species: Vec<f64>, temperature: f64) -> Self {
        Self { species, temperature }
    }

    pub fn from_slice(u: &[f64]) -> Result<Self> {
        if u.len() < 2 {
            return Err(Error::DimensionMismatch {
                context: "thermochemical state",
                expected: 2,
                got: u.len(),
            });
        }
        let (species, t) = u.split_at(u.len() - 1);
        Ok(Self::new(species.to_vec(), t[0]))
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.species.clone();
        v.push(self.temperature);
        v
    }
}

/// Value and Jacobians of the right-hand side.
#[derive(Debug, Clone)]
pub struct RhsSensitivities {
    pub value: Vec<f64>,
    /// Rows: outputs; columns: all `m + 1` state entries.
    pub d_state: Array2<f64>,
    /// Rows: outputs; columns: the selected parameter partition.
    pub d_params: Array2<f64>,
}

/// Which outputs the right-hand side produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhsMode {
    /// Species rates only (`m` rows).
    Kinetic,
    /// Species rates and temperature rate (`m + 1` rows).
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChemKanModel {
    config: ChemKanConfig,
    scaling: StateScaling,
    core_in: KanLayer,
    core_out: KanLayer,
    thermo: Option<Vec<f64>>,
    correction: Option<KanLayer>,
}

impl ChemKanModel {
    pub fn zeros(config: ChemKanConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            scaling: StateScaling::identity(config.state_dim()),
            core_in: KanLayer::zeros(config.core_in_shape())?,
            core_out: KanLayer::zeros(config.core_out_shape())?,
            thermo: config.thermo.then(|| vec![0.0; config.species]),
            correction: if config.correction {
                Some(KanLayer::zeros(config.correction_shape())?)
            } else {
                None
            },
            config,
        })
    }

    /// Every parameter drawn uniform on `[-INIT_SCALE, INIT_SCALE]` from a
    /// seeded generator.
    pub fn random(config: ChemKanConfig, seed: u64) -> Result<Self> {
        use rand::Rng;
        let mut model = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params: Vec<f64> = (0..model.n_params())
            .map(|_| rng.random_range(-INIT_SCALE..=INIT_SCALE))
            .collect();
        model.set_params(&params)?;
        Ok(model)
    }

    pub fn config(&self) -> &ChemKanConfig {
        &self.config
    }

    pub fn species(&self) -> usize {
        self.config.species
    }

    pub fn state_dim(&self) -> usize {
        self.config.state_dim()
    }

    pub fn thermo_enabled(&self) -> bool {
        self.thermo.is_some()
    }

    pub fn scaling(&self) -> &StateScaling {
        &self.scaling
    }

    pub fn set_scaling(&mut self, scaling: StateScaling) -> Result<()> {
        scaling.validate(self.state_dim())?;
        self.scaling = scaling;
        Ok(())
    }

    pub fn core_layers(&self) -> (&KanLayer, &KanLayer) {
        (&self.core_in, &self.core_out)
    }

    pub fn thermo_linear(&self) -> Option<&[f64]> {
        self.thermo.as_deref()
    }

    pub fn correction_layer(&self) -> Option<&KanLayer> {
        self.correction.as_ref()
    }

    pub fn count_parameters(&self) -> ParameterCount {
        self.config.parameter_count()
    }

    pub fn n_params(&self) -> usize {
        self.count_parameters().total
    }

    /// Column range of a partition within the flat parameter vector, which
    /// is laid out as `[kinetic | thermo | correction]`.
    pub fn partition(&self, sel: ParamSelector) -> Range<usize> {
        let c = self.count_parameters();
        let k = c.kinetic;
        let t = k + c.thermo;
        match sel {
            ParamSelector::Kinetic => 0..k,
            ParamSelector::Thermo => k..t,
            ParamSelector::Correction => t..c.total,
            ParamSelector::Superstructure => k..c.total,
            ParamSelector::All => 0..c.total,
        }
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        p.extend_from_slice(self.core_in.params());
        p.extend_from_slice(self.core_out.params());
        if let Some(t) = &self.thermo {
            p.extend_from_slice(t);
        }
        if let Some(c) = &self.correction {
            p.extend_from_slice(c.params());
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        check_dim("model parameters", self.n_params(), p.len())?;
        let mut rest = p;
        let mut take = |n: usize| {
            let (head, tail) = rest.split_at(n);
            rest = tail;
            head
        };
        let n0 = self.core_in.n_params();
        self.core_in.params_mut().copy_from_slice(take(n0));
        let n1 = self.core_out.n_params();
        self.core_out.params_mut().copy_from_slice(take(n1));
        if let Some(t) = &mut self.thermo {
            let n = t.len();
            t.copy_from_slice(take(n));
        }
        if let Some(c) = &mut self.correction {
            let n = c.n_params();
            c.params_mut().copy_from_slice(take(n));
        }
        Ok(())
    }

    /// Overwrites one partition, leaving the rest untouched.
    pub fn set_partition(&mut self, sel: ParamSelector, values: &[f64]) -> Result<()> {
        let range = self.partition(sel);
        check_dim("partition parameters", range.len(), values.len())?;
        let mut p = self.params();
        p[range].copy_from_slice(values);
        self.set_params(&p)
    }

    fn check_state(&self, z: &[f64]) -> Result<()> {
        check_dim("state", self.state_dim(), z.len())?;
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "model state".into(),
            });
        }
        Ok(())
    }

    /// Species rates in scaled coordinates.
    pub fn scaled_kinetic(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_state(z)?;
        let hidden = self.core_in.forward(z)?;
        self.core_out.forward(&hidden)
    }

    /// Species and temperature rates in scaled coordinates.
    pub fn scaled_full(&self, z: &[f64]) -> Result<Vec<f64>> {
        let (thermo, correction) = self.superstructure()?;
        let mut rates = self.scaled_kinetic(z)?;
        let mut dt: f64 = thermo.iter().zip(&rates).map(|(a, r)| a * r).sum();
        if let Some(cor) = correction {
            dt += cor.forward(z)?[0];
        }
        rates.push(dt);
        Ok(rates)
    }

    fn superstructure(&self) -> Result<(&[f64], Option<&KanLayer>)> {
        match &self.thermo {
            Some(t) => Ok((t, self.correction.as_ref())),
            None => Err(Error::Contract(
                "temperature rate requested from a model without the thermo superstructure".into(),
            )),
        }
    }

    fn to_physical_rates(&self, scaled: Vec<f64>) -> Vec<f64> {
        let ts = self.scaling.time_scale;
        scaled
            .into_iter()
            .zip(&self.scaling.range)
            .map(|(g, r)| g * r / ts)
            .collect()
    }

    /// Species production rates `dY/dt` at a physical state.
    pub fn kinetic_rhs(&self, u: &ThermoState) -> Result<Vec<f64>> {
        check_dim("species", self.species(), u.species.len())?;
        let z = self.scaling.to_scaled(&u.to_vec());
        Ok(self.to_physical_rates(self.scaled_kinetic(&z)?))
    }

    /// Full state derivative `[dY/dt, dT/dt]` at a physical state.
    pub fn full_rhs(&self, u: &ThermoState) -> Result<Vec<f64>> {
        self.superstructure()?;
        check_dim("species", self.species(), u.species.len())?;
        let z = self.scaling.to_scaled(&u.to_vec());
        Ok(self.to_physical_rates(self.scaled_full(&z)?))
    }

    /// Value and Jacobians of the physical right-hand side. Uses the full
    /// right-hand side when the superstructure is present, otherwise the
    /// species rates only.
    pub fn rhs_sensitivities(&self, u: &ThermoState, sel: ParamSelector) -> Result<RhsSensitivities> {
        check_dim("species", self.species(), u.species.len())?;
        let mode = if self.thermo_enabled() {
            RhsMode::Full
        } else {
            RhsMode::Kinetic
        };
        let z = self.scaling.to_scaled(&u.to_vec());
        self.check_state(&z)?;
        let mut ws = SensitivityWorkspace::new(self);
        self.eval_scaled(&z, mode, &mut ws);
        let cols = self.partition(sel);
        let rows = ws.rows(mode);
        let ts = self.scaling.time_scale;
        let n = self.state_dim();
        let mut value = ws.value[..rows].to_vec();
        let mut d_state = ws.d_state.slice(s![..rows, ..]).to_owned();
        let mut d_params = ws.d_params.slice(s![..rows, cols]).to_owned();
        for i in 0..rows {
            let out_scale = self.scaling.range[i] / ts;
            value[i] *= out_scale;
            for j in 0..n {
                d_state[[i, j]] *= out_scale / self.scaling.range[j];
            }
            d_params.row_mut(i).mapv_inplace(|v| v * out_scale);
        }
        Ok(RhsSensitivities {
            value,
            d_state,
            d_params,
        })
    }

    /// Evaluates the scaled right-hand side and its Jacobians into `ws`.
    /// `z` must be a validated scaled state.
    pub(crate) fn eval_scaled(&self, z: &[f64], mode: RhsMode, ws: &mut SensitivityWorkspace) {
        let m = self.species();
        let n = self.state_dim();
        let h = self.config.hidden;
        let p0 = self.core_in.n_params();
        let p1 = self.core_out.n_params();
        let row0 = n * self.core_in.shape().stride();
        let row1 = h * self.core_out.shape().stride();

        self.core_in.jacobians_into(z, &mut ws.scratch, &mut ws.jac_in);
        let hidden = ws.jac_in.output.clone();
        self.core_out.jacobians_into(&hidden, &mut ws.scratch, &mut ws.jac_out);

        ws.d_params.fill(0.0);
        for i in 0..m {
            ws.value[i] = ws.jac_out.output[i];
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..h {
                    acc += ws.jac_out.d_input[[i, k]] * ws.jac_in.d_input[[k, j]];
                }
                ws.d_state[[i, j]] = acc;
            }
            for k in 0..h {
                let a = ws.jac_out.d_input[[i, k]];
                if a != 0.0 {
                    let dst = k * row0;
                    for c in 0..row0 {
                        ws.d_params[[i, dst + c]] = a * ws.jac_in.d_params_rows[[k, c]];
                    }
                }
            }
            let dst = p0 + i * row1;
            for c in 0..row1 {
                ws.d_params[[i, dst + c]] = ws.jac_out.d_params_rows[[i, c]];
            }
        }

        if mode == RhsMode::Full {
            let thermo = self.thermo.as_ref().expect("full mode requires thermo");
            let t_row = m;
            let pk = p0 + p1;
            let mut dt: f64 = thermo.iter().zip(&ws.value[..m]).map(|(a, r)| a * r).sum();
            for j in 0..n {
                ws.d_state[[t_row, j]] = (0..m).map(|i| thermo[i] * ws.d_state[[i, j]]).sum();
            }
            for c in 0..pk {
                ws.d_params[[t_row, c]] = (0..m).map(|i| thermo[i] * ws.d_params[[i, c]]).sum();
            }
            for i in 0..m {
                ws.d_params[[t_row, pk + i]] = ws.value[i];
            }
            if let Some(cor) = &self.correction {
                cor.jacobians_into(z, &mut ws.scratch, &mut ws.jac_cor);
                dt += ws.jac_cor.output[0];
                for j in 0..n {
                    ws.d_state[[t_row, j]] += ws.jac_cor.d_input[[0, j]];
                }
                let dst = pk + m;
                for c in 0..cor.n_params() {
                    ws.d_params[[t_row, dst + c]] = ws.jac_cor.d_params_rows[[0, c]];
                }
            }
            ws.value[t_row] = dt;
        }
    }

    pub fn to_checkpoint(&self) -> ChemKanCheckpoint {
        let p = self.params();
        ChemKanCheckpoint {
            config: self.config,
            scaling: self.scaling.clone(),
            kinetic: p[self.partition(ParamSelector::Kinetic)].to_vec(),
            thermo: p[self.partition(ParamSelector::Thermo)].to_vec(),
            correction: p[self.partition(ParamSelector::Correction)].to_vec(),
        }
    }

    pub fn from_checkpoint(ck: &ChemKanCheckpoint) -> Result<Self> {
        let mut model = Self::zeros(ck.config)?;
        model.set_scaling(ck.scaling.clone())?;
        let count = model.count_parameters();
        check_dim("kinetic partition", count.kinetic, ck.kinetic.len())?;
        check_dim("thermo partition", count.thermo, ck.thermo.len())?;
        check_dim("correction partition", count.correction, ck.correction.len())?;
        let mut p = ck.kinetic.clone();
        p.extend_from_slice(&ck.thermo);
        p.extend_from_slice(&ck.correction);
        model.set_params(&p)?;
        Ok(model)
    }
}

/// Serialized form of a [`ChemKanModel`] with named partitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChemKanCheckpoint {
    pub config: ChemKanConfig,
    pub scaling: StateScaling,
    pub kinetic: Vec<f64>,
    pub thermo: Vec<f64>,
    pub correction: Vec<f64>,
}

/// Buffers for [`ChemKanModel::eval_scaled`]. Row `m` of the outputs holds
/// the temperature rate in full mode.
#[derive(Debug, Clone)]
pub(crate) struct SensitivityWorkspace {
    scratch: Scratch,
    jac_in: LayerJacobians,
    jac_out: LayerJacobians,
    jac_cor: LayerJacobians,
    species: usize,
    pub value: Vec<f64>,
    pub d_state: Array2<f64>,
    pub d_params: Array2<f64>,
}

fn empty_jacobians(shape: &LayerShape) -> LayerJacobians {
    LayerJacobians {
        output: vec![0.0; shape.n_out],
        d_input: Array2::zeros((shape.n_out, shape.n_in)),
        d_params_rows: Array2::zeros((shape.n_out, shape.n_in * shape.stride())),
    }
}

impl SensitivityWorkspace {
    pub fn new(model: &ChemKanModel) -> Self {
        let n = model.state_dim();
        let cor_shape = model.config.correction_shape();
        Self {
            scratch: Scratch::default(),
            jac_in: empty_jacobians(model.core_in.shape()),
            jac_out: empty_jacobians(model.core_out.shape()),
            jac_cor: empty_jacobians(&cor_shape),
            species: model.species(),
            value: vec![0.0; n],
            d_state: Array2::zeros((n, n)),
            d_params: Array2::zeros((n, model.n_params())),
        }
    }

    pub fn rows(&self, mode: RhsMode) -> usize {
        match mode {
            RhsMode::Kinetic => self.species,
            RhsMode::Full => self.species + 1,
        }
    }
}
