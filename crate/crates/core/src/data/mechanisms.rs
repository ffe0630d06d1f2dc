//! Ground-truth reaction mechanisms used to generate training data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Split, Trajectory, TrajectoryDataset};
use crate::error::{Error, Result};
use crate::ode::{integrate, IntegratorConfig};
use crate::par::{self, Execution};

/// kcal/(mol K).
pub const GAS_CONSTANT: f64 = 1.987204e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrheniusReaction {
    pub ln_a: f64,
    /// kcal/mol.
    pub ea: f64,
    pub reactants: Vec<usize>,
    pub products: Vec<usize>,
}

impl ArrheniusReaction {
    pub fn rate_constant(&self, temperature: f64) -> f64 {
        (self.ln_a - self.ea / (GAS_CONSTANT * temperature)).exp()
    }

    /// Mass-action rate: `k(T)` times the product of reactant amounts.
    pub fn rate(&self, amounts: &[f64], temperature: f64) -> f64 {
        self.reactants
            .iter()
            .fold(self.rate_constant(temperature), |acc, &i| acc * amounts[i])
    }
}

/// A right-hand side over the state `[Y_1 .. Y_m, T]`.
pub trait Mechanism: Sync {
    fn species(&self) -> Vec<String>;

    fn constant_temperature(&self) -> bool;

    fn rhs(&self, u: &[f64], du: &mut [f64]);
}

/// Biodiesel transesterification, three consecutive steps
/// `TG + ROH -> DG + R'CO2R`, `DG + ROH -> MG + R'CO2R`,
/// `MG + ROH -> GL + R'CO2R`, run isothermally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Biodiesel {
    pub reactions: Vec<ArrheniusReaction>,
}

pub const BIODIESEL_SPECIES: [&str; 6] = ["TG", "ROH", "DG", "MG", "GL", "RCO2R"];

impl Default for Biodiesel {
    fn default() -> Self {
        let step = |ln_a: f64, ea: f64, glyceride: usize, product: usize| ArrheniusReaction {
            ln_a,
            ea,
            reactants: vec![glyceride, 1],
            products: vec![product, 5],
        };
        Self {
            reactions: vec![step(18.60, 14.54, 0, 2), step(7.93, 6.47, 2, 3), step(19.13, 14.42, 3, 4)],
        }
    }
}

impl Mechanism for Biodiesel {
    fn species(&self) -> Vec<String> {
        BIODIESEL_SPECIES.iter().map(|s| s.to_string()).collect()
    }

    fn constant_temperature(&self) -> bool {
        true
    }

    fn rhs(&self, u: &[f64], du: &mut [f64]) {
        let t = u[6];
        du.fill(0.0);
        for r in &self.reactions {
            let rate = r.rate(u, t);
            for &i in &r.reactants {
                du[i] -= rate;
            }
            for &i in &r.products {
                du[i] += rate;
            }
        }
    }
}

/// Synthetic one-step exothermic isomerization `F -> P` with
/// `dT/dt = -(h_F / c_p) dY_F/dt`. The constants only serve to produce an
/// ignition-like temperature rise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyExothermic {
    /// 1/s.
    pub pre_exponential: f64,
    /// kcal/mol.
    pub ea: f64,
    /// `h_F / c_p` in K.
    pub heat_release: f64,
}

impl Default for ToyExothermic {
    fn default() -> Self {
        Self {
            pre_exponential: 1e8,
            ea: 30.0,
            heat_release: 1500.0,
        }
    }
}

impl ToyExothermic {
    pub fn rate_constant(&self, temperature: f64) -> f64 {
        self.pre_exponential * (-self.ea / (GAS_CONSTANT * temperature)).exp()
    }
}

impl Mechanism for ToyExothermic {
    fn species(&self) -> Vec<String> {
        vec!["F".into(), "P".into()]
    }

    fn constant_temperature(&self) -> bool {
        false
    }

    fn rhs(&self, u: &[f64], du: &mut [f64]) {
        let r = self.rate_constant(u[2]) * u[0];
        du[0] = -r;
        du[1] = r;
        du[2] = self.heat_release * r;
    }
}

/// Integrates `mech` from each initial state, sampling at `times`.
pub fn generate<M: Mechanism>(
    mech: &M,
    initial_states: &[Vec<f64>],
    times: &[f64],
    cfg: &IntegratorConfig,
    exec: Execution,
) -> Result<Vec<Trajectory>> {
    if times.len() < 2 {
        return Err(Error::InvalidConfig("need at least two sample times".into()));
    }
    let span = (times[0], times[times.len() - 1]);
    let cfg = cfg.with_save_at(times.to_vec());
    par::try_map(exec, initial_states, |_, u0| {
        let sol = integrate(
            |_, u, du| {
                mech.rhs(u, du);
                Ok(())
            },
            u0,
            span,
            &cfg,
        )?;
        Trajectory::new(sol.times, sol.states, mech.constant_temperature())
    })
}

/// Uniform sample times `t_end * j / samples`, `j = 0..=samples`.
pub fn uniform_times(t_end: f64, samples: usize) -> Vec<f64> {
    (0..=samples).map(|j| t_end * j as f64 / samples as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiodieselSpec {
    pub t_end: f64,
    /// Samples after the initial condition.
    pub samples: usize,
    pub temperature: (f64, f64),
    /// Range for the initial TG and ROH concentrations.
    pub initial: (f64, f64),
}

impl Default for BiodieselSpec {
    fn default() -> Self {
        Self {
            t_end: 30.0,
            samples: 30,
            temperature: (323.0, 343.0),
            initial: (0.5, 2.0),
        }
    }
}

/// Random isothermal biodiesel runs: `n_train` then `n_test` conditions
/// drawn from one seeded stream.
pub fn generate_biodiesel(
    n_train: usize,
    n_test: usize,
    seed: u64,
    spec: &BiodieselSpec,
    cfg: &IntegratorConfig,
    exec: Execution,
) -> Result<(TrajectoryDataset, TrajectoryDataset)> {
    if n_train == 0 || n_test == 0 {
        return Err(Error::InvalidConfig("biodiesel splits need at least one trajectory each".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let initial: Vec<Vec<f64>> = (0..n_train + n_test)
        .map(|_| {
            let t = rng.random_range(spec.temperature.0..=spec.temperature.1);
            let tg = rng.random_range(spec.initial.0..=spec.initial.1);
            let roh = rng.random_range(spec.initial.0..=spec.initial.1);
            vec![tg, roh, 0.0, 0.0, 0.0, 0.0, t]
        })
        .collect();
    let mech = Biodiesel::default();
    let times = uniform_times(spec.t_end, spec.samples);
    let mut trajs = generate(&mech, &initial, &times, cfg, exec)?;
    for (traj, u0) in trajs.iter_mut().zip(&initial) {
        traj.conditions.insert("T0".into(), u0[6]);
    }
    let test = trajs.split_off(n_train);
    Ok((
        TrajectoryDataset::new(mech.species(), Split::Train, trajs)?,
        TrajectoryDataset::new(mech.species(), Split::Test, test)?,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySpec {
    pub mechanism: ToyExothermic,
    pub t_end: f64,
    pub samples: usize,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            mechanism: ToyExothermic::default(),
            t_end: 5e-3,
            samples: 50,
        }
    }
}

/// Toy runs at the given `(T0, Y_F0)` conditions; the rest of the mass is
/// product.
pub fn generate_toy(
    conditions: &[(f64, f64)],
    split: Split,
    spec: &ToySpec,
    cfg: &IntegratorConfig,
    exec: Execution,
) -> Result<TrajectoryDataset> {
    let initial: Vec<Vec<f64>> = conditions.iter().map(|&(t0, yf)| vec![yf, 1.0 - yf, t0]).collect();
    let times = uniform_times(spec.t_end, spec.samples);
    let mut trajs = generate(&spec.mechanism, &initial, &times, cfg, exec)?;
    for (traj, &(t0, yf)) in trajs.iter_mut().zip(conditions) {
        traj.conditions.insert("T0".into(), t0);
        traj.conditions.insert("YF0".into(), yf);
    }
    TrajectoryDataset::new(spec.mechanism.species(), split, trajs)
}

/// `n_conditions` toy runs with `T0` uniform on [1000, 1200] K and `Y_F0`
/// uniform on [0.7, 1].
pub fn generate_toy_exothermic(
    n_conditions: usize,
    seed: u64,
    spec: &ToySpec,
    cfg: &IntegratorConfig,
    exec: Execution,
) -> Result<TrajectoryDataset> {
    if n_conditions == 0 {
        return Err(Error::InvalidConfig("need at least one toy condition".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let conditions: Vec<(f64, f64)> = (0..n_conditions)
        .map(|_| (rng.random_range(1000.0..=1200.0), rng.random_range(0.7..=1.0)))
        .collect();
    generate_toy(&conditions, Split::Train, spec, cfg, exec)
}

/// Cartesian product of temperatures and fuel fractions.
pub fn condition_grid(temperatures: &[f64], fuel: &[f64]) -> Vec<(f64, f64)> {
    temperatures
        .iter()
        .flat_map(|&t| fuel.iter().map(move |&y| (t, y)))
        .collect()
}
