use serde::{Deserialize, Serialize};

use super::dataset::Trajectory;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "time", rename_all = "snake_case")]
pub enum Ignition {
    /// Time of the fastest temperature rise.
    At(f64),
    /// Temperature never rises.
    NoIgnition,
}

impl Ignition {
    pub fn time(&self) -> Option<f64> {
        match self {
            Ignition::At(t) => Some(*t),
            Ignition::NoIgnition => None,
        }
    }
}

/// Ignition delay as the sample time of maximum `dT/dt`, using central
/// differences inside the grid and one-sided differences at the ends. Ties
/// go to the earliest interior sample.
pub fn ignition_delay(times: &[f64], temperatures: &[f64]) -> Result<Ignition> {
    let n = times.len();
    if n < 3 || temperatures.len() != n {
        return Err(Error::InvalidConfig(format!(
            "ignition delay needs at least 3 matching samples, got {n} times and {} temperatures",
            temperatures.len()
        )));
    }
    let slope = |i: usize| {
        let (a, b) = match i {
            0 => (0, 1),
            i if i == n - 1 => (n - 2, n - 1),
            i => (i - 1, i + 1),
        };
        (temperatures[b] - temperatures[a]) / (times[b] - times[a])
    };
    let slopes: Vec<f64> = (0..n).map(slope).collect();
    let max = slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Ok(Ignition::NoIgnition);
    }
    let tie = 1e-12 * max.abs();
    let best = (1..n - 1)
        .find(|&i| slopes[i] >= max - tie)
        .or_else(|| (0..n).find(|&i| slopes[i] >= max - tie))
        .expect("maximum is attained");
    Ok(Ignition::At(times[best]))
}

impl Trajectory {
    pub fn ignition_delay(&self) -> Result<Ignition> {
        if self.constant_temperature {
            return Ok(Ignition::NoIgnition);
        }
        ignition_delay(&self.times, &self.temperatures())
    }
}
