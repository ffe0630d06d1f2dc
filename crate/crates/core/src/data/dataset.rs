use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Clean,
    Noisy { percent: f64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One sampled trajectory; row `j` of `states` is `[Y_1 .. Y_m, T]` at
/// `times[j]`. Row 0 is the initial condition.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Temperature is an experimental setting held fixed, not a dynamic state.
    pub constant_temperature: bool,
    pub provenance: Provenance,
    /// Noise-free parent of a noisy trajectory.
    pub clean: Option<Arc<Trajectory>>,
    /// Free-form initial-condition labels, e.g. `T0` and `phi`.
    pub conditions: BTreeMap<String, f64>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<Vec<f64>>, constant_temperature: bool) -> Result<Self> {
        let traj = Self {
            times,
            states,
            constant_temperature,
            provenance: Provenance::Clean,
            clean: None,
            conditions: BTreeMap::new(),
        };
        traj.validate("trajectory")?;
        Ok(traj)
    }

    pub fn with_condition(mut self, key: &str, value: f64) -> Self {
        self.conditions.insert(key.to_string(), value);
        self
    }

    pub(crate) fn validate(&self, source: &str) -> Result<()> {
        if self.times.is_empty() {
            return Err(Error::invalid_data(source, None, "no rows"));
        }
        if self.times.len() != self.states.len() {
            return Err(Error::invalid_data(
                source,
                None,
                format!("{} times but {} state rows", self.times.len(), self.states.len()),
            ));
        }
        let dim = self.states[0].len();
        if dim < 2 {
            return Err(Error::invalid_data(source, Some(0), "state needs species and temperature"));
        }
        for (j, (t, row)) in self.times.iter().zip(&self.states).enumerate() {
            if row.len() != dim {
                return Err(Error::invalid_data(source, Some(j), format!("expected {dim} columns, got {}", row.len())));
            }
            if !t.is_finite() || row.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid_data(source, Some(j), "non-finite value"));
            }
            if j > 0 && !(*t > self.times[j - 1]) {
                return Err(Error::invalid_data(source, Some(j), "time is not strictly increasing"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn species(&self) -> usize {
        self.dim() - 1
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.states[0]
    }

    pub fn span(&self) -> (f64, f64) {
        (self.times[0], *self.times.last().expect("non-empty trajectory"))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.states.iter().map(|r| r[j]).collect()
    }

    pub fn temperatures(&self) -> Vec<f64> {
        self.column(self.dim() - 1)
    }

    /// The noise-free version: the parent if noisy, else itself.
    pub fn clean_version(&self) -> &Trajectory {
        self.clean.as_deref().unwrap_or(self)
    }

    /// Temperature at `t` by linear interpolation between samples, held
    /// constant outside the sampled window.
    pub fn temperature_at(&self, t: f64) -> f64 {
        let k = self.dim() - 1;
        if self.constant_temperature {
            return self.states[0][k];
        }
        let n = self.times.len();
        if t <= self.times[0] {
            return self.states[0][k];
        }
        if t >= self.times[n - 1] {
            return self.states[n - 1][k];
        }
        let i = self.times.partition_point(|&s| s <= t) - 1;
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let w = (t - t0) / (t1 - t0);
        self.states[i][k] * (1.0 - w) + self.states[i + 1][k] * w
    }

    /// Slope of [`Self::temperature_at`] on the interval containing `t`
    /// (from the right at sample times).
    pub fn temperature_slope_at(&self, t: f64) -> f64 {
        let n = self.times.len();
        if self.constant_temperature || n < 2 || t < self.times[0] || t >= self.times[n - 1] {
            return 0.0;
        }
        let k = self.dim() - 1;
        let i = self.times.partition_point(|&s| s <= t) - 1;
        (self.states[i + 1][k] - self.states[i][k]) / (self.times[i + 1] - self.times[i])
    }
}

/// Per-state affine map to the unit window, fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub min: Vec<f64>,
    pub range: Vec<f64>,
}

impl NormalizationSpec {
    /// Minimum and range of every state over all rows of all trajectories.
    /// A state that never varies gets range 1 so its error is counted in
    /// absolute units.
    pub fn fit(dataset: &TrajectoryDataset) -> Result<Self> {
        let first = dataset
            .trajectories
            .first()
            .ok_or_else(|| Error::InvalidConfig("cannot normalize an empty dataset".into()))?;
        let n = first.dim();
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        for traj in &dataset.trajectories {
            check_dim("trajectory width", n, traj.dim())?;
            for row in &traj.states {
                for j in 0..n {
                    lo[j] = lo[j].min(row[j]);
                    hi[j] = hi[j].max(row[j]);
                }
            }
        }
        let range = lo
            .iter()
            .zip(&hi)
            .map(|(a, b)| if b - a > 0.0 { b - a } else { 1.0 })
            .collect();
        Ok(Self { min: lo, range })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn normalize(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.min.iter().zip(&self.range))
            .map(|(v, (lo, r))| (v - lo) / r)
            .collect()
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.min.iter().zip(&self.range))
            .map(|(v, (lo, r))| lo + r * v)
            .collect()
    }

    pub(crate) fn check(&self, dim: usize) -> Result<()> {
        check_dim("normalization", dim, self.min.len())?;
        check_dim("normalization", dim, self.range.len())?;
        if self.range.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::InvalidConfig("normalization ranges must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub species: Vec<String>,
    pub split: Split,
    pub trajectories: Vec<Trajectory>,
    pub normalization: Option<NormalizationSpec>,
}

impl TrajectoryDataset {
    pub fn new(species: Vec<String>, split: Split, trajectories: Vec<Trajectory>) -> Result<Self> {
        let ds = Self {
            species,
            split,
            trajectories,
            normalization: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.state_dim();
        for (i, traj) in self.trajectories.iter().enumerate() {
            traj.validate(&format!("trajectory {i}"))?;
            if traj.dim() != n {
                return Err(Error::invalid_data(
                    format!("trajectory {i}"),
                    None,
                    format!("expected {n} states for species {:?}, got {}", self.species, traj.dim()),
                ));
            }
        }
        if let Some(norm) = &self.normalization {
            norm.check(n)?;
        }
        Ok(())
    }

    pub fn species_count(&self) -> usize {
        self.species.len()
    }

    pub fn state_dim(&self) -> usize {
        self.species.len() + 1
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn total_rows(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn is_noisy(&self) -> bool {
        self.trajectories
            .iter()
            .any(|t| matches!(t.provenance, Provenance::Noisy { .. }))
    }

    /// The noise-free counterpart, reconstructed from each trajectory's
    /// parent.
    pub fn clean_version(&self) -> TrajectoryDataset {
        TrajectoryDataset {
            trajectories: self.trajectories.iter().map(|t| t.clean_version().clone()).collect(),
            ..self.clone()
        }
    }

    /// Fits a normalization on this dataset and stores it.
    pub fn fit_normalization(&mut self) -> Result<NormalizationSpec> {
        let norm = NormalizationSpec::fit(self)?;
        self.normalization = Some(norm.clone());
        Ok(norm)
    }
}

/// Adds range-relative Gaussian noise to every sampled row except the
/// initial condition. The standard deviation of state `j` is
/// `percent / 100` times that state's range over the trajectory. Constant
/// temperature columns are left untouched.
pub fn apply_noise(dataset: &TrajectoryDataset, percent: f64, seed: u64) -> Result<TrajectoryDataset> {
    if !(percent >= 0.0) || !percent.is_finite() {
        return Err(Error::InvalidConfig(format!("noise percent must be >= 0, got {percent}")));
    }
    if dataset.is_noisy() {
        return Err(Error::Contract("noise must be applied to clean data".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = dataset.clone();
    for traj in &mut out.trajectories {
        let parent = Arc::new(traj.clone());
        let n = traj.dim();
        let noisy_cols = if traj.constant_temperature { n - 1 } else { n };
        for j in 0..noisy_cols {
            let col = traj.column(j);
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sigma = percent / 100.0 * (hi - lo);
            for row in traj.states.iter_mut().skip(1) {
                let z: f64 = StandardNormal.sample(&mut rng);
                if sigma > 0.0 {
                    row[j] += sigma * z;
                }
            }
        }
        traj.provenance = Provenance::Noisy { percent, seed };
        traj.clean = Some(parent);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize, slope: f64) -> Trajectory {
        let times: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let states = times.iter().map(|t| vec![slope * t, 1.0 - 0.5 * t / n as f64, 300.0 + t]).collect();
        Trajectory::new(times, states, false).unwrap()
    }

    fn ds(trajs: Vec<Trajectory>) -> TrajectoryDataset {
        TrajectoryDataset::new(vec!["A".into(), "B".into()], Split::Train, trajs).unwrap()
    }

    #[test]
    fn rejects_malformed_trajectories() {
        assert!(Trajectory::new(vec![], vec![], false).is_err());
        assert!(Trajectory::new(vec![0.0, 0.0], vec![vec![1.0, 2.0]; 2], false).is_err());
        assert!(Trajectory::new(vec![0.0, 1.0], vec![vec![1.0, 2.0], vec![1.0]], false).is_err());
        assert!(Trajectory::new(vec![0.0], vec![vec![f64::NAN, 1.0]], false).is_err());
    }

    #[test]
    fn normalization_maps_to_unit_window() {
        let d = ds(vec![ramp(5, 2.0), ramp(3, -1.0)]);
        let norm = NormalizationSpec::fit(&d).unwrap();
        assert_eq!(norm.min, vec![-2.0, 0.6, 300.0]);
        assert_eq!(norm.range, vec![10.0, 0.4, 4.0]);
        let u = vec![3.0, 0.8, 302.0];
        let z = norm.normalize(&u);
        assert!(z.iter().all(|v| (v - 0.5).abs() < 1e-12), "{z:?}");
        let back = norm.denormalize(&z);
        for (a, b) in back.iter().zip(&u) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_state_gets_unit_range() {
        let t = Trajectory::new(vec![0.0, 1.0], vec![vec![0.2, 0.8, 330.0], vec![0.1, 0.9, 330.0]], true).unwrap();
        let norm = NormalizationSpec::fit(&ds(vec![t])).unwrap();
        assert_eq!(norm.range[2], 1.0);
        assert_eq!(norm.min[2], 330.0);
    }

    #[test]
    fn zero_noise_is_identity_with_parent() {
        let d = ds(vec![ramp(6, 1.0)]);
        let noisy = apply_noise(&d, 0.0, 3).unwrap();
        assert_eq!(noisy.trajectories[0].states, d.trajectories[0].states);
        assert!(noisy.is_noisy());
        assert_eq!(noisy.clean_version().trajectories[0], d.trajectories[0]);
        assert!(apply_noise(&noisy, 1.0, 3).is_err());
        assert!(apply_noise(&d, -1.0, 3).is_err());
    }

    #[test]
    fn noise_is_seeded_and_spares_initial_row() {
        let d = ds(vec![ramp(20, 1.0), ramp(20, 0.5)]);
        let a = apply_noise(&d, 5.0, 11).unwrap();
        let b = apply_noise(&d, 5.0, 11).unwrap();
        let c = apply_noise(&d, 5.0, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.trajectories[0].states, c.trajectories[0].states);
        for (t, clean) in a.trajectories.iter().zip(&d.trajectories) {
            assert_eq!(t.states[0], clean.states[0]);
        }
    }

    #[test]
    fn injected_sigma_matches_percent_of_range() {
        let n = 2001;
        let times: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let states = times.iter().map(|t| vec![2.0 * t / (n - 1) as f64, 0.0, 1.0]).collect();
        let d = ds(vec![Trajectory::new(times, states, true).unwrap()]);
        let noisy = apply_noise(&d, 15.0, 7).unwrap();
        let diffs: Vec<f64> = noisy.trajectories[0]
            .states
            .iter()
            .zip(&d.trajectories[0].states)
            .skip(1)
            .map(|(a, b)| a[0] - b[0])
            .collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let var = diffs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64;
        let sd = var.sqrt();
        assert!((sd - 0.30).abs() < 0.03, "sample sd {sd}");
        // Constant-temperature column and the constant species are untouched.
        assert!(noisy.trajectories[0].states.iter().all(|r| r[1] == 0.0 && r[2] == 1.0));
    }

    #[test]
    fn temperature_interpolant() {
        let t = ramp(4, 1.0);
        assert_eq!(t.temperature_at(1.5), 301.5);
        assert_eq!(t.temperature_at(-1.0), 300.0);
        assert_eq!(t.temperature_at(10.0), 303.0);
        assert_eq!(t.temperature_slope_at(2.0), 1.0);
        assert_eq!(t.temperature_slope_at(3.0), 0.0);
    }
}
