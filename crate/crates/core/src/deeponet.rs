//! DeepONet baseline: a branch network on the initial state and a trunk
//! network on time, combined by an element-wise product and an optional
//! output network. The model regresses states directly, no ODE involved.
//!
//! Inputs and outputs live in the dataset's normalized space: the branch sees
//! the normalized initial state, the trunk sees `t / time_scale`, and the
//! output is the normalized species vector.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{NormalizationSpec, Trajectory, TrajectoryDataset};
use crate::error::{check_dim, Error, Result};
use crate::kan::{swish, swish_slope};
use crate::optim::Adam;
use crate::par;
use crate::train::{EpochRecord, Evaluation, Stage, TrainConfig, TrainReport};

/// Fully connected network; Swish on hidden layers, linear last layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

fn dense_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidConfig(format!("bad layer sizes {sizes:?}")));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; dense_count(sizes)],
        })
    }

    /// Weights and biases uniform on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn random<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut mlp = Self::zeros(sizes)?;
        let mut at = 0;
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            let n = w[0] * w[1] + w[1];
            for p in &mut mlp.params[at..at + n] {
                *p = rng.random_range(-bound..=bound);
            }
            at += n;
        }
        Ok(mlp)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n_in(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_out(&self) -> usize {
        *self.sizes.last().expect("at least two sizes")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Forward pass recording every layer's pre-activation and activation.
    fn forward_cached(&self, x: &[f64], cache: &mut MlpCache) -> Vec<f64> {
        cache.acts.clear();
        cache.pre.clear();
        cache.acts.push(x.to_vec());
        let layers = self.sizes.len() - 1;
        let mut at = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[at..at + n_in * n_out];
            let b = &self.params[at + n_in * n_out..at + n_in * n_out + n_out];
            at += n_in * n_out + n_out;
            let a = &cache.acts[l];
            let z: Vec<f64> = (0..n_out)
                .map(|i| b[i] + w[i * n_in..(i + 1) * n_in].iter().zip(a).map(|(wi, ai)| wi * ai).sum::<f64>())
                .collect();
            let out = if l + 1 < layers { z.iter().map(|&v| swish(v)).collect() } else { z.clone() };
            cache.pre.push(z);
            cache.acts.push(out);
        }
        cache.acts.last().expect("output layer").clone()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("network input", self.n_in(), x.len())?;
        Ok(self.forward_cached(x, &mut MlpCache::default()))
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to the input.
    fn backward(&self, cache: &MlpCache, d_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut at = 0;
        for l in 0..layers {
            offsets.push(at);
            at += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut delta = d_out.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let at = offsets[l];
            let a = &cache.acts[l];
            for i in 0..n_out {
                let d = delta[i];
                for j in 0..n_in {
                    grad[at + i * n_in + j] += d * a[j];
                }
                grad[at + n_in * n_out + i] += d;
            }
            let w = &self.params[at..at + n_in * n_out];
            let mut d_in = vec![0.0; n_in];
            for i in 0..n_out {
                for j in 0..n_in {
                    d_in[j] += w[i * n_in + j] * delta[i];
                }
            }
            if l > 0 {
                for (d, z) in d_in.iter_mut().zip(&cache.pre[l - 1]) {
                    *d *= swish_slope(*z);
                }
            }
            delta = d_in;
        }
        delta
    }
}

#[derive(Debug, Clone, Default)]
struct MlpCache {
    pre: Vec<Vec<f64>>,
    acts: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeepOnetConfig {
    /// Branch sizes, starting with the state dimension `m + 1`.
    pub branch: Vec<usize>,
    /// Trunk sizes, starting with 1.
    pub trunk: Vec<usize>,
    /// Output network sizes from the product width to `m`; without it the
    /// product is summed in `m` equal consecutive groups.
    pub output: Option<Vec<usize>>,
}

impl DeepOnetConfig {
    /// 308-parameter baseline for the six-species biodiesel data:
    /// branch 7-6-8-8, trunk 1-7-8, output 8-6.
    pub fn biodiesel_308() -> Self {
        Self {
            branch: vec![7, 6, 8, 8],
            trunk: vec![1, 7, 8],
            output: Some(vec![8, 6]),
        }
    }

    /// Branch `m+1 -> w -> w -> w`, trunk `1 -> w -> w`, output `w -> m`.
    pub fn with_width(species: usize, width: usize) -> Self {
        Self {
            branch: vec![species + 1, width, width, width],
            trunk: vec![1, width, width],
            output: Some(vec![width, species]),
        }
    }

    pub fn species(&self) -> usize {
        match &self.output {
            Some(o) => *o.last().unwrap_or(&0),
            None => self.branch.first().map_or(0, |n| n.saturating_sub(1)),
        }
    }

    pub fn parameter_count(&self) -> usize {
        dense_count(&self.branch) + dense_count(&self.trunk) + self.output.as_deref().map_or(0, dense_count)
    }

    fn validate(&self) -> Result<()> {
        let (Some(&b_in), Some(&b_out)) = (self.branch.first(), self.branch.last()) else {
            return Err(Error::InvalidConfig("empty branch network".into()));
        };
        let (Some(&t_in), Some(&t_out)) = (self.trunk.first(), self.trunk.last()) else {
            return Err(Error::InvalidConfig("empty trunk network".into()));
        };
        if t_in != 1 {
            return Err(Error::InvalidConfig("trunk input must be scalar time".into()));
        }
        if b_out != t_out {
            return Err(Error::InvalidConfig(format!("branch width {b_out} differs from trunk width {t_out}")));
        }
        let m = b_in.saturating_sub(1);
        match &self.output {
            Some(o) => {
                if o.first() != Some(&b_out) || o.last() != Some(&m) {
                    return Err(Error::InvalidConfig(format!(
                        "output network must map {b_out} to {m}, got {o:?}"
                    )));
                }
            }
            None => {
                if m == 0 || b_out % m != 0 {
                    return Err(Error::InvalidConfig(format!(
                        "without an output network the product width {b_out} must split evenly over {m} species"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepOnetModel {
    pub config: DeepOnetConfig,
    pub branch: Mlp,
    pub trunk: Mlp,
    pub output: Option<Mlp>,
    pub normalization: NormalizationSpec,
    pub time_scale: f64,
}

struct Cache {
    branch: MlpCache,
    trunk: MlpCache,
    output: MlpCache,
    b: Vec<f64>,
    t: Vec<f64>,
}

impl DeepOnetModel {
    pub fn random(config: DeepOnetConfig, normalization: NormalizationSpec, time_scale: f64, seed: u64) -> Result<Self> {
        config.validate()?;
        check_dim("normalization", config.branch[0], normalization.dim())?;
        if !(time_scale > 0.0) {
            return Err(Error::InvalidConfig("time scale must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            branch: Mlp::random(&config.branch, &mut rng)?,
            trunk: Mlp::random(&config.trunk, &mut rng)?,
            output: match &config.output {
                Some(o) => Some(Mlp::random(o, &mut rng)?),
                None => None,
            },
            config,
            normalization,
            time_scale,
        })
    }

    pub fn species(&self) -> usize {
        self.config.species()
    }

    pub fn n_params(&self) -> usize {
        self.config.parameter_count()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.branch.params().to_vec();
        p.extend_from_slice(self.trunk.params());
        if let Some(o) = &self.output {
            p.extend_from_slice(o.params());
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        check_dim("DeepONet parameters", self.n_params(), p.len())?;
        let nb = self.branch.params().len();
        let nt = self.trunk.params().len();
        self.branch.params_mut().copy_from_slice(&p[..nb]);
        self.trunk.params_mut().copy_from_slice(&p[nb..nb + nt]);
        if let Some(o) = &mut self.output {
            o.params_mut().copy_from_slice(&p[nb + nt..]);
        }
        Ok(())
    }

    fn forward_normalized(&self, x: &[f64], tau: f64, cache: &mut Cache) -> Vec<f64> {
        cache.b = self.branch.forward_cached(x, &mut cache.branch);
        cache.t = self.trunk.forward_cached(&[tau], &mut cache.trunk);
        let h: Vec<f64> = cache.b.iter().zip(&cache.t).map(|(a, b)| a * b).collect();
        match &self.output {
            Some(o) => o.forward_cached(&h, &mut cache.output),
            None => {
                let m = self.species();
                let g = h.len() / m;
                (0..m).map(|k| h[k * g..(k + 1) * g].iter().sum()).collect()
            }
        }
    }

    fn backward(&self, cache: &Cache, d_y: &[f64], grad: &mut [f64]) {
        let nb = self.branch.params().len();
        let nt = self.trunk.params().len();
        let (g_branch, rest) = grad.split_at_mut(nb);
        let (g_trunk, g_out) = rest.split_at_mut(nt);
        let d_h = match &self.output {
            Some(o) => o.backward(&cache.output, d_y, g_out),
            None => {
                let g = cache.b.len() / d_y.len();
                (0..cache.b.len()).map(|q| d_y[q / g]).collect()
            }
        };
        let d_b: Vec<f64> = d_h.iter().zip(&cache.t).map(|(d, t)| d * t).collect();
        let d_t: Vec<f64> = d_h.iter().zip(&cache.b).map(|(d, b)| d * b).collect();
        self.branch.backward(&cache.branch, &d_b, g_branch);
        self.trunk.backward(&cache.trunk, &d_t, g_trunk);
    }

    fn new_cache() -> Cache {
        Cache {
            branch: MlpCache::default(),
            trunk: MlpCache::default(),
            output: MlpCache::default(),
            b: Vec::new(),
            t: Vec::new(),
        }
    }

    /// Predicted physical species at time `t` from physical initial state
    /// `u0 = [Y, T]`.
    pub fn forward(&self, u0: &[f64], t: f64) -> Result<Vec<f64>> {
        check_dim("initial state", self.config.branch[0], u0.len())?;
        let x = self.normalization.normalize(u0);
        let y = self.forward_normalized(&x, t / self.time_scale, &mut Self::new_cache());
        Ok(y.iter()
            .enumerate()
            .map(|(k, v)| self.normalization.min[k] + self.normalization.range[k] * v)
            .collect())
    }

    /// Squared normalized error summed over a trajectory's rows and species,
    /// with its gradient when `grad` is given.
    fn trajectory_sse(&self, traj: &Trajectory, norm: &NormalizationSpec, mut grad: Option<&mut [f64]>) -> f64 {
        let m = self.species();
        let x = self.normalization.normalize(traj.initial_state());
        let mut cache = Self::new_cache();
        let mut sse = 0.0;
        for (t, obs) in traj.times.iter().zip(&traj.states) {
            let y = self.forward_normalized(&x, t / self.time_scale, &mut cache);
            let mut d_y = vec![0.0; m];
            for k in 0..m {
                // Model output in its own normalization, compared in `norm`.
                let pred = self.normalization.min[k] + self.normalization.range[k] * y[k];
                let e = (pred - obs[k]) / norm.range[k];
                sse += e * e;
                d_y[k] = 2.0 * e * self.normalization.range[k] / norm.range[k];
            }
            if let Some(g) = grad.as_deref_mut() {
                self.backward(&cache, &d_y, g);
            }
        }
        sse
    }
}

fn check_dataset(model: &DeepOnetModel, dataset: &TrajectoryDataset, norm: &NormalizationSpec) -> Result<()> {
    check_dim("dataset species", model.species(), dataset.species_count())?;
    norm.check(dataset.state_dim())?;
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("empty dataset".into()));
    }
    Ok(())
}

/// Normalized MSE over every row and species.
pub fn don_mse(
    model: &DeepOnetModel,
    dataset: &TrajectoryDataset,
    norm: &NormalizationSpec,
    exec: par::Execution,
) -> Result<f64> {
    check_dataset(model, dataset, norm)?;
    let sse: f64 = par::map(exec, &dataset.trajectories, |_, t| model.trajectory_sse(t, norm, None))
        .iter()
        .sum();
    Ok(sse / (model.species() * dataset.total_rows()) as f64)
}

/// MSE and gradient over all parameters.
pub fn don_loss_and_gradient(
    model: &DeepOnetModel,
    dataset: &TrajectoryDataset,
    norm: &NormalizationSpec,
    exec: par::Execution,
) -> Result<(f64, Vec<f64>)> {
    check_dataset(model, dataset, norm)?;
    let n = model.n_params();
    let parts = par::map(exec, &dataset.trajectories, |_, t| {
        let mut g = vec![0.0; n];
        let sse = model.trajectory_sse(t, norm, Some(&mut g));
        (sse, g)
    });
    let scale = 1.0 / (model.species() * dataset.total_rows()) as f64;
    let mut grad = vec![0.0; n];
    let mut sse = 0.0;
    for (s, g) in parts {
        sse += s;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b * scale;
        }
    }
    Ok((sse * scale, grad))
}

fn don_test_metrics(
    model: &DeepOnetModel,
    eval: Option<Evaluation<'_>>,
    norm: &NormalizationSpec,
    exec: par::Execution,
) -> Result<(Option<f64>, Option<f64>)> {
    let Some(eval) = eval else {
        return Ok((None, None));
    };
    let test = don_mse(model, eval.test, norm, exec)?;
    let clean = if eval.test.is_noisy() {
        don_mse(model, &eval.test.clean_version(), norm, exec)?
    } else {
        test
    };
    Ok((Some(test), Some(clean)))
}

/// Full-batch Adam on the normalized species MSE.
pub fn don_train(
    model: &mut DeepOnetModel,
    train: &TrajectoryDataset,
    eval: Option<Evaluation<'_>>,
    norm: &NormalizationSpec,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    check_dataset(model, train, norm)?;
    let mut params = model.params();
    let mut adam = Adam::new(cfg.adam, params.len())?;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let (mse, grad) = don_loss_and_gradient(model, train, norm, cfg.execution)?;
        if !mse.is_finite() {
            return Err(Error::TrainingAborted {
                epoch,
                reason: "non-finite DeepONet loss".into(),
            });
        }
        let due = cfg.eval_every > 0 && epoch % cfg.eval_every == 0;
        let (test_mse, noisefree_mse) = if due {
            don_test_metrics(model, eval, norm, cfg.execution)?
        } else {
            (None, None)
        };
        adam.step(&mut params, &grad)?;
        model.set_params(&params)?;
        epochs.push(EpochRecord {
            epoch,
            train_mse: mse,
            test_mse,
            noisefree_mse,
            pinn: None,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    let final_train_mse = don_mse(model, train, norm, cfg.execution)?;
    let (final_test_mse, final_noisefree_mse) = don_test_metrics(model, eval, norm, cfg.execution)?;
    Ok(TrainReport {
        stage: Stage::Kinetic,
        seed: cfg.seed,
        epochs,
        failed_epochs: Vec::new(),
        final_lr: adam.config.lr,
        final_train_mse,
        final_test_mse,
        final_noisefree_mse,
        final_params: params,
    })
}
