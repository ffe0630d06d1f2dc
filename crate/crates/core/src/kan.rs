//! Gridded radial-basis learnable activations and KAN layers.
//!
//! Every edge of a layer carries a univariate activation
//!
//! ```text
//! phi(x) = sum_i w_i * exp(-(x - c_i)^2 / (2 h^2)) + w_b * swish(x)
//! ```
//!
//! on a uniform grid of centers spanning `[-1, 1]`. A layer with `n_mu`
//! multiplication inputs multiplies the activations of its first `n_mu`
//! inputs and adds the activations of the remaining ones; `n_mu = 0` is the
//! plain additive layer.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Uniform grid of RBF centers on `[-1, 1]`, spread equal to the spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfGrid {
    centers: Vec<f64>,
    spread: f64,
}

impl RbfGrid {
    /// A grid of `size` centers. A single center sits at 0 with unit spread.
    pub fn uniform(size: usize) -> Result<Self> {
        match size {
            0 => Err(Error::InvalidConfig("grid size must be at least 1".into())),
            1 => Ok(Self {
                centers: vec![0.0],
                spread: 1.0,
            }),
            n => {
                let spacing = 2.0 / (n - 1) as f64;
                let centers = (0..n).map(|i| -1.0 + i as f64 * spacing).collect();
                Ok(Self {
                    centers,
                    spread: spacing,
                })
            }
        }
    }

    pub fn size(&self) -> usize {
        self.centers.len()
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn spread(&self) -> f64 {
        self.spread
    }

    /// Fills `value[i] = psi(x - c_i)` and `slope[i] = d psi / dx`.
    #[inline]
    fn basis(&self, x: f64, value: &mut [f64], slope: &mut [f64]) {
        let inv_h2 = 1.0 / (self.spread * self.spread);
        for ((c, v), s) in self.centers.iter().zip(value.iter_mut()).zip(slope.iter_mut()) {
            let d = x - c;
            let psi = (-0.5 * d * d * inv_h2).exp();
            *v = psi;
            *s = -d * inv_h2 * psi;
        }
    }
}

/// Parameters of one learnable activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationParams {
    pub grid_weights: Vec<f64>,
    pub base_weight: Option<f64>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub(crate) fn swish(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
pub(crate) fn swish_slope(x: f64) -> f64 {
    let s = sigmoid(x);
    s + x * s * (1.0 - s)
}

/// Evaluates one activation at an already-normalized input.
pub fn eval_activation(p: &ActivationParams, grid: &RbfGrid, x: f64) -> Result<f64> {
    check_dim("activation grid weights", grid.size(), p.grid_weights.len())?;
    let inv_h2 = 1.0 / (grid.spread * grid.spread);
    let rbf: f64 = p
        .grid_weights
        .iter()
        .zip(&grid.centers)
        .map(|(w, c)| w * (-0.5 * (x - c) * (x - c) * inv_h2).exp())
        .sum();
    Ok(rbf + p.base_weight.map_or(0.0, |wb| wb * swish(x)))
}

/// Shape of a KAN layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub n_in: usize,
    pub n_out: usize,
    pub n_mu: usize,
    pub grid_size: usize,
    pub base: bool,
    pub normalize_input: bool,
}

impl LayerShape {
    /// Parameters per activation.
    pub fn stride(&self) -> usize {
        self.grid_size + usize::from(self.base)
    }

    pub fn n_params(&self) -> usize {
        self.n_in * self.n_out * self.stride()
    }

    fn validate(&self) -> Result<()> {
        if self.n_in == 0 || self.n_out == 0 {
            return Err(Error::InvalidConfig("layer widths must be positive".into()));
        }
        if self.n_mu > self.n_in {
            return Err(Error::InvalidConfig(format!(
                "n_mu = {} exceeds layer input width {}",
                self.n_mu, self.n_in
            )));
        }
        if self.grid_size == 0 {
            return Err(Error::InvalidConfig("grid size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Jacobians of a layer at one input.
///
/// `d_params_rows` is the compact form of `d out / d theta`: output `i` only
/// depends on the activations in row `i`, so row `i` stores the derivative
/// with respect to that row's `n_in * stride` parameters.
#[derive(Debug, Clone)]
pub struct LayerJacobians {
    pub output: Vec<f64>,
    pub d_input: Array2<f64>,
    pub d_params_rows: Array2<f64>,
}

impl LayerJacobians {
    /// Expands the compact parameter Jacobian to `n_out x n_params`.
    pub fn d_params_dense(&self) -> Array2<f64> {
        let (n_out, row_len) = self.d_params_rows.dim();
        let mut dense = Array2::zeros((n_out, n_out * row_len));
        for i in 0..n_out {
            for k in 0..row_len {
                dense[[i, i * row_len + k]] = self.d_params_rows[[i, k]];
            }
        }
        dense
    }
}

/// A KAN layer. Parameters are stored row-major by (output, input), each
/// activation contributing its grid weights followed by the base weight.
#[derive(Debug, Clone, PartialEq)]
pub struct KanLayer {
    shape: LayerShape,
    grid: RbfGrid,
    params: Vec<f64>,
}

impl KanLayer {
    pub fn zeros(shape: LayerShape) -> Result<Self> {
        shape.validate()?;
        Ok(Self {
            grid: RbfGrid::uniform(shape.grid_size)?,
            params: vec![0.0; shape.n_params()],
            shape,
        })
    }

    /// Parameters drawn i.i.d. uniform on `[-scale, scale]`.
    pub fn random<R: Rng + ?Sized>(shape: LayerShape, scale: f64, rng: &mut R) -> Result<Self> {
        let mut layer = Self::zeros(shape)?;
        for p in &mut layer.params {
            *p = rng.random_range(-scale..=scale);
        }
        Ok(layer)
    }

    pub fn from_params(shape: LayerShape, params: Vec<f64>) -> Result<Self> {
        let mut layer = Self::zeros(shape)?;
        check_dim("layer parameters", layer.params.len(), params.len())?;
        layer.params = params;
        Ok(layer)
    }

    pub fn shape(&self) -> &LayerShape {
        &self.shape
    }

    pub fn grid(&self) -> &RbfGrid {
        &self.grid
    }

    pub fn n_in(&self) -> usize {
        self.shape.n_in
    }

    pub fn n_out(&self) -> usize {
        self.shape.n_out
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offset(&self, out: usize, inp: usize) -> usize {
        (out * self.shape.n_in + inp) * self.shape.stride()
    }

    pub fn activation(&self, out: usize, inp: usize) -> ActivationParams {
        let o = self.offset(out, inp);
        let n = self.shape.grid_size;
        ActivationParams {
            grid_weights: self.params[o..o + n].to_vec(),
            base_weight: self.shape.base.then(|| self.params[o + n]),
        }
    }

    pub fn set_activation(&mut self, out: usize, inp: usize, p: &ActivationParams) -> Result<()> {
        check_dim("activation grid weights", self.shape.grid_size, p.grid_weights.len())?;
        if p.base_weight.is_some() != self.shape.base {
            return Err(Error::InvalidConfig("base weight presence does not match layer".into()));
        }
        let o = self.offset(out, inp);
        let n = self.shape.grid_size;
        self.params[o..o + n].copy_from_slice(&p.grid_weights);
        if let Some(wb) = p.base_weight {
            self.params[o + n] = wb;
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        check_dim("layer input", self.shape.n_in, x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "layer input".into(),
            });
        }
        Ok(())
    }

    fn normalized(&self, x: f64) -> (f64, f64) {
        if self.shape.normalize_input {
            let t = x.tanh();
            (t, 1.0 - t * t)
        } else {
            (x, 1.0)
        }
    }

    /// Activation values `phi[i * n_in + j] = phi_ij(x~_j)`.
    fn activation_values(&self, x: &[f64], ws: &mut Scratch) {
        let s = self.shape;
        let n = s.grid_size;
        let stride = s.stride();
        ws.prepare(s);
        for j in 0..s.n_in {
            let (xt, dxt) = self.normalized(x[j]);
            ws.xt[j] = xt;
            ws.dxt[j] = dxt;
            self.grid
                .basis(xt, &mut ws.psi[j * n..(j + 1) * n], &mut ws.dpsi[j * n..(j + 1) * n]);
            if s.base {
                ws.sw[j] = swish(xt);
                ws.dsw[j] = swish_slope(xt);
            }
        }
        for i in 0..s.n_out {
            for j in 0..s.n_in {
                let w = &self.params[(i * s.n_in + j) * stride..(i * s.n_in + j + 1) * stride];
                let psi = &ws.psi[j * n..(j + 1) * n];
                let dpsi = &ws.dpsi[j * n..(j + 1) * n];
                let mut v = 0.0;
                let mut dv = 0.0;
                for g in 0..n {
                    v += w[g] * psi[g];
                    dv += w[g] * dpsi[g];
                }
                if s.base {
                    v += w[n] * ws.sw[j];
                    dv += w[n] * ws.dsw[j];
                }
                ws.phi[i * s.n_in + j] = v;
                ws.dphi[i * s.n_in + j] = dv;
            }
        }
    }

    /// Layer output for input `x`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut ws = Scratch::default();
        self.activation_values(x, &mut ws);
        let s = self.shape;
        Ok((0..s.n_out)
            .map(|i| {
                let row = &ws.phi[i * s.n_in..(i + 1) * s.n_in];
                combine(row, s.n_mu)
            })
            .collect())
    }

    /// Output and Jacobians with respect to the raw (pre-tanh) input and to
    /// every layer parameter.
    pub fn jacobians(&self, x: &[f64]) -> Result<LayerJacobians> {
        self.check_input(x)?;
        let mut ws = Scratch::default();
        let mut jac = LayerJacobians {
            output: vec![0.0; self.shape.n_out],
            d_input: Array2::zeros((self.shape.n_out, self.shape.n_in)),
            d_params_rows: Array2::zeros((self.shape.n_out, self.shape.n_in * self.shape.stride())),
        };
        self.jacobians_into(x, &mut ws, &mut jac);
        Ok(jac)
    }

    /// Allocation-free core of [`KanLayer::jacobians`]; `x` must already be
    /// validated.
    pub(crate) fn jacobians_into(&self, x: &[f64], ws: &mut Scratch, jac: &mut LayerJacobians) {
        let s = self.shape;
        let n = s.grid_size;
        let stride = s.stride();
        self.activation_values(x, ws);
        for i in 0..s.n_out {
            let row = &ws.phi[i * s.n_in..(i + 1) * s.n_in];
            jac.output[i] = combine(row, s.n_mu);
            // d out_i / d phi_ij: product of the other multiplicative factors,
            // via prefix/suffix products so zeros are handled exactly.
            let coef = &mut ws.coef[..s.n_in];
            if s.n_mu > 0 {
                let mut prefix = 1.0;
                for j in 0..s.n_mu {
                    coef[j] = prefix;
                    prefix *= row[j];
                }
                let mut suffix = 1.0;
                for j in (0..s.n_mu).rev() {
                    coef[j] *= suffix;
                    suffix *= row[j];
                }
            }
            for c in coef.iter_mut().skip(s.n_mu) {
                *c = 1.0;
            }
            for j in 0..s.n_in {
                let c = coef[j];
                jac.d_input[[i, j]] = c * ws.dphi[i * s.n_in + j] * ws.dxt[j];
                let base = j * stride;
                for g in 0..n {
                    jac.d_params_rows[[i, base + g]] = c * ws.psi[j * n + g];
                }
                if s.base {
                    jac.d_params_rows[[i, base + n]] = c * ws.sw[j];
                }
            }
        }
    }
}

#[inline]
fn combine(row: &[f64], n_mu: usize) -> f64 {
    let mult = if n_mu == 0 {
        0.0
    } else {
        row[..n_mu].iter().product()
    };
    mult + row[n_mu..].iter().sum::<f64>()
}

/// Reusable buffers for layer evaluation.
#[derive(Debug, Default, Clone)]
pub(crate) struct Scratch {
    xt: Vec<f64>,
    dxt: Vec<f64>,
    psi: Vec<f64>,
    dpsi: Vec<f64>,
    sw: Vec<f64>,
    dsw: Vec<f64>,
    phi: Vec<f64>,
    dphi: Vec<f64>,
    coef: Vec<f64>,
}

impl Scratch {
    fn prepare(&mut self, s: LayerShape) {
        let fit = |v: &mut Vec<f64>, n: usize| {
            if v.len() < n {
                v.resize(n, 0.0);
            }
        };
        fit(&mut self.xt, s.n_in);
        fit(&mut self.dxt, s.n_in);
        fit(&mut self.psi, s.n_in * s.grid_size);
        fit(&mut self.dpsi, s.n_in * s.grid_size);
        fit(&mut self.sw, s.n_in);
        fit(&mut self.dsw, s.n_in);
        fit(&mut self.phi, s.n_in * s.n_out);
        fit(&mut self.dphi, s.n_in * s.n_out);
        fit(&mut self.coef, s.n_in);
    }
}
