//! Tsitouras 5(4) explicit Runge-Kutta integration with an optional forward
//! sensitivity mode.
//!
//! Output times are hit by clipping the step, never by interpolation, so a
//! solution is reproducible bit-for-bit and piecewise-defined forcing that
//! changes only at output times stays smooth within every step.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

// Tsit5 tableau (Tsitouras 2011, as used by OrdinaryDiffEq.jl).
const C2: f64 = 0.161;
const C3: f64 = 0.327;
const C4: f64 = 0.9;
const C5: f64 = 0.980_025_540_904_509_7;
const A21: f64 = 0.161;
const A31: f64 = -0.008_480_655_492_356_989;
const A32: f64 = 0.335_480_655_492_357;
const A41: f64 = 2.897_153_057_105_493;
const A42: f64 = -6.359_448_489_975_075;
const A43: f64 = 4.362_295_432_869_581_5;
const A51: f64 = 5.325_864_828_439_257;
const A52: f64 = -11.748_883_564_062_828;
const A53: f64 = 7.495_539_342_889_836_5;
const A54: f64 = -0.092_495_066_361_755_25;
const A61: f64 = 5.861_455_442_946_42;
const A62: f64 = -12.920_969_317_847_11;
const A63: f64 = 8.159_367_898_576_159;
const A64: f64 = -0.071_584_973_281_401;
const A65: f64 = -0.028_269_050_394_068_383;
const A71: f64 = 0.096_460_766_818_065_23;
const A72: f64 = 0.01;
const A73: f64 = 0.479_889_650_414_499_6;
const A74: f64 = 1.379_008_574_103_742;
const A75: f64 = -3.290_069_515_436_081;
const A76: f64 = 2.324_710_524_099_774;
// Difference between the 5th- and embedded 4th-order weights.
const E1: f64 = -0.001_780_011_052_225_777_14;
const E2: f64 = -0.000_816_434_459_656_746_9;
const E3: f64 = 0.007_880_878_010_261_995;
const E4: f64 = -0.144_711_007_173_262_9;
const E5: f64 = 0.582_357_165_452_555_2;
const E6: f64 = -0.458_082_105_929_186_97;
const E7: f64 = 1.0 / 66.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepMode {
    Adaptive,
    /// Constant steps of `initial_step`, shortened only to land on output
    /// times.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Chosen from the initial slope when absent (adaptive mode only).
    pub initial_step: Option<f64>,
    pub max_steps: usize,
    pub mode: StepMode,
    /// Output times; the span end alone when empty.
    #[serde(default)]
    pub save_at: Vec<f64>,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self::training(Vec::new())
    }
}

impl IntegratorConfig {
    /// Tolerances used while training surrogates.
    pub fn training(save_at: Vec<f64>) -> Self {
        Self {
            abs_tol: 1e-6,
            rel_tol: 1e-6,
            initial_step: None,
            max_steps: 100_000,
            mode: StepMode::Adaptive,
            save_at,
        }
    }

    /// Tolerances used to generate reference data.
    pub fn oracle(save_at: Vec<f64>) -> Self {
        Self {
            abs_tol: 1e-9,
            rel_tol: 1e-9,
            ..Self::training(save_at)
        }
    }

    pub fn fixed(step: f64, save_at: Vec<f64>) -> Self {
        Self {
            initial_step: Some(step),
            mode: StepMode::Fixed,
            ..Self::training(save_at)
        }
    }

    pub fn with_save_at(&self, save_at: Vec<f64>) -> Self {
        Self {
            save_at,
            ..self.clone()
        }
    }

    fn validate(&self, t0: f64, t1: f64) -> Result<()> {
        if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
            return Err(Error::InvalidConfig(format!("integration span ({t0}, {t1}) is degenerate")));
        }
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(Error::InvalidConfig("tolerances must be positive".into()));
        }
        if let Some(h) = self.initial_step {
            if !(h > 0.0) {
                return Err(Error::InvalidConfig("initial step must be positive".into()));
            }
        }
        if self.mode == StepMode::Fixed && self.initial_step.is_none() {
            return Err(Error::InvalidConfig("fixed-step mode needs initial_step".into()));
        }
        if self.save_at.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidConfig("save_at must be strictly increasing".into()));
        }
        if let (Some(&first), Some(&last)) = (self.save_at.first(), self.save_at.last()) {
            if first < t0 || last > t1 {
                return Err(Error::InvalidConfig(format!(
                    "save_at [{first}, {last}] leaves the span ({t0}, {t1})"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub stats: StepStats,
}

/// Integrates `du/dt = f(t, u)` from `span.0` to `span.1`, returning the
/// state at every output time.
///
/// `f(t, u, du)` writes the derivative into `du`.
pub fn integrate<F>(mut f: F, u0: &[f64], span: (f64, f64), cfg: &IntegratorConfig) -> Result<Solution>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let (t0, t1) = span;
    cfg.validate(t0, t1)?;
    let n = u0.len();
    let save_at: Vec<f64> = if cfg.save_at.is_empty() {
        vec![t1]
    } else {
        cfg.save_at.clone()
    };

    let mut stats = StepStats::default();
    let mut eval = |t: f64, u: &[f64], du: &mut [f64], stats: &mut StepStats| -> Result<()> {
        f(t, u, du)?;
        stats.rhs_evals += 1;
        if du.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("right-hand side at t = {t}"),
            });
        }
        Ok(())
    };

    let mut u = u0.to_vec();
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "initial state".into(),
        });
    }
    let mut k: [Vec<f64>; 7] = std::array::from_fn(|_| vec![0.0; n]);
    let mut stage = vec![0.0; n];
    let mut u_new = vec![0.0; n];
    let mut err = vec![0.0; n];

    let mut t = t0;
    eval(t, &u, &mut k[0], &mut stats)?;

    let mut h = match cfg.initial_step {
        Some(h) => h,
        None => initial_step(&u, &k[0], cfg, t1 - t0),
    };

    let mut times = Vec::with_capacity(save_at.len());
    let mut states = Vec::with_capacity(save_at.len());
    let mut next_save = 0;
    while next_save < save_at.len() && save_at[next_save] <= t {
        times.push(save_at[next_save]);
        states.push(u.clone());
        next_save += 1;
    }

    let mut last_rejected = false;
    while next_save < save_at.len() {
        let target = save_at[next_save];
        if stats.accepted + stats.rejected >= cfg.max_steps {
            return Err(Error::MaxSteps {
                max_steps: cfg.max_steps,
                t,
                last_state: u,
            });
        }
        let clipped = t + 1.01 * h >= target;
        let h_step = if clipped { target - t } else { h };
        if h_step <= 1e-14 * t.abs().max(1e-300) || !h_step.is_finite() {
            return Err(Error::StepUnderflow { t, h: h_step });
        }

        // Stages 2..7; k[0] holds f(t, u) from the previous step.
        let stage_rows: [(f64, &[f64]); 5] = [
            (C2, &[A21]),
            (C3, &[A31, A32]),
            (C4, &[A41, A42, A43]),
            (C5, &[A51, A52, A53, A54]),
            (1.0, &[A61, A62, A63, A64, A65]),
        ];
        for (s, (c, a)) in stage_rows.iter().enumerate() {
            for i in 0..n {
                let mut acc = 0.0;
                for (j, aj) in a.iter().enumerate() {
                    acc += aj * k[j][i];
                }
                stage[i] = u[i] + h_step * acc;
            }
            let (_, rest) = k.split_at_mut(s + 1);
            eval(t + c * h_step, &stage, &mut rest[0], &mut stats)?;
        }
        for i in 0..n {
            u_new[i] = u[i]
                + h_step
                    * (A71 * k[0][i] + A72 * k[1][i] + A73 * k[2][i] + A74 * k[3][i] + A75 * k[4][i] + A76 * k[5][i]);
        }
        let t_new = if clipped { target } else { t + h_step };
        {
            let (head, tail) = k.split_at_mut(6);
            let _ = head;
            eval(t_new, &u_new, &mut tail[0], &mut stats)?;
        }

        let accept = match cfg.mode {
            StepMode::Fixed => true,
            StepMode::Adaptive => {
                for i in 0..n {
                    err[i] = h_step
                        * (E1 * k[0][i]
                            + E2 * k[1][i]
                            + E3 * k[2][i]
                            + E4 * k[3][i]
                            + E5 * k[4][i]
                            + E6 * k[5][i]
                            + E7 * k[6][i]);
                }
                let norm = error_norm(&err, &u, &u_new, cfg);
                let mut fac = if norm == 0.0 {
                    FAC_MAX
                } else {
                    (SAFETY * norm.powf(-0.2)).clamp(FAC_MIN, FAC_MAX)
                };
                if norm <= 1.0 {
                    if last_rejected {
                        fac = fac.min(1.0);
                    }
                    let proposed = h_step * fac;
                    h = if clipped { proposed.max(h) } else { proposed };
                    true
                } else {
                    h = h_step * fac.min(1.0);
                    false
                }
            }
        };

        if accept {
            stats.accepted += 1;
            last_rejected = false;
            t = t_new;
            std::mem::swap(&mut u, &mut u_new);
            k.swap(0, 6);
            if clipped {
                times.push(target);
                states.push(u.clone());
                next_save += 1;
            }
        } else {
            stats.rejected += 1;
            last_rejected = true;
        }
    }

    Ok(Solution { times, states, stats })
}

fn error_norm(err: &[f64], u: &[f64], u_new: &[f64], cfg: &IntegratorConfig) -> f64 {
    let sum: f64 = err
        .iter()
        .zip(u.iter().zip(u_new))
        .map(|(e, (a, b))| {
            let sc = cfg.abs_tol + cfg.rel_tol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (sum / err.len().max(1) as f64).sqrt()
}

/// First step from the scaled size of the state and its slope; costs no
/// extra right-hand-side evaluation.
fn initial_step(u: &[f64], du: &[f64], cfg: &IntegratorConfig, span: f64) -> f64 {
    let n = u.len().max(1) as f64;
    let (mut d0, mut d1) = (0.0, 0.0);
    for (a, b) in u.iter().zip(du) {
        let sc = cfg.abs_tol + cfg.rel_tol * a.abs();
        d0 += (a / sc).powi(2);
        d1 += (b / sc).powi(2);
    }
    let (d0, d1) = ((d0 / n).sqrt(), (d1 / n).sqrt());
    let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 * span } else { 0.01 * d0 / d1 };
    h.min(span)
}

#[derive(Debug, Clone)]
pub struct SensitivitySolution {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// `du/dtheta` at each output time, `n x p`.
    pub sensitivities: Vec<Array2<f64>>,
    pub step_count: usize,
    pub rhs_eval_count: usize,
    pub stats: StepStats,
}

/// Value of `f` with its Jacobians with respect to the state (`n x n`) and
/// parameters (`n x p`).
pub struct RhsWithJacobians {
    pub value: Vec<f64>,
    pub d_state: Array2<f64>,
    pub d_params: Array2<f64>,
}

/// Integrates `u' = f(u)` together with `S' = (df/du) S + df/dtheta`, as one
/// flattened state `[u, S]` through the same stepper. Error control covers
/// the whole augmented vector.
pub fn integrate_with_sensitivity<F>(
    mut f: F,
    u0: &[f64],
    s0: ArrayView2<'_, f64>,
    span: (f64, f64),
    cfg: &IntegratorConfig,
) -> Result<SensitivitySolution>
where
    F: FnMut(f64, &[f64]) -> Result<RhsWithJacobians>,
{
    let n = u0.len();
    let (rows, p) = s0.dim();
    check_dim("sensitivity rows", n, rows)?;
    let mut y0 = u0.to_vec();
    y0.extend(s0.iter().copied());
    let sol = integrate(
        |t, y, dy| {
            let (u, s) = y.split_at(n);
            let r = f(t, u)?;
            check_dim("rhs value", n, r.value.len())?;
            check_dim("state Jacobian", n * n, r.d_state.len())?;
            check_dim("parameter Jacobian", n * p, r.d_params.len())?;
            let (du, ds) = dy.split_at_mut(n);
            du.copy_from_slice(&r.value);
            augment(r.d_state.view(), s, r.d_params.view(), ds);
            Ok(())
        },
        &y0,
        span,
        cfg,
    )?;
    let mut states = Vec::with_capacity(sol.states.len());
    let mut sensitivities = Vec::with_capacity(sol.states.len());
    for y in sol.states {
        states.push(y[..n].to_vec());
        sensitivities.push(Array2::from_shape_vec((n, p), y[n..].to_vec()).expect("augmented state layout"));
    }
    Ok(SensitivitySolution {
        times: sol.times,
        states,
        sensitivities,
        step_count: sol.stats.accepted,
        rhs_eval_count: sol.stats.rhs_evals,
        stats: sol.stats,
    })
}

/// `ds = ju * s + jp` with `s` and `ds` row-major `n x p`.
pub(crate) fn augment(ju: ArrayView2<'_, f64>, s: &[f64], jp: ArrayView2<'_, f64>, ds: &mut [f64]) {
    let (n, p) = jp.dim();
    for i in 0..n {
        let out = &mut ds[i * p..(i + 1) * p];
        for (o, v) in out.iter_mut().zip(jp.row(i)) {
            *o = *v;
        }
        for j in 0..ju.ncols() {
            let a = ju[[i, j]];
            if a != 0.0 {
                let src = &s[j * p..(j + 1) * p];
                for (o, v) in out.iter_mut().zip(src) {
                    *o += a * v;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn decay(_t: f64, u: &[f64], du: &mut [f64]) -> Result<()> {
        for (d, v) in du.iter_mut().zip(u) {
            *d = -v;
        }
        Ok(())
    }

    #[test]
    fn tableau_consistency() {
        let rows: [(f64, &[f64]); 6] = [
            (C2, &[A21]),
            (C3, &[A31, A32]),
            (C4, &[A41, A42, A43]),
            (C5, &[A51, A52, A53, A54]),
            (1.0, &[A61, A62, A63, A64, A65]),
            (1.0, &[A71, A72, A73, A74, A75, A76]),
        ];
        for (c, a) in rows {
            assert!((a.iter().sum::<f64>() - c).abs() < 1e-14);
        }
        let e = [E1, E2, E3, E4, E5, E6, E7];
        assert!(e.iter().sum::<f64>().abs() < 1e-14);
    }

    #[test]
    fn zero_field_is_constant() {
        let cfg = IntegratorConfig::training(vec![0.0, 0.5, 1.0]);
        let sol = integrate(
            |_, _, du: &mut [f64]| {
                du.fill(0.0);
                Ok(())
            },
            &[1.5, -2.0],
            (0.0, 1.0),
            &cfg,
        )
        .unwrap();
        assert_eq!(sol.times, vec![0.0, 0.5, 1.0]);
        for s in &sol.states {
            assert_eq!(s, &vec![1.5, -2.0]);
        }
    }

    #[test]
    fn exponential_decay_within_tolerance() {
        for tol in [1e-4, 1e-6, 1e-8] {
            let cfg = IntegratorConfig {
                abs_tol: tol,
                rel_tol: tol,
                ..IntegratorConfig::training(vec![1.0])
            };
            let sol = integrate(decay, &[1.0], (0.0, 1.0), &cfg).unwrap();
            let e = (sol.states[0][0] - (-1.0f64).exp()).abs();
            assert!(e < 10.0 * tol, "tol {tol}: error {e}");
        }
    }

    #[test]
    fn fsal_accounting() {
        let cfg = IntegratorConfig {
            abs_tol: 1e-10,
            rel_tol: 1e-10,
            initial_step: Some(0.5),
            ..IntegratorConfig::training(vec![0.3, 1.0, 4.0])
        };
        let sol = integrate(decay, &[1.0, 2.0], (0.0, 4.0), &cfg).unwrap();
        assert!(sol.stats.rejected > 0, "expected a rejection from the large first step");
        assert_eq!(sol.stats.rhs_evals, 6 * (sol.stats.accepted + sol.stats.rejected) + 1);
    }

    #[test]
    fn fixed_step_order() {
        let errs: Vec<f64> = [0.1, 0.05, 0.025, 0.0125]
            .iter()
            .map(|&h| {
                let sol = integrate(decay, &[1.0], (0.0, 1.0), &IntegratorConfig::fixed(h, vec![1.0])).unwrap();
                (sol.states[0][0] - (-1.0f64).exp()).abs()
            })
            .collect();
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!((4.5..=5.5).contains(&order), "order {order} from {errs:?}");
        }
    }

    #[test]
    fn save_at_hit_exactly() {
        let save: Vec<f64> = (0..=10).map(|i| i as f64 * 0.1).collect();
        let sol = integrate(decay, &[1.0], (0.0, 1.0), &IntegratorConfig::training(save.clone())).unwrap();
        assert_eq!(sol.times, save);
    }

    #[test]
    fn errors_surface() {
        let bad = IntegratorConfig::training(vec![0.5, 0.2]);
        assert!(integrate(decay, &[1.0], (0.0, 1.0), &bad).is_err());
        assert!(integrate(decay, &[1.0], (1.0, 1.0), &IntegratorConfig::default()).is_err());
        let nan = integrate(
            |_, _, du: &mut [f64]| {
                du[0] = f64::NAN;
                Ok(())
            },
            &[1.0],
            (0.0, 1.0),
            &IntegratorConfig::default(),
        );
        assert!(matches!(nan, Err(Error::NonFinite { .. })));
        let short = IntegratorConfig {
            max_steps: 3,
            initial_step: Some(1e-3),
            ..IntegratorConfig::training(vec![1.0])
        };
        match integrate(decay, &[1.0], (0.0, 1.0), &short) {
            Err(Error::MaxSteps { last_state, .. }) => assert!(last_state[0] < 1.0),
            other => panic!("expected MaxSteps, got {other:?}"),
        }
    }

    #[test]
    fn closed_form_sensitivity() {
        let theta = 0.5;
        let cfg = IntegratorConfig {
            abs_tol: 1e-10,
            rel_tol: 1e-10,
            ..IntegratorConfig::training(vec![2.0])
        };
        let sol = integrate_with_sensitivity(
            |_, u| {
                Ok(RhsWithJacobians {
                    value: vec![theta * u[0]],
                    d_state: array![[theta]],
                    d_params: array![[u[0]]],
                })
            },
            &[1.0],
            Array2::zeros((1, 1)).view(),
            (0.0, 2.0),
            &cfg,
        )
        .unwrap();
        let exact = 2.0 * (theta * 2.0f64).exp();
        let got = sol.sensitivities[0][[0, 0]];
        assert!(((got - exact) / exact).abs() < 1e-6, "{got} vs {exact}");
    }

    #[test]
    fn parameter_free_field_has_zero_sensitivity() {
        let sol = integrate_with_sensitivity(
            |_, u| {
                Ok(RhsWithJacobians {
                    value: vec![-u[0]],
                    d_state: array![[-1.0]],
                    d_params: array![[0.0, 0.0]],
                })
            },
            &[1.0],
            Array2::zeros((1, 2)).view(),
            (0.0, 1.0),
            &IntegratorConfig::training(vec![0.5, 1.0]),
        )
        .unwrap();
        for s in &sol.sensitivities {
            assert!(s.iter().all(|&v| v == 0.0));
        }
    }
}
