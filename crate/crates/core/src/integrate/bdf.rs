use nalgebra::{DMatrix, DVector};

use super::{rms_norm, DenseSegment, Formula, IntegratorConfig, OdeSystem};
use crate::error::{Error, Result};
use crate::linalg::LinearSolver;

const MAX_ORDER: usize = 5;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;
const NDF_KAPPA: [f64; MAX_ORDER + 1] = [0.0, -0.1850, -1.0 / 9.0, -0.0823, -0.0415, 0.0];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub newton_failures: usize,
    pub rhs_evals: usize,
    pub jac_evals: usize,
    pub factorizations: usize,
    /// Accepted steps per order (index 1..=5).
    pub order_counts: [usize; MAX_ORDER + 1],
}

/// Variable-order backward-difference stepper.
///
/// `diffs[k]` holds the k-th backward difference of the interpolating
/// polynomial at the current step size, so step-size changes rescale `diffs`
/// instead of re-starting.
pub struct Bdf<'s, S: OdeSystem + ?Sized> {
    sys: &'s S,
    cfg: IntegratorConfig,
    t: f64,
    t_bound: f64,
    y: DVector<f64>,
    h_abs: f64,
    order: usize,
    diffs: Vec<DVector<f64>>,
    n_equal_steps: usize,
    jac: DMatrix<f64>,
    lu: Option<LinearSolver>,
    newton_tol: f64,
    gamma: [f64; MAX_ORDER + 1],
    alpha: [f64; MAX_ORDER + 1],
    error_const: [f64; MAX_ORDER + 2],
    stats: StepStats,
}

impl<'s, S: OdeSystem + ?Sized> Bdf<'s, S> {
    pub fn new(
        sys: &'s S,
        t0: f64,
        y0: DVector<f64>,
        t_bound: f64,
        cfg: IntegratorConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let n = sys.dim();
        if y0.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: y0.len(),
            });
        }
        if !y0.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteState("initial state".into()));
        }
        if !(t_bound > t0) {
            return Err(Error::InvalidArgument(format!(
                "t_bound {t_bound} must exceed t0 {t0}"
            )));
        }
        let kappa = match cfg.formula {
            Formula::Bdf => [0.0; MAX_ORDER + 1],
            Formula::Ndf => NDF_KAPPA,
        };
        let mut gamma = [0.0; MAX_ORDER + 1];
        for k in 1..=MAX_ORDER {
            gamma[k] = gamma[k - 1] + 1.0 / k as f64;
        }
        let mut alpha = [0.0; MAX_ORDER + 1];
        let mut error_const = [0.0; MAX_ORDER + 2];
        for k in 0..=MAX_ORDER {
            alpha[k] = (1.0 - kappa[k]) * gamma[k];
            error_const[k] = kappa[k] * gamma[k] + 1.0 / (k + 1) as f64;
        }
        error_const[MAX_ORDER + 1] = 1.0 / (MAX_ORDER + 2) as f64;

        let mut stats = StepStats::default();
        let jac = sys.jacobian(t0, &y0)?;
        stats.jac_evals += 1;
        // y'(t0) = M^{-1} R(t0, y0)
        let mass_lu = LinearSolver::factor(sys.mass(), &jac, 0.0, sys.band_structure())?;
        stats.factorizations += 1;
        let mut r0 = DVector::zeros(n);
        sys.rhs(t0, &y0, &mut r0)?;
        stats.rhs_evals += 1;
        let f0 = mass_lu.solve(&r0);

        let h_abs = match cfg.fixed_step.or(cfg.first_step) {
            Some(h) => h.min(t_bound - t0),
            None => {
                let h = initial_step(sys, &mass_lu, t0, &y0, &f0, t_bound, &cfg, &mut stats)?;
                h.min(cfg.max_step)
            }
        };

        let mut diffs = vec![DVector::zeros(n); MAX_ORDER + 3];
        diffs[0] = y0.clone();
        diffs[1] = &f0 * h_abs;
        let newton_tol = cfg.effective_newton_tol();
        Ok(Self {
            sys,
            cfg,
            t: t0,
            t_bound,
            y: y0,
            h_abs,
            order: 1,
            diffs,
            n_equal_steps: 0,
            jac,
            lu: None,
            newton_tol,
            gamma,
            alpha,
            error_const,
            stats,
        })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn step_size(&self) -> f64 {
        self.h_abs
    }

    pub fn stats(&self) -> &StepStats {
        &self.stats
    }

    pub fn system(&self) -> &'s S {
        self.sys
    }

    /// Takes one accepted step and returns its dense-output segment.
    pub fn step(&mut self) -> Result<DenseSegment> {
        if self.t >= self.t_bound {
            return Err(Error::InvalidArgument(
                "integration already finished".into(),
            ));
        }
        if self.stats.accepted >= self.cfg.max_steps {
            return Err(Error::MaxStepsExceeded(self.cfg.max_steps));
        }
        let t = self.t;
        let fixed = self.cfg.fixed_step.is_some();
        let min_step = 10.0 * (next_up(t.abs()) - t.abs());
        let mut h_abs = self.h_abs;
        if h_abs > self.cfg.max_step {
            let factor = self.cfg.max_step / h_abs;
            h_abs = self.cfg.max_step;
            change_diffs(&mut self.diffs, self.order, factor);
            self.n_equal_steps = 0;
            self.lu = None;
        } else if h_abs < min_step {
            let factor = min_step / h_abs;
            h_abs = min_step;
            change_diffs(&mut self.diffs, self.order, factor);
            self.n_equal_steps = 0;
            self.lu = None;
        }
        let order = self.order;
        let mut jac_current = false;

        let (t_new, y_new, d, error_norm, safety) = loop {
            if h_abs < min_step {
                return Err(Error::IntegrationFailure {
                    t,
                    reason: format!("step size {h_abs:e} below the floor"),
                });
            }
            let mut t_new = t + h_abs;
            if t_new >= self.t_bound || (self.t_bound - t_new) < min_step {
                t_new = self.t_bound;
                change_diffs(&mut self.diffs, order, (t_new - t) / h_abs);
                self.n_equal_steps = 0;
                self.lu = None;
            }
            let h = t_new - t;
            h_abs = h;

            let mut y_predict = self.diffs[0].clone();
            for k in 1..=order {
                y_predict += &self.diffs[k];
            }
            let scale = self.scale(&y_predict);
            let mut psi = DVector::zeros(y_predict.len());
            for k in 1..=order {
                psi.axpy(self.gamma[k] / self.alpha[order], &self.diffs[k], 1.0);
            }
            let c = h / self.alpha[order];

            let mut outcome;
            loop {
                if self.lu.is_none() {
                    self.lu = Some(LinearSolver::factor(
                        self.sys.mass(),
                        &self.jac,
                        c,
                        self.sys.band_structure(),
                    )?);
                    self.stats.factorizations += 1;
                }
                outcome = self.newton(t_new, &y_predict, c, &psi, &scale)?;
                if outcome.converged || jac_current {
                    break;
                }
                self.jac = self.sys.jacobian(t_new, &y_predict)?;
                self.stats.jac_evals += 1;
                self.lu = None;
                jac_current = true;
            }

            if !outcome.converged {
                self.stats.newton_failures += 1;
                if fixed {
                    return Err(Error::IntegrationFailure {
                        t,
                        reason: "Newton iteration diverged at fixed step size".into(),
                    });
                }
                h_abs *= 0.5;
                change_diffs(&mut self.diffs, order, 0.5);
                self.n_equal_steps = 0;
                self.lu = None;
                continue;
            }

            let newton_max = self.cfg.newton_max_iters as f64;
            let safety =
                0.9 * (2.0 * newton_max + 1.0) / (2.0 * newton_max + outcome.iterations as f64);
            let scale = self.scale(&outcome.y);
            let err = &outcome.d * self.error_const[order];
            let error_norm = rms_norm(&err, &scale);
            if error_norm > 1.0 && !fixed {
                self.stats.rejected += 1;
                let factor = MIN_FACTOR.max(safety * error_norm.powf(-1.0 / (order + 1) as f64));
                h_abs *= factor;
                change_diffs(&mut self.diffs, order, factor);
                self.n_equal_steps = 0;
                continue;
            }
            break (t_new, outcome.y, outcome.d, error_norm, safety);
        };

        self.stats.accepted += 1;
        self.stats.order_counts[order] += 1;
        self.n_equal_steps += 1;
        let t_old = self.t;
        self.t = t_new;
        self.y = y_new;
        self.h_abs = h_abs;

        // diffs[order+1] held the (order+1)-th difference of the previous
        // polynomial and d is the new one, so the update telescopes down.
        self.diffs[order + 2] = &d - &self.diffs[order + 1];
        self.diffs[order + 1] = d;
        for i in (0..=order).rev() {
            let next = self.diffs[i + 1].clone();
            self.diffs[i] += next;
        }
        // Exact end state, independent of the difference-table roundoff.
        self.diffs[0].copy_from(&self.y);
        let segment = DenseSegment::new(t_old, t_new, h_abs, self.diffs[..=order].to_vec());

        if self.n_equal_steps < order + 1 {
            return Ok(segment);
        }

        if fixed {
            if order < self.cfg.max_order {
                self.order = order + 1;
                self.n_equal_steps = 0;
            }
            return Ok(segment);
        }

        let scale = self.scale(&self.y);
        let error_m_norm = if order > 1 {
            rms_norm(&(&self.diffs[order] * self.error_const[order - 1]), &scale)
        } else {
            f64::INFINITY
        };
        let error_p_norm = if order < self.cfg.max_order {
            rms_norm(
                &(&self.diffs[order + 2] * self.error_const[order + 1]),
                &scale,
            )
        } else {
            f64::INFINITY
        };
        let norms = [error_m_norm, error_norm, error_p_norm];
        let mut best = 1;
        let mut best_factor = f64::NEG_INFINITY;
        for (i, &e) in norms.iter().enumerate() {
            let f = if e == 0.0 {
                f64::INFINITY
            } else {
                e.powf(-1.0 / (order + i) as f64)
            };
            if f > best_factor {
                best_factor = f;
                best = i;
            }
        }
        let new_order = order + best - 1;
        self.order = new_order;
        let factor = MAX_FACTOR.min(safety * best_factor);
        self.h_abs *= factor;
        change_diffs(&mut self.diffs, new_order, factor);
        self.n_equal_steps = 0;
        self.lu = None;
        Ok(segment)
    }

    fn scale(&self, y: &DVector<f64>) -> DVector<f64> {
        y.map(|v| self.cfg.atol + self.cfg.rtol * v.abs())
    }

    fn newton(
        &mut self,
        t_new: f64,
        y_predict: &DVector<f64>,
        c: f64,
        psi: &DVector<f64>,
        scale: &DVector<f64>,
    ) -> Result<NewtonOutcome> {
        let n = y_predict.len();
        let lu = self.lu.as_ref().expect("factorized before Newton");
        let mut d = DVector::zeros(n);
        let mut y = y_predict.clone();
        let mut f = DVector::zeros(n);
        let mut dy_norm_old: Option<f64> = None;
        let max_iter = self.cfg.newton_max_iters;
        let mut converged = false;
        let mut k = 0;
        while k < max_iter {
            self.stats.rhs_evals += 1;
            match self.sys.rhs(t_new, &y, &mut f) {
                Ok(()) => {}
                Err(Error::NonFiniteState(_)) => break,
                Err(e) => return Err(e),
            }
            if !f.iter().all(|v| v.is_finite()) {
                break;
            }
            let mut b = &f * c;
            b -= self.sys.mass_mul(&(psi + &d));
            let dy = lu.solve(&b);
            let dy_norm = rms_norm(&dy, scale);
            let rate = dy_norm_old.map(|old| dy_norm / old);
            if let Some(rate) = rate {
                if rate >= 1.0
                    || rate.powi((max_iter - k) as i32) / (1.0 - rate) * dy_norm > self.newton_tol
                {
                    break;
                }
            }
            y += &dy;
            d += &dy;
            if dy_norm == 0.0 || rate.is_some_and(|r| r / (1.0 - r) * dy_norm < self.newton_tol) {
                converged = true;
                k += 1;
                break;
            }
            dy_norm_old = Some(dy_norm);
            k += 1;
        }
        Ok(NewtonOutcome {
            converged,
            iterations: k.max(1),
            y,
            d,
        })
    }
}

struct NewtonOutcome {
    converged: bool,
    iterations: usize,
    y: DVector<f64>,
    d: DVector<f64>,
}

fn next_up(x: f64) -> f64 {
    if x.is_nan() || x == f64::INFINITY {
        return x;
    }
    if x == 0.0 {
        return f64::from_bits(1);
    }
    f64::from_bits(x.to_bits() + 1)
}

/// `R` of the difference-table rescaling for a step-size ratio `factor`.
fn rescale_matrix(order: usize, factor: f64) -> DMatrix<f64> {
    let n = order + 1;
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        m[(0, j)] = 1.0;
    }
    for i in 1..n {
        for j in 1..n {
            m[(i, j)] = (i as f64 - 1.0 - factor * j as f64) / i as f64;
        }
    }
    // Cumulative product down each column.
    for i in 1..n {
        for j in 0..n {
            m[(i, j)] *= m[(i - 1, j)];
        }
    }
    m
}

/// Re-expresses the backward differences for a step size scaled by `factor`.
pub(crate) fn change_diffs(diffs: &mut [DVector<f64>], order: usize, factor: f64) {
    let r = rescale_matrix(order, factor);
    let u = rescale_matrix(order, 1.0);
    let ru = r * u;
    let old: Vec<DVector<f64>> = diffs[..=order].to_vec();
    for (i, slot) in diffs.iter_mut().take(order + 1).enumerate() {
        slot.fill(0.0);
        for (k, dk) in old.iter().enumerate() {
            let w = ru[(k, i)];
            if w != 0.0 {
                slot.axpy(w, dk, 1.0);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn initial_step<S: OdeSystem + ?Sized>(
    sys: &S,
    mass_lu: &LinearSolver,
    t0: f64,
    y0: &DVector<f64>,
    f0: &DVector<f64>,
    t_bound: f64,
    cfg: &IntegratorConfig,
    stats: &mut StepStats,
) -> Result<f64> {
    let interval = t_bound - t0;
    let scale = y0.map(|v| cfg.atol + cfg.rtol * v.abs());
    let d0 = rms_norm(y0, &scale);
    let d1 = rms_norm(f0, &scale);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    }
    .min(interval);
    let y1 = y0 + f0 * h0;
    let mut r1 = DVector::zeros(y0.len());
    sys.rhs(t0 + h0, &y1, &mut r1)?;
    stats.rhs_evals += 1;
    let f1 = mass_lu.solve(&r1);
    let d2 = rms_norm(&(f1 - f0), &scale) / h0;
    let h1 = if d1 <= 1e-15 && d2 <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.5)
    };
    Ok((100.0 * h0).min(h1).min(interval))
}
