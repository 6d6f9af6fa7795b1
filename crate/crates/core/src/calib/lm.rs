//! Levenberg-Marquardt for small, fixed-size parameter vectors.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop once an accepted (or rejected) step is shorter than this.
    pub step_tolerance: f64,
    /// Stop once an accepted step lowers the objective by less than this fraction
    /// of its previous value.
    pub decrease_tolerance: f64,
    pub initial_damping: f64,
    /// Relative step for the central-difference Jacobian.
    pub diff_step: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iterations: 200,
            step_tolerance: 1e-10,
            decrease_tolerance: 1e-12,
            initial_damping: 1e-3,
            diff_step: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    StepSize,
    ObjectiveDecrease,
    ZeroResidual,
    IterationLimit,
    DampingLimit,
}

#[derive(Debug, Clone)]
pub struct LmOutcome<const P: usize> {
    pub params: [f64; P],
    /// Sum of squared residuals at `params`.
    pub cost: f64,
    pub iterations: usize,
    pub stop: StopReason,
    /// Objective at the start and after every accepted step.
    pub history: Vec<f64>,
}

impl<const P: usize> LmOutcome<P> {
    pub fn converged(&self) -> bool {
        matches!(
            self.stop,
            StopReason::StepSize | StopReason::ObjectiveDecrease | StopReason::ZeroResidual
        )
    }
}

fn cost_of(r: &[f64]) -> f64 {
    let c: f64 = r.iter().map(|v| v * v).sum();
    if c.is_finite() {
        c
    } else {
        f64::INFINITY
    }
}

/// Solve `a x = b` by Gaussian elimination with partial pivoting.
fn solve<const P: usize>(mut a: [[f64; P]; P], mut b: [f64; P]) -> Option<[f64; P]> {
    for col in 0..P {
        let pivot = (col..P).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..P {
            let f = a[row][col] / a[col][col];
            for k in col..P {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; P];
    for row in (0..P).rev() {
        let s: f64 = (row + 1..P).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Minimize `sum r_i(x)^2` where `residuals(x, r)` fills `r` (length `m`).
pub fn levenberg_marquardt<const P: usize, F>(
    residuals: F,
    m: usize,
    init: [f64; P],
    opts: &LmOptions,
) -> LmOutcome<P>
where
    F: Fn(&[f64; P], &mut [f64]),
{
    let mut x = init;
    let mut r = vec![0.0; m];
    residuals(&x, &mut r);
    let mut cost = cost_of(&r);
    let mut history = vec![cost];
    let mut lambda = opts.initial_damping;
    let mut nu = 2.0;
    let mut jac = vec![[0.0; P]; m];
    let mut r_plus = vec![0.0; m];
    let mut r_minus = vec![0.0; m];
    let mut r_new = vec![0.0; m];
    let mut iterations = 0;
    let mut stop = StopReason::IterationLimit;

    'outer: while iterations < opts.max_iterations {
        if cost == 0.0 {
            stop = StopReason::ZeroResidual;
            break;
        }
        iterations += 1;
        for j in 0..P {
            let h = opts.diff_step * x[j].abs().max(1.0);
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            residuals(&xp, &mut r_plus);
            residuals(&xm, &mut r_minus);
            for i in 0..m {
                jac[i][j] = (r_plus[i] - r_minus[i]) / (2.0 * h);
            }
        }
        let mut a = [[0.0; P]; P];
        let mut g = [0.0; P];
        for i in 0..m {
            for j in 0..P {
                g[j] += jac[i][j] * r[i];
                for k in j..P {
                    a[j][k] += jac[i][j] * jac[i][k];
                }
            }
        }
        for j in 0..P {
            for k in 0..j {
                a[j][k] = a[k][j];
            }
        }
        let scale = (0..P).map(|j| a[j][j]).fold(0.0, f64::max).max(1e-300);

        loop {
            let mut damped = a;
            let mut diag = [0.0; P];
            for (j, row) in damped.iter_mut().enumerate() {
                diag[j] = a[j][j].max(1e-12 * scale);
                row[j] += lambda * diag[j];
            }
            let Some(delta) = solve(damped, g.map(|v| -v)) else {
                lambda *= nu;
                nu *= 2.0;
                if lambda > 1e16 {
                    stop = StopReason::DampingLimit;
                    break 'outer;
                }
                continue;
            };
            let step = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
            let mut trial = x;
            for j in 0..P {
                trial[j] += delta[j];
            }
            residuals(&trial, &mut r_new);
            let trial_cost = cost_of(&r_new);
            // Decrease predicted by the local quadratic model.
            let predicted: f64 = (0..P).map(|j| delta[j] * (lambda * diag[j] * delta[j] - g[j])).sum();
            let rho = (cost - trial_cost) / predicted.max(f64::MIN_POSITIVE);
            if trial_cost < cost {
                let decrease = cost - trial_cost;
                x = trial;
                std::mem::swap(&mut r, &mut r_new);
                cost = trial_cost;
                history.push(cost);
                lambda = (lambda * (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0)).max(1e-15);
                nu = 2.0;
                if step < opts.step_tolerance {
                    stop = StopReason::StepSize;
                    break 'outer;
                }
                if decrease < opts.decrease_tolerance * (cost + decrease) {
                    stop = StopReason::ObjectiveDecrease;
                    break 'outer;
                }
                break;
            }
            lambda *= nu;
            nu *= 2.0;
            if step < opts.step_tolerance {
                stop = StopReason::StepSize;
                break 'outer;
            }
            if lambda > 1e16 {
                stop = StopReason::DampingLimit;
                break 'outer;
            }
        }
    }
    if cost == 0.0 {
        stop = StopReason::ZeroResidual;
    }

    LmOutcome {
        params: x,
        cost,
        iterations,
        stop,
        history,
    }
}
