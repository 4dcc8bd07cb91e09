//! SQUAREM acceleration of a fixed-point iteration (first-order scheme).

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SquaremOptions {
    /// Stop when the Euclidean norm of the parameter change falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// `false` runs the plain fixed-point iteration.
    pub accelerate: bool,
    /// Initial upper bound on the step length `|alpha|`.
    pub step_max0: f64,
    /// Factor by which the step bound grows when it is hit.
    pub mstep: f64,
    /// An extrapolated point is rejected if its objective falls more than
    /// this below the objective at the start of the cycle.
    pub objective_slack: f64,
}

impl Default for SquaremOptions {
    fn default() -> Self {
        SquaremOptions {
            tol: 1e-3,
            max_iter: 100,
            accelerate: true,
            step_max0: 1.0,
            mstep: 4.0,
            objective_slack: 1.0,
        }
    }
}

/// One cycle of the outer iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    /// Norm of the parameter change over the cycle.
    pub change: f64,
    /// Objective at the start of the cycle.
    pub log_likelihood: f64,
    /// The extrapolated point was accepted.
    pub extrapolated: bool,
}

#[derive(Clone, Debug)]
pub struct SquaremOutcome {
    pub theta: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<IterationRecord>,
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Iterates `step`, which maps `theta` to the next iterate and also returns
/// the objective at `theta`.
///
/// With acceleration, each cycle takes two plain steps `theta1 = F(theta)`,
/// `theta2 = F(theta1)`, forms `r = theta1 - theta`,
/// `w = theta2 - theta1 - r`, `alpha = -|r| / |w|` clamped to
/// `[-step_max, -1]`, and moves to `F(theta - 2 alpha r + alpha^2 w)`. If that
/// evaluation fails or the objective drops by more than the slack, the cycle
/// ends at `theta2` instead.
pub fn squarem<F>(theta0: Vec<f64>, mut step: F, opts: &SquaremOptions) -> Result<SquaremOutcome>
where
    F: FnMut(&[f64]) -> Result<(Vec<f64>, f64)>,
{
    let mut theta = theta0;
    let mut trace = Vec::new();
    let mut step_max = opts.step_max0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let (theta1, ll0) = step(&theta)?;
        if !opts.accelerate {
            let change = norm(&sub(&theta1, &theta));
            trace.push(IterationRecord {
                change,
                log_likelihood: ll0,
                extrapolated: false,
            });
            theta = theta1;
            if change < opts.tol {
                converged = true;
                break;
            }
            continue;
        }
        let (theta2, _) = step(&theta1)?;
        let r = sub(&theta1, &theta);
        let w: Vec<f64> = theta2.iter().zip(&theta1).zip(&r).map(|((a, b), c)| a - b - c).collect();
        let (nr, nw) = (norm(&r), norm(&w));
        let mut next = theta2.clone();
        let mut extrapolated = false;
        if nw > 0.0 && nr > 0.0 {
            let alpha = (nr / nw).clamp(1.0, step_max);
            let cand: Vec<f64> = theta
                .iter()
                .zip(&r)
                .zip(&w)
                .map(|((t, r), w)| t + 2.0 * alpha * r + alpha * alpha * w)
                .collect();
            let accepted = cand.iter().all(|x| x.is_finite())
                && match step(&cand) {
                    Ok((theta3, ll)) if ll.is_finite() && ll >= ll0 - opts.objective_slack => {
                        next = theta3;
                        true
                    }
                    _ => false,
                };
            if accepted {
                extrapolated = alpha > 1.0;
                if alpha == step_max {
                    step_max *= opts.mstep;
                }
            } else {
                step_max = opts.step_max0.max(step_max / opts.mstep);
            }
        }
        let change = norm(&sub(&next, &theta));
        trace.push(IterationRecord {
            change,
            log_likelihood: ll0,
            extrapolated,
        });
        theta = next;
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    Ok(SquaremOutcome {
        theta,
        iterations,
        converged,
        trace,
    })
}
