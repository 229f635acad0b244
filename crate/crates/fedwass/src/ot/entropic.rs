//! Entropic solver: log-domain Sinkhorn iterations followed by a rounding
//! step that restores the marginals exactly (up to float addition error).

use ndarray::{Array1, Array2};

use crate::error::{input_err, Error, Result};
use crate::measure::WEIGHT_TOL;

use super::{CostMatrix, DualPotentials, OtSolution, TransportPlan};

const MAX_SWEEPS: usize = 10_000;
const MARGINAL_TOL: f64 = 1e-8;

/// Entropy-regularized OT with regularization strength `epsilon`.
pub fn solve_entropic(
    cost: &CostMatrix,
    a: &Array1<f64>,
    b: &Array1<f64>,
    epsilon: f64,
) -> Result<OtSolution> {
    let (n, m) = cost.entries.dim();
    if a.len() != n || b.len() != m {
        return input_err("solve_entropic: marginal sizes do not match cost matrix");
    }
    if (a.sum() - 1.0).abs() > WEIGHT_TOL || (b.sum() - 1.0).abs() > WEIGHT_TOL {
        return input_err("solve_entropic: marginals must each sum to 1");
    }
    if epsilon <= 0.0 {
        return input_err("solve_entropic: epsilon must be positive");
    }

    let log_a: Vec<f64> = a.iter().map(|&w| if w > 0.0 { w.ln() } else { f64::NEG_INFINITY }).collect();
    let log_b: Vec<f64> = b.iter().map(|&w| if w > 0.0 { w.ln() } else { f64::NEG_INFINITY }).collect();

    let mut f = Array1::<f64>::zeros(n);
    let mut g = Array1::<f64>::zeros(m);
    let mut converged = false;

    for _ in 0..MAX_SWEEPS {
        // f_i <- -eps * LSE_j[(g_j - C_ij)/eps + log b_j]
        for i in 0..n {
            let mut hi = f64::NEG_INFINITY;
            for j in 0..m {
                let t = (g[j] - cost.entries[[i, j]]) / epsilon + log_b[j];
                hi = hi.max(t);
            }
            let mut s = 0.0;
            for j in 0..m {
                let t = (g[j] - cost.entries[[i, j]]) / epsilon + log_b[j];
                s += (t - hi).exp();
            }
            f[i] = -epsilon * (hi + s.ln());
        }
        for j in 0..m {
            let mut hi = f64::NEG_INFINITY;
            for i in 0..n {
                let t = (f[i] - cost.entries[[i, j]]) / epsilon + log_a[i];
                hi = hi.max(t);
            }
            let mut s = 0.0;
            for i in 0..n {
                let t = (f[i] - cost.entries[[i, j]]) / epsilon + log_a[i];
                s += (t - hi).exp();
            }
            g[j] = -epsilon * (hi + s.ln());
        }
        if f.iter().chain(g.iter()).any(|x| !x.is_finite()) {
            return Err(Error::SolverFailure(
                "sinkhorn underflow: raise epsilon".into(),
            ));
        }
        // After a g-update, column marginals hold exactly; check the rows.
        let row_err = row_marginal_error(cost, a, b, &f, &g, epsilon);
        if row_err < MARGINAL_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        // Converged "enough" is still usable; only bail on non-finite values.
        let row_err = row_marginal_error(cost, a, b, &f, &g, epsilon);
        if !row_err.is_finite() {
            return Err(Error::SolverFailure(
                "sinkhorn failed to converge: raise epsilon".into(),
            ));
        }
    }

    let mut plan = Array2::<f64>::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            plan[[i, j]] =
                ((f[i] + g[j] - cost.entries[[i, j]]) / epsilon).exp() * a[i] * b[j];
        }
    }
    round_to_marginals(&mut plan, a, b);

    let transport_cost: f64 = plan
        .iter()
        .zip(cost.entries.iter())
        .map(|(&p, &c)| p * c)
        .sum();

    let shift: f64 = g.iter().zip(b.iter()).map(|(&x, &w)| x * w).sum();
    let f = Array1::from_iter(f.iter().map(|&x| x + shift));
    let g = Array1::from_iter(g.iter().map(|&x| x - shift));

    let distance = transport_cost.max(0.0).powf(1.0 / cost.power);
    Ok(OtSolution {
        plan: TransportPlan {
            coupling: plan,
            source_weights: a.clone(),
            target_weights: b.clone(),
        },
        potentials: DualPotentials { f, g },
        transport_cost,
        distance,
    })
}

fn row_marginal_error(
    cost: &CostMatrix,
    a: &Array1<f64>,
    b: &Array1<f64>,
    f: &Array1<f64>,
    g: &Array1<f64>,
    epsilon: f64,
) -> f64 {
    let (n, m) = cost.entries.dim();
    let mut err = 0.0f64;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..m {
            row += ((f[i] + g[j] - cost.entries[[i, j]]) / epsilon).exp() * a[i] * b[j];
        }
        err = err.max((row - a[i]).abs());
    }
    err
}

/// Scales rows then columns down to the prescribed marginals and spreads the
/// leftover mass as a rank-one correction, so both marginals hold exactly.
fn round_to_marginals(plan: &mut Array2<f64>, a: &Array1<f64>, b: &Array1<f64>) {
    let (n, m) = plan.dim();
    for i in 0..n {
        let row: f64 = plan.row(i).sum();
        if row > a[i] && row > 0.0 {
            let s = a[i] / row;
            for j in 0..m {
                plan[[i, j]] *= s;
            }
        }
    }
    for j in 0..m {
        let col: f64 = plan.column(j).sum();
        if col > b[j] && col > 0.0 {
            let s = b[j] / col;
            for i in 0..n {
                plan[[i, j]] *= s;
            }
        }
    }
    let mut res_a = Array1::<f64>::zeros(n);
    let mut res_b = Array1::<f64>::zeros(m);
    for i in 0..n {
        res_a[i] = (a[i] - plan.row(i).sum()).max(0.0);
    }
    for j in 0..m {
        res_b[j] = (b[j] - plan.column(j).sum()).max(0.0);
    }
    let total: f64 = res_a.sum();
    if total > 0.0 {
        for i in 0..n {
            for j in 0..m {
                plan[[i, j]] += res_a[i] * res_b[j] / total;
            }
        }
    }
}
