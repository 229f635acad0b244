//! Discrete optimal transport: cost matrices, exact and entropic solvers,
//! transport plans, dual potentials and p-Wasserstein distances.

mod entropic;
mod exact;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{input_err, Result};
use crate::measure::DiscreteMeasure;

pub use entropic::solve_entropic;
pub use exact::solve_exact;

/// Pairwise transport costs C_ij = d(x_i, y_j)^p for Euclidean d.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    pub entries: Array2<f64>,
    pub power: f64,
}

/// Primal coupling of one OT solve together with its marginals.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    pub coupling: Array2<f64>,
    pub source_weights: Array1<f64>,
    pub target_weights: Array1<f64>,
}

impl TransportPlan {
    /// Largest deviation of the coupling's marginals from the prescribed ones.
    pub fn marginal_error(&self) -> f64 {
        let row_err = self
            .coupling
            .rows()
            .into_iter()
            .zip(self.source_weights.iter())
            .map(|(row, &a)| (row.sum() - a).abs())
            .fold(0.0f64, f64::max);
        let col_err = self
            .coupling
            .columns()
            .into_iter()
            .zip(self.target_weights.iter())
            .map(|(col, &b)| (col.sum() - b).abs())
            .fold(0.0f64, f64::max);
        row_err.max(col_err)
    }
}

/// Kantorovich dual variables, same units as the cost.
#[derive(Debug, Clone)]
pub struct DualPotentials {
    pub f: Array1<f64>,
    pub g: Array1<f64>,
}

impl DualPotentials {
    /// Dual objective <f,a> + <g,b>.
    pub fn objective(&self, a: &Array1<f64>, b: &Array1<f64>) -> f64 {
        self.f.dot(a) + self.g.dot(b)
    }
}

/// The full output of one solve: plan, potentials, cost and distance.
#[derive(Debug, Clone)]
pub struct OtSolution {
    pub plan: TransportPlan,
    pub potentials: DualPotentials,
    /// <pi*, C>, the optimal transport cost (W_p to the p-th power).
    pub transport_cost: f64,
    /// transport_cost^(1/p).
    pub distance: f64,
}

/// Which solver produces the plan.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub enum Backend {
    #[default]
    Exact,
    Entropic { epsilon: f64 },
}

/// C_ij = ||x_i - y_j||_2^p.
pub fn cost_matrix(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, power: f64) -> Result<CostMatrix> {
    if x.nrows() == 0 || y.nrows() == 0 {
        return input_err("cost_matrix: empty point set");
    }
    if x.ncols() != y.ncols() {
        return input_err(format!(
            "cost_matrix: dimension mismatch ({} vs {})",
            x.ncols(),
            y.ncols()
        ));
    }
    if power < 1.0 {
        return input_err("cost_matrix: power must be >= 1");
    }
    let mut entries = Array2::zeros((x.nrows(), y.nrows()));
    for (i, xi) in x.rows().into_iter().enumerate() {
        for (j, yj) in y.rows().into_iter().enumerate() {
            let sq: f64 = xi
                .iter()
                .zip(yj.iter())
                .map(|(&u, &v)| (u - v) * (u - v))
                .sum();
            entries[[i, j]] = if power == 2.0 {
                sq
            } else {
                sq.sqrt().powf(power)
            };
        }
    }
    Ok(CostMatrix { entries, power })
}

/// p-Wasserstein distance between two measures with the chosen backend.
pub fn wasserstein(
    p: &DiscreteMeasure,
    q: &DiscreteMeasure,
    power: f64,
    backend: Backend,
) -> Result<OtSolution> {
    if p.dim() != q.dim() {
        return input_err(format!(
            "wasserstein: ambient dimensions differ ({} vs {})",
            p.dim(),
            q.dim()
        ));
    }
    let cost = cost_matrix(p.support(), q.support(), power)?;
    let a = p.weights().to_owned();
    let b = q.weights().to_owned();
    let mut sol = match backend {
        Backend::Exact => solve_exact(&cost, &a, &b)?,
        Backend::Entropic { epsilon } => solve_entropic(&cost, &a, &b, epsilon)?,
    };
    sol.distance = sol.transport_cost.max(0.0).powf(1.0 / power);
    Ok(sol)
}

/// Closed-form 1D oracle: sorted (monotone) matching of two uniform measures
/// of equal size. Kept independent of the simplex path so it can check it.
pub fn wasserstein_1d_sorted(p: &DiscreteMeasure, q: &DiscreteMeasure, power: f64) -> Result<f64> {
    if p.dim() != 1 || q.dim() != 1 {
        return input_err("wasserstein_1d_sorted: measures must be 1D");
    }
    if p.len() != q.len() {
        return input_err("wasserstein_1d_sorted: oracle requires equal sizes");
    }
    let uniform =
        |m: &DiscreteMeasure| m.weights().iter().all(|&w| (w - 1.0 / m.len() as f64).abs() <= 1e-12);
    if !uniform(p) || !uniform(q) {
        return input_err("wasserstein_1d_sorted: oracle requires uniform weights");
    }
    let mut xs: Vec<f64> = p.support().column(0).to_vec();
    let mut ys: Vec<f64> = q.support().column(0).to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let cost: f64 = xs
        .iter()
        .zip(ys.iter())
        .map(|(&x, &y)| (x - y).abs().powf(power) / n)
        .sum();
    Ok(cost.max(0.0).powf(1.0 / power))
}
