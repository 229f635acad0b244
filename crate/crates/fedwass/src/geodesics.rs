//! Displacement interpolation along Wasserstein geodesics: barycentric
//! projections, interpolating measures, and geodesic midpoints.
//!
//! An interpolating measure inherits the first argument's atom count and
//! weights; atoms move along the straight lines of the optimal plan. When the
//! plan splits an atom's mass, the atom is projected onto the mass-weighted
//! mean of its targets instead of being split, which keeps the support size
//! bounded across iterations at the price of a small contraction.

use ndarray::Array2;

use crate::error::{input_err, Result};
use crate::measure::DiscreteMeasure;
use crate::ot::{wasserstein, Backend, TransportPlan};

/// Geodesic coordinate and support-size hyperparameters of the protocol.
#[derive(Debug, Clone, Copy)]
pub struct InterpolationParams {
    pub t: f64,
    pub support_size: usize,
}

impl InterpolationParams {
    pub fn new(t: f64, support_size: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&t) {
            return input_err("interpolation parameter t must lie in [0,1]");
        }
        if support_size == 0 {
            return input_err("support size must be >= 1");
        }
        Ok(Self { t, support_size })
    }
}

/// Triangle-inequality audit of a candidate interpolating measure.
#[derive(Debug, Clone, Copy)]
pub struct GeodesicCheck {
    /// W(P, Q)
    pub lhs: f64,
    /// W(P, gamma) + W(gamma, Q)
    pub rhs: f64,
    /// rhs - lhs; nonnegative up to solver tolerance.
    pub gap: f64,
}

/// Maps each source atom to the mass-weighted mean of its transport targets:
/// row j = (sum_k pi_jk z_k) / a_j.
pub fn barycentric_projection(plan: &TransportPlan, z: ndarray::ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let (n, m) = plan.coupling.dim();
    if m != z.nrows() {
        return input_err(format!(
            "barycentric_projection: plan has {m} columns but {} target rows given",
            z.nrows()
        ));
    }
    let d = z.ncols();
    let mut out = Array2::<f64>::zeros((n, d));
    for j in 0..n {
        let mass = plan.source_weights[j];
        if mass <= 0.0 {
            return input_err(format!(
                "barycentric_projection: source atom {j} carries no mass"
            ));
        }
        for k in 0..m {
            let w = plan.coupling[[j, k]];
            if w != 0.0 {
                for c in 0..d {
                    out[[j, c]] += w * z[[k, c]];
                }
            }
        }
        for c in 0..d {
            out[[j, c]] /= mass;
        }
    }
    Ok(out)
}

/// The interpolating measure at geodesic coordinate `t` between `p` and `q`:
/// atom j sits at (1-t) x_j + t (barycentric projection of x_j), with p's
/// weights.
pub fn interpolate(
    p: &DiscreteMeasure,
    q: &DiscreteMeasure,
    t: f64,
    power: f64,
    backend: Backend,
) -> Result<DiscreteMeasure> {
    if !(0.0..=1.0).contains(&t) {
        return input_err("interpolate: t must lie in [0,1]");
    }
    if p.dim() != q.dim() {
        return input_err("interpolate: dimension mismatch");
    }
    if t == 0.0 {
        return Ok(p.clone());
    }
    let sol = wasserstein(p, q, power, backend)?;
    let proj = barycentric_projection(&sol.plan, q.support())?;
    let mut support = p.support().to_owned();
    for ((j, c), val) in support.indexed_iter_mut() {
        *val = (1.0 - t) * *val + t * proj[[j, c]];
    }
    DiscreteMeasure::new(support, p.weights().to_owned())
}

/// Audits how tightly `gamma` sits on the geodesic between `p` and `q`.
pub fn geodesic_gap(
    p: &DiscreteMeasure,
    q: &DiscreteMeasure,
    gamma: &DiscreteMeasure,
    power: f64,
    backend: Backend,
) -> Result<GeodesicCheck> {
    let lhs = wasserstein(p, q, power, backend)?.distance;
    let rhs = wasserstein(p, gamma, power, backend)?.distance
        + wasserstein(gamma, q, power, backend)?.distance;
    Ok(GeodesicCheck {
        lhs,
        rhs,
        gap: rhs - lhs,
    })
}

/// The geodesic midpoint, used as the two-term argmin update of the protocol.
pub fn geodesic_midpoint(
    eta_p: &DiscreteMeasure,
    eta_q: &DiscreteMeasure,
    power: f64,
    backend: Backend,
) -> Result<DiscreteMeasure> {
    interpolate(eta_p, eta_q, 0.5, power, backend)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::Backend;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_measure(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DiscreteMeasure {
        let support = Array2::from_shape_fn((n, d), |_| rng.gen_range(-5.0..5.0));
        DiscreteMeasure::uniform(support).unwrap()
    }

    #[test]
    fn identity_plan_returns_targets() {
        let z = array![[1.0, 2.0], [3.0, 4.0]];
        let plan = TransportPlan {
            coupling: array![[0.5, 0.0], [0.0, 0.5]],
            source_weights: Array1::from_elem(2, 0.5),
            target_weights: Array1::from_elem(2, 0.5),
        };
        let proj = barycentric_projection(&plan, z.view()).unwrap();
        assert_abs_diff_eq!(proj, z, epsilon = 1e-12);
    }

    #[test]
    fn split_plan_projects_to_mean() {
        let plan = TransportPlan {
            coupling: array![[0.5, 0.5]],
            source_weights: array![1.0],
            target_weights: array![0.5, 0.5],
        };
        let z = array![[0.0], [2.0]];
        let proj = barycentric_projection(&plan, z.view()).unwrap();
        assert_abs_diff_eq!(proj[[0, 0]], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn projection_rows_stay_in_convex_hull() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_measure(&mut rng, 5, 2);
        let q = random_measure(&mut rng, 5, 2);
        let sol = wasserstein(&p, &q, 2.0, Backend::Exact).unwrap();
        let proj = barycentric_projection(&sol.plan, q.support()).unwrap();
        let (min, max) = q.support().iter().fold(
            (f64::INFINITY, f64::NEG_INFINITY),
            |(lo, hi), &v| (lo.min(v), hi.max(v)),
        );
        for &v in proj.iter() {
            assert!(v >= min - 1e-9 && v <= max + 1e-9);
        }
    }

    #[test]
    fn zero_mass_source_row_errors() {
        let plan = TransportPlan {
            coupling: array![[1.0], [0.0]],
            source_weights: array![1.0, 0.0],
            target_weights: array![1.0],
        };
        let z = array![[0.0]];
        assert!(barycentric_projection(&plan, z.view()).is_err());
    }

    #[test]
    fn endpoints() {
        let p = DiscreteMeasure::dirac(&[0.0]).unwrap();
        let q = DiscreteMeasure::dirac(&[2.0]).unwrap();
        let at0 = interpolate(&p, &q, 0.0, 2.0, Backend::Exact).unwrap();
        assert_eq!(at0, p);
        let at1 = interpolate(&p, &q, 1.0, 2.0, Backend::Exact).unwrap();
        assert_abs_diff_eq!(at1.support()[[0, 0]], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn dirac_midpoint_splits_distance() {
        let p = DiscreteMeasure::dirac(&[0.0]).unwrap();
        let q = DiscreteMeasure::dirac(&[2.0]).unwrap();
        let mid = interpolate(&p, &q, 0.5, 2.0, Backend::Exact).unwrap();
        assert_abs_diff_eq!(mid.support()[[0, 0]], 1.0, epsilon = 1e-12);
        let check = geodesic_gap(&p, &q, &mid, 2.0, Backend::Exact).unwrap();
        assert_abs_diff_eq!(check.lhs, 2.0, epsilon = 1e-9);
        assert!(check.gap.abs() <= 1e-9);
    }

    #[test]
    fn gamma_equal_p_has_zero_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = random_measure(&mut rng, 8, 2);
        let q = random_measure(&mut rng, 8, 2);
        let check = geodesic_gap(&p, &q, &p, 2.0, Backend::Exact).unwrap();
        assert!(check.gap.abs() <= 1e-9);
    }

    #[test]
    fn unrelated_gamma_has_positive_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = random_measure(&mut rng, 10, 2);
        let q = random_measure(&mut rng, 10, 2);
        let far = Array2::from_shape_fn((10, 2), |_| rng.gen_range(40.0..50.0));
        let gamma = DiscreteMeasure::uniform(far).unwrap();
        let check = geodesic_gap(&p, &q, &gamma, 2.0, Backend::Exact).unwrap();
        assert!(check.gap > 1.0);
    }

    #[test]
    fn midpoint_of_equal_measures_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let p = random_measure(&mut rng, 6, 2);
        let mid = geodesic_midpoint(&p, &p, 2.0, Backend::Exact).unwrap();
        let d = wasserstein(&mid, &p, 2.0, Backend::Exact).unwrap().distance;
        assert!(d <= 1e-9);
    }

    #[test]
    fn midpoint_objective_matches_distance_on_1d_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let p = random_measure(&mut rng, 50, 1);
        let q = random_measure(&mut rng, 50, 1);
        let mid = geodesic_midpoint(&p, &q, 2.0, Backend::Exact).unwrap();
        let w = wasserstein(&p, &q, 2.0, Backend::Exact).unwrap().distance;
        let two_term = wasserstein(&p, &mid, 2.0, Backend::Exact).unwrap().distance
            + wasserstein(&mid, &q, 2.0, Backend::Exact).unwrap().distance;
        assert!((two_term - w).abs() <= 1e-6, "two_term {two_term} vs {w}");
    }

    #[test]
    fn constant_speed_on_bijective_fixture() {
        // equal-size 1D uniform measures have a bijective optimal plan
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let p = random_measure(&mut rng, 20, 1);
        let q = random_measure(&mut rng, 20, 1);
        let w = wasserstein(&p, &q, 2.0, Backend::Exact).unwrap().distance;
        for &t in &[0.25, 0.5, 0.75] {
            let g = interpolate(&p, &q, t, 2.0, Backend::Exact).unwrap();
            let wt = wasserstein(&p, &g, 2.0, Backend::Exact).unwrap().distance;
            assert!((wt - t * w).abs() <= 1e-6, "t={t}: {wt} vs {}", t * w);
        }
    }

    #[test]
    fn interpolation_keeps_atom_count_and_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let p = random_measure(&mut rng, 7, 3);
        let q = random_measure(&mut rng, 12, 3);
        let g = interpolate(&p, &q, 0.3, 2.0, Backend::Exact).unwrap();
        assert_eq!(g.len(), 7);
        assert_abs_diff_eq!(
            g.weights().to_owned(),
            p.weights().to_owned(),
            epsilon = 0.0
        );
    }
}
