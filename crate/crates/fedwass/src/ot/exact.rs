//! Exact solver: a transportation simplex (network simplex on the dense
//! bipartite graph) that returns a basic optimal plan together with exact
//! dual potentials.
//!
//! Entering arcs come from candidate-list pricing: a full sweep over the
//! reduced costs collects the most promising arcs, and later pivots pop from
//! that list (revalidating against the current duals) instead of re-sweeping.
//! After a run of degenerate pivots the solver switches to Bland's rule
//! (first negative reduced cost in index order) until a non-degenerate pivot
//! is made, which breaks any cycle while keeping the fast rule on
//! non-degenerate stretches.

use ndarray::{Array1, Array2};

use crate::error::{input_err, Error, Result};
use crate::measure::WEIGHT_TOL;

use super::{CostMatrix, DualPotentials, OtSolution, TransportPlan};

/// Solves min <pi, C> s.t. pi 1 = a, pi^T 1 = b, pi >= 0.
pub fn solve_exact(cost: &CostMatrix, a: &Array1<f64>, b: &Array1<f64>) -> Result<OtSolution> {
    let (n, m) = cost.entries.dim();
    if a.len() != n || b.len() != m {
        return input_err(format!(
            "solve_exact: cost is {n}x{m} but marginals have {} and {} entries",
            a.len(),
            b.len()
        ));
    }
    if (a.sum() - 1.0).abs() > WEIGHT_TOL || (b.sum() - 1.0).abs() > WEIGHT_TOL {
        return input_err("solve_exact: marginals must each sum to 1");
    }
    if a.iter().chain(b.iter()).any(|&w| w < 0.0 || !w.is_finite()) {
        return input_err("solve_exact: marginals must be finite and nonnegative");
    }

    let mut state = Simplex::new(&cost.entries, a, b);
    state.run()?;
    let (flow, u, v) = state.finish();

    let transport_cost: f64 = flow
        .iter()
        .zip(cost.entries.iter())
        .map(|(&p, &c)| p * c)
        .sum();

    // Fix the dual degree of freedom: weighted mean of g is zero.
    let shift: f64 = v.iter().zip(b.iter()).map(|(&g, &w)| g * w).sum();
    let f = Array1::from_iter(u.iter().map(|&x| x + shift));
    let g = Array1::from_iter(v.iter().map(|&x| x - shift));

    let distance = transport_cost.max(0.0).powf(1.0 / cost.power);
    Ok(OtSolution {
        plan: TransportPlan {
            coupling: flow,
            source_weights: a.clone(),
            target_weights: b.clone(),
        },
        potentials: DualPotentials { f, g },
        transport_cost,
        distance,
    })
}

/// Union-find over tree nodes (rows then columns), used by the initializer.
struct Dsu {
    parent: Vec<u32>,
}

impl Dsu {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.parent[r] as usize != r {
            r = self.parent[r] as usize;
        }
        let mut cur = x;
        while cur != r {
            let next = self.parent[cur] as usize;
            self.parent[cur] = r as u32;
            cur = next;
        }
        r
    }

    /// Merges the two sets; returns false if they were already joined.
    fn union(&mut self, x: usize, y: usize) -> bool {
        let (rx, ry) = (self.find(x), self.find(y));
        if rx == ry {
            return false;
        }
        self.parent[rx] = ry as u32;
        true
    }
}

struct Simplex<'a> {
    cost: &'a Array2<f64>,
    n: usize,
    m: usize,
    flow: Array2<f64>,
    basic: Vec<bool>,          // n*m flags, index i*m + j
    row_basic: Vec<Vec<usize>>, // basic columns per row
    col_basic: Vec<Vec<usize>>, // basic rows per column
    u: Vec<f64>,
    v: Vec<f64>,
    tol: f64,
    // Non-basic arcs with negative reduced cost from the last sweep, kept
    // most-negative-last so `pop` yields the best remaining candidate.
    candidates: Vec<u32>,
    bland: bool,
    degenerate_run: usize,
}

impl<'a> Simplex<'a> {
    fn new(cost: &'a Array2<f64>, a: &Array1<f64>, b: &Array1<f64>) -> Self {
        let (n, m) = cost.dim();
        let max_c = cost.iter().fold(0.0f64, |acc, &c| acc.max(c.abs()));
        let mut s = Self {
            cost,
            n,
            m,
            flow: Array2::zeros((n, m)),
            basic: vec![false; n * m],
            row_basic: vec![Vec::new(); n],
            col_basic: vec![Vec::new(); m],
            u: vec![0.0; n],
            v: vec![0.0; m],
            tol: 1e-12 * (1.0 + max_c),
            candidates: Vec::new(),
            bland: false,
            degenerate_run: 0,
        };
        s.matrix_minimum(a, b);
        s
    }

    /// Initial basis by the matrix-minimum rule: allocate cells in increasing
    /// cost order (each allocation saturates a row or column, so the chosen
    /// cells form a forest), then close the forest into a spanning tree with
    /// the cheapest degenerate arcs. Cost-aware starts land far closer to the
    /// optimum than northwest-corner, especially on near-diagonal matrices.
    fn matrix_minimum(&mut self, a: &Array1<f64>, b: &Array1<f64>) {
        let (n, m) = (self.n, self.m);
        let mut order: Vec<u32> = (0..(n * m) as u32).collect();
        order.sort_unstable_by(|&x, &y| {
            let cx = self.cost[[x as usize / m, x as usize % m]];
            let cy = self.cost[[y as usize / m, y as usize % m]];
            cx.total_cmp(&cy)
        });

        let mut ra = a.to_vec();
        let mut rb = b.to_vec();
        let mut dsu = Dsu::new(n + m);
        let mut basic_count = 0usize;
        for &idx in &order {
            let (i, j) = (idx as usize / m, idx as usize % m);
            if ra[i] > 0.0 && rb[j] > 0.0 {
                let q = ra[i].min(rb[j]);
                self.flow[[i, j]] = q;
                self.insert_basic(i, j);
                dsu.union(i, n + j);
                basic_count += 1;
                ra[i] -= q;
                rb[j] -= q;
            }
        }
        // Degenerate fill: connect remaining tree components, cheapest first.
        for &idx in &order {
            if basic_count == n + m - 1 {
                break;
            }
            let (i, j) = (idx as usize / m, idx as usize % m);
            if dsu.union(i, n + j) {
                self.insert_basic(i, j);
                basic_count += 1;
            }
        }
        debug_assert_eq!(basic_count, n + m - 1);
    }

    fn insert_basic(&mut self, i: usize, j: usize) {
        self.basic[i * self.m + j] = true;
        self.row_basic[i].push(j);
        self.col_basic[j].push(i);
    }

    fn remove_basic(&mut self, i: usize, j: usize) {
        self.basic[i * self.m + j] = false;
        self.row_basic[i].retain(|&c| c != j);
        self.col_basic[j].retain(|&r| r != i);
    }

    /// Propagates u/v over the spanning tree, rooted at row 0 with u_0 = 0.
    fn compute_duals(&mut self) {
        // node ids: 0..n rows, n..n+m columns
        let total = self.n + self.m;
        let mut seen = vec![false; total];
        let mut stack = vec![0usize];
        seen[0] = true;
        self.u[0] = 0.0;
        while let Some(node) = stack.pop() {
            if node < self.n {
                let i = node;
                for &j in &self.row_basic[i] {
                    let col_node = self.n + j;
                    if !seen[col_node] {
                        seen[col_node] = true;
                        self.v[j] = self.cost[[i, j]] - self.u[i];
                        stack.push(col_node);
                    }
                }
            } else {
                let j = node - self.n;
                for &i in &self.col_basic[j] {
                    if !seen[i] {
                        seen[i] = true;
                        self.u[i] = self.cost[[i, j]] - self.v[j];
                        stack.push(i);
                    }
                }
            }
        }
        debug_assert!(seen.iter().all(|&s| s), "basis is not a spanning tree");
    }

    fn reduced_cost(&self, i: usize, j: usize) -> f64 {
        self.cost[[i, j]] - self.u[i] - self.v[j]
    }

    /// Entering arc under the current pivot rule, or None at optimality.
    fn entering(&mut self) -> Option<(usize, usize)> {
        let arcs = self.n * self.m;
        if self.bland {
            for idx in 0..arcs {
                let (i, j) = (idx / self.m, idx % self.m);
                if !self.basic[idx] && self.reduced_cost(i, j) < -self.tol {
                    return Some((i, j));
                }
            }
            return None;
        }
        // Stored candidates are stale (duals moved since the sweep), so each
        // is rechecked before use; a failed check just discards it.
        while let Some(idx) = self.candidates.pop() {
            let idx = idx as usize;
            if self.basic[idx] {
                continue;
            }
            let (i, j) = (idx / self.m, idx % self.m);
            if self.reduced_cost(i, j) < -self.tol {
                return Some((i, j));
            }
        }
        // Fresh sweep: keep the most negative arcs; optimality is only ever
        // declared here, on a sweep that finds nothing. Basic arcs need no
        // special casing: their reduced costs are zero up to rounding, far
        // above the -tol threshold.
        let keep = ((arcs as f64).sqrt().ceil() as usize).max(64);
        let mut found: Vec<(f64, u32)> = Vec::with_capacity(keep * 2);
        for i in 0..self.n {
            let ui = self.u[i];
            let base = (i * self.m) as u32;
            let row = self.cost.row(i);
            let row = row.as_slice().expect("cost rows are contiguous");
            for (j, (&c, &vj)) in row.iter().zip(self.v.iter()).enumerate() {
                let rc = c - ui - vj;
                if rc < -self.tol {
                    found.push((rc, base + j as u32));
                }
            }
        }
        if found.is_empty() {
            return None;
        }
        if found.len() > keep {
            found.select_nth_unstable_by(keep - 1, |a, b| a.0.total_cmp(&b.0));
            found.truncate(keep);
        }
        found.sort_unstable_by(|a, b| b.0.total_cmp(&a.0));
        self.candidates = found.into_iter().map(|(_, idx)| idx).collect();
        let idx = self.candidates.pop().expect("nonempty candidate list") as usize;
        Some((idx / self.m, idx % self.m))
    }

    /// Path of basic cells joining row `i0` to column `j0` in the tree.
    fn tree_path(&self, i0: usize, j0: usize) -> Vec<(usize, usize)> {
        let total = self.n + self.m;
        let target = self.n + j0;
        let mut parent: Vec<Option<(usize, (usize, usize))>> = vec![None; total];
        let mut seen = vec![false; total];
        let mut queue = std::collections::VecDeque::new();
        seen[i0] = true;
        queue.push_back(i0);
        while let Some(node) = queue.pop_front() {
            if node == target {
                break;
            }
            if node < self.n {
                let i = node;
                for &j in &self.row_basic[i] {
                    let nxt = self.n + j;
                    if !seen[nxt] {
                        seen[nxt] = true;
                        parent[nxt] = Some((node, (i, j)));
                        queue.push_back(nxt);
                    }
                }
            } else {
                let j = node - self.n;
                for &i in &self.col_basic[j] {
                    if !seen[i] {
                        seen[i] = true;
                        parent[i] = Some((node, (i, j)));
                        queue.push_back(i);
                    }
                }
            }
        }
        let mut path = Vec::new();
        let mut node = target;
        while node != i0 {
            let (prev, cell) = parent[node].expect("tree path must exist");
            path.push(cell);
            node = prev;
        }
        path
    }

    fn pivot(&mut self, enter: (usize, usize)) {
        // Cycle: entering arc (+) then the tree path from its column back to
        // its row, with alternating signs.
        let path = self.tree_path(enter.0, enter.1);
        let mut minus = Vec::with_capacity(path.len() / 2 + 1);
        let mut plus = vec![enter];
        for (k, &cell) in path.iter().enumerate() {
            if k % 2 == 0 {
                minus.push(cell);
            } else {
                plus.push(cell);
            }
        }
        // Leaving arc: minimal flow among minus cells, lexicographic tie-break.
        let mut theta = f64::INFINITY;
        for &(i, j) in &minus {
            theta = theta.min(self.flow[[i, j]]);
        }
        let mut leave: Option<(usize, usize)> = None;
        for &(i, j) in &minus {
            if self.flow[[i, j]] <= theta + 1e-18 && leave.is_none_or(|l| (i, j) < l) {
                leave = Some((i, j));
            }
        }
        let leave = leave.expect("minus side of the cycle is nonempty");
        theta = theta.max(0.0);
        for &(i, j) in &plus {
            self.flow[[i, j]] += theta;
        }
        for &(i, j) in &minus {
            self.flow[[i, j]] = (self.flow[[i, j]] - theta).max(0.0);
        }
        self.insert_basic(enter.0, enter.1);
        self.remove_basic(leave.0, leave.1);

        if theta <= 1e-15 {
            self.degenerate_run += 1;
            if self.degenerate_run > self.n + self.m {
                self.bland = true;
            }
        } else {
            // Real progress: the objective strictly decreased, so no earlier
            // basis can recur and block search is safe again.
            self.degenerate_run = 0;
            self.bland = false;
        }
    }

    fn run(&mut self) -> Result<()> {
        let max_pivots = (4 * self.n * self.m).max(10_000);
        for _ in 0..max_pivots {
            self.compute_duals();
            match self.entering() {
                None => return Ok(()),
                Some(cell) => self.pivot(cell),
            }
        }
        Err(Error::SolverFailure(
            "transportation simplex: pivot limit exceeded".into(),
        ))
    }

    fn finish(mut self) -> (Array2<f64>, Vec<f64>, Vec<f64>) {
        self.compute_duals();
        (self.flow, self.u, self.v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::cost_matrix;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn marginals_force_plan() {
        let cost = CostMatrix {
            entries: array![[1.0, 2.0]],
            power: 1.0,
        };
        let a = array![1.0];
        let b = array![0.5, 0.5];
        let sol = solve_exact(&cost, &a, &b).unwrap();
        assert_abs_diff_eq!(sol.plan.coupling[[0, 0]], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.plan.coupling[[0, 1]], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.transport_cost, 1.5, epsilon = 1e-12);
    }

    #[test]
    fn identical_measures_zero_cost() {
        let x = array![[0.0], [1.0], [2.0]];
        let cost = cost_matrix(x.view(), x.view(), 2.0).unwrap();
        let a = array![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];
        let sol = solve_exact(&cost, &a, &a).unwrap();
        assert!(sol.transport_cost.abs() <= 1e-12);
        // identity-supported: diagonal carries all mass
        for i in 0..3 {
            assert_abs_diff_eq!(sol.plan.coupling[[i, i]], 1.0 / 3.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn sorted_matching_fixture() {
        // P = {0,1,4}, Q = {1,2,5}, p=2: monotone coupling gives mean cost 1.
        let x = array![[0.0], [1.0], [4.0]];
        let y = array![[1.0], [2.0], [5.0]];
        let cost = cost_matrix(x.view(), y.view(), 2.0).unwrap();
        let w = array![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];
        let sol = solve_exact(&cost, &w, &w).unwrap();
        assert_abs_diff_eq!(sol.transport_cost, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.distance, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_unnormalized_marginals() {
        let cost = CostMatrix {
            entries: array![[1.0]],
            power: 1.0,
        };
        let err = solve_exact(&cost, &array![0.9], &array![1.0]);
        assert!(err.is_err());
    }

    #[test]
    fn complementary_slackness_and_duality() {
        let x = array![[0.0, 0.0], [1.0, 3.0], [4.0, 1.0], [2.0, 2.0]];
        let y = array![[1.0, 1.0], [3.0, 0.0], [0.0, 2.0]];
        let cost = cost_matrix(x.view(), y.view(), 2.0).unwrap();
        let a = array![0.1, 0.2, 0.3, 0.4];
        let b = array![0.5, 0.2, 0.3];
        let sol = solve_exact(&cost, &a, &b).unwrap();
        // marginals
        assert!(sol.plan.marginal_error() <= 1e-9);
        // dual feasibility and slackness
        for i in 0..4 {
            for j in 0..3 {
                let slack = cost.entries[[i, j]] - sol.potentials.f[i] - sol.potentials.g[j];
                assert!(slack >= -1e-7);
                if sol.plan.coupling[[i, j]] > 0.0 {
                    assert!(slack.abs() <= 1e-7);
                }
            }
        }
        // strong duality
        let dual = sol.potentials.objective(&a, &b);
        assert!((dual - sol.transport_cost).abs() <= 1e-6 * sol.transport_cost.max(1.0));
        // g has weighted mean zero
        let gm: f64 = sol.potentials.g.dot(&b);
        assert!(gm.abs() <= 1e-9);
    }
}
