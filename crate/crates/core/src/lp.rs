//! Dense two-phase primal simplex for small linear programs.
//!
//! Solves `min c·x` subject to grouped `≤`, `≥` and `=` rows with `x ≥ 0`.
//! Pricing is Dantzig's rule; after a run of degenerate pivots it falls back
//! to Bland's rule until the objective moves again, which rules out cycling.

use thiserror::Error;

const PIVOT_TOL: f64 = 1e-10;
const FEAS_TOL: f64 = 1e-8;
const DEGENERATE_RUN: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowKind {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Debug)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub kind: RowKind,
    pub rhs: f64,
    /// Constraint family, used to name the culprit when infeasible.
    pub group: &'static str,
}

#[derive(Clone, Debug, Default)]
pub struct LinearProgram {
    objective: Vec<f64>,
    rows: Vec<Row>,
    pub max_iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("infeasible: violated constraint groups {groups:?} (phase-1 residual {residual:.3e})")]
    Infeasible { groups: Vec<&'static str>, residual: f64 },
    #[error("objective unbounded below")]
    Unbounded,
    #[error("iteration limit {0} reached")]
    IterationLimit(usize),
}

impl LinearProgram {
    pub fn new(num_vars: usize) -> Self {
        LinearProgram { objective: vec![0.0; num_vars], rows: Vec::new(), max_iterations: 50_000 }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn set_cost(&mut self, var: usize, cost: f64) {
        self.objective[var] = cost;
    }

    pub fn add_row(&mut self, group: &'static str, coeffs: Vec<(usize, f64)>, kind: RowKind, rhs: f64) {
        debug_assert!(coeffs.iter().all(|&(j, _)| j < self.num_vars()));
        self.rows.push(Row { coeffs, kind, rhs, group });
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn solve(&self) -> Result<LpSolution, LpError> {
        Tableau::build(self).run(self)
    }
}

struct Tableau {
    m: usize,
    // structural + slack + artificial
    cols: usize,
    width: usize,
    n_struct: usize,
    first_art: usize,
    data: Vec<f64>,
    cost: Vec<f64>,
    basis: Vec<usize>,
    art_group: Vec<&'static str>,
    iterations: usize,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let m = lp.rows.len();
        let n = lp.num_vars();
        let mut kinds = Vec::with_capacity(m);
        for row in &lp.rows {
            let flip = row.rhs < 0.0;
            let kind = match (row.kind, flip) {
                (RowKind::Le, true) => RowKind::Ge,
                (RowKind::Ge, true) => RowKind::Le,
                (k, _) => k,
            };
            kinds.push((kind, if flip { -1.0 } else { 1.0 }));
        }
        let n_slack = kinds.iter().filter(|(k, _)| *k != RowKind::Eq).count();
        let n_art = kinds.iter().filter(|(k, _)| *k != RowKind::Le).count();
        let first_art = n + n_slack;
        let cols = first_art + n_art;
        let width = cols + 1;
        let mut data = vec![0.0; m * width];
        let mut basis = vec![0; m];
        let mut art_group = Vec::with_capacity(n_art);
        let (mut slack, mut art) = (n, first_art);
        for (i, (row, &(kind, sign))) in lp.rows.iter().zip(&kinds).enumerate() {
            let r = &mut data[i * width..(i + 1) * width];
            for &(j, a) in &row.coeffs {
                r[j] += sign * a;
            }
            r[cols] = sign * row.rhs;
            match kind {
                RowKind::Le => {
                    r[slack] = 1.0;
                    basis[i] = slack;
                    slack += 1;
                }
                RowKind::Ge => {
                    r[slack] = -1.0;
                    slack += 1;
                    r[art] = 1.0;
                    basis[i] = art;
                    art_group.push(row.group);
                    art += 1;
                }
                RowKind::Eq => {
                    r[art] = 1.0;
                    basis[i] = art;
                    art_group.push(row.group);
                    art += 1;
                }
            }
        }
        Tableau {
            m,
            cols,
            width,
            n_struct: n,
            first_art,
            data,
            cost: vec![0.0; width],
            basis,
            art_group,
            iterations: 0,
        }
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.at(i, self.cols)
    }

    /// Loads reduced costs for the column cost vector `c` (length `cols`).
    fn price_out(&mut self, c: &[f64]) {
        self.cost[..self.cols].copy_from_slice(c);
        self.cost[self.cols] = 0.0;
        for i in 0..self.m {
            let cb = c[self.basis[i]];
            if cb != 0.0 {
                let row = &self.data[i * self.width..(i + 1) * self.width];
                for (z, a) in self.cost.iter_mut().zip(row) {
                    *z -= cb * a;
                }
            }
        }
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let w = self.width;
        let inv = 1.0 / self.data[r * w + q];
        for v in &mut self.data[r * w..(r + 1) * w] {
            *v *= inv;
        }
        self.data[r * w + q] = 1.0;
        let (before, rest) = self.data.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        for row in before.chunks_exact_mut(w).chain(after.chunks_exact_mut(w)) {
            let f = row[q];
            if f != 0.0 {
                for (v, p) in row.iter_mut().zip(prow.iter()) {
                    *v -= f * p;
                }
                row[q] = 0.0;
            }
        }
        let f = self.cost[q];
        if f != 0.0 {
            for (v, p) in self.cost.iter_mut().zip(prow.iter()) {
                *v -= f * p;
            }
            self.cost[q] = 0.0;
        }
        self.basis[r] = q;
    }

    /// Runs simplex iterations over columns `< allowed`.
    fn optimize(&mut self, allowed: usize, max_iter: usize) -> Result<(), LpError> {
        let mut degenerate = 0usize;
        loop {
            if self.iterations >= max_iter {
                return Err(LpError::IterationLimit(max_iter));
            }
            let bland = degenerate >= DEGENERATE_RUN;
            let mut entering = None;
            let mut best = -PIVOT_TOL;
            for j in 0..allowed {
                let z = self.cost[j];
                if z < best {
                    entering = Some(j);
                    if bland {
                        break;
                    }
                    best = z;
                }
            }
            let Some(q) = entering else { return Ok(()) };

            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let a = self.at(i, q);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i).max(0.0) / a;
                    let better = match leave {
                        None => true,
                        Some((l, best_ratio)) => {
                            ratio < best_ratio - 1e-12 || (ratio <= best_ratio + 1e-12 && self.basis[i] < self.basis[l])
                        }
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            let Some((r, ratio)) = leave else { return Err(LpError::Unbounded) };
            if ratio <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.pivot(r, q);
            self.iterations += 1;
        }
    }

    fn run(mut self, lp: &LinearProgram) -> Result<LpSolution, LpError> {
        let max_iter = lp.max_iterations;
        if self.first_art < self.cols {
            let mut c = vec![0.0; self.cols];
            c[self.first_art..].iter_mut().for_each(|v| *v = 1.0);
            self.price_out(&c);
            self.optimize(self.cols, max_iter)?;
            let residual: f64 = (0..self.m).filter(|&i| self.basis[i] >= self.first_art).map(|i| self.rhs(i)).sum();
            let scale = 1.0 + (0..self.m).map(|i| self.rhs(i).abs()).fold(0.0, f64::max);
            if residual > FEAS_TOL * scale {
                let mut groups: Vec<&'static str> = (0..self.m)
                    .filter(|&i| self.basis[i] >= self.first_art && self.rhs(i) > FEAS_TOL)
                    .map(|i| self.art_group[self.basis[i] - self.first_art])
                    .collect();
                groups.sort_unstable();
                groups.dedup();
                return Err(LpError::Infeasible { groups, residual });
            }
            // drive zero-level artificials out of the basis where possible
            for i in 0..self.m {
                if self.basis[i] >= self.first_art {
                    if let Some(j) = (0..self.first_art).find(|&j| self.at(i, j).abs() > 1e-9) {
                        self.pivot(i, j);
                    }
                }
            }
        }

        let mut c = vec![0.0; self.cols];
        c[..self.n_struct].copy_from_slice(&lp.objective);
        self.price_out(&c);
        self.optimize(self.first_art, max_iter)?;

        let mut x = vec![0.0; self.n_struct];
        for i in 0..self.m {
            if self.basis[i] < self.n_struct {
                x[self.basis[i]] = self.rhs(i).max(0.0);
            }
        }
        let objective = x.iter().zip(&lp.objective).map(|(a, b)| a * b).sum();
        Ok(LpSolution { x, objective, iterations: self.iterations })
    }
}
