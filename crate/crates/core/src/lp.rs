//! Linear programs `min c·x` subject to `A_eq x = b_eq`, `A_le x ≤ b_le`, `x ≥ 0`,
//! and a self-contained dense two-phase simplex.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub eq_rows: Vec<Vec<f64>>,
    pub eq_rhs: Vec<f64>,
    pub le_rows: Vec<Vec<f64>>,
    pub le_rhs: Vec<f64>,
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>) -> Self {
        LinearProgram { objective, ..Default::default() }
    }

    pub fn vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_eq(&mut self, row: Vec<f64>, rhs: f64) {
        self.eq_rows.push(row);
        self.eq_rhs.push(rhs);
    }

    pub fn add_le(&mut self, row: Vec<f64>, rhs: f64) {
        self.le_rows.push(row);
        self.le_rhs.push(rhs);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
}

/// Anything that can solve a [`LinearProgram`] to optimality.
pub trait LpSolver {
    fn solve(&self, lp: &LinearProgram) -> Result<LpSolution>;
}

/// Dense tableau simplex (Dantzig pricing, switching to Bland's rule for good after a degenerate stall).
#[derive(Debug, Clone, Copy)]
pub struct DenseSimplex {
    pub max_pivots: usize,
    pub tol: f64,
}

impl Default for DenseSimplex {
    fn default() -> Self {
        DenseSimplex { max_pivots: 200_000, tol: 1e-9 }
    }
}

struct Tableau {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * (self.cols + 1) + c]
    }

    #[inline]
    fn rhs(&self, r: usize) -> f64 {
        self.data[r * (self.cols + 1) + self.cols]
    }

    fn pivot(&mut self, pr: usize, pc: usize, cost: &mut [f64]) {
        let w = self.cols + 1;
        let p = self.data[pr * w + pc];
        for c in 0..w {
            self.data[pr * w + c] /= p;
        }
        for r in 0..self.rows {
            if r == pr {
                continue;
            }
            let f = self.data[r * w + pc];
            if f != 0.0 {
                for c in 0..w {
                    self.data[r * w + c] -= f * self.data[pr * w + c];
                }
            }
        }
        let f = cost[pc];
        if f != 0.0 {
            for c in 0..w {
                cost[c] -= f * self.data[pr * w + c];
            }
        }
        self.basis[pr] = pc;
    }

    /// Reduced-cost row for `obj`, with the objective value in the last slot (negated).
    fn price(&self, obj: &[f64]) -> Vec<f64> {
        let w = self.cols + 1;
        let mut cost = vec![0.0; w];
        cost[..self.cols].copy_from_slice(obj);
        for r in 0..self.rows {
            let cb = obj[self.basis[r]];
            if cb != 0.0 {
                for c in 0..w {
                    cost[c] -= cb * self.data[r * w + c];
                }
            }
        }
        cost
    }

    fn optimize(&mut self, cost: &mut [f64], allowed: usize, s: &DenseSimplex) -> Result<()> {
        let mut degenerate = 0usize;
        let mut bland = false;
        for _ in 0..s.max_pivots {
            bland |= degenerate > 50;
            let mut pc = usize::MAX;
            let mut best = -s.tol;
            for c in 0..allowed {
                if cost[c] < best {
                    pc = c;
                    if bland {
                        break;
                    }
                    best = cost[c];
                }
            }
            if pc == usize::MAX {
                return Ok(());
            }
            let mut pr = usize::MAX;
            let mut ratio = f64::INFINITY;
            for r in 0..self.rows {
                let a = self.at(r, pc);
                if a > s.tol {
                    let q = self.rhs(r) / a;
                    if q < ratio - 1e-12 || (q <= ratio + 1e-12 && pr != usize::MAX && self.basis[r] < self.basis[pr]) {
                        ratio = q;
                        pr = r;
                    }
                }
            }
            if pr == usize::MAX {
                return Err(Error::SolverFailure("objective is unbounded".to_string()));
            }
            degenerate = if ratio.abs() <= 1e-12 { degenerate + 1 } else { 0 };
            self.pivot(pr, pc, cost);
        }
        Err(Error::SolverFailure("pivot limit reached".to_string()))
    }
}

impl LpSolver for DenseSimplex {
    fn solve(&self, lp: &LinearProgram) -> Result<LpSolution> {
        let n = lp.vars();
        let m_eq = lp.eq_rows.len();
        let m_le = lp.le_rows.len();
        if lp.eq_rhs.len() != m_eq
            || lp.le_rhs.len() != m_le
            || lp.eq_rows.iter().chain(&lp.le_rows).any(|r| r.len() != n)
        {
            return Err(invalid("constraint rows must match the objective length"));
        }
        let rows = m_eq + m_le;
        // columns: originals, slacks for ≤ rows, one artificial per row
        let art0 = n + m_le;
        let cols = art0 + rows;
        let w = cols + 1;
        let mut data = vec![0.0; rows * w];
        for r in 0..rows {
            let (row, rhs) = if r < m_eq {
                (&lp.eq_rows[r], lp.eq_rhs[r])
            } else {
                (&lp.le_rows[r - m_eq], lp.le_rhs[r - m_eq])
            };
            let sign = if rhs < 0.0 { -1.0 } else { 1.0 };
            for c in 0..n {
                data[r * w + c] = sign * row[c];
            }
            if r >= m_eq {
                data[r * w + n + (r - m_eq)] = sign;
            }
            data[r * w + art0 + r] = 1.0;
            data[r * w + cols] = sign * rhs;
        }
        let mut t = Tableau { rows, cols, data, basis: (art0..cols).collect() };

        let mut phase1 = vec![0.0; cols];
        phase1[art0..].iter_mut().for_each(|c| *c = 1.0);
        let mut cost = t.price(&phase1);
        t.optimize(&mut cost, cols, self)?;
        let infeas = -cost[cols];
        let scale = 1.0 + lp.eq_rhs.iter().chain(&lp.le_rhs).fold(0.0f64, |m, b| m.max(b.abs()));
        if infeas > 1e-8 * scale {
            return Err(Error::Infeasible);
        }
        for r in 0..rows {
            if t.basis[r] >= art0 {
                if let Some(c) = (0..art0).find(|&c| t.at(r, c).abs() > 1e-9) {
                    t.pivot(r, c, &mut cost);
                }
            }
        }

        let mut phase2 = vec![0.0; cols];
        phase2[..n].copy_from_slice(&lp.objective);
        let mut cost = t.price(&phase2);
        t.optimize(&mut cost, art0, self)?;
        let mut x = vec![0.0; n];
        for r in 0..rows {
            if t.basis[r] < n {
                x[t.basis[r]] = t.rhs(r).max(0.0);
            }
        }
        let objective = lp.objective.iter().zip(&x).fold(0.0, |a, (c, v)| a + c * v);
        Ok(LpSolution { x, objective })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::vec::Vec as StdVec;

    #[test]
    fn textbook_problem() {
        // max 3x + 5y s.t. x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18  → (2, 6), value 36
        let mut lp = LinearProgram::new(vec![-3.0, -5.0]);
        lp.add_le(vec![1.0, 0.0], 4.0);
        lp.add_le(vec![0.0, 2.0], 12.0);
        lp.add_le(vec![3.0, 2.0], 18.0);
        let s = DenseSimplex::default().solve(&lp).unwrap();
        assert!((s.objective + 36.0).abs() < 1e-9);
        assert!((s.x[0] - 2.0).abs() < 1e-9 && (s.x[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = LinearProgram::new(vec![1.0, 1.0]);
        lp.add_eq(vec![1.0, 1.0], 1.0);
        lp.add_le(vec![1.0, 1.0], 0.5);
        assert_eq!(DenseSimplex::default().solve(&lp), Err(Error::Infeasible));
        let mut lp = LinearProgram::new(vec![-1.0, 0.0]);
        lp.add_le(vec![0.0, 1.0], 1.0);
        assert!(matches!(DenseSimplex::default().solve(&lp), Err(Error::SolverFailure(_))));
    }

    #[test]
    fn redundant_equalities() {
        let mut lp = LinearProgram::new(vec![1.0, 2.0, 3.0]);
        lp.add_eq(vec![1.0, 1.0, 1.0], 1.0);
        lp.add_eq(vec![2.0, 2.0, 2.0], 2.0);
        let s = DenseSimplex::default().solve(&lp).unwrap();
        assert!((s.objective - 1.0).abs() < 1e-12);
    }

    proptest! {
        /// On the probability simplex the optimum is the smallest objective entry.
        #[test]
        fn simplex_picks_minimum(c in proptest::collection::vec(-10.0f64..10.0, 1..12)) {
            let n = c.len();
            let mut lp = LinearProgram::new(c.clone());
            lp.add_eq(vec![1.0; n], 1.0);
            let s = DenseSimplex::default().solve(&lp).unwrap();
            let best = c.iter().copied().fold(f64::INFINITY, f64::min);
            prop_assert!((s.objective - best).abs() < 1e-9);
            let mass: f64 = s.x.iter().sum();
            prop_assert!((mass - 1.0).abs() < 1e-9);
        }

        /// Weak duality against random dual-feasible points of a transportation-style LP.
        #[test]
        fn optimum_is_feasible(rows in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 4), 1..5),
                               c in proptest::collection::vec(0.1f64..5.0, 4)) {
            let mut lp = LinearProgram::new(c.iter().map(|v| -v).collect());
            for r in &rows {
                lp.add_le(r.iter().map(|v| v + 0.1).collect::<StdVec<_>>(), 1.0);
            }
            let s = DenseSimplex::default().solve(&lp).unwrap();
            for r in &rows {
                let lhs: f64 = r.iter().zip(&s.x).map(|(a, x)| (a + 0.1) * x).sum();
                prop_assert!(lhs <= 1.0 + 1e-9);
            }
            prop_assert!(s.x.iter().all(|&x| x >= 0.0));
        }
    }
}
