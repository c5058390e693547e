//! Dense simplex for `max c^T x  s.t.  A x <= b, x >= 0` with `b >= 0`.
//!
//! The origin is always feasible, so a single phase suffices. The tableau is
//! kept in condensed (Tucker) form, rows for basic and columns for nonbasic
//! variables, and Bland's rule picks both the entering and the leaving
//! variable, which rules out cycling and makes the result deterministic.

use crate::error::{invalid, Error, Result};

const PIVOT_EPS: f64 = 1e-12;
const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub objective: f64,
    pub x: Vec<f64>,
    pub pivots: usize,
}

#[derive(Debug, Clone, Default)]
pub struct LpProblem {
    pub num_vars: usize,
    pub rows: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
    pub objective: Vec<f64>,
}

impl LpProblem {
    pub fn new(num_vars: usize, objective: Vec<f64>) -> Result<Self> {
        if objective.len() != num_vars {
            return Err(invalid(
                "objective length must equal the number of variables",
            ));
        }
        Ok(LpProblem {
            num_vars,
            rows: Vec::new(),
            rhs: Vec::new(),
            objective,
        })
    }

    pub fn push(&mut self, row: Vec<f64>, rhs: f64) -> Result<()> {
        if row.len() != self.num_vars {
            return Err(invalid(format!(
                "row has {} entries, expected {}",
                row.len(),
                self.num_vars
            )));
        }
        self.rows.push(row);
        self.rhs.push(rhs);
        Ok(())
    }

    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let neg = x.iter().map(|v| -v).fold(0.0f64, f64::max);
        self.rows
            .iter()
            .zip(&self.rhs)
            .map(|(row, b)| row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() - b)
            .fold(neg, f64::max)
    }

    pub fn solve(&self) -> Result<LpSolution> {
        solve(self)
    }
}

pub fn solve(p: &LpProblem) -> Result<LpSolution> {
    let (m, n) = (p.rows.len(), p.num_vars);
    if let Some(i) = p.rhs.iter().position(|b| !(b.is_finite() && *b >= 0.0)) {
        return Err(invalid(format!(
            "row {i} has right-hand side {}, need finite and >= 0",
            p.rhs[i]
        )));
    }
    if p.rows
        .iter()
        .flatten()
        .chain(&p.objective)
        .any(|v| !v.is_finite())
    {
        return Err(invalid("LP data must be finite"));
    }
    let w = n + 1;
    // rows 0..m: [b_i | a_i]; row m: [z | -c]
    let mut t = vec![0.0; (m + 1) * w];
    for i in 0..m {
        t[i * w] = p.rhs[i];
        t[i * w + 1..(i + 1) * w].copy_from_slice(&p.rows[i]);
    }
    for j in 0..n {
        t[m * w + 1 + j] = -p.objective[j];
    }
    // labels: decision variables 0..n, slacks n..n+m
    let mut basic: Vec<usize> = (n..n + m).collect();
    let mut nonbasic: Vec<usize> = (0..n).collect();
    let max_pivots = 50 * (m + n + 10);
    let mut pivots = 0;
    loop {
        let entering = (0..n)
            .filter(|&s| t[m * w + 1 + s] < -PIVOT_EPS)
            .min_by_key(|&s| nonbasic[s]);
        let Some(s) = entering else { break };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            let a = t[i * w + 1 + s];
            if a > PIVOT_EPS {
                let ratio = t[i * w] / a;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((r, best)) => {
                        if ratio < best - 1e-15 * best.abs().max(1.0)
                            || (ratio <= best + 1e-15 * best.abs().max(1.0) && basic[i] < basic[r])
                        {
                            Some((i, ratio))
                        } else {
                            Some((r, best))
                        }
                    }
                };
            }
        }
        let Some((r, _)) = leave else {
            return Err(Error::SolverFailure(format!(
                "objective unbounded along variable {} ({} rows, {} vars)",
                nonbasic[s], m, n
            )));
        };
        pivot(&mut t, w, m + 1, r, s + 1);
        std::mem::swap(&mut basic[r], &mut nonbasic[s]);
        pivots += 1;
        if pivots > max_pivots {
            return Err(Error::SolverFailure(format!(
                "no convergence after {pivots} pivots"
            )));
        }
    }
    let mut x = vec![0.0; n];
    for (i, &v) in basic.iter().enumerate() {
        if v < n {
            x[v] = t[i * w].max(0.0);
        }
    }
    let objective: f64 = p.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    let scale = p.rhs.iter().fold(1.0f64, |a, b| a.max(b.abs()));
    let viol = p.max_violation(&x);
    if viol > FEAS_TOL * scale {
        return Err(Error::SolverFailure(format!(
            "final point violates constraints by {viol:e} after {pivots} pivots"
        )));
    }
    Ok(LpSolution {
        objective,
        x,
        pivots,
    })
}

fn pivot(t: &mut [f64], w: usize, rows: usize, r: usize, s: usize) {
    let p = t[r * w + s];
    let inv = 1.0 / p;
    for j in 0..w {
        t[r * w + j] *= inv;
    }
    t[r * w + s] = inv;
    for i in 0..rows {
        if i == r {
            continue;
        }
        let f = t[i * w + s];
        if f == 0.0 {
            continue;
        }
        for j in 0..w {
            if j != s {
                t[i * w + j] -= f * t[r * w + j];
            }
        }
        t[i * w + s] = -f * inv;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_bound() {
        let mut p = LpProblem::new(1, vec![1.0]).unwrap();
        p.push(vec![1.0], 3.7).unwrap();
        let s = p.solve().unwrap();
        assert!((s.objective - 3.7).abs() < 1e-12);
    }

    fn maxmin_toy(extra: bool) -> LpProblem {
        // x = [R1, R2, t]
        let mut p = LpProblem::new(3, vec![0.0, 0.0, 1.0]).unwrap();
        p.push(vec![1.0, 0.0, 0.0], 2.0).unwrap();
        p.push(vec![0.0, 1.0, 0.0], 2.0).unwrap();
        p.push(vec![1.0, 1.0, 0.0], 3.0).unwrap();
        p.push(vec![-1.0, 0.0, 1.0], 0.0).unwrap();
        p.push(vec![0.0, -1.0, 1.0], 0.0).unwrap();
        if extra {
            p.push(vec![1.0, 1.0, 0.0], 10.0).unwrap();
        }
        p
    }

    #[test]
    fn two_user_maxmin() {
        let s = maxmin_toy(false).solve().unwrap();
        assert!((s.objective - 1.5).abs() < 1e-12);
        let s2 = maxmin_toy(true).solve().unwrap();
        assert!((s2.objective - 1.5).abs() < 1e-12);
        assert_eq!(s, maxmin_toy(false).solve().unwrap());
    }

    #[test]
    fn classic_example() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18 -> 36 at (2, 6)
        let mut p = LpProblem::new(2, vec![3.0, 5.0]).unwrap();
        p.push(vec![1.0, 0.0], 4.0).unwrap();
        p.push(vec![0.0, 2.0], 12.0).unwrap();
        p.push(vec![3.0, 2.0], 18.0).unwrap();
        let s = p.solve().unwrap();
        assert!((s.objective - 36.0).abs() < 1e-12);
        assert!((s.x[0] - 2.0).abs() < 1e-12 && (s.x[1] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let mut p = LpProblem::new(2, vec![1.0, 1.0]).unwrap();
        p.push(vec![1.0, 0.0], 1.0).unwrap();
        assert!(matches!(p.solve(), Err(Error::SolverFailure(_))));
        let mut q = LpProblem::new(1, vec![1.0]).unwrap();
        q.push(vec![1.0], -1.0).unwrap();
        assert!(q.solve().is_err());
        assert!(q.push(vec![1.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn degenerate_does_not_cycle() {
        // Beale's cycling example (converted to <= form with b >= 0)
        let mut p = LpProblem::new(4, vec![0.75, -150.0, 0.02, -6.0]).unwrap();
        p.push(vec![0.25, -60.0, -0.04, 9.0], 0.0).unwrap();
        p.push(vec![0.5, -90.0, -0.02, 3.0], 0.0).unwrap();
        p.push(vec![0.0, 0.0, 1.0, 0.0], 1.0).unwrap();
        let s = p.solve().unwrap();
        assert!((s.objective - 0.05).abs() < 1e-12);
    }
}
