//! Coordinate bounds of a reduced polytope by linear programming.
//!
//! The solver is a dense two-phase primal simplex with Bland's rule. For a
//! reduced system over the live coordinates `x = (a_s, ..., a_{n-1})`, the
//! LP is `min / max x_t  s.t.  C' x <= b', x >= 0`, where `C'` holds the live
//! columns. Phase 1 is shared by the min and max solves; the max solve
//! restarts phase 2 from the optimal basis of the min solve.

use crate::{Error, ReducedPolytope, Result};

/// Intervals narrower than this are reported as a single forced value.
pub const DEGENERATE_WIDTH: f64 = 1e-9;

/// Phase 1 accepts a system as feasible when the artificial mass left is
/// below this.
const FEASIBILITY_TOL: f64 = 1e-7;
const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-11;

/// Feasible interval `[lo, hi]` of one coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinateBounds {
    pub lo: f64,
    pub hi: f64,
}

impl CoordinateBounds {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// True when the interval collapsed to a single value.
    pub fn is_forced(&self) -> bool {
        self.width() < DEGENERATE_WIDTH
    }
}

/// Optimal points of the min and max problems for one coordinate, over the
/// live coordinates of the system.
#[derive(Debug, Clone, PartialEq)]
pub struct Extremes {
    pub min_value: f64,
    pub max_value: f64,
    pub argmin: Vec<f64>,
    pub argmax: Vec<f64>,
}

/// Raw min/max of coordinate `i` with attaining points (no clamping).
pub fn extremes(system: &ReducedPolytope<'_>, i: usize) -> Result<Extremes> {
    let start = system.start_index();
    let n = system.base().n();
    if i < start || i >= n {
        return Err(Error::InvalidArgument(format!("coordinate {i} is not live (live range {start}..{n})")));
    }
    let mut tab = match Tableau::from_system(system)? {
        Some(t) => t,
        None => return Err(Error::InfeasibleSystem),
    };
    if !tab.phase_one()? {
        return Err(Error::InfeasibleSystem);
    }
    let t = i - start;
    tab.optimize(t, 1.0)?;
    let min_value = tab.value_of(t);
    let argmin = tab.point();
    tab.optimize(t, -1.0)?;
    let max_value = tab.value_of(t);
    let argmax = tab.point();
    Ok(Extremes { min_value, max_value, argmin, argmax })
}

/// Feasible interval of coordinate `i`, clamped into `[0, 1]`.
///
/// An interval narrower than [`DEGENERATE_WIDTH`] collapses to its midpoint.
pub fn bounds(system: &ReducedPolytope<'_>, i: usize) -> Result<CoordinateBounds> {
    let ex = extremes(system, i).map_err(|e| match e {
        Error::InfeasibleSystem => {
            Error::NumericalFailure(format!("reduced system at step {} reported infeasible", system.start_index()))
        }
        other => other,
    })?;
    let lo = ex.min_value.clamp(0.0, 1.0);
    let hi = ex.max_value.clamp(0.0, 1.0);
    if hi - lo < DEGENERATE_WIDTH {
        let mid = 0.5 * (lo + hi);
        return Ok(CoordinateBounds { lo: mid, hi: mid });
    }
    Ok(CoordinateBounds { lo, hi })
}

/// True iff the reduced system admits a point.
pub fn feasible(system: &ReducedPolytope<'_>) -> Result<bool> {
    match Tableau::from_system(system)? {
        Some(mut t) => t.phase_one(),
        None => Ok(false),
    }
}

/// Dense simplex tableau. Row `rows` is the objective row of reduced costs;
/// the last column is the right-hand side (objective row holds `-z`).
struct Tableau {
    rows: usize,
    /// Structural variables (live coordinates).
    structural: usize,
    /// Structural + slack columns; artificials follow.
    real_cols: usize,
    cols: usize,
    data: Vec<f64>,
    basis: Vec<usize>,
    pivot_cap: usize,
}

impl Tableau {
    /// Builds the phase-1 tableau, or `None` when a row without live columns
    /// is already violated.
    fn from_system(system: &ReducedPolytope<'_>) -> Result<Option<Self>> {
        let base = system.base();
        let start = system.start_index();
        let n = base.n();
        let live = n - start;
        let limits = system.live_limits();

        let mut kept: Vec<(&[f64], f64)> = Vec::with_capacity(base.m());
        for k in 0..base.m() {
            let coeffs = &base.row(k)[start..];
            let rhs = limits[k];
            // Rows with no positive live coefficient and a nonnegative
            // limit hold for every x >= 0.
            if coeffs.iter().all(|&c| c <= 0.0) {
                if rhs >= 0.0 {
                    continue;
                }
                if coeffs.iter().all(|&c| c == 0.0) {
                    if rhs < -FEASIBILITY_TOL {
                        return Ok(None);
                    }
                    continue;
                }
            }
            if !rhs.is_finite() || coeffs.iter().any(|c| !c.is_finite()) {
                return Err(Error::NumericalFailure("non-finite constraint data".into()));
            }
            kept.push((coeffs, rhs));
        }

        let rows = kept.len();
        let negatives = kept.iter().filter(|(_, b)| *b < 0.0).count();
        let real_cols = live + rows;
        let cols = real_cols + negatives;
        let width = cols + 1;
        let mut data = vec![0.0; (rows + 1) * width];
        let mut basis = vec![0; rows];
        let mut art = real_cols;
        for (r, (coeffs, rhs)) in kept.iter().enumerate() {
            let row = &mut data[r * width..(r + 1) * width];
            let sign = if *rhs < 0.0 { -1.0 } else { 1.0 };
            for (j, &c) in coeffs.iter().enumerate() {
                row[j] = sign * c;
            }
            row[live + r] = sign;
            row[cols] = sign * rhs;
            if sign < 0.0 {
                row[art] = 1.0;
                basis[r] = art;
                art += 1;
            } else {
                basis[r] = live + r;
            }
        }
        let pivot_cap = 50 * (base.m() + n);
        Ok(Some(Tableau { rows, structural: live, real_cols, cols, data, basis, pivot_cap }))
    }

    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * (self.cols + 1) + c]
    }

    /// Minimizes the artificial mass. Returns feasibility.
    fn phase_one(&mut self) -> Result<bool> {
        let width = self.cols + 1;
        let obj = self.rows * width;
        self.data[obj..obj + width].iter_mut().for_each(|v| *v = 0.0);
        for j in self.real_cols..self.cols {
            self.data[obj + j] = 1.0;
        }
        for r in 0..self.rows {
            if self.basis[r] >= self.real_cols {
                for c in 0..width {
                    self.data[obj + c] -= self.data[r * width + c];
                }
            }
        }
        self.run(self.cols)?;
        let residual = -self.data[obj + self.cols];
        if residual > FEASIBILITY_TOL {
            return Ok(false);
        }
        // Drive zero-valued artificials out of the basis where possible; rows
        // where that fails are redundant and keep their artificial at zero.
        for r in 0..self.rows {
            if self.basis[r] >= self.real_cols {
                let entering = (0..self.real_cols).find(|&j| self.at(r, j).abs() > 1e-9);
                if let Some(j) = entering {
                    self.pivot(r, j);
                }
            }
        }
        Ok(true)
    }

    /// Phase 2 for objective `sign * x_t` (minimized), from the current basis.
    fn optimize(&mut self, t: usize, sign: f64) -> Result<()> {
        let width = self.cols + 1;
        let obj = self.rows * width;
        self.data[obj..obj + width].iter_mut().for_each(|v| *v = 0.0);
        self.data[obj + t] = sign;
        for r in 0..self.rows {
            if self.basis[r] == t {
                for c in 0..width {
                    self.data[obj + c] -= sign * self.data[r * width + c];
                }
            }
        }
        self.run(self.real_cols)
    }

    /// Bland's-rule pivoting over columns `0..allowed`.
    fn run(&mut self, allowed: usize) -> Result<()> {
        let width = self.cols + 1;
        let obj = self.rows * width;
        for _ in 0..self.pivot_cap {
            let Some(enter) = (0..allowed).find(|&j| self.data[obj + j] < -COST_TOL) else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let a = self.at(r, enter);
                if a > PIVOT_TOL {
                    let ratio = self.at(r, self.cols).max(0.0) / a;
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((br, bratio)) => {
                            if ratio < bratio - 1e-15
                                || (ratio <= bratio + 1e-15 && self.basis[r] < self.basis[br])
                            {
                                Some((r, ratio))
                            } else {
                                Some((br, bratio))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else {
                return Err(Error::NumericalFailure("linear program reported unbounded".into()));
            };
            self.pivot(r, enter);
        }
        Err(Error::NumericalFailure(format!("simplex did not converge within {} pivots", self.pivot_cap)))
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let width = self.cols + 1;
        let p = self.data[r * width + c];
        for v in &mut self.data[r * width..(r + 1) * width] {
            *v /= p;
        }
        let (before, rest) = self.data.split_at_mut(r * width);
        let (prow, after) = rest.split_at_mut(width);
        for row in before.chunks_exact_mut(width).chain(after.chunks_exact_mut(width)) {
            let f = row[c];
            if f != 0.0 {
                for (x, &y) in row.iter_mut().zip(prow.iter()) {
                    *x -= f * y;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    fn value_of(&self, j: usize) -> f64 {
        self.basis.iter().position(|&b| b == j).map_or(0.0, |r| self.at(r, self.cols))
    }

    fn point(&self) -> Vec<f64> {
        (0..self.structural).map(|j| self.value_of(j)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polytope::{gen_random_halfspaces, Polytope};

    fn fig2b() -> Polytope {
        Polytope::build(vec![vec![0.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]], vec![0.6, 0.7], 3).unwrap()
    }

    fn close(b: CoordinateBounds, lo: f64, hi: f64) -> bool {
        (b.lo - lo).abs() < 1e-12 && (b.hi - hi).abs() < 1e-12
    }

    #[test]
    fn simplex_bounds_are_unit_interval() {
        let p = Polytope::simplex(3).unwrap();
        assert!(close(bounds(&p.root(), 0).unwrap(), 0.0, 1.0));
        assert!(close(bounds(&p.root(), 2).unwrap(), 0.0, 1.0));
    }

    #[test]
    fn fig2b_bounds() {
        let p = fig2b();
        assert!(close(bounds(&p.root(), 0).unwrap(), 0.0, 1.0));
        assert!(close(bounds(&p.root(), 2).unwrap(), 0.0, 0.6));
        let r = p.root().reduce(0.3);
        assert!(close(bounds(&r, 1).unwrap(), 0.1, 0.7));
    }

    #[test]
    fn degenerate_interval_is_forced() {
        let p = fig2b();
        let r = p.root().reduce(0.3).reduce(0.5);
        let b = bounds(&r, 2).unwrap();
        assert!(b.is_forced());
        assert_eq!(b.lo, b.hi);
        assert!((b.lo - 0.2).abs() < 1e-12);
    }

    #[test]
    fn feasibility_checks() {
        assert!(feasible(&Polytope::simplex(3).unwrap().root()).unwrap());
        let p = gen_random_halfspaces(5, 3, 7).unwrap();
        assert!(feasible(&p.root()).unwrap());
        // A prefix that leaves nothing to allocate to a required mass.
        let q = Polytope::simplex(3).unwrap();
        let r = q.root().reduce(0.9).reduce(0.9);
        assert!(!feasible(&r).unwrap());
    }

    #[test]
    fn extreme_points_satisfy_the_system() {
        let p = gen_random_halfspaces(6, 4, 3).unwrap();
        let r = p.root().reduce(0.05);
        let ex = extremes(&r, 1).unwrap();
        for point in [&ex.argmin, &ex.argmax] {
            let mut full = r.fixed_prefix().to_vec();
            full.extend_from_slice(point);
            assert!(p.max_violation(&full).unwrap() <= 1e-9);
        }
        assert_eq!(ex.argmin[0], ex.min_value);
        assert_eq!(ex.argmax[0], ex.max_value);
    }

    #[test]
    fn rejects_fixed_coordinate() {
        let p = Polytope::simplex(3).unwrap();
        let r = p.root().reduce(0.2);
        assert!(matches!(bounds(&r, 0), Err(Error::InvalidArgument(_))));
    }
}
