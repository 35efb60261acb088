//! Halfspace representation of allocation action spaces.
//!
//! A [`Polytope`] is the system `C a <= b` over `n` entities. The simplex
//! rows (`-a_i <= 0` and the pair `sum a <= 1`, `-sum a <= -1`) are always
//! part of the system; [`Polytope::build`] injects whichever of them the
//! caller did not supply. Fixing coordinates one at a time produces a
//! [`ReducedPolytope`], which keeps the base matrix and only tracks the
//! adjusted right-hand side.

use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{lp, rng_from_seed, Error, Result, ALGEBRA_TOLERANCE};

/// Total number of rejected candidate constraints tolerated by
/// [`gen_random_halfspaces`].
pub const RANDOM_RETRY_BUDGET: usize = 1000;

/// Largest dimension supported by [`gen_hull_polytope`].
pub const MAX_HULL_DIM: usize = 4;

/// A nonempty convex polytope inside the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    n: usize,
    /// Row-major `m x n`.
    coeffs: Vec<f64>,
    limits: Vec<f64>,
    /// Rows `0..user_rows` were supplied by the caller, the rest were injected.
    user_rows: usize,
}

impl Polytope {
    /// Builds the system from caller rows, injecting missing simplex rows and
    /// certifying feasibility with one LP solve.
    pub fn build(coeffs: Vec<Vec<f64>>, limits: Vec<f64>, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::DimensionMismatch(format!("need at least 2 entities, got {n}")));
        }
        if coeffs.len() != limits.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} coefficient rows but {} limits",
                coeffs.len(),
                limits.len()
            )));
        }
        let mut flat = Vec::with_capacity((coeffs.len() + n + 2) * n);
        for (k, row) in coeffs.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "row {k} has {} coefficients, expected {n}",
                    row.len()
                )));
            }
            if row.iter().chain(std::iter::once(&limits[k])).any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("row {k} is not finite")));
            }
            flat.extend_from_slice(row);
        }
        let user_rows = coeffs.len();
        let mut p = Polytope { n, coeffs: flat, limits, user_rows };
        for (row, limit) in simplex_rows(n) {
            if !p.has_row(&row, limit) {
                p.coeffs.extend_from_slice(&row);
                p.limits.push(limit);
            }
        }
        if !lp::feasible(&p.root())? {
            return Err(Error::InfeasibleSystem);
        }
        Ok(p)
    }

    /// The unconstrained standard simplex over `n` entities.
    pub fn simplex(n: usize) -> Result<Self> {
        Self::build(Vec::new(), Vec::new(), n)
    }

    fn has_row(&self, row: &[f64], limit: f64) -> bool {
        (0..self.m()).any(|k| self.row(k) == row && self.limits[k] == limit)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of rows, including injected simplex rows.
    pub fn m(&self) -> usize {
        self.limits.len()
    }

    /// Number of rows supplied by the caller.
    pub fn user_rows(&self) -> usize {
        self.user_rows
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.coeffs[k * self.n..(k + 1) * self.n]
    }

    pub fn coeff(&self, k: usize, j: usize) -> f64 {
        self.coeffs[k * self.n + j]
    }

    pub fn limits(&self) -> &[f64] {
        &self.limits
    }

    /// The system before any coordinate is fixed.
    pub fn root(&self) -> ReducedPolytope<'_> {
        ReducedPolytope { base: self, fixed: Vec::with_capacity(self.n), live_limits: self.limits.clone() }
    }

    /// Componentwise `max(0, (C a)_k - b_k)`.
    pub fn violation_cost(&self, a: &[f64]) -> Result<Vec<f64>> {
        if a.len() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "action has {} entries, polytope has {} entities",
                a.len(),
                self.n
            )));
        }
        Ok((0..self.m())
            .map(|k| {
                let lhs: f64 = self.row(k).iter().zip(a).map(|(c, x)| c * x).sum();
                (lhs - self.limits[k]).max(0.0)
            })
            .collect())
    }

    /// Largest entry of [`Polytope::violation_cost`].
    pub fn max_violation(&self, a: &[f64]) -> Result<f64> {
        Ok(self.violation_cost(a)?.into_iter().fold(0.0, f64::max))
    }

    pub fn contains(&self, a: &[f64], tol: f64) -> bool {
        self.max_violation(a).is_ok_and(|v| v <= tol)
    }

    /// Same system with columns reordered: new column `j` is old column
    /// `perm[j]`.
    pub fn permute_columns(&self, perm: &[usize]) -> Result<Polytope> {
        let mut seen = vec![false; self.n];
        if perm.len() != self.n || perm.iter().any(|&j| j >= self.n || std::mem::replace(&mut seen[j], true)) {
            return Err(Error::InvalidArgument(format!("{perm:?} is not a permutation of 0..{}", self.n)));
        }
        let mut coeffs = Vec::with_capacity(self.coeffs.len());
        for k in 0..self.m() {
            let row = self.row(k);
            coeffs.extend(perm.iter().map(|&j| row[j]));
        }
        Ok(Polytope { n: self.n, coeffs, limits: self.limits.clone(), user_rows: self.user_rows })
    }

    /// Hex SHA-256 digest of `n` and every row of the full system.
    pub fn hash_hex(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n as u64).to_le_bytes());
        for k in 0..self.m() {
            for c in self.row(k) {
                h.update(c.to_bits().to_le_bytes());
            }
            h.update(self.limits[k].to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn to_file_format(&self) -> PolytopeFile {
        PolytopeFile {
            n: self.n,
            rows: (0..self.user_rows)
                .map(|k| PolytopeRow { coeffs: self.row(k).to_vec(), limit: self.limits[k] })
                .collect(),
        }
    }

    pub fn from_file_format(file: PolytopeFile) -> Result<Self> {
        let (coeffs, limits) = file.rows.into_iter().map(|r| (r.coeffs, r.limit)).unzip();
        Self::build(coeffs, limits, file.n)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file_format())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_file_format(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// On-disk polytope: only the caller rows, simplex rows are implicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolytopeFile {
    pub n: usize,
    pub rows: Vec<PolytopeRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolytopeRow {
    pub coeffs: Vec<f64>,
    pub limit: f64,
}

fn simplex_rows(n: usize) -> Vec<(Vec<f64>, f64)> {
    let mut rows = Vec::with_capacity(n + 2);
    for i in 0..n {
        let mut r = vec![0.0; n];
        r[i] = -1.0;
        rows.push((r, 0.0));
    }
    rows.push((vec![1.0; n], 1.0));
    rows.push((vec![-1.0; n], -1.0));
    rows
}

/// The feasible set left after fixing a prefix of coordinates.
///
/// `live_limits` equals `base.limits - sum_j fixed[j] * column_j`, updated in
/// fixing order.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedPolytope<'a> {
    base: &'a Polytope,
    fixed: Vec<f64>,
    live_limits: Vec<f64>,
}

impl<'a> ReducedPolytope<'a> {
    pub fn base(&self) -> &'a Polytope {
        self.base
    }

    /// Index of the next coordinate to fix.
    pub fn start_index(&self) -> usize {
        self.fixed.len()
    }

    pub fn fixed_prefix(&self) -> &[f64] {
        &self.fixed
    }

    pub fn live_limits(&self) -> &[f64] {
        &self.live_limits
    }

    /// Fixes the next coordinate to `value` in place.
    ///
    /// The caller guarantees `value` lies in the LP interval of the current
    /// step. Once every coordinate is fixed the remaining rows have no live
    /// columns, and debug builds check them against the algebra tolerance.
    pub fn fix(&mut self, value: f64) {
        let i = self.fixed.len();
        assert!(i < self.base.n, "all coordinates already fixed");
        let n = self.base.n;
        for (k, b) in self.live_limits.iter_mut().enumerate() {
            *b -= value * self.base.coeffs[k * n + i];
        }
        self.fixed.push(value);
        #[cfg(debug_assertions)]
        if self.fixed.len() == n {
            let worst = self.live_limits.iter().fold(0.0f64, |w, &b| w.max(-b));
            debug_assert!(worst <= 1e-6, "reduced system became infeasible by {worst:e}");
        }
    }

    /// Returns the system with the next coordinate fixed to `value`.
    pub fn reduce(&self, value: f64) -> ReducedPolytope<'a> {
        let mut next = self.clone();
        next.fix(value);
        next
    }
}

/// Random-halfspace generator: `k` constraints `sum_j c_j a_j <= b` on random
/// subsets of `2..=n-1` entities with coefficients and limit uniform in
/// `[0, 1]`. A candidate that empties the polytope is redrawn.
pub fn gen_random_halfspaces(n: usize, k: usize, seed: u64) -> Result<Polytope> {
    if n < 2 {
        return Err(Error::DimensionMismatch(format!("need at least 2 entities, got {n}")));
    }
    let mut rng = rng_from_seed(seed);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut limits = Vec::with_capacity(k);
    let mut retries = 0;
    let max_affected = (n - 1).max(2);
    while rows.len() < k {
        let affected = rng.random_range(2..=max_affected);
        let mut row = vec![0.0; n];
        for j in index::sample(&mut rng, n, affected) {
            row[j] = rng.random::<f64>();
        }
        let limit = rng.random::<f64>();
        rows.push(row);
        limits.push(limit);
        match Polytope::build(rows.clone(), limits.clone(), n) {
            Ok(_) => {}
            Err(Error::InfeasibleSystem) => {
                rows.pop();
                limits.pop();
                retries += 1;
                if retries >= RANDOM_RETRY_BUDGET {
                    return Err(Error::GenerationFailed { retries });
                }
            }
            Err(e) => return Err(e),
        }
    }
    Polytope::build(rows, limits, n)
}

/// One draw from the flat Dirichlet over the `n`-simplex.
pub fn flat_dirichlet<R: rand::Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut x: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = x.iter().sum();
    x.iter_mut().for_each(|v| *v /= s);
    x
}

/// Convex hull of `points` flat-Dirichlet draws, as a halfspace system.
///
/// The points live on the plane `sum a = 1`, so a facet through `n - 1` of
/// them is written as the homogeneous row `c . a <= 0` whose hyperplane also
/// contains the origin. Every `(n-1)`-subset whose row leaves all points on
/// one side becomes a facet; duplicates are merged.
pub fn gen_hull_polytope(n: usize, points: usize, seed: u64) -> Result<Polytope> {
    if !(2..=MAX_HULL_DIM).contains(&n) {
        return Err(Error::InvalidArgument(format!("hull generator supports 2 <= n <= {MAX_HULL_DIM}, got {n}")));
    }
    let mut rng = rng_from_seed(seed);
    let pts: Vec<Vec<f64>> = (0..points).map(|_| flat_dirichlet(&mut rng, n)).collect();
    hull_from_points(&pts)
}

/// Halfspace system of the convex hull of points on the simplex plane.
pub fn hull_from_points(pts: &[Vec<f64>]) -> Result<Polytope> {
    let n = pts.first().map(Vec::len).unwrap_or(0);
    if !(2..=MAX_HULL_DIM).contains(&n) || pts.iter().any(|p| p.len() != n) {
        return Err(Error::InvalidArgument("hull points must share a dimension in 2..=4".into()));
    }
    if matrix_rank(pts, 1e-10) < n {
        return Err(Error::DegenerateHull(format!("{} points do not span the {n}-simplex plane", pts.len())));
    }
    let side_tol = 1e-12;
    let mut facets: Vec<Vec<f64>> = Vec::new();
    for subset in combinations(pts.len(), n - 1) {
        let rows: Vec<&[f64]> = subset.iter().map(|&s| pts[s].as_slice()).collect();
        let mut c = orthogonal_complement(&rows, n);
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            continue;
        }
        c.iter_mut().for_each(|v| *v /= norm);
        let sides: Vec<f64> = pts.iter().map(|p| dot(&c, p)).collect();
        if sides.iter().all(|&s| s >= -side_tol) {
            c.iter_mut().for_each(|v| *v = -*v);
        } else if !sides.iter().all(|&s| s <= side_tol) {
            continue;
        }
        if !facets.iter().any(|f| f.iter().zip(&c).all(|(a, b)| (a - b).abs() < 1e-9)) {
            facets.push(c);
        }
    }
    let limits = vec![0.0; facets.len()];
    Polytope::build(facets, limits, n)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Generalized cross product of `n - 1` vectors in `R^n` via cofactors.
fn orthogonal_complement(rows: &[&[f64]], n: usize) -> Vec<f64> {
    (0..n)
        .map(|skip| {
            let minor: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| r.iter().enumerate().filter(|&(j, _)| j != skip).map(|(_, &v)| v).collect())
                .collect();
            let sign = if skip % 2 == 0 { 1.0 } else { -1.0 };
            sign * det(minor)
        })
        .collect()
}

fn det(mut m: Vec<Vec<f64>>) -> f64 {
    let n = m.len();
    let mut d = 1.0;
    for col in 0..n {
        let piv = (col..n).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs())).unwrap();
        if m[piv][col] == 0.0 {
            return 0.0;
        }
        if piv != col {
            m.swap(piv, col);
            d = -d;
        }
        d *= m[col][col];
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            for c in col..n {
                m[r][c] -= f * m[col][c];
            }
        }
    }
    d
}

fn matrix_rank(rows: &[Vec<f64>], tol: f64) -> usize {
    let mut m: Vec<Vec<f64>> = rows.to_vec();
    let cols = m.first().map(Vec::len).unwrap_or(0);
    let mut rank = 0;
    for col in 0..cols {
        let Some(piv) = (rank..m.len()).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs())) else {
            break;
        };
        if m[piv][col].abs() <= tol {
            continue;
        }
        m.swap(piv, rank);
        for r in 0..m.len() {
            if r != rank {
                let f = m[r][col] / m[rank][col];
                for c in col..cols {
                    m[r][c] -= f * m[rank][c];
                }
            }
        }
        rank += 1;
    }
    rank
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

/// Checks that `a` lies on the simplex within the algebra tolerance.
pub fn on_simplex(a: &[f64]) -> bool {
    a.iter().all(|&x| x >= -ALGEBRA_TOLERANCE) && (a.iter().sum::<f64>() - 1.0).abs() <= ALGEBRA_TOLERANCE
}
