#![allow(dead_code)]

use polyalloc::Polytope;

pub fn fig2b() -> Polytope {
    Polytope::build(vec![vec![0.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]], vec![0.6, 0.7], 3).unwrap()
}

/// Tanh-sinh quadrature over `[0, w]`. The integrand receives the distances
/// to both ends so endpoint singularities keep full precision.
pub fn tanh_sinh<F: Fn(f64, f64) -> f64>(w: f64, f: F) -> f64 {
    let h = 1.0 / 128.0;
    let half_pi = std::f64::consts::FRAC_PI_2;
    let mut sum = 0.0;
    let steps = (4.0 / h) as i64;
    for k in -steps..=steps {
        let t = k as f64 * h;
        let u = half_pi * t.sinh();
        let d_lo = w / (1.0 + (-2.0 * u).exp());
        let d_hi = w / (1.0 + (2.0 * u).exp());
        if d_lo <= 0.0 || d_hi <= 0.0 {
            continue;
        }
        // dx/dt = w/2 * sech^2(u) * pi/2 cosh t
        let sech = 1.0 / u.cosh();
        let weight = 0.5 * w * sech * sech * half_pi * t.cosh();
        let v = f(d_lo, d_hi);
        if v.is_finite() {
            sum += weight * v;
        }
    }
    sum * h
}

pub fn ln_beta_fn(a: f64, b: f64) -> f64 {
    statrs::function::gamma::ln_gamma(a) + statrs::function::gamma::ln_gamma(b) - statrs::function::gamma::ln_gamma(a + b)
}

/// Beta density on `[lo, lo + w]` from the distances to both ends.
pub fn beta_density(alpha: f64, beta: f64, w: f64, d_lo: f64, d_hi: f64) -> f64 {
    ((alpha - 1.0) * d_lo.ln() + (beta - 1.0) * d_hi.ln() - (alpha + beta - 1.0) * w.ln() - ln_beta_fn(alpha, beta)).exp()
}

fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[piv][c].abs() < 1e-10 {
            return None;
        }
        a.swap(c, piv);
        b.swap(c, piv);
        for r in 0..n {
            if r != c {
                let f = a[r][c] / a[c][c];
                if f != 0.0 {
                    for k in c..n {
                        a[r][k] -= f * a[c][k];
                    }
                    b[r] -= f * b[c];
                }
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

fn subsets(m: usize, k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if cur.len() == k {
        out.push(cur.clone());
        return;
    }
    for i in start..m {
        cur.push(i);
        subsets(m, k, i + 1, cur, out);
        cur.pop();
    }
}

/// Vertices of `{a : C a <= b, a_j = prefix_j}` by trying every set of `n`
/// tight constraints.
pub fn vertices(p: &Polytope, prefix: &[f64]) -> Vec<Vec<f64>> {
    let n = p.n();
    let mut rows: Vec<Vec<f64>> = (0..p.m()).map(|k| p.row(k).to_vec()).collect();
    let mut limits = p.limits().to_vec();
    let fixed = prefix.len();
    for (j, &v) in prefix.iter().enumerate() {
        let mut r = vec![0.0; n];
        r[j] = 1.0;
        rows.push(r);
        limits.push(v);
    }
    let m = rows.len();
    let mut combos = Vec::new();
    subsets(m - fixed, n - fixed, 0, &mut Vec::new(), &mut combos);
    let mut out = Vec::new();
    for c in combos {
        let mut a: Vec<Vec<f64>> = c.iter().map(|&k| rows[k].clone()).collect();
        let mut b: Vec<f64> = c.iter().map(|&k| limits[k]).collect();
        a.extend(rows[m - fixed..].iter().cloned());
        b.extend_from_slice(&limits[m - fixed..]);
        if let Some(x) = solve(a, b) {
            let ok = rows.iter().zip(&limits).all(|(r, &l)| r.iter().zip(&x).map(|(c, v)| c * v).sum::<f64>() <= l + 1e-9);
            if ok {
                out.push(x);
            }
        }
    }
    out
}

/// Central difference of `f` at `x` along coordinate `i`.
pub fn central_diff<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[i] += h;
    xm[i] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

/// Relative error with an absolute floor for gradients that vanish.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}
