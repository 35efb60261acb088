//! Four-parameter beta law: `Beta(alpha, beta)` mapped affinely onto
//! `[lo, hi]`.

use rand_distr::{Distribution, Gamma};

use crate::lp::{CoordinateBounds, DEGENERATE_WIDTH};
use crate::special::{digamma, ln_beta, trigamma};
use crate::{Error, Result};

/// Inward clamp applied to samples and to evaluation points at the support
/// boundary.
pub const BOUNDARY_CLAMP: f64 = 1e-12;

/// Clamp applied to normalized samples before maximum-likelihood fitting.
pub const FIT_CLAMP: f64 = 1e-6;

/// Minimum sample count accepted by [`mle_fit`].
pub const MIN_FIT_SAMPLES: usize = 30;

const NEWTON_MAX_ITERS: usize = 100;
const NEWTON_GRAD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FourParamBeta {
    pub alpha: f64,
    pub beta: f64,
    pub lo: f64,
    pub hi: f64,
}

impl FourParamBeta {
    pub fn new(alpha: f64, beta: f64, lo: f64, hi: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite() && beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("beta shapes must be positive, got ({alpha}, {beta})")));
        }
        if !(hi - lo >= DEGENERATE_WIDTH) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidArgument(format!("support [{lo}, {hi}] is degenerate")));
        }
        Ok(FourParamBeta { alpha, beta, lo, hi })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    fn clamp_point(&self, x: f64) -> Result<f64> {
        if x < self.lo - BOUNDARY_CLAMP || x > self.hi + BOUNDARY_CLAMP || x.is_nan() {
            return Err(Error::OutOfSupport { x, lo: self.lo, hi: self.hi });
        }
        // only points on or just past an end move; the open interval is exact
        Ok(if x <= self.lo {
            self.lo + BOUNDARY_CLAMP
        } else if x >= self.hi {
            self.hi - BOUNDARY_CLAMP
        } else {
            x
        })
    }

    pub fn log_pdf(&self, x: f64) -> Result<f64> {
        let x = self.clamp_point(x)?;
        let (a, b) = (self.alpha, self.beta);
        Ok((a - 1.0) * (x - self.lo).ln() + (b - 1.0) * (self.hi - x).ln()
            - (a + b - 1.0) * self.width().ln()
            - ln_beta(a, b))
    }

    /// Partial derivatives of [`Self::log_pdf`] with respect to `(alpha, beta)`.
    pub fn grad_log_pdf(&self, x: f64) -> Result<(f64, f64)> {
        let x = self.clamp_point(x)?;
        let lw = self.width().ln();
        let psi_sum = digamma(self.alpha + self.beta);
        Ok((
            (x - self.lo).ln() - lw - digamma(self.alpha) + psi_sum,
            (self.hi - x).ln() - lw - digamma(self.beta) + psi_sum,
        ))
    }

    /// `lo + (hi - lo) Z` with `Z = G_a / (G_a + G_b)`, kept strictly inside
    /// the support.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let ga = Gamma::new(self.alpha, 1.0).expect("validated shape").sample(rng);
        let gb = Gamma::new(self.beta, 1.0).expect("validated shape").sample(rng);
        let mut z = ga / (ga + gb);
        if !z.is_finite() {
            // Both gamma draws underflowed; fall back to the mean.
            z = self.alpha / (self.alpha + self.beta);
        }
        (self.lo + self.width() * z).clamp(self.lo + BOUNDARY_CLAMP, self.hi - BOUNDARY_CLAMP)
    }

    pub fn mean(&self) -> f64 {
        self.lo + self.width() * self.alpha / (self.alpha + self.beta)
    }

    /// Differential entropy in nats.
    pub fn entropy(&self) -> f64 {
        let (a, b) = (self.alpha, self.beta);
        ln_beta(a, b) - (a - 1.0) * digamma(a) - (b - 1.0) * digamma(b) + (a + b - 2.0) * digamma(a + b)
            + self.width().ln()
    }

    /// Partial derivatives of [`Self::entropy`] with respect to `(alpha, beta)`.
    pub fn grad_entropy(&self) -> (f64, f64) {
        let (a, b) = (self.alpha, self.beta);
        let t_sum = (a + b - 2.0) * trigamma(a + b);
        (-(a - 1.0) * trigamma(a) + t_sum, -(b - 1.0) * trigamma(b) + t_sum)
    }
}

/// Distribution of one autoregressive step: a beta on the feasible interval,
/// or a point mass when the interval collapsed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepLaw {
    Beta(FourParamBeta),
    Forced(f64),
}

impl StepLaw {
    pub fn new(alpha: f64, beta: f64, bounds: CoordinateBounds) -> Result<Self> {
        if bounds.is_forced() {
            Ok(StepLaw::Forced(0.5 * (bounds.lo + bounds.hi)))
        } else {
            FourParamBeta::new(alpha, beta, bounds.lo, bounds.hi).map(StepLaw::Beta)
        }
    }

    pub fn is_forced(&self) -> bool {
        matches!(self, StepLaw::Forced(_))
    }

    /// Forced steps contribute zero log-density.
    pub fn log_pdf(&self, x: f64) -> Result<f64> {
        match self {
            StepLaw::Beta(d) => d.log_pdf(x),
            StepLaw::Forced(_) => Ok(0.0),
        }
    }

    pub fn entropy(&self) -> f64 {
        match self {
            StepLaw::Beta(d) => d.entropy(),
            StepLaw::Forced(_) => 0.0,
        }
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            StepLaw::Beta(d) => d.sample(rng),
            StepLaw::Forced(at) => *at,
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            StepLaw::Beta(d) => d.mean(),
            StepLaw::Forced(at) => *at,
        }
    }
}

/// Result of [`mle_fit`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaFit {
    pub alpha: f64,
    pub beta: f64,
    /// False when Newton failed and the method-of-moments estimate was
    /// returned instead.
    pub converged: bool,
    pub iterations: usize,
}

/// Maximum-likelihood `Beta(alpha, beta)` fit of samples in `[0, 1]`.
///
/// Starts from the method-of-moments estimate and runs Newton on the digamma
/// score equations with step halving.
pub fn mle_fit(samples: &[f64]) -> Result<BetaFit> {
    if samples.len() < MIN_FIT_SAMPLES {
        return Err(Error::FitFailed(format!("need at least {MIN_FIT_SAMPLES} samples, got {}", samples.len())));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::FitFailed("non-finite sample".into()));
    }
    let n = samples.len() as f64;
    let clamped = samples.iter().map(|&x| x.clamp(FIT_CLAMP, 1.0 - FIT_CLAMP));
    let (mut sum, mut sum_sq, mut s_log, mut s_log1m) = (0.0, 0.0, 0.0, 0.0);
    for x in clamped {
        sum += x;
        sum_sq += x * x;
        s_log += x.ln();
        s_log1m += (1.0 - x).ln();
    }
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    let common = mean * (1.0 - mean) / var - 1.0;
    if !(var > 0.0) || !(common > 0.0) || !common.is_finite() {
        return Err(Error::FitFailed(format!("degenerate sample moments (mean {mean}, var {var})")));
    }
    let moments = (mean * common, (1.0 - mean) * common);
    let (s_log, s_log1m) = (s_log / n, s_log1m / n);

    let objective = |a: f64, b: f64| (a - 1.0) * s_log + (b - 1.0) * s_log1m - ln_beta(a, b);
    let (mut a, mut b) = moments;
    let mut f = objective(a, b);
    for iter in 0..NEWTON_MAX_ITERS {
        let psi_ab = digamma(a + b);
        let g = (s_log - digamma(a) + psi_ab, s_log1m - digamma(b) + psi_ab);
        if g.0.hypot(g.1) < NEWTON_GRAD_TOL {
            return Ok(BetaFit { alpha: a, beta: b, converged: true, iterations: iter });
        }
        let t_ab = trigamma(a + b);
        let (h11, h12, h22) = (t_ab - trigamma(a), t_ab, t_ab - trigamma(b));
        let det = h11 * h22 - h12 * h12;
        if !(det.is_finite() && det != 0.0) {
            break;
        }
        // Newton direction -H^{-1} g.
        let da = -(h22 * g.0 - h12 * g.1) / det;
        let db = -(-h12 * g.0 + h11 * g.1) / det;
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let (na, nb) = (a + step * da, b + step * db);
            if na > 0.0 && nb > 0.0 {
                let nf = objective(na, nb);
                if nf.is_finite() && nf >= f - 1e-14 * f.abs().max(1.0) {
                    a = na;
                    b = nb;
                    f = nf;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted || !(a.is_finite() && b.is_finite()) {
            break;
        }
    }
    log::warn!("beta MLE did not converge; using method-of-moments estimate {moments:?}");
    Ok(BetaFit { alpha: moments.0, beta: moments.1, converged: false, iterations: NEWTON_MAX_ITERS })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;

    #[test]
    fn log_pdf_examples() {
        let u = FourParamBeta::new(1.0, 1.0, 0.0, 1.0).unwrap();
        assert!(u.log_pdf(0.37).unwrap().abs() < 1e-15);
        let h = FourParamBeta::new(1.0, 1.0, 0.0, 0.5).unwrap();
        assert!((h.log_pdf(0.2).unwrap() - 2f64.ln()).abs() < 1e-14);
        let d = FourParamBeta::new(2.0, 5.0, 0.0, 1.0).unwrap();
        let expected = (30.0 * 0.2 * 0.8f64.powi(4)).ln();
        assert!((d.log_pdf(0.2).unwrap() - expected).abs() < 1e-13);
    }

    #[test]
    fn log_pdf_support_handling() {
        let d = FourParamBeta::new(2.0, 2.0, 0.2, 0.7).unwrap();
        assert!(matches!(d.log_pdf(0.1), Err(Error::OutOfSupport { .. })));
        assert!(matches!(d.log_pdf(0.7 + 1e-9), Err(Error::OutOfSupport { .. })));
        // Within the clamp tolerance the point moves inward and stays finite.
        assert!(d.log_pdf(0.7 + 5e-13).unwrap().is_finite());
        assert!(d.log_pdf(0.2).unwrap().is_finite());
    }

    #[test]
    fn affine_equivariance() {
        let unit = FourParamBeta::new(2.5, 0.7, 0.0, 1.0).unwrap();
        let moved = FourParamBeta::new(2.5, 0.7, 0.2, 0.7).unwrap();
        for &t in &[0.05, 0.3, 0.61, 0.93] {
            let lhs = moved.log_pdf(0.2 + 0.5 * t).unwrap();
            let rhs = unit.log_pdf(t).unwrap() - 0.5f64.ln();
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn entropy_examples() {
        assert!(FourParamBeta::new(1.0, 1.0, 0.0, 1.0).unwrap().entropy().abs() < 1e-14);
        let h = FourParamBeta::new(1.0, 1.0, 0.0, 0.5).unwrap().entropy();
        assert!((h - 0.5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn sample_means() {
        let mut rng = rng_from_seed(11);
        for (a, b, lo, hi, target) in
            [(1.0, 1.0, 0.0, 1.0, 0.5), (2.0, 2.0, 0.2, 0.8, 0.5), (2.0, 5.0, 0.0, 1.0, 2.0 / 7.0)]
        {
            let d = FourParamBeta::new(a, b, lo, hi).unwrap();
            let n = 100_000;
            let mean = (0..n).map(|_| d.sample(&mut rng)).sum::<f64>() / n as f64;
            assert!((mean - target).abs() < 0.005, "({a},{b}) mean {mean}");
        }
    }

    #[test]
    fn samples_stay_strictly_inside() {
        let mut rng = rng_from_seed(3);
        let d = FourParamBeta::new(0.01, 0.01, 0.1, 0.3).unwrap();
        for _ in 0..10_000 {
            let x = d.sample(&mut rng);
            assert!(x > 0.1 && x < 0.3);
            assert!(d.log_pdf(x).unwrap().is_finite());
        }
    }

    #[test]
    fn forced_step_is_a_point_mass() {
        let law = StepLaw::new(2.0, 3.0, CoordinateBounds { lo: 0.4, hi: 0.4 }).unwrap();
        assert!(law.is_forced());
        assert_eq!(law.log_pdf(0.4).unwrap(), 0.0);
        assert_eq!(law.entropy(), 0.0);
        assert_eq!(law.sample(&mut rng_from_seed(0)), 0.4);
    }

    #[test]
    fn invalid_parameters() {
        assert!(FourParamBeta::new(0.0, 1.0, 0.0, 1.0).is_err());
        assert!(FourParamBeta::new(1.0, f64::NAN, 0.0, 1.0).is_err());
        assert!(FourParamBeta::new(1.0, 1.0, 0.5, 0.5).is_err());
    }

    #[test]
    fn fit_recovers_parameters() {
        let mut rng = rng_from_seed(5);
        for (a, b) in [(2.0, 5.0), (1.0, 1.0), (0.5, 8.0), (8.0, 0.5)] {
            let d = FourParamBeta::new(a, b, 0.0, 1.0).unwrap();
            let xs: Vec<f64> = (0..100_000).map(|_| d.sample(&mut rng)).collect();
            let fit = mle_fit(&xs).unwrap();
            assert!(fit.converged);
            assert!((fit.alpha / a - 1.0).abs() < 0.03, "alpha {} vs {a}", fit.alpha);
            assert!((fit.beta / b - 1.0).abs() < 0.03, "beta {} vs {b}", fit.beta);
        }
    }

    #[test]
    fn fit_errors() {
        assert!(matches!(mle_fit(&[0.5; 10]), Err(Error::FitFailed(_))));
        assert!(matches!(mle_fit(&[0.5; 100]), Err(Error::FitFailed(_))));
    }
}
