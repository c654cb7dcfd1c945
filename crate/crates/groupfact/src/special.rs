//! Modified Bessel function of the second kind on the log scale, and moments
//! of the generalized inverse-Gaussian (GIG) and Gamma distributions.
//!
//! The GIG family used throughout has unnormalized density
//! `x^{gamma-1} exp(-rho x - tau / x)` on (0, inf), which contains the Gamma
//! distribution as the `tau = 0` limit and the inverse-Gamma as `rho = 0`.
//!
//! `log_bessel_k` combines Temme's series for small argument with a Steed
//! continued fraction for large argument, followed by upward recurrence in the
//! order with log-scale renormalization, so it neither overflows for tiny
//! arguments nor underflows for large ones.

use crate::error::{Error, Result};
use statrs::function::gamma::{digamma, ln_gamma};

/// Parameters of a GIG distribution: density `∝ x^{gamma-1} exp(-rho x - tau/x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GigParams {
    /// Order; unconstrained sign, but `gamma > 0` required when `tau = 0`
    /// and `gamma < 0` when `rho = 0`.
    pub gamma: f64,
    /// Linear-term rate, `>= 0`.
    pub rho: f64,
    /// Inverse-term rate, `>= 0`.
    pub tau: f64,
}

/// Expectations of a GIG variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GigMoments {
    pub e_x: f64,
    pub e_inv_x: f64,
    pub e_log_x: f64,
}

/// Below this, `tau` (or `rho`) is treated as exactly zero and the
/// degenerate Gamma (or inverse-Gamma) closed forms are used.
pub const DEGENERATE_EPS: f64 = 1e-12;

/// Step for the central finite difference of `d/dnu log K_nu`.
const ORDER_DERIV_STEP: f64 = 1e-5;

impl GigParams {
    pub fn new(gamma: f64, rho: f64, tau: f64) -> Result<Self> {
        let p = GigParams { gamma, rho, tau };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.gamma.is_finite() || !self.rho.is_finite() || !self.tau.is_finite() {
            return Err(Error::domain("GigParams", "non-finite parameter"));
        }
        if self.rho < 0.0 || self.tau < 0.0 {
            return Err(Error::domain("GigParams", "rho and tau must be >= 0"));
        }
        if self.rho <= 0.0 && self.tau <= 0.0 {
            return Err(Error::domain("GigParams", "rho and tau cannot both be 0"));
        }
        if self.tau <= 0.0 && self.gamma <= 0.0 {
            return Err(Error::domain("GigParams", "tau = 0 requires gamma > 0"));
        }
        if self.rho <= 0.0 && self.gamma >= 0.0 {
            return Err(Error::domain("GigParams", "rho = 0 requires gamma < 0"));
        }
        Ok(())
    }
}

// zeta(2), zeta(3), ..., zeta(50); used by the reciprocal-gamma series.
const ZETA: [f64; 49] = [
    1.6449340668482264365,
    1.2020569031595942854,
    1.0823232337111381915,
    1.0369277551433699263,
    1.0173430619844491397,
    1.0083492773819228268,
    1.0040773561979443394,
    1.0020083928260822144,
    1.0009945751278180853,
    1.0004941886041194646,
    1.0002460865533080483,
    1.0001227133475784891,
    1.0000612481350587048,
    1.0000305882363070205,
    1.0000152822594086519,
    1.0000076371976378998,
    1.0000038172932649998,
    1.0000019082127165539,
    1.0000009539620338728,
    1.0000004769329867878,
    1.0000002384505027277,
    1.0000001192199259653,
    1.0000000596081890513,
    1.0000000298035035147,
    1.0000000149015548284,
    1.0000000074507117898,
    1.0000000037253340248,
    1.0000000018626597235,
    1.0000000009313274324,
    1.0000000004656629065,
    1.0000000002328311834,
    1.0000000001164155017,
    1.0000000000582077209,
    1.0000000000291038504,
    1.0000000000145519219,
    1.0000000000072759598,
    1.0000000000036379795,
    1.0000000000018189897,
    1.0000000000009094948,
    1.0000000000004547474,
    1.0000000000002273737,
    1.0000000000001136868,
    1.0000000000000568434,
    1.0000000000000284217,
    1.0000000000000142109,
    1.0000000000000071054,
    1.0000000000000035527,
    1.0000000000000017764,
    1.0000000000000008882,
];

const EULER_GAMMA: f64 = 0.5772156649015328606;

/// Temme's auxiliary quantities for |mu| <= 0.5:
/// gam1 = (1/Gamma(1-mu) - 1/Gamma(1+mu)) / (2 mu)   (limit -> Euler gamma)
/// gam2 = (1/Gamma(1-mu) + 1/Gamma(1+mu)) / 2
/// gampl = 1/Gamma(1+mu), gammi = 1/Gamma(1-mu)
///
/// Computed from log 1/Gamma(1+t) = EULER_GAMMA t + sum_{k>=2} (-1)^{k+1} zeta(k) t^k / k,
/// split into even part `s` and odd part `-d`, which sidesteps the
/// cancellation in gam1 as mu -> 0.
fn reciprocal_gamma_parts(mu: f64) -> (f64, f64, f64, f64) {
    debug_assert!(mu.abs() <= 0.5 + 1e-12);
    let mu2 = mu * mu;
    // s = even part of log(1/Gamma(1+t)) at t = mu; d_over_mu = -(odd part)/mu
    let mut s = 0.0;
    let mut d_over_mu = -EULER_GAMMA;
    let mut tpow = mu2; // mu^k for even k, starting k = 2
    for k in (2..=50).step_by(2) {
        // even k term of h(t): (-1)^{k+1} zeta(k) t^k / k = -zeta(k) t^k / k
        let se = -ZETA[k - 2] * tpow / k as f64;
        s += se;
        // odd k+1 term contributes to d_over_mu: -zeta(k+1) mu^k / (k+1)
        if k < 50 {
            d_over_mu -= ZETA[k - 1] * tpow / (k + 1) as f64;
        }
        tpow *= mu2;
        if se.abs() < 1e-18 {
            break;
        }
    }
    let d = d_over_mu * mu;
    let es = s.exp();
    let sinh_d_over_d = if d.abs() < 1e-5 {
        1.0 + d * d / 6.0
    } else {
        d.sinh() / d
    };
    let gam1 = es * sinh_d_over_d * d_over_mu;
    let gam2 = es * d.cosh();
    let gampl = (s - d).exp(); // 1/Gamma(1+mu)
    let gammi = (s + d).exp(); // 1/Gamma(1-mu)
    (gam1, gam2, gampl, gammi)
}

/// Temme's series for K_mu(x), K_{mu+1}(x), valid for x <= 2, |mu| <= 0.5.
fn bessel_k_temme(mu: f64, x: f64) -> (f64, f64) {
    const EPS: f64 = f64::EPSILON;
    let x2 = 0.5 * x;
    let pimu = std::f64::consts::PI * mu;
    let fact = if pimu.abs() < EPS { 1.0 } else { pimu / pimu.sin() };
    let d = -x2.ln();
    let e = mu * d;
    let fact2 = if e.abs() < EPS { 1.0 } else { e.sinh() / e };
    let (gam1, gam2, gampl, gammi) = reciprocal_gamma_parts(mu);
    let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
    let mut sum = ff;
    let e = e.exp();
    let mut p = 0.5 * e / gampl;
    let mut q = 0.5 / (e * gammi);
    let mut c = 1.0;
    let d2 = x2 * x2;
    let mut sum1 = p;
    let mu2 = mu * mu;
    for i in 1..=1000 {
        let fi = i as f64;
        ff = (fi * ff + p + q) / (fi * fi - mu2);
        c *= d2 / fi;
        p /= fi - mu;
        q /= fi + mu;
        let del = c * ff;
        sum += del;
        let del1 = c * (p - fi * ff);
        sum1 += del1;
        if del.abs() < sum.abs() * EPS {
            break;
        }
    }
    (sum, sum1 * 2.0 / x)
}

/// Steed's continued fraction for x > 2: returns (log K_mu(x), K_{mu+1}/K_mu).
fn bessel_k_steed(mu: f64, x: f64) -> (f64, f64) {
    const EPS: f64 = f64::EPSILON;
    let mu2 = mu * mu;
    let mut b = 2.0 * (1.0 + x);
    let mut d = 1.0 / b;
    let mut delh = d;
    let mut h = delh;
    let mut q1 = 0.0;
    let mut q2 = 1.0;
    let a1 = 0.25 - mu2;
    let mut q = a1;
    let mut c = a1;
    let mut a = -a1;
    let mut s = 1.0 + q * delh;
    for i in 1..10000 {
        a -= 2.0 * i as f64;
        c = -a * c / (i as f64 + 1.0);
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh = (b * d - 1.0) * delh;
        h += delh;
        let dels = q * delh;
        s += dels;
        if (dels / s).abs() <= EPS {
            break;
        }
    }
    let h = a1 * h;
    let log_kmu = 0.5 * (std::f64::consts::PI / (2.0 * x)).ln() - x - s.ln();
    let ratio = (mu + x + 0.5 - h) / x;
    (log_kmu, ratio)
}

/// log K_nu(x) for x > 0 and finite nu; symmetric in the order.
///
/// Works entirely in scaled/log form, so it is usable for arguments down to
/// the denormal range and for x up to 1e4 and beyond without overflow.
pub fn log_bessel_k(nu: f64, x: f64) -> Result<f64> {
    if !nu.is_finite() || !x.is_finite() {
        return Err(Error::domain("log_bessel_k", "non-finite input"));
    }
    if x <= 0.0 {
        return Err(Error::domain("log_bessel_k", format!("x must be > 0, got {x}")));
    }
    let nu = nu.abs();
    let nl = (nu + 0.5).floor() as usize;
    let mu = nu - nl as f64;
    // K_mu and K_{mu+1} in the form k * exp(lscale)
    let (mut k0, mut k1, mut lscale) = if x <= 2.0 {
        let (kmu, kmu1) = bessel_k_temme(mu, x);
        (kmu, kmu1, 0.0)
    } else {
        let (log_kmu, ratio) = bessel_k_steed(mu, x);
        (1.0, ratio, log_kmu)
    };
    if nl == 0 {
        return Ok(lscale + k0.ln());
    }
    let xi2 = 2.0 / x;
    for i in 1..nl {
        let knext = (mu + i as f64) * xi2 * k1 + k0;
        k0 = k1;
        k1 = knext;
        if k1 > 1e280 {
            let sc = k1;
            k0 /= sc;
            k1 = 1.0;
            lscale += sc.ln();
        }
    }
    Ok(lscale + k1.ln())
}

/// d/dnu log K_nu(x), central difference in log space.
fn dlog_bessel_k_dnu(nu: f64, x: f64) -> Result<f64> {
    let h = ORDER_DERIV_STEP;
    let hi = log_bessel_k(nu + h, x)?;
    let lo = log_bessel_k(nu - h, x)?;
    Ok((hi - lo) / (2.0 * h))
}

/// Log of the GIG normalizer: log Z = log 2 + (gamma/2) log(tau/rho) + log K_gamma(2 sqrt(rho tau)).
/// Valid only for rho, tau > 0.
fn gig_log_norm_raw(gamma: f64, rho: f64, tau: f64) -> Result<f64> {
    let z = 2.0 * (0.5 * (rho.ln() + tau.ln())).exp();
    Ok(std::f64::consts::LN_2 + 0.5 * gamma * (tau.ln() - rho.ln()) + log_bessel_k(gamma, z)?)
}

/// Moments of the GIG with the degenerate limits folded in: `tau` below
/// `DEGENERATE_EPS` uses the Gamma(gamma, rho) closed forms, `rho` below it
/// the inverse-Gamma ones.
pub fn gig_moments(p: GigParams) -> Result<GigMoments> {
    p.validate()?;
    let GigParams { gamma, rho, tau } = p;
    if tau <= DEGENERATE_EPS {
        if gamma <= 0.0 {
            return Err(Error::domain("gig_moments", "tau ~ 0 requires gamma > 0"));
        }
        let e_inv_x = if gamma > 1.0 {
            rho / (gamma - 1.0)
        } else {
            return Err(Error::MomentUndefined { gamma });
        };
        return Ok(GigMoments {
            e_x: gamma / rho,
            e_inv_x,
            e_log_x: digamma(gamma) - rho.ln(),
        });
    }
    if rho <= DEGENERATE_EPS {
        // inverse-Gamma(-gamma, tau)
        let shape = -gamma;
        if shape <= 0.0 {
            return Err(Error::domain("gig_moments", "rho ~ 0 requires gamma < 0"));
        }
        if shape <= 1.0 {
            return Err(Error::MomentUndefined { gamma });
        }
        return Ok(GigMoments {
            e_x: tau / (shape - 1.0),
            e_inv_x: shape / tau,
            e_log_x: tau.ln() - digamma(shape),
        });
    }
    let z = 2.0 * (0.5 * (rho.ln() + tau.ln())).exp();
    let lkg = log_bessel_k(gamma, z)?;
    let lkp = log_bessel_k(gamma + 1.0, z)?;
    let lkm = log_bessel_k(gamma - 1.0, z)?;
    let half_lt_lr = 0.5 * (tau.ln() - rho.ln());
    let e_x = (half_lt_lr + lkp - lkg).exp();
    let e_inv_x = (-half_lt_lr + lkm - lkg).exp();
    let e_log_x = half_lt_lr + dlog_bessel_k_dnu(gamma, z)?;
    let m = GigMoments { e_x, e_inv_x, e_log_x };
    if !e_x.is_finite() || !e_inv_x.is_finite() || !e_log_x.is_finite() {
        return Err(Error::NonFinite {
            context: "gig_moments".into(),
            index: format!("gamma={gamma}, rho={rho}, tau={tau}"),
        });
    }
    Ok(m)
}

/// Differential entropy -E_q[log q(x)] of the GIG (or its Gamma limit):
/// `log Z - (gamma-1) E[log x] + rho E[x] + tau E[1/x]`.
pub fn gig_entropy(p: GigParams, m: GigMoments) -> Result<f64> {
    p.validate()?;
    let GigParams { gamma, rho, tau } = p;
    if tau <= DEGENERATE_EPS {
        // Gamma(gamma, rho) closed form; avoids E[1/x] entirely
        return Ok(gamma - rho.ln() + ln_gamma(gamma) + (1.0 - gamma) * digamma(gamma));
    }
    if rho <= DEGENERATE_EPS {
        let shape = -gamma;
        return Ok(shape + tau.ln() + ln_gamma(shape) - (1.0 + shape) * digamma(shape));
    }
    let log_z = gig_log_norm_raw(gamma, rho, tau)?;
    Ok(log_z - (gamma - 1.0) * m.e_log_x + rho * m.e_x + tau * m.e_inv_x)
}

/// Expected log-density of Gamma(shape, rate) under a distribution with the
/// given moments: `shape log(rate) - log Gamma(shape) + (shape-1) E[log x] - rate E[x]`.
pub fn gamma_cross_entropy(shape: f64, rate: f64, m: GigMoments) -> Result<f64> {
    if !(shape > 0.0) || !(rate > 0.0) {
        return Err(Error::domain(
            "gamma_cross_entropy",
            format!("shape and rate must be > 0, got shape={shape}, rate={rate}"),
        ));
    }
    Ok(shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * m.e_log_x - rate * m.e_x)
}

/// Internal lenient moments for the inference loop, kept on the log scale.
///
/// Differences from `gig_moments`:
/// - no `DEGENERATE_EPS` clamp: only `tau == 0` exactly takes the Gamma branch,
///   so coordinate updates stay exact maximizers;
/// - `E[1/x]` is returned as a log value, `+inf` when it diverges
///   (Gamma branch with gamma <= 1);
/// - the factor's entropy is bundled in, with `tau * E[1/x]` evaluated as
///   `exp(log tau + log E[1/x])` so it cannot overflow spuriously.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LogMoments {
    pub e_x: f64,
    /// log E[1/x]; may be +inf.
    pub log_e_inv: f64,
    pub e_log: f64,
    pub entropy: f64,
}

pub(crate) fn gig_log_moments(gamma: f64, rho: f64, tau: f64) -> Result<LogMoments> {
    if tau <= 0.0 {
        if gamma <= 0.0 || rho <= 0.0 {
            return Err(Error::domain("gig_log_moments", "gamma and rho must be > 0 when tau = 0"));
        }
        let log_e_inv = if gamma > 1.0 {
            rho.ln() - (gamma - 1.0).ln()
        } else {
            f64::INFINITY
        };
        return Ok(LogMoments {
            e_x: gamma / rho,
            log_e_inv,
            e_log: digamma(gamma) - rho.ln(),
            entropy: gamma - rho.ln() + ln_gamma(gamma) + (1.0 - gamma) * digamma(gamma),
        });
    }
    let z = 2.0 * (0.5 * (rho.ln() + tau.ln())).exp();
    if z <= 0.0 {
        return Err(Error::NonFinite {
            context: "gig_log_moments".into(),
            index: format!("underflowed Bessel argument, rho={rho}, tau={tau}"),
        });
    }
    let lkg = log_bessel_k(gamma, z)?;
    let lkp = log_bessel_k(gamma + 1.0, z)?;
    let lkm = log_bessel_k(gamma - 1.0, z)?;
    let half_lt_lr = 0.5 * (tau.ln() - rho.ln());
    let e_x = (half_lt_lr + lkp - lkg).exp();
    let log_e_inv = -half_lt_lr + lkm - lkg;
    let e_log = half_lt_lr + dlog_bessel_k_dnu(gamma, z)?;
    let log_z = std::f64::consts::LN_2 + gamma * half_lt_lr + lkg;
    let entropy = log_z - (gamma - 1.0) * e_log + rho * e_x + (tau.ln() + log_e_inv).exp();
    if !e_x.is_finite() || !e_log.is_finite() || !entropy.is_finite() || log_e_inv.is_nan() {
        return Err(Error::NonFinite {
            context: "gig_log_moments".into(),
            index: format!("gamma={gamma}, rho={rho}, tau={tau}"),
        });
    }
    Ok(LogMoments { e_x, log_e_inv, e_log, entropy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn bessel_half_order_closed_form() {
        // K_{1/2}(x) = sqrt(pi/(2x)) e^{-x}
        for &x in &[0.1, 0.5, 2.0, 10.0, 500.0, 2000.0] {
            let expected = 0.5 * (std::f64::consts::PI / (2.0 * x)).ln() - x;
            assert_relative_eq!(log_bessel_k(0.5, x).unwrap(), expected, max_relative = 1e-12);
            assert_relative_eq!(log_bessel_k(-0.5, x).unwrap(), expected, max_relative = 1e-12);
        }
    }

    #[test]
    fn bessel_frozen_values() {
        // mpmath (50 digits)
        assert_relative_eq!(
            log_bessel_k(3.7, 0.01).unwrap(),
            20.338690143099134463,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            log_bessel_k(0.5, 2.0).unwrap(),
            -2.1207822376352452223,
            max_relative = 1e-12
        );
    }

    #[test]
    fn bessel_domain_errors() {
        assert!(log_bessel_k(1.0, 0.0).is_err());
        assert!(log_bessel_k(1.0, -1.0).is_err());
        assert!(log_bessel_k(f64::NAN, 1.0).is_err());
        assert!(log_bessel_k(1.0, f64::INFINITY).is_err());
    }

    #[test]
    fn bessel_no_overflow_small_argument_large_order() {
        let v = log_bessel_k(50.0, 1e-8).unwrap();
        assert!(v.is_finite());
        // K_50(1e-8) ~ Gamma(50)/2 * (2e8)^50: log ~ lnGamma(50) - ln2 + 50 ln(2e8)
        let approx_v = ln_gamma(50.0) - std::f64::consts::LN_2 + 50.0 * (2.0e8f64).ln();
        assert_relative_eq!(v, approx_v, max_relative = 1e-10);
        // denormal-range arguments stay finite too
        assert!(log_bessel_k(1.5, 1e-160).unwrap().is_finite());
    }

    #[test]
    fn bessel_monotone_in_x() {
        for &nu in &[0.0, 0.3, 1.0, 7.5, 20.0] {
            let xs = [1e-6, 1e-3, 0.1, 1.0, 1.9, 2.1, 10.0, 100.0, 5000.0];
            for w in xs.windows(2) {
                assert!(
                    log_bessel_k(nu, w[0]).unwrap() > log_bessel_k(nu, w[1]).unwrap(),
                    "K_{nu} not decreasing between {} and {}",
                    w[0],
                    w[1]
                );
            }
        }
    }

    proptest! {
        #[test]
        fn bessel_order_symmetry(nu in 0.0f64..20.0, lx in -4.0f64..3.0) {
            let x = 10f64.powf(lx);
            let a = log_bessel_k(nu, x).unwrap();
            let b = log_bessel_k(-nu, x).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        #[test]
        fn bessel_three_term_recurrence(nu in 0.0f64..20.0, lx in -4.0f64..3.0) {
            // K_{nu+1}(x) = K_{nu-1}(x) + (2 nu / x) K_nu(x), checked in log space
            let x = 10f64.powf(lx);
            let lkp = log_bessel_k(nu + 1.0, x).unwrap();
            let lkm = log_bessel_k(nu - 1.0, x).unwrap();
            let lk = log_bessel_k(nu, x).unwrap();
            // log(K_{nu-1} + (2nu/x) K_nu) via log-sum-exp against lkp
            let t1 = lkm;
            let t2 = (2.0 * nu / x).ln() + lk;
            let m = t1.max(t2);
            let rhs = if m.is_finite() { m + ((t1 - m).exp() + (t2 - m).exp()).ln() } else { m };
            prop_assert!((lkp - rhs).abs() <= 1e-9 * lkp.abs().max(1.0),
                "nu={} x={} lhs={} rhs={}", nu, x, lkp, rhs);
        }

        #[test]
        fn gig_jensen_inequality(gamma in -3.0f64..6.0, lr in -2.0f64..2.0, lt in -2.0f64..2.0) {
            let p = GigParams { gamma, rho: 10f64.powf(lr), tau: 10f64.powf(lt) };
            let m = gig_moments(p).unwrap();
            prop_assert!(m.e_x * m.e_inv_x >= 1.0 - 1e-12);
            prop_assert!(m.e_x.ln() >= m.e_log_x - 1e-12);
        }
    }

    #[test]
    fn gamma_limit_moments() {
        // Gamma(2, 3): E[x] = 2/3, E[1/x] = 3, E[log x] = digamma(2) - log 3
        let m = gig_moments(GigParams { gamma: 2.0, rho: 3.0, tau: 0.0 }).unwrap();
        assert_relative_eq!(m.e_x, 2.0 / 3.0, max_relative = 1e-14);
        assert_relative_eq!(m.e_inv_x, 3.0, max_relative = 1e-14);
        assert_relative_eq!(m.e_log_x, digamma(2.0) - 3f64.ln(), max_relative = 1e-12);
    }

    #[test]
    fn gamma_limit_continuity() {
        // GIG moments at tau = 1e-12 agree with the Gamma closed forms
        for &gamma in &[1.5, 2.0, 5.0] {
            for &rho in &[0.5, 1.0, 3.0] {
                let gig = gig_moments(GigParams { gamma, rho, tau: 1e-12 }).unwrap();
                assert_relative_eq!(gig.e_x, gamma / rho, max_relative = 1e-6);
                assert_relative_eq!(gig.e_inv_x, rho / (gamma - 1.0), max_relative = 1e-6);
                assert_relative_eq!(
                    gig.e_log_x,
                    digamma(gamma) - rho.ln(),
                    max_relative = 1e-6
                );
            }
        }
    }

    #[test]
    fn moment_undefined_for_small_shape() {
        let err = gig_moments(GigParams { gamma: 0.5, rho: 1.0, tau: 0.0 }).unwrap_err();
        assert!(matches!(err, Error::MomentUndefined { .. }));
    }

    #[test]
    fn gig_frozen_moments() {
        // GIG(1.5, 2, 1) from an mpmath quadrature oracle (50 digits)
        let m = gig_moments(GigParams { gamma: 1.5, rho: 2.0, tau: 1.0 }).unwrap();
        assert_relative_eq!(m.e_x, 1.27240774992748289, max_relative = 1e-10);
        assert_relative_eq!(m.e_inv_x, 1.04481549985496577, max_relative = 1e-10);
        assert_relative_eq!(m.e_log_x, 0.102759380129055115, epsilon = 1e-9);
    }

    #[test]
    fn entropy_exponential_limit() {
        // Gamma(1,1) = Exp(1) has entropy 1; E[1/x] diverges at gamma = 1
        // and must not enter the entropy path
        let p = GigParams { gamma: 1.0, rho: 1.0, tau: 0.0 };
        let m = GigMoments { e_x: 1.0, e_inv_x: f64::NAN, e_log_x: digamma(1.0) };
        assert_relative_eq!(gig_entropy(p, m).unwrap(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn entropy_gamma_closed_form() {
        for &(gamma, rho) in &[(0.1, 0.1), (2.5, 0.7), (7.0, 3.0)] {
            let p = GigParams { gamma, rho, tau: 0.0 };
            let expected = gamma - rho.ln() + ln_gamma(gamma) + (1.0 - gamma) * digamma(gamma);
            // E[1/x] may be undefined; the entropy path must not need it
            let m = GigMoments {
                e_x: gamma / rho,
                e_inv_x: f64::NAN,
                e_log_x: digamma(gamma) - rho.ln(),
            };
            assert_relative_eq!(gig_entropy(p, m).unwrap(), expected, max_relative = 1e-12);
        }
    }

    #[test]
    fn entropy_gig_frozen() {
        // -int q log q for GIG(1.5, 2, 1), mpmath quadrature
        let p = GigParams { gamma: 1.5, rho: 2.0, tau: 1.0 };
        let m = gig_moments(p).unwrap();
        assert_relative_eq!(gig_entropy(p, m).unwrap(), 0.891775222877576665, max_relative = 1e-9);
    }

    #[test]
    fn cross_entropy_cases() {
        // shape = rate = 1 with Exp(1) moments: E[log e^{-x}] = -1
        let m = GigMoments { e_x: 1.0, e_inv_x: f64::NAN, e_log_x: digamma(1.0) };
        assert_relative_eq!(gamma_cross_entropy(1.0, 1.0, m).unwrap(), -1.0, max_relative = 1e-12);

        // q = p: cross-entropy = -entropy
        let p = GigParams { gamma: 0.1, rho: 0.1, tau: 0.0 };
        let m = GigMoments {
            e_x: 1.0,
            e_inv_x: f64::NAN,
            e_log_x: digamma(0.1) - 0.1f64.ln(),
        };
        let ce = gamma_cross_entropy(0.1, 0.1, m).unwrap();
        let ent = gig_entropy(p, m).unwrap();
        assert_relative_eq!(ce, -ent, max_relative = 1e-12);

        // frozen: shape = rate = 0.1 under GIG(1.5, 2, 1) moments (mpmath)
        let m = gig_moments(GigParams { gamma: 1.5, rho: 2.0, tau: 1.0 }).unwrap();
        assert_relative_eq!(
            gamma_cross_entropy(0.1, 0.1, m).unwrap(),
            -2.70269537814250842,
            max_relative = 1e-9
        );

        assert!(gamma_cross_entropy(-1.0, 1.0, m).is_err());
        assert!(gamma_cross_entropy(1.0, 0.0, m).is_err());
    }

    #[test]
    fn log_moments_degenerate_branch() {
        let lm = gig_log_moments(0.1, 2.0, 0.0).unwrap();
        assert!(lm.log_e_inv.is_infinite());
        assert_relative_eq!(lm.e_x, 0.05, max_relative = 1e-14);
        assert!(lm.entropy.is_finite());

        // gamma > 1: finite log E[1/x]
        let lm = gig_log_moments(2.0, 3.0, 0.0).unwrap();
        assert_relative_eq!(lm.log_e_inv.exp(), 3.0, max_relative = 1e-12);
    }

    #[test]
    fn log_moments_tiny_tau_stay_finite() {
        let lm = gig_log_moments(0.1, 30.0, 1e-300).unwrap();
        assert!(lm.e_x.is_finite() && lm.e_x > 0.0);
        assert!(lm.log_e_inv.is_finite());
        assert!(lm.entropy.is_finite());
        // approaches the Gamma mean
        assert_relative_eq!(lm.e_x, 0.1 / 30.0, max_relative = 1e-6);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(GigParams::new(1.0, 0.0, 0.0).is_err());
        assert!(GigParams::new(-1.0, 1.0, 0.0).is_err());
        assert!(GigParams::new(1.0, 0.0, 1.0).is_err()); // rho = 0 needs gamma < 0
        assert!(GigParams::new(-2.0, 0.0, 1.0).is_ok());
        assert!(GigParams::new(f64::NAN, 1.0, 1.0).is_err());
        assert!(GigParams::new(1.0, -0.5, 1.0).is_err());
    }
}
