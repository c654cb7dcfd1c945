//! Shared helpers for the integration suites: an adaptive-quadrature GIG
//! moment oracle that never touches Bessel functions, and basis-matching
//! utilities.

/// GIG moments computed by adaptive Simpson quadrature of the unnormalized
/// density, integrated over u = log x so both tails decay doubly
/// exponentially. Independent of the library's Bessel-based path.
#[derive(Debug, Clone, Copy)]
pub struct OracleMoments {
    pub e_x: f64,
    pub e_inv_x: f64,
    pub e_log_x: f64,
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, eps: f64) -> f64 {
    fn step(
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        eps: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        // Stop on the usual Richardson estimate or when the panel is so
        // narrow that round-off dominates; eps below ~1e-13 on an O(1)
        // integrand can otherwise never be met.
        if depth == 0 || delta.abs() <= 15.0 * eps.max(1e-13) || b - a < 1e-7 {
            left + right + delta / 15.0
        } else {
            step(f, a, m, fa, flm, fm, left, 0.5 * eps, depth - 1)
                + step(f, m, b, fm, frm, fb, right, 0.5 * eps, depth - 1)
        }
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, eps, 48)
}

/// Quadrature oracle for the distribution with density proportional to
/// `x^(gamma-1) exp(-rho x - tau / x)`.
pub fn gig_oracle(gamma: f64, rho: f64, tau: f64) -> OracleMoments {
    assert!(rho > 0.0 && tau > 0.0, "oracle needs a nondegenerate GIG");
    // peak of the log-density in u = log x, used as an exponent shift
    let x_star = (gamma + (gamma * gamma + 4.0 * rho * tau).sqrt()) / (2.0 * rho);
    let g = |u: f64| gamma * u - rho * u.exp() - tau * (-u).exp();
    let shift = g(x_star.ln());
    let density = move |u: f64| (g(u) - shift).exp();
    // Integrate over fixed panels so zeros of the integrand at the probe
    // nodes cannot fool the adaptive termination test. The density in u has
    // curvature at least 2 sqrt(rho tau) at its mode, so its width is at
    // least 1/sqrt(2 sqrt(rho tau)); panels of width 1/16 guarantee several
    // probe nodes land inside the spike for every grid point under test.
    let panels = |f: &dyn Fn(f64) -> f64| -> f64 {
        let w = 1.0 / 16.0;
        (-960..960).map(|k| adaptive_simpson(&f, w * k as f64, w * (k + 1) as f64, 1e-13)).sum()
    };
    let z = panels(&density);
    let e_x = panels(&|u| u.exp() * density(u)) / z;
    let e_inv_x = panels(&|u| (-u).exp() * density(u)) / z;
    let e_log_x = panels(&|u| u * density(u)) / z;
    OracleMoments { e_x, e_inv_x, e_log_x }
}

/// Cosine similarity of two vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Best column assignment between estimate and truth (both M x K), returning
/// the mean cosine similarity over the optimally matched pairs. Exhaustive
/// over permutations, which is exact for the small K used in the tests.
pub fn matched_mean_cosine(estimate: &ndarray::Array2<f64>, truth: &ndarray::Array2<f64>) -> f64 {
    let k = truth.ncols();
    assert_eq!(estimate.ncols(), k);
    let est: Vec<Vec<f64>> = (0..k).map(|i| estimate.column(i).to_vec()).collect();
    let tru: Vec<Vec<f64>> = (0..k).map(|i| truth.column(i).to_vec()).collect();
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = f64::NEG_INFINITY;
    permute(&mut perm, 0, &mut |p| {
        let score: f64 =
            (0..k).map(|i| cosine(&est[p[i]], &tru[i])).sum::<f64>() / k as f64;
        if score > best {
            best = score;
        }
    });
    best
}

fn permute(items: &mut Vec<usize>, start: usize, visit: &mut impl FnMut(&[usize])) {
    if start == items.len() {
        visit(items);
        return;
    }
    for i in start..items.len() {
        items.swap(start, i);
        permute(items, start + 1, visit);
        items.swap(start, i);
    }
}
