//! Coordinate-ascent variational inference.
//!
//! Every latent entry gets a GIG variational factor. One sweep refreshes the
//! Jensen/Taylor auxiliary parameters before each factor update, so each step
//! is an exact coordinate maximization of the same bound and the bound is
//! non-decreasing across sweeps.
//!
//! Weighted products such as `pi2^2 X psi_j^2 E[1/S_I]` are evaluated as a
//! single exponent sum on the log scale. A vanishing weight (log = -inf)
//! always dominates a divergent moment (log = +inf): the weight is the
//! reciprocal of the moment it multiplies, so the true limit of the product
//! is zero. This makes the degenerate Gamma branch (tau = 0, shape <= 1,
//! infinite E[1/x]) an ordinary, absorbing state of the ascent rather than
//! a numerical failure.

use crate::error::{Error, Result};
use crate::model::{GroupedDataset, Hyperparams};
use crate::special::{gig_log_moments, GigMoments, GigParams};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{BufRead, Write};
use std::time::Instant;

/// Relative rho jitter applied at initialization to break symmetry.
const INIT_JITTER: f64 = 0.1;
/// tau/rho ratio at initialization; keeps every E[1/x] finite.
const INIT_TAU_FRACTION: f64 = 1e-3;

/// One grid of GIG factors (struct-of-arrays) with cached moments.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorGrid {
    pub gamma: Array2<f64>,
    pub rho: Array2<f64>,
    pub tau: Array2<f64>,
    /// E[x]
    pub e_x: Array2<f64>,
    /// log E[1/x]; +inf where the moment diverges (tau = 0, gamma <= 1)
    pub log_e_inv: Array2<f64>,
    /// E[log x]
    pub e_log: Array2<f64>,
    /// -E[log q]
    pub entropy: Array2<f64>,
}

impl FactorGrid {
    fn from_params(gamma: Array2<f64>, rho: Array2<f64>, tau: Array2<f64>) -> Result<Self> {
        let dim = gamma.raw_dim();
        let mut g = FactorGrid {
            gamma,
            rho,
            tau,
            e_x: Array2::zeros(dim),
            log_e_inv: Array2::zeros(dim),
            e_log: Array2::zeros(dim),
            entropy: Array2::zeros(dim),
        };
        g.refresh_moments()?;
        Ok(g)
    }

    /// Recomputes all cached moments from (gamma, rho, tau).
    pub fn refresh_moments(&mut self) -> Result<()> {
        for idx in ndarray::indices(self.gamma.raw_dim()) {
            let lm = gig_log_moments(self.gamma[idx], self.rho[idx], self.tau[idx])?;
            self.e_x[idx] = lm.e_x;
            self.log_e_inv[idx] = lm.log_e_inv;
            self.e_log[idx] = lm.e_log;
            self.entropy[idx] = lm.entropy;
        }
        Ok(())
    }

    pub fn params(&self, i: usize, j: usize) -> GigParams {
        GigParams { gamma: self.gamma[[i, j]], rho: self.rho[[i, j]], tau: self.tau[[i, j]] }
    }

    /// Cached moments; `e_inv_x` is +inf where it diverges.
    pub fn moments(&self, i: usize, j: usize) -> GigMoments {
        GigMoments {
            e_x: self.e_x[[i, j]],
            e_inv_x: self.log_e_inv[[i, j]].exp(),
            e_log_x: self.e_log[[i, j]],
        }
    }
}

/// Variational state: one GIG factor per latent entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    /// (M, K) common-basis factors.
    pub q_ac: FactorGrid,
    /// Per-subject (M, J) individual-basis factors.
    pub q_ai: Vec<FactorGrid>,
    /// Per-subject (J, N_l) activation factors.
    pub q_si: Vec<FactorGrid>,
}

impl Posterior {
    pub fn num_features(&self) -> usize {
        self.q_ac.gamma.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.q_ac.gamma.ncols()
    }

    pub fn num_individual(&self) -> usize {
        self.q_ai.first().map_or(0, |g| g.gamma.ncols())
    }

    pub fn num_subjects(&self) -> usize {
        self.q_ai.len()
    }

    /// Posterior-mean common basis E[A_C], M x K.
    pub fn mean_common_basis(&self) -> Array2<f64> {
        self.q_ac.e_x.clone()
    }

    /// Flat CSV: factor, subject, row, col, gamma, rho, tau.
    /// Floats use shortest round-trip formatting, so load(save(p)) == p bitwise.
    pub fn save_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let werr = |e| Error::io("<posterior csv>", e);
        writeln!(out, "factor,subject,row,col,gamma,rho,tau").map_err(werr)?;
        let mut dump = |name: &str, subject: usize, g: &FactorGrid| -> Result<()> {
            for ((i, j), _) in g.gamma.indexed_iter() {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    name,
                    subject,
                    i + 1,
                    j + 1,
                    g.gamma[[i, j]],
                    g.rho[[i, j]],
                    g.tau[[i, j]]
                )
                .map_err(werr)?;
            }
            Ok(())
        };
        dump("A_C", 0, &self.q_ac)?;
        for (l, g) in self.q_ai.iter().enumerate() {
            dump("A_I", l + 1, g)?;
        }
        for (l, g) in self.q_si.iter().enumerate() {
            dump("S_I", l + 1, g)?;
        }
        Ok(())
    }

    pub fn load_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut rows: Vec<(String, usize, usize, usize, f64, f64, f64)> = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<posterior csv>", e))?;
            let line = line.trim();
            if line.is_empty() || (lineno == 0 && line.starts_with("factor")) {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 7 {
                return Err(Error::Parse {
                    path: "<posterior csv>".into(),
                    row: lineno + 1,
                    col: parts.len(),
                    message: "expected 7 comma-separated fields".into(),
                });
            }
            let parse_u = |s: &str, col: usize| {
                s.parse::<usize>().map_err(|_| Error::Parse {
                    path: "<posterior csv>".into(),
                    row: lineno + 1,
                    col,
                    message: format!("bad integer {s:?}"),
                })
            };
            let parse_f = |s: &str, col: usize| {
                s.parse::<f64>().map_err(|_| Error::Parse {
                    path: "<posterior csv>".into(),
                    row: lineno + 1,
                    col,
                    message: format!("bad float {s:?}"),
                })
            };
            rows.push((
                parts[0].to_string(),
                parse_u(parts[1], 2)?,
                parse_u(parts[2], 3)?,
                parse_u(parts[3], 4)?,
                parse_f(parts[4], 5)?,
                parse_f(parts[5], 6)?,
                parse_f(parts[6], 7)?,
            ));
        }
        let build = |name: &str, subject: usize| -> Result<Option<FactorGrid>> {
            let sel: Vec<_> = rows.iter().filter(|r| r.0 == name && r.1 == subject).collect();
            if sel.is_empty() {
                return Ok(None);
            }
            let nr = sel.iter().map(|r| r.2).max().unwrap();
            let nc = sel.iter().map(|r| r.3).max().unwrap();
            let mut gamma = Array2::from_elem((nr, nc), f64::NAN);
            let mut rho = Array2::zeros((nr, nc));
            let mut tau = Array2::zeros((nr, nc));
            for r in &sel {
                gamma[[r.2 - 1, r.3 - 1]] = r.4;
                rho[[r.2 - 1, r.3 - 1]] = r.5;
                tau[[r.2 - 1, r.3 - 1]] = r.6;
            }
            if gamma.iter().any(|v| v.is_nan()) {
                return Err(Error::Data {
                    path: "<posterior csv>".into(),
                    message: format!("incomplete {name} grid for subject {subject}"),
                });
            }
            Ok(Some(FactorGrid::from_params(gamma, rho, tau)?))
        };
        let q_ac = build("A_C", 0)?.ok_or_else(|| Error::Data {
            path: "<posterior csv>".into(),
            message: "missing A_C factor".into(),
        })?;
        let mut q_ai = Vec::new();
        let mut q_si = Vec::new();
        for l in 1.. {
            match (build("A_I", l)?, build("S_I", l)?) {
                (Some(ai), Some(si)) => {
                    q_ai.push(ai);
                    q_si.push(si);
                }
                (None, None) => break,
                _ => {
                    return Err(Error::Data {
                        path: "<posterior csv>".into(),
                        message: format!("subject {l} has only one of A_I / S_I"),
                    })
                }
            }
        }
        if q_ai.is_empty() {
            return Err(Error::Data {
                path: "<posterior csv>".into(),
                message: "no per-subject factors".into(),
            });
        }
        Ok(Posterior { q_ac, q_ai, q_si })
    }
}

/// Jensen/Taylor auxiliary parameters for one dataset.
///
/// `phi` is one-hot at the frame label and is represented by the label
/// vector; use [`AuxState::phi`] to materialize a row.
#[derive(Debug, Clone)]
pub struct AuxState {
    /// Per-subject (M, J, N_l) simplex weights over individual bases.
    pub psi: Vec<Array3<f64>>,
    /// Per-subject (M, N_l) weight on the common side; pi2 = 1 - pi1.
    pub pi1: Vec<Array2<f64>>,
    /// Per-subject (M, N_l) Taylor expansion points, strictly positive.
    pub w: Vec<Array2<f64>>,
    pub(crate) log_pi1: Vec<Array2<f64>>,
    pub(crate) log_pi2: Vec<Array2<f64>>,
    pub(crate) log_psi: Vec<Array3<f64>>,
}

impl AuxState {
    /// One-hot K-vector for (subject, frame).
    pub fn phi(labels: &[Vec<usize>], num_classes: usize, l: usize, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; num_classes];
        v[labels[l][n] - 1] = 1.0;
        v
    }

    /// Overrides one pi1 weight (clamped to [0, 1]), e.g. to probe the bound
    /// away from its maximizer.
    pub fn set_pi1(&mut self, l: usize, m: usize, n: usize, value: f64) {
        let v = value.clamp(0.0, 1.0);
        self.pi1[l][[m, n]] = v;
        self.log_pi1[l][[m, n]] = v.ln();
        self.log_pi2[l][[m, n]] = (1.0 - v).ln();
    }

    /// Overrides one psi simplex (weights are normalized; must be nonnegative
    /// with a positive sum).
    pub fn set_psi(&mut self, l: usize, m: usize, n: usize, weights: &[f64]) -> Result<()> {
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|&v| v < 0.0) || !(sum > 0.0) {
            return Err(Error::Domain {
                context: "set_psi",
                message: "weights must be nonnegative with positive sum".into(),
            });
        }
        for (j, &v) in weights.iter().enumerate() {
            self.psi[l][[m, j, n]] = v / sum;
            self.log_psi[l][[m, j, n]] = (v / sum).ln();
        }
        Ok(())
    }
}

/// Solver options.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FitOptions {
    pub max_iters: usize,
    pub min_iters: usize,
    /// Stop when |elbo - prev| <= rel_tol * |prev|.
    pub rel_tol: f64,
    pub seed: u64,
    /// Evaluate the bound every this many sweeps (>= 1).
    pub track_elbo_every: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { max_iters: 500, min_iters: 10, rel_tol: 1e-6, seed: 0, track_elbo_every: 1 }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.min_iters < 1 || self.max_iters < self.min_iters {
            return Err(Error::Config(format!(
                "need max_iters >= min_iters >= 1, got {} / {}",
                self.max_iters, self.min_iters
            )));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::Config("rel_tol must be > 0".into()));
        }
        if self.track_elbo_every < 1 {
            return Err(Error::Config("track_elbo_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// One point of the convergence trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub iter: usize,
    pub elbo: f64,
    pub wall_ms: f64,
}

/// Fit output: final posterior plus the bound trace.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub posterior: Posterior,
    pub trace: Vec<TracePoint>,
    pub iterations: usize,
    /// Classes that had no labeled frames (posterior left at prior).
    pub empty_classes: Vec<usize>,
}

pub fn write_trace_csv<W: Write>(trace: &[TracePoint], mut out: W) -> Result<()> {
    let werr = |e| Error::io("<trace csv>", e);
    writeln!(out, "iter,elbo,wall_ms").map_err(werr)?;
    for p in trace {
        writeln!(out, "{},{},{}", p.iter, p.elbo, p.wall_ms).map_err(werr)?;
    }
    Ok(())
}

fn labels_of(data: &GroupedDataset) -> Result<&Vec<Vec<usize>>> {
    data.labels
        .as_ref()
        .ok_or_else(|| Error::Config("operation requires labeled data".into()))
}

/// Prior-shaped GIG factors with multiplicative jitter on rho.
/// A small positive tau (`INIT_TAU_FRACTION * rho`) keeps every E[1/x]
/// finite even for prior shapes <= 1.
pub fn init_posterior(h: &Hyperparams, data: &GroupedDataset, seed: u64) -> Result<Posterior> {
    h.validate()?;
    data.validate(Some(h.k))?;
    let labels = labels_of(data)?;
    let m = data.num_features();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jitter = |base: f64| base * (1.0 + INIT_JITTER * (2.0 * rng.gen::<f64>() - 1.0));

    let gamma = Array2::from_elem((m, h.k), h.a);
    let rho = Array2::from_shape_fn((m, h.k), |_| jitter(h.a));
    let tau = rho.map(|r| INIT_TAU_FRACTION * r);
    let q_ac = FactorGrid::from_params(gamma, rho, tau)?;

    let mut q_ai = Vec::with_capacity(labels.len());
    let mut q_si = Vec::with_capacity(labels.len());
    for y in labels {
        let gamma = Array2::from_elem((m, h.j), h.b);
        let rho = Array2::from_shape_fn((m, h.j), |_| jitter(h.b));
        let tau = rho.map(|r| INIT_TAU_FRACTION * r);
        q_ai.push(FactorGrid::from_params(gamma, rho, tau)?);

        let gamma = Array2::from_shape_fn((h.j, y.len()), |(_, n)| h.c[y[n] - 1]);
        let rho = Array2::from_shape_fn((h.j, y.len()), |(_, n)| jitter(h.c[y[n] - 1]));
        let tau = rho.map(|r| INIT_TAU_FRACTION * r);
        q_si.push(FactorGrid::from_params(gamma, rho, tau)?);
    }
    Ok(Posterior { q_ac, q_ai, q_si })
}

/// log(1 + e^t), stable for all t.
fn log1p_exp(t: f64) -> f64 {
    if t > 33.0 {
        t
    } else if t < -37.0 {
        t.exp()
    } else {
        t.exp().ln_1p()
    }
}

/// Exponent sum where any -inf term forces -inf (a zero weight beats a
/// divergent moment; see module docs).
#[inline]
fn zsum(terms: &[f64]) -> f64 {
    let mut s = 0.0;
    for &t in terms {
        if t == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        s += t;
    }
    s
}

/// Optimal Jensen weights (phi, psi, pi) and Taylor points w for the current
/// posterior. phi is exactly one-hot at the frame label; psi_j is
/// proportional to 1 / (E[1/A_I] E[1/S_I]); pi1 = d / (c + d) with c the
/// common-side and d the individual-side inverse-moment weight. w is the
/// posterior mean of the reconstruction (see [`update_w`]).
pub fn update_aux(post: &Posterior, data: &GroupedDataset) -> Result<AuxState> {
    let labels = labels_of(data)?;
    let k = post.num_classes();
    let j_count = post.num_individual();
    let w = update_w(post, labels)?;
    let mut psi_all = Vec::with_capacity(labels.len());
    let mut pi1_all = Vec::with_capacity(labels.len());
    let mut lpi1_all = Vec::with_capacity(labels.len());
    let mut lpi2_all = Vec::with_capacity(labels.len());
    let mut lpsi_all = Vec::with_capacity(labels.len());
    for (l, y) in labels.iter().enumerate() {
        let m = data.features[l].nrows();
        let n_l = y.len();
        let mut psi = Array3::zeros((m, j_count, n_l));
        let mut lpsi = Array3::zeros((m, j_count, n_l));
        let mut pi1 = Array2::zeros((m, n_l));
        let mut lpi1 = Array2::zeros((m, n_l));
        let mut lpi2 = Array2::zeros((m, n_l));
        for n in 0..n_l {
            let lab = y[n];
            if lab < 1 || lab > k {
                return Err(Error::InvalidLabel {
                    subject: l + 1,
                    frame: n + 1,
                    label: lab as i64,
                    num_classes: k,
                });
            }
            for mi in 0..m {
                // log c = log E[1/(A_C)_{m, y}]
                let lc = post.q_ac.log_e_inv[[mi, lab - 1]];
                // log e_j = log E[1/A_I] + log E[1/S_I]
                let mut max_neg = f64::NEG_INFINITY;
                for jj in 0..j_count {
                    let le_j = post.q_ai[l].log_e_inv[[mi, jj]] + post.q_si[l].log_e_inv[[jj, n]];
                    max_neg = max_neg.max(-le_j);
                }
                let lsum_inv = if max_neg == f64::NEG_INFINITY {
                    // all individual factors dead
                    f64::NEG_INFINITY
                } else {
                    let mut acc = 0.0;
                    for jj in 0..j_count {
                        let le_j =
                            post.q_ai[l].log_e_inv[[mi, jj]] + post.q_si[l].log_e_inv[[jj, n]];
                        acc += (-le_j - max_neg).exp();
                    }
                    max_neg + acc.ln()
                };
                for jj in 0..j_count {
                    let le_j = post.q_ai[l].log_e_inv[[mi, jj]] + post.q_si[l].log_e_inv[[jj, n]];
                    let lp = if lsum_inv == f64::NEG_INFINITY {
                        -(j_count as f64).ln()
                    } else {
                        -le_j - lsum_inv
                    };
                    lpsi[[mi, jj, n]] = lp;
                    psi[[mi, jj, n]] = lp.exp();
                }
                // pi1 = d / (c + d), d = 1 / sum_j 1/e_j  =>  log d = -lsum_inv
                let ld = -lsum_inv;
                let t = if ld.is_infinite() && lc.is_infinite() && ld > 0.0 && lc > 0.0 {
                    0.0 // both sides dead; the bound is -inf here and elbo() will report it
                } else {
                    ld - lc
                };
                pi1[[mi, n]] = 1.0 / (1.0 + (-t).exp());
                lpi1[[mi, n]] = -log1p_exp(-t);
                lpi2[[mi, n]] = -log1p_exp(t);
            }
        }
        psi_all.push(psi);
        pi1_all.push(pi1);
        lpi1_all.push(lpi1);
        lpi2_all.push(lpi2);
        lpsi_all.push(lpsi);
    }
    Ok(AuxState {
        psi: psi_all,
        pi1: pi1_all,
        w,
        log_pi1: lpi1_all,
        log_pi2: lpi2_all,
        log_psi: lpsi_all,
    })
}

/// Taylor expansion points:
/// `w_{lmn} = E[A_C]_{m, y_{ln}} + sum_j E[A_I]_{lmj} E[S_I]_{ljn}`.
pub fn update_w(post: &Posterior, labels: &[Vec<usize>]) -> Result<Vec<Array2<f64>>> {
    let k = post.num_classes();
    let mut out = Vec::with_capacity(labels.len());
    for (l, y) in labels.iter().enumerate() {
        let mut w = post.q_ai[l].e_x.dot(&post.q_si[l].e_x);
        let m = w.nrows();
        for (n, &lab) in y.iter().enumerate() {
            if lab < 1 || lab > k {
                return Err(Error::InvalidLabel {
                    subject: l + 1,
                    frame: n + 1,
                    label: lab as i64,
                    num_classes: k,
                });
            }
            for mi in 0..m {
                w[[mi, n]] += post.q_ac.e_x[[mi, lab - 1]];
            }
        }
        out.push(w);
    }
    Ok(out)
}

/// GIG update for the common basis:
/// gamma = a, rho = a + sum_{ln: y=k} 1/w, tau = sum_{ln: y=k} pi1^2 X.
/// Returns the classes that had no labeled frames.
pub fn update_q_ac(
    post: &mut Posterior,
    aux: &AuxState,
    data: &GroupedDataset,
    h: &Hyperparams,
) -> Result<Vec<usize>> {
    let labels = labels_of(data)?;
    let m = post.num_features();
    let mut rho = Array2::from_elem((m, h.k), h.a);
    let mut tau = Array2::zeros((m, h.k));
    let mut seen = vec![false; h.k];
    for (l, y) in labels.iter().enumerate() {
        let x = &data.features[l];
        for (n, &lab) in y.iter().enumerate() {
            let kk = lab - 1;
            seen[kk] = true;
            for mi in 0..m {
                rho[[mi, kk]] += 1.0 / aux.w[l][[mi, n]];
                let lx = x[[mi, n]].ln();
                tau[[mi, kk]] += zsum(&[2.0 * aux.log_pi1[l][[mi, n]], lx]).exp();
            }
        }
    }
    let empty: Vec<usize> = (0..h.k).filter(|&kk| !seen[kk]).map(|kk| kk + 1).collect();
    for &kk in &empty {
        log::warn!("class {kk} has no labeled frames; its common-basis posterior stays at the prior");
    }
    post.q_ac.gamma.fill(h.a);
    post.q_ac.rho = rho;
    post.q_ac.tau = tau;
    post.q_ac.refresh_moments()?;
    Ok(empty)
}

/// GIG update for the individual bases:
/// gamma = b, rho = b + sum_n E[S_I]/w, tau = sum_n pi2^2 X psi^2 E[1/S_I].
pub fn update_q_ai(
    post: &mut Posterior,
    aux: &AuxState,
    data: &GroupedDataset,
    h: &Hyperparams,
) -> Result<()> {
    let labels = labels_of(data)?;
    let m = post.num_features();
    for l in 0..labels.len() {
        let x = &data.features[l];
        let n_l = labels[l].len();
        let mut rho = Array2::from_elem((m, h.j), h.b);
        let mut tau = Array2::zeros((m, h.j));
        for mi in 0..m {
            for jj in 0..h.j {
                let mut r = 0.0;
                let mut t = 0.0;
                for n in 0..n_l {
                    r += post.q_si[l].e_x[[jj, n]] / aux.w[l][[mi, n]];
                    // pi2^2 X psi_j^2 E[1/S_I], as one exponent sum
                    let le_si = post.q_si[l].log_e_inv[[jj, n]];
                    t += zsum(&[
                        2.0 * aux.log_pi2[l][[mi, n]],
                        x[[mi, n]].ln(),
                        2.0 * aux.log_psi[l][[mi, jj, n]],
                        le_si,
                    ])
                    .exp();
                }
                rho[[mi, jj]] += r;
                tau[[mi, jj]] = t;
            }
        }
        post.q_ai[l].gamma.fill(h.b);
        post.q_ai[l].rho = rho;
        post.q_ai[l].tau = tau;
        post.q_ai[l].refresh_moments()?;
    }
    Ok(())
}

/// GIG update for the activations:
/// gamma = c_y, rho = c_y + sum_m E[A_I]/w, tau = sum_m pi2^2 X psi^2 E[1/A_I].
pub fn update_q_si(
    post: &mut Posterior,
    aux: &AuxState,
    data: &GroupedDataset,
    h: &Hyperparams,
) -> Result<()> {
    let labels = labels_of(data)?;
    let m = post.num_features();
    for (l, y) in labels.iter().enumerate() {
        let x = &data.features[l];
        let n_l = y.len();
        let mut gamma = Array2::zeros((h.j, n_l));
        let mut rho = Array2::zeros((h.j, n_l));
        let mut tau = Array2::zeros((h.j, n_l));
        for n in 0..n_l {
            let c = h.c[y[n] - 1];
            for jj in 0..h.j {
                let mut r = 0.0;
                let mut t = 0.0;
                for mi in 0..m {
                    r += post.q_ai[l].e_x[[mi, jj]] / aux.w[l][[mi, n]];
                    // pi2^2 X psi_j^2 E[1/A_I], as one exponent sum
                    let le_ai = post.q_ai[l].log_e_inv[[mi, jj]];
                    t += zsum(&[
                        2.0 * aux.log_pi2[l][[mi, n]],
                        x[[mi, n]].ln(),
                        2.0 * aux.log_psi[l][[mi, jj, n]],
                        le_ai,
                    ])
                    .exp();
                }
                gamma[[jj, n]] = c;
                rho[[jj, n]] = c + r;
                tau[[jj, n]] = t;
            }
        }
        post.q_si[l].gamma = gamma;
        post.q_si[l].rho = rho;
        post.q_si[l].tau = tau;
        post.q_si[l].refresh_moments()?;
    }
    Ok(())
}

/// Evidence lower bound under the current posterior and auxiliary state.
pub fn elbo(post: &Posterior, aux: &AuxState, data: &GroupedDataset, h: &Hyperparams) -> Result<f64> {
    let labels = labels_of(data)?;
    let mut total = 0.0;
    for (l, y) in labels.iter().enumerate() {
        let x = &data.features[l];
        let m = x.nrows();
        for (n, &lab) in y.iter().enumerate() {
            for mi in 0..m {
                let lx = x[[mi, n]].ln();
                // Jensen: -pi1^2 X E[1/A_C] - pi2^2 X sum_j psi^2 E[1/A_I] E[1/S_I]
                let common = zsum(&[
                    2.0 * aux.log_pi1[l][[mi, n]],
                    lx,
                    post.q_ac.log_e_inv[[mi, lab - 1]],
                ])
                .exp();
                let mut individual = 0.0;
                for jj in 0..h.j {
                    // pi2^2 X psi_j^2 E[1/A_I] E[1/S_I]
                    let le_j = post.q_ai[l].log_e_inv[[mi, jj]] + post.q_si[l].log_e_inv[[jj, n]];
                    individual += zsum(&[
                        2.0 * aux.log_pi2[l][[mi, n]],
                        lx,
                        2.0 * aux.log_psi[l][[mi, jj, n]],
                        le_j,
                    ])
                    .exp();
                }
                // Taylor: -log w + 1 - recon / w
                let w = aux.w[l][[mi, n]];
                let mut recon = post.q_ac.e_x[[mi, lab - 1]];
                for jj in 0..h.j {
                    recon += post.q_ai[l].e_x[[mi, jj]] * post.q_si[l].e_x[[jj, n]];
                }
                let cell = -common - individual - w.ln() + 1.0 - recon / w;
                if !cell.is_finite() {
                    return Err(Error::NonFinite {
                        context: "elbo likelihood term".into(),
                        index: format!("subject {}, feature {}, frame {}", l + 1, mi + 1, n + 1),
                    });
                }
                total += cell;
            }
        }
    }
    // prior cross-entropies and factor entropies
    let ln_gamma_term = |shape: f64, rate: f64, e_x: f64, e_log: f64| {
        shape * rate.ln() - statrs::function::gamma::ln_gamma(shape) + (shape - 1.0) * e_log
            - rate * e_x
    };
    for ((i, j), &ex) in post.q_ac.e_x.indexed_iter() {
        total += ln_gamma_term(h.a, h.a, ex, post.q_ac.e_log[[i, j]]) + post.q_ac.entropy[[i, j]];
    }
    for l in 0..labels.len() {
        for ((i, j), &ex) in post.q_ai[l].e_x.indexed_iter() {
            total +=
                ln_gamma_term(h.b, h.b, ex, post.q_ai[l].e_log[[i, j]]) + post.q_ai[l].entropy[[i, j]];
        }
        for ((jj, n), &ex) in post.q_si[l].e_x.indexed_iter() {
            let c = h.c[labels[l][n] - 1];
            total +=
                ln_gamma_term(c, c, ex, post.q_si[l].e_log[[jj, n]]) + post.q_si[l].entropy[[jj, n]];
        }
    }
    if !total.is_finite() {
        return Err(Error::NonFinite { context: "elbo".into(), index: "total".into() });
    }
    Ok(total)
}

/// Runs coordinate ascent until the bound's relative change drops below
/// `rel_tol` (after `min_iters`) or `max_iters` sweeps.
///
/// Sweep order: aux -> A_C -> aux -> A_I -> aux -> S_I, with the Taylor
/// points refreshed inside every aux step.
pub fn fit(data: &GroupedDataset, h: &Hyperparams, opts: &FitOptions) -> Result<FitResult> {
    h.validate()?;
    opts.validate()?;
    data.validate(Some(h.k))?;
    let start = Instant::now();
    let mut post = init_posterior(h, data, opts.seed)?;
    let mut empty_classes = Vec::new();

    let aux = update_aux(&post, data)?;
    let e0 = elbo(&post, &aux, data, h)?;
    let mut trace = vec![TracePoint { iter: 0, elbo: e0, wall_ms: start.elapsed().as_secs_f64() * 1e3 }];
    let mut prev = e0;
    let mut iterations = 0;
    for iter in 1..=opts.max_iters {
        let aux = update_aux(&post, data)?;
        let empty = update_q_ac(&mut post, &aux, data, h)?;
        if iter == 1 {
            empty_classes = empty;
        }
        let aux = update_aux(&post, data)?;
        update_q_ai(&mut post, &aux, data, h)?;
        let aux = update_aux(&post, data)?;
        update_q_si(&mut post, &aux, data, h)?;
        iterations = iter;
        if iter % opts.track_elbo_every == 0 || iter == opts.max_iters {
            let aux = update_aux(&post, data)?;
            let e = elbo(&post, &aux, data, h)?;
            trace.push(TracePoint {
                iter,
                elbo: e,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
            let rel = (e - prev).abs() / prev.abs().max(f64::MIN_POSITIVE);
            prev = e;
            if iter >= opts.min_iters && rel < opts.rel_tol {
                break;
            }
        }
    }
    Ok(FitResult { posterior: post, trace, iterations, empty_classes })
}
