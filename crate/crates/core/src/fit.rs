//! Least-squares extraction of model parameters from turn-off transmission
//! traces, plus the exponential-envelope sub-fit used on ringing transients.

use nalgebra::{DMatrix, DVector};
use std::io::{BufRead, Write};
use thiserror::Error;

use crate::analytic;
use crate::model::{LambdaParams, ModelError};
use crate::observe;
use crate::TAU;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("trace needs at least 8 samples, got {0}")]
    TooShort(usize),
    #[error("times and transmissions differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("times must ascend strictly (violated at sample {0})")]
    NotAscending(usize),
    #[error("trace contains a non-finite value at sample {0}")]
    NotFinite(usize),
    #[error("line {line}: {what}")]
    Parse { line: usize, what: String },
    #[error("no free parameters")]
    NothingFree,
    #[error("no convergence after {0} iterations")]
    NoConvergence(usize),
    #[error("free directions are collinear (condition {cond:.3e}): {cols}")]
    SingularJacobian { cond: f64, cols: String },
    #[error("need at least 3 interior extrema, found {0}")]
    TooFewExtrema(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A sampled transmission transient. Times in us, strictly ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub times: Vec<f64>,
    pub transmissions: Vec<f64>,
}

impl Trace {
    pub fn new(times: Vec<f64>, transmissions: Vec<f64>) -> Result<Self, FitError> {
        if times.len() != transmissions.len() {
            return Err(FitError::LengthMismatch(times.len(), transmissions.len()));
        }
        if times.len() < 8 {
            return Err(FitError::TooShort(times.len()));
        }
        for (i, (t, y)) in times.iter().zip(&transmissions).enumerate() {
            if !t.is_finite() || !y.is_finite() {
                return Err(FitError::NotFinite(i));
            }
            if i > 0 && *t <= times[i - 1] {
                return Err(FitError::NotAscending(i));
            }
        }
        Ok(Trace { times, transmissions })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn read_csv(r: impl BufRead) -> Result<Self, FitError> {
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (idx, line) in r.lines().enumerate() {
            let line = line?;
            let text = line.trim();
            let lineno = idx + 1;
            if idx == 0 {
                if text != "t_us,transmission" {
                    return Err(FitError::Parse {
                        line: lineno,
                        what: format!("expected header `t_us,transmission`, got `{text}`"),
                    });
                }
                continue;
            }
            if text.is_empty() {
                continue;
            }
            let mut fields = text.split(',');
            let (a, b) = match (fields.next(), fields.next(), fields.next()) {
                (Some(a), Some(b), None) => (a, b),
                _ => {
                    return Err(FitError::Parse {
                        line: lineno,
                        what: "expected two comma-separated fields".into(),
                    })
                }
            };
            let parse = |s: &str| {
                s.trim().parse::<f64>().map_err(|_| FitError::Parse {
                    line: lineno,
                    what: format!("bad number `{}`", s.trim()),
                })
            };
            times.push(parse(a)?);
            values.push(parse(b)?);
        }
        Trace::new(times, values)
    }

    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "t_us,transmission")?;
        for (t, y) in self.times.iter().zip(&self.transmissions) {
            writeln!(w, "{t:.16e},{y:.16e}")?;
        }
        Ok(())
    }
}

/// Affine instrument layer on top of the physical model: the recorded signal
/// is `scale * T + baseline`, switching at absolute time `t0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nuisance {
    pub scale: f64,
    pub t0: f64,
    pub baseline: f64,
}

impl Default for Nuisance {
    fn default() -> Self {
        Nuisance { scale: 1.0, t0: 0.0, baseline: 0.0 }
    }
}

/// Transmission a detector would record at time `t` for a coupling field
/// that switches off at `nu.t0`. Before the switch the trace sits at the
/// steady level of the fully driven system.
pub fn model_turnoff_t(params: &LambdaParams, nu: &Nuisance, t: f64) -> f64 {
    let im = if t < nu.t0 {
        analytic::turnoff_initial_state(params).rho_bc.im
    } else {
        analytic::turnoff_im_rbc(params, t - nu.t0)
    };
    nu.scale * observe::transmission(im, params) + nu.baseline
}

pub const FREE_NAMES: [&str; 8] =
    ["delta2", "omega1", "gamma", "gamma_ba", "u", "scale", "baseline", "t0"];

/// Which directions the optimizer may move. `gamma` frees the two decay
/// branches together (kept equal); the pre-switch populations stay pinned at
/// everything-in-b and are not fittable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreeMask {
    pub delta2: bool,
    pub omega1: bool,
    pub gamma: bool,
    pub gamma_ba: bool,
    pub u: bool,
    pub scale: bool,
    pub baseline: bool,
    pub t0: bool,
}

impl Default for FreeMask {
    fn default() -> Self {
        FreeMask { delta2: true, scale: true, baseline: true, t0: true, ..FreeMask::none() }
    }
}

impl FreeMask {
    pub fn none() -> Self {
        FreeMask {
            delta2: false,
            omega1: false,
            gamma: false,
            gamma_ba: false,
            u: false,
            scale: false,
            baseline: false,
            t0: false,
        }
    }

    fn flags(&self) -> [bool; 8] {
        [
            self.delta2,
            self.omega1,
            self.gamma,
            self.gamma_ba,
            self.u,
            self.scale,
            self.baseline,
            self.t0,
        ]
    }

    pub fn count(&self) -> usize {
        self.flags().iter().filter(|f| **f).count()
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: LambdaParams,
    pub nuisance: Nuisance,
    /// (name, fitted value, standard error) for each free direction, in
    /// `FREE_NAMES` order.
    pub errors: Vec<(&'static str, f64, f64)>,
    pub rss: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    pub fn report(&self) -> String {
        let mut out = String::new();
        for (name, value, err) in &self.errors {
            out.push_str(&format!("{name} = {value:.6e} +/- {err:.6e}\n"));
        }
        out.push_str(&format!("rss = {:.6e}\n", self.rss));
        out.push_str(&format!("converged = {}\n", self.converged));
        out
    }
}

fn pack(params: &LambdaParams, nu: &Nuisance) -> [f64; 8] {
    [
        params.delta2,
        params.omega1,
        params.gbar(),
        params.gamma_ba,
        params.uncoupled_fraction,
        nu.scale,
        nu.baseline,
        nu.t0,
    ]
}

fn apply(
    base: &LambdaParams,
    nu0: &Nuisance,
    mask: &[bool; 8],
    theta: &DVector<f64>,
) -> (LambdaParams, Nuisance) {
    let mut p = *base;
    let mut nu = *nu0;
    let mut k = 0;
    for (slot, free) in mask.iter().enumerate() {
        if !free {
            continue;
        }
        let v = theta[k];
        k += 1;
        match slot {
            0 => p.delta2 = v,
            1 => p.omega1 = v,
            2 => {
                p.gamma_ca = v;
                p.gamma_cb = v;
            }
            3 => p.gamma_ba = v,
            4 => p.uncoupled_fraction = v,
            5 => nu.scale = v,
            6 => nu.baseline = v,
            _ => nu.t0 = v,
        }
    }
    (p, nu)
}

fn in_domain(p: &LambdaParams) -> bool {
    p.omega1 >= 0.0
        && p.omega2 > 0.0
        && p.gamma_ca >= 0.0
        && p.gamma_cb >= 0.0
        && p.gbar() > 0.0
        && p.gamma_ba >= 0.0
        && (0.0..=1.0).contains(&p.uncoupled_fraction)
        && pack(p, &Nuisance::default()).iter().all(|v| v.is_finite())
}

const MAX_ITERS: usize = 500;
const COND_LIMIT: f64 = 1e8;

/// Levenberg-Marquardt fit of `model_turnoff_t` to a trace. Converged once
/// three successive iterations each shrink the objective by less than a
/// relative 1e-10 or move by less than 1e-12.
pub fn fit_turnoff(
    trace: &Trace,
    initial: &LambdaParams,
    nuisance: &Nuisance,
    free: &FreeMask,
) -> Result<FitResult, FitError> {
    initial.validate()?;
    let mask = free.flags();
    let k = free.count();
    if k == 0 {
        return Err(FitError::NothingFree);
    }
    let n = trace.len();

    let full = pack(initial, nuisance);
    let mut theta = DVector::from_iterator(
        k,
        mask.iter().enumerate().filter(|(_, f)| **f).map(|(i, _)| full[i]),
    );

    let eval = |theta: &DVector<f64>| -> (DVector<f64>, f64) {
        let (p, nu) = apply(initial, nuisance, &mask, theta);
        if !in_domain(&p) || !nu.scale.is_finite() || !nu.baseline.is_finite() || !nu.t0.is_finite()
        {
            return (DVector::zeros(n), f64::INFINITY);
        }
        let r = DVector::from_iterator(
            n,
            trace
                .times
                .iter()
                .zip(&trace.transmissions)
                .map(|(&t, &y)| model_turnoff_t(&p, &nu, t) - y),
        );
        let rss = r.dot(&r);
        (r, rss)
    };

    let jacobian = |theta: &DVector<f64>| -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(n, k);
        for j in 0..k {
            let h = 1e-6 * theta[j].abs().max(1.0);
            let mut up = theta.clone();
            up[j] += h;
            let mut dn = theta.clone();
            dn[j] -= h;
            let (ru, _) = eval(&up);
            let (rd, _) = eval(&dn);
            jac.set_column(j, &((ru - rd) / (2.0 * h)));
        }
        jac
    };

    let (mut resid, mut rss) = eval(&theta);
    let mut lambda = 1e-3;
    let mut quiet = 0usize;
    let mut iterations = 0usize;
    let mut converged = false;

    while iterations < MAX_ITERS {
        iterations += 1;
        let jac = jacobian(&theta);
        check_collinearity(&jac, &mask)?;
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &resid;

        let mut accepted = false;
        for _ in 0..50 {
            let mut damped = jtj.clone();
            for j in 0..k {
                damped[(j, j)] += lambda * jtj[(j, j)].max(1e-12);
            }
            let step = match damped.cholesky() {
                Some(ch) => ch.solve(&jtr),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let candidate = &theta - &step;
            let (rc, rss_c) = eval(&candidate);
            if rss_c.is_finite() && rss_c <= rss {
                let drop = (rss - rss_c) / rss.max(f64::MIN_POSITIVE);
                quiet = if drop < 1e-10 || step.norm() < 1e-12 { quiet + 1 } else { 0 };
                theta = candidate;
                resid = rc;
                rss = rss_c;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // fully damped and still no descent: the objective is locally flat
            quiet += 1;
        }
        if quiet >= 3 {
            converged = rss.is_finite();
            break;
        }
    }
    if !converged {
        return Err(FitError::NoConvergence(iterations));
    }

    let (params, nu) = apply(initial, nuisance, &mask, &theta);
    let jac = jacobian(&theta);
    let jtj = jac.transpose() * &jac;
    let sigma2 = if n > k { rss / (n - k) as f64 } else { 0.0 };
    let cov = jtj.try_inverse().map(|inv| inv * sigma2);
    let mut errors = Vec::with_capacity(k);
    let mut j = 0;
    for (slot, free) in mask.iter().enumerate() {
        if !free {
            continue;
        }
        let stderr = cov.as_ref().map_or(f64::NAN, |c| c[(j, j)].max(0.0).sqrt());
        errors.push((FREE_NAMES[slot], theta[j], stderr));
        j += 1;
    }

    Ok(FitResult { params, nuisance: nu, errors, rss, converged, iterations })
}

/// Collinearity is about angles between columns, so the test runs on the
/// column-normalized Jacobian; a zero column counts as degenerate outright.
fn check_collinearity(jac: &DMatrix<f64>, mask: &[bool; 8]) -> Result<(), FitError> {
    let names: Vec<&str> = mask
        .iter()
        .enumerate()
        .filter(|(_, f)| **f)
        .map(|(i, _)| FREE_NAMES[i])
        .collect();
    let k = names.len();
    if k < 2 {
        return Ok(());
    }
    let mut unit = jac.clone();
    let mut dead: Vec<usize> = Vec::new();
    for j in 0..k {
        let norm = unit.column(j).norm();
        if norm > 0.0 && norm.is_finite() {
            let scaled = unit.column(j) / norm;
            unit.set_column(j, &scaled);
        } else {
            dead.push(j);
        }
    }
    let svd = unit.svd(false, true);
    let s_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let s_min = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    let cond = if s_min > 0.0 { s_max / s_min } else { f64::INFINITY };
    if cond <= COND_LIMIT && dead.is_empty() {
        return Ok(());
    }
    let mut involved: Vec<usize> = dead;
    if let Some(v_t) = svd.v_t {
        for (i, s) in svd.singular_values.iter().enumerate() {
            if *s > s_max / COND_LIMIT {
                continue;
            }
            let row = v_t.row(i);
            let top = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for j in 0..k {
                if row[j].abs() > 0.1 * top {
                    involved.push(j);
                }
            }
        }
    }
    involved.sort_unstable();
    involved.dedup();
    let cols = involved.iter().map(|&j| names[j]).collect::<Vec<_>>().join(", ");
    Err(FitError::SingularJacobian { cond, cols })
}

/// Decay rate (cyclic MHz) of a ringing envelope: collects interior extrema,
/// subtracts the tail level, and fits ln|extremum - asymptote| against time.
pub fn envelope_decay(trace: &Trace) -> Result<f64, FitError> {
    let t = &trace.times;
    let y = &trace.transmissions;
    let n = y.len();
    let mut extrema: Vec<(f64, f64)> = Vec::new();
    for i in 1..n - 1 {
        if (y[i] - y[i - 1]) * (y[i + 1] - y[i]) < 0.0 {
            extrema.push((t[i], y[i]));
        }
    }
    if extrema.len() < 3 {
        return Err(FitError::TooFewExtrema(extrema.len()));
    }
    // the trace is assumed to have settled by its end
    let asymptote = y[n - 3..].iter().sum::<f64>() / 3.0;
    let points: Vec<(f64, f64)> = extrema
        .iter()
        .filter(|(_, yi)| (yi - asymptote).abs() > 0.0)
        .map(|(ti, yi)| (*ti, (yi - asymptote).abs().ln()))
        .collect();
    if points.len() < 3 {
        return Err(FitError::TooFewExtrema(points.len()));
    }
    // log-linear fit weighted by amplitude^2: equal-variance errors on the
    // raw extrema blow up on the log scale as the envelope shrinks
    let ln_top = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(t, ln_d) in &points {
        let w = (2.0 * (ln_d - ln_top)).exp();
        sw += w;
        sx += w * t;
        sy += w * ln_d;
        sxx += w * t * t;
        sxy += w * t * ln_d;
    }
    let slope = (sw * sxy - sx * sy) / (sw * sxx - sx * sx);
    Ok(-slope / TAU)
}
