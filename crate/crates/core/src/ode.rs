//! Direct integration of the density-matrix equations of motion.
//!
//! The nine coupled equations reduce to eight real degrees of freedom:
//! `rho_cc` is eliminated through the unit trace, and the lower triangle
//! through hermiticity. The integrator is an embedded Dormand-Prince 5(4)
//! pair with FSAL, PI step-size control, and a fourth-order dense
//! interpolant for off-step output. A field switch inside the requested
//! span splits the integration exactly at the switch instant, so the
//! discontinuous generator is never stepped across.

use num_complex::Complex64;
use thiserror::Error;

use crate::model::{Angular, DensityMatrix, FieldSchedule, LambdaParams, ModelError};
use crate::TAU;

#[derive(Debug, Error)]
pub enum OdeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("rel_tol must lie strictly inside (1e-14, 1e-3), got {0:e}")]
    BadTol(f64),
    #[error("bad time grid: {0}")]
    BadGrid(String),
    #[error("step size collapsed near t = {t}")]
    StepFailure { t: f64 },
    #[error("state left the physical set at t = {t} (defect {defect:e})")]
    InvariantBreach { t: f64, defect: f64 },
}

pub const DEFAULT_REL_TOL: f64 = 1e-9;

/// Population split used when nothing better is known: most atoms in the
/// probed lower state.
pub const DEFAULT_SPLIT: (f64, f64) = (0.05, 0.95);

/// Relaxation interval long enough for transients to die out before a
/// switching experiment: ten coherence lifetimes.
pub fn default_warmup(params: &LambdaParams) -> f64 {
    10.0 / (TAU * params.gbar())
}

/// Time derivative of every density-matrix entry. The diagonal derivatives
/// sum to zero identically; the lower triangle is the conjugate of the
/// upper one.
#[derive(Debug, Clone, Copy)]
pub struct RhoDot {
    pub aa: f64,
    pub bb: f64,
    pub cc: f64,
    pub ab: Complex64,
    pub ac: Complex64,
    pub bc: Complex64,
}

/// Equations of motion evaluated at one instant, with the coupling Rabi
/// frequency pinned to `omega1_now` (MHz) so callers can express any field
/// history. Probe and relaxation come from `params`.
pub fn rhs(rho: &DensityMatrix, params: &LambdaParams, omega1_now: f64) -> RhoDot {
    let mut k = Angular::from(params);
    k.om1 = TAU * omega1_now;
    let y = pack(rho);
    let d = rhs8(&y, &k);
    let cc = 1.0 - rho.aa - rho.bb;
    RhoDot {
        aa: d[0],
        bb: d[1],
        cc: -(k.gca + k.gcb) * cc - k.om1 * y[5] - k.om2 * y[7],
        ab: Complex64::new(d[2], d[3]),
        ac: Complex64::new(d[4], d[5]),
        bc: Complex64::new(d[6], d[7]),
    }
}

/// Sampled solution on the caller's grid.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
}

impl Trajectory {
    pub fn im_bc(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.bc.im).collect()
    }

    /// Plain CSV, one row per sample, full f64 precision so re-runs are
    /// byte-comparable.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "t_us,re_rho_aa,re_rho_bb,re_rho_cc,re_rho_ab,im_rho_ab,\
             re_rho_ac,im_rho_ac,re_rho_bc,im_rho_bc"
        )?;
        for (t, s) in self.times.iter().zip(&self.states) {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                t, s.aa, s.bb, s.cc, s.ab.re, s.ab.im, s.ac.re, s.ac.im, s.bc.re, s.bc.im
            )?;
        }
        Ok(())
    }
}

/// Integrates from the first grid time to the last and samples the state at
/// every grid point (the first point returns `rho0` itself). A switch
/// inside the span splits the integration at `schedule.switch_time`.
pub fn evolve(
    rho0: &DensityMatrix,
    schedule: &FieldSchedule,
    params: &LambdaParams,
    t_grid: &[f64],
    rel_tol: f64,
) -> Result<Trajectory, OdeError> {
    params.validate()?;
    if !(rel_tol > 1e-14 && rel_tol < 1e-3) {
        return Err(OdeError::BadTol(rel_tol));
    }
    if t_grid.is_empty() {
        return Err(OdeError::BadGrid("empty".into()));
    }
    if t_grid.iter().any(|t| !t.is_finite()) {
        return Err(OdeError::BadGrid("non-finite time".into()));
    }
    if t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(OdeError::BadGrid("times must be strictly ascending".into()));
    }

    let t0 = t_grid[0];
    let tend = *t_grid.last().unwrap();
    let mut states = Vec::with_capacity(t_grid.len());
    states.push(*rho0);

    let mut y = pack(rho0);
    let sw = schedule.switch_time;
    let mut legs: Vec<(f64, f64)> = Vec::new();
    if sw > t0 && sw < tend {
        legs.push((t0, sw));
        legs.push((sw, tend));
    } else {
        legs.push((t0, tend));
    }

    let mut next_out = 1; // t_grid[0] already emitted
    for (a, b) in legs {
        let k = effective_rates(params, schedule, a);
        let f = |_t: f64, y: &[f64; 8]| rhs8(y, &k);
        // output times inside (a, b]
        let hi = t_grid.partition_point(|&t| t <= b);
        let outs = &t_grid[next_out..hi];
        step_leg(&f, a, b, &mut y, rel_tol, outs, &mut states)?;
        next_out = hi;
    }

    debug_assert_eq!(states.len(), t_grid.len());
    // ok to start from an approximate (slightly non-positive) state, e.g.
    // a weak-probe coherence painted onto bare populations; the breach just
    // must not grow under the flow
    let allowed = 2.0 * rho0.positivity_defect() + 1e-6;
    for (t, s) in t_grid.iter().zip(&states) {
        let defect = s.positivity_defect();
        if defect > allowed {
            return Err(OdeError::InvariantBreach { t: *t, defect });
        }
    }
    Ok(Trajectory { times: t_grid.to_vec(), states })
}

/// Relaxes the system under the pre-switch fields for `warmup`
/// microseconds, starting from a coherence-free `split` = (rho_aa, rho_bb)
/// population split, and returns the state at the switch instant.
/// `warmup <= 0` returns the split state unchanged (nothing to relax when
/// there is no decay).
pub fn prepare_steady(
    params: &LambdaParams,
    schedule: &FieldSchedule,
    warmup: f64,
    split: (f64, f64),
) -> Result<DensityMatrix, OdeError> {
    let rho0 = DensityMatrix::ground_split(split.0, split.1)?;
    if warmup <= 0.0 {
        return Ok(rho0);
    }
    let grid = [schedule.switch_time - warmup, schedule.switch_time];
    let traj = evolve(&rho0, schedule, params, &grid, DEFAULT_REL_TOL)?;
    Ok(traj.states[1])
}

fn effective_rates(params: &LambdaParams, schedule: &FieldSchedule, leg_start: f64) -> Angular {
    let mut k = Angular::from(params);
    k.om1 = TAU * schedule.omega1_at(leg_start);
    if !schedule.probe_on_at(leg_start) {
        k.om2 = 0.0;
    }
    k
}

// state layout: [aa, bb, Re ab, Im ab, Re ac, Im ac, Re bc, Im bc]
fn pack(rho: &DensityMatrix) -> [f64; 8] {
    [
        rho.aa, rho.bb, rho.ab.re, rho.ab.im, rho.ac.re, rho.ac.im, rho.bc.re, rho.bc.im,
    ]
}

fn unpack(y: &[f64; 8]) -> DensityMatrix {
    DensityMatrix {
        aa: y[0],
        bb: y[1],
        cc: 1.0 - y[0] - y[1],
        ab: Complex64::new(y[2], y[3]),
        ac: Complex64::new(y[4], y[5]),
        bc: Complex64::new(y[6], y[7]),
    }
}

fn rhs8(y: &[f64; 8], k: &Angular) -> [f64; 8] {
    let (aa, bb) = (y[0], y[1]);
    let cc = 1.0 - aa - bb;
    let (x_ab, y_ab) = (y[2], y[3]);
    let (x_ac, y_ac) = (y[4], y[5]);
    let (x_bc, y_bc) = (y[6], y[7]);
    let h1 = 0.5 * k.om1;
    let h2 = 0.5 * k.om2;
    [
        k.gca * cc + k.om1 * y_ac,
        k.gcb * cc + k.om2 * y_bc,
        -k.gba * x_ab - k.d21 * y_ab + h1 * y_bc + h2 * y_ac,
        k.d21 * x_ab - k.gba * y_ab + h1 * x_bc - h2 * x_ac,
        -k.g * x_ac + k.d1 * y_ac + h2 * y_ab,
        -k.d1 * x_ac - k.g * y_ac + h1 * (cc - aa) - h2 * x_ab,
        -k.g * x_bc + k.d2 * y_bc - h1 * y_ab,
        -k.d2 * x_bc - k.g * y_bc - h1 * x_ab + h2 * (cc - bb),
    ]
}

// Dormand-Prince 5(4) tableau
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A2: [f64; 1] = [0.2];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [
    19372.0 / 6561.0,
    -25360.0 / 2187.0,
    64448.0 / 6561.0,
    -212.0 / 729.0,
];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
const A7: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
];
// (5th order b) minus (4th order b-hat): error estimator weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
// dense-output weights for the quartic interpolant
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

fn axpyn(y: &[f64; 8], h: f64, ks: &[&[f64; 8]], ws: &[f64]) -> [f64; 8] {
    let mut out = *y;
    for (k, w) in ks.iter().zip(ws) {
        for i in 0..8 {
            out[i] += h * w * k[i];
        }
    }
    out
}

/// One integration leg with a fixed right-hand side. Emits dense-output
/// samples for every time in `outs` (all inside `(a, b]`, ascending).
fn step_leg(
    f: &impl Fn(f64, &[f64; 8]) -> [f64; 8],
    a: f64,
    b: f64,
    y: &mut [f64; 8],
    rel_tol: f64,
    outs: &[f64],
    states: &mut Vec<DensityMatrix>,
) -> Result<(), OdeError> {
    let atol = 1e-2 * rel_tol;
    let span = b - a;
    let mut t = a;
    let mut k1 = f(t, y);
    let mut h = initial_step(f, t, y, &k1, rel_tol, atol).min(span);
    let mut err_old: f64 = 1e-4;
    let mut out_idx = 0;
    let mut nsteps = 0u64;

    while t < b {
        nsteps += 1;
        if nsteps > 50_000_000 {
            return Err(OdeError::StepFailure { t });
        }
        if h < 4.0 * f64::EPSILON * t.abs().max(1.0) {
            return Err(OdeError::StepFailure { t });
        }
        let mut last = false;
        if t + h >= b {
            h = b - t;
            last = true;
        }

        let k2 = f(t + C[1] * h, &axpyn(y, h, &[&k1], &A2));
        let k3 = f(t + C[2] * h, &axpyn(y, h, &[&k1, &k2], &A3));
        let k4 = f(t + C[3] * h, &axpyn(y, h, &[&k1, &k2, &k3], &A4));
        let k5 = f(t + C[4] * h, &axpyn(y, h, &[&k1, &k2, &k3, &k4], &A5));
        let k6 = f(t + h, &axpyn(y, h, &[&k1, &k2, &k3, &k4, &k5], &A6));
        let y_new = axpyn(y, h, &[&k1, &k2, &k3, &k4, &k5, &k6], &A7);
        let k7 = f(t + h, &y_new);

        let mut err_sq = 0.0;
        for i in 0..8 {
            let e = h
                * (E[0] * k1[i]
                    + E[2] * k3[i]
                    + E[3] * k4[i]
                    + E[4] * k5[i]
                    + E[5] * k6[i]
                    + E[6] * k7[i]);
            let sc = atol + rel_tol * y[i].abs().max(y_new[i].abs());
            err_sq += (e / sc) * (e / sc);
        }
        let err = (err_sq / 8.0).sqrt();

        if err <= 1.0 {
            // the final step lands on b exactly, whatever t + h rounds to
            let t_new = if last { b } else { t + h };
            // dense interpolant over [t, t_new]
            if out_idx < outs.len() && outs[out_idx] <= t_new {
                let mut cont = [[0.0; 8]; 5];
                for i in 0..8 {
                    let ydiff = y_new[i] - y[i];
                    let bspl = h * k1[i] - ydiff;
                    cont[0][i] = y[i];
                    cont[1][i] = ydiff;
                    cont[2][i] = bspl;
                    cont[3][i] = ydiff - h * k7[i] - bspl;
                    cont[4][i] = h
                        * (D[0] * k1[i]
                            + D[2] * k3[i]
                            + D[3] * k4[i]
                            + D[4] * k5[i]
                            + D[5] * k6[i]
                            + D[6] * k7[i]);
                }
                while out_idx < outs.len() && outs[out_idx] <= t_new {
                    let theta = ((outs[out_idx] - t) / h).clamp(0.0, 1.0);
                    let mut ys = [0.0; 8];
                    for i in 0..8 {
                        ys[i] = cont[0][i]
                            + theta
                                * (cont[1][i]
                                    + (1.0 - theta)
                                        * (cont[2][i]
                                            + theta
                                                * (cont[3][i] + (1.0 - theta) * cont[4][i])));
                    }
                    states.push(unpack(&ys));
                    out_idx += 1;
                }
            }
            t = t_new;
            *y = y_new;
            k1 = k7; // FSAL
            // PI controller, mildly damped
            let fac = 0.9 * err.max(1e-10).powf(-0.17) * err_old.powf(0.04);
            h *= fac.clamp(0.2, 5.0);
            err_old = err.max(1e-4);
            if t >= b {
                break;
            }
        } else {
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
        }
    }

    // the leg end is an output point whenever the caller asked for it; it
    // was emitted by the dense pass above (theta = 1), so nothing to do
    debug_assert!(out_idx == outs.len());
    Ok(())
}

fn initial_step(
    f: &impl Fn(f64, &[f64; 8]) -> [f64; 8],
    t0: f64,
    y0: &[f64; 8],
    f0: &[f64; 8],
    rel_tol: f64,
    atol: f64,
) -> f64 {
    let sc: Vec<f64> = y0.iter().map(|v| atol + rel_tol * v.abs()).collect();
    let rms = |v: &[f64; 8]| -> f64 {
        let s: f64 = v.iter().zip(&sc).map(|(a, s)| (a / s) * (a / s)).sum();
        (s / 8.0).sqrt()
    };
    let d0 = rms(y0);
    let d1 = rms(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let mut y1 = *y0;
    for i in 0..8 {
        y1[i] += h0 * f0[i];
    }
    let f1 = f(t0 + h0, &y1);
    let mut diff = [0.0; 8];
    for i in 0..8 {
        diff[i] = f1[i] - f0[i];
    }
    let d2 = rms(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SwitchMode;
    use approx::assert_relative_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn mixed_state() -> DensityMatrix {
        DensityMatrix::new(0.35, 0.35, 0.3, c(0.08, -0.03), c(0.0, 0.1), c(0.05, -0.12))
            .unwrap()
    }

    #[test]
    fn rhs_rows_against_hand_values() {
        let mut p = LambdaParams::symmetric(45.0, 1.0, 5.68);
        p.delta1 = -23.0;
        p.delta2 = -40.0;
        p.gamma_ba = 3.4;
        let rho = mixed_state();
        let d = rhs(&rho, &p, p.omega1);

        let k = Angular::from(&p);
        // population rows written out directly from the equations of motion
        let aa_expect = k.gca * rho.cc + k.om1 * rho.ac.im;
        let bb_expect = k.gcb * rho.cc + k.om2 * rho.bc.im;
        assert_relative_eq!(d.aa, aa_expect, max_relative = 1e-14);
        assert_relative_eq!(d.bb, bb_expect, max_relative = 1e-14);
        // diagonal derivatives must cancel exactly
        assert!((d.aa + d.bb + d.cc).abs() < 1e-12 * d.cc.abs().max(1.0));

        // off-diagonal rows via the complex form
        let i = Complex64::I;
        let ab_expect = (i * k.d21 - k.gba) * rho.ab
            + i * (k.om1 / 2.0) * rho.cb()
            - i * (k.om2 / 2.0) * rho.ac;
        let ac_expect = (-i * k.d1 - k.g) * rho.ac
            + i * (k.om1 / 2.0) * (rho.cc - rho.aa)
            - i * (k.om2 / 2.0) * rho.ab;
        let bc_expect = (-i * k.d2 - k.g) * rho.bc - i * (k.om1 / 2.0) * rho.ba()
            + i * (k.om2 / 2.0) * (rho.cc - rho.bb);
        assert!((d.ab - ab_expect).norm() < 1e-12 * ab_expect.norm().max(1.0));
        assert!((d.ac - ac_expect).norm() < 1e-12 * ac_expect.norm().max(1.0));
        assert!((d.bc - bc_expect).norm() < 1e-12 * bc_expect.norm().max(1.0));
    }

    #[test]
    fn free_decay_matches_closed_form() {
        // all fields off: every entry decays independently
        let p = LambdaParams {
            omega1: 0.0,
            omega2: 0.0,
            delta1: 3.0,
            delta2: -7.0,
            gamma_ca: 2.0,
            gamma_cb: 1.0,
            gamma_ba: 0.5,
            uncoupled_fraction: 0.0,
        };
        let rho0 = mixed_state();
        let sched = FieldSchedule::new(SwitchMode::Steady, 0.0, 0.0);
        let grid: Vec<f64> = (0..=40).map(|i| i as f64 * 0.01).collect();
        let traj = evolve(&rho0, &sched, &p, &grid, 1e-11).unwrap();

        let k = Angular::from(&p);
        for (t, s) in traj.times.iter().zip(&traj.states) {
            let cc = rho0.cc * (-(k.gca + k.gcb) * t).exp();
            let aa = rho0.aa + k.gca / (k.gca + k.gcb) * rho0.cc
                * (1.0 - (-(k.gca + k.gcb) * t).exp());
            let ab = rho0.ab * (Complex64::new(-k.gba, k.d21) * t).exp();
            let ac = rho0.ac * (Complex64::new(-k.g, -k.d1) * t).exp();
            let bc = rho0.bc * (Complex64::new(-k.g, -k.d2) * t).exp();
            assert_relative_eq!(s.cc, cc, epsilon = 1e-9);
            assert_relative_eq!(s.aa, aa, epsilon = 1e-9);
            assert!((s.ab - ab).norm() < 1e-9);
            assert!((s.ac - ac).norm() < 1e-9);
            assert!((s.bc - bc).norm() < 1e-9);
        }
    }

    #[test]
    fn excited_state_lifetime() {
        // start fully excited with 2.84 MHz into each branch: total decay
        // 5.68 MHz, so the 1/e time is 1/(2 pi * 5.68) us = 28.0 ns
        let p = LambdaParams::symmetric(0.0, 0.0, 2.84);
        let rho0 = DensityMatrix::ground_split(0.0, 0.0).unwrap();
        let sched = FieldSchedule::new(SwitchMode::Steady, 0.0, 0.0);
        let tau = 1.0 / (TAU * 5.68);
        let traj = evolve(&rho0, &sched, &p, &[0.0, tau], 1e-11).unwrap();
        assert_relative_eq!(traj.states[1].cc, (-1.0f64).exp(), epsilon = 1e-9);
    }

    #[test]
    fn probe_only_pumps_into_a() {
        let p = LambdaParams::symmetric(0.0, 5.0, 5.68);
        let rho0 = DensityMatrix::ground_split(0.0, 1.0).unwrap();
        let sched = FieldSchedule::new(SwitchMode::Steady, 0.0, 0.0);
        let traj = evolve(&rho0, &sched, &p, &[0.0, 3.0], 1e-10).unwrap();
        let end = traj.states[1];
        assert!(end.aa > 0.999, "rho_aa = {}", end.aa);
        assert!(end.bc.norm() < 1e-3);
    }

    #[test]
    fn tolerance_tightening_converges() {
        let mut p = LambdaParams::symmetric(45.0, 1.0, 5.68);
        p.gamma_ba = 3.4;
        let rho0 = DensityMatrix::ground_split(0.05, 0.95).unwrap();
        let sched = FieldSchedule::new(SwitchMode::TurnOn, 0.0, 45.0);
        let grid: Vec<f64> = (0..=120).map(|i| -0.06 + i as f64 * 0.005).collect();

        let reference = evolve(&rho0, &sched, &p, &grid, 1e-12).unwrap();
        for (tol, allow) in [(1e-6, 1e-4), (1e-9, 1e-7)] {
            let run = evolve(&rho0, &sched, &p, &grid, tol).unwrap();
            let worst = run
                .states
                .iter()
                .zip(&reference.states)
                .map(|(a, b)| (a.bc - b.bc).norm())
                .fold(0.0, f64::max);
            assert!(worst < allow, "tol {tol:e}: deviation {worst:e}");
        }
    }

    #[test]
    fn switch_split_agrees_with_manual_two_leg_run() {
        let mut p = LambdaParams::symmetric(45.0, 1.0, 5.68);
        p.gamma_ba = 3.4;
        let rho0 = DensityMatrix::ground_split(0.05, 0.95).unwrap();
        let sched = FieldSchedule::new(SwitchMode::TurnOn, 0.0, 45.0);
        let grid: Vec<f64> = (0..=80).map(|i| -0.1 + i as f64 * 0.005).collect();
        let joint = evolve(&rho0, &sched, &p, &grid, 1e-10).unwrap();

        let pre: Vec<f64> = grid.iter().copied().filter(|t| *t <= 0.0).collect();
        let post: Vec<f64> = grid.iter().copied().filter(|t| *t >= 0.0).collect();
        let off = FieldSchedule::new(SwitchMode::Steady, 0.0, 0.0);
        let on = FieldSchedule::new(SwitchMode::Steady, 0.0, 45.0);
        let leg1 = evolve(&rho0, &off, &p, &pre, 1e-10).unwrap();
        let leg2 = evolve(leg1.states.last().unwrap(), &on, &p, &post, 1e-10).unwrap();

        let manual = leg1
            .states
            .iter()
            .take(pre.len() - 1) // t = 0 appears in both legs
            .chain(leg2.states.iter())
            .copied()
            .collect::<Vec<_>>();
        assert_eq!(manual.len(), joint.states.len());
        for (a, b) in joint.states.iter().zip(&manual) {
            assert!((a.bc - b.bc).norm() < 1e-9);
            assert!((a.aa - b.aa).abs() < 1e-9);
        }
    }

    #[test]
    fn trace_and_positivity_hold_along_transients() {
        let mut p = LambdaParams::symmetric(45.0, 1.0, 5.68);
        p.delta1 = -23.0;
        p.delta2 = -40.0;
        p.gamma_ba = 3.4;
        let sched = FieldSchedule::new(SwitchMode::TurnOff, 0.0, 45.0);
        let rho0 = prepare_steady(&p, &sched, default_warmup(&p), DEFAULT_SPLIT).unwrap();
        let grid: Vec<f64> = (0..=200).map(|i| i as f64 * 0.002).collect();
        let traj = evolve(&rho0, &sched, &p, &grid, 1e-9).unwrap();
        for s in &traj.states {
            // cc is eliminated, so the trace is (aa + bb) + (1 - aa - bb):
            // exact up to the last-place rounding of that reconstruction
            assert!((s.trace() - 1.0).abs() < 1e-15);
            assert!(s.positivity_defect() < 1e-8);
        }
    }

    #[test]
    fn prepare_steady_reaches_stationarity() {
        let mut p = LambdaParams::symmetric(45.0, 1.0, 5.68);
        p.gamma_ba = 3.4;
        let sched = FieldSchedule::new(SwitchMode::TurnOff, 0.0, 45.0);
        let steady = prepare_steady(&p, &sched, default_warmup(&p), DEFAULT_SPLIT).unwrap();
        // stationary up to the residual the warmup length permits: the
        // coherences settle fast, the populations on the slower optical-
        // pumping timescale
        let d = rhs(&steady, &p, p.omega1);
        let scale = TAU * p.omega2;
        assert!(d.bc.norm() < 1e-4 * scale);
        assert!(d.aa.abs() < 1e-3 * scale);
        // zero warmup keeps the bare split
        let bare = prepare_steady(&p, &sched, 0.0, (0.3, 0.7)).unwrap();
        assert_eq!(bare.aa, 0.3);
        assert_eq!(bare.bb, 0.7);
    }

    #[test]
    fn rejects_bad_grid_and_tolerance() {
        let p = LambdaParams::symmetric(45.0, 1.0, 5.68);
        let rho0 = DensityMatrix::ground_split(0.05, 0.95).unwrap();
        let sched = FieldSchedule::new(SwitchMode::Steady, 0.0, 45.0);
        assert!(matches!(
            evolve(&rho0, &sched, &p, &[], 1e-9),
            Err(OdeError::BadGrid(_))
        ));
        assert!(matches!(
            evolve(&rho0, &sched, &p, &[0.0, 0.0], 1e-9),
            Err(OdeError::BadGrid(_))
        ));
        assert!(matches!(
            evolve(&rho0, &sched, &p, &[0.0, 1.0], 1e-2),
            Err(OdeError::BadTol(1e-2))
        ));
        assert!(matches!(
            evolve(&rho0, &sched, &p, &[0.0, 1.0], 1e-15),
            Err(OdeError::BadTol(_))
        ));
    }

    #[test]
    fn csv_layout_is_stable() {
        let p = LambdaParams::symmetric(45.0, 1.0, 5.68);
        let rho0 = DensityMatrix::ground_split(0.05, 0.95).unwrap();
        let sched = FieldSchedule::new(SwitchMode::Steady, 0.0, 45.0);
        let traj = evolve(&rho0, &sched, &p, &[0.0, 0.05, 0.1], 1e-9).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t_us,re_rho_aa,re_rho_bb,re_rho_cc,re_rho_ab,im_rho_ab,\
             re_rho_ac,im_rho_ac,re_rho_bc,im_rho_bc"
        );
        assert_eq!(text.lines().count(), 4);
        // byte determinism across runs
        let traj2 = evolve(&rho0, &sched, &p, &[0.0, 0.05, 0.1], 1e-9).unwrap();
        let mut buf2 = Vec::new();
        traj2.write_csv(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }
}
