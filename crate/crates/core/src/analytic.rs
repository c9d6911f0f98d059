//! Closed-form transient expressions. Everything here is hand-derived and
//! serves as the third computation route next to the integrator and the
//! transform inversion; the cross-checks between the three live in the
//! integration tests.
//!
//! Interface units are cyclic MHz / us like everywhere else. Amplitude
//! prefactors are ratios of rates and need no conversion; oscillation and
//! decay arguments convert to angular internally.

use num_complex::Complex64;

use crate::model::{Angular, DensityMatrix, LambdaParams};

/// Quasi-steady values reached once the optical coherence has relaxed but
/// before optical pumping drains the probed state (`1/G << t << 1/p4`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PumpPlateau {
    pub rho_bc: Complex64,
    pub rho_aa: f64,
    pub rho_bb: f64,
}

/// Plateau of probe-only evolution from a diagonal lower-manifold split.
/// Cyclic in, cyclic out: every entry is a ratio of rates.
pub fn pump_intermediate(rho0: &DensityMatrix, params: &LambdaParams) -> PumpPlateau {
    let g = params.gbar();
    let d2 = params.delta2;
    let weight = 1.0 - rho0.aa + rho0.bb;
    PumpPlateau {
        rho_bc: -0.25 * params.omega2 * weight / Complex64::new(d2, -g),
        rho_aa: 0.5 * (1.0 + rho0.aa - rho0.bb),
        rho_bb: 0.5 * weight,
    }
}

/// Decay factor of an initial `b-c` coherence under the coupling field
/// alone (probe off, both fields resonant): the damped nutation
///
/// ```text
/// Im rho_bc(t) = Im rho_bc(0) e^(-(G+Gba)t/2) Re[cos(f t/2) - ((G-Gba)/f) sin(f t/2)]
/// ```
///
/// with `f = sqrt(om1^2 - (G - Gba)^2)` continued to imaginary values when
/// the coupling is weaker than the decay spread. This is the exact
/// evolution of the closed {rho_bc, rho_ba} pair, so it holds at any
/// coupling strength.
pub fn turnon_nutation(im_rho_bc0: f64, params: &LambdaParams, t: f64) -> f64 {
    let k = Angular::from(params);
    let dg = k.g - k.gba;
    let f = Complex64::new(k.om1 * k.om1 - dg * dg, 0.0).sqrt();
    let half = 0.5 * f * t;
    let bracket = if f.norm() < 1e-12 * k.om1.max(dg).max(1.0) {
        // critically damped: sin(f t/2)/f -> t/2
        1.0 - 0.5 * dg * t
    } else {
        (half.cos() - (dg / f) * half.sin()).re
    };
    im_rho_bc0 * (-0.5 * (k.g + k.gba) * t).exp() * bracket
}

/// The three spectral pieces of the resonant turn-on response, split by
/// pole group: the Rabi-sideband pair at `om1/2`, the purely decaying
/// piece, and the pair at `om1`. Valid deep in the strong-coupling regime.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiDecomposition {
    pub phi12: f64,
    pub phi3: f64,
    pub phi45: f64,
}

impl PhiDecomposition {
    pub fn total(&self) -> f64 {
        self.phi12 + self.phi3 + self.phi45
    }
}

/// Strong-coupling decomposition of `Im rho_bc(t)` after the coupling field
/// turns on with both fields resonant. `dephasing = false` drops the
/// ground-coherence decay terms (`Gba -> 0`). The expansion assumes
/// `om1 >> gbar`; below `om1 = 2 gbar` it logs a warning and extrapolates.
pub fn turnon_phi(
    rho0: &DensityMatrix,
    params: &LambdaParams,
    t: f64,
    dephasing: bool,
) -> PhiDecomposition {
    assert!(params.omega1 > 0.0, "turn-on decomposition needs a coupling field");
    if params.omega1 < 2.0 * params.gbar() {
        log::warn!(
            "turn-on decomposition outside its regime: omega1 = {} < 2 gbar = {}",
            params.omega1,
            2.0 * params.gbar()
        );
    }
    let k = Angular::from(params);
    let (om1, om2, g) = (k.om1, k.om2, k.g);
    let gba = if dephasing { k.gba } else { 0.0 };
    let (aa0, bb0) = (rho0.aa, rho0.bb);
    let im0 = rho0.bc.im;

    // shared resonance weight 12 / (9 + (4 om1 / G)^2)
    let weight = 12.0 / (9.0 + (4.0 * om1 / g).powi(2));

    let cos_amp = im0 + (om2 * gba / 3.0) * (5.0 * bb0 + aa0 - 2.0) / (om1 * om1);
    let sin_amp = ((aa0 - bb0) * om2 - (g - gba) * im0) / om1;
    let phi12 = (-0.5 * (g + gba) * t).exp()
        * (cos_amp * (0.5 * om1 * t).cos() + sin_amp * (0.5 * om1 * t).sin());

    let phi3 = -2.0 * (om2 / (om1 * om1)) * gba
        - (om2 / g) * weight * (1.0 - bb0) * (1.0 - 4.0 * gba / g) * (-0.5 * g * t).exp();

    let cos45 = (om2 / g) * weight * (1.0 - bb0)
        + (om2 / (om1 * om1)) * (gba / 3.0) * (1.0 - 2.0 * aa0 - bb0);
    let sin45 = (om2 / om1) * 0.5 * (1.0 - 2.0 * aa0 - bb0);
    let phi45 = (-1.25 * g * t).exp() * (cos45 * (om1 * t).cos() + sin45 * (om1 * t).sin());

    PhiDecomposition { phi12, phi3, phi45 }
}

/// Weak-probe steady state feeding the turn-off transient: all population
/// parked in the probed state, plus the stationary coherence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TurnOffInit {
    pub rho_bc: Complex64,
    pub rho_aa: f64,
    pub rho_bb: f64,
}

impl TurnOffInit {
    pub fn density_matrix(&self) -> DensityMatrix {
        DensityMatrix::new(
            self.rho_aa,
            self.rho_bb,
            1.0 - self.rho_aa - self.rho_bb,
            Complex64::ZERO,
            Complex64::ZERO,
            self.rho_bc,
        )
        .expect("trace is one by construction")
    }
}

/// Stationary weak-probe coherence with both fields on,
///
/// ```text
/// rho_bc0 = (om2/2) (d21 - i Gba) / (X + i Y)
/// X = om1^2/4 - d2 d21 + Gba G,  Y = d21 G + d2 Gba
/// ```
///
/// a pure ratio of rates, so it is computed directly in cyclic units.
pub fn turnoff_initial_state(params: &LambdaParams) -> TurnOffInit {
    let g = params.gbar();
    let d2 = params.delta2;
    let d21 = params.delta21();
    let gba = params.gamma_ba;
    // X + iY = om1^2/4 + (G + i d2)(Gba + i d21) and the numerator is
    // -i (Gba + i d21); with the coupling off that factor cancels and the
    // bare two-level coherence remains (the raw quotient would be 0/0 at
    // two-photon resonance without dephasing)
    let rho_bc = if params.omega1 == 0.0 {
        Complex64::new(0.0, -0.5 * params.omega2) / Complex64::new(g, d2)
    } else {
        let x = 0.25 * params.omega1 * params.omega1 - d2 * d21 + gba * g;
        let y = d21 * g + d2 * gba;
        0.5 * params.omega2 * Complex64::new(d21, -gba) / Complex64::new(x, y)
    };
    TurnOffInit { rho_bc, rho_aa: 0.0, rho_bb: 1.0 }
}

/// `Im` of the stationary weak-probe coherence: the EIT lineshape as the
/// probe detuning scans. With the coupling off it collapses to the bare
/// absorption Lorentzian `-(om2/2) G / (G^2 + d2^2)`.
pub fn steady_eit_lineshape(params: &LambdaParams) -> f64 {
    turnoff_initial_state(params).rho_bc.im
}

/// Probe coherence after the coupling field shuts off at `t = 0`, seeded by
/// the stationary coherence: the driven bare-atom Lorentzian plus the
/// freely precessing remainder,
///
/// ```text
/// Im rho_bc(t) = -(om2/2) [G + e^(-Gt)(d2 sin d2 t - G cos d2 t)] / (G^2 + d2^2)
///              + e^(-Gt) [Im rho_bc0 cos d2 t - Re rho_bc0 sin d2 t]
/// ```
///
/// Continuous at `t = 0` with the pre-switch value by construction.
pub fn turnoff_im_rbc(params: &LambdaParams, t: f64) -> f64 {
    let k = Angular::from(params);
    let (g, d2) = (k.g, k.d2);
    let rbc0 = turnoff_initial_state(params).rho_bc;
    let decay = (-g * t).exp();
    let (s, c) = (d2 * t).sin_cos();
    let driven = -0.5 * k.om2 * (g + decay * (d2 * s - g * c)) / (g * g + d2 * d2);
    driven + decay * (rbc0.im * c - rbc0.re * s)
}
