//! Shared physical state: driving parameters, the three-level density
//! matrix, and the coupling-field switching schedule.
//!
//! Level labels: `a` and `b` are the two lower states, `c` the excited
//! state. Field 1 (the coupling, Rabi frequency `omega1`) drives `a-c`;
//! field 2 (the probe, `omega2`) drives `b-c`.

use num_complex::Complex64;
use thiserror::Error;

use crate::TAU;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("negative rate: {name} = {value}")]
    NegativeRate { name: &'static str, value: f64 },
    #[error("uncoupled fraction must lie in [0, 1], got {0}")]
    BadFraction(f64),
    #[error("non-finite value for {0}")]
    NotFinite(&'static str),
    #[error("density matrix trace deviates from 1 by {0:e}")]
    BadTrace(f64),
    #[error("config line {line}: {what}")]
    Config { line: usize, what: String },
}

/// Drive and relaxation parameters of the lambda system. All frequencies
/// cyclic (MHz), all rates cyclic (MHz).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaParams {
    /// Coupling Rabi frequency on `a-c` (value while the field is on).
    pub omega1: f64,
    /// Probe Rabi frequency on `b-c`.
    pub omega2: f64,
    /// Coupling detuning from the `a-c` resonance.
    pub delta1: f64,
    /// Probe detuning from the `b-c` resonance.
    pub delta2: f64,
    /// Population decay `c -> a`.
    pub gamma_ca: f64,
    /// Population decay `c -> b`.
    pub gamma_cb: f64,
    /// Ground-coherence dephasing rate between `a` and `b`.
    pub gamma_ba: f64,
    /// Fraction of atoms that absorb the probe but never see the coupling
    /// field (enters the transmission map only).
    pub uncoupled_fraction: f64,
}

impl LambdaParams {
    /// Equal branching at rate `gamma` into each lower state, so
    /// `gbar() == gamma` (the optical coherences decay at `gamma` and the
    /// excited population at `2 gamma`). No dephasing, everything resonant.
    pub fn symmetric(omega1: f64, omega2: f64, gamma: f64) -> Self {
        LambdaParams {
            omega1,
            omega2,
            delta1: 0.0,
            delta2: 0.0,
            gamma_ca: gamma,
            gamma_cb: gamma,
            gamma_ba: 0.0,
            uncoupled_fraction: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fields = [
            ("omega1", self.omega1),
            ("omega2", self.omega2),
            ("delta1", self.delta1),
            ("delta2", self.delta2),
            ("gamma_ca", self.gamma_ca),
            ("gamma_cb", self.gamma_cb),
            ("gamma_ba", self.gamma_ba),
            ("uncoupled_fraction", self.uncoupled_fraction),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(ModelError::NotFinite(name));
            }
        }
        for (name, v) in [
            ("gamma_ca", self.gamma_ca),
            ("gamma_cb", self.gamma_cb),
            ("gamma_ba", self.gamma_ba),
        ] {
            if v < 0.0 {
                return Err(ModelError::NegativeRate { name, value: v });
            }
        }
        if !(0.0..=1.0).contains(&self.uncoupled_fraction) {
            return Err(ModelError::BadFraction(self.uncoupled_fraction));
        }
        Ok(())
    }

    /// Two-photon (Raman) detuning `delta2 - delta1`.
    pub fn delta21(&self) -> f64 {
        self.delta2 - self.delta1
    }

    /// Coherence decay rate of `ac` and `bc`: half the total decay out of
    /// the excited state. This is the single rate written `Gamma` in the
    /// equal-branching closed forms.
    pub fn gbar(&self) -> f64 {
        0.5 * (self.gamma_ca + self.gamma_cb)
    }

    /// Total population decay rate out of the excited state.
    pub fn gamma_total(&self) -> f64 {
        self.gamma_ca + self.gamma_cb
    }

    pub fn with_delta2(mut self, delta2: f64) -> Self {
        self.delta2 = delta2;
        self
    }
}

/// The same parameters in angular units (rad/us), with derived combinations
/// precomputed. Internal to the crate so the TAU conversion happens in
/// exactly one place.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Angular {
    pub om1: f64,
    pub om2: f64,
    pub d1: f64,
    pub d2: f64,
    pub d21: f64,
    pub gca: f64,
    pub gcb: f64,
    pub gba: f64,
    /// (gca + gcb) / 2: decay part of the optical-coherence rates.
    pub g: f64,
}

impl Angular {
    pub fn from(p: &LambdaParams) -> Self {
        Angular {
            om1: TAU * p.omega1,
            om2: TAU * p.omega2,
            d1: TAU * p.delta1,
            d2: TAU * p.delta2,
            d21: TAU * p.delta21(),
            gca: TAU * p.gamma_ca,
            gcb: TAU * p.gamma_cb,
            gba: TAU * p.gamma_ba,
            g: TAU * p.gbar(),
        }
    }
}

/// Density matrix of the three-level system. Hermiticity is structural
/// (only the upper triangle is stored); the unit trace is checked at
/// construction to 1e-12. Positivity can be queried but is not enforced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix {
    pub aa: f64,
    pub bb: f64,
    pub cc: f64,
    pub ab: Complex64,
    pub ac: Complex64,
    pub bc: Complex64,
}

impl DensityMatrix {
    pub fn new(
        aa: f64,
        bb: f64,
        cc: f64,
        ab: Complex64,
        ac: Complex64,
        bc: Complex64,
    ) -> Result<Self, ModelError> {
        let tr = aa + bb + cc;
        for v in [tr, ab.norm_sqr(), ac.norm_sqr(), bc.norm_sqr()] {
            if !v.is_finite() {
                return Err(ModelError::NotFinite("density matrix entry"));
            }
        }
        if (tr - 1.0).abs() > 1e-12 {
            return Err(ModelError::BadTrace(tr - 1.0));
        }
        Ok(DensityMatrix { aa, bb, cc, ab, ac, bc })
    }

    /// Population split over the two lower states, no coherences.
    pub fn ground_split(aa: f64, bb: f64) -> Result<Self, ModelError> {
        DensityMatrix::new(
            aa,
            bb,
            1.0 - aa - bb,
            Complex64::ZERO,
            Complex64::ZERO,
            Complex64::ZERO,
        )
    }

    pub fn trace(&self) -> f64 {
        self.aa + self.bb + self.cc
    }

    pub fn ba(&self) -> Complex64 {
        self.ab.conj()
    }

    pub fn ca(&self) -> Complex64 {
        self.ac.conj()
    }

    pub fn cb(&self) -> Complex64 {
        self.bc.conj()
    }

    /// Smallest eigenvalue of the (Hermitian) matrix, from the closed-form
    /// solution of the characteristic cubic. Negative values signal loss of
    /// positivity.
    pub fn min_eigenvalue(&self) -> f64 {
        let off = self.ab.norm_sqr() + self.ac.norm_sqr() + self.bc.norm_sqr();
        if off == 0.0 {
            return self.aa.min(self.bb).min(self.cc);
        }
        let q = self.trace() / 3.0;
        let p2 = (self.aa - q).powi(2)
            + (self.bb - q).powi(2)
            + (self.cc - q).powi(2)
            + 2.0 * off;
        let p = (p2 / 6.0).sqrt();
        // det of (rho - q I) / p, real for Hermitian input
        let d11 = (self.aa - q) / p;
        let d22 = (self.bb - q) / p;
        let d33 = (self.cc - q) / p;
        let ab = self.ab / p;
        let ac = self.ac / p;
        let bc = self.bc / p;
        let det = d11 * d22 * d33 + 2.0 * (ab * bc * ac.conj()).re
            - d11 * bc.norm_sqr()
            - d22 * ac.norm_sqr()
            - d33 * ab.norm_sqr();
        let phi = (det / 2.0).clamp(-1.0, 1.0).acos() / 3.0;
        // phi lies in [0, pi/3]; shifting by 2pi/3 selects the smallest root
        q + 2.0 * p * (phi + 2.0 * std::f64::consts::FRAC_PI_3).cos()
    }

    /// How far the state is from being physical: max of trace error,
    /// negative-population excess, and negative-eigenvalue excess.
    pub fn positivity_defect(&self) -> f64 {
        let tr = (self.trace() - 1.0).abs();
        let diag = (-self.aa).max(-self.bb).max(-self.cc).max(0.0);
        let eig = (-self.min_eigenvalue()).max(0.0);
        tr.max(diag).max(eig)
    }
}

/// Which field does what at the switching instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwitchMode {
    /// Coupling off before `switch_time`, on from there; probe always on.
    TurnOn,
    /// Coupling on before `switch_time`, off from there; probe always on.
    TurnOff,
    /// Both fields off before `switch_time`, both on from there.
    BothOn,
    /// No switching: coupling and probe on for all times.
    Steady,
}

/// Piecewise-constant coupling-field history. `omega1_at` is
/// right-continuous: the post-switch value holds at `switch_time` itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSchedule {
    pub mode: SwitchMode,
    /// Instant (us) at which the configuration changes.
    pub switch_time: f64,
    /// Coupling Rabi frequency (MHz) during the on phase.
    pub omega1_on: f64,
}

impl FieldSchedule {
    pub fn new(mode: SwitchMode, switch_time: f64, omega1_on: f64) -> Self {
        FieldSchedule { mode, switch_time, omega1_on }
    }

    /// Coupling Rabi frequency at time `t`.
    pub fn omega1_at(&self, t: f64) -> f64 {
        let after = t >= self.switch_time;
        match self.mode {
            SwitchMode::TurnOn | SwitchMode::BothOn => {
                if after {
                    self.omega1_on
                } else {
                    0.0
                }
            }
            SwitchMode::TurnOff => {
                if after {
                    0.0
                } else {
                    self.omega1_on
                }
            }
            SwitchMode::Steady => self.omega1_on,
        }
    }

    /// Whether the probe field is active at time `t`. Only `BothOn` ever
    /// gates the probe.
    pub fn probe_on_at(&self, t: f64) -> bool {
        match self.mode {
            SwitchMode::BothOn => t >= self.switch_time,
            _ => true,
        }
    }
}

/// Probe detunings (MHz) of the two dressed states created by a coupling
/// field of Rabi frequency `omega1` detuned by `delta1`:
/// `delta1/2 +- sqrt(omega1^2 + delta1^2)/2`.
///
/// Returns `(major, minor)`: the major component is the dressed state
/// closer to the bare `b-c` resonance (ties resolve to the positive
/// branch).
pub fn dressed_state_positions(delta1: f64, omega1: f64) -> (f64, f64) {
    let half_split = 0.5 * (omega1 * omega1 + delta1 * delta1).sqrt();
    let plus = 0.5 * delta1 + half_split;
    let minus = 0.5 * delta1 - half_split;
    if plus.abs() <= minus.abs() {
        (plus, minus)
    } else {
        (minus, plus)
    }
}

/// Values read from a config file. Every field is optional; the caller
/// layers these under/over other sources.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ConfigValues {
    pub omega1: Option<f64>,
    pub omega2: Option<f64>,
    pub delta1: Option<f64>,
    pub delta2: Option<f64>,
    pub gamma_ca: Option<f64>,
    pub gamma_cb: Option<f64>,
    pub gamma_ba: Option<f64>,
    pub uncoupled_fraction: Option<f64>,
    pub mode: Option<SwitchMode>,
    pub switch_time: Option<f64>,
}

/// Parses `key = value` lines. `#` starts a comment, blank lines are
/// skipped, unknown keys are errors (typos must not silently vanish).
pub fn parse_config(text: &str) -> Result<ConfigValues, ModelError> {
    let mut out = ConfigValues::default();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ModelError::Config {
            line: line_no,
            what: format!("expected `key = value`, got `{line}`"),
        })?;
        let key = key.trim();
        let value = value.trim();
        let num = || -> Result<f64, ModelError> {
            value.parse::<f64>().map_err(|_| ModelError::Config {
                line: line_no,
                what: format!("`{key}` wants a number, got `{value}`"),
            })
        };
        match key {
            "omega1" => out.omega1 = Some(num()?),
            "omega2" => out.omega2 = Some(num()?),
            "delta1" => out.delta1 = Some(num()?),
            "delta2" => out.delta2 = Some(num()?),
            "gamma_ca" => out.gamma_ca = Some(num()?),
            "gamma_cb" => out.gamma_cb = Some(num()?),
            "gamma_ba" => out.gamma_ba = Some(num()?),
            "uncoupled_fraction" => out.uncoupled_fraction = Some(num()?),
            "switch_time" => out.switch_time = Some(num()?),
            "mode" => {
                let norm: String = value
                    .chars()
                    .filter(|c| *c != '_' && *c != '-')
                    .collect::<String>()
                    .to_ascii_lowercase();
                out.mode = Some(match norm.as_str() {
                    "turnon" => SwitchMode::TurnOn,
                    "turnoff" => SwitchMode::TurnOff,
                    "bothon" => SwitchMode::BothOn,
                    "steady" => SwitchMode::Steady,
                    _ => {
                        return Err(ModelError::Config {
                            line: line_no,
                            what: format!(
                                "`mode` must be one of turnon/turnoff/bothon/steady, got `{value}`"
                            ),
                        })
                    }
                });
            }
            _ => {
                return Err(ModelError::Config {
                    line: line_no,
                    what: format!("unknown key `{key}`"),
                })
            }
        }
    }
    Ok(out)
}
