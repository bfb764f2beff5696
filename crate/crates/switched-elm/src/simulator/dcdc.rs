//! DC-DC boost-converter preset: two affine modes (switch on / switch off)
//! plus the periodic duty-cycle law driving them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::LinearMode;
use crate::error::{Error, Result};
use crate::reconstruction::{LawInterval, PeriodicLaw};

/// Physical parameters of the boost converter, state `x = [i_L, v]`.
///
/// The load resistance has no canonical value for this circuit; the preset
/// default of 1 ohm is chosen so that the bundled identification experiment
/// separates cleanly at its default detection threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DcDcParams {
    /// Source voltage, volts.
    pub e: f64,
    /// Inductance, henries.
    pub l_ind: f64,
    /// Inductor series resistance, ohms.
    pub r_l: f64,
    /// Capacitance, farads.
    pub c_cap: f64,
    /// Capacitor series resistance, ohms.
    pub r_c: f64,
    /// Load resistance, ohms (see struct docs for the default's rationale).
    pub r_load: f64,
    /// Switching half-period, seconds.
    pub t_s: f64,
    /// Duty cycle in `[0, 1]`.
    pub duty: f64,
}

impl Default for DcDcParams {
    fn default() -> Self {
        Self {
            e: 20.0,
            l_ind: 1e-3,
            r_l: 0.1,
            c_cap: 10e-6,
            r_c: 0.06,
            r_load: 1.0,
            t_s: 1e-4,
            duty: 0.1,
        }
    }
}

impl DcDcParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("e", self.e),
            ("l_ind", self.l_ind),
            ("r_l", self.r_l),
            ("c_cap", self.c_cap),
            ("r_c", self.r_c),
            ("r_load", self.r_load),
            ("t_s", self.t_s),
        ] {
            if v <= 0.0 || !v.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "DC-DC parameter {name} must be positive, got {v}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.duty) {
            return Err(Error::InvalidConfig(format!(
                "duty cycle must lie in [0, 1], got {}",
                self.duty
            )));
        }
        Ok(())
    }
}

/// Which arrangement of the mode matrices to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DcdcMatrixForm {
    /// The standard boost-converter state equations (dimensionally
    /// consistent, both modes stable).
    #[default]
    Standard,
    /// A dimensionally inconsistent variant that multiplies by `L` and `C`
    /// where the standard equations divide, and grows the capacitor voltage
    /// in mode 1. Kept for side-by-side comparison against transcriptions
    /// that carry these misprints.
    Uncorrected,
}

/// Build the switch-on (mode 1) and switch-off (mode 2) dynamics.
pub fn dcdc_modes(params: &DcDcParams, form: DcdcMatrixForm) -> Result<(LinearMode, LinearMode)> {
    params.validate()?;
    let DcDcParams {
        e,
        l_ind: l,
        r_l,
        c_cap: c,
        r_c,
        r_load: r,
        ..
    } = *params;
    let rr = r + r_c;
    let b = DVector::from_vec(vec![e / l, 0.0]);
    let (a1, a2) = match form {
        DcdcMatrixForm::Standard => (
            DMatrix::from_row_slice(2, 2, &[-r_l / l, 0.0, 0.0, -1.0 / (rr * c)]),
            DMatrix::from_row_slice(
                2,
                2,
                &[
                    -(r_l + r_c * r / rr) / l,
                    -r / (rr * l),
                    r / (rr * c),
                    -1.0 / (rr * c),
                ],
            ),
        ),
        DcdcMatrixForm::Uncorrected => (
            DMatrix::from_row_slice(2, 2, &[-r_l / l, 0.0, 0.0, 1.0 / (rr * c)]),
            DMatrix::from_row_slice(
                2,
                2,
                &[
                    -r_l / l - r_c * r / (l * rr),
                    -(r / rr) * l,
                    (r / rr) * c,
                    -(1.0 / rr) * c,
                ],
            ),
        ),
    };
    Ok((LinearMode::new(a1, b.clone())?, LinearMode::new(a2, b)?))
}

/// The duty-cycle law on the sample grid: period `2 T_s`, mode 1 active for
/// the first `T_s (1 + duty)`, mode 2 for the remainder.
///
/// Requires `2 T_s` and `T_s (1 + duty)` to land on integer sample counts.
pub fn dcdc_switching_law(params: &DcDcParams, dt: f64) -> Result<PeriodicLaw> {
    params.validate()?;
    if dt <= 0.0 || !dt.is_finite() {
        return Err(Error::InvalidConfig(format!("dt must be positive, got {dt}")));
    }
    let period = round_to_samples(2.0 * params.t_s, dt, "2*t_s")?;
    let on_len = round_to_samples(params.t_s * (1.0 + params.duty), dt, "t_s*(1+duty)")?;
    if on_len > period {
        return Err(Error::IncommensurateTiming(format!(
            "on-interval ({on_len} samples) exceeds the period ({period} samples)"
        )));
    }
    if on_len == period {
        // duty = 1 collapses to a single-mode law
        return Ok(PeriodicLaw::constant(1, period));
    }
    if on_len == 0 {
        return Ok(PeriodicLaw::constant(2, period));
    }
    PeriodicLaw::new(
        period,
        0,
        vec![
            LawInterval { mode: 1, start: 0, end: on_len },
            LawInterval { mode: 2, start: on_len, end: period },
        ],
    )
}

fn round_to_samples(duration: f64, dt: f64, what: &str) -> Result<usize> {
    let exact = duration / dt;
    let rounded = exact.round();
    if (exact - rounded).abs() > 1e-6 * rounded.max(1.0) {
        return Err(Error::IncommensurateTiming(format!(
            "{what} = {duration} s is {exact} sampling periods; it must divide into whole samples \
             (choose dt so that {what}/dt is an integer)"
        )));
    }
    Ok(rounded as usize)
}
