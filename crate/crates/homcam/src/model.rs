//! Physics kernels shared by the simulator and the fitters: the HOM dip
//! shape function, the splitter coincidence-rate model and the
//! bandwidth/FWHM conversions.
//!
//! The dip kernel is the Fourier transform of the squared sinc-of-quadratic
//! phase-matching spectrum,
//!
//! ```text
//! g(a) = ∫ dy  sinc²(y²) · cos(a·y)
//! ```
//!
//! evaluated by trapezoid quadrature with step refinement. The delay axis is
//! scaled so that the returned kernel really has its half maximum at
//! `±fwhm/2`; the scale constant is found once by bisection on the quadrature
//! itself (the closed-form constant quoted alongside the formula in the
//! literature misplaces the half-maximum by a factor ≈ 1.78, see
//! `tests` below and the project README).

use std::sync::OnceLock;

use thiserror::Error;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT_M_PER_S: f64 = 299_792_458.0;

/// Default half-range of the quadrature in `y` (integrand decays as 1/y⁴).
pub const KERNEL_YMAX: f64 = 30.0;
/// Coarsest quadrature step; refined by halving until converged.
pub const KERNEL_STEP0: f64 = 0.02;
/// Relative convergence target of the internal step-refinement loop.
const KERNEL_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter {name}: {value} ({reason})")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("splitter is not lossless: t2 + r2 = {sum} (|sum - 1| must be <= 1e-9)")]
    LossySplitter { sum: f64 },
}

/// Lossless beam-splitter intensity coefficients.
///
/// `t2` and `r2` are the transmittance and reflectance *probabilities*
/// (amplitude coefficients squared), constrained to `t2 + r2 = 1`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitterSpec {
    pub t2: f64,
    pub r2: f64,
}

impl SplitterSpec {
    pub fn new(t2: f64, r2: f64) -> Result<Self, ModelError> {
        let s = Self { t2, r2 };
        s.validate()?;
        Ok(s)
    }

    /// 50:50 splitter.
    pub fn balanced() -> Self {
        Self { t2: 0.5, r2: 0.5 }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [("t2", self.t2), ("r2", self.r2)] {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(ModelError::InvalidParameter {
                    name,
                    value: v,
                    reason: "must lie in [0, 1]",
                });
            }
        }
        let sum = self.t2 + self.r2;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(ModelError::LossySplitter { sum });
        }
        Ok(())
    }
}

/// Shape of the HOM dip on the delay axis.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DipShape {
    /// Delay-stage position of the dip center, mm.
    pub d0_mm: f64,
    /// Full width at half maximum of the dip kernel, mm.
    pub fwhm_mm: f64,
    /// Mode-overlap factor V in [0, 1]; multiplies the kernel.
    pub visibility: f64,
}

impl DipShape {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.fwhm_mm.is_finite() || self.fwhm_mm <= 0.0 {
            return Err(ModelError::InvalidParameter {
                name: "fwhm_mm",
                value: self.fwhm_mm,
                reason: "must be finite and > 0",
            });
        }
        if !self.d0_mm.is_finite() {
            return Err(ModelError::InvalidParameter {
                name: "d0_mm",
                value: self.d0_mm,
                reason: "must be finite",
            });
        }
        if !self.visibility.is_finite() || !(0.0..=1.0).contains(&self.visibility) {
            return Err(ModelError::InvalidParameter {
                name: "visibility",
                value: self.visibility,
                reason: "must lie in [0, 1]",
            });
        }
        Ok(())
    }
}

/// Degenerate SPDC source spectrum: pump wavelength and spectral width.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpectrum {
    pub lambda_pump_nm: f64,
    pub delta_lambda_spdc_nm: f64,
}

impl SourceSpectrum {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.lambda_pump_nm.is_finite() || self.lambda_pump_nm <= 0.0 {
            return Err(ModelError::InvalidParameter {
                name: "lambda_pump_nm",
                value: self.lambda_pump_nm,
                reason: "must be finite and > 0",
            });
        }
        if !self.delta_lambda_spdc_nm.is_finite() || self.delta_lambda_spdc_nm <= 0.0 {
            return Err(ModelError::InvalidParameter {
                name: "delta_lambda_spdc_nm",
                value: self.delta_lambda_spdc_nm,
                reason: "must be finite and > 0",
            });
        }
        Ok(())
    }

    /// Degenerate signal/idler wavelength, nm.
    pub fn lambda_spdc_nm(&self) -> f64 {
        2.0 * self.lambda_pump_nm
    }
}

/// Dip FWHM in both length and time representations.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FwhmConversion {
    pub fwhm_mm: f64,
    pub fwhm_fs: f64,
    /// SPDC angular-frequency width, rad/s.
    pub delta_omega_rad_per_s: f64,
}

fn sinc2_of_y2(y: f64) -> f64 {
    let x = y * y;
    if x == 0.0 {
        1.0
    } else {
        let s = x.sin() / x;
        s * s
    }
}

/// Trapezoid quadrature of `2 * ∫_0^ymax sinc²(y²) cos(a y) dy` at fixed step.
///
/// The cosine is advanced with a rotation recurrence so the inner loop stays
/// multiply-add only.
fn raw_kernel_fixed(a: f64, step: f64, ymax: f64) -> f64 {
    let n = (ymax / step).ceil() as usize;
    let (sin_d, cos_d) = (a * step).sin_cos();
    let mut cos_ay = 1.0f64; // cos(a * 0)
    let mut sin_ay = 0.0f64;
    // trapezoid: half weight at both ends
    let mut acc = 0.5 * sinc2_of_y2(0.0);
    for k in 1..n {
        let c = cos_ay * cos_d - sin_ay * sin_d;
        let s = sin_ay * cos_d + cos_ay * sin_d;
        cos_ay = c;
        sin_ay = s;
        acc += sinc2_of_y2(k as f64 * step) * cos_ay;
    }
    let c_end = (a * n as f64 * step).cos();
    acc += 0.5 * sinc2_of_y2(n as f64 * step) * c_end;
    2.0 * acc * step
}

/// Step-refined quadrature: halve the step until the result moves by less
/// than `KERNEL_TOL` (relative to the zero-delay normalization scale).
fn raw_kernel(a: f64, ymax: f64) -> f64 {
    let mut step = KERNEL_STEP0;
    let mut v = raw_kernel_fixed(a, step, ymax);
    loop {
        step *= 0.5;
        let v2 = raw_kernel_fixed(a, step, ymax);
        let delta = (v2 - v).abs();
        v = v2;
        if delta < KERNEL_TOL * 2.4 || step < 1e-4 {
            return v;
        }
    }
}

fn kernel_norm() -> f64 {
    static NORM: OnceLock<f64> = OnceLock::new();
    *NORM.get_or_init(|| raw_kernel(0.0, KERNEL_YMAX))
}

/// Raw kernel profile at fixed quadrature settings, for building cached
/// evaluation tables.
pub(crate) fn kernel_profile_fixed(a: f64, step: f64, ymax: f64) -> f64 {
    raw_kernel_fixed(a, step, ymax)
}

/// Dimensionless delay-scale constant `k` such that the normalized kernel
/// `g(k·δ/fwhm)/g(0)` crosses 1/2 exactly at `δ = fwhm/2`. Found once by
/// bisection on the quadrature.
pub fn kernel_delay_scale() -> f64 {
    static SCALE: OnceLock<f64> = OnceLock::new();
    *SCALE.get_or_init(|| {
        let g0 = kernel_norm();
        let half = |a: f64| raw_kernel(a, KERNEL_YMAX) / g0 - 0.5;
        // g is monotone through the half crossing in [1.0, 2.0]
        let (mut lo, mut hi) = (1.0f64, 2.0f64);
        debug_assert!(half(lo) > 0.0 && half(hi) < 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if half(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-13 {
                break;
            }
        }
        2.0 * 0.5 * (lo + hi)
    })
}

/// HOM dip shape function, normalized so `f(0) = 1` exactly.
///
/// `delta_mm` is the delay offset `d − d0`, `fwhm_mm` the kernel full width
/// at half maximum: `f(±fwhm/2) = 1/2`.
pub fn hom_kernel(delta_mm: f64, fwhm_mm: f64) -> Result<f64, ModelError> {
    if !fwhm_mm.is_finite() || fwhm_mm <= 0.0 {
        return Err(ModelError::InvalidParameter {
            name: "fwhm_mm",
            value: fwhm_mm,
            reason: "must be finite and > 0",
        });
    }
    if !delta_mm.is_finite() {
        return Err(ModelError::InvalidParameter {
            name: "delta_mm",
            value: delta_mm,
            reason: "must be finite",
        });
    }
    if delta_mm == 0.0 {
        return Ok(1.0);
    }
    let a = kernel_delay_scale() * delta_mm.abs() / fwhm_mm;
    Ok(raw_kernel(a, KERNEL_YMAX) / kernel_norm())
}

/// Same kernel at explicit quadrature parameters; used by convergence and
/// truncation tests.
pub fn hom_kernel_with_step(
    delta_mm: f64,
    fwhm_mm: f64,
    step: f64,
    ymax: f64,
) -> Result<f64, ModelError> {
    if !fwhm_mm.is_finite() || fwhm_mm <= 0.0 {
        return Err(ModelError::InvalidParameter {
            name: "fwhm_mm",
            value: fwhm_mm,
            reason: "must be finite and > 0",
        });
    }
    let a = kernel_delay_scale() * delta_mm.abs() / fwhm_mm;
    Ok(raw_kernel_fixed(a, step, ymax) / raw_kernel_fixed(0.0, step, ymax))
}

/// Expected pair counts `(n_cross, n_fib1, n_fib2)` at delay `d_mm` given the
/// count level `n_far` far away from the dip.
///
/// `n_cross + n_fib1 + n_fib2 = n_far` for every delay (lossless splitter).
pub fn coincidence_rates(
    splitter: &SplitterSpec,
    dip: &DipShape,
    d_mm: f64,
    n_far: f64,
) -> Result<(f64, f64, f64), ModelError> {
    splitter.validate()?;
    dip.validate()?;
    if !n_far.is_finite() || n_far < 0.0 {
        return Err(ModelError::InvalidParameter {
            name: "n_far",
            value: n_far,
            reason: "must be finite and >= 0",
        });
    }
    let vf = dip.visibility * hom_kernel(d_mm - dip.d0_mm, dip.fwhm_mm)?;
    let (t2, r2) = (splitter.t2, splitter.r2);
    let cross = n_far * (t2 * t2 + r2 * r2 - 2.0 * t2 * r2 * vf);
    let fib = n_far * t2 * r2 * (1.0 + vf);
    Ok((cross, fib, fib))
}

/// Outcome probabilities for one photon pair at delay `d_mm`:
/// `(p_split, p_both_fiber1, p_both_fiber2)`, summing to one.
pub fn outcome_probabilities(
    splitter: &SplitterSpec,
    dip: &DipShape,
    d_mm: f64,
) -> Result<(f64, f64, f64), ModelError> {
    coincidence_rates(splitter, dip, d_mm, 1.0)
}

/// Convert the SPDC spectral width to the dip FWHM (length and time).
pub fn fwhm_from_bandwidth(spectrum: &SourceSpectrum) -> Result<FwhmConversion, ModelError> {
    spectrum.validate()?;
    let c = SPEED_OF_LIGHT_M_PER_S;
    let lambda_p_m = spectrum.lambda_pump_nm * 1e-9;
    let omega_p = 2.0 * std::f64::consts::PI * c / lambda_p_m;
    let delta_omega =
        spectrum.delta_lambda_spdc_nm * 1e-9 * omega_p * omega_p / (8.0 * std::f64::consts::PI * c);
    let fwhm_m = (2.0 * std::f64::consts::PI * std::f64::consts::LN_2).sqrt() * c / delta_omega;
    Ok(FwhmConversion {
        fwhm_mm: fwhm_m * 1e3,
        fwhm_fs: fwhm_m / c * 1e15,
        delta_omega_rad_per_s: delta_omega,
    })
}

/// Invert [`fwhm_from_bandwidth`]: SPDC spectral width (nm) that produces a
/// dip of the given FWHM for the given pump.
pub fn bandwidth_from_fwhm(lambda_pump_nm: f64, fwhm_mm: f64) -> Result<f64, ModelError> {
    if !lambda_pump_nm.is_finite() || lambda_pump_nm <= 0.0 {
        return Err(ModelError::InvalidParameter {
            name: "lambda_pump_nm",
            value: lambda_pump_nm,
            reason: "must be finite and > 0",
        });
    }
    if !fwhm_mm.is_finite() || fwhm_mm <= 0.0 {
        return Err(ModelError::InvalidParameter {
            name: "fwhm_mm",
            value: fwhm_mm,
            reason: "must be finite and > 0",
        });
    }
    let c = SPEED_OF_LIGHT_M_PER_S;
    let lambda_p_m = lambda_pump_nm * 1e-9;
    let omega_p = 2.0 * std::f64::consts::PI * c / lambda_p_m;
    let delta_omega =
        (2.0 * std::f64::consts::PI * std::f64::consts::LN_2).sqrt() * c / (fwhm_mm * 1e-3);
    Ok(8.0 * std::f64::consts::PI * c * delta_omega / (omega_p * omega_p) * 1e9)
}
