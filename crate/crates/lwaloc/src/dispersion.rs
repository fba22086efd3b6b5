//! Frequency-dependent beam steering of a leaky-wave antenna (LWA).
//!
//! A leaky-wave antenna radiates each frequency into its own polar angle
//! measured from the antenna axis: the guided wave's phase constant varies
//! with frequency, and the radiation angle satisfies
//! `theta(f) = arccos(beta(f) / k0(f))`. Over the supported band the mapping
//! is strictly monotone, so every frequency names one angle and vice versa.
//! The radiated pattern is rotationally symmetric about the axis — a cone of
//! half-angle `theta(f)` — which is what lets a receiver turn an observed
//! frequency into a cone constraint on the transmitter direction.
//!
//! A right-handed feed steers the band across the forward region (angles
//! below 90 degrees); feeding the same aperture from the other end radiates
//! left-handed and mirrors every angle to `180 - theta`.

use crate::polarization::Handedness;
use thiserror::Error;

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT_M_PER_S: f64 = 299_792_458.0;

/// Default supported band (Hz).
pub const DEFAULT_F_MIN_HZ: f64 = 5.17e9;
pub const DEFAULT_F_MAX_HZ: f64 = 5.33e9;
/// Default steering range of the right-handed feed (degrees from the axis).
pub const DEFAULT_THETA_AT_FMIN_DEG: f64 = 22.0;
pub const DEFAULT_THETA_AT_FMAX_DEG: f64 = 44.0;
/// Default half-power beamwidth of the radiated lobe (degrees).
pub const DEFAULT_BEAMWIDTH_DEG: f64 = 10.0;
/// Default realized-gain floor across the band (dB); the lobe model uses it
/// as the peak gain, which keeps the model conservative.
pub const DEFAULT_GAIN_FLOOR_DB: f64 = 11.5;

/// Relative slack applied to band/range membership checks so values produced
/// by downstream arithmetic (e.g. grid frequencies reconstructed from a
/// center and spacing) are not rejected over last-ulp rounding.
const RANGE_TOL_REL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum DispersionError {
    #[error("band must satisfy 0 < f_min < f_max (got {f_min} .. {f_max} Hz)")]
    InvalidBand { f_min: f64, f_max: f64 },
    #[error("steering angles must lie strictly inside (0, 180) degrees (got {0})")]
    AngleOutsideOpenInterval(f64),
    #[error("calibration must be strictly monotone in frequency and angle")]
    NonMonotoneCalibration,
    #[error("calibration needs at least two points (got {0})")]
    TooFewCalibrationPoints(usize),
    #[error("beamwidth must be a positive finite angle in degrees (got {0})")]
    InvalidBeamwidth(f64),
    #[error("frequency {f_hz} Hz is outside the supported band {f_min} .. {f_max} Hz")]
    FrequencyOutOfBand { f_hz: f64, f_min: f64, f_max: f64 },
    #[error("angle {theta_deg} deg is outside the steering range {lo} .. {hi} deg")]
    AngleOutsideRange { theta_deg: f64, lo: f64, hi: f64 },
    #[error("a {handedness}-handed feed must steer {expected} of 90 degrees, \
             but the calibration covers {lo} .. {hi} deg")]
    RegionMismatch { handedness: Handedness, expected: &'static str, lo: f64, hi: f64 },
}

/// Monotone frequency-to-angle calibration.
#[derive(Debug, Clone, PartialEq)]
pub enum CalibrationCurve {
    /// Straight line between the band endpoints.
    Linear { theta_at_fmin_deg: f64, theta_at_fmax_deg: f64 },
    /// Piecewise-linear through `(frequency Hz, angle deg)` knots, strictly
    /// monotone in both coordinates, sorted by frequency.
    Tabulated(Vec<(f64, f64)>),
}

/// Dispersion behaviour of one LWA feed: band, steering calibration and the
/// shape of the radiated lobe.
#[derive(Debug, Clone, PartialEq)]
pub struct DispersionModel {
    f_min_hz: f64,
    f_max_hz: f64,
    curve: CalibrationCurve,
    beamwidth_deg: f64,
    gain_floor_db: f64,
}

impl DispersionModel {
    /// Linear calibration between the two band endpoints.
    pub fn linear(
        f_min_hz: f64,
        f_max_hz: f64,
        theta_at_fmin_deg: f64,
        theta_at_fmax_deg: f64,
        beamwidth_deg: f64,
        gain_floor_db: f64,
    ) -> Result<Self, DispersionError> {
        validate_band(f_min_hz, f_max_hz)?;
        validate_angle(theta_at_fmin_deg)?;
        validate_angle(theta_at_fmax_deg)?;
        if theta_at_fmin_deg == theta_at_fmax_deg {
            return Err(DispersionError::NonMonotoneCalibration);
        }
        validate_beamwidth(beamwidth_deg)?;
        Ok(DispersionModel {
            f_min_hz,
            f_max_hz,
            curve: CalibrationCurve::Linear { theta_at_fmin_deg, theta_at_fmax_deg },
            beamwidth_deg,
            gain_floor_db,
        })
    }

    /// Piecewise-linear calibration through measured `(Hz, deg)` knots. The
    /// band is taken from the first and last knot.
    pub fn tabulated(
        points: Vec<(f64, f64)>,
        beamwidth_deg: f64,
        gain_floor_db: f64,
    ) -> Result<Self, DispersionError> {
        if points.len() < 2 {
            return Err(DispersionError::TooFewCalibrationPoints(points.len()));
        }
        for &(f, theta) in &points {
            if !f.is_finite() || f <= 0.0 {
                return Err(DispersionError::InvalidBand { f_min: f, f_max: f });
            }
            validate_angle(theta)?;
        }
        let freq_increasing = points.windows(2).all(|w| w[0].0 < w[1].0);
        if !freq_increasing {
            return Err(DispersionError::NonMonotoneCalibration);
        }
        let angle_increasing = points.windows(2).all(|w| w[0].1 < w[1].1);
        let angle_decreasing = points.windows(2).all(|w| w[0].1 > w[1].1);
        if !angle_increasing && !angle_decreasing {
            return Err(DispersionError::NonMonotoneCalibration);
        }
        validate_beamwidth(beamwidth_deg)?;
        let (f_min_hz, f_max_hz) = (points[0].0, points[points.len() - 1].0);
        Ok(DispersionModel {
            f_min_hz,
            f_max_hz,
            curve: CalibrationCurve::Tabulated(points),
            beamwidth_deg,
            gain_floor_db,
        })
    }

    /// The published defaults for the forward (right-handed) feed.
    pub fn forward_default() -> Self {
        DispersionModel::linear(
            DEFAULT_F_MIN_HZ,
            DEFAULT_F_MAX_HZ,
            DEFAULT_THETA_AT_FMIN_DEG,
            DEFAULT_THETA_AT_FMAX_DEG,
            DEFAULT_BEAMWIDTH_DEG,
            DEFAULT_GAIN_FLOOR_DB,
        )
        .expect("default calibration is valid")
    }

    /// The same aperture fed from the other end: every angle mirrors to
    /// `180 - theta`, band and lobe shape unchanged.
    pub fn mirrored(&self) -> Self {
        let curve = match &self.curve {
            CalibrationCurve::Linear { theta_at_fmin_deg, theta_at_fmax_deg } => {
                CalibrationCurve::Linear {
                    theta_at_fmin_deg: 180.0 - theta_at_fmin_deg,
                    theta_at_fmax_deg: 180.0 - theta_at_fmax_deg,
                }
            }
            CalibrationCurve::Tabulated(points) => CalibrationCurve::Tabulated(
                points.iter().map(|&(f, th)| (f, 180.0 - th)).collect(),
            ),
        };
        DispersionModel { curve, ..self.clone() }
    }

    pub fn band_hz(&self) -> (f64, f64) {
        (self.f_min_hz, self.f_max_hz)
    }

    pub fn curve(&self) -> &CalibrationCurve {
        &self.curve
    }

    pub fn beamwidth_deg(&self) -> f64 {
        self.beamwidth_deg
    }

    pub fn gain_floor_db(&self) -> f64 {
        self.gain_floor_db
    }

    /// Steering range as `(lo, hi)` with `lo < hi`, regardless of whether the
    /// calibration rises or falls with frequency.
    pub fn angular_range_deg(&self) -> (f64, f64) {
        let (a, b) = match &self.curve {
            CalibrationCurve::Linear { theta_at_fmin_deg, theta_at_fmax_deg } => {
                (*theta_at_fmin_deg, *theta_at_fmax_deg)
            }
            CalibrationCurve::Tabulated(points) => {
                (points[0].1, points[points.len() - 1].1)
            }
        };
        (a.min(b), a.max(b))
    }

    pub fn in_band(&self, f_hz: f64) -> bool {
        let tol = RANGE_TOL_REL * (self.f_max_hz - self.f_min_hz);
        f_hz.is_finite() && f_hz >= self.f_min_hz - tol && f_hz <= self.f_max_hz + tol
    }

    /// Radiation angle (degrees from the axis) of an in-band frequency.
    pub fn angle_of_frequency(&self, f_hz: f64) -> Result<f64, DispersionError> {
        if !self.in_band(f_hz) {
            return Err(DispersionError::FrequencyOutOfBand {
                f_hz,
                f_min: self.f_min_hz,
                f_max: self.f_max_hz,
            });
        }
        match &self.curve {
            CalibrationCurve::Linear { theta_at_fmin_deg, theta_at_fmax_deg } => {
                // The fraction form keeps the endpoints exact: at f == f_max
                // the numerator equals the denominator, so frac is 1.0.
                let frac = ((f_hz - self.f_min_hz) / (self.f_max_hz - self.f_min_hz))
                    .clamp(0.0, 1.0);
                Ok(theta_at_fmin_deg + frac * (theta_at_fmax_deg - theta_at_fmin_deg))
            }
            CalibrationCurve::Tabulated(points) => {
                let f = f_hz.clamp(points[0].0, points[points.len() - 1].0);
                let seg = points
                    .windows(2)
                    .find(|w| f <= w[1].0)
                    .expect("clamped frequency falls in some segment");
                let frac = ((f - seg[0].0) / (seg[1].0 - seg[0].0)).clamp(0.0, 1.0);
                Ok(seg[0].1 + frac * (seg[1].1 - seg[0].1))
            }
        }
    }

    /// Inverse of [`angle_of_frequency`]: the in-band frequency steered to
    /// `theta_deg`.
    pub fn frequency_of_angle(&self, theta_deg: f64) -> Result<f64, DispersionError> {
        let (lo, hi) = self.angular_range_deg();
        let tol = RANGE_TOL_REL * (hi - lo);
        if !theta_deg.is_finite() || theta_deg < lo - tol || theta_deg > hi + tol {
            return Err(DispersionError::AngleOutsideRange { theta_deg, lo, hi });
        }
        match &self.curve {
            CalibrationCurve::Linear { theta_at_fmin_deg, theta_at_fmax_deg } => {
                let frac = ((theta_deg - theta_at_fmin_deg)
                    / (theta_at_fmax_deg - theta_at_fmin_deg))
                    .clamp(0.0, 1.0);
                Ok(self.f_min_hz + frac * (self.f_max_hz - self.f_min_hz))
            }
            CalibrationCurve::Tabulated(points) => {
                let theta = theta_deg.clamp(lo, hi);
                let seg = points
                    .windows(2)
                    .find(|w| {
                        let (a, b) = (w[0].1.min(w[1].1), w[0].1.max(w[1].1));
                        theta >= a && theta <= b
                    })
                    .expect("clamped angle falls in some segment");
                let frac = ((theta - seg[0].1) / (seg[1].1 - seg[0].1)).clamp(0.0, 1.0);
                Ok(seg[0].0 + frac * (seg[1].0 - seg[0].0))
            }
        }
    }

    /// Linear power gain radiated at `direction_angle_deg` (polar angle from
    /// the axis) for an in-band frequency.
    ///
    /// The lobe is a Gaussian in angular offset from the frequency's
    /// boresight, half power at `beamwidth / 2` either side, with peak gain
    /// `10^(gain_floor_db / 10)`. The pattern carries no azimuth dependence:
    /// the lobe is a cone around the axis.
    pub fn radiated_gain(
        &self,
        f_hz: f64,
        direction_angle_deg: f64,
    ) -> Result<f64, DispersionError> {
        let boresight = self.angle_of_frequency(f_hz)?;
        let offset = direction_angle_deg - boresight;
        let peak = 10f64.powf(self.gain_floor_db / 10.0);
        let half_widths = 2.0 * offset / self.beamwidth_deg;
        Ok(peak * (-(half_widths * half_widths)).exp2())
    }

    /// Guided-wave phase constant implied by the calibration (rad/m):
    /// `beta(f) = k0(f) cos(theta(f))` with `k0 = 2 pi f / c`.
    pub fn phase_constant_rad_per_m(&self, f_hz: f64) -> Result<f64, DispersionError> {
        let theta = self.angle_of_frequency(f_hz)?.to_radians();
        let k0 = 2.0 * std::f64::consts::PI * f_hz / SPEED_OF_LIGHT_M_PER_S;
        Ok(k0 * theta.cos())
    }
}

fn validate_band(f_min: f64, f_max: f64) -> Result<(), DispersionError> {
    if !f_min.is_finite() || !f_max.is_finite() || f_min <= 0.0 || f_min >= f_max {
        return Err(DispersionError::InvalidBand { f_min, f_max });
    }
    Ok(())
}

fn validate_angle(theta_deg: f64) -> Result<(), DispersionError> {
    if !theta_deg.is_finite() || theta_deg <= 0.0 || theta_deg >= 180.0 {
        return Err(DispersionError::AngleOutsideOpenInterval(theta_deg));
    }
    Ok(())
}

fn validate_beamwidth(beamwidth_deg: f64) -> Result<(), DispersionError> {
    if !beamwidth_deg.is_finite() || beamwidth_deg <= 0.0 || beamwidth_deg >= 180.0 {
        return Err(DispersionError::InvalidBeamwidth(beamwidth_deg));
    }
    Ok(())
}

/// One feed of a leaky-wave antenna: the circular polarization it radiates
/// plus its dispersion model. A right-handed feed must steer the forward
/// region (all angles below 90 degrees), a left-handed feed the backward
/// region.
#[derive(Debug, Clone, PartialEq)]
pub struct LwaFeed {
    handedness: Handedness,
    model: DispersionModel,
}

impl LwaFeed {
    pub fn new(handedness: Handedness, model: DispersionModel) -> Result<Self, DispersionError> {
        let (lo, hi) = model.angular_range_deg();
        let region_ok = match handedness {
            Handedness::Right => hi < 90.0,
            Handedness::Left => lo > 90.0,
        };
        if !region_ok {
            let expected = match handedness {
                Handedness::Right => "the forward region (all angles short",
                Handedness::Left => "the backward region (all angles past",
            };
            return Err(DispersionError::RegionMismatch { handedness, expected, lo, hi });
        }
        Ok(LwaFeed { handedness, model })
    }

    /// Right-handed feed with the published default calibration.
    pub fn rhcp_default() -> Self {
        LwaFeed::new(Handedness::Right, DispersionModel::forward_default())
            .expect("default forward feed is valid")
    }

    /// Left-handed feed: the mirrored default calibration.
    pub fn lhcp_default() -> Self {
        LwaFeed::new(Handedness::Left, DispersionModel::forward_default().mirrored())
            .expect("default backward feed is valid")
    }

    pub fn handedness(&self) -> Handedness {
        self.handedness
    }

    pub fn model(&self) -> &DispersionModel {
        &self.model
    }

    pub fn band_hz(&self) -> (f64, f64) {
        self.model.band_hz()
    }

    pub fn angular_range_deg(&self) -> (f64, f64) {
        self.model.angular_range_deg()
    }

    pub fn in_fov(&self, theta_deg: f64) -> bool {
        let (lo, hi) = self.angular_range_deg();
        let tol = RANGE_TOL_REL * (hi - lo);
        theta_deg >= lo - tol && theta_deg <= hi + tol
    }

    pub fn in_band(&self, f_hz: f64) -> bool {
        self.model.in_band(f_hz)
    }

    pub fn angle_of_frequency(&self, f_hz: f64) -> Result<f64, DispersionError> {
        self.model.angle_of_frequency(f_hz)
    }

    pub fn frequency_of_angle(&self, theta_deg: f64) -> Result<f64, DispersionError> {
        self.model.frequency_of_angle(theta_deg)
    }

    pub fn radiated_gain(
        &self,
        f_hz: f64,
        direction_angle_deg: f64,
    ) -> Result<f64, DispersionError> {
        self.model.radiated_gain(f_hz, direction_angle_deg)
    }
}
