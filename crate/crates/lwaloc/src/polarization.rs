//! Wave polarization states and antenna reception gains.
//!
//! A monochromatic wave is described by the amplitudes of its two transverse
//! field components and their relative phase. Depending on that phase and the
//! amplitude ratio the wave is linearly, circularly, or elliptically
//! polarized; circular and elliptical waves additionally carry a handedness
//! (rotation sense). Reception gain is the fraction of incident power an
//! antenna of a given polarization extracts from the wave.
//!
//! The one hard guarantee callers rely on: a circularly polarized wave and a
//! circularly polarized antenna of *opposite* handedness couple with gain
//! exactly 0.0, and with gain exactly 1.0 when handedness matches. Everything
//! downstream (on/off spectra, antenna separation) leans on that isolation
//! being exact rather than merely small.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default tolerance used when classifying a polarization state.
pub const DEFAULT_CLASSIFY_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum PolarizationError {
    #[error("field amplitudes must be finite and non-negative (got ex0={ex0}, ey0={ey0})")]
    InvalidAmplitude { ex0: f64, ey0: f64 },
    #[error("both field amplitudes are zero; the polarization state is undefined")]
    ZeroAmplitude,
    #[error("relative phase must be finite (got {0})")]
    InvalidPhase(f64),
}

/// Rotation sense of a circular or elliptical wave.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Handedness {
    Left,
    Right,
}

impl Handedness {
    pub fn opposite(self) -> Handedness {
        match self {
            Handedness::Left => Handedness::Right,
            Handedness::Right => Handedness::Left,
        }
    }
}

impl std::fmt::Display for Handedness {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Handedness::Left => write!(f, "left"),
            Handedness::Right => write!(f, "right"),
        }
    }
}

/// Transverse field description of a wave: component amplitudes `ex0`,
/// `ey0` (non-negative, not both zero) and the relative phase `dphi` of the
/// y component with respect to the x component, wrapped to [-pi, pi].
///
/// A positive `dphi` rotates the field counterclockwise as seen from the
/// receiver, i.e. left-handed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarizationState {
    ex0: f64,
    ey0: f64,
    dphi: f64,
}

impl PolarizationState {
    pub fn new(ex0: f64, ey0: f64, dphi: f64) -> Result<Self, PolarizationError> {
        if !ex0.is_finite() || !ey0.is_finite() || ex0 < 0.0 || ey0 < 0.0 {
            return Err(PolarizationError::InvalidAmplitude { ex0, ey0 });
        }
        if ex0 == 0.0 && ey0 == 0.0 {
            return Err(PolarizationError::ZeroAmplitude);
        }
        if !dphi.is_finite() {
            return Err(PolarizationError::InvalidPhase(dphi));
        }
        // Wrap the phase into [-pi, pi]; rem_euclid keeps the result exact
        // for inputs already in range.
        let mut wrapped = dphi;
        if !(-std::f64::consts::PI..=std::f64::consts::PI).contains(&wrapped) {
            wrapped = (wrapped + std::f64::consts::PI)
                .rem_euclid(2.0 * std::f64::consts::PI)
                - std::f64::consts::PI;
        }
        Ok(PolarizationState { ex0, ey0, dphi: wrapped })
    }

    pub fn ex0(&self) -> f64 {
        self.ex0
    }

    pub fn ey0(&self) -> f64 {
        self.ey0
    }

    pub fn dphi(&self) -> f64 {
        self.dphi
    }

    /// Power fraction carried by the left-handed circular component.
    ///
    /// Decomposing the field into circular basis vectors gives component
    /// powers (ex0^2 + ey0^2 +- 2 ex0 ey0 sin dphi) / 2; the left-handed
    /// share reduces to the expression below.
    fn left_circular_fraction(&self) -> f64 {
        let total = self.ex0 * self.ex0 + self.ey0 * self.ey0;
        0.5 + self.ex0 * self.ey0 * self.dphi.sin() / total
    }
}

/// Shape of a polarization state: the discriminating classes only, without
/// the orientation/fraction details carried by [`SignalPolarization`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolarizationClass {
    Linear,
    Circular(Handedness),
    Elliptical(Handedness),
}

/// Classify a state as linear / circular / elliptical.
///
/// Linear: the two components oscillate in (anti)phase, i.e. |sin dphi| is
/// within `tol` of zero. Circular: quarter-turn phase *and* equal amplitudes,
/// both within `tol` (amplitudes compared relative to the larger one).
/// Everything else is elliptical. Handedness follows the sign of `dphi`.
pub fn classify(state: &PolarizationState, tol: f64) -> PolarizationClass {
    if state.dphi.sin().abs() <= tol {
        return PolarizationClass::Linear;
    }
    let handedness = if state.dphi > 0.0 { Handedness::Left } else { Handedness::Right };
    let quarter_turn = (state.dphi.abs() - std::f64::consts::FRAC_PI_2).abs() <= tol;
    let equal_amplitude =
        (state.ex0 - state.ey0).abs() <= tol * state.ex0.max(state.ey0);
    if quarter_turn && equal_amplitude {
        PolarizationClass::Circular(handedness)
    } else {
        PolarizationClass::Elliptical(handedness)
    }
}

/// Polarization of an incident signal, with the detail reception needs:
/// orientation for linear waves, handedness for circular ones, and the
/// co-handed circular power fraction for elliptical ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SignalPolarization {
    /// Linearly polarized along `angle_rad` (radians, in [0, pi)).
    Linear { angle_rad: f64 },
    Circular(Handedness),
    /// Elliptical wave whose majority circular component has the given
    /// handedness and power fraction `co_fraction` in (0.5, 1.0].
    Elliptical { handedness: Handedness, co_fraction: f64 },
}

/// Polarization of a receiving antenna.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AntennaPolarization {
    /// Linearly polarized along `angle_rad` (radians).
    Linear { angle_rad: f64 },
    Circular(Handedness),
}

/// Resolve a field state into the signal description used by
/// [`reception_gain`], classifying with tolerance `tol`.
pub fn signal_from_state(state: &PolarizationState, tol: f64) -> SignalPolarization {
    match classify(state, tol) {
        PolarizationClass::Linear => {
            // In-phase components point along (ex0, ey0); antiphase flips the
            // y component. Fold into [0, pi) since a polarization axis has no
            // sign.
            let flip = if state.dphi.cos() < 0.0 { -1.0 } else { 1.0 };
            let mut angle = (flip * state.ey0).atan2(state.ex0);
            if angle < 0.0 {
                angle += std::f64::consts::PI;
            }
            SignalPolarization::Linear { angle_rad: angle }
        }
        PolarizationClass::Circular(h) => SignalPolarization::Circular(h),
        PolarizationClass::Elliptical(h) => {
            let left = state.left_circular_fraction();
            let co_fraction = match h {
                Handedness::Left => left,
                Handedness::Right => 1.0 - left,
            };
            SignalPolarization::Elliptical { handedness: h, co_fraction }
        }
    }
}

/// Fraction of incident signal power captured by `antenna`, in [0, 1].
///
/// - linear onto linear: cos^2 of the orientation mismatch;
/// - linear onto circular (either direction): exactly 0.5;
/// - circular onto circular: exactly 1.0 co-handed, exactly 0.0 cross-handed;
/// - elliptical onto circular: the co-/cross-handed circular power fraction;
/// - elliptical onto linear: 0.5.
pub fn reception_gain(signal: &SignalPolarization, antenna: &AntennaPolarization) -> f64 {
    use AntennaPolarization as Ant;
    use SignalPolarization as Sig;
    match (signal, antenna) {
        (Sig::Linear { angle_rad: a }, Ant::Linear { angle_rad: b }) => {
            (a - b).cos().powi(2)
        }
        (Sig::Linear { .. }, Ant::Circular(_)) => 0.5,
        (Sig::Circular(s), Ant::Circular(a)) => {
            if s == a {
                1.0
            } else {
                0.0
            }
        }
        (Sig::Circular(_), Ant::Linear { .. }) => 0.5,
        (Sig::Elliptical { handedness, co_fraction }, Ant::Circular(a)) => {
            if handedness == a {
                *co_fraction
            } else {
                1.0 - *co_fraction
            }
        }
        (Sig::Elliptical { .. }, Ant::Linear { .. }) => 0.5,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    const TOL: f64 = DEFAULT_CLASSIFY_TOL;

    #[test]
    fn equal_amplitudes_quarter_phase_is_left_circular() {
        let state = PolarizationState::new(1.0, 1.0, FRAC_PI_2).unwrap();
        assert_eq!(classify(&state, TOL), PolarizationClass::Circular(Handedness::Left));
    }

    #[test]
    fn negative_quarter_phase_is_right_circular() {
        let state = PolarizationState::new(2.0, 2.0, -FRAC_PI_2).unwrap();
        assert_eq!(classify(&state, TOL), PolarizationClass::Circular(Handedness::Right));
    }

    #[test]
    fn zero_phase_is_linear_regardless_of_amplitude_ratio() {
        let state = PolarizationState::new(1.0, 2.0, 0.0).unwrap();
        assert_eq!(classify(&state, TOL), PolarizationClass::Linear);
        let antiphase = PolarizationState::new(1.0, 2.0, PI).unwrap();
        assert_eq!(classify(&antiphase, TOL), PolarizationClass::Linear);
    }

    #[test]
    fn intermediate_phase_is_elliptical() {
        let state = PolarizationState::new(1.0, 1.0, FRAC_PI_4).unwrap();
        assert_eq!(classify(&state, TOL), PolarizationClass::Elliptical(Handedness::Left));
    }

    #[test]
    fn unequal_amplitudes_at_quarter_phase_are_elliptical() {
        let state = PolarizationState::new(1.0, 0.5, FRAC_PI_2).unwrap();
        assert_eq!(classify(&state, TOL), PolarizationClass::Elliptical(Handedness::Left));
    }

    #[test]
    fn zero_amplitude_state_is_rejected() {
        assert_eq!(
            PolarizationState::new(0.0, 0.0, 0.3).unwrap_err(),
            PolarizationError::ZeroAmplitude
        );
        assert!(matches!(
            PolarizationState::new(-1.0, 1.0, 0.3).unwrap_err(),
            PolarizationError::InvalidAmplitude { .. }
        ));
    }

    #[test]
    fn cross_handed_circular_gain_is_exactly_zero() {
        let lhcp = SignalPolarization::Circular(Handedness::Left);
        let rhcp_antenna = AntennaPolarization::Circular(Handedness::Right);
        assert_eq!(reception_gain(&lhcp, &rhcp_antenna), 0.0);
        let co = AntennaPolarization::Circular(Handedness::Left);
        assert_eq!(reception_gain(&lhcp, &co), 1.0);
    }

    #[test]
    fn linear_onto_circular_is_exactly_half() {
        let lp = SignalPolarization::Linear { angle_rad: 0.7 };
        for h in [Handedness::Left, Handedness::Right] {
            assert_eq!(reception_gain(&lp, &AntennaPolarization::Circular(h)), 0.5);
        }
    }

    #[test]
    fn crossed_linear_gain_vanishes() {
        let lp = SignalPolarization::Linear { angle_rad: 0.0 };
        let crossed = AntennaPolarization::Linear { angle_rad: FRAC_PI_2 };
        // cos(pi/2) is not exactly representable, so the gain is a rounding
        // residue rather than an exact zero.
        assert!(reception_gain(&lp, &crossed) < 1e-30);
        let aligned = AntennaPolarization::Linear { angle_rad: 0.0 };
        assert_eq!(reception_gain(&lp, &aligned), 1.0);
    }

    #[test]
    fn elliptical_splits_into_circular_fractions() {
        // ex0=1, ey0=0.5, quarter phase: left fraction
        // 0.5 + (1 * 0.5 * 1) / (1 + 0.25) = 0.9.
        let state = PolarizationState::new(1.0, 0.5, FRAC_PI_2).unwrap();
        let signal = signal_from_state(&state, TOL);
        match signal {
            SignalPolarization::Elliptical { handedness, co_fraction } => {
                assert_eq!(handedness, Handedness::Left);
                assert!((co_fraction - 0.9).abs() < 1e-12);
            }
            other => panic!("expected elliptical signal, got {other:?}"),
        }
        let left_ant = AntennaPolarization::Circular(Handedness::Left);
        let right_ant = AntennaPolarization::Circular(Handedness::Right);
        assert!((reception_gain(&signal, &left_ant) - 0.9).abs() < 1e-12);
        assert!((reception_gain(&signal, &right_ant) - 0.1).abs() < 1e-12);
        let lp = AntennaPolarization::Linear { angle_rad: 1.0 };
        assert_eq!(reception_gain(&signal, &lp), 0.5);
    }

    #[test]
    fn linear_orientation_follows_amplitude_ratio() {
        // In-phase (1, 1) points 45 degrees between the axes.
        let state = PolarizationState::new(1.0, 1.0, 0.0).unwrap();
        match signal_from_state(&state, TOL) {
            SignalPolarization::Linear { angle_rad } => {
                assert!((angle_rad - FRAC_PI_4).abs() < 1e-12)
            }
            other => panic!("expected linear signal, got {other:?}"),
        }
        // Antiphase mirrors the orientation across the x axis.
        let state = PolarizationState::new(1.0, 1.0, PI).unwrap();
        match signal_from_state(&state, TOL) {
            SignalPolarization::Linear { angle_rad } => {
                assert!((angle_rad - 3.0 * FRAC_PI_4).abs() < 1e-12)
            }
            other => panic!("expected linear signal, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn gain_is_a_power_fraction(
            ex0 in 1e-3f64..1e3,
            ey0 in 1e-3f64..1e3,
            dphi in -PI..PI,
            ant_angle in 0.0f64..PI,
        ) {
            let state = PolarizationState::new(ex0, ey0, dphi).unwrap();
            let signal = signal_from_state(&state, TOL);
            for antenna in [
                AntennaPolarization::Linear { angle_rad: ant_angle },
                AntennaPolarization::Circular(Handedness::Left),
                AntennaPolarization::Circular(Handedness::Right),
            ] {
                let g = reception_gain(&signal, &antenna);
                prop_assert!((0.0..=1.0).contains(&g), "gain {} out of range", g);
            }
        }

        #[test]
        fn orthogonal_linear_antennas_capture_all_power(
            sig_angle in 0.0f64..PI,
            ant_angle in 0.0f64..PI,
        ) {
            let signal = SignalPolarization::Linear { angle_rad: sig_angle };
            let a = AntennaPolarization::Linear { angle_rad: ant_angle };
            let b = AntennaPolarization::Linear { angle_rad: ant_angle + FRAC_PI_2 };
            let total = reception_gain(&signal, &a) + reception_gain(&signal, &b);
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn opposite_circular_antennas_capture_all_power(
            ex0 in 1e-3f64..1e3,
            ey0 in 1e-3f64..1e3,
            dphi in -PI..PI,
        ) {
            let state = PolarizationState::new(ex0, ey0, dphi).unwrap();
            let signal = signal_from_state(&state, TOL);
            let left = AntennaPolarization::Circular(Handedness::Left);
            let right = AntennaPolarization::Circular(Handedness::Right);
            let total = reception_gain(&signal, &left) + reception_gain(&signal, &right);
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn classification_is_scale_invariant(
            ex0 in 1e-3f64..1e3,
            ey0 in 1e-3f64..1e3,
            dphi in -PI..PI,
            scale in 1e-3f64..1e3,
        ) {
            let a = PolarizationState::new(ex0, ey0, dphi).unwrap();
            let b = PolarizationState::new(scale * ex0, scale * ey0, dphi).unwrap();
            prop_assert_eq!(classify(&a, TOL), classify(&b, TOL));
        }
    }
}
