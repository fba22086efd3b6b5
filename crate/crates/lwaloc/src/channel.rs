//! Scenario description and the deterministic channel simulator.
//!
//! The modeled deployment: one WiFi AP transmits a wideband (linearly
//! polarized) signal; two wall-mounted leaky-wave antennas, fed from the AP's
//! signal, re-radiate it as circularly polarized beams whose direction
//! disperses with frequency — one right-handed, one left-handed unit. A
//! target device with two co-located circularly polarized receive antennas
//! (one per handedness) captures channel state information across the band
//! while the dispersive antennas duty-cycle on and off.
//!
//! Signal composition per subcarrier:
//!
//! * Linearly polarized paths (AP direct and AP-via-reflector) are summed as
//!   complex phasors with true propagation phases, so their resultant fades
//!   across frequency exactly as a multipath channel does. Both receive
//!   antennas see this resultant at half power (circular receiving linear).
//! * Dispersive-antenna paths arrive circularly polarized. A matched
//!   handedness couples fully, the opposite handedness not at all. Their
//!   magnitudes stack onto the linear resultant, so subtracting mean off
//!   spectra from mean on spectra recovers exactly the dispersive
//!   contribution — the quantity the localization pipeline feeds on. Their
//!   absolute phase never influences any observable the pipeline uses, so it
//!   is not modeled.
//!
//! Receiver noise is complex Gaussian per subcarrier, scaled from the
//! configured SNR relative to the direct-path amplitude at band center.
//! Every random draw derives from one trace seed and the frame index, making
//! traces bit-reproducible.

use crate::dispersion::SPEED_OF_LIGHT_M_PER_S;
use crate::geometry::{LwaPose, RoomBounds};
use crate::polarization::Handedness;
use crate::trace::{CsiFrame, CsiTrace, LwaState, SubcarrierGrid, TraceError, TraceFingerprint};
use crate::vec3::Vec3;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Frames are captured on a fixed cadence.
pub const FRAME_INTERVAL_US: u64 = 10_000;
/// Minimum spatial separation between scene entities (m).
const MIN_SEPARATION_M: f64 = 1e-6;
/// Fraction of the AP power the dispersive antennas re-radiate.
pub const DEFAULT_EFFICIENCY: f64 = 0.8;
pub const DEFAULT_TX_POWER_DBM: f64 = 20.0;
pub const DEFAULT_PATH_LOSS_EXPONENT: f64 = 1.0;
pub const DEFAULT_DUTY_ON_FRACTION: f64 = 0.2;
pub const DEFAULT_DUTY_PERIOD_FRAMES: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("the {expected}-handed slot holds a {got}-handed feed")]
    MismatchedHandedness { expected: Handedness, got: Handedness },
    #[error("both dispersive antennas must share one frequency band")]
    BandMismatch,
    #[error("subcarrier grid extends outside the dispersive band")]
    GridOutsideBand,
    #[error("{what} at ({x}, {y}, {z}) is outside the room")]
    PositionOutsideRoom { what: &'static str, x: f64, y: f64, z: f64 },
    #[error("{a} and {b} coincide; scene entities need distinct positions")]
    CoincidentEntities { a: &'static str, b: &'static str },
    #[error("efficiency must be in [0, 1] (got {0})")]
    InvalidEfficiency(f64),
    #[error("path loss exponent must be finite and positive (got {0})")]
    InvalidPathLossExponent(f64),
    #[error("tx power must be finite (got {0} dBm)")]
    InvalidTxPower(f64),
    #[error("snr must be finite (got {0} dB)")]
    InvalidSnr(f64),
    #[error("reflector loss must be finite and non-negative (got {0} dB)")]
    InvalidReflectorLoss(f64),
    #[error("duty cycle must keep at least one on and one off frame per period (on_fraction {on_fraction}, period {period_frames})")]
    InvalidDutyCycle { on_fraction: f64, period_frames: usize },
    #[error("simulation needs at least {min} frames (two duty periods); got {got}")]
    TooFewFrames { got: usize, min: usize },
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// The transmitting access point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccessPoint {
    pub position: Vec3,
    pub tx_power_dbm: f64,
}

/// A passive scatterer: bounces both the linear AP signal and the circular
/// dispersive beams, attenuating by `loss_db`. `flip_polarization` models
/// the handedness reversal a single specular bounce can cause.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reflector {
    pub position: Vec3,
    pub loss_db: f64,
    pub flip_polarization: bool,
}

/// One dispersive antenna deployment slot. Disabling a unit removes its
/// radiation entirely (isolation experiments) while keeping the scene intact.
#[derive(Debug, Clone, PartialEq)]
pub struct LwaUnit {
    pub pose: LwaPose,
    pub enabled: bool,
}

/// Periodic on/off gating of the dispersive antennas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DutyCycle {
    on_fraction: f64,
    period_frames: usize,
}

impl DutyCycle {
    pub fn new(on_fraction: f64, period_frames: usize) -> Result<Self, ChannelError> {
        let err = ChannelError::InvalidDutyCycle { on_fraction, period_frames };
        if !on_fraction.is_finite() || period_frames < 2 {
            return Err(err);
        }
        let on_frames = (on_fraction * period_frames as f64).round();
        if !(1.0..=(period_frames as f64 - 1.0)).contains(&on_frames) {
            return Err(err);
        }
        Ok(DutyCycle { on_fraction, period_frames })
    }

    pub fn on_fraction(&self) -> f64 {
        self.on_fraction
    }

    pub fn period_frames(&self) -> usize {
        self.period_frames
    }

    pub fn on_frames_per_period(&self) -> usize {
        (self.on_fraction * self.period_frames as f64).round() as usize
    }

    /// Whether the dispersive antennas radiate during frame `frame_index`:
    /// the first `on_frames_per_period` frames of every period are on.
    pub fn is_on(&self, frame_index: u64) -> bool {
        (frame_index % self.period_frames as u64) < self.on_frames_per_period() as u64
    }
}

impl Default for DutyCycle {
    fn default() -> Self {
        DutyCycle::new(DEFAULT_DUTY_ON_FRACTION, DEFAULT_DUTY_PERIOD_FRAMES)
            .expect("default duty cycle is valid")
    }
}

/// Complete scene: geometry, radio parameters, and capture settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub room: RoomBounds,
    pub ap: AccessPoint,
    pub lwa_r: LwaUnit,
    pub lwa_l: LwaUnit,
    pub target: Vec3,
    pub reflectors: Vec<Reflector>,
    /// Fraction of incident AP power each dispersive antenna re-radiates.
    pub efficiency: f64,
    /// Amplitude decays as distance^-exponent on every path segment.
    pub path_loss_exponent: f64,
    /// Receiver SNR in dB; `None` simulates a noiseless capture.
    pub noise_snr_db: Option<f64>,
    pub duty: DutyCycle,
    pub grid: SubcarrierGrid,
}

impl Scenario {
    /// The reference deployment: a 6 x 5 x 3 m room, both dispersive
    /// antennas wall-mounted at 2 m height with orthogonal axes, and the
    /// target between them at the same height.
    pub fn default_scenario() -> Scenario {
        use crate::dispersion::LwaFeed;
        let room = RoomBounds::new((0.0, 6.0), (0.0, 5.0), (0.0, 3.0))
            .expect("default room is valid");
        let lwa_r = LwaPose::new(
            Vec3::new(0.0, 0.0, 2.0),
            Vec3::new(1.0, 0.0, 0.0),
            LwaFeed::rhcp_default(),
        )
        .expect("default right-handed pose is valid");
        let lwa_l = LwaPose::new(
            Vec3::new(0.0, 5.0, 2.0),
            Vec3::new(0.0, 1.0, 0.0),
            LwaFeed::lhcp_default(),
        )
        .expect("default left-handed pose is valid");
        Scenario {
            room,
            ap: AccessPoint {
                position: Vec3::new(5.0, 4.0, 2.5),
                tx_power_dbm: DEFAULT_TX_POWER_DBM,
            },
            lwa_r: LwaUnit { pose: lwa_r, enabled: true },
            lwa_l: LwaUnit { pose: lwa_l, enabled: true },
            target: Vec3::new(2.5, 2.0, 2.0),
            reflectors: Vec::new(),
            efficiency: DEFAULT_EFFICIENCY,
            path_loss_exponent: DEFAULT_PATH_LOSS_EXPONENT,
            noise_snr_db: None,
            duty: DutyCycle::default(),
            grid: SubcarrierGrid::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        for (unit, expected) in [(&self.lwa_r, Handedness::Right), (&self.lwa_l, Handedness::Left)]
        {
            let got = unit.pose.feed().handedness();
            if got != expected {
                return Err(ChannelError::MismatchedHandedness { expected, got });
            }
        }
        if self.lwa_r.pose.feed().band_hz() != self.lwa_l.pose.feed().band_hz() {
            return Err(ChannelError::BandMismatch);
        }
        let feed = self.lwa_r.pose.feed();
        if !feed.in_band(self.grid.frequency_of_index(self.grid.index_min()))
            || !feed.in_band(self.grid.frequency_of_index(self.grid.index_max()))
        {
            return Err(ChannelError::GridOutsideBand);
        }
        // Efficiency 0 is a legal scene: the dispersive antennas absorb the
        // feed without re-radiating, which is how "nothing to detect" cases
        // are constructed.
        if !self.efficiency.is_finite() || self.efficiency < 0.0 || self.efficiency > 1.0 {
            return Err(ChannelError::InvalidEfficiency(self.efficiency));
        }
        if !self.path_loss_exponent.is_finite() || self.path_loss_exponent <= 0.0 {
            return Err(ChannelError::InvalidPathLossExponent(self.path_loss_exponent));
        }
        if !self.ap.tx_power_dbm.is_finite() {
            return Err(ChannelError::InvalidTxPower(self.ap.tx_power_dbm));
        }
        if let Some(snr) = self.noise_snr_db {
            if !snr.is_finite() {
                return Err(ChannelError::InvalidSnr(snr));
            }
        }

        let mut entities: Vec<(&'static str, Vec3)> = vec![
            ("access point", self.ap.position),
            ("right-handed antenna", self.lwa_r.pose.vertex()),
            ("left-handed antenna", self.lwa_l.pose.vertex()),
            ("target", self.target),
        ];
        for reflector in &self.reflectors {
            if !reflector.loss_db.is_finite() || reflector.loss_db < 0.0 {
                return Err(ChannelError::InvalidReflectorLoss(reflector.loss_db));
            }
            entities.push(("reflector", reflector.position));
        }
        for (what, p) in &entities {
            // The AP may legitimately sit outside the room (through-wall
            // deployments); everything else must be inside.
            if *what != "access point" && !self.room.contains(*p, 1e-9) {
                return Err(ChannelError::PositionOutsideRoom {
                    what,
                    x: p.x,
                    y: p.y,
                    z: p.z,
                });
            }
        }
        for i in 0..entities.len() {
            for j in (i + 1)..entities.len() {
                if entities[i].1.distance(entities[j].1) < MIN_SEPARATION_M {
                    return Err(ChannelError::CoincidentEntities {
                        a: entities[i].0,
                        b: entities[j].0,
                    });
                }
            }
        }
        Ok(())
    }

    /// AP transmit amplitude in the simulator's linear units.
    fn tx_amplitude(&self) -> f64 {
        10f64.powf(self.ap.tx_power_dbm / 20.0)
    }

    fn path_gain(&self, distance: f64) -> f64 {
        1.0 / distance.powf(self.path_loss_exponent)
    }

    /// Direct-path amplitude at the receiver — the reference against which
    /// the configured SNR is interpreted.
    pub fn reference_amplitude(&self) -> f64 {
        self.tx_amplitude()
            * 0.5f64.sqrt()
            * self.path_gain(self.ap.position.distance(self.target))
    }

    /// Digest tying a trace back to the exact scene that produced it.
    pub fn digest_hex(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(format!("{self:?}").as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Complex resultant of all linearly polarized paths, per subcarrier.
    /// Identical at both receive antennas (circular antennas receive linear
    /// at half power regardless of handedness).
    fn linear_resultant(&self) -> Vec<Complex64> {
        // (amplitude, path length) per path; phase accrues as -2 pi f d / c.
        let mut paths: Vec<(f64, f64)> = Vec::with_capacity(1 + self.reflectors.len());
        let a_pol = self.tx_amplitude() * 0.5f64.sqrt();
        let d_direct = self.ap.position.distance(self.target);
        paths.push((a_pol * self.path_gain(d_direct), d_direct));
        for reflector in &self.reflectors {
            let d1 = self.ap.position.distance(reflector.position);
            let d2 = reflector.position.distance(self.target);
            let amp = a_pol
                * self.path_gain(d1)
                * self.path_gain(d2)
                * 10f64.powf(-reflector.loss_db / 20.0);
            paths.push((amp, d1 + d2));
        }
        self.grid
            .frequencies()
            .map(|f| {
                paths
                    .iter()
                    .map(|&(amp, d)| {
                        let phase = -2.0 * std::f64::consts::PI * f * d / SPEED_OF_LIGHT_M_PER_S;
                        Complex64::from_polar(amp, phase)
                    })
                    .sum()
            })
            .collect()
    }

    /// Total circularly polarized amplitude arriving at the receive antenna
    /// of handedness `antenna` while the dispersive antennas radiate, per
    /// subcarrier. Opposite-handed contributions couple with gain exactly
    /// zero and are skipped outright.
    pub fn cp_amplitude_profile(&self, antenna: Handedness) -> Vec<f64> {
        let mut profile = vec![0.0; self.grid.count()];
        for unit in [&self.lwa_r, &self.lwa_l] {
            if !unit.enabled {
                continue;
            }
            let pose = &unit.pose;
            let radiated = unit.pose.feed().handedness();
            let feed_amp = self.tx_amplitude()
                * self.path_gain(self.ap.position.distance(pose.vertex()))
                * self.efficiency.sqrt();

            // (scale, beam angle toward the path's first hop) per path that
            // ends at the target with handedness `antenna`.
            let mut paths: Vec<(f64, f64)> = Vec::new();
            let d_target = pose.vertex().distance(self.target);
            let angle_target = pose.axis().angle_deg(self.target - pose.vertex());
            // The direct beam only exists while the beam can actually steer
            // to the target; outside the steerable range there is no line-
            // of-sight dome within the band.
            if radiated == antenna && pose.feed().in_fov(angle_target) {
                paths.push((feed_amp * self.path_gain(d_target), angle_target));
            }
            for reflector in &self.reflectors {
                let arriving = if reflector.flip_polarization {
                    radiated.opposite()
                } else {
                    radiated
                };
                if arriving != antenna {
                    continue;
                }
                let d1 = pose.vertex().distance(reflector.position);
                let d2 = reflector.position.distance(self.target);
                let angle = pose.axis().angle_deg(reflector.position - pose.vertex());
                let scale = feed_amp
                    * self.path_gain(d1)
                    * self.path_gain(d2)
                    * 10f64.powf(-reflector.loss_db / 20.0);
                paths.push((scale, angle));
            }
            if paths.is_empty() {
                continue;
            }

            for (slot, f) in profile.iter_mut().zip(self.grid.frequencies()) {
                for &(scale, angle) in &paths {
                    let gain = pose
                        .feed()
                        .radiated_gain(f, angle)
                        .expect("grid frequencies are validated to lie in band");
                    *slot += scale * gain.sqrt();
                }
            }
        }
        profile
    }

    /// Noiseless received spectra for both duty states.
    pub fn noiseless_spectra(&self) -> Result<SpectraPair, ChannelError> {
        self.validate()?;
        let linear = self.linear_resultant();
        let off = FrameSpectra { lhcp: linear.clone(), rhcp: linear.clone() };
        let mut on = off.clone();
        for (antenna, spectrum) in
            [(Handedness::Left, &mut on.lhcp), (Handedness::Right, &mut on.rhcp)]
        {
            let cp = self.cp_amplitude_profile(antenna);
            for (sample, add) in spectrum.iter_mut().zip(cp) {
                // Stack the circular magnitude onto the linear resultant
                // without introducing a relative phase, so |on| - |off|
                // equals the circular amplitude exactly.
                let unit = if sample.norm() > 0.0 {
                    *sample / sample.norm()
                } else {
                    Complex64::new(1.0, 0.0)
                };
                *sample += unit * add;
            }
        }
        Ok(SpectraPair { on, off })
    }
}

/// Spectra of one frame for both receive antennas.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSpectra {
    pub lhcp: Vec<Complex64>,
    pub rhcp: Vec<Complex64>,
}

/// Noiseless spectra with the dispersive antennas radiating and silent.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectraPair {
    pub on: FrameSpectra,
    pub off: FrameSpectra,
}

/// Seed of the RNG that produces frame `frame_index` of a trace seeded with
/// `trace_seed`. Derived per frame so frames are independent and a single
/// frame can be regenerated in isolation.
pub fn frame_seed(trace_seed: u64, frame_index: u64) -> u64 {
    trace_seed.wrapping_add((frame_index + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn add_noise(spectra: &mut FrameSpectra, sigma: f64, rng_seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    for spectrum in [&mut spectra.lhcp, &mut spectra.rhcp] {
        for sample in spectrum.iter_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *sample += Complex64::new(re * sigma, im * sigma);
        }
    }
}

/// Simulate a single frame with the dispersive antennas forced on or off.
///
/// Noise draws are ordered (left antenna then right, subcarriers ascending,
/// real before imaginary), so a given `rng_seed` always produces the same
/// noise regardless of scene contents. Frame `i` of `simulate_trace` equals
/// this with `rng_seed = frame_seed(trace_seed, i)` plus the trace's
/// numbering and duty labeling.
pub fn simulate_frame(
    scenario: &Scenario,
    lwa_on: bool,
    rng_seed: u64,
) -> Result<CsiFrame, ChannelError> {
    let spectra = scenario.noiseless_spectra()?;
    let mut base = if lwa_on { spectra.on } else { spectra.off };
    if let Some(snr) = scenario.noise_snr_db {
        let sigma = scenario.reference_amplitude() * 10f64.powf(-snr / 20.0) / 2f64.sqrt();
        add_noise(&mut base, sigma, rng_seed);
    }
    Ok(CsiFrame {
        frame_index: 0,
        timestamp_us: 0,
        state: if lwa_on { LwaState::On } else { LwaState::Off },
        lhcp: base.lhcp,
        rhcp: base.rhcp,
    })
}

/// Simulate a duty-cycled capture of `n_frames` frames. Deterministic:
/// identical inputs yield a bit-identical trace.
pub fn simulate_trace(
    scenario: &Scenario,
    seed: u64,
    n_frames: usize,
) -> Result<CsiTrace, ChannelError> {
    let min = 2 * scenario.duty.period_frames();
    if n_frames < min {
        return Err(ChannelError::TooFewFrames { got: n_frames, min });
    }
    let spectra = scenario.noiseless_spectra()?;
    let sigma = scenario
        .noise_snr_db
        .map(|snr| scenario.reference_amplitude() * 10f64.powf(-snr / 20.0) / 2f64.sqrt());

    let fingerprint = TraceFingerprint::new(seed, scenario.digest_hex());
    let mut trace = CsiTrace::new(scenario.grid, fingerprint);
    for i in 0..n_frames as u64 {
        let on = scenario.duty.is_on(i);
        let base = if on { &spectra.on } else { &spectra.off };
        let mut frame_spectra = base.clone();
        if let Some(sigma) = sigma {
            add_noise(&mut frame_spectra, sigma, frame_seed(seed, i));
        }
        trace.push_frame(CsiFrame {
            frame_index: i,
            timestamp_us: i * FRAME_INTERVAL_US,
            state: if on { LwaState::On } else { LwaState::Off },
            lhcp: frame_spectra.lhcp,
            rhcp: frame_spectra.rhcp,
        })?;
    }
    Ok(trace)
}
