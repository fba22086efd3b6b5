//! Indoor localization from frequency-scanning leaky-wave antennas.
//!
//! A pair of wall-mounted leaky-wave antennas, fed by a commodity access
//! point, radiate circularly polarized beams whose direction is a function
//! of frequency. A receiver that recovers the beam frequency arriving from
//! each antenna has, in effect, measured two angles; intersecting the two
//! direction cones at a known height yields a position.
//!
//! The crate provides the full round trip:
//!
//! * [`dispersion`] — the frequency→angle calibration of the antennas and
//!   their conical radiation pattern;
//! * [`polarization`] — polarization states and reception gains, which make
//!   the two antennas (left- and right-handed circular) separable at one
//!   receiver;
//! * [`channel`] — a deterministic scene simulator producing channel-state
//!   traces with duty-cycled antenna activity, multipath and noise;
//! * [`trace`] — the on-disk trace format;
//! * [`pipeline`] — recovery of the two beam frequencies from a trace
//!   (differencing, clustering, purification);
//! * [`geometry`] — cone intersection turning two frequencies into a
//!   position estimate;
//! * [`config`] — scenario files;
//! * [`experiment`] — batch trials, parameter sweeps and ablations with
//!   reproducible seeding and deterministic outputs.

pub mod channel;
pub mod config;
pub mod dispersion;
pub mod experiment;
pub mod geometry;
pub mod pipeline;
pub mod polarization;
pub mod trace;
pub mod vec3;

pub use channel::{simulate_frame, simulate_trace, Scenario};
pub use dispersion::{DispersionModel, LwaFeed};
pub use geometry::{localize, ConeConstraint, LocationEstimate, RoomBounds};
pub use pipeline::{estimate_frequencies, FrequencyEstimate, Mode, PipelineParams};
pub use polarization::Handedness;
pub use trace::{CsiTrace, SubcarrierGrid};
pub use vec3::Vec3;
