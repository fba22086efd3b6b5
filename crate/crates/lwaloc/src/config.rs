//! Scenario configuration files.
//!
//! Scenes are described in TOML. The minimal document names the room, the
//! access point, the two dispersive antennas and the target; everything
//! else has defaults:
//!
//! ```toml
//! [room]
//! x = [0.0, 6.0]
//! y = [0.0, 5.0]
//! z = [0.0, 3.0]
//!
//! [ap]
//! position = [5.0, 4.0, 2.5]
//! tx_power_dbm = 20.0          # optional
//!
//! [lwa_r]
//! position = [0.0, 0.0, 2.0]
//! axis = [1.0, 0.0, 0.0]
//! handedness = "right"
//! enabled = true               # optional
//!
//! [lwa_r.dispersion]           # optional calibration overrides
//! f_min_hz = 5.17e9
//! f_max_hz = 5.33e9
//! theta_at_f_min_deg = 22.0
//! theta_at_f_max_deg = 44.0
//! beamwidth_deg = 10.0
//! gain_floor_db = 11.5
//! # or a measured table (frequency Hz, angle deg), monotone:
//! # calibration = [[5.17e9, 22.0], [5.25e9, 31.0], [5.33e9, 44.0]]
//!
//! [lwa_l]
//! position = [0.0, 5.0, 2.0]
//! axis = [0.0, 1.0, 0.0]
//! handedness = "left"
//!
//! [target]
//! position = [2.5, 2.0, 2.0]
//!
//! [[reflectors]]              # optional, repeatable
//! position = [4.0, 1.0, 1.5]
//! loss_db = 3.0
//! flip_polarization = true     # optional, default true
//!
//! [noise]                      # optional; omit for a noiseless channel
//! snr_db = 20.0
//!
//! [duty]                       # optional
//! on_fraction = 0.2
//! period_frames = 10
//!
//! [grid]                       # optional
//! count = 2025
//!
//! # top-level optionals:
//! # efficiency = 0.8
//! # path_loss_exponent = 1.0
//! ```
//!
//! Parsing, serializing and re-parsing yields an equal `Scenario`. Unknown
//! keys are rejected with their field path.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{
    AccessPoint, ChannelError, DutyCycle, LwaUnit, Reflector, Scenario, DEFAULT_TX_POWER_DBM,
};
use crate::dispersion::{CalibrationCurve, DispersionModel, LwaFeed};
use crate::geometry::{LwaPose, RoomBounds};
use crate::polarization::Handedness;
use crate::trace::SubcarrierGrid;
use crate::vec3::Vec3;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config field `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("scene: {0}")]
    Physics(#[from] ChannelError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn invalid(field: &str, err: impl std::fmt::Display) -> ConfigError {
    ConfigError::Invalid { field: field.to_string(), message: err.to_string() }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDoc {
    #[serde(skip_serializing_if = "Option::is_none")]
    efficiency: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    path_loss_exponent: Option<f64>,
    room: RoomDoc,
    ap: ApDoc,
    lwa_r: LwaDoc,
    lwa_l: LwaDoc,
    target: TargetDoc,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    reflectors: Vec<ReflectorDoc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    noise: Option<NoiseDoc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    duty: Option<DutyDoc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    grid: Option<GridDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RoomDoc {
    x: [f64; 2],
    y: [f64; 2],
    z: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ApDoc {
    position: [f64; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    tx_power_dbm: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LwaDoc {
    position: [f64; 3],
    axis: [f64; 3],
    handedness: Handedness,
    #[serde(skip_serializing_if = "Option::is_none")]
    enabled: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dispersion: Option<DispersionDoc>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DispersionDoc {
    #[serde(skip_serializing_if = "Option::is_none")]
    f_min_hz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    f_max_hz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    theta_at_f_min_deg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    theta_at_f_max_deg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    beamwidth_deg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gain_floor_db: Option<f64>,
    /// `[frequency Hz, angle deg]` knots; overrides the linear endpoints.
    #[serde(skip_serializing_if = "Option::is_none")]
    calibration: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetDoc {
    position: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReflectorDoc {
    position: [f64; 3],
    loss_db: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    flip_polarization: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseDoc {
    snr_db: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DutyDoc {
    #[serde(skip_serializing_if = "Option::is_none")]
    on_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    period_frames: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridDoc {
    #[serde(skip_serializing_if = "Option::is_none")]
    count: Option<usize>,
}

fn vec3_of(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

fn array_of(v: Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// Build one feed from its optional overrides. Defaults come from the
/// published calibration for the named handedness (the left-handed feed is
/// the mirrored aperture).
fn feed_from_doc(
    field: &str,
    handedness: Handedness,
    doc: Option<&DispersionDoc>,
) -> Result<LwaFeed, ConfigError> {
    let base = match handedness {
        Handedness::Right => DispersionModel::forward_default(),
        Handedness::Left => DispersionModel::forward_default().mirrored(),
    };
    let doc = match doc {
        None => return LwaFeed::new(handedness, base).map_err(|e| invalid(field, e)),
        Some(doc) => doc,
    };
    let beamwidth = doc.beamwidth_deg.unwrap_or(base.beamwidth_deg());
    let floor = doc.gain_floor_db.unwrap_or(base.gain_floor_db());
    let model = if let Some(points) = &doc.calibration {
        for key in ["f_min_hz", "f_max_hz", "theta_at_f_min_deg", "theta_at_f_max_deg"] {
            let clashes = match key {
                "f_min_hz" => doc.f_min_hz.is_some(),
                "f_max_hz" => doc.f_max_hz.is_some(),
                "theta_at_f_min_deg" => doc.theta_at_f_min_deg.is_some(),
                _ => doc.theta_at_f_max_deg.is_some(),
            };
            if clashes {
                return Err(invalid(
                    &format!("{field}.{key}"),
                    "cannot combine linear endpoints with a calibration table",
                ));
            }
        }
        let knots = points.iter().map(|p| (p[0], p[1])).collect();
        DispersionModel::tabulated(knots, beamwidth, floor).map_err(|e| invalid(field, e))?
    } else {
        let (base_f_min, base_f_max) = base.band_hz();
        let f_min = doc.f_min_hz.unwrap_or(base_f_min);
        let f_max = doc.f_max_hz.unwrap_or(base_f_max);
        let theta_min = doc
            .theta_at_f_min_deg
            .unwrap_or_else(|| base.angle_of_frequency(base_f_min).expect("band endpoint"));
        let theta_max = doc
            .theta_at_f_max_deg
            .unwrap_or_else(|| base.angle_of_frequency(base_f_max).expect("band endpoint"));
        DispersionModel::linear(f_min, f_max, theta_min, theta_max, beamwidth, floor)
            .map_err(|e| invalid(field, e))?
    };
    LwaFeed::new(handedness, model).map_err(|e| invalid(field, e))
}

fn unit_from_doc(field: &str, doc: &LwaDoc) -> Result<LwaUnit, ConfigError> {
    let feed = feed_from_doc(&format!("{field}.dispersion"), doc.handedness, doc.dispersion.as_ref())?;
    let pose = LwaPose::new(vec3_of(doc.position), vec3_of(doc.axis), feed)
        .map_err(|e| invalid(field, e))?;
    Ok(LwaUnit { pose, enabled: doc.enabled.unwrap_or(true) })
}

fn scenario_from_doc(doc: ScenarioDoc) -> Result<Scenario, ConfigError> {
    let room = RoomBounds::new(
        (doc.room.x[0], doc.room.x[1]),
        (doc.room.y[0], doc.room.y[1]),
        (doc.room.z[0], doc.room.z[1]),
    )
    .map_err(|e| invalid("room", e))?;
    let ap = AccessPoint {
        position: vec3_of(doc.ap.position),
        tx_power_dbm: doc.ap.tx_power_dbm.unwrap_or(DEFAULT_TX_POWER_DBM),
    };
    let lwa_r = unit_from_doc("lwa_r", &doc.lwa_r)?;
    let lwa_l = unit_from_doc("lwa_l", &doc.lwa_l)?;
    let target = vec3_of(doc.target.position);
    let reflectors = doc
        .reflectors
        .iter()
        .map(|r| Reflector {
            position: vec3_of(r.position),
            loss_db: r.loss_db,
            flip_polarization: r.flip_polarization.unwrap_or(true),
        })
        .collect();
    let duty = match &doc.duty {
        None => DutyCycle::default(),
        Some(d) => {
            let fallback = DutyCycle::default();
            DutyCycle::new(
                d.on_fraction.unwrap_or_else(|| fallback.on_fraction()),
                d.period_frames.unwrap_or_else(|| fallback.period_frames()),
            )
            .map_err(|e| invalid("duty", e))?
        }
    };
    let count = doc.grid.as_ref().and_then(|g| g.count).unwrap_or_else(|| {
        SubcarrierGrid::default().count()
    });
    // The grid spans the right feed's band; scene validation enforces that
    // both feeds share it.
    let (f_min, f_max) = lwa_r.pose.feed().band_hz();
    let grid = SubcarrierGrid::spanning(f_min, f_max, count)
        .map_err(|e| invalid("grid.count", e))?;

    let scenario = Scenario {
        room,
        ap,
        lwa_r,
        lwa_l,
        target,
        reflectors,
        efficiency: doc.efficiency.unwrap_or(crate::channel::DEFAULT_EFFICIENCY),
        path_loss_exponent: doc
            .path_loss_exponent
            .unwrap_or(crate::channel::DEFAULT_PATH_LOSS_EXPONENT),
        noise_snr_db: doc.noise.map(|n| n.snr_db),
        duty,
        grid,
    };
    scenario.validate()?;
    Ok(scenario)
}

fn dispersion_doc_of(feed: &LwaFeed) -> DispersionDoc {
    let model = feed.model();
    let (f_min, f_max) = model.band_hz();
    match model.curve() {
        CalibrationCurve::Linear { theta_at_fmin_deg, theta_at_fmax_deg } => DispersionDoc {
            f_min_hz: Some(f_min),
            f_max_hz: Some(f_max),
            theta_at_f_min_deg: Some(*theta_at_fmin_deg),
            theta_at_f_max_deg: Some(*theta_at_fmax_deg),
            beamwidth_deg: Some(model.beamwidth_deg()),
            gain_floor_db: Some(model.gain_floor_db()),
            calibration: None,
        },
        CalibrationCurve::Tabulated(points) => DispersionDoc {
            beamwidth_deg: Some(model.beamwidth_deg()),
            gain_floor_db: Some(model.gain_floor_db()),
            calibration: Some(points.iter().map(|&(f, t)| [f, t]).collect()),
            ..DispersionDoc::default()
        },
    }
}

fn doc_from_scenario(s: &Scenario) -> ScenarioDoc {
    let lwa_doc = |unit: &LwaUnit| LwaDoc {
        position: array_of(unit.pose.vertex()),
        axis: array_of(unit.pose.axis()),
        handedness: unit.pose.feed().handedness(),
        enabled: Some(unit.enabled),
        dispersion: Some(dispersion_doc_of(unit.pose.feed())),
    };
    ScenarioDoc {
        efficiency: Some(s.efficiency),
        path_loss_exponent: Some(s.path_loss_exponent),
        room: RoomDoc {
            x: [s.room.x.0, s.room.x.1],
            y: [s.room.y.0, s.room.y.1],
            z: [s.room.z.0, s.room.z.1],
        },
        ap: ApDoc { position: array_of(s.ap.position), tx_power_dbm: Some(s.ap.tx_power_dbm) },
        lwa_r: lwa_doc(&s.lwa_r),
        lwa_l: lwa_doc(&s.lwa_l),
        target: TargetDoc { position: array_of(s.target) },
        reflectors: s
            .reflectors
            .iter()
            .map(|r| ReflectorDoc {
                position: array_of(r.position),
                loss_db: r.loss_db,
                flip_polarization: Some(r.flip_polarization),
            })
            .collect(),
        noise: s.noise_snr_db.map(|snr_db| NoiseDoc { snr_db }),
        duty: Some(DutyDoc {
            on_fraction: Some(s.duty.on_fraction()),
            period_frames: Some(s.duty.period_frames()),
        }),
        grid: Some(GridDoc { count: Some(s.grid.count()) }),
    }
}

/// Parse a scenario document, filling defaults and validating the scene.
pub fn parse_scenario(text: &str) -> Result<Scenario, ConfigError> {
    let doc: ScenarioDoc = toml::from_str(text)?;
    scenario_from_doc(doc)
}

/// Serialize a scenario with every field explicit, so generated files show
/// the defaults they rely on. `parse_scenario` of the output reproduces the
/// scenario exactly.
pub fn scenario_to_toml(scenario: &Scenario) -> String {
    toml::to_string_pretty(&doc_from_scenario(scenario))
        .expect("scenario documents serialize infallibly")
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ConfigError> {
    let text = std::fs::read_to_string(path)?;
    parse_scenario(&text)
}
