//! Batch experiments: seeded Monte-Carlo trials, parameter sweeps, mode
//! ablations, summary statistics and plot-ready CSV export.
//!
//! Every output byte is a deterministic function of the experiment
//! specification. Trial `i` derives its seed as `base_seed + i`; sweeps
//! reuse the same per-trial seeds at every point so comparisons across
//! points are paired. Trials run in parallel over a configurable worker
//! count, and results are assembled in trial order regardless of
//! completion order.
//!
//! Failures (pipeline or solver errors in hostile regimes) become rows with
//! a `failure` field instead of aborting the batch; summary statistics are
//! computed over successes, with the failure rate and a failure-counting
//! median (failures weighted as infinite error) reported alongside.
//!
//! Experiment documents are TOML:
//!
//! ```toml
//! scenario = "scenario.toml"   # path, relative to this file
//! trials = 200
//! seed = 7
//! frames = 100                 # frames per simulated capture
//! workers = 8                  # optional
//!
//! [pipeline]                   # optional; defaults shown
//! mode = "s4"
//! epsilon = 0.05
//! cluster_gap = 4
//! delta = 8
//! duty_detection = "use-labels"
//! # zscore_window = 101
//!
//! [targets]                    # optional; default = scenario target
//! fixed = [[2.5, 2.0, 2.0], [3.0, 1.5, 2.0]]
//! # or: uniform = true         # one in-field draw per trial
//!
//! [sweep]                      # optional
//! parameter = "snr_db"         # snr_db | reflector_count | ap_distance_m
//!                              # | epsilon | delta | cluster_gap
//! values = [25.0, 15.0, 5.0]
//!
//! [reflector_synthesis]        # optional; governs synthesized clutter
//! count = 12                   # per-trial random reflectors
//! loss_db_min = 2.0
//! loss_db_max = 8.0
//! flip_fraction = 0.5
//! ```

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use crate::channel::{simulate_trace, Reflector, Scenario};
use crate::config::{self, ConfigError};
use crate::geometry::{cone_from_frequency, localize};
use crate::pipeline::{estimate_frequencies, Mode, PipelineParams};
use crate::polarization::Handedness;
use crate::trace::CsiTrace;
use crate::vec3::Vec3;

pub const DEFAULT_FRAMES: usize = 100;
pub const DEFAULT_SYNTH_LOSS_DB_MIN: f64 = 1.0;
pub const DEFAULT_SYNTH_LOSS_DB_MAX: f64 = 5.0;
pub const DEFAULT_SYNTH_FLIP_FRACTION: f64 = 0.5;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("experiment: trials must be >= 1")]
    NoTrials,
    #[error("experiment: sweep needs at least one value")]
    EmptySweep,
    #[error("experiment: fixed target list is empty")]
    NoTargets,
    #[error("experiment: {0}")]
    InvalidSpec(String),
    #[error("summary: no rows to summarize")]
    EmptyRows,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// How each trial obtains its target position.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetSampling {
    /// The scenario's configured target for every trial.
    ScenarioTarget,
    /// A fixed list, cycled across trials.
    Fixed(Vec<Vec3>),
    /// One uniform in-room draw per trial (at the scenario target's height),
    /// rejection-sampled into both antennas' fields of view.
    UniformInRoom,
}

/// Distribution of synthesized clutter reflectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReflectorSynthesis {
    pub loss_db_min: f64,
    pub loss_db_max: f64,
    /// Probability that a synthesized reflector flips polarization
    /// handedness on reflection.
    pub flip_fraction: f64,
}

impl Default for ReflectorSynthesis {
    fn default() -> Self {
        ReflectorSynthesis {
            loss_db_min: DEFAULT_SYNTH_LOSS_DB_MIN,
            loss_db_max: DEFAULT_SYNTH_LOSS_DB_MAX,
            flip_fraction: DEFAULT_SYNTH_FLIP_FRACTION,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParameter {
    SnrDb,
    ReflectorCount,
    ApDistanceM,
    Epsilon,
    Delta,
    ClusterGap,
}

impl SweepParameter {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParameter::SnrDb => "snr_db",
            SweepParameter::ReflectorCount => "reflector_count",
            SweepParameter::ApDistanceM => "ap_distance_m",
            SweepParameter::Epsilon => "epsilon",
            SweepParameter::Delta => "delta",
            SweepParameter::ClusterGap => "cluster_gap",
        }
    }
}

impl std::str::FromStr for SweepParameter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "snr_db" => Ok(SweepParameter::SnrDb),
            "reflector_count" => Ok(SweepParameter::ReflectorCount),
            "ap_distance_m" => Ok(SweepParameter::ApDistanceM),
            "epsilon" => Ok(SweepParameter::Epsilon),
            "delta" => Ok(SweepParameter::Delta),
            "cluster_gap" => Ok(SweepParameter::ClusterGap),
            other => Err(format!(
                "unknown sweep parameter `{other}` (expected snr_db, reflector_count, \
                 ap_distance_m, epsilon, delta or cluster_gap)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub scenario: Scenario,
    pub trials: usize,
    pub seed: u64,
    /// Frames per simulated capture.
    pub frames: usize,
    pub pipeline: PipelineParams,
    pub targets: TargetSampling,
    pub sweep: Option<Sweep>,
    /// When set, every trial replaces the scenario's reflectors with this
    /// many synthesized ones (a `reflector_count` sweep overrides the
    /// count per sweep point).
    pub synthesized_reflectors: Option<usize>,
    pub synthesis: ReflectorSynthesis,
    pub workers: Option<usize>,
}

impl ExperimentSpec {
    /// A spec with harness defaults for the given scenario.
    pub fn new(scenario: Scenario) -> Self {
        ExperimentSpec {
            scenario,
            trials: 1,
            seed: 0,
            frames: DEFAULT_FRAMES,
            pipeline: PipelineParams::default(),
            targets: TargetSampling::ScenarioTarget,
            sweep: None,
            synthesized_reflectors: None,
            synthesis: ReflectorSynthesis::default(),
            workers: None,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.trials == 0 {
            return Err(HarnessError::NoTrials);
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(HarnessError::EmptySweep);
            }
        }
        if let TargetSampling::Fixed(list) = &self.targets {
            if list.is_empty() {
                return Err(HarnessError::NoTargets);
            }
        }
        let min_frames = 2 * self.scenario.duty.period_frames();
        if self.frames < min_frames {
            return Err(HarnessError::InvalidSpec(format!(
                "frames must cover two duty periods (got {}, need {min_frames})",
                self.frames
            )));
        }
        self.pipeline
            .validate()
            .map_err(|e| HarnessError::InvalidSpec(e.to_string()))?;
        let s = &self.synthesis;
        let losses_ok = s.loss_db_min.is_finite()
            && s.loss_db_max.is_finite()
            && s.loss_db_min >= 0.0
            && s.loss_db_min <= s.loss_db_max;
        if !losses_ok {
            return Err(HarnessError::InvalidSpec(format!(
                "reflector synthesis losses must satisfy 0 <= min <= max (got {} .. {})",
                s.loss_db_min, s.loss_db_max
            )));
        }
        if !(0.0..=1.0).contains(&s.flip_fraction) {
            return Err(HarnessError::InvalidSpec(format!(
                "flip_fraction must lie in [0, 1] (got {})",
                s.flip_fraction
            )));
        }
        self.scenario.validate().map_err(ConfigError::Physics)?;
        Ok(())
    }
}

/// One trial's outcome. Failure rows carry the reason and no position
/// estimate; frequency and angle estimates are kept when the pipeline
/// succeeded and only localization failed.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub mode: Mode,
    pub sweep_value: Option<f64>,
    pub trial: usize,
    pub seed: u64,
    pub true_x_m: f64,
    pub true_y_m: f64,
    pub true_z_m: f64,
    pub true_theta_r_deg: f64,
    pub true_theta_l_deg: f64,
    pub f_r_hat_hz: Option<f64>,
    pub f_l_hat_hz: Option<f64>,
    pub est_theta_r_deg: Option<f64>,
    pub est_theta_l_deg: Option<f64>,
    pub est_x_m: Option<f64>,
    pub est_y_m: Option<f64>,
    pub planar_error_m: Option<f64>,
    pub residual: Option<f64>,
    pub candidates_considered: Option<usize>,
    pub on_frames: Option<usize>,
    pub off_frames: Option<usize>,
    pub cluster_span_r: Option<i64>,
    pub cluster_span_l: Option<i64>,
    pub failure: Option<String>,
}

impl ResultRow {
    pub fn is_failure(&self) -> bool {
        self.failure.is_some()
    }

    pub fn aoa_error_deg(&self, antenna: Handedness) -> Option<f64> {
        match antenna {
            Handedness::Right => self.est_theta_r_deg.map(|e| (e - self.true_theta_r_deg).abs()),
            Handedness::Left => self.est_theta_l_deg.map(|e| (e - self.true_theta_l_deg).abs()),
        }
    }
}

fn derived_seed(trial_seed: u64, stream: u64) -> u64 {
    trial_seed.wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Draw `count` single-bounce clutter reflectors uniformly inside the room
/// (with a small wall margin), with losses uniform in the configured range
/// and the configured polarization-flip probability. Positions are rejected
/// into both antennas' steerable windows so each reflector's spur lobe
/// actually peaks inside the sampled band (a reflector outside the steering
/// range only contributes a floor-level tail and would be inert clutter);
/// if a scene leaves that region too small to hit, the draw falls back to
/// anywhere in the room. Deterministic in `seed`; the first `k` reflectors
/// of a draw are a prefix of any larger draw with the same seed, so
/// reflector-count sweeps nest.
pub fn synthesize_reflectors(
    scenario: &Scenario,
    count: usize,
    synthesis: &ReflectorSynthesis,
    seed: u64,
) -> Vec<Reflector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let room = &scenario.room;
    let margin = |lo: f64, hi: f64| 0.02 * (hi - lo);
    let mut keep_away: Vec<Vec3> = vec![
        scenario.ap.position,
        scenario.lwa_r.pose.vertex(),
        scenario.lwa_l.pose.vertex(),
        scenario.target,
    ];
    let mut reflectors = Vec::with_capacity(count);
    for _ in 0..count {
        let mut attempts = 0usize;
        let position = loop {
            attempts += 1;
            let x = rng.gen_range(room.x.0 + margin(room.x.0, room.x.1)
                ..room.x.1 - margin(room.x.0, room.x.1));
            let y = rng.gen_range(room.y.0 + margin(room.y.0, room.y.1)
                ..room.y.1 - margin(room.y.0, room.y.1));
            let z = rng.gen_range(room.z.0 + margin(room.z.0, room.z.1)
                ..room.z.1 - margin(room.z.0, room.z.1));
            let p = Vec3::new(x, y, z);
            if keep_away.iter().any(|q| q.distance(p) <= 0.05) {
                continue;
            }
            let in_window = [&scenario.lwa_r, &scenario.lwa_l].iter().all(|unit| {
                unit.pose
                    .angle_to_deg(p)
                    .map(|theta| unit.pose.feed().in_fov(theta))
                    .unwrap_or(false)
            });
            if in_window || attempts > 10_000 {
                break p;
            }
        };
        let loss_db = if synthesis.loss_db_max > synthesis.loss_db_min {
            rng.gen_range(synthesis.loss_db_min..synthesis.loss_db_max)
        } else {
            synthesis.loss_db_min
        };
        let flip_polarization = rng.gen_bool(synthesis.flip_fraction);
        keep_away.push(position);
        reflectors.push(Reflector { position, loss_db, flip_polarization });
    }
    reflectors
}

/// Uniform in-room target at the scenario target's height, rejected until
/// it falls inside both antennas' steerable ranges.
fn sample_uniform_target(scenario: &Scenario, seed: u64) -> Result<Vec3, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let room = &scenario.room;
    let z = scenario.target.z;
    for _ in 0..10_000 {
        let x = rng.gen_range(room.x.0..room.x.1);
        let y = rng.gen_range(room.y.0..room.y.1);
        let p = Vec3::new(x, y, z);
        let visible = [&scenario.lwa_r, &scenario.lwa_l].iter().all(|unit| {
            unit.pose.vertex().distance(p) > 1e-3
                && unit
                    .pose
                    .angle_to_deg(p)
                    .map(|theta| unit.pose.feed().in_fov(theta))
                    .unwrap_or(false)
        });
        if visible {
            return Ok(p);
        }
    }
    Err("no in-field target found in 10000 draws".to_string())
}

/// Apply a sweep point that modifies scene or parameters uniformly across
/// trials. Reflector-count points are handled per trial (synthesis is
/// seeded per trial) and leave the scenario untouched here.
fn apply_static_sweep(
    spec: &ExperimentSpec,
    point: Option<f64>,
) -> Result<(Scenario, PipelineParams), HarnessError> {
    let mut scenario = spec.scenario.clone();
    let mut params = spec.pipeline.clone();
    let (parameter, value) = match (&spec.sweep, point) {
        (Some(sweep), Some(value)) => (sweep.parameter, value),
        _ => return Ok((scenario, params)),
    };
    match parameter {
        SweepParameter::SnrDb => scenario.noise_snr_db = Some(value),
        SweepParameter::ReflectorCount => {}
        SweepParameter::ApDistanceM => {
            if !value.is_finite() || value <= 0.0 {
                return Err(HarnessError::InvalidSpec(format!(
                    "ap_distance_m sweep values must be positive (got {value})"
                )));
            }
            let vertex = scenario.lwa_r.pose.vertex();
            let dir = (scenario.ap.position - vertex)
                .normalized()
                .ok_or_else(|| {
                    HarnessError::InvalidSpec(
                        "ap_distance_m sweep needs the AP away from the right antenna"
                            .to_string(),
                    )
                })?;
            scenario.ap.position = vertex + dir * value;
        }
        SweepParameter::Epsilon => params.epsilon = value,
        SweepParameter::Delta => params.delta = value.round() as i32,
        SweepParameter::ClusterGap => params.cluster_gap = value.round() as i32,
    }
    params
        .validate()
        .map_err(|e| HarnessError::InvalidSpec(e.to_string()))?;
    Ok((scenario, params))
}

/// Effective synthesized-reflector count for a sweep point.
fn synth_count(spec: &ExperimentSpec, point: Option<f64>) -> Option<usize> {
    match (&spec.sweep, point) {
        (Some(sweep), Some(value)) if sweep.parameter == SweepParameter::ReflectorCount => {
            Some(value.round().max(0.0) as usize)
        }
        _ => spec.synthesized_reflectors,
    }
}

fn failure_row(
    mode: Mode,
    sweep_value: Option<f64>,
    trial: usize,
    seed: u64,
    scenario: &Scenario,
    true_thetas: (f64, f64),
    reason: String,
) -> ResultRow {
    ResultRow {
        mode,
        sweep_value,
        trial,
        seed,
        true_x_m: scenario.target.x,
        true_y_m: scenario.target.y,
        true_z_m: scenario.target.z,
        true_theta_r_deg: true_thetas.0,
        true_theta_l_deg: true_thetas.1,
        f_r_hat_hz: None,
        f_l_hat_hz: None,
        est_theta_r_deg: None,
        est_theta_l_deg: None,
        est_x_m: None,
        est_y_m: None,
        planar_error_m: None,
        residual: None,
        candidates_considered: None,
        on_frames: None,
        off_frames: None,
        cluster_span_r: None,
        cluster_span_l: None,
        failure: Some(reason),
    }
}

fn true_angles(scenario: &Scenario) -> (f64, f64) {
    let angle = |pose: &crate::geometry::LwaPose| {
        pose.angle_to_deg(scenario.target).unwrap_or(f64::NAN)
    };
    (angle(&scenario.lwa_r.pose), angle(&scenario.lwa_l.pose))
}

/// Run the configured pipeline mode over one simulated trace and localize.
fn evaluate_trace(
    scenario: &Scenario,
    trace: &CsiTrace,
    params: &PipelineParams,
    trial: usize,
    seed: u64,
    sweep_value: Option<f64>,
) -> ResultRow {
    let true_thetas = true_angles(scenario);
    let mut row = failure_row(
        params.mode,
        sweep_value,
        trial,
        seed,
        scenario,
        true_thetas,
        String::new(),
    );
    row.failure = None;

    let estimate = match estimate_frequencies(trace, params) {
        Ok(e) => e,
        Err(e) => {
            row.failure = Some(e.to_string());
            return row;
        }
    };
    row.f_r_hat_hz = Some(estimate.f_r_hat);
    row.f_l_hat_hz = Some(estimate.f_l_hat);
    row.on_frames = Some(estimate.diagnostics.on_frames);
    row.off_frames = Some(estimate.diagnostics.off_frames);
    row.cluster_span_r = estimate.diagnostics.cluster_r.as_ref().map(|c| c.span_subcarriers());
    row.cluster_span_l = estimate.diagnostics.cluster_l.as_ref().map(|c| c.span_subcarriers());

    let theta_r = scenario.lwa_r.pose.feed().angle_of_frequency(estimate.f_r_hat);
    let theta_l = scenario.lwa_l.pose.feed().angle_of_frequency(estimate.f_l_hat);
    match (&theta_r, &theta_l) {
        (Ok(r), Ok(l)) => {
            row.est_theta_r_deg = Some(*r);
            row.est_theta_l_deg = Some(*l);
        }
        (r, l) => {
            let err = r.as_ref().err().or(l.as_ref().err()).expect("one side failed");
            row.failure = Some(format!("angle mapping: {err}"));
            return row;
        }
    }

    let cones = (
        cone_from_frequency(&scenario.lwa_r.pose, estimate.f_r_hat),
        cone_from_frequency(&scenario.lwa_l.pose, estimate.f_l_hat),
    );
    let (cone_r, cone_l) = match cones {
        (Ok(r), Ok(l)) => (r, l),
        (r, l) => {
            let err = r.err().or_else(|| l.err()).expect("one cone failed");
            row.failure = Some(format!("cone construction: {err}"));
            return row;
        }
    };
    match localize(&cone_r, &cone_l, scenario.target.z, &scenario.room) {
        Ok(location) => {
            row.est_x_m = Some(location.x_m);
            row.est_y_m = Some(location.y_m);
            row.planar_error_m = Some(
                ((location.x_m - scenario.target.x).powi(2)
                    + (location.y_m - scenario.target.y).powi(2))
                .sqrt(),
            );
            row.residual = Some(location.residual);
            row.candidates_considered = Some(location.candidates_considered);
        }
        Err(e) => row.failure = Some(format!("localization: {e}")),
    }
    row
}

/// Simulate one trial's capture and evaluate it under every requested mode.
/// The trace is shared across modes, as an ablation requires.
fn run_one_trial(
    base_scenario: &Scenario,
    base_params: &PipelineParams,
    spec: &ExperimentSpec,
    modes: &[Mode],
    trial: usize,
    sweep_value: Option<f64>,
    synth: Option<usize>,
) -> Vec<ResultRow> {
    let trial_seed = spec.seed.wrapping_add(trial as u64);
    let mut scenario = base_scenario.clone();

    match &spec.targets {
        TargetSampling::ScenarioTarget => {}
        TargetSampling::Fixed(list) => scenario.target = list[trial % list.len()],
        TargetSampling::UniformInRoom => {
            match sample_uniform_target(&scenario, derived_seed(trial_seed, 1)) {
                Ok(p) => scenario.target = p,
                Err(reason) => {
                    let thetas = true_angles(&scenario);
                    return modes
                        .iter()
                        .map(|&mode| {
                            failure_row(
                                mode,
                                sweep_value,
                                trial,
                                trial_seed,
                                &scenario,
                                thetas,
                                format!("target sampling: {reason}"),
                            )
                        })
                        .collect();
                }
            }
        }
    }
    if let Some(count) = synth {
        scenario.reflectors =
            synthesize_reflectors(&scenario, count, &spec.synthesis, derived_seed(trial_seed, 2));
    }

    let trace = match simulate_trace(&scenario, trial_seed, spec.frames) {
        Ok(t) => t,
        Err(e) => {
            let thetas = true_angles(&scenario);
            return modes
                .iter()
                .map(|&mode| {
                    failure_row(
                        mode,
                        sweep_value,
                        trial,
                        trial_seed,
                        &scenario,
                        thetas,
                        format!("simulation: {e}"),
                    )
                })
                .collect();
        }
    };
    modes
        .iter()
        .map(|&mode| {
            let params = PipelineParams { mode, ..base_params.clone() };
            evaluate_trace(&scenario, &trace, &params, trial, trial_seed, sweep_value)
        })
        .collect()
}

fn run_modes(spec: &ExperimentSpec, modes: &[Mode]) -> Result<Vec<ResultRow>, HarnessError> {
    spec.validate()?;
    let points: Vec<Option<f64>> = match &spec.sweep {
        Some(sweep) => sweep.values.iter().copied().map(Some).collect(),
        None => vec![None],
    };
    let mut all_rows = Vec::new();
    for point in points {
        let (scenario, params) = apply_static_sweep(spec, point)?;
        let synth = synth_count(spec, point);
        let trial_rows: Vec<Vec<ResultRow>> = run_in_pool(spec.workers, || {
            (0..spec.trials)
                .into_par_iter()
                .map(|trial| run_one_trial(&scenario, &params, spec, modes, trial, point, synth))
                .collect()
        })?;
        all_rows.extend(trial_rows.into_iter().flatten());
    }
    Ok(all_rows)
}

fn run_in_pool<R: Send>(
    workers: Option<usize>,
    job: impl FnOnce() -> R + Send,
) -> Result<R, HarnessError> {
    match workers {
        None => Ok(job()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| HarnessError::InvalidSpec(e.to_string()))?;
            Ok(pool.install(job))
        }
    }
}

/// Run the experiment in its configured mode.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<ResultRow>, HarnessError> {
    run_modes(spec, &[spec.pipeline.mode])
}

/// Run all four modes over shared per-trial traces.
pub fn run_ablation(spec: &ExperimentSpec) -> Result<Vec<ResultRow>, HarnessError> {
    run_modes(spec, &Mode::ALL)
}

/// Linear-interpolation quantile (the common "R-7" rule) over a sorted
/// slice. Equal bracketing values (including infinities) short-circuit.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty slice");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - lo as f64;
    // Zero fraction or equal brackets would otherwise produce inf - inf or
    // inf * 0 when a bracket is infinite.
    if frac == 0.0 || sorted[lo] == sorted[hi] {
        return sorted[lo];
    }
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Aggregate statistics over a set of result rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub rows: usize,
    pub failures: usize,
    pub failure_rate: f64,
    /// Statistics over successful rows; absent when every row failed.
    pub median_error_m: Option<f64>,
    pub p25_error_m: Option<f64>,
    pub p75_error_m: Option<f64>,
    pub p95_error_m: Option<f64>,
    /// Median with failures counted as infinite error; infinite when at
    /// least half the rows failed. Robust for ordering comparisons.
    pub median_error_counting_failures_m: f64,
    pub median_aoa_error_r_deg: Option<f64>,
    pub median_aoa_error_l_deg: Option<f64>,
    /// 101 points: (quantile q, error at q) over successful rows; empty
    /// when every row failed.
    pub cdf: Vec<(f64, f64)>,
}

pub fn summarize(rows: &[ResultRow]) -> Result<Summary, HarnessError> {
    if rows.is_empty() {
        return Err(HarnessError::EmptyRows);
    }
    let failures = rows.iter().filter(|r| r.is_failure()).count();
    let mut errors: Vec<f64> = rows.iter().filter_map(|r| r.planar_error_m).collect();
    errors.sort_by(f64::total_cmp);
    let mut counting_failures: Vec<f64> = rows
        .iter()
        .map(|r| r.planar_error_m.unwrap_or(f64::INFINITY))
        .collect();
    counting_failures.sort_by(f64::total_cmp);

    let median_aoa = |antenna: Handedness| {
        let mut v: Vec<f64> = rows.iter().filter_map(|r| r.aoa_error_deg(antenna)).collect();
        v.sort_by(f64::total_cmp);
        if v.is_empty() {
            None
        } else {
            Some(quantile(&v, 0.5))
        }
    };

    let (median, p25, p75, p95, cdf) = if errors.is_empty() {
        (None, None, None, None, Vec::new())
    } else {
        let cdf = (0..=100)
            .map(|i| {
                let q = i as f64 / 100.0;
                (q, quantile(&errors, q))
            })
            .collect();
        (
            Some(quantile(&errors, 0.5)),
            Some(quantile(&errors, 0.25)),
            Some(quantile(&errors, 0.75)),
            Some(quantile(&errors, 0.95)),
            cdf,
        )
    };
    Ok(Summary {
        rows: rows.len(),
        failures,
        failure_rate: failures as f64 / rows.len() as f64,
        median_error_m: median,
        p25_error_m: p25,
        p75_error_m: p75,
        p95_error_m: p95,
        median_error_counting_failures_m: quantile(&counting_failures, 0.5),
        median_aoa_error_r_deg: median_aoa(Handedness::Right),
        median_aoa_error_l_deg: median_aoa(Handedness::Left),
        cdf,
    })
}

/// One summary per (mode, sweep value) group, in first-appearance order.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedSummary {
    pub mode: Mode,
    pub sweep_value: Option<f64>,
    pub summary: Summary,
}

pub fn summarize_groups(rows: &[ResultRow]) -> Result<Vec<GroupedSummary>, HarnessError> {
    if rows.is_empty() {
        return Err(HarnessError::EmptyRows);
    }
    let mut keys: Vec<(Mode, Option<f64>)> = Vec::new();
    for row in rows {
        let key = (row.mode, row.sweep_value);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.iter()
        .map(|&(mode, sweep_value)| {
            let group: Vec<ResultRow> = rows
                .iter()
                .filter(|r| r.mode == mode && r.sweep_value == sweep_value)
                .cloned()
                .collect();
            Ok(GroupedSummary { mode, sweep_value, summary: summarize(&group)? })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    ResultsCsv,
    MetricsCsv,
    CdfCsv,
}

impl std::str::FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "results-csv" => Ok(ExportFormat::ResultsCsv),
            "metrics-csv" => Ok(ExportFormat::MetricsCsv),
            "cdf-csv" => Ok(ExportFormat::CdfCsv),
            other => Err(format!(
                "unknown format `{other}` (expected results-csv, metrics-csv or cdf-csv)"
            )),
        }
    }
}

fn cell_opt(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

fn cell_opt_usize(value: Option<usize>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

fn cell_opt_i64(value: Option<i64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

/// Commas and newlines in failure text would break the row shape.
fn sanitize(text: &str) -> String {
    text.replace([',', '\n'], ";")
}

fn group_label(mode: Mode, sweep_value: Option<f64>) -> String {
    match sweep_value {
        Some(v) => format!("{mode}_at_{v}"),
        None => mode.to_string(),
    }
}

/// Render rows in the requested format. Identical rows render to identical
/// bytes.
pub fn export_string(rows: &[ResultRow], format: ExportFormat) -> Result<String, HarnessError> {
    match format {
        ExportFormat::ResultsCsv => {
            let mut out = String::from(
                "mode,sweep_value,trial,seed,true_x_m,true_y_m,true_z_m,\
                 true_theta_r_deg,true_theta_l_deg,f_r_hat_hz,f_l_hat_hz,\
                 est_theta_r_deg,est_theta_l_deg,est_x_m,est_y_m,planar_error_m,\
                 residual,candidates_considered,on_frames,off_frames,\
                 cluster_span_r,cluster_span_l,failure\n",
            );
            for r in rows {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                    r.mode,
                    cell_opt(r.sweep_value),
                    r.trial,
                    r.seed,
                    r.true_x_m,
                    r.true_y_m,
                    r.true_z_m,
                    r.true_theta_r_deg,
                    r.true_theta_l_deg,
                    cell_opt(r.f_r_hat_hz),
                    cell_opt(r.f_l_hat_hz),
                    cell_opt(r.est_theta_r_deg),
                    cell_opt(r.est_theta_l_deg),
                    cell_opt(r.est_x_m),
                    cell_opt(r.est_y_m),
                    cell_opt(r.planar_error_m),
                    cell_opt(r.residual),
                    cell_opt_usize(r.candidates_considered),
                    cell_opt_usize(r.on_frames),
                    cell_opt_usize(r.off_frames),
                    cell_opt_i64(r.cluster_span_r),
                    cell_opt_i64(r.cluster_span_l),
                    r.failure.as_deref().map(sanitize).unwrap_or_default(),
                ));
            }
            Ok(out)
        }
        ExportFormat::MetricsCsv => {
            let groups = summarize_groups(rows)?;
            let mut out = String::from(
                "mode,sweep_value,rows,failures,failure_rate,median_error_m,\
                 p25_error_m,p75_error_m,p95_error_m,\
                 median_error_counting_failures_m,median_aoa_error_r_deg,\
                 median_aoa_error_l_deg\n",
            );
            for g in &groups {
                let s = &g.summary;
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                    g.mode,
                    cell_opt(g.sweep_value),
                    s.rows,
                    s.failures,
                    s.failure_rate,
                    cell_opt(s.median_error_m),
                    cell_opt(s.p25_error_m),
                    cell_opt(s.p75_error_m),
                    cell_opt(s.p95_error_m),
                    s.median_error_counting_failures_m,
                    cell_opt(s.median_aoa_error_r_deg),
                    cell_opt(s.median_aoa_error_l_deg),
                ));
            }
            Ok(out)
        }
        ExportFormat::CdfCsv => {
            let groups = summarize_groups(rows)?;
            let mut out = String::from("quantile");
            for g in &groups {
                out.push_str(&format!(",error_m_{}", group_label(g.mode, g.sweep_value)));
            }
            out.push('\n');
            for i in 0..=100 {
                let q = i as f64 / 100.0;
                out.push_str(&q.to_string());
                for g in &groups {
                    match g.summary.cdf.get(i) {
                        Some(&(_, e)) => out.push_str(&format!(",{e}")),
                        None => out.push(','),
                    }
                }
                out.push('\n');
            }
            Ok(out)
        }
    }
}

pub fn export(
    rows: &[ResultRow],
    path: impl AsRef<Path>,
    format: ExportFormat,
) -> Result<(), HarnessError> {
    let text = export_string(rows, format)?;
    std::fs::write(path, text)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Experiment documents
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentDoc {
    scenario: String,
    trials: Option<usize>,
    seed: Option<u64>,
    frames: Option<usize>,
    workers: Option<usize>,
    pipeline: Option<PipelineDoc>,
    targets: Option<TargetsDoc>,
    sweep: Option<SweepDoc>,
    reflector_synthesis: Option<SynthesisDoc>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct PipelineDoc {
    mode: Option<String>,
    epsilon: Option<f64>,
    cluster_gap: Option<i32>,
    delta: Option<i32>,
    duty_detection: Option<String>,
    zscore_window: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetsDoc {
    fixed: Option<Vec<[f64; 3]>>,
    uniform: Option<bool>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepDoc {
    parameter: String,
    values: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthesisDoc {
    count: Option<usize>,
    loss_db_min: Option<f64>,
    loss_db_max: Option<f64>,
    flip_fraction: Option<f64>,
}

/// Parse an experiment document; the scenario path is resolved relative to
/// `base_dir`.
pub fn parse_experiment(text: &str, base_dir: &Path) -> Result<ExperimentSpec, HarnessError> {
    let doc: ExperimentDoc =
        toml::from_str(text).map_err(|e| HarnessError::Config(ConfigError::Parse(e)))?;
    let scenario = config::load_scenario(base_dir.join(&doc.scenario))?;
    let mut spec = ExperimentSpec::new(scenario);
    spec.trials = doc.trials.unwrap_or(1);
    spec.seed = doc.seed.unwrap_or(0);
    spec.frames = doc.frames.unwrap_or(DEFAULT_FRAMES);
    spec.workers = doc.workers;

    if let Some(p) = &doc.pipeline {
        if let Some(mode) = &p.mode {
            spec.pipeline.mode = mode.parse().map_err(HarnessError::InvalidSpec)?;
        }
        if let Some(eps) = p.epsilon {
            spec.pipeline.epsilon = eps;
        }
        if let Some(gap) = p.cluster_gap {
            spec.pipeline.cluster_gap = gap;
        }
        if let Some(delta) = p.delta {
            spec.pipeline.delta = delta;
        }
        if let Some(detection) = &p.duty_detection {
            spec.pipeline.duty_detection =
                detection.parse().map_err(HarnessError::InvalidSpec)?;
        }
        spec.pipeline.zscore_window = p.zscore_window;
    }

    if let Some(t) = &doc.targets {
        spec.targets = match (&t.fixed, t.uniform.unwrap_or(false)) {
            (Some(_), true) => {
                return Err(HarnessError::InvalidSpec(
                    "targets: fixed and uniform are mutually exclusive".to_string(),
                ))
            }
            (Some(list), false) => {
                TargetSampling::Fixed(list.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect())
            }
            (None, true) => TargetSampling::UniformInRoom,
            (None, false) => {
                return Err(HarnessError::InvalidSpec(
                    "targets: set either fixed or uniform".to_string(),
                ))
            }
        };
    }

    if let Some(s) = &doc.sweep {
        spec.sweep = Some(Sweep {
            parameter: s.parameter.parse().map_err(HarnessError::InvalidSpec)?,
            values: s.values.clone(),
        });
    }

    if let Some(s) = &doc.reflector_synthesis {
        spec.synthesized_reflectors = s.count;
        if let Some(v) = s.loss_db_min {
            spec.synthesis.loss_db_min = v;
        }
        if let Some(v) = s.loss_db_max {
            spec.synthesis.loss_db_max = v;
        }
        if let Some(v) = s.flip_fraction {
            spec.synthesis.flip_fraction = v;
        }
    }
    spec.validate()?;
    Ok(spec)
}

pub fn load_experiment(path: impl AsRef<Path>) -> Result<ExperimentSpec, HarnessError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_experiment(&text, base)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_spec() -> ExperimentSpec {
        let mut spec = ExperimentSpec::new(Scenario::default_scenario());
        spec.trials = 3;
        spec.seed = 11;
        spec.frames = 20;
        spec
    }

    #[test]
    fn runs_are_deterministic_and_exports_are_byte_identical() {
        let spec = quick_spec();
        let a = run_experiment(&spec).unwrap();
        let b = run_experiment(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert!(a.iter().all(|r| !r.is_failure()), "clean default scene should localize");
        assert!(a.iter().all(|r| r.planar_error_m.unwrap() < 0.5));
        let csv_a = export_string(&a, ExportFormat::ResultsCsv).unwrap();
        let csv_b = export_string(&b, ExportFormat::ResultsCsv).unwrap();
        assert_eq!(csv_a, csv_b);
    }

    #[test]
    fn zero_selection_budget_produces_failure_rows_not_errors() {
        let mut spec = quick_spec();
        spec.pipeline.epsilon = 0.0;
        let rows = run_experiment(&spec).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.is_failure()));
        assert!(rows.iter().all(|r| r.est_x_m.is_none() && r.planar_error_m.is_none()));
        let summary = summarize(&rows).unwrap();
        assert_eq!(summary.failure_rate, 1.0);
        assert!(summary.median_error_m.is_none());
        assert!(summary.median_error_counting_failures_m.is_infinite());
        assert!(summary.cdf.is_empty());
    }

    #[test]
    fn quantiles_interpolate_linearly_and_survive_infinities() {
        let v = [1.0, 2.0, 3.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 0.5), 2.0);
        assert!((quantile(&v, 0.95) - 2.9).abs() < 1e-12);
        assert_eq!(quantile(&v, 1.0), 3.0);
        let with_inf = [1.0, f64::INFINITY, f64::INFINITY];
        assert!(quantile(&with_inf, 0.5).is_infinite());
        assert!(!quantile(&with_inf, 0.5).is_nan());
        assert_eq!(quantile(&with_inf, 0.0), 1.0);
    }

    #[test]
    fn summary_cdf_has_101_nondecreasing_points() {
        let rows = run_experiment(&quick_spec()).unwrap();
        let summary = summarize(&rows).unwrap();
        assert_eq!(summary.cdf.len(), 101);
        assert!(summary.cdf.windows(2).all(|w| w[0].1 <= w[1].1));
        assert_eq!(summary.cdf[0].0, 0.0);
        assert_eq!(summary.cdf[100].0, 1.0);
        assert_eq!(summary.rows, 3);
        assert_eq!(summary.failures, 0);
        assert!(summary.median_aoa_error_r_deg.is_some());
        assert!(summary.median_aoa_error_l_deg.is_some());
    }

    #[test]
    fn sweep_points_group_in_first_appearance_order() {
        let mut spec = quick_spec();
        spec.trials = 2;
        spec.sweep =
            Some(Sweep { parameter: SweepParameter::SnrDb, values: vec![25.0, 5.0] });
        let rows = run_experiment(&spec).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].sweep_value, Some(25.0));
        assert_eq!(rows[2].sweep_value, Some(5.0));
        let groups = summarize_groups(&rows).unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].sweep_value, Some(25.0));
        assert_eq!(groups[1].sweep_value, Some(5.0));
        let metrics = export_string(&rows, ExportFormat::MetricsCsv).unwrap();
        let lines: Vec<&str> = metrics.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("s4,25,"));
        assert!(lines[2].starts_with("s4,5,"));
    }

    #[test]
    fn export_shapes_match_row_counts() {
        let rows = run_experiment(&quick_spec()).unwrap();
        assert_eq!(rows.len(), 3);
        let results = export_string(&rows, ExportFormat::ResultsCsv).unwrap();
        assert_eq!(results.lines().count(), 4);
        let cdf = export_string(&rows, ExportFormat::CdfCsv).unwrap();
        assert_eq!(cdf.lines().count(), 102);
        assert!(cdf.starts_with("quantile,error_m_s4\n0,"));
        let metrics = export_string(&rows, ExportFormat::MetricsCsv).unwrap();
        assert_eq!(metrics.lines().count(), 2);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.csv");
        export(&rows, &path, ExportFormat::ResultsCsv).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), results);
    }

    #[test]
    fn fixed_targets_cycle_across_trials() {
        let mut spec = quick_spec();
        spec.trials = 4;
        spec.targets = TargetSampling::Fixed(vec![
            Vec3::new(2.5, 2.0, 2.0),
            Vec3::new(3.0, 1.5, 2.0),
        ]);
        let rows = run_experiment(&spec).unwrap();
        let xs: Vec<f64> = rows.iter().map(|r| r.true_x_m).collect();
        assert_eq!(xs, vec![2.5, 3.0, 2.5, 3.0]);
    }

    #[test]
    fn uniform_targets_land_in_both_fields_of_view() {
        let scenario = Scenario::default_scenario();
        for seed in 0..20 {
            let p = sample_uniform_target(&scenario, seed).unwrap();
            for unit in [&scenario.lwa_r, &scenario.lwa_l] {
                let theta = unit.pose.angle_to_deg(p).unwrap();
                assert!(unit.pose.feed().in_fov(theta), "seed {seed}: {theta} out of field");
            }
            assert_eq!(p.z, scenario.target.z);
        }
    }

    #[test]
    fn synthesized_reflectors_are_deterministic_and_nest_by_count() {
        let scenario = Scenario::default_scenario();
        let synthesis = ReflectorSynthesis::default();
        let twelve = synthesize_reflectors(&scenario, 12, &synthesis, 42);
        assert_eq!(twelve, synthesize_reflectors(&scenario, 12, &synthesis, 42));
        let four = synthesize_reflectors(&scenario, 4, &synthesis, 42);
        assert_eq!(&twelve[..4], &four[..]);
        assert_eq!(twelve.len(), 12);
        for r in &twelve {
            assert!(scenario.room.contains(r.position, 0.0));
            assert!((DEFAULT_SYNTH_LOSS_DB_MIN..DEFAULT_SYNTH_LOSS_DB_MAX).contains(&r.loss_db));
        }
        assert!(twelve.iter().any(|r| r.flip_polarization));
        assert!(twelve.iter().any(|r| !r.flip_polarization));
    }

    #[test]
    fn ablation_shares_one_capture_per_trial_across_modes() {
        let mut spec = quick_spec();
        spec.trials = 2;
        let rows = run_ablation(&spec).unwrap();
        assert_eq!(rows.len(), 8);
        for trial in 0..2 {
            let per_trial: Vec<&ResultRow> =
                rows.iter().filter(|r| r.trial == trial).collect();
            assert_eq!(per_trial.len(), 4);
            let modes: Vec<Mode> = per_trial.iter().map(|r| r.mode).collect();
            assert_eq!(modes, Mode::ALL.to_vec());
            assert!(per_trial.iter().all(|r| r.seed == per_trial[0].seed));
            assert!(per_trial.iter().all(|r| r.on_frames == per_trial[0].on_frames));
        }
    }

    #[test]
    fn ap_distance_sweep_slides_the_ap_along_its_bearing() {
        let mut spec = quick_spec();
        spec.sweep =
            Some(Sweep { parameter: SweepParameter::ApDistanceM, values: vec![2.0] });
        let (scenario, _) = apply_static_sweep(&spec, Some(2.0)).unwrap();
        let vertex = scenario.lwa_r.pose.vertex();
        assert!((scenario.ap.position.distance(vertex) - 2.0).abs() < 1e-12);
        let original = (spec.scenario.ap.position - vertex).normalized().unwrap();
        let moved = (scenario.ap.position - vertex).normalized().unwrap();
        assert!(original.distance(moved) < 1e-12);
    }

    #[test]
    fn experiment_documents_resolve_scenario_paths() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("scene.toml"),
            config::scenario_to_toml(&Scenario::default_scenario()),
        )
        .unwrap();
        let text = r#"
scenario = "scene.toml"
trials = 5
seed = 3
frames = 40

[pipeline]
mode = "s2"
epsilon = 0.04

[targets]
uniform = true

[sweep]
parameter = "snr_db"
values = [25.0, 15.0]

[reflector_synthesis]
count = 6
flip_fraction = 0.25
"#;
        let spec = parse_experiment(text, dir.path()).unwrap();
        assert_eq!(spec.trials, 5);
        assert_eq!(spec.seed, 3);
        assert_eq!(spec.frames, 40);
        assert_eq!(spec.pipeline.mode, Mode::S2);
        assert_eq!(spec.pipeline.epsilon, 0.04);
        assert_eq!(spec.targets, TargetSampling::UniformInRoom);
        assert_eq!(spec.sweep.as_ref().unwrap().parameter, SweepParameter::SnrDb);
        assert_eq!(spec.synthesized_reflectors, Some(6));
        assert_eq!(spec.synthesis.flip_fraction, 0.25);
        assert_eq!(spec.synthesis.loss_db_min, DEFAULT_SYNTH_LOSS_DB_MIN);
        assert_eq!(spec.scenario, Scenario::default_scenario());
    }

    #[test]
    fn experiment_documents_reject_unknown_keys_and_bad_values() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("scene.toml"),
            config::scenario_to_toml(&Scenario::default_scenario()),
        )
        .unwrap();
        let err = parse_experiment("scenario = \"scene.toml\"\ntrails = 3\n", dir.path())
            .unwrap_err();
        assert!(err.to_string().contains("trails"), "got: {err}");
        let err = parse_experiment("scenario = \"scene.toml\"\ntrials = 0\n", dir.path())
            .unwrap_err();
        assert!(matches!(err, HarnessError::NoTrials));
        let err = parse_experiment(
            "scenario = \"scene.toml\"\n[sweep]\nparameter = \"bogus\"\nvalues = [1.0]\n",
            dir.path(),
        )
        .unwrap_err();
        assert!(matches!(err, HarnessError::InvalidSpec(_)));
        let err = parse_experiment(
            "scenario = \"scene.toml\"\n[targets]\nfixed = [[1.0, 1.0, 1.0]]\nuniform = true\n",
            dir.path(),
        )
        .unwrap_err();
        assert!(matches!(err, HarnessError::InvalidSpec(_)));
    }

    #[test]
    fn failure_text_cannot_break_the_row_shape() {
        assert_eq!(sanitize("a,b\nc"), "a;b;c");
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let mut spec = quick_spec();
        let serial = run_experiment(&spec).unwrap();
        spec.workers = Some(2);
        let parallel = run_experiment(&spec).unwrap();
        assert_eq!(serial, parallel);
    }
}
