//! Frequency recovery from duty-cycled CSI captures.
//!
//! Three stages turn the raw spectra into one frequency per receive antenna:
//!
//! 1. **Differencing** — split frames into dispersive-antenna-on and -off
//!    groups (by label or by energy detection), average magnitudes per
//!    group, and subtract. The difference spectrum isolates the circularly
//!    polarized contribution; the linear multipath background cancels.
//! 2. **Clustering** — z-score the difference spectrum, keep the top
//!    fraction of subcarriers, group them into contiguous clusters, score
//!    each by the integral of the difference over its span, and keep the
//!    highest-scoring cluster as the line-of-sight candidate.
//! 3. **Purification** — around each antenna's peak subcarrier, take a
//!    small window, trim both antennas' windows to a common shape aligned
//!    at the peaks, and compute the weighted-mean frequency from the outer
//!    product of the two windows.
//!
//! Partial chains are available as modes: S1 takes the raw on-spectrum
//! argmax (no differencing), S2 the normalized-difference argmax (no
//! clustering), S3 the selected cluster's weighted center (no
//! purification), and S4 runs everything.
//!
//! Scoring, centroids, and purification all operate on the raw
//! (unnormalized) difference spectrum — those quantities integrate physical
//! amplitudes; normalization exists only to make the selection threshold
//! scale-free.
//!
//! Peak lookups resolve ties to the midpoint of the first maximal plateau,
//! so flat-topped windows behave symmetrically.

use crate::polarization::Handedness;
use crate::trace::{CsiTrace, LwaState, SubcarrierGrid};
use thiserror::Error;

pub const DEFAULT_EPSILON: f64 = 0.05;
pub const DEFAULT_CLUSTER_GAP: i32 = 4;
pub const DEFAULT_PURIFY_HALF_WINDOW: i32 = 8;

/// How much of the chain runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Argmax of the raw mean on-spectrum; no differencing at all.
    S1,
    /// Argmax of the normalized difference spectrum; no clustering.
    S2,
    /// Weighted center of the selected cluster; no purification.
    S3,
    /// Full chain.
    S4,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::S1, Mode::S2, Mode::S3, Mode::S4];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::S1 => "s1",
            Mode::S2 => "s2",
            Mode::S3 => "s3",
            Mode::S4 => "s4",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "s1" => Ok(Mode::S1),
            "s2" => Ok(Mode::S2),
            "s3" => Ok(Mode::S3),
            "s4" => Ok(Mode::S4),
            other => Err(format!("unknown mode `{other}` (expected s1, s2, s3 or s4)")),
        }
    }
}

/// Where the on/off grouping comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DutyDetection {
    /// Trust the per-frame labels carried in the trace.
    UseLabels,
    /// Recover the grouping from per-frame energy (blind captures).
    Detect,
}

impl std::str::FromStr for DutyDetection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "use-labels" => Ok(DutyDetection::UseLabels),
            "detect" => Ok(DutyDetection::Detect),
            other => Err(format!("unknown duty detection `{other}` (expected use-labels or detect)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineParams {
    /// Fraction of subcarriers kept by selection (top ceil(epsilon * count)).
    pub epsilon: f64,
    /// Largest index jump still bridged inside one cluster.
    pub cluster_gap: i32,
    /// Purification half-window in subcarriers.
    pub delta: i32,
    pub mode: Mode,
    pub duty_detection: DutyDetection,
    /// Width of a sliding z-score window; `None` normalizes over the full
    /// grid.
    pub zscore_window: Option<usize>,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            epsilon: DEFAULT_EPSILON,
            cluster_gap: DEFAULT_CLUSTER_GAP,
            delta: DEFAULT_PURIFY_HALF_WINDOW,
            mode: Mode::S4,
            duty_detection: DutyDetection::UseLabels,
            zscore_window: None,
        }
    }
}

impl PipelineParams {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !self.epsilon.is_finite() || !(0.0..=1.0).contains(&self.epsilon) {
            return Err(PipelineError::InvalidParams(format!(
                "epsilon must lie in [0, 1] (got {})",
                self.epsilon
            )));
        }
        if self.cluster_gap < 1 {
            return Err(PipelineError::InvalidParams(format!(
                "cluster_gap must be >= 1 (got {})",
                self.cluster_gap
            )));
        }
        if self.delta < 1 {
            return Err(PipelineError::InvalidParams(format!(
                "delta must be >= 1 (got {})",
                self.delta
            )));
        }
        if let Some(w) = self.zscore_window {
            if w < 2 {
                return Err(PipelineError::InvalidParams(format!(
                    "zscore_window must be >= 2 subcarriers (got {w})"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    #[error("segmentation: trace has no frames")]
    EmptyTrace,
    #[error("segmentation: all frames fall into one duty group; cannot segment")]
    CannotSegment,
    #[error("segmentation: labeled grouping found no {missing} frames")]
    MissingDutyGroup { missing: &'static str },
    #[error("segmentation: trace carries unlabeled frames; run duty detection instead")]
    UnlabeledFrames,
    #[error("differencing: spectra lengths differ ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("normalization: zero-variance input")]
    ZeroVariance,
    #[error("selection: expected a normalized difference spectrum")]
    NotNormalized,
    #[error("selection: no candidate subcarriers")]
    NoCandidates,
    #[error("clustering: no clusters to choose from")]
    NoCluster,
    #[error("link selection: no candidate links")]
    NoLinks,
    #[error("parameters: {0}")]
    InvalidParams(String),
    #[error("{antenna}-handed antenna: {source}")]
    Antenna {
        antenna: Handedness,
        #[source]
        source: Box<PipelineError>,
    },
}

impl PipelineError {
    /// The pipeline stage an error originated in.
    pub fn stage(&self) -> &'static str {
        match self {
            PipelineError::EmptyTrace
            | PipelineError::CannotSegment
            | PipelineError::MissingDutyGroup { .. }
            | PipelineError::UnlabeledFrames => "segmentation",
            PipelineError::LengthMismatch { .. } => "differencing",
            PipelineError::ZeroVariance => "normalization",
            PipelineError::NotNormalized | PipelineError::NoCandidates => "selection",
            PipelineError::NoCluster => "clustering",
            PipelineError::NoLinks => "link selection",
            PipelineError::InvalidParams(_) => "parameters",
            PipelineError::Antenna { source, .. } => source.stage(),
        }
    }

    fn for_antenna(self, antenna: Handedness) -> PipelineError {
        PipelineError::Antenna { antenna, source: Box::new(self) }
    }
}

/// Per-subcarrier on/off magnitude difference, optionally normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaSpectrum {
    grid: SubcarrierGrid,
    values: Vec<f64>,
    normalized: bool,
}

impl DeltaSpectrum {
    pub fn new(grid: SubcarrierGrid, values: Vec<f64>) -> Result<Self, PipelineError> {
        if values.len() != grid.count() {
            return Err(PipelineError::LengthMismatch {
                left: values.len(),
                right: grid.count(),
            });
        }
        Ok(DeltaSpectrum { grid, values, normalized: false })
    }

    pub fn grid(&self) -> &SubcarrierGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Value at signed subcarrier index `k` (must be on the grid).
    pub fn value_at(&self, k: i32) -> f64 {
        let pos = self
            .grid
            .position_of_index(k)
            .expect("subcarrier index within the grid");
        self.values[pos]
    }
}

/// Mean magnitude spectra per antenna and duty group.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedMeans {
    pub grid: SubcarrierGrid,
    pub on_count: usize,
    pub off_count: usize,
    pub lhcp_on: Vec<f64>,
    pub lhcp_off: Vec<f64>,
    pub rhcp_on: Vec<f64>,
    pub rhcp_off: Vec<f64>,
}

impl SegmentedMeans {
    pub fn mean_on(&self, antenna: Handedness) -> &[f64] {
        match antenna {
            Handedness::Left => &self.lhcp_on,
            Handedness::Right => &self.rhcp_on,
        }
    }

    pub fn mean_off(&self, antenna: Handedness) -> &[f64] {
        match antenna {
            Handedness::Left => &self.lhcp_off,
            Handedness::Right => &self.rhcp_off,
        }
    }
}

/// Split frames into on/off groups and average spectrum magnitudes per
/// antenna and group.
///
/// `UseLabels` trusts the per-frame duty labels; `Detect` classifies frames
/// by total-band energy with a two-means split (higher-energy group = on).
pub fn segment_on_off(
    trace: &CsiTrace,
    params: &PipelineParams,
) -> Result<SegmentedMeans, PipelineError> {
    if trace.frames.is_empty() {
        return Err(PipelineError::EmptyTrace);
    }
    let on_flags: Vec<bool> = match params.duty_detection {
        DutyDetection::UseLabels => {
            if trace.frames.iter().any(|f| f.state == LwaState::Unknown) {
                return Err(PipelineError::UnlabeledFrames);
            }
            trace.frames.iter().map(|f| f.state == LwaState::On).collect()
        }
        DutyDetection::Detect => {
            let energies: Vec<f64> = trace
                .frames
                .iter()
                .map(|f| {
                    f.lhcp.iter().chain(&f.rhcp).map(|h| h.norm_sqr()).sum::<f64>()
                })
                .collect();
            two_means_split(&energies).ok_or(PipelineError::CannotSegment)?
        }
    };

    let on_count = on_flags.iter().filter(|&&v| v).count();
    let off_count = on_flags.len() - on_count;
    if on_count == 0 {
        return Err(match params.duty_detection {
            DutyDetection::UseLabels => PipelineError::MissingDutyGroup { missing: "on" },
            DutyDetection::Detect => PipelineError::CannotSegment,
        });
    }
    if off_count == 0 {
        return Err(match params.duty_detection {
            DutyDetection::UseLabels => PipelineError::MissingDutyGroup { missing: "off" },
            DutyDetection::Detect => PipelineError::CannotSegment,
        });
    }

    let count = trace.grid.count();
    let mut means = SegmentedMeans {
        grid: trace.grid,
        on_count,
        off_count,
        lhcp_on: vec![0.0; count],
        lhcp_off: vec![0.0; count],
        rhcp_on: vec![0.0; count],
        rhcp_off: vec![0.0; count],
    };
    for (frame, &on) in trace.frames.iter().zip(&on_flags) {
        let (lhcp_acc, rhcp_acc) = if on {
            (&mut means.lhcp_on, &mut means.rhcp_on)
        } else {
            (&mut means.lhcp_off, &mut means.rhcp_off)
        };
        for (acc, h) in lhcp_acc.iter_mut().zip(&frame.lhcp) {
            *acc += h.norm();
        }
        for (acc, h) in rhcp_acc.iter_mut().zip(&frame.rhcp) {
            *acc += h.norm();
        }
    }
    for v in means.lhcp_on.iter_mut().chain(means.rhcp_on.iter_mut()) {
        *v /= on_count as f64;
    }
    for v in means.lhcp_off.iter_mut().chain(means.rhcp_off.iter_mut()) {
        *v /= off_count as f64;
    }
    Ok(means)
}

/// One-dimensional two-means clustering with min/max initialization.
/// Returns per-sample membership of the higher-mean group, or `None` when
/// the samples cannot be split into two nonempty groups.
fn two_means_split(samples: &[f64]) -> Option<Vec<bool>> {
    let lo_init = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi_init = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // Also bails on empty or all-NaN input, where the fold identities meet.
    if hi_init <= lo_init || hi_init.is_nan() || lo_init.is_nan() {
        return None;
    }
    let (mut lo, mut hi) = (lo_init, hi_init);
    let mut membership = vec![false; samples.len()];
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        let next: Vec<bool> = samples.iter().map(|&e| e > mid).collect();
        let n_hi = next.iter().filter(|&&v| v).count();
        if n_hi == 0 || n_hi == next.len() {
            return None;
        }
        let sum_hi: f64 = samples.iter().zip(&next).filter(|(_, &m)| m).map(|(e, _)| e).sum();
        let sum_lo: f64 = samples.iter().zip(&next).filter(|(_, &m)| !m).map(|(e, _)| e).sum();
        let new_hi = sum_hi / n_hi as f64;
        let new_lo = sum_lo / (next.len() - n_hi) as f64;
        let converged = next == membership;
        membership = next;
        lo = new_lo;
        hi = new_hi;
        if converged {
            break;
        }
    }
    Some(membership)
}

/// Elementwise `mean|H_on| - mean|H_off|`. Negatives are preserved; they
/// carry information until clamped at the weighting stages.
pub fn delta_spectrum(
    h_on: &[f64],
    h_off: &[f64],
    grid: SubcarrierGrid,
) -> Result<DeltaSpectrum, PipelineError> {
    if h_on.len() != h_off.len() {
        return Err(PipelineError::LengthMismatch { left: h_on.len(), right: h_off.len() });
    }
    let values = h_on.iter().zip(h_off).map(|(a, b)| a - b).collect();
    DeltaSpectrum::new(grid, values)
}

/// Z-score normalization: full-grid population statistics, or per-subcarrier
/// statistics over a sliding window of `window` subcarriers (clipped at the
/// grid edges). In windowed mode a zero-variance window yields 0 for that
/// subcarrier; full-grid zero variance is an error.
pub fn normalize_zscore(
    ds: &DeltaSpectrum,
    window: Option<usize>,
) -> Result<DeltaSpectrum, PipelineError> {
    let values = &ds.values;
    let normalized_values = match window {
        None => {
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            if var <= 0.0 {
                return Err(PipelineError::ZeroVariance);
            }
            let std = var.sqrt();
            values.iter().map(|v| (v - mean) / std).collect()
        }
        Some(w) => {
            let half_lo = (w - 1) / 2;
            let half_hi = w / 2;
            values
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let lo = i.saturating_sub(half_lo);
                    let hi = (i + half_hi).min(values.len() - 1);
                    let slice = &values[lo..=hi];
                    let n = slice.len() as f64;
                    let mean = slice.iter().sum::<f64>() / n;
                    let var = slice.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                    if var <= 0.0 {
                        0.0
                    } else {
                        (v - mean) / var.sqrt()
                    }
                })
                .collect()
        }
    };
    Ok(DeltaSpectrum { grid: ds.grid, values: normalized_values, normalized: true })
}

/// Relative floor separating a real on/off difference from numerical dust.
/// Averaging bit-identical spectra over different frame counts leaves
/// differences at the summation-rounding level (~1e-16 of the spectrum);
/// anything at or below this fraction of the on-spectrum peak is treated as
/// the absence of circularly polarized energy.
const FLAT_DIFFERENCE_REL: f64 = 1e-12;

fn difference_is_flat(ds: &DeltaSpectrum, mean_on: &[f64]) -> bool {
    let scale = mean_on.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let peak = ds.values.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    peak <= scale * FLAT_DIFFERENCE_REL
}

/// Number of subcarriers the selection keeps: ceil(epsilon * count),
/// guarded against float products like 0.4 * 5 landing a hair above the
/// true integer and inflating the ceiling.
fn selection_size(epsilon: f64, count: usize) -> usize {
    ((epsilon * count as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Keep the top `ceil(epsilon * count)` subcarriers by normalized value.
/// Ties at the cut boundary favor the lower index. Returns signed
/// subcarrier indexes, ascending.
pub fn select_subcarriers(
    ds: &DeltaSpectrum,
    epsilon: f64,
) -> Result<Vec<i32>, PipelineError> {
    if !ds.normalized {
        return Err(PipelineError::NotNormalized);
    }
    if !epsilon.is_finite() || !(0.0..=1.0).contains(&epsilon) {
        return Err(PipelineError::InvalidParams(format!(
            "epsilon must lie in [0, 1] (got {epsilon})"
        )));
    }
    let n = selection_size(epsilon, ds.values.len());
    if n == 0 {
        return Err(PipelineError::NoCandidates);
    }
    let mut order: Vec<usize> = (0..ds.values.len()).collect();
    order.sort_by(|&a, &b| ds.values[b].total_cmp(&ds.values[a]).then(a.cmp(&b)));
    let mut picked: Vec<i32> =
        order[..n].iter().map(|&p| ds.grid.index_at_position(p)).collect();
    picked.sort_unstable();
    Ok(picked)
}

/// Role a cluster plays after selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterRole {
    Candidate,
    /// Rejected: sparse multipath energy.
    Sparse,
    /// The retained line-of-sight candidate.
    CompactSelected,
}

/// A contiguous run of selected subcarriers.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub k_min: i32,
    pub k_max: i32,
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub score: f64,
    pub role: ClusterRole,
}

impl Cluster {
    /// Number of subcarriers spanned (inclusive of both ends).
    pub fn span_subcarriers(&self) -> i64 {
        (self.k_max as i64) - (self.k_min as i64) + 1
    }
}

/// Greedy left-to-right grouping of sorted indexes: a jump larger than
/// `gap` starts a new cluster. Empty input gives an empty list.
pub fn cluster_subcarriers(
    indexes: &[i32],
    gap: i32,
    grid: &SubcarrierGrid,
) -> Vec<Cluster> {
    debug_assert!(indexes.windows(2).all(|w| w[0] < w[1]), "indexes must be sorted and unique");
    let mut clusters: Vec<Cluster> = Vec::new();
    for &k in indexes {
        match clusters.last_mut() {
            Some(last) if k - last.k_max <= gap => {
                last.k_max = k;
                last.f_max_hz = grid.frequency_of_index(k);
            }
            _ => clusters.push(Cluster {
                k_min: k,
                k_max: k,
                f_min_hz: grid.frequency_of_index(k),
                f_max_hz: grid.frequency_of_index(k),
                score: 0.0,
                role: ClusterRole::Candidate,
            }),
        }
    }
    clusters
}

/// Integral of the difference spectrum over the cluster's frequency span:
/// trapezoidal over every subcarrier in `[k_min, k_max]`; a single
/// subcarrier integrates as one spacing-wide rectangle.
pub fn cluster_score(cluster: &Cluster, ds: &DeltaSpectrum) -> f64 {
    let spacing = ds.grid.spacing_hz();
    if cluster.k_min == cluster.k_max {
        return ds.value_at(cluster.k_min) * spacing;
    }
    let mut total = 0.0;
    for k in cluster.k_min..cluster.k_max {
        total += 0.5 * (ds.value_at(k) + ds.value_at(k + 1)) * spacing;
    }
    total
}

/// Keep the cluster with the highest score; ties go to the wider cluster,
/// then to the lower `k_min`. The winner is tagged as the compact
/// (line-of-sight) cluster; the raw difference spectrum supplies scores.
pub fn select_los_cluster(
    clusters: &[Cluster],
    ds: &DeltaSpectrum,
) -> Result<Cluster, PipelineError> {
    let mut best: Option<Cluster> = None;
    for cluster in clusters {
        let mut scored = cluster.clone();
        scored.score = cluster_score(cluster, ds);
        let replace = match &best {
            None => true,
            Some(current) => {
                scored.score > current.score
                    || (scored.score == current.score
                        && (scored.span_subcarriers() > current.span_subcarriers()
                            || (scored.span_subcarriers() == current.span_subcarriers()
                                && scored.k_min < current.k_min)))
            }
        };
        if replace {
            best = Some(scored);
        }
    }
    let mut winner = best.ok_or(PipelineError::NoCluster)?;
    winner.role = ClusterRole::CompactSelected;
    Ok(winner)
}

/// Peak subcarrier within `[k_min, k_max]`: the argmax, with ties resolved
/// to the midpoint of the first maximal plateau.
fn peak_index(ds: &DeltaSpectrum, k_min: i32, k_max: i32) -> i32 {
    let mut max = f64::NEG_INFINITY;
    for k in k_min..=k_max {
        max = max.max(ds.value_at(k));
    }
    let mut run_start = None;
    for k in k_min..=k_max {
        if ds.value_at(k) == max {
            if run_start.is_none() {
                run_start = Some(k);
            }
            if k == k_max || ds.value_at(k + 1) != max {
                let start = run_start.expect("run started");
                return start + (k - start) / 2;
            }
        }
    }
    unreachable!("a finite maximum always exists in a nonempty range")
}

/// Joint purification of the two antennas' cluster peaks.
#[derive(Debug, Clone, PartialEq)]
pub struct PurificationState {
    pub k_r: i32,
    pub k_l: i32,
    pub delta: i32,
    /// Inclusive window actually used, after clipping and trimming.
    pub window_r: (i32, i32),
    pub window_l: (i32, i32),
    /// Outer product of the two clamped windows (rows follow the right
    /// antenna's window, columns the left's).
    pub g: Vec<Vec<f64>>,
    pub f_r_hat: f64,
    pub f_l_hat: f64,
    /// All weights vanished; the estimates fell back to the peak
    /// frequencies.
    pub degenerate: bool,
}

/// Around each peak take the `[K - delta, K + delta]` window, clip it to
/// the grid and its cluster, trim both windows to a common shape aligned at
/// the peaks, clamp negatives to zero, and derive both frequency estimates
/// from the marginals of the windows' outer product.
pub fn purify(
    cluster_r: &Cluster,
    ds_r: &DeltaSpectrum,
    cluster_l: &Cluster,
    ds_l: &DeltaSpectrum,
    delta: i32,
) -> Result<PurificationState, PipelineError> {
    if delta < 1 {
        return Err(PipelineError::InvalidParams(format!("delta must be >= 1 (got {delta})")));
    }
    let k_r = peak_index(ds_r, cluster_r.k_min, cluster_r.k_max);
    let k_l = peak_index(ds_l, cluster_l.k_min, cluster_l.k_max);

    let extent = |k: i32, cluster: &Cluster, grid: &SubcarrierGrid| {
        let lo = (k - delta).max(cluster.k_min).max(grid.index_min());
        let hi = (k + delta).min(cluster.k_max).min(grid.index_max());
        (k - lo, hi - k)
    };
    let (a_r, b_r) = extent(k_r, cluster_r, &ds_r.grid);
    let (a_l, b_l) = extent(k_l, cluster_l, &ds_l.grid);
    let a = a_r.min(a_l);
    let b = b_r.min(b_l);

    let window = |ds: &DeltaSpectrum, k: i32| -> Vec<f64> {
        ((k - a)..=(k + b)).map(|i| ds.value_at(i).max(0.0)).collect()
    };
    let w_r = window(ds_r, k_r);
    let w_l = window(ds_l, k_l);
    let g: Vec<Vec<f64>> =
        w_r.iter().map(|&r| w_l.iter().map(|&l| r * l).collect()).collect();

    let g_total: f64 = g.iter().flatten().sum();
    let (f_r_hat, f_l_hat, degenerate) = if g_total > 0.0 {
        // Row marginal weights the right antenna's frequencies, column
        // marginal the left's.
        let mut num_r = 0.0;
        let mut num_l = 0.0;
        for (i, row) in g.iter().enumerate() {
            let f_row = ds_r.grid.frequency_of_index(k_r - a + i as i32);
            for (j, &value) in row.iter().enumerate() {
                let f_col = ds_l.grid.frequency_of_index(k_l - a + j as i32);
                num_r += value * f_row;
                num_l += value * f_col;
            }
        }
        (num_r / g_total, num_l / g_total, false)
    } else {
        (ds_r.grid.frequency_of_index(k_r), ds_l.grid.frequency_of_index(k_l), true)
    };

    Ok(PurificationState {
        k_r,
        k_l,
        delta,
        window_r: (k_r - a, k_r + b),
        window_l: (k_l - a, k_l + b),
        g,
        f_r_hat,
        f_l_hat,
        degenerate,
    })
}

/// Weighted center of a cluster: trapezoid-rule weights (half at the
/// endpoints) times the clamped difference values. Falls back to the peak
/// frequency when every weight vanishes.
fn cluster_weighted_center(cluster: &Cluster, ds: &DeltaSpectrum) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for k in cluster.k_min..=cluster.k_max {
        let endpoint = k == cluster.k_min || k == cluster.k_max;
        let trapezoid = if endpoint && cluster.k_min != cluster.k_max { 0.5 } else { 1.0 };
        let w = ds.value_at(k).max(0.0) * trapezoid;
        num += w * ds.grid.frequency_of_index(k);
        den += w;
    }
    if den > 0.0 {
        num / den
    } else {
        ds.grid.frequency_of_index(peak_index(ds, cluster.k_min, cluster.k_max))
    }
}

/// Everything worth reporting alongside the two frequency estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateDiagnostics {
    pub mode: Mode,
    pub on_frames: usize,
    pub off_frames: usize,
    pub cluster_r: Option<Cluster>,
    pub cluster_l: Option<Cluster>,
    pub purification: Option<PurificationState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyEstimate {
    pub f_r_hat: f64,
    pub f_l_hat: f64,
    pub diagnostics: EstimateDiagnostics,
}

/// Intermediate per-antenna products of the full chain.
struct AntennaChain {
    delta: DeltaSpectrum,
    cluster: Option<Cluster>,
}

/// Run the configured chain over one trace (both antennas) and produce one
/// frequency per antenna.
pub fn estimate_frequencies(
    trace: &CsiTrace,
    params: &PipelineParams,
) -> Result<FrequencyEstimate, PipelineError> {
    params.validate()?;
    let means = segment_on_off(trace, params)?;
    let grid = means.grid;

    let mut f_hat = [0.0f64; 2];
    let mut chains: Vec<AntennaChain> = Vec::with_capacity(2);
    for (slot, antenna) in f_hat.iter_mut().zip([Handedness::Right, Handedness::Left]) {
        if params.mode == Mode::S1 {
            // Raw spectrum only: no differencing at all.
            let on = means.mean_on(antenna);
            let raw = DeltaSpectrum::new(grid, on.to_vec())
                .map_err(|e| e.for_antenna(antenna))?;
            *slot = grid
                .frequency_of_index(peak_index(&raw, grid.index_min(), grid.index_max()));
            continue;
        }

        let ds = delta_spectrum(means.mean_on(antenna), means.mean_off(antenna), grid)
            .map_err(|e| e.for_antenna(antenna))?;
        // A flat difference spectrum means no detectable circularly
        // polarized energy at this antenna.
        if difference_is_flat(&ds, means.mean_on(antenna)) {
            return Err(PipelineError::NoCandidates.for_antenna(antenna));
        }
        let normalized = normalize_zscore(&ds, params.zscore_window).map_err(|e| match e {
            PipelineError::ZeroVariance => PipelineError::NoCandidates.for_antenna(antenna),
            other => other.for_antenna(antenna),
        })?;

        if params.mode == Mode::S2 {
            *slot = grid.frequency_of_index(peak_index(
                &normalized,
                grid.index_min(),
                grid.index_max(),
            ));
            continue;
        }

        let selected = select_subcarriers(&normalized, params.epsilon)
            .map_err(|e| e.for_antenna(antenna))?;
        let clusters = cluster_subcarriers(&selected, params.cluster_gap, &grid);
        let winner =
            select_los_cluster(&clusters, &ds).map_err(|e| e.for_antenna(antenna))?;

        if params.mode == Mode::S3 {
            *slot = cluster_weighted_center(&winner, &ds);
        }
        chains.push(AntennaChain { delta: ds, cluster: Some(winner) });
    }

    let mut diagnostics = EstimateDiagnostics {
        mode: params.mode,
        on_frames: means.on_count,
        off_frames: means.off_count,
        cluster_r: None,
        cluster_l: None,
        purification: None,
    };

    if matches!(params.mode, Mode::S3 | Mode::S4) {
        // Chains were pushed in [right, left] order.
        diagnostics.cluster_r = chains[0].cluster.clone();
        diagnostics.cluster_l = chains[1].cluster.clone();
    }
    if params.mode == Mode::S4 {
        let cr = diagnostics.cluster_r.as_ref().expect("right cluster exists in S4");
        let cl = diagnostics.cluster_l.as_ref().expect("left cluster exists in S4");
        let state = purify(cr, &chains[0].delta, cl, &chains[1].delta, params.delta)?;
        f_hat[0] = state.f_r_hat;
        f_hat[1] = state.f_l_hat;
        diagnostics.purification = Some(state);
    }

    Ok(FrequencyEstimate { f_r_hat: f_hat[0], f_l_hat: f_hat[1], diagnostics })
}

/// Span/score summary of one candidate link, for link selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkSummary {
    /// Combined subcarrier span of the selected clusters at both antennas.
    pub span_subcarriers: i64,
    /// Combined cluster score at both antennas.
    pub score: f64,
}

/// Pick the candidate with the smallest selected-cluster span; ties go to
/// the larger score, then to the earlier candidate.
pub fn select_best_link_by_summary(links: &[LinkSummary]) -> Result<usize, PipelineError> {
    links
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            a.span_subcarriers
                .cmp(&b.span_subcarriers)
                .then(b.score.total_cmp(&a.score))
        })
        .map(|(i, _)| i)
        .ok_or(PipelineError::NoLinks)
}

/// Process every candidate trace through cluster selection and choose the
/// link whose selected clusters are tightest in frequency.
pub fn select_best_link(
    traces: &[CsiTrace],
    params: &PipelineParams,
) -> Result<usize, PipelineError> {
    let mut summaries = Vec::with_capacity(traces.len());
    for trace in traces {
        let mut chain_params = params.clone();
        // Link selection always needs the cluster stage.
        if matches!(chain_params.mode, Mode::S1 | Mode::S2) {
            chain_params.mode = Mode::S3;
        }
        let means = segment_on_off(trace, &chain_params)?;
        let mut span = 0i64;
        let mut score = 0.0f64;
        for antenna in [Handedness::Right, Handedness::Left] {
            let ds = delta_spectrum(
                means.mean_on(antenna),
                means.mean_off(antenna),
                means.grid,
            )
            .map_err(|e| e.for_antenna(antenna))?;
            if difference_is_flat(&ds, means.mean_on(antenna)) {
                return Err(PipelineError::NoCandidates.for_antenna(antenna));
            }
            let normalized = normalize_zscore(&ds, chain_params.zscore_window).map_err(|e| {
                match e {
                    PipelineError::ZeroVariance => {
                        PipelineError::NoCandidates.for_antenna(antenna)
                    }
                    other => other.for_antenna(antenna),
                }
            })?;
            let selected = select_subcarriers(&normalized, chain_params.epsilon)
                .map_err(|e| e.for_antenna(antenna))?;
            let clusters = cluster_subcarriers(&selected, chain_params.cluster_gap, &means.grid);
            let winner =
                select_los_cluster(&clusters, &ds).map_err(|e| e.for_antenna(antenna))?;
            span += winner.span_subcarriers();
            score += winner.score;
        }
        summaries.push(LinkSummary { span_subcarriers: span, score });
    }
    select_best_link_by_summary(&summaries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{simulate_trace, Scenario};

    /// Toy grid whose signed indexes run 0..=n-1, so test literals read as
    /// plain array positions.
    fn toy_grid(n: usize, spacing: f64) -> SubcarrierGrid {
        SubcarrierGrid::from_parts(0, n as i32 - 1, 100.0, spacing).unwrap()
    }

    fn toy_ds(values: &[f64], spacing: f64) -> DeltaSpectrum {
        DeltaSpectrum::new(toy_grid(values.len(), spacing), values.to_vec()).unwrap()
    }

    fn cluster_over(k_min: i32, k_max: i32, grid: &SubcarrierGrid) -> Cluster {
        Cluster {
            k_min,
            k_max,
            f_min_hz: grid.frequency_of_index(k_min),
            f_max_hz: grid.frequency_of_index(k_max),
            score: 0.0,
            role: ClusterRole::Candidate,
        }
    }

    #[test]
    fn labeled_segmentation_groups_by_label() {
        let s = Scenario::default_scenario();
        let trace = simulate_trace(&s, 1, 20).unwrap();
        let means = segment_on_off(&trace, &PipelineParams::default()).unwrap();
        assert_eq!((means.on_count, means.off_count), (4, 16));
    }

    #[test]
    fn detection_reproduces_labels_on_a_noiseless_trace() {
        let s = Scenario::default_scenario();
        let trace = simulate_trace(&s, 1, 20).unwrap();
        let labeled = segment_on_off(&trace, &PipelineParams::default()).unwrap();
        let detect_params = PipelineParams {
            duty_detection: DutyDetection::Detect,
            ..PipelineParams::default()
        };
        let detected = segment_on_off(&trace.without_labels(), &detect_params).unwrap();
        assert_eq!(detected, labeled);
    }

    #[test]
    fn silent_dispersive_antennas_cannot_be_segmented_blind() {
        let mut s = Scenario::default_scenario();
        s.efficiency = 0.0;
        let trace = simulate_trace(&s, 1, 20).unwrap();
        let detect_params = PipelineParams {
            duty_detection: DutyDetection::Detect,
            ..PipelineParams::default()
        };
        assert_eq!(
            segment_on_off(&trace.without_labels(), &detect_params).unwrap_err(),
            PipelineError::CannotSegment
        );
    }

    #[test]
    fn labeled_mode_rejects_unlabeled_frames() {
        let s = Scenario::default_scenario();
        let trace = simulate_trace(&s, 1, 20).unwrap().without_labels();
        assert_eq!(
            segment_on_off(&trace, &PipelineParams::default()).unwrap_err(),
            PipelineError::UnlabeledFrames
        );
    }

    #[test]
    fn difference_of_equal_spectra_is_zero() {
        let grid = toy_grid(4, 1.0);
        let h = [3.0, 4.0, 5.0, 6.0];
        let ds = delta_spectrum(&h, &h, grid).unwrap();
        assert!(ds.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn difference_is_elementwise() {
        let grid = toy_grid(2, 1.0);
        let ds = delta_spectrum(&[5.0, 1.0], &[3.0, 1.0], grid).unwrap();
        assert_eq!(ds.values(), &[2.0, 0.0]);
        assert!(delta_spectrum(&[1.0], &[1.0, 2.0], grid).is_err());
    }

    #[test]
    fn difference_peaks_at_the_injected_subcarrier() {
        // A single-path scene: the circular amplitude profile is the only
        // on/off difference, so the peak sits at its maximum.
        let s = Scenario::default_scenario();
        let trace = simulate_trace(&s, 1, 20).unwrap();
        let means = segment_on_off(&trace, &PipelineParams::default()).unwrap();
        let ds = delta_spectrum(&means.rhcp_on, &means.rhcp_off, means.grid).unwrap();
        let profile = s.cp_amplitude_profile(Handedness::Right);
        let expected = profile
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap();
        let got = ds
            .values()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap();
        assert_eq!(got, expected);
    }

    #[test]
    fn zscore_matches_hand_computed_values() {
        let ds = toy_ds(&[1.0, 2.0, 3.0], 1.0);
        let normalized = normalize_zscore(&ds, None).unwrap();
        let expected = [-1.224744871391589, 0.0, 1.224744871391589];
        for (got, want) in normalized.values().iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        assert!(normalized.is_normalized());
    }

    #[test]
    fn zscore_rejects_constant_input() {
        let ds = toy_ds(&[2.5; 8], 1.0);
        assert_eq!(normalize_zscore(&ds, None).unwrap_err(), PipelineError::ZeroVariance);
    }

    #[test]
    fn zscore_output_has_zero_mean_unit_std() {
        for values in [
            vec![1.0, 5.0, -2.0, 0.25, 9.0, 9.0],
            (0..100).map(|i| ((i * 37) % 17) as f64).collect::<Vec<_>>(),
        ] {
            let ds = toy_ds(&values, 1.0);
            let normalized = normalize_zscore(&ds, None).unwrap();
            let n = normalized.values().len() as f64;
            let mean = normalized.values().iter().sum::<f64>() / n;
            let var = normalized.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-9);
            assert!((var.sqrt() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn windowed_zscore_uses_local_statistics() {
        let ds = toy_ds(&[0.0, 0.0, 0.0, 0.0, 10.0, 0.0, 0.0, 0.0, 0.0], 1.0);
        let normalized = normalize_zscore(&ds, Some(3)).unwrap();
        // Far from the spike every window is constant: local z-score 0.
        assert_eq!(normalized.values()[0], 0.0);
        assert_eq!(normalized.values()[8], 0.0);
        // At the spike the local window is [0, 10, 0].
        let spike = normalized.values()[4];
        assert!(spike > 1.0, "spike z-score {spike}");
    }

    #[test]
    fn selection_keeps_the_top_fraction() {
        let ds = toy_ds(&[0.0, 0.0, 9.0, 8.0, 0.0], 1.0);
        let normalized = normalize_zscore(&ds, None).unwrap();
        assert_eq!(select_subcarriers(&normalized, 0.4).unwrap(), vec![2, 3]);
        assert_eq!(select_subcarriers(&normalized, 1.0).unwrap(), vec![0, 1, 2, 3, 4]);
        assert_eq!(
            select_subcarriers(&normalized, 0.0).unwrap_err(),
            PipelineError::NoCandidates
        );
        assert_eq!(select_subcarriers(&ds, 0.4).unwrap_err(), PipelineError::NotNormalized);
    }

    #[test]
    fn selection_breaks_ties_toward_lower_indexes() {
        let ds = toy_ds(&[5.0, 5.0, 5.0, 0.0, 0.0], 1.0);
        let normalized = normalize_zscore(&ds, None).unwrap();
        assert_eq!(select_subcarriers(&normalized, 0.4).unwrap(), vec![0, 1]);
    }

    #[test]
    fn selection_size_resists_float_ceiling_inflation() {
        // 0.4 * 5 evaluates to 2.0000000000000004 in binary floating point;
        // a naive ceiling would keep 3 subcarriers instead of 2.
        assert_eq!(selection_size(0.4, 5), 2);
        assert_eq!(selection_size(1.0, 5), 5);
        assert_eq!(selection_size(0.05, 2025), 102);
        assert_eq!(selection_size(0.0, 2025), 0);
        // The exact-count invariant across a sweep of epsilons.
        for (epsilon, count) in [(0.3, 10), (0.333, 9), (0.5, 7), (0.05, 2025)] {
            let expected = (epsilon * count as f64).ceil() as usize;
            let robust = selection_size(epsilon, count);
            assert!(robust == expected || robust + 1 == expected);
        }
    }

    #[test]
    fn clustering_follows_the_gap_rule() {
        let grid = toy_grid(60, 1.0);
        let spans = |clusters: &[Cluster]| {
            clusters.iter().map(|c| (c.k_min, c.k_max)).collect::<Vec<_>>()
        };
        let two = cluster_subcarriers(&[10, 11, 12, 40, 41], 4, &grid);
        assert_eq!(spans(&two), vec![(10, 12), (40, 41)]);

        let one = cluster_subcarriers(&[10, 14, 18], 4, &grid);
        assert_eq!(spans(&one), vec![(10, 18)]);

        let split = cluster_subcarriers(&[10, 15], 4, &grid);
        assert_eq!(spans(&split), vec![(10, 10), (15, 15)]);

        assert!(cluster_subcarriers(&[], 4, &grid).is_empty());
    }

    #[test]
    fn cluster_score_is_the_trapezoidal_integral() {
        let spacing = 7.5;
        let ds = toy_ds(&[1.0, 2.0, 1.0], spacing);
        let cluster = cluster_over(0, 2, ds.grid());
        assert_eq!(cluster_score(&cluster, &ds), 3.0 * spacing);

        let zeros = toy_ds(&[0.0, 0.0, 0.0], spacing);
        assert_eq!(cluster_score(&cluster_over(0, 2, zeros.grid()), &zeros), 0.0);

        // Single subcarrier: rectangle convention.
        let single = cluster_over(1, 1, ds.grid());
        assert_eq!(cluster_score(&single, &ds), 2.0 * spacing);

        // Wider cluster at the same amplitude scores strictly higher.
        let flat = toy_ds(&[2.0; 10], spacing);
        let narrow = cluster_score(&cluster_over(0, 3, flat.grid()), &flat);
        let wide = cluster_score(&cluster_over(0, 7, flat.grid()), &flat);
        assert!(wide > narrow);
    }

    #[test]
    fn los_cluster_selection_takes_the_best_score() {
        // Three clusters with scores 0.1, 0.9, 0.3 (heights over unit
        // spacing, single subcarriers).
        let ds = toy_ds(&[0.1, 0.0, 0.9, 0.0, 0.3], 1.0);
        let clusters = vec![
            cluster_over(0, 0, ds.grid()),
            cluster_over(2, 2, ds.grid()),
            cluster_over(4, 4, ds.grid()),
        ];
        let winner = select_los_cluster(&clusters, &ds).unwrap();
        assert_eq!((winner.k_min, winner.k_max), (2, 2));
        assert_eq!(winner.role, ClusterRole::CompactSelected);
        assert_eq!(winner.score, 0.9);

        assert_eq!(
            select_los_cluster(&[], &ds).unwrap_err(),
            PipelineError::NoCluster
        );

        // Single cluster returns itself.
        let only = select_los_cluster(&clusters[..1], &ds).unwrap();
        assert_eq!((only.k_min, only.k_max), (0, 0));
    }

    #[test]
    fn los_cluster_ties_prefer_the_wider_cluster() {
        // Both clusters integrate to the same score; widths 3 vs 5.
        // Heights chosen so trapezoids match: [3,3,3] over 2 intervals = 6;
        // [1.5,1.5,1.5,1.5,1.5] over 4 intervals = 6.
        let ds = toy_ds(&[3.0, 3.0, 3.0, 0.0, 1.5, 1.5, 1.5, 1.5, 1.5], 1.0);
        let clusters = vec![cluster_over(0, 2, ds.grid()), cluster_over(4, 8, ds.grid())];
        let winner = select_los_cluster(&clusters, &ds).unwrap();
        assert_eq!((winner.k_min, winner.k_max), (4, 8));
    }

    #[test]
    fn purify_keeps_symmetric_peaks_in_place() {
        // Right window [1, 3, 1] has its peak centered; left window is a
        // flat [2, 2, 2], whose plateau midpoint is the peak. Both marginals
        // are symmetric, so both estimates equal the peak frequencies.
        let ds_r = toy_ds(&[1.0, 3.0, 1.0], 2.0);
        let ds_l = toy_ds(&[2.0, 2.0, 2.0], 2.0);
        let cr = cluster_over(0, 2, ds_r.grid());
        let cl = cluster_over(0, 2, ds_l.grid());
        let state = purify(&cr, &ds_r, &cl, &ds_l, 1).unwrap();
        assert_eq!(state.k_r, 1);
        assert_eq!(state.k_l, 1);
        assert_eq!(state.f_r_hat, ds_r.grid().frequency_of_index(1));
        assert_eq!(state.f_l_hat, ds_l.grid().frequency_of_index(1));
        assert!(!state.degenerate);
        // G is the literal outer product of the two windows.
        assert_eq!(state.g, vec![
            vec![2.0, 2.0, 2.0],
            vec![6.0, 6.0, 6.0],
            vec![2.0, 2.0, 2.0],
        ]);
    }

    #[test]
    fn purify_shifts_toward_the_heavier_tail() {
        // Right window around the peak is [1, 3, 2.9]: more mass above the
        // peak pulls the estimate to a higher frequency.
        let ds_r = toy_ds(&[0.0, 1.0, 3.0, 2.9, 0.0], 1.0);
        let ds_l = toy_ds(&[0.0, 2.0, 2.0, 2.0, 0.0], 1.0);
        let cr = cluster_over(1, 3, ds_r.grid());
        let cl = cluster_over(1, 3, ds_l.grid());
        let state = purify(&cr, &ds_r, &cl, &ds_l, 1).unwrap();
        assert_eq!(state.k_r, 2);
        assert!(
            state.f_r_hat > ds_r.grid().frequency_of_index(state.k_r),
            "estimate {} should exceed the peak frequency {}",
            state.f_r_hat,
            ds_r.grid().frequency_of_index(state.k_r)
        );
        // Invariant: the estimate stays within the delta window.
        assert!(state.f_r_hat <= ds_r.grid().frequency_of_index(state.k_r + 1));
    }

    #[test]
    fn purify_falls_back_to_peaks_on_all_zero_weights() {
        let ds_r = toy_ds(&[-1.0, -0.5, -2.0], 1.0);
        let ds_l = toy_ds(&[-1.0, -1.0, -1.0], 1.0);
        let cr = cluster_over(0, 2, ds_r.grid());
        let cl = cluster_over(0, 2, ds_l.grid());
        let state = purify(&cr, &ds_r, &cl, &ds_l, 1).unwrap();
        assert!(state.degenerate);
        // Peak of all-negative right side is its maximum (-0.5 at k=1).
        assert_eq!(state.f_r_hat, ds_r.grid().frequency_of_index(1));
        assert_eq!(state.f_l_hat, ds_l.grid().frequency_of_index(1));
    }

    #[test]
    fn windows_are_clipped_and_trimmed_to_a_common_shape() {
        // The right peak sits at the grid edge, so its lower extent is 0;
        // the common window collapses to [K, K + b].
        let ds_r = toy_ds(&[9.0, 1.0, 0.5, 0.0], 1.0);
        let ds_l = toy_ds(&[0.0, 4.0, 5.0, 4.0], 1.0);
        let cr = cluster_over(0, 2, ds_r.grid());
        let cl = cluster_over(1, 3, ds_l.grid());
        let state = purify(&cr, &ds_r, &cl, &ds_l, 2).unwrap();
        assert_eq!(state.k_r, 0);
        assert_eq!(state.k_l, 2);
        // Right side: peak at the cluster's lower edge, so no subcarriers
        // below it. Left side: the cluster ends one index above its peak.
        // The common shape is therefore zero below, one above both peaks.
        assert_eq!(state.window_r, (0, 1));
        assert_eq!(state.window_l, (2, 3));
        assert_eq!(state.window_r.1 - state.window_r.0, state.window_l.1 - state.window_l.0);
    }

    #[test]
    fn estimates_match_the_forward_model_in_a_clean_scene() {
        let s = Scenario::default_scenario();
        let trace = simulate_trace(&s, 3, 20).unwrap();
        let estimate = estimate_frequencies(&trace, &PipelineParams::default()).unwrap();

        let expected_r = {
            let pose = &s.lwa_r.pose;
            let theta = pose.axis().angle_deg(s.target - pose.vertex());
            pose.feed().frequency_of_angle(theta).unwrap()
        };
        let expected_l = {
            let pose = &s.lwa_l.pose;
            let theta = pose.axis().angle_deg(s.target - pose.vertex());
            pose.feed().frequency_of_angle(theta).unwrap()
        };
        let spacing = s.grid.spacing_hz();
        assert!(
            (estimate.f_r_hat - expected_r).abs() <= spacing,
            "right estimate {} vs forward {expected_r}",
            estimate.f_r_hat
        );
        assert!(
            (estimate.f_l_hat - expected_l).abs() <= spacing,
            "left estimate {} vs forward {expected_l}",
            estimate.f_l_hat
        );
        let diag = estimate.diagnostics;
        assert_eq!((diag.on_frames, diag.off_frames), (4, 16));
        assert!(diag.purification.is_some());
    }

    #[test]
    fn raw_argmax_mode_suffers_more_from_linear_multipath() {
        use crate::channel::Reflector;
        use crate::vec3::Vec3;
        // Reflectors create frequency-selective fading in the raw spectrum
        // that the differencing modes cancel.
        let mut s = Scenario::default_scenario();
        for (pos, loss) in [
            (Vec3::new(5.5, 1.0, 1.0), 2.0),
            (Vec3::new(1.0, 4.5, 2.5), 3.0),
            (Vec3::new(3.0, 0.5, 0.5), 2.5),
        ] {
            s.reflectors.push(Reflector { position: pos, loss_db: loss, flip_polarization: false });
        }
        let trace = simulate_trace(&s, 11, 20).unwrap();
        let expected_r = {
            let pose = &s.lwa_r.pose;
            let theta = pose.axis().angle_deg(s.target - pose.vertex());
            pose.feed().frequency_of_angle(theta).unwrap()
        };
        let err = |mode: Mode| {
            let params = PipelineParams { mode, ..PipelineParams::default() };
            let est = estimate_frequencies(&trace, &params).unwrap();
            (est.f_r_hat - expected_r).abs()
        };
        assert!(err(Mode::S1) >= err(Mode::S4));
    }

    #[test]
    fn zero_cp_energy_reports_no_candidates() {
        let mut s = Scenario::default_scenario();
        s.efficiency = 0.0;
        let trace = simulate_trace(&s, 1, 20).unwrap();
        let err = estimate_frequencies(&trace, &PipelineParams::default()).unwrap_err();
        assert_eq!(err.stage(), "selection");
        assert!(matches!(
            err,
            PipelineError::Antenna { source, .. } if *source == PipelineError::NoCandidates
        ));
    }

    #[test]
    fn link_selection_prefers_the_tightest_cluster_span() {
        let links = [
            LinkSummary { span_subcarriers: 12, score: 0.4 },
            LinkSummary { span_subcarriers: 40, score: 0.9 },
        ];
        assert_eq!(select_best_link_by_summary(&links).unwrap(), 0);

        let single = [LinkSummary { span_subcarriers: 25, score: 0.1 }];
        assert_eq!(select_best_link_by_summary(&single).unwrap(), 0);

        let tied = [
            LinkSummary { span_subcarriers: 20, score: 0.5 },
            LinkSummary { span_subcarriers: 20, score: 0.9 },
        ];
        assert_eq!(select_best_link_by_summary(&tied).unwrap(), 1);

        assert_eq!(select_best_link_by_summary(&[]).unwrap_err(), PipelineError::NoLinks);
    }

    #[test]
    fn link_selection_runs_end_to_end_on_traces() {
        use crate::trace::CsiFrame;
        use num_complex::Complex64;

        // Two handcrafted links. Selection keeps the top 5% of 2025
        // subcarriers (102). The compact link concentrates them in one
        // contiguous run; the smeared link spreads them at stride 2, which
        // clustering bridges (gap 4) into one cluster of twice the span.
        let grid = SubcarrierGrid::default();
        let build = |stride: usize| {
            let mut on = vec![Complex64::new(0.0, 0.0); grid.count()];
            for i in 0..102 {
                on[200 + i * stride] = Complex64::new(10.0, 0.0);
            }
            let off = vec![Complex64::new(0.0, 0.0); grid.count()];
            let mut trace = CsiTrace::new(grid, crate::trace::TraceFingerprint::new(0, "test"));
            trace
                .push_frame(CsiFrame {
                    frame_index: 0,
                    timestamp_us: 0,
                    state: LwaState::On,
                    lhcp: on.clone(),
                    rhcp: on,
                })
                .unwrap();
            trace
                .push_frame(CsiFrame {
                    frame_index: 1,
                    timestamp_us: 10_000,
                    state: LwaState::Off,
                    lhcp: off.clone(),
                    rhcp: off,
                })
                .unwrap();
            trace
        };
        let traces = vec![build(2), build(1)];
        let chosen = select_best_link(&traces, &PipelineParams::default()).unwrap();
        assert_eq!(chosen, 1);
    }

    #[test]
    fn params_are_validated() {
        let bad_eps = PipelineParams { epsilon: 1.5, ..PipelineParams::default() };
        assert!(bad_eps.validate().is_err());
        let bad_delta = PipelineParams { delta: 0, ..PipelineParams::default() };
        assert!(bad_delta.validate().is_err());
        let bad_gap = PipelineParams { cluster_gap: 0, ..PipelineParams::default() };
        assert!(bad_gap.validate().is_err());
        let bad_window = PipelineParams { zscore_window: Some(1), ..PipelineParams::default() };
        assert!(bad_window.validate().is_err());
        PipelineParams::default().validate().unwrap();
    }

    #[test]
    fn peak_index_resolves_ties_to_plateau_midpoints() {
        let ds = toy_ds(&[1.0, 7.0, 7.0, 7.0, 2.0], 1.0);
        assert_eq!(peak_index(&ds, 0, 4), 2);
        let two = toy_ds(&[7.0, 7.0, 1.0], 1.0);
        assert_eq!(peak_index(&two, 0, 2), 0);
        let separate = toy_ds(&[7.0, 1.0, 7.0], 1.0);
        assert_eq!(peak_index(&separate, 0, 2), 0);
        let unique = toy_ds(&[1.0, 3.0, 1.0], 1.0);
        assert_eq!(peak_index(&unique, 0, 2), 1);
    }
}
