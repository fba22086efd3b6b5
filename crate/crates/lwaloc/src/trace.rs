//! CSI traces: the subcarrier grid, per-frame spectra for the two co-located
//! circularly polarized receive antennas, and a line-oriented on-disk format.
//!
//! The format is deliberately plain text so captures can be inspected and
//! diffed. Floats are printed with Rust's shortest round-trip formatting, so
//! writing a trace, reading it back and writing it again produces the same
//! bytes — batch outputs stay reproducible at the byte level.
//!
//! ```text
//! # csi-trace v1
//! # grid count=2025 index_min=-1012 index_max=1012 center_freq_hz=5250000000 spacing_hz=79051.38339920949
//! # fingerprint seed=42 config=3f2a...
//! frame_index,timestamp_us,lwa_state,antenna,subcarrier_index,real,imag
//! 0,0,on,lhcp,-1012,0.00125,-0.0034
//! ```
//!
//! Rows are canonical: frames in ascending order, the `lhcp` block before
//! the `rhcp` block within a frame, subcarrier indices ascending within a
//! block. The reader enforces this ordering instead of sorting, so any two
//! byte-identical traces are identical captures and vice versa.

use crate::polarization::Handedness;
use num_complex::Complex64;
use std::fmt::Write as _;
use std::io::{self, BufRead, Write};
use std::path::Path;
use thiserror::Error;

/// Default band edges shared with the dispersion defaults.
const DEFAULT_GRID_F_MIN_HZ: f64 = 5.17e9;
const DEFAULT_GRID_F_MAX_HZ: f64 = 5.33e9;
/// Default number of subcarriers spanning the band (indices -1012 ..= 1012).
pub const DEFAULT_SUBCARRIER_COUNT: usize = 2025;

/// Hard caps so a corrupted or adversarial file cannot balloon memory.
const MAX_GRID_COUNT: usize = 1 << 20;
const MAX_FRAMES: u64 = 1 << 20;

const FILE_VERSION_LINE: &str = "# csi-trace v1";
const COLUMN_HEADER: &str = "frame_index,timestamp_us,lwa_state,antenna,subcarrier_index,real,imag";

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("grid must have at least 2 subcarriers (got {0})")]
    GridTooSmall(usize),
    #[error("grid count {0} exceeds the supported maximum {MAX_GRID_COUNT}")]
    GridTooLarge(usize),
    #[error("grid frequencies must be finite with spacing > 0")]
    InvalidGrid,
    #[error("frame {frame_index} has {got} samples for {antenna}; the grid holds {expected}")]
    FrameLengthMismatch { frame_index: u64, antenna: Handedness, got: usize, expected: usize },
    #[error("frame indices must be strictly increasing (frame {frame_index} after {previous})")]
    NonMonotoneFrames { frame_index: u64, previous: u64 },
    #[error("trace holds more than {MAX_FRAMES} frames")]
    TooManyFrames,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("I/O error: {0}")]
    Io(String),
}

impl From<io::Error> for TraceError {
    fn from(e: io::Error) -> Self {
        TraceError::Io(e.to_string())
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> TraceError {
    TraceError::Parse { line, message: message.into() }
}

/// Uniform frequency grid indexed by signed subcarrier numbers around a
/// center frequency, e.g. -1012 ..= 1012 across 5.17 - 5.33 GHz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubcarrierGrid {
    index_min: i32,
    index_max: i32,
    center_freq_hz: f64,
    spacing_hz: f64,
}

impl SubcarrierGrid {
    /// Grid of `count` subcarriers whose outermost indices land exactly on
    /// `f_min_hz` and `f_max_hz` (up to float rounding of the spacing).
    pub fn spanning(f_min_hz: f64, f_max_hz: f64, count: usize) -> Result<Self, TraceError> {
        if count < 2 {
            return Err(TraceError::GridTooSmall(count));
        }
        if count > MAX_GRID_COUNT {
            return Err(TraceError::GridTooLarge(count));
        }
        if !f_min_hz.is_finite() || !f_max_hz.is_finite() || f_min_hz >= f_max_hz {
            return Err(TraceError::InvalidGrid);
        }
        let spacing = (f_max_hz - f_min_hz) / (count - 1) as f64;
        let index_min = -(((count - 1) / 2) as i32);
        let index_max = index_min + (count as i32 - 1);
        let center = f_min_hz - (index_min as f64) * spacing;
        Ok(SubcarrierGrid {
            index_min,
            index_max,
            center_freq_hz: center,
            spacing_hz: spacing,
        })
    }

    pub fn from_parts(
        index_min: i32,
        index_max: i32,
        center_freq_hz: f64,
        spacing_hz: f64,
    ) -> Result<Self, TraceError> {
        if index_max < index_min {
            return Err(TraceError::InvalidGrid);
        }
        let count = (index_max as i64 - index_min as i64 + 1) as usize;
        if count < 2 {
            return Err(TraceError::GridTooSmall(count));
        }
        if count > MAX_GRID_COUNT {
            return Err(TraceError::GridTooLarge(count));
        }
        if !center_freq_hz.is_finite() || !spacing_hz.is_finite() || spacing_hz <= 0.0 {
            return Err(TraceError::InvalidGrid);
        }
        Ok(SubcarrierGrid { index_min, index_max, center_freq_hz, spacing_hz })
    }

    pub fn count(&self) -> usize {
        (self.index_max as i64 - self.index_min as i64 + 1) as usize
    }

    pub fn index_min(&self) -> i32 {
        self.index_min
    }

    pub fn index_max(&self) -> i32 {
        self.index_max
    }

    pub fn center_freq_hz(&self) -> f64 {
        self.center_freq_hz
    }

    pub fn spacing_hz(&self) -> f64 {
        self.spacing_hz
    }

    /// Frequency of subcarrier `k` (no range check; use `position_of_index`
    /// to validate membership first when `k` is untrusted).
    pub fn frequency_of_index(&self, k: i32) -> f64 {
        self.center_freq_hz + k as f64 * self.spacing_hz
    }

    /// Array position of subcarrier `k`, if it is on the grid.
    pub fn position_of_index(&self, k: i32) -> Option<usize> {
        (self.index_min..=self.index_max)
            .contains(&k)
            .then(|| (k - self.index_min) as usize)
    }

    pub fn index_at_position(&self, position: usize) -> i32 {
        self.index_min + position as i32
    }

    pub fn indices(&self) -> impl Iterator<Item = i32> {
        self.index_min..=self.index_max
    }

    pub fn frequencies(&self) -> impl Iterator<Item = f64> + '_ {
        self.indices().map(|k| self.frequency_of_index(k))
    }
}

impl Default for SubcarrierGrid {
    fn default() -> Self {
        SubcarrierGrid::spanning(DEFAULT_GRID_F_MIN_HZ, DEFAULT_GRID_F_MAX_HZ, DEFAULT_SUBCARRIER_COUNT)
            .expect("default grid parameters are valid")
    }
}

/// Duty-cycle state of the dispersive antenna while a frame was captured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LwaState {
    On,
    Off,
    /// Label withheld (blind captures; segmentation has to recover it).
    Unknown,
}

impl LwaState {
    fn as_str(self) -> &'static str {
        match self {
            LwaState::On => "on",
            LwaState::Off => "off",
            LwaState::Unknown => "unknown",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "on" => Some(LwaState::On),
            "off" => Some(LwaState::Off),
            "unknown" => Some(LwaState::Unknown),
            _ => None,
        }
    }
}

/// One captured frame: complex spectra on the full grid for both receive
/// antennas.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiFrame {
    pub frame_index: u64,
    pub timestamp_us: u64,
    pub state: LwaState,
    pub lhcp: Vec<Complex64>,
    pub rhcp: Vec<Complex64>,
}

impl CsiFrame {
    pub fn spectrum(&self, antenna: Handedness) -> &[Complex64] {
        match antenna {
            Handedness::Left => &self.lhcp,
            Handedness::Right => &self.rhcp,
        }
    }
}

/// Provenance stamp carried inside a trace file: the RNG seed it was
/// generated from and a digest of the scenario that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceFingerprint {
    pub seed: u64,
    pub config_digest: String,
}

impl TraceFingerprint {
    pub fn new(seed: u64, config_digest: impl Into<String>) -> Self {
        TraceFingerprint { seed, config_digest: config_digest.into() }
    }
}

/// A full capture: grid, provenance, frames in ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiTrace {
    pub grid: SubcarrierGrid,
    pub fingerprint: TraceFingerprint,
    pub frames: Vec<CsiFrame>,
}

impl CsiTrace {
    pub fn new(grid: SubcarrierGrid, fingerprint: TraceFingerprint) -> Self {
        CsiTrace { grid, fingerprint, frames: Vec::new() }
    }

    /// Append a frame, enforcing the invariants the writer relies on.
    pub fn push_frame(&mut self, frame: CsiFrame) -> Result<(), TraceError> {
        let expected = self.grid.count();
        for (antenna, len) in
            [(Handedness::Left, frame.lhcp.len()), (Handedness::Right, frame.rhcp.len())]
        {
            if len != expected {
                return Err(TraceError::FrameLengthMismatch {
                    frame_index: frame.frame_index,
                    antenna,
                    got: len,
                    expected,
                });
            }
        }
        if let Some(last) = self.frames.last() {
            if frame.frame_index <= last.frame_index {
                return Err(TraceError::NonMonotoneFrames {
                    frame_index: frame.frame_index,
                    previous: last.frame_index,
                });
            }
        }
        if self.frames.len() as u64 >= MAX_FRAMES {
            return Err(TraceError::TooManyFrames);
        }
        self.frames.push(frame);
        Ok(())
    }

    /// Copy of the trace with duty-cycle labels withheld.
    pub fn without_labels(&self) -> CsiTrace {
        let mut copy = self.clone();
        for frame in &mut copy.frames {
            frame.state = LwaState::Unknown;
        }
        copy
    }
}

/// Serialize a trace in the canonical text format.
pub fn write_trace<W: Write>(trace: &CsiTrace, mut w: W) -> Result<(), TraceError> {
    let grid = &trace.grid;
    let mut buf = String::new();
    buf.push_str(FILE_VERSION_LINE);
    buf.push('\n');
    writeln!(
        buf,
        "# grid count={} index_min={} index_max={} center_freq_hz={} spacing_hz={}",
        grid.count(),
        grid.index_min,
        grid.index_max,
        grid.center_freq_hz,
        grid.spacing_hz
    )
    .expect("writing to String cannot fail");
    writeln!(
        buf,
        "# fingerprint seed={} config={}",
        trace.fingerprint.seed, trace.fingerprint.config_digest
    )
    .expect("writing to String cannot fail");
    buf.push_str(COLUMN_HEADER);
    buf.push('\n');
    w.write_all(buf.as_bytes())?;

    for frame in &trace.frames {
        let mut block = String::new();
        for (antenna, spectrum) in [("lhcp", &frame.lhcp), ("rhcp", &frame.rhcp)] {
            for (pos, value) in spectrum.iter().enumerate() {
                writeln!(
                    block,
                    "{},{},{},{},{},{},{}",
                    frame.frame_index,
                    frame.timestamp_us,
                    frame.state.as_str(),
                    antenna,
                    grid.index_at_position(pos),
                    value.re,
                    value.im
                )
                .expect("writing to String cannot fail");
            }
        }
        w.write_all(block.as_bytes())?;
    }
    Ok(())
}

pub fn write_trace_to_path(trace: &CsiTrace, path: &Path) -> Result<(), TraceError> {
    let file = std::fs::File::create(path)?;
    let mut w = io::BufWriter::new(file);
    write_trace(trace, &mut w)?;
    w.flush()?;
    Ok(())
}

fn header_fields<'a>(
    line: &'a str,
    line_no: usize,
    prefix: &str,
    keys: &[&str],
) -> Result<Vec<&'a str>, TraceError> {
    let rest = line
        .strip_prefix(prefix)
        .ok_or_else(|| parse_err(line_no, format!("expected a `{prefix}...` header line")))?;
    let tokens: Vec<&str> = rest.split(' ').filter(|t| !t.is_empty()).collect();
    if tokens.len() != keys.len() {
        return Err(parse_err(
            line_no,
            format!("expected {} `key=value` fields, found {}", keys.len(), tokens.len()),
        ));
    }
    let mut values = Vec::with_capacity(keys.len());
    for (token, key) in tokens.iter().zip(keys) {
        let value = token
            .strip_prefix(key)
            .and_then(|v| v.strip_prefix('='))
            .ok_or_else(|| parse_err(line_no, format!("expected field `{key}=...`, found `{token}`")))?;
        values.push(value);
    }
    Ok(values)
}

fn parse_number<T: std::str::FromStr>(
    value: &str,
    line_no: usize,
    what: &str,
) -> Result<T, TraceError> {
    value
        .parse::<T>()
        .map_err(|_| parse_err(line_no, format!("could not parse {what} from `{value}`")))
}

/// Parse a trace, enforcing the canonical row order and rejecting
/// non-finite samples. Errors carry 1-based line numbers.
pub fn read_trace<R: BufRead>(reader: R) -> Result<CsiTrace, TraceError> {
    let mut lines = reader.lines();
    let mut line_no = 0usize;
    let next_line = |lines: &mut io::Lines<R>, line_no: &mut usize| -> Result<String, TraceError> {
        *line_no += 1;
        match lines.next() {
            Some(line) => Ok(line?),
            None => Err(parse_err(*line_no, "unexpected end of file")),
        }
    };

    let version = next_line(&mut lines, &mut line_no)?;
    if version != FILE_VERSION_LINE {
        return Err(parse_err(line_no, format!("expected `{FILE_VERSION_LINE}`")));
    }

    let grid_line = next_line(&mut lines, &mut line_no)?;
    let grid_values = header_fields(
        &grid_line,
        line_no,
        "# grid ",
        &["count", "index_min", "index_max", "center_freq_hz", "spacing_hz"],
    )?;
    let count: usize = parse_number(grid_values[0], line_no, "grid count")?;
    let index_min: i32 = parse_number(grid_values[1], line_no, "index_min")?;
    let index_max: i32 = parse_number(grid_values[2], line_no, "index_max")?;
    let center: f64 = parse_number(grid_values[3], line_no, "center_freq_hz")?;
    let spacing: f64 = parse_number(grid_values[4], line_no, "spacing_hz")?;
    let grid = SubcarrierGrid::from_parts(index_min, index_max, center, spacing)
        .map_err(|e| parse_err(line_no, e.to_string()))?;
    if grid.count() != count {
        return Err(parse_err(
            line_no,
            format!("count={} does not match index range {}..={}", count, index_min, index_max),
        ));
    }

    let fp_line = next_line(&mut lines, &mut line_no)?;
    let fp_values = header_fields(&fp_line, line_no, "# fingerprint ", &["seed", "config"])?;
    let seed: u64 = parse_number(fp_values[0], line_no, "seed")?;
    let digest = fp_values[1];
    if digest.is_empty() || digest.len() > 128 || !digest.bytes().all(|b| b.is_ascii_alphanumeric())
    {
        return Err(parse_err(line_no, "config digest must be a short alphanumeric token"));
    }
    let fingerprint = TraceFingerprint::new(seed, digest);

    let header = next_line(&mut lines, &mut line_no)?;
    if header != COLUMN_HEADER {
        return Err(parse_err(line_no, format!("expected column header `{COLUMN_HEADER}`")));
    }

    let mut trace = CsiTrace::new(grid, fingerprint);
    // Canonical-order cursor within the current frame.
    let mut current: Option<CsiFrame> = None;
    let mut expect_antenna = Handedness::Left;
    let mut expect_k = grid.index_min();

    let finish_frame = |trace: &mut CsiTrace, frame: CsiFrame, line_no: usize| {
        trace.push_frame(frame).map_err(|e| parse_err(line_no, e.to_string()))
    };

    for line in lines {
        line_no += 1;
        let line = line?;
        if line.is_empty() {
            return Err(parse_err(line_no, "blank lines are not allowed in the data section"));
        }
        let mut fields = [""; 7];
        let mut n = 0;
        for part in line.split(',') {
            if n == 7 {
                return Err(parse_err(line_no, "expected 7 comma-separated fields"));
            }
            fields[n] = part;
            n += 1;
        }
        if n != 7 {
            return Err(parse_err(line_no, "expected 7 comma-separated fields"));
        }
        let frame_index: u64 = parse_number(fields[0], line_no, "frame_index")?;
        let timestamp_us: u64 = parse_number(fields[1], line_no, "timestamp_us")?;
        let state = LwaState::parse(fields[2])
            .ok_or_else(|| parse_err(line_no, format!("unknown lwa_state `{}`", fields[2])))?;
        let antenna = match fields[3] {
            "lhcp" => Handedness::Left,
            "rhcp" => Handedness::Right,
            other => return Err(parse_err(line_no, format!("unknown antenna `{other}`"))),
        };
        let k: i32 = parse_number(fields[4], line_no, "subcarrier_index")?;
        let re: f64 = parse_number(fields[5], line_no, "real")?;
        let im: f64 = parse_number(fields[6], line_no, "imag")?;
        if !re.is_finite() || !im.is_finite() {
            return Err(parse_err(line_no, "samples must be finite"));
        }

        match &mut current {
            Some(frame) if frame.frame_index == frame_index => {
                if frame.timestamp_us != timestamp_us {
                    return Err(parse_err(line_no, "timestamp changes within a frame"));
                }
                if frame.state != state {
                    return Err(parse_err(line_no, "lwa_state changes within a frame"));
                }
            }
            _ => {
                // Row starts a new frame; the previous one must be complete.
                if expect_antenna != Handedness::Left || expect_k != grid.index_min() {
                    return Err(parse_err(
                        line_no,
                        "new frame starts before the previous frame is complete",
                    ));
                }
                if let Some(done) = current.take() {
                    finish_frame(&mut trace, done, line_no)?;
                }
                current = Some(CsiFrame {
                    frame_index,
                    timestamp_us,
                    state,
                    lhcp: Vec::with_capacity(grid.count()),
                    rhcp: Vec::with_capacity(grid.count()),
                });
            }
        }

        if antenna != expect_antenna {
            return Err(parse_err(
                line_no,
                format!(
                    "canonical order violated: expected antenna `{}`, found `{}`",
                    match expect_antenna {
                        Handedness::Left => "lhcp",
                        Handedness::Right => "rhcp",
                    },
                    fields[3]
                ),
            ));
        }
        if k != expect_k {
            return Err(parse_err(
                line_no,
                format!("canonical order violated: expected subcarrier_index {expect_k}, found {k}"),
            ));
        }

        let frame = current.as_mut().expect("frame was just ensured");
        match antenna {
            Handedness::Left => frame.lhcp.push(Complex64::new(re, im)),
            Handedness::Right => frame.rhcp.push(Complex64::new(re, im)),
        }

        // Advance the cursor: k within the block, then the antenna block.
        if expect_k == grid.index_max() {
            expect_k = grid.index_min();
            expect_antenna = match expect_antenna {
                Handedness::Left => Handedness::Right,
                Handedness::Right => Handedness::Left,
            };
        } else {
            expect_k += 1;
        }
    }

    if expect_antenna != Handedness::Left || expect_k != grid.index_min() {
        return Err(parse_err(line_no, "file ends mid-frame"));
    }
    if let Some(done) = current.take() {
        finish_frame(&mut trace, done, line_no)?;
    }
    Ok(trace)
}

pub fn read_trace_from_path(path: &Path) -> Result<CsiTrace, TraceError> {
    let file = std::fs::File::open(path)?;
    read_trace(io::BufReader::new(file))
}
