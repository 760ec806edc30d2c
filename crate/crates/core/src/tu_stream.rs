//! Synthetic process data: keystroke and fixation events per TU, and
//! per-TU summary tables.
//!
//! s-mode TUs read and type concurrently after a short pause. i-mode TUs
//! open with a long pause that grows with effort, then read (one source
//! fixation per fast tick, one look at the target) and only then type.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Mode, SessionTrace, TIMED_EFFORT_CAP};
use crate::belief::{Nats, RngStream};
use crate::field::PathClass;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StreamError {
    #[error("timing.{field}: {reason}")]
    InvalidTiming { field: &'static str, reason: String },
    #[error("events cover {events} TUs but the trace has {records}")]
    Mismatch { events: usize, records: usize },
    #[error(transparent)]
    Table(#[from] TableError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TableError {
    #[error("i/o error: {0}")]
    Io(String),
    #[error("line 1: expected header `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error("line {line}: expected {expected} columns, found {found}")]
    ColumnCount {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: column `{column}` cannot hold `{value}`")]
    Field {
        line: u64,
        column: &'static str,
        value: String,
    },
    #[error("line {line}: {reason}")]
    Malformed { line: u64, reason: String },
}

/// Mapping from simulated ticks and nats to milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingModel {
    /// Mean inter-keystroke interval. s-mode pauses last two of these.
    pub smode_iki_ms: f64,
    pub imode_pause_base_ms: f64,
    pub ms_per_nat: f64,
    pub fixation_ms: f64,
    pub jitter_fraction: f64,
    pub keystrokes_per_target: usize,
}

impl Default for TimingModel {
    fn default() -> Self {
        Self {
            smode_iki_ms: 150.0,
            imode_pause_base_ms: 1200.0,
            ms_per_nat: 400.0,
            fixation_ms: 250.0,
            jitter_fraction: 0.1,
            keystrokes_per_target: 6,
        }
    }
}

impl TimingModel {
    pub fn validate(&self) -> Result<(), StreamError> {
        let positive = [
            ("smode_iki_ms", self.smode_iki_ms),
            ("imode_pause_base_ms", self.imode_pause_base_ms),
            ("ms_per_nat", self.ms_per_nat),
            ("fixation_ms", self.fixation_ms),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(StreamError::InvalidTiming {
                    field,
                    reason: format!("{v} is not a positive number"),
                });
            }
        }
        if !(0.0..1.0).contains(&self.jitter_fraction) {
            return Err(StreamError::InvalidTiming {
                field: "jitter_fraction",
                reason: "must be in [0, 1)".into(),
            });
        }
        if self.keystrokes_per_target == 0 {
            return Err(StreamError::InvalidTiming {
                field: "keystrokes_per_target",
                reason: "must be >= 1".into(),
            });
        }
        Ok(())
    }

    /// Symmetric jitter factor in `[1 - j, 1 + j)`.
    fn wobble(&self, rng: &mut RngStream) -> f64 {
        1.0 + self.jitter_fraction * (2.0 * rng.uniform() - 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    FixationSource,
    FixationTarget,
    Keystroke,
    PauseMarker,
}

impl EventKind {
    const ALL: [EventKind; 4] = [
        EventKind::FixationSource,
        EventKind::FixationTarget,
        EventKind::Keystroke,
        EventKind::PauseMarker,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::FixationSource => "fixation_source",
            EventKind::FixationTarget => "fixation_target",
            EventKind::Keystroke => "keystroke",
            EventKind::PauseMarker => "pause_marker",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EventKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown event kind `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TuEvent {
    pub timestamp_ms: u64,
    pub kind: EventKind,
    pub tu_index: usize,
    /// Source token for fixations on the source and pause markers,
    /// target index otherwise.
    pub payload: usize,
}

/// Renders every TU of `trace` as events on one clock starting at zero.
///
/// Each TU draws its jitter from `rng.derive(tu_index)`.
pub fn emit_events(
    trace: &SessionTrace,
    timing: &TimingModel,
    rng: &RngStream,
) -> Result<Vec<TuEvent>, StreamError> {
    timing.validate()?;
    let mut events = Vec::new();
    let mut clock = 0.0_f64;
    for r in &trace.records {
        let mut rng = rng.derive(r.index as u64);
        let push = |events: &mut Vec<TuEvent>, at: f64, kind, payload| {
            events.push(TuEvent {
                timestamp_ms: at.round() as u64,
                kind,
                tu_index: r.index,
                payload,
            })
        };
        push(&mut events, clock, EventKind::PauseMarker, r.token);
        match r.mode {
            Mode::Smode => {
                clock += 2.0 * timing.smode_iki_ms * timing.wobble(&mut rng);
                for k in 0..timing.keystrokes_per_target {
                    // Reading runs alongside typing.
                    if k % 3 == 0 {
                        push(&mut events, clock, EventKind::FixationSource, r.token);
                    }
                    push(&mut events, clock, EventKind::Keystroke, r.action);
                    clock += timing.smode_iki_ms * timing.wobble(&mut rng);
                }
            }
            Mode::Imode => {
                let effort = r.effort().0.min(TIMED_EFFORT_CAP);
                let stretch = 1.0 + timing.jitter_fraction * rng.uniform();
                clock += (timing.imode_pause_base_ms + timing.ms_per_nat * effort) * stretch;
                for _ in 0..r.fast_ticks {
                    push(&mut events, clock, EventKind::FixationSource, r.token);
                    clock += timing.fixation_ms * timing.wobble(&mut rng);
                }
                push(&mut events, clock, EventKind::FixationTarget, r.action);
                clock += timing.fixation_ms * timing.wobble(&mut rng);
                for _ in 0..timing.keystrokes_per_target {
                    push(&mut events, clock, EventKind::Keystroke, r.action);
                    clock += timing.smode_iki_ms * timing.wobble(&mut rng);
                }
            }
        }
    }
    Ok(events)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuSummaryRow {
    pub session_id: String,
    pub tu_index: usize,
    pub token: usize,
    pub target: usize,
    pub mode: Mode,
    pub dur_ms: u64,
    pub pause_before_ms: u64,
    pub fixation_count: usize,
    pub effort_e1_nats: Nats,
    pub effort_e2_nats: Nats,
    pub effect: f64,
    pub f_nats: Nats,
    pub class: PathClass,
}

/// One summary row per TU, joining event timing with the trace.
pub fn summarize_tus(
    events: &[TuEvent],
    trace: &SessionTrace,
    session_id: &str,
    class: PathClass,
) -> Result<Vec<TuSummaryRow>, StreamError> {
    let mut groups: Vec<&[TuEvent]> = Vec::new();
    let mut start = 0;
    for i in 1..=events.len() {
        if i == events.len() || events[i].tu_index != events[start].tu_index {
            groups.push(&events[start..i]);
            start = i;
        }
    }
    let mismatch = StreamError::Mismatch {
        events: groups.len(),
        records: trace.records.len(),
    };
    if groups.len() != trace.records.len() {
        return Err(mismatch);
    }
    groups
        .into_iter()
        .zip(&trace.records)
        .map(|(group, r)| {
            if group[0].tu_index != r.index {
                return Err(mismatch.clone());
            }
            let first = group[0].timestamp_ms;
            let last = group[group.len() - 1].timestamp_ms;
            let pause_before = group
                .iter()
                .find(|e| e.kind != EventKind::PauseMarker)
                .map_or(0, |e| e.timestamp_ms - first);
            Ok(TuSummaryRow {
                session_id: session_id.to_string(),
                tu_index: r.index,
                token: r.token,
                target: r.action,
                mode: r.mode,
                dur_ms: last - first,
                pause_before_ms: pause_before,
                fixation_count: group
                    .iter()
                    .filter(|e| {
                        matches!(e.kind, EventKind::FixationSource | EventKind::FixationTarget)
                    })
                    .count(),
                effort_e1_nats: r.effort_e1,
                effort_e2_nats: r.effort_e2,
                effect: r.effect,
                f_nats: r.f,
                class,
            })
        })
        .collect()
}

pub const SUMMARY_HEADER: [&str; 13] = [
    "session_id",
    "tu_index",
    "token",
    "target",
    "mode",
    "dur_ms",
    "pause_before_ms",
    "fixation_count",
    "effort_e1_nats",
    "effort_e2_nats",
    "effect",
    "f_nats",
    "class",
];

pub const EVENT_HEADER: [&str; 4] = ["timestamp_ms", "kind", "tu_index", "payload"];

/// Writes `header` then `rows` as comma-separated text.
pub fn write_csv<W: Write>(
    destination: W,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<(), TableError> {
    let io = |e: csv::Error| TableError::Io(e.to_string());
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(destination);
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| TableError::Io(e.to_string()))
}

/// Reads comma-separated text whose first line must equal `header`.
/// Returns each data record with its 1-based line number.
pub fn read_csv<R: Read>(
    source: R,
    header: &[&str],
) -> Result<Vec<(u64, csv::StringRecord)>, TableError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(source);
    let mut out = Vec::new();
    let mut seen_header = false;
    for result in reader.records() {
        let record = result.map_err(|e| TableError::Malformed {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if !seen_header {
            if record.iter().ne(header.iter().copied()) {
                return Err(TableError::Header {
                    expected: header.join(","),
                    found: record.iter().collect::<Vec<_>>().join(","),
                });
            }
            seen_header = true;
            continue;
        }
        if record.len() != header.len() {
            return Err(TableError::ColumnCount {
                line,
                expected: header.len(),
                found: record.len(),
            });
        }
        out.push((line, record));
    }
    if !seen_header {
        return Err(TableError::Header {
            expected: header.join(","),
            found: String::new(),
        });
    }
    Ok(out)
}

fn field<T: FromStr>(
    record: &csv::StringRecord,
    line: u64,
    index: usize,
    column: &'static str,
) -> Result<T, TableError> {
    let raw = &record[index];
    raw.parse().map_err(|_| TableError::Field {
        line,
        column,
        value: raw.to_string(),
    })
}

fn parse_mode(s: &str) -> Option<Mode> {
    match s {
        "smode" => Some(Mode::Smode),
        "imode" => Some(Mode::Imode),
        _ => None,
    }
}

impl TuSummaryRow {
    pub fn to_record(&self) -> Vec<String> {
        vec![
            self.session_id.clone(),
            self.tu_index.to_string(),
            self.token.to_string(),
            self.target.to_string(),
            self.mode.as_str().to_string(),
            self.dur_ms.to_string(),
            self.pause_before_ms.to_string(),
            self.fixation_count.to_string(),
            self.effort_e1_nats.0.to_string(),
            self.effort_e2_nats.0.to_string(),
            self.effect.to_string(),
            self.f_nats.0.to_string(),
            self.class.to_string(),
        ]
    }

    fn from_record(line: u64, r: &csv::StringRecord) -> Result<Self, TableError> {
        let h = &SUMMARY_HEADER;
        Ok(Self {
            session_id: r[0].to_string(),
            tu_index: field(r, line, 1, h[1])?,
            token: field(r, line, 2, h[2])?,
            target: field(r, line, 3, h[3])?,
            mode: parse_mode(&r[4]).ok_or_else(|| TableError::Field {
                line,
                column: h[4],
                value: r[4].to_string(),
            })?,
            dur_ms: field(r, line, 5, h[5])?,
            pause_before_ms: field(r, line, 6, h[6])?,
            fixation_count: field(r, line, 7, h[7])?,
            effort_e1_nats: Nats(field(r, line, 8, h[8])?),
            effort_e2_nats: Nats(field(r, line, 9, h[9])?),
            effect: field(r, line, 10, h[10])?,
            f_nats: Nats(field(r, line, 11, h[11])?),
            class: field(r, line, 12, h[12])?,
        })
    }
}

pub fn write_table<W: Write>(rows: &[TuSummaryRow], destination: W) -> Result<(), TableError> {
    write_csv(destination, &SUMMARY_HEADER, rows.iter().map(|r| r.to_record()))
}

pub fn read_table<R: Read>(source: R) -> Result<Vec<TuSummaryRow>, TableError> {
    read_csv(source, &SUMMARY_HEADER)?
        .iter()
        .map(|(line, r)| TuSummaryRow::from_record(*line, r))
        .collect()
}

pub fn write_events<W: Write>(events: &[TuEvent], destination: W) -> Result<(), TableError> {
    write_csv(
        destination,
        &EVENT_HEADER,
        events.iter().map(|e| {
            vec![
                e.timestamp_ms.to_string(),
                e.kind.to_string(),
                e.tu_index.to_string(),
                e.payload.to_string(),
            ]
        }),
    )
}

pub fn read_events<R: Read>(source: R) -> Result<Vec<TuEvent>, TableError> {
    let h = &EVENT_HEADER;
    read_csv(source, h)?
        .iter()
        .map(|(line, r)| {
            Ok(TuEvent {
                timestamp_ms: field(r, *line, 0, h[0])?,
                kind: field(r, *line, 1, h[1])?,
                tu_index: field(r, *line, 2, h[2])?,
                payload: field(r, *line, 3, h[3])?,
            })
        })
        .collect()
}
