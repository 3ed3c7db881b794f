//! Sample ingestion: NDJSON parsing, validation, per-student ring buffers and
//! paced file replay.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Per-channel ring capacity. At least twice the 50-sample feature window.
pub const DEFAULT_RING_CAPACITY: usize = 128;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IngestError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("schema error on field `{field}`: {reason}")]
    Schema { field: &'static str, reason: String },
    #[error("range error on field `{field}`: {value} outside ({min}, {max}) for channel {channel}")]
    Range {
        field: &'static str,
        channel: Channel,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("ordering error on field `ts_ms`: {ts_ms} precedes {last_ts_ms} for {student_id}/{channel}")]
    Ordering {
        student_id: String,
        channel: Channel,
        ts_ms: i64,
        last_ts_ms: i64,
    },
    #[error("session error: unknown session `{0}`")]
    UnknownSession(String),
    #[error("io error: {0}")]
    Io(String),
}

impl IngestError {
    /// Name of the record field the error refers to, if any.
    pub fn field(&self) -> Option<&'static str> {
        match self {
            IngestError::Schema { field, .. } | IngestError::Range { field, .. } => Some(field),
            IngestError::Ordering { .. } => Some("ts_ms"),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    /// Heart rate, beats/min.
    Hr,
    /// Inter-beat interval, ms.
    Rr,
    /// Skin conductance, microsiemens.
    Eda,
    /// Skin temperature, degrees Celsius.
    Temp,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::Hr, Channel::Rr, Channel::Eda, Channel::Temp];

    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Hr => "hr",
            Channel::Rr => "rr",
            Channel::Eda => "eda",
            Channel::Temp => "temp",
        }
    }

    /// Open interval of physiologically plausible values.
    pub fn valid_range(self) -> (f64, f64) {
        match self {
            Channel::Hr => (20.0, 250.0),
            Channel::Rr => (200.0, 3000.0),
            Channel::Eda => (0.0, 100.0),
            Channel::Temp => (20.0, 45.0),
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    fn parse(s: &str) -> Option<Channel> {
        Channel::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSample {
    pub student_id: String,
    pub ts_ms: i64,
    pub channel: Channel,
    pub value: f64,
}

impl SensorSample {
    pub fn new(student_id: impl Into<String>, ts_ms: i64, channel: Channel, value: f64) -> Self {
        Self {
            student_id: student_id.into(),
            ts_ms,
            channel,
            value,
        }
    }

    /// Checks finiteness and the channel's open range.
    pub fn validate(&self) -> Result<(), IngestError> {
        let (min, max) = self.channel.valid_range();
        if !self.value.is_finite() || self.value <= min || self.value >= max {
            return Err(IngestError::Range {
                field: "value",
                channel: self.channel,
                value: self.value,
                min,
                max,
            });
        }
        Ok(())
    }

    /// Renders the sample as one NDJSON line (no trailing newline).
    pub fn render(&self) -> String {
        serde_json::to_string(self).expect("sample serialization is infallible")
    }
}

/// Parses and validates one NDJSON record. Unknown fields are ignored.
pub fn parse_sample(line: &str) -> Result<SensorSample, IngestError> {
    let value: Value =
        serde_json::from_str(line.trim()).map_err(|e| IngestError::Parse(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| IngestError::Parse("record is not a JSON object".into()))?;

    let field = |name: &'static str| {
        obj.get(name).ok_or(IngestError::Schema {
            field: name,
            reason: "missing".into(),
        })
    };
    let schema = |name: &'static str, reason: &str| IngestError::Schema {
        field: name,
        reason: reason.into(),
    };

    let student_id = field("student_id")?
        .as_str()
        .ok_or_else(|| schema("student_id", "expected string"))?;
    if student_id.is_empty() {
        return Err(schema("student_id", "empty"));
    }
    let ts_ms = field("ts_ms")?
        .as_i64()
        .ok_or_else(|| schema("ts_ms", "expected integer"))?;
    let channel_name = field("channel")?
        .as_str()
        .ok_or_else(|| schema("channel", "expected string"))?;
    let channel = Channel::parse(channel_name)
        .ok_or_else(|| schema("channel", &format!("unknown channel `{channel_name}`")))?;
    let value = field("value")?
        .as_f64()
        .ok_or_else(|| schema("value", "expected number"))?;

    let sample = SensorSample::new(student_id, ts_ms, channel, value);
    sample.validate()?;
    Ok(sample)
}

/// Ring buffers for one student, one per channel.
#[derive(Debug, Clone)]
pub struct StudentStream {
    student_id: String,
    capacity: usize,
    buffers: [VecDeque<(i64, f64)>; 4],
    last_seen_ms: Option<i64>,
}

impl StudentStream {
    pub fn new(student_id: impl Into<String>, capacity: usize) -> Self {
        assert!(capacity > 0, "ring capacity must be positive");
        Self {
            student_id: student_id.into(),
            capacity,
            buffers: Default::default(),
            last_seen_ms: None,
        }
    }

    pub fn student_id(&self) -> &str {
        &self.student_id
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn last_seen_ms(&self) -> Option<i64> {
        self.last_seen_ms
    }

    pub fn len(&self, channel: Channel) -> usize {
        self.buffers[channel.index()].len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffers.iter().all(VecDeque::is_empty)
    }

    /// Values of a channel, oldest first.
    pub fn values(&self, channel: Channel) -> Vec<f64> {
        self.buffers[channel.index()].iter().map(|&(_, v)| v).collect()
    }

    pub fn samples(&self, channel: Channel) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.buffers[channel.index()].iter().copied()
    }

    pub fn last_ts(&self, channel: Channel) -> Option<i64> {
        self.buffers[channel.index()].back().map(|&(ts, _)| ts)
    }

    fn check_order(&self, sample: &SensorSample) -> Result<(), IngestError> {
        match self.last_ts(sample.channel) {
            Some(last) if sample.ts_ms < last => Err(IngestError::Ordering {
                student_id: self.student_id.clone(),
                channel: sample.channel,
                ts_ms: sample.ts_ms,
                last_ts_ms: last,
            }),
            _ => Ok(()),
        }
    }

    fn push(&mut self, ts_ms: i64, channel: Channel, value: f64) {
        let buf = &mut self.buffers[channel.index()];
        if buf.len() == self.capacity {
            buf.pop_front();
        }
        buf.push_back((ts_ms, value));
        self.last_seen_ms = Some(self.last_seen_ms.map_or(ts_ms, |t| t.max(ts_ms)));
    }
}

/// All student streams of one session.
#[derive(Debug, Clone)]
pub struct StreamSet {
    capacity: usize,
    streams: BTreeMap<String, StudentStream>,
}

impl Default for StreamSet {
    fn default() -> Self {
        Self::new(DEFAULT_RING_CAPACITY)
    }
}

impl StreamSet {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            streams: BTreeMap::new(),
        }
    }

    /// Appends a validated sample, evicting the oldest value when the
    /// channel's ring is full.
    pub fn ingest_sample(&mut self, sample: &SensorSample) -> Result<(), IngestError> {
        sample.validate()?;
        let capacity = self.capacity;
        let stream = self
            .streams
            .entry(sample.student_id.clone())
            .or_insert_with(|| StudentStream::new(sample.student_id.clone(), capacity));
        stream.check_order(sample)?;
        stream.push(sample.ts_ms, sample.channel, sample.value);
        Ok(())
    }

    pub fn get(&self, student_id: &str) -> Option<&StudentStream> {
        self.streams.get(student_id)
    }

    pub fn students(&self) -> impl Iterator<Item = &str> {
        self.streams.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.streams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.streams.is_empty()
    }
}

/// Stream sets keyed by session id.
#[derive(Debug, Default)]
pub struct StreamHub {
    sessions: HashMap<String, StreamSet>,
}

impl StreamHub {
    pub fn open_session(&mut self, session_id: impl Into<String>, capacity: usize) {
        self.sessions
            .entry(session_id.into())
            .or_insert_with(|| StreamSet::new(capacity));
    }

    pub fn close_session(&mut self, session_id: &str) -> Option<StreamSet> {
        self.sessions.remove(session_id)
    }

    pub fn ingest_sample(&mut self, session_id: &str, sample: &SensorSample) -> Result<(), IngestError> {
        self.sessions
            .get_mut(session_id)
            .ok_or_else(|| IngestError::UnknownSession(session_id.to_owned()))?
            .ingest_sample(sample)
    }

    pub fn session(&self, session_id: &str) -> Option<&StreamSet> {
        self.sessions.get(session_id)
    }
}

/// Blocks until a target offset from the start of a replay.
pub trait Pacer {
    fn wait_until(&mut self, offset: Duration);
}

/// Sleeps on the wall clock, anchored at the first call.
#[derive(Debug, Default)]
pub struct WallClockPacer {
    start: Option<Instant>,
}

impl Pacer for WallClockPacer {
    fn wait_until(&mut self, offset: Duration) {
        let start = *self.start.get_or_insert_with(Instant::now);
        let target = start + offset;
        let now = Instant::now();
        if target > now {
            thread::sleep(target - now);
        }
    }
}

/// Records requested offsets instead of sleeping.
#[derive(Debug, Default)]
pub struct VirtualPacer {
    pub offsets: Vec<Duration>,
}

impl Pacer for VirtualPacer {
    fn wait_until(&mut self, offset: Duration) {
        self.offsets.push(offset);
    }
}

/// Iterator over the samples of a recorded NDJSON file, paced at
/// `1 / speed_factor` of real time. A speed factor of 0 disables pacing.
/// Emission halts after the first error.
pub struct Replay<R, P> {
    lines: std::io::Lines<R>,
    speed_factor: f64,
    pacer: P,
    first_ts: Option<i64>,
    last_ts: Option<i64>,
    line_no: usize,
    halted: bool,
}

impl<R: BufRead, P: Pacer> Replay<R, P> {
    pub fn new(reader: R, speed_factor: f64, pacer: P) -> Result<Self, IngestError> {
        if !speed_factor.is_finite() || speed_factor < 0.0 {
            return Err(IngestError::Parse(format!(
                "speed factor must be finite and non-negative, got {speed_factor}"
            )));
        }
        Ok(Self {
            lines: reader.lines(),
            speed_factor,
            pacer,
            first_ts: None,
            last_ts: None,
            line_no: 0,
            halted: false,
        })
    }

    pub fn pacer(&self) -> &P {
        &self.pacer
    }

    /// 1-based number of the last line read.
    pub fn line_no(&self) -> usize {
        self.line_no
    }

    fn next_sample(&mut self) -> Option<Result<SensorSample, IngestError>> {
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => return Some(Err(IngestError::Io(e.to_string()))),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let sample = match parse_sample(&line) {
                Ok(s) => s,
                Err(e) => return Some(Err(e)),
            };
            if let Some(last) = self.last_ts {
                if sample.ts_ms < last {
                    return Some(Err(IngestError::Ordering {
                        student_id: sample.student_id,
                        channel: sample.channel,
                        ts_ms: sample.ts_ms,
                        last_ts_ms: last,
                    }));
                }
            }
            self.last_ts = Some(sample.ts_ms);
            let first = *self.first_ts.get_or_insert(sample.ts_ms);
            if self.speed_factor > 0.0 {
                let offset_ms = (sample.ts_ms - first) as f64 / self.speed_factor;
                self.pacer.wait_until(Duration::from_secs_f64(offset_ms / 1000.0));
            }
            return Some(Ok(sample));
        }
    }
}

impl<R: BufRead, P: Pacer> Iterator for Replay<R, P> {
    type Item = Result<SensorSample, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.halted {
            return None;
        }
        let item = self.next_sample();
        if matches!(item, Some(Err(_))) {
            self.halted = true;
        }
        item
    }
}

/// Opens a recorded NDJSON file for wall-clock paced replay.
pub fn replay_file(
    path: impl AsRef<Path>,
    speed_factor: f64,
) -> Result<Replay<BufReader<File>, WallClockPacer>, IngestError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| IngestError::Io(format!("{}: {e}", path.display())))?;
    Replay::new(BufReader::new(file), speed_factor, WallClockPacer::default())
}
