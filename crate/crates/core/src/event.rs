//! Interaction events and the newline-delimited JSON event-log format.
//!
//! One object per line: `{"ts":<int>,"user":<str>,"item":<str>,"ctx":[<num>...],"label":0|1}`,
//! in non-decreasing `ts` order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    #[serde(rename = "ts")]
    pub timestamp: i64,
    #[serde(rename = "user")]
    pub user_id: String,
    #[serde(rename = "item")]
    pub item_id: String,
    #[serde(rename = "ctx")]
    pub context: Vec<f64>,
    pub label: u8,
}

impl Event {
    /// Calendar day (UTC) the event falls on, counted from the Unix epoch.
    pub fn day(&self) -> i64 {
        self.timestamp.div_euclid(SECONDS_PER_DAY)
    }

    pub fn validate(&self) -> Result<()> {
        if self.label > 1 {
            return Err(Error::Data(format!(
                "label must be 0 or 1, got {}",
                self.label
            )));
        }
        if self.user_id.is_empty() || self.item_id.is_empty() {
            return Err(Error::Data("user and item ids must be non-empty".into()));
        }
        if let Some(x) = self.context.iter().find(|x| !x.is_finite()) {
            return Err(Error::Data(format!("non-finite context value {x}")));
        }
        Ok(())
    }
}

/// Wire shape used while parsing, so that bad labels can be reported with
/// their actual value instead of a generic type error.
#[derive(Deserialize)]
struct RawEvent {
    ts: i64,
    user: String,
    item: String,
    ctx: Vec<f64>,
    label: serde_json::Number,
}

impl TryFrom<RawEvent> for Event {
    type Error = String;

    fn try_from(raw: RawEvent) -> std::result::Result<Self, String> {
        let label = match raw.label.as_u64() {
            Some(0) => 0,
            Some(1) => 1,
            _ => return Err(format!("label must be 0 or 1, got {}", raw.label)),
        };
        let event = Event {
            timestamp: raw.ts,
            user_id: raw.user,
            item_id: raw.item,
            context: raw.ctx,
            label,
        };
        event.validate().map_err(|e| e.to_string())?;
        Ok(event)
    }
}

pub fn write_events(events: &[Event], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_events_to(events, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn write_events_to<W: Write>(events: &[Event], out: &mut W) -> Result<()> {
    for event in events {
        event.validate()?;
        serde_json::to_writer(&mut *out, event).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads an event log, rejecting the first malformed line with its 1-based number.
pub fn read_events(path: &Path) -> Result<Vec<Event>> {
    read_events_from(BufReader::new(File::open(path)?), path)
}

/// [`read_events`] over any buffered reader; `path` only labels errors.
pub fn read_events_from<R: BufRead>(reader: R, path: &Path) -> Result<Vec<Event>> {
    let mut events = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        let raw: RawEvent = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        events.push(Event::try_from(raw).map_err(parse_err)?);
    }
    Ok(events)
}

/// Splits an ordered stream into one slice per calendar day, from the first
/// event's day through the last event's day. Days without events get empty slices.
pub fn split_days(events: &[Event]) -> Result<Vec<&[Event]>> {
    if let Some(pos) = events
        .windows(2)
        .position(|w| w[1].timestamp < w[0].timestamp)
    {
        return Err(Error::Data(format!(
            "stream is not timestamp-ordered at event {}",
            pos + 1
        )));
    }
    let (Some(first), Some(last)) = (events.first(), events.last()) else {
        return Ok(Vec::new());
    };
    let first_day = first.day();
    let num_days = (last.day() - first_day + 1) as usize;
    let mut days = Vec::with_capacity(num_days);
    let mut start = 0;
    for d in 0..num_days as i64 {
        let end = start
            + events[start..]
                .iter()
                .take_while(|e| e.day() == first_day + d)
                .count();
        days.push(&events[start..end]);
        start = end;
    }
    Ok(days)
}
