//! Asynchronous spike-event streams.
//!
//! Event files are line-oriented UTF-8 text: an optional `#geometry w h`
//! header, `#` comment lines, and one `t,x,y,p` record per line with `t` in
//! seconds.

use std::io::{BufRead, Write};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FlamesError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub width: u32,
    pub height: u32,
}

impl Geometry {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }

    pub fn pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x < self.width && y < self.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpikeEvent {
    pub t: f64,
    pub x: u32,
    pub y: u32,
    pub p: f64,
}

impl SpikeEvent {
    pub fn new(t: f64, x: u32, y: u32, p: f64) -> Self {
        Self { t, x, y, p }
    }
}

/// A validated, time-sorted event sequence. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    events: Vec<SpikeEvent>,
    geometry: Geometry,
    channels: usize,
}

/// All events that share one timestamp, summed per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeBatch {
    pub t: f64,
    pub values: Vec<f64>,
}

impl SpikeBatch {
    pub fn new(t: f64, values: Vec<f64>) -> Self {
        Self { t, values }
    }

    pub fn zeros(t: f64, channels: usize) -> Self {
        Self {
            t,
            values: vec![0.0; channels],
        }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_silent(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
}

/// How `ingest_events` treats decreasing timestamps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimestampOrder {
    #[default]
    Strict,
    Resort,
}

fn validate_event(ev: &SpikeEvent, geometry: Geometry) -> Result<()> {
    if !ev.t.is_finite() || ev.t < 0.0 {
        return Err(FlamesError::invalid(
            "t",
            format!("timestamp {} must be finite and non-negative", ev.t),
        ));
    }
    if !ev.p.is_finite() {
        return Err(FlamesError::invalid("p", "polarity must be finite"));
    }
    if !geometry.contains(ev.x, ev.y) {
        return Err(FlamesError::invalid(
            "geometry",
            format!(
                "event ({}, {}) outside {}x{} sensor",
                ev.x, ev.y, geometry.width, geometry.height
            ),
        ));
    }
    Ok(())
}

impl EventStream {
    /// Builds a stream after checking geometry and ordering. Events must
    /// already be nondecreasing in `t`.
    pub fn new(events: Vec<SpikeEvent>, geometry: Geometry, channels: usize) -> Result<Self> {
        if channels == 0 {
            return Err(FlamesError::invalid("channels", "must be at least 1"));
        }
        for (i, ev) in events.iter().enumerate() {
            validate_event(ev, geometry)?;
            if i > 0 && ev.t < events[i - 1].t {
                return Err(FlamesError::invalid(
                    "events",
                    format!("timestamp decreases at index {i}"),
                ));
            }
        }
        Ok(Self {
            events,
            geometry,
            channels,
        })
    }

    pub fn empty(geometry: Geometry) -> Self {
        Self {
            events: Vec::new(),
            geometry,
            channels: geometry.pixels().max(1),
        }
    }

    pub fn events(&self) -> &[SpikeEvent] {
        &self.events
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Default channel map: row-major pixel index `y * width + x`.
    pub fn flat_channel(&self, ev: &SpikeEvent) -> usize {
        ev.y as usize * self.geometry.width as usize + ev.x as usize
    }
}

fn parse_field<T: std::str::FromStr>(raw: &str, name: &str, line: usize) -> Result<T> {
    raw.trim().parse::<T>().map_err(|_| FlamesError::Parse {
        line,
        message: format!("bad {name} field {:?}", raw.trim()),
    })
}

/// Reads an event file. `geometry` may come from the caller, from a
/// `#geometry w h` header, or both (in which case they must agree).
pub fn ingest_events<R: BufRead>(
    reader: R,
    geometry: Option<Geometry>,
    order: TimestampOrder,
) -> Result<EventStream> {
    let mut header: Option<Geometry> = None;
    let mut events: Vec<SpikeEvent> = Vec::new();
    let mut lines_of: Vec<usize> = Vec::new();

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| FlamesError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            let mut parts = rest.split_whitespace();
            if parts.next() == Some("geometry") {
                let w = parts.next().ok_or_else(|| FlamesError::Parse {
                    line: lineno,
                    message: "geometry header needs width and height".into(),
                })?;
                let h = parts.next().ok_or_else(|| FlamesError::Parse {
                    line: lineno,
                    message: "geometry header needs width and height".into(),
                })?;
                header = Some(Geometry::new(
                    parse_field(w, "width", lineno)?,
                    parse_field(h, "height", lineno)?,
                ));
            }
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 4 {
            return Err(FlamesError::Parse {
                line: lineno,
                message: format!("expected 4 comma-separated fields, found {}", fields.len()),
            });
        }
        let ev = SpikeEvent {
            t: parse_field(fields[0], "t", lineno)?,
            x: parse_field(fields[1], "x", lineno)?,
            y: parse_field(fields[2], "y", lineno)?,
            p: parse_field(fields[3], "p", lineno)?,
        };
        if order == TimestampOrder::Strict {
            if let Some(prev) = events.last() {
                if ev.t < prev.t {
                    return Err(FlamesError::NonMonotonic { line: lineno });
                }
            }
        }
        events.push(ev);
        lines_of.push(lineno);
    }

    let geometry = match (geometry, header) {
        (Some(g), Some(h)) if g != h => {
            return Err(FlamesError::invalid(
                "geometry",
                format!(
                    "header declares {}x{} but {}x{} was requested",
                    h.width, h.height, g.width, g.height
                ),
            ))
        }
        (Some(g), _) => g,
        (None, Some(h)) => h,
        (None, None) => {
            return Err(FlamesError::invalid(
                "geometry",
                "no geometry given and no #geometry header",
            ))
        }
    };

    for (ev, line) in events.iter().zip(&lines_of) {
        validate_event(ev, geometry).map_err(|e| match e {
            FlamesError::Validation { field, message } => FlamesError::Validation {
                field,
                message: format!("{message} (line {line})"),
            },
            other => other,
        })?;
    }
    if order == TimestampOrder::Resort {
        // stable: file order survives among equal timestamps
        events.sort_by(|a, b| a.t.total_cmp(&b.t));
    }
    let channels = geometry.pixels().max(1);
    EventStream::new(events, geometry, channels)
}

/// Writes the canonical text form read back by [`ingest_events`].
pub fn write_events<W: Write>(stream: &EventStream, mut out: W) -> std::io::Result<()> {
    let g = stream.geometry();
    writeln!(out, "#geometry {} {}", g.width, g.height)?;
    for ev in stream.events() {
        writeln!(out, "{},{},{},{}", ev.t, ev.x, ev.y, ev.p)?;
    }
    Ok(())
}

/// Groups events sharing a timestamp; `values[c]` sums `p` over the events
/// that `channel_map` sends to channel `c`.
pub fn batch_by_timestamp<F>(
    stream: &EventStream,
    channels: usize,
    channel_map: F,
) -> Result<Vec<SpikeBatch>>
where
    F: Fn(&SpikeEvent) -> usize,
{
    let mut batches: Vec<SpikeBatch> = Vec::new();
    for ev in stream.events() {
        let c = channel_map(ev);
        if c >= channels {
            return Err(FlamesError::invalid(
                "channel_map",
                format!("channel {c} out of range for {channels} channels"),
            ));
        }
        match batches.last_mut() {
            Some(b) if b.t == ev.t => b.values[c] += ev.p,
            _ => {
                let mut b = SpikeBatch::zeros(ev.t, channels);
                b.values[c] += ev.p;
                batches.push(b);
            }
        }
    }
    Ok(batches)
}

/// [`batch_by_timestamp`] with the flat pixel map.
pub fn batch_flat(stream: &EventStream) -> Result<Vec<SpikeBatch>> {
    batch_by_timestamp(stream, stream.channels(), |ev| stream.flat_channel(ev))
}

/// Homogeneous Poisson spikes (`p = +1`) on `channels` channels laid out as a
/// `channels x 1` sensor.
pub fn generate_poisson(rate: f64, duration: f64, channels: usize, seed: u64) -> Result<EventStream> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(FlamesError::invalid("rate", "must be positive and finite"));
    }
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(FlamesError::invalid("duration", "must be positive and finite"));
    }
    if channels == 0 {
        return Err(FlamesError::invalid("channels", "must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Vec::new();
    for c in 0..channels {
        let mut t = 0.0;
        loop {
            let u: f64 = rng.random();
            // inverse-CDF exponential gap; 1-u keeps the log finite
            t += -(1.0 - u).ln() / rate;
            if t > duration {
                break;
            }
            events.push(SpikeEvent::new(t, c as u32, 0, 1.0));
        }
    }
    events.sort_by(|a, b| a.t.total_cmp(&b.t));
    EventStream::new(events, Geometry::new(channels as u32, 1), channels)
}

/// Every channel fires at `period, 2*period, ...` up to and including
/// `duration`.
pub fn generate_periodic(period: f64, duration: f64, channels: usize) -> Result<EventStream> {
    if !(period > 0.0 && period.is_finite()) {
        return Err(FlamesError::invalid("period", "must be positive and finite"));
    }
    if !(duration >= 0.0 && duration.is_finite()) {
        return Err(FlamesError::invalid("duration", "must be finite and non-negative"));
    }
    if channels == 0 {
        return Err(FlamesError::invalid("channels", "must be at least 1"));
    }
    let count = periodic_count(period, duration);
    let mut events = Vec::with_capacity(count * channels);
    for k in 1..=count {
        let t = k as f64 * period;
        for c in 0..channels {
            events.push(SpikeEvent::new(t, c as u32, 0, 1.0));
        }
    }
    EventStream::new(events, Geometry::new(channels as u32, 1), channels)
}

fn periodic_count(period: f64, duration: f64) -> usize {
    let ratio = duration / period;
    // 0.02 / 0.005 evaluates to 4.000000000000001 or 3.9999999999999996
    // depending on rounding; snap ratios within a few ulps of an integer
    let nearest = ratio.round();
    if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest as usize
    } else {
        ratio.floor() as usize
    }
}
