//! Events, samples and the preliminary transforms every dataset goes through
//! (denoise, shortening, accumulation into 1 ms frames).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Polarity {
    Off = 0,
    On = 1,
}

impl Polarity {
    pub fn from_bit(bit: u8) -> Self {
        if bit & 1 == 1 {
            Polarity::On
        } else {
            Polarity::Off
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Polarity::Off => Polarity::On,
            Polarity::On => Polarity::Off,
        }
    }

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }
}

/// One camera event. Timestamps are microseconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    pub t: u64,
    pub p: Polarity,
}

impl Event {
    pub fn new(x: u16, y: u16, t: u64, p: Polarity) -> Self {
        Self { x, y, t, p }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SensorGeometry {
    pub width: u16,
    pub height: u16,
}

impl SensorGeometry {
    pub fn new(width: u16, height: u16) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::Geometry(format!(
                "sensor must be at least 2x2, got {width}x{height}"
            )));
        }
        Ok(Self { width, height })
    }

    pub fn square(side: u16) -> Result<Self> {
        Self::new(side, side)
    }

    /// A one-row geometry used for the output of the preprocessing layer,
    /// where each "pixel" is a detector unit.
    pub fn unit_row(units: u16) -> Self {
        Self {
            width: units.max(1),
            height: 1,
        }
    }

    #[inline]
    pub fn pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }

    #[inline]
    pub fn contains(&self, x: u32, y: u32) -> bool {
        x < self.width as u32 && y < self.height as u32
    }

    #[inline]
    pub fn pixel_index(&self, x: u16, y: u16) -> usize {
        y as usize * self.width as usize + x as usize
    }

    pub fn is_square(&self) -> bool {
        self.width == self.height
    }
}

/// Polarity handling: one channel for all events, or one channel per sign.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolarityMode {
    Merged,
    Split,
}

impl PolarityMode {
    #[inline]
    pub fn channels(self) -> usize {
        match self {
            PolarityMode::Merged => 1,
            PolarityMode::Split => 2,
        }
    }

    #[inline]
    pub fn channel_of(self, p: Polarity) -> usize {
        match self {
            PolarityMode::Merged => 0,
            PolarityMode::Split => p.index(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PolarityMode::Merged => "merged",
            PolarityMode::Split => "split",
        }
    }
}

impl std::str::FromStr for PolarityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "merged" => Ok(PolarityMode::Merged),
            "split" => Ok(PolarityMode::Split),
            other => Err(Error::Config(format!("unknown polarity mode {other:?}"))),
        }
    }
}

/// A time-ordered recording with its sensor geometry and optional label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSample {
    pub events: Vec<Event>,
    pub geometry: SensorGeometry,
    pub label: Option<u32>,
    pub duration_us: u64,
}

impl EventSample {
    /// Builds a sample, checking bounds and ordering. Out-of-range events
    /// are rejected with the offending index rather than clamped.
    pub fn new(
        events: Vec<Event>,
        geometry: SensorGeometry,
        label: Option<u32>,
        duration_us: u64,
    ) -> Result<Self> {
        for (index, e) in events.iter().enumerate() {
            if !geometry.contains(e.x as u32, e.y as u32) {
                return Err(Error::OutOfBounds {
                    index,
                    x: e.x as u32,
                    y: e.y as u32,
                    width: geometry.width,
                    height: geometry.height,
                });
            }
        }
        if let Some(i) = events.windows(2).position(|w| w[1].t < w[0].t) {
            return Err(Error::Parse(format!(
                "events not time-ordered at index {}",
                i + 1
            )));
        }
        let last = events.last().map(|e| e.t + 1).unwrap_or(0);
        Ok(Self {
            events,
            geometry,
            label,
            duration_us: duration_us.max(last),
        })
    }

    pub fn empty(geometry: SensorGeometry, label: Option<u32>) -> Self {
        Self {
            events: Vec::new(),
            geometry,
            label,
            duration_us: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Same sample with every polarity inverted.
    pub fn with_flipped_polarity(&self) -> Self {
        let mut out = self.clone();
        for e in &mut out.events {
            e.p = e.p.flipped();
        }
        out
    }

    /// Left-right mirror image of the sample.
    pub fn mirrored_x(&self) -> Self {
        let mut out = self.clone();
        let w = self.geometry.width;
        for e in &mut out.events {
            e.x = w - 1 - e.x;
        }
        out
    }
}

/// Keeps an event iff another event fired in its 8-neighbourhood (the pixel
/// itself excluded) strictly less than `window_us` earlier in the stream.
pub fn denoise(sample: &EventSample, window_us: u64) -> EventSample {
    assert!(window_us > 0, "denoise window must be positive");
    let g = sample.geometry;
    let (w, h) = (g.width as i32, g.height as i32);
    let mut last: Vec<Option<u64>> = vec![None; g.pixels()];
    let mut kept = Vec::with_capacity(sample.events.len());

    for e in &sample.events {
        let (x, y) = (e.x as i32, e.y as i32);
        let mut supported = false;
        'scan: for dy in -1..=1 {
            for dx in -1..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w || ny >= h {
                    continue;
                }
                if let Some(t) = last[(ny * w + nx) as usize] {
                    if e.t - t < window_us {
                        supported = true;
                        break 'scan;
                    }
                }
            }
        }
        last[(y * w + x) as usize] = Some(e.t);
        if supported {
            kept.push(*e);
        }
    }

    EventSample {
        events: kept,
        geometry: g,
        label: sample.label,
        duration_us: sample.duration_us,
    }
}

/// Keeps the first `keep_us` microseconds of the sample, measured from its
/// first event. Timestamps are re-based so the first event sits at t = 0.
pub fn shorten(sample: &EventSample, keep_us: u64) -> EventSample {
    assert!(keep_us > 0, "shorten length must be positive");
    let t0 = sample.events.first().map(|e| e.t).unwrap_or(0);
    let events: Vec<Event> = sample
        .events
        .iter()
        .take_while(|e| e.t - t0 < keep_us)
        .map(|e| Event { t: e.t - t0, ..*e })
        .collect();
    EventSample {
        events,
        geometry: sample.geometry,
        label: sample.label,
        duration_us: sample.duration_us.saturating_sub(t0).min(keep_us),
    }
}

/// Dense per-bin spike counts, laid out `[time][channel][unit]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpikeTensor {
    pub time_bins: usize,
    pub channels: usize,
    pub units: usize,
    pub bin_width_us: u64,
    pub counts: Vec<u32>,
}

impl SpikeTensor {
    pub fn zeros(time_bins: usize, channels: usize, units: usize, bin_width_us: u64) -> Self {
        Self {
            time_bins,
            channels,
            units,
            bin_width_us,
            counts: vec![0; time_bins * channels * units],
        }
    }

    /// Width of one flattened time step (`channels * units`).
    #[inline]
    pub fn step_len(&self) -> usize {
        self.channels * self.units
    }

    #[inline]
    pub fn get(&self, t: usize, c: usize, u: usize) -> u32 {
        self.counts[(t * self.channels + c) * self.units + u]
    }

    #[inline]
    pub fn step(&self, t: usize) -> &[u32] {
        let n = self.step_len();
        &self.counts[t * n..(t + 1) * n]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    pub fn bin_totals(&self) -> Vec<u64> {
        (0..self.time_bins)
            .map(|t| self.step(t).iter().map(|&c| c as u64).sum())
            .collect()
    }
}

/// Accumulates events into frames of `bin_width_us`. The number of bins is
/// `ceil(duration / bin_width)` unless `time_bins` is given, in which case
/// events beyond the last bin are dropped.
pub fn bin_to_frames(
    sample: &EventSample,
    bin_width_us: u64,
    mode: PolarityMode,
    time_bins: Option<usize>,
) -> SpikeTensor {
    assert!(bin_width_us > 0, "bin width must be positive");
    let span = sample
        .duration_us
        .max(sample.events.last().map(|e| e.t + 1).unwrap_or(0));
    let t_bins = time_bins.unwrap_or_else(|| span.div_ceil(bin_width_us) as usize);
    let units = sample.geometry.pixels();
    let mut tensor = SpikeTensor::zeros(t_bins, mode.channels(), units, bin_width_us);
    for e in &sample.events {
        let bin = (e.t / bin_width_us) as usize;
        if bin >= t_bins {
            continue;
        }
        let c = mode.channel_of(e.p);
        let u = sample.geometry.pixel_index(e.x, e.y);
        tensor.counts[(bin * tensor.channels + c) * units + u] += 1;
    }
    tensor
}
