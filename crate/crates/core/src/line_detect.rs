//! Border detectors for straight lines.
//!
//! A square region of side `L` feeds up to four detectors, one per border.
//! Unit `idx` of a detector sits at border point `B(idx)` and listens to the
//! pixels of a fan of rays drawn from `B` to anchor points on the mid-line of
//! the detector's half of the region. Anchors are taken every `k` positions
//! along the mid-line (plus its far end), so larger `k` means fewer rays.
//! All-to-all inhibition inside each detector lets a single unit win.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lif::{Sign, SpikeRecord, Synapse};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    Top,
    Bottom,
    Left,
    Right,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Top, Side::Bottom, Side::Left, Side::Right];

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Top => "top",
            Side::Bottom => "bottom",
            Side::Left => "left",
            Side::Right => "right",
        }
    }

    /// Region-local coordinates of unit `idx` on this border.
    pub fn border_point(self, side_len: u16, idx: u16) -> (i32, i32) {
        let last = side_len as i32 - 1;
        let i = idx as i32;
        match self {
            Side::Top => (i, 0),
            Side::Bottom => (i, last),
            Side::Left => (0, i),
            Side::Right => (last, i),
        }
    }

    /// Row (top/bottom) or column (left/right) of the mid-line bounding this
    /// detector's half of the region.
    fn mid_line(self, side_len: u16) -> i32 {
        let l = side_len as i32;
        match self {
            Side::Bottom | Side::Right => l / 2,
            Side::Top | Side::Left => (l + 1) / 2 - 1,
        }
    }

    fn in_half(self, side_len: u16, (x, y): (i32, i32)) -> bool {
        let mid = self.mid_line(side_len);
        let l = side_len as i32;
        if x < 0 || y < 0 || x >= l || y >= l {
            return false;
        }
        match self {
            Side::Top => y <= mid,
            Side::Bottom => y >= mid,
            Side::Left => x <= mid,
            Side::Right => x >= mid,
        }
    }

    /// Anchor points on the mid-line for step `k`: positions `0, k, 2k, ...`
    /// and the far end `L - 1`.
    pub fn anchors(self, side_len: u16, k: u16) -> Vec<(i32, i32)> {
        let mid = self.mid_line(side_len);
        let mut pos: Vec<i32> = (0..side_len).step_by(k as usize).map(|p| p as i32).collect();
        if *pos.last().unwrap() != side_len as i32 - 1 {
            pos.push(side_len as i32 - 1);
        }
        pos.into_iter()
            .map(|p| match self {
                Side::Top | Side::Bottom => (p, mid),
                Side::Left | Side::Right => (mid, p),
            })
            .collect()
    }
}

impl std::str::FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "top" => Ok(Side::Top),
            "bottom" => Ok(Side::Bottom),
            "left" => Ok(Side::Left),
            "right" => Ok(Side::Right),
            other => Err(Error::Config(format!("unknown side {other:?}"))),
        }
    }
}

/// `num / den` rounded half away from zero; `den > 0`.
#[inline]
fn div_round(num: i32, den: i32) -> i32 {
    let q = (2 * num.abs() + den) / (2 * den);
    if num < 0 {
        -q
    } else {
        q
    }
}

/// 8-connected raster of the segment `from -> to`, stepping along the major
/// axis. Rounding is symmetric in sign so mirrored segments rasterize to
/// mirrored pixels.
pub fn rasterize(from: (i32, i32), to: (i32, i32)) -> Vec<(i32, i32)> {
    let (dx, dy) = (to.0 - from.0, to.1 - from.1);
    let n = dx.abs().max(dy.abs());
    if n == 0 {
        return vec![from];
    }
    (0..=n)
        .map(|i| (from.0 + div_round(i * dx, n), from.1 + div_round(i * dy, n)))
        .collect()
}

/// A square sub-region of the sensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Region {
    pub x0: u16,
    pub y0: u16,
    pub side: u16,
}

impl Region {
    pub fn new(x0: u16, y0: u16, side: u16) -> Self {
        Self { x0, y0, side }
    }

    pub fn contains(&self, x: u16, y: u16) -> bool {
        x >= self.x0 && y >= self.y0 && x < self.x0 + self.side && y < self.y0 + self.side
    }

    /// Sensor coordinates of unit `idx` on border `side`.
    pub fn border_coords(&self, side: Side, idx: u16) -> (i32, i32) {
        let (x, y) = side.border_point(self.side, idx);
        (x + self.x0 as i32, y + self.y0 as i32)
    }
}

/// Incoming pixels of every unit of one detector, region-local
/// (`y * L + x`), sorted and without duplicates.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalPattern {
    pub detector: Side,
    pub side_len: u16,
    pub k: u16,
    pub omega: f64,
    pub pixels: Vec<Vec<u32>>,
}

impl DiagonalPattern {
    pub fn fan_in(&self, idx: usize) -> usize {
        self.pixels[idx].len()
    }

    /// Per-synapse weight of unit `idx`: ω spread evenly over its pixels.
    pub fn weight(&self, idx: usize) -> f64 {
        self.omega / self.pixels[idx].len() as f64
    }

    pub fn synapse_count(&self) -> usize {
        self.pixels.iter().map(Vec::len).sum()
    }

    /// CSV rows `pixel_x,pixel_y,detector,idx,weight` (header included).
    pub fn write_csv<W: Write>(&self, mut w: W, region: &Region) -> std::io::Result<()> {
        writeln!(w, "pixel_x,pixel_y,detector,idx,weight")?;
        let l = self.side_len as u32;
        for (idx, px) in self.pixels.iter().enumerate() {
            let weight = self.weight(idx);
            for &p in px {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    region.x0 as u32 + p % l,
                    region.y0 as u32 + p / l,
                    self.detector.as_str(),
                    idx,
                    weight
                )?;
            }
        }
        Ok(())
    }
}

/// Builds the ray-fan pattern of one detector of a region of side `side_len`.
pub fn build_pattern(side_len: u16, detector: Side, k: u16, omega: f64) -> Result<DiagonalPattern> {
    if side_len < 2 {
        return Err(Error::Config(format!("region side {side_len} is below 2")));
    }
    if k == 0 || k > side_len {
        return Err(Error::Config(format!(
            "diagonal step k={k} must lie in [1, {side_len}]"
        )));
    }
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(Error::Config(format!("strength must be positive, got {omega}")));
    }
    let anchors = detector.anchors(side_len, k);
    let l = side_len as i32;
    let pixels = (0..side_len)
        .map(|idx| {
            let b = detector.border_point(side_len, idx);
            let mut set = BTreeSet::new();
            for &a in &anchors {
                for p in rasterize(b, a) {
                    if detector.in_half(side_len, p) {
                        set.insert((p.1 * l + p.0) as u32);
                    }
                }
            }
            set.into_iter().collect()
        })
        .collect();
    Ok(DiagonalPattern {
        detector,
        side_len,
        k,
        omega,
        pixels,
    })
}

/// All-to-all inhibition within a detector of `n_units` units starting at
/// unit `base`, without self-loops.
pub fn build_wta(base: u32, n_units: u32, weight: f64, delay_ms: f64) -> Vec<Synapse> {
    let mut out = Vec::with_capacity((n_units * n_units.saturating_sub(1)) as usize);
    for i in 0..n_units {
        for j in 0..n_units {
            if i != j {
                out.push(Synapse {
                    src: base + i,
                    dst: base + j,
                    weight,
                    delay_ms,
                    sign: Sign::Inhibitory,
                });
            }
        }
    }
    out
}

/// Detectors attached to one region; unit ids are
/// `base + position_in_detectors * side + idx`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorBank {
    pub region: Region,
    pub detectors: Vec<Side>,
    pub base: u32,
}

impl DetectorBank {
    pub fn n_units(&self) -> usize {
        self.detectors.len() * self.region.side as usize
    }

    pub fn unit(&self, detector_pos: usize, idx: u16) -> u32 {
        self.base + (detector_pos * self.region.side as usize) as u32 + idx as u32
    }

    pub fn units(&self) -> std::ops::Range<u32> {
        self.base..self.base + self.n_units() as u32
    }
}

/// One end of a decoded line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LineEnd {
    pub side: Side,
    pub idx: u16,
    pub spikes: u32,
    /// Sensor coordinates of the border crossing.
    pub point: (i32, i32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DetectedSegment {
    pub a: LineEnd,
    pub b: LineEnd,
}

/// Default spike floor for a detector winner; a single spike is too easily
/// noise.
pub const DEFAULT_MIN_SPIKES: u32 = 2;

/// Winner per detector (most spikes in `[t0, t1)`, lowest index on ties,
/// at least `min_spikes`); the two strongest winners give the segment.
pub fn decode_lines(
    bank: &DetectorBank,
    record: &SpikeRecord,
    window_us: Option<(u64, u64)>,
    min_spikes: u32,
) -> Option<DetectedSegment> {
    let side = bank.region.side as usize;
    let mut counts = vec![0u32; bank.n_units()];
    let units = bank.units();
    for &(u, t) in &record.spikes {
        if !units.contains(&u) {
            continue;
        }
        if let Some((t0, t1)) = window_us {
            if t < t0 || t >= t1 {
                continue;
            }
        }
        counts[(u - bank.base) as usize] += 1;
    }
    let mut winners: Vec<LineEnd> = bank
        .detectors
        .iter()
        .enumerate()
        .filter_map(|(d, &s)| {
            let c = &counts[d * side..(d + 1) * side];
            let (idx, &best) = c
                .iter()
                .enumerate()
                .fold((0, &0u32), |acc, (i, v)| if *v > *acc.1 { (i, v) } else { acc });
            (best >= min_spikes && best > 0).then(|| LineEnd {
                side: s,
                idx: idx as u16,
                spikes: best,
                point: bank.region.border_coords(s, idx as u16),
            })
        })
        .collect();
    // Stable sort keeps detector order on equal counts.
    winners.sort_by(|a, b| b.spikes.cmp(&a.spikes));
    if winners.len() < 2 {
        return None;
    }
    Some(DetectedSegment {
        a: winners[0],
        b: winners[1],
    })
}
