//! Synthetic event data: straight lines for detector oracles, a linearly
//! separable two-class set, and moving-glyph stand-ins for the card-pip and
//! handwritten-digit benchmarks when those recordings are not at hand.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{DatasetName, DatasetSpec};
use crate::error::{Error, Result};
use crate::event::{Event, EventSample, Polarity, SensorGeometry};
use crate::line_detect::Side;

/// A point on the sensor border, `pos` counted along the border.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BorderPoint {
    pub side: Side,
    pub pos: u16,
}

impl BorderPoint {
    pub fn new(side: Side, pos: u16) -> Self {
        Self { side, pos }
    }

    pub fn coords(&self, g: SensorGeometry) -> (i32, i32) {
        let (w, h) = (g.width as i32, g.height as i32);
        let p = self.pos as i32;
        match self.side {
            Side::Top => (p, 0),
            Side::Bottom => (p, h - 1),
            Side::Left => (0, p),
            Side::Right => (w - 1, p),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LineSample {
    pub sample: EventSample,
    pub entry: BorderPoint,
    pub exit: BorderPoint,
}

/// Probability that an event is displaced by one pixel off the line.
pub const LINE_JITTER_PROB: f64 = 0.1;

/// Events scattered uniformly along the segment joining two border points,
/// at `event_rate_hz`, with ±1 pixel jitter across the line.
pub fn synth_moving_line<R: Rng>(
    geometry: SensorGeometry,
    entry: BorderPoint,
    exit: BorderPoint,
    duration_us: u64,
    event_rate_hz: f64,
    rng: &mut R,
) -> Result<LineSample> {
    let (x0, y0) = entry.coords(geometry);
    let (x1, y1) = exit.coords(geometry);
    if (x0, y0) == (x1, y1) {
        return Err(Error::Config("degenerate zero-length line".into()));
    }
    let (dx, dy) = (x1 - x0, y1 - y0);
    let steep = dy.abs() > dx.abs();
    let major = dx.abs().max(dy.abs());
    let n = (event_rate_hz * duration_us as f64 / 1e6).round() as usize;

    let mut times: Vec<u64> = (0..n).map(|_| rng.gen_range(0..duration_us.max(1))).collect();
    times.sort_unstable();
    let (w, h) = (geometry.width as i32, geometry.height as i32);
    let events = times
        .into_iter()
        .map(|t| {
            let i = rng.gen_range(0..=major);
            let x = x0 as f64 + dx as f64 * i as f64 / major as f64;
            let y = y0 as f64 + dy as f64 * i as f64 / major as f64;
            let (mut px, mut py) = (x.round() as i32, y.round() as i32);
            if rng.gen_bool(LINE_JITTER_PROB) {
                let j = if rng.gen_bool(0.5) { 1 } else { -1 };
                if steep {
                    px += j;
                } else {
                    py += j;
                }
            }
            Event::new(
                px.clamp(0, w - 1) as u16,
                py.clamp(0, h - 1) as u16,
                t,
                Polarity::from_bit(rng.gen()),
            )
        })
        .collect();
    let sample = EventSample::new(events, geometry, None, duration_us)?;
    Ok(LineSample { sample, entry, exit })
}

/// Two border points on different sides, far enough apart to form a line
/// crossing the sensor.
pub fn random_border_line<R: Rng>(geometry: SensorGeometry, rng: &mut R) -> (BorderPoint, BorderPoint) {
    let sides = [Side::Top, Side::Bottom, Side::Left, Side::Right];
    loop {
        let a = *sides.choose(rng).unwrap();
        let b = *sides.choose(rng).unwrap();
        if a == b {
            continue;
        }
        let span = |s: Side| match s {
            Side::Top | Side::Bottom => geometry.width,
            Side::Left | Side::Right => geometry.height,
        };
        let pa = BorderPoint::new(a, rng.gen_range(0..span(a)));
        let pb = BorderPoint::new(b, rng.gen_range(0..span(b)));
        let (xa, ya) = pa.coords(geometry);
        let (xb, yb) = pb.coords(geometry);
        let len = ((xa - xb).pow(2) + (ya - yb).pow(2)) as f64;
        if len.sqrt() >= geometry.width.min(geometry.height) as f64 / 2.0 {
            return (pa, pb);
        }
    }
}

/// Euclidean distance from a pixel to a segment.
pub fn distance_to_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let s = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * vx + (p.1 - a.1) * vy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + s * vx, a.1 + s * vy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

/// Class 0 events fall in the left half, class 1 in the right half. A
/// `purity` below one moves that fraction of events to the other side.
pub fn synth_two_class<R: Rng>(
    geometry: SensorGeometry,
    n_samples: usize,
    events_per_sample: usize,
    duration_us: u64,
    purity: f64,
    rng: &mut R,
) -> Vec<EventSample> {
    let half = geometry.width / 2;
    (0..n_samples)
        .map(|i| {
            let label = (i % 2) as u32;
            let mut times: Vec<u64> =
                (0..events_per_sample).map(|_| rng.gen_range(0..duration_us)).collect();
            times.sort_unstable();
            let events = times
                .into_iter()
                .map(|t| {
                    let own_side = rng.gen_bool(purity.clamp(0.0, 1.0));
                    let right = (label == 1) == own_side;
                    let x = if right {
                        rng.gen_range(half..geometry.width)
                    } else {
                        rng.gen_range(0..half)
                    };
                    Event::new(x, rng.gen_range(0..geometry.height), t, Polarity::from_bit(rng.gen()))
                })
                .collect();
            EventSample::new(events, geometry, Some(label), duration_us).expect("in bounds")
        })
        .collect()
}

/// Membership test for a glyph in object coordinates (unit scale, y down).
type Shape = fn(f64, f64) -> bool;

fn heart(u: f64, v: f64) -> bool {
    let (x, y) = (u * 1.1, -v * 1.1 + 0.15);
    (x * x + y * y - 1.0).powi(3) - x * x * y.powi(3) <= 0.0
}

fn spade(u: f64, v: f64) -> bool {
    let stem = (0.45..=1.0).contains(&v) && u.abs() <= 0.08 + 0.45 * (v - 0.45);
    heart(u, -v + 0.15) || stem
}

fn diamond(u: f64, v: f64) -> bool {
    u.abs() / 0.72 + v.abs() <= 1.0
}

fn club(u: f64, v: f64) -> bool {
    let disc = |cx: f64, cy: f64| (u - cx).powi(2) + (v - cy).powi(2) <= 0.37 * 0.37;
    let stem = (0.2..=1.0).contains(&v) && u.abs() <= 0.06 + 0.4 * (v - 0.2);
    disc(0.0, -0.52) || disc(-0.44, 0.08) || disc(0.44, 0.08) || disc(0.0, 0.0) || stem
}

const PIPS: [Shape; 4] = [heart, spade, diamond, club];

type Stroke = &'static [(f64, f64)];

const DIGITS: [&[Stroke]; 10] = [
    &[&[(0.0, -1.0), (0.42, -0.8), (0.55, -0.3), (0.55, 0.3), (0.42, 0.8), (0.0, 1.0), (-0.42, 0.8), (-0.55, 0.3), (-0.55, -0.3), (-0.42, -0.8), (0.0, -1.0)]],
    &[&[(-0.25, -0.7), (0.05, -1.0), (0.05, 1.0)]],
    &[&[(-0.5, -0.6), (-0.2, -0.95), (0.25, -0.95), (0.5, -0.6), (0.4, -0.15), (-0.5, 1.0), (0.55, 1.0)]],
    &[&[(-0.5, -0.95), (0.5, -0.95), (0.0, -0.1), (0.45, 0.25), (0.45, 0.7), (0.1, 1.0), (-0.5, 0.85)]],
    &[&[(0.3, 1.0), (0.3, -1.0), (-0.55, 0.35), (0.6, 0.35)]],
    &[&[(0.5, -1.0), (-0.4, -1.0), (-0.5, -0.1), (0.15, -0.2), (0.5, 0.2), (0.45, 0.75), (0.05, 1.0), (-0.5, 0.85)]],
    &[&[(0.4, -1.0), (-0.3, -0.35), (-0.5, 0.4), (-0.25, 0.95), (0.25, 0.95), (0.5, 0.5), (0.3, 0.05), (-0.2, 0.05), (-0.45, 0.4)]],
    &[&[(-0.5, -1.0), (0.55, -1.0), (-0.1, 1.0)], &[(-0.15, 0.0), (0.35, 0.0)]],
    &[&[(0.0, -0.05), (0.38, -0.35), (0.35, -0.8), (0.0, -1.0), (-0.35, -0.8), (-0.38, -0.35), (0.0, -0.05), (0.48, 0.35), (0.4, 0.85), (0.0, 1.0), (-0.4, 0.85), (-0.48, 0.35), (0.0, -0.05)]],
    &[&[(0.45, -0.35), (0.2, -0.95), (-0.25, -0.95), (-0.5, -0.55), (-0.3, -0.1), (0.15, -0.1), (0.45, -0.35), (0.25, 1.0)]],
];

const STROKE_HALF_WIDTH: f64 = 0.13;

fn on_strokes(strokes: &[Stroke], u: f64, v: f64) -> bool {
    strokes.iter().any(|s| {
        s.windows(2)
            .any(|w| distance_to_segment((u, v), w[0], w[1]) <= STROKE_HALF_WIDTH)
    })
}

/// Parameters of the moving-glyph event generator.
#[derive(Clone, Debug)]
pub struct GlyphMotion {
    /// Glyph half-size in pixels.
    pub scale: f64,
    pub speed_px_per_ms: f64,
    pub duration_us: u64,
    /// Log-intensity change needed for one event.
    pub contrast: f64,
    /// Spurious uniformly placed events per sample.
    pub noise_events: usize,
    pub jitter_px: f64,
    pub rotation_rad: f64,
    /// Motion direction is drawn from `heading ± heading_spread`.
    pub heading_rad: f64,
    pub heading_spread_rad: f64,
}

const SUPERSAMPLE: i32 = 4;
const MARGIN: i32 = 12;
const FRAME_US: u64 = 100;

/// Renders a glyph moving at constant velocity and emits events whenever a
/// pixel's log intensity drifts by `contrast` from its last reference level.
fn render_glyph<R: Rng>(
    geometry: SensorGeometry,
    inside: &dyn Fn(f64, f64) -> bool,
    motion: &GlyphMotion,
    rng: &mut R,
) -> Vec<Event> {
    let (w, h) = (geometry.width as i32, geometry.height as i32);
    let scale = motion.scale * rng.gen_range(0.9..1.1);
    let theta = rng.gen_range(-motion.rotation_rad..=motion.rotation_rad);
    let shear = rng.gen_range(-0.12..0.12);
    let cx = w as f64 / 2.0 + rng.gen_range(-motion.jitter_px..=motion.jitter_px);
    let cy = h as f64 / 2.0 + rng.gen_range(-motion.jitter_px..=motion.jitter_px);
    let heading = motion.heading_rad + rng.gen_range(-motion.heading_spread_rad..=motion.heading_spread_rad);
    let speed = motion.speed_px_per_ms * rng.gen_range(0.8..1.2);
    let (vx, vy) = (speed * heading.cos(), speed * heading.sin());
    // Start the glyph behind the centre so it sweeps across it.
    let travel = speed * motion.duration_us as f64 / 1000.0;
    let (sx0, sy0) = (cx - vx / speed * travel / 2.0, cy - vy / speed * travel / 2.0);

    let hw = (w + 2 * MARGIN) * SUPERSAMPLE;
    let hh = (h + 2 * MARGIN) * SUPERSAMPLE;
    let (c, s) = (theta.cos(), theta.sin());
    let mut mask = vec![false; (hw * hh) as usize];
    for j in 0..hh {
        for i in 0..hw {
            let px = (i as f64 + 0.5) / SUPERSAMPLE as f64 - MARGIN as f64 - sx0;
            let py = (j as f64 + 0.5) / SUPERSAMPLE as f64 - MARGIN as f64 - sy0;
            let (u, v) = ((c * px + s * py) / scale, (-s * px + c * py) / scale);
            mask[(j * hw + i) as usize] = inside(u - shear * v, v);
        }
    }

    let cover = |x: i32, y: i32, ox: i32, oy: i32| -> f64 {
        let mut n = 0;
        for sy in 0..SUPERSAMPLE {
            for sx in 0..SUPERSAMPLE {
                let i = (x + MARGIN) * SUPERSAMPLE + sx - ox;
                let j = (y + MARGIN) * SUPERSAMPLE + sy - oy;
                if i >= 0 && j >= 0 && i < hw && j < hh && mask[(j * hw + i) as usize] {
                    n += 1;
                }
            }
        }
        n as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64
    };
    let log_i = |coverage: f64| (1.0 - 0.85 * coverage).ln();

    let mut reference: Vec<f64> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| log_i(cover(x, y, 0, 0)))
        .collect();
    let mut events = Vec::new();
    let frames = motion.duration_us / FRAME_US;
    for f in 1..=frames {
        let t_ms = (f * FRAME_US) as f64 / 1000.0;
        let ox = (vx * t_ms * SUPERSAMPLE as f64).round() as i32;
        let oy = (vy * t_ms * SUPERSAMPLE as f64).round() as i32;
        for y in 0..h {
            for x in 0..w {
                let idx = (y * w + x) as usize;
                let level = log_i(cover(x, y, ox, oy));
                loop {
                    let diff = level - reference[idx];
                    let p = if diff >= motion.contrast {
                        Polarity::On
                    } else if diff <= -motion.contrast {
                        Polarity::Off
                    } else {
                        break;
                    };
                    reference[idx] += if p == Polarity::On { motion.contrast } else { -motion.contrast };
                    let t = (f - 1) * FRAME_US + rng.gen_range(0..FRAME_US);
                    events.push(Event::new(x as u16, y as u16, t, p));
                }
            }
        }
    }
    for _ in 0..motion.noise_events {
        events.push(Event::new(
            rng.gen_range(0..w) as u16,
            rng.gen_range(0..h) as u16,
            rng.gen_range(0..motion.duration_us),
            Polarity::from_bit(rng.gen()),
        ));
    }
    events.sort_by_key(|e| e.t);
    events
}

fn glyph_split(
    spec: &DatasetSpec,
    n: usize,
    seed: u64,
    motion: &GlyphMotion,
    render: &(dyn Fn(usize, f64, f64) -> bool + Sync),
) -> Vec<EventSample> {
    let make = |i: usize| {
        let label = i % spec.n_labels;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let inside = |u: f64, v: f64| render(label, u, v);
        let events = render_glyph(spec.geometry, &inside, motion, &mut rng);
        EventSample::new(events, spec.geometry, Some(label as u32), motion.duration_us)
            .expect("glyph events are clamped to the sensor")
    };
    crate::parallel::map_indices(n, crate::parallel::Execution::default(), make)
}

/// Card-pip stand-in: four filled symbols (heart, spade, diamond, club) on a
/// 35x35 sensor, 17 ms recordings. Glyphs fill most of the frame and drift
/// sideways, giving about 1100 events in the first 10 ms.
pub fn pip_motion() -> GlyphMotion {
    GlyphMotion {
        scale: 14.0,
        speed_px_per_ms: 0.25,
        duration_us: 17_000,
        contrast: 0.25,
        noise_events: 40,
        jitter_px: 1.0,
        rotation_rad: 0.05,
        heading_rad: 0.0,
        heading_spread_rad: 0.3,
    }
}

pub fn synth_pips(train: usize, test: usize, seed: u64) -> (DatasetSpec, Vec<EventSample>, Vec<EventSample>) {
    synth_pips_with(train, test, seed, &pip_motion())
}

pub fn synth_pips_with(
    train: usize,
    test: usize,
    seed: u64,
    motion: &GlyphMotion,
) -> (DatasetSpec, Vec<EventSample>, Vec<EventSample>) {
    let mut spec = DatasetSpec::poker_dvs();
    spec.name = DatasetName::Synthetic;
    spec.train_samples = train;
    spec.test_samples = test;
    let render = |label: usize, u: f64, v: f64| PIPS[label](u, v);
    let tr = glyph_split(&spec, train, seed, motion, &render);
    let te = glyph_split(&spec, test, seed.wrapping_add(0x5eed), motion, &render);
    (spec, tr, te)
}

/// Handwritten-digit stand-in: ten stroke glyphs on a 34x34 sensor, 30 ms
/// recordings. Every sample drifts along the same diagonal, like a fixed
/// camera saccade.
pub fn digit_motion() -> GlyphMotion {
    GlyphMotion {
        scale: 13.0,
        speed_px_per_ms: 0.2,
        duration_us: 30_000,
        contrast: 0.35,
        noise_events: 30,
        jitter_px: 2.0,
        rotation_rad: 0.2,
        heading_rad: std::f64::consts::FRAC_PI_4,
        heading_spread_rad: 0.05,
    }
}

pub fn synth_digits(train: usize, test: usize, seed: u64) -> (DatasetSpec, Vec<EventSample>, Vec<EventSample>) {
    synth_digits_with(train, test, seed, &digit_motion())
}

pub fn synth_digits_with(
    train: usize,
    test: usize,
    seed: u64,
    motion: &GlyphMotion,
) -> (DatasetSpec, Vec<EventSample>, Vec<EventSample>) {
    let mut spec = DatasetSpec::n_mnist();
    spec.name = DatasetName::Synthetic;
    spec.train_samples = train;
    spec.test_samples = test;
    let render = |label: usize, u: f64, v: f64| on_strokes(DIGITS[label], u, v);
    let tr = glyph_split(&spec, train, seed, motion, &render);
    let te = glyph_split(&spec, test, seed.wrapping_add(0x5eed), motion, &render);
    (spec, tr, te)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(side: u16) -> SensorGeometry {
        SensorGeometry::square(side).unwrap()
    }

    #[test]
    fn vertical_line_stays_in_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = synth_moving_line(
            g(32),
            BorderPoint::new(Side::Top, 10),
            BorderPoint::new(Side::Bottom, 10),
            10_000,
            50_000.0,
            &mut rng,
        )
        .unwrap();
        assert_eq!(l.sample.len(), 500);
        assert!(l.sample.events.iter().all(|e| (9..=11).contains(&e.x)));
    }

    #[test]
    fn diagonal_line_on_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let l = synth_moving_line(
            g(20),
            BorderPoint::new(Side::Top, 0),
            BorderPoint::new(Side::Bottom, 19),
            5_000,
            40_000.0,
            &mut rng,
        )
        .unwrap();
        assert!(l.sample.events.iter().all(|e| (e.x as i32 - e.y as i32).abs() <= 1));
    }

    #[test]
    fn degenerate_line_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = BorderPoint::new(Side::Top, 0);
        let q = BorderPoint::new(Side::Left, 0);
        assert!(synth_moving_line(g(8), p, q, 1000, 1e4, &mut rng).is_err());
    }

    /// Total-least-squares line through the event cloud: centroid and unit
    /// direction.
    fn fitted_line(s: &EventSample) -> ((f64, f64), (f64, f64)) {
        let n = s.len() as f64;
        let mx = s.events.iter().map(|e| e.x as f64).sum::<f64>() / n;
        let my = s.events.iter().map(|e| e.y as f64).sum::<f64>() / n;
        let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
        for e in &s.events {
            let (dx, dy) = (e.x as f64 - mx, e.y as f64 - my);
            sxx += dx * dx;
            syy += dy * dy;
            sxy += dx * dy;
        }
        let angle = 0.5 * (2.0 * sxy).atan2(sxx - syy);
        ((mx, my), (angle.cos(), angle.sin()))
    }

    #[test]
    fn regression_passes_through_endpoints() {
        let geo = g(34);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let (a, b) = random_border_line(geo, &mut rng);
            let l = synth_moving_line(geo, a, b, 10_000, 80_000.0, &mut rng).unwrap();
            let ((mx, my), (ux, uy)) = fitted_line(&l.sample);
            for (x, y) in [a.coords(geo), b.coords(geo)] {
                let off = ((x as f64 - mx) * uy - (y as f64 - my) * ux).abs();
                assert!(off <= 1.0, "endpoint ({x},{y}) is {off} px off the fit: {a:?} {b:?}");
            }
        }
    }

    #[test]
    fn line_events_hug_segment() {
        let geo = g(34);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let (a, b) = random_border_line(geo, &mut rng);
            let l = synth_moving_line(geo, a, b, 10_000, 60_000.0, &mut rng).unwrap();
            let (ax, ay) = a.coords(geo);
            let (bx, by) = b.coords(geo);
            let near = l
                .sample
                .events
                .iter()
                .filter(|e| {
                    distance_to_segment((e.x as f64, e.y as f64), (ax as f64, ay as f64), (bx as f64, by as f64))
                        <= 1.0 + 1e-9
                })
                .count();
            // Rounding moves a point at most half a pixel off the segment and
            // jitter one more pixel, both along the minor axis.
            let far = l.sample.events.iter().any(|e| {
                distance_to_segment((e.x as f64, e.y as f64), (ax as f64, ay as f64), (bx as f64, by as f64))
                    > 1.5 + 1e-9
            });
            assert!(!far);
            assert!(near as f64 >= 0.85 * l.sample.len() as f64, "{near}/{}", l.sample.len());
        }
    }

    #[test]
    fn two_class_sides() {
        let geo = g(8);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pure = synth_two_class(geo, 4, 30, 5_000, 1.0, &mut rng);
        for s in &pure {
            let left = s.events.iter().all(|e| e.x < 4);
            let right = s.events.iter().all(|e| e.x >= 4);
            assert_eq!(s.label, Some(if left { 0 } else { 1 }));
            assert!(left || right);
        }
        let mixed = synth_two_class(geo, 40, 60, 5_000, 0.9, &mut rng);
        for s in &mixed {
            let cx = s.events.iter().map(|e| e.x as f64).sum::<f64>() / s.len() as f64;
            let side = if cx < 4.0 { 0 } else { 1 };
            assert_eq!(s.label, Some(side));
        }
    }

    #[test]
    fn glyph_datasets_are_plausible() {
        let (spec, train, test) = synth_pips(8, 4, 9);
        assert_eq!(train.len(), 8);
        assert_eq!(test.len(), 4);
        for s in train.iter().chain(&test) {
            assert_eq!(s.geometry, spec.geometry);
            assert!(s.len() > 200, "pip sample too sparse: {}", s.len());
            assert!(s.events.iter().any(|e| e.p == Polarity::On));
            assert!(s.events.iter().any(|e| e.p == Polarity::Off));
        }
        let (_, d, _) = synth_digits(10, 0, 3);
        let labels: Vec<u32> = d.iter().map(|s| s.label.unwrap()).collect();
        assert_eq!(labels, (0..10).collect::<Vec<_>>());
        assert!(d.iter().all(|s| s.len() > 50));
    }

    #[test]
    fn glyph_generation_is_deterministic() {
        let a = synth_pips(4, 0, 21).1;
        let b = synth_pips(4, 0, 21).1;
        assert_eq!(a, b);
    }
}
