//! Tiling strategies: where line detectors sit on the sensor, how events are
//! routed to them, and the preprocessing run that turns an input sample into
//! detector spikes.
//!
//! Output units of a single strategy are indexed `c * n_p + unit`, with `c`
//! the polarity channel. A cumulative strategy concatenates the index spaces
//! of its parts.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{Event, EventSample, Polarity, PolarityMode, SensorGeometry};
use crate::lif::{InputSpike, LifParams, Network, Sign, SourceKind, SpikeRecord, Synapse, SynapseTable};
use crate::line_detect::{build_pattern, build_wta, DetectorBank, Region, Side};
use crate::metrics::ArchitectureCensus;
use crate::parallel::{map_slice, Execution};

/// Index of the input-to-detector table inside [`PreprocessNetwork::network`].
pub const INPUT_TABLE: usize = 0;
/// Index of the lateral-inhibition table.
pub const WTA_TABLE: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tiling {
    WholeSensor,
    CentralQuarter,
    Cross,
    CornerQuartersAll,
    CornerQuartersInner,
}

impl Tiling {
    pub const ALL: [Tiling; 5] = [
        Tiling::WholeSensor,
        Tiling::CentralQuarter,
        Tiling::Cross,
        Tiling::CornerQuartersAll,
        Tiling::CornerQuartersInner,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            Tiling::WholeSensor => "ws",
            Tiling::CentralQuarter => "ce",
            Tiling::Cross => "cr",
            Tiling::CornerQuartersAll => "cq-ad",
            Tiling::CornerQuartersInner => "cq-id",
        }
    }

    /// Detector units per polarity channel for a sensor of side `side_len`.
    pub fn n_p(self, side_len: u16) -> usize {
        tiles(self, side_len)
            .iter()
            .map(|t| t.detectors.len() * t.region.side as usize)
            .sum()
    }
}

impl FromStr for Tiling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ws" | "whole" | "whole-sensor" => Ok(Tiling::WholeSensor),
            "ce" | "central" | "central-quarter" => Ok(Tiling::CentralQuarter),
            "cr" | "cross" => Ok(Tiling::Cross),
            "cq-ad" | "corner-all" => Ok(Tiling::CornerQuartersAll),
            "cq-id" | "corner-inner" => Ok(Tiling::CornerQuartersInner),
            other => Err(Error::Config(format!("unknown tiling {other:?}"))),
        }
    }
}

/// One tiling, or two to three tilings whose outputs are concatenated.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum StrategyKind {
    Single(Tiling),
    Cumulative(Vec<Tiling>),
}

impl StrategyKind {
    pub fn parts(&self) -> Vec<Tiling> {
        match self {
            StrategyKind::Single(t) => vec![*t],
            StrategyKind::Cumulative(v) => v.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let StrategyKind::Cumulative(parts) = self {
            let mut sorted = parts.clone();
            sorted.sort();
            sorted.dedup();
            if !(2..=3).contains(&parts.len()) || sorted.len() != parts.len() {
                return Err(Error::Config(format!(
                    "cumulative strategy needs 2 to 3 distinct tilings, got {self}"
                )));
            }
        }
        Ok(())
    }

    pub fn n_p(&self, side_len: u16) -> usize {
        self.parts().iter().map(|t| t.n_p(side_len)).sum()
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.parts().iter().map(|t| t.short_name()).collect();
        f.write_str(&names.join("+"))
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts = s.split('+').map(|p| p.trim().parse()).collect::<Result<Vec<Tiling>>>()?;
        let kind = if parts.len() == 1 {
            StrategyKind::Single(parts[0])
        } else {
            StrategyKind::Cumulative(parts)
        };
        kind.validate()?;
        Ok(kind)
    }
}

impl TryFrom<String> for StrategyKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<StrategyKind> for String {
    fn from(k: StrategyKind) -> String {
        k.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    pub polarity: PolarityMode,
    pub k: u16,
    pub omega: f64,
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind, polarity: PolarityMode, k: u16, omega: f64) -> Self {
        Self { kind, polarity, k, omega }
    }

    pub fn validate(&self) -> Result<()> {
        self.kind.validate()?;
        if self.k == 0 {
            return Err(Error::Config("diagonal step k must be at least 1".into()));
        }
        if !(self.omega > 0.0) || !self.omega.is_finite() {
            return Err(Error::Config(format!("strength must be positive, got {}", self.omega)));
        }
        Ok(())
    }
}

/// A detector region together with the span of sensor pixels it captures.
/// Captured pixels outside the region (seams of odd-sized corner tilings)
/// are clamped onto its nearest row or column.
#[derive(Clone, Debug, PartialEq)]
pub struct Tile {
    pub region: Region,
    pub detectors: Vec<Side>,
    pub capture_x: (u16, u16),
    pub capture_y: (u16, u16),
}

impl Tile {
    fn plain(region: Region, detectors: Vec<Side>) -> Self {
        let (x0, y0, s) = (region.x0, region.y0, region.side);
        Self {
            region,
            detectors,
            capture_x: (x0, x0 + s),
            capture_y: (y0, y0 + s),
        }
    }

    /// Region-local coordinates of sensor pixel `(x, y)`, if captured.
    pub fn local(&self, x: u16, y: u16) -> Option<(u16, u16)> {
        let inside = |v: u16, (a, b): (u16, u16)| v >= a && v < b;
        if !inside(x, self.capture_x) || !inside(y, self.capture_y) {
            return None;
        }
        let r = &self.region;
        let clamp = |v: u16, o: u16| (v as i32 - o as i32).clamp(0, r.side as i32 - 1) as u16;
        Some((clamp(x, r.x0), clamp(y, r.y0)))
    }
}

/// Tiles of a tiling on a square sensor of side `l`. Quarter tiles have side
/// `floor(l / 2)`.
pub fn tiles(tiling: Tiling, l: u16) -> Vec<Tile> {
    let h = l / 2;
    let q = (l - h) / 2;
    let all = || Side::ALL.to_vec();
    match tiling {
        Tiling::WholeSensor => vec![Tile::plain(Region::new(0, 0, l), all())],
        Tiling::CentralQuarter => vec![Tile::plain(Region::new(q, q, h), all())],
        Tiling::Cross => {
            // Odd sides leave a seam line between the opposite tiles; the
            // top and left tiles take it.
            let mut top = Tile::plain(Region::new(q, 0, h), all());
            top.capture_y.1 = l - h;
            let mut left = Tile::plain(Region::new(0, q, h), all());
            left.capture_x.1 = l - h;
            vec![
                top,
                Tile::plain(Region::new(q, l - h, h), all()),
                left,
                Tile::plain(Region::new(l - h, q, h), all()),
            ]
        }
        Tiling::CornerQuartersAll | Tiling::CornerQuartersInner => {
            let inner = tiling == Tiling::CornerQuartersInner;
            // The far tiles start at l - h; any seam line between h and
            // l - h goes to the near tile.
            let seam = l - h;
            let corner = |right: bool, bottom: bool| {
                let region = Region::new(if right { l - h } else { 0 }, if bottom { l - h } else { 0 }, h);
                let detectors = if inner {
                    vec![
                        if bottom { Side::Top } else { Side::Bottom },
                        if right { Side::Left } else { Side::Right },
                    ]
                } else {
                    all()
                };
                Tile {
                    region,
                    detectors,
                    capture_x: if right { (seam, l) } else { (0, seam) },
                    capture_y: if bottom { (seam, l) } else { (0, seam) },
                }
            };
            vec![corner(false, false), corner(true, false), corner(false, true), corner(true, true)]
        }
    }
}

/// The preprocessing layer: detector banks, their synapse tables and the
/// event routing.
#[derive(Clone, Debug)]
pub struct PreprocessNetwork {
    pub geometry: SensorGeometry,
    pub config: StrategyConfig,
    pub tiles: Vec<Tile>,
    /// One bank per (channel, tile) in channel-major order for single
    /// strategies; concatenated per part for cumulative ones.
    pub banks: Vec<DetectorBank>,
    /// Channel of every output unit.
    pub unit_channel: Vec<u8>,
    pub network: Network,
    /// Detector units per polarity channel.
    pub n_p: usize,
}

impl PreprocessNetwork {
    pub fn channels(&self) -> usize {
        self.config.polarity.channels()
    }

    pub fn n_outputs(&self) -> usize {
        self.network.n_neurons
    }

    /// Input encoding unit of an event.
    pub fn input_unit(&self, e: &Event) -> u32 {
        let c = self.config.polarity.channel_of(e.p);
        (c * self.geometry.pixels() + self.geometry.pixel_index(e.x, e.y)) as u32
    }

    /// Input-to-detector synapses leaving encoding unit `unit`.
    pub fn fan_out(&self, unit: u32) -> usize {
        self.network.tables[INPUT_TABLE].fan_out(unit as usize)
    }

    pub fn census(&self) -> ArchitectureCensus {
        crate::metrics::census_of(self, None)
    }
}

/// Builds the preprocessing layer for a square sensor. `k` is clamped to
/// each tile's side so one grid serves every tiling.
pub fn build_network(geometry: SensorGeometry, config: &StrategyConfig, params: &LifParams) -> Result<PreprocessNetwork> {
    config.validate()?;
    params.validate()?;
    if !geometry.is_square() {
        return Err(Error::Geometry(format!(
            "strategies need a square sensor, got {}x{}",
            geometry.width, geometry.height
        )));
    }
    match &config.kind {
        StrategyKind::Single(t) => build_single(geometry, *t, config, params),
        StrategyKind::Cumulative(parts) => {
            let nets = parts
                .iter()
                .map(|&t| {
                    let mut c = config.clone();
                    c.kind = StrategyKind::Single(t);
                    build_single(geometry, t, &c, params)
                })
                .collect::<Result<Vec<_>>>()?;
            cumulate(&nets)
        }
    }
}

fn build_single(
    geometry: SensorGeometry,
    tiling: Tiling,
    config: &StrategyConfig,
    params: &LifParams,
) -> Result<PreprocessNetwork> {
    let l = geometry.width;
    if l % 2 == 1 && tiling != Tiling::WholeSensor {
        log::warn!(
            "sensor side {l} is odd; {} tiles use side {}",
            tiling.short_name(),
            l / 2
        );
    }
    let tiles = tiles(tiling, l);
    let channels = config.polarity.channels();
    let n_pixels = geometry.pixels();
    let n_p: usize = tiles.iter().map(|t| t.detectors.len() * t.region.side as usize).sum();

    // Sensor pixels landing on each local pixel of each tile.
    let sources: Vec<Vec<Vec<u32>>> = tiles
        .iter()
        .map(|t| {
            let s = t.region.side as usize;
            let mut m = vec![Vec::new(); s * s];
            for y in t.capture_y.0..t.capture_y.1 {
                for x in t.capture_x.0..t.capture_x.1 {
                    if let Some((lx, ly)) = t.local(x, y) {
                        m[ly as usize * s + lx as usize].push(geometry.pixel_index(x, y) as u32);
                    }
                }
            }
            m
        })
        .collect();

    let mut banks = Vec::new();
    let mut input = Vec::new();
    let mut wta = Vec::new();
    for c in 0..channels {
        let mut base = (c * n_p) as u32;
        for (ti, tile) in tiles.iter().enumerate() {
            let side = tile.region.side;
            let k = config.k.min(side);
            let bank = DetectorBank {
                region: tile.region,
                detectors: tile.detectors.clone(),
                base,
            };
            for (d, &det) in tile.detectors.iter().enumerate() {
                let pattern = build_pattern(side, det, k, config.omega)?;
                for idx in 0..side {
                    let dst = bank.unit(d, idx);
                    let w = pattern.weight(idx as usize);
                    for &p in &pattern.pixels[idx as usize] {
                        for &src in &sources[ti][p as usize] {
                            input.push(Synapse {
                                src: (c * n_pixels) as u32 + src,
                                dst,
                                weight: w,
                                delay_ms: params.delay_ms,
                                sign: Sign::Excitatory,
                            });
                        }
                    }
                }
                wta.extend(build_wta(bank.unit(d, 0), side as u32, params.w_wta, params.delay_ms));
            }
            base += bank.n_units() as u32;
            banks.push(bank);
        }
    }
    let n_out = n_p * channels;
    let n_inputs = n_pixels * channels;
    let tables = vec![
        SynapseTable::from_entries("input", SourceKind::Input, n_inputs, input)?,
        SynapseTable::from_entries("wta", SourceKind::Neuron, n_out, wta)?,
    ];
    let network = Network::new(n_inputs, n_out, params.clone(), tables, crate::lif::DEFAULT_DT_US)?;
    let unit_channel = (0..channels).flat_map(|c| std::iter::repeat(c as u8).take(n_p)).collect();
    Ok(PreprocessNetwork {
        geometry,
        config: config.clone(),
        tiles,
        banks,
        unit_channel,
        network,
        n_p,
    })
}

/// Concatenates the output spaces of networks sharing geometry, polarity
/// mode, step and strength.
pub fn cumulate(nets: &[PreprocessNetwork]) -> Result<PreprocessNetwork> {
    let first = nets.first().ok_or_else(|| Error::Config("nothing to cumulate".into()))?;
    if nets.len() == 1 {
        return Ok(first.clone());
    }
    for n in &nets[1..] {
        if n.geometry != first.geometry || n.config.polarity != first.config.polarity {
            return Err(Error::Config(
                "cumulated networks must share geometry and polarity mode".into(),
            ));
        }
        if n.config.k != first.config.k || n.config.omega != first.config.omega {
            return Err(Error::Config("cumulated networks must share k and omega".into()));
        }
    }
    let parts: Vec<Tiling> = nets.iter().flat_map(|n| n.config.kind.parts()).collect();
    let kind = StrategyKind::Cumulative(parts);
    kind.validate()?;

    let n_inputs = first.network.n_inputs;
    let mut input = Vec::new();
    let mut wta = Vec::new();
    let mut banks = Vec::new();
    let mut tiles = Vec::new();
    let mut unit_channel = Vec::new();
    let mut offset = 0u32;
    for n in nets {
        let shift = |mut s: Synapse, src_too: bool| {
            s.dst += offset;
            if src_too {
                s.src += offset;
            }
            s
        };
        input.extend(n.network.tables[INPUT_TABLE].iter().map(|s| shift(s, false)));
        wta.extend(n.network.tables[WTA_TABLE].iter().map(|s| shift(s, true)));
        banks.extend(n.banks.iter().cloned().map(|mut b| {
            b.base += offset;
            b
        }));
        tiles.extend(n.tiles.iter().cloned());
        unit_channel.extend_from_slice(&n.unit_channel);
        offset += n.n_outputs() as u32;
    }
    let n_out = offset as usize;
    let tables = vec![
        SynapseTable::from_entries("input", SourceKind::Input, n_inputs, input)?,
        SynapseTable::from_entries("wta", SourceKind::Neuron, n_out, wta)?,
    ];
    let network = Network::new(n_inputs, n_out, first.network.params.clone(), tables, first.network.dt_us)?;
    let mut config = first.config.clone();
    config.kind = kind;
    Ok(PreprocessNetwork {
        geometry: first.geometry,
        config,
        tiles,
        banks,
        unit_channel,
        network,
        n_p: nets.iter().map(|n| n.n_p).sum(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessOutput {
    /// Detector spikes over a one-row sensor of `n_outputs` units.
    pub sample: EventSample,
    pub record: SpikeRecord,
    /// Input-to-detector deliveries.
    pub se_p: u64,
    pub wta_events: u64,
}

/// Runs one sample through the preprocessing layer.
pub fn preprocess(sample: &EventSample, net: &PreprocessNetwork) -> Result<PreprocessOutput> {
    if sample.geometry != net.geometry {
        return Err(Error::Geometry(format!(
            "sample is {}x{} but the network expects {}x{}",
            sample.geometry.width, sample.geometry.height, net.geometry.width, net.geometry.height
        )));
    }
    let input: Vec<InputSpike> = sample
        .events
        .iter()
        .map(|e| InputSpike {
            t_us: e.t,
            unit: net.input_unit(e),
        })
        .collect();
    let t_end = sample.duration_us.max(1);
    let record = net.network.run(&input, t_end)?;
    let split = net.config.polarity == PolarityMode::Split;
    let events = record
        .spikes
        .iter()
        .map(|&(u, t)| {
            let p = if split {
                Polarity::from_bit(net.unit_channel[u as usize])
            } else {
                Polarity::On
            };
            Event::new(u as u16, 0, t, p)
        })
        .collect();
    let out = EventSample::new(
        events,
        SensorGeometry::unit_row(net.n_outputs() as u16),
        sample.label,
        sample.duration_us,
    )?;
    Ok(PreprocessOutput {
        se_p: record.table_events[INPUT_TABLE],
        wta_events: record.table_events[WTA_TABLE],
        sample: out,
        record,
    })
}

/// Preprocesses a batch of samples, one simulation per sample.
pub fn preprocess_all(samples: &[EventSample], net: &PreprocessNetwork, exec: Execution) -> Result<Vec<PreprocessOutput>> {
    map_slice(samples, exec, |s| preprocess(s, net)).into_iter().collect()
}

/// JSON sidecar written next to preprocessed samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub schema_version: u32,
    pub strategy: String,
    pub polarity: PolarityMode,
    pub k: u16,
    pub omega: f64,
    pub sensor_side: u16,
    pub n_p: usize,
    pub n_outputs: usize,
    pub census: ArchitectureCensus,
    pub samples: usize,
    pub se_p_total: u64,
    pub wta_events_total: u64,
    pub output_events_total: u64,
    pub dataset_hash: Option<String>,
}

impl Sidecar {
    pub fn new(net: &PreprocessNetwork, outputs: &[PreprocessOutput], dataset_hash: Option<String>) -> Self {
        Self {
            schema_version: 1,
            strategy: net.config.kind.to_string(),
            polarity: net.config.polarity,
            k: net.config.k,
            omega: net.config.omega,
            sensor_side: net.geometry.width,
            n_p: net.n_p,
            n_outputs: net.n_outputs(),
            census: net.census(),
            samples: outputs.len(),
            se_p_total: outputs.iter().map(|o| o.se_p).sum(),
            wta_events_total: outputs.iter().map(|o| o.wta_events).sum(),
            output_events_total: outputs.iter().map(|o| o.sample.len() as u64).sum(),
            dataset_hash,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}
