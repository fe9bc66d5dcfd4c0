//! Dataset descriptions, the N-MNIST reader and the manifest written by
//! `eventline ingest`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::event::{Event, EventSample, Polarity, SensorGeometry};
use crate::format;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DatasetName {
    PokerDvs,
    NMnist,
    Dvs128Gesture,
    Synthetic,
}

impl DatasetName {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetName::PokerDvs => "PokerDVS",
            DatasetName::NMnist => "N-MNIST",
            DatasetName::Dvs128Gesture => "DVS128Gesture",
            DatasetName::Synthetic => "Synthetic",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Per-dataset sensor and classifier parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: DatasetName,
    pub geometry: SensorGeometry,
    pub n_labels: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub keep_us: u64,
    pub batch_size: usize,
    pub threshold: f64,
}

impl DatasetSpec {
    pub fn poker_dvs() -> Self {
        Self {
            name: DatasetName::PokerDvs,
            geometry: SensorGeometry { width: 35, height: 35 },
            n_labels: 4,
            train_samples: 48,
            test_samples: 12,
            keep_us: 10_000,
            batch_size: 8,
            threshold: 5.0,
        }
    }

    pub fn n_mnist() -> Self {
        Self {
            name: DatasetName::NMnist,
            geometry: SensorGeometry { width: 34, height: 34 },
            n_labels: 10,
            train_samples: 60_000,
            test_samples: 10_000,
            keep_us: 10_000,
            batch_size: 128,
            threshold: 25.0,
        }
    }

    pub fn dvs128_gesture() -> Self {
        Self {
            name: DatasetName::Dvs128Gesture,
            geometry: SensorGeometry { width: 128, height: 128 },
            n_labels: 11,
            train_samples: 1078,
            test_samples: 264,
            keep_us: 1_000_000,
            batch_size: 128,
            threshold: 15.0,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "pokerdvs" | "poker-dvs" | "poker_dvs" => Ok(Self::poker_dvs()),
            "nmnist" | "n-mnist" | "n_mnist" => Ok(Self::n_mnist()),
            "dvs128gesture" | "dvs128-gesture" | "gesture" => Ok(Self::dvs128_gesture()),
            other => Err(Error::Config(format!("unknown dataset {other:?}"))),
        }
    }
}

/// Decodes an N-MNIST `.bin` stream: 40-bit records, byte0 = x, byte1 = y,
/// bit 7 of byte2 = polarity, remaining 23 bits = timestamp in µs.
pub fn decode_nmnist(bytes: &[u8], label: Option<u32>) -> Result<EventSample> {
    if bytes.len() % 5 != 0 {
        return Err(Error::Parse(format!(
            "N-MNIST stream length {} is not a multiple of 5",
            bytes.len()
        )));
    }
    let geometry = DatasetSpec::n_mnist().geometry;
    let mut events: Vec<Event> = bytes
        .chunks_exact(5)
        .map(|r| Event {
            x: r[0] as u16,
            y: r[1] as u16,
            p: Polarity::from_bit(r[2] >> 7),
            t: (((r[2] & 0x7f) as u64) << 16) | ((r[3] as u64) << 8) | r[4] as u64,
        })
        .collect();
    // Some recordings have a timestamp wrap at the very end; keep the order stable.
    events.sort_by_key(|e| e.t);
    EventSample::new(events, geometry, label, 0)
}

pub fn encode_nmnist(sample: &EventSample) -> Vec<u8> {
    let mut out = Vec::with_capacity(sample.events.len() * 5);
    for e in &sample.events {
        out.push(e.x as u8);
        out.push(e.y as u8);
        out.push(((e.p as u8) << 7) | ((e.t >> 16) & 0x7f) as u8);
        out.push((e.t >> 8) as u8);
        out.push(e.t as u8);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleFormat {
    Canonical,
    Nmnist,
}

pub fn load_sample(path: &Path, format: SampleFormat, label: Option<u32>) -> Result<EventSample> {
    let bytes = fs::read(path)?;
    match format {
        SampleFormat::Canonical => format::decode(&bytes, label),
        SampleFormat::Nmnist => decode_nmnist(&bytes, label),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub label: u32,
    pub split: Split,
    pub event_count: usize,
    pub duration_us: u64,
}

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub dataset: DatasetSpec,
    /// Where the samples came from (original download, converter, generator seed).
    pub provenance: String,
    pub samples: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(dataset: DatasetSpec, provenance: impl Into<String>) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            dataset,
            provenance: provenance.into(),
            samples: Vec::new(),
        }
    }

    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("manifest serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let m: Manifest = serde_json::from_slice(&fs::read(path)?)?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Parse(format!(
                "unsupported manifest schema_version {}",
                m.schema_version
            )));
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    /// Loads all samples of a split; paths are relative to `root`.
    pub fn load_split(&self, root: &Path, split: Split) -> Result<Vec<EventSample>> {
        self.samples
            .iter()
            .filter(|s| s.split == split)
            .map(|s| format::read_sample(&root.join(&s.path), Some(s.label)))
            .collect()
    }
}

/// Writes `samples` as canonical files under `out_dir/<split>/` and records
/// them in the manifest.
pub fn write_split(
    manifest: &mut Manifest,
    out_dir: &Path,
    split: Split,
    samples: &[EventSample],
) -> Result<()> {
    let sub = match split {
        Split::Train => "train",
        Split::Test => "test",
    };
    fs::create_dir_all(out_dir.join(sub))?;
    for (i, s) in samples.iter().enumerate() {
        let rel: PathBuf = [sub, &format!("{i:06}.evt")].iter().collect();
        format::write_sample(&out_dir.join(&rel), s)?;
        manifest.samples.push(ManifestEntry {
            path: rel.to_string_lossy().into_owned(),
            label: s.label.unwrap_or(0),
            split,
            event_count: s.events.len(),
            duration_us: s.duration_us,
        });
    }
    Ok(())
}

/// Converts an N-MNIST directory (`Train/<digit>/*.bin`, `Test/<digit>/*.bin`)
/// into canonical files plus a manifest.
pub fn ingest_nmnist(in_dir: &Path, out_dir: &Path) -> Result<Manifest> {
    let mut manifest = Manifest::new(
        DatasetSpec::n_mnist(),
        format!("nmnist:{}", in_dir.display()),
    );
    for (dir, split) in [("Train", Split::Train), ("Test", Split::Test)] {
        let mut samples = Vec::new();
        for label in 0..10u32 {
            let class_dir = in_dir.join(dir).join(label.to_string());
            if !class_dir.is_dir() {
                continue;
            }
            let mut files: Vec<PathBuf> = fs::read_dir(&class_dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "bin"))
                .collect();
            files.sort();
            for f in files {
                samples.push(load_sample(&f, SampleFormat::Nmnist, Some(label))?);
            }
        }
        write_split(&mut manifest, out_dir, split, &samples)?;
    }
    if manifest.samples.is_empty() {
        return Err(Error::Parse(format!(
            "no N-MNIST samples found under {}",
            in_dir.display()
        )));
    }
    manifest.write(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}
