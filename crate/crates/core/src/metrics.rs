//! Synaptic-event accounting, efficiency and the architecture census.
//!
//! SE counts one event per spike per synapse crossed. For a preprocessed
//! pipeline `SE = SE_P + E_P * n_C`, with `SE_P` the input-to-detector
//! deliveries per sample and `E_P` the mean detector spikes per sample, each
//! of which reaches all `n_C` classifier units. Without preprocessing
//! `SE = E * n_C`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{EventSample, PolarityMode};
use crate::strategies::{PreprocessNetwork, PreprocessOutput, INPUT_TABLE, WTA_TABLE};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureCensus {
    pub neurons: usize,
    pub preprocess_neurons: usize,
    pub classifier_neurons: usize,
    pub input_synapses: usize,
    pub wta_synapses: usize,
    pub classifier_synapses: usize,
    pub synapses: usize,
    pub max_fan_in: usize,
    pub mean_fan_in: f64,
}

/// Census of a preprocessing layer, optionally followed by a fully
/// connected classifier of `n_labels` units. Input encoding units are not
/// neurons.
pub fn census_of(net: &PreprocessNetwork, n_labels: Option<usize>) -> ArchitectureCensus {
    let n = net.n_outputs();
    let input = &net.network.tables[INPUT_TABLE];
    let wta = &net.network.tables[WTA_TABLE];
    let mut fan_in = input.fan_in(n);
    for (f, w) in fan_in.iter_mut().zip(wta.fan_in(n)) {
        *f += w;
    }
    let labels = n_labels.unwrap_or(0);
    fan_in.extend(std::iter::repeat(n).take(labels));
    let classifier_synapses = n * labels;
    let synapses = input.len() + wta.len() + classifier_synapses;
    ArchitectureCensus {
        neurons: n + labels,
        preprocess_neurons: n,
        classifier_neurons: labels,
        input_synapses: input.len(),
        wta_synapses: wta.len(),
        classifier_synapses,
        synapses,
        max_fan_in: fan_in.iter().copied().max().unwrap_or(0),
        mean_fan_in: if fan_in.is_empty() {
            0.0
        } else {
            fan_in.iter().sum::<usize>() as f64 / fan_in.len() as f64
        },
    }
}

/// Census of the classifier fed directly with sensor events.
pub fn census_no_preprocessing(side_len: u16, polarity: PolarityMode, n_labels: usize) -> ArchitectureCensus {
    let d = side_len as usize * side_len as usize * polarity.channels();
    ArchitectureCensus {
        neurons: n_labels,
        preprocess_neurons: 0,
        classifier_neurons: n_labels,
        input_synapses: 0,
        wta_synapses: 0,
        classifier_synapses: d * n_labels,
        synapses: d * n_labels,
        max_fan_in: if n_labels > 0 { d } else { 0 },
        mean_fan_in: if n_labels > 0 { d as f64 } else { 0.0 },
    }
}

/// Mean per-sample synaptic activity of one evaluated pipeline.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub samples: usize,
    pub se_p: f64,
    pub se_c: f64,
    pub se: f64,
    /// Mean events per sample fed to the classifier.
    pub events_in: f64,
    /// Mean raw sensor events per sample.
    pub events_raw: f64,
    pub n_c: usize,
    pub wta_events: f64,
}

/// Per-unit event totals times per-unit fan-out, in integers.
pub fn se_formula(unit_counts: &[u64], fan_out: impl Fn(usize) -> usize) -> u64 {
    unit_counts
        .iter()
        .enumerate()
        .map(|(u, &c)| c * fan_out(u) as u64)
        .sum()
}

/// SE of a preprocessed pipeline over `inputs` and their `outputs`. The
/// simulator's delivery counter is checked against the per-pixel fan-out
/// formula and any mismatch is an error.
pub fn count_se(
    net: &PreprocessNetwork,
    inputs: &[EventSample],
    outputs: &[PreprocessOutput],
    n_c: usize,
) -> Result<EnergyReport> {
    if inputs.len() != outputs.len() {
        return Err(Error::Config(format!(
            "{} inputs but {} outputs",
            inputs.len(),
            outputs.len()
        )));
    }
    let mut counts = vec![0u64; net.network.n_inputs];
    for s in inputs {
        for e in &s.events {
            counts[net.input_unit(e) as usize] += 1;
        }
    }
    let measured: u64 = outputs.iter().map(|o| o.se_p).sum();
    let formula = se_formula(&counts, |u| net.fan_out(u as u32));
    if measured != formula {
        return Err(Error::Accounting { measured, formula });
    }
    let n = inputs.len();
    let mean = |v: u64| if n == 0 { 0.0 } else { v as f64 / n as f64 };
    let out_events: u64 = outputs.iter().map(|o| o.sample.len() as u64).sum();
    let raw: u64 = inputs.iter().map(|s| s.len() as u64).sum();
    let se_p = mean(measured);
    let events_in = mean(out_events);
    let se_c = events_in * n_c as f64;
    Ok(EnergyReport {
        samples: n,
        se_p,
        se_c,
        se: se_p + se_c,
        events_in,
        events_raw: mean(raw),
        n_c,
        wta_events: mean(outputs.iter().map(|o| o.wta_events).sum()),
    })
}

/// SE of the classifier fed directly with `inputs`.
pub fn count_se_no_preprocessing(inputs: &[EventSample], n_c: usize) -> EnergyReport {
    let n = inputs.len();
    let raw: u64 = inputs.iter().map(|s| s.len() as u64).sum();
    let events = if n == 0 { 0.0 } else { raw as f64 / n as f64 };
    EnergyReport {
        samples: n,
        se_p: 0.0,
        se_c: events * n_c as f64,
        se: events * n_c as f64,
        events_in: events,
        events_raw: events,
        n_c,
        wta_events: 0.0,
    }
}

/// Fraction of the baseline accuracy below which efficiency is discarded.
pub const GATE_FRACTION: f64 = 2.0 / 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyResult {
    pub accuracy: f64,
    pub se: f64,
    /// `None` when SE is zero.
    pub efficiency: Option<f64>,
    pub gate: f64,
    pub admissible: bool,
}

pub fn efficiency(accuracy: f64, se: f64, baseline_accuracy: f64) -> EfficiencyResult {
    let gate = GATE_FRACTION * baseline_accuracy;
    EfficiencyResult {
        accuracy,
        se,
        efficiency: (se > 0.0).then(|| accuracy / se),
        gate,
        admissible: accuracy >= gate,
    }
}
