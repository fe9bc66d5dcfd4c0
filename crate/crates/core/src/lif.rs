//! Fixed-timestep simulator for conductance-based LIF populations with
//! sparse, delayed, signed synapses.
//!
//! Membrane equation (per neuron, between spikes):
//!
//! ```text
//! c_m dv/dt = (c_m / tau_m)(v_rest - v) + g_e (E_e - v) + g_i (E_i - v) + i_offset
//! ```
//!
//! Units: mV, ms, nF, µS, nA. Conductances are held constant over a step,
//! which makes the voltage update an exact exponential relaxation toward the
//! step's steady state.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifParams {
    pub v_rest: f64,
    pub v_reset: f64,
    pub v_thresh: f64,
    pub tau_refrac: f64,
    pub tau_m: f64,
    pub tau_syn_e: f64,
    pub tau_syn_i: f64,
    pub cm: f64,
    pub e_rev_e: f64,
    pub e_rev_i: f64,
    pub i_offset: f64,
    /// Lateral-inhibition weight inside a detector.
    pub w_wta: f64,
    /// Excitatory and inhibitory synaptic delay.
    pub delay_ms: f64,
}

impl Default for LifParams {
    fn default() -> Self {
        Self {
            v_rest: -60.0,
            v_reset: -60.0,
            v_thresh: -30.0,
            tau_refrac: 0.1,
            tau_m: 2.5,
            tau_syn_e: 5.0,
            tau_syn_i: 5.0,
            cm: 1.0,
            e_rev_e: 0.0,
            e_rev_i: -70.0,
            i_offset: 0.0,
            w_wta: 1.0,
            delay_ms: 1.0,
        }
    }
}

impl LifParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.v_reset <= self.v_rest
            && self.v_rest < self.v_thresh
            && self.tau_m > 0.0
            && self.tau_syn_e > 0.0
            && self.tau_syn_i > 0.0
            && self.tau_refrac > 0.0
            && self.cm > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("inconsistent LIF parameters: {self:?}")))
        }
    }
}

/// Default simulation resolution.
pub const DEFAULT_DT_US: u64 = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Excitatory,
    Inhibitory,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SourceKind {
    /// Encoding units driven directly by input events.
    Input,
    /// LIF neurons of the population.
    Neuron,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Synapse {
    pub src: u32,
    pub dst: u32,
    pub weight: f64,
    pub delay_ms: f64,
    pub sign: Sign,
}

/// Synapses grouped by source (CSR layout) for fan-out traversal.
#[derive(Clone, Debug, PartialEq)]
pub struct SynapseTable {
    pub name: String,
    pub source: SourceKind,
    offsets: Vec<usize>,
    dst: Vec<u32>,
    weight: Vec<f64>,
    delay_ms: Vec<f64>,
    sign: Vec<Sign>,
}

impl SynapseTable {
    /// Groups `entries` by source; entries of one source keep their order.
    pub fn from_entries(
        name: impl Into<String>,
        source: SourceKind,
        n_sources: usize,
        mut entries: Vec<Synapse>,
    ) -> Result<Self> {
        if let Some(s) = entries.iter().find(|s| s.src as usize >= n_sources) {
            return Err(Error::Config(format!(
                "synapse source {} out of range ({n_sources} sources)",
                s.src
            )));
        }
        if let Some(s) = entries.iter().find(|s| !(s.weight > 0.0) || !s.weight.is_finite()) {
            return Err(Error::Config(format!(
                "synapse {}->{} has non-positive weight {}",
                s.src, s.dst, s.weight
            )));
        }
        entries.sort_by_key(|s| s.src);
        let mut offsets = vec![0usize; n_sources + 1];
        for s in &entries {
            offsets[s.src as usize + 1] += 1;
        }
        for i in 0..n_sources {
            offsets[i + 1] += offsets[i];
        }
        Ok(Self {
            name: name.into(),
            source,
            offsets,
            dst: entries.iter().map(|s| s.dst).collect(),
            weight: entries.iter().map(|s| s.weight).collect(),
            delay_ms: entries.iter().map(|s| s.delay_ms).collect(),
            sign: entries.iter().map(|s| s.sign).collect(),
        })
    }

    pub fn empty(name: impl Into<String>, source: SourceKind, n_sources: usize) -> Self {
        Self::from_entries(name, source, n_sources, Vec::new()).expect("empty table is valid")
    }

    pub fn n_sources(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn len(&self) -> usize {
        self.dst.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dst.is_empty()
    }

    #[inline]
    pub fn fan_out(&self, src: usize) -> usize {
        self.offsets[src + 1] - self.offsets[src]
    }

    pub fn outgoing(&self, src: usize) -> impl Iterator<Item = Synapse> + '_ {
        (self.offsets[src]..self.offsets[src + 1]).map(move |i| Synapse {
            src: src as u32,
            dst: self.dst[i],
            weight: self.weight[i],
            delay_ms: self.delay_ms[i],
            sign: self.sign[i],
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = Synapse> + '_ {
        (0..self.n_sources()).flat_map(move |s| self.outgoing(s))
    }

    /// Incoming synapse count per target for `n_targets` targets.
    pub fn fan_in(&self, n_targets: usize) -> Vec<usize> {
        let mut f = vec![0; n_targets];
        for &d in &self.dst {
            f[d as usize] += 1;
        }
        f
    }

    fn max_delay_ms(&self) -> f64 {
        self.delay_ms.iter().copied().fold(0.0, f64::max)
    }
}

/// Per-neuron state of one population.
#[derive(Clone, Debug)]
pub struct LifPopulation {
    pub params: LifParams,
    pub v: Vec<f64>,
    pub g_e: Vec<f64>,
    pub g_i: Vec<f64>,
    /// Remaining refractory steps.
    pub refractory: Vec<u32>,
}

/// A conductance increment arriving at a neuron.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Delivery {
    pub target: u32,
    pub weight: f64,
    pub sign: Sign,
}

impl LifPopulation {
    pub fn new(n: usize, params: LifParams) -> Self {
        Self {
            v: vec![params.v_rest; n],
            g_e: vec![0.0; n],
            g_i: vec![0.0; n],
            refractory: vec![0; n],
            params,
        }
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    /// Advances every neuron by `dt_ms`, pushing the indices of neurons that
    /// fired into `spikes` in ascending order.
    pub fn step(&mut self, deliveries: &[Delivery], dt_ms: f64, spikes: &mut Vec<u32>) -> Result<()> {
        let p = &self.params;
        for d in deliveries {
            match d.sign {
                Sign::Excitatory => self.g_e[d.target as usize] += d.weight,
                Sign::Inhibitory => self.g_i[d.target as usize] += d.weight,
            }
        }
        let decay_e = (-dt_ms / p.tau_syn_e).exp();
        let decay_i = (-dt_ms / p.tau_syn_i).exp();
        let g_leak = p.cm / p.tau_m;
        let refrac_steps = (p.tau_refrac / dt_ms).round().max(1.0) as u32;

        for n in 0..self.v.len() {
            self.g_e[n] *= decay_e;
            self.g_i[n] *= decay_i;
            if self.refractory[n] > 0 {
                self.v[n] = p.v_reset;
                self.refractory[n] -= 1;
                continue;
            }
            let (ge, gi) = (self.g_e[n], self.g_i[n]);
            let g_tot = g_leak + ge + gi;
            let v_inf = (g_leak * p.v_rest + ge * p.e_rev_e + gi * p.e_rev_i + p.i_offset) / g_tot;
            let v = v_inf + (self.v[n] - v_inf) * (-dt_ms * g_tot / p.cm).exp();
            if !v.is_finite() {
                return Err(Error::Diverged(format!(
                    "neuron {n}: v={v} g_e={ge} g_i={gi}"
                )));
            }
            if v >= p.v_thresh {
                self.v[n] = p.v_reset;
                self.refractory[n] = refrac_steps;
                spikes.push(n as u32);
            } else {
                self.v[n] = v;
            }
        }
        Ok(())
    }
}

/// A spike injected into an input (encoding) unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InputSpike {
    pub t_us: u64,
    pub unit: u32,
}

/// Output of a run: neuron spikes in emission order plus a synaptic-event
/// counter per table (one event = one spike crossing one synapse).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SpikeRecord {
    pub spikes: Vec<(u32, u64)>,
    pub table_events: Vec<u64>,
}

impl SpikeRecord {
    pub fn counts(&self, n_units: usize) -> Vec<u32> {
        let mut c = vec![0u32; n_units];
        for &(u, _) in &self.spikes {
            c[u as usize] += 1;
        }
        c
    }

    /// CSV dump with columns `unit,time_us`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "unit,time_us")?;
        for (u, t) in &self.spikes {
            writeln!(w, "{u},{t}")?;
        }
        Ok(())
    }
}

/// A population plus the synapse tables feeding it.
#[derive(Clone, Debug)]
pub struct Network {
    pub n_inputs: usize,
    pub n_neurons: usize,
    pub params: LifParams,
    pub tables: Vec<SynapseTable>,
    pub dt_us: u64,
}

impl Network {
    pub fn new(
        n_inputs: usize,
        n_neurons: usize,
        params: LifParams,
        tables: Vec<SynapseTable>,
        dt_us: u64,
    ) -> Result<Self> {
        params.validate()?;
        if dt_us == 0 {
            return Err(Error::Config("timestep must be positive".into()));
        }
        for t in &tables {
            let expected = match t.source {
                SourceKind::Input => n_inputs,
                SourceKind::Neuron => n_neurons,
            };
            if t.n_sources() != expected {
                return Err(Error::Config(format!(
                    "table {:?} has {} sources, expected {expected}",
                    t.name,
                    t.n_sources()
                )));
            }
            if let Some(d) = t.dst.iter().find(|&&d| d as usize >= n_neurons) {
                return Err(Error::Config(format!(
                    "table {:?} targets missing neuron {d}",
                    t.name
                )));
            }
            let dt_ms = dt_us as f64 / 1000.0;
            if let Some(d) = t.delay_ms.iter().find(|&&d| d + 1e-9 < dt_ms) {
                return Err(Error::Config(format!(
                    "table {:?} has delay {d} ms below the {dt_ms} ms timestep",
                    t.name
                )));
            }
        }
        Ok(Self {
            n_inputs,
            n_neurons,
            params,
            tables,
            dt_us,
        })
    }

    pub fn dt_ms(&self) -> f64 {
        self.dt_us as f64 / 1000.0
    }

    pub fn delay_steps(&self, delay_ms: f64) -> usize {
        ((delay_ms / self.dt_ms()).round() as usize).max(1)
    }

    /// Simulates `[0, t_end_us)`. `input` must be sorted by time; spikes at
    /// or after `t_end_us` are rejected.
    pub fn run(&self, input: &[InputSpike], t_end_us: u64) -> Result<SpikeRecord> {
        if let Some(s) = input.iter().find(|s| s.t_us >= t_end_us) {
            return Err(Error::Config(format!(
                "input spike at {} µs is not before t_end {t_end_us}",
                s.t_us
            )));
        }
        if let Some(s) = input.iter().find(|s| s.unit as usize >= self.n_inputs) {
            return Err(Error::Config(format!("input unit {} out of range", s.unit)));
        }
        if input.windows(2).any(|w| w[1].t_us < w[0].t_us) {
            return Err(Error::Config("input spikes must be time-ordered".into()));
        }

        let dt_ms = self.dt_ms();
        let max_delay = self
            .tables
            .iter()
            .map(|t| self.delay_steps(t.max_delay_ms()))
            .max()
            .unwrap_or(1);
        let slots = max_delay + 1;
        let mut queue: Vec<Vec<Delivery>> = vec![Vec::new(); slots];
        let mut pop = LifPopulation::new(self.n_neurons, self.params.clone());
        let mut record = SpikeRecord {
            spikes: Vec::new(),
            table_events: vec![0; self.tables.len()],
        };
        let n_steps = t_end_us.div_ceil(self.dt_us) as usize;
        let mut next_input = 0;
        let mut fired = Vec::new();

        for step in 0..n_steps {
            let due = std::mem::take(&mut queue[step % slots]);
            fired.clear();
            pop.step(&due, dt_ms, &mut fired)?;
            let mut recycled = due;
            recycled.clear();
            queue[step % slots] = recycled;

            let t_us = step as u64 * self.dt_us;
            while next_input < input.len() && input[next_input].t_us / self.dt_us == step as u64 {
                let u = input[next_input].unit as usize;
                self.fan_out(SourceKind::Input, u, step, slots, &mut queue, &mut record);
                next_input += 1;
            }
            for &n in &fired {
                record.spikes.push((n, t_us));
                self.fan_out(SourceKind::Neuron, n as usize, step, slots, &mut queue, &mut record);
            }
        }
        Ok(record)
    }

    fn fan_out(
        &self,
        kind: SourceKind,
        src: usize,
        step: usize,
        slots: usize,
        queue: &mut [Vec<Delivery>],
        record: &mut SpikeRecord,
    ) {
        for (ti, table) in self.tables.iter().enumerate() {
            if table.source != kind {
                continue;
            }
            record.table_events[ti] += table.fan_out(src) as u64;
            for s in table.outgoing(src) {
                let at = step + self.delay_steps(s.delay_ms);
                queue[at % slots].push(Delivery {
                    target: s.dst,
                    weight: s.weight,
                    sign: s.sign,
                });
            }
        }
    }
}
