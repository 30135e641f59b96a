//! Analytical latency and energy model of a CPU with an IMAC co-processor
//! against the CPU-only baseline, and the throughput model of a standalone
//! IMAC network.
//!
//! The default cost table is a set of placeholders of plausible magnitude
//! for a mobile core. Absolute joules and cycles from it are not
//! measurements; [`calibrate`] is the path to results that match observed
//! aggregate speedup and energy figures.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::ImacTopology;
use crate::pipeline::TRIT_CAPACITY;
use crate::training::{CnnSpec, FeatureLayer};

/// Access counts per memory level for one layer.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryAccesses {
    pub l1: f64,
    pub l2: f64,
    pub llc: f64,
    pub dram: f64,
}

impl MemoryAccesses {
    fn scaled(self, k: f64) -> Self {
        Self {
            l1: self.l1 * k,
            l2: self.l2 * k,
            llc: self.llc * k,
            dram: self.dram * k,
        }
    }

    fn values(&self) -> [f64; 4] {
        [self.l1, self.l2, self.llc, self.dram]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerProfile {
    pub name: String,
    /// Fully-connected layers are the ones offloaded to the IMAC.
    pub fc: bool,
    /// Multiply-accumulates, or elementwise operations for activation and
    /// pooling layers.
    pub macs: f64,
    /// Baseline CPU cycles spent in the layer.
    pub cpu_cycles: f64,
    pub memory: MemoryAccesses,
}

/// Per-inference workload of one CNN on the baseline CPU and the extra
/// terms introduced by offloading its FC layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadProfile {
    pub name: String,
    pub layers: Vec<LayerProfile>,
    /// Bytes written to and read from the IMAC buffer.
    pub transfer_bytes: f64,
    /// CPU cycles spent on buffer stores, loads and ready handshakes.
    pub transfer_cycles: f64,
    /// IMAC latency in CPU cycles.
    pub imac_latency_cycles: f64,
}

fn check_nonnegative(what: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{what} must be finite and nonnegative, got {v}")))
    }
}

impl WorkloadProfile {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidParameter(format!("profile `{}` has no layers", self.name)));
        }
        for l in &self.layers {
            check_nonnegative(&format!("{} MACs", l.name), l.macs)?;
            check_nonnegative(&format!("{} cycles", l.name), l.cpu_cycles)?;
            for v in l.memory.values() {
                check_nonnegative(&format!("{} memory accesses", l.name), v)?;
            }
        }
        check_nonnegative("transfer bytes", self.transfer_bytes)?;
        check_nonnegative("transfer cycles", self.transfer_cycles)?;
        check_nonnegative("IMAC latency", self.imac_latency_cycles)
    }

    fn cycles(&self, fc: bool) -> f64 {
        self.layers.iter().filter(|l| l.fc == fc).map(|l| l.cpu_cycles).sum()
    }

    pub fn baseline_cycles(&self) -> f64 {
        self.layers.iter().map(|l| l.cpu_cycles).sum()
    }

    /// Cycles of the layers that stay on the CPU.
    pub fn conv_cycles(&self) -> f64 {
        self.cycles(false)
    }

    pub fn fc_cycles(&self) -> f64 {
        self.cycles(true)
    }

    pub fn cpu_imac_cycles(&self) -> f64 {
        self.conv_cycles() + self.transfer_cycles + self.imac_latency_cycles
    }

    /// Share of baseline time spent in FC layers.
    pub fn fc_time_fraction(&self) -> f64 {
        self.fc_cycles() / self.baseline_cycles()
    }
}

/// Per-event energies and rates. Every default is a placeholder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostModel {
    /// Core energy per active cycle (J).
    pub cpu_energy_per_cycle: f64,
    /// Energy per access of L1, L2 and last-level cache (J).
    pub l1_energy_per_access: f64,
    pub l2_energy_per_access: f64,
    pub llc_energy_per_access: f64,
    /// Energy per 64-byte DRAM access (J).
    pub dram_energy_per_access: f64,
    /// Lump IMAC energy per inference (J).
    pub imac_energy_per_inference: f64,
    /// Average power of one analog neuron (W), used for sanity bounds only.
    pub neuron_power: f64,
    pub cpu_frequency: f64,
    /// Sustained MAC throughput used to estimate layer cycles.
    pub macs_per_cycle: f64,
    /// Bytes moved to the buffer per store cycle.
    pub store_bytes_per_cycle: f64,
    /// Analog settling time of one IMAC layer (s).
    pub imac_layer_latency: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            cpu_energy_per_cycle: 3.75e-9,
            l1_energy_per_access: 5e-11,
            l2_energy_per_access: 2e-10,
            llc_energy_per_access: 1e-9,
            dram_energy_per_access: 1.5e-8,
            imac_energy_per_inference: 97e-9,
            neuron_power: 64e-6,
            cpu_frequency: 4e9,
            macs_per_cycle: 8.0,
            store_bytes_per_cycle: 8.0,
            imac_layer_latency: 5e-9,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        for (what, v) in [
            ("cpu_energy_per_cycle", self.cpu_energy_per_cycle),
            ("l1_energy_per_access", self.l1_energy_per_access),
            ("l2_energy_per_access", self.l2_energy_per_access),
            ("llc_energy_per_access", self.llc_energy_per_access),
            ("dram_energy_per_access", self.dram_energy_per_access),
            ("imac_energy_per_inference", self.imac_energy_per_inference),
            ("neuron_power", self.neuron_power),
            ("imac_layer_latency", self.imac_layer_latency),
        ] {
            check_nonnegative(what, v)?;
        }
        for (what, v) in [
            ("cpu_frequency", self.cpu_frequency),
            ("macs_per_cycle", self.macs_per_cycle),
            ("store_bytes_per_cycle", self.store_bytes_per_cycle),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{what} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn with_imac_energy(mut self, joules: f64) -> Self {
        self.imac_energy_per_inference = joules;
        self
    }

    fn memory_energy(&self, m: &MemoryAccesses) -> f64 {
        m.l1 * self.l1_energy_per_access
            + m.l2 * self.l2_energy_per_access
            + m.llc * self.llc_energy_per_access
            + m.dram * self.dram_energy_per_access
    }

    /// Upper bound on IMAC energy from neuron power alone, for `neurons`
    /// neurons active for `seconds`.
    pub fn neuron_energy_bound(&self, neurons: usize, seconds: f64) -> f64 {
        self.neuron_power * neurons as f64 * seconds
    }
}

struct Work {
    name: String,
    fc: bool,
    ops: f64,
    /// Values read and written, weights included.
    touched: f64,
    weights: f64,
}

fn spec_work(spec: &CnnSpec) -> Result<Vec<Work>> {
    spec.validate()?;
    let shapes = spec.feature_shapes()?;
    let mut work = Vec::new();
    let mut input = spec.input;
    let mut count = [0usize; 3];
    for (layer, out) in spec.features.iter().zip(&shapes) {
        let (kind, ops, weights) = match *layer {
            FeatureLayer::Conv { out_channels, kernel, .. } => {
                let per_out = input.channels * kernel * kernel;
                ("conv", (out.len() * per_out) as f64, (out_channels * (per_out + 1)) as f64)
            }
            FeatureLayer::Relu => ("relu", out.len() as f64, 0.0),
            FeatureLayer::MaxPool { .. } => ("pool", input.len() as f64, 0.0),
            FeatureLayer::Flatten => {
                input = *out;
                continue;
            }
        };
        let k = match kind {
            "conv" => 0,
            "relu" => 1,
            _ => 2,
        };
        count[k] += 1;
        work.push(Work {
            name: format!("{kind}{}", count[k]),
            fc: false,
            ops,
            touched: (input.len() + out.len()) as f64 + weights,
            weights,
        });
        input = *out;
    }
    for (i, pair) in spec.fc.windows(2).enumerate() {
        let weights = (pair[0] * pair[1] + pair[1]) as f64;
        work.push(Work {
            name: format!("fc{}", i + 1),
            fc: true,
            ops: (pair[0] * pair[1]) as f64,
            touched: (pair[0] + pair[1]) as f64 + weights,
            weights,
        });
    }
    Ok(work)
}

/// Rounds up to whole cycles, ignoring floating-point noise above an
/// integer.
fn whole_cycles(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.max(1.0) {
        r
    } else {
        x.ceil()
    }
}

/// Estimated profile of one inference of `spec`.
///
/// Layer cycles are operations divided by `macs_per_cycle`. Memory counts
/// assume one L1 access per operation, every touched 4-byte value streamed
/// through L2 and the LLC once per inference, and weights fetched cold
/// from DRAM. The offloaded head receives trits packed two bits each and
/// returns 4-bit ADC codes.
pub fn estimate_profile(name: &str, spec: &CnnSpec, cost: &CostModel) -> Result<WorkloadProfile> {
    cost.validate()?;
    const LINE: f64 = 64.0;
    let layers = spec_work(spec)?
        .into_iter()
        .map(|w| LayerProfile {
            name: w.name,
            fc: w.fc,
            macs: w.ops,
            cpu_cycles: w.ops / cost.macs_per_cycle,
            memory: MemoryAccesses {
                l1: w.ops,
                l2: (4.0 * w.touched / LINE).ceil(),
                llc: (4.0 * w.touched / LINE).ceil(),
                dram: (4.0 * w.weights / LINE).ceil(),
            },
        })
        .collect();
    let (trits, outputs) = (spec.fc[0], spec.classes());
    let fills = trits.div_ceil(TRIT_CAPACITY);
    let transfer_bytes = (trits.div_ceil(4) + outputs.div_ceil(2)) as f64;
    // Two ready writes per fill and one ready poll.
    let transfer_cycles = (transfer_bytes / cost.store_bytes_per_cycle).ceil() + (2 * fills + 1) as f64;
    let fc_layers = spec.fc.len() - 1;
    Ok(WorkloadProfile {
        name: name.to_string(),
        layers,
        transfer_bytes,
        transfer_cycles,
        imac_latency_cycles: whole_cycles(fc_layers as f64 * cost.imac_layer_latency * cost.cpu_frequency),
    })
}

/// Baseline time over CPU-IMAC time.
pub fn speedup(profile: &WorkloadProfile) -> Result<f64> {
    profile.validate()?;
    let base = profile.baseline_cycles();
    if base == 0.0 {
        return Err(Error::InvalidInput(format!("profile `{}` has zero baseline time", profile.name)));
    }
    Ok(base / profile.cpu_imac_cycles())
}

/// Energy of one inference split by where it is spent.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct EnergyBreakdown {
    pub conv_compute: f64,
    pub conv_memory: f64,
    pub fc_compute: f64,
    pub fc_memory: f64,
    pub transfer: f64,
    pub imac: f64,
}

impl EnergyBreakdown {
    pub const COMPONENTS: [&'static str; 6] = ["conv_compute", "conv_memory", "fc_compute", "fc_memory", "transfer", "imac"];

    pub fn components(&self) -> [f64; 6] {
        [self.conv_compute, self.conv_memory, self.fc_compute, self.fc_memory, self.transfer, self.imac]
    }

    /// Sum of the components in their listed order.
    pub fn total(&self) -> f64 {
        self.components().iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyReport {
    pub baseline: EnergyBreakdown,
    pub cpu_imac: EnergyBreakdown,
}

impl EnergyReport {
    /// Fractional energy saved by the CPU-IMAC system.
    pub fn reduction(&self) -> f64 {
        1.0 - self.cpu_imac.total() / self.baseline.total()
    }

    /// Share of baseline energy spent in FC layers.
    pub fn fc_energy_fraction(&self) -> f64 {
        (self.baseline.fc_compute + self.baseline.fc_memory) / self.baseline.total()
    }
}

pub fn energy(profile: &WorkloadProfile, cost: &CostModel) -> Result<EnergyReport> {
    profile.validate()?;
    cost.validate()?;
    let mut baseline = EnergyBreakdown::default();
    for l in &profile.layers {
        let compute = l.cpu_cycles * cost.cpu_energy_per_cycle;
        let memory = cost.memory_energy(&l.memory);
        if l.fc {
            baseline.fc_compute += compute;
            baseline.fc_memory += memory;
        } else {
            baseline.conv_compute += compute;
            baseline.conv_memory += memory;
        }
    }
    let cpu_imac = EnergyBreakdown {
        conv_compute: baseline.conv_compute,
        conv_memory: baseline.conv_memory,
        fc_compute: 0.0,
        fc_memory: 0.0,
        transfer: profile.transfer_cycles * cost.cpu_energy_per_cycle
            + (profile.transfer_bytes / 64.0).ceil() * cost.llc_energy_per_access,
        imac: cost.imac_energy_per_inference,
    };
    Ok(EnergyReport { baseline, cpu_imac })
}

/// Observed aggregate improvements, as fractions (0.112 for 11.2%).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationTargets {
    pub speedup: f64,
    pub energy_reduction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub profile: WorkloadProfile,
    pub fc_time_fraction: f64,
    pub fc_energy_fraction: f64,
    /// Speedup and energy reduction re-evaluated on the calibrated profile.
    pub speedup: f64,
    pub energy_reduction: f64,
}

fn rescale<F: Fn(&mut LayerProfile, f64)>(profile: &mut WorkloadProfile, fc: bool, old: f64, new: f64, what: &str, apply: F) -> Result<()> {
    if new == old {
        return Ok(());
    }
    if old == 0.0 {
        let side = if fc { "FC" } else { "non-FC" };
        return Err(Error::Infeasible(format!("{what} needs {side} layers with nonzero cost")));
    }
    let k = new / old;
    for l in profile.layers.iter_mut().filter(|l| l.fc == fc) {
        apply(l, k);
    }
    Ok(())
}

/// Redistributes baseline cycles and memory traffic between the FC and
/// non-FC layers so that the model reproduces `targets`, keeping total
/// baseline cycles, total baseline memory energy, MAC counts and the
/// transfer and IMAC terms fixed.
pub fn calibrate(profile: &WorkloadProfile, cost: &CostModel, targets: CalibrationTargets) -> Result<Calibration> {
    profile.validate()?;
    cost.validate()?;
    if !(targets.speedup.is_finite() && targets.speedup > -1.0 && targets.energy_reduction.is_finite() && targets.energy_reduction < 1.0) {
        return Err(Error::Infeasible(format!("targets {targets:?} are out of range")));
    }
    let mut out = profile.clone();

    let base = profile.baseline_cycles();
    if base == 0.0 {
        return Err(Error::InvalidInput(format!("profile `{}` has zero baseline time", profile.name)));
    }
    let conv = base / (1.0 + targets.speedup) - profile.transfer_cycles - profile.imac_latency_cycles;
    if !(0.0..=base).contains(&conv) {
        return Err(Error::Infeasible(format!(
            "a {:.2}% speedup needs {conv:.1} non-FC cycles out of {base:.1}",
            100.0 * targets.speedup
        )));
    }
    let (conv_old, fc_old) = (profile.conv_cycles(), profile.fc_cycles());
    rescale(&mut out, false, conv_old, conv, "speedup target", |l, k| l.cpu_cycles *= k)?;
    rescale(&mut out, true, fc_old, base - conv, "speedup target", |l, k| l.cpu_cycles *= k)?;

    let e = energy(&out, cost)?;
    let memory = e.baseline.conv_memory + e.baseline.fc_memory;
    let compute = e.baseline.conv_compute + e.baseline.fc_compute;
    let conv_memory = (1.0 - targets.energy_reduction) * (compute + memory) - e.cpu_imac.conv_compute - e.cpu_imac.transfer - e.cpu_imac.imac;
    if !(0.0..=memory).contains(&conv_memory) {
        return Err(Error::Infeasible(format!(
            "a {:.2}% energy reduction needs {conv_memory:.3e} J of non-FC memory energy out of {memory:.3e} J",
            100.0 * targets.energy_reduction
        )));
    }
    rescale(&mut out, false, e.baseline.conv_memory, conv_memory, "energy target", |l, k| l.memory = l.memory.scaled(k))?;
    rescale(&mut out, true, e.baseline.fc_memory, memory - conv_memory, "energy target", |l, k| l.memory = l.memory.scaled(k))?;

    let e = energy(&out, cost)?;
    Ok(Calibration {
        fc_time_fraction: out.fc_time_fraction(),
        fc_energy_fraction: e.fc_energy_fraction(),
        speedup: speedup(&out)? - 1.0,
        energy_reduction: e.reduction(),
        profile: out,
    })
}

/// Latency and rate of a standalone IMAC network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ImacThroughput {
    pub layers: usize,
    pub latency: f64,
    pub inferences_per_second: f64,
}

impl ImacThroughput {
    pub fn cycles_at(&self, frequency: f64) -> f64 {
        self.latency * frequency
    }
}

/// Layers settle one after another, each taking `layer_latency`.
pub fn imac_throughput(topology: &ImacTopology, layer_latency: f64) -> ImacThroughput {
    let layers = topology.layer_count();
    let latency = layers as f64 * layer_latency;
    ImacThroughput {
        layers,
        latency,
        inferences_per_second: 1.0 / latency,
    }
}

/// One row of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerfRow {
    pub model: String,
    pub speedup: f64,
    pub energy_improvement: f64,
    /// CPU-IMAC accuracy minus full-precision accuracy, when known.
    pub accuracy_diff: Option<f64>,
    pub baseline_energy: f64,
    pub cpu_imac_energy: f64,
    pub fc_time_fraction: f64,
    pub fc_energy_fraction: f64,
}

impl PerfRow {
    pub fn evaluate(profile: &WorkloadProfile, cost: &CostModel, accuracy_diff: Option<f64>) -> Result<Self> {
        let s = speedup(profile)?;
        let e = energy(profile, cost)?;
        Ok(Self {
            model: profile.name.clone(),
            speedup: s - 1.0,
            energy_improvement: e.reduction(),
            accuracy_diff,
            baseline_energy: e.baseline.total(),
            cpu_imac_energy: e.cpu_imac.total(),
            fc_time_fraction: profile.fc_time_fraction(),
            fc_energy_fraction: e.fc_energy_fraction(),
        })
    }
}

pub fn write_perf_csv<W: Write>(out: W, rows: &[PerfRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "model",
        "speedup",
        "energy_improvement",
        "accuracy_diff",
        "baseline_energy_j",
        "cpu_imac_energy_j",
        "fc_time_fraction",
        "fc_energy_fraction",
    ])?;
    for r in rows {
        w.write_record([
            r.model.clone(),
            r.speedup.to_string(),
            r.energy_improvement.to_string(),
            r.accuracy_diff.map_or(String::new(), |d| d.to_string()),
            r.baseline_energy.to_string(),
            r.cpu_imac_energy.to_string(),
            r.fc_time_fraction.to_string(),
            r.fc_energy_fraction.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-layer cycles and memory traffic of a profile.
pub fn write_profile_csv<W: Write>(out: W, profile: &WorkloadProfile) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["layer", "fc", "macs", "cpu_cycles", "l1", "l2", "llc", "dram"])?;
    for l in &profile.layers {
        let mut row = vec![l.name.clone(), l.fc.to_string(), l.macs.to_string(), l.cpu_cycles.to_string()];
        row.extend(l.memory.values().iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Energy breakdown of both systems, one row per system.
pub fn write_energy_csv<W: Write>(out: W, model: &str, report: &EnergyReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["model", "system"];
    header.extend(EnergyBreakdown::COMPONENTS);
    header.push("total");
    w.write_record(&header)?;
    for (system, b) in [("baseline", &report.baseline), ("cpu_imac", &report.cpu_imac)] {
        let mut row = vec![model.to_string(), system.to_string()];
        row.extend(b.components().iter().map(f64::to_string));
        row.push(b.total().to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Human-readable table with speedup, energy improvement and accuracy
/// difference columns, in percent.
pub fn summary_table(rows: &[PerfRow]) -> String {
    let mut s = format!("{:<12} {:>9} {:>20} {:>16}\n", "Model", "Speedup", "Energy Improvement", "Accuracy Diff.");
    for r in rows {
        let acc = r.accuracy_diff.map_or("n/a".to_string(), |d| format!("{:.2}%", 100.0 * d));
        let _ = writeln!(
            s,
            "{:<12} {:>8.2}% {:>19.2}% {:>16}",
            r.model,
            100.0 * r.speedup,
            100.0 * r.energy_improvement,
            acc
        );
    }
    s
}
