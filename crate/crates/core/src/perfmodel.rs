//! Analytic cycle model, performance reports and precision sweeps.
//!
//! A vector instruction occupies its functional unit for
//! `max(1, ceil(VL·SEW / (lanes · datapath_bits)))` beats. Under
//! [`Overlap::Chained`] the load/store, slide and lane units work
//! concurrently; scalar operations stall the lanes, and the front end issues
//! one instruction per `issue_cost` cycles. [`Overlap::Serial`] simply adds
//! every beat and every scalar operation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;

use rayon::prelude::*;
use thiserror::Error;

use crate::fixture::random_tensor;
use crate::kernels::{run_variant, ConvOutput, ConvShape, KernelError, KernelOptions, KernelRun, Variant};
use crate::packing::{Precision, QuantTensor};
use crate::vmachine::{MachineConfig, PerfCounters, Unit};

#[derive(Debug, Error)]
pub enum PerfError {
    #[error("modeled cycle count is zero")]
    ZeroCycles,
    #[error("speedup needs identical shapes, got {0} and {1}")]
    ShapeMismatch(ConvShape, ConvShape),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Overlap {
    #[default]
    Chained,
    Serial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CycleModel {
    pub lanes: usize,
    pub datapath_bits_per_lane: usize,
    pub issue_cost: u64,
    pub overlap: Overlap,
}

impl Default for CycleModel {
    fn default() -> Self {
        Self::for_machine(&MachineConfig::default())
    }
}

impl CycleModel {
    pub fn for_machine(cfg: &MachineConfig) -> Self {
        Self {
            lanes: cfg.lanes,
            datapath_bits_per_lane: cfg.datapath_bits_per_lane,
            issue_cost: 1,
            overlap: Overlap::Chained,
        }
    }

    fn width(&self) -> u64 {
        (self.lanes * self.datapath_bits_per_lane) as u64
    }

    /// Beats of one vector instruction processing `bits = VL·SEW`.
    pub fn beats(&self, bits: u64) -> u64 {
        bits.div_ceil(self.width()).max(1)
    }

    /// Peak logical MACs per cycle at `sew_bits`.
    pub fn peak_macs_per_cycle(&self, sew_bits: u32, operands_per_elem: usize) -> f64 {
        (self.width() / u64::from(sew_bits)) as f64 * operands_per_elem as f64
    }

    pub fn cycles(&self, counters: &PerfCounters) -> u64 {
        let mut busy: BTreeMap<Unit, u64> = BTreeMap::new();
        for (unit, bits, n) in counters.vector_work() {
            *busy.entry(unit).or_default() += n * self.beats(bits);
        }
        let scalar = counters.scalar_ops() * self.issue_cost;
        match self.overlap {
            Overlap::Serial => busy.values().sum::<u64>() + scalar,
            Overlap::Chained => {
                let unit = |u| busy.get(&u).copied().unwrap_or(0);
                let issue = counters.instructions() * self.issue_cost;
                unit(Unit::LoadStore).max(unit(Unit::Slide)).max(unit(Unit::Lane) + scalar).max(issue)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerfReport {
    pub shape: ConvShape,
    pub variant: Variant,
    pub instructions: u64,
    pub cycles: u64,
    /// Logical multiply-accumulates.
    pub macs: u64,
    pub utilization: f64,
}

impl PerfReport {
    pub fn new(run: &KernelRun, model: &CycleModel) -> Result<Self, PerfError> {
        let counters = run.counters();
        let cycles = model.cycles(&counters);
        if cycles == 0 {
            return Err(PerfError::ZeroCycles);
        }
        let macs = run.shape.macs();
        let peak = model.peak_macs_per_cycle(run.variant.sew().bits(), run.variant.operands_per_elem());
        Ok(Self {
            shape: run.shape,
            variant: run.variant,
            instructions: counters.instructions(),
            cycles,
            macs,
            utilization: macs as f64 / cycles as f64 / peak,
        })
    }

    /// Operations (multiply and add counted separately).
    pub fn ops(&self) -> u64 {
        2 * self.macs
    }

    pub fn ops_per_cycle(&self) -> f64 {
        self.ops() as f64 / self.cycles as f64
    }

    /// `baseline.cycles / self.cycles`.
    pub fn speedup_over(&self, baseline: &PerfReport) -> Result<f64, PerfError> {
        speedup(self, baseline)
    }
}

pub fn ops_per_cycle(shape: &ConvShape, cycles: u64) -> Result<f64, PerfError> {
    if cycles == 0 {
        return Err(PerfError::ZeroCycles);
    }
    Ok(2.0 * shape.macs() as f64 / cycles as f64)
}

pub fn speedup(report: &PerfReport, baseline: &PerfReport) -> Result<f64, PerfError> {
    if report.shape != baseline.shape {
        return Err(PerfError::ShapeMismatch(report.shape, baseline.shape));
    }
    Ok(baseline.cycles as f64 / report.cycles as f64)
}

/// One grid point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub variant: Variant,
    pub precision: Precision,
    pub shape: ConvShape,
    pub seed: u64,
    pub opts: KernelOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepOutcome {
    Measured { report: PerfReport, speedup: f64, oracle_match: bool, overflows: usize },
    RegionViolation(String),
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub point: SweepPoint,
    pub outcome: SweepOutcome,
}

/// Fixture tensors for a point, drawn uniformly over the declared precision.
pub fn point_tensors(point: &SweepPoint) -> Result<(QuantTensor, QuantTensor), KernelError> {
    let s = point.shape;
    let (a, w) = (point.precision.act_bits(), point.precision.wgt_bits());
    let input = random_tensor(point.seed, s.channels, s.height, s.width, a)?;
    let kernel = random_tensor(point.seed.wrapping_add(1), s.channels, s.kernel_h, s.kernel_w, w)?;
    Ok((input, kernel))
}

fn baseline(cfg: &MachineConfig, model: &CycleModel, shape: ConvShape) -> Result<PerfReport, String> {
    // Cycle counts do not depend on the data.
    let input = QuantTensor::zeros(shape.channels, shape.height, shape.width, 1).map_err(|e| e.to_string())?;
    let kernel = QuantTensor::zeros(shape.channels, shape.kernel_h, shape.kernel_w, 1).map_err(|e| e.to_string())?;
    let run = crate::kernels::conv2d_int16(cfg, &input, &kernel).map_err(|e| e.to_string())?;
    PerfReport::new(&run, model).map_err(|e| e.to_string())
}

fn measure(
    cfg: &MachineConfig,
    model: &CycleModel,
    point: &SweepPoint,
    base: &Result<PerfReport, String>,
) -> SweepOutcome {
    let result = point_tensors(point).and_then(|(input, kernel)| {
        let run = run_variant(cfg, point.variant, &input, &kernel, point.precision, point.opts)?;
        let oracle: ConvOutput = crate::kernels::conv2d_oracle(&input, &kernel)?;
        Ok((run.verify(&oracle), run))
    });
    let (verification, run) = match result {
        Ok(r) => r,
        Err(e @ KernelError::Region { .. }) => return SweepOutcome::RegionViolation(e.to_string()),
        Err(e) => return SweepOutcome::Failed(e.to_string()),
    };
    let report = match PerfReport::new(&run, model) {
        Ok(r) => r,
        Err(e) => return SweepOutcome::Failed(e.to_string()),
    };
    let speedup = match base {
        Ok(b) => match speedup(&report, b) {
            Ok(s) => s,
            Err(e) => return SweepOutcome::Failed(e.to_string()),
        },
        Err(e) => return SweepOutcome::Failed(format!("baseline: {e}")),
    };
    SweepOutcome::Measured {
        report,
        speedup,
        oracle_match: verification.is_exact(),
        overflows: verification.overflows.len(),
    }
}

/// Runs every point (in parallel) and returns rows in input order. The
/// int16 baseline is simulated once per distinct shape.
pub fn sweep(cfg: &MachineConfig, model: &CycleModel, points: &[SweepPoint]) -> Vec<SweepRow> {
    let mut shapes: Vec<ConvShape> = points.iter().map(|p| p.shape).collect();
    shapes.sort();
    shapes.dedup();
    let baselines: BTreeMap<ConvShape, Result<PerfReport, String>> =
        shapes.par_iter().map(|&s| (s, baseline(cfg, model, s))).collect();
    points
        .par_iter()
        .map(|point| SweepRow { point: *point, outcome: measure(cfg, model, point, &baselines[&point.shape]) })
        .collect()
}

pub const CSV_HEADER: [&str; 15] = [
    "variant",
    "E",
    "Na",
    "Nw",
    "C",
    "H",
    "W",
    "Fh",
    "Fw",
    "instructions",
    "modeled_cycles",
    "ops_per_cycle",
    "speedup_vs_int16",
    "oracle_match",
    "overflow_flags",
];

fn csv_record(row: &SweepRow) -> Vec<String> {
    let p = &row.point;
    let s = p.shape;
    let mut rec = vec![
        p.variant.name().to_string(),
        p.variant.elem_bits().to_string(),
        p.precision.act_bits().to_string(),
        p.precision.wgt_bits().to_string(),
        s.channels.to_string(),
        s.height.to_string(),
        s.width.to_string(),
        s.kernel_h.to_string(),
        s.kernel_w.to_string(),
    ];
    match &row.outcome {
        SweepOutcome::Measured { report, speedup, oracle_match, overflows } => rec.extend([
            report.instructions.to_string(),
            report.cycles.to_string(),
            format!("{:.4}", report.ops_per_cycle()),
            format!("{speedup:.4}"),
            oracle_match.to_string(),
            overflows.to_string(),
        ]),
        SweepOutcome::RegionViolation(_) => {
            rec.extend(["", "", "", ""].map(String::from));
            rec.extend(["region_violation".to_string(), String::new()]);
        }
        SweepOutcome::Failed(e) => {
            rec.extend(["", "", "", ""].map(String::from));
            rec.extend([format!("error: {e}"), String::new()]);
        }
    }
    rec
}

pub fn write_csv<W: io::Write>(out: W, rows: &[SweepRow]) -> Result<(), PerfError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for row in rows {
        w.write_record(csv_record(row))?;
    }
    w.flush()?;
    Ok(())
}

/// Plain-text summary, one line per row.
pub fn summary_table(rows: &[SweepRow]) -> String {
    let mut out = format!(
        "{:<8} {:>3} {:>5} {:<18} {:>14} {:>10} {:>6} {:>8}  {}\n",
        "variant", "E", "prec", "shape", "cycles", "ops/cyc", "util", "speedup", "oracle"
    );
    for row in rows {
        let p = &row.point;
        let head = format!(
            "{:<8} {:>3} {:>5} {:<18}",
            p.variant.name(),
            p.variant.elem_bits(),
            p.precision.to_string(),
            p.shape.to_string()
        );
        let _ = match &row.outcome {
            SweepOutcome::Measured { report, speedup, oracle_match, overflows } => writeln!(
                out,
                "{head} {:>14} {:>10.3} {:>6.3} {:>8.3}  {}",
                report.cycles,
                report.ops_per_cycle(),
                report.utilization,
                speedup,
                if *oracle_match { "match".to_string() } else { format!("MISMATCH ({overflows} overflows)") }
            ),
            SweepOutcome::RegionViolation(msg) => writeln!(out, "{head} region violation: {msg}"),
            SweepOutcome::Failed(msg) => writeln!(out, "{head} error: {msg}"),
        };
    }
    out
}
