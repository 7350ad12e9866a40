//! 2D convolution kernels.
//!
//! Every simulated variant uses the same output-stationary, slide-based
//! structure: `Fh` live accumulator rows, one load per input row and channel,
//! and a `vslidedown` after each kernel column. They differ in how the
//! per-tap products are accumulated:
//!
//! * [`conv2d_int16`]: unpacked 16-bit elements with `vmacc.vx`.
//! * [`conv2d_ulppack_native`]: P1-packed elements with `vmacc.vx` into a
//!   local accumulator, extracted with `vsrl` + `vadd` every `budget` products.
//! * [`conv2d_ulppack_vmacsr`]: P1-packed elements with `vmacsr.vx`.
//!
//! Convolutions are valid (no padding), stride 1, one output plane per call.

mod codegen;
mod oracle;

use std::fmt;

use thiserror::Error;

use crate::packing::{
    budget_with_policy, region_violations, AccumMode, Budget, BudgetPolicy, ElemWidth, PackingError, Precision,
    QuantTensor, RegionBound, OPERANDS_PER_ELEM,
};
use crate::vmachine::{MachineConfig, MachineError, PerfCounters, Sew};

pub use oracle::conv2d_oracle;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("invalid convolution shape: {0}")]
    Shape(String),
    #[error("{prec} is outside the overflow-free region for E={elem} ({mode}): {}", join(.violations))]
    Region { prec: Precision, elem: ElemWidth, mode: AccumMode, violations: Vec<RegionBound> },
    #[error("{which} tensor holds {bits}-bit values but the declared precision is {declared} bits")]
    Precision { which: &'static str, bits: u32, declared: u32 },
    #[error("kernel width {kernel_w} does not fit in VLMAX {vlmax} at {sew}")]
    VectorLength { kernel_w: usize, vlmax: usize, sew: Sew },
    #[error("kernel height {kernel_h} needs more than the 32 available {kind} registers")]
    Registers { kernel_h: usize, kind: &'static str },
    #[error("local accumulation budget must be at least 1")]
    ZeroBudget,
    #[error(transparent)]
    Packing(#[from] PackingError),
    #[error(transparent)]
    Machine(#[from] MachineError),
}

fn join(v: &[RegionBound]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Dimensions of a valid convolution producing one output plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConvShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
}

impl ConvShape {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        kernel_h: usize,
        kernel_w: usize,
    ) -> Result<Self, KernelError> {
        if channels == 0 || height == 0 || width == 0 || kernel_h == 0 || kernel_w == 0 {
            return Err(KernelError::Shape(format!(
                "all dimensions must be nonzero (C={channels}, H={height}, W={width}, Fh={kernel_h}, Fw={kernel_w})"
            )));
        }
        if kernel_h > height || kernel_w > width {
            return Err(KernelError::Shape(format!(
                "{kernel_h}x{kernel_w} kernel does not fit a {height}x{width} input"
            )));
        }
        Ok(Self { channels, height, width, kernel_h, kernel_w })
    }

    /// Square input and kernel.
    pub fn square(channels: usize, hw: usize, k: usize) -> Result<Self, KernelError> {
        Self::new(channels, hw, hw, k, k)
    }

    pub fn of(input: &QuantTensor, kernel: &QuantTensor) -> Result<Self, KernelError> {
        if input.channels() != kernel.channels() {
            return Err(KernelError::Shape(format!(
                "input has {} channels, kernel has {}",
                input.channels(),
                kernel.channels()
            )));
        }
        Self::new(input.channels(), input.height(), input.width(), kernel.height(), kernel.width())
    }

    pub fn out_h(&self) -> usize {
        self.height - self.kernel_h + 1
    }

    pub fn out_w(&self) -> usize {
        self.width - self.kernel_w + 1
    }

    /// Multiply-accumulates on logical (unpacked) operands.
    pub fn macs(&self) -> u64 {
        (self.channels * self.kernel_h * self.kernel_w * self.out_h() * self.out_w()) as u64
    }
}

impl fmt::Display for ConvShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{} * {}x{}", self.channels, self.height, self.width, self.kernel_h, self.kernel_w)
    }
}

/// How the native variant sizes its local accumulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NativeBudget {
    Policy(BudgetPolicy),
    /// Explicit product count; exactness is only guaranteed up to the
    /// conservative budget.
    Fixed(u32),
}

impl Default for NativeBudget {
    fn default() -> Self {
        NativeBudget::Policy(BudgetPolicy::Conservative)
    }
}

/// A simulated convolution implementation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Int16,
    Native { elem: ElemWidth, budget: NativeBudget },
    Vmacsr { elem: ElemWidth },
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Int16 => "int16",
            Variant::Native { .. } => "native",
            Variant::Vmacsr { .. } => "vmacsr",
        }
    }

    pub fn elem_bits(&self) -> u32 {
        match self {
            Variant::Int16 => 16,
            Variant::Native { elem, .. } | Variant::Vmacsr { elem } => elem.bits(),
        }
    }

    pub fn sew(&self) -> Sew {
        Sew::from_bits(self.elem_bits()).expect("variant element width is a valid SEW")
    }

    /// Logical operands per vector element.
    pub fn operands_per_elem(&self) -> usize {
        match self {
            Variant::Int16 => 1,
            _ => OPERANDS_PER_ELEM,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Int16 => f.write_str("int16"),
            Variant::Native { elem, .. } => write!(f, "native-e{elem}"),
            Variant::Vmacsr { elem } => write!(f, "vmacsr-e{elem}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct KernelOptions {
    /// Weights are packed on the host instead of at run time.
    pub prepacked_weights: bool,
}

/// Output plane. Simulated variants hold `value_bits`-wide modular values;
/// the oracle holds exact sums (`value_bits == 64`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvOutput {
    pub out_h: usize,
    pub out_w: usize,
    pub value_bits: u32,
    pub values: Vec<u64>,
}

impl ConvOutput {
    pub fn get(&self, y: usize, x: usize) -> u64 {
        self.values[y * self.out_w + x]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mismatch {
    pub y: usize,
    pub x: usize,
    pub got: u64,
    pub expected: u64,
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "output ({}, {}): got {}, expected {}", self.y, self.x, self.got, self.expected)
    }
}

/// An output position whose exact value does not fit the accumulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Overflow {
    pub y: usize,
    pub x: usize,
    pub value: u64,
}

/// Lists every position where the exact result is at least `2^value_bits`.
pub fn overflow_monitor(value_bits: u32, oracle: &ConvOutput) -> Vec<Overflow> {
    if value_bits >= 64 {
        return Vec::new();
    }
    let limit = 1u64 << value_bits;
    oracle
        .values
        .iter()
        .enumerate()
        .filter(|&(_, &v)| v >= limit)
        .map(|(i, &value)| Overflow { y: i / oracle.out_w, x: i % oracle.out_w, value })
        .collect()
}

/// Outcome of checking a run against the oracle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verification {
    /// First position where the output differs from the oracle modulo `2^SEW`.
    pub modular_mismatch: Option<Mismatch>,
    pub overflows: Vec<Overflow>,
}

impl Verification {
    /// Modular agreement everywhere and no value beyond the accumulator width,
    /// i.e. the output equals the oracle exactly.
    pub fn is_exact(&self) -> bool {
        self.modular_mismatch.is_none() && self.overflows.is_empty()
    }
}

/// Result of one simulated kernel invocation.
#[derive(Debug, Clone)]
pub struct KernelRun {
    pub shape: ConvShape,
    pub variant: Variant,
    pub output: ConvOutput,
    /// Run-time operand packing.
    pub packing: PerfCounters,
    /// The convolution proper.
    pub compute: PerfCounters,
    /// Local accumulation budget actually used by the native variant.
    pub budget: Option<u32>,
}

impl KernelRun {
    pub fn counters(&self) -> PerfCounters {
        self.packing.clone().merged(&self.compute)
    }

    pub fn verify(&self, oracle: &ConvOutput) -> Verification {
        assert_eq!((oracle.out_h, oracle.out_w), (self.output.out_h, self.output.out_w), "oracle shape");
        let mask = if self.output.value_bits >= 64 { u64::MAX } else { (1 << self.output.value_bits) - 1 };
        let modular_mismatch =
            self.output.values.iter().zip(&oracle.values).position(|(&got, &exp)| got != exp & mask).map(|i| {
                Mismatch {
                    y: i / self.output.out_w,
                    x: i % self.output.out_w,
                    got: self.output.values[i],
                    expected: oracle.values[i],
                }
            });
        Verification { modular_mismatch, overflows: overflow_monitor(self.output.value_bits, oracle) }
    }
}

/// A kernel run together with its precision and oracle verdict.
#[derive(Debug, Clone)]
pub struct ConvRun {
    pub precision: Precision,
    pub run: KernelRun,
    pub verification: Verification,
}

fn check_bits(which: &'static str, t: &QuantTensor, declared: u32) -> Result<(), KernelError> {
    if t.bits() > declared {
        return Err(KernelError::Precision { which, bits: t.bits(), declared });
    }
    Ok(())
}

fn check_region(prec: Precision, elem: ElemWidth, mode: AccumMode) -> Result<(), KernelError> {
    let violations = region_violations(prec, elem, mode);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(KernelError::Region { prec, elem, mode, violations })
    }
}

/// Int16 baseline: unpacked operands in 16-bit elements.
pub fn conv2d_int16(cfg: &MachineConfig, input: &QuantTensor, kernel: &QuantTensor) -> Result<KernelRun, KernelError> {
    let shape = ConvShape::of(input, kernel)?;
    codegen::run_int16(cfg, shape, input, kernel)
}

/// ULPPACK with plain multiply-accumulate and periodic shift extraction.
pub fn conv2d_ulppack_native(
    cfg: &MachineConfig,
    input: &QuantTensor,
    kernel: &QuantTensor,
    prec: Precision,
    elem: ElemWidth,
    budget: NativeBudget,
    opts: KernelOptions,
) -> Result<KernelRun, KernelError> {
    let shape = ConvShape::of(input, kernel)?;
    check_region(prec, elem, AccumMode::Native)?;
    check_bits("input", input, prec.act_bits())?;
    check_bits("kernel", kernel, prec.wgt_bits())?;
    let k = match budget {
        NativeBudget::Policy(policy) => match budget_with_policy(prec, elem, AccumMode::Native, policy) {
            Budget::Limited(k) => k,
            Budget::Unbounded => unreachable!("native budgets are finite"),
        },
        NativeBudget::Fixed(k) => k,
    };
    if k == 0 {
        return Err(KernelError::ZeroBudget);
    }
    let variant = Variant::Native { elem, budget };
    codegen::run_packed(cfg, shape, input, kernel, variant, codegen::MacKind::Local { budget: k }, opts)
}

/// ULPPACK with the fused multiply-shift-accumulate.
pub fn conv2d_ulppack_vmacsr(
    cfg: &MachineConfig,
    input: &QuantTensor,
    kernel: &QuantTensor,
    prec: Precision,
    elem: ElemWidth,
    opts: KernelOptions,
) -> Result<KernelRun, KernelError> {
    let shape = ConvShape::of(input, kernel)?;
    check_region(prec, elem, AccumMode::Vmacsr)?;
    check_bits("input", input, prec.act_bits())?;
    check_bits("kernel", kernel, prec.wgt_bits())?;
    codegen::run_packed(cfg, shape, input, kernel, Variant::Vmacsr { elem }, codegen::MacKind::Vmacsr, opts)
}

/// Dispatches to the variant's kernel.
pub fn run_variant(
    cfg: &MachineConfig,
    variant: Variant,
    input: &QuantTensor,
    kernel: &QuantTensor,
    prec: Precision,
    opts: KernelOptions,
) -> Result<KernelRun, KernelError> {
    match variant {
        Variant::Int16 => conv2d_int16(cfg, input, kernel),
        Variant::Native { elem, budget } => conv2d_ulppack_native(cfg, input, kernel, prec, elem, budget, opts),
        Variant::Vmacsr { elem } => conv2d_ulppack_vmacsr(cfg, input, kernel, prec, elem, opts),
    }
}

/// Runs `variant` and checks it against the oracle.
pub fn verify_variant(
    cfg: &MachineConfig,
    variant: Variant,
    input: &QuantTensor,
    kernel: &QuantTensor,
    prec: Precision,
    opts: KernelOptions,
) -> Result<ConvRun, KernelError> {
    let run = run_variant(cfg, variant, input, kernel, prec, opts)?;
    let oracle = conv2d_oracle(input, kernel)?;
    let verification = run.verify(&oracle);
    Ok(ConvRun { precision: prec, run, verification })
}
