//! Functional vector machine with a fused multiply-shift-accumulate
//! (`vmacsr`), two-operand sub-byte packing, slide-based conv2d kernels and an
//! analytic cycle model.

pub mod fixture;
pub mod kernels;
pub mod packing;
pub mod perfmodel;
pub mod vmachine;

pub use kernels::{
    conv2d_int16, conv2d_oracle, conv2d_ulppack_native, conv2d_ulppack_vmacsr, overflow_monitor, run_variant,
    verify_variant, ConvOutput, ConvRun, ConvShape, KernelError, KernelOptions, KernelRun, NativeBudget, Variant,
    Verification,
};
pub use packing::{
    is_admissible, pack_p1, region_map, region_violations, safe_accum_budget, AccumMode, Budget, BudgetPolicy,
    ElemWidth, PackRole, PackedTensor, PackingError, Precision, QuantTensor, RegionMap,
};
pub use perfmodel::{speedup, CycleModel, Overlap, PerfReport, SweepOutcome, SweepPoint, SweepRow};
pub use vmachine::{Instruction, MachineConfig, MachineError, PerfCounters, Sew, VectorMachine};
