//! Shared fixtures for the benchmarks.

use vmacsr_core::fixture::random_tensor;
use vmacsr_core::{ConvShape, ElemWidth, NativeBudget, Precision, QuantTensor, Variant};

pub struct Case {
    pub name: &'static str,
    pub variant: Variant,
    pub precision: Precision,
}

/// One case per kernel family at its highest admissible precision.
pub fn cases() -> Vec<Case> {
    let p = |a, w| Precision::new(a, w).expect("valid precision");
    vec![
        Case { name: "int16", variant: Variant::Int16, precision: p(4, 4) },
        Case {
            name: "native-e16-W2A2",
            variant: Variant::Native { elem: ElemWidth::E16, budget: NativeBudget::default() },
            precision: p(2, 2),
        },
        Case { name: "vmacsr-e16-W3A4", variant: Variant::Vmacsr { elem: ElemWidth::E16 }, precision: p(4, 3) },
        Case { name: "vmacsr-e8-W2A1", variant: Variant::Vmacsr { elem: ElemWidth::E8 }, precision: p(1, 2) },
    ]
}

/// Seeded input and kernel tensors for `shape` at `precision`.
pub fn tensors(shape: ConvShape, precision: Precision, seed: u64) -> (QuantTensor, QuantTensor) {
    let input = random_tensor(seed, shape.channels, shape.height, shape.width, precision.act_bits())
        .expect("valid input fixture");
    let kernel = random_tensor(seed + 1, shape.channels, shape.kernel_h, shape.kernel_w, precision.wgt_bits())
        .expect("valid kernel fixture");
    (input, kernel)
}
