use std::collections::BTreeMap;
use std::ops::AddAssign;

use super::isa::{Opcode, Unit};

/// Issue statistics of an execution.
///
/// Vector work is kept as a histogram keyed by `(unit, VL·SEW)` so a cycle
/// model can be applied afterwards with any lane configuration.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PerfCounters {
    issued: BTreeMap<Opcode, u64>,
    vector_work: BTreeMap<(Unit, u64), u64>,
    scalar_ops: u64,
    element_ops: u64,
}

impl PerfCounters {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn record_scalar(&mut self, op: Opcode) {
        *self.issued.entry(op).or_default() += 1;
        self.scalar_ops += 1;
    }

    pub(crate) fn record_vector(&mut self, op: Opcode, vl: usize, sew_bits: u32) {
        *self.issued.entry(op).or_default() += 1;
        let bits = vl as u64 * u64::from(sew_bits);
        *self.vector_work.entry((op.unit(), bits)).or_default() += 1;
        if op.unit() == Unit::Lane {
            self.element_ops += vl as u64;
        }
    }

    /// Total instructions issued.
    pub fn instructions(&self) -> u64 {
        self.issued.values().sum()
    }

    pub fn count(&self, op: Opcode) -> u64 {
        self.issued.get(&op).copied().unwrap_or(0)
    }

    pub fn issued(&self) -> impl Iterator<Item = (Opcode, u64)> + '_ {
        self.issued.iter().map(|(&op, &n)| (op, n))
    }

    /// `((unit, VL·SEW bits), count)` for every vector instruction class.
    pub fn vector_work(&self) -> impl Iterator<Item = (Unit, u64, u64)> + '_ {
        self.vector_work.iter().map(|(&(unit, bits), &n)| (unit, bits, n))
    }

    pub fn scalar_ops(&self) -> u64 {
        self.scalar_ops
    }

    /// Elements processed by lane arithmetic.
    pub fn element_ops(&self) -> u64 {
        self.element_ops
    }

    pub fn is_empty(&self) -> bool {
        self.issued.is_empty()
    }

    pub fn merged(mut self, other: &PerfCounters) -> PerfCounters {
        self += other;
        self
    }
}

impl AddAssign<&PerfCounters> for PerfCounters {
    fn add_assign(&mut self, other: &PerfCounters) {
        for (&op, &n) in &other.issued {
            *self.issued.entry(op).or_default() += n;
        }
        for (&key, &n) in &other.vector_work {
            *self.vector_work.entry(key).or_default() += n;
        }
        self.scalar_ops += other.scalar_ops;
        self.element_ops += other.element_ops;
    }
}
