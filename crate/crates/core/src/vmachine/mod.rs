//! Functional model of a lane-parallel vector register machine with the
//! `vmacsr` multiply-shift-accumulate extension.
//!
//! All element arithmetic wraps modulo `2^SEW`. Operations touch elements
//! `[0, VL)` and leave the tail undisturbed, except `vslidedown`, which
//! zero-fills positions whose source index reaches `VL`.

mod counters;
pub mod encoding;
mod isa;

use thiserror::Error;

pub use counters::PerfCounters;
pub use encoding::{decode, encode, encode_vmacsr, DecodeError, EncodeError, VmacsrForm};
pub use isa::{Instruction, MemWidth, Opcode, Sew, Unit, VReg, XReg};

pub const NUM_VREGS: usize = 32;
pub const NUM_XREGS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrapKind {
    Misaligned,
    OutOfBounds,
}

#[derive(Debug, Error)]
pub enum MachineError {
    #[error("register index {0} out of range 0..32")]
    RegisterIndex(u32),
    #[error("{kind:?} access of {bytes} bytes at {addr:#x}")]
    Trap { addr: u64, bytes: usize, kind: TrapKind },
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("masked execution of {0} is not supported")]
    MaskedUnsupported(Opcode),
    #[error("invalid machine configuration: {0}")]
    Config(String),
    #[error("at instruction {pc}: {source}")]
    At {
        pc: usize,
        #[source]
        source: Box<MachineError>,
    },
}

/// Static machine parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MachineConfig {
    pub vlen_bits: usize,
    pub lanes: usize,
    pub datapath_bits_per_lane: usize,
}

impl Default for MachineConfig {
    /// 4096-bit vector registers over 4 lanes of 64-bit datapath.
    fn default() -> Self {
        Self { vlen_bits: 4096, lanes: 4, datapath_bits_per_lane: 64 }
    }
}

impl MachineConfig {
    pub fn validate(&self) -> Result<(), MachineError> {
        if self.lanes == 0 || self.datapath_bits_per_lane == 0 {
            return Err(MachineError::Config("lanes and datapath width must be nonzero".into()));
        }
        if !self.datapath_bits_per_lane.is_multiple_of(64) {
            return Err(MachineError::Config(format!(
                "datapath width {} is not a multiple of 64 bits",
                self.datapath_bits_per_lane
            )));
        }
        let stripe = self.lanes * self.datapath_bits_per_lane;
        if self.vlen_bits == 0 || !self.vlen_bits.is_multiple_of(stripe) {
            return Err(MachineError::Config(format!(
                "VLEN {} is not divisible by lanes × datapath = {}",
                self.vlen_bits, stripe
            )));
        }
        Ok(())
    }

    pub fn vlmax(&self, sew: Sew) -> usize {
        self.vlen_bits / sew.bits() as usize
    }

    pub fn vlen_bytes(&self) -> usize {
        self.vlen_bits / 8
    }
}

/// Flat little-endian byte-addressable memory.
#[derive(Debug, Clone)]
pub struct Memory {
    bytes: Vec<u8>,
}

impl Memory {
    pub fn new(size: usize) -> Self {
        Self { bytes: vec![0; size] }
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    fn range(&self, addr: u64, bytes: usize, align: usize) -> Result<std::ops::Range<usize>, MachineError> {
        if !addr.is_multiple_of(align as u64) {
            return Err(MachineError::Trap { addr, bytes, kind: TrapKind::Misaligned });
        }
        let start = usize::try_from(addr).ok();
        match start.and_then(|s| s.checked_add(bytes).map(|e| s..e)) {
            Some(r) if r.end <= self.bytes.len() => Ok(r),
            _ => Err(MachineError::Trap { addr, bytes, kind: TrapKind::OutOfBounds }),
        }
    }

    pub fn read(&self, addr: u64, bytes: usize, align: usize) -> Result<&[u8], MachineError> {
        let r = self.range(addr, bytes, align)?;
        Ok(&self.bytes[r])
    }

    pub fn write(&mut self, addr: u64, data: &[u8], align: usize) -> Result<(), MachineError> {
        let r = self.range(addr, data.len(), align)?;
        self.bytes[r].copy_from_slice(data);
        Ok(())
    }
}

fn read_le(bytes: &[u8]) -> u64 {
    let mut buf = [0u8; 8];
    buf[..bytes.len()].copy_from_slice(bytes);
    u64::from_le_bytes(buf)
}

/// Element access into the register file at a fixed element width.
trait Elem {
    fn get(vrf: &[u8], idx: usize) -> u64;
    fn set(vrf: &mut [u8], idx: usize, value: u64);
}

macro_rules! elem_impl {
    ($name:ident, $ty:ty) => {
        struct $name;

        impl Elem for $name {
            #[inline(always)]
            fn get(vrf: &[u8], idx: usize) -> u64 {
                const N: usize = std::mem::size_of::<$ty>();
                <$ty>::from_le_bytes(vrf[idx * N..idx * N + N].try_into().unwrap()) as u64
            }

            #[inline(always)]
            fn set(vrf: &mut [u8], idx: usize, value: u64) {
                const N: usize = std::mem::size_of::<$ty>();
                vrf[idx * N..idx * N + N].copy_from_slice(&(value as $ty).to_le_bytes());
            }
        }
    };
}

elem_impl!(E8, u8);
elem_impl!(E16, u16);
elem_impl!(E32, u32);
elem_impl!(E64, u64);

/// Second source of an element-wise operation.
#[derive(Clone, Copy)]
enum Src {
    Vector(VReg),
    Scalar(u64),
}

/// Architectural state: register files, memory, vector configuration, counters.
#[derive(Debug, Clone)]
pub struct VectorMachine {
    config: MachineConfig,
    vrf: Vec<u8>,
    xregs: [u64; NUM_XREGS],
    memory: Memory,
    sew: Sew,
    vl: usize,
    counters: PerfCounters,
}

impl VectorMachine {
    pub fn new(config: MachineConfig, memory_bytes: usize) -> Result<Self, MachineError> {
        config.validate()?;
        Ok(Self {
            config,
            vrf: vec![0; NUM_VREGS * config.vlen_bytes()],
            xregs: [0; NUM_XREGS],
            memory: Memory::new(memory_bytes),
            sew: Sew::E8,
            vl: 0,
            counters: PerfCounters::default(),
        })
    }

    pub fn config(&self) -> &MachineConfig {
        &self.config
    }

    pub fn sew(&self) -> Sew {
        self.sew
    }

    pub fn vl(&self) -> usize {
        self.vl
    }

    pub fn vlmax(&self) -> usize {
        self.config.vlmax(self.sew)
    }

    pub fn counters(&self) -> &PerfCounters {
        &self.counters
    }

    /// Returns the counters accumulated so far and starts a fresh set.
    pub fn take_counters(&mut self) -> PerfCounters {
        std::mem::take(&mut self.counters)
    }

    pub fn memory(&self) -> &Memory {
        &self.memory
    }

    pub fn xreg(&self, r: XReg) -> u64 {
        self.xregs[r.index()]
    }

    pub fn set_xreg(&mut self, r: XReg, value: u64) {
        if r.index() != 0 {
            self.xregs[r.index()] = value;
        }
    }

    /// Elements `[0, VL)` of `r` at the current SEW.
    pub fn vreg(&self, r: VReg) -> Vec<u64> {
        (0..self.vl).map(|i| self.elem(r, i)).collect()
    }

    /// Writes `values` into the leading elements of `r` at the current SEW.
    pub fn set_vreg(&mut self, r: VReg, values: &[u64]) {
        assert!(values.len() <= self.vlmax(), "more values than VLMAX");
        for (i, &v) in values.iter().enumerate() {
            self.set_elem(r, i, v & self.sew.mask());
        }
    }

    fn elem(&self, r: VReg, i: usize) -> u64 {
        let bytes = self.sew.bytes();
        let off = r.index() * self.config.vlen_bytes() + i * bytes;
        read_le(&self.vrf[off..off + bytes])
    }

    fn set_elem(&mut self, r: VReg, i: usize, value: u64) {
        let bytes = self.sew.bytes();
        let off = r.index() * self.config.vlen_bytes() + i * bytes;
        self.vrf[off..off + bytes].copy_from_slice(&value.to_le_bytes()[..bytes]);
    }

    /// Host-side memory initialisation; not counted.
    pub fn write_elements(&mut self, addr: u64, sew: Sew, values: &[u64]) -> Result<(), MachineError> {
        let mut buf = Vec::with_capacity(values.len() * sew.bytes());
        for &v in values {
            buf.extend_from_slice(&v.to_le_bytes()[..sew.bytes()]);
        }
        self.memory.write(addr, &buf, sew.bytes())
    }

    /// Host-side memory read-back; not counted.
    pub fn read_elements(&self, addr: u64, sew: Sew, count: usize) -> Result<Vec<u64>, MachineError> {
        let raw = self.memory.read(addr, count * sew.bytes(), sew.bytes())?;
        Ok(raw.chunks_exact(sew.bytes()).map(read_le).collect())
    }

    pub fn execute(&mut self, insn: &Instruction) -> Result<(), MachineError> {
        if insn.is_masked() {
            return Err(MachineError::MaskedUnsupported(insn.opcode()));
        }
        let sew_bits = self.sew.bits();
        let mask = self.sew.mask();
        let half = sew_bits / 2;
        match *insn {
            Instruction::VSetVl { avl, sew } => {
                self.sew = sew;
                self.vl = avl.min(self.config.vlmax(sew));
            }
            Instruction::ScalarLoad { rd, addr, width } => {
                let value = read_le(self.memory.read(addr, width.bytes(), width.bytes())?);
                self.set_xreg(rd, value);
            }
            Instruction::ScalarStore { rs2, addr, width } => {
                let bytes = self.xreg(rs2).to_le_bytes();
                self.memory.write(addr, &bytes[..width.bytes()], width.bytes())?;
            }
            Instruction::VLoad { vd, addr } => {
                let n = self.vl * self.sew.bytes();
                let data = self.memory.read(addr, n, self.sew.bytes())?;
                let off = vd.index() * self.config.vlen_bytes();
                self.vrf[off..off + n].copy_from_slice(data);
            }
            Instruction::VStore { vs3, addr } => {
                let n = self.vl * self.sew.bytes();
                let off = vs3.index() * self.config.vlen_bytes();
                self.memory.write(addr, &self.vrf[off..off + n], self.sew.bytes())?;
            }
            Instruction::VMvVV { vd, vs1 } => self.lanewise(vd, vs1, Src::Vector(vs1), |_, _, s| s),
            Instruction::VMvVX { vd, rs1 } => {
                let x = self.xreg(rs1) & mask;
                self.lanewise(vd, vd, Src::Scalar(x), |_, _, s| s)
            }
            Instruction::VMvVI { vd, imm } => {
                let x = i64::from(imm) as u64 & mask;
                self.lanewise(vd, vd, Src::Scalar(x), |_, _, s| s)
            }
            Instruction::VSlideDownVI { vd, vs2, offset, .. } => self.slide_down(vd, vs2, offset.into()),
            Instruction::VAddVV { vd, vs2, vs1, .. } => {
                self.lanewise(vd, vs2, Src::Vector(vs1), |_, a, b| a.wrapping_add(b) & mask)
            }
            Instruction::VMulVV { vd, vs2, vs1, .. } => {
                self.lanewise(vd, vs2, Src::Vector(vs1), |_, a, b| a.wrapping_mul(b) & mask)
            }
            Instruction::VSrlVI { vd, vs2, shamt, .. } => {
                let sh = u64::from(shamt) & u64::from(sew_bits - 1);
                self.lanewise(vd, vs2, Src::Scalar(sh), |_, a, s| a >> s)
            }
            Instruction::VMaccVV { vd, vs1, vs2, .. } => {
                self.lanewise(vd, vs2, Src::Vector(vs1), |d, a, b| d.wrapping_add(a.wrapping_mul(b)) & mask)
            }
            Instruction::VMaccVX { vd, rs1, vs2, .. } => {
                let x = self.xreg(rs1) & mask;
                self.lanewise(vd, vs2, Src::Scalar(x), |d, a, b| d.wrapping_add(a.wrapping_mul(b)) & mask)
            }
            Instruction::VMacsrVV { vd, vs1, vs2, .. } => self.lanewise(vd, vs2, Src::Vector(vs1), |d, a, b| {
                d.wrapping_add((a.wrapping_mul(b) & mask) >> half) & mask
            }),
            Instruction::VMacsrVX { vd, rs1, vs2, .. } => {
                let x = self.xreg(rs1) & mask;
                self.lanewise(vd, vs2, Src::Scalar(x), |d, a, b| {
                    d.wrapping_add((a.wrapping_mul(b) & mask) >> half) & mask
                })
            }
        }

        let op = insn.opcode();
        if op.unit() == Unit::Scalar {
            self.counters.record_scalar(op);
        } else {
            self.counters.record_vector(op, self.vl, sew_bits);
        }
        Ok(())
    }

    /// Decodes and executes one instruction word.
    pub fn execute_word(&mut self, word: u32) -> Result<(), MachineError> {
        let insn = decode(word)?;
        self.execute(&insn)
    }

    /// Executes `program` in order, stopping at the first error.
    pub fn run_program(&mut self, program: &[Instruction]) -> Result<&PerfCounters, MachineError> {
        for (pc, insn) in program.iter().enumerate() {
            self.execute(insn).map_err(|e| MachineError::At { pc, source: Box::new(e) })?;
        }
        Ok(&self.counters)
    }

    /// `vd[i] ← f(vd[i], vs2[i], src[i])` for `i < VL`.
    fn lanewise(&mut self, vd: VReg, vs2: VReg, src: Src, f: impl Fn(u64, u64, u64) -> u64) {
        fn run<E: Elem>(
            vrf: &mut [u8],
            epr: usize,
            vl: usize,
            vd: VReg,
            vs2: VReg,
            src: Src,
            f: impl Fn(u64, u64, u64) -> u64,
        ) {
            let (d0, a0) = (vd.index() * epr, vs2.index() * epr);
            match src {
                Src::Vector(vs1) => {
                    let b0 = vs1.index() * epr;
                    for i in 0..vl {
                        let v = f(E::get(vrf, d0 + i), E::get(vrf, a0 + i), E::get(vrf, b0 + i));
                        E::set(vrf, d0 + i, v);
                    }
                }
                Src::Scalar(x) => {
                    for i in 0..vl {
                        let v = f(E::get(vrf, d0 + i), E::get(vrf, a0 + i), x);
                        E::set(vrf, d0 + i, v);
                    }
                }
            }
        }
        let epr = self.config.vlmax(self.sew);
        let vl = self.vl;
        let vrf = &mut self.vrf;
        match self.sew {
            Sew::E8 => run::<E8>(vrf, epr, vl, vd, vs2, src, f),
            Sew::E16 => run::<E16>(vrf, epr, vl, vd, vs2, src, f),
            Sew::E32 => run::<E32>(vrf, epr, vl, vd, vs2, src, f),
            Sew::E64 => run::<E64>(vrf, epr, vl, vd, vs2, src, f),
        }
    }

    fn slide_down(&mut self, vd: VReg, vs2: VReg, offset: usize) {
        fn run<E: Elem>(vrf: &mut [u8], epr: usize, vl: usize, vd: VReg, vs2: VReg, offset: usize) {
            let (d0, s0) = (vd.index() * epr, vs2.index() * epr);
            // Ascending order reads each source before it can be overwritten when vd == vs2.
            for i in 0..vl {
                let v = if i + offset < vl { E::get(vrf, s0 + i + offset) } else { 0 };
                E::set(vrf, d0 + i, v);
            }
        }
        let epr = self.config.vlmax(self.sew);
        let vl = self.vl;
        let vrf = &mut self.vrf;
        match self.sew {
            Sew::E8 => run::<E8>(vrf, epr, vl, vd, vs2, offset),
            Sew::E16 => run::<E16>(vrf, epr, vl, vd, vs2, offset),
            Sew::E32 => run::<E32>(vrf, epr, vl, vd, vs2, offset),
            Sew::E64 => run::<E64>(vrf, epr, vl, vd, vs2, offset),
        }
    }
}
