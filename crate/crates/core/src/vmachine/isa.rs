use std::fmt;

use super::MachineError;

/// Selected element width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sew {
    E8,
    E16,
    E32,
    E64,
}

impl Sew {
    pub const ALL: [Sew; 4] = [Sew::E8, Sew::E16, Sew::E32, Sew::E64];

    pub fn bits(self) -> u32 {
        match self {
            Sew::E8 => 8,
            Sew::E16 => 16,
            Sew::E32 => 32,
            Sew::E64 => 64,
        }
    }

    pub fn bytes(self) -> usize {
        self.bits() as usize / 8
    }

    pub fn mask(self) -> u64 {
        u64::MAX >> (64 - self.bits())
    }

    pub fn from_bits(bits: u32) -> Option<Sew> {
        Sew::ALL.into_iter().find(|s| s.bits() == bits)
    }
}

impl fmt::Display for Sew {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.bits())
    }
}

macro_rules! register {
    ($name:ident, $prefix:literal) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(u8);

        impl $name {
            pub fn new(index: u32) -> Result<Self, MachineError> {
                if index < 32 {
                    Ok(Self(index as u8))
                } else {
                    Err(MachineError::RegisterIndex(index))
                }
            }

            pub fn index(self) -> usize {
                self.0 as usize
            }

            pub(crate) const fn of(index: u8) -> Self {
                assert!(index < 32);
                Self(index)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

register!(VReg, "v");
register!(XReg, "x");

/// Scalar memory access width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MemWidth {
    Byte,
    Half,
    Word,
    Double,
}

impl MemWidth {
    pub fn bytes(self) -> usize {
        match self {
            MemWidth::Byte => 1,
            MemWidth::Half => 2,
            MemWidth::Word => 4,
            MemWidth::Double => 8,
        }
    }

    pub fn from_bytes(bytes: usize) -> Option<MemWidth> {
        match bytes {
            1 => Some(MemWidth::Byte),
            2 => Some(MemWidth::Half),
            4 => Some(MemWidth::Word),
            8 => Some(MemWidth::Double),
            _ => None,
        }
    }
}

/// One decoded operation. Vector memory operations and scalar loads/stores
/// carry absolute addresses.
///
/// Multiply-accumulate forms follow the base ISA operand naming:
/// `vd[i] ← vd[i] + vs1[i]·vs2[i]` (or `rs1` in the `.vx` form).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Instruction {
    VSetVl {
        avl: usize,
        sew: Sew,
    },
    VLoad {
        vd: VReg,
        addr: u64,
    },
    VStore {
        vs3: VReg,
        addr: u64,
    },
    VMvVV {
        vd: VReg,
        vs1: VReg,
    },
    VMvVX {
        vd: VReg,
        rs1: XReg,
    },
    /// 5-bit signed immediate.
    VMvVI {
        vd: VReg,
        imm: i8,
    },
    VSlideDownVI {
        vd: VReg,
        vs2: VReg,
        offset: u8,
        masked: bool,
    },
    VAddVV {
        vd: VReg,
        vs2: VReg,
        vs1: VReg,
        masked: bool,
    },
    VMulVV {
        vd: VReg,
        vs2: VReg,
        vs1: VReg,
        masked: bool,
    },
    VSrlVI {
        vd: VReg,
        vs2: VReg,
        shamt: u8,
        masked: bool,
    },
    VMaccVV {
        vd: VReg,
        vs1: VReg,
        vs2: VReg,
        masked: bool,
    },
    VMaccVX {
        vd: VReg,
        rs1: XReg,
        vs2: VReg,
        masked: bool,
    },
    VMacsrVV {
        vd: VReg,
        vs1: VReg,
        vs2: VReg,
        masked: bool,
    },
    VMacsrVX {
        vd: VReg,
        rs1: XReg,
        vs2: VReg,
        masked: bool,
    },
    ScalarLoad {
        rd: XReg,
        addr: u64,
        width: MemWidth,
    },
    ScalarStore {
        rs2: XReg,
        addr: u64,
        width: MemWidth,
    },
}

/// Opcode class of an [`Instruction`], used as the counter key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Opcode {
    VSetVl,
    VLoad,
    VStore,
    VMv,
    VSlideDown,
    VAddVV,
    VMulVV,
    VSrlVI,
    VMaccVV,
    VMaccVX,
    VMacsrVV,
    VMacsrVX,
    ScalarLoad,
    ScalarStore,
}

impl Opcode {
    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::VSetVl => "vsetvl",
            Opcode::VLoad => "vle",
            Opcode::VStore => "vse",
            Opcode::VMv => "vmv",
            Opcode::VSlideDown => "vslidedown",
            Opcode::VAddVV => "vadd.vv",
            Opcode::VMulVV => "vmul.vv",
            Opcode::VSrlVI => "vsrl.vi",
            Opcode::VMaccVV => "vmacc.vv",
            Opcode::VMaccVX => "vmacc.vx",
            Opcode::VMacsrVV => "vmacsr.vv",
            Opcode::VMacsrVX => "vmacsr.vx",
            Opcode::ScalarLoad => "load",
            Opcode::ScalarStore => "store",
        }
    }

    /// Functional unit that executes the opcode.
    pub fn unit(self) -> Unit {
        match self {
            Opcode::VSetVl | Opcode::ScalarLoad | Opcode::ScalarStore => Unit::Scalar,
            Opcode::VLoad | Opcode::VStore => Unit::LoadStore,
            Opcode::VSlideDown => Unit::Slide,
            Opcode::VMv
            | Opcode::VAddVV
            | Opcode::VMulVV
            | Opcode::VSrlVI
            | Opcode::VMaccVV
            | Opcode::VMaccVX
            | Opcode::VMacsrVV
            | Opcode::VMacsrVX => Unit::Lane,
        }
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

/// Execution resource an instruction occupies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Unit {
    /// Scalar core: scalar memory accesses and vector configuration.
    Scalar,
    /// Vector load/store unit.
    LoadStore,
    /// Slide unit.
    Slide,
    /// Lane arithmetic (integer ALU and multiplier share the lane datapath).
    Lane,
}

impl Instruction {
    pub fn opcode(&self) -> Opcode {
        match self {
            Instruction::VSetVl { .. } => Opcode::VSetVl,
            Instruction::VLoad { .. } => Opcode::VLoad,
            Instruction::VStore { .. } => Opcode::VStore,
            Instruction::VMvVV { .. } | Instruction::VMvVX { .. } | Instruction::VMvVI { .. } => Opcode::VMv,
            Instruction::VSlideDownVI { .. } => Opcode::VSlideDown,
            Instruction::VAddVV { .. } => Opcode::VAddVV,
            Instruction::VMulVV { .. } => Opcode::VMulVV,
            Instruction::VSrlVI { .. } => Opcode::VSrlVI,
            Instruction::VMaccVV { .. } => Opcode::VMaccVV,
            Instruction::VMaccVX { .. } => Opcode::VMaccVX,
            Instruction::VMacsrVV { .. } => Opcode::VMacsrVV,
            Instruction::VMacsrVX { .. } => Opcode::VMacsrVX,
            Instruction::ScalarLoad { .. } => Opcode::ScalarLoad,
            Instruction::ScalarStore { .. } => Opcode::ScalarStore,
        }
    }

    pub fn is_masked(&self) -> bool {
        match *self {
            Instruction::VSlideDownVI { masked, .. }
            | Instruction::VAddVV { masked, .. }
            | Instruction::VMulVV { masked, .. }
            | Instruction::VSrlVI { masked, .. }
            | Instruction::VMaccVV { masked, .. }
            | Instruction::VMaccVX { masked, .. }
            | Instruction::VMacsrVV { masked, .. }
            | Instruction::VMacsrVX { masked, .. } => masked,
            _ => false,
        }
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = if self.is_masked() { ", v0.t" } else { "" };
        match *self {
            Instruction::VSetVl { avl, sew } => write!(f, "vsetvl {avl}, {sew}"),
            Instruction::VLoad { vd, addr } => write!(f, "vle {vd}, ({addr:#x})"),
            Instruction::VStore { vs3, addr } => write!(f, "vse {vs3}, ({addr:#x})"),
            Instruction::VMvVV { vd, vs1 } => write!(f, "vmv.v.v {vd}, {vs1}"),
            Instruction::VMvVX { vd, rs1 } => write!(f, "vmv.v.x {vd}, {rs1}"),
            Instruction::VMvVI { vd, imm } => write!(f, "vmv.v.i {vd}, {imm}"),
            Instruction::VSlideDownVI { vd, vs2, offset, .. } => write!(f, "vslidedown.vi {vd}, {vs2}, {offset}{m}"),
            Instruction::VAddVV { vd, vs2, vs1, .. } => write!(f, "vadd.vv {vd}, {vs2}, {vs1}{m}"),
            Instruction::VMulVV { vd, vs2, vs1, .. } => write!(f, "vmul.vv {vd}, {vs2}, {vs1}{m}"),
            Instruction::VSrlVI { vd, vs2, shamt, .. } => write!(f, "vsrl.vi {vd}, {vs2}, {shamt}{m}"),
            Instruction::VMaccVV { vd, vs1, vs2, .. } => write!(f, "vmacc.vv {vd}, {vs1}, {vs2}{m}"),
            Instruction::VMaccVX { vd, rs1, vs2, .. } => write!(f, "vmacc.vx {vd}, {rs1}, {vs2}{m}"),
            Instruction::VMacsrVV { vd, vs1, vs2, .. } => write!(f, "vmacsr.vv {vd}, {vs1}, {vs2}{m}"),
            Instruction::VMacsrVX { vd, rs1, vs2, .. } => write!(f, "vmacsr.vx {vd}, {rs1}, {vs2}{m}"),
            Instruction::ScalarLoad { rd, addr, width } => write!(f, "load{} {rd}, ({addr:#x})", width.bytes() * 8),
            Instruction::ScalarStore { rs2, addr, width } => {
                write!(f, "store{} {rs2}, ({addr:#x})", width.bytes() * 8)
            }
        }
    }
}
