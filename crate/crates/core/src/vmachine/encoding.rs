//! 32-bit instruction words for the vector arithmetic subset.
//!
//! `vmacsr` takes the `funct6` slot right after `vmacc` (`0b101101`) and
//! exists in the OPMVV and OPMVX formats.

use std::fmt;

use thiserror::Error;

use super::isa::{Instruction, VReg, XReg};

pub const OPCODE_VECTOR: u32 = 0b101_0111;

pub const FUNCT3_OPIVV: u32 = 0b000;
pub const FUNCT3_OPMVV: u32 = 0b010;
pub const FUNCT3_OPIVI: u32 = 0b011;
pub const FUNCT3_OPIVX: u32 = 0b100;
pub const FUNCT3_OPMVX: u32 = 0b110;

pub const FUNCT6_VADD: u32 = 0b000000;
pub const FUNCT6_VSLIDEDOWN: u32 = 0b001111;
pub const FUNCT6_VMV: u32 = 0b010111;
pub const FUNCT6_VMUL: u32 = 0b100101;
pub const FUNCT6_VSRL: u32 = 0b101000;
pub const FUNCT6_VMACC: u32 = 0b101101;
pub const FUNCT6_VMACSR: u32 = FUNCT6_VMACC + 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("{0} has no 32-bit encoding in this simulator")]
    NotEncodable(&'static str),
    #[error("immediate {value} does not fit the {field} field")]
    Immediate { field: &'static str, value: i64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("word {word:#010x}: unrecognized {field} {value:#b}")]
    Unrecognized { word: u32, field: &'static str, value: u32 },
}

/// Operand format of `vmacsr`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VmacsrForm {
    /// Vector-vector (OPMVV).
    VV,
    /// Vector-scalar (OPMVX).
    VX,
}

impl fmt::Display for VmacsrForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VmacsrForm::VV => "vv",
            VmacsrForm::VX => "vx",
        })
    }
}

/// Raw fields of a vector arithmetic word.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fields {
    pub funct6: u32,
    pub vm: u32,
    pub vs2: u32,
    pub rs1: u32,
    pub funct3: u32,
    pub vd: u32,
    pub opcode: u32,
}

impl Fields {
    pub fn split(word: u32) -> Fields {
        Fields {
            funct6: word >> 26,
            vm: (word >> 25) & 1,
            vs2: (word >> 20) & 0x1f,
            rs1: (word >> 15) & 0x1f,
            funct3: (word >> 12) & 0b111,
            vd: (word >> 7) & 0x1f,
            opcode: word & 0x7f,
        }
    }

    pub fn join(self) -> u32 {
        (self.funct6 << 26)
            | (self.vm << 25)
            | (self.vs2 << 20)
            | (self.rs1 << 15)
            | (self.funct3 << 12)
            | (self.vd << 7)
            | self.opcode
    }
}

fn arith(funct6: u32, funct3: u32, vd: u32, rs1: u32, vs2: u32, masked: bool) -> u32 {
    Fields { funct6, vm: u32::from(!masked), vs2, rs1, funct3, vd, opcode: OPCODE_VECTOR }.join()
}

/// Encodes `vmacsr.vv vd, vs1, vs2` or `vmacsr.vx vd, rs1, vs2`.
pub fn encode_vmacsr(
    form: VmacsrForm,
    vd: u32,
    vs1_or_rs1: u32,
    vs2: u32,
    masked: bool,
) -> Result<u32, super::MachineError> {
    let (vd, vs2) = (VReg::new(vd)?, VReg::new(vs2)?);
    let insn = match form {
        VmacsrForm::VV => Instruction::VMacsrVV { vd, vs1: VReg::new(vs1_or_rs1)?, vs2, masked },
        VmacsrForm::VX => Instruction::VMacsrVX { vd, rs1: XReg::new(vs1_or_rs1)?, vs2, masked },
    };
    Ok(encode(&insn).expect("vmacsr is always encodable"))
}

/// Little-endian byte sequence of a word, as it sits in memory.
pub fn word_bytes(word: u32) -> [u8; 4] {
    word.to_le_bytes()
}

fn simm5(value: i8) -> Result<u32, EncodeError> {
    if (-16..=15).contains(&value) {
        Ok((value as u32) & 0x1f)
    } else {
        Err(EncodeError::Immediate { field: "simm5", value: value.into() })
    }
}

fn uimm5(value: u8) -> Result<u32, EncodeError> {
    if value < 32 {
        Ok(value.into())
    } else {
        Err(EncodeError::Immediate { field: "uimm5", value: value.into() })
    }
}

pub fn encode(insn: &Instruction) -> Result<u32, EncodeError> {
    let r = |v: VReg| v.index() as u32;
    let x = |x: XReg| x.index() as u32;
    let word = match *insn {
        Instruction::VMvVV { vd, vs1 } => arith(FUNCT6_VMV, FUNCT3_OPIVV, r(vd), r(vs1), 0, false),
        Instruction::VMvVX { vd, rs1 } => arith(FUNCT6_VMV, FUNCT3_OPIVX, r(vd), x(rs1), 0, false),
        Instruction::VMvVI { vd, imm } => arith(FUNCT6_VMV, FUNCT3_OPIVI, r(vd), simm5(imm)?, 0, false),
        Instruction::VSlideDownVI { vd, vs2, offset, masked } => {
            arith(FUNCT6_VSLIDEDOWN, FUNCT3_OPIVI, r(vd), uimm5(offset)?, r(vs2), masked)
        }
        Instruction::VAddVV { vd, vs2, vs1, masked } => arith(FUNCT6_VADD, FUNCT3_OPIVV, r(vd), r(vs1), r(vs2), masked),
        Instruction::VMulVV { vd, vs2, vs1, masked } => arith(FUNCT6_VMUL, FUNCT3_OPMVV, r(vd), r(vs1), r(vs2), masked),
        Instruction::VSrlVI { vd, vs2, shamt, masked } => {
            arith(FUNCT6_VSRL, FUNCT3_OPIVI, r(vd), uimm5(shamt)?, r(vs2), masked)
        }
        Instruction::VMaccVV { vd, vs1, vs2, masked } => {
            arith(FUNCT6_VMACC, FUNCT3_OPMVV, r(vd), r(vs1), r(vs2), masked)
        }
        Instruction::VMaccVX { vd, rs1, vs2, masked } => {
            arith(FUNCT6_VMACC, FUNCT3_OPMVX, r(vd), x(rs1), r(vs2), masked)
        }
        Instruction::VMacsrVV { vd, vs1, vs2, masked } => {
            arith(FUNCT6_VMACSR, FUNCT3_OPMVV, r(vd), r(vs1), r(vs2), masked)
        }
        Instruction::VMacsrVX { vd, rs1, vs2, masked } => {
            arith(FUNCT6_VMACSR, FUNCT3_OPMVX, r(vd), x(rs1), r(vs2), masked)
        }
        Instruction::VSetVl { .. }
        | Instruction::VLoad { .. }
        | Instruction::VStore { .. }
        | Instruction::ScalarLoad { .. }
        | Instruction::ScalarStore { .. } => return Err(EncodeError::NotEncodable(insn.opcode().mnemonic())),
    };
    Ok(word)
}

pub fn decode(word: u32) -> Result<Instruction, DecodeError> {
    let f = Fields::split(word);
    let bad = |field: &'static str, value: u32| DecodeError::Unrecognized { word, field, value };
    if f.opcode != OPCODE_VECTOR {
        return Err(bad("opcode", f.opcode));
    }
    let vd = VReg::of(f.vd as u8);
    let vs2 = VReg::of(f.vs2 as u8);
    let vs1 = VReg::of(f.rs1 as u8);
    let rs1 = XReg::of(f.rs1 as u8);
    let masked = f.vm == 0;
    let unmasked_move = || {
        if f.vm != 1 {
            Err(bad("vm", f.vm))
        } else if f.vs2 != 0 {
            Err(bad("vs2", f.vs2))
        } else {
            Ok(())
        }
    };

    let insn = match (f.funct3, f.funct6) {
        (FUNCT3_OPIVV, FUNCT6_VADD) => Instruction::VAddVV { vd, vs2, vs1, masked },
        (FUNCT3_OPIVV, FUNCT6_VMV) => {
            unmasked_move()?;
            Instruction::VMvVV { vd, vs1 }
        }
        (FUNCT3_OPIVX, FUNCT6_VMV) => {
            unmasked_move()?;
            Instruction::VMvVX { vd, rs1 }
        }
        (FUNCT3_OPIVI, FUNCT6_VMV) => {
            unmasked_move()?;
            // sign-extend simm5
            let imm = ((f.rs1 << 3) as u8 as i8) >> 3;
            Instruction::VMvVI { vd, imm }
        }
        (FUNCT3_OPIVI, FUNCT6_VSRL) => Instruction::VSrlVI { vd, vs2, shamt: f.rs1 as u8, masked },
        (FUNCT3_OPIVI, FUNCT6_VSLIDEDOWN) => Instruction::VSlideDownVI { vd, vs2, offset: f.rs1 as u8, masked },
        (FUNCT3_OPMVV, FUNCT6_VMUL) => Instruction::VMulVV { vd, vs2, vs1, masked },
        (FUNCT3_OPMVV, FUNCT6_VMACC) => Instruction::VMaccVV { vd, vs1, vs2, masked },
        (FUNCT3_OPMVV, FUNCT6_VMACSR) => Instruction::VMacsrVV { vd, vs1, vs2, masked },
        (FUNCT3_OPMVX, FUNCT6_VMACC) => Instruction::VMaccVX { vd, rs1, vs2, masked },
        (FUNCT3_OPMVX, FUNCT6_VMACSR) => Instruction::VMacsrVX { vd, rs1, vs2, masked },
        (FUNCT3_OPIVV | FUNCT3_OPMVV | FUNCT3_OPIVI | FUNCT3_OPIVX | FUNCT3_OPMVX, funct6) => {
            return Err(bad("funct6", funct6))
        }
        (funct3, _) => return Err(bad("funct3", funct3)),
    };
    Ok(insn)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(n: u32) -> VReg {
        VReg::new(n).unwrap()
    }

    #[test]
    fn vmacsr_follows_vmacc() {
        assert_eq!(FUNCT6_VMACSR, 0b101110);
        let word = encode_vmacsr(VmacsrForm::VV, 0, 1, 2, false).unwrap();
        assert_eq!(Fields::split(word).funct6, FUNCT6_VMACC + 1);
    }

    #[test]
    fn vmacsr_vv_word_layout() {
        // opcode 0x57 | vd 0 | funct3 010 | vs1 1 | vs2 2 | vm 1 | funct6 101110
        let word = encode_vmacsr(VmacsrForm::VV, 0, 1, 2, false).unwrap();
        assert_eq!(word, 0x57 | (0b010 << 12) | (1 << 15) | (2 << 20) | (1 << 25) | (0b101110 << 26));
        assert_eq!(word, 0xBA20_A057);
        assert_eq!(word_bytes(word)[0], 0x57);
        assert_eq!(word >> 26, 0b101110);
        // Same operands with vm = 0.
        let masked = encode_vmacsr(VmacsrForm::VV, 0, 1, 2, true).unwrap();
        assert_eq!(word_bytes(masked), [0x57, 0xA0, 0x20, 0xB8]);
    }

    #[test]
    fn vx_round_trip() {
        let word = encode_vmacsr(VmacsrForm::VX, 3, 4, 5, false).unwrap();
        assert_eq!(Fields::split(word).funct3, FUNCT3_OPMVX);
        assert_eq!(
            decode(word).unwrap(),
            Instruction::VMacsrVX { vd: v(3), rs1: XReg::new(4).unwrap(), vs2: v(5), masked: false }
        );
    }

    #[test]
    fn vmacc_slot_decodes_as_vmacc() {
        let word = arith(FUNCT6_VMACC, FUNCT3_OPMVV, 7, 8, 9, false);
        assert_eq!(decode(word).unwrap(), Instruction::VMaccVV { vd: v(7), vs1: v(8), vs2: v(9), masked: false });
    }

    #[test]
    fn rejects_unknown_words() {
        assert_eq!(decode(0), Err(DecodeError::Unrecognized { word: 0, field: "opcode", value: 0 }));
        // OPFVV is outside the subset
        let fp = arith(FUNCT6_VADD, 0b001, 1, 2, 3, false);
        assert!(matches!(decode(fp), Err(DecodeError::Unrecognized { field: "funct3", .. })));
        // vmadd (0b101001) is not implemented
        let vmadd = arith(0b101001, FUNCT3_OPMVV, 1, 2, 3, false);
        assert!(matches!(decode(vmadd), Err(DecodeError::Unrecognized { field: "funct6", value: 0b101001, .. })));
        let masked_move = arith(FUNCT6_VMV, FUNCT3_OPIVV, 1, 2, 0, true);
        assert!(matches!(decode(masked_move), Err(DecodeError::Unrecognized { field: "vm", .. })));
    }

    #[test]
    fn immediates() {
        for imm in -16..=15i8 {
            let insn = Instruction::VMvVI { vd: v(1), imm };
            assert_eq!(decode(encode(&insn).unwrap()).unwrap(), insn);
        }
        assert!(encode(&Instruction::VMvVI { vd: v(1), imm: 16 }).is_err());
        assert!(encode(&Instruction::VSrlVI { vd: v(1), vs2: v(2), shamt: 32, masked: false }).is_err());
        assert!(matches!(encode(&Instruction::VLoad { vd: v(1), addr: 0 }), Err(EncodeError::NotEncodable("vle"))));
    }
}
