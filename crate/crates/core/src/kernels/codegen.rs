//! Program generation for the slide-based convolution kernels.
//!
//! Instructions are executed as they are emitted, so full-size problems never
//! materialise a program buffer.
//!
//! Accumulator slot `s` (of `Fh`) holds output row `h − (Fh−1) + s` while input
//! row `h` is processed and takes kernel row `Fh−1−s`. Slot 0 is complete once
//! `h ≥ Fh−1`; after the store every slot moves down by one and the top slot
//! is cleared for the next row.
//!
//! Rows wider than VLMAX are split into equally sized column tiles (the last
//! one overlaps its neighbour), and as many tiles as the register file allows
//! share each scalar kernel load.

use crate::packing::{pack_p1, ElemWidth, PackRole, QuantTensor};
use crate::vmachine::{Instruction, MachineConfig, MachineError, MemWidth, Sew, VReg, VectorMachine, XReg};

use super::{ConvOutput, ConvShape, KernelError, KernelOptions, KernelRun, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum MacKind {
    Vmacc,
    Vmacsr,
    /// `vmacc` into a local accumulator, extracted every `budget` products.
    Local {
        budget: u32,
    },
}

const SCRATCH: VReg = VReg::of(31);
const SHIFT_CONST: XReg = XReg::of(31);
const MAX_SCALAR_TAPS: usize = 30;

pub(crate) struct Emitter {
    pub(crate) m: VectorMachine,
    pc: usize,
    vtype: Option<(usize, Sew)>,
}

impl Emitter {
    pub(crate) fn new(m: VectorMachine) -> Self {
        Self { m, pc: 0, vtype: None }
    }

    fn emit(&mut self, insn: Instruction) -> Result<(), KernelError> {
        self.m.execute(&insn).map_err(|e| MachineError::At { pc: self.pc, source: Box::new(e) })?;
        self.pc += 1;
        Ok(())
    }

    fn set_vl(&mut self, avl: usize, sew: Sew) -> Result<(), KernelError> {
        if self.vtype != Some((avl, sew)) {
            self.emit(Instruction::VSetVl { avl, sew })?;
            self.vtype = Some((avl, sew));
        }
        Ok(())
    }
}

#[derive(Default)]
struct Layout {
    next: u64,
}

impl Layout {
    fn alloc(&mut self, bytes: usize) -> u64 {
        let addr = self.next;
        self.next = (addr + bytes as u64 + 7) & !7;
        addr
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Tiling {
    pub vl: usize,
    pub tile_w: usize,
    pub x0: Vec<usize>,
}

pub(crate) fn tiling(shape: &ConvShape, vlmax: usize, sew: Sew) -> Result<Tiling, KernelError> {
    if shape.kernel_w > vlmax {
        return Err(KernelError::VectorLength { kernel_w: shape.kernel_w, vlmax, sew });
    }
    let out_w = shape.out_w();
    let max_tile = vlmax - shape.kernel_w + 1;
    let tiles = out_w.div_ceil(max_tile);
    let tile_w = out_w.div_ceil(tiles);
    let x0 = (0..tiles).map(|t| (t * tile_w).min(out_w - tile_w)).collect();
    Ok(Tiling { vl: tile_w + shape.kernel_w - 1, tile_w, x0 })
}

struct SlideConv {
    sew: Sew,
    shape: ConvShape,
    /// Channels iterated by the kernel: `C` unpacked or `ceil(C/2)` packed.
    channels: usize,
    input: u64,
    kernel: u64,
    output: u64,
    mac: MacKind,
}

#[derive(Clone, Copy)]
struct TileRegs {
    x0: usize,
    base: u8,
    kernel_h: u8,
}

impl TileRegs {
    fn row(self) -> VReg {
        VReg::of(self.base)
    }

    fn acc(self, slot: usize) -> VReg {
        VReg::of(self.base + 1 + slot as u8)
    }

    fn local(self, slot: usize) -> VReg {
        VReg::of(self.base + 1 + self.kernel_h + slot as u8)
    }
}

fn tap(slot: usize) -> XReg {
    XReg::of(1 + slot as u8)
}

fn extract(em: &mut Emitter, t: TileRegs, slot: usize, half: u8) -> Result<(), KernelError> {
    em.emit(Instruction::VSrlVI { vd: SCRATCH, vs2: t.local(slot), shamt: half, masked: false })?;
    em.emit(Instruction::VAddVV { vd: t.acc(slot), vs2: t.acc(slot), vs1: SCRATCH, masked: false })?;
    em.emit(Instruction::VMvVI { vd: t.local(slot), imm: 0 })
}

fn emit_slide_conv(em: &mut Emitter, p: &SlideConv) -> Result<(), KernelError> {
    let shape = p.shape;
    let (fh, fw) = (shape.kernel_h, shape.kernel_w);
    let eb = p.sew.bytes() as u64;
    let width = MemWidth::from_bytes(p.sew.bytes()).expect("SEW maps to a scalar width");
    let half = (p.sew.bits() / 2) as u8;
    let tiles = tiling(&shape, em.m.config().vlmax(p.sew), p.sew)?;

    if fh > MAX_SCALAR_TAPS {
        return Err(KernelError::Registers { kernel_h: fh, kind: "scalar" });
    }
    let local_budget = match p.mac {
        MacKind::Local { budget } => Some(budget),
        _ => None,
    };
    let per_tile = 1 + fh + if local_budget.is_some() { fh } else { 0 };
    let available = 32 - usize::from(local_budget.is_some());
    let per_group = available / per_tile;
    if per_group == 0 {
        return Err(KernelError::Registers { kernel_h: fh, kind: "vector" });
    }

    for group in tiles.x0.chunks(per_group) {
        let regs: Vec<TileRegs> = group
            .iter()
            .enumerate()
            .map(|(g, &x0)| TileRegs { x0, base: (g * per_tile) as u8, kernel_h: fh as u8 })
            .collect();
        // Products accumulated in each slot's local register since its last extraction.
        let mut pending = vec![0u32; fh];

        for h in 0..shape.height {
            em.set_vl(tiles.vl, p.sew)?;
            for t in &regs {
                em.emit(Instruction::VMvVI { vd: t.acc(fh - 1), imm: 0 })?;
                if local_budget.is_some() {
                    em.emit(Instruction::VMvVI { vd: t.local(fh - 1), imm: 0 })?;
                }
            }
            pending[fh - 1] = 0;

            for c in 0..p.channels {
                for t in &regs {
                    let addr = p.input + (((c * shape.height + h) * shape.width + t.x0) as u64) * eb;
                    em.emit(Instruction::VLoad { vd: t.row(), addr })?;
                }
                for i in 0..fw {
                    for s in 0..fh {
                        let addr = p.kernel + (((c * fh + (fh - 1 - s)) * fw + i) as u64) * eb;
                        em.emit(Instruction::ScalarLoad { rd: tap(s), addr, width })?;
                    }
                    for t in &regs {
                        for s in 0..fh {
                            let (rs1, vs2) = (tap(s), t.row());
                            em.emit(match p.mac {
                                MacKind::Vmacc => Instruction::VMaccVX { vd: t.acc(s), rs1, vs2, masked: false },
                                MacKind::Vmacsr => Instruction::VMacsrVX { vd: t.acc(s), rs1, vs2, masked: false },
                                MacKind::Local { .. } => {
                                    Instruction::VMaccVX { vd: t.local(s), rs1, vs2, masked: false }
                                }
                            })?;
                        }
                    }
                    if let Some(budget) = local_budget {
                        for (s, count) in pending.iter_mut().enumerate() {
                            *count += 1;
                            if *count == budget {
                                for &t in &regs {
                                    extract(em, t, s, half)?;
                                }
                                *count = 0;
                            }
                        }
                    }
                    for t in &regs {
                        em.emit(Instruction::VSlideDownVI { vd: t.row(), vs2: t.row(), offset: 1, masked: false })?;
                    }
                }
            }

            if h + 1 >= fh {
                if local_budget.is_some() && pending[0] > 0 {
                    for &t in &regs {
                        extract(em, t, 0, half)?;
                    }
                    pending[0] = 0;
                }
                em.set_vl(tiles.tile_w, p.sew)?;
                let y = h + 1 - fh;
                for t in &regs {
                    let addr = p.output + ((y * shape.out_w() + t.x0) as u64) * eb;
                    em.emit(Instruction::VStore { vs3: t.acc(0), addr })?;
                }
                em.set_vl(tiles.vl, p.sew)?;
            }

            for s in 0..fh - 1 {
                for t in &regs {
                    em.emit(Instruction::VMvVV { vd: t.acc(s), vs1: t.acc(s + 1) })?;
                    if local_budget.is_some() {
                        em.emit(Instruction::VMvVV { vd: t.local(s), vs1: t.local(s + 1) })?;
                    }
                }
                pending[s] = pending[s + 1];
            }
        }
    }
    Ok(())
}

fn read_output(em: &Emitter, shape: &ConvShape, addr: u64, sew: Sew) -> Result<ConvOutput, KernelError> {
    let (out_h, out_w) = (shape.out_h(), shape.out_w());
    let values = em.m.read_elements(addr, sew, out_h * out_w)?;
    Ok(ConvOutput { out_h, out_w, value_bits: sew.bits(), values })
}

fn widen(data: &[u16]) -> Vec<u64> {
    data.iter().map(|&v| u64::from(v)).collect()
}

pub(crate) fn run_int16(
    cfg: &MachineConfig,
    shape: ConvShape,
    input: &QuantTensor,
    kernel: &QuantTensor,
) -> Result<KernelRun, KernelError> {
    let sew = Sew::E16;
    let eb = sew.bytes();
    let mut layout = Layout::default();
    let in_addr = layout.alloc(input.data().len() * eb);
    let k_addr = layout.alloc(kernel.data().len() * eb);
    let out_addr = layout.alloc(shape.out_h() * shape.out_w() * eb);

    let mut m = VectorMachine::new(*cfg, layout.next as usize)?;
    m.write_elements(in_addr, sew, &widen(input.data()))?;
    m.write_elements(k_addr, sew, &widen(kernel.data()))?;
    let mut em = Emitter::new(m);
    let conv = SlideConv {
        sew,
        shape,
        channels: shape.channels,
        input: in_addr,
        kernel: k_addr,
        output: out_addr,
        mac: MacKind::Vmacc,
    };
    emit_slide_conv(&mut em, &conv)?;
    let output = read_output(&em, &shape, out_addr, sew)?;
    Ok(KernelRun {
        shape,
        variant: Variant::Int16,
        output,
        packing: Default::default(),
        compute: em.m.take_counters(),
        budget: None,
    })
}

pub(crate) struct PackedImage {
    pub em: Emitter,
    pub input: u64,
    pub kernel: u64,
    pub output: u64,
}

/// Stages unpacked operands in memory and packs them on the machine.
/// Counters afterwards cover exactly the packing work.
pub(crate) fn stage_and_pack(
    cfg: &MachineConfig,
    shape: &ConvShape,
    input: &QuantTensor,
    kernel: &QuantTensor,
    elem: ElemWidth,
    opts: KernelOptions,
) -> Result<PackedImage, KernelError> {
    let sew = Sew::from_bits(elem.bits()).expect("element width is a SEW");
    let eb = sew.bytes();
    let pairs = shape.channels.div_ceil(2);
    let plane = shape.height * shape.width;
    let taps = shape.kernel_h * shape.kernel_w;

    let mut layout = Layout::default();
    let konst = layout.alloc(8);
    // Staging areas hold 2·pairs planes; a padding plane stays zero.
    let in_stage = layout.alloc(2 * pairs * plane * eb);
    let in_packed = layout.alloc(pairs * plane * eb);
    let w_stage = (!opts.prepacked_weights).then(|| layout.alloc(2 * pairs * taps * eb));
    let w_packed = layout.alloc(pairs * taps * eb);
    let output = layout.alloc(shape.out_h() * shape.out_w() * eb);

    let mut m = VectorMachine::new(*cfg, layout.next as usize)?;
    m.write_elements(konst, Sew::E64, &[1 << elem.half_bits()])?;
    m.write_elements(in_stage, sew, &widen(input.data()))?;
    match w_stage {
        Some(addr) => m.write_elements(addr, sew, &widen(kernel.data()))?,
        None => {
            let packed = pack_p1(kernel, elem, PackRole::Weight)?;
            m.write_elements(w_packed, sew, &widen(packed.data()))?;
        }
    }

    let mut em = Emitter::new(m);
    em.emit(Instruction::ScalarLoad { rd: SHIFT_CONST, addr: konst, width: MemWidth::Double })?;
    pack_planes(&mut em, in_stage, in_packed, pairs, plane, sew, PackRole::Activation)?;
    if let Some(addr) = w_stage {
        pack_planes(&mut em, addr, w_packed, pairs, taps, sew, PackRole::Weight)?;
    }
    Ok(PackedImage { em, input: in_packed, kernel: w_packed, output })
}

/// Packs `pairs` channel pairs of `len`-element planes: `lo + 2^(E/2)·hi`.
fn pack_planes(
    em: &mut Emitter,
    src: u64,
    dst: u64,
    pairs: usize,
    len: usize,
    sew: Sew,
    role: PackRole,
) -> Result<(), KernelError> {
    let eb = sew.bytes() as u64;
    let vlmax = em.m.config().vlmax(sew);
    let (lo_reg, hi_reg) = (VReg::of(0), VReg::of(1));
    for k in 0..pairs {
        let (lo, hi) = match role {
            PackRole::Activation => (2 * k, 2 * k + 1),
            PackRole::Weight => (2 * k + 1, 2 * k),
        };
        for start in (0..len).step_by(vlmax) {
            em.set_vl(vlmax.min(len - start), sew)?;
            em.emit(Instruction::VLoad { vd: lo_reg, addr: src + ((lo * len + start) as u64) * eb })?;
            em.emit(Instruction::VLoad { vd: hi_reg, addr: src + ((hi * len + start) as u64) * eb })?;
            em.emit(Instruction::VMaccVX { vd: lo_reg, rs1: SHIFT_CONST, vs2: hi_reg, masked: false })?;
            em.emit(Instruction::VStore { vs3: lo_reg, addr: dst + ((k * len + start) as u64) * eb })?;
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn run_packed(
    cfg: &MachineConfig,
    shape: ConvShape,
    input: &QuantTensor,
    kernel: &QuantTensor,
    variant: Variant,
    mac: MacKind,
    opts: KernelOptions,
) -> Result<KernelRun, KernelError> {
    let elem = ElemWidth::from_bits(variant.elem_bits()).expect("packed variants use 8- or 16-bit elements");
    let sew = variant.sew();
    let PackedImage { mut em, input: in_addr, kernel: k_addr, output: out_addr } =
        stage_and_pack(cfg, &shape, input, kernel, elem, opts)?;
    let packing = em.m.take_counters();

    let conv = SlideConv {
        sew,
        shape,
        channels: shape.channels.div_ceil(2),
        input: in_addr,
        kernel: k_addr,
        output: out_addr,
        mac,
    };
    emit_slide_conv(&mut em, &conv)?;
    let output = read_output(&em, &shape, out_addr, sew)?;
    Ok(KernelRun {
        shape,
        variant,
        output,
        packing,
        compute: em.m.take_counters(),
        budget: match mac {
            MacKind::Local { budget } => Some(budget),
            _ => None,
        },
    })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize, bits: u32) -> QuantTensor {
        let data = (0..c * h * w).map(|_| rng.gen_range(0..1u16 << bits)).collect();
        QuantTensor::new(c, h, w, bits, data).unwrap()
    }

    #[test]
    fn tiling_fits_vlmax() {
        let shape = ConvShape::square(1, 512, 7).unwrap();
        let t = tiling(&shape, 256, Sew::E16).unwrap();
        assert_eq!(t.x0.len(), 3);
        assert_eq!(t.tile_w, 169);
        assert_eq!(t.vl, 175);
        assert_eq!(t.x0, vec![0, 169, 337]);
        assert_eq!(t.x0.last().unwrap() + t.tile_w, shape.out_w());

        let shape = ConvShape::square(1, 256, 7).unwrap();
        let t = tiling(&shape, 256, Sew::E16).unwrap();
        assert_eq!((t.x0.len(), t.vl, t.tile_w), (1, 256, 250));

        let shape = ConvShape::new(1, 4, 40, 1, 33).unwrap();
        assert!(matches!(tiling(&shape, 32, Sew::E64), Err(KernelError::VectorLength { .. })));
    }

    #[test]
    fn machine_packing_matches_host_packing() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (elem, bits, c) in [(ElemWidth::E8, 2, 4), (ElemWidth::E16, 4, 5)] {
            let input = random(&mut rng, c, 6, 9, bits);
            let kernel = random(&mut rng, c, 3, 3, bits);
            let shape = ConvShape::of(&input, &kernel).unwrap();
            let img =
                stage_and_pack(&MachineConfig::default(), &shape, &input, &kernel, elem, Default::default()).unwrap();
            let sew = Sew::from_bits(elem.bits()).unwrap();
            let pairs = c.div_ceil(2);
            let got_in = img.em.m.read_elements(img.input, sew, pairs * 6 * 9).unwrap();
            let got_w = img.em.m.read_elements(img.kernel, sew, pairs * 9).unwrap();
            let want_in = widen(pack_p1(&input, elem, PackRole::Activation).unwrap().data());
            let want_w = widen(pack_p1(&kernel, elem, PackRole::Weight).unwrap().data());
            assert_eq!(got_in, want_in);
            assert_eq!(got_w, want_w);
        }
    }

    #[test]
    fn narrow_machine_runs_many_tile_groups() {
        // 256-bit VLEN at e16 gives VLMAX 16: a 40-wide row needs several tiles.
        let cfg = MachineConfig { vlen_bits: 256, lanes: 1, datapath_bits_per_lane: 64 };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let input = random(&mut rng, 3, 9, 40, 3);
        let kernel = random(&mut rng, 3, 3, 5, 3);
        let shape = ConvShape::of(&input, &kernel).unwrap();
        let run = run_int16(&cfg, shape, &input, &kernel).unwrap();
        let oracle = super::super::conv2d_oracle(&input, &kernel).unwrap();
        assert_eq!(run.output.values, oracle.values);
    }
}
