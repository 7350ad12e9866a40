use proptest::prelude::*;
use vmacsr_core::fixture::random_tensor;
use vmacsr_core::packing::{pack_pair, packed_product_fields, unpack_p1, unpack_pair};
use vmacsr_core::vmachine::encoding::{decode, encode, encode_vmacsr};
use vmacsr_core::vmachine::{VReg, VmacsrForm, XReg};
use vmacsr_core::*;

fn elem() -> impl Strategy<Value = ElemWidth> {
    prop_oneof![Just(ElemWidth::E8), Just(ElemWidth::E16)]
}

fn admissible(mode: AccumMode) -> impl Strategy<Value = (ElemWidth, Precision)> {
    elem().prop_flat_map(move |e| {
        let points: Vec<Precision> = Precision::grid().filter(|&p| is_admissible(p, e, mode)).collect();
        (Just(e), proptest::sample::select(points))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn pack_unpack_round_trip(
        (e, p) in admissible(AccumMode::Vmacsr),
        c in 1usize..7, h in 1usize..6, w in 1usize..6, seed: u64,
    ) {
        let t = random_tensor(seed, c, h, w, p.act_bits()).unwrap();
        for role in [PackRole::Activation, PackRole::Weight] {
            let packed = pack_p1(&t, e, role).unwrap();
            prop_assert_eq!(packed.packed_channels(), c.div_ceil(2));
            prop_assert_eq!(unpack_p1(&packed).unwrap(), t.clone());
        }
    }

    #[test]
    fn pair_round_trip(e in elem(), x0: u16, x1: u16, weight: bool) {
        let m = (1u64 << e.half_bits()) - 1;
        let (x0, x1) = (u64::from(x0) & m, u64::from(x1) & m);
        let role = if weight { PackRole::Weight } else { PackRole::Activation };
        prop_assert_eq!(unpack_pair(pack_pair(x0, x1, e, role), e, role), (x0, x1));
    }

    #[test]
    fn mid_field_is_dot_product((e, p) in admissible(AccumMode::Vmacsr), a0: u8, a1: u8, w0: u8, w1: u8) {
        let (am, wm) = (p.act_max(), p.wgt_max());
        let (a0, a1, w0, w1) = (u64::from(a0) & am, u64::from(a1) & am, u64::from(w0) & wm, u64::from(w1) & wm);
        let a = pack_pair(a0, a1, e, PackRole::Activation);
        let w = pack_pair(w0, w1, e, PackRole::Weight);
        prop_assert_eq!(packed_product_fields(a, w, e).mid, a0 * w0 + a1 * w1);
    }

    #[test]
    fn vx_equals_broadcast_vv(sew_i in 0usize..3, vl in 1usize..64, seed: u64, scalar: u64) {
        use rand::{Rng, SeedableRng};
        let sew = [Sew::E8, Sew::E16, Sew::E32][sew_i];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d: Vec<u64> = (0..vl).map(|_| rng.gen::<u64>() & sew.mask()).collect();
        let s2: Vec<u64> = (0..vl).map(|_| rng.gen::<u64>() & sew.mask()).collect();
        let v = |i| VReg::new(i).unwrap();
        let x = XReg::new(5).unwrap();
        let mut m = VectorMachine::new(MachineConfig::default(), 0).unwrap();
        m.set_xreg(x, scalar);
        m.set_vreg(v(1), &d);
        m.set_vreg(v(2), &d);
        m.set_vreg(v(3), &s2);
        m.run_program(&[
            Instruction::VSetVl { avl: vl, sew },
            Instruction::VMvVX { vd: v(4), rs1: x },
            Instruction::VMacsrVX { vd: v(1), rs1: x, vs2: v(3), masked: false },
            Instruction::VMacsrVV { vd: v(2), vs1: v(4), vs2: v(3), masked: false },
        ]).unwrap();
        prop_assert_eq!(m.vreg(v(1)), m.vreg(v(2)));
    }

    #[test]
    fn encode_decode_round_trip(vx: bool, vd in 0u32..32, src in 0u32..32, vs2 in 0u32..32, masked: bool) {
        let form = if vx { VmacsrForm::VX } else { VmacsrForm::VV };
        let word = encode_vmacsr(form, vd, src, vs2, masked).unwrap();
        let insn = decode(word).unwrap();
        prop_assert_eq!(encode(&insn), Ok(word));
        prop_assert_eq!(word & 0x7f, 0x57);
        prop_assert_eq!(word >> 26, 0b101110);
    }

    #[test]
    fn out_of_range_registers_are_rejected(vd in 32u32..64) {
        prop_assert!(encode_vmacsr(VmacsrForm::VV, vd, 0, 0, false).is_err());
        prop_assert!(encode_vmacsr(VmacsrForm::VX, 0, vd, 0, false).is_err());
    }
}

fn small_shape() -> impl Strategy<Value = ConvShape> {
    (1usize..6, 4usize..14, 4usize..14, 1usize..4, 1usize..4)
        .prop_map(|(c, h, w, fh, fw)| ConvShape::new(c, h, w, fh, fw).unwrap())
}

fn tensors(shape: ConvShape, p: Precision, seed: u64) -> (QuantTensor, QuantTensor) {
    (
        random_tensor(seed, shape.channels, shape.height, shape.width, p.act_bits()).unwrap(),
        random_tensor(seed ^ 7, shape.channels, shape.kernel_h, shape.kernel_w, p.wgt_bits()).unwrap(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn vmacsr_agrees_with_oracle_modulo_sew(
        (e, p) in admissible(AccumMode::Vmacsr), shape in small_shape(), seed: u64, pre: bool,
    ) {
        let (input, kernel) = tensors(shape, p, seed);
        let run = conv2d_ulppack_vmacsr(&MachineConfig::default(), &input, &kernel, p, e,
            KernelOptions { prepacked_weights: pre }).unwrap();
        let v = run.verify(&conv2d_oracle(&input, &kernel).unwrap());
        prop_assert!(v.modular_mismatch.is_none(), "{:?}", v.modular_mismatch);
    }

    #[test]
    fn native_budget_one_fuses_to_vmacsr((e, p) in admissible(AccumMode::Native), shape in small_shape(), seed: u64) {
        let (input, kernel) = tensors(shape, p, seed);
        let cfg = MachineConfig::default();
        let opts = KernelOptions::default();
        let native = conv2d_ulppack_native(&cfg, &input, &kernel, p, e, NativeBudget::Fixed(1), opts).unwrap();
        let fused = conv2d_ulppack_vmacsr(&cfg, &input, &kernel, p, e, opts).unwrap();
        prop_assert_eq!(native.output, fused.output);
    }

    #[test]
    fn packed_loads_and_stores((e, p) in admissible(AccumMode::Vmacsr), shape in small_shape(), seed: u64) {
        let (input, kernel) = tensors(shape, p, seed);
        let run = conv2d_ulppack_vmacsr(&MachineConfig::default(), &input, &kernel, p, e, KernelOptions::default()).unwrap();
        let c = &run.compute;
        prop_assert_eq!(c.count(vmacsr_core::vmachine::Opcode::VLoad), (shape.height * shape.channels.div_ceil(2)) as u64);
        prop_assert_eq!(c.count(vmacsr_core::vmachine::Opcode::VStore), shape.out_h() as u64);
    }

    #[test]
    fn speedup_of_self_is_one(shape in small_shape(), seed: u64) {
        let p = Precision::new(2, 2).unwrap();
        let (input, kernel) = tensors(shape, p, seed);
        let run = conv2d_int16(&MachineConfig::default(), &input, &kernel).unwrap();
        let r = PerfReport::new(&run, &CycleModel::default()).unwrap();
        prop_assert_eq!(speedup(&r, &r).unwrap(), 1.0);
        prop_assert!(r.utilization > 0.0 && r.utilization <= 1.0);
    }

    #[test]
    fn narrower_elements_never_slow_the_model(
        p in proptest::sample::select(region_map(ElemWidth::E8, AccumMode::Vmacsr).admissible().collect::<Vec<_>>()),
        shape in small_shape(), seed: u64,
    ) {
        let (input, kernel) = tensors(shape, p, seed);
        let cfg = MachineConfig::default();
        let model = CycleModel::default();
        let cycles = |e| {
            let run = conv2d_ulppack_vmacsr(&cfg, &input, &kernel, p, e, KernelOptions::default()).unwrap();
            model.cycles(&run.counters())
        };
        prop_assert!(cycles(ElemWidth::E8) <= cycles(ElemWidth::E16));
    }

    #[test]
    fn fewer_instructions_mean_fewer_cycles_at_equal_sew(
        (e, p) in admissible(AccumMode::Native), shape in small_shape(), seed: u64,
    ) {
        let (input, kernel) = tensors(shape, p, seed);
        let cfg = MachineConfig::default();
        let model = CycleModel::default();
        let opts = KernelOptions::default();
        let n = conv2d_ulppack_native(&cfg, &input, &kernel, p, e, NativeBudget::default(), opts).unwrap().counters();
        let v = conv2d_ulppack_vmacsr(&cfg, &input, &kernel, p, e, opts).unwrap().counters();
        prop_assert!(v.instructions() < n.instructions());
        prop_assert!(model.cycles(&v) <= model.cycles(&n));
    }

    #[test]
    fn utilization_never_exceeds_one((e, p) in admissible(AccumMode::Vmacsr), shape in small_shape(), seed: u64) {
        let (input, kernel) = tensors(shape, p, seed);
        let run = conv2d_ulppack_vmacsr(&MachineConfig::default(), &input, &kernel, p, e, KernelOptions::default()).unwrap();
        let r = PerfReport::new(&run, &CycleModel::default()).unwrap();
        prop_assert!(r.utilization > 0.0 && r.utilization <= 1.0);
    }
}
