//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vmacsr_core::fixture::{all_max_tensor, random_tensor};
use vmacsr_core::packing::{pack_pair, packed_product_fields};
use vmacsr_core::vmachine::encoding::{decode, encode, encode_vmacsr, FUNCT6_VMACC, FUNCT6_VMACSR};
use vmacsr_core::vmachine::{encoding::Fields, VReg, VmacsrForm, XReg};
use vmacsr_core::*;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);
type Family = (&'static str, fn(&mut ChaCha8Rng) -> Variant);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, start: Instant) -> Result<Duration, String> {
    let took = start.elapsed();
    ensure(took < limit, || format!("took {took:.2?}, limit {limit:?}"))?;
    Ok(took)
}

fn prec(a: u32, w: u32) -> Precision {
    Precision::new(a, w).unwrap()
}

/// Exhaustive mid-field check of every sub-operand tuple at E=8.
fn c1_packed_product() -> Outcome {
    let start = Instant::now();
    let elem = ElemWidth::E8;
    let mut checked = 0u64;
    for na in 1..=3u32 {
        for nw in 1..=3u32 {
            if na + nw + 1 > 4 {
                continue;
            }
            for a0 in 0..1u64 << na {
                for a1 in 0..1u64 << na {
                    for w0 in 0..1u64 << nw {
                        for w1 in 0..1u64 << nw {
                            let a = pack_pair(a0, a1, elem, PackRole::Activation);
                            let w = pack_pair(w0, w1, elem, PackRole::Weight);
                            // Independent of the library: plain integer product.
                            let direct = ((a * w) % 256) >> 4;
                            let mid = packed_product_fields(a, w, elem).mid;
                            let dot = a0 * w0 + a1 * w1;
                            ensure(mid == dot && direct == dot, || {
                                format!("W{nw}A{na} a=({a0},{a1}) w=({w0},{w1}): mid {mid}, expected {dot}")
                            })?;
                            checked += 1;
                        }
                    }
                }
            }
        }
    }
    let took = within(Duration::from_secs(1), start)?;
    Ok(format!("{checked} tuples exact in {took:.2?}"))
}

/// `vmacsr.vv` against the `vmul`/`vsrl`/`vadd` sequence and a scalar formula.
fn c2_fusion_law() -> Outcome {
    const TRIPLES: usize = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let cfg = MachineConfig::default();
    let v = |i| VReg::new(i).unwrap();
    for sew in [Sew::E8, Sew::E16, Sew::E32] {
        let mut m = VectorMachine::new(cfg, 0).map_err(|e| e.to_string())?;
        let vlmax = cfg.vlmax(sew);
        let half = sew.bits() / 2;
        let mask = sew.mask();
        let mut done = 0;
        while done < TRIPLES {
            let n = vlmax.min(TRIPLES - done);
            let gen = |rng: &mut ChaCha8Rng| (0..n).map(|_| rng.gen::<u64>() & mask).collect::<Vec<_>>();
            let (d, s1, s2) = (gen(&mut rng), gen(&mut rng), gen(&mut rng));
            m.execute(&Instruction::VSetVl { avl: n, sew }).map_err(|e| e.to_string())?;
            m.set_vreg(v(1), &s1);
            m.set_vreg(v(2), &s2);
            m.set_vreg(v(3), &d);
            m.set_vreg(v(6), &d);
            let program = [
                Instruction::VMacsrVV { vd: v(3), vs1: v(1), vs2: v(2), masked: false },
                Instruction::VMulVV { vd: v(4), vs2: v(2), vs1: v(1), masked: false },
                Instruction::VSrlVI { vd: v(5), vs2: v(4), shamt: half as u8, masked: false },
                Instruction::VAddVV { vd: v(6), vs2: v(6), vs1: v(5), masked: false },
            ];
            m.run_program(&program).map_err(|e| e.to_string())?;
            let fused = &m.vreg(v(3))[..n];
            let composed = &m.vreg(v(6))[..n];
            for i in 0..n {
                let expect = (d[i] + ((s1[i].wrapping_mul(s2[i]) & mask) >> half)) & mask;
                ensure(fused[i] == expect && composed[i] == expect, || {
                    format!(
                        "{sew} d={} s1={} s2={}: fused {}, composed {}, expected {expect}",
                        d[i], s1[i], s2[i], fused[i], composed[i]
                    )
                })?;
            }
            done += n;
        }
    }
    Ok(format!("{TRIPLES} triples at each of e8/e16/e32 bit-exact"))
}

/// funct6 placement and exhaustive encode/decode round trip.
fn c3_encoding() -> Outcome {
    ensure(FUNCT6_VMACSR == 0b101110 && FUNCT6_VMACSR == FUNCT6_VMACC + 1, || {
        format!("funct6 {FUNCT6_VMACSR:#08b}, vmacc {FUNCT6_VMACC:#08b}")
    })?;
    let mut count = 0u32;
    for form in [VmacsrForm::VV, VmacsrForm::VX] {
        for vd in 0..32 {
            for src in 0..32 {
                for vs2 in 0..32 {
                    for masked in [false, true] {
                        let word = encode_vmacsr(form, vd, src, vs2, masked).map_err(|e| e.to_string())?;
                        let f = Fields::split(word);
                        let funct3 = if form == VmacsrForm::VV { 0b010 } else { 0b110 };
                        ensure(
                            f.opcode == 0x57
                                && f.funct6 == 0b101110
                                && f.funct3 == funct3
                                && f.vm == u32::from(!masked)
                                && (f.vd, f.rs1, f.vs2) == (vd, src, vs2),
                            || format!("{word:#010x}: fields {f:?}"),
                        )?;
                        let expected = match form {
                            VmacsrForm::VV => Instruction::VMacsrVV {
                                vd: VReg::new(vd).unwrap(),
                                vs1: VReg::new(src).unwrap(),
                                vs2: VReg::new(vs2).unwrap(),
                                masked,
                            },
                            VmacsrForm::VX => Instruction::VMacsrVX {
                                vd: VReg::new(vd).unwrap(),
                                rs1: XReg::new(src).unwrap(),
                                vs2: VReg::new(vs2).unwrap(),
                                masked,
                            },
                        };
                        let insn = decode(word).map_err(|e| e.to_string())?;
                        ensure(insn == expected, || format!("{word:#010x} decoded to {insn}"))?;
                        ensure(encode(&insn) == Ok(word), || format!("{insn} re-encoded differently"))?;
                        count += 1;
                    }
                }
            }
        }
    }
    Ok(format!("funct6 = 0b101110 = vmacc + 1; {count} encodings round-trip"))
}

/// Largest exact result any output can take.
fn worst_case(shape: &ConvShape, p: Precision) -> u64 {
    shape.macs() / (shape.out_h() * shape.out_w()) as u64 * p.act_max() * p.wgt_max()
}

/// Random admissible case whose worst-case output fits the accumulator.
fn draw_case(rng: &mut ChaCha8Rng, variant: Variant) -> (ConvShape, Precision) {
    let limit = 1u64 << variant.elem_bits();
    loop {
        let c = [2, 4, 8, 32][rng.gen_range(0..4)];
        let hw = [8, 16, 32][rng.gen_range(0..3)];
        let k = [1, 3, 7][rng.gen_range(0..3)];
        let shape = ConvShape::square(c, hw, k).unwrap();
        let candidates: Vec<Precision> = Precision::grid()
            .filter(|&p| match variant {
                Variant::Int16 => true,
                Variant::Native { elem, .. } => is_admissible(p, elem, AccumMode::Native),
                Variant::Vmacsr { elem } => is_admissible(p, elem, AccumMode::Vmacsr),
            })
            .filter(|&p| worst_case(&shape, p) < limit)
            .collect();
        if !candidates.is_empty() {
            return (shape, candidates[rng.gen_range(0..candidates.len())]);
        }
    }
}

fn c4_oracle_equivalence() -> Outcome {
    const CASES: usize = 200;
    let start = Instant::now();
    let cfg = MachineConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let families: [Family; 3] = [
        ("int16", |_| Variant::Int16),
        ("native", |r| Variant::Native {
            elem: if r.gen() { ElemWidth::E8 } else { ElemWidth::E16 },
            budget: NativeBudget::default(),
        }),
        ("vmacsr", |r| Variant::Vmacsr { elem: if r.gen() { ElemWidth::E8 } else { ElemWidth::E16 } }),
    ];
    let mut summary = Vec::new();
    for (name, pick) in families {
        for case in 0..CASES {
            let variant = pick(&mut rng);
            let (shape, p) = draw_case(&mut rng, variant);
            let seed = rng.gen();
            let input = random_tensor(seed, shape.channels, shape.height, shape.width, p.act_bits()).unwrap();
            let kernel = random_tensor(seed ^ 1, shape.channels, shape.kernel_h, shape.kernel_w, p.wgt_bits()).unwrap();
            let opts = KernelOptions { prepacked_weights: rng.gen() };
            let run = verify_variant(&cfg, variant, &input, &kernel, p, opts).map_err(|e| e.to_string())?;
            ensure(run.verification.is_exact(), || {
                format!("{name} case {case}: {variant} {p} {shape}: {:?}", run.verification)
            })?;
        }
        summary.push(format!("{name} {CASES}/{CASES}"));
    }
    let took = within(Duration::from_secs(300), start)?;
    Ok(format!("{} exact in {took:.2?}", summary.join(", ")))
}

/// 1×1 all-max convolution over `2·products` channels: each local
/// accumulator sees exactly `products` packed products.
fn adversarial(p: Precision, products: u32) -> (QuantTensor, QuantTensor) {
    let c = 2 * products as usize;
    (all_max_tensor(c, 4, 4, p.act_bits()).unwrap(), all_max_tensor(c, 1, 1, p.wgt_bits()).unwrap())
}

fn c5_budget_tightness() -> Outcome {
    let cfg = MachineConfig::default();
    let opts = KernelOptions::default();
    let mut points = 0;
    for elem in [ElemWidth::E8, ElemWidth::E16] {
        for p in Precision::grid().filter(|&p| is_admissible(p, elem, AccumMode::Native)) {
            let Budget::Limited(k) = safe_accum_budget(p, elem, AccumMode::Native) else {
                return Err(format!("{p} E{elem}: native budget unbounded"));
            };
            let (input, kernel) = adversarial(p, k + 1);
            let oracle = conv2d_oracle(&input, &kernel).map_err(|e| e.to_string())?;
            let exact = |b: u32| -> Result<bool, String> {
                let run = conv2d_ulppack_native(&cfg, &input, &kernel, p, elem, NativeBudget::Fixed(b), opts)
                    .map_err(|e| e.to_string())?;
                Ok(run.verify(&oracle).is_exact())
            };
            ensure(exact(k)?, || format!("{p} E{elem}: budget {k} fails the all-max case"))?;
            ensure(!exact(k + 1)?, || format!("{p} E{elem}: budget {} survives the all-max case", k + 1))?;
            points += 1;
        }
    }
    let p = prec(1, 1);
    let (input, kernel) = adversarial(p, 8);
    let oracle = conv2d_oracle(&input, &kernel).map_err(|e| e.to_string())?;
    let policy = NativeBudget::Policy(BudgetPolicy::Optimistic);
    let run =
        conv2d_ulppack_native(&cfg, &input, &kernel, p, ElemWidth::E8, policy, opts).map_err(|e| e.to_string())?;
    ensure(run.budget == Some(8), || format!("optimistic policy gave budget {:?}", run.budget))?;
    ensure(!run.verify(&oracle).is_exact(), || "optimistic budget 8 survived the all-max case".into())?;
    Ok(format!("k passes and k+1 fails at {points} native points; optimistic k=8 at W1A1/E8 overflows"))
}

fn report(cfg: &MachineConfig, variant: Variant, shape: ConvShape, p: Precision) -> Result<PerfReport, String> {
    let input = random_tensor(61, shape.channels, shape.height, shape.width, p.act_bits()).unwrap();
    let kernel = random_tensor(62, shape.channels, shape.kernel_h, shape.kernel_w, p.wgt_bits()).unwrap();
    let run = run_variant(cfg, variant, &input, &kernel, p, KernelOptions::default()).map_err(|e| e.to_string())?;
    PerfReport::new(&run, &CycleModel::for_machine(cfg)).map_err(|e| e.to_string())
}

fn c6_speedup() -> Outcome {
    let start = Instant::now();
    let cfg = MachineConfig::default();
    let shape = ConvShape::square(32, 256, 7).unwrap();
    let base = report(&cfg, Variant::Int16, shape, prec(4, 4))?;
    // Highest admissible precisions of each configuration.
    let ulp_p = prec(1, 2);
    let lp_p = prec(4, 3);
    let ulp = report(&cfg, Variant::Vmacsr { elem: ElemWidth::E8 }, shape, ulp_p)?;
    let lp = report(&cfg, Variant::Vmacsr { elem: ElemWidth::E16 }, shape, lp_p)?;
    let s_ulp = speedup(&ulp, &base).map_err(|e| e.to_string())?;
    let s_lp = speedup(&lp, &base).map_err(|e| e.to_string())?;
    ensure((2.6..=4.0).contains(&s_ulp), || format!("ULP {ulp_p} speedup {s_ulp:.3} outside [2.6, 4.0]"))?;
    ensure((1.4..=2.0).contains(&s_lp), || format!("LP {lp_p} speedup {s_lp:.3} outside [1.4, 2.0]"))?;
    let took = within(Duration::from_secs(600), start)?;
    Ok(format!("ULP {ulp_p} {s_ulp:.3}x in [2.6, 4.0], LP {lp_p} {s_lp:.3}x in [1.4, 2.0] ({took:.2?})"))
}

fn c7_utilization() -> Outcome {
    let cfg = MachineConfig::default();
    let shape = ConvShape::square(32, 512, 7).unwrap();
    let r = report(&cfg, Variant::Int16, shape, prec(4, 4))?;
    ensure(r.utilization >= 0.90 && r.utilization <= 1.0, || format!("utilization {:.4}", r.utilization))?;
    Ok(format!("int16 utilization {:.4} >= 0.90 ({:.2} ops/cycle)", r.utilization, r.ops_per_cycle()))
}

fn c8_ordering() -> Outcome {
    let cfg = MachineConfig::default();
    let opts = KernelOptions::default();
    let small = ConvShape::square(8, 32, 7).unwrap();
    let mut common = 0;
    for elem in [ElemWidth::E8, ElemWidth::E16] {
        for p in Precision::grid().filter(|&p| is_admissible(p, elem, AccumMode::Native)) {
            let input = random_tensor(81, small.channels, small.height, small.width, p.act_bits()).unwrap();
            let kernel = random_tensor(82, small.channels, small.kernel_h, small.kernel_w, p.wgt_bits()).unwrap();
            let count = |v| -> Result<u64, String> {
                Ok(run_variant(&cfg, v, &input, &kernel, p, opts).map_err(|e| e.to_string())?.counters().instructions())
            };
            let native = count(Variant::Native { elem, budget: NativeBudget::default() })?;
            let fused = count(Variant::Vmacsr { elem })?;
            ensure(fused < native, || format!("{p} E{elem}: vmacsr {fused} >= native {native} instructions"))?;
            common += 1;
        }
    }
    let shape = ConvShape::square(32, 256, 7).unwrap();
    let base = report(&cfg, Variant::Int16, shape, prec(2, 2))?;
    let mut lines = Vec::new();
    for (p, elem) in [(prec(1, 1), ElemWidth::E8), (prec(2, 2), ElemWidth::E16)] {
        let s = |v| -> Result<f64, String> { speedup(&report(&cfg, v, shape, p)?, &base).map_err(|e| e.to_string()) };
        let native = s(Variant::Native { elem, budget: NativeBudget::default() })?;
        let fused = s(Variant::Vmacsr { elem })?;
        ensure(fused > native && native > 1.0, || format!("{p}: vmacsr {fused:.3}, native {native:.3}"))?;
        lines.push(format!("{p} E{elem} vmacsr {fused:.3} > native {native:.3} > 1"));
    }
    Ok(format!("vmacsr issues fewer instructions at {common} common points; {}", lines.join("; ")))
}

fn c9_regions() -> Outcome {
    let m16 = region_map(ElemWidth::E16, AccumMode::Vmacsr);
    let m8 = region_map(ElemWidth::E8, AccumMode::Vmacsr);
    for p in Precision::grid() {
        let s = p.act_bits() + p.wgt_bits();
        ensure(m16.get(p.act_bits(), p.wgt_bits()) == (s <= 7), || format!("E=16 {p} misclassified"))?;
        ensure(m8.get(p.act_bits(), p.wgt_bits()) == (s <= 3), || format!("E=8 {p} misclassified"))?;
    }
    Ok(format!(
        "E=16 vmacsr = {{Na+Nw <= 7}} ({} points), E=8 vmacsr = {{Na+Nw <= 3}} ({} points)",
        m16.admissible().count(),
        m8.admissible().count()
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("1 packed-product exactness", c1_packed_product),
        ("2 vmacsr fusion law", c2_fusion_law),
        ("3 encoding", c3_encoding),
        ("4 oracle equivalence", c4_oracle_equivalence),
        ("5 budget tightness", c5_budget_tightness),
        ("6 speedup reproduction", c6_speedup),
        ("7 utilization", c7_utilization),
        ("8 ordering properties", c8_ordering),
        ("9 region maps", c9_regions),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
