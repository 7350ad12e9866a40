//! `vmacsr`: verification runs, benchmark sweeps, region maps, instruction
//! encoding and fixture generation.
//!
//! Exit status: 0 success, 1 output mismatch, 2 region or overflow
//! rejection, 64 usage error.

mod config;

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use vmacsr_core::fixture::{self, random_tensor};
use vmacsr_core::perfmodel::{self, point_tensors};
use vmacsr_core::vmachine::encoding::{decode, encode, encode_vmacsr, word_bytes, Fields};
use vmacsr_core::vmachine::VmacsrForm;
use vmacsr_core::{
    region_map, region_violations, AccumMode, CycleModel, ElemWidth, KernelError, PerfReport, QuantTensor,
};

use config::{normalize_key, parse_config, parse_sweep, RunConfig, Settings};

#[derive(Parser)]
#[command(name = "vmacsr", version, about = "Vector machine simulator with a fused multiply-shift-accumulate")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one kernel and check it against the reference convolution.
    Verify(VerifyArgs),
    /// Model performance for one point or a sweep file, as CSV.
    Bench(BenchArgs),
    /// Print the admissible (Na, Nw) grid.
    Region(RegionArgs),
    /// Encode a vmacsr instruction.
    Encode(EncodeArgs),
    /// Write a seeded random tensor.
    GenFixture(GenFixtureArgs),
}

#[derive(Args, Default)]
struct PointArgs {
    /// Flat `key = value` file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = ["int16", "native", "vmacsr"])]
    variant: Option<String>,
    /// Element width of packed variants (8 or 16).
    #[arg(long)]
    e: Option<u32>,
    /// Activation bits.
    #[arg(long)]
    na: Option<u32>,
    /// Weight bits.
    #[arg(long)]
    nw: Option<u32>,
    #[arg(long)]
    c: Option<usize>,
    /// Square input size.
    #[arg(long)]
    hw: Option<usize>,
    #[arg(long)]
    h: Option<usize>,
    #[arg(long)]
    w: Option<usize>,
    /// Square kernel size.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    fh: Option<usize>,
    #[arg(long)]
    fw: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = ["conservative", "optimistic", "paper"])]
    budget_policy: Option<String>,
    /// Fixed native accumulation budget (overrides the policy).
    #[arg(long)]
    budget: Option<u32>,
    #[arg(long)]
    prepacked_weights: bool,
    #[arg(long)]
    vlen: Option<usize>,
    #[arg(long)]
    lanes: Option<usize>,
}

impl PointArgs {
    fn settings(&self) -> Result<Settings, Failure> {
        let mut s = match &self.config {
            Some(path) => parse_config(&read_text(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))?,
            None => Settings::new(),
        };
        let mut set = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                s.insert(normalize_key(k), v);
            }
        };
        set("variant", self.variant.clone());
        set("e", self.e.map(|v| v.to_string()));
        set("na", self.na.map(|v| v.to_string()));
        set("nw", self.nw.map(|v| v.to_string()));
        set("c", self.c.map(|v| v.to_string()));
        set("hw", self.hw.map(|v| v.to_string()));
        set("h", self.h.map(|v| v.to_string()));
        set("w", self.w.map(|v| v.to_string()));
        set("k", self.k.map(|v| v.to_string()));
        set("fh", self.fh.map(|v| v.to_string()));
        set("fw", self.fw.map(|v| v.to_string()));
        set("seed", self.seed.map(|v| v.to_string()));
        set("budget_policy", self.budget_policy.clone());
        set("budget", self.budget.map(|v| v.to_string()));
        set("prepacked_weights", self.prepacked_weights.then(|| "true".to_string()));
        set("vlen", self.vlen.map(|v| v.to_string()));
        set("lanes", self.lanes.map(|v| v.to_string()));
        Ok(s)
    }
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    point: PointArgs,
    /// Write the generated input and kernel fixtures into this directory.
    #[arg(long)]
    dump_fixtures: Option<PathBuf>,
    /// Replay an input fixture (binary, or CSV by extension) instead of generating one.
    #[arg(long, requires = "kernel")]
    input: Option<PathBuf>,
    /// Replay a kernel fixture.
    #[arg(long, requires = "input")]
    kernel: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    point: PointArgs,
    /// Sweep file of `key = value` blocks with comma-separated lists.
    #[arg(long, conflicts_with = "config")]
    sweep: Option<PathBuf>,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also print a plain-text summary on stderr.
    #[arg(long)]
    summary: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Vmacsr,
    Native,
}

#[derive(Clone, Copy, ValueEnum)]
enum GridFormat {
    Text,
    Csv,
}

#[derive(Args)]
struct RegionArgs {
    #[arg(long)]
    e: u32,
    #[arg(long, value_enum, default_value = "vmacsr")]
    mode: Mode,
    #[arg(long, value_enum, default_value = "text")]
    format: GridFormat,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormArg {
    Vv,
    Vx,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long, value_enum)]
    form: FormArg,
    #[arg(long)]
    vd: u32,
    /// Vector source (`.vv` form).
    #[arg(long, conflicts_with = "rs1")]
    vs1: Option<u32>,
    /// Scalar source (`.vx` form).
    #[arg(long)]
    rs1: Option<u32>,
    #[arg(long)]
    vs2: u32,
    #[arg(long)]
    masked: bool,
}

#[derive(Args)]
struct GenFixtureArgs {
    #[arg(long)]
    c: usize,
    #[arg(long, required_unless_present = "h")]
    hw: Option<usize>,
    #[arg(long, requires = "w")]
    h: Option<usize>,
    #[arg(long, requires = "h")]
    w: Option<usize>,
    #[arg(long)]
    bits: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path; a `.csv` extension selects the CSV format.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Region(String),
    Overflow(String),
    Mismatch(String),
    Other(anyhow::Error),
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

impl From<KernelError> for Failure {
    fn from(e: KernelError) -> Self {
        match e {
            KernelError::Region { .. } => Failure::Region(e.to_string()),
            KernelError::Shape(_) | KernelError::Precision { .. } | KernelError::ZeroBudget => {
                Failure::Usage(e.to_string())
            }
            KernelError::VectorLength { .. } | KernelError::Registers { .. } => Failure::Usage(e.to_string()),
            other => Failure::Other(other.into()),
        }
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn load_tensor(path: &Path) -> Result<QuantTensor, Failure> {
    let file = File::open(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let t = if is_csv(path) { fixture::read_csv(file) } else { fixture::read_binary(file) };
    t.map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn save_tensor(path: &Path, t: &QuantTensor) -> anyhow::Result<()> {
    let file = BufWriter::new(File::create(path).with_context(|| path.display().to_string())?);
    if is_csv(path) {
        fixture::write_csv(file, t)?;
    } else {
        fixture::write_binary(file, t)?;
    }
    Ok(())
}

fn run_config(settings: &Settings) -> Result<RunConfig, Failure> {
    RunConfig::from_settings(settings).map_err(|e| usage(e.0))
}

fn cmd_verify(args: &VerifyArgs) -> Result<(), Failure> {
    let mut settings = args.point.settings()?;
    let replay = match (&args.input, &args.kernel) {
        (Some(i), Some(k)) => {
            let (input, kernel) = (load_tensor(i)?, load_tensor(k)?);
            for (key, v) in [
                ("c", input.channels()),
                ("h", input.height()),
                ("w", input.width()),
                ("fh", kernel.height()),
                ("fw", kernel.width()),
            ] {
                settings.insert(key.to_string(), v.to_string());
            }
            Some((input, kernel))
        }
        _ => None,
    };
    let rc = run_config(&settings)?;
    if let vmacsr_core::Variant::Native { elem, .. } | vmacsr_core::Variant::Vmacsr { elem } = rc.variant {
        let mode = if rc.variant.name() == "native" { AccumMode::Native } else { AccumMode::Vmacsr };
        let v = region_violations(rc.precision, elem, mode);
        if !v.is_empty() {
            let bounds: Vec<String> = v.iter().map(ToString::to_string).collect();
            return Err(Failure::Region(format!(
                "{} at E={elem} is outside the {} region: {}",
                rc.precision,
                rc.variant.name(),
                bounds.join("; ")
            )));
        }
    }
    let (input, kernel) = match replay {
        Some(t) => t,
        None => point_tensors(&rc.point())?,
    };
    if let Some(dir) = &args.dump_fixtures {
        fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
        save_tensor(&dir.join("input.bin"), &input)?;
        save_tensor(&dir.join("kernel.bin"), &kernel)?;
    }

    let run = vmacsr_core::verify_variant(&rc.machine, rc.variant, &input, &kernel, rc.precision, rc.opts)?;
    let report = PerfReport::new(&run.run, &CycleModel::for_machine(&rc.machine)).map_err(anyhow::Error::from)?;
    println!("variant:      {}", rc.variant);
    println!("precision:    {}", rc.precision);
    println!("shape:        {}", rc.shape);
    if let Some(k) = run.run.budget {
        println!("budget:       {k}");
    }
    println!("instructions: {} ({} packing)", report.instructions, run.run.packing.instructions());
    println!(
        "cycles:       {} ({:.3} ops/cycle, utilization {:.3})",
        report.cycles,
        report.ops_per_cycle(),
        report.utilization
    );
    let v = &run.verification;
    if let Some(m) = &v.modular_mismatch {
        return Err(Failure::Mismatch(format!("mismatch at {m}")));
    }
    if let Some(first) = v.overflows.first() {
        return Err(Failure::Overflow(format!(
            "overflow: {} outputs exceed 2^{} (first at ({}, {}) = {})",
            v.overflows.len(),
            run.run.output.value_bits,
            first.y,
            first.x,
            first.value
        )));
    }
    println!("result:       exact match ({} outputs)", run.run.output.values.len());
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> Result<(), Failure> {
    let overrides = args.point.settings()?;
    let grid: Vec<Settings> = match &args.sweep {
        Some(path) => {
            let mut pts = parse_sweep(&read_text(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            for p in &mut pts {
                p.extend(overrides.clone());
            }
            pts
        }
        None => vec![overrides],
    };
    let configs: Vec<RunConfig> = grid.iter().map(run_config).collect::<Result<_, _>>()?;
    let machine = configs[0].machine;
    if configs.iter().any(|c| c.machine != machine) {
        return Err(usage("all sweep points must share one machine configuration"));
    }
    let points: Vec<_> = configs.iter().map(RunConfig::point).collect();
    let rows = perfmodel::sweep(&machine, &CycleModel::for_machine(&machine), &points);
    match &args.out {
        Some(path) => {
            let file = File::create(path).with_context(|| path.display().to_string())?;
            perfmodel::write_csv(BufWriter::new(file), &rows).map_err(anyhow::Error::from)?;
        }
        None => perfmodel::write_csv(io::stdout().lock(), &rows).map_err(anyhow::Error::from)?,
    }
    if args.summary {
        eprint!("{}", perfmodel::summary_table(&rows));
    }
    Ok(())
}

fn cmd_region(args: &RegionArgs) -> Result<(), Failure> {
    let elem = ElemWidth::from_bits(args.e).ok_or_else(|| usage(format!("--e must be 8 or 16, got {}", args.e)))?;
    let (mode, name) = match args.mode {
        Mode::Vmacsr => (AccumMode::Vmacsr, "vmacsr"),
        Mode::Native => (AccumMode::Native, "native"),
    };
    let map = region_map(elem, mode);
    let mut out = io::stdout().lock();
    let res = match args.format {
        GridFormat::Csv => {
            let mut s = String::from("Na,Nw,admissible\n");
            for na in 1..=8 {
                for nw in 1..=8 {
                    s += &format!("{na},{nw},{}\n", map.get(na, nw));
                }
            }
            out.write_all(s.as_bytes())
        }
        GridFormat::Text => {
            let mut s = format!("E={} {name}: '#' admissible, '.' rejected\nNa\\Nw 1 2 3 4 5 6 7 8\n", args.e);
            for na in 1..=8 {
                s += &format!("{na:>5}");
                for nw in 1..=8 {
                    s += if map.get(na, nw) { " #" } else { " ." };
                }
                s.push('\n');
            }
            s += &format!("{} admissible points\n", map.admissible().count());
            out.write_all(s.as_bytes())
        }
    };
    res.context("writing region grid")?;
    Ok(())
}

fn cmd_encode(args: &EncodeArgs) -> Result<(), Failure> {
    let (form, src, src_name) = match args.form {
        FormArg::Vv => (VmacsrForm::VV, args.vs1.ok_or_else(|| usage("--form vv needs --vs1"))?, "vs1"),
        FormArg::Vx => (VmacsrForm::VX, args.rs1.ok_or_else(|| usage("--form vx needs --rs1"))?, "rs1"),
    };
    let word = encode_vmacsr(form, args.vd, src, args.vs2, args.masked).map_err(|e| usage(e.to_string()))?;
    let f = Fields::split(word);
    let bytes = word_bytes(word);
    println!("word:   0x{word:08x}");
    println!("bytes:  {:02x} {:02x} {:02x} {:02x}", bytes[0], bytes[1], bytes[2], bytes[3]);
    println!("funct6: 0b{:06b}", f.funct6);
    println!("vm:     {}", f.vm);
    println!("vs2:    {}", f.vs2);
    println!("{src_name}:    {}", f.rs1);
    println!("funct3: 0b{:03b}", f.funct3);
    println!("vd:     {}", f.vd);
    println!("opcode: 0b{:07b} (0x{:02x})", f.opcode, f.opcode);
    let insn = decode(word).context("decoding the encoded word")?;
    let again = encode(&insn).context("re-encoding")?;
    if again != word {
        return Err(Failure::Other(anyhow::anyhow!("round trip produced 0x{again:08x}")));
    }
    println!("decode: {insn} (round trip ok)");
    Ok(())
}

fn cmd_gen_fixture(args: &GenFixtureArgs) -> Result<(), Failure> {
    let (h, w) = match (args.h, args.w, args.hw) {
        (Some(h), Some(w), _) => (h, w),
        (_, _, Some(hw)) => (hw, hw),
        _ => return Err(usage("give --hw or both --h and --w")),
    };
    if args.c == 0 || h == 0 || w == 0 {
        return Err(usage("fixture dimensions must be nonzero"));
    }
    let t = random_tensor(args.seed, args.c, h, w, args.bits).map_err(|e| usage(e.to_string()))?;
    save_tensor(&args.out, &t)?;
    println!("wrote {}x{}x{} {}-bit tensor to {}", args.c, h, w, args.bits, args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(64) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.cmd {
        Command::Verify(a) => cmd_verify(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Region(a) => cmd_region(a),
        Command::Encode(a) => cmd_encode(a),
        Command::GenFixture(a) => cmd_gen_fixture(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(64)
        }
        Err(Failure::Region(m)) => {
            eprintln!("region violation: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Overflow(m)) => {
            eprintln!("{m}");
            ExitCode::from(2)
        }
        Err(Failure::Mismatch(m)) => {
            eprintln!("{m}");
            ExitCode::from(1)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
