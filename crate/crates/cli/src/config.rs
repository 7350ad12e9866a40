//! `key = value` run configuration and sweep files.
//!
//! A sweep file is a sequence of blocks separated by blank lines. Values may
//! be comma-separated lists; each block expands to the cartesian product of
//! its lists, first key outermost.

use std::collections::BTreeMap;
use std::fmt;

use vmacsr_core::{
    BudgetPolicy, ConvShape, ElemWidth, KernelOptions, MachineConfig, NativeBudget, Precision, SweepPoint, Variant,
};

pub type Settings = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

pub const KEYS: &[&str] = &[
    "variant",
    "e",
    "na",
    "nw",
    "c",
    "hw",
    "h",
    "w",
    "k",
    "fh",
    "fw",
    "seed",
    "budget_policy",
    "budget",
    "prepacked_weights",
    "vlen",
    "lanes",
];

pub fn normalize_key(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('-', "_")
}

fn split_line(lineno: usize, line: &str) -> Result<Option<(String, String)>, ConfigError> {
    let line = line.split('#').next().unwrap_or("").trim();
    if line.is_empty() {
        return Ok(None);
    }
    let Some((k, v)) = line.split_once('=') else {
        return err(format!("line {lineno}: expected `key = value`, got {line:?}"));
    };
    let key = normalize_key(k);
    if !KEYS.contains(&key.as_str()) {
        return err(format!("line {lineno}: unknown key {key:?}"));
    }
    Ok(Some((key, v.trim().to_string())))
}

/// Parses a flat config file. Later assignments win.
pub fn parse_config(text: &str) -> Result<Settings, ConfigError> {
    let mut out = Settings::new();
    for (i, line) in text.lines().enumerate() {
        if let Some((k, v)) = split_line(i + 1, line)? {
            out.insert(k, v);
        }
    }
    Ok(out)
}

/// Parses and expands a sweep file into one settings map per grid point.
pub fn parse_sweep(text: &str) -> Result<Vec<Settings>, ConfigError> {
    let mut blocks: Vec<Vec<(String, Vec<String>)>> = vec![Vec::new()];
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            if !blocks.last().unwrap().is_empty() {
                blocks.push(Vec::new());
            }
            continue;
        }
        let Some((k, v)) = split_line(i + 1, line)? else { continue };
        let values: Vec<String> = v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
        if values.is_empty() {
            return err(format!("line {}: {k} has no values", i + 1));
        }
        let block = blocks.last_mut().unwrap();
        match block.iter_mut().find(|(key, _)| *key == k) {
            Some(entry) => entry.1 = values,
            None => block.push((k, values)),
        }
    }
    let mut points = Vec::new();
    for block in blocks.into_iter().filter(|b| !b.is_empty()) {
        let mut grid = vec![Settings::new()];
        for (key, values) in block {
            let mut next = Vec::with_capacity(grid.len() * values.len());
            for s in &grid {
                for v in &values {
                    let mut s = s.clone();
                    s.insert(key.clone(), v.clone());
                    next.push(s);
                }
            }
            grid = next;
        }
        points.extend(grid);
    }
    if points.is_empty() {
        return err("sweep file defines no points");
    }
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariantKind {
    Int16,
    Native,
    Vmacsr,
}

/// A fully validated run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub variant: Variant,
    pub precision: Precision,
    pub shape: ConvShape,
    pub seed: u64,
    pub opts: KernelOptions,
    pub machine: MachineConfig,
}

fn get<'a>(s: &'a Settings, key: &str) -> Option<&'a str> {
    s.get(key).map(String::as_str)
}

fn num<T: std::str::FromStr>(s: &Settings, key: &str) -> Result<Option<T>, ConfigError> {
    match get(s, key) {
        None => Ok(None),
        Some(v) => v.parse().map(Some).or_else(|_| err(format!("{key}: invalid number {v:?}"))),
    }
}

fn flag(s: &Settings, key: &str) -> Result<bool, ConfigError> {
    match get(s, key) {
        None => Ok(false),
        Some("true" | "1" | "yes" | "on") => Ok(true),
        Some("false" | "0" | "no" | "off") => Ok(false),
        Some(v) => err(format!("{key}: expected a boolean, got {v:?}")),
    }
}

fn pick(s: &Settings, key: &str, fallback: Option<&str>, default: usize) -> Result<usize, ConfigError> {
    match num::<usize>(s, key)? {
        Some(v) => Ok(v),
        None => match fallback {
            Some(f) => Ok(num::<usize>(s, f)?.unwrap_or(default)),
            None => Ok(default),
        },
    }
}

impl RunConfig {
    /// Builds a run from settings; defaults to int16 over a 1×16×16 input
    /// with a 3×3 kernel, W2A2, E=16, seed 0.
    pub fn from_settings(s: &Settings) -> Result<Self, ConfigError> {
        let kind = match get(s, "variant").unwrap_or("int16") {
            "int16" => VariantKind::Int16,
            "native" => VariantKind::Native,
            "vmacsr" => VariantKind::Vmacsr,
            other => return err(format!("variant: expected int16, native or vmacsr, got {other:?}")),
        };
        let e: u32 = num(s, "e")?.unwrap_or(16);
        let Some(elem) = ElemWidth::from_bits(e) else {
            return err(format!("e: element width must be 8 or 16, got {e}"));
        };
        let na: u32 = num(s, "na")?.unwrap_or(2);
        let nw: u32 = num(s, "nw")?.unwrap_or(2);
        let precision = Precision::new(na, nw).map_err(|e| ConfigError(format!("precision: {e}")))?;

        let c = pick(s, "c", None, 1)?;
        let h = pick(s, "h", Some("hw"), 16)?;
        let w = pick(s, "w", Some("hw"), 16)?;
        let fh = pick(s, "fh", Some("k"), 3)?;
        let fw = pick(s, "fw", Some("k"), 3)?;
        let shape = ConvShape::new(c, h, w, fh, fw).map_err(|e| ConfigError(e.to_string()))?;

        let policy = match get(s, "budget_policy").unwrap_or("conservative") {
            "conservative" => BudgetPolicy::Conservative,
            "optimistic" | "paper" => BudgetPolicy::Optimistic,
            other => return err(format!("budget_policy: expected conservative, optimistic or paper, got {other:?}")),
        };
        let budget = match num::<u32>(s, "budget")? {
            Some(0) => return err("budget: must be at least 1"),
            Some(k) => NativeBudget::Fixed(k),
            None => NativeBudget::Policy(policy),
        };
        let variant = match kind {
            VariantKind::Int16 => Variant::Int16,
            VariantKind::Native => Variant::Native { elem, budget },
            VariantKind::Vmacsr => Variant::Vmacsr { elem },
        };

        let mut machine = MachineConfig::default();
        if let Some(v) = num(s, "vlen")? {
            machine.vlen_bits = v;
        }
        if let Some(l) = num(s, "lanes")? {
            machine.lanes = l;
        }
        machine.validate().map_err(|e| ConfigError(format!("machine: {e}")))?;

        Ok(Self {
            variant,
            precision,
            shape,
            seed: num(s, "seed")?.unwrap_or(0),
            opts: KernelOptions { prepacked_weights: flag(s, "prepacked_weights")? },
            machine,
        })
    }

    pub fn point(&self) -> SweepPoint {
        SweepPoint {
            variant: self.variant,
            precision: self.precision,
            shape: self.shape,
            seed: self.seed,
            opts: self.opts,
        }
    }
}
