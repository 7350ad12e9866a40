//! ULPPACK P1 operand packing.
//!
//! Two sub-byte operands from consecutive channels share one `E`-bit element.
//! Activations are stored as `a0 + 2^(E/2)·a1` and weights in the reversed
//! order `w1 + 2^(E/2)·w0`, so the truncated product of an activation element
//! and a weight element carries `a0·w0 + a1·w1` in bits `[E/2, E)`.

use std::fmt;

use thiserror::Error;

/// Operands packed per element. Fixed at two.
pub const OPERANDS_PER_ELEM: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PackingError {
    #[error("bit precision {0} outside 1..={1}")]
    InvalidBits(u32, u32),
    #[error("value {value} at index {index} does not fit in {bits} bits")]
    OutOfRange { index: usize, value: u16, bits: u32 },
    #[error("tensor data has {got} values, shape {c}x{h}x{w} needs {expected}")]
    LengthMismatch { c: usize, h: usize, w: usize, expected: usize, got: usize },
    #[error("{bits}-bit values cannot be packed into {elem}-bit elements (max {max} bits per operand)")]
    TooWideForElement { bits: u32, elem: u32, max: u32 },
    #[error("empty tensor shape {0}x{1}x{2}")]
    EmptyShape(usize, usize, usize),
    #[error("packed tensor is malformed: {0}")]
    Malformed(&'static str),
}

/// Activation and weight bit widths (`Na`, `Nw`), each in `1..=8`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Precision {
    act_bits: u32,
    wgt_bits: u32,
}

impl Precision {
    pub const MAX_BITS: u32 = 8;

    pub fn new(act_bits: u32, wgt_bits: u32) -> Result<Self, PackingError> {
        for bits in [act_bits, wgt_bits] {
            if !(1..=Self::MAX_BITS).contains(&bits) {
                return Err(PackingError::InvalidBits(bits, Self::MAX_BITS));
            }
        }
        Ok(Self { act_bits, wgt_bits })
    }

    pub fn act_bits(self) -> u32 {
        self.act_bits
    }

    pub fn wgt_bits(self) -> u32 {
        self.wgt_bits
    }

    pub fn act_max(self) -> u64 {
        (1 << self.act_bits) - 1
    }

    pub fn wgt_max(self) -> u64 {
        (1 << self.wgt_bits) - 1
    }

    /// Iterates the full `[1, 8]²` precision grid, activation-major.
    pub fn grid() -> impl Iterator<Item = Precision> {
        (1..=Self::MAX_BITS).flat_map(|a| (1..=Self::MAX_BITS).map(move |w| Precision { act_bits: a, wgt_bits: w }))
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "W{}A{}", self.wgt_bits, self.act_bits)
    }
}

/// Width of a packed element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ElemWidth {
    E8,
    E16,
}

impl ElemWidth {
    pub fn bits(self) -> u32 {
        match self {
            ElemWidth::E8 => 8,
            ElemWidth::E16 => 16,
        }
    }

    /// Width of one sub-field, `E/2`.
    pub fn half_bits(self) -> u32 {
        self.bits() / 2
    }

    pub fn from_bits(bits: u32) -> Option<Self> {
        match bits {
            8 => Some(ElemWidth::E8),
            16 => Some(ElemWidth::E16),
            _ => None,
        }
    }

    fn field_mask(self) -> u64 {
        (1 << self.half_bits()) - 1
    }

    fn elem_mask(self) -> u64 {
        (1 << self.bits()) - 1
    }
}

impl fmt::Display for ElemWidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.bits())
    }
}

/// Which operand a packed tensor holds; weights use the reversed sub-field order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PackRole {
    Activation,
    Weight,
}

/// Unsigned channel-first (C, H, W) tensor of values below `2^bits`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantTensor {
    channels: usize,
    height: usize,
    width: usize,
    bits: u32,
    data: Vec<u16>,
}

impl QuantTensor {
    pub const MAX_BITS: u32 = 16;

    pub fn new(channels: usize, height: usize, width: usize, bits: u32, data: Vec<u16>) -> Result<Self, PackingError> {
        if !(1..=Self::MAX_BITS).contains(&bits) {
            return Err(PackingError::InvalidBits(bits, Self::MAX_BITS));
        }
        if channels == 0 || height == 0 || width == 0 {
            return Err(PackingError::EmptyShape(channels, height, width));
        }
        let expected = channels * height * width;
        if data.len() != expected {
            return Err(PackingError::LengthMismatch { c: channels, h: height, w: width, expected, got: data.len() });
        }
        check_range(&data, bits)?;
        Ok(Self { channels, height, width, bits, data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize, bits: u32) -> Result<Self, PackingError> {
        Self::new(channels, height, width, bits, vec![0; channels * height * width])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn index(&self, c: usize, h: usize, w: usize) -> usize {
        (c * self.height + h) * self.width + w
    }

    pub fn get(&self, c: usize, h: usize, w: usize) -> u16 {
        self.data[self.index(c, h, w)]
    }

    /// Plane of channel `c`, `H·W` values.
    pub fn plane(&self, c: usize) -> &[u16] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

fn check_range(data: &[u16], bits: u32) -> Result<(), PackingError> {
    let limit = 1u32 << bits;
    match data.iter().position(|&v| u32::from(v) >= limit) {
        Some(index) => Err(PackingError::OutOfRange { index, value: data[index], bits }),
        None => Ok(()),
    }
}

/// P1-packed tensor: `ceil(C/2)` packed channels of `E`-bit elements.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedTensor {
    elem: ElemWidth,
    role: PackRole,
    /// Channel count before packing; odd counts were padded with a zero channel.
    logical_channels: usize,
    height: usize,
    width: usize,
    bits: u32,
    data: Vec<u16>,
}

impl PackedTensor {
    pub fn from_raw(
        elem: ElemWidth,
        role: PackRole,
        logical_channels: usize,
        height: usize,
        width: usize,
        bits: u32,
        data: Vec<u16>,
    ) -> Result<Self, PackingError> {
        if logical_channels == 0 || height == 0 || width == 0 {
            return Err(PackingError::EmptyShape(logical_channels, height, width));
        }
        if bits == 0 || bits > elem.half_bits() {
            return Err(PackingError::TooWideForElement { bits, elem: elem.bits(), max: elem.half_bits() });
        }
        let expected = logical_channels.div_ceil(OPERANDS_PER_ELEM) * height * width;
        if data.len() != expected {
            return Err(PackingError::Malformed("data length does not match shape"));
        }
        if data.iter().any(|&e| u64::from(e) > elem.elem_mask()) {
            return Err(PackingError::Malformed("element wider than the element width"));
        }
        Ok(Self { elem, role, logical_channels, height, width, bits, data })
    }

    pub fn elem(&self) -> ElemWidth {
        self.elem
    }

    pub fn role(&self) -> PackRole {
        self.role
    }

    pub fn logical_channels(&self) -> usize {
        self.logical_channels
    }

    pub fn packed_channels(&self) -> usize {
        self.logical_channels.div_ceil(OPERANDS_PER_ELEM)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }
}

/// Packs one operand pair `(x0, x1)` from channels `2k`, `2k+1`.
pub fn pack_pair(x0: u64, x1: u64, elem: ElemWidth, role: PackRole) -> u64 {
    let half = elem.half_bits();
    match role {
        PackRole::Activation => x0 | (x1 << half),
        PackRole::Weight => x1 | (x0 << half),
    }
}

/// Inverse of [`pack_pair`].
pub fn unpack_pair(element: u64, elem: ElemWidth, role: PackRole) -> (u64, u64) {
    let half = elem.half_bits();
    let lo = element & elem.field_mask();
    let hi = (element >> half) & elem.field_mask();
    match role {
        PackRole::Activation => (lo, hi),
        PackRole::Weight => (hi, lo),
    }
}

/// Packs channel pairs of `t` into `E`-bit elements.
pub fn pack_p1(t: &QuantTensor, elem: ElemWidth, role: PackRole) -> Result<PackedTensor, PackingError> {
    if t.bits > elem.half_bits() {
        return Err(PackingError::TooWideForElement { bits: t.bits, elem: elem.bits(), max: elem.half_bits() });
    }
    check_range(&t.data, t.bits)?;

    let plane = t.height * t.width;
    let packed_channels = t.channels.div_ceil(OPERANDS_PER_ELEM);
    let mut data = Vec::with_capacity(packed_channels * plane);
    for k in 0..packed_channels {
        let even = t.plane(2 * k);
        let odd = (2 * k + 1 < t.channels).then(|| t.plane(2 * k + 1));
        for (i, &x0) in even.iter().enumerate() {
            let x1 = odd.map_or(0, |p| p[i]);
            data.push(pack_pair(x0.into(), x1.into(), elem, role) as u16);
        }
    }
    Ok(PackedTensor { elem, role, logical_channels: t.channels, height: t.height, width: t.width, bits: t.bits, data })
}

/// Restores the original tensor, dropping the padding channel if there was one.
pub fn unpack_p1(p: &PackedTensor) -> Result<QuantTensor, PackingError> {
    let plane = p.height * p.width;
    let mut data = vec![0u16; p.logical_channels * plane];
    for k in 0..p.packed_channels() {
        for i in 0..plane {
            let (x0, x1) = unpack_pair(p.data[k * plane + i].into(), p.elem, p.role);
            data[2 * k * plane + i] = x0 as u16;
            if 2 * k + 1 < p.logical_channels {
                data[(2 * k + 1) * plane + i] = x1 as u16;
            } else if x1 != 0 {
                return Err(PackingError::Malformed("padding channel is not zero"));
            }
        }
    }
    QuantTensor::new(p.logical_channels, p.height, p.width, p.bits, data)
}

/// Sub-fields of the truncated product `(A·W) mod 2^E`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProductFields {
    /// Bits `[0, E/2)`.
    pub low: u64,
    /// Bits `[E/2, E)`: the two-way dot product when the operands fit.
    pub mid: u64,
}

pub fn packed_product_fields(a: u64, w: u64, elem: ElemWidth) -> ProductFields {
    let product = a.wrapping_mul(w) & elem.elem_mask();
    ProductFields { low: product & elem.field_mask(), mid: (product >> elem.half_bits()) & elem.field_mask() }
}

/// How packed products are accumulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AccumMode {
    /// Plain multiply-accumulate on packed elements; the dot product is
    /// extracted with a shift after a bounded number of products.
    Native,
    /// Multiply-shift-accumulate: every product is shifted before it is added.
    Vmacsr,
}

impl fmt::Display for AccumMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AccumMode::Native => "native",
            AccumMode::Vmacsr => "vmacsr",
        })
    }
}

/// Rule used to size the native local-accumulation budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum BudgetPolicy {
    /// Worst-case safe for any data.
    #[default]
    Conservative,
    /// Counts the raw field capacity, `2^(E/2)` instead of `2^(E/2) − 1`.
    /// Gives 8 at W1A1/E=8, which all-max data overflows.
    Optimistic,
}

/// Number of packed products that can be accumulated before extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Budget {
    Limited(u32),
    Unbounded,
}

impl Budget {
    pub fn is_usable(self) -> bool {
        !matches!(self, Budget::Limited(0))
    }
}

impl fmt::Display for Budget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Budget::Limited(k) => write!(f, "{k}"),
            Budget::Unbounded => f.write_str("unbounded"),
        }
    }
}

fn fits_field_width(prec: Precision, elem: ElemWidth) -> bool {
    prec.act_bits + prec.wgt_bits < elem.half_bits()
}

/// Worst-case value of one two-way dot product, `2·(2^Na−1)·(2^Nw−1)`.
pub fn max_dot(prec: Precision) -> u64 {
    2 * prec.act_max() * prec.wgt_max()
}

pub fn safe_accum_budget(prec: Precision, elem: ElemWidth, mode: AccumMode) -> Budget {
    budget_with_policy(prec, elem, mode, BudgetPolicy::Conservative)
}

pub fn budget_with_policy(prec: Precision, elem: ElemWidth, mode: AccumMode, policy: BudgetPolicy) -> Budget {
    match mode {
        AccumMode::Vmacsr => Budget::Unbounded,
        AccumMode::Native => {
            if !fits_field_width(prec, elem) {
                return Budget::Limited(0);
            }
            // The mid bound is the binding one: the low field only ever holds
            // half of a dot product's worst case.
            let capacity = match policy {
                BudgetPolicy::Conservative => (1u64 << elem.half_bits()) - 1,
                BudgetPolicy::Optimistic => 1u64 << elem.half_bits(),
            };
            Budget::Limited((capacity / max_dot(prec)) as u32)
        }
    }
}

/// One failed condition of the overflow-free region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RegionBound {
    /// `Na + Nw + 1 ≤ E/2`.
    FieldWidth { act_bits: u32, wgt_bits: u32, half: u32 },
    /// `2·(2^Na−1)·(2^Nw−1) ≤ 2^(E/2) − 1`.
    DotValue { act_max: u64, wgt_max: u64, limit: u64 },
    /// `(2^Na−1)·(2^Nw−1) ≤ 2^(E/2) − 1`.
    LowValue { act_max: u64, wgt_max: u64, limit: u64 },
}

impl fmt::Display for RegionBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            RegionBound::FieldWidth { act_bits, wgt_bits, half } => write!(
                f,
                "Na + Nw + 1 = {} + {} + 1 = {} > {} = E/2",
                act_bits,
                wgt_bits,
                act_bits + wgt_bits + 1,
                half
            ),
            RegionBound::DotValue { act_max, wgt_max, limit } => {
                write!(f, "2·{} = {} > {} = 2^(E/2)-1", act_max * wgt_max, 2 * act_max * wgt_max, limit)
            }
            RegionBound::LowValue { act_max, wgt_max, limit } => {
                write!(f, "{}·{} = {} > {} = 2^(E/2)-1", act_max, wgt_max, act_max * wgt_max, limit)
            }
        }
    }
}

/// Lists every region condition that `prec` violates at element width `elem`.
/// Empty means the precision is inside the overflow-free region.
pub fn region_violations(prec: Precision, elem: ElemWidth, _mode: AccumMode) -> Vec<RegionBound> {
    let limit = elem.field_mask();
    let (amax, wmax) = (prec.act_max(), prec.wgt_max());
    let mut failed = Vec::new();
    if !fits_field_width(prec, elem) {
        failed.push(RegionBound::FieldWidth {
            act_bits: prec.act_bits,
            wgt_bits: prec.wgt_bits,
            half: elem.half_bits(),
        });
    }
    if 2 * amax * wmax > limit {
        failed.push(RegionBound::DotValue { act_max: amax, wgt_max: wmax, limit });
    }
    if amax * wmax > limit {
        failed.push(RegionBound::LowValue { act_max: amax, wgt_max: wmax, limit });
    }
    // The field-width condition implies both value bounds, and with it a
    // native budget of at least one, so the two modes share one region.
    failed
}

pub fn is_admissible(prec: Precision, elem: ElemWidth, mode: AccumMode) -> bool {
    region_violations(prec, elem, mode).is_empty()
}

/// Admissibility grid over `(Na, Nw) ∈ [1, 8]²`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMap {
    pub elem: ElemWidth,
    pub mode: AccumMode,
    cells: [[bool; 8]; 8],
}

impl RegionMap {
    /// Whether `(act_bits, wgt_bits)` is admissible; bits are 1-based.
    pub fn get(&self, act_bits: u32, wgt_bits: u32) -> bool {
        self.cells[act_bits as usize - 1][wgt_bits as usize - 1]
    }

    pub fn admissible(&self) -> impl Iterator<Item = Precision> + '_ {
        Precision::grid().filter(|p| self.get(p.act_bits, p.wgt_bits))
    }

    pub fn is_subset_of(&self, other: &RegionMap) -> bool {
        Precision::grid().all(|p| !self.get(p.act_bits, p.wgt_bits) || other.get(p.act_bits, p.wgt_bits))
    }
}

pub fn region_map(elem: ElemWidth, mode: AccumMode) -> RegionMap {
    let mut cells = [[false; 8]; 8];
    for p in Precision::grid() {
        cells[p.act_bits as usize - 1][p.wgt_bits as usize - 1] = is_admissible(p, elem, mode);
    }
    RegionMap { elem, mode, cells }
}
