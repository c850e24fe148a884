//! Bit-to-block mapping.
//!
//! A block carries `m1 + t * log2(M)` bits. The leading `m1` bits pick the active
//! slots from the [`IndexLut`]; the remaining bits are consumed `log2(M)` at a
//! time by the active slots in ascending slot order.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::codebook::Codebook;
use crate::error::{domain, Result};
use crate::index_map::{bits_to_usize, slot_mask, usize_to_bits, IndexLut};

/// How symbol bits are labelled onto codeword indices.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SymbolMapping {
    /// `b1 b0 -> 2*b1 + b0`.
    #[default]
    Natural,
    Gray,
}

impl SymbolMapping {
    fn to_symbol(self, v: usize) -> usize {
        match self {
            SymbolMapping::Natural => v,
            SymbolMapping::Gray => v ^ (v >> 1),
        }
    }

    fn value_of_symbol(self, s: usize) -> usize {
        match self {
            SymbolMapping::Natural => s,
            SymbolMapping::Gray => {
                let mut v = s;
                let mut shift = s >> 1;
                while shift != 0 {
                    v ^= shift;
                    shift >>= 1;
                }
                v
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizeMode {
    /// Active codewords keep unit energy.
    None,
    /// Active codewords are scaled so a block carries energy `n`.
    #[default]
    BlockEnergy,
}

/// Amplitude applied to active codewords.
pub fn normalize_policy(mode: NormalizeMode, n: usize, t: usize) -> f64 {
    match mode {
        NormalizeMode::None => 1.0,
        NormalizeMode::BlockEnergy => (n as f64 / t as f64).sqrt(),
    }
}

/// One user's `n`-slot data block. `None` marks an inactive (all-zero) slot;
/// `Some(m)` carries codeword `m` (0-based) scaled by `scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct UserBlock {
    pub user: usize,
    pub slots: Vec<Option<usize>>,
    pub scale: f64,
}

impl UserBlock {
    pub fn active_slots(&self) -> Vec<usize> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.map(|_| i))
            .collect()
    }

    pub fn active_mask(&self) -> u64 {
        slot_mask(&self.active_slots())
    }

    /// Transmitted chip `s` (slot-major, `s = slot * K + k`).
    pub fn chip(&self, cb: &Codebook, s: usize) -> Complex64 {
        let k_len = cb.num_resources();
        match self.slots[s / k_len] {
            Some(m) => cb.codeword(self.user, m)[s % k_len] * self.scale,
            None => Complex64::new(0.0, 0.0),
        }
    }

    /// All `n * K` transmitted chips.
    pub fn chips(&self, cb: &Codebook) -> Vec<Complex64> {
        (0..self.slots.len() * cb.num_resources())
            .map(|s| self.chip(cb, s))
            .collect()
    }

    pub fn energy(&self, cb: &Codebook) -> f64 {
        self.chips(cb).iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Everything needed to map bits to blocks and back for one system shape.
#[derive(Debug, Clone)]
pub struct BlockFormat {
    lut: IndexLut,
    size: usize,
    bits_per_symbol: usize,
    mapping: SymbolMapping,
    normalize: NormalizeMode,
    scale: f64,
}

impl BlockFormat {
    pub fn new(
        lut: IndexLut,
        size: usize,
        mapping: SymbolMapping,
        normalize: NormalizeMode,
    ) -> Result<BlockFormat> {
        if size < 2 || !size.is_power_of_two() {
            return Err(domain(format!(
                "codebook size M={size} must be a power of two >= 2"
            )));
        }
        let scale = normalize_policy(normalize, lut.n(), lut.t());
        Ok(BlockFormat {
            bits_per_symbol: size.trailing_zeros() as usize,
            lut,
            size,
            mapping,
            normalize,
            scale,
        })
    }

    pub fn lut(&self) -> &IndexLut {
        &self.lut
    }

    pub fn n(&self) -> usize {
        self.lut.n()
    }

    pub fn t(&self) -> usize {
        self.lut.t()
    }

    pub fn codebook_size(&self) -> usize {
        self.size
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    pub fn index_bits(&self) -> usize {
        self.lut.m1()
    }

    pub fn symbol_bits(&self) -> usize {
        self.lut.t() * self.bits_per_symbol
    }

    pub fn bits_per_block(&self) -> usize {
        self.index_bits() + self.symbol_bits()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn normalize_mode(&self) -> NormalizeMode {
        self.normalize
    }

    pub fn mapping(&self) -> SymbolMapping {
        self.mapping
    }

    /// Energy of every block under unit-energy codewords.
    pub fn block_energy(&self) -> f64 {
        self.scale * self.scale * self.t() as f64
    }

    pub fn encode(&self, bits: &[u8], user: usize) -> Result<UserBlock> {
        if bits.len() != self.bits_per_block() {
            return Err(domain(format!(
                "block needs {} bits, got {}",
                self.bits_per_block(),
                bits.len()
            )));
        }
        let (index_bits, symbol_bits) = bits.split_at(self.index_bits());
        let active = self.lut.bits_to_indices(index_bits)?;
        let mut slots = vec![None; self.n()];
        for (&slot, group) in active.iter().zip(symbol_bits.chunks(self.bits_per_symbol)) {
            slots[slot] = Some(self.mapping.to_symbol(bits_to_usize(group)));
        }
        Ok(UserBlock {
            user,
            slots,
            scale: self.scale,
        })
    }

    /// Recovers the bits of a block whose active set is a LUT row.
    pub fn decode(&self, block: &UserBlock) -> Result<Vec<u8>> {
        if block.slots.len() != self.n() {
            return Err(domain(format!(
                "block has {} slots, expected {}",
                block.slots.len(),
                self.n()
            )));
        }
        let row = self
            .lut
            .row_of_mask(block.active_mask())
            .filter(|_| block.active_slots().len() == self.t())
            .ok_or_else(|| {
                domain(format!(
                    "active slots {:?} are not a LUT row",
                    block.active_slots()
                ))
            })?;
        let mut bits = usize_to_bits(row, self.index_bits());
        for m in block.slots.iter().flatten() {
            if *m >= self.size {
                return Err(domain(format!("symbol index {m} out of range")));
            }
            bits.extend(usize_to_bits(
                self.mapping.value_of_symbol(*m),
                self.bits_per_symbol,
            ));
        }
        Ok(bits)
    }

    /// The block for row `row` of the LUT and per-active-slot symbols.
    pub fn block_from_parts(&self, user: usize, row: usize, symbols: &[usize]) -> UserBlock {
        let mut slots = vec![None; self.n()];
        for (&slot, &m) in self.lut.rows()[row].iter().zip(symbols) {
            slots[slot] = Some(m);
        }
        UserBlock {
            user,
            slots,
            scale: self.scale,
        }
    }

    /// Number of distinct blocks, `2^m1 * M^t`.
    pub fn block_count(&self) -> usize {
        (1 << self.index_bits()) * self.size.pow(self.t() as u32)
    }

    /// The `i`-th block in enumeration order (`i < block_count()`).
    pub fn nth_block(&self, user: usize, i: usize) -> UserBlock {
        let per_row = self.size.pow(self.t() as u32);
        let (row, mut rest) = (i / per_row, i % per_row);
        let mut symbols = vec![0; self.t()];
        for s in symbols.iter_mut().rev() {
            *s = rest % self.size;
            rest /= self.size;
        }
        self.block_from_parts(user, row, &symbols)
    }
}

pub fn encode_block(bits: &[u8], format: &BlockFormat, user: usize) -> Result<UserBlock> {
    format.encode(bits, user)
}

pub fn decode_block_to_bits(block: &UserBlock, format: &BlockFormat) -> Result<Vec<u8>> {
    format.decode(block)
}
