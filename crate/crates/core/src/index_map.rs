//! Codeword-position look-up tables.
//!
//! A block has `n` slots of which `t` carry codewords. The first
//! `m1 = floor(log2 C(n, t))` bits of a block select the active slots through a
//! table of `2^m1` distinct `t`-subsets. Slot indices are 0-based in the API and
//! 1-based in text formats.

use std::fmt;

use crate::error::{domain, validation, Error, Result};

/// Largest supported block length.
pub const MAX_SLOTS: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexLut {
    n: usize,
    t: usize,
    m1: usize,
    /// Row `r` is selected by the `m1`-bit big-endian encoding of `r`.
    rows: Vec<Vec<usize>>,
    masks: Vec<u64>,
}

fn check_shape(n: usize, t: usize) -> Result<()> {
    if t < 1 || t > n {
        return Err(domain(format!("need 1 <= t <= n, got n={n}, t={t}")));
    }
    if n > MAX_SLOTS {
        return Err(domain(format!(
            "n={n} exceeds the supported maximum of {MAX_SLOTS}"
        )));
    }
    Ok(())
}

/// Binomial coefficient `C(n, k)`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Number of index bits per block, `floor(log2 C(n, t))`.
pub fn index_bit_count(n: usize, t: usize) -> Result<usize> {
    check_shape(n, t)?;
    Ok(binomial(n, t).ilog2() as usize)
}

/// Bit mask of a slot set.
pub fn slot_mask(slots: &[usize]) -> u64 {
    slots.iter().fold(0, |m, &s| m | (1 << s))
}

/// All `t`-subsets of `0..n` in lexicographic order of their sorted tuples.
fn lexicographic_subsets(n: usize, t: usize, limit: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(limit);
    let mut cur: Vec<usize> = (0..t).collect();
    loop {
        if out.len() == limit {
            break;
        }
        out.push(cur.clone());
        // advance to next combination
        let mut i = t;
        while i > 0 && cur[i - 1] == n - t + i - 1 {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        cur[i - 1] += 1;
        for p in i..t {
            cur[p] = cur[p - 1] + 1;
        }
    }
    out
}

impl IndexLut {
    /// The default table for an `(n, t)` block.
    ///
    /// `(4, 2)` uses the table {1,3}, {2,4}, {2,3}, {1,4}; every other shape takes
    /// the first `2^m1` subsets in lexicographic order.
    pub fn new(n: usize, t: usize) -> Result<IndexLut> {
        let m1 = index_bit_count(n, t)?;
        let rows = if (n, t) == (4, 2) {
            vec![vec![0, 2], vec![1, 3], vec![1, 2], vec![0, 3]]
        } else {
            lexicographic_subsets(n, t, 1 << m1)
        };
        IndexLut::from_rows(n, t, rows)
    }

    /// Conventional SCMA: one always-active slot and no index bits.
    pub fn degenerate() -> IndexLut {
        IndexLut::new(1, 1).unwrap()
    }

    /// Builds a table from explicit rows (0-based slots), validating every invariant.
    pub fn from_rows(n: usize, t: usize, rows: Vec<Vec<usize>>) -> Result<IndexLut> {
        let m1 = index_bit_count(n, t)?;
        if rows.len() != 1 << m1 {
            return Err(validation(format!(
                "LUT for n={n}, t={t} needs {} rows, got {}",
                1usize << m1,
                rows.len()
            )));
        }
        let mut masks = Vec::with_capacity(rows.len());
        let mut sorted_rows = Vec::with_capacity(rows.len());
        for (r, row) in rows.into_iter().enumerate() {
            let mut row = row;
            row.sort_unstable();
            row.dedup();
            if row.len() != t {
                return Err(validation(format!(
                    "LUT row {r} must hold {t} distinct slots"
                )));
            }
            if let Some(&s) = row.iter().find(|&&s| s >= n) {
                return Err(validation(format!(
                    "LUT row {r}: slot {} outside 1..={n}",
                    s + 1
                )));
            }
            let mask = slot_mask(&row);
            if masks.contains(&mask) {
                return Err(validation(format!("LUT row {r} duplicates an earlier row")));
            }
            masks.push(mask);
            sorted_rows.push(row);
        }
        Ok(IndexLut {
            n,
            t,
            m1,
            rows: sorted_rows,
            masks,
        })
    }

    /// Parses a table in the text form
    ///
    /// ```text
    /// # bits -> 1-based slots
    /// 00 -> 1,3
    /// 01 -> 2,4
    /// ```
    ///
    /// Every bit string must appear exactly once; `→` is accepted for `->`.
    pub fn from_text(text: &str, n: usize, t: usize) -> Result<IndexLut> {
        let m1 = index_bit_count(n, t)?;
        let mut rows: Vec<Option<Vec<usize>>> = vec![None; 1 << m1];
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                location: format!("line {}", lineno + 1),
                message,
            };
            let (bits, idx) = line
                .split_once("->")
                .or_else(|| line.split_once('→'))
                .ok_or_else(|| parse_err("expected `bits -> indices`".into()))?;
            let bits = bits.trim();
            let bits = if bits == "-" || bits.is_empty() {
                ""
            } else {
                bits
            };
            if bits.len() != m1 || !bits.bytes().all(|b| b == b'0' || b == b'1') {
                return Err(parse_err(format!(
                    "bit string `{bits}` must be {m1} binary digits"
                )));
            }
            let r = if m1 == 0 {
                0
            } else {
                usize::from_str_radix(bits, 2).unwrap()
            };
            let slots = idx
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<usize>()
                        .ok()
                        .filter(|&v| v >= 1)
                        .map(|v| v - 1)
                        .ok_or_else(|| parse_err(format!("bad slot index `{}`", s.trim())))
                })
                .collect::<Result<Vec<_>>>()?;
            if rows[r].replace(slots).is_some() {
                return Err(parse_err(format!("bit string `{bits}` listed twice")));
            }
        }
        let rows = rows
            .into_iter()
            .enumerate()
            .map(|(r, row)| {
                row.ok_or_else(|| validation(format!("missing row for bits {}", bit_string(r, m1))))
            })
            .collect::<Result<Vec<_>>>()?;
        IndexLut::from_rows(n, t, rows)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn m1(&self) -> usize {
        self.m1
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    pub fn row_masks(&self) -> &[u64] {
        &self.masks
    }

    /// Row number of a slot set, if it is in the table.
    pub fn row_of_mask(&self, mask: u64) -> Option<usize> {
        self.masks.iter().position(|&m| m == mask)
    }

    /// Number of `t`-subsets left out of the table.
    pub fn excluded_count(&self) -> u128 {
        binomial(self.n, self.t) - (1u128 << self.m1)
    }

    pub fn bits_to_indices(&self, bits: &[u8]) -> Result<&[usize]> {
        if bits.len() != self.m1 {
            return Err(domain(format!(
                "expected {} index bits, got {}",
                self.m1,
                bits.len()
            )));
        }
        Ok(&self.rows[bits_to_usize(bits)])
    }

    /// Inverse of [`IndexLut::bits_to_indices`]. `Ok(None)` means the set is a
    /// valid `t`-subset that the table does not use.
    pub fn indices_to_bits(&self, indices: &[usize]) -> Result<Option<Vec<u8>>> {
        let mask = slot_mask(indices);
        if indices.len() != self.t || mask.count_ones() as usize != self.t {
            return Err(domain(format!(
                "expected {} distinct slots, got {:?}",
                self.t, indices
            )));
        }
        Ok(self.row_of_mask(mask).map(|r| usize_to_bits(r, self.m1)))
    }

    /// Text form accepted by [`IndexLut::from_text`].
    pub fn to_text(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for IndexLut {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (r, row) in self.rows.iter().enumerate() {
            let bits = if self.m1 == 0 {
                "-".to_string()
            } else {
                bit_string(r, self.m1)
            };
            let slots: Vec<String> = row.iter().map(|s| (s + 1).to_string()).collect();
            writeln!(f, "{bits} -> {}", slots.join(","))?;
        }
        Ok(())
    }
}

fn bit_string(v: usize, width: usize) -> String {
    usize_to_bits(v, width)
        .iter()
        .map(|b| char::from(b'0' + b))
        .collect()
}

/// Big-endian bits to integer.
pub fn bits_to_usize(bits: &[u8]) -> usize {
    bits.iter().fold(0, |acc, &b| (acc << 1) | (b & 1) as usize)
}

/// Integer to `width` big-endian bits.
pub fn usize_to_bits(v: usize, width: usize) -> Vec<u8> {
    (0..width).rev().map(|i| ((v >> i) & 1) as u8).collect()
}

/// Builds the default LUT for `(n, t)`.
pub fn build_lut(n: usize, t: usize) -> Result<IndexLut> {
    IndexLut::new(n, t)
}
