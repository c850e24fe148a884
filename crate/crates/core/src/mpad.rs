//! Message-passing-aided detection of whole blocks.
//!
//! 1. Run the zero-augmented MPA on each of the `n` slots.
//! 2. A user whose detected active set is a LUT row is *reliable*; its block is
//!    taken as decided and cancelled from the received chips.
//! 3. Every other user is classified into an error-pattern case `n - |D|`
//!    (`D` = detected active slots) and repaired from a candidate set: the LUT
//!    rows nearest to `D` in symmetric difference, keeping the detected symbols on
//!    shared slots and trying all `M` symbols on newly activated slots.
//! 4. A partial ML search over the Cartesian product of the candidate sets picks
//!    the blocks closest to the residual.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelState, ReceivedFrame};
use crate::codebook::{Codebook, FactorGraph};
use crate::error::{domain, Result};
use crate::index_map::{binomial, slot_mask, IndexLut};
use crate::mpa::{Entry, MpaDetector, MpaParams};
use crate::transmitter::{BlockFormat, UserBlock};

/// Default bound on the joint PML search size.
pub const DEFAULT_PML_CAP: u64 = 100_000;

/// Sweeps of the coordinate-descent fallback.
pub const MAX_DESCENT_SWEEPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PatternCase {
    Reliable,
    /// Case `n - |D|`.
    Case(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectedPattern {
    pub user: usize,
    pub decisions: Vec<Entry>,
    /// Slots detected as carrying a codeword.
    pub active: Vec<usize>,
    pub case: PatternCase,
}

impl DetectedPattern {
    pub fn active_mask(&self) -> u64 {
        slot_mask(&self.active)
    }

    pub fn is_reliable(&self) -> bool {
        self.case == PatternCase::Reliable
    }
}

/// Number of error patterns as `n + [C(n,t) - n > 0]`.
pub fn count_error_patterns(n: usize, t: usize) -> usize {
    n + usize::from(binomial(n, t) > n as u128)
}

/// Number of error-pattern cases that can occur with a given LUT: every active
/// count other than `t`, plus weight-`t` sets missing from the table.
pub fn reachable_error_patterns(lut: &IndexLut) -> usize {
    lut.n() + usize::from(lut.excluded_count() > 0)
}

pub fn classify_pattern(user: usize, decisions: &[Entry], lut: &IndexLut) -> DetectedPattern {
    let active: Vec<usize> = decisions
        .iter()
        .enumerate()
        .filter_map(|(i, e)| (!e.is_zero()).then_some(i))
        .collect();
    let reliable = active.len() == lut.t() && lut.row_of_mask(slot_mask(&active)).is_some();
    let case = if reliable {
        PatternCase::Reliable
    } else {
        PatternCase::Case(lut.n() - active.len())
    };
    DetectedPattern {
        user,
        decisions: decisions.to_vec(),
        active,
        case,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub user: usize,
    pub case: PatternCase,
    pub candidates: Vec<UserBlock>,
}

/// LUT rows at minimal symmetric-difference distance from the detected set.
fn nearest_rows(lut: &IndexLut, detected: u64) -> Vec<usize> {
    let dist: Vec<u32> = lut
        .row_masks()
        .iter()
        .map(|m| (m ^ detected).count_ones())
        .collect();
    let best = *dist.iter().min().unwrap();
    (0..dist.len()).filter(|&r| dist[r] == best).collect()
}

/// `|psi|` for a detected active set: sum over nearest rows of `M^(new slots)`.
pub fn candidate_count(lut: &IndexLut, detected: u64, size: usize) -> usize {
    nearest_rows(lut, detected)
        .into_iter()
        .map(|r| size.pow((lut.row_masks()[r] & !detected).count_ones()))
        .sum()
}

pub fn build_candidates(pattern: &DetectedPattern, format: &BlockFormat) -> Result<CandidateSet> {
    if pattern.is_reliable() {
        return Err(domain(format!(
            "user {} is reliable; no candidates needed",
            pattern.user
        )));
    }
    let lut = format.lut();
    let size = format.codebook_size();
    let mut candidates = Vec::new();
    for r in nearest_rows(lut, pattern.active_mask()) {
        let row = &lut.rows()[r];
        let free: Vec<usize> = (0..row.len())
            .filter(|&i| pattern.decisions[row[i]].is_zero())
            .collect();
        let mut symbols: Vec<usize> = row
            .iter()
            .map(|&s| pattern.decisions[s].symbol().unwrap_or(0))
            .collect();
        let total = size.pow(free.len() as u32);
        for v in 0..total {
            let mut rest = v;
            for &i in free.iter().rev() {
                symbols[i] = rest % size;
                rest /= size;
            }
            candidates.push(format.block_from_parts(pattern.user, r, &symbols));
        }
    }
    Ok(CandidateSet {
        user: pattern.user,
        case: pattern.case,
        candidates,
    })
}

/// Subtracts the faded contribution of every given block from the received chips.
pub fn cancel_reliable(
    frame: &ReceivedFrame,
    cb: &Codebook,
    reliable: &[UserBlock],
) -> Vec<Complex64> {
    let mut r = frame.chips.clone();
    for b in reliable {
        subtract_block(&mut r, b, cb, &frame.channel);
    }
    r
}

fn subtract_block(r: &mut [Complex64], b: &UserBlock, cb: &Codebook, ch: &ChannelState) {
    for (v, c) in r.iter_mut().zip(faded_chips(b, cb, ch)) {
        *v -= c;
    }
}

/// `diag(h_j) c_j` for one block.
pub fn faded_chips(b: &UserBlock, cb: &Codebook, ch: &ChannelState) -> Vec<Complex64> {
    let gains = ch.user_gains(b.user);
    b.chips(cb)
        .into_iter()
        .zip(gains)
        .map(|(c, h)| c * h)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PmlOutcome {
    /// Chosen blocks, in the order of the candidate sets.
    pub blocks: Vec<UserBlock>,
    /// `prod |psi|`, saturating.
    pub search_size: u64,
    /// True when the search exceeded the cap and coordinate descent was used.
    pub fallback: bool,
    pub distance: f64,
}

/// Sparse faded contributions of each candidate of each set.
type Faded = Vec<Vec<Vec<(usize, Complex64)>>>;

fn faded_candidates(sets: &[CandidateSet], cb: &Codebook, ch: &ChannelState) -> Faded {
    sets.iter()
        .map(|set| {
            set.candidates
                .iter()
                .map(|b| {
                    faded_chips(b, cb, ch)
                        .into_iter()
                        .enumerate()
                        .filter(|(_, c)| *c != Complex64::new(0.0, 0.0))
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn sq_dist(r: &[Complex64]) -> f64 {
    r.iter().map(|c| c.norm_sqr()).sum()
}

/// Partial ML over the Cartesian product of the candidate sets.
///
/// The joint minimum of `||r - sum_j diag(h_j) c_j||` is searched exhaustively when
/// the product has at most `cap` members; otherwise users are optimized one at a
/// time, smallest set first, for up to [`MAX_DESCENT_SWEEPS`] sweeps.
pub fn pml_detect(
    residual: &[Complex64],
    channel: &ChannelState,
    cb: &Codebook,
    sets: &[CandidateSet],
    cap: u64,
) -> Result<PmlOutcome> {
    if let Some(s) = sets.iter().find(|s| s.candidates.is_empty()) {
        return Err(domain(format!("empty candidate set for user {}", s.user)));
    }
    let search_size = sets
        .iter()
        .fold(1u64, |acc, s| acc.saturating_mul(s.candidates.len() as u64));
    if sets.is_empty() {
        return Ok(PmlOutcome {
            blocks: Vec::new(),
            search_size: 0,
            fallback: false,
            distance: sq_dist(residual),
        });
    }
    let faded = faded_candidates(sets, cb, channel);
    let (choice, distance, fallback) = if search_size <= cap {
        let (c, d) = joint_search(residual, &faded);
        (c, d, false)
    } else {
        let (c, d) = coordinate_descent(residual, &faded);
        (c, d, true)
    };
    Ok(PmlOutcome {
        blocks: choice
            .iter()
            .zip(sets)
            .map(|(&i, s)| s.candidates[i].clone())
            .collect(),
        search_size,
        fallback,
        distance,
    })
}

fn joint_search(residual: &[Complex64], faded: &Faded) -> (Vec<usize>, f64) {
    let depth = faded.len();
    // stack[d] = residual after subtracting the choices of users < d
    let mut stack: Vec<Vec<Complex64>> = vec![residual.to_vec(); depth + 1];
    let mut choice = vec![0usize; depth];
    let mut best = (vec![0usize; depth], f64::INFINITY);
    let mut level = 0;
    loop {
        // apply choice[level] to produce stack[level + 1]
        let (head, tail) = stack.split_at_mut(level + 1);
        let next = &mut tail[0];
        next.copy_from_slice(&head[level]);
        for &(s, c) in &faded[level][choice[level]] {
            next[s] -= c;
        }
        if level + 1 == depth {
            let d = sq_dist(next);
            if d < best.1 {
                best = (choice.clone(), d);
            }
            // advance
            loop {
                choice[level] += 1;
                if choice[level] < faded[level].len() {
                    break;
                }
                choice[level] = 0;
                if level == 0 {
                    return best;
                }
                level -= 1;
            }
        } else {
            level += 1;
        }
    }
}

fn coordinate_descent(residual: &[Complex64], faded: &Faded) -> (Vec<usize>, f64) {
    let mut order: Vec<usize> = (0..faded.len()).collect();
    order.sort_by_key(|&u| faded[u].len());
    let mut choice = vec![0usize; faded.len()];
    let mut current = residual.to_vec();
    for (u, f) in faded.iter().enumerate() {
        for &(s, c) in &f[choice[u]] {
            current[s] -= c;
        }
    }
    for _ in 0..MAX_DESCENT_SWEEPS {
        let mut changed = false;
        for &u in &order {
            // residual without user u
            for &(s, c) in &faded[u][choice[u]] {
                current[s] += c;
            }
            let mut best = (choice[u], f64::INFINITY);
            let base = sq_dist(&current);
            for (i, cand) in faded[u].iter().enumerate() {
                // distance change only on the candidate's chips
                let d = base
                    + cand
                        .iter()
                        .map(|&(s, c)| (current[s] - c).norm_sqr() - current[s].norm_sqr())
                        .sum::<f64>();
                if d < best.1 {
                    best = (i, d);
                }
            }
            if best.0 != choice[u] {
                changed = true;
                choice[u] = best.0;
            }
            for &(s, c) in &faded[u][choice[u]] {
                current[s] -= c;
            }
        }
        if !changed {
            break;
        }
    }
    let d = sq_dist(&current);
    (choice, d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserDiagnostics {
    pub case: PatternCase,
    /// `|psi|` for erroneous users, 0 for reliable ones.
    pub candidates: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionDiagnostics {
    pub users: Vec<UserDiagnostics>,
    /// Product of the candidate-set sizes searched by PML (0 if PML was skipped).
    pub pml_search: u64,
    pub pml_fallback: bool,
}

#[derive(Debug, Clone)]
pub struct FrameDetection {
    pub blocks: Vec<UserBlock>,
    pub bits: Vec<Vec<u8>>,
    pub diagnostics: DetectionDiagnostics,
}

/// The full detector for one system configuration.
#[derive(Debug, Clone)]
pub struct Mpad<'a> {
    cb: &'a Codebook,
    format: &'a BlockFormat,
    mpa: MpaDetector<'a>,
    pml_cap: u64,
}

impl<'a> Mpad<'a> {
    pub fn new(
        cb: &'a Codebook,
        fg: &'a FactorGraph,
        format: &'a BlockFormat,
        mpa: MpaParams,
        pml_cap: u64,
    ) -> Result<Self> {
        if format.codebook_size() != cb.size() {
            return Err(domain("block format and codebook disagree on M"));
        }
        Ok(Mpad {
            cb,
            format,
            mpa: MpaDetector::new(cb, fg, mpa)?,
            pml_cap,
        })
    }

    pub fn format(&self) -> &BlockFormat {
        self.format
    }

    fn check_frame(&self, frame: &ReceivedFrame) -> Result<()> {
        let chips = self.format.n() * self.cb.num_resources();
        if frame.chips.len() != chips
            || frame.channel.num_chips() != chips
            || frame.channel.num_users() != self.cb.num_users()
        {
            return Err(domain(format!(
                "frame has {} chips for {} users, expected {chips} for {}",
                frame.chips.len(),
                frame.channel.num_users(),
                self.cb.num_users()
            )));
        }
        Ok(())
    }

    /// Per-user slot decisions of the modified MPA, `[user][slot]`.
    pub fn slot_decisions(&self, frame: &ReceivedFrame) -> Result<Vec<Vec<Entry>>> {
        self.check_frame(frame)?;
        let k_len = self.cb.num_resources();
        let users = self.cb.num_users();
        let mut out = vec![Vec::with_capacity(self.format.n()); users];
        let mut h = vec![Complex64::new(0.0, 0.0); users * k_len];
        for slot in 0..self.format.n() {
            for j in 0..users {
                h[j * k_len..][..k_len]
                    .copy_from_slice(&frame.channel.user_gains(j)[slot * k_len..][..k_len]);
            }
            let y = &frame.chips[slot * k_len..][..k_len];
            let d = self
                .mpa
                .run_slot(y, &h, frame.noise_var, self.format.scale())?;
            for (j, e) in d.entries.into_iter().enumerate() {
                out[j].push(e);
            }
        }
        Ok(out)
    }

    pub fn detect_frame(&self, frame: &ReceivedFrame) -> Result<FrameDetection> {
        let decisions = self.slot_decisions(frame)?;
        self.resolve(frame, &decisions)
    }

    /// Cancellation and partial ML given slot decisions (possibly injected).
    pub fn resolve(
        &self,
        frame: &ReceivedFrame,
        decisions: &[Vec<Entry>],
    ) -> Result<FrameDetection> {
        self.check_frame(frame)?;
        let lut = self.format.lut();
        let patterns: Vec<DetectedPattern> = decisions
            .iter()
            .enumerate()
            .map(|(j, d)| classify_pattern(j, d, lut))
            .collect();
        let mut blocks: Vec<Option<UserBlock>> = vec![None; patterns.len()];
        let mut reliable = Vec::new();
        let mut sets = Vec::new();
        for p in &patterns {
            if p.is_reliable() {
                let b = UserBlock {
                    user: p.user,
                    slots: p.decisions.iter().map(|e| e.symbol()).collect(),
                    scale: self.format.scale(),
                };
                reliable.push(b.clone());
                blocks[p.user] = Some(b);
            } else {
                sets.push(build_candidates(p, self.format)?);
            }
        }
        let mut diagnostics = DetectionDiagnostics {
            users: patterns
                .iter()
                .map(|p| UserDiagnostics {
                    case: p.case,
                    candidates: 0,
                })
                .collect(),
            pml_search: 0,
            pml_fallback: false,
        };
        if !sets.is_empty() {
            let r = cancel_reliable(frame, self.cb, &reliable);
            let out = pml_detect(&r, &frame.channel, self.cb, &sets, self.pml_cap)?;
            for (set, b) in sets.iter().zip(out.blocks) {
                diagnostics.users[set.user].candidates = set.candidates.len();
                blocks[set.user] = Some(b);
            }
            diagnostics.pml_search = out.search_size;
            diagnostics.pml_fallback = out.fallback;
        }
        let blocks: Vec<UserBlock> = blocks.into_iter().map(Option::unwrap).collect();
        let bits = blocks
            .iter()
            .map(|b| self.format.decode(b))
            .collect::<Result<Vec<_>>>()?;
        Ok(FrameDetection {
            blocks,
            bits,
            diagnostics,
        })
    }
}
