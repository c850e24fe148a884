//! Frequency-flat Rayleigh fading uplink with additive white Gaussian noise.
//!
//! Chips are indexed slot-major: chip `s` of a block is resource `s % K` of slot
//! `s / K`. The receiver sees `y_s = sum_j h_{j,s} c_{j,s} + z_s`.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::codebook::Codebook;
use crate::error::{domain, Result};
use crate::transmitter::UserBlock;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coherence {
    /// Independent gain on every chip.
    #[default]
    PerChip,
    /// One gain per user per slot, shared by its `K` chips.
    PerSlot,
}

/// Draws a circularly symmetric complex Gaussian with total variance `var`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let sigma = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * sigma, im * sigma)
}

/// Per-user, per-chip channel gains.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    users: usize,
    chips: usize,
    gains: Vec<Complex64>,
}

impl ChannelState {
    pub fn from_gains(users: usize, chips: usize, gains: Vec<Complex64>) -> Result<ChannelState> {
        if gains.len() != users * chips {
            return Err(domain(format!(
                "expected {} gains, got {}",
                users * chips,
                gains.len()
            )));
        }
        Ok(ChannelState {
            users,
            chips,
            gains,
        })
    }

    /// All gains equal to one.
    pub fn unit(users: usize, chips: usize) -> ChannelState {
        ChannelState {
            users,
            chips,
            gains: vec![Complex64::new(1.0, 0.0); users * chips],
        }
    }

    pub fn num_users(&self) -> usize {
        self.users
    }

    pub fn num_chips(&self) -> usize {
        self.chips
    }

    pub fn gain(&self, user: usize, chip: usize) -> Complex64 {
        self.gains[user * self.chips + chip]
    }

    /// Gains of one user over all chips.
    pub fn user_gains(&self, user: usize) -> &[Complex64] {
        &self.gains[user * self.chips..][..self.chips]
    }

    pub fn gains(&self) -> &[Complex64] {
        &self.gains
    }
}

/// Draws i.i.d. unit-variance Rayleigh gains for `users` users over `n * k` chips.
pub fn draw_channel<R: Rng + ?Sized>(
    rng: &mut R,
    users: usize,
    n: usize,
    k: usize,
    coherence: Coherence,
) -> ChannelState {
    let chips = n * k;
    let gains = match coherence {
        Coherence::PerChip => (0..users * chips)
            .map(|_| complex_gaussian(rng, 1.0))
            .collect(),
        Coherence::PerSlot => {
            let mut g = Vec::with_capacity(users * chips);
            for _ in 0..users * n {
                let h = complex_gaussian(rng, 1.0);
                g.extend(std::iter::repeat_n(h, k));
            }
            g
        }
    };
    ChannelState {
        users,
        chips,
        gains,
    }
}

/// Noise power per complex chip for a given `Eb/N0`.
///
/// `Eb = block_energy / bits_per_user`, `N0 = Eb / 10^(ebn0_db / 10)`.
pub fn noise_variance(ebn0_db: f64, bits_per_user: usize, block_energy: f64) -> Result<f64> {
    if bits_per_user == 0 {
        return Err(domain("a block must carry at least one bit"));
    }
    if !(block_energy > 0.0) {
        return Err(domain(format!(
            "block energy must be positive, got {block_energy}"
        )));
    }
    let eb = block_energy / bits_per_user as f64;
    Ok(eb / 10f64.powf(ebn0_db / 10.0))
}

/// The superimposed chips seen by the receiver, with the channel that produced them.
#[derive(Debug, Clone)]
pub struct ReceivedFrame {
    pub chips: Vec<Complex64>,
    pub noise_var: f64,
    pub channel: ChannelState,
}

/// Passes every user's block through its fading gains, sums them, and adds noise
/// of variance `n0` per chip. `n0 == 0` gives the exact noiseless superposition.
pub fn superimpose<R: Rng + ?Sized>(
    blocks: &[UserBlock],
    cb: &Codebook,
    channel: &ChannelState,
    n0: f64,
    rng: &mut R,
) -> Result<ReceivedFrame> {
    let n_slots = blocks.first().map_or(0, |b| b.slots.len());
    let chips = n_slots * cb.num_resources();
    if blocks.iter().any(|b| b.slots.len() != n_slots) {
        return Err(domain("all blocks must have the same number of slots"));
    }
    if channel.num_chips() != chips || channel.num_users() < blocks.len() {
        return Err(domain(format!(
            "channel shape ({} users, {} chips) does not match {} blocks of {} chips",
            channel.num_users(),
            channel.num_chips(),
            blocks.len(),
            chips
        )));
    }
    if blocks.iter().any(|b| b.user >= channel.num_users()) {
        return Err(domain("block user id outside the channel"));
    }
    if n0 < 0.0 {
        return Err(domain("noise variance must be nonnegative"));
    }
    let mut y = vec![Complex64::new(0.0, 0.0); chips];
    for b in blocks {
        for (slot, sym) in b.slots.iter().enumerate() {
            let Some(m) = *sym else { continue };
            let word = cb.codeword(b.user, m);
            for (k, &c) in word.iter().enumerate() {
                let s = slot * cb.num_resources() + k;
                y[s] += channel.gain(b.user, s) * c * b.scale;
            }
        }
    }
    if n0 > 0.0 {
        for v in y.iter_mut() {
            *v += complex_gaussian(rng, n0);
        }
    }
    Ok(ReceivedFrame {
        chips: y,
        noise_var: n0,
        channel: channel.clone(),
    })
}
