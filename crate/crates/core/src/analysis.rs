//! Closed-form and empirical performance measures.

use num_complex::Complex64;
use num_rational::Ratio;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codebook::Codebook;
use crate::error::{domain, Result};
use crate::index_map::index_bit_count;
use crate::mpad::{PatternCase, UserDiagnostics};
use crate::transmitter::{BlockFormat, UserBlock};

/// Transmission efficiency in bits per chip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EfficiencyReport {
    /// Conventional SCMA, `J log2 M / K`.
    pub conventional: Ratio<u64>,
    /// Position-indexed SCMA, `J (m1 + t log2 M) / (n K)`.
    pub indexed: Ratio<u64>,
    pub ratio: Ratio<u64>,
}

pub fn transmission_efficiency(
    j: usize,
    k: usize,
    m: usize,
    n: usize,
    t: usize,
) -> Result<EfficiencyReport> {
    if m < 2 || !m.is_power_of_two() {
        return Err(domain(format!("M={m} must be a power of two")));
    }
    if j == 0 || k == 0 {
        return Err(domain("J and K must be positive"));
    }
    let log_m = m.trailing_zeros() as u64;
    let m1 = index_bit_count(n, t)? as u64;
    let conventional = Ratio::new(j as u64 * log_m, k as u64);
    let indexed = Ratio::new(j as u64 * (m1 + t as u64 * log_m), (n * k) as u64);
    Ok(EfficiencyReport {
        conventional,
        indexed,
        ratio: indexed / conventional,
    })
}

/// Two-exponential approximation of the Gaussian tail,
/// `Q(x) ~ exp(-x^2/2)/12 + exp(-2x^2/3)/4`.
pub fn q_approx(x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(domain(format!("q_approx needs x >= 0, got {x}")));
    }
    Ok((-x * x / 2.0).exp() / 12.0 + (-2.0 * x * x / 3.0).exp() / 4.0)
}

/// Per-chip squared distances `sum_j |c_j[s] - c'_j[s]|^2` between two multi-user
/// block sets.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseDistance(pub Vec<f64>);

impl PairwiseDistance {
    pub fn between(
        sent: &[UserBlock],
        other: &[UserBlock],
        cb: &Codebook,
    ) -> Result<PairwiseDistance> {
        if sent.len() != other.len() {
            return Err(domain("block sets differ in user count"));
        }
        let chips = sent
            .first()
            .map_or(0, |b| b.slots.len() * cb.num_resources());
        let mut lambda = vec![0.0; chips];
        for (a, b) in sent.iter().zip(other) {
            for (s, (x, y)) in a.chips(cb).iter().zip(b.chips(cb)).enumerate() {
                lambda[s] += (x - y).norm_sqr();
            }
        }
        Ok(PairwiseDistance(lambda))
    }

    pub fn from_chip_vectors(
        sent: &[Vec<Complex64>],
        other: &[Vec<Complex64>],
    ) -> PairwiseDistance {
        let chips = sent.first().map_or(0, Vec::len);
        let mut lambda = vec![0.0; chips];
        for (a, b) in sent.iter().zip(other) {
            for (s, (x, y)) in a.iter().zip(b).enumerate() {
                lambda[s] += (x - y).norm_sqr();
            }
        }
        PairwiseDistance(lambda)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }
}

/// Unconditional pairwise error probability over unit-variance Rayleigh chips:
/// `E_h[exp(-sum l_s |h_s|^2 / 4N0)/12 + exp(-sum l_s |h_s|^2 / 3N0)/4]`
/// `= prod 4N0/(4N0 + l_s)/12 + prod 3N0/(3N0 + l_s)/4`.
pub fn upep(lambda: &PairwiseDistance, n0: f64) -> Result<f64> {
    if !(n0 > 0.0) {
        return Err(domain("N0 must be positive"));
    }
    let a: f64 = lambda.0.iter().map(|l| 4.0 * n0 / (4.0 * n0 + l)).product();
    let b: f64 = lambda.0.iter().map(|l| 3.0 * n0 / (3.0 * n0 + l)).product();
    Ok(a / 12.0 + b / 4.0)
}

/// Alternative closed form `prod N0 (48 N0 - 13 l) / ((4 N0 - l)(6 N0 - l))`.
/// It is not the Rayleigh average of the tail approximation: at zero distance it
/// gives `2^(nK)` instead of 1/3. Kept only for comparison.
pub fn upep_rational_product(lambda: &PairwiseDistance, n0: f64) -> Result<f64> {
    if !(n0 > 0.0) {
        return Err(domain("N0 must be positive"));
    }
    Ok(lambda
        .0
        .iter()
        .map(|l| n0 * (48.0 * n0 - 13.0 * l) / ((4.0 * n0 - l) * (6.0 * n0 - l)))
        .product())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampling {
    Exhaustive,
    MonteCarlo(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundEstimate {
    pub value: f64,
    /// Zero for exhaustive evaluation.
    pub std_error: f64,
    /// Number of pairwise terms evaluated.
    pub pairs: u64,
}

/// Exhaustive evaluation is refused above this many block-set pairs.
pub const EXHAUSTIVE_PAIR_LIMIT: f64 = 1e7;

/// Union bound on user `user`'s block error rate,
/// `(1/B^J) sum_C sum_{C': c'_user != c_user} P(C -> C')` with `B = 2^m1 M^t`
/// distinct blocks per user.
pub fn abler_bound<R: Rng + ?Sized>(
    cb: &Codebook,
    format: &BlockFormat,
    n0: f64,
    user: usize,
    sampling: Sampling,
    rational_product: bool,
    rng: &mut R,
) -> Result<BoundEstimate> {
    let users = cb.num_users();
    if user >= users {
        return Err(domain(format!("user {} out of range", user + 1)));
    }
    let pep = |l: &PairwiseDistance| {
        if rational_product {
            upep_rational_product(l, n0)
        } else {
            upep(l, n0)
        }
    };
    let b = format.block_count();
    // chips[j][i] = transmitted chips of block i of user j
    let chips: Vec<Vec<Vec<Complex64>>> = (0..users)
        .map(|j| (0..b).map(|i| format.nth_block(j, i).chips(cb)).collect())
        .collect();
    let n_chips = format.n() * cb.num_resources();
    let lambda_of = |c: &[usize], d: &[usize]| {
        let mut l = vec![0.0; n_chips];
        for j in 0..users {
            if c[j] != d[j] {
                for (s, (x, y)) in chips[j][c[j]].iter().zip(&chips[j][d[j]]).enumerate() {
                    l[s] += (x - y).norm_sqr();
                }
            }
        }
        PairwiseDistance(l)
    };
    let competitors = (b as f64 - 1.0) * (b as f64).powi(users as i32 - 1);

    match sampling {
        Sampling::Exhaustive => {
            let pairs = (b as f64).powi(2 * users as i32);
            if pairs > EXHAUSTIVE_PAIR_LIMIT {
                return Err(domain(format!(
                    "exhaustive bound needs {pairs:.3e} pairs (limit {EXHAUSTIVE_PAIR_LIMIT:.0e}); use Monte Carlo"
                )));
            }
            let total = b.pow(users as u32);
            let digits = |mut v: usize| {
                let mut d = vec![0; users];
                for x in d.iter_mut().rev() {
                    *x = v % b;
                    v /= b;
                }
                d
            };
            let mut sum = 0.0;
            let mut count = 0u64;
            for ci in 0..total {
                let c = digits(ci);
                for di in 0..total {
                    let d = digits(di);
                    if d[user] == c[user] {
                        continue;
                    }
                    sum += pep(&lambda_of(&c, &d))?;
                    count += 1;
                }
            }
            Ok(BoundEstimate {
                value: sum / total as f64,
                std_error: 0.0,
                pairs: count,
            })
        }
        Sampling::MonteCarlo(samples) => {
            if samples < 2 {
                return Err(domain("Monte Carlo bound needs at least two samples"));
            }
            let mut mean = 0.0;
            let mut m2 = 0.0;
            let mut c = vec![0; users];
            let mut d = vec![0; users];
            for i in 0..samples {
                for j in 0..users {
                    c[j] = rng.random_range(0..b);
                    d[j] = if j == user {
                        (c[j] + 1 + rng.random_range(0..b - 1)) % b
                    } else {
                        rng.random_range(0..b)
                    };
                }
                let x = pep(&lambda_of(&c, &d))?;
                let delta = x - mean;
                mean += delta / (i + 1) as f64;
                m2 += delta * (x - mean);
            }
            let var = m2 / (samples - 1) as f64;
            Ok(BoundEstimate {
                value: competitors * mean,
                std_error: competitors * (var / samples as f64).sqrt(),
                pairs: samples as u64,
            })
        }
    }
}

/// Error-pattern occurrence statistics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternStats {
    /// Number of records `B`.
    pub blocks: u64,
    /// Occurrences of each case `0..=n`.
    pub case_counts: Vec<u64>,
    pub reliable: u64,
    /// Sum of candidate-set sizes over all records.
    pub extra_search: u64,
}

impl PatternStats {
    pub fn new(n: usize) -> PatternStats {
        PatternStats {
            blocks: 0,
            case_counts: vec![0; n + 1],
            reliable: 0,
            extra_search: 0,
        }
    }

    pub fn record(&mut self, d: &UserDiagnostics) {
        self.blocks += 1;
        match d.case {
            PatternCase::Reliable => self.reliable += 1,
            PatternCase::Case(g) => self.case_counts[g] += 1,
        }
        self.extra_search += d.candidates as u64;
    }

    pub fn merge(&mut self, other: &PatternStats) {
        self.blocks += other.blocks;
        self.reliable += other.reliable;
        self.extra_search += other.extra_search;
        for (a, b) in self.case_counts.iter_mut().zip(&other.case_counts) {
            *a += b;
        }
    }

    fn ratio(&self, v: u64) -> f64 {
        if self.blocks == 0 {
            0.0
        } else {
            v as f64 / self.blocks as f64
        }
    }

    /// Fraction of records in case `gamma`.
    pub fn delta(&self, gamma: usize) -> f64 {
        self.ratio(self.case_counts[gamma])
    }

    pub fn reliable_ratio(&self) -> f64 {
        self.ratio(self.reliable)
    }

    /// Mean candidate-set size per record, `sum_g |psi_g| delta_g`.
    pub fn extra_complexity(&self) -> f64 {
        self.ratio(self.extra_search)
    }
}

/// Aggregates per-user detection diagnostics.
pub fn pattern_stats<'d>(
    n: usize,
    records: impl IntoIterator<Item = &'d UserDiagnostics>,
) -> PatternStats {
    let mut s = PatternStats::new(n);
    for d in records {
        s.record(d);
    }
    s
}
