//! Message passing detection of one slot (`K` chips) of superimposed users.
//!
//! Each user's alphabet is its `M` codewords, optionally augmented with the all
//! zero word that marks an inactive slot. Messages live in the log domain and
//! every message vector is normalized after each update.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::codebook::{Codebook, FactorGraph};
use crate::error::{domain, Result};

/// Detector input noise variances are clamped to at least this.
pub const N0_FLOOR: f64 = 1e-12;

/// A per-slot decision for one user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Entry {
    Zero,
    /// 0-based codeword index.
    Symbol(usize),
}

impl Entry {
    pub fn symbol(self) -> Option<usize> {
        match self {
            Entry::Zero => None,
            Entry::Symbol(m) => Some(m),
        }
    }

    pub fn is_zero(self) -> bool {
        self == Entry::Zero
    }
}

impl From<Option<usize>> for Entry {
    fn from(v: Option<usize>) -> Entry {
        v.map_or(Entry::Zero, Entry::Symbol)
    }
}

/// Prior placed on the zero entry of the augmented alphabet.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZeroPrior {
    /// All `M + 1` entries equally likely.
    #[default]
    Uniform,
    /// Zero has probability `(n - t) / n`, symbols share the rest.
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpaParams {
    pub iterations: usize,
    pub augment_zero: bool,
    /// Probability of the zero entry; `None` means uniform over the alphabet.
    pub zero_probability: Option<f64>,
}

impl Default for MpaParams {
    fn default() -> Self {
        MpaParams {
            iterations: 6,
            augment_zero: true,
            zero_probability: None,
        }
    }
}

/// Message state in the linear domain. Edges are ordered by resource, then by
/// position of the user in that resource's neighbor list.
#[derive(Debug, Clone)]
pub struct MessageTable {
    pub fn_to_un: Vec<Vec<f64>>,
    pub un_to_fn: Vec<Vec<f64>>,
    pub beliefs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotDecision {
    pub entries: Vec<Entry>,
    /// Per user, posterior over the alphabet (zero first when augmented).
    pub posteriors: Vec<Vec<f64>>,
}

/// Work counters of one detection call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MpaStats {
    pub iterations: usize,
    /// Function-node message vectors computed.
    pub fn_messages: usize,
    /// Likelihood terms summed, counted once per (message, hypothesis) pair.
    pub likelihood_terms: usize,
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn normalize_log(v: &mut [f64]) {
    let z = log_sum_exp(v);
    v.iter_mut().for_each(|x| *x -= z);
}

fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Callback receiving the iteration number and the current messages.
pub type SlotObserver<'o> = &'o mut dyn FnMut(usize, &MessageTable);

#[derive(Debug, Clone)]
pub struct MpaDetector<'a> {
    cb: &'a Codebook,
    fg: &'a FactorGraph,
    params: MpaParams,
    edge_offset: Vec<usize>,
    log_prior: Vec<f64>,
}

impl<'a> MpaDetector<'a> {
    pub fn new(cb: &'a Codebook, fg: &'a FactorGraph, params: MpaParams) -> Result<Self> {
        if params.iterations == 0 {
            return Err(domain("MPA needs at least one iteration"));
        }
        let mut edge_offset = Vec::with_capacity(fg.fn_neighbors.len() + 1);
        let mut acc = 0;
        for n in &fg.fn_neighbors {
            edge_offset.push(acc);
            acc += n.len();
        }
        edge_offset.push(acc);
        let m = cb.size();
        let log_prior = match (params.augment_zero, params.zero_probability) {
            (false, _) => vec![0.0; m],
            (true, None) => vec![0.0; m + 1],
            (true, Some(p0)) => {
                if !(0.0..1.0).contains(&p0) || p0 == 0.0 {
                    return Err(domain(format!("zero prior {p0} must lie in (0, 1)")));
                }
                let mut v = vec![((1.0 - p0) / m as f64).ln(); m + 1];
                v[0] = p0.ln();
                v
            }
        };
        Ok(MpaDetector {
            cb,
            fg,
            params,
            edge_offset,
            log_prior,
        })
    }

    pub fn params(&self) -> &MpaParams {
        &self.params
    }

    pub fn alphabet_size(&self) -> usize {
        self.cb.size() + usize::from(self.params.augment_zero)
    }

    /// Alphabet entry for index `a`.
    pub fn entry(&self, a: usize) -> Entry {
        if self.params.augment_zero {
            if a == 0 {
                Entry::Zero
            } else {
                Entry::Symbol(a - 1)
            }
        } else {
            Entry::Symbol(a)
        }
    }

    fn value(&self, user: usize, a: usize, k: usize, scale: f64) -> Complex64 {
        match self.entry(a) {
            Entry::Zero => Complex64::new(0.0, 0.0),
            Entry::Symbol(m) => self.cb.codeword(user, m)[k] * scale,
        }
    }

    /// Detects one slot. `h` holds each user's `K` gains for this slot, user-major.
    pub fn run_slot(
        &self,
        y: &[Complex64],
        h: &[Complex64],
        n0: f64,
        scale: f64,
    ) -> Result<SlotDecision> {
        self.run_slot_observed(y, h, n0, scale, None)
            .map(|(d, _)| d)
    }

    /// As [`MpaDetector::run_slot`], calling `observer` with the message table after
    /// every iteration and returning work counters.
    pub fn run_slot_observed(
        &self,
        y: &[Complex64],
        h: &[Complex64],
        n0: f64,
        scale: f64,
        mut observer: Option<SlotObserver<'_>>,
    ) -> Result<(SlotDecision, MpaStats)> {
        let k_len = self.cb.num_resources();
        let users = self.cb.num_users();
        if y.len() != k_len || h.len() != users * k_len {
            return Err(domain(format!(
                "slot needs {k_len} chips and {} gains, got {} and {}",
                users * k_len,
                y.len(),
                h.len()
            )));
        }
        if !(n0 >= 0.0) {
            return Err(domain("noise variance must be nonnegative"));
        }
        let n0 = n0.max(N0_FLOOR);
        let alpha = self.alphabet_size();
        let edges = *self.edge_offset.last().unwrap();
        let mut stats = MpaStats::default();

        // Log-likelihood of every joint hypothesis on every resource.
        let mut loglik: Vec<Vec<f64>> = Vec::with_capacity(k_len);
        for (k, nb) in self.fg.fn_neighbors.iter().enumerate() {
            let contrib: Vec<Vec<Complex64>> = nb
                .iter()
                .map(|&j| {
                    (0..alpha)
                        .map(|a| h[j * k_len + k] * self.value(j, a, k, scale))
                        .collect()
                })
                .collect();
            let combos = alpha.pow(nb.len() as u32);
            let mut ll = Vec::with_capacity(combos);
            let mut digits = vec![0usize; nb.len()];
            for _ in 0..combos {
                let mut r = y[k];
                for (p, &d) in digits.iter().enumerate() {
                    r -= contrib[p][d];
                }
                ll.push(-r.norm_sqr() / n0);
                increment(&mut digits, alpha);
            }
            loglik.push(ll);
        }

        let uniform = -(alpha as f64).ln();
        let mut u = vec![vec![uniform; alpha]; edges];
        let mut v = vec![vec![uniform; alpha]; edges];
        let max_df = self.fg.d_f;
        let mut vals = Vec::new();
        let mut bucket_max = vec![f64::NEG_INFINITY; max_df * alpha];
        let mut bucket_sum = vec![0.0; max_df * alpha];
        let mut digits = vec![0usize; max_df];

        for iter in 0..self.params.iterations {
            // function-node update
            for (k, nb) in self.fg.fn_neighbors.iter().enumerate() {
                let base = self.edge_offset[k];
                let df = nb.len();
                let ll = &loglik[k];
                vals.clear();
                bucket_max[..df * alpha].fill(f64::NEG_INFINITY);
                bucket_sum[..df * alpha].fill(0.0);
                digits[..df].fill(0);
                for &l in ll {
                    let total: f64 = l + (0..df).map(|q| v[base + q][digits[q]]).sum::<f64>();
                    for p in 0..df {
                        let x = total - v[base + p][digits[p]];
                        let x = if x.is_nan() {
                            // v entry was -inf; recompute without it
                            l + (0..df)
                                .filter(|&q| q != p)
                                .map(|q| v[base + q][digits[q]])
                                .sum::<f64>()
                        } else {
                            x
                        };
                        vals.push(x);
                        let b = &mut bucket_max[p * alpha + digits[p]];
                        if x > *b {
                            *b = x;
                        }
                    }
                    increment(&mut digits[..df], alpha);
                }
                digits[..df].fill(0);
                let mut i = 0;
                for _ in 0..ll.len() {
                    for (p, &d) in digits[..df].iter().enumerate() {
                        let idx = p * alpha + d;
                        let m = bucket_max[idx];
                        if m > f64::NEG_INFINITY {
                            bucket_sum[idx] += (vals[i] - m).exp();
                        }
                        i += 1;
                    }
                    increment(&mut digits[..df], alpha);
                }
                for p in 0..df {
                    let msg = &mut u[base + p];
                    for (a, v) in msg.iter_mut().enumerate().take(alpha) {
                        let idx = p * alpha + a;
                        *v = bucket_max[idx] + bucket_sum[idx].ln();
                    }
                    normalize_log(msg);
                }
                stats.fn_messages += df;
                stats.likelihood_terms += df * ll.len();
            }

            // user-node update
            for (j, ks) in self.fg.un_neighbors.iter().enumerate() {
                for (i, &k) in ks.iter().enumerate() {
                    let e = self.edge_offset[k] + self.fg.edge_slot[j][i];
                    let mut msg = self.log_prior.clone();
                    for (l, &k2) in ks.iter().enumerate() {
                        if l != i {
                            let e2 = self.edge_offset[k2] + self.fg.edge_slot[j][l];
                            msg.iter_mut().zip(&u[e2]).for_each(|(m, x)| *m += x);
                        }
                    }
                    normalize_log(&mut msg);
                    v[e] = msg;
                }
            }
            stats.iterations += 1;

            if let Some(obs) = observer.as_mut() {
                let beliefs = self.beliefs(&u);
                let lin = |m: &Vec<Vec<f64>>| {
                    m.iter()
                        .map(|x| x.iter().map(|v| v.exp()).collect())
                        .collect()
                };
                let table = MessageTable {
                    fn_to_un: lin(&u),
                    un_to_fn: lin(&v),
                    beliefs: lin(&beliefs),
                };
                obs(iter, &table);
            }
        }

        let beliefs = self.beliefs(&u);
        let entries = beliefs
            .iter()
            .map(|b| self.entry(argmax_first(b)))
            .collect();
        let posteriors = beliefs
            .iter()
            .map(|b| b.iter().map(|x| x.exp()).collect())
            .collect();
        Ok((
            SlotDecision {
                entries,
                posteriors,
            },
            stats,
        ))
    }

    fn beliefs(&self, u: &[Vec<f64>]) -> Vec<Vec<f64>> {
        self.fg
            .un_neighbors
            .iter()
            .enumerate()
            .map(|(j, ks)| {
                let mut b = self.log_prior.clone();
                for (i, &k) in ks.iter().enumerate() {
                    let e = self.edge_offset[k] + self.fg.edge_slot[j][i];
                    b.iter_mut().zip(&u[e]).for_each(|(m, x)| *m += x);
                }
                normalize_log(&mut b);
                b
            })
            .collect()
    }
}

/// Mixed-radix increment, last digit fastest.
fn increment(digits: &mut [usize], radix: usize) {
    for d in digits.iter_mut().rev() {
        *d += 1;
        if *d < radix {
            return;
        }
        *d = 0;
    }
}

/// Detects one slot with [`MpaDetector`].
#[allow(clippy::too_many_arguments)]
pub fn run_mpa_slot(
    y: &[Complex64],
    h: &[Complex64],
    cb: &Codebook,
    fg: &FactorGraph,
    n0: f64,
    scale: f64,
    iterations: usize,
    augment_zero: bool,
) -> Result<SlotDecision> {
    let params = MpaParams {
        iterations,
        augment_zero,
        zero_probability: None,
    };
    MpaDetector::new(cb, fg, params)?.run_slot(y, h, n0, scale)
}

/// Largest user count accepted by [`exhaustive_slot_ml`].
pub const ML_MAX_USERS: usize = 8;
/// Largest codebook size accepted by [`exhaustive_slot_ml`].
pub const ML_MAX_SIZE: usize = 8;

/// Joint maximum-likelihood detection of one slot by enumerating every
/// hypothesis. Ties go to the first hypothesis in enumeration order (zero first).
pub fn exhaustive_slot_ml(
    y: &[Complex64],
    h: &[Complex64],
    cb: &Codebook,
    scale: f64,
    augment_zero: bool,
) -> Result<Vec<Entry>> {
    let users = cb.num_users();
    let k_len = cb.num_resources();
    if users > ML_MAX_USERS || cb.size() > ML_MAX_SIZE {
        return Err(domain(format!(
            "exhaustive ML limited to J <= {ML_MAX_USERS}, M <= {ML_MAX_SIZE}"
        )));
    }
    if y.len() != k_len || h.len() != users * k_len {
        return Err(domain("slot shape mismatch"));
    }
    let alphabet: Vec<Entry> = augment_zero
        .then_some(Entry::Zero)
        .into_iter()
        .chain((0..cb.size()).map(Entry::Symbol))
        .collect();
    // faded chip vectors of every (user, entry)
    let faded: Vec<Vec<Vec<Complex64>>> = (0..users)
        .map(|j| {
            alphabet
                .iter()
                .map(|e| {
                    (0..k_len)
                        .map(|k| match e {
                            Entry::Zero => Complex64::new(0.0, 0.0),
                            Entry::Symbol(m) => h[j * k_len + k] * cb.codeword(j, *m)[k] * scale,
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    struct Search<'s> {
        faded: &'s [Vec<Vec<Complex64>>],
        best: f64,
        best_choice: Vec<usize>,
        choice: Vec<usize>,
    }
    fn descend(s: &mut Search<'_>, j: usize, residual: &[Complex64]) {
        if j == s.faded.len() {
            let d: f64 = residual.iter().map(|c| c.norm_sqr()).sum();
            if d < s.best {
                s.best = d;
                s.best_choice.clone_from(&s.choice);
            }
            return;
        }
        let mut next = residual.to_vec();
        for a in 0..s.faded[j].len() {
            for (n, (r, c)) in next.iter_mut().zip(residual.iter().zip(&s.faded[j][a])) {
                *n = r - c;
            }
            s.choice[j] = a;
            descend(s, j + 1, &next);
        }
    }
    let mut s = Search {
        faded: &faded,
        best: f64::INFINITY,
        best_choice: vec![0; users],
        choice: vec![0; users],
    };
    descend(&mut s, 0, y);
    Ok(s.best_choice.iter().map(|&a| alphabet[a]).collect())
}
