//! SCMA codebooks and the user/resource factor graph implied by their sparsity.
//!
//! A codebook holds, for each of `J` users, `M` codewords of `K` complex chips.
//! Every codeword of a user is nonzero on the same set of chips; that set is the
//! user's row of the factor graph. Codewords are kept at unit energy.
//!
//! # File format
//!
//! Codebooks are stored as TOML documents:
//!
//! ```toml
//! J = 1
//! K = 2
//! M = 2
//! # codewords[j][m] = K chips as [re, im]
//! codewords = [
//!   [ [[1.0, 0.0], [0.0, 0.0]], [[-1.0, 0.0], [0.0, 0.0]] ],
//! ]
//! ```
//!
//! Unknown keys are rejected.

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};

/// Chips with magnitude at or below this are treated as structural zeros.
pub const ZERO_CHIP_TOLERANCE: f64 = 1e-12;

/// Codewords whose squared norm is further than this from 1 are rescaled.
pub const UNIT_ENERGY_TOLERANCE: f64 = 1e-9;

const BUNDLED_6X4X4: &str = include_str!("../data/codebook_6x4x4.toml");

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    users: usize,
    resources: usize,
    size: usize,
    /// Indexed `[(j * size + m) * resources + k]`.
    entries: Vec<Complex64>,
    /// Sorted nonzero chip positions of each user.
    supports: Vec<Vec<usize>>,
    renormalized: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CodebookDoc {
    #[serde(rename = "J")]
    users: usize,
    #[serde(rename = "K")]
    resources: usize,
    #[serde(rename = "M")]
    size: usize,
    codewords: Vec<Vec<Vec<[f64; 2]>>>,
}

impl Codebook {
    /// The bundled 6-user, 4-resource, 4-point codebook (150% overload).
    pub fn bundled() -> Codebook {
        Codebook::from_toml_str(BUNDLED_6X4X4).expect("bundled codebook is valid")
    }

    /// Text of the bundled codebook document.
    pub fn bundled_source() -> &'static str {
        BUNDLED_6X4X4
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Codebook> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Codebook::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Codebook> {
        let doc: CodebookDoc = toml::from_str(text).map_err(|e| Error::from_toml(text, e))?;
        let (users, resources, size) = (doc.users, doc.resources, doc.size);
        if doc.codewords.len() != users {
            return Err(Error::Parse {
                location: "field `codewords`".into(),
                message: format!("expected {users} users, found {}", doc.codewords.len()),
            });
        }
        let mut entries = Vec::with_capacity(users * size * resources);
        for (j, user) in doc.codewords.iter().enumerate() {
            if user.len() != size {
                return Err(Error::Parse {
                    location: format!("field `codewords[{j}]`"),
                    message: format!("expected {size} codewords, found {}", user.len()),
                });
            }
            for (m, word) in user.iter().enumerate() {
                if word.len() != resources {
                    return Err(Error::Parse {
                        location: format!("field `codewords[{j}][{m}]`"),
                        message: format!("expected {resources} chips, found {}", word.len()),
                    });
                }
                entries.extend(word.iter().map(|&[re, im]| Complex64::new(re, im)));
            }
        }
        Codebook::from_entries(users, resources, size, entries)
    }

    /// Builds and validates a codebook from a flat `[j][m][k]` entry array.
    ///
    /// Codewords are rescaled to unit energy when needed; [`Codebook::renormalized`]
    /// reports whether that happened.
    pub fn from_entries(
        users: usize,
        resources: usize,
        size: usize,
        mut entries: Vec<Complex64>,
    ) -> Result<Codebook> {
        if users == 0 || resources == 0 || size == 0 {
            return Err(validation("J, K and M must all be positive"));
        }
        if entries.len() != users * size * resources {
            return Err(validation(format!(
                "expected {} entries for J={users}, M={size}, K={resources}, got {}",
                users * size * resources,
                entries.len()
            )));
        }
        if entries
            .iter()
            .any(|c| !c.re.is_finite() || !c.im.is_finite())
        {
            return Err(validation("codebook contains non-finite values"));
        }

        let mut supports = Vec::with_capacity(users);
        for j in 0..users {
            let mut support: Option<Vec<usize>> = None;
            for m in 0..size {
                let word = &entries[(j * size + m) * resources..][..resources];
                let nz: Vec<usize> = (0..resources)
                    .filter(|&k| word[k].norm() > ZERO_CHIP_TOLERANCE)
                    .collect();
                if nz.is_empty() {
                    return Err(validation(format!(
                        "user {} codeword {} has no nonzero chip",
                        j + 1,
                        m + 1
                    )));
                }
                match &support {
                    None => support = Some(nz),
                    Some(s) if *s != nz => {
                        return Err(validation(format!(
                            "user {} has inconsistent sparsity pattern across codewords",
                            j + 1
                        )))
                    }
                    Some(_) => {}
                }
            }
            let support = support.unwrap();
            // Single-user toy codebooks may be dense; overloaded ones must be sparse.
            if users > 1 && support.len() == resources {
                return Err(validation(format!(
                    "user {} occupies every resource; SCMA codewords must contain a zero chip",
                    j + 1
                )));
            }
            supports.push(support);
        }

        let mut fn_degree = vec![0usize; resources];
        for s in &supports {
            for &k in s {
                fn_degree[k] += 1;
            }
        }
        if let Some(k) = fn_degree.iter().position(|&d| d == 0) {
            return Err(validation(format!("resource {} is used by no user", k + 1)));
        }
        let d_v = supports.iter().map(Vec::len).max().unwrap();
        let d_f = *fn_degree.iter().max().unwrap();
        let regular =
            supports.iter().all(|s| s.len() == d_v) && fn_degree.iter().all(|&d| d == d_f);
        if !regular || users * d_v != resources * d_f {
            return Err(validation(format!(
                "irregular factor graph: J*d_v = {} but K*d_f = {} (user degrees {:?}, resource degrees {:?})",
                users * d_v,
                resources * d_f,
                supports.iter().map(Vec::len).collect::<Vec<_>>(),
                fn_degree
            )));
        }

        let mut renormalized = false;
        for word in entries.chunks_mut(resources) {
            let energy: f64 = word.iter().map(|c| c.norm_sqr()).sum();
            if (energy - 1.0).abs() > UNIT_ENERGY_TOLERANCE {
                renormalized = true;
                let s = energy.sqrt().recip();
                word.iter_mut().for_each(|c| *c *= s);
            }
        }

        Ok(Codebook {
            users,
            resources,
            size,
            entries,
            supports,
            renormalized,
        })
    }

    /// A codebook restricted to the given users (0-based, in order).
    pub fn select_users(&self, users: &[usize]) -> Result<Codebook> {
        let mut entries = Vec::with_capacity(users.len() * self.size * self.resources);
        for &j in users {
            if j >= self.users {
                return Err(validation(format!("user {} out of range", j + 1)));
            }
            for m in 0..self.size {
                entries.extend_from_slice(self.codeword(j, m));
            }
        }
        Codebook::from_entries(users.len(), self.resources, self.size, entries)
    }

    /// Number of users `J`.
    pub fn num_users(&self) -> usize {
        self.users
    }

    /// Number of resources (chips per codeword) `K`.
    pub fn num_resources(&self) -> usize {
        self.resources
    }

    /// Codewords per user `M`.
    pub fn size(&self) -> usize {
        self.size
    }

    /// Codeword `m` (0-based) of user `j` (0-based).
    pub fn codeword(&self, j: usize, m: usize) -> &[Complex64] {
        &self.entries[(j * self.size + m) * self.resources..][..self.resources]
    }

    /// Sorted resources on which user `j` transmits.
    pub fn support(&self, j: usize) -> &[usize] {
        &self.supports[j]
    }

    /// True if any codeword was rescaled to unit energy while loading.
    pub fn renormalized(&self) -> bool {
        self.renormalized
    }

    pub fn overload(&self) -> f64 {
        self.users as f64 / self.resources as f64
    }

    pub fn factor_graph(&self) -> FactorGraph {
        FactorGraph::new(self)
    }

    /// Serializes the codebook into its TOML document form.
    pub fn to_toml_string(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "J = {}\nK = {}\nM = {}\ncodewords = [",
            self.users, self.resources, self.size
        )
        .unwrap();
        for j in 0..self.users {
            out.push_str("  [\n");
            for m in 0..self.size {
                let chips: Vec<String> = self
                    .codeword(j, m)
                    .iter()
                    .map(|c| format!("[{:?}, {:?}]", c.re, c.im))
                    .collect();
                writeln!(out, "    [{}],", chips.join(", ")).unwrap();
            }
            out.push_str("  ],\n");
        }
        out.push_str("]\n");
        out
    }
}

/// User-node / function-node adjacency of a codebook.
///
/// Indices are 0-based. `fn_neighbors[k]` lists the users superimposed on
/// resource `k` in ascending order; `un_neighbors[j]` lists the resources of user `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactorGraph {
    pub fn_neighbors: Vec<Vec<usize>>,
    pub un_neighbors: Vec<Vec<usize>>,
    /// Users per resource.
    pub d_f: usize,
    /// Resources per user.
    pub d_v: usize,
    /// For each user `j` and each resource `un_neighbors[j][i]`, the position of
    /// `j` inside `fn_neighbors[k]`.
    pub edge_slot: Vec<Vec<usize>>,
}

impl FactorGraph {
    pub fn new(cb: &Codebook) -> FactorGraph {
        let mut fn_neighbors = vec![Vec::new(); cb.num_resources()];
        for j in 0..cb.num_users() {
            for &k in cb.support(j) {
                fn_neighbors[k].push(j);
            }
        }
        let un_neighbors: Vec<Vec<usize>> = (0..cb.num_users())
            .map(|j| cb.support(j).to_vec())
            .collect();
        let edge_slot = un_neighbors
            .iter()
            .enumerate()
            .map(|(j, ks)| {
                ks.iter()
                    .map(|&k| fn_neighbors[k].iter().position(|&u| u == j).unwrap())
                    .collect()
            })
            .collect();
        let d_f = fn_neighbors.iter().map(Vec::len).max().unwrap_or(0);
        let d_v = un_neighbors.iter().map(Vec::len).max().unwrap_or(0);
        FactorGraph {
            fn_neighbors,
            un_neighbors,
            d_f,
            d_v,
            edge_slot,
        }
    }

    pub fn num_edges(&self) -> usize {
        self.fn_neighbors.iter().map(Vec::len).sum()
    }
}

/// Builds the factor graph of a codebook.
pub fn build_factor_graph(cb: &Codebook) -> FactorGraph {
    FactorGraph::new(cb)
}

/// Parses and validates a codebook document.
pub fn load_codebook(text: &str) -> Result<Codebook> {
    Codebook::from_toml_str(text)
}
