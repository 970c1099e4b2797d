//! Ordered-node tree graphs `T_{n,m}`.
//!
//! A tree is the list of progenitor labels `j_1..j_m` with `j_k` in `1..=n+k-1`.
//! Labels are 1-based throughout this module, matching particle names in a
//! collision history (particle `n+k` is created at node `k`).
//!
//! The rewrite maps act on a tree with `n+1` root lines and produce trees with
//! `n` root lines; here `n` always denotes the ambient (smaller) root count.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on the number of trees materialized by [`enumerate_trees`].
pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Tree {
    n: usize,
    js: Vec<usize>,
}

impl Tree {
    pub fn new(n: usize, js: Vec<usize>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidTree("root count must be at least 1".into()));
        }
        for (idx, &j) in js.iter().enumerate() {
            let k = idx + 1;
            if j == 0 || j > n + k - 1 {
                return Err(Error::InvalidTree(format!(
                    "node {k} has progenitor {j}, expected 1..={}",
                    n + k - 1
                )));
            }
        }
        Ok(Self { n, js })
    }

    /// The tree with no nodes.
    pub fn trivial(n: usize) -> Result<Self> {
        Self::new(n, Vec::new())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.js.len()
    }

    pub fn js(&self) -> &[usize] {
        &self.js
    }

    /// Progenitor of node `k` (1-based).
    pub fn j(&self, k: usize) -> usize {
        self.js[k - 1]
    }

    /// First node attached to the last root line, or `m+1` if there is none.
    /// Defined for trees with at least two root lines.
    pub fn ell(&self) -> usize {
        let last = self.n;
        self.js.iter().position(|&j| j == last).map_or(self.m() + 1, |p| p + 1)
    }

    /// Removes the last root line, which must carry no node.
    pub fn discard_trivial(&self) -> Result<Tree> {
        let (m, ell) = (self.m(), self.ell());
        if self.n < 2 || ell != m + 1 {
            return Err(Error::NotTrivialLine { ell, m });
        }
        let n = self.n - 1;
        let js = self.js.iter().map(|&j| if j <= n { j } else { j - 1 }).collect();
        Tree::new(n, js)
    }

    /// Attaches the root of the last line to line `i`, as a new node in slot `k`.
    pub fn attach(&self, k: usize, i: usize) -> Result<Tree> {
        if self.n < 2 {
            return Err(Error::InvalidAttachment { k, i, reason: "source needs at least two root lines".into() });
        }
        let n = self.n - 1;
        let ell = self.ell();
        if k == 0 || k > ell {
            return Err(Error::InvalidAttachment { k, i, reason: format!("slot must lie in 1..={ell}") });
        }
        if i == 0 || i > n + k - 1 {
            return Err(Error::InvalidAttachment { k, i, reason: format!("line must lie in 1..={}", n + k - 1) });
        }
        let f = |j: usize| {
            if j <= n || j > n + k {
                j
            } else if j == n + 1 {
                n + k
            } else {
                j - 1
            }
        };
        let mut js = Vec::with_capacity(self.m() + 1);
        js.extend(self.js[..k - 1].iter().map(|&j| f(j)));
        js.push(i);
        js.extend(self.js[k - 1..].iter().map(|&j| f(j)));
        Tree::new(n, js)
    }

    /// Number of terms on the right of the integration-step identity for this
    /// source: one discard term plus every admissible attachment.
    pub fn rewrite_term_count(&self) -> usize {
        let n = self.n - 1;
        1 + (1..=self.ell()).map(|k| n + k - 1).sum::<usize>()
    }
}

impl fmt::Display for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:[", self.n)?;
        for (idx, j) in self.js.iter().enumerate() {
            if idx > 0 {
                f.write_str(",")?;
            }
            write!(f, "{j}")?;
        }
        f.write_str("]")
    }
}

impl FromStr for Tree {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidTree(format!("expected \"n:[j1,j2,...]\", got {s:?}"));
        let (n, rest) = s.trim().split_once(':').ok_or_else(bad)?;
        let n: usize = n.trim().parse().map_err(|_| bad())?;
        let body = rest.trim().strip_prefix('[').and_then(|r| r.strip_suffix(']')).ok_or_else(bad)?;
        let js = if body.trim().is_empty() {
            Vec::new()
        } else {
            body.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect::<Result<Vec<usize>>>()?
        };
        Tree::new(n, js)
    }
}

/// Rising factorial `n (n+1) ... (n+m-1)`, saturating at `u128::MAX`.
pub fn count_trees(n: usize, m: usize) -> u128 {
    (0..m).try_fold(1u128, |acc, k| acc.checked_mul((n + k) as u128)).unwrap_or(u128::MAX)
}

/// All trees with `n` roots and `m` nodes in lexicographic order.
pub fn enumerate_trees(n: usize, m: usize, cap: u128) -> Result<Vec<Tree>> {
    if n == 0 {
        return Err(Error::InvalidTree("root count must be at least 1".into()));
    }
    let count = count_trees(n, m);
    if count > cap {
        return Err(Error::EnumerationTooLarge { count, cap });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut js = vec![1usize; m];
    loop {
        out.push(Tree { n, js: js.clone() });
        // Odometer increment from the last node, whose range is widest.
        let mut k = m;
        loop {
            if k == 0 {
                return Ok(out);
            }
            if js[k - 1] < n + k - 1 {
                js[k - 1] += 1;
                break;
            }
            js[k - 1] = 1;
            k -= 1;
        }
    }
}

/// How a target tree arises from a source tree with one more root line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    /// Discarding the trivial line; carries multiplicity `N-n-m`.
    Discard { source: Tree, weight: usize },
    Attach { source: Tree, k: usize, i: usize },
}

impl Provenance {
    pub fn multiplicity(&self) -> usize {
        match self {
            Provenance::Discard { weight, .. } => *weight,
            Provenance::Attach { .. } => 1,
        }
    }
}

/// Every rewrite producing `target` from a tree with `target.n()+1` roots, found
/// by exhaustive search over sources, together with the total multiplicity.
pub fn produced_copies(target: &Tree, total: usize) -> Result<(usize, Vec<Provenance>)> {
    let (n, m) = (target.n(), target.m());
    if n + m > total {
        return Err(Error::InvalidInput(format!("n+m = {} exceeds N = {total}", n + m)));
    }
    let mut prov = Vec::new();
    for source in enumerate_trees(n + 1, m, DEFAULT_ENUMERATION_CAP)? {
        if source.ell() == m + 1 && source.discard_trivial()? == *target {
            prov.push(Provenance::Discard { source, weight: total - n - m });
        }
    }
    if m > 0 {
        for source in enumerate_trees(n + 1, m - 1, DEFAULT_ENUMERATION_CAP)? {
            for k in 1..=source.ell() {
                for i in 1..=n + k - 1 {
                    if source.attach(k, i)? == *target {
                        prov.push(Provenance::Attach { source: source.clone(), k, i });
                    }
                }
            }
        }
    }
    let count = prov.iter().map(Provenance::multiplicity).sum();
    Ok((count, prov))
}
