//! Ranked tree shapes as constrained ordered matchings.
//!
//! A tree on `n` leaves is a sequence of `n - 1` unordered pairs. Pair `k`
//! records the `k`-th coalescence; it may hold leaves and interior labels
//! `j < k`. Interior label `j` names the node created by pair `j`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether leaves carry identities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Labeled,
    Unlabeled,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Labeled => f.write_str("labeled"),
            Mode::Unlabeled => f.write_str("unlabeled"),
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "labeled" => Ok(Mode::Labeled),
            "unlabeled" => Ok(Mode::Unlabeled),
            other => Err(Error::InvalidParam(format!("unknown mode `{other}`"))),
        }
    }
}

/// An occupant of a pair. The derived order is the canonical one:
/// anonymous leaves, then named leaves by id, then interior labels by rank.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    AnonymousLeaf,
    NamedLeaf(u16),
    Interior(u16),
}

impl Label {
    pub fn is_leaf(self) -> bool {
        !matches!(self, Label::Interior(_))
    }

    pub fn interior_rank(self) -> Option<usize> {
        match self {
            Label::Interior(j) => Some(j as usize),
            _ => None,
        }
    }

    /// Whether this label may sit in pair `k` (1-based).
    pub fn allowed_in(self, k: usize) -> bool {
        match self {
            Label::Interior(j) => (j as usize) < k,
            _ => true,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::AnonymousLeaf => f.write_str("0"),
            Label::NamedLeaf(i) => write!(f, "L{i}"),
            Label::Interior(j) => write!(f, "I{j}"),
        }
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("unrecognised label `{s}`"));
        if s == "0" {
            return Ok(Label::AnonymousLeaf);
        }
        let (tag, rest) = s.split_at(s.char_indices().nth(1).map_or(s.len(), |(i, _)| i));
        let id: u16 = rest.parse().map_err(|_| bad())?;
        if id == 0 {
            return Err(bad());
        }
        match tag {
            "L" => Ok(Label::NamedLeaf(id)),
            "I" => Ok(Label::Interior(id)),
            _ => Err(bad()),
        }
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(de::Error::custom)
    }
}

pub type Pair = [Label; 2];

fn canonical(pair: Pair) -> Pair {
    if pair[0] <= pair[1] {
        pair
    } else {
        [pair[1], pair[0]]
    }
}

/// An ordered sequence of pairs; pair index `k` (0-based) has rank `k + 1`.
///
/// Construction only canonicalises the order inside each pair. Use
/// [`Matching::validate`] to check the constrained-matching invariants.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Matching {
    n: usize,
    mode: Mode,
    pairs: Vec<Pair>,
}

impl Matching {
    pub fn new(n: usize, mode: Mode, pairs: Vec<Pair>) -> Self {
        let pairs = pairs.into_iter().map(canonical).collect();
        Self { n, mode, pairs }
    }

    /// Builds a matching and rejects it unless it validates.
    pub fn try_new(n: usize, mode: Mode, pairs: Vec<Pair>) -> Result<Self> {
        let m = Self::new(n, mode, pairs);
        if m.validate() {
            Ok(m)
        } else {
            Err(Error::InvalidInput(format!("{m} is not a valid {mode} matching for n = {n}")))
        }
    }

    /// `(0,0)¹,(0,1)²,…,(0,n−2)ⁿ⁻¹`, with leaves `ℓ1, ℓ2, …` in labeled mode.
    pub fn caterpillar(n: usize, mode: Mode) -> Self {
        assert!(n >= 2, "a tree needs at least two leaves");
        let leaf = |i: usize| match mode {
            Mode::Labeled => Label::NamedLeaf(i as u16),
            Mode::Unlabeled => Label::AnonymousLeaf,
        };
        let mut pairs = vec![[leaf(1), leaf(2)]];
        for k in 2..n {
            pairs.push([leaf(k + 1), Label::Interior((k - 1) as u16)]);
        }
        Self::new(n, mode, pairs)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    /// Pair of rank `k` (1-based).
    pub fn pair(&self, k: usize) -> Pair {
        self.pairs[k - 1]
    }

    /// True iff every matching invariant holds.
    pub fn validate(&self) -> bool {
        let n = self.n;
        if n < 2 || self.pairs.len() != n - 1 {
            return false;
        }
        let mut interior_seen = vec![false; n - 1];
        let mut leaf_seen = vec![false; n + 1];
        let mut leaves = 0usize;
        for (idx, pair) in self.pairs.iter().enumerate() {
            let k = idx + 1;
            for &label in pair {
                match label {
                    Label::Interior(j) => {
                        let j = j as usize;
                        if j == 0 || j > n - 2 || j >= k || interior_seen[j] {
                            return false;
                        }
                        interior_seen[j] = true;
                    }
                    Label::AnonymousLeaf => {
                        if self.mode != Mode::Unlabeled {
                            return false;
                        }
                        leaves += 1;
                    }
                    Label::NamedLeaf(i) => {
                        let i = i as usize;
                        if self.mode != Mode::Labeled || i == 0 || i > n || leaf_seen[i] {
                            return false;
                        }
                        leaf_seen[i] = true;
                        leaves += 1;
                    }
                }
            }
        }
        leaves == n && interior_seen.iter().skip(1).all(|&s| s)
    }

    fn ensure_valid(&self) -> Result<()> {
        if self.validate() {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("{self} is not a valid matching for n = {}", self.n)))
        }
    }

    /// Rank of the pair holding `label`, if present.
    pub fn position(&self, label: Label) -> Option<usize> {
        self.pairs
            .iter()
            .position(|p| p[0] == label || p[1] == label)
            .map(|idx| idx + 1)
    }

    /// `I(j)` for every interior label; entry `j - 1` holds the pair rank of `Interior(j)`.
    pub fn interior_positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.n.saturating_sub(2)];
        for (idx, pair) in self.pairs.iter().enumerate() {
            for label in pair {
                if let Label::Interior(j) = label {
                    pos[*j as usize - 1] = idx + 1;
                }
            }
        }
        pos
    }

    pub fn erase_leaf_labels(&self) -> Result<Matching> {
        if self.mode != Mode::Labeled {
            return Err(Error::InvalidInput("leaf erasure needs a labeled matching".into()));
        }
        self.ensure_valid()?;
        let pairs = self
            .pairs
            .iter()
            .map(|p| p.map(|l| if l.is_leaf() { Label::AnonymousLeaf } else { l }))
            .collect();
        Ok(Matching::new(self.n, Mode::Unlabeled, pairs))
    }

    /// Number of pairs made of two leaves.
    pub fn cherry_count(&self) -> usize {
        self.pairs.iter().filter(|p| p[0].is_leaf() && p[1].is_leaf()).count()
    }

    /// `Σ_j (I(j) − j)`: total interior branch length at unit spacing.
    pub fn internal_tree_length(&self) -> usize {
        self.interior_positions()
            .iter()
            .enumerate()
            .map(|(j, &at)| at - (j + 1))
            .sum()
    }

    /// Interior nodes alive after each merger: `R_1, …, R_{n−1}`.
    pub fn red_counts(&self) -> Vec<usize> {
        let n = self.n;
        let pos = self.interior_positions();
        let mut counts = vec![0usize; n - 1];
        for (j0, &at) in pos.iter().enumerate() {
            // Interior j is present after mergers j, …, I(j) − 1.
            for slot in counts.iter_mut().take(at - 1).skip(j0) {
                *slot += 1;
            }
        }
        counts[n - 2] = 1;
        counts
    }

    /// Exchanges slot `upper` of pair `k` with slot `lower` of pair `k + 1`.
    /// Returns `None` when the result would break the rank constraint.
    pub fn swap(&self, k: usize, upper: usize, lower: usize) -> Option<Matching> {
        let up = self.pairs[k - 1][upper];
        let down = self.pairs[k][lower];
        if !down.allowed_in(k) {
            return None;
        }
        let mut pairs = self.pairs.clone();
        pairs[k - 1][upper] = down;
        pairs[k][lower] = up;
        pairs[k - 1] = canonical(pairs[k - 1]);
        pairs[k] = canonical(pairs[k]);
        Some(Matching { n: self.n, mode: self.mode, pairs })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.pairs).expect("labels always serialise")
    }

    /// Parses the JSON array-of-pairs form. `n` is the pair count plus one;
    /// the mode is labeled iff any named leaf appears.
    pub fn from_json(text: &str) -> Result<Matching> {
        let pairs: Vec<Pair> = serde_json::from_str(text)?;
        let mode = if pairs.iter().flatten().any(|l| matches!(l, Label::NamedLeaf(_))) {
            Mode::Labeled
        } else {
            Mode::Unlabeled
        };
        Matching::try_new(pairs.len() + 1, mode, pairs)
    }
}

impl fmt::Display for Matching {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (idx, p) in self.pairs.iter().enumerate() {
            if idx > 0 {
                f.write_str(",")?;
            }
            write!(f, "({},{})^{}", p[0], p[1], idx + 1)?;
        }
        Ok(())
    }
}

/// Per-mode limits on `n` for exhaustive work.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Budget {
    pub max_unlabeled_n: usize,
    pub max_labeled_n: usize,
}

impl Budget {
    /// Limits for plain enumeration.
    pub const ENUMERATION: Budget = Budget { max_unlabeled_n: 9, max_labeled_n: 7 };
    /// Limits for matrix, spectral and TV work.
    pub const EXACT: Budget = Budget { max_unlabeled_n: 9, max_labeled_n: 6 };

    pub fn unlimited() -> Budget {
        Budget { max_unlabeled_n: usize::MAX, max_labeled_n: usize::MAX }
    }

    pub fn check(&self, n: usize, mode: Mode) -> Result<()> {
        let max_n = match mode {
            Mode::Labeled => self.max_labeled_n,
            Mode::Unlabeled => self.max_unlabeled_n,
        };
        if n > max_n {
            return Err(Error::CapExceeded { n, mode, predicted: cardinality(n, mode), max_n });
        }
        Ok(())
    }
}

impl Default for Budget {
    fn default() -> Self {
        Budget::ENUMERATION
    }
}

fn binomial(n: u128, k: u128) -> u128 {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// `n!(n−1)!/2^{n−1}`, as the product of `C(i, 2)` for `i = 2..=n`.
pub fn labeled_cardinality(n: usize) -> u128 {
    (2..=n as u128).map(|i| binomial(i, 2)).product()
}

/// Euler zig-zag number `E_m` from `2E_{m+1} = Σ C(m,k) E_k E_{m−k}`.
pub fn zigzag(m: usize) -> u128 {
    let mut e = vec![1u128, 1];
    for j in 1..m {
        let s: u128 = (0..=j as u128)
            .map(|k| binomial(j as u128, k) * e[k as usize] * e[j - k as usize])
            .sum();
        e.push(s / 2);
    }
    e[m]
}

/// Number of ranked tree shapes on `n` leaves in the given mode.
pub fn cardinality(n: usize, mode: Mode) -> u128 {
    match mode {
        Mode::Labeled => labeled_cardinality(n),
        Mode::Unlabeled => zigzag(n.saturating_sub(1)),
    }
}

/// Every valid matching for one `(n, mode)`, in lexicographic order of the
/// pair sequence under the canonical label order.
#[derive(Clone, Debug)]
pub struct StateSpace {
    n: usize,
    mode: Mode,
    states: Vec<Matching>,
    index: HashMap<Matching, usize>,
}

impl StateSpace {
    pub fn enumerate(n: usize, mode: Mode, budget: Budget) -> Result<StateSpace> {
        if n < 2 {
            return Err(Error::InvalidParam(format!("n must be at least 2, got {n}")));
        }
        budget.check(n, mode)?;
        let urn: Vec<Label> = match mode {
            Mode::Labeled => (1..=n).map(|i| Label::NamedLeaf(i as u16)).collect(),
            Mode::Unlabeled => vec![Label::AnonymousLeaf; n],
        };
        let mut states = Vec::with_capacity(cardinality(n, mode) as usize);
        let mut prefix = Vec::with_capacity(n - 1);
        grow(n, mode, urn, &mut prefix, &mut states);
        states.sort();
        let index = states.iter().cloned().enumerate().map(|(i, m)| (m, i)).collect();
        Ok(StateSpace { n, mode, states, index })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[Matching] {
        &self.states
    }

    pub fn get(&self, idx: usize) -> &Matching {
        &self.states[idx]
    }

    pub fn index_of(&self, m: &Matching) -> Option<usize> {
        self.index.get(m).copied()
    }

    pub fn caterpillar_index(&self) -> usize {
        self.index_of(&Matching::caterpillar(self.n, self.mode))
            .expect("the caterpillar is always enumerated")
    }

    /// Writes one JSON matching per line; line number is the state index.
    pub fn write_jsonl<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        for m in &self.states {
            writeln!(out, "{}", m.to_json())?;
        }
        Ok(())
    }
}

// Draws every unordered pair from the remaining urn at step `prefix.len() + 1`.
// Identical anonymous leaves are drawn once per distinct pair of values.
fn grow(n: usize, mode: Mode, urn: Vec<Label>, prefix: &mut Vec<Pair>, out: &mut Vec<Matching>) {
    let k = prefix.len() + 1;
    if k == n {
        out.push(Matching { n, mode, pairs: prefix.clone() });
        return;
    }
    let mut sorted = urn;
    sorted.sort();
    for a in 0..sorted.len() {
        if a > 0 && sorted[a] == sorted[a - 1] {
            continue;
        }
        for b in a + 1..sorted.len() {
            if b > a + 1 && sorted[b] == sorted[b - 1] {
                continue;
            }
            let mut rest: Vec<Label> = sorted
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != a && i != b)
                .map(|(_, &l)| l)
                .collect();
            if k <= n - 2 {
                rest.push(Label::Interior(k as u16));
            }
            prefix.push([sorted[a], sorted[b]]);
            grow(n, mode, rest, prefix, out);
            prefix.pop();
        }
    }
}
