//! The adjacent-swap kernel.
//!
//! One step picks `k` uniformly in `1..=n−2`, one slot of pair `k` and one
//! slot of pair `k + 1` uniformly, and swaps the two occupants unless that
//! puts interior label `k` into pair `k`. All probabilities are integer
//! counts over a common denominator, so every identity below can be checked
//! without rounding.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_rational::Ratio;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::treespace::{Budget, Matching, Mode, StateSpace};

/// Outcome of each of the four slot combinations at index `k`.
pub fn local_proposals(m: &Matching, k: usize) -> [Option<Matching>; 4] {
    [(0, 0), (0, 1), (1, 0), (1, 1)].map(|(u, v)| m.swap(k, u, v))
}

/// Law of one step restricted to index `k`, as `(state, weight)` over
/// denominator 4 (8 when lazy).
pub fn local_law(m: &Matching, k: usize, lazy: bool) -> (Vec<(Matching, u64)>, u64) {
    let mut law: BTreeMap<Matching, u64> = BTreeMap::new();
    for outcome in local_proposals(m, k) {
        *law.entry(outcome.unwrap_or_else(|| m.clone())).or_default() += 1;
    }
    if lazy {
        *law.entry(m.clone()).or_default() += 4;
        (law.into_iter().collect(), 8)
    } else {
        (law.into_iter().collect(), 4)
    }
}

/// One non-lazy move.
pub fn propose_step<R: Rng + ?Sized>(m: &Matching, rng: &mut R) -> Result<Matching> {
    let n = m.n();
    if n < 3 {
        return Err(Error::DegenerateSize(n));
    }
    let k = rng.random_range(1..=n - 2);
    let u = rng.random_range(0..2);
    let v = rng.random_range(0..2);
    Ok(m.swap(k, u, v).unwrap_or_else(|| m.clone()))
}

/// One lazy move: a fair coin decides whether to attempt [`propose_step`].
pub fn lazy_step<R: Rng + ?Sized>(m: &Matching, rng: &mut R) -> Result<Matching> {
    if m.n() < 3 {
        return Err(Error::DegenerateSize(m.n()));
    }
    if rng.random_bool(0.5) {
        propose_step(m, rng)
    } else {
        Ok(m.clone())
    }
}

/// Sparse row-stochastic matrix over a [`StateSpace`].
#[derive(Clone, Debug)]
pub struct Kernel {
    space: Arc<StateSpace>,
    lazy: bool,
    denominator: u64,
    rows: Vec<Vec<(usize, u64)>>,
}

impl Kernel {
    /// Accumulates every `(k, slot, slot)` triple of every state.
    pub fn build(space: Arc<StateSpace>, lazy: bool) -> Kernel {
        let n = space.n();
        let base = 4 * n.saturating_sub(2) as u64;
        let mut rows = Vec::with_capacity(space.len());
        for (x, m) in space.states().iter().enumerate() {
            let mut row: BTreeMap<usize, u64> = BTreeMap::new();
            for k in 1..n.saturating_sub(1) {
                for outcome in local_proposals(m, k) {
                    let y = match outcome {
                        Some(next) => space.index_of(&next).expect("swaps stay in the space"),
                        None => x,
                    };
                    *row.entry(y).or_default() += 1;
                }
            }
            if base == 0 {
                row.insert(x, 1);
            } else if lazy {
                *row.entry(x).or_default() += base;
            }
            rows.push(row.into_iter().collect());
        }
        let denominator = match (base, lazy) {
            (0, _) => 1,
            (b, true) => 2 * b,
            (b, false) => b,
        };
        Kernel { space, lazy, denominator, rows }
    }

    /// Enumerates the space under `budget` and builds its kernel.
    pub fn for_size(n: usize, mode: Mode, lazy: bool, budget: Budget) -> Result<Kernel> {
        let space = StateSpace::enumerate(n, mode, budget)?;
        Ok(Kernel::build(Arc::new(space), lazy))
    }

    pub fn space(&self) -> &Arc<StateSpace> {
        &self.space
    }

    pub fn lazy(&self) -> bool {
        self.lazy
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Common denominator of all entries.
    pub fn denominator(&self) -> u64 {
        self.denominator
    }

    /// Row `x` as `(column, numerator)`, sorted by column.
    pub fn row(&self, x: usize) -> &[(usize, u64)] {
        &self.rows[x]
    }

    pub fn count(&self, x: usize, y: usize) -> u64 {
        let row = &self.rows[x];
        row.binary_search_by_key(&y, |&(c, _)| c).map_or(0, |i| row[i].1)
    }

    pub fn prob(&self, x: usize, y: usize) -> f64 {
        self.count(x, y) as f64 / self.denominator as f64
    }

    pub fn exact(&self, x: usize, y: usize) -> Ratio<u64> {
        Ratio::new(self.count(x, y), self.denominator)
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.len()).all(|x| self.rows[x].iter().all(|&(y, c)| self.count(y, x) == c))
    }

    /// `μP` for a row vector `μ`.
    pub fn apply(&self, mu: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; mu.len()];
        self.apply_into(mu, &mut out);
        out
    }

    pub fn apply_into(&self, mu: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let scale = 1.0 / self.denominator as f64;
        for (x, row) in self.rows.iter().enumerate() {
            let mass = mu[x];
            if mass == 0.0 {
                continue;
            }
            for &(y, c) in row {
                out[y] += mass * c as f64 * scale;
            }
        }
    }

    /// Largest deviation of a row sum from one.
    pub fn max_row_defect(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| {
                let s: f64 = r.iter().map(|&(_, c)| c as f64).sum::<f64>() / self.denominator as f64;
                (s - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    /// JSON Lines: a header record then one `{row, col, prob}` per entry.
    pub fn write_jsonl<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Header {
            n: usize,
            mode: Mode,
            lazy: bool,
            states: usize,
            denominator: u64,
        }
        #[derive(Serialize)]
        struct Entry {
            row: usize,
            col: usize,
            prob: f64,
        }
        let header = Header {
            n: self.space.n(),
            mode: self.space.mode(),
            lazy: self.lazy,
            states: self.len(),
            denominator: self.denominator,
        };
        writeln!(out, "{}", serde_json::to_string(&header)?)?;
        for (row, entries) in self.rows.iter().enumerate() {
            for &(col, c) in entries {
                let prob = c as f64 / self.denominator as f64;
                writeln!(out, "{}", serde_json::to_string(&Entry { row, col, prob })?)?;
            }
        }
        Ok(())
    }
}

/// A probability vector over state indices, stored as integer weights
/// over a common denominator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Distribution {
    numerators: Vec<u64>,
    denominator: u64,
}

impl Distribution {
    pub fn from_weights(numerators: Vec<u64>) -> Distribution {
        let denominator = numerators.iter().sum();
        Distribution { numerators, denominator }
    }

    pub fn numerators(&self) -> &[u64] {
        &self.numerators
    }

    pub fn denominator(&self) -> u64 {
        self.denominator
    }

    pub fn len(&self) -> usize {
        self.numerators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.numerators.is_empty()
    }

    pub fn exact(&self, x: usize) -> Ratio<u64> {
        Ratio::new(self.numerators[x], self.denominator)
    }

    pub fn weights(&self) -> Vec<f64> {
        let d = self.denominator as f64;
        self.numerators.iter().map(|&w| w as f64 / d).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.weights()).expect("floats serialise")
    }
}

/// Uniform on labeled spaces; `2^{n−c−1}/(n−1)!` (Tajima) on unlabeled ones.
pub fn stationary_law(space: &StateSpace) -> Distribution {
    let n = space.n();
    let numerators = match space.mode() {
        Mode::Labeled => vec![1; space.len()],
        Mode::Unlabeled => space
            .states()
            .iter()
            .map(|m| 1u64 << (n - m.cherry_count() - 1))
            .collect(),
    };
    let d = Distribution::from_weights(numerators);
    if space.mode() == Mode::Unlabeled {
        debug_assert_eq!(d.denominator, (1..n as u64).product::<u64>());
    }
    d
}

/// `max |π(x)P(x,y) − π(y)P(y,x)|` in floating point.
pub fn verify_detailed_balance(kernel: &Kernel, law: &Distribution) -> f64 {
    let pi = law.weights();
    let mut worst = 0.0f64;
    for x in 0..kernel.len() {
        for &(y, _) in kernel.row(x) {
            let r = (pi[x] * kernel.prob(x, y) - pi[y] * kernel.prob(y, x)).abs();
            worst = worst.max(r);
        }
    }
    worst
}

/// The same residual computed exactly.
pub fn detailed_balance_exact(kernel: &Kernel, law: &Distribution) -> Ratio<u128> {
    let w = law.numerators();
    let mut worst = 0u128;
    for x in 0..kernel.len() {
        for &(y, c) in kernel.row(x) {
            let lhs = w[x] as u128 * c as u128;
            let rhs = w[y] as u128 * kernel.count(y, x) as u128;
            worst = worst.max(lhs.abs_diff(rhs));
        }
    }
    Ratio::new(worst, law.denominator() as u128 * kernel.denominator() as u128)
}

/// `‖πP − π‖₁` in floating point.
pub fn stationarity_residual(kernel: &Kernel, law: &Distribution) -> f64 {
    let pi = law.weights();
    let next = kernel.apply(&pi);
    next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum()
}

/// `‖πP − π‖₁` computed exactly.
pub fn stationarity_residual_exact(kernel: &Kernel, law: &Distribution) -> Ratio<u128> {
    let w = law.numerators();
    let den = kernel.denominator() as u128;
    let mut flow = vec![0u128; kernel.len()];
    for (x, &wx) in w.iter().enumerate() {
        for &(y, c) in kernel.row(x) {
            flow[y] += wx as u128 * c as u128;
        }
    }
    let total: u128 = flow.iter().zip(w).map(|(&f, &wy)| f.abs_diff(wy as u128 * den)).sum();
    Ratio::new(total, law.denominator() as u128 * den)
}

/// Comparison of the labeled chain with its leaf-erased image.
#[derive(Clone, Debug, Serialize)]
pub struct LumpingReport {
    pub n: usize,
    /// Largest `|P^L(x, Ω) − P^L(x′, Ω)|` over `x ∼ x′` and classes `Ω`.
    pub max_class_discrepancy: f64,
    /// Same quantity as an exact fraction, stored as `(numerator, denominator)`.
    pub max_class_discrepancy_exact: (u64, u64),
    /// Largest entrywise gap between the induced chain and the unlabeled kernel.
    pub max_induced_discrepancy: f64,
    /// `|Ω_i|` for every unlabeled state `i`.
    pub fiber_sizes: Vec<usize>,
    /// Largest gap between `|Ω_i|/|T^L|` and the Tajima weight.
    pub max_fiber_law_gap: f64,
}

impl LumpingReport {
    pub fn exact(&self) -> bool {
        self.max_class_discrepancy_exact.0 == 0 && self.max_induced_discrepancy == 0.0
    }
}

/// Checks that transition mass into every leaf-erasure class depends only
/// on the class of the current state, and that the induced chain is the
/// unlabeled kernel.
pub fn verify_lumping(n: usize, lazy: bool, budget: Budget) -> Result<LumpingReport> {
    let labeled = Kernel::for_size(n, Mode::Labeled, lazy, budget)?;
    let unlabeled = Kernel::for_size(n, Mode::Unlabeled, lazy, budget)?;
    let ls = labeled.space();
    let us = unlabeled.space();
    let class: Vec<usize> = ls
        .states()
        .iter()
        .map(|m| us.index_of(&m.erase_leaf_labels().expect("enumerated states are valid")).unwrap())
        .collect();

    let mut fiber_sizes = vec![0usize; us.len()];
    for &c in &class {
        fiber_sizes[c] += 1;
    }

    // Class-aggregated counts of the first representative of each class.
    let mut reference: Vec<Option<BTreeMap<usize, u64>>> = vec![None; us.len()];
    let mut worst_class = 0u64;
    let mut worst_induced = 0u64;
    for x in 0..labeled.len() {
        let mut agg: BTreeMap<usize, u64> = BTreeMap::new();
        for &(y, c) in labeled.row(x) {
            *agg.entry(class[y]).or_default() += c;
        }
        let cx = class[x];
        match &reference[cx] {
            None => {
                for (&cy, &c) in &agg {
                    worst_induced = worst_induced.max(c.abs_diff(unlabeled.count(cx, cy)));
                }
                for &(cy, c) in unlabeled.row(cx) {
                    worst_induced = worst_induced.max(c.abs_diff(agg.get(&cy).copied().unwrap_or(0)));
                }
                reference[cx] = Some(agg);
            }
            Some(r) => {
                for key in r.keys().chain(agg.keys()) {
                    let a = r.get(key).copied().unwrap_or(0);
                    let b = agg.get(key).copied().unwrap_or(0);
                    worst_class = worst_class.max(a.abs_diff(b));
                }
            }
        }
    }
    debug_assert_eq!(labeled.denominator(), unlabeled.denominator());

    let tajima = stationary_law(us).weights();
    let total = ls.len() as f64;
    let max_fiber_law_gap = fiber_sizes
        .iter()
        .zip(&tajima)
        .map(|(&s, &p)| (s as f64 / total - p).abs())
        .fold(0.0, f64::max);
    let den = labeled.denominator();
    let exact = Ratio::new(worst_class, den);
    Ok(LumpingReport {
        n,
        max_class_discrepancy: worst_class as f64 / den as f64,
        max_class_discrepancy_exact: (*exact.numer(), *exact.denom()),
        max_induced_discrepancy: worst_induced as f64 / den as f64,
        fiber_sizes,
        max_fiber_law_gap,
    })
}

/// Whether every state reaches every other along positive transitions.
pub fn is_irreducible(kernel: &Kernel) -> bool {
    let n = kernel.len();
    let reach = |forward: bool| {
        let mut adj = vec![Vec::new(); n];
        for x in 0..n {
            for &(y, _) in kernel.row(x) {
                if forward {
                    adj[x].push(y);
                } else {
                    adj[y].push(x);
                }
            }
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(x) = stack.pop() {
            for &y in &adj[x] {
                if !seen[y] {
                    seen[y] = true;
                    stack.push(y);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    n == 0 || (reach(true) && reach(false))
}
