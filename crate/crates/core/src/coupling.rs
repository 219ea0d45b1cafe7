//! Coupling of two lazy adjacent-swap chains.
//!
//! Both copies share the index `i` drawn at each step. Interior labels are
//! matched from the top down: every label `≥ N` already sits in the same
//! pair in both copies and must stay there, while label `N − 1` (the
//! *working* label) must never cross over between the copies. How the two
//! local moves at `(i, i + 1)` are drawn jointly depends on whether a
//! protected label occupies those pairs and whether the working label sits
//! in `i` in one copy and `i + 1` in the other.
//!
//! Every joint law is an explicit [`JointTable`] whose weights are integers
//! over [`TABLE_DENOMINATOR`]; its marginals are the lazy single-chain law
//! at index `i`.

use std::collections::BTreeMap;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::local_law;
use crate::stats::{chi_squared_test, ChiSquared};
use crate::treespace::{Label, Matching, Mode};

pub const TABLE_DENOMINATOR: u32 = 64;

/// A move inside pairs `i` and `i + 1`; slots index the canonical pair order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum LocalMove {
    Stay,
    Swap { upper: usize, lower: usize },
}

impl LocalMove {
    pub fn apply(self, m: &Matching, i: usize) -> Matching {
        match self {
            LocalMove::Stay => m.clone(),
            LocalMove::Swap { upper, lower } => m.swap(i, upper, lower).unwrap_or_else(|| m.clone()),
        }
    }
}

fn swap(upper: usize, lower: usize) -> LocalMove {
    LocalMove::Swap { upper, lower }
}

const SLOTS: [(usize, usize); 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct JointRow {
    pub x: LocalMove,
    pub y: LocalMove,
    pub weight: u32,
}

/// Which rule produced a joint table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum CouplingCase {
    /// Case 1: independent lazy moves.
    Independent,
    /// Case 2: one shared coin; protected labels move identically.
    Shared,
    /// Case 3: `θ_Y = 1 − θ_X`.
    OppositeCoins,
    /// Case 4(a).
    Table1,
    /// Case 4(b).
    Table2,
    /// Case 4(c).
    Table3,
    /// Case 4 outside the three templates: the shared table with every
    /// crossing row split into two one-sided moves.
    Split,
}

impl CouplingCase {
    pub fn number(self) -> u8 {
        match self {
            CouplingCase::Independent => 1,
            CouplingCase::Shared => 2,
            CouplingCase::OppositeCoins => 3,
            _ => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct JointTable {
    pub case: CouplingCase,
    pub rows: Vec<JointRow>,
}

impl JointTable {
    fn new(case: CouplingCase, rows: Vec<JointRow>) -> JointTable {
        let rows: Vec<JointRow> = rows.into_iter().filter(|r| r.weight > 0).collect();
        let total: u32 = rows.iter().map(|r| r.weight).sum();
        assert_eq!(total, TABLE_DENOMINATOR, "{case:?} table does not sum to one");
        JointTable { case, rows }
    }

    pub fn total_weight(&self) -> u32 {
        self.rows.iter().map(|r| r.weight).sum()
    }

    /// Row selected by `draw ∈ 0..TABLE_DENOMINATOR`.
    pub fn row_for(&self, draw: u32) -> &JointRow {
        let mut acc = 0;
        for row in &self.rows {
            acc += row.weight;
            if draw < acc {
                return row;
            }
        }
        panic!("draw {draw} outside the table");
    }
}

fn row(x: LocalMove, y: LocalMove, weight: u32) -> JointRow {
    JointRow { x, y, weight }
}

fn independent_table() -> JointTable {
    let marginal: Vec<(LocalMove, u32)> = std::iter::once((LocalMove::Stay, 32))
        .chain(SLOTS.iter().map(|&(u, v)| (swap(u, v), 8)))
        .collect();
    let mut rows = Vec::new();
    for &(x, wx) in &marginal {
        for &(y, wy) in &marginal {
            rows.push(row(x, y, wx * wy / TABLE_DENOMINATOR));
        }
    }
    JointTable::new(CouplingCase::Independent, rows)
}

fn opposite_coin_table() -> JointTable {
    let mut rows = Vec::new();
    for &(u, v) in &SLOTS {
        rows.push(row(swap(u, v), LocalMove::Stay, 8));
        rows.push(row(LocalMove::Stay, swap(u, v), 8));
    }
    JointTable::new(CouplingCase::OppositeCoins, rows)
}

/// Maps each slot of `x` to a slot of `y` so that protected labels map to
/// themselves and the rest keep their canonical order.
fn align(x: [Label; 2], y: [Label; 2], protected: &impl Fn(Label) -> bool) -> [usize; 2] {
    let mut sigma = [usize::MAX; 2];
    let mut taken = [false; 2];
    for s in 0..2 {
        if protected(x[s]) {
            if let Some(t) = (0..2).find(|&t| !taken[t] && y[t] == x[s]) {
                sigma[s] = t;
                taken[t] = true;
            }
        }
    }
    for slot in sigma.iter_mut().filter(|s| **s == usize::MAX) {
        let t = (0..2).find(|&t| !taken[t]).expect("two slots per pair");
        *slot = t;
        taken[t] = true;
    }
    sigma
}

fn shared_rows(x: &Matching, y: &Matching, i: usize, protected: &impl Fn(Label) -> bool) -> Vec<JointRow> {
    let up = align(x.pair(i), y.pair(i), protected);
    let down = align(x.pair(i + 1), y.pair(i + 1), protected);
    let mut rows = vec![row(LocalMove::Stay, LocalMove::Stay, 32)];
    for &(u, v) in &SLOTS {
        rows.push(row(swap(u, v), swap(up[u], down[v]), 8));
    }
    rows
}

/// Local view of one step used to decide which rows are admissible.
struct Constraints<'a> {
    i: usize,
    x: &'a Matching,
    y: &'a Matching,
    /// Labels that must stay jointly matched.
    anchored: Vec<Label>,
    /// Labels split across `i` and `i + 1` that must not cross.
    straddling: Vec<Label>,
}

impl Constraints<'_> {
    fn admits(&self, xm: LocalMove, ym: LocalMove) -> bool {
        let nx = xm.apply(self.x, self.i);
        let ny = ym.apply(self.y, self.i);
        self.anchored.iter().all(|&l| nx.position(l) == ny.position(l))
            && self.straddling.iter().all(|&l| {
                let before = self.x.position(l).cmp(&self.y.position(l));
                let after = nx.position(l).cmp(&ny.position(l));
                after == before || after == std::cmp::Ordering::Equal
            })
    }
}

/// The shared table with each inadmissible row replaced by its two
/// one-sided halves, paid for out of the joint idle mass.
fn split_table(cons: &Constraints<'_>, protected: &impl Fn(Label) -> bool) -> Result<JointTable> {
    let mut rows = Vec::new();
    let mut idle = 0u32;
    for r in shared_rows(cons.x, cons.y, cons.i, protected) {
        if r.x == LocalMove::Stay && r.y == LocalMove::Stay {
            idle += r.weight;
        } else if cons.admits(r.x, r.y) {
            rows.push(r);
        } else {
            if !cons.admits(r.x, LocalMove::Stay) || !cons.admits(LocalMove::Stay, r.y) {
                return Err(Error::InvalidState(format!(
                    "no admissible split at i = {} for {} / {}",
                    cons.i, cons.x, cons.y
                )));
            }
            rows.push(row(r.x, LocalMove::Stay, r.weight));
            rows.push(row(LocalMove::Stay, r.y, r.weight));
            idle -= r.weight;
        }
    }
    rows.insert(0, row(LocalMove::Stay, LocalMove::Stay, idle));
    let case = if rows.iter().any(|r| (r.x == LocalMove::Stay) != (r.y == LocalMove::Stay)) {
        CouplingCase::Split
    } else {
        CouplingCase::Shared
    };
    Ok(JointTable::new(case, rows))
}

fn slot_of(pair: [Label; 2], label: Label) -> usize {
    pair.iter().position(|&l| l == label).expect("label present in pair")
}

/// Tables 1–3, written for the copy `p` holding the working label `c` in
/// pair `i + 1` and the copy `q` holding it in pair `i`. Returns rows as
/// `(move of p, move of q, weight)`, or `None` if no template fits.
fn template_table(
    p: &Matching,
    q: &Matching,
    i: usize,
    c: Label,
    protected: &impl Fn(Label) -> bool,
) -> Option<(CouplingCase, Vec<JointRow>)> {
    let (p_up, p_down, q_up, q_down) = (p.pair(i), p.pair(i + 1), q.pair(i), q.pair(i + 1));
    let qc = slot_of(q_up, c);
    let q_other = q_up[1 - qc];
    let pc = slot_of(p_down, c);
    let p_other = p_down[1 - pc];
    let a = (protected(q_other) && p_up.contains(&q_other)).then_some(q_other);
    let d = (protected(p_other) && q_down.contains(&p_other)).then_some(p_other);
    let label_i = Label::Interior(i as u16);
    let stay = LocalMove::Stay;
    match (a, d) {
        (Some(a), None) => {
            // X: (a,b)^i,(c,d)^{i+1}   Y: (a,c)^i,(f,g)^{i+1}
            let (sa, ta) = (slot_of(p_up, a), slot_of(q_up, a));
            let (sb, sc, sd, tc) = (1 - sa, pc, 1 - pc, 1 - ta);
            let rows = vec![
                row(stay, stay, 24),
                row(stay, swap(tc, 0), 4),
                row(stay, swap(tc, 1), 4),
                row(swap(sb, sc), stay, 8),
                row(swap(sb, sd), swap(tc, 0), 4),
                row(swap(sb, sd), swap(tc, 1), 4),
                row(swap(sa, sc), swap(ta, 0), 4),
                row(swap(sa, sc), swap(ta, 1), 4),
                row(swap(sa, sd), swap(ta, 0), 4),
                row(swap(sa, sd), swap(ta, 1), 4),
            ];
            Some((CouplingCase::Table1, rows))
        }
        (Some(a), Some(d)) if d == label_i => {
            // X: (a,b)^i,(c,i)^{i+1}   Y: (a,c)^i,(f,i)^{i+1}
            let (sa, ta) = (slot_of(p_up, a), slot_of(q_up, a));
            let (sb, tc) = (1 - sa, 1 - ta);
            let tf = 1 - slot_of(q_down, label_i);
            let rows = vec![
                row(stay, stay, 40),
                row(stay, swap(tc, tf), 8),
                row(swap(sb, pc), stay, 8),
                row(swap(sa, pc), swap(ta, tf), 8),
            ];
            Some((CouplingCase::Table2, rows))
        }
        (None, Some(d)) if d == label_i => {
            // Printed with the roles reversed: X = q: (a,c)^i,(b,i)^{i+1};
            // Y = p: (d,e)^i,(c,i)^{i+1}.
            let (ta, tc) = (1 - qc, qc);
            let tb = 1 - slot_of(q_down, label_i);
            let rows = vec![
                row(stay, stay, 40),
                row(swap(1, pc), stay, 8),
                row(stay, swap(tc, tb), 8),
                row(swap(0, pc), swap(ta, tb), 8),
            ];
            Some((CouplingCase::Table3, rows))
        }
        _ => None,
    }
}

/// Stage of a coupled trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Phase {
    /// Some interior label is still unmatched.
    Interior,
    /// Labeled mode: interiors matched, some leaf is not.
    Leaves,
    Coupled,
}

/// Two copies plus the matching bookkeeping.
///
/// `frontier` is `N`: every interior label `≥ N` is jointly matched and
/// `N − 1` is not (`N = 1` once all interiors agree). `matched_pairs` is
/// `M`, the pair ranks holding a protected label; `almost` lists the
/// indices `i` at which a tracked label sits in `i` in one copy and `i + 1`
/// in the other (at most one entry during the interior phase).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoupledState {
    x: Matching,
    y: Matching,
    frontier: usize,
    matched_pairs: Vec<usize>,
    almost: Vec<usize>,
}

struct Bookkeeping {
    frontier: usize,
    matched_pairs: Vec<usize>,
    almost: Vec<usize>,
}

fn bookkeeping(x: &Matching, y: &Matching) -> Bookkeeping {
    let (px, py) = (x.interior_positions(), y.interior_positions());
    let frontier = (0..px.len()).rev().find(|&j| px[j] != py[j]).map_or(1, |j| j + 2);
    let mut matched_pairs = Vec::new();
    let mut almost = Vec::new();
    if frontier >= 2 {
        matched_pairs.extend_from_slice(&px[frontier - 1..]);
        let (a, b) = (px[frontier - 2], py[frontier - 2]);
        if a.abs_diff(b) == 1 {
            almost.push(a.min(b));
        }
    } else if x.mode() == Mode::Labeled {
        for (k, (pxk, pyk)) in x.pairs().iter().zip(y.pairs()).enumerate() {
            if pxk.iter().any(|l| pyk.contains(l)) {
                matched_pairs.push(k + 1);
            }
        }
        for label in (1..=x.n()).map(|id| Label::NamedLeaf(id as u16)) {
            let (a, b) = (x.position(label).unwrap(), y.position(label).unwrap());
            if a.abs_diff(b) == 1 {
                almost.push(a.min(b));
            }
        }
    }
    matched_pairs.sort_unstable();
    matched_pairs.dedup();
    almost.sort_unstable();
    almost.dedup();
    Bookkeeping { frontier, matched_pairs, almost }
}

/// Randomness consumed by one coupled step; replaying it reproduces the step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct StepChoice {
    /// Index `i ∈ 1..=n−2`.
    pub index: usize,
    /// Uniform draw in `0..TABLE_DENOMINATOR` selecting a table row.
    pub draw: u32,
}

impl CoupledState {
    pub fn new(x: Matching, y: Matching) -> Result<CoupledState> {
        if x.n() != y.n() || x.mode() != y.mode() {
            return Err(Error::InvalidParam("copies must share n and mode".into()));
        }
        if !x.validate() || !y.validate() {
            return Err(Error::InvalidInput(format!("{x} / {y}")));
        }
        if x.n() < 3 {
            return Err(Error::DegenerateSize(x.n()));
        }
        let b = bookkeeping(&x, &y);
        Ok(CoupledState { x, y, frontier: b.frontier, matched_pairs: b.matched_pairs, almost: b.almost })
    }

    /// Stores the given bookkeeping verbatim; [`CoupledState::step_with`]
    /// rejects it if it disagrees with the copies.
    pub fn from_parts(x: Matching, y: Matching, frontier: usize, matched_pairs: Vec<usize>, almost: Vec<usize>) -> Self {
        CoupledState { x, y, frontier, matched_pairs, almost }
    }

    pub fn x(&self) -> &Matching {
        &self.x
    }

    pub fn y(&self) -> &Matching {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.x.n()
    }

    /// `N`.
    pub fn frontier(&self) -> usize {
        self.frontier
    }

    /// `M`.
    pub fn matched_pairs(&self) -> &[usize] {
        &self.matched_pairs
    }

    /// `AM` in the interior phase (0 when no index qualifies).
    pub fn almost_matched(&self) -> usize {
        self.almost.first().copied().unwrap_or(0)
    }

    /// Every almost-matched index (the leaf phase may have several).
    pub fn almost_matched_all(&self) -> &[usize] {
        &self.almost
    }

    pub fn phase(&self) -> Phase {
        if self.frontier >= 2 {
            Phase::Interior
        } else if self.x == self.y {
            Phase::Coupled
        } else {
            Phase::Leaves
        }
    }

    pub fn is_coupled(&self) -> bool {
        self.x == self.y
    }

    /// Working label `N − 1`, if any.
    pub fn working_label(&self) -> Option<Label> {
        (self.frontier >= 2).then(|| Label::Interior((self.frontier - 1) as u16))
    }

    fn check_bookkeeping(&self) -> Result<()> {
        let b = bookkeeping(&self.x, &self.y);
        if b.frontier != self.frontier || b.matched_pairs != self.matched_pairs || b.almost != self.almost {
            return Err(Error::InvalidState(format!(
                "stored N={}, M={:?}, AM={:?}; recomputed N={}, M={:?}, AM={:?}",
                self.frontier, self.matched_pairs, self.almost, b.frontier, b.matched_pairs, b.almost
            )));
        }
        Ok(())
    }

    /// Labels whose joint position must be preserved.
    fn anchored(&self) -> Vec<Label> {
        match self.phase() {
            Phase::Interior => (self.frontier..=self.n() - 2).map(|a| Label::Interior(a as u16)).collect(),
            _ => {
                let mut out: Vec<Label> = (1..=self.n() - 2).map(|a| Label::Interior(a as u16)).collect();
                if self.x.mode() == Mode::Labeled {
                    out.extend(
                        (1..=self.n())
                            .map(|id| Label::NamedLeaf(id as u16))
                            .filter(|&l| self.x.position(l) == self.y.position(l)),
                    );
                }
                out
            }
        }
    }

    /// Labels sitting in `i` in one copy and `i + 1` in the other.
    fn straddling(&self, i: usize) -> Vec<Label> {
        let tracked: Vec<Label> = match self.phase() {
            Phase::Interior => self.working_label().into_iter().collect(),
            Phase::Leaves => (1..=self.n()).map(|id| Label::NamedLeaf(id as u16)).collect(),
            Phase::Coupled => Vec::new(),
        };
        tracked
            .into_iter()
            .filter(|&l| {
                let (a, b) = (self.x.position(l).unwrap(), self.y.position(l).unwrap());
                a.min(b) == i && a.abs_diff(b) == 1
            })
            .collect()
    }

    /// Joint law of the local moves at index `i`.
    pub fn joint_table(&self, i: usize) -> Result<JointTable> {
        if i < 1 || i > self.n() - 2 {
            return Err(Error::IndexOutOfRange(format!("index {i} outside 1..={}", self.n() - 2)));
        }
        let anchored = self.anchored();
        let protected = |l: Label| anchored.contains(&l);
        let in_m = self.matched_pairs.contains(&i) || self.matched_pairs.contains(&(i + 1));
        let at_am = self.almost.contains(&i);
        let cons = Constraints {
            i,
            x: &self.x,
            y: &self.y,
            anchored: anchored.clone(),
            straddling: self.straddling(i),
        };
        match (in_m, at_am) {
            (false, false) => Ok(independent_table()),
            (true, false) => split_table(&cons, &protected),
            (false, true) => Ok(opposite_coin_table()),
            (true, true) => {
                if let Some(c) = self.working_label() {
                    let x_holds_below = self.x.position(c) == Some(i + 1);
                    let (p, q) = if x_holds_below { (&self.x, &self.y) } else { (&self.y, &self.x) };
                    if let Some((case, rows)) = template_table(p, q, i, c, &protected) {
                        let rows = rows
                            .into_iter()
                            .map(|r| if x_holds_below { r } else { row(r.y, r.x, r.weight) })
                            .collect();
                        return Ok(JointTable::new(case, rows));
                    }
                }
                split_table(&cons, &protected)
            }
        }
    }

    /// Applies a recorded choice.
    pub fn step_with(&self, choice: StepChoice) -> Result<CoupledState> {
        self.check_bookkeeping()?;
        if self.is_coupled() {
            // Identical copies take identical lazy moves.
            let table = JointTable::new(CouplingCase::Shared, shared_rows(&self.x, &self.y, choice.index, &|_| true));
            let r = table.row_for(choice.draw);
            let x = r.x.apply(&self.x, choice.index);
            return CoupledState::new(x.clone(), x);
        }
        let table = self.joint_table(choice.index)?;
        let r = table.row_for(choice.draw);
        CoupledState::new(r.x.apply(&self.x, choice.index), r.y.apply(&self.y, choice.index))
    }

    pub fn draw_choice<R: Rng + ?Sized>(&self, rng: &mut R) -> StepChoice {
        StepChoice {
            index: rng.random_range(1..=self.n() - 2),
            draw: rng.random_range(0..TABLE_DENOMINATOR),
        }
    }

    pub fn coupled_step<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<CoupledState> {
        let choice = self.draw_choice(rng);
        self.step_with(choice)
    }

    /// Property 1 and 2 violations between `self` and its successor.
    pub fn property_violations(&self, next: &CoupledState) -> usize {
        let mut count = 0;
        for l in self.anchored() {
            if next.x.position(l) != next.y.position(l) {
                count += 1;
            }
        }
        let tracked: Vec<Label> = match self.phase() {
            Phase::Interior => self.working_label().into_iter().collect(),
            Phase::Leaves => (1..=self.n()).map(|id| Label::NamedLeaf(id as u16)).collect(),
            Phase::Coupled => Vec::new(),
        };
        for l in tracked {
            let before = self.x.position(l).cmp(&self.y.position(l));
            let after = next.x.position(l).cmp(&next.y.position(l));
            if after != before && after != std::cmp::Ordering::Equal {
                count += 1;
            }
        }
        count
    }
}

/// Leaf-phase step for labeled copies whose interior labels all agree.
pub fn labeled_coupling_extension<R: Rng + ?Sized>(s: &CoupledState, rng: &mut R) -> Result<CoupledState> {
    if s.x.mode() != Mode::Labeled {
        return Err(Error::InvalidParam("leaf phase needs labeled copies".into()));
    }
    if let Some(Label::Interior(c)) = s.working_label() {
        return Err(Error::PhaseError(c as usize));
    }
    s.coupled_step(rng)
}

/// Result of one coupled trajectory.
#[derive(Clone, Debug, Serialize)]
pub struct CouplingRun {
    /// First time the copies coincide; `None` on timeout.
    pub tau: Option<u64>,
    /// `T_a` for `a = 1..=n−2` (entry `a − 1`): time spent with `a` as the
    /// working label. Labels never worked on record 0.
    pub label_times: Vec<u64>,
    /// Time at which every interior label agreed.
    pub interior_time: Option<u64>,
    pub property_violations: u64,
    pub steps: u64,
}

impl CouplingRun {
    pub fn label_time(&self, a: usize) -> u64 {
        self.label_times[a - 1]
    }
}

/// Steps the coupling until the copies agree or `t_max` steps have passed.
pub fn run_coupling<R: Rng + ?Sized>(x0: &Matching, y0: &Matching, rng: &mut R, t_max: u64) -> Result<CouplingRun> {
    let n = x0.n();
    let mut state = CoupledState::new(x0.clone(), y0.clone())?;
    let mut label_times = vec![0u64; n - 2];
    let mut since = 0u64;
    let mut violations = 0u64;
    let mut interior_time = (state.frontier == 1).then_some(0);
    let mut t = 0u64;
    while !state.is_coupled() && t < t_max {
        let next = state.coupled_step(rng)?;
        t += 1;
        violations += state.property_violations(&next) as u64;
        if next.frontier < state.frontier {
            label_times[state.frontier - 2] = t - since;
            since = t;
            if next.frontier == 1 {
                interior_time = Some(t);
            }
        }
        state = next;
    }
    if !state.is_coupled() && state.frontier >= 2 {
        label_times[state.frontier - 2] = t - since;
    }
    Ok(CouplingRun {
        tau: state.is_coupled().then_some(t),
        label_times,
        interior_time,
        property_violations: violations,
        steps: t,
    })
}

/// Per-chain goodness of fit of one joint table against the lazy
/// single-chain law at the same index.
#[derive(Clone, Debug, Serialize)]
pub struct MarginalCheck {
    pub case: CouplingCase,
    pub x: ChiSquared,
    pub y: ChiSquared,
    /// Samples in which both chains left their state.
    pub both_moved: u64,
    /// Samples in which a protected label moved in one copy but not the other.
    pub protected_mismatches: u64,
}

/// Simulates the joint move at index `i` `samples` times.
pub fn marginal_check<R: Rng + ?Sized>(
    state: &CoupledState,
    i: usize,
    samples: u64,
    rng: &mut R,
) -> Result<MarginalCheck> {
    let table = state.joint_table(i)?;
    let mut cx: BTreeMap<Matching, u64> = BTreeMap::new();
    let mut cy: BTreeMap<Matching, u64> = BTreeMap::new();
    let mut both_moved = 0;
    let mut protected_mismatches = 0;
    let anchored = state.anchored();
    for _ in 0..samples {
        let r = table.row_for(rng.random_range(0..TABLE_DENOMINATOR));
        let nx = r.x.apply(&state.x, i);
        let ny = r.y.apply(&state.y, i);
        if nx != state.x && ny != state.y {
            both_moved += 1;
        }
        if anchored.iter().any(|&l| nx.position(l) != ny.position(l)) {
            protected_mismatches += 1;
        }
        *cx.entry(nx).or_default() += 1;
        *cy.entry(ny).or_default() += 1;
    }
    Ok(MarginalCheck {
        case: table.case,
        x: fit(&state.x, i, &cx)?,
        y: fit(&state.y, i, &cy)?,
        both_moved,
        protected_mismatches,
    })
}

fn fit(m: &Matching, i: usize, counts: &BTreeMap<Matching, u64>) -> Result<ChiSquared> {
    let (law, den) = local_law(m, i, true);
    if counts.keys().any(|k| !law.iter().any(|(s, _)| s == k)) {
        return Err(Error::InvalidState("coupled step left the single-chain support".into()));
    }
    let observed: Vec<u64> = law.iter().map(|(s, _)| counts.get(s).copied().unwrap_or(0)).collect();
    let expected: Vec<f64> = law.iter().map(|&(_, w)| w as f64 / den as f64).collect();
    Ok(chi_squared_test(&observed, &expected))
}

pub type WeightedStates = Vec<(Matching, u64)>;

/// Exact marginals of a joint table: `(law of X', law of Y')` with weights
/// over [`TABLE_DENOMINATOR`].
pub fn table_marginals(state: &CoupledState, i: usize) -> Result<(WeightedStates, WeightedStates)> {
    let table = state.joint_table(i)?;
    let mut lx: BTreeMap<Matching, u64> = BTreeMap::new();
    let mut ly: BTreeMap<Matching, u64> = BTreeMap::new();
    for r in &table.rows {
        *lx.entry(r.x.apply(&state.x, i)).or_default() += r.weight as u64;
        *ly.entry(r.y.apply(&state.y, i)).or_default() += r.weight as u64;
    }
    Ok((lx.into_iter().collect(), ly.into_iter().collect()))
}

/// `E[T_m] = m(m − 1)/(2p)` for the reflected walk on `{1, …, m}` started
/// at `m` and absorbed at 1.
pub fn line_walk_expectation(m: u64, p: f64) -> Result<f64> {
    if !(p > 0.0 && p <= 0.5) {
        return Err(Error::InvalidParam(format!("p = {p} outside (0, 1/2]")));
    }
    if m < 1 {
        return Err(Error::InvalidParam("m must be at least 1".into()));
    }
    Ok((m * (m - 1)) as f64 / (2.0 * p))
}

/// One hitting time of the same walk.
pub fn simulate_line_walk<R: Rng + ?Sized>(m: u64, p: f64, rng: &mut R) -> u64 {
    let mut z = m;
    let mut t = 0;
    while z != 1 {
        t += 1;
        let u: f64 = rng.random();
        if u < p {
            z -= 1;
        } else if u < 2.0 * p && z != m {
            z += 1;
        }
    }
    t
}

/// Solution `a_x = x(2m − x + 1) − 2m` of the `p = 1/2` hitting-time recursion.
pub fn line_walk_solution(m: i64, x: i64) -> i64 {
    x * (2 * m - x + 1) - 2 * m
}
