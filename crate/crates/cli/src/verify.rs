//! The `verify` subcommand.

use std::io::Write;
use std::process::ExitCode;
use std::sync::Arc;

use rts_core::analysis::{dirichlet_form_exact, moments_exact, phi_values, spectral_report};
use rts_core::coupling::{table_marginals, CoupledState, TABLE_DENOMINATOR};
use rts_core::kernel::{
    detailed_balance_exact, is_irreducible, local_law, stationarity_residual_exact, stationary_law, verify_lumping,
    Kernel,
};
use rts_core::sampler::phi_moments;
use rts_core::treespace::cardinality;
use rts_core::{Budget, Error, Mode, StateSpace};
use num_rational::Ratio;
use serde::Serialize;

use crate::{open_output, Cli};

#[derive(Serialize)]
struct CheckResult {
    n: usize,
    mode: Mode,
    check: &'static str,
    passed: bool,
    detail: String,
}

/// Largest number of (pair, index) combinations searched for the coupling check.
const COUPLING_SEARCH_LIMIT: usize = 2_000_000;

pub fn run(cli: &Cli) -> Result<ExitCode, Error> {
    let budget = cli.opts.budget(true);
    let sizes: Vec<(usize, Mode)> = match cli.opts.n {
        Some(n) => {
            if n < 3 {
                return Err(Error::InvalidParam(format!("verify needs n ≥ 3, got {n}")));
            }
            budget.check(n, cli.opts.mode)?;
            vec![(n, cli.opts.mode)]
        }
        None => (3..=8).map(|n| (n, Mode::Unlabeled)).chain((3..=5).map(|n| (n, Mode::Labeled))).collect(),
    };
    let mut results = Vec::new();
    for (n, mode) in sizes {
        suite(n, mode, budget, &mut results)?;
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    for r in &results {
        println!("{}  {} n={} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.mode, r.n, r.check, r.detail);
    }
    println!("{} checks, {failed} failed", results.len());
    if cli.opts.out.is_some() {
        let mut out = open_output(cli, "json")?;
        serde_json::to_writer_pretty(&mut out.writer, &results)?;
        writeln!(out.writer)?;
        out.writer.flush()?;
    }
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn suite(n: usize, mode: Mode, budget: Budget, results: &mut Vec<CheckResult>) -> Result<(), Error> {
    let mut record = |check, passed, detail: String| results.push(CheckResult { n, mode, check, passed, detail });

    let space = Arc::new(StateSpace::enumerate(n, mode, budget)?);
    let want = cardinality(n, mode);
    record("cardinality", space.len() as u128 == want, format!("{} states, closed form {want}", space.len()));

    let valid = space.states().iter().enumerate().all(|(i, m)| m.validate() && space.index_of(m) == Some(i));
    record("states valid", valid, "validate and index round trip".into());

    for lazy in [false, true] {
        let kernel = Kernel::build(space.clone(), lazy);
        let stochastic = (0..kernel.len()).all(|x| {
            kernel.row(x).iter().map(|&(_, c)| c).sum::<u64>() == kernel.denominator() && kernel.count(x, x) > 0
        });
        record("stochastic", stochastic, format!("lazy={lazy}, rows sum to {}", kernel.denominator()));
        let law = stationary_law(&space);
        let zero = Ratio::from_integer(0u128);
        let stat = stationarity_residual_exact(&kernel, &law);
        record("stationary", stat == zero, format!("lazy={lazy}, exact ‖πP−π‖₁ = {stat}"));
        let db = detailed_balance_exact(&kernel, &law);
        record("detailed balance", db == zero, format!("lazy={lazy}, exact residual {db}"));
    }

    let kernel = Kernel::build(space.clone(), false);
    let law = stationary_law(&space);
    record("irreducible", is_irreducible(&kernel), "strongly connected".into());

    if mode == Mode::Labeled {
        let r = verify_lumping(n, false, budget)?;
        record("lumping", r.exact(), format!("class discrepancy {}/{}", r.max_class_discrepancy_exact.0, r.max_class_discrepancy_exact.1));
    }

    let phi = phi_values(&space);
    let (mean, var) = moments_exact(&law, &phi);
    let (mean_cf, var_cf) = phi_moments(n)?;
    let wide = |r: Ratio<i64>| Ratio::new(*r.numer() as i128, *r.denom() as i128);
    let moments_ok = mean == wide(mean_cf) && var == wide(var_cf);
    record("phi moments", moments_ok, format!("mean {mean}, variance {var}"));

    let energy = dirichlet_form_exact(&kernel, &law, &phi);
    record("dirichlet", energy <= Ratio::new(1, 2), format!("E(phi) = {energy}"));

    let tau = spectral_report(&kernel)?.relaxation;
    let nf = n as f64;
    let bound = 2.0 / 90.0 * nf * (nf + 1.0) * (nf - 3.0);
    record("relaxation", tau >= bound, format!("tau = {tau:.4} ≥ {bound:.4}"));

    let work = space.len() * space.len() * (n - 2);
    if work <= COUPLING_SEARCH_LIMIT {
        let (ok, detail) = coupling_tables(&space);
        record("coupling tables", ok, detail);
    }
    Ok(())
}

fn coupling_tables(space: &StateSpace) -> (bool, String) {
    let n = space.n();
    let mut tables = 0usize;
    for x in space.states() {
        for y in space.states() {
            if x == y {
                continue;
            }
            let s = match CoupledState::new(x.clone(), y.clone()) {
                Ok(s) => s,
                Err(e) => return (false, e.to_string()),
            };
            for i in 1..=n - 2 {
                let table = match s.joint_table(i) {
                    Ok(t) => t,
                    Err(e) => return (false, e.to_string()),
                };
                tables += 1;
                let (mx, my) = match table_marginals(&s, i) {
                    Ok(m) => m,
                    Err(e) => return (false, e.to_string()),
                };
                for (m, marginal) in [(x, mx), (y, my)] {
                    let (law, den) = local_law(m, i, true);
                    let scale = TABLE_DENOMINATOR as u64 / den;
                    if marginal.len() != law.len()
                        || marginal.iter().zip(&law).any(|(a, b)| a.0 != b.0 || a.1 != b.1 * scale)
                    {
                        return (false, format!("{:?} marginal differs at i={i} for {x} / {y}", table.case));
                    }
                }
                for r in &table.rows {
                    let next = CoupledState::new(r.x.apply(x, i), r.y.apply(y, i));
                    match next {
                        Ok(next) if s.property_violations(&next) == 0 => {}
                        _ => return (false, format!("{:?} row {r:?} breaks a property at i={i}", table.case)),
                    }
                }
            }
        }
    }
    (true, format!("{tables} tables exact and admissible"))
}
