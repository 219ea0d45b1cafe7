//! File formats shared by the command-line tool and downstream plotting.

use std::io::Write;

use crate::coupling::CouplingRun;
use crate::error::Result;
use crate::sampler::UrnTrace;
use crate::treespace::Mode;

/// Writes the `#`-prefixed provenance lines that open every output file.
pub fn write_provenance<W: Write>(out: &mut W, seed: Option<u64>, flags: &str) -> Result<()> {
    writeln!(out, "# rts {}", env!("CARGO_PKG_VERSION"))?;
    match seed {
        Some(seed) => writeln!(out, "# seed={seed}")?,
        None => writeln!(out, "# seed=none")?,
    }
    writeln!(out, "# flags={flags}")?;
    Ok(())
}

/// Drops leading `#` lines.
pub fn strip_comments(text: &str) -> String {
    text.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n")
}

pub fn sample_csv_header<W: Write>(out: &mut W, n: usize) -> Result<()> {
    write!(out, "seed_offset,phi")?;
    for k in 1..=n.saturating_sub(2) {
        write!(out, ",R_{k}")?;
    }
    writeln!(out)?;
    Ok(())
}

pub fn sample_csv_row<W: Write>(out: &mut W, seed_offset: u64, trace: &UrnTrace) -> Result<()> {
    write!(out, "{seed_offset},{}", trace.red_sum())?;
    for r in &trace.red_counts[..trace.n - 2] {
        write!(out, ",{r}")?;
    }
    writeln!(out)?;
    Ok(())
}

/// Columns `n,mode,seed,replicate,tau,T_{n−3},…,T_1`. Label `n − 2` is
/// matched from the start and has no column.
pub fn coupling_csv_header<W: Write>(out: &mut W, n: usize) -> Result<()> {
    write!(out, "n,mode,seed,replicate,tau")?;
    for a in (1..n.saturating_sub(2)).rev() {
        write!(out, ",T_{a}")?;
    }
    writeln!(out)?;
    Ok(())
}

pub fn coupling_csv_row<W: Write>(
    out: &mut W,
    n: usize,
    mode: Mode,
    seed: u64,
    replicate: u64,
    run: &CouplingRun,
) -> Result<()> {
    let tau = run.tau.map_or(-1, |t| t as i64);
    write!(out, "{n},{mode},{seed},{replicate},{tau}")?;
    for a in (1..n.saturating_sub(2)).rev() {
        write!(out, ",{}", run.label_time(a))?;
    }
    writeln!(out)?;
    Ok(())
}
