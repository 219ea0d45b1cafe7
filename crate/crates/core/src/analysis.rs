//! Exact mixing diagnostics: total-variation curves, spectra, Dirichlet forms.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_rational::Ratio;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::{stationary_law, verify_detailed_balance, Distribution, Kernel};
use crate::treespace::{Budget, Mode, StateSpace};

/// Curves stop once the distance falls below this.
pub const TV_FLOOR: f64 = 1e-6;
/// Threshold defining the mixing time.
pub const MIXING_THRESHOLD: f64 = 0.25;
/// Largest state count handled by the dense eigensolver.
pub const DENSE_SPECTRUM_LIMIT: usize = 20_000;
/// Largest detailed-balance residual accepted as reversible.
pub const REVERSIBILITY_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Start {
    /// Maximum over all point starts.
    Worst,
    Caterpillar,
    Index(usize),
}

impl fmt::Display for Start {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Start::Worst => f.write_str("worst"),
            Start::Caterpillar => f.write_str("caterpillar"),
            Start::Index(k) => write!(f, "index:{k}"),
        }
    }
}

impl FromStr for Start {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "worst" => Ok(Start::Worst),
            "caterpillar" => Ok(Start::Caterpillar),
            _ => s
                .strip_prefix("index:")
                .and_then(|k| k.parse().ok())
                .map(Start::Index)
                .ok_or_else(|| Error::InvalidParam(format!("unknown start `{s}`"))),
        }
    }
}

/// `d(t) = ‖P^t(x₀,·) − π‖_TV` for `t = 0, 1, …`.
#[derive(Clone, Debug)]
pub struct TvCurve {
    pub n: usize,
    pub mode: Mode,
    pub lazy: bool,
    pub start: Start,
    pub values: Vec<(usize, f64)>,
}

impl TvCurve {
    /// First `t` with `d(t) < 1/4`.
    pub fn mixing_time(&self) -> Option<usize> {
        self.values.iter().find(|&&(_, d)| d < MIXING_THRESHOLD).map(|&(t, _)| t)
    }

    /// Rows of the `n,mode,lazy,start,t,tv` schema.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W, with_header: bool) -> Result<()> {
        if with_header {
            writeln!(out, "n,mode,lazy,start,t,tv")?;
        }
        for &(t, d) in &self.values {
            writeln!(out, "{},{},{},{},{},{:.17e}", self.n, self.mode, self.lazy, self.start, t, d)?;
        }
        Ok(())
    }
}

/// `½ Σ |μ − π|`, with compensated summation.
pub fn total_variation(mu: &[f64], pi: &[f64]) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for (a, b) in mu.iter().zip(pi) {
        let x = (a - b).abs();
        let t = sum + x;
        carry += if sum.abs() >= x { (sum - t) + x } else { (x - t) + sum };
        sum = t;
    }
    0.5 * (sum + carry)
}

/// Iterates `μ ← μP` from a point mass (or from every point mass for
/// [`Start::Worst`]) until `t_max` or until the distance drops below
/// [`TV_FLOOR`].
pub fn tv_curve(kernel: &Kernel, law: &Distribution, start: Start, t_max: usize) -> Result<TvCurve> {
    let space = kernel.space();
    let pi = law.weights();
    let starts: Vec<usize> = match start {
        Start::Worst => (0..kernel.len()).collect(),
        Start::Caterpillar => vec![space.caterpillar_index()],
        Start::Index(k) if k < kernel.len() => vec![k],
        Start::Index(k) => {
            return Err(Error::IndexOutOfRange(format!("start {k} ≥ {} states", kernel.len())))
        }
    };
    let mut live: Vec<Vec<f64>> = starts
        .iter()
        .map(|&x| {
            let mut mu = vec![0.0; kernel.len()];
            mu[x] = 1.0;
            mu
        })
        .collect();
    let mut scratch = vec![0.0; kernel.len()];
    let mut values = Vec::new();
    for t in 0..=t_max {
        if t > 0 {
            for mu in live.iter_mut() {
                kernel.apply_into(mu, &mut scratch);
                std::mem::swap(mu, &mut scratch);
            }
        }
        let dists: Vec<f64> = live.iter().map(|mu| total_variation(mu, &pi)).collect();
        let worst = dists.iter().copied().fold(0.0, f64::max);
        values.push((t, worst));
        if worst < TV_FLOOR {
            break;
        }
        // A start below the floor can no longer attain the maximum.
        let mut keep = dists.iter().map(|&d| d >= TV_FLOOR);
        live.retain(|_| keep.next().unwrap());
    }
    Ok(TvCurve { n: space.n(), mode: space.mode(), lazy: kernel.lazy(), start, values })
}

/// Spectrum of a reversible kernel.
#[derive(Clone, Debug, Serialize)]
pub struct SpectralReport {
    pub n: usize,
    pub mode: Mode,
    pub lazy: bool,
    pub states: usize,
    /// Sorted descending. Only the extremes when the space is too large for
    /// a dense solve.
    pub eigenvalues: Vec<f64>,
    pub lambda2: f64,
    pub lambda_min: f64,
    /// `1 − λ₂`.
    pub spectral_gap: f64,
    /// `γ = 1 − max_{i≥2} |λ_i|`.
    pub gap: f64,
    /// `τ = 1/γ`.
    pub relaxation: f64,
}

impl SpectralReport {
    fn from_extremes(kernel: &Kernel, eigenvalues: Vec<f64>, lambda2: f64, lambda_min: f64) -> Self {
        let space = kernel.space();
        let gap = 1.0 - lambda2.abs().max(lambda_min.abs());
        SpectralReport {
            n: space.n(),
            mode: space.mode(),
            lazy: kernel.lazy(),
            states: kernel.len(),
            eigenvalues,
            lambda2,
            lambda_min,
            spectral_gap: 1.0 - lambda2,
            gap,
            relaxation: 1.0 / gap,
        }
    }
}

/// `D^{1/2} P D^{−1/2}` as a dense symmetric matrix.
pub fn symmetrized(kernel: &Kernel, law: &Distribution) -> DMatrix<f64> {
    let root: Vec<f64> = law.weights().iter().map(|p| p.sqrt()).collect();
    let len = kernel.len();
    let mut s = DMatrix::zeros(len, len);
    for x in 0..len {
        for &(y, _) in kernel.row(x) {
            s[(x, y)] = root[x] * kernel.prob(x, y) / root[y];
        }
    }
    // Average out rounding asymmetry.
    let t = s.transpose();
    (s + t) * 0.5
}

fn ensure_reversible(kernel: &Kernel, law: &Distribution) -> Result<()> {
    let residual = verify_detailed_balance(kernel, law);
    if residual > REVERSIBILITY_TOLERANCE {
        return Err(Error::NotReversible(residual));
    }
    Ok(())
}

/// Full spectrum via a dense symmetric solve, or the two extreme
/// non-trivial eigenvalues by power iteration above [`DENSE_SPECTRUM_LIMIT`].
pub fn spectral_report(kernel: &Kernel) -> Result<SpectralReport> {
    let law = stationary_law(kernel.space());
    ensure_reversible(kernel, &law)?;
    if kernel.len() == 1 {
        return Ok(SpectralReport::from_extremes(kernel, vec![1.0], 0.0, 0.0));
    }
    if kernel.len() > DENSE_SPECTRUM_LIMIT {
        let (lambda2, lambda_min) = power_iteration_extremes(kernel, &law, 1e-10, 1_000_000);
        return Ok(SpectralReport::from_extremes(kernel, vec![1.0, lambda2, lambda_min], lambda2, lambda_min));
    }
    let eigenvalues = sorted_spectrum(kernel, &law);
    let (lambda2, lambda_min) = (eigenvalues[1], *eigenvalues.last().unwrap());
    Ok(SpectralReport::from_extremes(kernel, eigenvalues, lambda2, lambda_min))
}

/// All eigenvalues, sorted descending.
pub fn sorted_spectrum(kernel: &Kernel, law: &Distribution) -> Vec<f64> {
    let mut ev: Vec<f64> = symmetrized(kernel, law).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

fn sparse_symmetric_apply(kernel: &Kernel, root: &[f64], v: &[f64], out: &mut [f64]) {
    // (S v)_x = Σ_y sqrt(π_x) P(x,y) / sqrt(π_y) v_y
    for x in 0..kernel.len() {
        let mut acc = 0.0;
        for &(y, _) in kernel.row(x) {
            acc += kernel.prob(x, y) * v[y] / root[y];
        }
        out[x] = root[x] * acc;
    }
}

/// `(λ₂, λ_min)` of a reversible kernel by power iteration on `(I ± S)/2`
/// deflated against `sqrt(π)`, each stopped once the eigen-residual
/// `‖Sv − ρv‖` falls below `tol`.
pub fn power_iteration_extremes(kernel: &Kernel, law: &Distribution, tol: f64, max_iter: usize) -> (f64, f64) {
    let root: Vec<f64> = law.weights().iter().map(|p| p.sqrt()).collect();
    let len = kernel.len();
    let run = |sign: f64| -> f64 {
        let mut v: Vec<f64> = (0..len).map(|i| ((i * 7919 % 104_729) as f64 / 104_729.0) - 0.5).collect();
        let mut sv = vec![0.0; len];
        let mut rayleigh = f64::NAN;
        for _ in 0..max_iter {
            let proj: f64 = v.iter().zip(&root).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(&root).for_each(|(a, b)| *a -= proj * b);
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            v.iter_mut().for_each(|a| *a /= norm);
            sparse_symmetric_apply(kernel, &root, &v, &mut sv);
            rayleigh = v.iter().zip(&sv).map(|(a, b)| a * b).sum();
            let residual = v
                .iter()
                .zip(&sv)
                .map(|(a, b)| (b - rayleigh * a).powi(2))
                .sum::<f64>()
                .sqrt();
            if residual < tol {
                break;
            }
            for (a, b) in v.iter_mut().zip(&sv) {
                *a = 0.5 * (*a + sign * b);
            }
        }
        rayleigh
    };
    (run(1.0), run(-1.0))
}

/// `E(f) = ½ Σ_{x,y} (f(x) − f(y))² π(x) P(x,y)`.
pub fn dirichlet_form(kernel: &Kernel, law: &Distribution, f: &[f64]) -> f64 {
    let pi = law.weights();
    let mut total = 0.0;
    for x in 0..kernel.len() {
        for &(y, _) in kernel.row(x) {
            let d = f[x] - f[y];
            total += d * d * pi[x] * kernel.prob(x, y);
        }
    }
    0.5 * total
}

/// [`dirichlet_form`] for an integer-valued function, as an exact fraction.
pub fn dirichlet_form_exact(kernel: &Kernel, law: &Distribution, f: &[i64]) -> Ratio<u128> {
    let w = law.numerators();
    let mut total = 0u128;
    for x in 0..kernel.len() {
        for &(y, c) in kernel.row(x) {
            let d = f[x].abs_diff(f[y]) as u128;
            total += d * d * w[x] as u128 * c as u128;
        }
    }
    Ratio::new(total, 2 * law.denominator() as u128 * kernel.denominator() as u128)
}

pub fn variance(law: &Distribution, f: &[f64]) -> f64 {
    let pi = law.weights();
    let mean: f64 = pi.iter().zip(f).map(|(p, v)| p * v).sum();
    pi.iter().zip(f).map(|(p, v)| p * (v - mean) * (v - mean)).sum()
}

/// Exact `(E_π[f], Var_π[f])` for an integer-valued function.
pub fn moments_exact(law: &Distribution, f: &[i64]) -> (Ratio<i128>, Ratio<i128>) {
    let den = law.denominator() as i128;
    let (mut s1, mut s2) = (0i128, 0i128);
    for (&w, &v) in law.numerators().iter().zip(f) {
        s1 += w as i128 * v as i128;
        s2 += w as i128 * v as i128 * v as i128;
    }
    let mean = Ratio::new(s1, den);
    (mean, Ratio::new(s2, den) - mean * mean)
}

/// `φ` on every state of the space.
pub fn phi_values(space: &StateSpace) -> Vec<i64> {
    space.states().iter().map(|m| m.internal_tree_length() as i64).collect()
}

/// `Var_π[φ]` by summation over the enumerated space.
pub fn phi_variance_exact(n: usize, mode: Mode, budget: Budget) -> Result<Ratio<i128>> {
    let space = StateSpace::enumerate(n, mode, budget)?;
    let law = stationary_law(&space);
    Ok(moments_exact(&law, &phi_values(&space)).1)
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let len = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / len;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / len;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Largest distance from an eigenvalue of `sub` to a distinct eigenvalue of
/// `sup`, pairing each `sub` value with its nearest unused `sup` value.
pub fn spectrum_inclusion_gap(sub: &[f64], sup: &[f64]) -> f64 {
    let mut used = vec![false; sup.len()];
    let mut worst = 0.0f64;
    for &lambda in sub {
        let nearest = (0..sup.len())
            .filter(|&j| !used[j])
            .min_by(|&a, &b| (sup[a] - lambda).abs().total_cmp(&(sup[b] - lambda).abs()));
        match nearest {
            Some(j) => {
                used[j] = true;
                worst = worst.max((sup[j] - lambda).abs());
            }
            None => return f64::INFINITY,
        }
    }
    worst
}
