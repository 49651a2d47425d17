//! Exact reference machinery: bound-state spectra of one-dimensional
//! Hamiltonians on a grid, thermal expectation values, exact real-time
//! position autocorrelation functions, and the generating function from
//! source-tilted Hamiltonians.
//!
//! Discretization is the three-point Laplacian on a uniform grid with
//! Dirichlet edges. Eigenvalues come from Sturm-sequence bisection,
//! eigenvectors from shifted inverse iteration. The whole spectrum —
//! energies, position matrix elements, diagonal q^2 — is computed on a
//! ladder of doubled grids and Richardson-extrapolated entry by entry,
//! which removes the h^2 and h^4 terms of the discretization series.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::correlation::{CorrelationSeries, SeriesKind};
use crate::error::{Error, Result};
use crate::model::{PotentialModel, ThermoState};
use crate::numerics::gauss_legendre;

/// Thermal weight below which states are dropped when sizing spectral sums.
/// Stricter than the 1e-10 admissibility bound so that matrix-element growth
/// with n cannot push truncation tails above observable tolerances.
pub const THERMAL_WEIGHT_FLOOR: f64 = 1e-12;

/// Solver knobs. Defaults target ~1e-8 absolute accuracy on low-lying
/// eigenvalues and on thermal observables assembled from the spectrum.
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Grid-doubling levels (>= 3 for two Richardson stages).
    pub levels: usize,
    /// Absolute eigenvalue tolerance near the ground state; the effective
    /// per-state tolerance is tol * (1 + 0.25 (E_n - E_0)).
    pub tol: f64,
    /// Points per shortest de Broglie wavelength on the coarsest grid.
    pub points_per_wavelength: f64,
    /// WKB decay exponent accumulated beyond the classical turning points.
    pub domain_action: f64,
    /// Off-diagonal bandwidth kept in the position matrix; `None` picks the
    /// full matrix for small spectra and a wide band for deep ones.
    pub band: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { levels: 3, tol: 1e-8, points_per_wavelength: 36.0, domain_action: 40.0, band: None }
    }
}

/// Grid and convergence diagnostics for a solved spectrum.
#[derive(Debug, Clone)]
pub struct GridMeta {
    pub q_lo: f64,
    pub q_hi: f64,
    pub base_points: usize,
    pub levels: usize,
    /// Largest remaining Richardson correction over all retained states.
    pub max_energy_correction: f64,
    /// |psi_0| at the grid edge (unit-normalized wavefunction).
    pub ground_boundary_amplitude: f64,
    /// max over the lower half of retained n of
    /// |sum_m q_nm^2 - <n|q^2|n>| / <n|q^2|n>.
    pub completeness_deviation: f64,
}

/// Bound-state eigenpairs with position matrix elements, extrapolated to
/// the continuum grid limit.
#[derive(Debug, Clone)]
pub struct Spectrum {
    /// Eigenvalues, strictly increasing.
    pub energies: Vec<f64>,
    /// <m|q|n>, n_states x n_states row-major, symmetric; entries outside
    /// the configured band are zero.
    pub q_elem: Vec<f64>,
    /// <n|q^2|n> from the direct trace.
    pub q2_diag: Vec<f64>,
    pub grid_meta: GridMeta,
    pub mass: f64,
    n_states: usize,
}

impl Spectrum {
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn q_element(&self, m: usize, n: usize) -> f64 {
        self.q_elem[m * self.n_states + n]
    }
}

/// Romberg-style extrapolation of a quantity with an h^2 error series;
/// values ordered coarse to fine, h halving between entries.
pub fn richardson(values: &[f64]) -> f64 {
    let n = values.len();
    let mut v = values.to_vec();
    let mut factor = 4.0;
    for stage in 1..n {
        for i in 0..n - stage {
            v[i] = (factor * v[i + 1] - v[i]) / (factor - 1.0);
        }
        factor *= 4.0;
    }
    v[0]
}

/// Sensitivity of the extrapolation to dropping the coarsest level; an
/// estimate of the remaining error.
fn richardson_error(values: &[f64]) -> f64 {
    if values.len() < 3 {
        return f64::INFINITY;
    }
    (richardson(values) - richardson(&values[1..])).abs()
}

/// Number of bound states of the Morse well depth*(1 - e^{a q})^2:
/// floor(lambda - 1/2) + 1 with lambda = sqrt(2 m depth)/|a|.
pub fn morse_bound_states(mass: f64, depth: f64, range: f64) -> usize {
    let lambda = (2.0 * mass * depth).sqrt() / range.abs();
    if lambda <= 0.5 {
        0
    } else {
        (lambda - 0.5).floor() as usize + 1
    }
}

/// WKB state count below energy `e`: (1/pi) integral sqrt(2m(e - V)) dq.
fn wkb_count(p: &PotentialModel, mass: f64, e: f64, q_min: f64) -> f64 {
    let (lo, hi) = turning_points(p, e, q_min);
    let (nodes, weights) = gauss_legendre(64);
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    let mut acc = 0.0;
    for (x, w) in nodes.iter().zip(&weights) {
        let q = mid + half * x;
        let k2 = 2.0 * mass * (e - p.evaluate(q));
        acc += w * k2.max(0.0).sqrt();
    }
    acc * half / std::f64::consts::PI
}

fn turning_points(p: &PotentialModel, e: f64, q_min: f64) -> (f64, f64) {
    let find = |dir: f64| -> f64 {
        let mut step = 0.5;
        let mut q = q_min;
        for _ in 0..400 {
            let next = q + dir * step;
            if p.evaluate(next) >= e {
                let (mut a, mut b) = (q, next);
                for _ in 0..80 {
                    let m = 0.5 * (a + b);
                    if p.evaluate(m) >= e {
                        b = m;
                    } else {
                        a = m;
                    }
                }
                return 0.5 * (a + b);
            }
            q = next;
            step *= 1.25;
        }
        q
    };
    (find(-1.0), find(1.0))
}

/// Extend beyond a turning point until the WKB decay action reaches `target`.
fn pad_boundary(p: &PotentialModel, mass: f64, e: f64, start: f64, dir: f64, target: f64) -> f64 {
    let mut q = start;
    let mut action = 0.0;
    let step = (0.02 * (1.0 + start.abs())).min(0.5);
    let mut kappa_prev = 0.0;
    for _ in 0..4_000_000 {
        let q_next = q + dir * step;
        let v = p.evaluate(q_next);
        let kappa = (2.0 * mass * (v - e)).max(0.0).sqrt();
        action += 0.5 * (kappa + kappa_prev) * step;
        kappa_prev = kappa;
        q = q_next;
        if action >= target {
            break;
        }
    }
    q
}

struct Tridiag {
    diag: Vec<f64>,
    off: f64,
    pivmin: f64,
}

impl Tridiag {
    fn new(diag: Vec<f64>, off: f64) -> Self {
        let pivmin = 1e-290 * (off * off).max(1.0);
        Self { diag, off, pivmin }
    }

    /// Number of eigenvalues strictly below x (Sturm sequence count).
    fn count_below(&self, x: f64) -> usize {
        let e2 = self.off * self.off;
        let mut count = 0usize;
        let mut d = 1.0f64;
        let mut first = true;
        for &di in &self.diag {
            d = if first { di - x } else { di - x - e2 / d };
            first = false;
            if d.abs() < self.pivmin {
                d = -self.pivmin;
            }
            if d < 0.0 {
                count += 1;
            }
        }
        count
    }

    fn eigenvalue(&self, k: usize, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..120 {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi || hi - lo < 1e-14 * (1.0 + mid.abs()) {
                break;
            }
            if self.count_below(mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Shifted inverse iteration; returns a unit vector in the plain l2 norm.
    fn eigenvector(&self, lambda: f64, k: usize) -> Vec<f64> {
        let n = self.diag.len();
        let shift = lambda + (lambda.abs() + 1.0) * 1e-13;
        let mut v: Vec<f64> = (0..n)
            .map(|i| {
                ((i + 1) as f64 * (k + 1) as f64 * std::f64::consts::PI / (n + 1) as f64).sin()
            })
            .collect();
        normalize(&mut v);
        for _ in 0..6 {
            let w = self.solve_shifted(shift, &v);
            let growth = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            v = w;
            normalize(&mut v);
            if growth > 1e13 {
                break;
            }
        }
        v
    }

    /// Solve (T - shift I) x = b by LU with partial pivoting; the pivoted
    /// factorization has one extra super-diagonal of fill-in.
    fn solve_shifted(&self, shift: f64, b: &[f64]) -> Vec<f64> {
        let n = self.diag.len();
        let e = self.off;
        let mut d: Vec<f64> = self.diag.iter().map(|&x| x - shift).collect();
        let mut u = vec![0.0; n];
        let mut f = vec![0.0; n];
        for i in 0..n - 1 {
            u[i] = e;
        }
        let mut x = b.to_vec();
        for i in 0..n - 1 {
            let sub = e;
            if sub.abs() > d[i].abs() {
                // Swap rows i and i+1.
                let (di, ui, fi) = (d[i], u[i], f[i]);
                d[i] = sub;
                u[i] = d[i + 1];
                f[i] = if i + 2 < n { u[i + 1] } else { 0.0 };
                let m = di / d[i];
                d[i + 1] = ui - m * u[i];
                u[i + 1] = fi - m * f[i];
                x.swap(i, i + 1);
                x[i + 1] -= m * x[i];
            } else {
                let m = sub / d[i];
                d[i + 1] -= m * u[i];
                if i + 2 < n {
                    u[i + 1] -= m * f[i];
                }
                x[i + 1] -= m * x[i];
            }
            if d[i].abs() < self.pivmin {
                d[i] = self.pivmin;
            }
        }
        if d[n - 1].abs() < self.pivmin {
            d[n - 1] = self.pivmin;
        }
        let mut out = vec![0.0; n];
        for i in (0..n).rev() {
            let mut acc = x[i];
            if i + 1 < n {
                acc -= u[i] * out[i + 1];
            }
            if i + 2 < n {
                acc -= f[i] * out[i + 2];
            }
            out[i] = acc / d[i];
        }
        out
    }
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

struct SpectralLevel {
    energies: Vec<f64>,
    q_elem: Vec<f64>,
    q2_diag: Vec<f64>,
    ground_edge: f64,
}

fn solve_level(
    p: &PotentialModel,
    mass: f64,
    q_lo: f64,
    q_hi: f64,
    n_grid: usize,
    n_states: usize,
    band: Option<usize>,
) -> SpectralLevel {
    let h = (q_hi - q_lo) / (n_grid + 1) as f64;
    let kin = 1.0 / (mass * h * h);
    let diag: Vec<f64> =
        (0..n_grid).map(|i| kin + p.evaluate(q_lo + (i + 1) as f64 * h)).collect();
    let glo = diag.iter().cloned().fold(f64::INFINITY, f64::min) - kin;
    let ghi = diag.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + kin;
    let t = Tridiag::new(diag, -0.5 * kin);

    let energies: Vec<f64> =
        (0..n_states).into_par_iter().map(|k| t.eigenvalue(k, glo, ghi)).collect();

    let normalized_vector = |k: usize, lambda: f64| -> Vec<f64> {
        // Grid-normalized, with a sign convention stable across grid
        // levels: positive at the first point exceeding 1e-8 of the peak.
        let mut v = t.eigenvector(lambda, k);
        let peak = v.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
        let sign = v
            .iter()
            .find(|x| x.abs() > 1e-8 * peak)
            .map_or(1.0, |&x| if x < 0.0 { -1.0 } else { 1.0 });
        let scale = sign / h.sqrt();
        for x in v.iter_mut() {
            *x *= scale;
        }
        v
    };

    let Some(band) = band else {
        // Energies-only solve; one eigenvector for the boundary diagnostic.
        let psi0 = normalized_vector(0, energies[0]);
        let ground_edge = psi0[0].abs().max(psi0[n_grid - 1].abs());
        return SpectralLevel { energies, q_elem: Vec::new(), q2_diag: Vec::new(), ground_edge };
    };

    let vectors: Vec<Vec<f64>> = energies
        .par_iter()
        .enumerate()
        .map(|(k, &lambda)| normalized_vector(k, lambda))
        .collect();

    let q_grid: Vec<f64> = (0..n_grid).map(|i| q_lo + (i + 1) as f64 * h).collect();
    let mut q_elem = vec![0.0; n_states * n_states];
    let rows: Vec<(usize, Vec<(usize, f64)>)> = (0..n_states)
        .into_par_iter()
        .map(|m| {
            let hi = (m + band).min(n_states - 1);
            let mut entries = Vec::with_capacity(hi - m + 1);
            for n in m..=hi {
                let dot: f64 = vectors[m]
                    .iter()
                    .zip(&vectors[n])
                    .zip(&q_grid)
                    .map(|((a, b), q)| a * b * q)
                    .sum();
                entries.push((n, dot * h));
            }
            (m, entries)
        })
        .collect();
    for (m, entries) in rows {
        for (n, val) in entries {
            q_elem[m * n_states + n] = val;
            q_elem[n * n_states + m] = val;
        }
    }

    let q2_diag: Vec<f64> = vectors
        .iter()
        .map(|v| v.iter().zip(&q_grid).map(|(a, q)| a * a * q * q).sum::<f64>() * h)
        .collect();

    let ground_edge = vectors[0][0].abs().max(vectors[0][n_grid - 1].abs());

    SpectralLevel { energies, q_elem, q2_diag, ground_edge }
}

/// Solve for the lowest `n_states` bound states of `p`.
pub fn solve_bound_states(
    p: &PotentialModel,
    ts: &ThermoState,
    n_states: usize,
    opts: &SolverOptions,
) -> Result<Spectrum> {
    solve_core(p, ts, n_states, opts, true)
}

fn solve_core(
    p: &PotentialModel,
    ts: &ThermoState,
    n_states: usize,
    opts: &SolverOptions,
    with_elements: bool,
) -> Result<Spectrum> {
    if n_states == 0 {
        return Err(Error::InvalidInput("n_states must be >= 1".into()));
    }
    let mass = ts.mass;
    if let PotentialModel::Morse { depth, range } = p {
        let bound = morse_bound_states(mass, *depth, *range);
        if n_states > bound {
            return Err(Error::UnboundedSpectrumRequest { requested: n_states, bound });
        }
    }

    let q_min = p.classical_minimum();
    let v_min = p.evaluate(q_min);
    let dissociation = match p {
        PotentialModel::Morse { depth, .. } => Some(v_min + depth * (1.0 - 1e-9)),
        _ => None,
    };

    // Energy cap from WKB quantization: count(E) ~ n_states + margin.
    let mut e_cap = {
        let omega0 = (p.second_derivative(q_min).max(1e-12) / mass).sqrt();
        let mut e = v_min + omega0 * (n_states as f64 + 2.0);
        if let Some(d) = dissociation {
            e = e.min(d);
        }
        let target = n_states as f64 + 1.5;
        for _ in 0..200 {
            if wkb_count(p, mass, e, q_min) >= target {
                break;
            }
            e = v_min + (e - v_min) * 1.3;
            if let Some(d) = dissociation {
                if e >= d {
                    e = d;
                    break;
                }
            }
        }
        e
    };
    if let Some(d) = dissociation {
        e_cap = e_cap.min(d);
    }

    let (turn_lo, turn_hi) = turning_points(p, e_cap, q_min);
    let mut q_lo = pad_boundary(p, mass, e_cap, turn_lo, -1.0, opts.domain_action);
    let mut q_hi = pad_boundary(p, mass, e_cap, turn_hi, 1.0, opts.domain_action);

    let band = opts
        .band
        .unwrap_or(if n_states <= 128 { n_states } else { 48 })
        .clamp(2, n_states);

    let mut widenings = 0;
    loop {
        let k_max = (2.0 * mass * (e_cap - v_min)).sqrt().max(1e-3);
        let h_base = 2.0 * std::f64::consts::PI / k_max / opts.points_per_wavelength;
        let base_points = (((q_hi - q_lo) / h_base).ceil() as usize).max(8 * n_states).max(64);

        let min_levels = opts.levels.max(3);
        let mut levels: Vec<SpectralLevel> = Vec::new();
        let mut converged = false;
        for level in 0..min_levels + 1 {
            let n_grid = (base_points + 1) * (1 << level) - 1;
            levels.push(solve_level(p, mass, q_lo, q_hi, n_grid, n_states, band));
            if levels.len() >= min_levels {
                let e0 = levels.last().unwrap().energies[0];
                let worst = (0..n_states)
                    .map(|k| {
                        let series: Vec<f64> =
                            levels.iter().map(|l| l.energies[k]).collect();
                        let scale =
                            1.0 + 0.25 * (levels.last().unwrap().energies[k] - e0).max(0.0);
                        richardson_error(&series) / scale
                    })
                    .fold(0.0f64, f64::max);
                if worst <= 0.34 * opts.tol {
                    converged = true;
                    break;
                }
            }
        }
        if !converged {
            return Err(Error::NotConverged(format!(
                "eigenvalues did not stabilize under grid doubling from {base_points} points"
            )));
        }

        let energies: Vec<f64> = (0..n_states)
            .map(|k| richardson(&levels.iter().map(|l| l.energies[k]).collect::<Vec<_>>()))
            .collect();
        for w in energies.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::NotConverged("eigenvalues not strictly increasing".into()));
            }
        }
        let max_corr = (0..n_states)
            .map(|k| richardson_error(&levels.iter().map(|l| l.energies[k]).collect::<Vec<_>>()))
            .fold(0.0f64, f64::max);

        let edge = levels.last().unwrap().ground_edge
            / ((q_hi - q_lo) / (base_points * (1 << (levels.len() - 1))) as f64).sqrt()
            * ((q_hi - q_lo) / (base_points * (1 << (levels.len() - 1))) as f64).sqrt();
        // (already grid-normalized inside solve_level; the expression above
        // is the identity and kept for clarity of units)
        if edge > 1e-10 && widenings < 3 {
            widenings += 1;
            let width = q_hi - q_lo;
            q_lo -= 0.15 * width;
            q_hi += 0.15 * width;
            continue;
        }

        let ns = n_states;
        let q_elem: Vec<f64> = (0..ns * ns)
            .into_par_iter()
            .map(|idx| richardson(&levels.iter().map(|l| l.q_elem[idx]).collect::<Vec<_>>()))
            .collect();
        let q2_diag: Vec<f64> = (0..ns)
            .map(|n| richardson(&levels.iter().map(|l| l.q2_diag[n]).collect::<Vec<_>>()))
            .collect();

        let completeness = {
            let mut worst = 0.0f64;
            for n in 0..ns.div_ceil(2) {
                let sum: f64 = (0..ns).map(|m| q_elem[m * ns + n].powi(2)).sum();
                let q2 = q2_diag[n];
                if q2 > 1e-14 {
                    worst = worst.max(((sum - q2) / q2).abs());
                }
            }
            worst
        };

        return Ok(Spectrum {
            energies,
            q_elem,
            q2_diag,
            grid_meta: GridMeta {
                q_lo,
                q_hi,
                base_points,
                levels: levels.len(),
                max_energy_correction: max_corr,
                ground_boundary_amplitude: edge,
                completeness_deviation: completeness,
            },
            mass,
            n_states,
        });
    }
}

/// Number of states needed so the Boltzmann tail weight drops below
/// [`THERMAL_WEIGHT_FLOOR`], estimated by WKB counting.
pub fn thermal_state_count(p: &PotentialModel, ts: &ThermoState) -> Result<usize> {
    let q_min = p.classical_minimum();
    let v_min = p.evaluate(q_min);
    let omega0 = (p.second_derivative(q_min).max(1e-12) / ts.mass).sqrt();
    let e0_guess = v_min + 0.5 * omega0;
    let e_cut = e0_guess + (1.0 / THERMAL_WEIGHT_FLOOR).ln() / ts.beta;
    if let PotentialModel::Morse { depth, range } = p {
        let bound = morse_bound_states(ts.mass, *depth, *range);
        if e_cut >= v_min + depth {
            return Err(Error::TruncationTooSevere {
                tail: (-ts.beta * (depth - 0.5 * omega0)).exp(),
                limit: THERMAL_WEIGHT_FLOOR,
            });
        }
        let n = wkb_count(p, ts.mass, e_cut, q_min).ceil() as usize + 4;
        return Ok(n.clamp(2, bound));
    }
    Ok((wkb_count(p, ts.mass, e_cut, q_min).ceil() as usize + 4).max(6))
}

/// Solve with the state count adapted to the temperature.
pub fn solve_thermal(
    p: &PotentialModel,
    ts: &ThermoState,
    opts: &SolverOptions,
) -> Result<Spectrum> {
    let n = thermal_state_count(p, ts)?;
    solve_bound_states(p, ts, n, opts)
}

fn check_truncation(energies: &[f64], beta: f64) -> Result<()> {
    let e0 = energies[0];
    let e_max = *energies.last().unwrap();
    let tail = (-beta * (e_max - e0)).exp();
    if tail >= 1e-10 {
        return Err(Error::TruncationTooSevere { tail, limit: 1e-10 });
    }
    Ok(())
}

/// Thermal position expectation <q> = sum_n e^{-beta E_n} <n|q|n> / Z, with
/// Boltzmann factors normalized to the ground state.
pub fn thermal_expectation_q(s: &Spectrum, beta: f64) -> Result<f64> {
    check_truncation(&s.energies, beta)?;
    let e0 = s.energies[0];
    let mut num = 0.0;
    let mut den = 0.0;
    for (n, e) in s.energies.iter().enumerate() {
        let w = (-beta * (e - e0)).exp();
        num += w * s.q_elem[n * s.n_states + n];
        den += w;
    }
    Ok(num / den)
}

/// Thermal <q^2> via the direct trace, independent of the double-sum route.
pub fn thermal_expectation_q2(s: &Spectrum, beta: f64) -> Result<f64> {
    check_truncation(&s.energies, beta)?;
    let e0 = s.energies[0];
    let mut num = 0.0;
    let mut den = 0.0;
    for (e, q2) in s.energies.iter().zip(&s.q2_diag) {
        let w = (-beta * (e - e0)).exp();
        num += w * q2;
        den += w;
    }
    Ok(num / den)
}

/// Exact quantum position autocorrelation function
/// C(t) = (1/Z) sum_{n,m} e^{-beta E_n} e^{-i (E_m - E_n) t} |<m|q|n>|^2.
pub fn exact_autocorrelation(s: &Spectrum, beta: f64, times: &[f64]) -> Result<CorrelationSeries> {
    check_truncation(&s.energies, beta)?;
    let ns = s.n_states;
    let e0 = s.energies[0];
    let weights: Vec<f64> = s.energies.iter().map(|e| (-beta * (e - e0)).exp()).collect();
    let z: f64 = weights.iter().sum();
    let mut amp: Vec<(f64, f64)> = Vec::new();
    for n in 0..ns {
        let wn = weights[n] / z;
        if wn < 1e-18 {
            continue;
        }
        for m in 0..ns {
            let q = s.q_elem[m * ns + n];
            if q != 0.0 {
                amp.push((wn * q * q, s.energies[m] - s.energies[n]));
            }
        }
    }
    let values: Vec<Complex64> = times
        .par_iter()
        .map(|&t| {
            let mut acc = Complex64::new(0.0, 0.0);
            for &(a, de) in &amp {
                let phase = -de * t;
                acc += Complex64::new(a * phase.cos(), a * phase.sin());
            }
            acc
        })
        .collect();
    Ok(CorrelationSeries { times: times.to_vec(), values, beta, kind: SeriesKind::Exact })
}

/// Exact generating function w(J) = (1/beta) log Tr e^{-beta (H - J q)} from
/// the spectrum of the source-tilted Hamiltonian.
pub fn tilted_generating_function(
    p: &PotentialModel,
    ts: &ThermoState,
    source: f64,
    n_states: usize,
    opts: &SolverOptions,
) -> Result<f64> {
    let tilted = tilt(p, source);
    if !tilted.is_confining() {
        return Err(Error::NonConfiningPotential);
    }
    let s = solve_bound_states(&tilted, ts, n_states, opts)?;
    check_truncation(&s.energies, ts.beta)?;
    let e0 = s.energies[0];
    let z_rel: f64 = s.energies.iter().map(|e| (-ts.beta * (e - e0)).exp()).sum();
    Ok(-e0 + z_rel.ln() / ts.beta)
}

/// As [`tilted_generating_function`] with the state count adapted to beta.
pub fn tilted_generating_function_adaptive(
    p: &PotentialModel,
    ts: &ThermoState,
    source: f64,
    opts: &SolverOptions,
) -> Result<f64> {
    let n = thermal_state_count(&tilt(p, source), ts)?;
    tilted_generating_function(p, ts, source, n, opts)
}

fn tilt(p: &PotentialModel, source: f64) -> PotentialModel {
    if source == 0.0 {
        p.clone()
    } else {
        PotentialModel::Tilted { base: Box::new(p.clone()), f: -source, c: 0.0 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::systems;
    use approx::assert_relative_eq;

    fn ts(beta: f64) -> ThermoState {
        ThermoState::new(beta, 1.0).unwrap()
    }

    #[test]
    fn harmonic_eigenvalues_to_1e8() {
        let p = systems::harmonic(1.0, 1.0);
        let s = solve_bound_states(&p, &ts(1.0), 10, &SolverOptions::default()).unwrap();
        for (n, e) in s.energies.iter().enumerate() {
            assert!(
                (e - (n as f64 + 0.5)).abs() < 1e-8,
                "state {n}: {e} vs {}",
                n as f64 + 0.5
            );
        }
        assert!(s.grid_meta.ground_boundary_amplitude < 1e-12);
        assert!(s.grid_meta.completeness_deviation < 1e-6);
        // |<n|q|n+1>| = sqrt((n+1)/2) for m = omega = 1 (the sign of an
        // eigenvector is a convention).
        for n in 0..9 {
            let expect = ((n as f64 + 1.0) / 2.0).sqrt();
            assert_relative_eq!(s.q_element(n, n + 1).abs(), expect, epsilon = 1e-7);
        }
    }

    #[test]
    fn q_matrix_is_symmetric() {
        let p = PotentialModel::Polynomial(systems::paper_quartic());
        let s = solve_bound_states(&p, &ts(1.0), 12, &SolverOptions::default()).unwrap();
        for m in 0..12 {
            for n in 0..12 {
                assert!((s.q_element(m, n) - s.q_element(n, m)).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn morse_spectrum_closed_form() {
        // E_n = w0 (n + 1/2) - (w0 (n + 1/2))^2/(4 D), w0 = a sqrt(2 D/m) = 1.
        let p = systems::morse_hcl();
        let s = solve_bound_states(&p, &ts(1.0), 3, &SolverOptions::default()).unwrap();
        for (n, &e) in s.energies.iter().enumerate() {
            let x = n as f64 + 0.5;
            let exact = x - x * x / 50.0;
            assert!((e - exact).abs() < 1e-6, "state {n}: {e} vs {exact}");
        }
        assert_relative_eq!(s.energies[0], 0.495, epsilon = 1e-6);
        assert_relative_eq!(s.energies[1], 1.455, epsilon = 1e-6);
        assert_relative_eq!(s.energies[2], 2.375, epsilon = 1e-6);
    }

    #[test]
    fn morse_refuses_continuum_states() {
        let p = systems::morse_hcl();
        let err = solve_bound_states(&p, &ts(1.0), 26, &SolverOptions::default());
        assert!(matches!(
            err,
            Err(Error::UnboundedSpectrumRequest { requested: 26, bound: 25 })
        ));
    }

    #[test]
    fn benchmark_quartic_ground_state() {
        // Second-order perturbation theory: 0.5 + 0.0075 - 0.01375 = 0.49375.
        let p = PotentialModel::Polynomial(systems::paper_quartic());
        let s = solve_bound_states(&p, &ts(1.0), 4, &SolverOptions::default()).unwrap();
        assert!((s.energies[0] - 0.49375).abs() < 5e-4, "E0 = {}", s.energies[0]);
    }

    #[test]
    fn harmonic_thermal_expectation_is_zero() {
        let p = systems::harmonic(1.0, 1.0);
        let s = solve_thermal(&p, &ts(2.0), &SolverOptions::default()).unwrap();
        assert!(thermal_expectation_q(&s, 2.0).unwrap().abs() < 1e-10);
    }

    #[test]
    fn asym_harmonic_expectation_is_minus_f() {
        let p = systems::asym_harmonic(1.0, 1.0, 0.3);
        for beta in [0.7, 3.0] {
            let s = solve_thermal(&p, &ts(beta), &SolverOptions::default()).unwrap();
            let q = thermal_expectation_q(&s, beta).unwrap();
            assert!((q + 0.3).abs() < 1e-8, "beta = {beta}: <q> = {q}");
        }
    }

    #[test]
    fn benchmark_quartic_low_t_expectation() {
        // First-order perturbation: <q> ~ -1.5 a3 = -0.15 at beta = 100.
        let p = PotentialModel::Polynomial(systems::paper_quartic());
        let s = solve_thermal(&p, &ts(100.0), &SolverOptions::default()).unwrap();
        let q = thermal_expectation_q(&s, 100.0).unwrap();
        assert!((q + 0.15).abs() < 5e-3, "<q> = {q}");
    }

    #[test]
    fn truncation_guard_fires() {
        let p = systems::harmonic(1.0, 1.0);
        let s = solve_bound_states(&p, &ts(0.1), 5, &SolverOptions::default()).unwrap();
        assert!(matches!(thermal_expectation_q(&s, 0.1), Err(Error::TruncationTooSevere { .. })));
    }

    #[test]
    fn harmonic_autocorrelation_matches_closed_form() {
        let beta = 1.0;
        let omega: f64 = 1.0;
        let p = systems::harmonic(1.0, omega);
        let s = solve_thermal(&p, &ts(beta), &SolverOptions::default()).unwrap();
        let times: Vec<f64> = (0..81).map(|i| i as f64 * 0.25).collect();
        let c = exact_autocorrelation(&s, beta, &times).unwrap();
        let coth = (beta * omega / 2.0).tanh().recip();
        for (t, v) in times.iter().zip(&c.values) {
            let re = 0.5 / omega * coth * (omega * t).cos();
            let im = -0.5 / omega * (omega * t).sin();
            assert!((v.re - re).abs() < 1e-8, "t = {t}: re {} vs {re}", v.re);
            assert!((v.im - im).abs() < 1e-8, "t = {t}: im {} vs {im}", v.im);
        }
        assert_relative_eq!(c.values[0].re, 0.5 / (0.5f64).tanh(), epsilon = 1e-8);
    }

    #[test]
    fn autocorrelation_zero_time_equals_q2_trace() {
        let beta = 2.5;
        let p = PotentialModel::Polynomial(systems::paper_quartic());
        let s = solve_thermal(&p, &ts(beta), &SolverOptions::default()).unwrap();
        let c = exact_autocorrelation(&s, beta, &[0.0]).unwrap();
        let q2 = thermal_expectation_q2(&s, beta).unwrap();
        assert!((c.values[0].re - q2).abs() < 1e-10, "{} vs {q2}", c.values[0].re);
        assert!(c.values[0].im.abs() < 1e-12);
    }

    #[test]
    fn autocorrelation_time_reversal_symmetry() {
        let beta = 1.5;
        let p = PotentialModel::Polynomial(systems::paper_quartic());
        let s = solve_thermal(&p, &ts(beta), &SolverOptions::default()).unwrap();
        let times: Vec<f64> = (-20..=20).map(|i| i as f64 * 0.3).collect();
        let c = exact_autocorrelation(&s, beta, &times).unwrap();
        assert!(c.reversal_defect() < 1e-12);
    }

    #[test]
    fn tilted_generating_function_harmonic_closed_form() {
        // w(J) = J^2/(2 m w^2) - (1/beta) log(2 sinh(beta w/2))
        let p = systems::harmonic(1.0, 1.0);
        let opts = SolverOptions::default();
        let w0 = tilted_generating_function_adaptive(&p, &ts(2.0), 0.0, &opts).unwrap();
        let exact0 = -0.5 * (2.0 * 1.0_f64.sinh()).ln();
        assert!((w0 - exact0).abs() < 1e-8, "{w0} vs {exact0}");

        let w1 = tilted_generating_function_adaptive(&p, &ts(2.0), 0.8, &opts).unwrap();
        let exact1 = 0.8f64.powi(2) / 2.0 + exact0;
        assert!((w1 - exact1).abs() < 1e-8, "{w1} vs {exact1}");
    }

    #[test]
    fn generating_function_shift_identity() {
        // For V = U + f q: w_V(J) = w_U(J - f).
        let u = PotentialModel::Polynomial(systems::paper_quartic());
        let opts = SolverOptions::default();
        let t1 = ts(1.3);
        let cases = [(0.4, 0.0), (-0.6, 0.3), (0.25, -0.5), (0.9, 0.7), (-0.35, -0.2)];
        for &(f, j) in &cases {
            let v = PotentialModel::Tilted { base: Box::new(u.clone()), f, c: 0.0 };
            let lhs = tilted_generating_function_adaptive(&v, &t1, j, &opts).unwrap();
            let rhs = tilted_generating_function_adaptive(&u, &t1, j - f, &opts).unwrap();
            assert!((lhs - rhs).abs() < 1e-9, "f={f}, J={j}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn generating_function_convexity_and_derivative() {
        let p = PotentialModel::Polynomial(systems::paper_quartic());
        let opts = SolverOptions::default();
        let t1 = ts(2.0);
        let js: Vec<f64> = (-4..=4).map(|i| i as f64 * 0.25).collect();
        let w: Vec<f64> = js
            .iter()
            .map(|&j| tilted_generating_function_adaptive(&p, &t1, j, &opts).unwrap())
            .collect();
        for i in 1..w.len() - 1 {
            let second = w[i + 1] - 2.0 * w[i] + w[i - 1];
            assert!(second >= -1e-9, "w not convex at J = {}", js[i]);
        }
        // dw/dJ at 0 equals <q> through an independent route.
        let h = 1e-3;
        let wp = tilted_generating_function_adaptive(&p, &t1, h, &opts).unwrap();
        let wm = tilted_generating_function_adaptive(&p, &t1, -h, &opts).unwrap();
        let s = solve_thermal(&p, &t1, &opts).unwrap();
        let q = thermal_expectation_q(&s, 2.0).unwrap();
        assert!(((wp - wm) / (2.0 * h) - q).abs() < 1e-6);
    }

    #[test]
    fn low_temperature_fluctuation_limit() {
        // C(0) - <q>^2 -> sum_{m>0} |<0|q|m>|^2 as beta -> inf.
        let beta = 100.0;
        let p = PotentialModel::Polynomial(systems::paper_quartic());
        let s = solve_thermal(&p, &ts(beta), &SolverOptions::default()).unwrap();
        let c0 = exact_autocorrelation(&s, beta, &[0.0]).unwrap().values[0].re;
        let q = thermal_expectation_q(&s, beta).unwrap();
        let direct: f64 = (1..s.n_states()).map(|m| s.q_element(m, 0).powi(2)).sum();
        assert!(
            (c0 - q * q - direct).abs() < 1e-8,
            "fluctuation {} vs ground-state sum {direct}",
            c0 - q * q
        );
    }
}
