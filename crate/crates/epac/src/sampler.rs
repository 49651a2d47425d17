//! Path-integral Monte Carlo estimation of the effective classical
//! potential by constrained-centroid sampling and mean-force integration.
//!
//! Paths are discretized into P beads and sampled in their normal-mode
//! (Fourier) representation with the zero mode frozen at the centroid, so
//! the constraint is a coordinate rather than a Lagrange multiplier. Two
//! movers run together: single-mode Gaussian proposals with per-mode widths
//! proportional to the free-mode width, and whole-path collective redraws
//! from a harmonic reference ensemble (the kinetic action plus a local
//! quadratic potential is diagonal in the modes, so the quadratic part is
//! sampled exactly and only the anharmonic remainder enters the Metropolis
//! correction). The collective redraws act as an independence sampler and
//! dominate the statistics for weakly anharmonic wells.
//!
//! The mean force at pinned centroid q_c is the constrained-ensemble
//! average of the bead-averaged V'(q); cumulative trapezoid integration
//! over the centroid grid recovers V^c up to an additive constant, which is
//! fixed either against the exact tilted free energy of the spectral
//! oracle or by thermodynamic integration from a harmonic reference.
//!
//! RNG: ChaCha8 (counter-based); grid point i uses stream i of the
//! configured seed, so tables are independent of scheduling and portable
//! across runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{PotentialModel, ThermoState};
use crate::numerics::{block_stats, PolyFit};
use crate::spectral::{tilted_generating_function_adaptive, SolverOptions};
use crate::transform::{w_of_fit, TableSource};

/// How the additive constant of a centroid table was fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstantMode {
    /// Match w(0) of the fitted table to the exact tilted free energy.
    OraclePin,
    /// Thermodynamic integration from a harmonic reference at the grid
    /// center; no oracle required.
    HarmonicTi,
    /// Table built from closed forms; the constant is already exact.
    Analytic,
}

impl ConstantMode {
    pub fn label(&self) -> &'static str {
        match self {
            ConstantMode::OraclePin => "oracle-pin",
            ConstantMode::HarmonicTi => "harmonic-ti",
            ConstantMode::Analytic => "analytic",
        }
    }
}

/// Monte Carlo run parameters.
#[derive(Debug, Clone, Copy)]
pub struct PathEnsembleConfig {
    /// Imaginary-time slices P (even, >= 2).
    pub beads: usize,
    pub sweeps: usize,
    pub burn_in: usize,
    /// Block length for error analysis; divides sweeps - burn_in.
    pub block_size: usize,
    pub seed: u64,
    /// Initial proposal width multiplier; auto-tuned during burn-in.
    pub step_scale: f64,
    /// Whole-path collective redraw attempted every this many sweeps.
    pub collective_every: usize,
}

impl PathEnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beads < 2 || self.beads % 2 != 0 {
            return Err(Error::InvalidConfig(format!("beads must be even and >= 2, got {}", self.beads)));
        }
        if self.sweeps <= self.burn_in {
            return Err(Error::InvalidConfig("sweeps must exceed burn_in".into()));
        }
        let production = self.sweeps - self.burn_in;
        if self.block_size == 0 || production % self.block_size != 0 {
            return Err(Error::InvalidConfig(format!(
                "block_size {} must divide production sweeps {production}",
                self.block_size
            )));
        }
        if !(self.step_scale > 0.0) {
            return Err(Error::InvalidConfig("step_scale must be positive".into()));
        }
        if self.collective_every == 0 {
            return Err(Error::InvalidConfig("collective_every must be >= 1".into()));
        }
        Ok(())
    }

    /// Default bead count ladder: 64 for beta <= 1, 256 for beta <= 10,
    /// 1024 beyond.
    pub fn default_beads(beta: f64) -> usize {
        if beta <= 1.0 {
            64
        } else if beta <= 10.0 {
            256
        } else {
            1024
        }
    }

    /// Production defaults sized so that collective redraws deliver a few
    /// thousand effectively independent samples per grid point.
    pub fn for_beta(beta: f64, seed: u64) -> Self {
        let beads = Self::default_beads(beta);
        let (sweeps, burn_in) = if beta <= 0.2 {
            // Paths are nearly rigid at high temperature; chains decorrelate
            // almost immediately.
            (6_500, 500)
        } else if beads >= 1024 {
            (9_000, 1_000)
        } else {
            (26_000, 2_000)
        };
        let block_size = (sweeps - burn_in) / 50;
        Self { beads, sweeps, burn_in, block_size, seed, step_scale: 1.0, collective_every: 10 }
    }
}

/// Centroid grid sizes that keep the cumulative-trapezoid bias under the
/// statistical error for the deep grids mandated at small beta.
pub fn suggested_grid_points(beta: f64) -> usize {
    if beta <= 0.02 {
        801
    } else if beta <= 0.2 {
        101
    } else if beta <= 2.0 {
        81
    } else if beta <= 20.0 {
        49
    } else {
        33
    }
}

/// Sampled effective classical potential on a centroid grid.
#[derive(Debug, Clone)]
pub struct CentroidPotentialTable {
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    /// Statistical error of v relative to the integration anchor (the
    /// central grid point); the anchor itself carries the pin.
    pub std_err: Vec<f64>,
    pub force: Vec<f64>,
    pub force_err: Vec<f64>,
    pub fit: PolyFit,
    pub constant_mode: ConstantMode,
    pub beta: f64,
    pub mass: f64,
    pub diagnostics: SamplerDiagnostics,
    /// Cached pin value (exact w(0) or TI constant) for cheap re-assembly.
    pin_value: f64,
    /// What the fit subtracted and which basis parity it used.
    fit_plan: FitPlan,
}

/// The fit operates on the difference V^c - V: the quantum correction is
/// small and smooth, so low-degree polynomials track it even on the deep
/// grids required at small beta (where V^c itself spans 40/beta). For a
/// tilted even potential the difference is even by the decoupling of the
/// linear term, which fixes the fit basis.
#[derive(Debug, Clone)]
struct FitPlan {
    model: PotentialModel,
    even_delta: bool,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SamplerDiagnostics {
    pub acceptance_local: f64,
    pub acceptance_collective: f64,
    pub step_scale: f64,
    pub beads: usize,
}

impl CentroidPotentialTable {
    pub fn source_kind(&self) -> TableSource {
        match self.constant_mode {
            ConstantMode::Analytic => TableSource::Analytic,
            _ => TableSource::Sampled,
        }
    }

    /// Largest |fit - value| over the grid in units of 3 sigma + floor.
    pub fn fit_residual_score(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.q.len() {
            let tol = 3.0 * self.std_err[i] + residual_floor(self.v[i]);
            worst = worst.max((self.fit.eval(self.q[i]) - self.v[i]).abs() / tol);
        }
        worst
    }

    /// Re-assemble the table from replacement force values (parametric
    /// bootstrap); reuses the cached pin value and fit plan.
    pub fn rebuilt_with_forces(&self, forces: &[f64]) -> Result<CentroidPotentialTable> {
        assert_eq!(forces.len(), self.q.len());
        assemble_table(
            &self.q,
            forces,
            &self.force_err,
            self.beta,
            self.mass,
            self.constant_mode,
            self.pin_value,
            &self.fit_plan,
            self.diagnostics,
        )
    }
}

fn residual_floor(v: f64) -> f64 {
    1e-9 * (1.0 + v.abs())
}

// ---------------------------------------------------------------------------
// Normal-mode machinery
// ---------------------------------------------------------------------------

/// Orthonormal real Fourier modes of a P-bead ring, zero mode excluded.
struct ModeTable {
    p: usize,
    /// phi[k * p + j]: amplitude of mode k at bead j.
    phi: Vec<f64>,
    /// Kinetic eigenvalue 4 sin^2(pi k / P) per mode.
    lambda: Vec<f64>,
}

impl ModeTable {
    fn new(p: usize) -> Self {
        let n_modes = p - 1;
        let mut phi = vec![0.0; n_modes * p];
        let mut lambda = vec![0.0; n_modes];
        let norm2 = (2.0 / p as f64).sqrt();
        let mut idx = 0;
        for k in 1..p / 2 {
            let lam = 4.0 * (std::f64::consts::PI * k as f64 / p as f64).sin().powi(2);
            for j in 0..p {
                let arg = 2.0 * std::f64::consts::PI * (k * j) as f64 / p as f64;
                phi[idx * p + j] = norm2 * arg.cos();
                phi[(idx + 1) * p + j] = norm2 * arg.sin();
            }
            lambda[idx] = lam;
            lambda[idx + 1] = lam;
            idx += 2;
        }
        // Nyquist mode (P even).
        let norm1 = (1.0 / p as f64).sqrt();
        for j in 0..p {
            phi[idx * p + j] = if j % 2 == 0 { norm1 } else { -norm1 };
        }
        lambda[idx] = 4.0;
        Self { p, phi, lambda }
    }
}

trait PotFn: Sync {
    fn v(&self, q: f64) -> f64;
    fn dv(&self, q: f64) -> f64;
    fn d2v(&self, q: f64) -> f64;
}

impl PotFn for PotentialModel {
    fn v(&self, q: f64) -> f64 {
        self.evaluate(q)
    }
    fn dv(&self, q: f64) -> f64 {
        self.derivative(q)
    }
    fn d2v(&self, q: f64) -> f64 {
        self.second_derivative(q)
    }
}

/// (1 - lambda) * [V(q_ref) + m Omega^2 (q - q_ref)^2 / 2] + lambda * V(q),
/// the thermodynamic-integration path.
struct MixPot<'a> {
    inner: &'a PotentialModel,
    q_ref: f64,
    v_ref: f64,
    m_omega2: f64,
    lambda: f64,
}

impl<'a> MixPot<'a> {
    fn reference_v(&self, q: f64) -> f64 {
        let d = q - self.q_ref;
        self.v_ref + 0.5 * self.m_omega2 * d * d
    }
}

impl<'a> PotFn for MixPot<'a> {
    fn v(&self, q: f64) -> f64 {
        (1.0 - self.lambda) * self.reference_v(q) + self.lambda * self.inner.v(q)
    }
    fn dv(&self, q: f64) -> f64 {
        (1.0 - self.lambda) * self.m_omega2 * (q - self.q_ref) + self.lambda * self.inner.dv(q)
    }
    fn d2v(&self, q: f64) -> f64 {
        (1.0 - self.lambda) * self.m_omega2 + self.lambda * self.inner.d2v(q)
    }
}

/// Constrained non-zero-mode fluctuation width of a harmonic well:
/// <(q - q_c)^2> = (1/(2 m w)) coth(beta w / 2) - 1/(beta m w^2).
fn constrained_width2(beta: f64, mass: f64, omega: f64) -> f64 {
    let u = beta * omega / 2.0;
    if u < 1e-4 {
        // coth u - 1/u = u/3 - u^3/45 + ...
        beta / (12.0 * mass) * (1.0 - u * u / 15.0)
    } else {
        (u.tanh().recip() - u.recip()) / (2.0 * mass * omega)
    }
}

/// Reference frequency for the collective mover: curvature of the
/// potential smeared over the self-consistent quantum fluctuation width
/// (three fixed-point passes, 5-point Gauss-Hermite smear).
fn reference_frequency(pot: &dyn PotFn, beta: f64, mass: f64, q_c: f64) -> f64 {
    const GH_NODES: [f64; 5] = [0.0, 0.9585724646138185, -0.9585724646138185, 2.0201828704560856, -2.0201828704560856];
    const GH_WEIGHTS: [f64; 5] = [0.5333333333333333, 0.2220759220056126, 0.2220759220056126, 0.011257411327720688, 0.011257411327720688];
    let floor = 1e-3;
    let mut omega = (pot.d2v(q_c).max(0.0) / mass).sqrt().max(floor);
    for _ in 0..3 {
        let sigma = constrained_width2(beta, mass, omega).sqrt();
        let smeared: f64 = GH_NODES
            .iter()
            .zip(&GH_WEIGHTS)
            .map(|(&t, &w)| w * pot.d2v(q_c + std::f64::consts::SQRT_2 * sigma * t))
            .sum();
        omega = (smeared.max(0.0) / mass).sqrt().max(floor);
    }
    omega
}

struct Chain<'a> {
    pot: &'a dyn PotFn,
    table: Arc<ModeTable>,
    mass: f64,
    dtau: f64,
    q_c: f64,
    modes: Vec<f64>,
    beads: Vec<f64>,
    v_cache: Vec<f64>,
    scratch: Vec<f64>,
    sigma_free: Vec<f64>,
    sigma_ref: Vec<f64>,
    m_omega_ref2: f64,
    step_scale: f64,
    rng: ChaCha8Rng,
    acc_local: u64,
    try_local: u64,
    acc_coll: u64,
    try_coll: u64,
}

impl<'a> Chain<'a> {
    fn new(
        pot: &'a dyn PotFn,
        table: Arc<ModeTable>,
        ts: &ThermoState,
        q_c: f64,
        cfg: &PathEnsembleConfig,
        stream: u64,
    ) -> Self {
        let p = table.p;
        let dtau = ts.beta / p as f64;
        let omega_ref = reference_frequency(pot, ts.beta, ts.mass, q_c);
        let m_omega_ref2 = ts.mass * omega_ref * omega_ref;
        let sigma_free: Vec<f64> =
            table.lambda.iter().map(|&l| (dtau / (ts.mass * l)).sqrt()).collect();
        let sigma_ref: Vec<f64> = table
            .lambda
            .iter()
            .map(|&l| (1.0 / (ts.mass * l / dtau + m_omega_ref2 * dtau)).sqrt())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(stream);
        let mut chain = Self {
            pot,
            mass: ts.mass,
            dtau,
            q_c,
            modes: vec![0.0; p - 1],
            beads: vec![q_c; p],
            v_cache: vec![pot.v(q_c); p],
            scratch: vec![0.0; p],
            sigma_free,
            sigma_ref,
            m_omega_ref2,
            step_scale: cfg.step_scale,
            rng,
            acc_local: 0,
            try_local: 0,
            acc_coll: 0,
            try_coll: 0,
            table,
        };
        // Start from a draw of the reference ensemble.
        chain.resample_from_reference();
        chain
    }

    fn resample_from_reference(&mut self) {
        let p = self.table.p;
        for k in 0..p - 1 {
            let g: f64 = self.rng.sample(StandardNormal);
            self.modes[k] = self.sigma_ref[k] * g;
        }
        self.synthesize_beads();
    }

    fn synthesize_beads(&mut self) {
        let p = self.table.p;
        self.beads.iter_mut().for_each(|b| *b = self.q_c);
        for k in 0..p - 1 {
            let x = self.modes[k];
            if x == 0.0 {
                continue;
            }
            let row = &self.table.phi[k * p..(k + 1) * p];
            for (b, &f) in self.beads.iter_mut().zip(row) {
                *b += x * f;
            }
        }
        for (c, &b) in self.v_cache.iter_mut().zip(&self.beads) {
            *c = self.pot.v(b);
        }
    }

    fn mode_move(&mut self, k: usize) {
        let p = self.table.p;
        self.try_local += 1;
        let g: f64 = self.rng.sample(StandardNormal);
        let delta = self.sigma_free[k] * self.step_scale * g;
        let row = &self.table.phi[k * p..(k + 1) * p];
        let mut dpot = 0.0;
        for j in 0..p {
            let vnew = self.pot.v(self.beads[j] + delta * row[j]);
            self.scratch[j] = vnew;
            dpot += vnew - self.v_cache[j];
        }
        let x = self.modes[k];
        let kappa = self.mass * self.table.lambda[k] / self.dtau;
        let ds = 0.5 * kappa * ((x + delta) * (x + delta) - x * x) + self.dtau * dpot;
        if ds <= 0.0 || self.rng.gen::<f64>() < (-ds).exp() {
            self.acc_local += 1;
            self.modes[k] = x + delta;
            for j in 0..p {
                self.beads[j] += delta * row[j];
            }
            self.v_cache.copy_from_slice(&self.scratch);
        }
    }

    /// Whole-path redraw from the harmonic reference ensemble, accepted on
    /// the anharmonic remainder of the action (independence sampler).
    fn collective_move(&mut self) {
        let p = self.table.p;
        self.try_coll += 1;
        let mut new_modes = vec![0.0; p - 1];
        let mut mode_sq_new = 0.0;
        let mut mode_sq_old = 0.0;
        for k in 0..p - 1 {
            let g: f64 = self.rng.sample(StandardNormal);
            new_modes[k] = self.sigma_ref[k] * g;
            mode_sq_new += new_modes[k] * new_modes[k];
            mode_sq_old += self.modes[k] * self.modes[k];
        }
        let mut new_beads = vec![self.q_c; p];
        for k in 0..p - 1 {
            let x = new_modes[k];
            if x == 0.0 {
                continue;
            }
            let row = &self.table.phi[k * p..(k + 1) * p];
            for (b, &f) in new_beads.iter_mut().zip(row) {
                *b += x * f;
            }
        }
        let pot_new: f64 = new_beads.iter().map(|&b| self.pot.v(b)).sum();
        let pot_old: f64 = self.v_cache.iter().sum();
        let dw = self.dtau
            * ((pot_new - 0.5 * self.m_omega_ref2 * mode_sq_new)
                - (pot_old - 0.5 * self.m_omega_ref2 * mode_sq_old));
        if dw <= 0.0 || self.rng.gen::<f64>() < (-dw).exp() {
            self.acc_coll += 1;
            self.modes = new_modes;
            self.beads = new_beads;
            for (c, &b) in self.v_cache.iter_mut().zip(&self.beads) {
                *c = self.pot.v(b);
            }
        }
    }

    fn sweep(&mut self) {
        for k in 0..self.table.p - 1 {
            self.mode_move(k);
        }
    }

    /// Bead-averaged V'(q): the constrained mean-force estimator.
    fn mean_force_sample(&self) -> f64 {
        self.beads.iter().map(|&b| self.pot.dv(b)).sum::<f64>() / self.table.p as f64
    }

    /// Bead-averaged difference to the TI reference potential.
    fn ref_delta_sample(&self, mix: &MixPot) -> f64 {
        self.beads.iter().map(|&b| mix.inner.v(b) - mix.reference_v(b)).sum::<f64>()
            / self.table.p as f64
    }

    fn local_rate(&self) -> f64 {
        if self.try_local == 0 {
            0.0
        } else {
            self.acc_local as f64 / self.try_local as f64
        }
    }

    fn collective_rate(&self) -> f64 {
        if self.try_coll == 0 {
            0.0
        } else {
            self.acc_coll as f64 / self.try_coll as f64
        }
    }

    fn reset_counters(&mut self) {
        self.acc_local = 0;
        self.try_local = 0;
        self.acc_coll = 0;
        self.try_coll = 0;
    }
}

enum Observable<'m> {
    MeanForce,
    RefDelta(&'m MixPot<'m>),
}

struct RunOutput {
    samples: Vec<f64>,
    diagnostics: SamplerDiagnostics,
}

fn run_chain(
    pot: &dyn PotFn,
    table: Arc<ModeTable>,
    ts: &ThermoState,
    q_c: f64,
    cfg: &PathEnsembleConfig,
    stream: u64,
    observable: Observable,
) -> Result<RunOutput> {
    let mut chain = Chain::new(pot, table, ts, q_c, cfg, stream);
    let mut samples = Vec::with_capacity(cfg.sweeps - cfg.burn_in);
    for sweep in 0..cfg.sweeps {
        if sweep % cfg.collective_every == 0 {
            chain.collective_move();
        }
        chain.sweep();
        if sweep < cfg.burn_in {
            // Auto-tune toward ~50% local acceptance.
            if sweep % 200 == 199 {
                let rate = chain.local_rate();
                if rate > 0.55 {
                    chain.step_scale = (chain.step_scale * 1.25).min(50.0);
                } else if rate < 0.45 {
                    chain.step_scale = (chain.step_scale * 0.8).max(1e-3);
                }
                chain.reset_counters();
            }
            if sweep + 1 == cfg.burn_in {
                chain.reset_counters();
            }
        } else {
            samples.push(match observable {
                Observable::MeanForce => chain.mean_force_sample(),
                Observable::RefDelta(mix) => chain.ref_delta_sample(mix),
            });
        }
    }
    let rate = chain.local_rate();
    if !(0.2..=0.8).contains(&rate) {
        return Err(Error::AcceptanceOutOfRange { rate });
    }
    Ok(RunOutput {
        samples,
        diagnostics: SamplerDiagnostics {
            acceptance_local: rate,
            acceptance_collective: chain.collective_rate(),
            step_scale: chain.step_scale,
            beads: cfg.beads,
        },
    })
}

// ---------------------------------------------------------------------------
// Public operations
// ---------------------------------------------------------------------------

/// Block-averaged estimate of the constrained mean force dV^c/dq_c at the
/// pinned centroid, with one standard error from block analysis.
pub fn centroid_mean_force(
    p: &PotentialModel,
    ts: &ThermoState,
    q_c: f64,
    cfg: &PathEnsembleConfig,
) -> Result<(f64, f64)> {
    cfg.validate()?;
    if !p.is_confining() {
        return Err(Error::NonConfiningPotential);
    }
    let table = Arc::new(ModeTable::new(cfg.beads));
    let out = run_chain(p, table, ts, q_c, cfg, 0, Observable::MeanForce)?;
    Ok(block_stats(&out.samples, cfg.block_size))
}

/// Symmetric uniform centroid grid of n points around the classical
/// minimum, extended until beta * (V - V_min) reaches ~40 on both ends.
pub fn centroid_grid(p: &PotentialModel, ts: &ThermoState, n: usize) -> Vec<f64> {
    let center = p.classical_minimum();
    let v0 = p.evaluate(center);
    let target = 40.0 / ts.beta;
    let mut span = 0.5;
    for _ in 0..200 {
        let worst =
            (p.evaluate(center + span) - v0).min(p.evaluate(center - span) - v0);
        if worst >= target {
            break;
        }
        span *= 1.2;
    }
    span *= 1.05;
    (0..n).map(|i| center - span + 2.0 * span * i as f64 / (n - 1) as f64).collect()
}

#[allow(clippy::too_many_arguments)]
fn assemble_table(
    grid: &[f64],
    forces: &[f64],
    force_err: &[f64],
    beta: f64,
    mass: f64,
    constant_mode: ConstantMode,
    pin_value: f64,
    plan: &FitPlan,
    diagnostics: SamplerDiagnostics,
) -> Result<CentroidPotentialTable> {
    let n = grid.len();
    let h = grid[1] - grid[0];
    let anchor = (n - 1) / 2;

    // Cumulative trapezoid relative to the central grid point; errors
    // accumulate outward on each side.
    let mut v_rel = vec![0.0; n];
    let mut var_rel = vec![0.0; n];
    for j in anchor + 1..n {
        v_rel[j] = v_rel[j - 1] + 0.5 * h * (forces[j - 1] + forces[j]);
        let mut var = 0.0;
        for (i, e) in force_err.iter().enumerate().take(j + 1).skip(anchor) {
            let c = if i == anchor || i == j { 0.5 * h } else { h };
            var += c * c * e * e;
        }
        var_rel[j] = var;
    }
    for j in (0..anchor).rev() {
        v_rel[j] = v_rel[j + 1] - 0.5 * h * (forces[j] + forces[j + 1]);
        let mut var = 0.0;
        for (i, e) in force_err.iter().enumerate().take(anchor + 1).skip(j) {
            let c = if i == anchor || i == j { 0.5 * h } else { h };
            var += c * c * e * e;
        }
        var_rel[j] = var;
    }
    let std_err: Vec<f64> = var_rel.iter().map(|v| v.sqrt()).collect();

    // Classical values; the sampler only accepts polynomial models.
    let vcl: Vec<f64> = grid.iter().map(|&q| plan.model.evaluate(q)).collect();
    let vcl_anchor = vcl[anchor];
    let vcl_min = vcl.iter().cloned().fold(f64::INFINITY, f64::min);
    let raw_classical = plan
        .model
        .monomial_coeffs()
        .ok_or(Error::NonConfiningPotential)?;

    // Quantum correction relative to the anchor, fitted with thermal
    // weights so the statistically relevant core dominates.
    let delta: Vec<f64> =
        (0..n).map(|i| v_rel[i] - (vcl[i] - vcl_anchor)).collect();
    let weights: Vec<f64> =
        vcl.iter().map(|&v| (-beta * (v - vcl_min) / 2.0).exp().max(1e-4)).collect();

    let center = 0.5 * (grid[0] + grid[n - 1]);
    let halfwidth = 0.5 * (grid[n - 1] - grid[0]);
    let bases: &[&[usize]] = if plan.even_delta {
        &[&[0, 2, 4], &[0, 2, 4, 6]]
    } else {
        &[&[0, 1, 2, 3, 4], &[0, 1, 2, 3, 4, 5, 6]]
    };
    let ts = ThermoState::new(beta, mass)?;
    let mut fit = None;
    for powers in bases {
        let coeffs = crate::numerics::polyfit_scaled_weighted(
            grid,
            &delta,
            Some(&weights),
            center,
            halfwidth,
            powers,
        )?;
        let delta_fit =
            PolyFit { center, halfwidth, powers: powers.to_vec(), coeffs };
        // Total fit: classical polynomial (re-anchored) plus the correction.
        let mut raw_total = delta_fit.raw_coeffs();
        if raw_total.len() < raw_classical.len() {
            raw_total.resize(raw_classical.len(), 0.0);
        }
        for (k, &c) in raw_classical.iter().enumerate() {
            raw_total[k] += c;
        }
        raw_total[0] -= vcl_anchor;
        let mut candidate = PolyFit::from_raw(center, halfwidth, &raw_total);
        // The anchor value is exact by construction (zero statistical
        // error), so anchor the fit there.
        let anchor_residual = candidate.eval(grid[anchor]) - v_rel[anchor];
        candidate.add_constant(-anchor_residual);
        // Residual test: 3 sigma plus the a-priori cumulative-trapezoid
        // bias budget (h^2/12) |F'(q) - F'(anchor)|, plus a 2% relative
        // slack deep in the tail where the quadrature weight is below
        // e^{-10}.
        let ok = (0..n).all(|i| {
            let trap_budget =
                h * h / 12.0 * (plan.model.second_derivative(grid[i]) - plan.model.second_derivative(grid[anchor])).abs();
            let slack = 0.02 * (vcl[i] - vcl_min - 10.0 / beta).max(0.0);
            (candidate.eval(grid[i]) - v_rel[i]).abs()
                <= 3.0 * std_err[i] + residual_floor(v_rel[i]) + trap_budget + slack
        });
        if ok {
            fit = Some(candidate);
            break;
        }
    }
    let mut fit = fit.ok_or_else(|| {
        Error::FitRejected("residuals exceed 3 sigma for degree-4 and degree-6 fits".into())
    })?;

    // Fix the additive constant.
    let constant = match constant_mode {
        ConstantMode::OraclePin => {
            // pin_value is the exact w(0); shifting V^c by C shifts w by -C.
            let w_rel = w_of_fit(&fit, &ts, 0.0)?;
            w_rel - pin_value
        }
        // pin_value is V^c at the anchor point, where v_rel = 0.
        ConstantMode::HarmonicTi => pin_value,
        ConstantMode::Analytic => pin_value,
    };
    let v: Vec<f64> = v_rel.iter().map(|x| x + constant).collect();
    fit.add_constant(constant);

    Ok(CentroidPotentialTable {
        q: grid.to_vec(),
        v,
        std_err,
        force: forces.to_vec(),
        force_err: force_err.to_vec(),
        fit,
        constant_mode,
        beta,
        mass,
        diagnostics,
        pin_value,
        fit_plan: plan.clone(),
    })
}

/// The quantum correction V^c - V is even when the classical potential is
/// an even polynomial or an even polynomial plus a linear tilt (by the
/// decoupling of the linear term).
fn delta_is_even(p: &PotentialModel) -> bool {
    match p {
        PotentialModel::Polynomial(poly) => poly.is_even(),
        PotentialModel::Tilted { base, .. } => delta_is_even(base),
        PotentialModel::Morse { .. } => false,
    }
}

/// Sample the effective classical potential on a centroid grid: mean forces
/// at every grid point (parallel, one RNG stream per point), cumulative
/// trapezoid integration, a smooth polynomial fit, and the additive
/// constant fixed per `constant_mode`.
pub fn build_centroid_table(
    p: &PotentialModel,
    ts: &ThermoState,
    grid: &[f64],
    cfg: &PathEnsembleConfig,
    constant_mode: ConstantMode,
) -> Result<CentroidPotentialTable> {
    cfg.validate()?;
    if !p.is_confining() {
        return Err(Error::NonConfiningPotential);
    }
    let n = grid.len();
    if n < 9 {
        return Err(Error::InvalidInput(format!("centroid grid needs >= 9 points, got {n}")));
    }
    let h = grid[1] - grid[0];
    let center = 0.5 * (grid[0] + grid[n - 1]);
    for (i, &q) in grid.iter().enumerate() {
        let expected = grid[0] + i as f64 * h;
        if (q - expected).abs() > 1e-9 * (1.0 + h.abs()) {
            return Err(Error::InvalidInput("centroid grid must be uniform".into()));
        }
        let mirror = grid[n - 1 - i];
        if (0.5 * (q + mirror) - center).abs() > 1e-9 * (1.0 + center.abs()) {
            return Err(Error::InvalidInput("centroid grid must be symmetric about its center".into()));
        }
    }
    let v_grid_min = grid.iter().map(|&q| p.evaluate(q)).fold(f64::INFINITY, f64::min);
    let edge_depth = ts.beta
        * (p.evaluate(grid[0]).min(p.evaluate(grid[n - 1])) - v_grid_min);
    if edge_depth < 25.0 {
        return Err(Error::InvalidInput(format!(
            "grid too narrow: beta * (V_edge - V_min) = {edge_depth:.1} < 25; widen the grid"
        )));
    }

    let table = Arc::new(ModeTable::new(cfg.beads));
    let results: Vec<Result<(f64, f64, SamplerDiagnostics)>> = grid
        .par_iter()
        .enumerate()
        .map(|(i, &q_c)| {
            let out =
                run_chain(p, Arc::clone(&table), ts, q_c, cfg, i as u64, Observable::MeanForce)?;
            let (mean, err) = block_stats(&out.samples, cfg.block_size);
            Ok((mean, err, out.diagnostics))
        })
        .collect();
    let mut forces = Vec::with_capacity(n);
    let mut force_err = Vec::with_capacity(n);
    let mut diag = SamplerDiagnostics::default();
    for r in results {
        let (f, e, d) = r?;
        forces.push(f);
        force_err.push(e);
        diag = d;
    }

    let anchor = (n - 1) / 2;
    let pin_value = match constant_mode {
        ConstantMode::OraclePin => {
            tilted_generating_function_adaptive(p, ts, 0.0, &SolverOptions::default())?
        }
        ConstantMode::HarmonicTi => {
            thermodynamic_integration_constant(p, ts, grid[anchor], cfg)?
        }
        ConstantMode::Analytic => {
            return Err(Error::InvalidInput(
                "Analytic constant mode is reserved for closed-form tables".into(),
            ))
        }
    };

    let plan = FitPlan { model: p.clone(), even_delta: delta_is_even(p) };
    assemble_table(grid, &forces, &force_err, ts.beta, ts.mass, constant_mode, pin_value, &plan, diag)
}

/// V^c at `q_ref` by thermodynamic integration from a harmonic reference:
/// V^c_ref(q_ref) is known in closed form, and the anharmonic remainder is
/// integrated over the mixing parameter with Gauss-Legendre nodes.
fn thermodynamic_integration_constant(
    p: &PotentialModel,
    ts: &ThermoState,
    q_ref: f64,
    cfg: &PathEnsembleConfig,
) -> Result<f64> {
    let omega = reference_frequency(p, ts.beta, ts.mass, q_ref);
    let u = ts.beta * omega / 2.0;
    let log_term = if u < 1e-6 { (u * u / 6.0).ln_1p() } else { (u.sinh() / u).ln() };
    let vc_ref = p.evaluate(q_ref) + log_term / ts.beta;

    let (nodes, weights) = crate::numerics::gauss_legendre(6);
    let table = Arc::new(ModeTable::new(cfg.beads));
    let contributions: Vec<Result<f64>> = nodes
        .par_iter()
        .zip(&weights)
        .enumerate()
        .map(|(i, (&x, &w))| {
            let lambda = 0.5 * (x + 1.0);
            let mix = MixPot {
                inner: p,
                q_ref,
                v_ref: p.evaluate(q_ref),
                m_omega2: ts.mass * omega * omega,
                lambda,
            };
            let out = run_chain(
                &mix,
                Arc::clone(&table),
                ts,
                q_ref,
                cfg,
                1000 + i as u64,
                Observable::RefDelta(&mix),
            )?;
            let (mean, _) = block_stats(&out.samples, cfg.block_size);
            Ok(0.5 * w * mean)
        })
        .collect();
    let mut correction = 0.0;
    for c in contributions {
        correction += c?;
    }
    Ok(vc_ref + correction)
}

/// Closed-form centroid table for the (tilted) harmonic oscillator:
/// V^c(q) = (1/2) m w^2 q^2 + f q + (1/beta) log(sinh(beta w/2)/(beta w/2)).
pub fn analytic_harmonic_table(
    ts: &ThermoState,
    omega: f64,
    f: f64,
    grid: &[f64],
) -> CentroidPotentialTable {
    let u = ts.beta * omega / 2.0;
    let constant = (u.sinh() / u).ln() / ts.beta;
    let n = grid.len();
    let values: Vec<f64> =
        grid.iter().map(|&q| 0.5 * ts.mass * omega * omega * q * q + f * q + constant).collect();
    let forces: Vec<f64> = grid.iter().map(|&q| ts.mass * omega * omega * q + f).collect();
    let center = 0.5 * (grid[0] + grid[n - 1]);
    let hw = 0.5 * (grid[n - 1] - grid[0]);
    // Exact expansion in t = (q - center)/hw.
    let k = 0.5 * ts.mass * omega * omega;
    let fit = PolyFit {
        center,
        halfwidth: hw,
        powers: vec![0, 1, 2],
        coeffs: vec![
            k * center * center + f * center + constant,
            (2.0 * k * center + f) * hw,
            k * hw * hw,
        ],
    };
    let model = crate::model::systems::asym_harmonic(ts.mass, omega, f);
    CentroidPotentialTable {
        q: grid.to_vec(),
        v: values,
        std_err: vec![0.0; n],
        force: forces,
        force_err: vec![0.0; n],
        fit,
        constant_mode: ConstantMode::Analytic,
        beta: ts.beta,
        mass: ts.mass,
        diagnostics: SamplerDiagnostics::default(),
        pin_value: constant,
        fit_plan: FitPlan { model, even_delta: f == 0.0 },
    }
}
