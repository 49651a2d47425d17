//! From the centroid potential to the standard effective potential:
//! quadrature for the generating function, numerical Legendre
//! transformation, and extraction of the minimum position, effective
//! frequency, and ground-state energy estimate.

use crate::error::{Error, Result};
use crate::model::ThermoState;
use crate::numerics::{brent_min, brent_root, log_integrate_exp, CubicSpline, PolyFit};
use crate::sampler::CentroidPotentialTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableSource {
    Sampled,
    Oracle,
    Analytic,
}

impl TableSource {
    pub fn label(&self) -> &'static str {
        match self {
            TableSource::Sampled => "sampled",
            TableSource::Oracle => "oracle",
            TableSource::Analytic => "analytic",
        }
    }
}

/// w(J) on a source grid, convex by construction.
#[derive(Debug, Clone)]
pub struct GeneratingFunctionTable {
    j: Vec<f64>,
    w: Vec<f64>,
    pub source: TableSource,
    pub beta: f64,
    pub mass: f64,
    spline: CubicSpline,
}

impl GeneratingFunctionTable {
    /// Validates a strictly increasing J grid and convexity of w
    /// (nonnegative second differences within 1e-9 of the value scale).
    pub fn new(
        j: Vec<f64>,
        w: Vec<f64>,
        source: TableSource,
        ts: &ThermoState,
    ) -> Result<Self> {
        if j.len() != w.len() || j.len() < 4 {
            return Err(Error::InvalidInput("generating function needs >= 4 grid points".into()));
        }
        for pair in j.windows(2) {
            if !(pair[1] > pair[0]) {
                return Err(Error::InvalidInput("J grid must be strictly increasing".into()));
            }
        }
        let scale = w.iter().fold(0.0f64, |a, &x| a.max(x.abs())).max(1.0);
        for i in 1..j.len() - 1 {
            let h0 = j[i] - j[i - 1];
            let h1 = j[i + 1] - j[i];
            let second = (w[i + 1] - w[i]) / h1 - (w[i] - w[i - 1]) / h0;
            if second < -1e-9 * scale {
                return Err(Error::InvalidInput(format!(
                    "w not convex at J = {} (second difference {second:.3e})",
                    j[i]
                )));
            }
        }
        let spline = CubicSpline::new(&j, &w)?;
        Ok(Self { j, w, source, beta: ts.beta, mass: ts.mass, spline })
    }

    pub fn j_grid(&self) -> &[f64] {
        &self.j
    }

    pub fn w_values(&self) -> &[f64] {
        &self.w
    }

    pub fn w(&self, j: f64) -> f64 {
        self.spline.eval(j)
    }

    /// dw/dJ from the cubic interpolant.
    pub fn dw(&self, j: f64) -> f64 {
        self.spline.deriv(j)
    }

    pub fn d2w(&self, j: f64) -> f64 {
        self.spline.second_deriv(j)
    }

    /// Range of dw/dJ attained on the grid, i.e. the reachable Q window.
    pub fn q_range(&self) -> (f64, f64) {
        (self.spline.deriv(self.j[0]), self.spline.deriv(*self.j.last().unwrap()))
    }

    /// Solve Q = dw/dJ for J (monotone root-find on the differentiated
    /// interpolant).
    pub fn source_for(&self, q: f64) -> Result<f64> {
        let (lo, hi) = self.q_range();
        if q < lo || q > hi {
            return Err(Error::QOutOfRange { q, lo, hi });
        }
        // Bracket using the knots; dw at knots is nondecreasing for convex data.
        let n = self.j.len();
        let mut a = self.j[0];
        let mut b = self.j[n - 1];
        for k in 1..n {
            if self.spline.deriv(self.j[k]) >= q {
                a = self.j[k - 1];
                b = self.j[k];
                break;
            }
        }
        let f = |jj: f64| self.spline.deriv(jj) - q;
        brent_root(&f, a, b, 1e-13 * (1.0 + a.abs().max(b.abs())))
    }

    /// Legendre value at a single point: V(Q) = J* Q - w(J*).
    pub fn conjugate_at(&self, q: f64) -> Result<f64> {
        let j = self.source_for(q)?;
        Ok(j * q - self.spline.eval(j))
    }
}

/// Evaluate the generating function of a fitted centroid potential by
/// quadrature:
/// w(J) = (1/beta) log [ sqrt(m / (2 pi beta)) * integral dq e^{-beta (V(q) - J q)} ].
pub fn w_of_fit(fit: &PolyFit, ts: &ThermoState, j: f64) -> Result<f64> {
    if !fit.is_confining() {
        return Err(Error::IntegrandNotLocalized);
    }
    let beta = ts.beta;
    let phi = move |q: f64| -beta * (fit.eval(q) - j * q);

    // Locate the integrand peak: coarse scan, then golden refinement.
    let mut lo = fit.center - 3.0 * fit.halfwidth;
    let mut hi = fit.center + 3.0 * fit.halfwidth;
    let (mut best_q, mut best_phi) = (fit.center, phi(fit.center));
    for _ in 0..60 {
        let mut improved = false;
        for i in 0..=256 {
            let q = lo + (hi - lo) * i as f64 / 256.0;
            let p = phi(q);
            if p > best_phi {
                best_phi = p;
                best_q = q;
                improved = true;
            }
        }
        // Peak on the boundary means the scan window is too narrow.
        if (best_q - lo).abs() < 1e-12 * (1.0 + lo.abs()) {
            lo -= hi - lo;
        } else if (best_q - hi).abs() < 1e-12 * (1.0 + hi.abs()) {
            hi += hi - lo;
        } else if !improved || true {
            break;
        }
    }
    let step = (hi - lo) / 256.0;
    let refine = brent_min(&|q: f64| -phi(q), best_q - 2.0 * step, best_q + 2.0 * step, 1e-12);
    if phi(refine) > best_phi {
        best_q = refine;
        best_phi = phi(refine);
    }

    // Expand integration limits until the integrand decays by e^{-42}
    // relative to its peak (below 1e-16 of the peak).
    let expand = |dir: f64| -> Result<f64> {
        let mut d = fit.halfwidth.max(1e-6) * 0.5;
        for _ in 0..500 {
            let q = best_q + dir * d;
            if phi(q) <= best_phi - 42.0 {
                return Ok(q);
            }
            d *= 1.35;
        }
        Err(Error::IntegrandNotLocalized)
    };
    let q_lo = expand(-1.0)?;
    let q_hi = expand(1.0)?;
    let log_i = log_integrate_exp(&phi, q_lo, q_hi, best_phi, 1e-13)?;
    Ok((0.5 * (ts.mass / (2.0 * std::f64::consts::PI * beta)).ln() + log_i) / beta)
}

/// Build the generating function table from a centroid-potential table by
/// quadrature on its smooth fit.
pub fn generating_function(
    table: &CentroidPotentialTable,
    ts: &ThermoState,
    j_grid: &[f64],
) -> Result<GeneratingFunctionTable> {
    let w = j_grid.iter().map(|&j| w_of_fit(&table.fit, ts, j)).collect::<Result<Vec<_>>>()?;
    GeneratingFunctionTable::new(j_grid.to_vec(), w, table.source_kind(), ts)
}

/// The standard effective potential on a position grid.
#[derive(Debug, Clone)]
pub struct EffectivePotentialCurve {
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    /// Supremum source J*(Q) at each grid point; dV/dQ = J*(Q).
    pub j_star: Vec<f64>,
}

impl EffectivePotentialCurve {
    pub fn spline(&self) -> Result<CubicSpline> {
        CubicSpline::new(&self.q, &self.v)
    }

    /// Largest negative second difference relative to the value scale.
    pub fn convexity_defect(&self) -> f64 {
        let scale = self.v.iter().fold(0.0f64, |a, &x| a.max(x.abs())).max(1.0);
        let mut worst = 0.0f64;
        for i in 1..self.q.len() - 1 {
            let h0 = self.q[i] - self.q[i - 1];
            let h1 = self.q[i + 1] - self.q[i];
            let second = (self.v[i + 1] - self.v[i]) / h1 - (self.v[i] - self.v[i - 1]) / h0;
            worst = worst.max(-second / scale);
        }
        worst
    }

    /// Largest violation of V(Q) >= J Q - w(J) over all (grid J, grid Q)
    /// pairs, relative to the value scale.
    pub fn fenchel_defect(&self, g: &GeneratingFunctionTable) -> f64 {
        let scale = self.v.iter().fold(0.0f64, |a, &x| a.max(x.abs())).max(1.0);
        let mut worst = 0.0f64;
        for (&j, &w) in g.j_grid().iter().zip(g.w_values()) {
            for (&q, &v) in self.q.iter().zip(&self.v) {
                worst = worst.max((j * q - w - v) / scale);
            }
        }
        worst
    }
}

/// Legendre transform V(Q) = sup_J { J Q - w(J) } on the requested Q grid.
pub fn legendre_transform(
    g: &GeneratingFunctionTable,
    q_grid: &[f64],
) -> Result<EffectivePotentialCurve> {
    let mut v = Vec::with_capacity(q_grid.len());
    let mut j_star = Vec::with_capacity(q_grid.len());
    for &q in q_grid {
        let j = g.source_for(q)?;
        j_star.push(j);
        v.push(j * q - g.w(j));
    }
    Ok(EffectivePotentialCurve { q: q_grid.to_vec(), v, j_star })
}

/// Minimum position, effective frequency, and related quantities.
#[derive(Debug, Clone, Copy)]
pub struct EpacParameters {
    pub q_min: f64,
    pub omega_beta: f64,
    /// Effective frequency of the symmetric reference potential, when the
    /// parameters came out of the symmetric-part pipeline.
    pub omega_s: Option<f64>,
    /// V_beta(Q_min); approaches the ground-state energy for large beta.
    pub e0_estimate: Option<f64>,
}

/// Extraction result carrying the independent curve-route cross-check.
#[derive(Debug, Clone, Copy)]
pub struct ExtractionReport {
    pub params: EpacParameters,
    /// Q at the minimum found by minimizing the transformed curve.
    pub q_min_curve: f64,
    /// Frequency from the curvature of the transformed curve.
    pub omega_curve: f64,
}

/// Extract parameters at the origin of the source grid: Q_min = dw/dJ(0),
/// omega = 1/sqrt(m d2w/dJ2(0)). The same quantities are recomputed by
/// minimizing the Legendre-transformed curve; the two routes must agree to
/// 1e-6 relative.
pub fn extract_parameters(g: &GeneratingFunctionTable, ts: &ThermoState) -> Result<ExtractionReport> {
    extract_tilted(g, ts, 0.0)
}

/// Extract the parameters of V_g(Q) + f_add * Q, i.e. of the transformed
/// potential tilted by an extra linear term. The stationary source is
/// J = -f_add.
pub fn extract_tilted(
    g: &GeneratingFunctionTable,
    ts: &ThermoState,
    f_add: f64,
) -> Result<ExtractionReport> {
    let j0 = -f_add;
    let n = g.j.len();
    if !(g.j[0] < j0 && j0 < g.j[n - 1]) {
        return Err(Error::InvalidInput(format!(
            "source J = {j0} must be interior to the grid [{}, {}]",
            g.j[0],
            g.j[n - 1]
        )));
    }
    let w2 = g.d2w(j0);
    if w2 <= 0.0 {
        return Err(Error::NonConvexAtOrigin(w2));
    }
    let q_min = g.dw(j0);
    let omega = 1.0 / (ts.mass * w2).sqrt();

    // Curve route: minimize V(Q) + f_add Q through the transform itself.
    let sigma_q = w2.sqrt();
    let (qlo_r, qhi_r) = g.q_range();
    let margin = 0.02 * (qhi_r - qlo_r);
    let win_lo = (q_min - 4.0 * sigma_q).max(qlo_r + margin);
    let win_hi = (q_min + 4.0 * sigma_q).min(qhi_r - margin);
    if !(win_lo < win_hi) {
        return Err(Error::QOutOfRange { q: q_min, lo: qlo_r, hi: qhi_r });
    }
    let vf = |q: f64| g.conjugate_at(q).unwrap_or(f64::INFINITY) + f_add * q;
    let q_min_curve = brent_min(&vf, win_lo, win_hi, 1e-12);
    let delta = (1e-3 * sigma_q).max(1e-7);
    let curvature =
        (vf(q_min_curve + delta) - 2.0 * vf(q_min_curve) + vf(q_min_curve - delta)) / (delta * delta);
    if curvature <= 0.0 {
        return Err(Error::NonConvexAtOrigin(curvature));
    }
    let omega_curve = (curvature / ts.mass).sqrt();

    let q_scale = sigma_q.max(q_min.abs());
    if (q_min - q_min_curve).abs() > 1e-6 * q_scale
        || (omega - omega_curve).abs() > 1e-6 * omega
    {
        return Err(Error::NotConverged(format!(
            "extraction routes disagree: Q_min {q_min} vs {q_min_curve}, omega {omega} vs {omega_curve}"
        )));
    }

    let e0 = vf(q_min_curve);
    Ok(ExtractionReport {
        params: EpacParameters {
            q_min,
            omega_beta: omega,
            omega_s: None,
            e0_estimate: Some(e0),
        },
        q_min_curve,
        omega_curve,
    })
}

/// E0 estimate: the minimum value of the transformed curve (meaningful at
/// large beta).
pub fn ground_state_energy(curve: &EffectivePotentialCurve) -> Result<f64> {
    let spline = curve.spline()?;
    let (a, b) = (curve.q[0], *curve.q.last().unwrap());
    let qm = brent_min(&|q| spline.eval(q), a, b, 1e-12);
    Ok(spline.eval(qm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ThermoState;
    use crate::sampler::analytic_harmonic_table;
    use approx::assert_relative_eq;

    fn ts(beta: f64) -> ThermoState {
        ThermoState::new(beta, 1.0).unwrap()
    }

    fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    /// w(J) for the harmonic oscillator: J^2/(2 m w^2) - (1/beta) log(2 sinh(beta w/2)).
    fn harmonic_w(beta: f64, mass: f64, omega: f64, f: f64, j: f64) -> f64 {
        let je = j - f;
        je * je / (2.0 * mass * omega * omega)
            - (2.0 * (beta * omega / 2.0).sinh()).ln() / beta
    }

    #[test]
    fn quadrature_matches_harmonic_closed_form() {
        let t = ts(1.0);
        let table = analytic_harmonic_table(&t, 1.0, 0.0, &grid(-4.0, 4.0, 21));
        for j in [-1.0, -0.3, 0.0, 0.5, 1.0] {
            let w = w_of_fit(&table.fit, &t, j).unwrap();
            assert_relative_eq!(w, harmonic_w(1.0, 1.0, 1.0, 0.0, j), epsilon = 1e-11);
        }
        // beta = 1, J = 1: 0.5 - log(2 sinh 0.5) ~ 0.45868
        let w1 = w_of_fit(&table.fit, &t, 1.0).unwrap();
        assert_relative_eq!(w1, 0.5 - (2.0 * 0.5f64.sinh()).ln(), epsilon = 1e-11);

        // beta = 2, J = 0 -> -(1/2) log(2 sinh 1)
        let t2 = ts(2.0);
        let table2 = analytic_harmonic_table(&t2, 1.0, 0.0, &grid(-4.0, 4.0, 21));
        let w0 = w_of_fit(&table2.fit, &t2, 0.0).unwrap();
        assert_relative_eq!(w0, -0.5 * (2.0 * 1.0f64.sinh()).ln(), epsilon = 1e-11);
    }

    #[test]
    fn constant_shift_moves_w_by_minus_c() {
        let t = ts(1.5);
        let g0 = analytic_harmonic_table(&t, 1.0, 0.0, &grid(-4.0, 4.0, 21));
        let mut fit_shift = g0.fit.clone();
        fit_shift.add_constant(0.7);
        for j in [-0.5, 0.0, 0.8] {
            let a = w_of_fit(&g0.fit, &t, j).unwrap();
            let b = w_of_fit(&fit_shift, &t, j).unwrap();
            assert_relative_eq!(b, a - 0.7, epsilon = 1e-12);
        }
    }

    fn harmonic_gft(beta: f64, omega: f64, f: f64, jlo: f64, jhi: f64, n: usize) -> GeneratingFunctionTable {
        let t = ts(beta);
        let j = grid(jlo, jhi, n);
        let w: Vec<f64> = j.iter().map(|&jj| harmonic_w(beta, 1.0, omega, f, jj)).collect();
        GeneratingFunctionTable::new(j, w, TableSource::Analytic, &t).unwrap()
    }

    #[test]
    fn legendre_of_quadratic_w_is_harmonic_effective_potential() {
        // V(Q) = (1/2) m w^2 Q^2 + (1/beta) log(2 sinh(beta w/2))
        let beta = 1.0;
        let omega: f64 = 1.0;
        let g = harmonic_gft(beta, omega, 0.0, -2.0, 2.0, 41);
        let qs = grid(-1.5, 1.5, 31);
        let curve = legendre_transform(&g, &qs).unwrap();
        let log_term = (2.0 * (beta * omega / 2.0).sinh()).ln() / beta;
        for (q, v) in curve.q.iter().zip(&curve.v) {
            assert_relative_eq!(*v, 0.5 * q * q + log_term, epsilon = 1e-9);
        }
        assert!(curve.convexity_defect() < 1e-12);
        assert!(curve.fenchel_defect(&g) < 1e-9);
    }

    #[test]
    fn tilted_w_transforms_to_tilted_potential() {
        // w_U(J - f) -> U_beta(Q) + f Q
        let beta = 2.0;
        let omega: f64 = 1.3;
        let f = 0.4;
        let g_tilted = harmonic_gft(beta, omega, f, -2.0, 2.0, 41);
        let g_plain = harmonic_gft(beta, omega, 0.0, -2.0, 2.0, 41);
        let qs = grid(-0.9, 0.9, 19);
        let vt = legendre_transform(&g_tilted, &qs).unwrap();
        let vp = legendre_transform(&g_plain, &qs).unwrap();
        for i in 0..qs.len() {
            assert!(
                (vt.v[i] - vp.v[i] - f * qs[i]).abs() < 1e-9,
                "Q = {}: {} vs {}",
                qs[i],
                vt.v[i],
                vp.v[i] + f * qs[i]
            );
        }
    }

    #[test]
    fn double_transform_is_identity_on_convex_w() {
        // Non-quadratic convex generating function.
        let t = ts(1.0);
        let j = grid(-2.0, 2.0, 81);
        let w: Vec<f64> = j.iter().map(|&x| 0.4 * x * x + 0.05 * x.powi(4) + 0.3 * x).collect();
        let g = GeneratingFunctionTable::new(j, w, TableSource::Analytic, &t).unwrap();
        let qs = grid(g.q_range().0 + 0.05, g.q_range().1 - 0.05, 121);
        let curve = legendre_transform(&g, &qs).unwrap();
        let back = GeneratingFunctionTable::new(
            curve.q.clone(),
            curve.v.clone(),
            TableSource::Analytic,
            &t,
        )
        .unwrap();
        // Conjugate of the curve should reproduce w on interior points.
        for &jj in &g.j_grid()[12..69] {
            let w_back = back.conjugate_at(jj).unwrap();
            assert!(
                (w_back - g.w(jj)).abs() < 1e-8,
                "J = {jj}: {w_back} vs {}",
                g.w(jj)
            );
        }
    }

    #[test]
    fn extraction_harmonic_parameters() {
        for beta in [0.5, 1.0, 10.0] {
            for omega in [0.7, 1.0, 2.0] {
                let g = harmonic_gft(beta, omega, 0.0, -1.5, 1.5, 41);
                let r = extract_parameters(&g, &ts(beta)).unwrap();
                assert!(r.params.q_min.abs() < 1e-10);
                assert_relative_eq!(r.params.omega_beta, omega, epsilon = 1e-9);
                assert!((r.params.q_min - r.q_min_curve).abs() < 1e-8);
                assert_relative_eq!(r.params.omega_beta, r.omega_curve, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn extraction_asymmetric_harmonic() {
        let beta = 10.0;
        let omega: f64 = 1.0;
        let f: f64 = 0.3;
        let g = harmonic_gft(beta, omega, f, -2.0, 2.0, 41);
        let r = extract_parameters(&g, &ts(beta)).unwrap();
        assert_relative_eq!(r.params.q_min, -f, epsilon = 1e-10);
        assert_relative_eq!(r.params.omega_beta, omega, epsilon = 1e-9);
        // E0 at beta = 10: -f^2/2 + (1/10) log(2 sinh 5) = 0.45500 (4 digits)
        let e0 = r.params.e0_estimate.unwrap();
        let exact = -f * f / 2.0 + (2.0 * 5.0f64.sinh()).ln() / 10.0;
        assert_relative_eq!(e0, exact, epsilon = 1e-9);
    }

    #[test]
    fn extraction_rejects_boundary_origin() {
        let g = harmonic_gft(1.0, 1.0, 0.0, 0.5, 2.0, 21);
        assert!(extract_parameters(&g, &ts(1.0)).is_err());
    }

    #[test]
    fn rejects_nonconvex_table() {
        let t = ts(1.0);
        let j = grid(-1.0, 1.0, 11);
        let w: Vec<f64> = j.iter().map(|&x| -x * x).collect();
        assert!(GeneratingFunctionTable::new(j, w, TableSource::Analytic, &t).is_err());
    }

    #[test]
    fn q_out_of_range_is_reported() {
        let g = harmonic_gft(1.0, 1.0, 0.0, -1.0, 1.0, 21);
        let (lo, hi) = g.q_range();
        assert!(matches!(
            g.source_for(hi + 1.0),
            Err(Error::QOutOfRange { .. })
        ));
        assert!(g.source_for(0.5 * (lo + hi)).is_ok());
    }

    #[test]
    fn ground_state_energy_harmonic_large_beta() {
        let beta = 100.0;
        let g = harmonic_gft(beta, 1.0, 0.0, -1.5, 1.5, 41);
        let qs = grid(-1.0, 1.0, 41);
        let curve = legendre_transform(&g, &qs).unwrap();
        let e0 = ground_state_energy(&curve).unwrap();
        assert!((e0 - 0.5).abs() < 1e-8, "E0 = {e0}");

        let gf = harmonic_gft(beta, 1.0, 0.3, -1.5, 1.5, 41);
        let r = extract_parameters(&gf, &ts(beta)).unwrap();
        assert!((r.params.e0_estimate.unwrap() - 0.455).abs() < 1e-8);
    }

    #[test]
    fn stationarity_duality_on_interior_points() {
        // dV/dQ computed numerically equals J*(Q).
        let g = harmonic_gft(2.0, 1.1, 0.2, -2.0, 2.0, 41);
        let qs = grid(-1.0, 1.0, 21);
        let curve = legendre_transform(&g, &qs).unwrap();
        let spline = curve.spline().unwrap();
        for i in 2..qs.len() - 2 {
            let dv = spline.deriv(qs[i]);
            assert!(
                (dv - curve.j_star[i]).abs() <= 1e-8 * (1.0 + dv.abs()),
                "Q = {}: dV/dQ {dv} vs J* {}",
                qs[i],
                curve.j_star[i]
            );
        }
    }
}
