//! Shared numeric kernels: cubic splines, Gauss-Legendre quadrature,
//! root finding, tridiagonal solves, and small least-squares fits.

use crate::error::{Error, Result};

/// Solve a tridiagonal system (Thomas algorithm). `lower` and `upper` have
/// length n-1. Panics on zero pivots; callers guarantee diagonal dominance.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    assert!(n >= 1 && lower.len() == n - 1 && upper.len() == n - 1 && rhs.len() == n);
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = upper.first().copied().unwrap_or(0.0) / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i - 1] * c[i - 1];
        if i < n - 1 {
            c[i] = upper[i] / m;
        }
        d[i] = (rhs[i] - lower[i - 1] * d[i - 1]) / m;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        let next = x[i + 1];
        x[i] -= c[i] * next;
    }
    x
}

/// Interpolating cubic spline with not-a-knot boundary conditions
/// (reproduces cubics exactly, which natural splines do not).
#[derive(Debug, Clone)]
pub struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn new(x: &[f64], y: &[f64]) -> Result<Self> {
        let n = x.len();
        if n < 4 {
            return Err(Error::InvalidInput(format!("spline needs >= 4 knots, got {n}")));
        }
        if y.len() != n {
            return Err(Error::InvalidInput("spline knot/value length mismatch".into()));
        }
        for i in 1..n {
            if !(x[i] > x[i - 1]) {
                return Err(Error::InvalidInput("spline knots must be strictly increasing".into()));
            }
        }
        let h: Vec<f64> = (0..n - 1).map(|i| x[i + 1] - x[i]).collect();
        // Interior equations for second derivatives m_i:
        // h[i-1] m[i-1] + 2(h[i-1]+h[i]) m[i] + h[i] m[i+1] = 6*(d_i - d_{i-1})
        // with the not-a-knot closures m continuous in third derivative at
        // x[1] and x[n-2]. Assemble an n x n tridiagonal-with-corners system
        // and reduce the two boundary rows into the tridiagonal form.
        let dd: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();

        // Unknowns m[0..n]. Boundary rows couple three unknowns each:
        // row 0:   h[1]*m0 - (h[0]+h[1])*m1 + h[0]*m2 = 0
        // row n-1: h[n-2]*m[n-3] ... symmetric at the other end.
        // Eliminate m0 from row 1 (and m[n-1] from row n-2), solve the inner
        // (n-2) tridiagonal system, then back out m0 and m[n-1].
        let mut lower = vec![0.0; n - 3];
        let mut diag = vec![0.0; n - 2];
        let mut upper = vec![0.0; n - 3];
        let mut rhs = vec![0.0; n - 2];
        for i in 1..n - 1 {
            let k = i - 1;
            let mut a = h[i - 1];
            let mut b = 2.0 * (h[i - 1] + h[i]);
            let mut c = h[i];
            let r = 6.0 * (dd[i] - dd[i - 1]);
            if i == 1 {
                // m0 = ((h0+h1) m1 - h0 m2) / h1
                b += a * (h[0] + h[1]) / h[1];
                c -= a * h[0] / h[1];
                a = 0.0;
            }
            if i == n - 2 {
                // m[n-1] = ((h[n-2]+h[n-3]) m[n-2] - h[n-2] m[n-3]) / h[n-3]
                b += c * (h[n - 2] + h[n - 3]) / h[n - 3];
                a -= c * h[n - 2] / h[n - 3];
                c = 0.0;
            }
            diag[k] = b;
            rhs[k] = r;
            if k > 0 {
                lower[k - 1] = a;
            }
            if k < n - 3 {
                upper[k] = c;
            }
        }
        let inner = solve_tridiagonal(&lower, &diag, &upper, &rhs);
        let mut m = vec![0.0; n];
        m[1..n - 1].copy_from_slice(&inner);
        m[0] = ((h[0] + h[1]) * m[1] - h[0] * m[2]) / h[1];
        m[n - 1] = ((h[n - 2] + h[n - 3]) * m[n - 2] - h[n - 2] * m[n - 3]) / h[n - 3];
        Ok(Self { x: x.to_vec(), y: y.to_vec(), m })
    }

    fn segment(&self, x: f64) -> usize {
        let n = self.x.len();
        match self.x.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.clamp(1, n - 1) - 1,
        }
    }

    pub fn eval(&self, xq: f64) -> f64 {
        let i = self.segment(xq);
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - xq) / h;
        let b = (xq - self.x[i]) / h;
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }

    pub fn deriv(&self, xq: f64) -> f64 {
        let i = self.segment(xq);
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - xq) / h;
        let b = (xq - self.x[i]) / h;
        (self.y[i + 1] - self.y[i]) / h
            + ((3.0 * b * b - 1.0) * self.m[i + 1] - (3.0 * a * a - 1.0) * self.m[i]) * h / 6.0
    }

    pub fn second_deriv(&self, xq: f64) -> f64 {
        let i = self.segment(xq);
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - xq) / h;
        let b = (xq - self.x[i]) / h;
        a * self.m[i] + b * self.m[i + 1]
    }

    pub fn knots(&self) -> &[f64] {
        &self.x
    }

    pub fn values(&self) -> &[f64] {
        &self.y
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1], computed by Newton iteration
/// on the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    for i in 0..m {
        // Initial guess (Abramowitz-Stegun).
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2.0 * j as f64 + 1.0) * z * p1 - j as f64 * p2) / (j as f64 + 1.0);
            }
            pp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / pp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * pp * pp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Integrate exp(phi(q) - phi_max) over [lo, hi] with composite Gauss-Legendre
/// panels, doubling the panel count until the relative change is below `tol`.
/// Returns log of the integral plus `phi_max`, i.e. log of the true integral.
pub fn log_integrate_exp(
    phi: &dyn Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    phi_max: f64,
    tol: f64,
) -> Result<f64> {
    let (nodes, weights) = gauss_legendre(32);
    let eval = |panels: usize| -> f64 {
        let mut total = 0.0;
        let width = (hi - lo) / panels as f64;
        for p in 0..panels {
            let a = lo + p as f64 * width;
            let half = 0.5 * width;
            let mid = a + half;
            let mut acc = 0.0;
            for (x, w) in nodes.iter().zip(&weights) {
                acc += w * (phi(mid + half * x) - phi_max).exp();
            }
            total += acc * half;
        }
        total
    };
    let mut panels = 4;
    let mut prev = eval(panels);
    for _ in 0..8 {
        panels *= 2;
        let cur = eval(panels);
        if (cur - prev).abs() <= tol * cur.abs() && cur.is_finite() && cur > 0.0 {
            return Ok(phi_max + cur.ln());
        }
        prev = cur;
    }
    if prev.is_finite() && prev > 0.0 {
        return Ok(phi_max + prev.ln());
    }
    Err(Error::NotConverged("exponential quadrature did not stabilize".into()))
}

/// Brent root finder on a bracketing interval [a, b] with f(a)*f(b) <= 0.
pub fn brent_root(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    let (mut a, mut b) = (a, b);
    let (mut fa, mut fb) = (f(a), f(b));
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa * fb > 0.0 {
        return Err(Error::InvalidInput("root not bracketed".into()));
    }
    if fa.abs() < fb.abs() {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut mflag = true;
    for _ in 0..200 {
        if fb.abs() < tol && (b - a).abs() < tol {
            return Ok(b);
        }
        let mut s = if fa != fc && fb != fc {
            // Inverse quadratic interpolation.
            a * fb * fc / ((fa - fb) * (fa - fc))
                + b * fa * fc / ((fb - fa) * (fb - fc))
                + c * fa * fb / ((fc - fa) * (fc - fb))
        } else {
            b - fb * (b - a) / (fb - fa)
        };
        let lo = (3.0 * a + b) / 4.0;
        let cond = !(s.min(b) > lo.min(b) && s.max(b) < lo.max(b))
            || (mflag && (s - b).abs() >= (b - c).abs() / 2.0)
            || (!mflag && (s - b).abs() >= (c - d).abs() / 2.0)
            || (mflag && (b - c).abs() < tol)
            || (!mflag && (c - d).abs() < tol);
        if cond {
            s = 0.5 * (a + b);
            mflag = true;
        } else {
            mflag = false;
        }
        let fs = f(s);
        d = c;
        c = b;
        fc = fb;
        if fa * fs < 0.0 {
            b = s;
            fb = fs;
        } else {
            a = s;
            fa = fs;
        }
        if fa.abs() < fb.abs() {
            std::mem::swap(&mut a, &mut b);
            std::mem::swap(&mut fa, &mut fb);
        }
        if fs == 0.0 {
            return Ok(s);
        }
        if (b - a).abs() < tol {
            return Ok(b);
        }
    }
    Ok(b)
}

/// Minimize a smooth one-dimensional function on [a, b] by golden-section
/// refined with parabolic steps (Brent's method, simplified).
pub fn brent_min(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let gr = 0.5 * (3.0 - 5.0_f64.sqrt());
    let (mut lo, mut hi) = (a.min(b), a.max(b));
    let mut x = lo + gr * (hi - lo);
    let mut w = x;
    let mut v = x;
    let mut fx = f(x);
    let mut fw = fx;
    let mut fv = fx;
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    for _ in 0..200 {
        let m = 0.5 * (lo + hi);
        let tol1 = tol * x.abs() + 1e-15;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (hi - lo) {
            break;
        }
        let mut use_golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let qq = (x - v) * (fx - fw);
            let mut p = (x - v) * qq - (x - w) * r;
            let mut q2 = 2.0 * (qq - r);
            if q2 > 0.0 {
                p = -p;
            }
            q2 = q2.abs();
            if p.abs() < (0.5 * q2 * e).abs() && p > q2 * (lo - x) && p < q2 * (hi - x) {
                e = d;
                d = p / q2;
                use_golden = false;
            }
        }
        if use_golden {
            e = if x < m { hi - x } else { lo - x };
            d = gr * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = f(u);
        if fu <= fx {
            if u < x {
                hi = x;
            } else {
                lo = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                lo = u;
            } else {
                hi = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    x
}

/// Polynomial least squares in the scaled variable t = (x - center)/halfwidth,
/// restricted to the given exponent list. Solved by Householder QR.
pub fn polyfit_scaled(
    x: &[f64],
    y: &[f64],
    center: f64,
    halfwidth: f64,
    powers: &[usize],
) -> Result<Vec<f64>> {
    polyfit_scaled_weighted(x, y, None, center, halfwidth, powers)
}

/// As [`polyfit_scaled`] with per-point weights (minimizes sum w_i r_i^2).
pub fn polyfit_scaled_weighted(
    x: &[f64],
    y: &[f64],
    weights: Option<&[f64]>,
    center: f64,
    halfwidth: f64,
    powers: &[usize],
) -> Result<Vec<f64>> {
    let n = x.len();
    let k = powers.len();
    if n < k {
        return Err(Error::InvalidInput(format!("fit needs >= {k} points, got {n}")));
    }
    // Design matrix, column-major, rows scaled by sqrt(weight).
    let mut a = vec![0.0; n * k];
    let mut b = y.to_vec();
    for (i, &xi) in x.iter().enumerate() {
        let t = (xi - center) / halfwidth;
        let s = weights.map_or(1.0, |w| w[i].max(0.0).sqrt());
        for (j, &p) in powers.iter().enumerate() {
            a[j * n + i] = s * t.powi(p as i32);
        }
        b[i] *= s;
    }
    // Householder QR, updating b in place.
    for j in 0..k {
        let col = &a[j * n + j..(j + 1) * n];
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::InvalidInput("rank-deficient fit design".into()));
        }
        let alpha = -norm.copysign(a[j * n + j]);
        let mut v = col.to_vec();
        v[0] -= alpha;
        let vnorm2 = v.iter().map(|t| t * t).sum::<f64>();
        if vnorm2 > 0.0 {
            for jj in j..k {
                let dot: f64 =
                    v.iter().enumerate().map(|(i, &vi)| vi * a[jj * n + j + i]).sum();
                let scale = 2.0 * dot / vnorm2;
                for (i, &vi) in v.iter().enumerate() {
                    a[jj * n + j + i] -= scale * vi;
                }
            }
            let dot: f64 = v.iter().enumerate().map(|(i, &vi)| vi * b[j + i]).sum();
            let scale = 2.0 * dot / vnorm2;
            for (i, &vi) in v.iter().enumerate() {
                b[j + i] -= scale * vi;
            }
        }
    }
    // Back substitution on the upper-triangular k x k block.
    let mut coeffs = vec![0.0; k];
    for j in (0..k).rev() {
        let mut acc = b[j];
        for jj in j + 1..k {
            acc -= a[jj * n + j] * coeffs[jj];
        }
        coeffs[j] = acc / a[j * n + j];
    }
    Ok(coeffs)
}

/// Polynomial in the scaled variable t = (x - center)/halfwidth, restricted
/// to an explicit list of exponents. Produced by least-squares fitting or
/// constructed directly from known coefficients.
#[derive(Debug, Clone)]
pub struct PolyFit {
    pub center: f64,
    pub halfwidth: f64,
    pub powers: Vec<usize>,
    /// Coefficient of t^powers[i].
    pub coeffs: Vec<f64>,
}

impl PolyFit {
    pub fn fit(
        x: &[f64],
        y: &[f64],
        center: f64,
        halfwidth: f64,
        powers: &[usize],
    ) -> Result<Self> {
        let coeffs = polyfit_scaled(x, y, center, halfwidth, powers)?;
        Ok(Self { center, halfwidth, powers: powers.to_vec(), coeffs })
    }

    /// Encode a monomial polynomial (index = power of q) in the scaled basis.
    pub fn from_raw(center: f64, halfwidth: f64, raw: &[f64]) -> Self {
        let deg = raw.len().saturating_sub(1);
        // q = center + halfwidth * t; c_t[j] = sum_k raw[k] C(k,j) center^(k-j) hw^j
        let mut coeffs = vec![0.0; deg + 1];
        for (k, &rk) in raw.iter().enumerate() {
            if rk == 0.0 {
                continue;
            }
            let mut binom = 1.0;
            for j in 0..=k {
                if j > 0 {
                    binom *= (k - j + 1) as f64 / j as f64;
                }
                coeffs[j] += rk * binom * center.powi((k - j) as i32) * halfwidth.powi(j as i32);
            }
        }
        Self { center, halfwidth, powers: (0..=deg).collect(), coeffs }
    }

    pub fn eval(&self, q: f64) -> f64 {
        let t = (q - self.center) / self.halfwidth;
        self.powers
            .iter()
            .zip(&self.coeffs)
            .map(|(&p, &c)| c * t.powi(p as i32))
            .sum()
    }

    pub fn deriv(&self, q: f64) -> f64 {
        let t = (q - self.center) / self.halfwidth;
        self.powers
            .iter()
            .zip(&self.coeffs)
            .filter(|(&p, _)| p >= 1)
            .map(|(&p, &c)| c * p as f64 * t.powi(p as i32 - 1))
            .sum::<f64>()
            / self.halfwidth
    }

    pub fn add_constant(&mut self, c: f64) {
        if let Some(i) = self.powers.iter().position(|&p| p == 0) {
            self.coeffs[i] += c;
        } else {
            self.powers.insert(0, 0);
            self.coeffs.insert(0, c);
        }
    }

    pub fn add_linear(&mut self, slope: f64) {
        // Slope in q units; the stored coefficient multiplies t.
        let c = slope * self.halfwidth;
        if let Some(i) = self.powers.iter().position(|&p| p == 1) {
            self.coeffs[i] += c;
        } else {
            let at = self.powers.iter().position(|&p| p > 1).unwrap_or(self.powers.len());
            self.powers.insert(at, 1);
            self.coeffs.insert(at, c);
        }
    }

    /// Even leading power with a positive coefficient.
    pub fn is_confining(&self) -> bool {
        match self.powers.iter().zip(&self.coeffs).filter(|(_, c)| **c != 0.0).last() {
            Some((&p, &c)) => p >= 2 && p % 2 == 0 && c > 0.0,
            None => false,
        }
    }

    /// Monomial coefficients in q (index = power).
    pub fn raw_coeffs(&self) -> Vec<f64> {
        let deg = self.powers.iter().copied().max().unwrap_or(0);
        let mut out = vec![0.0; deg + 1];
        for (&p, &c) in self.powers.iter().zip(&self.coeffs) {
            // c * ((q - center)/halfwidth)^p expanded binomially.
            let scale = c / self.halfwidth.powi(p as i32);
            let mut binom = 1.0;
            for j in 0..=p {
                if j > 0 {
                    binom *= (p - j + 1) as f64 / j as f64;
                }
                out[j] += scale * binom * (-self.center).powi((p - j) as i32);
            }
        }
        out
    }
}

/// Mean and standard error of the mean from fixed-size block averages.
pub fn block_stats(samples: &[f64], block_size: usize) -> (f64, f64) {
    assert!(block_size >= 1 && samples.len() % block_size == 0);
    let n_blocks = samples.len() / block_size;
    let blocks: Vec<f64> = samples
        .chunks(block_size)
        .map(|c| c.iter().sum::<f64>() / block_size as f64)
        .collect();
    let mean = blocks.iter().sum::<f64>() / n_blocks as f64;
    if n_blocks < 2 {
        return (mean, f64::INFINITY);
    }
    let var =
        blocks.iter().map(|b| (b - mean) * (b - mean)).sum::<f64>() / (n_blocks - 1) as f64;
    (mean, (var / n_blocks as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn tridiagonal_solves_small_system() {
        // [2 1 0; 1 2 1; 0 1 2] x = [4, 8, 8] -> x = [1, 2, 3]
        let x = solve_tridiagonal(&[1.0, 1.0], &[2.0, 2.0, 2.0], &[1.0, 1.0], &[4.0, 8.0, 8.0]);
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(x[1], 2.0, epsilon = 1e-12);
        assert_relative_eq!(x[2], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn spline_reproduces_cubics_exactly() {
        let x: Vec<f64> = (0..9).map(|i| -2.0 + i as f64 * 0.5).collect();
        let f = |t: f64| 0.3 * t * t * t - 1.1 * t * t + 0.2 * t + 5.0;
        let y: Vec<f64> = x.iter().map(|&t| f(t)).collect();
        let s = CubicSpline::new(&x, &y).unwrap();
        for i in 0..=40 {
            let t = -2.0 + i as f64 * 0.1;
            assert_relative_eq!(s.eval(t), f(t), epsilon = 1e-11);
            assert_relative_eq!(s.deriv(t), 0.9 * t * t - 2.2 * t + 0.2, epsilon = 1e-10);
            assert_relative_eq!(s.second_deriv(t), 1.8 * t - 2.2, epsilon = 1e-9);
        }
    }

    #[test]
    fn spline_interpolates_smooth_function() {
        let x: Vec<f64> = (0..41).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = x.iter().map(|&t| (t).sin()).collect();
        let s = CubicSpline::new(&x, &y).unwrap();
        for i in 0..100 {
            let t = 0.05 + i as f64 * 0.039;
            assert_relative_eq!(s.eval(t), t.sin(), epsilon = 2e-6);
            assert_relative_eq!(s.deriv(t), t.cos(), epsilon = 2e-4);
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        // degree-15 exactness: integral of t^14 over [-1,1] = 2/15
        let i: f64 = x.iter().zip(&w).map(|(t, w)| w * t.powi(14)).sum();
        assert_relative_eq!(i, 2.0 / 15.0, max_relative = 1e-13);
        let total: f64 = w.iter().sum();
        assert_relative_eq!(total, 2.0, max_relative = 1e-14);
    }

    #[test]
    fn log_integrate_gaussian() {
        // integral of exp(-q^2/2) = sqrt(2 pi)
        let phi = |q: f64| -0.5 * q * q;
        let log_i = log_integrate_exp(&phi, -12.0, 12.0, 0.0, 1e-13).unwrap();
        assert_relative_eq!(log_i, 0.5 * (2.0 * std::f64::consts::PI).ln(), epsilon = 1e-12);
    }

    #[test]
    fn brent_finds_root_and_min() {
        let f = |x: f64| x * x * x - 2.0;
        let r = brent_root(&f, 0.0, 2.0, 1e-14).unwrap();
        assert_relative_eq!(r, 2.0_f64.cbrt(), epsilon = 1e-12);
        let g = |x: f64| (x - 0.7) * (x - 0.7) + 3.0;
        let m = brent_min(&g, -4.0, 5.0, 1e-12);
        assert_relative_eq!(m, 0.7, epsilon = 1e-8);
    }

    #[test]
    fn polyfit_recovers_exact_polynomial() {
        let x: Vec<f64> = (0..21).map(|i| -2.0 + 0.2 * i as f64).collect();
        let y: Vec<f64> = x.iter().map(|&t| 1.5 - 0.3 * t * t + 0.02 * t.powi(4)).collect();
        let c = polyfit_scaled(&x, &y, 0.0, 2.0, &[0, 2, 4]).unwrap();
        // Coefficients in t = x/2: c0 + c2 t^2 + c4 t^4
        assert_relative_eq!(c[0], 1.5, epsilon = 1e-10);
        assert_relative_eq!(c[1], -0.3 * 4.0, epsilon = 1e-10);
        assert_relative_eq!(c[2], 0.02 * 16.0, epsilon = 1e-10);
    }

    #[test]
    fn polyfit_struct_roundtrip_and_raw_coeffs() {
        let fit = PolyFit { center: 0.5, halfwidth: 2.0, powers: vec![0, 2, 4], coeffs: vec![1.0, -0.5, 0.25] };
        let raw = fit.raw_coeffs();
        for &q in &[-1.7, 0.0, 0.4, 2.3] {
            let direct = fit.eval(q);
            let mono: f64 = raw.iter().enumerate().map(|(k, c)| c * q.powi(k as i32)).sum();
            assert_relative_eq!(direct, mono, epsilon = 1e-12);
            let h = 1e-6;
            let fd = (fit.eval(q + h) - fit.eval(q - h)) / (2.0 * h);
            assert_relative_eq!(fit.deriv(q), fd, epsilon = 1e-6);
        }
        assert!(fit.is_confining());
        let bad = PolyFit { center: 0.0, halfwidth: 1.0, powers: vec![0, 2], coeffs: vec![0.0, -1.0] };
        assert!(!bad.is_confining());
    }

    #[test]
    fn polyfit_add_linear_and_constant() {
        let mut fit = PolyFit { center: 0.0, halfwidth: 2.0, powers: vec![0, 2], coeffs: vec![0.3, 1.0] };
        fit.add_linear(-1.25);
        fit.add_constant(0.5);
        for &q in &[-1.0, 0.0, 0.7] {
            let t = q / 2.0;
            assert_relative_eq!(fit.eval(q), 0.8 + t * t - 1.25 * q, epsilon = 1e-14);
        }
    }

    #[test]
    fn block_stats_on_constant_series() {
        let s = vec![2.0; 100];
        let (mean, err) = block_stats(&s, 10);
        assert_eq!(mean, 2.0);
        assert_eq!(err, 0.0);
    }
}
