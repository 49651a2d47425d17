//! Classical potentials and the algebra performed on them.
//!
//! Polynomial coefficients are kept as exact rationals so that linear-term
//! decomposition and recomposition are bit-stable; they are converted to
//! floating point once, at construction, for evaluation.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

/// Inverse temperature and particle mass in natural units (hbar = k_B = 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermoState {
    pub beta: f64,
    pub mass: f64,
}

impl ThermoState {
    pub fn new(beta: f64, mass: f64) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::InvalidInput(format!("beta must be positive, got {beta}")));
        }
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::InvalidInput(format!("mass must be positive, got {mass}")));
        }
        Ok(Self { beta, mass })
    }
}

fn big(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

fn rational_from_f64(x: f64) -> Result<BigRational> {
    BigRational::from_float(x)
        .ok_or_else(|| Error::InvalidInput(format!("non-finite coefficient {x}")))
}

/// Polynomial potential V(q) = sum_{k>=1} a_k q^k (no constant term; constants
/// enter through [`PotentialModel::Tilted`]).
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    /// coeffs[k-1] multiplies q^k, exact.
    coeffs: Vec<BigRational>,
    /// Float image of `coeffs`, used by the evaluation hot path.
    fcoeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<BigRational>) -> Self {
        let mut coeffs = coeffs;
        while coeffs.last().map_or(false, |c| c.is_zero()) {
            coeffs.pop();
        }
        let fcoeffs = coeffs.iter().map(|c| c.to_f64().unwrap_or(f64::NAN)).collect();
        Self { coeffs, fcoeffs }
    }

    /// Build from (numerator, denominator) pairs for a_1, a_2, ...
    pub fn from_fracs(fracs: &[(i64, i64)]) -> Self {
        Self::new(fracs.iter().map(|&(n, d)| big(n, d)).collect())
    }

    /// Build from floats; each f64 is converted to its exact dyadic rational.
    pub fn from_f64s(coeffs: &[f64]) -> Result<Self> {
        let rats = coeffs.iter().map(|&c| rational_from_f64(c)).collect::<Result<Vec<_>>>()?;
        Ok(Self::new(rats))
    }

    /// Highest power with a nonzero coefficient; 0 for the zero polynomial.
    pub fn degree(&self) -> usize {
        self.coeffs.len()
    }

    /// Exact coefficient of q^k (k >= 1).
    pub fn coeff(&self, k: usize) -> BigRational {
        assert!(k >= 1, "coefficients start at q^1");
        self.coeffs.get(k - 1).cloned().unwrap_or_else(BigRational::zero)
    }

    /// Float coefficients a_1.. as stored for evaluation.
    pub fn float_coeffs(&self) -> &[f64] {
        &self.fcoeffs
    }

    pub fn is_even(&self) -> bool {
        self.coeffs.iter().enumerate().all(|(i, c)| (i + 1) % 2 == 0 || c.is_zero())
    }

    /// Even leading degree with positive leading coefficient.
    pub fn is_confining(&self) -> bool {
        match self.coeffs.last() {
            Some(lead) => self.degree() % 2 == 0 && lead.is_positive(),
            None => false,
        }
    }

    pub fn eval(&self, q: f64) -> f64 {
        // Horner on V(q)/q, then multiply by q.
        let mut acc = 0.0;
        for &c in self.fcoeffs.iter().rev() {
            acc = acc * q + c;
        }
        acc * q
    }

    pub fn deriv(&self, q: f64) -> f64 {
        let mut acc = 0.0;
        for (k, &c) in self.fcoeffs.iter().enumerate().rev() {
            acc = acc * q + (k + 1) as f64 * c;
        }
        acc
    }

    pub fn second_deriv(&self, q: f64) -> f64 {
        let mut acc = 0.0;
        for (k, &c) in self.fcoeffs.iter().enumerate().rev() {
            let k1 = (k + 1) as f64;
            if k >= 1 {
                acc = acc * q + k1 * k as f64 * c;
            }
        }
        acc
    }
}

/// A one-dimensional classical potential.
#[derive(Debug, Clone, PartialEq)]
pub enum PotentialModel {
    Polynomial(Polynomial),
    /// V(q) = depth * (1 - exp(range * q))^2; dissociates as q -> -inf.
    Morse { depth: f64, range: f64 },
    /// base(q) + f*q + c.
    Tilted { base: Box<PotentialModel>, f: f64, c: f64 },
}

impl PotentialModel {
    pub fn poly_fracs(fracs: &[(i64, i64)]) -> Self {
        PotentialModel::Polynomial(Polynomial::from_fracs(fracs))
    }

    pub fn evaluate(&self, q: f64) -> f64 {
        match self {
            PotentialModel::Polynomial(p) => p.eval(q),
            PotentialModel::Morse { depth, range } => {
                let u = 1.0 - (range * q).exp();
                depth * u * u
            }
            PotentialModel::Tilted { base, f, c } => base.evaluate(q) + f * q + c,
        }
    }

    pub fn derivative(&self, q: f64) -> f64 {
        match self {
            PotentialModel::Polynomial(p) => p.deriv(q),
            PotentialModel::Morse { depth, range } => {
                let e = (range * q).exp();
                2.0 * depth * (1.0 - e) * (-range * e)
            }
            PotentialModel::Tilted { base, f, .. } => base.derivative(q) + f,
        }
    }

    pub fn second_derivative(&self, q: f64) -> f64 {
        match self {
            PotentialModel::Polynomial(p) => p.second_deriv(q),
            PotentialModel::Morse { depth, range } => {
                let e = (range * q).exp();
                2.0 * depth * range * range * e * (2.0 * e - 1.0)
            }
            PotentialModel::Tilted { base, .. } => base.second_derivative(q),
        }
    }

    /// Whether the path-integral branch may sample this potential.
    /// Morse dissociates and is flagged non-confining; only the spectral
    /// oracle accepts it (on a bounded grid).
    pub fn is_confining(&self) -> bool {
        match self {
            PotentialModel::Polynomial(p) => p.is_confining(),
            PotentialModel::Morse { .. } => false,
            PotentialModel::Tilted { base, .. } => base.is_confining(),
        }
    }

    /// Monomial coefficients in q (index = power), when the model is
    /// polynomial through and through.
    pub fn monomial_coeffs(&self) -> Option<Vec<f64>> {
        match self {
            PotentialModel::Polynomial(p) => {
                let mut out = vec![0.0];
                out.extend_from_slice(p.float_coeffs());
                Some(out)
            }
            PotentialModel::Morse { .. } => None,
            PotentialModel::Tilted { base, f, c } => {
                let mut out = base.monomial_coeffs()?;
                if out.len() < 2 {
                    out.resize(2, 0.0);
                }
                out[0] += c;
                out[1] += f;
                Some(out)
            }
        }
    }

    /// (omega, f, c) when the model is a quadratic well
    /// V = (1/2) m omega^2 q^2 + f q + c, for the given mass.
    pub fn as_quadratic(&self, mass: f64) -> Option<(f64, f64, f64)> {
        let raw = self.monomial_coeffs()?;
        if raw.iter().skip(3).any(|&c| c != 0.0) {
            return None;
        }
        let a2 = raw.get(2).copied().unwrap_or(0.0);
        if a2 <= 0.0 {
            return None;
        }
        Some((
            (2.0 * a2 / mass).sqrt(),
            raw.get(1).copied().unwrap_or(0.0),
            raw.first().copied().unwrap_or(0.0),
        ))
    }

    /// Location of the classical minimum, found by damped Newton from q0 = 0.
    pub fn classical_minimum(&self) -> f64 {
        let mut q = 0.0;
        for _ in 0..200 {
            let d1 = self.derivative(q);
            let d2 = self.second_derivative(q).max(1e-12);
            let step = d1 / d2;
            let capped = step.clamp(-1.0, 1.0);
            q -= capped;
            if capped.abs() < 1e-14 {
                break;
            }
        }
        q
    }
}

/// Result of splitting a quartic into shifted symmetric + linear parts:
/// original(q) = symmetric_part(x) + f*x + c with x = q + shift.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDecomposition {
    pub shift: BigRational,
    pub symmetric_part: Polynomial,
    pub f: BigRational,
    pub c: BigRational,
}

impl LinearDecomposition {
    pub fn shift_f64(&self) -> f64 {
        self.shift.to_f64().unwrap()
    }

    pub fn f_f64(&self) -> f64 {
        self.f.to_f64().unwrap()
    }

    pub fn c_f64(&self) -> f64 {
        self.c.to_f64().unwrap()
    }

    /// The shifted potential as a model: symmetric_part(x) + f*x + c.
    pub fn tilted_model(&self) -> PotentialModel {
        PotentialModel::Tilted {
            base: Box::new(PotentialModel::Polynomial(self.symmetric_part.clone())),
            f: self.f_f64(),
            c: self.c_f64(),
        }
    }

    /// Expand symmetric_part(q + shift) + f*(q + shift) + c back to the
    /// original coefficients. Exact rational arithmetic.
    pub fn recompose(&self) -> (Polynomial, BigRational) {
        let deg = self.symmetric_part.degree().max(1);
        let mut out = vec![BigRational::zero(); deg + 1]; // index = power, 0..=deg
        let s = &self.shift;
        for k in 1..=deg {
            let a = self.symmetric_part.coeff(k);
            if a.is_zero() {
                continue;
            }
            // a * (q + s)^k
            let mut binom = BigRational::from(BigInt::from(1));
            let mut spow = vec![BigRational::from(BigInt::from(1))];
            for _ in 0..k {
                spow.push(spow.last().unwrap() * s);
            }
            for j in 0..=k {
                // C(k, j) q^j s^(k-j)
                if j > 0 {
                    binom = binom * big((k - j + 1) as i64, 1) / big(j as i64, 1);
                }
                out[j] += &a * &binom * &spow[k - j];
            }
        }
        // + f*(q + s) + c
        out[1] += &self.f;
        out[0] += &self.f * s + &self.c;
        let constant = out[0].clone();
        (Polynomial::new(out[1..].to_vec()), constant)
    }
}

/// Shift a quartic so its cubic term vanishes, exposing the symmetric part
/// and the residual linear coefficient.
pub fn decompose_linear(p: &Polynomial) -> Result<LinearDecomposition> {
    if p.degree() != 4 {
        return Err(Error::NonQuartic(p.degree()));
    }
    let a4 = p.coeff(4);
    if !a4.is_positive() {
        return Err(Error::InvalidInput("quartic coefficient must be positive".into()));
    }
    let shift = p.coeff(3) / (big(4, 1) * &a4);
    // Expand p(x - s): q = x - s.
    let s = &shift;
    let mut b = vec![BigRational::zero(); 5]; // powers 0..=4 of x
    for k in 1..=4usize {
        let a = p.coeff(k);
        if a.is_zero() {
            continue;
        }
        let mut binom = BigRational::from(BigInt::from(1));
        let mut spow = vec![BigRational::from(BigInt::from(1))];
        for _ in 0..k {
            spow.push(spow.last().unwrap() * (-s.clone()));
        }
        for j in 0..=k {
            if j > 0 {
                binom = binom * big((k - j + 1) as i64, 1) / big(j as i64, 1);
            }
            b[j] += &a * &binom * &spow[k - j];
        }
    }
    debug_assert!(b[3].is_zero(), "cubic term must vanish after the shift");
    let f = b[1].clone();
    let c = b[0].clone();
    let symmetric =
        Polynomial::new(vec![BigRational::zero(), b[2].clone(), BigRational::zero(), b[4].clone()]);
    Ok(LinearDecomposition { shift, symmetric_part: symmetric, f, c })
}

/// Fourth-order Taylor coefficients of the Morse well depth*(1 - e^{a q})^2
/// about q = 0: quadratic depth*a^2, cubic depth*a^3, quartic (7/12) depth*a^4.
pub fn morse_taylor4(depth: f64, range: f64) -> Result<Polynomial> {
    if !(depth > 0.0) {
        return Err(Error::InvalidInput(format!("Morse depth must be positive, got {depth}")));
    }
    let d = rational_from_f64(depth)?;
    let a = rational_from_f64(range)?;
    let a2 = &a * &a;
    let a3 = &a2 * &a;
    let a4 = &a3 * &a;
    Ok(Polynomial::new(vec![
        BigRational::zero(),
        &d * &a2,
        &d * &a3,
        big(7, 12) * &d * &a4,
    ]))
}

/// Named benchmark systems.
pub mod systems {
    use super::*;

    /// V(q) = (1/2) m omega^2 q^2.
    pub fn harmonic(mass: f64, omega: f64) -> PotentialModel {
        let k = Polynomial::from_f64s(&[0.0, 0.5 * mass * omega * omega]).unwrap();
        PotentialModel::Polynomial(k)
    }

    /// V(q) = (1/2) m omega^2 q^2 + f q.
    pub fn asym_harmonic(mass: f64, omega: f64, f: f64) -> PotentialModel {
        let k = Polynomial::from_f64s(&[f, 0.5 * mass * omega * omega]).unwrap();
        PotentialModel::Polynomial(k)
    }

    /// V(q) = (1/2) q^2 + (1/10) q^3 + (1/100) q^4 (quartic benchmark well).
    pub fn paper_quartic() -> Polynomial {
        Polynomial::from_fracs(&[(0, 1), (1, 2), (1, 10), (1, 100)])
    }

    /// The symmetric companion of [`paper_quartic`] in shifted coordinates:
    /// 125/64 + (1/8) x^2 + (1/100) x^4.
    pub fn paper_symmetric() -> PotentialModel {
        PotentialModel::Tilted {
            base: Box::new(PotentialModel::Polynomial(Polynomial::from_fracs(&[
                (0, 1),
                (1, 8),
                (0, 1),
                (1, 100),
            ]))),
            f: 0.0,
            c: 125.0 / 64.0,
        }
    }

    /// Morse well with HCl-like parameters in natural units: depth 12.5, range 1/5.
    pub fn morse_hcl() -> PotentialModel {
        PotentialModel::Morse { depth: 12.5, range: 0.2 }
    }
}
