//! Closed forms for the (tilted) harmonic oscillator: effective classical
//! potential, generating function, standard effective potential, extracted
//! parameters, and the exact correlation function. These are the analytic
//! reference path for every pipeline stage.

use num_complex::Complex64;

use crate::correlation::{CorrelationSeries, SeriesKind};
use crate::model::ThermoState;
use crate::transform::EpacParameters;

/// V^c(q) = (1/2) m w^2 q^2 + f q + (1/beta) log(sinh(beta w/2)/(beta w/2)).
pub fn harmonic_effective_classical_potential(ts: &ThermoState, omega: f64, f: f64, q: f64) -> f64 {
    let u = ts.beta * omega / 2.0;
    0.5 * ts.mass * omega * omega * q * q + f * q + (u.sinh() / u).ln() / ts.beta
}

/// w(J) = (J - f)^2 / (2 m w^2) - (1/beta) log(2 sinh(beta w/2)).
pub fn harmonic_generating_function(ts: &ThermoState, omega: f64, f: f64, j: f64) -> f64 {
    let je = j - f;
    je * je / (2.0 * ts.mass * omega * omega)
        - (2.0 * (ts.beta * omega / 2.0).sinh()).ln() / ts.beta
}

/// Standard effective potential of the tilted harmonic oscillator:
/// V(Q) = (1/2) m w^2 Q^2 + f Q + (1/beta) log(2 sinh(beta w/2)).
pub fn harmonic_standard_effective_potential(
    ts: &ThermoState,
    omega: f64,
    f: f64,
    q: f64,
) -> f64 {
    0.5 * ts.mass * omega * omega * q * q
        + f * q
        + (2.0 * (ts.beta * omega / 2.0).sinh()).ln() / ts.beta
}

/// Exact extracted parameters: Q_min = -f/(m w^2), omega_beta = w at every
/// temperature, and the minimum value of the standard effective potential.
pub fn harmonic_parameters(ts: &ThermoState, omega: f64, f: f64) -> EpacParameters {
    let q_min = -f / (ts.mass * omega * omega);
    let e0 = -f * f / (2.0 * ts.mass * omega * omega)
        + (2.0 * (ts.beta * omega / 2.0).sinh()).ln() / ts.beta;
    EpacParameters { q_min, omega_beta: omega, omega_s: Some(omega), e0_estimate: Some(e0) }
}

/// Exact position autocorrelation function of the tilted harmonic
/// oscillator: the single-mode form plus the squared offset f^2/(m w^2)^2.
pub fn harmonic_exact_autocorrelation(
    ts: &ThermoState,
    omega: f64,
    f: f64,
    times: &[f64],
) -> CorrelationSeries {
    let amp = 1.0 / (2.0 * ts.mass * omega);
    let coth = (ts.beta * omega / 2.0).tanh().recip();
    let offset = (f / (ts.mass * omega * omega)).powi(2);
    let values = times
        .iter()
        .map(|&t| {
            Complex64::new(amp * coth * (omega * t).cos() + offset, -amp * (omega * t).sin())
        })
        .collect();
    CorrelationSeries { times: times.to_vec(), values, beta: ts.beta, kind: SeriesKind::Exact }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlation::epac_autocorrelation;
    use approx::assert_relative_eq;

    fn ts(beta: f64) -> ThermoState {
        ThermoState::new(beta, 1.0).unwrap()
    }

    #[test]
    fn standard_effective_potential_values() {
        // beta = 1, m = w = 1, Q = 0: log(2 sinh 1/2) = 0.04132...
        let v = harmonic_standard_effective_potential(&ts(1.0), 1.0, 0.0, 0.0);
        assert_relative_eq!(v, (2.0 * 0.5f64.sinh()).ln(), epsilon = 1e-15);
        assert!((v - 0.04132).abs() < 1e-5);
        // beta = 5: approaches w/2.
        let v5 = harmonic_standard_effective_potential(&ts(5.0), 1.0, 0.0, 0.0);
        assert!((v5 - 0.49864).abs() < 1e-5);
    }

    #[test]
    fn minimum_location_and_value() {
        let t = ts(2.0);
        let (omega, f) = (1.3, 0.4);
        let p = harmonic_parameters(&t, omega, f);
        assert_relative_eq!(p.q_min, -f / (omega * omega), epsilon = 1e-15);
        // Stationarity at Q_min and the printed minimum value.
        let h = 1e-6;
        let dv = (harmonic_standard_effective_potential(&t, omega, f, p.q_min + h)
            - harmonic_standard_effective_potential(&t, omega, f, p.q_min - h))
            / (2.0 * h);
        assert!(dv.abs() < 1e-9);
        let vmin = harmonic_standard_effective_potential(&t, omega, f, p.q_min);
        assert_relative_eq!(vmin, p.e0_estimate.unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn low_temperature_limit_gives_ground_state_energy() {
        let t = ts(100.0);
        let p = harmonic_parameters(&t, 1.0, 0.3);
        assert!((p.e0_estimate.unwrap() - 0.455).abs() < 1e-10);
    }

    #[test]
    fn single_mode_form_is_exact_for_harmonic_systems() {
        let t = ts(1.7);
        let times: Vec<f64> = (0..60).map(|i| i as f64 * 0.2).collect();
        for f in [0.0, 0.3] {
            let params = harmonic_parameters(&t, 1.0, f);
            let ac = epac_autocorrelation(&params, &t, &times);
            let exact = harmonic_exact_autocorrelation(&t, 1.0, f, &times);
            for i in 0..times.len() {
                assert!((ac.values[i] - exact.values[i]).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn vc_and_v_match_at_low_temperature() {
        // Both approach w/2 as beta grows.
        let t = ts(200.0);
        let vc = harmonic_effective_classical_potential(&t, 1.0, 0.0, 0.0);
        let v = harmonic_standard_effective_potential(&t, 1.0, 0.0, 0.0);
        assert!((v - 0.5).abs() < 1e-3);
        assert!((vc - 0.5).abs() < 0.05, "V^c converges only as log(beta)/beta");
    }
}
