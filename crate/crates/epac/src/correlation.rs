//! Complex time series for position autocorrelation functions, plus the
//! single-mode analytic-continuation construction.

use num_complex::Complex64;

use crate::model::ThermoState;
use crate::transform::EpacParameters;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesKind {
    Exact,
    Epac,
}

impl SeriesKind {
    pub fn label(&self) -> &'static str {
        match self {
            SeriesKind::Exact => "exact",
            SeriesKind::Epac => "epac",
        }
    }
}

/// C(t) on a time grid. Satisfies C(-t) = conj C(t) and Im C(0) = 0.
#[derive(Debug, Clone)]
pub struct CorrelationSeries {
    pub times: Vec<f64>,
    pub values: Vec<Complex64>,
    pub beta: f64,
    pub kind: SeriesKind,
}

impl CorrelationSeries {
    /// Largest |C(-t) - conj C(t)| over time pairs present in the grid.
    pub fn reversal_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for (i, &t) in self.times.iter().enumerate() {
            if let Some(j) = self.times.iter().position(|&u| u == -t) {
                worst = worst.max((self.values[i] - self.values[j].conj()).norm());
            }
        }
        worst
    }
}

/// Single-mode real-time position autocorrelation function built from the
/// standard-effective-potential parameters:
/// C(t) = (1/(2 m w)) coth(beta w / 2) cos(w t) - i (1/(2 m w)) sin(w t) + Q_min^2.
pub fn epac_autocorrelation(
    params: &EpacParameters,
    ts: &ThermoState,
    times: &[f64],
) -> CorrelationSeries {
    let omega = params.omega_beta;
    assert!(omega > 0.0, "effective frequency must be positive");
    let amp = 1.0 / (2.0 * ts.mass * omega);
    let coth = (ts.beta * omega / 2.0).tanh().recip();
    let offset = params.q_min * params.q_min;
    let values = times
        .iter()
        .map(|&t| {
            Complex64::new(amp * coth * (omega * t).cos() + offset, -amp * (omega * t).sin())
        })
        .collect();
    CorrelationSeries { times: times.to_vec(), values, beta: ts.beta, kind: SeriesKind::Epac }
}

/// Uniform time grid [0, t_max] with the given step.
pub fn time_grid(t_max: f64, step: f64) -> Vec<f64> {
    let n = (t_max / step).round() as usize;
    (0..=n).map(|i| i as f64 * step).collect()
}
