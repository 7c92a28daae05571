use serde::{Deserialize, Serialize};

use super::runner::Trace;
use crate::error::{DobError, Result};

/// SNR reported when the residual carries no measurable energy (dB).
pub const SNR_CAP_DB: f64 = 120.0;

/// Root mean square of a series; 0 for an empty one.
pub fn rmse(errors: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = errors.into_iter().fold((0.0, 0usize), |(s, n), e| (s + e * e, n + 1));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// Table-style accuracy figures of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingMetrics {
    /// Estimation RMSE of every augmented-state entry.
    pub rmse_state: Vec<f64>,
    /// RMSE of `θ_d − θ` per joint.
    pub rmse_angle: Vec<f64>,
    /// RMSE of `θ̇_d − θ̇` per joint.
    pub rmse_rate: Vec<f64>,
}

/// RMSE columns over the trace, skipping the first `burn_in` steps.
pub fn tracking_metrics(trace: &Trace, burn_in: usize) -> TrackingMetrics {
    let recs = &trace.records[burn_in.min(trace.len())..];
    let dim = 3 * trace.joints;
    let rmse_state = (0..dim)
        .map(|i| {
            rmse((burn_in..trace.len()).map(|k| trace.estimated_state(k)[i] - trace.true_state(k)[i]))
        })
        .collect();
    let rmse_angle = (0..trace.joints)
        .map(|j| rmse(recs.iter().map(|r| r.theta_d[j] - r.theta[j])))
        .collect();
    let rmse_rate = (0..trace.joints)
        .map(|j| rmse(recs.iter().map(|r| r.thetadot_d[j] - r.thetadot[j])))
        .collect();
    TrackingMetrics { rmse_state, rmse_angle, rmse_rate }
}

/// Second-order section `[b0, b1, b2, a1, a2]` with `a0 = 1`.
pub type Biquad = [f64; 5];

/// Digital Butterworth low-pass as cascaded biquads (bilinear transform with
/// prewarping). `cutoff` is a fraction of the Nyquist frequency.
pub fn butterworth_lowpass(order: usize, cutoff: f64) -> Result<Vec<Biquad>> {
    if order == 0 || !(cutoff > 0.0 && cutoff < 1.0) {
        return Err(DobError::Config(format!(
            "Butterworth needs order ≥ 1 and 0 < cutoff < 1, got {order} and {cutoff}"
        )));
    }
    let w = (std::f64::consts::FRAC_PI_2 * cutoff).tan();
    let w2 = w * w;
    let mut sections = Vec::with_capacity(order.div_ceil(2));
    for k in 0..order / 2 {
        // analog pole pair at −sin θ ± j cos θ
        let theta = std::f64::consts::PI * (2 * k + 1) as f64 / (2 * order) as f64;
        let a = 2.0 * theta.sin() * w;
        let a0 = 1.0 + a + w2;
        sections.push([w2 / a0, 2.0 * w2 / a0, w2 / a0, (2.0 * w2 - 2.0) / a0, (1.0 - a + w2) / a0]);
    }
    if order % 2 == 1 {
        let a0 = 1.0 + w;
        sections.push([w / a0, w / a0, 0.0, (w - 1.0) / a0, 0.0]);
    }
    Ok(sections)
}

/// Transposed direct-form II pass over every section, starting from the given states.
fn sos_filter(sos: &[Biquad], x: &[f64], zi: &[[f64; 2]]) -> Vec<f64> {
    let mut y = x.to_vec();
    for (s, z0) in sos.iter().zip(zi) {
        let [b0, b1, b2, a1, a2] = *s;
        let (mut z1, mut z2) = (z0[0], z0[1]);
        for v in y.iter_mut() {
            let xin = *v;
            let out = b0 * xin + z1;
            z1 = b1 * xin - a1 * out + z2;
            z2 = b2 * xin - a2 * out;
            *v = out;
        }
    }
    y
}

/// Section states that make the cascade start in steady state for a unit step.
fn sos_steady_state(sos: &[Biquad]) -> Vec<[f64; 2]> {
    let mut gain_in = 1.0;
    sos.iter()
        .map(|&[b0, b1, b2, a1, a2]| {
            let dc = (b0 + b1 + b2) / (1.0 + a1 + a2);
            let z1 = gain_in * (b1 + b2 - (a1 + a2) * dc);
            let z2 = gain_in * (b2 - a2 * dc);
            gain_in *= dc;
            [z1, z2]
        })
        .collect()
}

/// Zero-phase forward-backward filtering with odd reflection padding of
/// `pad` samples on each side.
pub fn filtfilt(sos: &[Biquad], x: &[f64], pad: usize) -> Result<Vec<f64>> {
    let n = x.len();
    if n <= pad || n < 2 {
        return Err(DobError::TooShort { len: n, min: pad });
    }
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
    let zi = sos_steady_state(sos);
    let scaled = |v: f64| zi.iter().map(|z| [z[0] * v, z[1] * v]).collect::<Vec<_>>();
    let mut fwd = sos_filter(sos, &ext, &scaled(ext[0]));
    fwd.reverse();
    let mut back = sos_filter(sos, &fwd, &scaled(fwd[0]));
    back.reverse();
    Ok(back[pad..pad + n].to_vec())
}

/// Smoothness of a command series: low-pass it forward and backward, treat
/// the result as signal and the remainder as noise, and report
/// `10 log10(Σ signal² / Σ residual²)`, capped at [`SNR_CAP_DB`].
pub fn snr_metric(series: &[f64], cutoff: f64, order: usize) -> Result<f64> {
    let pad = 3 * order;
    if series.len() <= pad {
        return Err(DobError::TooShort { len: series.len(), min: pad });
    }
    let sos = butterworth_lowpass(order, cutoff)?;
    let smooth = filtfilt(&sos, series, pad)?;
    let signal: f64 = smooth.iter().map(|v| v * v).sum();
    let noise: f64 = series.iter().zip(&smooth).map(|(x, s)| (x - s).powi(2)).sum();
    if noise <= signal * 10f64.powf(-SNR_CAP_DB / 10.0) {
        return Ok(SNR_CAP_DB);
    }
    Ok((10.0 * (signal / noise).log10()).min(SNR_CAP_DB))
}
