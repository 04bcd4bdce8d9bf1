//! Statistical recovery of physical parameters from traces and sweep maps:
//! Voigt line fits, Stark-parabola fits, square-root-law fits and field
//! variance extraction, all with Gauss-Newton covariance estimates scaled by
//! the reduced chi-square.

mod lm;
mod sweep;

pub use sweep::{fit_sweep_lines, parabola_points, LineTrack, PeakFitConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Result, StarkError};
use crate::sim::{ElectrodeGeometry, ScanTrace};
use crate::voigt::{sigma_from_fwhm, voigt_density};

/// Count spectrum on a shared detuning grid, possibly integrated over many
/// sweeps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Spectrum {
    pub detunings_mhz: Vec<f64>,
    pub counts: Vec<f64>,
    /// Number of traces summed into this spectrum.
    pub n_traces: usize,
    /// Span between the first and last sweep start, s.
    pub observation_span_s: f64,
}

impl Spectrum {
    pub fn from_trace(trace: &ScanTrace) -> Self {
        Spectrum {
            detunings_mhz: trace.detunings_mhz.clone(),
            counts: trace.counts.iter().map(|&c| c as f64).collect(),
            n_traces: 1,
            observation_span_s: 0.0,
        }
    }
}

/// Bin-wise sum of traces sharing one detuning grid.
pub fn integrate_traces(traces: &[ScanTrace]) -> Result<Spectrum> {
    let first = traces
        .first()
        .ok_or_else(|| StarkError::Data("no traces to integrate".into()))?;
    let mut counts = vec![0.0; first.detunings_mhz.len()];
    let mut t_min = f64::INFINITY;
    let mut t_max = f64::NEG_INFINITY;
    for trace in traces {
        if trace.detunings_mhz.len() != first.detunings_mhz.len()
            || trace
                .detunings_mhz
                .iter()
                .zip(&first.detunings_mhz)
                .any(|(a, b)| (a - b).abs() > 1e-6)
        {
            return Err(StarkError::GridMismatch);
        }
        for (acc, &c) in counts.iter_mut().zip(&trace.counts) {
            *acc += c as f64;
        }
        t_min = t_min.min(trace.start_time_s);
        t_max = t_max.max(trace.start_time_s);
    }
    Ok(Spectrum {
        detunings_mhz: first.detunings_mhz.clone(),
        counts,
        n_traces: traces.len(),
        observation_span_s: t_max - t_min,
    })
}

/// Voigt line fit result. Parameter order in the covariance matrix is
/// (center, gamma, sigma, area, baseline); the gamma row/column is zero when
/// the Lorentzian width was fixed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VoigtFit {
    pub center_mhz: f64,
    pub center_err: f64,
    pub gamma_mhz: f64,
    pub gamma_err: f64,
    pub sigma_mhz: f64,
    pub sigma_err: f64,
    pub area: f64,
    pub baseline: f64,
    pub covariance: Vec<Vec<f64>>,
    pub reduced_chi2: f64,
    pub gamma_fixed: bool,
}

impl VoigtFit {
    /// Closed-form FWHM of the fitted profile, MHz.
    pub fn fwhm_mhz(&self) -> f64 {
        crate::voigt::voigt_fwhm(self.gamma_mhz, self.sigma_mhz)
    }
}

struct Moments {
    center: f64,
    fwhm: f64,
    peak: f64,
    baseline: f64,
}

fn smooth(counts: &[f64], half: usize) -> Vec<f64> {
    let n = counts.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            counts[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

/// Moment-style initial estimates: peak position, baseline from the lower
/// quartile and FWHM from the half-maximum crossings.
fn estimate_moments(detunings: &[f64], counts: &[f64]) -> Result<Moments> {
    let smoothed = smooth(counts, 2);
    let mut sorted = smoothed.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let baseline = percentile(&sorted, 0.25);
    let (peak_idx, &peak) = smoothed
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    if peak - baseline < 5.0 * (baseline.max(0.0) + 1.0).sqrt() {
        return Err(StarkError::NoPeak);
    }
    let half = baseline + (peak - baseline) / 2.0;
    let mut left = peak_idx;
    while left > 0 && smoothed[left] > half {
        left -= 1;
    }
    let mut right = peak_idx;
    while right + 1 < smoothed.len() && smoothed[right] > half {
        right += 1;
    }
    let bin = (detunings[detunings.len() - 1] - detunings[0]).abs() / (detunings.len() - 1) as f64;
    let fwhm = ((right - left) as f64 * bin).max(2.0 * bin);
    Ok(Moments {
        center: detunings[peak_idx],
        fwhm,
        peak,
        baseline,
    })
}

/// Weighted (Poisson) nonlinear Voigt fit of a spectrum.
///
/// With `fix_gamma` the Lorentzian FWHM is clamped and only the Gaussian
/// width, center, area and baseline float.
pub fn fit_voigt(spec: &Spectrum, fix_gamma: Option<f64>) -> Result<VoigtFit> {
    let n = spec.detunings_mhz.len();
    if n < 10 {
        return Err(StarkError::Data(format!(
            "need at least 10 bins for a Voigt fit, got {n}"
        )));
    }
    let m = estimate_moments(&spec.detunings_mhz, &spec.counts)?;
    let span = (spec.detunings_mhz[n - 1] - spec.detunings_mhz[0]).abs();
    if span < 3.0 * m.fwhm {
        return Err(StarkError::FitFailed(format!(
            "window span {span:.1} MHz is below 3x the estimated FWHM {:.1} MHz",
            m.fwhm
        )));
    }

    let (gamma0, sigma0) = match fix_gamma {
        Some(g) => (g, sigma_from_fwhm(m.fwhm, g).max(0.05 * m.fwhm)),
        None => (0.5 * m.fwhm, 0.25 * m.fwhm / 2.3548),
    };
    let peak_density = voigt_density(0.0, gamma0, sigma0);
    let area0 = (m.peak - m.baseline) / peak_density;

    let sqrt_w: Vec<f64> = spec.counts.iter().map(|&c| 1.0 / c.max(1.0).sqrt()).collect();
    let dets = &spec.detunings_mhz;
    let counts = &spec.counts;

    let model_resid = |center: f64, gamma: f64, sigma: f64, area: f64, baseline: f64,
                       out: &mut [f64]| {
        let g = gamma.abs();
        let s = sigma.abs();
        for i in 0..n {
            let v = voigt_density(dets[i] - center, g, s.max(if g == 0.0 { 1e-9 } else { 0.0 }));
            out[i] = (baseline + area * v - counts[i]) * sqrt_w[i];
        }
    };

    let (params, jtj_inv, cost) = match fix_gamma {
        Some(g) => {
            let p0 = [m.center, sigma0, area0, m.baseline];
            let scales = [m.fwhm, m.fwhm, area0.abs().max(1.0), m.peak.max(1.0)];
            let res = lm::minimize(
                |p, out| model_resid(p[0], g, p[1], p[2], p[3], out),
                n,
                &p0,
                &scales,
                &lm::LmConfig::default(),
            )?;
            (res.params, res.jtj_inv, res.cost)
        }
        None => {
            let p0 = [m.center, gamma0, sigma0, area0, m.baseline];
            let scales = [m.fwhm, m.fwhm, m.fwhm, area0.abs().max(1.0), m.peak.max(1.0)];
            let res = lm::minimize(
                |p, out| model_resid(p[0], p[1], p[2], p[3], p[4], out),
                n,
                &p0,
                &scales,
                &lm::LmConfig::default(),
            )?;
            (res.params, res.jtj_inv, res.cost)
        }
    };

    let n_par = params.len();
    let red_chi2 = cost / (n - n_par) as f64;
    // full 5x5 covariance with a zero gamma row/column when gamma is fixed
    let mut cov = vec![vec![0.0; 5]; 5];
    let map_idx: Vec<usize> = if fix_gamma.is_some() {
        vec![0, 2, 3, 4]
    } else {
        vec![0, 1, 2, 3, 4]
    };
    for (i, &ii) in map_idx.iter().enumerate() {
        for (j, &jj) in map_idx.iter().enumerate() {
            cov[ii][jj] = jtj_inv[(i, j)] * red_chi2;
        }
    }
    let err = |k: usize| cov[k][k].max(0.0).sqrt();

    let (center, gamma, sigma, area, baseline) = match fix_gamma {
        Some(g) => (params[0], g, params[1].abs(), params[2], params[3]),
        None => (params[0], params[1].abs(), params[2].abs(), params[3], params[4]),
    };
    Ok(VoigtFit {
        center_mhz: center,
        center_err: err(0),
        gamma_mhz: gamma,
        gamma_err: if fix_gamma.is_some() { 0.0 } else { err(1) },
        sigma_mhz: sigma,
        sigma_err: err(2),
        area,
        baseline,
        covariance: cov,
        reduced_chi2: red_chi2,
        gamma_fixed: fix_gamma.is_some(),
    })
}

/// Stark-parabola fit: weighted quadratic regression of line center against
/// voltage. `curvature` is the magnitude of the quadratic coefficient of a
/// red-shifting (downward-opening) parabola, MHz/V^2.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParabolaFit {
    pub curvature: f64,
    pub curvature_err: f64,
    pub vertex_voltage: f64,
    pub vertex_voltage_err: f64,
    pub vertex_frequency_mhz: f64,
    pub vertex_frequency_err: f64,
    /// Shift coefficient curvature / g^2, MHz/(kV/cm)^2.
    pub kappa: f64,
    pub kappa_err: f64,
    /// Polynomial coefficients (c0, c1, c2) of center = c0 + c1 V + c2 V^2.
    pub coeffs: [f64; 3],
    pub covariance: [[f64; 3]; 3],
    pub reduced_chi2: f64,
}

/// Fit `(voltage, center_mhz, center_err_mhz)` points with a weighted
/// quadratic and convert the curvature to a shift coefficient using the
/// electrode geometry factor (propagating its configured uncertainty).
pub fn fit_parabola(points: &[(f64, f64, f64)], geom: &ElectrodeGeometry) -> Result<ParabolaFit> {
    geom.validate()?;
    let mut distinct: Vec<f64> = points.iter().map(|p| p.0).collect();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    if distinct.len() < 4 {
        return Err(StarkError::Data(format!(
            "need at least 4 distinct voltages, got {}",
            distinct.len()
        )));
    }

    let n = points.len();
    let mut ata = nalgebra::Matrix3::<f64>::zeros();
    let mut atb = nalgebra::Vector3::<f64>::zeros();
    for &(v, y, e) in points {
        let w = if e > 0.0 { 1.0 / (e * e) } else { 1.0 };
        let row = [1.0, v, v * v];
        for i in 0..3 {
            for j in 0..3 {
                ata[(i, j)] += w * row[i] * row[j];
            }
            atb[i] += w * row[i] * y;
        }
    }
    let ata_inv = ata
        .try_inverse()
        .ok_or_else(|| StarkError::Data("rank-deficient design matrix".into()))?;
    let coeffs = ata_inv * atb;
    let (c0, c1, c2) = (coeffs[0], coeffs[1], coeffs[2]);

    let mut chi2 = 0.0;
    for &(v, y, e) in points {
        let w = if e > 0.0 { 1.0 / (e * e) } else { 1.0 };
        let r = c0 + c1 * v + c2 * v * v - y;
        chi2 += w * r * r;
    }
    let red_chi2 = if n > 3 { chi2 / (n - 3) as f64 } else { 1.0 };
    let scale = red_chi2.max(1.0);
    let mut cov = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            cov[i][j] = ata_inv[(i, j)] * scale;
        }
    }

    let curvature = -c2;
    let curvature_err = cov[2][2].max(0.0).sqrt();
    let g = geom.geometry_factor;
    let kappa = curvature / (g * g);
    let kappa_err = ((curvature_err / (g * g)).powi(2)
        + (2.0 * curvature * geom.g_uncertainty / (g * g * g)).powi(2))
    .sqrt();

    // vertex of c0 + c1 V + c2 V^2; undefined for a flat fit
    let (vv, vv_err, vf, vf_err) = if c2.abs() > 1e-12 {
        let vv = -c1 / (2.0 * c2);
        let vf = c0 - c1 * c1 / (4.0 * c2);
        // first-order propagation through the vertex formulas
        let dv = [0.0, -1.0 / (2.0 * c2), c1 / (2.0 * c2 * c2)];
        let df = [1.0, -c1 / (2.0 * c2), c1 * c1 / (4.0 * c2 * c2)];
        let quad = |grad: [f64; 3]| -> f64 {
            let mut s = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    s += grad[i] * cov[i][j] * grad[j];
                }
            }
            s.max(0.0).sqrt()
        };
        (vv, quad(dv), vf, quad(df))
    } else {
        (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
    };

    Ok(ParabolaFit {
        curvature,
        curvature_err,
        vertex_voltage: vv,
        vertex_voltage_err: vv_err,
        vertex_frequency_mhz: vf,
        vertex_frequency_err: vf_err,
        kappa,
        kappa_err,
        coeffs: [c0, c1, c2],
        covariance: cov,
        reduced_chi2: red_chi2,
    })
}

/// Square-root-law fit of spectral diffusion against shift magnitude,
/// performed linearly in the variance domain: sigma^2 = 4 a shift + sigma0^2.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SqrtLawFit {
    /// Fitted kappa * sigma_E^2 product, MHz. Negative values are reported
    /// with the `unphysical` flag set.
    pub a: f64,
    pub a_err: f64,
    pub sigma0_mhz: f64,
    pub sigma0_err: f64,
    /// Covariance of (slope, intercept) in the variance domain.
    pub covariance: [[f64; 2]; 2],
    pub unphysical: bool,
}

/// Fit `(shift_mhz, sigma_mhz)` points; shifts must be non-negative
/// magnitudes.
pub fn fit_sqrt_law(points: &[(f64, f64)]) -> Result<SqrtLawFit> {
    if points.len() < 3 {
        return Err(StarkError::Data(format!(
            "need at least 3 points for the square-root-law fit, got {}",
            points.len()
        )));
    }
    if points.iter().any(|p| p.0 < 0.0) {
        return Err(StarkError::Data("shift magnitudes must be >= 0".into()));
    }
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(shift, sigma) in points {
        let y = sigma * sigma;
        sx += shift;
        sy += y;
        sxx += shift * shift;
        sxy += shift * y;
    }
    let det = n * sxx - sx * sx;
    if det.abs() < 1e-12 * n * sxx.max(1.0) {
        return Err(StarkError::Data(
            "degenerate shift values in square-root-law fit".into(),
        ));
    }
    let slope = (n * sxy - sx * sy) / det;
    let intercept = (sy - slope * sx) / n;

    let ssr: f64 = points
        .iter()
        .map(|&(shift, sigma)| {
            let r = sigma * sigma - (slope * shift + intercept);
            r * r
        })
        .sum();
    let s2 = if points.len() > 2 {
        ssr / (points.len() - 2) as f64
    } else {
        0.0
    };
    let slope_var = s2 * n / det;
    let intercept_var = s2 * sxx / det;
    let cross = -s2 * sx / det;

    let a = slope / 4.0;
    let a_err = slope_var.max(0.0).sqrt() / 4.0;
    let sigma0 = intercept.max(0.0).sqrt();
    let sigma0_err = if sigma0 > 1e-9 {
        intercept_var.max(0.0).sqrt() / (2.0 * sigma0)
    } else {
        intercept_var.max(0.0).sqrt().sqrt()
    };
    Ok(SqrtLawFit {
        a,
        a_err,
        sigma0_mhz: sigma0,
        sigma0_err,
        covariance: [[slope_var, cross], [cross, intercept_var]],
        unphysical: a < 0.0,
    })
}

/// Field-noise standard deviation from the fitted product a = kappa sigma_E^2.
pub fn extract_field_variance(a: f64, kappa: f64) -> Result<f64> {
    if kappa <= 0.0 {
        return Err(StarkError::InvalidParameter("kappa must be > 0".into()));
    }
    if a < 0.0 {
        return Err(StarkError::InvalidParameter("a must be >= 0".into()));
    }
    Ok((a / kappa).sqrt())
}

/// As [`extract_field_variance`], with first-order uncertainty propagation.
pub fn extract_field_variance_with_err(
    a: f64,
    a_err: f64,
    kappa: f64,
    kappa_err: f64,
) -> Result<(f64, f64)> {
    let sigma_e = extract_field_variance(a, kappa)?;
    if sigma_e == 0.0 {
        return Ok((0.0, 0.0));
    }
    let rel = ((a_err / a).powi(2) + (kappa_err / kappa).powi(2)).sqrt() / 2.0;
    Ok((sigma_e, sigma_e * rel))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::{sd_sigma, stark_shift, FieldVector, MoleculeModel, NoiseModel};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn synthetic_spectrum(
        center: f64,
        gamma: f64,
        sigma: f64,
        area: f64,
        baseline: f64,
        span: f64,
        n: usize,
    ) -> Spectrum {
        let detunings: Vec<f64> = (0..n)
            .map(|i| center - span / 2.0 + span * i as f64 / (n - 1) as f64)
            .collect();
        let counts = detunings
            .iter()
            .map(|&d| baseline + area * voigt_density(d - center, gamma, sigma))
            .collect();
        Spectrum {
            detunings_mhz: detunings,
            counts,
            n_traces: 1,
            observation_span_s: 0.0,
        }
    }

    #[test]
    fn voigt_fit_recovers_noiseless_parameters() {
        // single diffusing line on a 0.5 GHz/s, 10 ms grid (5 MHz bins).
        let spec = synthetic_spectrum(-320.0, 70.0, 40.0, 5e4, 10.0, 2000.0, 401);
        let fit = fit_voigt(&spec, None).unwrap();
        assert_relative_eq!(fit.gamma_mhz, 70.0, max_relative = 0.01);
        assert_relative_eq!(fit.sigma_mhz, 40.0, max_relative = 0.01);
        assert_relative_eq!(fit.center_mhz, -320.0, max_relative = 1e-4);
        assert_relative_eq!(fit.area, 5e4, max_relative = 0.01);
    }

    #[test]
    fn voigt_fit_oracle_equivalence_tight() {
        // noiseless round trip must recover to 0.1%
        let spec = synthetic_spectrum(120.0, 90.0, 55.0, 2e4, 4.0, 3000.0, 601);
        let fit = fit_voigt(&spec, None).unwrap();
        assert_relative_eq!(fit.gamma_mhz, 90.0, max_relative = 1e-3);
        assert_relative_eq!(fit.sigma_mhz, 55.0, max_relative = 1e-3);
    }

    #[test]
    fn voigt_fit_pure_lorentzian_sigma_consistent_with_zero() {
        let spec = synthetic_spectrum(0.0, 80.0, 0.0, 4e4, 5.0, 2000.0, 401);
        let fit = fit_voigt(&spec, None).unwrap();
        assert!(fit.sigma_mhz <= 2.0 * fit.sigma_err.max(1.0));
        assert_relative_eq!(fit.gamma_mhz, 80.0, max_relative = 0.02);
    }

    #[test]
    fn voigt_fit_fixed_gamma() {
        let spec = synthetic_spectrum(0.0, 80.0, 60.0, 4e4, 5.0, 3000.0, 601);
        let fit = fit_voigt(&spec, Some(80.0)).unwrap();
        assert!(fit.gamma_fixed);
        assert_eq!(fit.gamma_mhz, 80.0);
        assert_relative_eq!(fit.sigma_mhz, 60.0, max_relative = 1e-3);
    }

    #[test]
    fn voigt_fit_rejects_flat_and_short_data() {
        let flat = Spectrum {
            detunings_mhz: (0..100).map(|i| i as f64 * 5.0).collect(),
            counts: vec![10.0; 100],
            n_traces: 1,
            observation_span_s: 0.0,
        };
        assert!(matches!(fit_voigt(&flat, None), Err(StarkError::NoPeak)));
        let short = synthetic_spectrum(0.0, 80.0, 40.0, 1e4, 0.0, 100.0, 5);
        assert!(fit_voigt(&short, None).is_err());
    }

    #[test]
    fn integrate_traces_conserves_counts() {
        let make = |offset: u32, start: f64| ScanTrace {
            detunings_mhz: vec![0.0, 5.0, 10.0],
            counts: vec![offset, offset + 1, offset + 2],
            start_time_s: start,
            sweep_index: 0,
        };
        let traces = vec![make(1, 0.0), make(10, 30.0)];
        let spec = integrate_traces(&traces).unwrap();
        let total: f64 = spec.counts.iter().sum();
        let expect: u32 = traces.iter().flat_map(|t| t.counts.iter()).sum();
        assert_eq!(total, expect as f64);
        assert_eq!(spec.n_traces, 2);
        assert_eq!(spec.observation_span_s, 30.0);

        let single = integrate_traces(&traces[..1]).unwrap();
        assert_eq!(single.counts, vec![1.0, 2.0, 3.0]);

        let mut bad = make(1, 0.0);
        bad.detunings_mhz[1] = 6.0;
        assert!(matches!(
            integrate_traces(&[make(1, 0.0), bad]),
            Err(StarkError::GridMismatch)
        ));
    }

    #[test]
    fn parabola_fit_exact_round_trip() {
        // Delta nu = -4.66 (V - v0)^2 + c built from the kappa = 1.82, g = 1.6
        // combination: 1.82 * 1.6^2 = 4.6592 MHz/V^2.
        let curvature = 1.82 * 1.6 * 1.6;
        let v0 = -10.0;
        let c = -500.0;
        let points: Vec<(f64, f64, f64)> = (-10..=10)
            .map(|i| {
                let v = i as f64 * 5.0;
                (v, -curvature * (v - v0) * (v - v0) + c, 1.0)
            })
            .collect();
        let geom = ElectrodeGeometry::default();
        let fit = fit_parabola(&points, &geom).unwrap();
        assert_relative_eq!(fit.curvature, curvature, max_relative = 1e-10);
        assert_relative_eq!(fit.kappa, 1.82, max_relative = 1e-10);
        assert_relative_eq!(fit.vertex_voltage, v0, max_relative = 1e-8);
        assert_relative_eq!(fit.vertex_frequency_mhz, c, max_relative = 1e-8);
    }

    #[test]
    fn parabola_fit_flat_data() {
        let points: Vec<(f64, f64, f64)> =
            (0..8).map(|i| (i as f64 * 10.0, 100.0, 1.0)).collect();
        let fit = fit_parabola(&points, &ElectrodeGeometry::default()).unwrap();
        assert!(fit.curvature.abs() <= 2.0 * fit.curvature_err.max(1e-9));
    }

    #[test]
    fn parabola_fit_needs_four_voltages() {
        let points = vec![(0.0, 1.0, 1.0), (1.0, 2.0, 1.0), (2.0, 3.0, 1.0)];
        assert!(fit_parabola(&points, &ElectrodeGeometry::default()).is_err());
    }

    #[test]
    fn sqrt_law_fit_exact_on_noiseless_data() {
        for &(a, sigma0) in &[(0.410f64, 0.0f64), (0.53, 0.0), (1.297, 70.0)] {
            let points: Vec<(f64, f64)> = (0..20)
                .map(|i| {
                    let shift = 700.0 * i as f64;
                    (shift, (4.0 * a * shift + sigma0 * sigma0).sqrt())
                })
                .collect();
            let fit = fit_sqrt_law(&points).unwrap();
            assert_relative_eq!(fit.a, a, max_relative = 1e-10);
            assert_abs_diff_eq!(fit.sigma0_mhz, sigma0, epsilon = 1e-6 * (1.0 + sigma0));
            assert!(!fit.unphysical);
        }
    }

    #[test]
    fn sqrt_law_fit_flat_sigmas_give_zero_a() {
        let points: Vec<(f64, f64)> = (0..10).map(|i| (500.0 * i as f64, 70.0)).collect();
        let fit = fit_sqrt_law(&points).unwrap();
        assert_abs_diff_eq!(fit.a, 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.sigma0_mhz, 70.0, epsilon = 1e-8);
    }

    #[test]
    fn sqrt_law_fit_flags_negative_slope() {
        let points = vec![(0.0, 100.0), (1000.0, 80.0), (2000.0, 60.0), (3000.0, 40.0)];
        let fit = fit_sqrt_law(&points).unwrap();
        assert!(fit.unphysical);
        assert!(fit.a < 0.0);
    }

    #[test]
    fn field_variance_reference_values() {
        let s = extract_field_variance(0.410, 1.82).unwrap();
        assert_abs_diff_eq!(s, 0.475, epsilon = 5e-4);
        // second dataset: the formula gives 0.567 kV/cm from (0.53, 1.65)
        let s = extract_field_variance(0.53, 1.65).unwrap();
        assert_abs_diff_eq!(s, 0.567, epsilon = 5e-4);
        assert_eq!(extract_field_variance(0.0, 1.0).unwrap(), 0.0);
        assert!(extract_field_variance(0.4, 0.0).is_err());
        assert!(extract_field_variance(-0.1, 1.0).is_err());
    }

    #[test]
    fn pipeline_identity_sd_to_sigma_e() {
        // sd_sigma samples at 20 voltages -> sqrt-law fit -> sigma_E
        let mol = MoleculeModel::default();
        let noise = NoiseModel {
            sigma_ex: 0.47,
            sigma_ez: 0.0,
            sigma0_mhz: 20.0,
            ..NoiseModel::default()
        };
        let g = 1.6;
        let points: Vec<(f64, f64)> = (1..=20)
            .map(|i| {
                let v = -3.0 * i as f64;
                let e = FieldVector::new(g * v, 0.0);
                (stark_shift(&mol, e).abs(), sd_sigma(&mol, e, &noise))
            })
            .collect();
        let fit = fit_sqrt_law(&points).unwrap();
        let sigma_e = extract_field_variance(fit.a, mol.kappa_xx).unwrap();
        assert_relative_eq!(sigma_e, 0.47, max_relative = 1e-6);
    }
}
