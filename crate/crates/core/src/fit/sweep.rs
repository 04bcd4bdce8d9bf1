//! Line extraction from sweep maps: per-voltage peak detection, windowed
//! Voigt fits and nearest-neighbor tracking of line centers across voltages.

use serde::{Deserialize, Serialize};

use crate::error::{Result, StarkError};
use crate::sim::SweepMap;

use super::{fit_voigt, integrate_traces, Spectrum, VoigtFit};

/// Configuration for [`fit_sweep_lines`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PeakFitConfig {
    /// Fixed Lorentzian FWHM (MHz) passed to the Voigt fits, if any.
    pub fix_gamma: Option<f64>,
    /// Largest center jump between neighboring voltages still attributed to
    /// the same line, MHz.
    pub max_jump_mhz: f64,
    /// Peak-over-baseline threshold in units of the shot noise.
    pub min_snr: f64,
    /// Fits closer than this are treated as one line (the first, strongest
    /// peak wins). Guards against multimodal profiles of a single strongly
    /// diffusing line; lines of distinct molecules must sit further apart.
    pub min_separation_mhz: f64,
    /// Restrict the analysis to voltages inside (lo, hi), inclusive.
    pub voltage_mask: Option<(f64, f64)>,
}

impl Default for PeakFitConfig {
    fn default() -> Self {
        PeakFitConfig {
            fix_gamma: None,
            max_jump_mhz: 3000.0,
            min_snr: 5.0,
            min_separation_mhz: 500.0,
            voltage_mask: None,
        }
    }
}

/// One spectral line followed across voltages.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LineTrack {
    /// (voltage, windowed Voigt fit) pairs, ordered by voltage index.
    pub points: Vec<(f64, VoigtFit)>,
}

impl LineTrack {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// (voltage, center, center_err) triples of a track, ready for
/// [`super::fit_parabola`].
pub fn parabola_points(track: &LineTrack) -> Vec<(f64, f64, f64)> {
    track
        .points
        .iter()
        .map(|(v, f)| (*v, f.center_mhz, f.center_err.max(1e-6)))
        .collect()
}

/// Indices of local maxima standing `min_snr` shot-noise units above the
/// lower-quartile baseline, separated by at least a smoothing window.
fn detect_peaks(counts: &[f64], min_snr: f64) -> Vec<usize> {
    let n = counts.len();
    if n < 10 {
        return Vec::new();
    }
    let smoothed = super::smooth(counts, 2);
    let mut sorted = smoothed.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let baseline = super::percentile(&sorted, 0.25);
    let threshold = baseline + min_snr * (baseline.max(0.0) + 1.0).sqrt();
    let half = 8usize;
    let mut peaks = Vec::new();
    for i in 0..n {
        if smoothed[i] <= threshold {
            continue;
        }
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(n);
        // strict on the left, ties allowed on the right, so a flat-topped
        // peak yields exactly one index
        let is_max = smoothed[lo..hi].iter().enumerate().all(|(k, &v)| {
            if lo + k < i {
                v < smoothed[i]
            } else {
                v <= smoothed[i]
            }
        });
        if is_max {
            if let Some(&last) = peaks.last() {
                if i - last <= half {
                    continue;
                }
            }
            peaks.push(i);
        }
    }
    peaks
}

/// Voigt-fit one detected peak on a window around it.
fn fit_peak_window(spec: &Spectrum, peak_idx: usize, fix_gamma: Option<f64>) -> Result<VoigtFit> {
    let n = spec.detunings_mhz.len();
    let counts = &spec.counts;
    let smoothed = super::smooth(counts, 2);
    let mut sorted = smoothed.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let baseline = super::percentile(&sorted, 0.25);
    let half = baseline + (smoothed[peak_idx] - baseline) / 2.0;
    let mut left = peak_idx;
    while left > 0 && smoothed[left] > half {
        left -= 1;
    }
    let mut right = peak_idx;
    while right + 1 < n && smoothed[right] > half {
        right += 1;
    }
    let fwhm_bins = (right - left).max(2);
    let pad = (4 * fwhm_bins).max(15);
    let lo = peak_idx.saturating_sub(pad);
    let hi = (peak_idx + pad + 1).min(n);
    let window = Spectrum {
        detunings_mhz: spec.detunings_mhz[lo..hi].to_vec(),
        counts: counts[lo..hi].to_vec(),
        n_traces: spec.n_traces,
        observation_span_s: spec.observation_span_s,
    };
    fit_voigt(&window, fix_gamma)
}

/// Detect and fit every line in each per-voltage integrated spectrum of a
/// sweep map, then stitch fits into tracks by nearest-center association.
///
/// Tracks are returned longest first. Voltages whose sessions show no peak
/// are skipped; a fit failure on a detected peak is also skipped rather than
/// aborting the map.
pub fn fit_sweep_lines(map: &SweepMap, cfg: &PeakFitConfig) -> Result<Vec<LineTrack>> {
    if map.voltages.len() != map.traces.len() {
        return Err(StarkError::Data(
            "sweep map voltages and traces have different lengths".into(),
        ));
    }
    let mut tracks: Vec<LineTrack> = Vec::new();
    // last known center per track, for the association step
    let mut last_center: Vec<f64> = Vec::new();

    for (&v, traces) in map.voltages.iter().zip(&map.traces) {
        if let Some((lo, hi)) = cfg.voltage_mask {
            if v < lo || v > hi {
                continue;
            }
        }
        let spec = integrate_traces(traces)?;
        let mut fits: Vec<VoigtFit> = Vec::new();
        let (d_lo, d_hi) = (
            spec.detunings_mhz[0].min(*spec.detunings_mhz.last().unwrap()),
            spec.detunings_mhz[0].max(*spec.detunings_mhz.last().unwrap()),
        );
        let mut peak_idx = detect_peaks(&spec.counts, cfg.min_snr);
        peak_idx.sort_by(|&a, &b| spec.counts[b].partial_cmp(&spec.counts[a]).unwrap());
        for idx in peak_idx {
            if let Ok(fit) = fit_peak_window(&spec, idx, cfg.fix_gamma) {
                // runaway fits and duplicates converging onto one line are
                // dropped; detection order is strongest-first per mode
                if !fit.center_mhz.is_finite() || fit.center_mhz < d_lo || fit.center_mhz > d_hi {
                    continue;
                }
                let sep = cfg.min_separation_mhz.max(fit.fwhm_mhz() / 2.0);
                if fits
                    .iter()
                    .all(|f| (f.center_mhz - fit.center_mhz).abs() > sep)
                {
                    fits.push(fit);
                }
            }
        }
        // greedy nearest association, closest pairs first
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (fi, fit) in fits.iter().enumerate() {
            for (ti, &c) in last_center.iter().enumerate() {
                let d = (fit.center_mhz - c).abs();
                if d <= cfg.max_jump_mhz {
                    pairs.push((d, fi, ti));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut fit_used = vec![false; fits.len()];
        let mut track_used = vec![false; tracks.len()];
        let mut assignment: Vec<Option<usize>> = vec![None; fits.len()];
        for (_, fi, ti) in pairs {
            if !fit_used[fi] && !track_used[ti] {
                fit_used[fi] = true;
                track_used[ti] = true;
                assignment[fi] = Some(ti);
            }
        }
        for (fi, fit) in fits.into_iter().enumerate() {
            match assignment[fi] {
                Some(ti) => {
                    last_center[ti] = fit.center_mhz;
                    tracks[ti].points.push((v, fit));
                }
                None => {
                    last_center.push(fit.center_mhz);
                    tracks.push(LineTrack {
                        points: vec![(v, fit)],
                    });
                }
            }
        }
    }
    tracks.sort_by(|a, b| b.len().cmp(&a.len()));
    Ok(tracks)
}
