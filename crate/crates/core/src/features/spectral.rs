//! Frequency-domain indicators: DFT spectral moments and wavelet entropies.

use rustfft::{num_complex::Complex, FftPlanner};

/// Spectral moments of the one-sided, DC-free power spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SpectralFeatures {
    /// Gravity center of frequency, Hz.
    pub gcf: f64,
    /// Root mean square of frequency, Hz.
    pub rmsf: f64,
    /// Mean square frequency, Hz^2.
    pub msf: f64,
    /// Standard deviation of frequency, Hz.
    pub stdf: f64,
}

/// Wavelet energy entropy and wavelet singular entropy.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WaveletEntropies {
    pub wee: f64,
    pub wse: f64,
}

/// One-sided power spectrum of the mean-removed signal, excluding DC.
///
/// Returns (frequencies Hz, powers) with Parseval scaling: the powers sum to
/// the time-domain energy of the mean-removed signal.
pub fn power_spectrum(values: &[f64], rate_hz: f64) -> (Vec<f64>, Vec<f64>) {
    let n = values.len();
    if n < 2 {
        return (Vec::new(), Vec::new());
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = values
        .iter()
        .map(|&x| Complex::new(x - mean, 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);

    // even n: bins 1..=n/2 with the Nyquist bin unmirrored;
    // odd n: bins 1..=(n-1)/2, all mirrored.
    let (last, has_nyquist) = if n % 2 == 0 {
        (n / 2, true)
    } else {
        ((n - 1) / 2, false)
    };
    let mut freqs = Vec::with_capacity(last);
    let mut powers = Vec::with_capacity(last);
    for k in 1..=last {
        let weight = if has_nyquist && k == last { 1.0 } else { 2.0 };
        freqs.push(k as f64 * rate_hz / n as f64);
        powers.push(weight * buf[k].norm_sqr() / n as f64);
    }
    (freqs, powers)
}

/// Whether the residual spectrum is numerically indistinguishable from zero.
fn negligible(total_power: f64, values: &[f64]) -> bool {
    let scale = values.iter().fold(1.0f64, |m, &x| m.max(x.abs()));
    total_power <= values.len() as f64 * (1e-12 * scale).powi(2)
}

/// DFT spectral moments (GCF, RMSF, MSF, STDF) of a uniformly sampled signal.
///
/// The mean is removed before the transform so a constant sequence scores
/// zero on all four moments; an all-zero residual spectrum also yields zeros.
pub fn dft_features(values: &[f64], rate_hz: f64) -> SpectralFeatures {
    if values.len() < 4 {
        return SpectralFeatures::default();
    }
    let (freqs, powers) = power_spectrum(values, rate_hz);
    let total: f64 = powers.iter().sum();
    if negligible(total, values) {
        return SpectralFeatures::default();
    }
    let gcf = freqs
        .iter()
        .zip(&powers)
        .map(|(f, p)| f * p)
        .sum::<f64>()
        / total;
    let msf = freqs
        .iter()
        .zip(&powers)
        .map(|(f, p)| f * f * p)
        .sum::<f64>()
        / total;
    let stdf = (freqs
        .iter()
        .zip(&powers)
        .map(|(f, p)| (f - gcf).powi(2) * p)
        .sum::<f64>()
        / total)
        .max(0.0)
        .sqrt();
    SpectralFeatures {
        gcf,
        rmsf: msf.max(0.0).sqrt(),
        msf,
        stdf,
    }
}

/// Daubechies-4 decomposition low-pass filter (8 taps, orthonormal).
const DB4_LO: [f64; 8] = [
    -0.010597401784997278,
    0.032883011666982945,
    0.030841381835986965,
    -0.18703481171888114,
    -0.02798376941698385,
    0.6308807679295904,
    0.7148465705525415,
    0.23037781330885523,
];

fn db4_hi() -> [f64; 8] {
    let mut g = [0.0; 8];
    for (k, gk) in g.iter_mut().enumerate() {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        *gk = sign * DB4_LO[7 - k];
    }
    g
}

/// One periodized analysis step; odd inputs are padded by repeating the last
/// sample. Returns (approximation, detail).
fn dwt_step(signal: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut x = signal.to_vec();
    if x.len() % 2 == 1 {
        x.push(*x.last().unwrap());
    }
    let n = x.len();
    let half = n / 2;
    let hi = db4_hi();
    let mut approx = Vec::with_capacity(half);
    let mut detail = Vec::with_capacity(half);
    for k in 0..half {
        let mut a = 0.0;
        let mut d = 0.0;
        for m in 0..8 {
            let idx = (2 * k + m) % n;
            a += DB4_LO[m] * x[idx];
            d += hi[m] * x[idx];
        }
        approx.push(a);
        detail.push(d);
    }
    (approx, detail)
}

/// Multi-level db4 decomposition. Depth is capped so every decomposed signal
/// is at least one filter long. Bands are ordered fine detail first, final
/// approximation last.
pub fn wavelet_bands(values: &[f64], max_levels: usize) -> Vec<Vec<f64>> {
    let mut bands = Vec::new();
    let mut current = values.to_vec();
    for _ in 0..max_levels {
        if current.len() < 8 {
            break;
        }
        let (approx, detail) = dwt_step(&current);
        bands.push(detail);
        current = approx;
    }
    bands.push(current);
    bands
}

fn entropy(probabilities: impl Iterator<Item = f64>) -> f64 {
    let mut h = 0.0;
    for p in probabilities {
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    h.max(0.0)
}

/// Wavelet energy entropy and singular entropy over a 3-level db4
/// decomposition. A (numerically) zero signal scores (0, 0) by convention.
pub fn dwt_features(values: &[f64]) -> WaveletEntropies {
    if values.len() < 16 {
        return WaveletEntropies::default();
    }
    let bands = wavelet_bands(values, 3);
    let energies: Vec<f64> = bands
        .iter()
        .map(|b| b.iter().map(|c| c * c).sum::<f64>())
        .collect();
    let total: f64 = energies.iter().sum();
    if negligible(total, values) {
        return WaveletEntropies::default();
    }
    let wee = entropy(energies.iter().map(|e| e / total));

    // Singular values of the zero-padded band matrix via its Gram matrix.
    let width = bands.iter().map(Vec::len).max().unwrap_or(0);
    let rows = bands.len();
    let mut gram = vec![vec![0.0; rows]; rows];
    for i in 0..rows {
        for j in i..rows {
            let mut s = 0.0;
            let m = bands[i].len().min(bands[j].len()).min(width);
            for k in 0..m {
                s += bands[i][k] * bands[j][k];
            }
            gram[i][j] = s;
            gram[j][i] = s;
        }
    }
    let eigenvalues = jacobi_eigenvalues(&mut gram);
    let singular: Vec<f64> = eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let sigma_sum: f64 = singular.iter().sum();
    let wse = if sigma_sum <= 0.0 {
        0.0
    } else {
        entropy(singular.iter().map(|s| s / sigma_sum))
    };
    WaveletEntropies { wee, wse }
}

/// Eigenvalues of a small symmetric matrix by cyclic Jacobi rotations.
fn jacobi_eigenvalues(a: &mut [Vec<f64>]) -> Vec<f64> {
    let n = a.len();
    let scale = a
        .iter()
        .flat_map(|row| row.iter())
        .fold(0.0f64, |m, &x| m.max(x.abs()));
    if scale == 0.0 {
        return vec![0.0; n];
    }
    let tol = 1e-15 * scale;
    for _sweep in 0..64 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[p][q].abs();
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() <= tol * 1e-2 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn constant_sequence_scores_zero() {
        let values = vec![3.7; 64];
        let f = dft_features(&values, 10.0);
        assert_eq!(f, SpectralFeatures::default());
    }

    #[test]
    fn pure_sinusoid_moments() {
        // 1 Hz sampled at 10 Hz, n = 100 -> all power in the 1 Hz bin
        let values: Vec<f64> = (0..100)
            .map(|i| (2.0 * std::f64::consts::PI * 0.1 * i as f64).sin())
            .collect();
        let f = dft_features(&values, 10.0);
        assert_abs_diff_eq!(f.gcf, 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(f.rmsf, 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(f.msf, 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(f.stdf, 0.0, epsilon = 1e-6);
    }

    #[test]
    fn parseval_consistency() {
        let values: Vec<f64> = (0..200)
            .map(|i| {
                let t = i as f64 * 0.1;
                20.0 + 2.0 * (1.3 * t).sin() + 0.7 * (4.1 * t).cos() + (t * 0.23).fract()
            })
            .collect();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let energy: f64 = values.iter().map(|x| (x - mean).powi(2)).sum();
        let (_, powers) = power_spectrum(&values, 10.0);
        let total: f64 = powers.iter().sum();
        assert_abs_diff_eq!(total / energy, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn parseval_consistency_odd_length() {
        let values: Vec<f64> = (0..151)
            .map(|i| (0.37 * i as f64).sin() + 0.2 * (0.11 * i as f64).cos())
            .collect();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let energy: f64 = values.iter().map(|x| (x - mean).powi(2)).sum();
        let (_, powers) = power_spectrum(&values, 10.0);
        let total: f64 = powers.iter().sum();
        assert_abs_diff_eq!(total / energy, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn zero_sequence_wavelet_entropies() {
        let values = vec![0.0; 64];
        assert_eq!(dwt_features(&values), WaveletEntropies::default());
    }

    #[test]
    fn constant_sequence_energy_in_one_band() {
        // db4 annihilates constants: all detail bands are zero, so the
        // energy distribution is a single outcome and WEE = 0.
        let values = vec![5.0; 64];
        let w = dwt_features(&values);
        assert_abs_diff_eq!(w.wee, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn dwt_preserves_energy() {
        let values: Vec<f64> = (0..200)
            .map(|i| (0.9 * i as f64).sin() + 0.3 * (0.17 * i as f64).cos())
            .collect();
        let bands = wavelet_bands(&values, 3);
        assert_eq!(bands.len(), 4);
        let band_energy: f64 = bands
            .iter()
            .map(|b| b.iter().map(|c| c * c).sum::<f64>())
            .sum();
        let energy: f64 = values.iter().map(|x| x * x).sum();
        assert_abs_diff_eq!(band_energy / energy, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn jacobi_matches_known_eigenvalues() {
        let mut m = vec![vec![2.0, 1.0], vec![1.0, 2.0]];
        let mut eig = jacobi_eigenvalues(&mut m);
        eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_abs_diff_eq!(eig[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eig[1], 3.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn entropies_nonnegative_and_bounded(
            values in proptest::collection::vec(-20.0f64..20.0, 16..128)
        ) {
            let w = dwt_features(&values);
            prop_assert!(w.wee >= 0.0);
            prop_assert!(w.wse >= 0.0);
            let bands = wavelet_bands(&values, 3).len() as f64;
            prop_assert!(w.wee <= bands.ln() + 1e-12);
        }

        #[test]
        fn rmsf_squared_is_msf(values in proptest::collection::vec(-5.0f64..5.0, 8..64)) {
            let f = dft_features(&values, 10.0);
            prop_assert!((f.rmsf * f.rmsf - f.msf).abs() <= 1e-9 * f.msf.abs().max(1.0));
        }
    }
}
