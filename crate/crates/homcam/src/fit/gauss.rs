//! Δt peak fits: two Gaussians with a shared mean plus a constant for the
//! flat random-coincidence background.

use statrs::function::erf::erf;

use crate::recon::PairKind;

use super::lm::{fit_least_squares, LmOptions, Transform};
use super::FitError;

/// Binned Δt distribution. Cross histograms are two-sided; same-fiber
/// histograms hold ordered (non-negative) differences and are fitted with
/// the folded model.
#[derive(Debug, Clone)]
pub struct CoincidenceHistogram {
    /// Bin edges, ns; `counts.len() + 1` entries.
    pub edges_ns: Vec<f64>,
    pub counts: Vec<f64>,
    pub kind: PairKind,
}

impl CoincidenceHistogram {
    /// Fill from Δt values with uniform bins.
    pub fn fill(dts_ns: &[f64], lo_ns: f64, hi_ns: f64, bin_ns: f64, kind: PairKind) -> Self {
        let n = (((hi_ns - lo_ns) / bin_ns).round() as usize).max(1);
        let mut counts = vec![0.0; n];
        for &dt in dts_ns {
            if dt < lo_ns || dt >= hi_ns {
                continue;
            }
            let k = (((dt - lo_ns) / bin_ns) as usize).min(n - 1);
            counts[k] += 1.0;
        }
        let edges_ns = (0..=n).map(|k| lo_ns + bin_ns * k as f64).collect();
        Self {
            edges_ns,
            counts,
            kind,
        }
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn bin_width_ns(&self) -> f64 {
        (self.edges_ns[self.n_bins()] - self.edges_ns[0]) / self.n_bins() as f64
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    fn validate(&self) -> Result<(), FitError> {
        if self.edges_ns.len() != self.counts.len() + 1 {
            return Err(FitError::Numerical {
                reason: "histogram edges/counts length mismatch".into(),
            });
        }
        if self.counts.iter().any(|&c| c < 0.0 || !c.is_finite()) {
            return Err(FitError::Numerical {
                reason: "histogram counts must be finite and >= 0".into(),
            });
        }
        Ok(())
    }
}

/// Fit quality tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitQuality {
    Ok,
    /// All bins equal: no peak to fit, background-only result.
    BackgroundOnly,
}

/// Result of the double-Gaussian + constant fit.
///
/// `n_signal` integrates the peak (both Gaussians) over the full Δt axis;
/// the flat background is reported separately per bin. A statistically
/// null amplitude clamps to zero with its error kept.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DoubleGaussianFit {
    pub n_signal: f64,
    pub n_signal_err: f64,
    pub mu_ns: f64,
    pub mu_err_ns: f64,
    pub sigma1_ns: f64,
    pub sigma1_err_ns: f64,
    pub sigma2_ns: f64,
    pub sigma2_err_ns: f64,
    pub frac1: f64,
    pub frac1_err: f64,
    pub background_per_bin: f64,
    pub background_err: f64,
    pub chi2: f64,
    pub ndf: i64,
    pub quality: FitQuality,
}

#[inline]
fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// Integral over [a, b] of the unit Gaussian at (mu, sigma).
#[inline]
fn gauss_bin(a: f64, b: f64, mu: f64, sigma: f64) -> f64 {
    normal_cdf((b - mu) / sigma) - normal_cdf((a - mu) / sigma)
}

/// Integral over [a, b) of the normalized mixture density: plain for cross
/// histograms, folded (|Δt|) for same-fiber histograms.
pub(super) fn mixture_bin(a: f64, b: f64, mu: f64, s1: f64, s2: f64, p: f64, folded: bool) -> f64 {
    let mut sig = p * gauss_bin(a, b, mu, s1) + (1.0 - p) * gauss_bin(a, b, mu, s2);
    if folded {
        sig += p * gauss_bin(a, b, -mu, s1) + (1.0 - p) * gauss_bin(a, b, -mu, s2);
    }
    sig
}

fn model_bin(a: f64, b: f64, amp: f64, mu: f64, s1: f64, s2: f64, p: f64, c: f64, folded: bool) -> f64 {
    amp * mixture_bin(a, b, mu, s1, s2, p, folded) + c
}

pub fn fit_double_gaussian(hist: &CoincidenceHistogram) -> Result<DoubleGaussianFit, FitError> {
    hist.validate()?;
    let non_empty = hist.counts.iter().filter(|&&c| c > 0.0).count();
    if non_empty < 8 {
        return Err(FitError::NotEnoughData {
            what: "non-empty histogram bins",
            got: non_empty,
            need: 8,
        });
    }
    let n = hist.n_bins();
    let max = hist.counts.iter().cloned().fold(f64::MIN, f64::max);
    let min = hist.counts.iter().cloned().fold(f64::MAX, f64::min);
    if max == min {
        // flat histogram: no peak, flag and return the background
        return Ok(DoubleGaussianFit {
            n_signal: 0.0,
            n_signal_err: hist.total().sqrt().max(1.0),
            mu_ns: 0.0,
            mu_err_ns: f64::NAN,
            sigma1_ns: f64::NAN,
            sigma1_err_ns: f64::NAN,
            sigma2_ns: f64::NAN,
            sigma2_err_ns: f64::NAN,
            frac1: 1.0,
            frac1_err: f64::NAN,
            background_per_bin: max,
            background_err: (max.max(1.0) / n as f64).sqrt(),
            chi2: 0.0,
            ndf: n as i64 - 1,
            quality: FitQuality::BackgroundOnly,
        });
    }

    let folded = hist.kind != PairKind::Cross;
    let edges = &hist.edges_ns;

    // initialization: mode bin for mu, outer-quartile mean for the
    // background, RMS around the mode for the core width
    let peak_bin = hist
        .counts
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| a.total_cmp(b))
        .map(|(i, _)| i)
        .unwrap();
    let mu0 = if folded {
        0.0
    } else {
        0.5 * (edges[peak_bin] + edges[peak_bin + 1])
    };
    let quarter = (n / 4).max(1);
    let c0 = (hist.counts[..quarter]
        .iter()
        .chain(hist.counts[n - quarter..].iter())
        .sum::<f64>()
        / (2 * quarter) as f64)
        .max(0.0);
    let total = hist.total();
    let a0 = (total - c0 * n as f64).max(max);
    let mut m2 = 0.0;
    let mut wsum = 0.0;
    for (k, &c) in hist.counts.iter().enumerate() {
        let center = 0.5 * (edges[k] + edges[k + 1]);
        let w = (c - c0).max(0.0);
        m2 += w * (center - mu0) * (center - mu0);
        wsum += w;
    }
    let bin_w = hist.bin_width_ns();
    let rms = if wsum > 0.0 { (m2 / wsum).sqrt() } else { bin_w };
    let s1_0 = (rms * 0.7).max(bin_w * 0.5);
    let s2_0 = s1_0 * 2.5;

    let counts = hist.counts.clone();
    let edges_c = edges.clone();
    let residual = move |p: &[f64], out: &mut Vec<f64>| {
        let (amp, mu, s1, s2, frac, c) = (p[0], p[1], p[2], p[3], p[4], p[5]);
        for k in 0..counts.len() {
            let m = model_bin(edges_c[k], edges_c[k + 1], amp, mu, s1, s2, frac, c, folded);
            let err = counts[k].max(1.0).sqrt();
            out.push((counts[k] - m) / err);
        }
    };

    let transforms = [
        Transform::Linear,      // amplitude
        Transform::Linear,      // mu
        Transform::LogPositive, // sigma1
        Transform::LogPositive, // sigma2
        Transform::Logistic { lo: 0.0, hi: 1.0 }, // frac1
        Transform::Linear,      // background
    ];
    let fit = fit_least_squares(
        residual,
        &[a0, mu0, s1_0, s2_0, 0.75, c0],
        &transforms,
        &LmOptions::default(),
    )?;

    let mut amp = fit.params[0];
    let amp_err = fit.errors[0];
    let (mut s1, mut s1e, mut s2, mut s2e) =
        (fit.params[2], fit.errors[2], fit.params[3], fit.errors[3]);
    let (mut p1, mut p1e) = (fit.params[4], fit.errors[4]);
    if s1 > s2 {
        std::mem::swap(&mut s1, &mut s2);
        std::mem::swap(&mut s1e, &mut s2e);
        p1 = 1.0 - p1;
        // error of (1 - p) equals error of p
        let _ = &mut p1e;
    }
    if amp < 0.0 {
        amp = 0.0;
    }

    Ok(DoubleGaussianFit {
        n_signal: amp,
        n_signal_err: amp_err,
        mu_ns: fit.params[1],
        mu_err_ns: fit.errors[1],
        sigma1_ns: s1,
        sigma1_err_ns: s1e,
        sigma2_ns: s2,
        sigma2_err_ns: s2e,
        frac1: p1,
        frac1_err: p1e,
        background_per_bin: fit.params[5],
        background_err: fit.errors[5],
        chi2: fit.chi2,
        ndf: fit.ndf,
        quality: FitQuality::Ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use rand_distr::{Distribution, Poisson};

    fn synth_hist(
        rng: &mut ChaCha12Rng,
        amp: f64,
        mu: f64,
        s1: f64,
        s2: f64,
        p: f64,
        c: f64,
        folded: bool,
    ) -> CoincidenceHistogram {
        let (lo, hi, bw) = if folded {
            (0.0, 250.0, 5.0)
        } else {
            (-250.0, 250.0, 5.0)
        };
        let n = ((hi - lo) / bw) as usize;
        let mut counts = Vec::with_capacity(n);
        for k in 0..n {
            let a = lo + bw * k as f64;
            let m = model_bin(a, a + bw, amp, mu, s1, s2, p, c, folded);
            let sample = if m > 0.0 {
                Poisson::new(m).unwrap().sample(rng)
            } else {
                0.0
            };
            counts.push(sample);
        }
        CoincidenceHistogram {
            edges_ns: (0..=n).map(|k| lo + bw * k as f64).collect(),
            counts,
            kind: if folded {
                PairKind::SameFiber1
            } else {
                PairKind::Cross
            },
        }
    }

    #[test]
    fn recovers_published_scale_peak() {
        let mut rng = ChaCha12Rng::seed_from_u64(71);
        let hist = synth_hist(&mut rng, 82_390.0, 0.0, 7.3, 17.8, 0.75, 20.0, false);
        let fit = fit_double_gaussian(&hist).unwrap();
        assert_eq!(fit.quality, FitQuality::Ok);
        assert!(
            (fit.n_signal - 82_390.0).abs() < 2.0 * fit.n_signal_err.max(450.0),
            "n = {} +- {}",
            fit.n_signal,
            fit.n_signal_err
        );
        assert!((fit.sigma1_ns - 7.3).abs() < 2.0 * fit.sigma1_err_ns.max(0.1));
        assert!((fit.sigma2_ns - 17.8).abs() < 2.0 * fit.sigma2_err_ns.max(0.4));
        assert!((fit.frac1 - 0.75).abs() < 2.0 * fit.frac1_err.max(0.02));
        assert!((fit.background_per_bin - 20.0).abs() < 3.0 * fit.background_err);
    }

    #[test]
    fn single_gaussian_no_background_matches_window_sum() {
        let mut rng = ChaCha12Rng::seed_from_u64(73);
        let hist = synth_hist(&mut rng, 50_000.0, 0.0, 7.3, 7.3, 1.0, 0.0, false);
        let fit = fit_double_gaussian(&hist).unwrap();
        // integral within 5 sigma of the fitted peak
        let mut window_sum = 0.0;
        for (k, &c) in hist.counts.iter().enumerate() {
            let center = 0.5 * (hist.edges_ns[k] + hist.edges_ns[k + 1]);
            if (center - fit.mu_ns).abs() <= 5.0 * fit.sigma1_ns {
                window_sum += c;
            }
        }
        assert!(
            (fit.n_signal - window_sum).abs() / window_sum < 0.03,
            "n_signal {} vs window sum {window_sum}",
            fit.n_signal
        );
    }

    #[test]
    fn flat_histogram_is_background_only() {
        let hist = CoincidenceHistogram {
            edges_ns: (0..=50).map(|k| -250.0 + 10.0 * f64::from(k)).collect(),
            counts: vec![7.0; 50],
            kind: PairKind::Cross,
        };
        let fit = fit_double_gaussian(&hist).unwrap();
        assert_eq!(fit.quality, FitQuality::BackgroundOnly);
        assert!(fit.n_signal <= 2.0 * fit.n_signal_err);
        assert_eq!(fit.background_per_bin, 7.0);
    }

    #[test]
    fn noisy_flat_histogram_signal_consistent_with_zero() {
        let mut rng = ChaCha12Rng::seed_from_u64(79);
        let hist = synth_hist(&mut rng, 0.0, 0.0, 7.3, 17.8, 0.75, 25.0, false);
        let fit = fit_double_gaussian(&hist).unwrap();
        assert!(
            fit.n_signal <= 2.0 * fit.n_signal_err,
            "n = {} +- {}",
            fit.n_signal,
            fit.n_signal_err
        );
    }

    #[test]
    fn folded_same_fiber_peak() {
        let mut rng = ChaCha12Rng::seed_from_u64(83);
        let hist = synth_hist(&mut rng, 30_000.0, 0.0, 7.3, 17.8, 0.75, 10.0, true);
        let fit = fit_double_gaussian(&hist).unwrap();
        assert!(
            (fit.n_signal - 30_000.0).abs() < 3.0 * fit.n_signal_err.max(200.0),
            "n = {} +- {}",
            fit.n_signal,
            fit.n_signal_err
        );
        assert!((fit.sigma1_ns - 7.3).abs() < 3.0 * fit.sigma1_err_ns.max(0.15));
    }

    #[test]
    fn too_few_bins_rejected() {
        let hist = CoincidenceHistogram {
            edges_ns: (0..=6).map(f64::from).collect(),
            counts: vec![1.0; 6],
            kind: PairKind::Cross,
        };
        assert!(matches!(
            fit_double_gaussian(&hist),
            Err(FitError::NotEnoughData { .. })
        ));
    }

    #[test]
    fn pull_distribution_is_calibrated() {
        // estimator consistency: pulls of n_signal over independent synthetic
        // histograms must be centered with near-unit width
        let mut rng = ChaCha12Rng::seed_from_u64(89);
        let truth = 20_000.0;
        let mut pulls = Vec::new();
        for _ in 0..50 {
            let hist = synth_hist(&mut rng, truth, 0.0, 7.3, 17.8, 0.75, 15.0, false);
            let fit = fit_double_gaussian(&hist).unwrap();
            pulls.push((fit.n_signal - truth) / fit.n_signal_err);
        }
        let mean = pulls.iter().sum::<f64>() / pulls.len() as f64;
        let var = pulls.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>()
            / (pulls.len() - 1) as f64;
        let width = var.sqrt();
        assert!(mean.abs() <= 0.3, "pull mean {mean}");
        assert!((0.7..=1.4).contains(&width), "pull width {width}");
    }
}
