//! Systematic-effect estimators: afterpulse probability from companion
//! hits, blend probability by Monte Carlo, the off-dip 1:1:2 ratio check
//! and the unitarity constancy test.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::config::{SensorConfig, SpotSpec};
use crate::hit::sort_hits;
use crate::recon::{cluster_stream, CoincidencePair, ClusterParams, Photon};
use crate::sim::{quantize, render_photon};

use super::dip::{DelayBin, DipCurve};
use super::FitError;

fn chi2_sf(chi2: f64, ndf: f64) -> f64 {
    if ndf <= 0.0 || !chi2.is_finite() {
        return f64::NAN;
    }
    ChiSquared::new(ndf).map(|d| d.sf(chi2)).unwrap_or(f64::NAN)
}

/// Afterpulse rate per cross pair, from same-fiber companions of a pure
/// cross-peak sample.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct AfterpulseEstimate {
    /// Companion probability per cross pair (both fibers searched), with the
    /// random-coincidence expectation subtracted via the sideband.
    pub p_pair: f64,
    pub p_pair_err: f64,
    pub companions: u64,
    /// Companions found in the (2W, 4W] sideband, scaled by 1/2 to estimate
    /// the random background inside the window.
    pub sideband: u64,
    pub n_cross_pairs: u64,
}

/// Count same-fiber companions around the members of cross-peak pairs.
///
/// `photons1/2` must be the time-sorted per-region photon lists the pairs
/// were built from (pair indices reference them).
pub fn estimate_afterpulse_probability(
    cross_peak_pairs: &[CoincidencePair],
    photons1: &[Photon],
    photons2: &[Photon],
    window_ns: f64,
) -> Result<AfterpulseEstimate, FitError> {
    if cross_peak_pairs.is_empty() {
        return Err(FitError::EmptySample {
            what: "cross-peak pair sample",
        });
    }
    let mut companions = 0u64;
    let mut sideband = 0u64;
    let near = |list: &[Photon], idx: usize| -> (bool, bool) {
        let t = list[idx].t_ns;
        let mut in_window = false;
        let mut in_sideband = false;
        for other in [idx.wrapping_sub(1), idx + 1] {
            if other >= list.len() {
                continue;
            }
            let dt = (list[other].t_ns - t).abs();
            if dt <= window_ns {
                in_window = true;
            } else if dt > 2.0 * window_ns && dt <= 4.0 * window_ns {
                in_sideband = true;
            }
        }
        (in_window, in_sideband)
    };
    for p in cross_peak_pairs {
        let (w1, s1) = near(photons1, p.i1 as usize);
        let (w2, s2) = near(photons2, p.i2 as usize);
        companions += u64::from(w1) + u64::from(w2);
        sideband += u64::from(s1) + u64::from(s2);
    }
    let n = cross_peak_pairs.len() as f64;
    let expected_random = 0.5 * sideband as f64;
    let p_pair = (companions as f64 - expected_random) / n;
    let p_pair_err = (companions as f64 + 0.25 * sideband as f64).sqrt() / n;
    Ok(AfterpulseEstimate {
        p_pair,
        p_pair_err,
        companions,
        sideband,
        n_cross_pairs: cross_peak_pairs.len() as u64,
    })
}

/// Monte Carlo blend probability: two simultaneous photons from the spot,
/// rendered through the sensor, merged into a single cluster.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct BlendEstimate {
    pub probability: f64,
    pub err: f64,
    pub n_merged: u64,
    pub n_samples: u64,
}

pub fn estimate_blend_probability(
    sensor: &SensorConfig,
    spot: &SpotSpec,
    n_samples: u32,
    seed: u64,
) -> BlendEstimate {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let params = ClusterParams {
        window_ns: 300.0,
        toa_lsb_ns: sensor.toa_lsb_ns,
    };
    let mut merged = 0u64;
    let mut valid = 0u64;
    let t = 1_000_000.0; // fixed arrival well inside the time axis
    let mut hits: Vec<crate::hit::PixelHit> = Vec::with_capacity(32);
    for _ in 0..n_samples {
        let draw = |s: &mut ChaCha12Rng| -> (f64, f64) {
            let zx: f64 = s.sample(StandardNormal);
            let zy: f64 = s.sample(StandardNormal);
            (
                spot.center_px.0 + spot.sigma_px * zx,
                spot.center_px.1 + spot.sigma_px * zy,
            )
        };
        let (x1, y1) = draw(&mut rng);
        let (x2, y2) = draw(&mut rng);
        let r1 = render_photon(sensor, x1, y1, t);
        let r2 = render_photon(sensor, x2, y2, t);
        if r1.is_empty() || r2.is_empty() {
            continue;
        }
        valid += 1;
        hits.clear();
        hits.extend(r1.iter().chain(r2.iter()).map(|r| quantize(sensor, r)));
        sort_hits(&mut hits);
        // simultaneous flashes: the per-pixel deadtime reduces to
        // first-hit-wins on shared pixels
        let mut kept: Vec<crate::hit::PixelHit> = Vec::with_capacity(hits.len());
        for h in &hits {
            if !kept.iter().any(|k| k.x == h.x && k.y == h.y) {
                kept.push(*h);
            }
        }
        let clusters = cluster_stream(&kept, &params).expect("sorted");
        if clusters.len() == 1 {
            merged += 1;
        }
    }
    let p = merged as f64 / valid.max(1) as f64;
    BlendEstimate {
        probability: p,
        err: (p * (1.0 - p) / valid.max(1) as f64).sqrt(),
        n_merged: merged,
        n_samples: valid,
    }
}

/// Off-dip rate totals after corrections, checked against 1:1:2.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RatioReport {
    /// Raw off-dip sums.
    pub raw_fib1: f64,
    pub raw_fib2: f64,
    pub raw_cross: f64,
    /// Afterpulse-subtracted, blend-corrected sums with errors.
    pub n_fib1: f64,
    pub n_fib1_err: f64,
    pub n_fib2: f64,
    pub n_fib2_err: f64,
    pub n_cross: f64,
    pub n_cross_err: f64,
    /// Weighted 1:1:2 chi-square (2 degrees of freedom) and p-value.
    pub chi2: f64,
    pub ndf: i64,
    pub p_value: f64,
    pub n_offdip_bins: usize,
    /// Subtracted afterpulse background per fiber.
    pub afterpulse_background: [f64; 2],
    /// Blend correction factors 1/(1 - p_blend) applied per fiber.
    pub blend_correction: [f64; 2],
}

/// Correct the off-dip same-fiber rates (afterpulse companions inflate them,
/// blend losses deflate them) and test the 1:1:2 proportion.
///
/// `afterpulse_p_pair` is the per-cross-pair estimate; each detected photon
/// contributes half of it, so a fiber's background is `p/2` per single.
pub fn correct_and_check_ratios(
    curve: &DipCurve,
    d0_mm: f64,
    fwhm_mm: f64,
    offdip_fwhm_cut: f64,
    afterpulse: &AfterpulseEstimate,
    blend: &[BlendEstimate; 2],
) -> Result<RatioReport, FitError> {
    let offdip: Vec<&DelayBin> = curve
        .ok_bins()
        .filter(|b| (b.delay_mm - d0_mm).abs() > offdip_fwhm_cut * fwhm_mm)
        .collect();
    if offdip.is_empty() {
        return Err(FitError::EmptySample {
            what: "off-dip delay bins",
        });
    }
    let sum = |f: &dyn Fn(&DelayBin) -> f64| -> f64 { offdip.iter().map(|b| f(b)).sum() };
    let raw_fib1 = sum(&|b| b.n_fib1);
    let raw_fib2 = sum(&|b| b.n_fib2);
    let raw_cross = sum(&|b| b.n_cross);
    let err_fib1 = sum(&|b| b.n_fib1_err * b.n_fib1_err).sqrt();
    let err_fib2 = sum(&|b| b.n_fib2_err * b.n_fib2_err).sqrt();
    let err_cross = sum(&|b| b.n_cross_err * b.n_cross_err).sqrt();
    let singles1 = sum(&|b| b.singles1);
    let singles2 = sum(&|b| b.singles2);

    let p = afterpulse.p_pair.max(0.0);
    let p_err = afterpulse.p_pair_err;
    let bg = [0.5 * p * singles1, 0.5 * p * singles2];
    let bg_err = [
        (0.25 * p_err * p_err * singles1 * singles1 + 0.25 * p * p * singles1).sqrt(),
        (0.25 * p_err * p_err * singles2 * singles2 + 0.25 * p * p * singles2).sqrt(),
    ];

    let mut n = [0.0f64; 2];
    let mut n_err = [0.0f64; 2];
    for (i, (raw, err)) in [(raw_fib1, err_fib1), (raw_fib2, err_fib2)]
        .into_iter()
        .enumerate()
    {
        let sub = raw - bg[i];
        let sub_err = (err * err + bg_err[i] * bg_err[i]).sqrt();
        let keep = (1.0 - blend[i].probability).max(1e-6);
        let corr = sub / keep;
        let rel_blend = blend[i].err / keep;
        n[i] = corr;
        n_err[i] = (corr * corr * rel_blend * rel_blend + (sub_err / keep) * (sub_err / keep))
            .sqrt();
    }

    // weighted least squares of (n1, n2, cross) against (s, s, 2s)
    let ys = [n[0], n[1], raw_cross];
    let es = [n_err[0], n_err[1], err_cross];
    let ms = [1.0, 1.0, 2.0];
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..3 {
        let w = 1.0 / (es[k] * es[k]).max(1e-12);
        num += w * ms[k] * ys[k];
        den += w * ms[k] * ms[k];
    }
    let s = num / den;
    let chi2: f64 = (0..3)
        .map(|k| ((ys[k] - ms[k] * s) / es[k].max(1e-6)).powi(2))
        .sum();
    let ndf = 2i64;

    Ok(RatioReport {
        raw_fib1,
        raw_fib2,
        raw_cross,
        n_fib1: n[0],
        n_fib1_err: n_err[0],
        n_fib2: n[1],
        n_fib2_err: n_err[1],
        n_cross: raw_cross,
        n_cross_err: err_cross,
        chi2,
        ndf,
        p_value: chi2_sf(chi2, ndf as f64),
        n_offdip_bins: offdip.len(),
        afterpulse_background: bg,
        blend_correction: [
            1.0 / (1.0 - blend[0].probability).max(1e-6),
            1.0 / (1.0 - blend[1].probability).max(1e-6),
        ],
    })
}

/// Apply the same-fiber corrections bin by bin (used before the unitarity
/// sum; the afterpulse-rate error is folded at the aggregate level by the
/// ratio report instead).
pub fn correct_dip_curve(
    curve: &DipCurve,
    afterpulse_p_pair: f64,
    blend: &[BlendEstimate; 2],
) -> DipCurve {
    let p = afterpulse_p_pair.max(0.0);
    let mut out = curve.clone();
    for b in &mut out.bins {
        for (i, (nf, ne)) in [(&mut b.n_fib1, &mut b.n_fib1_err), (&mut b.n_fib2, &mut b.n_fib2_err)]
            .into_iter()
            .enumerate()
        {
            let singles = if i == 0 { b.singles1 } else { b.singles2 };
            let keep = (1.0 - blend[i].probability).max(1e-6);
            let sub = *nf - 0.5 * p * singles;
            let sub_err = (*ne * *ne + 0.25 * p * p * singles).sqrt();
            *nf = sub / keep;
            *ne = sub_err / keep;
        }
    }
    out
}

/// Constancy test of the per-bin total coincidence rate.
#[derive(Debug, Clone, serde::Serialize)]
pub struct UnitarityReport {
    pub totals: Vec<f64>,
    pub totals_err: Vec<f64>,
    pub delays_mm: Vec<f64>,
    /// Weighted-mean constant and its error.
    pub constant: f64,
    pub constant_err: f64,
    pub chi2: f64,
    pub ndf: i64,
    pub chi2_per_ndf: f64,
    pub p_value: f64,
}

pub fn unitarity_sum(curve: &DipCurve) -> Result<UnitarityReport, FitError> {
    let bins: Vec<&DelayBin> = curve.ok_bins().collect();
    if bins.len() < 2 {
        return Err(FitError::NotEnoughData {
            what: "delay bins for the unitarity test",
            got: bins.len(),
            need: 2,
        });
    }
    let mut totals = Vec::with_capacity(bins.len());
    let mut errs = Vec::with_capacity(bins.len());
    let mut delays = Vec::with_capacity(bins.len());
    for b in &bins {
        totals.push(b.n_cross + b.n_fib1 + b.n_fib2);
        errs.push(
            (b.n_cross_err * b.n_cross_err
                + b.n_fib1_err * b.n_fib1_err
                + b.n_fib2_err * b.n_fib2_err)
                .sqrt(),
        );
        delays.push(b.delay_mm);
    }
    let mut wsum = 0.0;
    let mut wy = 0.0;
    for (t, e) in totals.iter().zip(&errs) {
        let w = 1.0 / (e * e).max(1e-12);
        wsum += w;
        wy += w * t;
    }
    let constant = wy / wsum;
    let chi2: f64 = totals
        .iter()
        .zip(&errs)
        .map(|(t, e)| ((t - constant) / e.max(1e-6)).powi(2))
        .sum();
    let ndf = bins.len() as i64 - 1;
    Ok(UnitarityReport {
        totals,
        totals_err: errs,
        delays_mm: delays,
        constant,
        constant_err: (1.0 / wsum).sqrt(),
        chi2,
        ndf,
        chi2_per_ndf: chi2 / ndf as f64,
        p_value: chi2_sf(chi2, ndf as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::hom_kernel;

    fn exact_blend(p: f64) -> BlendEstimate {
        BlendEstimate {
            probability: p,
            err: 0.0,
            n_merged: 0,
            n_samples: 0,
        }
    }

    fn analytic_curve(v: f64, blend: [f64; 2]) -> DipCurve {
        let (d0, fwhm) = (0.18, 0.0082);
        let n_far = 100_000.0;
        let mut curve = DipCurve::default();
        for k in 0..120 {
            let d = 0.1 + 0.16 * k as f64 / 119.0;
            let f = hom_kernel(d - d0, fwhm).unwrap();
            let cross = n_far * 0.5 * (1.0 - v * f);
            let fib = n_far * 0.25 * (1.0 + v * f);
            curve.bins.push(DelayBin {
                delay_mm: d,
                n_cross: cross,
                n_cross_err: cross.sqrt(),
                n_fib1: fib * (1.0 - blend[0]),
                n_fib1_err: fib.sqrt(),
                n_fib2: fib * (1.0 - blend[1]),
                n_fib2_err: fib.sqrt(),
                singles1: 0.0,
                singles2: 0.0,
                ok: true,
            });
        }
        curve
    }

    #[test]
    fn analytic_totals_are_constant_to_machine_precision() {
        let curve = analytic_curve(0.42, [0.0, 0.0]);
        let rep = unitarity_sum(&curve).unwrap();
        let t0 = rep.totals[0];
        for t in &rep.totals {
            assert!((t - t0).abs() <= 1e-12 * t0, "total {t} vs {t0}");
        }
        assert!(rep.chi2 < 1e-15);
    }

    #[test]
    fn deleted_counts_fail_the_constancy_test() {
        let mut curve = analytic_curve(0.42, [0.0, 0.0]);
        // delete 10% of fib1 in half the bins and give realistic errors
        for (k, b) in curve.bins.iter_mut().enumerate() {
            if k % 2 == 0 {
                b.n_fib1 *= 0.9;
            }
        }
        let rep = unitarity_sum(&curve).unwrap();
        // chi2/ndf far above the tolerant band
        assert!(rep.chi2_per_ndf > 3.0, "chi2/ndf = {}", rep.chi2_per_ndf);
    }

    #[test]
    fn ratio_check_passes_on_consistent_curve() {
        let curve = analytic_curve(0.42, [0.1, 0.2]);
        let ap = AfterpulseEstimate {
            p_pair: 0.0,
            p_pair_err: 1e-6,
            companions: 0,
            sideband: 0,
            n_cross_pairs: 1,
        };
        let rep = correct_and_check_ratios(
            &curve,
            0.18,
            0.0082,
            3.0,
            &ap,
            &[exact_blend(0.1), exact_blend(0.2)],
        )
        .unwrap();
        assert!(rep.p_value > 0.01, "p = {} chi2 = {}", rep.p_value, rep.chi2);
        // corrected rates close to the 1:1:2 proportion
        assert!((rep.n_fib1 / rep.n_fib2 - 1.0).abs() < 0.02);
        assert!((rep.n_cross / (rep.n_fib1 + rep.n_fib2) - 1.0).abs() < 0.02);
    }

    #[test]
    fn uncorrected_blend_fails_the_ratio_check() {
        let curve = analytic_curve(0.42, [0.25, 0.25]);
        let ap = AfterpulseEstimate {
            p_pair: 0.0,
            p_pair_err: 1e-6,
            companions: 0,
            sideband: 0,
            n_cross_pairs: 1,
        };
        let rep = correct_and_check_ratios(
            &curve,
            0.18,
            0.0082,
            3.0,
            &ap,
            &[exact_blend(0.0), exact_blend(0.0)],
        )
        .unwrap();
        assert!(rep.p_value < 1e-6, "p = {}", rep.p_value);
    }

    #[test]
    fn afterpulse_subtraction_is_identity_at_zero_rate() {
        let curve = analytic_curve(0.3, [0.0, 0.0]);
        let corrected = correct_dip_curve(&curve, 0.0, &[exact_blend(0.0), exact_blend(0.0)]);
        for (a, b) in curve.bins.iter().zip(&corrected.bins) {
            assert_eq!(a.n_fib1, b.n_fib1);
            assert_eq!(a.n_fib2, b.n_fib2);
        }
    }

    #[test]
    fn afterpulse_subtraction_scales_linearly() {
        let mut curve = analytic_curve(0.3, [0.0, 0.0]);
        for b in &mut curve.bins {
            b.singles1 = 10_000.0;
            b.singles2 = 10_000.0;
        }
        let c1 = correct_dip_curve(&curve, 0.002, &[exact_blend(0.0), exact_blend(0.0)]);
        let c2 = correct_dip_curve(&curve, 0.004, &[exact_blend(0.0), exact_blend(0.0)]);
        for ((b0, b1), b2) in curve.bins.iter().zip(&c1.bins).zip(&c2.bins) {
            let d1 = b0.n_fib1 - b1.n_fib1;
            let d2 = b0.n_fib1 - b2.n_fib1;
            assert!((d2 / d1 - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn blend_probability_limits() {
        let sensor = SensorConfig::default();
        // point-like spot: photons land on top of each other, always merge
        let tight = SpotSpec {
            center_px: (128.0, 128.0),
            sigma_px: 1e-6,
        };
        let b = estimate_blend_probability(&sensor, &tight, 500, 7);
        assert!(b.probability > 0.999, "tight-spot blend {}", b.probability);
        // very wide spot: hardly ever merge
        let wide = SpotSpec {
            center_px: (128.0, 128.0),
            sigma_px: 40.0,
        };
        let b = estimate_blend_probability(&sensor, &wide, 2000, 7);
        assert!(b.probability < 0.05, "wide-spot blend {}", b.probability);
    }

    #[test]
    fn empty_cross_sample_is_an_error() {
        assert!(matches!(
            estimate_afterpulse_probability(&[], &[], &[], 50.0),
            Err(FitError::EmptySample { .. })
        ));
    }
}
