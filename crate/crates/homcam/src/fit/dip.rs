//! Delay-binned coincidence curves and the joint three-curve dip fit.
//!
//! The fitter shares (d0, fwhm, V) across the cross and the two same-fiber
//! bunching curves with per-curve normalizations, so sensor effects that
//! scale one curve (blend losses, efficiency differences) do not bias the
//! dip shape parameters.

use std::sync::OnceLock;

use rayon::prelude::*;

use crate::config::AnalysisConfig;
use crate::model::{kernel_delay_scale, kernel_profile_fixed};
use crate::recon::{CoincidencePair, PairKind};

use super::gauss::{fit_double_gaussian, CoincidenceHistogram, DoubleGaussianFit, FitQuality};
use super::lm::{fit_least_squares, LmOptions, Transform};
use super::FitError;

/// Cached normalized kernel profile g(a)/g(0) on a uniform grid with cubic
/// interpolation; beyond the table the kernel is below a few 1e-4 and is
/// treated as zero.
pub(crate) struct KernelTable {
    da: f64,
    values: Vec<f64>,
}

impl KernelTable {
    fn build() -> Self {
        let da = 0.01;
        let a_max = 120.0;
        let n = (a_max / da) as usize + 1;
        let quad_step = 0.002;
        let g0 = kernel_profile_fixed(0.0, quad_step, 30.0);
        let values: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| kernel_profile_fixed(i as f64 * da, quad_step, 30.0) / g0)
            .collect();
        Self { da, values }
    }

    pub(crate) fn global() -> &'static KernelTable {
        static TABLE: OnceLock<KernelTable> = OnceLock::new();
        TABLE.get_or_init(KernelTable::build)
    }

    /// Normalized kernel as function of |a| (Catmull-Rom through the grid).
    pub(crate) fn eval_a(&self, a: f64) -> f64 {
        let a = a.abs();
        let x = a / self.da;
        let n = self.values.len();
        if x >= (n - 1) as f64 {
            return 0.0;
        }
        let i = x.floor() as usize;
        let t = x - i as f64;
        let at = |k: i64| -> f64 {
            let k = k.clamp(0, (n - 1) as i64) as usize;
            self.values[k]
        };
        let (p0, p1, p2, p3) = (at(i as i64 - 1), at(i as i64), at(i as i64 + 1), at(i as i64 + 2));
        0.5 * ((2.0 * p1)
            + (p2 - p0) * t
            + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t * t
            + (3.0 * p1 - p0 - 3.0 * p2 + p3) * t * t * t)
    }

    /// Kernel at delay offset `delta_mm` for width `fwhm_mm`.
    pub(crate) fn eval(&self, delta_mm: f64, fwhm_mm: f64) -> f64 {
        self.eval_a(kernel_delay_scale() * delta_mm / fwhm_mm)
    }
}

/// One delay bin of the three coincidence curves.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct DelayBin {
    pub delay_mm: f64,
    pub n_cross: f64,
    pub n_cross_err: f64,
    pub n_fib1: f64,
    pub n_fib1_err: f64,
    pub n_fib2: f64,
    pub n_fib2_err: f64,
    /// Reconstructed photons per fiber in this bin (exposure bookkeeping for
    /// the afterpulse subtraction).
    pub singles1: f64,
    pub singles2: f64,
    /// False when any of the three per-bin peak fits failed.
    pub ok: bool,
}

#[derive(Debug, Clone, Default)]
pub struct DipCurve {
    pub bins: Vec<DelayBin>,
}

impl DipCurve {
    pub fn ok_bins(&self) -> impl Iterator<Item = &DelayBin> {
        self.bins.iter().filter(|b| b.ok)
    }

    pub fn delay_span_mm(&self) -> f64 {
        let lo = self.ok_bins().map(|b| b.delay_mm).fold(f64::MAX, f64::min);
        let hi = self.ok_bins().map(|b| b.delay_mm).fold(f64::MIN, f64::max);
        if hi > lo {
            hi - lo
        } else {
            0.0
        }
    }
}

/// Which curves enter the fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveSelection {
    All,
    CrossOnly,
}

#[derive(Debug, Clone)]
pub struct DipFitOptions {
    /// Fix the splitter transmittance probability (None floats it).
    pub fix_t2: Option<f64>,
    pub selection: CurveSelection,
}

impl Default for DipFitOptions {
    fn default() -> Self {
        Self {
            fix_t2: Some(0.5),
            selection: CurveSelection::All,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct DipFit {
    /// Total pair count level far from the dip (detected scale).
    pub n_far: f64,
    pub n_far_err: f64,
    pub d0_mm: f64,
    pub d0_err_mm: f64,
    pub fwhm_mm: f64,
    pub fwhm_err_mm: f64,
    pub visibility: f64,
    pub visibility_err: f64,
    pub t2: f64,
    pub t2_err: f64,
    /// Off-dip levels of the three curves.
    pub level_cross: f64,
    pub level_cross_err: f64,
    pub level_fib1: f64,
    pub level_fib1_err: f64,
    pub level_fib2: f64,
    pub level_fib2_err: f64,
    pub chi2: f64,
    pub ndf: i64,
    pub n_bins_used: usize,
    /// Diagnostics: width pinned against the resolvable range, span too
    /// short, and similar conditions.
    pub flags: Vec<String>,
}

impl DipFit {
    /// Model triple (cross, fib1, fib2) at a delay.
    pub fn model_at(&self, d_mm: f64) -> (f64, f64, f64) {
        let t2 = self.t2;
        let r2 = 1.0 - t2;
        let t4r4 = t2 * t2 + r2 * r2;
        let kappa = 2.0 * t2 * r2 / t4r4;
        let f = KernelTable::global().eval(d_mm - self.d0_mm, self.fwhm_mm);
        let vf = self.visibility * f;
        (
            self.level_cross * (1.0 - kappa * vf),
            self.level_fib1 * (1.0 + vf),
            self.level_fib2 * (1.0 + vf),
        )
    }
}

/// Joint weighted least-squares of the three delay curves.
pub fn fit_dip_curves(curve: &DipCurve, opts: &DipFitOptions) -> Result<DipFit, FitError> {
    let bins: Vec<&DelayBin> = curve.ok_bins().collect();
    if bins.len() < 8 {
        return Err(FitError::NotEnoughData {
            what: "usable delay bins",
            got: bins.len(),
            need: 8,
        });
    }
    let min_step = bins
        .windows(2)
        .map(|w| w[1].delay_mm - w[0].delay_mm)
        .fold(f64::MAX, f64::min)
        .max(1e-6);
    let span = curve.delay_span_mm();

    // initialization from the cross curve
    let min_bin = bins
        .iter()
        .min_by(|a, b| a.n_cross.total_cmp(&b.n_cross))
        .unwrap();
    let d0_0 = min_bin.delay_mm;
    let mut sorted_cross: Vec<f64> = bins.iter().map(|b| b.n_cross).collect();
    sorted_cross.sort_unstable_by(f64::total_cmp);
    let s_c0 = sorted_cross[sorted_cross.len() / 2].max(1.0);
    let t2_init = opts.fix_t2.unwrap_or(0.5);
    let r2_init = 1.0 - t2_init;
    let kappa0 = 2.0 * t2_init * r2_init / (t2_init * t2_init + r2_init * r2_init).max(1e-12);
    let v0 = ((1.0 - min_bin.n_cross / s_c0) / kappa0.max(1e-6)).clamp(0.05, 0.95);
    let median = |f: fn(&DelayBin) -> f64| -> f64 {
        let mut v: Vec<f64> = bins.iter().map(|b| f(b)).collect();
        v.sort_unstable_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let s10 = median(|b| b.n_fib1).max(1.0);
    let s20 = median(|b| b.n_fib2).max(1.0);

    // coarse grid scan for the width
    let table = KernelTable::global();
    let mut fwhm0 = (span / 10.0).max(2.0 * min_step);
    let mut best = f64::MAX;
    let lo = (1.0 * min_step).max(span * 1e-4);
    let hi = span / 2.0;
    let n_scan = 40;
    for i in 0..n_scan {
        let f = lo * (hi / lo).powf(i as f64 / (n_scan - 1) as f64);
        let chi2: f64 = bins
            .iter()
            .map(|b| {
                let m = s_c0 * (1.0 - kappa0 * v0 * table.eval(b.delay_mm - d0_0, f));
                let e = b.n_cross_err.max(1.0);
                ((b.n_cross - m) / e).powi(2)
            })
            .sum();
        if chi2 < best {
            best = chi2;
            fwhm0 = f;
        }
    }

    let cross_only = opts.selection == CurveSelection::CrossOnly;
    let float_t2 = opts.fix_t2.is_none();
    let fixed_t2 = opts.fix_t2.unwrap_or(0.5);

    // parameter layout: [s_c, (s_1, s_2), d0, fwhm, v, (t2)]
    let mut init = vec![s_c0];
    let mut transforms = vec![Transform::Linear];
    if !cross_only {
        init.extend([s10, s20]);
        transforms.extend([Transform::Linear, Transform::Linear]);
    }
    init.extend([d0_0, fwhm0, v0]);
    transforms.extend([
        Transform::Linear,
        Transform::LogPositive,
        Transform::Logistic { lo: 0.0, hi: 1.0 },
    ]);
    if float_t2 {
        init.push(0.5);
        transforms.push(Transform::Logistic { lo: 0.0, hi: 1.0 });
    }

    let bins_owned: Vec<DelayBin> = bins.iter().map(|b| **b).collect();
    let residual = move |p: &[f64], out: &mut Vec<f64>| {
        let s_c = p[0];
        let (s_1, s_2, off) = if cross_only {
            (0.0, 0.0, 1)
        } else {
            (p[1], p[2], 3)
        };
        let d0 = p[off];
        let fwhm = p[off + 1];
        let v = p[off + 2];
        let t2 = if float_t2 { p[off + 3] } else { fixed_t2 };
        let r2 = 1.0 - t2;
        let t4r4 = (t2 * t2 + r2 * r2).max(1e-12);
        let kappa = 2.0 * t2 * r2 / t4r4;
        let table = KernelTable::global();
        for b in &bins_owned {
            let f = table.eval(b.delay_mm - d0, fwhm);
            let vf = v * f;
            out.push((b.n_cross - s_c * (1.0 - kappa * vf)) / b.n_cross_err.max(1.0));
            if !cross_only {
                out.push((b.n_fib1 - s_1 * (1.0 + vf)) / b.n_fib1_err.max(1.0));
                out.push((b.n_fib2 - s_2 * (1.0 + vf)) / b.n_fib2_err.max(1.0));
            }
        }
    };

    let fit = fit_least_squares(residual, &init, &transforms, &LmOptions::default())?;

    let off = if cross_only { 1 } else { 3 };
    let (s_c, s_c_err) = (fit.params[0], fit.errors[0]);
    let (s_1, s_1_err, s_2, s_2_err) = if cross_only {
        (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
    } else {
        (fit.params[1], fit.errors[1], fit.params[2], fit.errors[2])
    };
    let (d0, d0_err) = (fit.params[off], fit.errors[off]);
    let (fwhm, fwhm_err) = (fit.params[off + 1], fit.errors[off + 1]);
    let (v, v_err) = (fit.params[off + 2], fit.errors[off + 2]);
    let (t2, t2_err) = if float_t2 {
        (fit.params[off + 3], fit.errors[off + 3])
    } else {
        (fixed_t2, 0.0)
    };
    let r2 = 1.0 - t2;
    let t4r4 = t2 * t2 + r2 * r2;

    let mut flags = Vec::new();
    if fwhm > span / 2.0 * 0.99 || fwhm < min_step * 0.5 {
        flags.push(format!(
            "fwhm {fwhm:.5} mm pinned against resolvable range [{:.5}, {:.5}] mm",
            min_step * 0.5,
            span / 2.0
        ));
    }
    if span < 3.0 * fwhm {
        flags.push(format!("scan span {span:.4} mm below 3 x fwhm"));
    }

    Ok(DipFit {
        n_far: s_c / t4r4,
        n_far_err: s_c_err / t4r4,
        d0_mm: d0,
        d0_err_mm: d0_err,
        fwhm_mm: fwhm,
        fwhm_err_mm: fwhm_err,
        visibility: v,
        visibility_err: v_err,
        t2,
        t2_err,
        level_cross: s_c,
        level_cross_err: s_c_err,
        level_fib1: s_1,
        level_fib1_err: s_1_err,
        level_fib2: s_2,
        level_fib2_err: s_2_err,
        chi2: fit.chi2,
        ndf: fit.ndf,
        n_bins_used: bins.len(),
        flags,
    })
}

/// Per-bin amplitude fit against a fixed peak template.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct AmplitudeFit {
    pub n_signal: f64,
    pub n_signal_err: f64,
    pub background_per_bin: f64,
    pub background_err: f64,
    pub chi2: f64,
    pub ndf: i64,
    pub ok: bool,
}

/// Weighted linear least squares of `counts = A * template + C`.
///
/// The template is the normalized peak shape from the integrated fit, so `A`
/// is the signal count of the bin and its error is exact (the shape
/// parameters carry the whole-dataset statistics).
fn fit_peak_amplitude(hist: &CoincidenceHistogram, shape: &DoubleGaussianFit) -> AmplitudeFit {
    let folded = hist.kind != PairKind::Cross;
    let n = hist.n_bins();
    let mut s_tt = 0.0;
    let mut s_t1 = 0.0;
    let mut s_11 = 0.0;
    let mut s_ty = 0.0;
    let mut s_1y = 0.0;
    let mut total = 0.0;
    for k in 0..n {
        let t = template_bin(hist.edges_ns[k], hist.edges_ns[k + 1], shape, folded);
        let y = hist.counts[k];
        total += y;
        let w = 1.0 / y.max(1.0);
        s_tt += w * t * t;
        s_t1 += w * t;
        s_11 += w;
        s_ty += w * t * y;
        s_1y += w * y;
    }
    let det = s_tt * s_11 - s_t1 * s_t1;
    if det <= 1e-12 || total <= 0.0 {
        return AmplitudeFit {
            n_signal: 0.0,
            n_signal_err: total.sqrt().max(1.0),
            background_per_bin: total / n as f64,
            background_err: (total.max(1.0)).sqrt() / n as f64,
            chi2: 0.0,
            ndf: n as i64 - 2,
            ok: false,
        };
    }
    let a = (s_11 * s_ty - s_t1 * s_1y) / det;
    let c = (s_tt * s_1y - s_t1 * s_ty) / det;
    let var_a = s_11 / det;
    let var_c = s_tt / det;
    let mut chi2 = 0.0;
    for k in 0..n {
        let t = template_bin(hist.edges_ns[k], hist.edges_ns[k + 1], shape, folded);
        let y = hist.counts[k];
        let r = y - a * t - c;
        chi2 += r * r / y.max(1.0);
    }
    AmplitudeFit {
        n_signal: a,
        n_signal_err: var_a.max(0.0).sqrt(),
        background_per_bin: c,
        background_err: var_c.max(0.0).sqrt(),
        chi2,
        ndf: n as i64 - 2,
        ok: true,
    }
}

/// Integral of the normalized double-Gaussian shape over one bin.
fn template_bin(a: f64, b: f64, shape: &DoubleGaussianFit, folded: bool) -> f64 {
    super::gauss::mixture_bin(
        a,
        b,
        shape.mu_ns,
        shape.sigma1_ns,
        shape.sigma2_ns,
        shape.frac1,
        folded,
    )
}

/// Per-delay-bin amplitude fits plus the assembled curve. The Δt peak shapes
/// are fitted once on the delay-integrated histograms (cross, fiber 1,
/// fiber 2) and reused as templates for every delay bin.
#[derive(Debug)]
pub struct BinnedDipCurve {
    pub curve: DipCurve,
    /// Integrated-histogram shape fits: cross, fib1, fib2.
    pub templates: [DoubleGaussianFit; 3],
    /// Per bin: cross, fib1, fib2 amplitude fits.
    pub per_bin: Vec<[AmplitudeFit; 3]>,
}

/// Group pairs by scan position (optionally rebinned), extract the three
/// peak amplitudes per group and assemble the dip curve.
pub fn bin_by_delay(
    pairs: &[CoincidencePair],
    singles: &[[u64; 2]],
    positions_mm: &[f64],
    analysis: &AnalysisConfig,
) -> Result<BinnedDipCurve, FitError> {
    if positions_mm.is_empty() {
        return Err(FitError::NotEnoughData {
            what: "scan positions",
            got: 0,
            need: 1,
        });
    }
    let rebin = analysis.delay_rebin.max(1);
    let n_groups = positions_mm.len().div_ceil(rebin);
    let mut dts: Vec<[Vec<f64>; 3]> = vec![[Vec::new(), Vec::new(), Vec::new()]; n_groups];
    let mut integrated: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for p in pairs {
        let g = (p.scan_index as usize / rebin).min(n_groups - 1);
        let slot = match p.kind {
            PairKind::Cross => 0,
            PairKind::SameFiber1 => 1,
            PairKind::SameFiber2 => 2,
        };
        dts[g][slot].push(p.dt_ns);
        integrated[slot].push(p.dt_ns);
    }

    let w = analysis.coincidence_window_ns;
    let bw = analysis.hist_bin_ns;
    let specs = [
        (PairKind::Cross, -w, w),
        (PairKind::SameFiber1, 0.0, w),
        (PairKind::SameFiber2, 0.0, w),
    ];
    let mut templates: Vec<DoubleGaussianFit> = Vec::with_capacity(3);
    for (slot, (kind, lo, hi)) in specs.into_iter().enumerate() {
        let hist = CoincidenceHistogram::fill(&integrated[slot], lo, hi, bw, kind);
        let fit = fit_double_gaussian(&hist)?;
        if fit.quality != FitQuality::Ok {
            return Err(FitError::Numerical {
                reason: format!("integrated {kind:?} histogram has no peak to template"),
            });
        }
        templates.push(fit);
    }
    let templates: [DoubleGaussianFit; 3] = templates.try_into().expect("three templates");

    let results: Vec<(DelayBin, [AmplitudeFit; 3])> = (0..n_groups)
        .into_par_iter()
        .map(|g| {
            let lo_pos = g * rebin;
            let hi_pos = ((g + 1) * rebin).min(positions_mm.len());
            let delay =
                positions_mm[lo_pos..hi_pos].iter().sum::<f64>() / (hi_pos - lo_pos) as f64;
            let (mut s1, mut s2) = (0u64, 0u64);
            for k in lo_pos..hi_pos.min(singles.len()) {
                s1 += singles[k][0];
                s2 += singles[k][1];
            }
            let fits: [AmplitudeFit; 3] = std::array::from_fn(|slot| {
                let (kind, lo, hi) = specs[slot];
                let hist = CoincidenceHistogram::fill(&dts[g][slot], lo, hi, bw, kind);
                fit_peak_amplitude(&hist, &templates[slot])
            });
            let ok = fits.iter().all(|f| f.ok);
            (
                DelayBin {
                    delay_mm: delay,
                    n_cross: fits[0].n_signal,
                    n_cross_err: fits[0].n_signal_err,
                    n_fib1: fits[1].n_signal,
                    n_fib1_err: fits[1].n_signal_err,
                    n_fib2: fits[2].n_signal,
                    n_fib2_err: fits[2].n_signal_err,
                    singles1: s1 as f64,
                    singles2: s2 as f64,
                    ok,
                },
                fits,
            )
        })
        .collect();

    let mut curve = DipCurve::default();
    let mut per_bin = Vec::with_capacity(n_groups);
    for (bin, f) in results {
        curve.bins.push(bin);
        per_bin.push(f);
    }
    Ok(BinnedDipCurve {
        curve,
        templates,
        per_bin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::hom_kernel;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use rand_distr::{Distribution, Poisson};

    #[test]
    fn kernel_table_matches_direct_quadrature() {
        let table = KernelTable::global();
        for k in 0..60 {
            let delta = (k as f64 - 30.0) * 0.6 * 0.0082;
            let direct = hom_kernel(delta, 0.0082).unwrap();
            let fast = table.eval(delta, 0.0082);
            assert!(
                (direct - fast).abs() < 2e-5,
                "delta {delta}: {direct} vs {fast}"
            );
        }
    }

    /// Noise-free analytic curve; the fit must recover the injected values
    /// essentially exactly.
    #[test]
    fn recovers_analytic_curve() {
        let (d0, fwhm, v) = (0.18, 0.0082, 0.42);
        let n_far = 2000.0;
        let mut curve = DipCurve::default();
        for k in 0..100 {
            let d = 0.12 + 0.12 * k as f64 / 99.0;
            let f = hom_kernel(d - d0, fwhm).unwrap();
            let cross = n_far * 0.5 * (1.0 - v * f);
            let fib = n_far * 0.25 * (1.0 + v * f);
            curve.bins.push(DelayBin {
                delay_mm: d,
                n_cross: cross,
                n_cross_err: cross.sqrt(),
                n_fib1: fib,
                n_fib1_err: fib.sqrt(),
                n_fib2: fib,
                n_fib2_err: fib.sqrt(),
                singles1: 0.0,
                singles2: 0.0,
                ok: true,
            });
        }
        let fit = fit_dip_curves(&curve, &DipFitOptions::default()).unwrap();
        assert!((fit.d0_mm - d0).abs() < 1e-5, "d0 = {}", fit.d0_mm);
        assert!(
            (fit.fwhm_mm - fwhm).abs() / fwhm < 0.01,
            "fwhm = {}",
            fit.fwhm_mm
        );
        assert!((fit.visibility - v).abs() < 0.01, "v = {}", fit.visibility);
        assert!((fit.n_far - n_far).abs() / n_far < 0.01);
        assert!(fit.flags.is_empty(), "{:?}", fit.flags);
    }

    #[test]
    fn poisson_noise_recovery_within_errors() {
        let mut rng = ChaCha12Rng::seed_from_u64(97);
        let (d0, fwhm, v) = (0.18, 0.0082, 0.42);
        let n_far = 4000.0;
        let mut curve = DipCurve::default();
        for k in 0..120 {
            let d = 0.1 + 0.16 * k as f64 / 119.0;
            let f = hom_kernel(d - d0, fwhm).unwrap();
            let mut draw = |mean: f64| -> (f64, f64) {
                let x = Poisson::new(mean).unwrap().sample(&mut rng);
                (x, x.max(1.0).sqrt())
            };
            let (nc, nce) = draw(n_far * 0.5 * (1.0 - v * f));
            let (n1, n1e) = draw(n_far * 0.25 * (1.0 + v * f));
            let (n2, n2e) = draw(n_far * 0.25 * (1.0 + v * f));
            curve.bins.push(DelayBin {
                delay_mm: d,
                n_cross: nc,
                n_cross_err: nce,
                n_fib1: n1,
                n_fib1_err: n1e,
                n_fib2: n2,
                n_fib2_err: n2e,
                singles1: 0.0,
                singles2: 0.0,
                ok: true,
            });
        }
        let fit = fit_dip_curves(&curve, &DipFitOptions::default()).unwrap();
        assert!((fit.visibility - v).abs() < 3.0 * fit.visibility_err.max(0.01));
        assert!((fit.fwhm_mm - fwhm).abs() < 3.0 * fit.fwhm_err_mm.max(1e-4));
        assert!((fit.d0_mm - d0).abs() < 3.0 * fit.d0_err_mm.max(1e-4));
        let chi2_per_ndf = fit.chi2 / fit.ndf as f64;
        assert!(
            (0.5..2.0).contains(&chi2_per_ndf),
            "chi2/ndf = {chi2_per_ndf}"
        );
    }

    #[test]
    fn v1_balanced_dip_reaches_zero() {
        let (d0, fwhm) = (0.18, 0.0082);
        let mut curve = DipCurve::default();
        for k in 0..80 {
            let d = 0.14 + 0.08 * k as f64 / 79.0;
            let f = hom_kernel(d - d0, fwhm).unwrap();
            let cross = 1000.0 * 0.5 * (1.0 - f);
            let fib = 1000.0 * 0.25 * (1.0 + f);
            curve.bins.push(DelayBin {
                delay_mm: d,
                n_cross: cross,
                n_cross_err: cross.max(1.0).sqrt(),
                n_fib1: fib,
                n_fib1_err: fib.sqrt(),
                n_fib2: fib,
                n_fib2_err: fib.sqrt(),
                singles1: 0.0,
                singles2: 0.0,
                ok: true,
            });
        }
        let fit = fit_dip_curves(&curve, &DipFitOptions::default()).unwrap();
        let (cross_at_d0, _, _) = fit.model_at(fit.d0_mm);
        assert!(cross_at_d0 < 2.0, "cross at dip center = {cross_at_d0}");
        assert!(fit.visibility > 0.99);
    }

    #[test]
    fn flat_curve_with_v0_fits_constant() {
        let mut rng = ChaCha12Rng::seed_from_u64(101);
        let mut curve = DipCurve::default();
        for k in 0..60 {
            let d = 0.1 + 0.002 * k as f64;
            let mut draw = |mean: f64| -> f64 {
                Poisson::new(mean).unwrap().sample(&mut rng)
            };
            let nc = draw(500.0);
            let n1 = draw(250.0);
            let n2 = draw(250.0);
            curve.bins.push(DelayBin {
                delay_mm: d,
                n_cross: nc,
                n_cross_err: nc.max(1.0).sqrt(),
                n_fib1: n1,
                n_fib1_err: n1.max(1.0).sqrt(),
                n_fib2: n2,
                n_fib2_err: n2.max(1.0).sqrt(),
                singles1: 0.0,
                singles2: 0.0,
                ok: true,
            });
        }
        let fit = fit_dip_curves(&curve, &DipFitOptions::default()).unwrap();
        // visibility consistent with zero against a constant model
        assert!(
            fit.visibility < 3.0 * fit.visibility_err + 0.05,
            "v = {} +- {}",
            fit.visibility,
            fit.visibility_err
        );
        let chi2_per_ndf = fit.chi2 / fit.ndf as f64;
        assert!(chi2_per_ndf < 1.6, "chi2/ndf = {chi2_per_ndf}");
    }

    #[test]
    fn too_few_bins_rejected() {
        let curve = DipCurve {
            bins: (0..5)
                .map(|k| DelayBin {
                    delay_mm: 0.1 + 0.01 * f64::from(k),
                    n_cross: 100.0,
                    n_cross_err: 10.0,
                    n_fib1: 50.0,
                    n_fib1_err: 7.0,
                    n_fib2: 50.0,
                    n_fib2_err: 7.0,
                    singles1: 0.0,
                    singles2: 0.0,
                    ok: true,
                })
                .collect(),
        };
        assert!(matches!(
            fit_dip_curves(&curve, &DipFitOptions::default()),
            Err(FitError::NotEnoughData { .. })
        ));
    }
}
