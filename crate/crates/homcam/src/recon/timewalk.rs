//! Time-walk correction: the pixel front end fires later for small signals,
//! modeled (and inverted) as an amplitude-dependent delay `w0/(ToT + w1)`.

use super::ReconError;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TimewalkParams {
    pub w0_ns2: f64,
    pub w1_ns: f64,
}

impl TimewalkParams {
    pub fn identity() -> Self {
        Self {
            w0_ns2: 0.0,
            w1_ns: 1.0,
        }
    }

    #[inline]
    pub fn walk_ns(&self, tot_ns: f64) -> f64 {
        self.w0_ns2 / (tot_ns + self.w1_ns)
    }
}

/// Subtract the amplitude-dependent delay from a raw timestamp.
#[inline]
pub fn timewalk_correct(t_raw_ns: f64, tot_ns: f64, params: &TimewalkParams) -> f64 {
    t_raw_ns - params.walk_ns(tot_ns)
}

/// Fit `(w0, w1)` from calibration samples of `(ToT_ns, t_raw - t_true)`.
///
/// For a fixed `w1` the optimal `w0` is the linear least-squares amplitude,
/// so the fit reduces to a 1-D search over `w1` (coarse log grid, then golden
/// section).
pub fn calibrate_timewalk(samples: &[(f64, f64)]) -> Result<TimewalkParams, ReconError> {
    if samples.len() < 8 {
        return Err(ReconError::NotEnoughData {
            what: "time-walk calibration needs >= 8 samples",
            got: samples.len(),
        });
    }
    let sse = |w1: f64| -> (f64, f64) {
        let mut num = 0.0;
        let mut den = 0.0;
        for &(tot, r) in samples {
            let u = 1.0 / (tot + w1);
            num += r * u;
            den += u * u;
        }
        let w0 = if den > 0.0 { (num / den).max(0.0) } else { 0.0 };
        let mut s = 0.0;
        for &(tot, r) in samples {
            let e = r - w0 / (tot + w1);
            s += e * e;
        }
        (s, w0)
    };

    // coarse scan over plausible offsets
    let mut best_w1 = 1.0;
    let mut best = f64::MAX;
    let mut w1 = 0.5f64;
    while w1 <= 2048.0 {
        let (s, _) = sse(w1);
        if s < best {
            best = s;
            best_w1 = w1;
        }
        w1 *= 1.5;
    }
    // golden-section refine around the coarse minimum
    let (mut a, mut b) = (best_w1 / 2.0, best_w1 * 2.0);
    let phi = 0.5 * (3.0 - 5.0f64.sqrt());
    for _ in 0..80 {
        let x1 = a + phi * (b - a);
        let x2 = b - phi * (b - a);
        if sse(x1).0 < sse(x2).0 {
            b = x2;
        } else {
            a = x1;
        }
    }
    let w1 = 0.5 * (a + b);
    let (_, w0) = sse(w1);
    Ok(TimewalkParams {
        w0_ns2: w0,
        w1_ns: w1,
    })
}
