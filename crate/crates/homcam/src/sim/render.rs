//! Photon-to-cluster rendering: Gaussian flash footprint, threshold
//! crossing, ToT mapping and the time-walk distortion.
//!
//! A flash deposits a 2D Gaussian intensity profile; the charge collected by
//! pixel (i, j) (covering [i, i+1) × [j, j+1)) is the product of the two
//! per-axis integrals. Pixels above threshold fire with
//!
//! ```text
//! ToT_ns  = tot_scale_ns * ln(1 + I/threshold)
//! ToA_ns  = arrival_ns + w0 / (ToT_ns + w1)
//! ```
//!
//! The walk is computed from the continuous ToT; the reconstruction only
//! sees the quantized ToT, so its inverse correction carries a small
//! residual that grows with the walk slope (the basis of the timing
//! resolution study).

use crate::config::SensorConfig;
use crate::hit::PixelHit;

/// A fired pixel before quantization.
#[derive(Debug, Clone, Copy)]
pub struct RawHit {
    pub x: u16,
    pub y: u16,
    pub toa_ns: f64,
    pub tot_ns: f64,
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + statrs::function::erf::erf(z / std::f64::consts::SQRT_2))
}

/// Per-axis fraction of the flash collected by the unit interval
/// [edge, edge+1) for a Gaussian centered at `c`.
#[inline]
fn axis_fraction(edge: f64, c: f64, sigma: f64) -> f64 {
    normal_cdf((edge + 1.0 - c) / sigma) - normal_cdf((edge - c) / sigma)
}

/// Render one detected photon landing at `(x0, y0)` (pixel units, continuous)
/// arriving at `arrival_ns` (jitter already applied).
///
/// Returns the fired pixels in row-major window order; empty when the
/// landing point is off the grid.
pub fn render_photon(sensor: &SensorConfig, x0: f64, y0: f64, arrival_ns: f64) -> Vec<RawHit> {
    let grid = f64::from(sensor.grid_size);
    if !(0.0..grid).contains(&x0) || !(0.0..grid).contains(&y0) {
        return Vec::new();
    }
    let sigma = sensor.psf_sigma_px;
    let half = (4.0 * sigma).ceil() as i64 + 2;
    let cx = x0.floor() as i64;
    let cy = y0.floor() as i64;
    let lo_x = (cx - half).max(0);
    let hi_x = (cx + half).min(i64::from(sensor.grid_size) - 1);
    let lo_y = (cy - half).max(0);
    let hi_y = (cy + half).min(i64::from(sensor.grid_size) - 1);

    let fx: Vec<f64> = (lo_x..=hi_x)
        .map(|i| axis_fraction(i as f64, x0, sigma))
        .collect();
    let fy: Vec<f64> = (lo_y..=hi_y)
        .map(|j| axis_fraction(j as f64, y0, sigma))
        .collect();

    let mut hits = Vec::with_capacity(12);
    for (jj, &gy) in fy.iter().enumerate() {
        for (ii, &gx) in fx.iter().enumerate() {
            let intensity = sensor.flash_amplitude * gx * gy;
            if intensity > sensor.threshold {
                let tot_ns = sensor.tot_scale_ns * (1.0 + intensity / sensor.threshold).ln();
                let toa_ns = arrival_ns
                    + sensor.timewalk_w0_ns2 / (tot_ns + sensor.timewalk_w1_ns);
                hits.push(RawHit {
                    x: (lo_x + ii as i64) as u16,
                    y: (lo_y + jj as i64) as u16,
                    toa_ns,
                    tot_ns,
                });
            }
        }
    }
    hits
}

/// Quantize a raw hit to ToA/ToT ticks. ToA floors to the clock grid the
/// way a time code latches; ToT clamps to at least one tick.
pub fn quantize(sensor: &SensorConfig, raw: &RawHit) -> PixelHit {
    let toa = (raw.toa_ns / sensor.toa_lsb_ns).floor().max(0.0) as u64;
    let tot = ((raw.tot_ns / sensor.tot_lsb_ns).floor() as u32).max(1);
    PixelHit {
        x: raw.x,
        y: raw.y,
        toa,
        tot,
    }
}
