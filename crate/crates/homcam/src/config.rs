//! Experiment configuration: source, splitter, dip shape, sensor, fiber
//! spots, scan plan and analysis settings.
//!
//! Field names carry unit suffixes because the experiment mixes mm, µm, ns
//! and fs. Unknown keys are rejected on load; validation reports every
//! offending field path at once.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DipShape, SplitterSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("configuration invalid:\n{}", .0.join("\n"))]
    Validation(Vec<String>),
    #[error("failed to parse configuration: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Camera model: grid, timing quanta, cluster rendering, deadtime and the
/// intensifier artifact knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorConfig {
    /// Square pixel grid edge length.
    pub grid_size: u16,
    /// Pixel pitch, µm (informational; distances stay in pixel units).
    pub pitch_um: f64,
    /// ToA quantum, ns per tick.
    pub toa_lsb_ns: f64,
    /// ToT quantum, ns per tick.
    pub tot_lsb_ns: f64,
    /// Gaussian footprint width of one photon flash, pixels.
    pub psf_sigma_px: f64,
    /// Pixel firing threshold in internal intensity units.
    pub threshold: f64,
    /// Flash amplitude in threshold units; with `psf_sigma_px` this sets the
    /// mean cluster size (defaults tuned for 9 pixels).
    pub flash_amplitude: f64,
    /// ToT(intensity) scale: ToT_ns = tot_scale_ns * ln(1 + I/threshold).
    pub tot_scale_ns: f64,
    /// Time-walk numerator, ns²: raw ToA = t + w0/(ToT_ns + w1).
    pub timewalk_w0_ns2: f64,
    /// Time-walk offset, ns.
    pub timewalk_w1_ns: f64,
    /// Fixed part of the per-pixel deadtime; full deadtime is base + ToT.
    pub deadtime_base_ns: f64,
    /// Masked pixels, removed from every output stream.
    pub hot_pixels: Vec<(u16, u16)>,
    /// Probability for a detected photon to spawn one afterpulse cluster.
    pub afterpulse_prob: f64,
    /// Afterpulse displacement from the parent landing point, pixels (2D
    /// Gaussian sigma per axis).
    pub afterpulse_radius_sigma_px: f64,
    /// Mean of the exponential afterpulse delay, ns.
    pub afterpulse_delay_mean_ns: f64,
    /// Dark-count rate per fiber region, Hz.
    pub dcr_rate_hz: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            grid_size: 256,
            pitch_um: 55.0,
            toa_lsb_ns: 1.5625,
            tot_lsb_ns: 25.0,
            psf_sigma_px: 1.25,
            threshold: 1.0,
            flash_amplitude: 25.0,
            tot_scale_ns: 500.0,
            timewalk_w0_ns2: 5000.0,
            timewalk_w1_ns: 100.0,
            deadtime_base_ns: 475.0,
            hot_pixels: Vec::new(),
            // per detected photon; the per-pair companion rate seen by the
            // estimator is twice this (two photons per pair)
            afterpulse_prob: 0.00095,
            afterpulse_radius_sigma_px: 12.0,
            afterpulse_delay_mean_ns: 5.0,
            dcr_rate_hz: 1000.0,
        }
    }
}

impl SensorConfig {
    fn validate_into(&self, errs: &mut Vec<String>) {
        if self.grid_size == 0 || self.grid_size > 1024 {
            errs.push(format!("sensor.grid_size: {} not in 1..=1024", self.grid_size));
        }
        for (name, v) in [
            ("sensor.toa_lsb_ns", self.toa_lsb_ns),
            ("sensor.tot_lsb_ns", self.tot_lsb_ns),
            ("sensor.psf_sigma_px", self.psf_sigma_px),
            ("sensor.threshold", self.threshold),
            ("sensor.flash_amplitude", self.flash_amplitude),
            ("sensor.tot_scale_ns", self.tot_scale_ns),
        ] {
            if !v.is_finite() || v <= 0.0 {
                errs.push(format!("{name}: {v} must be finite and > 0"));
            }
        }
        for (name, v) in [
            ("sensor.pitch_um", self.pitch_um),
            ("sensor.timewalk_w0_ns2", self.timewalk_w0_ns2),
            ("sensor.timewalk_w1_ns", self.timewalk_w1_ns),
            ("sensor.deadtime_base_ns", self.deadtime_base_ns),
            ("sensor.afterpulse_radius_sigma_px", self.afterpulse_radius_sigma_px),
            ("sensor.afterpulse_delay_mean_ns", self.afterpulse_delay_mean_ns),
            ("sensor.dcr_rate_hz", self.dcr_rate_hz),
        ] {
            if !v.is_finite() || v < 0.0 {
                errs.push(format!("{name}: {v} must be finite and >= 0"));
            }
        }
        if !self.afterpulse_prob.is_finite() || !(0.0..=1.0).contains(&self.afterpulse_prob) {
            errs.push(format!(
                "sensor.afterpulse_prob: {} must lie in [0, 1]",
                self.afterpulse_prob
            ));
        }
        for &(x, y) in &self.hot_pixels {
            if x >= self.grid_size || y >= self.grid_size {
                errs.push(format!("sensor.hot_pixels: ({x}, {y}) outside grid"));
            }
        }
    }
}

/// SPDC pair source and per-photon detection/timing response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceConfig {
    /// CW pair emission rate, Hz (Poisson arrivals).
    pub pair_rate_hz: f64,
    /// Per-photon detection probability.
    pub detection_eff: f64,
    /// Core timing jitter per photon, ns. The default is the measured pair
    /// Δt core width divided by √2.
    pub jitter_core_sigma_ns: f64,
    /// Tail timing jitter per photon, ns.
    pub jitter_tail_sigma_ns: f64,
    /// Fraction of pairs in the tail component.
    pub jitter_tail_frac: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        // per-photon sigma chosen so that jitter plus the 1.5625 ns ToA
        // quantization reproduces the measured pair widths:
        // 2 (sigma^2 + lsb^2/12) = width^2
        let q = 1.5625f64 * 1.5625 / 12.0;
        Self {
            pair_rate_hz: 10_000.0,
            detection_eff: 0.3,
            jitter_core_sigma_ns: (7.3f64 * 7.3 / 2.0 - q).sqrt(),
            jitter_tail_sigma_ns: (17.8f64 * 17.8 / 2.0 - q).sqrt(),
            jitter_tail_frac: 0.25,
        }
    }
}

impl SourceConfig {
    fn validate_into(&self, errs: &mut Vec<String>) {
        if !self.pair_rate_hz.is_finite() || self.pair_rate_hz < 0.0 {
            errs.push(format!(
                "source.pair_rate_hz: {} must be finite and >= 0",
                self.pair_rate_hz
            ));
        }
        for (name, v) in [
            ("source.detection_eff", self.detection_eff),
            ("source.jitter_tail_frac", self.jitter_tail_frac),
        ] {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                errs.push(format!("{name}: {v} must lie in [0, 1]"));
            }
        }
        for (name, v) in [
            ("source.jitter_core_sigma_ns", self.jitter_core_sigma_ns),
            ("source.jitter_tail_sigma_ns", self.jitter_tail_sigma_ns),
        ] {
            if !v.is_finite() || v < 0.0 {
                errs.push(format!("{name}: {v} must be finite and >= 0"));
            }
        }
    }
}

/// Where one fiber illuminates the sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpotSpec {
    pub center_px: (f64, f64),
    /// Gaussian landing-distribution width per axis, pixels.
    pub sigma_px: f64,
}

impl SpotSpec {
    fn validate_into(&self, idx: usize, grid: u16, errs: &mut Vec<String>) {
        let g = f64::from(grid);
        if !self.sigma_px.is_finite() || self.sigma_px <= 0.0 {
            errs.push(format!("spots[{idx}].sigma_px: {} must be > 0", self.sigma_px));
            return;
        }
        let (cx, cy) = self.center_px;
        let m = 5.0 * self.sigma_px;
        if cx - m < 0.0 || cy - m < 0.0 || cx + m > g || cy + m > g {
            errs.push(format!(
                "spots[{idx}]: spot at ({cx}, {cy}) with sigma {} not inside grid at 5 sigma",
                self.sigma_px
            ));
        }
    }
}

/// Delay-scan plan: stage positions and dwell per position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanPlan {
    /// Stage positions, mm, strictly increasing, step >= 0.0003 mm.
    pub positions_mm: Vec<f64>,
    /// Acquisition time per position, s.
    pub dwell_s: f64,
}

impl ScanPlan {
    /// Uniform scan over [start, stop] with `n` positions.
    pub fn linspace(start_mm: f64, stop_mm: f64, n: usize, dwell_s: f64) -> Self {
        // round to 1e-9 mm so generated configs serialize cleanly; far below
        // the 0.3 um stage resolution
        let round = |x: f64| (x * 1e9).round() / 1e9;
        let positions_mm = if n <= 1 {
            vec![round(start_mm)]
        } else {
            (0..n)
                .map(|k| round(start_mm + (stop_mm - start_mm) * k as f64 / (n - 1) as f64))
                .collect()
        };
        Self { positions_mm, dwell_s }
    }

    pub fn total_duration_s(&self) -> f64 {
        self.dwell_s * self.positions_mm.len() as f64
    }

    fn validate_into(&self, errs: &mut Vec<String>) {
        if self.positions_mm.is_empty() {
            errs.push("scan.positions_mm: must not be empty".into());
        }
        if !self.dwell_s.is_finite() || self.dwell_s < 0.0 {
            errs.push(format!("scan.dwell_s: {} must be finite and >= 0", self.dwell_s));
        }
        for w in self.positions_mm.windows(2) {
            if !(w[1] > w[0]) {
                errs.push(format!(
                    "scan.positions_mm: not strictly increasing at {} -> {}",
                    w[0], w[1]
                ));
                break;
            }
            if w[1] - w[0] < 0.0003 - 1e-12 {
                errs.push(format!(
                    "scan.positions_mm: step {} mm below the 0.0003 mm stage minimum",
                    w[1] - w[0]
                ));
                break;
            }
        }
    }
}

/// Reconstruction and analysis settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Pairwise cluster time window, ns.
    pub cluster_window_ns: f64,
    /// Coincidence histogram half-range, ns.
    pub coincidence_window_ns: f64,
    /// Δt histogram bin width, ns. Keep it an integer multiple of the ToA
    /// LSB: reconstructed Δt values sit on the ToA lattice and incommensurate
    /// bins alias against it, biasing the peak fits.
    pub hist_bin_ns: f64,
    /// Region radius around each spot center, pixels (closed disk).
    pub region_radius_px: f64,
    /// Same-fiber companion window of the afterpulse estimator, ns.
    pub companion_window_ns: f64,
    /// Cross-peak selection cut for the afterpulse estimator, in core sigmas.
    pub cross_peak_sigma_cut: f64,
    /// Off-dip bins satisfy |d - d0| > this many fitted FWHM.
    pub offdip_fwhm_cut: f64,
    /// Group this many consecutive scan positions per delay bin.
    pub delay_rebin: usize,
    /// Monte Carlo sample count for the blend-probability estimate.
    pub blend_mc_samples: u32,
    /// Fix the splitter t2 in the dip fit (None floats it).
    pub fit_fix_t2: Option<f64>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            cluster_window_ns: 300.0,
            coincidence_window_ns: 250.0,
            hist_bin_ns: 6.25,
            region_radius_px: 40.0,
            companion_window_ns: 50.0,
            cross_peak_sigma_cut: 3.0,
            offdip_fwhm_cut: 3.0,
            delay_rebin: 1,
            blend_mc_samples: 200_000,
            fit_fix_t2: Some(0.5),
        }
    }
}

impl AnalysisConfig {
    fn validate_into(&self, errs: &mut Vec<String>) {
        for (name, v) in [
            ("analysis.cluster_window_ns", self.cluster_window_ns),
            ("analysis.coincidence_window_ns", self.coincidence_window_ns),
            ("analysis.hist_bin_ns", self.hist_bin_ns),
            ("analysis.region_radius_px", self.region_radius_px),
            ("analysis.companion_window_ns", self.companion_window_ns),
            ("analysis.cross_peak_sigma_cut", self.cross_peak_sigma_cut),
            ("analysis.offdip_fwhm_cut", self.offdip_fwhm_cut),
        ] {
            if !v.is_finite() || v <= 0.0 {
                errs.push(format!("{name}: {v} must be finite and > 0"));
            }
        }
        if self.delay_rebin == 0 {
            errs.push("analysis.delay_rebin: must be >= 1".into());
        }
        if self.blend_mc_samples == 0 {
            errs.push("analysis.blend_mc_samples: must be >= 1".into());
        }
        if let Some(t2) = self.fit_fix_t2 {
            if !t2.is_finite() || !(0.0..=1.0).contains(&t2) {
                errs.push(format!("analysis.fit_fix_t2: {t2} must lie in [0, 1]"));
            }
        }
    }
}

/// Full experiment description; the unit the pipeline runs from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub source: SourceConfig,
    pub splitter: SplitterSpec,
    pub dip: DipShape,
    pub sensor: SensorConfig,
    pub spots: [SpotSpec; 2],
    pub scan: ScanPlan,
    pub analysis: AnalysisConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: 1,
            source: SourceConfig::default(),
            splitter: SplitterSpec::balanced(),
            dip: DipShape {
                d0_mm: 0.18,
                fwhm_mm: 0.0082,
                visibility: 0.42,
            },
            sensor: SensorConfig::default(),
            spots: [
                SpotSpec {
                    center_px: (72.0, 128.0),
                    sigma_px: 3.75,
                },
                SpotSpec {
                    center_px: (184.0, 128.0),
                    sigma_px: 4.5,
                },
            ],
            scan: ScanPlan::linspace(0.03, 0.33, 151, 1.2),
            analysis: AnalysisConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = Vec::new();
        if self.schema_version != 1 {
            errs.push(format!(
                "schema_version: {} unsupported (expected 1)",
                self.schema_version
            ));
        }
        if let Err(e) = self.splitter.validate() {
            errs.push(format!("splitter: {e}"));
        }
        if let Err(e) = self.dip.validate() {
            errs.push(format!("dip: {e}"));
        }
        self.source.validate_into(&mut errs);
        self.sensor.validate_into(&mut errs);
        for (i, spot) in self.spots.iter().enumerate() {
            spot.validate_into(i, self.sensor.grid_size, &mut errs);
        }
        // spots must be far enough apart that the analysis regions and the
        // 5-sigma landing footprints stay disjoint
        let (ax, ay) = self.spots[0].center_px;
        let (bx, by) = self.spots[1].center_px;
        let dist = ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt();
        let need = (5.0 * self.spots[0].sigma_px + 5.0 * self.spots[1].sigma_px)
            .max(2.0 * self.analysis.region_radius_px);
        if dist < need {
            errs.push(format!(
                "spots: centers {dist:.1} px apart, need >= {need:.1} px for disjoint regions"
            ));
        }
        self.scan.validate_into(&mut errs);
        self.analysis.validate_into(&mut errs);
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Validation(errs))
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn read(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn write(&self, path: &std::path::Path) -> Result<(), ConfigError> {
        std::fs::write(path, self.to_json_pretty() + "\n")?;
        Ok(())
    }

    /// SHA-256 over the canonical JSON serialization, hex-encoded.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let out = Sha256::digest(&bytes);
        out.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn lossy_splitter_rejected_with_field_path() {
        let mut cfg = ExperimentConfig::default();
        cfg.splitter = SplitterSpec { t2: 0.6, r2: 0.5 };
        let err = cfg.validate().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("splitter"), "message: {msg}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut v: serde_json::Value =
            serde_json::from_str(&ExperimentConfig::default().to_json_pretty()).unwrap();
        v["sensor"]["psf_sgima_px"] = serde_json::json!(2.0);
        let err = ExperimentConfig::from_json(&v.to_string()).unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)), "got {err}");
    }

    #[test]
    fn json_round_trip_is_stable() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_json_pretty();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(text, back.to_json_pretty());
        assert_eq!(cfg.digest(), back.digest());
    }

    #[test]
    fn scan_step_below_stage_minimum_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.scan = ScanPlan {
            positions_mm: vec![0.1, 0.1001],
            dwell_s: 1.0,
        };
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("scan.positions_mm"), "message: {err}");
    }

    #[test]
    fn validation_collects_multiple_errors() {
        let mut cfg = ExperimentConfig::default();
        cfg.source.detection_eff = 1.5;
        cfg.sensor.psf_sigma_px = -1.0;
        match cfg.validate() {
            Err(ConfigError::Validation(errs)) => {
                assert!(errs.iter().any(|e| e.contains("source.detection_eff")));
                assert!(errs.iter().any(|e| e.contains("sensor.psf_sigma_px")));
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }
}
