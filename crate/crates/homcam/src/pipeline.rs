//! Stage orchestration: simulate → reconstruct → analyze, in memory or
//! through files. The CLI and the acceptance suite both drive these
//! functions.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};
use crate::fit::{
    bin_by_delay, correct_and_check_ratios, correct_dip_curve, estimate_afterpulse_probability,
    estimate_blend_probability, fit_dip_curves, unitarity_sum,
    AfterpulseEstimate, BlendEstimate, CurveSelection, DipCurve, DipFit,
    DipFitOptions, DoubleGaussianFit, FitError, RatioReport, UnitarityReport,
};
use crate::hit::PixelHit;
use crate::io::{
    read_hits, read_pairs_csv, read_photons_csv, write_dip_curve_csv, write_json_pretty,
    write_pairs_csv, HitWriter, IoFormatError, PhotonCsvWriter, ReconSummary, ResultsJson,
    RunManifest, TruthCsvWriter,
};
use crate::recon::{
    assign_region, centroid, cluster_stream_par, find_cross_coincidences, find_same_fiber_pairs,
    sort_photons_by_time, validate_regions, CentroidParams, ClusterParams, CoincidencePair,
    PairKind, PairSet, Photon, ReconError, Region, RegionSpec, TimewalkParams,
};
use crate::sim::{derive_seed, ScanStream, SimCounters, SimError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Recon(#[from] ReconError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Io(#[from] IoFormatError),
}

/// Reconstruction products of one run.
#[derive(Debug, Default)]
pub struct ReconOutput {
    /// Time-sorted photons per fiber region; pair indices reference these.
    pub photons1: Vec<Photon>,
    pub photons2: Vec<Photon>,
    pub photons_outside: Vec<Photon>,
    /// Reconstructed photons per scan position and region.
    pub singles: Vec<[u64; 2]>,
    pub cross: PairSet,
    pub same1: PairSet,
    pub same2: PairSet,
    pub summary: ReconSummary,
}

impl ReconOutput {
    pub fn all_pairs(&self) -> Vec<CoincidencePair> {
        let mut out = Vec::with_capacity(
            self.cross.pairs.len() + self.same1.pairs.len() + self.same2.pairs.len(),
        );
        out.extend_from_slice(&self.cross.pairs);
        out.extend_from_slice(&self.same1.pairs);
        out.extend_from_slice(&self.same2.pairs);
        out
    }
}

fn regions_of(cfg: &ExperimentConfig) -> [RegionSpec; 2] {
    [
        RegionSpec {
            center_px: cfg.spots[0].center_px,
            radius_px: cfg.analysis.region_radius_px,
        },
        RegionSpec {
            center_px: cfg.spots[1].center_px,
            radius_px: cfg.analysis.region_radius_px,
        },
    ]
}

/// Streaming reconstruction: hits enter in time-ordered chunks, clusters are
/// cut only at inter-hit gaps wider than the cluster window, so chunked and
/// whole-stream processing agree.
pub struct ReconAccumulator {
    cluster_params: ClusterParams,
    centroid_params: CentroidParams,
    regions: [RegionSpec; 2],
    dwell_ns: f64,
    n_positions: usize,
    carry: Vec<PixelHit>,
    photons1: Vec<Photon>,
    photons2: Vec<Photon>,
    outside: Vec<Photon>,
    singles: Vec<[u64; 2]>,
    summary: ReconSummary,
    next_cluster_id: u32,
}

impl ReconAccumulator {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self, ReconError> {
        let regions = regions_of(cfg);
        validate_regions(&regions)?;
        let n_positions = cfg.scan.positions_mm.len().max(1);
        Ok(Self {
            cluster_params: ClusterParams {
                window_ns: cfg.analysis.cluster_window_ns,
                toa_lsb_ns: cfg.sensor.toa_lsb_ns,
            },
            centroid_params: CentroidParams {
                toa_lsb_ns: cfg.sensor.toa_lsb_ns,
                tot_lsb_ns: cfg.sensor.tot_lsb_ns,
                walk: TimewalkParams {
                    w0_ns2: cfg.sensor.timewalk_w0_ns2,
                    w1_ns: cfg.sensor.timewalk_w1_ns,
                },
            },
            regions,
            dwell_ns: cfg.scan.dwell_s * 1e9,
            n_positions,
            carry: Vec::new(),
            photons1: Vec::new(),
            photons2: Vec::new(),
            outside: Vec::new(),
            singles: vec![[0, 0]; n_positions],
            summary: ReconSummary::default(),
            next_cluster_id: 0,
        })
    }

    pub fn push_chunk(&mut self, chunk: &[PixelHit]) -> Result<(), ReconError> {
        if chunk.is_empty() {
            return Ok(());
        }
        let mut combined = std::mem::take(&mut self.carry);
        combined.extend_from_slice(chunk);
        let window = self.cluster_params.window_ticks();
        let mut split = 0usize;
        for i in (1..combined.len()).rev() {
            if combined[i].toa - combined[i - 1].toa > window {
                split = i;
                break;
            }
        }
        // no gap found: hold everything unless the buffer grows absurd
        if split == 0 && combined.len() < 32_000_000 {
            self.carry = combined;
            return Ok(());
        }
        if split == 0 {
            split = combined.len();
        }
        self.process(&combined[..split])?;
        self.carry = combined[split..].to_vec();
        Ok(())
    }

    fn process(&mut self, hits: &[PixelHit]) -> Result<(), ReconError> {
        if hits.is_empty() {
            return Ok(());
        }
        self.summary.n_hits += hits.len() as u64;
        let clusters = cluster_stream_par(hits, &self.cluster_params)?;
        self.summary.n_clusters += clusters.len() as u64;
        for cl in &clusters {
            let mut p = centroid(cl, &self.centroid_params)?;
            p.cluster_id = self.next_cluster_id;
            self.next_cluster_id = self.next_cluster_id.wrapping_add(1);
            p.region = assign_region(p.x_px, p.y_px, &self.regions);
            p.scan_index = if self.dwell_ns > 0.0 {
                ((p.t_ns / self.dwell_ns).floor().max(0.0) as usize).min(self.n_positions - 1)
                    as u32
            } else {
                0
            };
            match p.region {
                Region::Fiber1 => {
                    self.singles[p.scan_index as usize][0] += 1;
                    self.summary.n_photons_fib1 += 1;
                    self.photons1.push(p);
                }
                Region::Fiber2 => {
                    self.singles[p.scan_index as usize][1] += 1;
                    self.summary.n_photons_fib2 += 1;
                    self.photons2.push(p);
                }
                Region::Outside => {
                    self.summary.n_photons_outside += 1;
                    self.outside.push(p);
                }
            }
        }
        Ok(())
    }

    /// Flush the carry, sort the photon lists and find the coincidences.
    pub fn finalize(mut self, coincidence_window_ns: f64) -> Result<ReconOutput, ReconError> {
        let tail = std::mem::take(&mut self.carry);
        self.process(&tail)?;
        sort_photons_by_time(&mut self.photons1);
        sort_photons_by_time(&mut self.photons2);
        sort_photons_by_time(&mut self.outside);
        let cross = find_cross_coincidences(&self.photons1, &self.photons2, coincidence_window_ns)?;
        let same1 =
            find_same_fiber_pairs(&self.photons1, PairKind::SameFiber1, coincidence_window_ns)?;
        let same2 =
            find_same_fiber_pairs(&self.photons2, PairKind::SameFiber2, coincidence_window_ns)?;
        self.summary.n_cross_pairs = cross.pairs.len() as u64;
        self.summary.n_cross_outside_window = cross.n_outside_window;
        self.summary.n_same1_pairs = same1.pairs.len() as u64;
        self.summary.n_same2_pairs = same2.pairs.len() as u64;
        Ok(ReconOutput {
            photons1: self.photons1,
            photons2: self.photons2,
            photons_outside: self.outside,
            singles: self.singles,
            cross,
            same1,
            same2,
            summary: self.summary,
        })
    }
}

/// Reconstruct a whole in-memory hit stream.
pub fn recon_hits(cfg: &ExperimentConfig, hits: &[PixelHit]) -> Result<ReconOutput, PipelineError> {
    let mut acc = ReconAccumulator::new(cfg)?;
    acc.push_chunk(hits)?;
    Ok(acc.finalize(cfg.analysis.coincidence_window_ns)?)
}

/// Analysis products of one run.
#[derive(Debug)]
pub struct AnalysisOutput {
    pub dip_fit: DipFit,
    pub cross_peak_fit: DoubleGaussianFit,
    pub afterpulse: AfterpulseEstimate,
    pub blend: [BlendEstimate; 2],
    pub ratio: RatioReport,
    pub unitarity: UnitarityReport,
    /// Raw fitted per-bin curve.
    pub curve: DipCurve,
    /// Afterpulse-subtracted, blend-corrected curve (unitarity input, CSV).
    pub corrected_curve: DipCurve,
}

/// Run the full statistical analysis on reconstruction products.
pub fn analyze(
    cfg: &ExperimentConfig,
    seed: u64,
    recon: &ReconOutput,
) -> Result<AnalysisOutput, PipelineError> {
    let analysis = &cfg.analysis;
    let all_pairs = recon.all_pairs();
    let binned = bin_by_delay(&all_pairs, &recon.singles, &cfg.scan.positions_mm, analysis)?;

    // the per-bin amplitude templates already contain the integrated shape
    // fits; the cross template doubles as the Δt peak-shape result
    let cross_peak_fit = binned.templates[0].clone();

    let dip_fit = fit_dip_curves(
        &binned.curve,
        &DipFitOptions {
            fix_t2: analysis.fit_fix_t2,
            selection: CurveSelection::All,
        },
    )?;

    let cut = analysis.cross_peak_sigma_cut * cross_peak_fit.sigma1_ns;
    let peak_sample: Vec<CoincidencePair> = recon
        .cross
        .pairs
        .iter()
        .filter(|p| (p.dt_ns - cross_peak_fit.mu_ns).abs() <= cut)
        .cloned()
        .collect();
    let afterpulse = estimate_afterpulse_probability(
        &peak_sample,
        &recon.photons1,
        &recon.photons2,
        analysis.companion_window_ns,
    )?;

    let blend = [
        estimate_blend_probability(
            &cfg.sensor,
            &cfg.spots[0],
            analysis.blend_mc_samples,
            derive_seed(seed, 4, 0),
        ),
        estimate_blend_probability(
            &cfg.sensor,
            &cfg.spots[1],
            analysis.blend_mc_samples,
            derive_seed(seed, 4, 1),
        ),
    ];

    let ratio = correct_and_check_ratios(
        &binned.curve,
        dip_fit.d0_mm,
        dip_fit.fwhm_mm,
        analysis.offdip_fwhm_cut,
        &afterpulse,
        &blend,
    )?;
    let corrected_curve = correct_dip_curve(&binned.curve, afterpulse.p_pair, &blend);
    let unitarity = unitarity_sum(&corrected_curve)?;

    Ok(AnalysisOutput {
        dip_fit,
        cross_peak_fit,
        afterpulse,
        blend,
        ratio,
        unitarity,
        curve: binned.curve,
        corrected_curve,
    })
}

pub fn build_results(
    cfg: &ExperimentConfig,
    seed: u64,
    analysis: &AnalysisOutput,
    recon_summary: ReconSummary,
    sim_counters: Option<SimCounters>,
) -> ResultsJson {
    ResultsJson {
        schema_version: 1,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        config_digest_sha256: cfg.digest(),
        dip_fit: (&analysis.dip_fit).into(),
        cross_peak_fit: analysis.cross_peak_fit.clone(),
        afterpulse: analysis.afterpulse,
        blend: analysis.blend,
        ratio: analysis.ratio.clone(),
        unitarity: (&analysis.unitarity).into(),
        recon: recon_summary,
        sim_counters,
    }
}

/// Output file names inside a run directory.
pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
        }
    }

    pub fn config_used(&self) -> PathBuf {
        self.dir.join("config_used.json")
    }
    pub fn hits(&self) -> PathBuf {
        self.dir.join("hits.bin")
    }
    pub fn truth(&self) -> PathBuf {
        self.dir.join("truth.csv")
    }
    pub fn photons(&self) -> PathBuf {
        self.dir.join("photons.csv")
    }
    pub fn pairs(&self) -> PathBuf {
        self.dir.join("pairs.csv")
    }
    pub fn dip_curve(&self) -> PathBuf {
        self.dir.join("dip_curve.csv")
    }
    pub fn results(&self) -> PathBuf {
        self.dir.join("results.json")
    }
    pub fn manifest(&self) -> PathBuf {
        self.dir.join("manifest.json")
    }
}

/// Simulate and write hits.bin (+ truth.csv), streaming position by
/// position.
pub fn simulate_to_files(
    cfg: &ExperimentConfig,
    seed: u64,
    hits_path: &Path,
    truth_path: Option<&Path>,
) -> Result<SimCounters, PipelineError> {
    let mut stream = ScanStream::new(cfg, seed)?;
    let mut hit_writer = HitWriter::create(hits_path)?;
    let mut truth_writer = truth_path.map(TruthCsvWriter::create).transpose()?;
    let mut counters = SimCounters::default();
    while let Some(pos) = stream.next_position() {
        for t in &pos.hits {
            hit_writer.push(&t.hit)?;
        }
        if let Some(w) = truth_writer.as_mut() {
            for t in &pos.truth {
                w.push(t)?;
            }
        }
        counters.absorb(&pos.counters);
    }
    hit_writer.finish()?;
    if let Some(w) = truth_writer {
        w.finish()?;
    }
    Ok(counters)
}

/// Reconstruct a hit file into photons.csv and pairs.csv.
pub fn recon_files(
    cfg: &ExperimentConfig,
    hits_path: &Path,
    photons_path: &Path,
    pairs_path: &Path,
) -> Result<ReconOutput, PipelineError> {
    let hits = read_hits(hits_path)?;
    let recon = recon_hits(cfg, &hits)?;
    write_photon_groups(photons_path, &recon)?;
    write_pairs_csv(pairs_path, &[&recon.cross, &recon.same1, &recon.same2])?;
    Ok(recon)
}

fn write_photon_groups(path: &Path, recon: &ReconOutput) -> Result<(), IoFormatError> {
    let mut w = PhotonCsvWriter::create(path)?;
    for p in recon
        .photons1
        .iter()
        .chain(&recon.photons2)
        .chain(&recon.photons_outside)
    {
        w.push(p)?;
    }
    w.finish()
}

/// Rebuild reconstruction products from photons.csv and pairs.csv.
pub fn recon_from_files(
    cfg: &ExperimentConfig,
    photons_path: &Path,
    pairs_path: &Path,
) -> Result<ReconOutput, PipelineError> {
    let photons = read_photons_csv(photons_path)?;
    let pairs = read_pairs_csv(pairs_path)?;
    let n_positions = cfg.scan.positions_mm.len().max(1);
    let mut out = ReconOutput {
        singles: vec![[0, 0]; n_positions],
        ..Default::default()
    };
    for p in photons {
        let k = (p.scan_index as usize).min(n_positions - 1);
        match p.region {
            Region::Fiber1 => {
                out.singles[k][0] += 1;
                out.summary.n_photons_fib1 += 1;
                out.photons1.push(p);
            }
            Region::Fiber2 => {
                out.singles[k][1] += 1;
                out.summary.n_photons_fib2 += 1;
                out.photons2.push(p);
            }
            Region::Outside => {
                out.summary.n_photons_outside += 1;
                out.photons_outside.push(p);
            }
        }
    }
    sort_photons_by_time(&mut out.photons1);
    sort_photons_by_time(&mut out.photons2);
    for p in pairs {
        match p.kind {
            PairKind::Cross => out.cross.pairs.push(p),
            PairKind::SameFiber1 => out.same1.pairs.push(p),
            PairKind::SameFiber2 => out.same2.pairs.push(p),
        }
    }
    out.summary.n_cross_pairs = out.cross.pairs.len() as u64;
    out.summary.n_same1_pairs = out.same1.pairs.len() as u64;
    out.summary.n_same2_pairs = out.same2.pairs.len() as u64;
    Ok(out)
}

/// Analysis products plus the serializable report.
pub struct PipelineResult {
    pub analysis: AnalysisOutput,
    pub results: ResultsJson,
    pub recon_summary: ReconSummary,
    pub sim_counters: Option<SimCounters>,
}

/// Full in-memory pipeline: simulate (streamed), reconstruct, analyze.
pub fn run_pipeline(cfg: &ExperimentConfig, seed: u64) -> Result<PipelineResult, PipelineError> {
    cfg.validate()?;
    let mut stream = ScanStream::new(cfg, seed)?;
    let mut acc = ReconAccumulator::new(cfg)?;
    let mut counters = SimCounters::default();
    let mut chunk: Vec<PixelHit> = Vec::new();
    while let Some(pos) = stream.next_position() {
        chunk.clear();
        chunk.extend(pos.hits.iter().map(|t| t.hit));
        acc.push_chunk(&chunk)?;
        counters.absorb(&pos.counters);
    }
    let recon = acc.finalize(cfg.analysis.coincidence_window_ns)?;
    let analysis = analyze(cfg, seed, &recon)?;
    let results = build_results(cfg, seed, &analysis, recon.summary, Some(counters));
    Ok(PipelineResult {
        analysis,
        results,
        recon_summary: recon.summary,
        sim_counters: Some(counters),
    })
}

/// Full pipeline with every artifact written under `out_dir`:
/// config_used.json, hits.bin, truth.csv, photons.csv, pairs.csv,
/// dip_curve.csv, results.json, manifest.json.
pub fn run_pipeline_to_dir(
    cfg: &ExperimentConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<PipelineResult, PipelineError> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(IoFormatError::Io)?;
    let paths = RunPaths::new(out_dir);
    cfg.write(&paths.config_used())?;

    let mut stream = ScanStream::new(cfg, seed)?;
    let mut acc = ReconAccumulator::new(cfg)?;
    let mut counters = SimCounters::default();
    let mut hit_writer = HitWriter::create(&paths.hits())?;
    let mut truth_writer = TruthCsvWriter::create(&paths.truth())?;
    let mut chunk: Vec<PixelHit> = Vec::new();
    while let Some(pos) = stream.next_position() {
        chunk.clear();
        for t in &pos.hits {
            hit_writer.push(&t.hit)?;
            chunk.push(t.hit);
        }
        for t in &pos.truth {
            truth_writer.push(t)?;
        }
        acc.push_chunk(&chunk)?;
        counters.absorb(&pos.counters);
    }
    hit_writer.finish()?;
    truth_writer.finish()?;

    let recon = acc.finalize(cfg.analysis.coincidence_window_ns)?;
    write_photon_groups(&paths.photons(), &recon)?;
    write_pairs_csv(&paths.pairs(), &[&recon.cross, &recon.same1, &recon.same2])?;

    let analysis = analyze(cfg, seed, &recon)?;
    write_dip_curve_csv(&paths.dip_curve(), &analysis.corrected_curve, &analysis.dip_fit)?;
    let results = build_results(cfg, seed, &analysis, recon.summary, Some(counters));
    write_json_pretty(&paths.results(), &results)?;
    let manifest = RunManifest::new(
        cfg,
        seed,
        &[],
        &[
            &paths.config_used(),
            &paths.hits(),
            &paths.truth(),
            &paths.photons(),
            &paths.pairs(),
            &paths.dip_curve(),
            &paths.results(),
        ],
    );
    write_json_pretty(&paths.manifest(), &manifest)?;
    Ok(PipelineResult {
        analysis,
        results,
        recon_summary: recon.summary,
        sim_counters: Some(counters),
    })
}
