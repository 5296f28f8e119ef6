//! Command-line pipeline: simulate raw hits, reconstruct photons and
//! coincidences, and fit the HOM dip observables.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use homcam::config::{ConfigError, ExperimentConfig};
use homcam::fit::estimate_blend_probability;
use homcam::io::{write_json_pretty, IoFormatError, RunManifest};
use homcam::pipeline::{
    analyze, build_results, recon_files, recon_from_files, run_pipeline_to_dir, simulate_to_files,
    PipelineError, RunPaths,
};

#[derive(Parser)]
#[command(
    name = "homcam",
    version,
    about = "Closed-loop simulator and analysis chain for counting bunched photon pairs with a time-stamping pixel camera"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Text,
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a raw hit file (and truth sidecar) for the configured scan.
    Simulate {
        /// Experiment config JSON; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output directory (hits.bin, truth.csv); or give --hits directly.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        hits: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Cluster a hit file into photons and coincidence pairs.
    Recon {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        hits: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        photons: Option<PathBuf>,
        #[arg(long)]
        pairs: Option<PathBuf>,
    },
    /// Fit the dip and emit results.json + dip_curve.csv from recon products.
    Analyze {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        photons: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, default_value = "analysis")]
        out: PathBuf,
    },
    /// Run simulate, recon and analyze, writing every artifact.
    Pipeline {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Monte Carlo estimate of the two-photon blend probability per spot.
    BlendStudy {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the per-spot sample count.
        #[arg(long)]
        samples: Option<u32>,
    },
    /// Summarize a results.json.
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
        format: ReportFormat,
    },
}

enum CliError {
    Validation(String),
    Runtime(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(c) => CliError::Validation(c.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<IoFormatError> for CliError {
    fn from(e: IoFormatError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<ExperimentConfig, CliError> {
    match path {
        Some(p) => {
            require_file(p)?;
            Ok(ExperimentConfig::read(p)?)
        }
        None => Ok(ExperimentConfig::default()),
    }
}

fn require_file(p: &Path) -> Result<(), CliError> {
    if !p.is_file() {
        return Err(CliError::Validation(format!(
            "missing input file: {}",
            p.display()
        )));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Simulate {
            config,
            seed,
            out,
            hits,
            truth,
        } => {
            let cfg = load_config(&config)?;
            cfg.validate()?;
            let dir = out.unwrap_or_else(|| PathBuf::from("run"));
            let (hits_path, truth_path) = match hits {
                Some(h) => (h, truth),
                None => {
                    std::fs::create_dir_all(&dir)
                        .map_err(|e| CliError::Runtime(e.to_string()))?;
                    let p = RunPaths::new(&dir);
                    (p.hits(), Some(truth.unwrap_or_else(|| p.truth())))
                }
            };
            let counters = simulate_to_files(&cfg, seed, &hits_path, truth_path.as_deref())?;
            eprintln!(
                "simulated {} pairs, {} hits -> {}",
                counters.pairs_emitted,
                counters.hits_rendered
                    - counters.hits_hot_masked
                    - counters.hits_deadtime_dropped,
                hits_path.display()
            );
            Ok(())
        }
        Cmd::Recon {
            config,
            hits,
            out,
            photons,
            pairs,
        } => {
            let cfg = load_config(&config)?;
            cfg.validate()?;
            require_file(&hits)?;
            let dir = out.unwrap_or_else(|| PathBuf::from("recon"));
            let (photons_path, pairs_path) = match (photons, pairs) {
                (Some(ph), Some(pa)) => (ph, pa),
                (ph, pa) => {
                    std::fs::create_dir_all(&dir)
                        .map_err(|e| CliError::Runtime(e.to_string()))?;
                    let p = RunPaths::new(&dir);
                    (
                        ph.unwrap_or_else(|| p.photons()),
                        pa.unwrap_or_else(|| p.pairs()),
                    )
                }
            };
            let recon = recon_files(&cfg, &hits, &photons_path, &pairs_path)?;
            eprintln!(
                "reconstructed {} clusters -> {} / {} photons per fiber, {} cross pairs",
                recon.summary.n_clusters,
                recon.summary.n_photons_fib1,
                recon.summary.n_photons_fib2,
                recon.summary.n_cross_pairs
            );
            Ok(())
        }
        Cmd::Analyze {
            config,
            seed,
            photons,
            pairs,
            out,
        } => {
            let cfg = load_config(&config)?;
            cfg.validate()?;
            require_file(&photons)?;
            require_file(&pairs)?;
            std::fs::create_dir_all(&out).map_err(|e| CliError::Runtime(e.to_string()))?;
            let recon = recon_from_files(&cfg, &photons, &pairs)?;
            let analysis = analyze(&cfg, seed, &recon)?;
            let paths = RunPaths::new(&out);
            homcam::io::write_dip_curve_csv(
                &paths.dip_curve(),
                &analysis.corrected_curve,
                &analysis.dip_fit,
            )?;
            let results = build_results(&cfg, seed, &analysis, recon.summary, None);
            write_json_pretty(&paths.results(), &results)?;
            let manifest = RunManifest::new(
                &cfg,
                seed,
                &[photons.as_path(), pairs.as_path()],
                &[&paths.dip_curve(), &paths.results()],
            );
            write_json_pretty(&paths.manifest(), &manifest)?;
            print_summary(&serde_json::to_value(&results).unwrap());
            Ok(())
        }
        Cmd::Pipeline { config, seed, out } => {
            let cfg = load_config(&config)?;
            let result = run_pipeline_to_dir(&cfg, seed, &out)?;
            print_summary(&serde_json::to_value(&result.results).unwrap());
            eprintln!("artifacts written to {}", out.display());
            Ok(())
        }
        Cmd::BlendStudy {
            config,
            seed,
            out,
            samples,
        } => {
            let cfg = load_config(&config)?;
            cfg.validate()?;
            let n = samples.unwrap_or(cfg.analysis.blend_mc_samples);
            let mut spots = Vec::new();
            for (i, spot) in cfg.spots.iter().enumerate() {
                let est = estimate_blend_probability(&cfg.sensor, spot, n, seed ^ (i as u64));
                println!(
                    "spot {} at ({:.1}, {:.1}) sigma {:.2} px: blend probability {:.4} +- {:.4} ({} / {})",
                    i + 1,
                    spot.center_px.0,
                    spot.center_px.1,
                    spot.sigma_px,
                    est.probability,
                    est.err,
                    est.n_merged,
                    est.n_samples
                );
                spots.push(serde_json::json!({
                    "center_px": [spot.center_px.0, spot.center_px.1],
                    "sigma_px": spot.sigma_px,
                    "probability": est.probability,
                    "err": est.err,
                    "n_merged": est.n_merged,
                    "n_samples": est.n_samples,
                }));
            }
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| CliError::Runtime(e.to_string()))?;
                let payload = serde_json::json!({
                    "schema_version": 1,
                    "seed": seed,
                    "config_digest_sha256": cfg.digest(),
                    "spots": spots,
                });
                write_json_pretty(&dir.join("blend_study.json"), &payload)?;
            }
            Ok(())
        }
        Cmd::Report { results, format } => {
            require_file(&results)?;
            let text = std::fs::read_to_string(&results)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            let value: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Runtime(format!("invalid results.json: {e}")))?;
            match format {
                ReportFormat::Text => print_summary(&value),
                ReportFormat::Json => println!("{value}"),
                ReportFormat::Csv => print_summary_csv(&value),
            }
            Ok(())
        }
    }
}

fn g(v: &serde_json::Value, path: &[&str]) -> f64 {
    let mut cur = v;
    for p in path {
        cur = match p.parse::<usize>() {
            Ok(i) if cur.is_array() => &cur[i],
            _ => &cur[*p],
        };
    }
    cur.as_f64().unwrap_or(f64::NAN)
}

fn summary_rows(v: &serde_json::Value) -> Vec<(String, f64)> {
    vec![
        ("visibility".into(), g(v, &["dip_fit", "visibility"])),
        ("visibility_err".into(), g(v, &["dip_fit", "visibility_err"])),
        ("fwhm_mm".into(), g(v, &["dip_fit", "fwhm_mm"])),
        ("fwhm_err_mm".into(), g(v, &["dip_fit", "fwhm_err_mm"])),
        ("fwhm_fs".into(), g(v, &["dip_fit", "fwhm_fs"])),
        ("d0_mm".into(), g(v, &["dip_fit", "d0_mm"])),
        ("d0_err_mm".into(), g(v, &["dip_fit", "d0_err_mm"])),
        ("n_far".into(), g(v, &["dip_fit", "n_far"])),
        ("dip_chi2".into(), g(v, &["dip_fit", "chi2"])),
        ("dip_ndf".into(), g(v, &["dip_fit", "ndf"])),
        ("peak_sigma1_ns".into(), g(v, &["cross_peak_fit", "sigma1_ns"])),
        ("peak_sigma2_ns".into(), g(v, &["cross_peak_fit", "sigma2_ns"])),
        ("peak_frac1".into(), g(v, &["cross_peak_fit", "frac1"])),
        ("peak_n_signal".into(), g(v, &["cross_peak_fit", "n_signal"])),
        ("afterpulse_p_pair".into(), g(v, &["afterpulse", "p_pair"])),
        (
            "afterpulse_p_pair_err".into(),
            g(v, &["afterpulse", "p_pair_err"]),
        ),
        ("blend1_probability".into(), g(v, &["blend", "0", "probability"])),
        ("blend2_probability".into(), g(v, &["blend", "1", "probability"])),
        ("ratio_chi2".into(), g(v, &["ratio", "chi2"])),
        ("ratio_p_value".into(), g(v, &["ratio", "p_value"])),
        (
            "unitarity_chi2_per_ndf".into(),
            g(v, &["unitarity", "chi2_per_ndf"]),
        ),
        ("unitarity_p_value".into(), g(v, &["unitarity", "p_value"])),
    ]
}

fn print_summary(v: &serde_json::Value) {
    println!(
        "HOM dip: visibility {:.4} +- {:.4}, fwhm {:.4} um ({:.1} fs), d0 {:.5} mm, chi2/ndf {:.2}",
        g(v, &["dip_fit", "visibility"]),
        g(v, &["dip_fit", "visibility_err"]),
        g(v, &["dip_fit", "fwhm_mm"]) * 1e3,
        g(v, &["dip_fit", "fwhm_fs"]),
        g(v, &["dip_fit", "d0_mm"]),
        g(v, &["dip_fit", "chi2"]) / g(v, &["dip_fit", "ndf"]).max(1.0),
    );
    println!(
        "cross peak: n {:.0} +- {:.0}, sigma {:.2} ns ({:.0}%) / {:.2} ns, background/bin {:.2}",
        g(v, &["cross_peak_fit", "n_signal"]),
        g(v, &["cross_peak_fit", "n_signal_err"]),
        g(v, &["cross_peak_fit", "sigma1_ns"]),
        100.0 * g(v, &["cross_peak_fit", "frac1"]),
        g(v, &["cross_peak_fit", "sigma2_ns"]),
        g(v, &["cross_peak_fit", "background_per_bin"]),
    );
    println!(
        "afterpulse probability (per cross pair): {:.5} +- {:.5}",
        g(v, &["afterpulse", "p_pair"]),
        g(v, &["afterpulse", "p_pair_err"]),
    );
    println!(
        "blend probability: fiber1 {:.3}, fiber2 {:.3}",
        g(v, &["blend", "0", "probability"]),
        g(v, &["blend", "1", "probability"]),
    );
    println!(
        "1:1:2 ratio after corrections: chi2 {:.2} (ndf 2), p {:.3}",
        g(v, &["ratio", "chi2"]),
        g(v, &["ratio", "p_value"]),
    );
    println!(
        "unitarity: total-rate constancy chi2/ndf {:.2}, p {:.3}",
        g(v, &["unitarity", "chi2_per_ndf"]),
        g(v, &["unitarity", "p_value"]),
    );
}

fn print_summary_csv(v: &serde_json::Value) {
    println!("key,value");
    for (k, x) in summary_rows(v) {
        println!("{k},{x}");
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
