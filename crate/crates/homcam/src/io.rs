//! File formats: the binary hit stream, the CSV sidecars and the JSON
//! reports.
//!
//! Hit file layout (little-endian):
//!
//! ```text
//! header  16 B : magic "PHC1", version u16, 10 reserved zero bytes
//! record  16 B : x u16, y u16, toa u64 (ToA ticks), tot u32 (ToT ticks)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::config::ExperimentConfig;
use crate::fit::{
    AfterpulseEstimate, BlendEstimate, DipCurve, DipFit, DoubleGaussianFit, RatioReport,
    UnitarityReport,
};
use crate::hit::PixelHit;
use crate::recon::{PairKind, Photon, Region};
use crate::sim::{PhotonKind, SimCounters, TruthPhoton};

pub const HIT_MAGIC: [u8; 4] = *b"PHC1";
pub const HIT_FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 16;
const RECORD_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum IoFormatError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic {found:02x?} (expected {:02x?})", HIT_MAGIC)]
    BadMagic { found: [u8; 4] },
    #[error("unsupported hit format version {0}")]
    BadVersion(u16),
    #[error("truncated hit record at byte offset {offset}")]
    Truncated { offset: u64 },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Streaming hit writer; writes the header up front.
pub struct HitWriter {
    w: BufWriter<File>,
    n_written: u64,
}

impl HitWriter {
    pub fn create(path: &Path) -> Result<Self, IoFormatError> {
        let mut w = BufWriter::new(File::create(path)?);
        let mut header = [0u8; HEADER_LEN];
        header[..4].copy_from_slice(&HIT_MAGIC);
        header[4..6].copy_from_slice(&HIT_FORMAT_VERSION.to_le_bytes());
        w.write_all(&header)?;
        Ok(Self { w, n_written: 0 })
    }

    pub fn push(&mut self, hit: &PixelHit) -> Result<(), IoFormatError> {
        let mut rec = [0u8; RECORD_LEN];
        rec[0..2].copy_from_slice(&hit.x.to_le_bytes());
        rec[2..4].copy_from_slice(&hit.y.to_le_bytes());
        rec[4..12].copy_from_slice(&hit.toa.to_le_bytes());
        rec[12..16].copy_from_slice(&hit.tot.to_le_bytes());
        self.w.write_all(&rec)?;
        self.n_written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<u64, IoFormatError> {
        self.w.flush()?;
        Ok(self.n_written)
    }
}

pub fn write_hits(path: &Path, hits: &[PixelHit]) -> Result<(), IoFormatError> {
    let mut w = HitWriter::create(path)?;
    for h in hits {
        w.push(h)?;
    }
    w.finish()?;
    Ok(())
}

pub fn read_hits(path: &Path) -> Result<Vec<PixelHit>, IoFormatError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            IoFormatError::Truncated { offset: 0 }
        } else {
            IoFormatError::Io(e)
        }
    })?;
    if header[..4] != HIT_MAGIC {
        let mut found = [0u8; 4];
        found.copy_from_slice(&header[..4]);
        return Err(IoFormatError::BadMagic { found });
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != HIT_FORMAT_VERSION {
        return Err(IoFormatError::BadVersion(version));
    }
    let mut hits = Vec::new();
    let mut rec = [0u8; RECORD_LEN];
    let mut offset = HEADER_LEN as u64;
    loop {
        let mut got = 0usize;
        while got < RECORD_LEN {
            let m = r.read(&mut rec[got..])?;
            if m == 0 {
                if got == 0 {
                    return Ok(hits);
                }
                return Err(IoFormatError::Truncated { offset });
            }
            got += m;
        }
        hits.push(PixelHit {
            x: u16::from_le_bytes([rec[0], rec[1]]),
            y: u16::from_le_bytes([rec[2], rec[3]]),
            toa: u64::from_le_bytes(rec[4..12].try_into().unwrap()),
            tot: u32::from_le_bytes(rec[12..16].try_into().unwrap()),
        });
        offset += RECORD_LEN as u64;
    }
}

/// photons.csv row. `cluster_id` preserves the cluster linkage; pair rows
/// reference photons through their position in the time-sorted per-region
/// sequence.
#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct PhotonRow {
    pub x_px: f64,
    pub y_px: f64,
    pub t_ns: f64,
    pub tot_max_ticks: u32,
    pub n_pixels: u32,
    pub region: Region,
    pub scan_index: u32,
    pub zero_tot: bool,
    pub cluster_id: u32,
}

impl From<&Photon> for PhotonRow {
    fn from(p: &Photon) -> Self {
        Self {
            x_px: p.x_px,
            y_px: p.y_px,
            t_ns: p.t_ns,
            tot_max_ticks: p.tot_max_ticks,
            n_pixels: p.n_pixels,
            region: p.region,
            scan_index: p.scan_index,
            zero_tot: p.zero_tot_fallback,
            cluster_id: p.cluster_id,
        }
    }
}

impl From<PhotonRow> for Photon {
    fn from(r: PhotonRow) -> Self {
        Photon {
            x_px: r.x_px,
            y_px: r.y_px,
            t_ns: r.t_ns,
            tot_max_ticks: r.tot_max_ticks,
            n_pixels: r.n_pixels,
            region: r.region,
            scan_index: r.scan_index,
            zero_tot_fallback: r.zero_tot,
            cluster_id: r.cluster_id,
        }
    }
}

pub struct PhotonCsvWriter {
    w: csv::Writer<BufWriter<File>>,
}

impl PhotonCsvWriter {
    pub fn create(path: &Path) -> Result<Self, IoFormatError> {
        Ok(Self {
            w: csv::Writer::from_writer(BufWriter::new(File::create(path)?)),
        })
    }

    pub fn push(&mut self, p: &Photon) -> Result<(), IoFormatError> {
        self.w.serialize(PhotonRow::from(p))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), IoFormatError> {
        self.w.flush()?;
        Ok(())
    }
}

pub fn write_photons_csv(path: &Path, photons: &[Photon]) -> Result<(), IoFormatError> {
    let mut w = PhotonCsvWriter::create(path)?;
    for p in photons {
        w.push(p)?;
    }
    w.finish()
}

pub fn read_photons_csv(path: &Path) -> Result<Vec<Photon>, IoFormatError> {
    let mut r = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let mut out = Vec::new();
    for row in r.deserialize::<PhotonRow>() {
        out.push(row?.into());
    }
    Ok(out)
}

/// pairs.csv row. `i1`/`i2` index the time-sorted photon sequence of the
/// respective region (region 1 then region 2 for cross pairs).
#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct PairRow {
    pub kind: PairKind,
    pub scan_index: u32,
    pub dt_ns: f64,
    pub t_ns: f64,
    pub i1: u32,
    pub i2: u32,
}

pub fn write_pairs_csv(path: &Path, sets: &[&crate::recon::PairSet]) -> Result<(), IoFormatError> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for set in sets {
        for p in &set.pairs {
            w.serialize(PairRow {
                kind: p.kind,
                scan_index: p.scan_index,
                dt_ns: p.dt_ns,
                t_ns: p.t_ns,
                i1: p.i1,
                i2: p.i2,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_pairs_csv(path: &Path) -> Result<Vec<crate::recon::CoincidencePair>, IoFormatError> {
    let mut r = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let mut out = Vec::new();
    for row in r.deserialize::<PairRow>() {
        let row = row?;
        out.push(crate::recon::CoincidencePair {
            kind: row.kind,
            dt_ns: row.dt_ns,
            t_ns: row.t_ns,
            scan_index: row.scan_index,
            i1: row.i1,
            i2: row.i2,
        });
    }
    Ok(out)
}

/// truth.csv row (simulator provenance sidecar).
#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct TruthRow {
    pub photon_id: u64,
    pub scan_index: u32,
    /// Empty for dark counts.
    pub pair_id: Option<u64>,
    pub fiber: u8,
    pub kind: PhotonKind,
    pub t_true_ns: f64,
    pub x_true_px: f64,
    pub y_true_px: f64,
    pub n_hits: u32,
}

pub struct TruthCsvWriter {
    w: csv::Writer<BufWriter<File>>,
}

impl TruthCsvWriter {
    pub fn create(path: &Path) -> Result<Self, IoFormatError> {
        Ok(Self {
            w: csv::Writer::from_writer(BufWriter::new(File::create(path)?)),
        })
    }

    pub fn push(&mut self, t: &TruthPhoton) -> Result<(), IoFormatError> {
        self.w.serialize(TruthRow {
            photon_id: t.photon_id,
            scan_index: t.scan_index,
            pair_id: (t.pair_id != u64::MAX).then_some(t.pair_id),
            fiber: t.fiber,
            kind: t.kind,
            t_true_ns: t.t_true_ns,
            x_true_px: t.x_px,
            y_true_px: t.y_px,
            n_hits: t.n_hits,
        })?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), IoFormatError> {
        self.w.flush()?;
        Ok(())
    }
}

/// dip_curve.csv row: measured (corrected) curve plus the fitted model.
#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct DipCurveRow {
    pub delay_mm: f64,
    pub n_cross: f64,
    pub n_cross_err: f64,
    pub n_fib1: f64,
    pub n_fib1_err: f64,
    pub n_fib2: f64,
    pub n_fib2_err: f64,
    pub total: f64,
    pub total_err: f64,
    pub singles_fib1: f64,
    pub singles_fib2: f64,
    pub model_cross: f64,
    pub model_fib1: f64,
    pub model_fib2: f64,
    pub ok: bool,
}

pub fn write_dip_curve_csv(path: &Path, curve: &DipCurve, fit: &DipFit) -> Result<(), IoFormatError> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for b in &curve.bins {
        let (mc, m1, m2) = fit.model_at(b.delay_mm);
        w.serialize(DipCurveRow {
            delay_mm: b.delay_mm,
            n_cross: b.n_cross,
            n_cross_err: b.n_cross_err,
            n_fib1: b.n_fib1,
            n_fib1_err: b.n_fib1_err,
            n_fib2: b.n_fib2,
            n_fib2_err: b.n_fib2_err,
            total: b.n_cross + b.n_fib1 + b.n_fib2,
            total_err: (b.n_cross_err.powi(2) + b.n_fib1_err.powi(2) + b.n_fib2_err.powi(2))
                .sqrt(),
            singles_fib1: b.singles1,
            singles_fib2: b.singles2,
            model_cross: mc,
            model_fib1: m1,
            model_fib2: m2,
            ok: b.ok,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Reconstruction tallies carried into results.json.
#[derive(Debug, Clone, Copy, Default, serde::Serialize, serde::Deserialize)]
pub struct ReconSummary {
    pub n_hits: u64,
    pub n_clusters: u64,
    pub n_photons_fib1: u64,
    pub n_photons_fib2: u64,
    pub n_photons_outside: u64,
    pub n_cross_pairs: u64,
    pub n_cross_outside_window: u64,
    pub n_same1_pairs: u64,
    pub n_same2_pairs: u64,
}

/// Dip-fit numbers with both length and time widths.
#[derive(Debug, serde::Serialize)]
pub struct DipFitJson {
    pub visibility: f64,
    pub visibility_err: f64,
    pub fwhm_mm: f64,
    pub fwhm_err_mm: f64,
    pub fwhm_fs: f64,
    pub fwhm_err_fs: f64,
    pub d0_mm: f64,
    pub d0_err_mm: f64,
    pub n_far: f64,
    pub n_far_err: f64,
    pub t2: f64,
    pub t2_err: f64,
    pub chi2: f64,
    pub ndf: i64,
    pub n_bins_used: usize,
    pub flags: Vec<String>,
}

impl From<&DipFit> for DipFitJson {
    fn from(f: &DipFit) -> Self {
        let mm_to_fs = 1e12 / crate::model::SPEED_OF_LIGHT_M_PER_S;
        Self {
            visibility: f.visibility,
            visibility_err: f.visibility_err,
            fwhm_mm: f.fwhm_mm,
            fwhm_err_mm: f.fwhm_err_mm,
            fwhm_fs: f.fwhm_mm * mm_to_fs,
            fwhm_err_fs: f.fwhm_err_mm * mm_to_fs,
            d0_mm: f.d0_mm,
            d0_err_mm: f.d0_err_mm,
            n_far: f.n_far,
            n_far_err: f.n_far_err,
            t2: f.t2,
            t2_err: f.t2_err,
            chi2: f.chi2,
            ndf: f.ndf,
            n_bins_used: f.n_bins_used,
            flags: f.flags.clone(),
        }
    }
}

/// Unitarity numbers without the per-bin vectors (those live in the curve
/// CSV).
#[derive(Debug, serde::Serialize)]
pub struct UnitarityJson {
    pub constant: f64,
    pub constant_err: f64,
    pub chi2: f64,
    pub ndf: i64,
    pub chi2_per_ndf: f64,
    pub p_value: f64,
}

impl From<&UnitarityReport> for UnitarityJson {
    fn from(u: &UnitarityReport) -> Self {
        Self {
            constant: u.constant,
            constant_err: u.constant_err,
            chi2: u.chi2,
            ndf: u.ndf,
            chi2_per_ndf: u.chi2_per_ndf,
            p_value: u.p_value,
        }
    }
}

/// The results.json payload.
#[derive(Debug, serde::Serialize)]
pub struct ResultsJson {
    pub schema_version: u32,
    pub tool_version: String,
    pub seed: u64,
    pub config_digest_sha256: String,
    pub dip_fit: DipFitJson,
    pub cross_peak_fit: DoubleGaussianFit,
    pub afterpulse: AfterpulseEstimate,
    pub blend: [BlendEstimate; 2],
    pub ratio: RatioReport,
    pub unitarity: UnitarityJson,
    pub recon: ReconSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sim_counters: Option<SimCounters>,
}

pub fn write_json_pretty<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), IoFormatError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Run provenance: digest, seed, tool version, file paths and a wall-clock
/// stamp (the one field exempt from byte-for-byte reproducibility).
#[derive(Debug, serde::Serialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub config_digest_sha256: String,
    pub seed: u64,
    pub created_unix_s: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(cfg: &ExperimentConfig, seed: u64, inputs: &[&Path], outputs: &[&Path]) -> Self {
        Self {
            schema_version: 1,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_digest_sha256: cfg.digest(),
            seed,
            created_unix_s: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recon::PairSet;

    #[test]
    fn empty_file_with_header_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hits.bin");
        write_hits(&path, &[]).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 16);
        assert!(read_hits(&path).unwrap().is_empty());
    }

    #[test]
    fn corrupted_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hits.bin");
        write_hits(
            &path,
            &[PixelHit {
                x: 1,
                y: 2,
                toa: 3,
                tot: 4,
            }],
        )
        .unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_hits(&path),
            Err(IoFormatError::BadMagic { .. })
        ));
    }

    #[test]
    fn truncated_record_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hits.bin");
        write_hits(
            &path,
            &[
                PixelHit { x: 1, y: 2, toa: 3, tot: 4 },
                PixelHit { x: 5, y: 6, toa: 7, tot: 8 },
            ],
        )
        .unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        match read_hits(&path) {
            Err(IoFormatError::Truncated { offset }) => assert_eq!(offset, 16 + 16),
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn unsupported_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hits.bin");
        write_hits(&path, &[]).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 9;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_hits(&path), Err(IoFormatError::BadVersion(9))));
    }

    #[test]
    fn pairs_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.csv");
        let set = PairSet {
            pairs: vec![crate::recon::CoincidencePair {
                kind: PairKind::Cross,
                dt_ns: -3.25,
                t_ns: 1234.5,
                scan_index: 7,
                i1: 1,
                i2: 2,
            }],
            n_outside_window: 0,
        };
        write_pairs_csv(&path, &[&set]).unwrap();
        let back = read_pairs_csv(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].kind, PairKind::Cross);
        assert_eq!(back[0].dt_ns, -3.25);
        assert_eq!(back[0].scan_index, 7);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]
        #[test]
        fn hit_file_round_trip_is_lossless(
            raw in proptest::collection::vec(
                (0u16..256, 0u16..256, proptest::prelude::any::<u64>(), 1u32..1_000_000),
                0..300,
            )
        ) {
            let hits: Vec<PixelHit> = raw
                .into_iter()
                .map(|(x, y, toa, tot)| PixelHit { x, y, toa, tot })
                .collect();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("hits.bin");
            write_hits(&path, &hits).unwrap();
            let back = read_hits(&path).unwrap();
            proptest::prop_assert_eq!(hits, back);
        }
    }
}
