//! Streaming reconstruction: cluster raw hits, centroid to photons, correct
//! the time-walk, gate on the fiber regions and find coincidences.

mod cluster;
mod timewalk;

pub use cluster::{cluster_stream, cluster_stream_par, Cluster, ClusterParams};
pub use timewalk::{calibrate_timewalk, timewalk_correct, TimewalkParams};

pub use crate::hit::{is_time_ordered, sort_hits, PixelHit};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReconError {
    #[error("hit stream not time-ordered at index {index}")]
    UnsortedInput { index: usize },
    #[error("{what}: got {got}")]
    NotEnoughData { what: &'static str, got: usize },
    #[error("fiber regions overlap: centers {dist:.2} px apart, radii sum {radii:.2} px")]
    OverlappingRegions { dist: f64, radii: f64 },
    #[error("empty cluster")]
    EmptyCluster,
}

/// Which sensor region a photon landed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Fiber1,
    Fiber2,
    Outside,
}

/// One fiber's selection disk on the sensor (closed: boundary points are in).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionSpec {
    pub center_px: (f64, f64),
    pub radius_px: f64,
}

/// A reconstructed photon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Photon {
    /// ToT-weighted centroid, pixels.
    pub x_px: f64,
    pub y_px: f64,
    /// Walk-corrected arrival, ns.
    pub t_ns: f64,
    /// ToT of the brightest pixel, ticks.
    pub tot_max_ticks: u32,
    pub n_pixels: u32,
    pub region: Region,
    pub scan_index: u32,
    /// Set when all ToT were zero and the centroid fell back to the
    /// unweighted mean.
    pub zero_tot_fallback: bool,
    /// Index of the source cluster in the cluster list.
    pub cluster_id: u32,
}

/// Reconstruction settings shared across centroiding.
#[derive(Debug, Clone, Copy)]
pub struct CentroidParams {
    pub toa_lsb_ns: f64,
    pub tot_lsb_ns: f64,
    pub walk: TimewalkParams,
}

/// ToT-weighted centroid and walk-corrected time of one cluster.
///
/// The photon time is the ToA of the brightest pixel (ties resolved toward
/// the smaller (x, y)), moved to bin center and corrected for the walk of
/// that pixel's ToT.
pub fn centroid(cl: &Cluster, params: &CentroidParams) -> Result<Photon, ReconError> {
    if cl.hits.is_empty() {
        return Err(ReconError::EmptyCluster);
    }
    let mut wsum = 0.0f64;
    let mut xw = 0.0f64;
    let mut yw = 0.0f64;
    for h in &cl.hits {
        let w = f64::from(h.tot);
        wsum += w;
        xw += w * f64::from(h.x);
        yw += w * f64::from(h.y);
    }
    let zero_tot = wsum == 0.0;
    let (x_px, y_px) = if zero_tot {
        let n = cl.hits.len() as f64;
        (
            cl.hits.iter().map(|h| f64::from(h.x)).sum::<f64>() / n,
            cl.hits.iter().map(|h| f64::from(h.y)).sum::<f64>() / n,
        )
    } else {
        (xw / wsum, yw / wsum)
    };
    let brightest = cl
        .hits
        .iter()
        .max_by(|a, b| {
            a.tot
                .cmp(&b.tot)
                .then_with(|| (b.x, b.y).cmp(&(a.x, a.y)))
        })
        .expect("non-empty");
    let t_raw_ns = (brightest.toa as f64 + 0.5) * params.toa_lsb_ns;
    let tot_ns = f64::from(brightest.tot) * params.tot_lsb_ns;
    let t_ns = timewalk_correct(t_raw_ns, tot_ns, &params.walk);
    Ok(Photon {
        x_px,
        y_px,
        t_ns,
        tot_max_ticks: brightest.tot,
        n_pixels: cl.hits.len() as u32,
        region: Region::Outside,
        scan_index: 0,
        zero_tot_fallback: zero_tot,
        cluster_id: 0,
    })
}

pub fn validate_regions(regions: &[RegionSpec; 2]) -> Result<(), ReconError> {
    let (ax, ay) = regions[0].center_px;
    let (bx, by) = regions[1].center_px;
    let dist = ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt();
    let radii = regions[0].radius_px + regions[1].radius_px;
    if dist <= radii {
        return Err(ReconError::OverlappingRegions { dist, radii });
    }
    Ok(())
}

/// Tag a photon by containment in the two closed disks.
pub fn assign_region(x_px: f64, y_px: f64, regions: &[RegionSpec; 2]) -> Region {
    for (spec, tag) in regions.iter().zip([Region::Fiber1, Region::Fiber2]) {
        let dx = x_px - spec.center_px.0;
        let dy = y_px - spec.center_px.1;
        if dx * dx + dy * dy <= spec.radius_px * spec.radius_px {
            return tag;
        }
    }
    Region::Outside
}

/// Coincidence class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    Cross,
    SameFiber1,
    SameFiber2,
}

/// One coincidence: signed `dt = t1 - t2` for cross pairs, successor
/// difference (>= 0) for same-fiber pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoincidencePair {
    pub kind: PairKind,
    pub dt_ns: f64,
    /// Arrival of the reference photon (region-1 photon for cross pairs, the
    /// earlier photon for same-fiber pairs), ns.
    pub t_ns: f64,
    pub scan_index: u32,
    /// Indices into the photon list of the respective region(s).
    pub i1: u32,
    pub i2: u32,
}

/// Coincidences plus the count of matches that fell outside the window.
#[derive(Debug, Clone, Default)]
pub struct PairSet {
    pub pairs: Vec<CoincidencePair>,
    pub n_outside_window: u64,
}

fn assert_time_sorted(photons: &[Photon]) -> Result<(), ReconError> {
    for (i, w) in photons.windows(2).enumerate() {
        if w[1].t_ns < w[0].t_ns {
            return Err(ReconError::UnsortedInput { index: i + 1 });
        }
    }
    Ok(())
}

pub fn sort_photons_by_time(photons: &mut [Photon]) {
    photons.sort_unstable_by(|a, b| {
        a.t_ns
            .total_cmp(&b.t_ns)
            .then_with(|| a.cluster_id.cmp(&b.cluster_id))
    });
}

/// For each region-1 photon, pair it with the nearest-in-time region-2
/// photon (non-exclusive, as in a per-photon search). Pairs with
/// `|dt| > window_ns` are only counted.
pub fn find_cross_coincidences(
    photons1: &[Photon],
    photons2: &[Photon],
    window_ns: f64,
) -> Result<PairSet, ReconError> {
    assert_time_sorted(photons1)?;
    assert_time_sorted(photons2)?;
    let mut set = PairSet::default();
    if photons1.is_empty() || photons2.is_empty() {
        return Ok(set);
    }
    for (i1, p1) in photons1.iter().enumerate() {
        let pos = photons2.partition_point(|p| p.t_ns < p1.t_ns);
        let mut best: Option<usize> = None;
        for cand in [pos.wrapping_sub(1), pos] {
            if cand >= photons2.len() {
                continue;
            }
            match best {
                None => best = Some(cand),
                Some(b) => {
                    if (photons2[cand].t_ns - p1.t_ns).abs() < (photons2[b].t_ns - p1.t_ns).abs() {
                        best = Some(cand);
                    }
                }
            }
        }
        let i2 = best.expect("photons2 non-empty");
        let dt = p1.t_ns - photons2[i2].t_ns;
        if dt.abs() <= window_ns {
            set.pairs.push(CoincidencePair {
                kind: PairKind::Cross,
                dt_ns: dt,
                t_ns: p1.t_ns,
                scan_index: p1.scan_index,
                i1: i1 as u32,
                i2: i2 as u32,
            });
        } else {
            set.n_outside_window += 1;
        }
    }
    Ok(set)
}

/// Pair each photon with its successor in the same region; `dt >= 0` by
/// construction. Pairs beyond the window are only counted.
pub fn find_same_fiber_pairs(
    photons: &[Photon],
    kind: PairKind,
    window_ns: f64,
) -> Result<PairSet, ReconError> {
    assert_time_sorted(photons)?;
    let mut set = PairSet::default();
    for (i, w) in photons.windows(2).enumerate() {
        let dt = w[1].t_ns - w[0].t_ns;
        if dt <= window_ns {
            set.pairs.push(CoincidencePair {
                kind,
                dt_ns: dt,
                t_ns: w[0].t_ns,
                scan_index: w[0].scan_index,
                i1: i as u32,
                i2: (i + 1) as u32,
            });
        } else {
            set.n_outside_window += 1;
        }
    }
    Ok(set)
}

/// Euclidean centroid distance of a same-fiber pair, pixels.
pub fn pair_separation(a: &Photon, b: &Photon) -> f64 {
    ((a.x_px - b.x_px).powi(2) + (a.y_px - b.y_px).powi(2)).sqrt()
}
