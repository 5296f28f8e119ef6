//! Monte Carlo generation of raw pixel-hit streams for a delay-scan HOM
//! experiment.
//!
//! Per scan position the generator emits Poisson pair arrivals, branches
//! each pair through the splitter (split / both-to-fiber-1 / both-to-fiber-2
//! with the dip-model probabilities), applies the per-photon detection coin,
//! renders surviving photons onto the pixel grid, adds dark counts and
//! afterpulses, masks hot pixels and applies the per-pixel deadtime.
//!
//! Positions are generated independently from per-position derived seeds and
//! may run concurrently; the merged stream is identical regardless of
//! scheduling. A truth sidecar records the provenance of every rendered
//! photon for oracle tests.

mod deadtime;
mod render;

pub use deadtime::{apply_deadtime, DeadtimeFilter};
pub use render::{quantize, render_photon, RawHit};

use std::collections::VecDeque;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp, Poisson, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ExperimentConfig, SensorConfig, SpotSpec};
use crate::hit::PixelHit;
use crate::model::{outcome_probabilities, DipShape, ModelError, SplitterSpec};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("hit stream not time-ordered: toa {toa} after {previous}")]
    UnorderedHits { toa: u64, previous: u64 },
}

/// Where the two photons of a pair exit the splitter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairOutcome {
    Split,
    BothFiber1,
    BothFiber2,
}

/// Provenance class of a rendered photon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhotonKind {
    Signal,
    Afterpulse,
    Dark,
}

/// Truth record for one rendered photon; every emitted hit carries the id of
/// exactly one truth row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthPhoton {
    pub photon_id: u64,
    pub scan_index: u32,
    /// Pair id, or `u64::MAX` for dark counts.
    pub pair_id: u64,
    /// 0 or 1.
    pub fiber: u8,
    pub kind: PhotonKind,
    pub t_true_ns: f64,
    pub x_px: f64,
    pub y_px: f64,
    /// Rendered (pre-deadtime, pre-mask) pixel count.
    pub n_hits: u32,
}

/// A quantized hit with its truth photon id (in-memory only; the binary hit
/// format strips the tag).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaggedHit {
    pub hit: PixelHit,
    pub photon_id: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SimCounters {
    pub pairs_emitted: u64,
    pub photons_detected: u64,
    pub photons_lost_offgrid: u64,
    pub afterpulses_spawned: u64,
    pub dark_counts: u64,
    pub hits_rendered: u64,
    pub hits_hot_masked: u64,
    pub hits_deadtime_dropped: u64,
}

impl SimCounters {
    pub fn absorb(&mut self, other: &SimCounters) {
        self.pairs_emitted += other.pairs_emitted;
        self.photons_detected += other.photons_detected;
        self.photons_lost_offgrid += other.photons_lost_offgrid;
        self.afterpulses_spawned += other.afterpulses_spawned;
        self.dark_counts += other.dark_counts;
        self.hits_rendered += other.hits_rendered;
        self.hits_hot_masked += other.hits_hot_masked;
        self.hits_deadtime_dropped += other.hits_deadtime_dropped;
    }
}

/// One scan position worth of deadtime-filtered, time-ordered hits.
#[derive(Debug)]
pub struct PositionOutput {
    pub scan_index: u32,
    pub delay_mm: f64,
    pub hits: Vec<TaggedHit>,
    pub truth: Vec<TruthPhoton>,
    pub counters: SimCounters,
}

/// Full scan held in memory.
#[derive(Debug)]
pub struct SimOutput {
    pub hits: Vec<TaggedHit>,
    pub truth: Vec<TruthPhoton>,
    pub counters: SimCounters,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent seed for (master seed, stream id, index).
pub(crate) fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(stream ^ splitmix64(index)))
}

fn poisson_count<R: Rng>(rng: &mut R, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    let d = Poisson::new(lambda).expect("positive lambda");
    d.sample(rng) as u64
}

/// Pre-computed outcome probabilities for one delay position.
#[derive(Debug, Clone, Copy)]
pub struct PairSampler {
    pub p_split: f64,
    pub p_both1: f64,
    pub p_both2: f64,
}

impl PairSampler {
    pub fn new(splitter: &SplitterSpec, dip: &DipShape, d_mm: f64) -> Result<Self, ModelError> {
        let (p_split, p_both1, p_both2) = outcome_probabilities(splitter, dip, d_mm)?;
        Ok(Self {
            p_split,
            p_both1,
            p_both2,
        })
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> PairOutcome {
        let u: f64 = rng.random();
        if u < self.p_split {
            PairOutcome::Split
        } else if u < self.p_split + self.p_both1 {
            PairOutcome::BothFiber1
        } else {
            PairOutcome::BothFiber2
        }
    }
}

/// Sample the exit branch for one pair at delay `d_mm`.
pub fn sample_pair_outcome<R: Rng>(
    rng: &mut R,
    splitter: &SplitterSpec,
    dip: &DipShape,
    d_mm: f64,
) -> Result<PairOutcome, ModelError> {
    Ok(PairSampler::new(splitter, dip, d_mm)?.sample(rng))
}

struct HotMask {
    grid: u32,
    mask: Vec<bool>,
}

impl HotMask {
    fn new(sensor: &SensorConfig) -> Self {
        let grid = u32::from(sensor.grid_size);
        let mut mask = vec![false; (grid * grid) as usize];
        for &(x, y) in &sensor.hot_pixels {
            mask[(u32::from(y) * grid + u32::from(x)) as usize] = true;
        }
        Self { grid, mask }
    }

    #[inline]
    fn is_hot(&self, hit: &PixelHit) -> bool {
        self.mask[(u32::from(hit.y) * self.grid + u32::from(hit.x)) as usize]
    }
}

/// Raw (pre-deadtime) product of one position's generation.
struct PositionRaw {
    scan_index: u32,
    delay_mm: f64,
    /// Hits with ToA inside the position's tick window, sorted.
    hits_in: Vec<TaggedHit>,
    /// Hits that spilled past the window end (jitter/walk), sorted.
    carry: Vec<TaggedHit>,
    truth: Vec<TruthPhoton>,
    counters: SimCounters,
}

struct PhotonEmission {
    landing: (f64, f64),
}

#[allow(clippy::too_many_arguments)]
fn emit_photon<R: Rng>(
    rng: &mut R,
    cfg: &ExperimentConfig,
    hot: &HotMask,
    scan_index: u32,
    pair_id: u64,
    fiber: u8,
    kind: PhotonKind,
    landing: (f64, f64),
    t_true_ns: f64,
    jitter_sigma_ns: f64,
    next_photon_id: &mut u64,
    hits: &mut Vec<TaggedHit>,
    truth: &mut Vec<TruthPhoton>,
    counters: &mut SimCounters,
) -> Option<PhotonEmission> {
    let jitter = if jitter_sigma_ns > 0.0 {
        let z: f64 = rng.sample(StandardNormal);
        jitter_sigma_ns * z
    } else {
        0.0
    };
    let raws = render_photon(&cfg.sensor, landing.0, landing.1, t_true_ns + jitter);
    if raws.is_empty() {
        counters.photons_lost_offgrid += 1;
        return None;
    }
    let photon_id = *next_photon_id;
    *next_photon_id += 1;
    let mut n_kept = 0u32;
    for raw in &raws {
        counters.hits_rendered += 1;
        let hit = quantize(&cfg.sensor, raw);
        if hot.is_hot(&hit) {
            counters.hits_hot_masked += 1;
            continue;
        }
        hits.push(TaggedHit {
            hit,
            photon_id,
        });
        n_kept += 1;
    }
    truth.push(TruthPhoton {
        photon_id,
        scan_index,
        pair_id,
        fiber,
        kind,
        t_true_ns,
        x_px: landing.0,
        y_px: landing.1,
        n_hits: raws.len() as u32,
    });
    match kind {
        PhotonKind::Signal => counters.photons_detected += 1,
        PhotonKind::Afterpulse => counters.afterpulses_spawned += 1,
        PhotonKind::Dark => counters.dark_counts += 1,
    }
    let _ = n_kept;
    Some(PhotonEmission { landing })
}

/// Draw a landing point from a spot's Gaussian.
fn draw_landing<R: Rng>(rng: &mut R, spot: &SpotSpec) -> (f64, f64) {
    let zx: f64 = rng.sample(StandardNormal);
    let zy: f64 = rng.sample(StandardNormal);
    (
        spot.center_px.0 + spot.sigma_px * zx,
        spot.center_px.1 + spot.sigma_px * zy,
    )
}

fn jitter_sigma<R: Rng>(rng: &mut R, cfg: &ExperimentConfig) -> f64 {
    let tail = rng.random::<f64>() < cfg.source.jitter_tail_frac;
    if tail {
        cfg.source.jitter_tail_sigma_ns
    } else {
        cfg.source.jitter_core_sigma_ns
    }
}

/// Afterpulse coin for a parent photon; spawns a displaced, delayed
/// secondary flash rendered like a photon.
#[allow(clippy::too_many_arguments)]
fn maybe_afterpulse<R: Rng>(
    rng: &mut R,
    cfg: &ExperimentConfig,
    hot: &HotMask,
    scan_index: u32,
    pair_id: u64,
    fiber: u8,
    parent: &PhotonEmission,
    parent_t_ns: f64,
    next_photon_id: &mut u64,
    hits: &mut Vec<TaggedHit>,
    truth: &mut Vec<TruthPhoton>,
    counters: &mut SimCounters,
) {
    let p = cfg.sensor.afterpulse_prob;
    if p <= 0.0 || rng.random::<f64>() >= p {
        return;
    }
    let zx: f64 = rng.sample(StandardNormal);
    let zy: f64 = rng.sample(StandardNormal);
    let landing = (
        parent.landing.0 + cfg.sensor.afterpulse_radius_sigma_px * zx,
        parent.landing.1 + cfg.sensor.afterpulse_radius_sigma_px * zy,
    );
    let delay = if cfg.sensor.afterpulse_delay_mean_ns > 0.0 {
        Exp::new(1.0 / cfg.sensor.afterpulse_delay_mean_ns)
            .expect("positive rate")
            .sample(rng)
    } else {
        0.0
    };
    let js = jitter_sigma(rng, cfg);
    emit_photon(
        rng,
        cfg,
        hot,
        scan_index,
        pair_id,
        fiber,
        PhotonKind::Afterpulse,
        landing,
        parent_t_ns + delay,
        js,
        next_photon_id,
        hits,
        truth,
        counters,
    );
}

fn generate_position(
    cfg: &ExperimentConfig,
    hot: &HotMask,
    k: usize,
    seed: u64,
    sampler: PairSampler,
) -> PositionRaw {
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, 1, k as u64));
    let dwell_ns = cfg.scan.dwell_s * 1e9;
    let t0_ns = k as f64 * dwell_ns;
    let scan_index = k as u32;
    // photon ids partitioned by position so parallel generation stays
    // collision-free
    let mut next_photon_id = (k as u64) << 40;
    let pair_id_base = (k as u64) << 40;

    let mut hits: Vec<TaggedHit> = Vec::new();
    let mut truth: Vec<TruthPhoton> = Vec::new();
    let mut counters = SimCounters::default();

    let n_pairs = poisson_count(&mut rng, cfg.source.pair_rate_hz * cfg.scan.dwell_s);
    counters.pairs_emitted = n_pairs;
    let mut pair_times: Vec<f64> = (0..n_pairs)
        .map(|_| t0_ns + rng.random::<f64>() * dwell_ns)
        .collect();
    pair_times.sort_unstable_by(f64::total_cmp);

    for (i, &t_pair) in pair_times.iter().enumerate() {
        let pair_id = pair_id_base + i as u64;
        let outcome = sampler.sample(&mut rng);
        // the jitter class is a property of the pair so the pair dt keeps the
        // published two-width mixture
        let js = jitter_sigma(&mut rng, cfg);
        let fibers: [u8; 2] = match outcome {
            PairOutcome::Split => [0, 1],
            PairOutcome::BothFiber1 => [0, 0],
            PairOutcome::BothFiber2 => [1, 1],
        };
        for fiber in fibers {
            if rng.random::<f64>() >= cfg.source.detection_eff {
                continue;
            }
            let landing = draw_landing(&mut rng, &cfg.spots[usize::from(fiber)]);
            if let Some(parent) = emit_photon(
                &mut rng,
                cfg,
                hot,
                scan_index,
                pair_id,
                fiber,
                PhotonKind::Signal,
                landing,
                t_pair,
                js,
                &mut next_photon_id,
                &mut hits,
                &mut truth,
                &mut counters,
            ) {
                maybe_afterpulse(
                    &mut rng,
                    cfg,
                    hot,
                    scan_index,
                    pair_id,
                    fiber,
                    &parent,
                    t_pair,
                    &mut next_photon_id,
                    &mut hits,
                    &mut truth,
                    &mut counters,
                );
            }
        }
    }

    // dark counts over both spots
    for fiber in 0u8..2 {
        let n_dark = poisson_count(&mut rng, cfg.sensor.dcr_rate_hz * cfg.scan.dwell_s);
        for i in 0..n_dark {
            let t = t0_ns + rng.random::<f64>() * dwell_ns;
            let js = jitter_sigma(&mut rng, cfg);
            let landing = draw_landing(&mut rng, &cfg.spots[usize::from(fiber)]);
            let pair_id = u64::MAX;
            if let Some(parent) = emit_photon(
                &mut rng,
                cfg,
                hot,
                scan_index,
                pair_id,
                fiber,
                PhotonKind::Dark,
                landing,
                t,
                js,
                &mut next_photon_id,
                &mut hits,
                &mut truth,
                &mut counters,
            ) {
                maybe_afterpulse(
                    &mut rng,
                    cfg,
                    hot,
                    scan_index,
                    pair_id,
                    fiber,
                    &parent,
                    t,
                    &mut next_photon_id,
                    &mut hits,
                    &mut truth,
                    &mut counters,
                );
            }
            let _ = i;
        }
    }

    hits.sort_unstable_by_key(|t| (t.hit.toa, t.hit.x, t.hit.y, t.photon_id));

    // hits whose ToA spilled past the position window (jitter, walk) belong
    // to the next position's stream slot
    let end_tick = ((k + 1) as f64 * dwell_ns / cfg.sensor.toa_lsb_ns).floor() as u64;
    let split_at = hits.partition_point(|t| t.hit.toa < end_tick);
    let carry = hits.split_off(split_at);

    PositionRaw {
        scan_index,
        delay_mm: cfg.scan.positions_mm[k],
        hits_in: hits,
        carry,
        truth,
        counters,
    }
}

/// Merge two streams sorted by the canonical hit key.
fn merge_sorted(a: Vec<TaggedHit>, b: Vec<TaggedHit>) -> Vec<TaggedHit> {
    if a.is_empty() {
        return b;
    }
    if b.is_empty() {
        return a;
    }
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut ia, mut ib) = (0, 0);
    let key = |t: &TaggedHit| (t.hit.toa, t.hit.x, t.hit.y, t.photon_id);
    while ia < a.len() && ib < b.len() {
        if key(&a[ia]) <= key(&b[ib]) {
            out.push(a[ia]);
            ia += 1;
        } else {
            out.push(b[ib]);
            ib += 1;
        }
    }
    out.extend_from_slice(&a[ia..]);
    out.extend_from_slice(&b[ib..]);
    out
}

/// Lazily generated scan: positions are produced in batches (in parallel)
/// and stitched sequentially through the stateful deadtime filter, so the
/// merged stream is identical to a fully sequential run.
pub struct ScanStream<'c> {
    cfg: &'c ExperimentConfig,
    seed: u64,
    hot: HotMask,
    samplers: Vec<PairSampler>,
    next_gen: usize,
    buffered: VecDeque<PositionRaw>,
    carry: Vec<TaggedHit>,
    filter: DeadtimeFilter,
    batch: usize,
}

impl<'c> ScanStream<'c> {
    pub fn new(cfg: &'c ExperimentConfig, seed: u64) -> Result<Self, SimError> {
        cfg.validate()?;
        let samplers = cfg
            .scan
            .positions_mm
            .iter()
            .map(|&d| PairSampler::new(&cfg.splitter, &cfg.dip, d))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            cfg,
            seed,
            hot: HotMask::new(&cfg.sensor),
            samplers,
            next_gen: 0,
            buffered: VecDeque::new(),
            carry: Vec::new(),
            filter: DeadtimeFilter::new(&cfg.sensor),
            batch: rayon::current_num_threads().clamp(1, 8),
        })
    }

    pub fn n_positions(&self) -> usize {
        self.cfg.scan.positions_mm.len()
    }

    pub fn next_position(&mut self) -> Option<PositionOutput> {
        let n = self.n_positions();
        if self.buffered.is_empty() {
            if self.next_gen >= n {
                return None;
            }
            let hi = (self.next_gen + self.batch).min(n);
            let ks: Vec<usize> = (self.next_gen..hi).collect();
            let cfg = self.cfg;
            let hot = &self.hot;
            let seed = self.seed;
            let samplers = &self.samplers;
            let raws: Vec<PositionRaw> = ks
                .par_iter()
                .map(|&k| generate_position(cfg, hot, k, seed, samplers[k]))
                .collect();
            self.buffered.extend(raws);
            self.next_gen = hi;
        }

        let raw = self.buffered.pop_front()?;
        let is_last = usize::try_from(raw.scan_index).unwrap() == n - 1;
        let mut combined = merge_sorted(std::mem::take(&mut self.carry), raw.hits_in);
        if is_last {
            // no next slot; the spill tail stays with the final position
            combined.extend_from_slice(&raw.carry);
        } else {
            self.carry = raw.carry;
        }

        let mut counters = raw.counters;
        let mut kept = Vec::with_capacity(combined.len());
        for t in combined {
            let accept = self
                .filter
                .push(&t.hit)
                .expect("stitched stream is time-ordered");
            if accept {
                kept.push(t);
            } else {
                counters.hits_deadtime_dropped += 1;
            }
        }

        Some(PositionOutput {
            scan_index: raw.scan_index,
            delay_mm: raw.delay_mm,
            hits: kept,
            truth: raw.truth,
            counters,
        })
    }
}

/// Run the whole scan into memory. Identical (config, seed) inputs give a
/// byte-identical stream.
pub fn simulate_scan(cfg: &ExperimentConfig, seed: u64) -> Result<SimOutput, SimError> {
    let mut stream = ScanStream::new(cfg, seed)?;
    let mut hits = Vec::new();
    let mut truth = Vec::new();
    let mut counters = SimCounters::default();
    while let Some(pos) = stream.next_position() {
        hits.extend_from_slice(&pos.hits);
        truth.extend_from_slice(&pos.truth);
        counters.absorb(&pos.counters);
    }
    Ok(SimOutput {
        hits,
        truth,
        counters,
    })
}

/// Deadtime rate study: CW photons into one spot, report what the per-pixel
/// deadtime removes.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct DeadtimeStudy {
    pub rate_hz: f64,
    pub duration_s: f64,
    pub n_photons: u64,
    pub n_hits: u64,
    pub n_hits_dropped: u64,
    /// Fraction of hits removed by the deadtime (per-pixel occupancy loss).
    pub hit_loss_frac: f64,
    /// Fraction of photons whose brightest pixel was removed (photons left
    /// without their timing anchor).
    pub photon_loss_frac: f64,
}

pub fn deadtime_study(
    sensor: &SensorConfig,
    spot: &SpotSpec,
    rate_hz: f64,
    duration_s: f64,
    seed: u64,
) -> DeadtimeStudy {
    struct StudyHit {
        hit: PixelHit,
        anchor: bool,
    }
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, 3, 0));
    let n_photons = poisson_count(&mut rng, rate_hz * duration_s);
    let mut hits: Vec<StudyHit> = Vec::new();
    let duration_ns = duration_s * 1e9;
    let mut times: Vec<f64> = (0..n_photons)
        .map(|_| rng.random::<f64>() * duration_ns)
        .collect();
    times.sort_unstable_by(f64::total_cmp);
    let mut rendered = 0u64;
    for &t in &times {
        let landing = draw_landing(&mut rng, spot);
        let raws = render_photon(sensor, landing.0, landing.1, t);
        if raws.is_empty() {
            continue;
        }
        rendered += 1;
        let anchor_idx = raws
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| {
                a.tot_ns
                    .total_cmp(&b.tot_ns)
                    .then_with(|| (b.x, b.y).cmp(&(a.x, a.y)))
            })
            .map(|(i, _)| i)
            .unwrap();
        for (i, raw) in raws.iter().enumerate() {
            hits.push(StudyHit {
                hit: quantize(sensor, raw),
                anchor: i == anchor_idx,
            });
        }
    }
    hits.sort_unstable_by_key(|s| (s.hit.toa, s.hit.x, s.hit.y));
    let mut filter = DeadtimeFilter::new(sensor);
    let mut dropped = 0u64;
    let mut anchors_lost = 0u64;
    for s in &hits {
        let accept = filter.push(&s.hit).expect("sorted");
        if !accept {
            dropped += 1;
            if s.anchor {
                anchors_lost += 1;
            }
        }
    }
    let n_hits = hits.len() as u64;
    DeadtimeStudy {
        rate_hz,
        duration_s,
        n_photons: rendered,
        n_hits,
        n_hits_dropped: dropped,
        hit_loss_frac: dropped as f64 / n_hits.max(1) as f64,
        photon_loss_frac: anchors_lost as f64 / rendered.max(1) as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DipShape;

    fn small_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.scan = crate::config::ScanPlan::linspace(0.03, 0.33, 4, 0.02);
        cfg
    }

    #[test]
    fn outcome_probabilities_at_perfect_overlap() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let s = SplitterSpec::balanced();
        let dip = DipShape {
            d0_mm: 0.18,
            fwhm_mm: 0.0082,
            visibility: 1.0,
        };
        let sampler = PairSampler::new(&s, &dip, 0.18).unwrap();
        assert!(sampler.p_split.abs() < 1e-12);
        let mut n1 = 0u32;
        for _ in 0..1000 {
            match sampler.sample(&mut rng) {
                PairOutcome::Split => panic!("split must not occur at V=1, d=d0"),
                PairOutcome::BothFiber1 => n1 += 1,
                PairOutcome::BothFiber2 => {}
            }
        }
        assert!((400..=600).contains(&n1));
    }

    #[test]
    fn branching_frequencies_match_model_within_4_sigma() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let s = SplitterSpec::balanced();
        let dip = DipShape {
            d0_mm: 0.18,
            fwhm_mm: 0.0082,
            visibility: 0.42,
        };
        // on the dip shoulder where all three probabilities are distinct
        let d = 0.183;
        let sampler = PairSampler::new(&s, &dip, d).unwrap();
        let n = 200_000u64;
        let mut counts = [0u64; 3];
        for _ in 0..n {
            match sampler.sample(&mut rng) {
                PairOutcome::Split => counts[0] += 1,
                PairOutcome::BothFiber1 => counts[1] += 1,
                PairOutcome::BothFiber2 => counts[2] += 1,
            }
        }
        for (got, p) in counts
            .iter()
            .zip([sampler.p_split, sampler.p_both1, sampler.p_both2])
        {
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!(
                ((*got as f64) - n as f64 * p).abs() < 4.0 * sigma,
                "count {got} vs expected {}",
                n as f64 * p
            );
        }
    }

    #[test]
    fn unbalanced_splitter_off_dip_probabilities() {
        let s = SplitterSpec::new(0.6, 0.4).unwrap();
        let dip = DipShape {
            d0_mm: 0.0,
            fwhm_mm: 0.0082,
            visibility: 1.0,
        };
        let sampler = PairSampler::new(&s, &dip, 5.0).unwrap();
        assert!((sampler.p_split - 0.52).abs() < 1e-3);
        assert!((sampler.p_both1 - 0.24).abs() < 1e-3);
        assert!((sampler.p_both2 - 0.24).abs() < 1e-3);
    }

    #[test]
    fn zero_dwell_gives_empty_stream() {
        let mut cfg = small_config();
        cfg.scan.dwell_s = 0.0;
        let out = simulate_scan(&cfg, 7).unwrap();
        assert!(out.hits.is_empty());
        assert!(out.truth.is_empty());
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let cfg = small_config();
        let a = simulate_scan(&cfg, 7).unwrap();
        let b = simulate_scan(&cfg, 7).unwrap();
        assert_eq!(a.hits, b.hits);
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.counters, b.counters);
        let c = simulate_scan(&cfg, 8).unwrap();
        assert!(a.hits != c.hits);
    }

    #[test]
    fn output_is_time_ordered() {
        let cfg = small_config();
        let out = simulate_scan(&cfg, 3).unwrap();
        assert!(out.hits.windows(2).all(|w| w[0].hit.toa <= w[1].hit.toa));
        assert!(!out.hits.is_empty());
    }

    #[test]
    fn hot_pixels_never_appear() {
        let mut cfg = small_config();
        // blanket the first spot center
        for dx in -2i32..=2 {
            for dy in -2i32..=2 {
                cfg.sensor
                    .hot_pixels
                    .push(((72 + dx) as u16, (128 + dy) as u16));
            }
        }
        let out = simulate_scan(&cfg, 5).unwrap();
        assert!(out.counters.hits_hot_masked > 0);
        for t in &out.hits {
            assert!(!cfg
                .sensor
                .hot_pixels
                .contains(&(t.hit.x, t.hit.y)));
        }
    }

    #[test]
    fn per_pixel_deadtime_invariant_holds_globally() {
        let mut cfg = small_config();
        cfg.source.pair_rate_hz = 100_000.0; // stress the filter
        let out = simulate_scan(&cfg, 11).unwrap();
        assert!(out.counters.hits_deadtime_dropped > 0);
        let mut last: std::collections::HashMap<(u16, u16), (u64, u32)> =
            std::collections::HashMap::new();
        for t in &out.hits {
            if let Some((t0, tot0)) = last.get(&(t.hit.x, t.hit.y)) {
                let gap_ns = (t.hit.toa - t0) as f64 * cfg.sensor.toa_lsb_ns;
                assert!(
                    gap_ns > cfg.sensor.deadtime_base_ns + f64::from(*tot0) * cfg.sensor.tot_lsb_ns,
                    "deadtime violated on pixel ({}, {})",
                    t.hit.x,
                    t.hit.y
                );
            }
            last.insert((t.hit.x, t.hit.y), (t.hit.toa, t.hit.tot));
        }
    }

    #[test]
    fn truth_covers_every_emitted_hit_exactly_once() {
        let cfg = small_config();
        let out = simulate_scan(&cfg, 13).unwrap();
        let ids: std::collections::HashSet<u64> =
            out.truth.iter().map(|t| t.photon_id).collect();
        assert_eq!(ids.len(), out.truth.len(), "duplicate truth ids");
        for t in &out.hits {
            assert!(ids.contains(&t.photon_id));
        }
        // and every hit-bearing truth photon is actually rendered
        let rendered: u64 = out.truth.iter().map(|t| u64::from(t.n_hits)).sum();
        assert_eq!(rendered, out.counters.hits_rendered);
    }

    #[test]
    fn afterpulse_prob_zero_spawns_none() {
        let mut cfg = small_config();
        cfg.sensor.afterpulse_prob = 0.0;
        let out = simulate_scan(&cfg, 17).unwrap();
        assert_eq!(out.counters.afterpulses_spawned, 0);
        assert!(out
            .truth
            .iter()
            .all(|t| t.kind != PhotonKind::Afterpulse));
    }

    #[test]
    fn afterpulse_rate_matches_injection() {
        let mut cfg = small_config();
        cfg.sensor.afterpulse_prob = 0.01;
        cfg.sensor.dcr_rate_hz = 0.0;
        cfg.scan = crate::config::ScanPlan::linspace(0.03, 0.33, 4, 0.5);
        let out = simulate_scan(&cfg, 19).unwrap();
        let parents = out
            .truth
            .iter()
            .filter(|t| t.kind == PhotonKind::Signal)
            .count() as f64;
        let expected = parents * 0.01;
        let got = out.counters.afterpulses_spawned as f64;
        assert!(
            (got - expected).abs() < 4.0 * expected.sqrt() + 1.0,
            "got {got}, expected {expected}"
        );
    }

    #[test]
    fn afterpulses_arrive_promptly() {
        let mut cfg = small_config();
        cfg.sensor.afterpulse_prob = 0.05;
        cfg.sensor.afterpulse_delay_mean_ns = 5.0;
        let out = simulate_scan(&cfg, 23).unwrap();
        let mut pair_t: std::collections::HashMap<(u64, u8), f64> = std::collections::HashMap::new();
        for t in &out.truth {
            if t.kind == PhotonKind::Signal {
                pair_t.insert((t.pair_id, t.fiber), t.t_true_ns);
            }
        }
        let (mut total, mut prompt) = (0u32, 0u32);
        for t in &out.truth {
            if t.kind == PhotonKind::Afterpulse {
                if let Some(&tp) = pair_t.get(&(t.pair_id, t.fiber)) {
                    total += 1;
                    if t.t_true_ns - tp <= 50.0 {
                        prompt += 1;
                    }
                }
            }
        }
        assert!(total > 20, "need afterpulses to test, got {total}");
        // exponential cdf at 10 mean lifetimes
        assert!(
            f64::from(prompt) / f64::from(total) >= 0.99,
            "{prompt}/{total} prompt"
        );
    }

    #[test]
    fn mean_cluster_size_is_nine() {
        let cfg = ExperimentConfig::default();
        let mut rng = ChaCha12Rng::seed_from_u64(29);
        let mut total = 0usize;
        let n = 10_000;
        for _ in 0..n {
            let landing = draw_landing(&mut rng, &cfg.spots[0]);
            total += render_photon(&cfg.sensor, landing.0, landing.1, 1000.0).len();
        }
        let mean = total as f64 / n as f64;
        assert!((mean - 9.0).abs() <= 1.0, "mean cluster size {mean}");
    }

    #[test]
    fn small_symmetric_footprint_favors_2x2_clusters() {
        let mut sensor = SensorConfig::default();
        sensor.psf_sigma_px = 0.55;
        sensor.flash_amplitude = 12.0;
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let mut sizes = [0u32; 16];
        for _ in 0..6000 {
            let x = 100.0 + rng.random::<f64>();
            let y = 100.0 + rng.random::<f64>();
            let n = render_photon(&sensor, x, y, 0.0).len();
            if n < sizes.len() {
                sizes[n] += 1;
            }
        }
        assert!(
            sizes[4] > sizes[3] && sizes[4] > sizes[5],
            "sizes around four: {:?}",
            &sizes[1..8]
        );
    }

    #[test]
    fn deadtime_study_at_rated_flux() {
        let sensor = SensorConfig::default();
        let spot = SpotSpec {
            center_px: (128.0, 128.0),
            sigma_px: 3.75,
        };
        let study = deadtime_study(&sensor, &spot, 1.0e6, 0.05, 37);
        assert!(study.n_photons > 40_000);
        assert!(
            study.hit_loss_frac > 0.01 && study.hit_loss_frac < 0.12,
            "hit loss {}",
            study.hit_loss_frac
        );
    }
}
