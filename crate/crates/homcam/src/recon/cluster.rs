//! Spatiotemporal clustering of the hit stream.
//!
//! Two hits are connected when their pixels are 8-neighbors (the same pixel
//! does not count as its own neighbor) and their ToA differ by at most the
//! cluster window. Clusters are the maximal connected components of this
//! relation, identical to brute-force connected components on any input.
//!
//! The stream is cut at inter-hit gaps larger than the window: no component
//! can span such a gap (every path crossing it would need an edge longer
//! than the window), so each run between gaps is clustered independently
//! with a local union-find. That keeps memory bounded by the densest burst
//! and makes the partitioned parallel mode bit-identical to the sequential
//! one by construction.

use rayon::prelude::*;

use crate::hit::PixelHit;

use super::ReconError;

/// Clustering settings; the window is quantized to ToA ticks.
#[derive(Debug, Clone, Copy)]
pub struct ClusterParams {
    pub window_ns: f64,
    pub toa_lsb_ns: f64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            window_ns: 300.0,
            toa_lsb_ns: 1.5625,
        }
    }
}

impl ClusterParams {
    #[inline]
    pub fn window_ticks(&self) -> u64 {
        (self.window_ns / self.toa_lsb_ns).floor() as u64
    }
}

/// A connected group of hits, hits in canonical stream order.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub hits: Vec<PixelHit>,
    /// Positions of the hits in the input stream (for provenance joins).
    pub indices: Vec<u32>,
}

impl Cluster {
    pub fn bounding_box(&self) -> (u16, u16, u16, u16) {
        let mut x0 = u16::MAX;
        let mut x1 = 0;
        let mut y0 = u16::MAX;
        let mut y1 = 0;
        for h in &self.hits {
            x0 = x0.min(h.x);
            x1 = x1.max(h.x);
            y0 = y0.min(h.y);
            y1 = y1.max(h.y);
        }
        (x0, x1, y0, y1)
    }

    pub fn t_span_ns(&self, toa_lsb_ns: f64) -> f64 {
        let lo = self.hits.iter().map(|h| h.toa).min().unwrap_or(0);
        let hi = self.hits.iter().map(|h| h.toa).max().unwrap_or(0);
        (hi - lo) as f64 * toa_lsb_ns
    }
}

#[inline]
fn adjacent(a: &PixelHit, b: &PixelHit) -> bool {
    let dx = i32::from(a.x) - i32::from(b.x);
    let dy = i32::from(a.y) - i32::from(b.y);
    dx.abs() <= 1 && dy.abs() <= 1 && (dx != 0 || dy != 0)
}

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
        }
    }

    fn find(&mut self, mut i: u32) -> u32 {
        while self.parent[i as usize] != i {
            let gp = self.parent[self.parent[i as usize] as usize];
            self.parent[i as usize] = gp;
            i = gp;
        }
        i
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // root at the smaller index keeps cluster emission order stable
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Cluster one gap-free run. Hits arrive time-sorted; for each hit only the
/// window-deep backward scan can contain connection partners.
fn process_run(run: &[PixelHit], base: u32, window_ticks: u64, out: &mut Vec<Cluster>) {
    let n = run.len();
    if n == 1 {
        out.push(Cluster {
            hits: vec![run[0]],
            indices: vec![base],
        });
        return;
    }
    let mut uf = UnionFind::new(n);
    for i in 1..n {
        let hi = &run[i];
        for j in (0..i).rev() {
            let hj = &run[j];
            if hi.toa - hj.toa > window_ticks {
                break;
            }
            if adjacent(hi, hj) {
                uf.union(i as u32, j as u32);
            }
        }
    }
    // group members by root, emission ordered by first appearance
    let mut slot: Vec<i32> = vec![-1; n];
    let mut clusters_local: Vec<Cluster> = Vec::new();
    for i in 0..n {
        let r = uf.find(i as u32) as usize;
        let s = if slot[r] >= 0 {
            slot[r] as usize
        } else {
            let s = clusters_local.len();
            slot[r] = s as i32;
            clusters_local.push(Cluster {
                hits: Vec::new(),
                indices: Vec::new(),
            });
            s
        };
        clusters_local[s].hits.push(run[i]);
        clusters_local[s].indices.push(base + i as u32);
    }
    out.extend(clusters_local);
}

fn run_ranges(hits: &[PixelHit], window_ticks: u64) -> Vec<(usize, usize)> {
    let mut ranges = Vec::new();
    let mut start = 0usize;
    for i in 1..hits.len() {
        if hits[i].toa - hits[i - 1].toa > window_ticks {
            ranges.push((start, i));
            start = i;
        }
    }
    if !hits.is_empty() {
        ranges.push((start, hits.len()));
    }
    ranges
}

fn check_sorted(hits: &[PixelHit]) -> Result<(), ReconError> {
    for (i, w) in hits.windows(2).enumerate() {
        if w[1].toa < w[0].toa {
            return Err(ReconError::UnsortedInput { index: i + 1 });
        }
    }
    Ok(())
}

/// Sequential clustering of a time-ordered stream.
pub fn cluster_stream(hits: &[PixelHit], params: &ClusterParams) -> Result<Vec<Cluster>, ReconError> {
    check_sorted(hits)?;
    let window = params.window_ticks();
    let mut out = Vec::with_capacity(hits.len() / 8 + 1);
    for (s, e) in run_ranges(hits, window) {
        process_run(&hits[s..e], s as u32, window, &mut out);
    }
    Ok(out)
}

/// Partitioned parallel clustering; the partition is bit-identical to
/// [`cluster_stream`].
pub fn cluster_stream_par(
    hits: &[PixelHit],
    params: &ClusterParams,
) -> Result<Vec<Cluster>, ReconError> {
    check_sorted(hits)?;
    let window = params.window_ticks();
    let ranges = run_ranges(hits, window);
    let chunks: Vec<Vec<Cluster>> = ranges
        .par_iter()
        .map(|&(s, e)| {
            let mut out = Vec::new();
            process_run(&hits[s..e], s as u32, window, &mut out);
            out
        })
        .collect();
    Ok(chunks.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn hit(x: u16, y: u16, toa: u64) -> PixelHit {
        PixelHit { x, y, toa, tot: 4 }
    }

    /// Brute-force connected components over the full pairwise relation.
    fn oracle_partition(hits: &[PixelHit], window_ticks: u64) -> Vec<Vec<u32>> {
        let n = hits.len();
        let mut adj = vec![Vec::new(); n];
        for i in 0..n {
            for j in 0..i {
                let dt = hits[i].toa.abs_diff(hits[j].toa);
                if dt <= window_ticks && adjacent(&hits[i], &hits[j]) {
                    adj[i].push(j);
                    adj[j].push(i);
                }
            }
        }
        let mut seen = vec![false; n];
        let mut comps = Vec::new();
        for s in 0..n {
            if seen[s] {
                continue;
            }
            let mut stack = vec![s];
            let mut comp = Vec::new();
            seen[s] = true;
            while let Some(u) = stack.pop() {
                comp.push(u as u32);
                for &v in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
            comp.sort_unstable();
            comps.push(comp);
        }
        comps.sort();
        comps
    }

    fn partition_of(clusters: &[Cluster]) -> Vec<Vec<u32>> {
        let mut p: Vec<Vec<u32>> = clusters
            .iter()
            .map(|c| {
                let mut v = c.indices.clone();
                v.sort_unstable();
                v
            })
            .collect();
        p.sort();
        p
    }

    #[test]
    fn square_block_is_one_cluster() {
        let hits = vec![hit(10, 10, 0), hit(11, 10, 2), hit(10, 11, 4), hit(11, 11, 6)];
        let cl = cluster_stream(&hits, &ClusterParams::default()).unwrap();
        assert_eq!(cl.len(), 1);
        assert_eq!(cl[0].hits.len(), 4);
        assert_eq!(cl[0].bounding_box(), (10, 11, 10, 11));
    }

    #[test]
    fn distant_pixels_split() {
        let hits = vec![hit(10, 10, 0), hit(10, 13, 0)];
        let cl = cluster_stream(&hits, &ClusterParams::default()).unwrap();
        assert_eq!(cl.len(), 2);
    }

    #[test]
    fn same_pixel_rehit_is_not_adjacent() {
        let hits = vec![hit(10, 10, 0), hit(10, 10, 10)];
        let cl = cluster_stream(&hits, &ClusterParams::default()).unwrap();
        assert_eq!(cl.len(), 2);
    }

    #[test]
    fn window_boundary_is_inclusive() {
        // 192 ticks = 300 ns exactly
        let hits = vec![hit(10, 10, 0), hit(11, 10, 192)];
        let cl = cluster_stream(&hits, &ClusterParams::default()).unwrap();
        assert_eq!(cl.len(), 1);
        let hits = vec![hit(10, 10, 0), hit(11, 10, 193)];
        let cl = cluster_stream(&hits, &ClusterParams::default()).unwrap();
        assert_eq!(cl.len(), 2);
    }

    #[test]
    fn chain_spanning_more_than_window_stays_connected() {
        // pairwise rule: each link within the window even though the whole
        // cluster spans longer
        let hits = vec![hit(10, 10, 0), hit(11, 10, 180), hit(12, 10, 360)];
        let cl = cluster_stream(&hits, &ClusterParams::default()).unwrap();
        assert_eq!(cl.len(), 1);
        assert!(cl[0].t_span_ns(1.5625) > 300.0);
    }

    #[test]
    fn unsorted_input_rejected() {
        let hits = vec![hit(10, 10, 100), hit(11, 10, 0)];
        assert!(matches!(
            cluster_stream(&hits, &ClusterParams::default()),
            Err(ReconError::UnsortedInput { .. })
        ));
    }

    #[test]
    fn empty_input_is_empty_output() {
        assert!(cluster_stream(&[], &ClusterParams::default())
            .unwrap()
            .is_empty());
    }

    fn random_stream(rng: &mut ChaCha12Rng, n: usize, span_px: u16, span_ticks: u64) -> Vec<PixelHit> {
        let mut hits: Vec<PixelHit> = (0..n)
            .map(|_| PixelHit {
                x: 100 + rng.random_range(0..span_px),
                y: 100 + rng.random_range(0..span_px),
                toa: rng.random_range(0..span_ticks),
                tot: rng.random_range(1..32),
            })
            .collect();
        crate::hit::sort_hits(&mut hits);
        hits
    }

    #[test]
    fn random_streams_match_brute_force_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(41);
        let params = ClusterParams::default();
        for trial in 0..60 {
            let n = 20 + (trial * 17) % 480;
            let hits = random_stream(&mut rng, n, 12, 3000);
            let cl = cluster_stream(&hits, &params).unwrap();
            assert_eq!(
                partition_of(&cl),
                oracle_partition(&hits, params.window_ticks()),
                "trial {trial}"
            );
            let total: usize = cl.iter().map(|c| c.hits.len()).sum();
            assert_eq!(total, hits.len(), "every hit in exactly one cluster");
        }
    }

    #[test]
    fn parallel_mode_is_bit_identical() {
        let mut rng = ChaCha12Rng::seed_from_u64(43);
        let params = ClusterParams::default();
        for _ in 0..20 {
            let hits = random_stream(&mut rng, 800, 20, 200_000);
            let seq = cluster_stream(&hits, &params).unwrap();
            let par = cluster_stream_par(&hits, &params).unwrap();
            assert_eq!(seq, par);
        }
    }

    #[test]
    fn insensitive_to_permutation_after_canonical_sort() {
        let mut rng = ChaCha12Rng::seed_from_u64(47);
        let params = ClusterParams::default();
        let sorted = random_stream(&mut rng, 300, 10, 2000);
        let reference = partition_of(&cluster_stream(&sorted, &params).unwrap());
        for _ in 0..5 {
            let mut shuffled = sorted.clone();
            // Fisher-Yates
            for i in (1..shuffled.len()).rev() {
                let j = rng.random_range(0..=i);
                shuffled.swap(i, j);
            }
            crate::hit::sort_hits(&mut shuffled);
            // partitions compare as sets of hit keys because indices moved
            let cl = cluster_stream(&shuffled, &params).unwrap();
            let mut got: Vec<Vec<(u64, u16, u16, u32)>> = cl
                .iter()
                .map(|c| {
                    let mut v: Vec<_> =
                        c.hits.iter().map(|h| (h.toa, h.x, h.y, h.tot)).collect();
                    v.sort_unstable();
                    v
                })
                .collect();
            got.sort();
            let mut want: Vec<Vec<(u64, u16, u16, u32)>> = reference
                .iter()
                .map(|idxs| {
                    let mut v: Vec<_> = idxs
                        .iter()
                        .map(|&i| {
                            let h = &sorted[i as usize];
                            (h.toa, h.x, h.y, h.tot)
                        })
                        .collect();
                    v.sort_unstable();
                    v
                })
                .collect();
            want.sort();
            assert_eq!(got, want);
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn clustering_equals_oracle(
            raw in proptest::collection::vec((0u16..8, 0u16..8, 0u64..1500u64), 1..120)
        ) {
            let mut hits: Vec<PixelHit> = raw
                .into_iter()
                .map(|(x, y, toa)| PixelHit { x: 50 + x, y: 50 + y, toa, tot: 2 })
                .collect();
            crate::hit::sort_hits(&mut hits);
            let params = ClusterParams::default();
            let cl = cluster_stream(&hits, &params).unwrap();
            proptest::prop_assert_eq!(
                partition_of(&cl),
                oracle_partition(&hits, params.window_ticks())
            );
        }
    }
}
