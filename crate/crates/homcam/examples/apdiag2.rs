use homcam::config::{ExperimentConfig, ScanPlan};
use std::collections::HashMap;

fn main() {
    let mut cfg = ExperimentConfig::default();
    cfg.scan = ScanPlan { positions_mm: vec![0.30], dwell_s: 185.0 };
    let out = homcam::sim::simulate_scan(&cfg, 4242).unwrap();
    let hits: Vec<homcam::PixelHit> = out.hits.iter().map(|t| t.hit).collect();
    let params = homcam::recon::ClusterParams::default();
    let clusters = homcam::recon::cluster_stream(&hits, &params).unwrap();
    let cents = homcam::recon::CentroidParams {
        toa_lsb_ns: 1.5625, tot_lsb_ns: 25.0,
        walk: homcam::recon::TimewalkParams { w0_ns2: 5000.0, w1_ns: 100.0 },
    };
    let truth: HashMap<u64, &homcam::sim::TruthPhoton> =
        out.truth.iter().map(|t| (t.photon_id, t)).collect();
    let regions = [
        homcam::recon::RegionSpec { center_px: (72.0, 128.0), radius_px: 40.0 },
        homcam::recon::RegionSpec { center_px: (184.0, 128.0), radius_px: 40.0 },
    ];
    let mut photons: [Vec<homcam::recon::Photon>; 2] = [Vec::new(), Vec::new()];
    let mut pids: [Vec<u64>; 2] = [Vec::new(), Vec::new()];
    let mut recs: [Vec<(f64, u64)>; 2] = [Vec::new(), Vec::new()];
    for cl in &clusters {
        let pid = out.hits[cl.indices[0] as usize].photon_id;
        let mut p = homcam::recon::centroid(cl, &cents).unwrap();
        p.region = homcam::recon::assign_region(p.x_px, p.y_px, &regions);
        let slot = match p.region {
            homcam::recon::Region::Fiber1 => 0,
            homcam::recon::Region::Fiber2 => 1,
            homcam::recon::Region::Outside => continue,
        };
        recs[slot].push((p.t_ns, pid));
        photons[slot].push(p);
    }
    for s in 0..2 {
        let mut idx: Vec<usize> = (0..recs[s].len()).collect();
        idx.sort_by(|&a, &b| recs[s][a].0.total_cmp(&recs[s][b].0));
        photons[s] = idx.iter().map(|&i| photons[s][i]).collect();
        pids[s] = idx.iter().map(|&i| recs[s][i].1).collect();
        // fix sort order of photons vec for find_cross (needs sorted)
    }
    let cross = homcam::recon::find_cross_coincidences(&photons[0], &photons[1], 250.0).unwrap();
    // emulate the 3-sigma peak cut around mu=0, sigma1=7.3
    let cut = 3.0 * 7.3;
    let mut by_kind: HashMap<&'static str, u32> = HashMap::new();
    let mut n_sample = 0u64;
    for pr in &cross.pairs {
        if pr.dt_ns.abs() > cut { continue; }
        n_sample += 1;
        // classify the CROSS pair itself
        let p1 = truth[&pids[0][pr.i1 as usize]];
        let p2 = truth[&pids[1][pr.i2 as usize]];
        use homcam::sim::PhotonKind::*;
        let pair_kind = match (p1.kind, p2.kind, p1.pair_id == p2.pair_id) {
            (Signal, Signal, true) => "true split pair",
            (Signal, Signal, false) => "two signal, different pairs",
            (Afterpulse, _, _) | (_, Afterpulse, _) => "involves afterpulse",
            (Dark, _, _) | (_, Dark, _) => "involves dark",
        };
        *by_kind.entry(pair_kind).or_insert(0) += 1;
        // companions around each member
        for (s, i) in [(0usize, pr.i1 as usize), (1, pr.i2 as usize)] {
            for o in [i.wrapping_sub(1), i + 1] {
                if o >= photons[s].len() { continue; }
                if (photons[s][o].t_ns - photons[s][i].t_ns).abs() > 50.0 { continue; }
                let me = truth[&pids[s][i]];
                let ot = truth[&pids[s][o]];
                let tag = if pids[s][o] == pids[s][i] { "fragment of same photon" }
                else if ot.kind == Afterpulse && ot.pair_id == me.pair_id && me.pair_id != u64::MAX { "own afterpulse" }
                else if ot.kind == Afterpulse { "other afterpulse" }
                else if ot.kind == Signal && ot.pair_id == me.pair_id { "bunched partner!" }
                else if ot.kind == Signal { "random signal" }
                else { "dark" };
                *by_kind.entry(tag).or_insert(0) += 1;
            }
        }
    }
    println!("cross-peak sample {n_sample}");
    let mut v: Vec<_> = by_kind.into_iter().collect();
    v.sort();
    for (k, c) in v { println!("  {k}: {c}"); }
}
