use homcam::config::{ExperimentConfig, ScanPlan};
use std::collections::HashMap;

fn main() {
    let mut cfg = ExperimentConfig::default();
    cfg.scan = ScanPlan { positions_mm: vec![0.30], dwell_s: 60.0 };
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
    // photon records with provenance, per region
    struct P { t: f64, pid: u64, mixed: bool }
    let regions = [
        homcam::recon::RegionSpec { center_px: (72.0, 128.0), radius_px: 40.0 },
        homcam::recon::RegionSpec { center_px: (184.0, 128.0), radius_px: 40.0 },
    ];
    let mut per: [Vec<P>; 2] = [Vec::new(), Vec::new()];
    let mut split_clusters_per_photon: HashMap<u64, u32> = HashMap::new();
    for cl in &clusters {
        let pid = out.hits[cl.indices[0] as usize].photon_id;
        let mixed = cl.indices.iter().any(|&i| out.hits[i as usize].photon_id != pid);
        *split_clusters_per_photon.entry(pid).or_insert(0) += 1;
        let p = homcam::recon::centroid(cl, &cents).unwrap();
        let reg = homcam::recon::assign_region(p.x_px, p.y_px, &regions);
        let slot = match reg {
            homcam::recon::Region::Fiber1 => 0,
            homcam::recon::Region::Fiber2 => 1,
            homcam::recon::Region::Outside => continue,
        };
        per[slot].push(P { t: p.t_ns, pid, mixed });
    }
    for v in per.iter_mut() { v.sort_by(|a, b| a.t.total_cmp(&b.t)); }
    let n_multi = split_clusters_per_photon.values().filter(|&&c| c > 1).count();
    println!("photons reconstructed as >1 cluster: {n_multi}");

    // companion classification around fiber-1 members of split pairs
    let (mut n_ap, mut n_same_pair_frag, mut n_random_signal, mut n_dark, mut n_other) = (0, 0, 0, 0, 0);
    let mut n_pairs = 0u64;
    for (i, p) in per[0].iter().enumerate() {
        let t = truth[&p.pid];
        if t.kind != homcam::sim::PhotonKind::Signal { continue; }
        n_pairs += 1;
        for other in [i.wrapping_sub(1), i + 1] {
            if other >= per[0].len() { continue; }
            let o = &per[0][other];
            if (o.t - p.t).abs() > 50.0 { continue; }
            let ot = truth[&o.pid];
            if o.pid == p.pid {
                n_same_pair_frag += 1; // same photon split into two clusters
            } else if ot.kind == homcam::sim::PhotonKind::Afterpulse && ot.pair_id == t.pair_id {
                n_ap += 1;
            } else if ot.kind == homcam::sim::PhotonKind::Dark {
                n_dark += 1;
            } else if ot.kind == homcam::sim::PhotonKind::Signal && ot.pair_id == t.pair_id {
                n_other += 1; // same pair, other signal photon in same fiber?!
            } else {
                n_random_signal += 1;
            }
        }
    }
    println!("signal fiber-1 photons searched: {n_pairs}");
    println!("companions: afterpulse(own pair) {n_ap}, own-photon fragment {n_same_pair_frag}, same-pair signal {n_other}, dark {n_dark}, random signal {n_random_signal}");
    let _ = n_multi;
}
