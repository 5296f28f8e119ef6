use homcam::config::{ExperimentConfig, ScanPlan};
use std::collections::HashMap;

fn main() {
    let mut cfg = ExperimentConfig::default();
    cfg.scan = ScanPlan { positions_mm: vec![0.30], dwell_s: 60.0 };
    let out = homcam::sim::simulate_scan(&cfg, 4242).unwrap();
    let hits: Vec<homcam::PixelHit> = out.hits.iter().map(|t| t.hit).collect();
    let clusters = homcam::recon::cluster_stream(&hits, &homcam::recon::ClusterParams::default()).unwrap();
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
    let mut mixed: [Vec<bool>; 2] = [Vec::new(), Vec::new()];
    let mut tmp: [Vec<(homcam::recon::Photon, u64, bool)>; 2] = [Vec::new(), Vec::new()];
    for cl in &clusters {
        let pid = out.hits[cl.indices[0] as usize].photon_id;
        let mix = cl.indices.iter().any(|&i| out.hits[i as usize].photon_id != pid);
        let mut p = homcam::recon::centroid(cl, &cents).unwrap();
        p.region = homcam::recon::assign_region(p.x_px, p.y_px, &regions);
        let slot = match p.region {
            homcam::recon::Region::Fiber1 => 0,
            homcam::recon::Region::Fiber2 => 1,
            homcam::recon::Region::Outside => continue,
        };
        tmp[slot].push((p, pid, mix));
    }
    for s in 0..2 {
        tmp[s].sort_by(|a, b| a.0.t_ns.total_cmp(&b.0.t_ns));
        for (p, pid, mix) in &tmp[s] {
            photons[s].push(*p);
            pids[s].push(*pid);
            mixed[s].push(*mix);
        }
    }
    let cross = homcam::recon::find_cross_coincidences(&photons[0], &photons[1], 250.0).unwrap();
    let mut shown = 0;
    for pr in &cross.pairs {
        if pr.dt_ns.abs() > 21.9 { continue; }
        for (s, i) in [(0usize, pr.i1 as usize), (1, pr.i2 as usize)] {
            for o in [i.wrapping_sub(1), i + 1] {
                if o >= photons[s].len() { continue; }
                if (photons[s][o].t_ns - photons[s][i].t_ns).abs() > 50.0 { continue; }
                let me = truth[&pids[s][i]];
                let ot = truth[&pids[s][o]];
                use homcam::sim::PhotonKind::*;
                if pids[s][o] != pids[s][i] && ot.kind == Signal && ot.pair_id == me.pair_id && shown < 8 {
                    shown += 1;
                    println!("side {s}: me pid {} kind {:?} fiber {} pair {} | ot pid {} kind {:?} fiber {} pair {} mixed(me {} ot {})",
                        pids[s][i], me.kind, me.fiber, me.pair_id,
                        pids[s][o], ot.kind, ot.fiber, ot.pair_id, mixed[s][i], mixed[s][o]);
                    println!("   me cluster ({:.1},{:.1}) npx {} | ot cluster ({:.1},{:.1}) npx {} | dt {:.1}",
                        photons[s][i].x_px, photons[s][i].y_px, photons[s][i].n_pixels,
                        photons[s][o].x_px, photons[s][o].y_px, photons[s][o].n_pixels,
                        photons[s][o].t_ns - photons[s][i].t_ns);
                }
            }
        }
    }
}
