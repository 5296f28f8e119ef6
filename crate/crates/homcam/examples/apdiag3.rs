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
    // find clusters whose first-hit photon is Signal but whose truth fiber
    // disagrees with the cluster's region side
    let mut shown = 0;
    for cl in &clusters {
        let pid = out.hits[cl.indices[0] as usize].photon_id;
        let t = truth[&pid];
        let p = homcam::recon::centroid(cl, &cents).unwrap();
        let near1 = ((p.x_px - 72.0).powi(2) + (p.y_px - 128.0).powi(2)).sqrt();
        let near2 = ((p.x_px - 184.0).powi(2) + (p.y_px - 128.0).powi(2)).sqrt();
        let region = if near1 <= 40.0 { 0 } else if near2 <= 40.0 { 1 } else { continue };
        if t.fiber as usize != region {
            shown += 1;
            let ids: Vec<u64> = cl.indices.iter().map(|&i| out.hits[i as usize].photon_id).collect();
            let kinds: Vec<_> = ids.iter().map(|id| (truth[id].kind, truth[id].fiber, truth[id].x_px as i32, truth[id].y_px as i32)).collect();
            if shown <= 6 {
                println!("cluster at ({:.1},{:.1}) region {} but truth fiber {} kind {:?} | first-photon landing ({:.1},{:.1}) | member photons {:?}",
                    p.x_px, p.y_px, region, t.fiber, t.kind, t.x_px, t.y_px, kinds);
            }
        }
    }
    println!("total clusters on the wrong side: {shown}");
}
