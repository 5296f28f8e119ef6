//! Per-pixel deadtime: a pixel that fired is blind for `deadtime_base + ToT`
//! after the accepted hit.

use crate::config::SensorConfig;
use crate::hit::PixelHit;

use super::SimError;

/// Streaming per-pixel deadtime filter; state persists across chunks so the
/// filter can run over a position-sliced scan.
pub struct DeadtimeFilter {
    grid: u32,
    base_ns: f64,
    toa_lsb_ns: f64,
    tot_lsb_ns: f64,
    /// Last accepted (toa ticks, tot ticks) per pixel.
    last: Vec<Option<(u64, u32)>>,
    last_toa_seen: u64,
}

impl DeadtimeFilter {
    pub fn new(sensor: &SensorConfig) -> Self {
        let grid = u32::from(sensor.grid_size);
        Self {
            grid,
            base_ns: sensor.deadtime_base_ns,
            toa_lsb_ns: sensor.toa_lsb_ns,
            tot_lsb_ns: sensor.tot_lsb_ns,
            last: vec![None; (grid * grid) as usize],
            last_toa_seen: 0,
        }
    }

    /// Accept or drop one hit. Input must be fed in non-decreasing ToA order.
    pub fn push(&mut self, hit: &PixelHit) -> Result<bool, SimError> {
        if hit.toa < self.last_toa_seen {
            return Err(SimError::UnorderedHits {
                toa: hit.toa,
                previous: self.last_toa_seen,
            });
        }
        self.last_toa_seen = hit.toa;
        let idx = (u32::from(hit.y) * self.grid + u32::from(hit.x)) as usize;
        let accept = match self.last[idx] {
            None => true,
            Some((t0, tot0)) => {
                let gap_ns = (hit.toa - t0) as f64 * self.toa_lsb_ns;
                gap_ns > self.base_ns + f64::from(tot0) * self.tot_lsb_ns
            }
        };
        if accept {
            self.last[idx] = Some((hit.toa, hit.tot));
        }
        Ok(accept)
    }
}

/// Apply the deadtime to a time-ordered stream, returning the surviving hits.
///
/// Unordered input is a contract violation and returns an error.
pub fn apply_deadtime(hits: &[PixelHit], sensor: &SensorConfig) -> Result<Vec<PixelHit>, SimError> {
    let mut filter = DeadtimeFilter::new(sensor);
    let mut out = Vec::with_capacity(hits.len());
    for h in hits {
        if filter.push(h)? {
            out.push(*h);
        }
    }
    Ok(out)
}
