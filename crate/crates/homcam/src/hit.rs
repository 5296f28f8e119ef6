//! The raw pixel hit record shared by the simulator, the file format and
//! the reconstruction.

/// One thresholded pixel firing.
///
/// `toa` counts ToA LSB ticks (1.5625 ns for the default sensor), `tot`
/// counts ToT LSB ticks (25 ns). Matches the 16-byte binary record of the
/// hit file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PixelHit {
    pub x: u16,
    pub y: u16,
    pub toa: u64,
    pub tot: u32,
}

impl PixelHit {
    /// Canonical stream ordering: time, then x, then y.
    #[inline]
    pub fn stream_key(&self) -> (u64, u16, u16) {
        (self.toa, self.x, self.y)
    }
}

/// Sort hits into the canonical stream order (time, then x, then y).
pub fn sort_hits(hits: &mut [PixelHit]) {
    hits.sort_unstable_by_key(PixelHit::stream_key);
}

/// True if the slice is in canonical stream order.
pub fn is_time_ordered(hits: &[PixelHit]) -> bool {
    hits.windows(2).all(|w| w[0].toa <= w[1].toa)
}
