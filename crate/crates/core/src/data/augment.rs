use rand::Rng;

use super::fseq::FeatureSequence;

/// Desk-scale default mask widths for a `frames × width` stream:
/// `frames / 16` frames and `width / 8` channels.
pub fn default_mask_widths(frames: usize, width: usize) -> (usize, usize) {
    (frames / 16, width / 8)
}

/// Zeroes one band of `U{0..=max_t}` consecutive frames and one band of
/// `U{0..=max_f}` consecutive channels. Widths larger than the matrix are
/// clamped to it.
pub fn spec_mask<R: Rng + ?Sized>(
    features: &FeatureSequence,
    max_t: usize,
    max_f: usize,
    rng: &mut R,
) -> FeatureSequence {
    let mut out = features.clone();
    spec_mask_in_place(
        out.values_mut(),
        features.frames(),
        features.width(),
        max_t,
        max_f,
        rng,
    );
    out
}

/// Masks a row-major `frames × width` slice in place; returns the
/// (start, len) bands chosen for time and channels.
pub fn spec_mask_in_place<R: Rng + ?Sized>(
    values: &mut [f32],
    frames: usize,
    width: usize,
    max_t: usize,
    max_f: usize,
    rng: &mut R,
) -> ((usize, usize), (usize, usize)) {
    debug_assert_eq!(values.len(), frames * width);
    let band = |extent: usize, max: usize, rng: &mut R| {
        let w = rng.random_range(0..=max.min(extent));
        let start = rng.random_range(0..=extent - w);
        (start, w)
    };
    let (t0, tw) = band(frames, max_t, rng);
    let (f0, fw) = band(width, max_f, rng);
    for t in t0..t0 + tw {
        values[t * width..(t + 1) * width].fill(0.0);
    }
    for t in 0..frames {
        values[t * width + f0..t * width + f0 + fw].fill(0.0);
    }
    ((t0, tw), (f0, fw))
}
