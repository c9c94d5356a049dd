//! Unified discrete vocabulary: range layout, value quantization, and the
//! codecs that turn sparse structures (points, boxes, poses, cuboids,
//! keypoints, actions) into token sequences and back.
//!
//! The vocabulary is a single contiguous id space split into ranges: plain
//! text ids, span sentinels, input/history reference markers, location bins,
//! a small reserved block (task prefixes live here), then the image and audio
//! VQ codebooks. Every global id maps back to exactly one `(range, local)`
//! pair.

mod codec;
mod geometry;
pub mod schema;

pub use codec::{
    build_keypoint_constraint, decode_action, decode_box, decode_camera_pose, decode_cuboid,
    decode_keypoints, decode_point, encode_action, encode_box, encode_camera_pose, encode_cuboid,
    encode_keypoints, encode_point, ActionRanges, ByteTokenizer, CuboidNorm, TextTokenizer,
    TokenMask, MISSING_KEYPOINT_TEXT,
};
pub use geometry::{
    ActionCommand, Box2D, CameraPose, Cuboid3D, GeometricEntity, KeypointSet, Point2D,
    KEYPOINT_COUNT,
};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// The vocabulary ranges, in layout order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenRange {
    /// Plain text ids owned by the external tokenizer.
    Text,
    /// Span-corruption sentinels.
    Sentinel,
    /// Input markers and history frame references.
    RefSpecial,
    /// Uniform location bins for continuous values in [0, 1].
    Location,
    /// Reserved block: task prefix tokens first, padding ids after.
    Reserved,
    /// Image VQ codebook ids.
    ImageVq,
    /// Audio VQ codebook ids.
    AudioVq,
}

impl TokenRange {
    /// All ranges in layout order.
    pub const ALL: [TokenRange; 7] = [
        TokenRange::Text,
        TokenRange::Sentinel,
        TokenRange::RefSpecial,
        TokenRange::Location,
        TokenRange::Reserved,
        TokenRange::ImageVq,
        TokenRange::AudioVq,
    ];

    fn index(self) -> usize {
        match self {
            TokenRange::Text => 0,
            TokenRange::Sentinel => 1,
            TokenRange::RefSpecial => 2,
            TokenRange::Location => 3,
            TokenRange::Reserved => 4,
            TokenRange::ImageVq => 5,
            TokenRange::AudioVq => 6,
        }
    }
}

/// Global vocabulary layout: sizes of each range plus the derived offset table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSpace {
    counts: [u32; 7],
    /// `offsets[i]` is the first global id of range `i`; `offsets[7]` is the total size.
    offsets: [u32; 8],
}

impl TokenSpace {
    /// Build a layout from per-range sizes. Every range must be non-empty so
    /// the offset table stays strictly increasing.
    pub fn new(
        text_base: u32,
        sentinel_count: u32,
        ref_special_count: u32,
        location_count: u32,
        reserved_count: u32,
        image_vq_vocab: u32,
        audio_vq_vocab: u32,
    ) -> Result<Self> {
        let counts = [
            text_base,
            sentinel_count,
            ref_special_count,
            location_count,
            reserved_count,
            image_vq_vocab,
            audio_vq_vocab,
        ];
        if let Some(i) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Config(format!(
                "vocabulary range {:?} must be non-empty",
                TokenRange::ALL[i]
            )));
        }
        let mut offsets = [0u32; 8];
        for i in 0..7 {
            offsets[i + 1] = offsets[i]
                .checked_add(counts[i])
                .ok_or_else(|| Error::Config("vocabulary size overflows u32".into()))?;
        }
        Ok(TokenSpace { counts, offsets })
    }

    /// The default layout: 32000 text ids, 200 sentinels, 10 reference
    /// markers, 1000 location bins, 70 reserved ids (text side totals 33280),
    /// a 16512-entry image codebook and an 8320-entry audio codebook.
    pub fn paper() -> Self {
        TokenSpace::new(32_000, 200, 10, 1000, 70, 16_512, 8_320)
            .expect("paper preset is statically valid")
    }

    /// Number of ids in `range`.
    pub fn count(&self, range: TokenRange) -> u32 {
        self.counts[range.index()]
    }

    /// First global id of `range`.
    pub fn offset(&self, range: TokenRange) -> u32 {
        self.offsets[range.index()]
    }

    /// Total vocabulary size across all ranges.
    pub fn total_vocab(&self) -> u32 {
        self.offsets[7]
    }

    /// Size of the text-side vocabulary (everything before the VQ codebooks).
    pub fn text_side_vocab(&self) -> u32 {
        self.offset(TokenRange::ImageVq)
    }

    /// Map a local index within `range` to its global id.
    pub fn global(&self, range: TokenRange, local: u32) -> Result<u32> {
        let count = self.count(range);
        if local >= count {
            return Err(Error::range(
                "local index",
                local as f64,
                0.0,
                (count - 1) as f64,
            ));
        }
        Ok(self.offset(range) + local)
    }

    /// Map a global id back to its unique `(range, local)` pair.
    pub fn resolve(&self, global: u32) -> Result<(TokenRange, u32)> {
        if global >= self.total_vocab() {
            return Err(Error::range(
                "global token id",
                global as f64,
                0.0,
                (self.total_vocab() - 1) as f64,
            ));
        }
        // offsets is strictly increasing, so the containing range is the last
        // one whose offset is <= global.
        let i = match self.offsets[..7].binary_search(&global) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        Ok((TokenRange::ALL[i], global - self.offsets[i]))
    }

    /// Global id of location bin `local`.
    pub fn location(&self, local: u32) -> Result<u32> {
        self.global(TokenRange::Location, local)
    }

    /// Global id of span sentinel `k`.
    pub fn sentinel(&self, k: u32) -> Result<u32> {
        self.global(TokenRange::Sentinel, k)
    }

    /// Global id of reference-special token `k` (markers and frame refs).
    pub fn ref_special(&self, k: u32) -> Result<u32> {
        self.global(TokenRange::RefSpecial, k)
    }

    /// Number of location bins (the quantization resolution).
    pub fn location_bins(&self) -> u32 {
        self.count(TokenRange::Location)
    }

    /// True if `global` is a location token.
    pub fn is_location(&self, global: u32) -> bool {
        matches!(self.resolve(global), Ok((TokenRange::Location, _)))
    }
}

impl Default for TokenSpace {
    fn default() -> Self {
        TokenSpace::paper()
    }
}

/// Quantize a normalized value in [0, 1] to one of `bins` uniform bins:
/// `min(floor(v * bins), bins - 1)`.
pub fn quantize<T: Real>(v: T, bins: u32) -> Result<u32> {
    if bins == 0 {
        return Err(Error::Config("quantize needs at least one bin".into()));
    }
    if !(v >= T::zero() && v <= T::one()) {
        return Err(Error::range("normalized value", v.as_f64(), 0.0, 1.0));
    }
    let idx = (v * T::from_usize(bins as usize)).floor().as_f64() as u32;
    Ok(idx.min(bins - 1))
}

/// Inverse of [`quantize`]: the center of bin `index`, `(index + 0.5) / bins`.
pub fn dequantize<T: Real>(index: u32, bins: u32) -> Result<T> {
    if bins == 0 {
        return Err(Error::Config("dequantize needs at least one bin".into()));
    }
    if index >= bins {
        return Err(Error::range(
            "bin index",
            index as f64,
            0.0,
            (bins - 1) as f64,
        ));
    }
    Ok(T::from_f64((index as f64 + 0.5) / bins as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn paper_layout_offsets() {
        let s = TokenSpace::paper();
        assert_eq!(s.offset(TokenRange::Text), 0);
        assert_eq!(s.offset(TokenRange::Sentinel), 32_000);
        assert_eq!(s.offset(TokenRange::RefSpecial), 32_200);
        assert_eq!(s.offset(TokenRange::Location), 32_210);
        assert_eq!(s.offset(TokenRange::Reserved), 33_210);
        assert_eq!(s.text_side_vocab(), 33_280);
        assert_eq!(s.offset(TokenRange::ImageVq), 33_280);
        assert_eq!(s.offset(TokenRange::AudioVq), 33_280 + 16_512);
        assert_eq!(s.total_vocab(), 33_280 + 16_512 + 8_320);
    }

    #[test]
    fn offsets_strictly_increasing() {
        let s = TokenSpace::paper();
        for w in s.offsets.windows(2) {
            assert!(w[0] < w[1]);
        }
    }

    #[test]
    fn empty_range_rejected() {
        assert!(TokenSpace::new(32_000, 0, 10, 1000, 70, 16_512, 8_320).is_err());
    }

    #[test]
    fn quantize_edges() {
        assert_eq!(quantize(0.0f64, 1000).unwrap(), 0);
        assert_eq!(quantize(1.0f64, 1000).unwrap(), 999);
        assert_eq!(quantize(0.5f64, 1000).unwrap(), 500);
    }

    #[test]
    fn quantize_out_of_range() {
        assert!(quantize(-0.01f64, 1000).is_err());
        assert!(quantize(1.01f64, 1000).is_err());
        assert!(quantize(f64::NAN, 1000).is_err());
    }

    #[test]
    fn dequantize_bin_centers() {
        assert_eq!(dequantize::<f64>(0, 1000).unwrap(), 0.0005);
        assert_eq!(dequantize::<f64>(999, 1000).unwrap(), 0.9995);
        assert!(dequantize::<f64>(1000, 1000).is_err());
    }

    #[test]
    fn round_trip_error_bounded_on_grid() {
        // Exhaustive sweep: 10^4 evenly spaced values, half-bin-width bound.
        let bins = 1000;
        for k in 0..=10_000u32 {
            let v = k as f64 / 10_000.0;
            let back: f64 = dequantize(quantize(v, bins).unwrap(), bins).unwrap();
            assert!(
                (back - v).abs() <= 0.5 / bins as f64 + 1e-12,
                "v={v} back={back}"
            );
        }
    }

    #[test]
    fn resolve_is_inverse_of_global() {
        let s = TokenSpace::paper();
        for range in TokenRange::ALL {
            for local in [0, 1, s.count(range) - 1] {
                let g = s.global(range, local).unwrap();
                assert_eq!(s.resolve(g).unwrap(), (range, local));
            }
        }
    }

    proptest! {
        #[test]
        fn layout_bijective(global in 0u32..58_112) {
            let s = TokenSpace::paper();
            let (range, local) = s.resolve(global).unwrap();
            prop_assert_eq!(s.global(range, local).unwrap(), global);
        }

        #[test]
        fn quantize_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(quantize(lo, 1000).unwrap() <= quantize(hi, 1000).unwrap());
        }

        #[test]
        fn round_trip_error_bounded(v in 0.0f64..=1.0, bins in 1u32..5000) {
            let back: f64 = dequantize(quantize(v, bins).unwrap(), bins).unwrap();
            prop_assert!((back - v).abs() <= 0.5 / bins as f64 + 1e-12);
        }
    }
}
