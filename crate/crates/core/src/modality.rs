//! Deterministic shape, budget, and segment arithmetic for every modality:
//! patch grids, VQ target sizes, spectrogram framing, history budgets, patch
//! subsampling, and the dense-label RGB conversions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// What a token grid is for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModalityKind {
    ImageIn,
    ImageHistory,
    AudioIn,
    AudioHistory,
    Text,
    ImageVqTarget,
    AudioVqTarget,
}

/// A resolved token grid: spatial dims, patch size, and the grid it induces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModalityShape {
    pub kind: ModalityKind,
    /// Height x width (or mel bins x hops for audio).
    pub dims: (u32, u32),
    pub patch: u32,
    pub rows: u32,
    pub cols: u32,
}

impl ModalityShape {
    pub fn token_count(&self) -> u32 {
        self.rows * self.cols
    }
}

/// Divide `dims` by `patch`, requiring exact divisibility.
pub fn token_grid(kind: ModalityKind, dims: (u32, u32), patch: u32) -> Result<ModalityShape> {
    if patch == 0 {
        return Err(Error::Shape("patch size must be positive".into()));
    }
    if dims.0 % patch != 0 || dims.1 % patch != 0 {
        return Err(Error::Shape(format!(
            "{:?} dims {}x{} not divisible by patch {patch}",
            kind, dims.0, dims.1
        )));
    }
    Ok(ModalityShape {
        kind,
        dims,
        patch,
        rows: dims.0 / patch,
        cols: dims.1 / patch,
    })
}

/// Token count of a VQ target grid at the given compression ratio (image) or
/// patch size (audio) -- same arithmetic either way.
pub fn vq_target_tokens(kind: ModalityKind, dims: (u32, u32), compression: u32) -> Result<u32> {
    Ok(token_grid(kind, dims, compression)?.token_count())
}

/// One audio subsegment's extent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AudioSegment {
    pub samples: u64,
    pub seconds: f64,
}

/// Samples and exact duration of one spectrogram subsegment.
pub fn audio_segment(sample_rate: u32, hop: u32, hops: u32) -> Result<AudioSegment> {
    if sample_rate == 0 || hop == 0 || hops == 0 {
        return Err(Error::Config(
            "sample rate, hop, and hop count must be positive".into(),
        ));
    }
    let samples = hop as u64 * hops as u64;
    Ok(AudioSegment {
        samples,
        seconds: samples as f64 / sample_rate as f64,
    })
}

/// Half-open sample range `[i * samples, (i + 1) * samples)` of segment `i`.
pub fn segment_bounds(segment: &AudioSegment, i: u64) -> (u64, u64) {
    (i * segment.samples, (i + 1) * segment.samples)
}

/// Sample range of segment `i` within a clip of `total` samples; the last
/// partial segment zero-pads up to the full segment length.
pub fn segment_slice(segment: &AudioSegment, i: u64, total: u64) -> (u64, u64, u64) {
    let (start, end) = segment_bounds(segment, i);
    let clipped = end.min(total);
    let start = start.min(total);
    (start, clipped, end - clipped)
}

/// Maximum history frames per kind.
pub const MAX_HISTORY_FRAMES: u32 = 4;

/// Token budget of a history input: `frames * latents`, at most 4 frames.
pub fn history_budget(frames: u32, latents_per_frame: u32) -> Result<u32> {
    if frames == 0 || frames > MAX_HISTORY_FRAMES {
        return Err(Error::Budget(format!(
            "history frames must be in 1..={MAX_HISTORY_FRAMES}, got {frames}"
        )));
    }
    Ok(frames * latents_per_frame)
}

/// Uniformly subsample `ceil(count * keep_fraction)` patch indices without
/// replacement. Strictly increasing output, identical across calls with the
/// same seed.
pub fn subsample_patches(count: u32, keep_fraction: f64, seed: u64) -> Result<Vec<u32>> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::range("keep_fraction", keep_fraction, 0.0, 1.0));
    }
    let keep = ((count as f64 * keep_fraction).ceil() as u32).min(count);
    if keep == count {
        return Ok((0..count).collect());
    }
    // Partial Fisher-Yates over the index array, then sort the kept prefix.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<u32> = (0..count).collect();
    for i in 0..keep as usize {
        let j = rng.gen_range(i..count as usize);
        indices.swap(i, j);
    }
    let mut kept = indices[..keep as usize].to_vec();
    kept.sort_unstable();
    Ok(kept)
}

/// Depth to grayscale: `depth / max_depth`.
pub fn depth_to_gray<T: Real>(depth: T, max_depth: T) -> Result<T> {
    if !(max_depth > T::zero()) {
        return Err(Error::Validation("max_depth must be positive".into()));
    }
    if !(depth >= T::zero() && depth <= max_depth) {
        return Err(Error::range(
            "depth",
            depth.as_f64(),
            0.0,
            max_depth.as_f64(),
        ));
    }
    Ok(depth / max_depth)
}

/// Inverse of [`depth_to_gray`].
pub fn gray_to_depth<T: Real>(gray: T, max_depth: T) -> Result<T> {
    if !(gray >= T::zero() && gray <= T::one()) {
        return Err(Error::range("gray", gray.as_f64(), 0.0, 1.0));
    }
    Ok(gray * max_depth)
}

/// Surface normal to RGB: each channel is `(component + 1) / 2`. The input
/// must be unit length to 1e-6.
pub fn normal_to_rgb<T: Real>(nx: T, ny: T, nz: T) -> Result<(T, T, T)> {
    let norm = (nx * nx + ny * ny + nz * nz).sqrt();
    if (norm - T::one()).abs().as_f64() > 1e-6 {
        return Err(Error::Validation(format!(
            "normal has length {}, expected 1 within 1e-6",
            norm.as_f64()
        )));
    }
    let half = T::from_f64(0.5);
    Ok((
        (nx + T::one()) * half,
        (ny + T::one()) * half,
        (nz + T::one()) * half,
    ))
}

/// Inverse of [`normal_to_rgb`].
pub fn rgb_to_normal<T: Real>(r: T, g: T, b: T) -> Result<(T, T, T)> {
    for (name, c) in [("r", r), ("g", g), ("b", b)] {
        if !(c >= T::zero() && c <= T::one()) {
            return Err(Error::range(name, c.as_f64(), 0.0, 1.0));
        }
    }
    let two = T::from_f64(2.0);
    Ok((r * two - T::one(), g * two - T::one(), b * two - T::one()))
}

/// Sequence-length budgets: unpacked maxima and the packed-pair targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetSet {
    pub encoder_max: u32,
    pub decoder_max: u32,
    pub packed_encoder: u32,
    pub packed_decoder: u32,
}

impl BudgetSet {
    /// 1152/2048 unpacked, 864/1280 packed.
    pub fn paper() -> Self {
        BudgetSet {
            encoder_max: 1152,
            decoder_max: 2048,
            packed_encoder: 864,
            packed_decoder: 1280,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.packed_encoder > self.encoder_max || self.packed_decoder > self.decoder_max {
            return Err(Error::Config(format!(
                "packed budgets {}/{} exceed maxima {}/{}",
                self.packed_encoder, self.packed_decoder, self.encoder_max, self.decoder_max
            )));
        }
        Ok(())
    }
}

impl Default for BudgetSet {
    fn default() -> Self {
        BudgetSet::paper()
    }
}

/// Per-modality sizing preset. Field names double as config-file keys so a
/// preset file reads like the sizing table it encodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalityPreset {
    pub sample_rate: u32,
    pub fft_hop_length: u32,
    pub fft_window_size: u32,
    pub mel_bins: u32,
    pub subsegment_hops: u32,
    pub audio_patch_size: u32,
    pub image_patch_size: u32,
    pub image_size: (u32, u32),
    pub text_seq_length: u32,
    pub history_image_size: (u32, u32),
    pub max_history_frames: u32,
    pub image_latents: u32,
    pub audio_latents: u32,
    pub image_vq_size: (u32, u32),
    pub image_vq_compression: u32,
    pub audio_vq_size: (u32, u32),
    pub audio_vq_patch: u32,
    pub pretrain_keep_fraction: f64,
    pub instruct_keep_fraction: f64,
}

impl ModalityPreset {
    pub fn paper() -> Self {
        ModalityPreset {
            sample_rate: 16_000,
            fft_hop_length: 256,
            fft_window_size: 1024,
            mel_bins: 128,
            subsegment_hops: 256,
            audio_patch_size: 16,
            image_patch_size: 16,
            image_size: (384, 384),
            text_seq_length: 512,
            history_image_size: (256, 256),
            max_history_frames: 4,
            image_latents: 32,
            audio_latents: 16,
            image_vq_size: (256, 256),
            image_vq_compression: 8,
            audio_vq_size: (256, 128),
            audio_vq_patch: 8,
            pretrain_keep_fraction: 0.5,
            instruct_keep_fraction: 0.875,
        }
    }

    pub fn image_in(&self) -> Result<ModalityShape> {
        token_grid(ModalityKind::ImageIn, self.image_size, self.image_patch_size)
    }

    pub fn audio_in(&self) -> Result<ModalityShape> {
        token_grid(
            ModalityKind::AudioIn,
            (self.mel_bins, self.subsegment_hops),
            self.audio_patch_size,
        )
    }

    pub fn image_history_frame(&self) -> Result<ModalityShape> {
        token_grid(
            ModalityKind::ImageHistory,
            self.history_image_size,
            self.image_patch_size,
        )
    }

    pub fn image_vq_tokens(&self) -> Result<u32> {
        vq_target_tokens(
            ModalityKind::ImageVqTarget,
            self.image_vq_size,
            self.image_vq_compression,
        )
    }

    pub fn audio_vq_tokens(&self) -> Result<u32> {
        vq_target_tokens(
            ModalityKind::AudioVqTarget,
            self.audio_vq_size,
            self.audio_vq_patch,
        )
    }

    pub fn segment(&self) -> Result<AudioSegment> {
        audio_segment(self.sample_rate, self.fft_hop_length, self.subsegment_hops)
    }

    fn kept(&self, count: u32, fraction: f64) -> u32 {
        (count as f64 * fraction).ceil() as u32
    }

    /// Check the preset against an encoder budget. The pretraining
    /// configuration must fit with every modality present; the
    /// instruction-tuning subsample must fit with the main inputs (image,
    /// audio, text) present.
    pub fn validate(&self, budgets: &BudgetSet) -> Result<()> {
        budgets.validate()?;
        let image = self.image_in()?.token_count();
        let audio = self.audio_in()?.token_count();
        let image_hist = history_budget(self.max_history_frames, self.image_latents)?;
        let audio_hist = history_budget(self.max_history_frames, self.audio_latents)?;

        let pretrain = self.kept(image, self.pretrain_keep_fraction)
            + self.kept(audio, self.pretrain_keep_fraction)
            + self.text_seq_length
            + image_hist
            + audio_hist;
        if pretrain > budgets.encoder_max {
            return Err(Error::Config(format!(
                "pretraining inputs sum to {pretrain} tokens, over encoder budget {}",
                budgets.encoder_max
            )));
        }

        let instruct = self.kept(image, self.instruct_keep_fraction)
            + self.kept(audio, self.instruct_keep_fraction)
            + self.text_seq_length;
        if instruct > budgets.encoder_max {
            return Err(Error::Config(format!(
                "instruction-tuning main inputs sum to {instruct} tokens, over encoder budget {}",
                budgets.encoder_max
            )));
        }
        Ok(())
    }
}

impl Default for ModalityPreset {
    fn default() -> Self {
        ModalityPreset::paper()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn image_grid_384() {
        let s = token_grid(ModalityKind::ImageIn, (384, 384), 16).unwrap();
        assert_eq!((s.rows, s.cols), (24, 24));
        assert_eq!(s.token_count(), 576);
    }

    #[test]
    fn audio_grid_128x256() {
        let s = token_grid(ModalityKind::AudioIn, (128, 256), 16).unwrap();
        assert_eq!((s.rows, s.cols), (8, 16));
        assert_eq!(s.token_count(), 128);
    }

    #[test]
    fn history_grid_256() {
        let s = token_grid(ModalityKind::ImageHistory, (256, 256), 16).unwrap();
        assert_eq!(s.token_count(), 256);
    }

    #[test]
    fn non_divisible_dims_rejected() {
        assert!(token_grid(ModalityKind::ImageIn, (100, 384), 16).is_err());
    }

    #[test]
    fn vq_targets() {
        assert_eq!(
            vq_target_tokens(ModalityKind::ImageVqTarget, (256, 256), 8).unwrap(),
            1024
        );
        assert_eq!(
            vq_target_tokens(ModalityKind::AudioVqTarget, (256, 128), 8).unwrap(),
            512
        );
        assert_eq!(
            vq_target_tokens(ModalityKind::ImageVqTarget, (128, 128), 8).unwrap(),
            256
        );
    }

    #[test]
    fn audio_segment_exact_seconds() {
        let seg = audio_segment(16_000, 256, 256).unwrap();
        assert_eq!(seg.samples, 65_536);
        assert_eq!(seg.seconds, 4.096);
        assert_eq!(segment_bounds(&seg, 0), (0, 65_536));
        assert_eq!(segment_bounds(&seg, 2), (131_072, 196_608));

        let seg = audio_segment(16_000, 256, 128).unwrap();
        assert_eq!(seg.seconds, 2.048);
    }

    #[test]
    fn last_partial_segment_pads() {
        let seg = audio_segment(16_000, 256, 256).unwrap();
        let (start, end, pad) = segment_slice(&seg, 1, 100_000);
        assert_eq!((start, end), (65_536, 100_000));
        assert_eq!(pad, 2 * 65_536 - 100_000);
    }

    #[test]
    fn history_budgets() {
        assert_eq!(history_budget(4, 32).unwrap(), 128);
        assert_eq!(history_budget(1, 16).unwrap(), 16);
        assert!(history_budget(5, 32).is_err());
        assert!(history_budget(0, 32).is_err());
    }

    #[test]
    fn subsample_sizes_match_presets() {
        assert_eq!(subsample_patches(576, 0.5, 7).unwrap().len(), 288);
        assert_eq!(subsample_patches(128, 0.5, 7).unwrap().len(), 64);
        let all = subsample_patches(64, 1.0, 7).unwrap();
        assert_eq!(all, (0..64).collect::<Vec<_>>());
    }

    #[test]
    fn subsample_deterministic_and_sorted() {
        let a = subsample_patches(576, 0.5, 1234).unwrap();
        let b = subsample_patches(576, 0.5, 1234).unwrap();
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn dense_label_conversions() {
        assert_eq!(depth_to_gray(0.0f64, 10.0).unwrap(), 0.0);
        assert_eq!(normal_to_rgb(0.0f64, 0.0, 1.0).unwrap(), (0.5, 0.5, 1.0));
        assert!(normal_to_rgb(0.5f64, 0.5, 0.5).is_err());

        let d = 7.25f64;
        let g = depth_to_gray(d, 10.0).unwrap();
        assert_eq!(gray_to_depth(g, 10.0).unwrap(), d);
    }

    #[test]
    fn paper_preset_fits_encoder_budget() {
        ModalityPreset::paper()
            .validate(&BudgetSet::paper())
            .unwrap();
    }

    #[test]
    fn budget_ordering_enforced() {
        let mut b = BudgetSet::paper();
        b.packed_encoder = 2000;
        assert!(b.validate().is_err());
    }

    proptest! {
        #[test]
        fn subsample_unique_and_in_range(count in 1u32..600, pct in 1u32..=100, seed in 0u64..1000) {
            let keep = pct as f64 / 100.0;
            let got = subsample_patches(count, keep, seed).unwrap();
            prop_assert_eq!(got.len() as u32, ((count as f64 * keep).ceil() as u32).min(count));
            prop_assert!(got.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(got.iter().all(|&i| i < count));
        }

        #[test]
        fn normal_round_trip(theta in 0.0f64..std::f64::consts::PI, phi in 0.0f64..(2.0 * std::f64::consts::PI)) {
            let (nx, ny, nz) = (theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
            let (r, g, b) = normal_to_rgb(nx, ny, nz).unwrap();
            let (bx, by, bz) = rgb_to_normal(r, g, b).unwrap();
            prop_assert!((bx - nx).abs() < 1e-12);
            prop_assert!((by - ny).abs() < 1e-12);
            prop_assert!((bz - nz).abs() < 1e-12);
        }
    }
}
