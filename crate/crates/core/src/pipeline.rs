//! Pre-training sample construction: target/input selection, mixture-rate
//! presets, prompt assembly with history marker tokens, model-size presets,
//! and the optimizer schedule math.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::{
    build_corruption_plan, CorruptionConfig, CorruptionPlan, Paradigm, ParadigmKind,
    TargetModality, TargetSpec,
};
use crate::error::{Error, Result};
use crate::kernels::resampler::{QueryMode, ResamplerConfig};
use crate::modality::{BudgetSet, MAX_HISTORY_FRAMES};
use crate::scalar::Real;
use crate::token_space::TokenSpace;

/// Input modalities an example can carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Text,
    Image,
    Audio,
    ImageHistory,
    AudioHistory,
}

/// A pre-tokenized training record: which modalities are present and how big
/// they are. Grids are (rows, cols) of target-side tokens; histories count
/// frames.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ExampleRecord {
    pub text: Option<Vec<u32>>,
    pub image: Option<(usize, usize)>,
    pub audio: Option<(usize, usize)>,
    pub image_history: Option<usize>,
    pub audio_history: Option<usize>,
}

impl ExampleRecord {
    pub fn validate(&self) -> Result<()> {
        if self.text.is_none()
            && self.image.is_none()
            && self.audio.is_none()
            && self.image_history.is_none()
            && self.audio_history.is_none()
        {
            return Err(Error::Contract("record carries no modalities".into()));
        }
        for (name, frames) in [
            ("image_history", self.image_history),
            ("audio_history", self.audio_history),
        ] {
            if let Some(f) = frames {
                if f == 0 || f > MAX_HISTORY_FRAMES as usize {
                    return Err(Error::Budget(format!(
                        "{name} has {f} frames, allowed 1..={MAX_HISTORY_FRAMES}"
                    )));
                }
            }
        }
        if let Some(t) = &self.text {
            if t.is_empty() {
                return Err(Error::Contract("text payload is empty".into()));
            }
        }
        Ok(())
    }

    fn has_target(&self, m: TargetModality) -> bool {
        match m {
            TargetModality::Text => self.text.is_some(),
            TargetModality::Image => self.image.is_some(),
            TargetModality::Audio => self.audio.is_some(),
        }
    }
}

/// Knobs of the sample constructor.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    /// Relative target weights over (text, image, audio), renormalized over
    /// the modalities actually present.
    pub target_weights: [f64; 3],
    /// Independent probability of keeping each non-target modality.
    pub keep_probability: f64,
    /// Objective weights (R, S, X) for text targets.
    pub text_objectives: [f64; 3],
    /// Objective weights (R, S) for image/audio targets.
    pub av_objectives: [f64; 2],
    pub corruption: CorruptionConfig,
    pub budgets: BudgetSet,
    /// History compression: latents per image/audio frame.
    pub image_latents: u32,
    pub audio_latents: u32,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            target_weights: [1.0, 1.0, 1.0],
            keep_probability: 0.5,
            text_objectives: [0.25, 0.5, 0.25],
            av_objectives: [0.5, 0.5],
            corruption: CorruptionConfig::default(),
            budgets: BudgetSet::paper(),
            image_latents: 32,
            audio_latents: 16,
        }
    }
}

/// A fully resolved training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSpec {
    pub target: TargetModality,
    pub kept_inputs: Vec<Modality>,
    pub paradigm: Paradigm,
    pub plan: CorruptionPlan,
    pub prefix: [u32; 2],
    pub enc_len: u32,
    pub dec_len: u32,
}

impl SampleSpec {
    /// Plan JSONL extended with the sample-level fields.
    pub fn to_jsonl(&self) -> String {
        let plan = self.plan.to_jsonl();
        let kept: Vec<String> = self
            .kept_inputs
            .iter()
            .map(|m| format!("\"{}\"", modality_name(*m)))
            .collect();
        format!(
            r#"{{"target":"{}","kept":[{}],"enc_len":{},"dec_len":{},"prompt":[{},{}],"plan":{plan}}}"#,
            self.target.name(),
            kept.join(","),
            self.enc_len,
            self.dec_len,
            self.prefix[0],
            self.prefix[1],
        )
    }
}

fn modality_name(m: Modality) -> &'static str {
    match m {
        Modality::Text => "text",
        Modality::Image => "image",
        Modality::Audio => "audio",
        Modality::ImageHistory => "image_history",
        Modality::AudioHistory => "audio_history",
    }
}

fn weighted_pick(rng: &mut impl Rng, weights: &[f64]) -> Result<usize> {
    if weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
        return Err(Error::Config("weights must be finite and >= 0".into()));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::Config("weights sum to zero".into()));
    }
    let mut draw = rng.gen_range(0.0..total);
    for (i, &w) in weights.iter().enumerate() {
        if draw < w {
            return Ok(i);
        }
        draw -= w;
    }
    Ok(weights.iter().rposition(|&w| w > 0.0).unwrap())
}

/// Run the five selection steps: pick the target among present modalities,
/// keep or drop every other modality, pick the objective, build the
/// corruption plan, and prepend the paradigm prefix.
pub fn construct_sample(
    record: &ExampleRecord,
    config: &SamplerConfig,
    space: &TokenSpace,
    rng: &mut impl Rng,
) -> Result<SampleSpec> {
    record.validate()?;

    // 1. Target selection among present target-able modalities.
    let present: Vec<TargetModality> = TargetModality::ALL
        .into_iter()
        .filter(|&m| record.has_target(m))
        .collect();
    if present.is_empty() {
        return Err(Error::Contract(
            "record has no text, image, or audio to target".into(),
        ));
    }
    let weights: Vec<f64> = present
        .iter()
        .map(|m| {
            config.target_weights[match m {
                TargetModality::Text => 0,
                TargetModality::Image => 1,
                TargetModality::Audio => 2,
            }]
        })
        .collect();
    let target = present[weighted_pick(rng, &weights)?];

    // 2. Independent keep/drop of each non-target modality.
    let mut kept = Vec::new();
    let candidates = [
        (Modality::Text, record.text.is_some()),
        (Modality::Image, record.image.is_some()),
        (Modality::Audio, record.audio.is_some()),
        (Modality::ImageHistory, record.image_history.is_some()),
        (Modality::AudioHistory, record.audio_history.is_some()),
    ];
    for (m, here) in candidates {
        if !here {
            continue;
        }
        let is_target = matches!(
            (m, target),
            (Modality::Text, TargetModality::Text)
                | (Modality::Image, TargetModality::Image)
                | (Modality::Audio, TargetModality::Audio)
        );
        if is_target {
            continue;
        }
        if rng.gen_bool(config.keep_probability) {
            kept.push(m);
        }
    }

    // 3. Objective selection.
    let kind = match target {
        TargetModality::Text => {
            [ParadigmKind::R, ParadigmKind::S, ParadigmKind::X]
                [weighted_pick(rng, &config.text_objectives)?]
        }
        _ => [ParadigmKind::R, ParadigmKind::S][weighted_pick(rng, &config.av_objectives)?],
    };

    // 4. Corruption plan for the target.
    let plan = match target {
        TargetModality::Text => build_corruption_plan(
            TargetSpec::Text(record.text.as_ref().unwrap()),
            kind,
            &config.corruption,
            space,
            rng,
        )?,
        TargetModality::Image => {
            let (rows, cols) = record.image.unwrap();
            build_corruption_plan(
                TargetSpec::Grid {
                    modality: TargetModality::Image,
                    rows,
                    cols,
                },
                kind,
                &config.corruption,
                space,
                rng,
            )?
        }
        TargetModality::Audio => {
            let (rows, cols) = record.audio.unwrap();
            build_corruption_plan(
                TargetSpec::Grid {
                    modality: TargetModality::Audio,
                    rows,
                    cols,
                },
                kind,
                &config.corruption,
                space,
                rng,
            )?
        }
    };

    // 5. Prefix + assembled lengths.
    let mut enc_len: u64 = 2;
    for &m in &kept {
        enc_len += match m {
            Modality::Text => record.text.as_ref().unwrap().len() as u64,
            Modality::Image => {
                let (r, c) = record.image.unwrap();
                (r * c) as u64
            }
            Modality::Audio => {
                let (r, c) = record.audio.unwrap();
                (r * c) as u64
            }
            Modality::ImageHistory => {
                record.image_history.unwrap() as u64 * config.image_latents as u64
            }
            Modality::AudioHistory => {
                record.audio_history.unwrap() as u64 * config.audio_latents as u64
            }
        };
    }
    // The target's own input copy: corrupted text, or the unmasked patches.
    enc_len += match &plan.corrupted_input {
        Some(ci) => ci.len() as u64,
        None => plan.input_mask.iter().filter(|&&m| !m).count() as u64,
    };

    let dec_len = plan.target_len as u64;
    if enc_len > config.budgets.encoder_max as u64 {
        return Err(Error::Budget(format!(
            "assembled input is {enc_len} tokens, over {}",
            config.budgets.encoder_max
        )));
    }
    if dec_len > config.budgets.decoder_max as u64 {
        return Err(Error::Budget(format!(
            "assembled target is {dec_len} tokens, over {}",
            config.budgets.decoder_max
        )));
    }

    Ok(SampleSpec {
        target,
        kept_inputs: kept,
        paradigm: plan.paradigm,
        prefix: plan.prefix,
        enc_len: enc_len as u32,
        dec_len: dec_len as u32,
        plan,
    })
}

/// Marker inserted into prompt text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptMarker {
    /// Where the main image input occurs in the text.
    ImageInput,
    /// Where the main audio input occurs.
    AudioInput,
    /// Reference to image-history frame `k` (0-based).
    ImageFrame(usize),
    /// Reference to audio-history frame `k`.
    AudioFrame(usize),
}

impl PromptMarker {
    fn local_id(self) -> Result<u32> {
        let max = MAX_HISTORY_FRAMES as usize;
        match self {
            PromptMarker::ImageInput => Ok(0),
            PromptMarker::AudioInput => Ok(1),
            PromptMarker::ImageFrame(k) if k < max => Ok(2 + k as u32),
            PromptMarker::AudioFrame(k) if k < max => Ok(2 + MAX_HISTORY_FRAMES + k as u32),
            PromptMarker::ImageFrame(k) | PromptMarker::AudioFrame(k) => Err(Error::range(
                "history frame",
                k as f64,
                0.0,
                (max - 1) as f64,
            )),
        }
    }
}

/// Splice input markers and history frame references into prompt text at the
/// given text positions. References must point at frames that exist.
pub fn assemble_prompt(
    text: &[u32],
    insertions: &[(usize, PromptMarker)],
    image_frames: usize,
    audio_frames: usize,
    space: &TokenSpace,
) -> Result<Vec<u32>> {
    for &(pos, marker) in insertions {
        if pos > text.len() {
            return Err(Error::range(
                "insertion position",
                pos as f64,
                0.0,
                text.len() as f64,
            ));
        }
        match marker {
            PromptMarker::ImageFrame(k) if k >= image_frames => {
                return Err(Error::Validation(format!(
                    "reference to image frame {k} but only {image_frames} exist"
                )));
            }
            PromptMarker::AudioFrame(k) if k >= audio_frames => {
                return Err(Error::Validation(format!(
                    "reference to audio frame {k} but only {audio_frames} exist"
                )));
            }
            _ => {}
        }
    }
    let mut sorted: Vec<(usize, PromptMarker)> = insertions.to_vec();
    sorted.sort_by_key(|&(pos, _)| pos);

    let mut out = Vec::with_capacity(text.len() + sorted.len());
    let mut cursor = 0usize;
    for (pos, marker) in sorted {
        out.extend_from_slice(&text[cursor..pos]);
        out.push(space.ref_special(marker.local_id()?)?);
        cursor = pos;
    }
    out.extend_from_slice(&text[cursor..]);
    Ok(out)
}

/// Named corpus with its sampling rate (percent) and target-modality weights
/// over (text, image, audio).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub name: String,
    pub rate: f64,
    pub target_weights: [f64; 3],
}

/// A sampling mixture over corpora; rates are percentages summing to 100.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub name: String,
    pub corpora: Vec<Corpus>,
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.corpora.is_empty() {
            return Err(Error::Config("mixture has no corpora".into()));
        }
        let total: f64 = self.corpora.iter().map(|c| c.rate).sum();
        if (total - 100.0).abs() > 0.1 {
            return Err(Error::Config(format!(
                "mixture rates sum to {total}, expected 100 +/- 0.1"
            )));
        }
        for c in &self.corpora {
            if c.rate < 0.0 || !c.rate.is_finite() {
                return Err(Error::Config(format!("corpus {} has bad rate", c.name)));
            }
            if c.target_weights.iter().sum::<f64>() <= 0.0 {
                return Err(Error::Config(format!(
                    "corpus {} has all-zero target weights",
                    c.name
                )));
            }
        }
        Ok(())
    }

    /// Pre-training mixture preset: top-level corpus groups and rates.
    pub fn paper_pretrain() -> Self {
        let c = |name: &str, rate: f64, tw: [f64; 3]| Corpus {
            name: name.into(),
            rate,
            target_weights: tw,
        };
        MixtureSpec {
            name: "paper-pretrain".into(),
            corpora: vec![
                c("nlp", 33.0, [1.0, 0.0, 0.0]),
                c("image_text", 31.3, [0.5, 0.5, 0.0]),
                c("video", 25.0, [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]),
                c("interleaved_image_text", 8.70, [0.5, 0.5, 0.0]),
                c("multi_view", 0.67, [0.5, 0.5, 0.0]),
                c("agent_trajectories", 0.33, [0.5, 0.5, 0.0]),
                c("synthetic", 1.00, [0.5, 0.5, 0.0]),
            ],
        }
    }

    /// Instruction-tuning mixture preset: category weights only.
    pub fn paper_instruct() -> Self {
        let c = |name: &str, rate: f64, tw: [f64; 3]| Corpus {
            name: name.into(),
            rate,
            target_weights: tw,
        };
        MixtureSpec {
            name: "paper-instruct".into(),
            corpora: vec![
                c("prompted", 60.0, [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]),
                c("pretraining_carryover", 30.0, [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]),
                c("task_augmentation", 6.0, [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]),
                c("free_form", 4.0, [1.0, 0.0, 0.0]),
            ],
        }
    }

    /// Draw a corpus index by rate.
    pub fn sample_corpus(&self, rng: &mut impl Rng) -> Result<usize> {
        self.validate()?;
        let rates: Vec<f64> = self.corpora.iter().map(|c| c.rate).collect();
        weighted_pick(rng, &rates)
    }
}

/// Worker-split RNG: each worker id gets its own ChaCha stream, so parallel
/// samplers never overlap.
pub fn mixture_rng(seed: u64, worker: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(worker);
    rng
}

/// Transformer and resampler dimensions for one model size.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSizePreset {
    pub name: &'static str,
    pub model_dims: usize,
    pub mlp_dims: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub params_billions: f64,
    pub image_resampler: ResamplerConfig,
    pub audio_resampler: ResamplerConfig,
}

/// The three published sizes.
pub fn model_presets() -> Vec<ModelSizePreset> {
    let resampler = |latents: usize, model_dim: usize, heads: usize, mlp: usize| ResamplerConfig {
        latents,
        layers: 2,
        model_dim,
        heads,
        head_dim: 64,
        mlp_dim: mlp,
        query_mode: QueryMode::PerFrame,
    };
    vec![
        ModelSizePreset {
            name: "L",
            model_dims: 1024,
            mlp_dims: 2816,
            encoder_layers: 24,
            decoder_layers: 24,
            heads: 16,
            params_billions: 1.1,
            image_resampler: resampler(32, 768, 12, 2048),
            audio_resampler: resampler(16, 768, 12, 2048),
        },
        ModelSizePreset {
            name: "XL",
            model_dims: 2048,
            mlp_dims: 5120,
            encoder_layers: 24,
            decoder_layers: 24,
            heads: 16,
            params_billions: 3.2,
            image_resampler: resampler(32, 1024, 16, 4096),
            audio_resampler: resampler(16, 1024, 16, 4096),
        },
        ModelSizePreset {
            name: "XXL",
            model_dims: 3072,
            mlp_dims: 8192,
            encoder_layers: 24,
            decoder_layers: 24,
            heads: 24,
            params_billions: 6.8,
            image_resampler: resampler(32, 1024, 16, 4096),
            audio_resampler: resampler(16, 1024, 16, 4096),
        },
    ]
}

/// Default warmup steps.
pub const WARMUP_STEPS: u64 = 5000;

/// Learning rate at step `k`: linear warmup to `base` at `warmup`, then
/// inverse-square-root decay. Continuous at the junction.
pub fn lr_schedule<T: Real>(k: u64, base: T, warmup: u64) -> Result<T> {
    if k == 0 {
        return Err(Error::range("step", 0.0, 1.0, f64::INFINITY));
    }
    if warmup == 0 {
        return Err(Error::Config("warmup must be positive".into()));
    }
    let k = k as f64;
    let w = warmup as f64;
    let factor = (k / w).min((w / k).sqrt());
    Ok(base * T::from_f64(factor))
}

/// Second-moment decay at step `k`: `1 - k^-0.8`.
pub fn beta2_schedule(k: u64) -> Result<f64> {
    if k == 0 {
        return Err(Error::range("step", 0.0, 1.0, f64::INFINITY));
    }
    Ok(1.0 - (k as f64).powf(-0.8))
}

/// Scale the gradient vector so its global L2 norm is at most `threshold`.
pub fn clip_global_norm<T: Real>(grads: &[T], threshold: T) -> Result<Vec<T>> {
    if !(threshold > T::zero()) {
        return Err(Error::Config("clip threshold must be positive".into()));
    }
    let mut sq = T::zero();
    for &g in grads {
        if !g.is_finite() {
            return Err(Error::Validation("non-finite gradient".into()));
        }
        sq += g * g;
    }
    let norm = sq.sqrt();
    if norm <= threshold {
        return Ok(grads.to_vec());
    }
    let scale = threshold / norm;
    Ok(grads.iter().map(|&g| g * scale).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space() -> TokenSpace {
        TokenSpace::paper()
    }

    fn text_record(len: usize) -> ExampleRecord {
        ExampleRecord {
            text: Some((0..len as u32).map(|i| 100 + i).collect()),
            ..Default::default()
        }
    }

    #[test]
    fn text_only_record_targets_text() {
        let s = space();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let spec =
                construct_sample(&text_record(50), &SamplerConfig::default(), &s, &mut rng)
                    .unwrap();
            assert_eq!(spec.target, TargetModality::Text);
            assert_eq!(spec.prefix, spec.paradigm.prefix_tokens(&s).unwrap());
        }
    }

    #[test]
    fn image_s_sample_drops_target_from_input() {
        let s = space();
        let mut config = SamplerConfig::default();
        config.target_weights = [0.0, 1.0, 0.0];
        config.av_objectives = [0.0, 1.0]; // force S
        let record = ExampleRecord {
            text: Some(vec![5, 6, 7]),
            image: Some((24, 24)),
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut kept_counts = 0;
        for _ in 0..200 {
            let spec = construct_sample(&record, &config, &s, &mut rng).unwrap();
            assert_eq!(spec.target, TargetModality::Image);
            assert_eq!(spec.paradigm.kind, ParadigmKind::S);
            assert!(spec.plan.input_mask.iter().all(|&m| m));
            assert!(spec.plan.masked_positions.is_empty());
            assert_eq!(spec.dec_len, 576);
            // enc = prefix only, or prefix + kept text.
            assert!(spec.enc_len == 2 || spec.enc_len == 5);
            if spec.kept_inputs.contains(&Modality::Text) {
                kept_counts += 1;
                assert_eq!(spec.enc_len, 5);
            }
        }
        // Keep probability 0.5: text kept roughly half the time.
        assert!(kept_counts > 60 && kept_counts < 140, "{kept_counts}");
    }

    #[test]
    fn determinism_under_seed() {
        let s = space();
        let record = ExampleRecord {
            text: Some((0..40).collect()),
            image: Some((16, 16)),
            audio: Some((8, 16)),
            image_history: Some(3),
            audio_history: Some(2),
        };
        let run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            construct_sample(&record, &SamplerConfig::default(), &s, &mut rng).unwrap()
        };
        let first = run(42);
        for _ in 0..100 {
            assert_eq!(run(42), first);
        }
        assert_eq!(run(42).to_jsonl(), first.to_jsonl());
    }

    #[test]
    fn target_supervision_never_dropped() {
        // Whatever gets kept or dropped on the input side, the target payload
        // drives the output sequence.
        let s = space();
        let record = ExampleRecord {
            text: Some((0..64).collect()),
            image: Some((12, 12)),
            audio: Some((8, 16)),
            image_history: Some(4),
            audio_history: Some(1),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..300 {
            let spec =
                construct_sample(&record, &SamplerConfig::default(), &s, &mut rng).unwrap();
            assert!(spec.dec_len > 0, "target {:?} lost supervision", spec.target);
            match spec.target {
                TargetModality::Image => assert_eq!(spec.plan.target_len, 144),
                TargetModality::Audio => assert_eq!(spec.plan.target_len, 128),
                TargetModality::Text => {
                    assert!(spec.plan.target_tokens.as_ref().is_some_and(|t| !t.is_empty()))
                }
            }
        }
    }

    #[test]
    fn empty_record_rejected() {
        let s = space();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(construct_sample(
            &ExampleRecord::default(),
            &SamplerConfig::default(),
            &s,
            &mut rng
        )
        .is_err());
    }

    #[test]
    fn history_only_record_has_no_target() {
        let s = space();
        let record = ExampleRecord {
            image_history: Some(2),
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            construct_sample(&record, &SamplerConfig::default(), &s, &mut rng),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn prompt_without_history_is_unchanged() {
        let s = space();
        let text = vec![10, 11, 12];
        assert_eq!(
            assemble_prompt(&text, &[], 0, 0, &s).unwrap(),
            text
        );
    }

    #[test]
    fn prompt_frame_references_count() {
        let s = space();
        let text = vec![10, 11, 12, 13];
        let out = assemble_prompt(
            &text,
            &[
                (1, PromptMarker::ImageFrame(0)),
                (3, PromptMarker::ImageFrame(1)),
            ],
            2,
            0,
            &s,
        )
        .unwrap();
        assert_eq!(out.len(), 6);
        let refs: Vec<u32> = out
            .iter()
            .copied()
            .filter(|&t| t >= s.ref_special(0).unwrap() && t <= s.ref_special(9).unwrap())
            .collect();
        assert_eq!(refs.len(), 2);
        assert_ne!(refs[0], refs[1]);
    }

    #[test]
    fn fifth_frame_reference_rejected() {
        let s = space();
        assert!(assemble_prompt(&[1], &[(0, PromptMarker::ImageFrame(4))], 4, 0, &s).is_err());
        // Reference to a frame that does not exist in this record.
        assert!(assemble_prompt(&[1], &[(0, PromptMarker::AudioFrame(1))], 0, 1, &s).is_err());
    }

    #[test]
    fn mixture_presets_validate() {
        MixtureSpec::paper_pretrain().validate().unwrap();
        MixtureSpec::paper_instruct().validate().unwrap();
    }

    #[test]
    fn bad_mixture_sum_rejected() {
        let mut m = MixtureSpec::paper_pretrain();
        m.corpora[0].rate += 1.0;
        assert!(m.validate().is_err());
    }

    #[test]
    fn mixture_frequencies_track_rates() {
        let m = MixtureSpec::paper_pretrain();
        let mut rng = mixture_rng(1234, 0);
        let n = 200_000;
        let mut counts = vec![0u64; m.corpora.len()];
        for _ in 0..n {
            counts[m.sample_corpus(&mut rng).unwrap()] += 1;
        }
        for (c, &count) in m.corpora.iter().zip(&counts) {
            let got = 100.0 * count as f64 / n as f64;
            assert!(
                (got - c.rate).abs() <= 0.5,
                "{}: {got} vs {}",
                c.name,
                c.rate
            );
        }
    }

    #[test]
    fn worker_streams_differ() {
        let a: Vec<u64> = {
            let mut r = mixture_rng(7, 0);
            (0..8).map(|_| r.gen()).collect()
        };
        let b: Vec<u64> = {
            let mut r = mixture_rng(7, 1);
            (0..8).map(|_| r.gen()).collect()
        };
        assert_ne!(a, b);
    }

    #[test]
    fn lr_schedule_shape() {
        assert_eq!(lr_schedule(5000, 1.0f64, 5000).unwrap(), 1.0);
        assert_eq!(lr_schedule(2500, 1.0f64, 5000).unwrap(), 0.5);
        assert_eq!(lr_schedule(20_000, 1.0f64, 5000).unwrap(), 0.5);
        assert!(lr_schedule(0, 1.0f64, 5000).is_err());

        // Unimodal with max at warmup.
        let lr = |k: u64| lr_schedule(k, 1.0f64, 5000).unwrap();
        for k in [1u64, 2, 100, 4999] {
            assert!(lr(k) < lr(k + 1));
        }
        for k in [5000u64, 6000, 50_000] {
            assert!(lr(k) >= lr(k + 1));
        }
    }

    #[test]
    fn beta2_values() {
        assert_eq!(beta2_schedule(1).unwrap(), 0.0);
        let b = beta2_schedule(10_000).unwrap();
        assert!((b - (1.0 - 10f64.powf(-3.2))).abs() < 1e-15);
        let mut prev = 0.0;
        for k in [1u64, 10, 100, 1000, 100_000] {
            let v = beta2_schedule(k).unwrap();
            assert!(v >= prev && v < 1.0);
            prev = v;
        }
    }

    #[test]
    fn clip_behavior() {
        let g = vec![0.3f64, 0.4];
        assert_eq!(clip_global_norm(&g, 1.0).unwrap(), g);

        let g = vec![4.0f64, 0.0];
        let c = clip_global_norm(&g, 1.0).unwrap();
        assert_eq!(c, vec![1.0, 0.0]);

        // Direction preserved.
        let g = vec![3.0f64, -4.0, 12.0];
        let c = clip_global_norm(&g, 1.0).unwrap();
        let norm: f64 = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        let dot: f64 = g.iter().zip(&c).map(|(a, b)| a * b).sum();
        let gn: f64 = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((dot / (gn * norm) - 1.0).abs() < 1e-12);

        assert!(clip_global_norm(&[f64::NAN], 1.0).is_err());
    }
}
