//! Multimodal mixture of denoisers: paradigm selection with prefix tokens,
//! text span corruption, patch masking, the dynamic decoder mask, and the
//! row/column/conv sparse decoder attention patterns.

use std::ops::Range;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rle::encode_runs;
use crate::token_space::{TokenRange, TokenSpace};

/// Modality being generated or denoised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TargetModality {
    Text,
    Image,
    Audio,
}

impl TargetModality {
    pub const ALL: [TargetModality; 3] = [
        TargetModality::Text,
        TargetModality::Image,
        TargetModality::Audio,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TargetModality::Text => "text",
            TargetModality::Image => "image",
            TargetModality::Audio => "audio",
        }
    }
}

/// Denoising objective: `R` masked-span denoising, `S` causal generation,
/// `X` extreme span corruption (text only).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParadigmKind {
    R,
    S,
    X,
}

impl ParadigmKind {
    pub fn name(self) -> &'static str {
        match self {
            ParadigmKind::R => "r",
            ParadigmKind::S => "s",
            ParadigmKind::X => "x",
        }
    }
}

/// A (modality, objective) pair. `X` applies to text targets only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Paradigm {
    pub modality: TargetModality,
    pub kind: ParadigmKind,
}

impl Paradigm {
    /// The seven valid paradigms in a fixed order.
    pub const ALL: [Paradigm; 7] = [
        Paradigm {
            modality: TargetModality::Text,
            kind: ParadigmKind::R,
        },
        Paradigm {
            modality: TargetModality::Text,
            kind: ParadigmKind::S,
        },
        Paradigm {
            modality: TargetModality::Text,
            kind: ParadigmKind::X,
        },
        Paradigm {
            modality: TargetModality::Image,
            kind: ParadigmKind::R,
        },
        Paradigm {
            modality: TargetModality::Image,
            kind: ParadigmKind::S,
        },
        Paradigm {
            modality: TargetModality::Audio,
            kind: ParadigmKind::R,
        },
        Paradigm {
            modality: TargetModality::Audio,
            kind: ParadigmKind::S,
        },
    ];

    pub fn new(modality: TargetModality, kind: ParadigmKind) -> Result<Self> {
        if kind == ParadigmKind::X && modality != TargetModality::Text {
            return Err(Error::Config(format!(
                "extreme corruption only applies to text targets, not {}",
                modality.name()
            )));
        }
        Ok(Paradigm { modality, kind })
    }

    pub fn name(self) -> String {
        format!("{}_{}", self.modality.name(), self.kind.name())
    }

    /// The two prefix tokens announcing this paradigm. Modality tokens take
    /// the first three reserved ids, objective tokens the next three, so the
    /// pair is a bijection with (modality, kind).
    pub fn prefix_tokens(self, space: &TokenSpace) -> Result<[u32; 2]> {
        if space.count(TokenRange::Reserved) < 6 {
            return Err(Error::Config(
                "reserved range too small for the six prefix tokens".into(),
            ));
        }
        let modality_local = match self.modality {
            TargetModality::Text => 0,
            TargetModality::Image => 1,
            TargetModality::Audio => 2,
        };
        let kind_local = match self.kind {
            ParadigmKind::R => 3,
            ParadigmKind::S => 4,
            ParadigmKind::X => 5,
        };
        Ok([
            space.global(TokenRange::Reserved, modality_local)?,
            space.global(TokenRange::Reserved, kind_local)?,
        ])
    }

    /// Invert a prefix pair back to its paradigm.
    pub fn from_prefix_tokens(tokens: [u32; 2], space: &TokenSpace) -> Result<Self> {
        let modality = match space.resolve(tokens[0])? {
            (TokenRange::Reserved, 0) => TargetModality::Text,
            (TokenRange::Reserved, 1) => TargetModality::Image,
            (TokenRange::Reserved, 2) => TargetModality::Audio,
            other => {
                return Err(Error::Schema(format!(
                    "token {} is not a modality prefix ({other:?})",
                    tokens[0]
                )))
            }
        };
        let kind = match space.resolve(tokens[1])? {
            (TokenRange::Reserved, 3) => ParadigmKind::R,
            (TokenRange::Reserved, 4) => ParadigmKind::S,
            (TokenRange::Reserved, 5) => ParadigmKind::X,
            other => {
                return Err(Error::Schema(format!(
                    "token {} is not an objective prefix ({other:?})",
                    tokens[1]
                )))
            }
        };
        Paradigm::new(modality, kind)
    }
}

/// Sampling weights over [`Paradigm::ALL`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParadigmWeights {
    pub weights: [f64; 7],
}

impl ParadigmWeights {
    pub fn uniform() -> Self {
        ParadigmWeights { weights: [1.0; 7] }
    }

    /// A single paradigm with all the mass.
    pub fn only(paradigm: Paradigm) -> Self {
        let mut weights = [0.0; 7];
        for (w, p) in weights.iter_mut().zip(Paradigm::ALL) {
            if p == paradigm {
                *w = 1.0;
            }
        }
        ParadigmWeights { weights }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
            return Err(Error::Config("paradigm weights must be >= 0".into()));
        }
        if self.weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("paradigm weights sum to zero".into()));
        }
        Ok(())
    }
}

/// Draw a paradigm and its prefix pair.
pub fn choose_paradigm(
    rng: &mut impl Rng,
    weights: &ParadigmWeights,
    space: &TokenSpace,
) -> Result<(Paradigm, [u32; 2])> {
    weights.validate()?;
    let total: f64 = weights.weights.iter().sum();
    let mut draw = rng.gen_range(0.0..total);
    for (i, &w) in weights.weights.iter().enumerate() {
        if draw < w {
            let p = Paradigm::ALL[i];
            return Ok((p, p.prefix_tokens(space)?));
        }
        draw -= w;
    }
    // Float underflow on the last positive weight.
    let p = *Paradigm::ALL
        .iter()
        .zip(&weights.weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(p, _)| p)
        .last()
        .expect("validated nonzero weights");
    Ok((p, p.prefix_tokens(space)?))
}

/// Output of text span corruption.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanCorrupted {
    /// Original sequence with each span replaced by one sentinel.
    pub input: Vec<u32>,
    /// Sentinel-delimited concatenation of the removed spans.
    pub target: Vec<u32>,
    /// The removed spans, sorted and disjoint, in original coordinates.
    pub spans: Vec<Range<usize>>,
}

impl SpanCorrupted {
    fn passthrough(tokens: &[u32]) -> Self {
        SpanCorrupted {
            input: tokens.to_vec(),
            target: Vec::new(),
            spans: Vec::new(),
        }
    }

    /// Boolean per original token: true where a span covered it.
    pub fn input_mask(&self, len: usize) -> Vec<bool> {
        let mut mask = vec![false; len];
        for span in &self.spans {
            for m in &mut mask[span.clone()] {
                *m = true;
            }
        }
        mask
    }
}

/// Deterministic core of span corruption: mask the given spans.
pub fn corrupt_with_spans(
    tokens: &[u32],
    spans: &[Range<usize>],
    space: &TokenSpace,
) -> Result<SpanCorrupted> {
    for t in tokens {
        if matches!(space.resolve(*t), Ok((TokenRange::Sentinel, _))) {
            return Err(Error::Contract(format!(
                "input token {t} is a sentinel; text must be sentinel-free"
            )));
        }
    }
    if spans.len() as u32 > space.count(TokenRange::Sentinel) {
        return Err(Error::Contract(format!(
            "{} spans exceed the {} available sentinels",
            spans.len(),
            space.count(TokenRange::Sentinel)
        )));
    }
    let mut last_end = 0usize;
    for s in spans {
        if s.start < last_end || s.start >= s.end || s.end > tokens.len() {
            return Err(Error::Contract(format!(
                "span {s:?} is empty, overlapping, or out of bounds"
            )));
        }
        last_end = s.end;
    }

    let mut input = Vec::with_capacity(tokens.len());
    let mut target = Vec::new();
    let mut cursor = 0usize;
    for (i, s) in spans.iter().enumerate() {
        input.extend_from_slice(&tokens[cursor..s.start]);
        let sentinel = space.sentinel(i as u32)?;
        input.push(sentinel);
        target.push(sentinel);
        target.extend_from_slice(&tokens[s.clone()]);
        cursor = s.end;
    }
    input.extend_from_slice(&tokens[cursor..]);
    Ok(SpanCorrupted {
        input,
        target,
        spans: spans.to_vec(),
    })
}

/// T5-style random span corruption: mask about `rate` of the tokens in spans
/// of mean length `mean_span`.
pub fn span_corrupt_text(
    tokens: &[u32],
    rate: f64,
    mean_span: f64,
    space: &TokenSpace,
    rng: &mut impl Rng,
) -> Result<SpanCorrupted> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::range("rate", rate, 0.0, 1.0));
    }
    if mean_span < 1.0 {
        return Err(Error::Config(format!("mean_span {mean_span} < 1")));
    }
    let n = tokens.len();
    if n < 2 {
        return Ok(SpanCorrupted::passthrough(tokens));
    }
    let n_noise = ((rate * n as f64).round() as usize).min(n - 1);
    if n_noise == 0 {
        return Ok(SpanCorrupted::passthrough(tokens));
    }
    let max_spans = n_noise.min(space.count(TokenRange::Sentinel) as usize);
    let n_spans = ((n_noise as f64 / mean_span).round() as usize).clamp(1, max_spans);

    // Random composition of n_noise into n_spans positive span lengths:
    // distinct cuts in 1..n_noise.
    let mut lengths = vec![0usize; n_spans];
    {
        let mut cuts: Vec<usize> = rand::seq::index::sample(rng, n_noise - 1, n_spans - 1)
            .into_iter()
            .map(|c| c + 1)
            .collect();
        cuts.sort_unstable();
        let mut prev = 0usize;
        for (len, &cut) in lengths.iter_mut().zip(cuts.iter().chain(&[n_noise])) {
            *len = cut - prev;
            prev = cut;
        }
    }

    // Random composition of the kept tokens into n_spans + 1 gaps (zeros
    // allowed except conceptually anywhere): cuts with replacement.
    let n_keep = n - n_noise;
    let mut gap_cuts: Vec<usize> = (0..n_spans).map(|_| rng.gen_range(0..=n_keep)).collect();
    gap_cuts.sort_unstable();

    let mut spans = Vec::with_capacity(n_spans);
    let mut pos = 0usize;
    let mut prev_cut = 0usize;
    for (i, &len) in lengths.iter().enumerate() {
        let gap = gap_cuts[i] - prev_cut;
        prev_cut = gap_cuts[i];
        pos += gap;
        spans.push(pos..pos + len);
        pos += len;
    }
    corrupt_with_spans(tokens, &spans, space)
}

/// Invert span corruption: splice each sentinel's span back into the input.
pub fn reconstruct(input: &[u32], target: &[u32], space: &TokenSpace) -> Result<Vec<u32>> {
    // Parse the target into sentinel -> tokens.
    let mut spans: Vec<(u32, Vec<u32>)> = Vec::new();
    for &t in target {
        match space.resolve(t) {
            Ok((TokenRange::Sentinel, k)) => spans.push((k, Vec::new())),
            _ => match spans.last_mut() {
                Some((_, toks)) => toks.push(t),
                None => {
                    return Err(Error::Schema(
                        "target does not start with a sentinel".into(),
                    ))
                }
            },
        }
    }
    let mut out = Vec::with_capacity(input.len() * 2);
    for &t in input {
        match space.resolve(t) {
            Ok((TokenRange::Sentinel, k)) => {
                let (_, toks) = spans
                    .iter()
                    .find(|(s, _)| *s == k)
                    .ok_or_else(|| Error::Schema(format!("sentinel {k} missing from target")))?;
                out.extend_from_slice(toks);
            }
            _ => out.push(t),
        }
    }
    Ok(out)
}

/// Mask exactly `round(rate * rows * cols)` patches uniformly without
/// replacement. `true` marks a masked patch.
pub fn patch_mask(rows: usize, cols: usize, rate: f64, rng: &mut impl Rng) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::range("rate", rate, 0.0, 1.0));
    }
    let count = rows * cols;
    let masked = (rate * count as f64).round() as usize;
    let mut mask = vec![false; count];
    if masked > 0 {
        for idx in rand::seq::index::sample(rng, count, masked) {
            mask[idx] = true;
        }
    }
    Ok(mask)
}

/// Decoder self-attention mask hiding encoder-masked positions from every row
/// but their own: `A[i][j] = (j <= i) && (j not in M || j == i)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoderMask {
    pub n: usize,
    /// Sorted masked positions (the set M).
    pub masked: Vec<usize>,
    /// Row-major `[n x n]` allowed matrix.
    pub allowed: Vec<bool>,
}

impl DecoderMask {
    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.n + j]
    }
}

/// Build the dynamic decoder mask for target length `n` and masked set `m`.
/// With `m` empty this is exactly the causal mask.
pub fn dynamic_decoder_mask(n: usize, m: &[usize]) -> Result<DecoderMask> {
    let mut masked: Vec<usize> = m.to_vec();
    masked.sort_unstable();
    masked.dedup();
    if let Some(&worst) = masked.last() {
        if worst >= n {
            return Err(Error::range("masked position", worst as f64, 0.0, (n - 1) as f64));
        }
    }
    let mut in_m = vec![false; n];
    for &j in &masked {
        in_m[j] = true;
    }
    let mut allowed = vec![false; n * n];
    for i in 0..n {
        for j in 0..=i {
            allowed[i * n + j] = !in_m[j] || j == i;
        }
    }
    Ok(DecoderMask { n, masked, allowed })
}

/// Sparse decoder attention shapes over a raster-ordered grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SparseKind {
    /// Keys in the same grid row, causal.
    Row,
    /// Keys in the same grid column, causal.
    Column,
    /// Keys within Chebyshev distance `< window`, causal.
    Conv,
}

impl SparseKind {
    pub fn name(self) -> &'static str {
        match self {
            SparseKind::Row => "row",
            SparseKind::Column => "column",
            SparseKind::Conv => "conv",
        }
    }
}

/// Build a `[n x n]` sparse pattern over a `rows x cols` grid in raster
/// order. Every pattern is a subset of the causal mask and keeps the
/// diagonal.
pub fn sparse_pattern(
    rows: usize,
    cols: usize,
    kind: SparseKind,
    window: usize,
) -> Result<Vec<bool>> {
    if rows == 0 || cols == 0 {
        return Err(Error::Config("grid must be non-empty".into()));
    }
    if window == 0 || window > rows.min(cols) {
        return Err(Error::Config(format!(
            "window {window} outside 1..={}",
            rows.min(cols)
        )));
    }
    let n = rows * cols;
    let mut mask = vec![false; n * n];
    for i in 0..n {
        let (ri, ci) = (i / cols, i % cols);
        for j in 0..=i {
            let (rj, cj) = (j / cols, j % cols);
            let hit = match kind {
                SparseKind::Row => ri == rj,
                SparseKind::Column => ci == cj,
                SparseKind::Conv => {
                    ri.abs_diff(rj) < window && ci.abs_diff(cj) < window
                }
            };
            mask[i * n + j] = hit;
        }
    }
    Ok(mask)
}

/// What is being corrupted: the actual text tokens, or the token grid of an
/// image/audio target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetSpec<'a> {
    Text(&'a [u32]),
    Grid {
        modality: TargetModality,
        rows: usize,
        cols: usize,
    },
}

impl TargetSpec<'_> {
    pub fn modality(&self) -> TargetModality {
        match self {
            TargetSpec::Text(_) => TargetModality::Text,
            TargetSpec::Grid { modality, .. } => *modality,
        }
    }
}

/// Corruption parameters: span rates for regular and extreme text denoising,
/// patch rate for image/audio denoising.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptionConfig {
    pub text_rate: f64,
    pub text_mean_span: f64,
    pub extreme_rate: f64,
    pub extreme_mean_span: f64,
    pub patch_rate: f64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        CorruptionConfig {
            text_rate: 0.15,
            text_mean_span: 3.0,
            extreme_rate: 0.5,
            extreme_mean_span: 32.0,
            patch_rate: 0.5,
        }
    }
}

/// A fully resolved corruption of one target modality.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionPlan {
    pub paradigm: Paradigm,
    pub prefix: [u32; 2],
    /// Per input token/patch of the target's encoder copy; `true` = masked.
    /// All-true means the target is absent from the input entirely.
    pub input_mask: Vec<bool>,
    /// Sentinel-corrupted encoder text for text denoising.
    pub corrupted_input: Option<Vec<u32>>,
    /// Decoder target tokens for text targets (grid targets carry ids
    /// elsewhere; the plan tracks their length only).
    pub target_tokens: Option<Vec<u32>>,
    /// Decoder target length.
    pub target_len: usize,
    /// Set M: target positions hidden from other decoder rows.
    pub masked_positions: Vec<usize>,
}

impl CorruptionPlan {
    /// The matching dynamic decoder mask.
    pub fn decoder_mask(&self) -> Result<DecoderMask> {
        dynamic_decoder_mask(self.target_len, &self.masked_positions)
    }

    /// Canonical one-line JSON: paradigm, prefix ids, mask run lengths, M.
    pub fn to_jsonl(&self) -> String {
        let runs = encode_runs(&self.input_mask);
        let masked: Vec<String> = self.masked_positions.iter().map(|m| m.to_string()).collect();
        let mut line = format!(
            r#"{{"paradigm":"{}","prefix":[{},{}],"input_mask_runs":[{}],"target_len":{},"masked":[{}]"#,
            self.paradigm.name(),
            self.prefix[0],
            self.prefix[1],
            runs.iter()
                .map(|r| r.to_string())
                .collect::<Vec<_>>()
                .join(","),
            self.target_len,
            masked.join(","),
        );
        if let Some(ci) = &self.corrupted_input {
            line.push_str(&format!(
                r#","corrupted_input":[{}]"#,
                ci.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(",")
            ));
        }
        if let Some(tt) = &self.target_tokens {
            line.push_str(&format!(
                r#","target_tokens":[{}]"#,
                tt.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(",")
            ));
        }
        line.push('}');
        line
    }
}

/// Build the corruption plan for one target under one objective.
///
/// `S` removes the target from the inputs entirely (pure generation, empty
/// M). `R` masks patches (grid targets) or spans (text); for grids the
/// encoder-masked patch positions are exactly the decoder mask set M. `X` is
/// extreme text corruption.
pub fn build_corruption_plan(
    target: TargetSpec,
    kind: ParadigmKind,
    config: &CorruptionConfig,
    space: &TokenSpace,
    rng: &mut impl Rng,
) -> Result<CorruptionPlan> {
    let paradigm = Paradigm::new(target.modality(), kind)?;
    let prefix = paradigm.prefix_tokens(space)?;
    match (target, kind) {
        (TargetSpec::Text(tokens), ParadigmKind::S) => Ok(CorruptionPlan {
            paradigm,
            prefix,
            input_mask: vec![true; tokens.len()],
            corrupted_input: None,
            target_tokens: Some(tokens.to_vec()),
            target_len: tokens.len(),
            masked_positions: Vec::new(),
        }),
        (TargetSpec::Text(tokens), _) => {
            let (rate, mean) = if kind == ParadigmKind::X {
                (config.extreme_rate, config.extreme_mean_span)
            } else {
                (config.text_rate, config.text_mean_span)
            };
            let corrupted = span_corrupt_text(tokens, rate, mean, space, rng)?;
            Ok(CorruptionPlan {
                paradigm,
                prefix,
                input_mask: corrupted.input_mask(tokens.len()),
                target_len: corrupted.target.len(),
                corrupted_input: Some(corrupted.input),
                target_tokens: Some(corrupted.target),
                masked_positions: Vec::new(),
            })
        }
        (TargetSpec::Grid { rows, cols, .. }, ParadigmKind::S) => Ok(CorruptionPlan {
            paradigm,
            prefix,
            input_mask: vec![true; rows * cols],
            corrupted_input: None,
            target_tokens: None,
            target_len: rows * cols,
            masked_positions: Vec::new(),
        }),
        (TargetSpec::Grid { rows, cols, .. }, ParadigmKind::R) => {
            let mask = patch_mask(rows, cols, config.patch_rate, rng)?;
            let masked_positions: Vec<usize> = mask
                .iter()
                .enumerate()
                .filter(|(_, &m)| m)
                .map(|(i, _)| i)
                .collect();
            Ok(CorruptionPlan {
                paradigm,
                prefix,
                input_mask: mask,
                corrupted_input: None,
                target_tokens: None,
                target_len: rows * cols,
                masked_positions,
            })
        }
        (TargetSpec::Grid { .. }, ParadigmKind::X) => unreachable!("rejected by Paradigm::new"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{qk_norm_attention, AttentionCase, QkNormParams};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn space() -> TokenSpace {
        TokenSpace::paper()
    }

    #[test]
    fn prefix_pair_bijection() {
        let s = space();
        for p in Paradigm::ALL {
            let toks = p.prefix_tokens(&s).unwrap();
            assert_eq!(Paradigm::from_prefix_tokens(toks, &s).unwrap(), p);
        }
    }

    #[test]
    fn degenerate_weights_always_hit() {
        let s = space();
        let p = Paradigm::new(TargetModality::Text, ParadigmKind::R).unwrap();
        let w = ParadigmWeights::only(p);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let (got, _) = choose_paradigm(&mut rng, &w, &s).unwrap();
            assert_eq!(got, p);
        }
    }

    #[test]
    fn zero_weights_rejected() {
        let s = space();
        let w = ParadigmWeights { weights: [0.0; 7] };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(choose_paradigm(&mut rng, &w, &s).is_err());
    }

    #[test]
    fn paradigm_frequencies_match_weights() {
        let s = space();
        let mut w = ParadigmWeights::uniform();
        w.weights = [4.0, 2.0, 1.0, 1.0, 0.0, 0.5, 1.5];
        let total: f64 = w.weights.iter().sum();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut counts = [0usize; 7];
        let n = 100_000;
        for _ in 0..n {
            let (p, _) = choose_paradigm(&mut rng, &w, &s).unwrap();
            let i = Paradigm::ALL.iter().position(|&q| q == p).unwrap();
            counts[i] += 1;
        }
        for i in 0..7 {
            let expect = w.weights[i] / total;
            let got = counts[i] as f64 / n as f64;
            assert!(
                (got - expect).abs() <= 0.01,
                "paradigm {i}: {got} vs {expect}"
            );
        }
    }

    #[test]
    fn hand_constructed_span() {
        let s = space();
        let tokens: Vec<u32> = (100..110).collect();
        let got = corrupt_with_spans(&tokens, &[3..5], &s).unwrap();
        assert_eq!(got.input.len(), 9);
        assert_eq!(got.input[3], s.sentinel(0).unwrap());
        assert_eq!(
            got.target,
            vec![s.sentinel(0).unwrap(), tokens[3], tokens[4]]
        );
        assert_eq!(reconstruct(&got.input, &got.target, &s).unwrap(), tokens);
    }

    #[test]
    fn tiny_rate_passthrough() {
        let s = space();
        let tokens: Vec<u32> = (0..100).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let got = span_corrupt_text(&tokens, 0.001, 3.0, &s, &mut rng).unwrap();
        assert_eq!(got.input, tokens);
        assert!(got.target.is_empty());
    }

    #[test]
    fn short_sequence_passthrough() {
        let s = space();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let got = span_corrupt_text(&[7], 0.5, 3.0, &s, &mut rng).unwrap();
        assert_eq!(got.input, vec![7]);
    }

    #[test]
    fn causal_when_no_masking() {
        let m = dynamic_decoder_mask(3, &[]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m.allows(i, j), j <= i);
            }
        }
    }

    #[test]
    fn masked_column_visible_only_on_own_row() {
        let m = dynamic_decoder_mask(4, &[1]).unwrap();
        assert!(m.allows(1, 1), "own row keeps its column");
        assert!(!m.allows(2, 1));
        assert!(!m.allows(3, 1));
        assert!(m.allows(2, 0) && m.allows(2, 2));
        assert!(m.allows(3, 0) && m.allows(3, 2) && m.allows(3, 3));
    }

    #[test]
    fn out_of_range_masked_position_rejected() {
        assert!(dynamic_decoder_mask(4, &[4]).is_err());
    }

    #[test]
    fn leak_test_through_attention() {
        // Perturbing a masked decoder input changes only its own output row,
        // bit-exactly, through a real attention layer.
        let n = 12;
        let heads = 2;
        let d = 8;
        let m = vec![3usize, 7];
        let dm = dynamic_decoder_mask(n, &m).unwrap();
        let params = QkNormParams::<f64>::random(5, heads, d);

        let mut case = AttentionCase::<f64>::random(8, heads, n, n, d);
        case.mask = dm.allowed.clone();
        let base = qk_norm_attention(&case, &params).unwrap();

        for &j in &m {
            let mut perturbed = case.clone();
            for h in 0..heads {
                // The decoder input at position j feeds q/k/v row j.
                perturbed.q[(h * n + j) * d] += 1.0;
                perturbed.k[(h * n + j) * d] += 1.0;
                perturbed.v[(h * n + j) * d] += 1.0;
            }
            let got = qk_norm_attention(&perturbed, &params).unwrap();
            for h in 0..heads {
                for i in 0..n {
                    let r = (h * n + i) * d;
                    if i == j {
                        assert_ne!(&got.output[r..r + d], &base.output[r..r + d]);
                    } else {
                        assert_eq!(
                            &got.output[r..r + d],
                            &base.output[r..r + d],
                            "row {i} leaked from masked {j}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn sparse_row_on_flat_grid_is_causal() {
        let mask = sparse_pattern(1, 5, SparseKind::Row, 1).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(mask[i * 5 + j], j <= i);
            }
        }
    }

    #[test]
    fn sparse_column_2x2() {
        let mask = sparse_pattern(2, 2, SparseKind::Column, 1).unwrap();
        // Raster order: 0=(0,0) 1=(0,1) 2=(1,0) 3=(1,1).
        let allowed_of = |i: usize| -> Vec<usize> {
            (0..4).filter(|&j| mask[i * 4 + j]).collect()
        };
        assert_eq!(allowed_of(3), vec![1, 3]);
        assert_eq!(allowed_of(2), vec![0, 2]);
    }

    #[test]
    fn saturated_conv_is_causal() {
        let (rows, cols) = (3, 3);
        let n = rows * cols;
        let mask = sparse_pattern(rows, cols, SparseKind::Conv, 3).unwrap();
        for i in 0..n {
            for j in 0..n {
                assert_eq!(mask[i * n + j], j <= i);
            }
        }
    }

    #[test]
    fn sparse_patterns_causal_with_diagonal() {
        for kind in [SparseKind::Row, SparseKind::Column, SparseKind::Conv] {
            let (rows, cols) = (4, 6);
            let n = rows * cols;
            let mask = sparse_pattern(rows, cols, kind, 2).unwrap();
            for i in 0..n {
                assert!(mask[i * n + i], "{kind:?} lost the diagonal at {i}");
                for j in (i + 1)..n {
                    assert!(!mask[i * n + j], "{kind:?} broke causality");
                }
            }
        }
    }

    #[test]
    fn oversized_window_rejected() {
        assert!(sparse_pattern(2, 8, SparseKind::Conv, 3).is_err());
        assert!(sparse_pattern(2, 8, SparseKind::Conv, 0).is_err());
    }

    #[test]
    fn image_s_plan_removes_input() {
        let s = space();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let plan = build_corruption_plan(
            TargetSpec::Grid {
                modality: TargetModality::Image,
                rows: 4,
                cols: 4,
            },
            ParadigmKind::S,
            &CorruptionConfig::default(),
            &s,
            &mut rng,
        )
        .unwrap();
        assert!(plan.input_mask.iter().all(|&m| m));
        assert!(plan.masked_positions.is_empty());
        let dm = plan.decoder_mask().unwrap();
        for i in 0..16 {
            for j in 0..16 {
                assert_eq!(dm.allows(i, j), j <= i);
            }
        }
    }

    #[test]
    fn image_r_plan_masks_match() {
        let s = space();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let plan = build_corruption_plan(
            TargetSpec::Grid {
                modality: TargetModality::Image,
                rows: 24,
                cols: 24,
            },
            ParadigmKind::R,
            &CorruptionConfig::default(),
            &s,
            &mut rng,
        )
        .unwrap();
        assert_eq!(plan.masked_positions.len(), 288);
        for (i, &m) in plan.input_mask.iter().enumerate() {
            assert_eq!(m, plan.masked_positions.contains(&i));
        }
    }

    #[test]
    fn text_r_plan_covers_about_rate() {
        let s = space();
        let tokens: Vec<u32> = (200..300).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let plan = build_corruption_plan(
            TargetSpec::Text(&tokens),
            ParadigmKind::R,
            &CorruptionConfig::default(),
            &s,
            &mut rng,
        )
        .unwrap();
        let covered = plan.input_mask.iter().filter(|&&m| m).count();
        assert_eq!(covered, 15, "rate 0.15 on 100 tokens masks exactly 15");
        assert!(plan.masked_positions.is_empty());
    }

    #[test]
    fn plans_deterministic_under_seed() {
        let s = space();
        let tokens: Vec<u32> = (0..64).collect();
        let build = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            build_corruption_plan(
                TargetSpec::Text(&tokens),
                ParadigmKind::R,
                &CorruptionConfig::default(),
                &s,
                &mut rng,
            )
            .unwrap()
        };
        assert_eq!(build(11), build(11));
        assert_eq!(build(11).to_jsonl(), build(11).to_jsonl());
    }

    #[test]
    fn extreme_kind_rejected_for_grids() {
        let s = space();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(build_corruption_plan(
            TargetSpec::Grid {
                modality: TargetModality::Audio,
                rows: 2,
                cols: 2
            },
            ParadigmKind::X,
            &CorruptionConfig::default(),
            &s,
            &mut rng,
        )
        .is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn reconstruction_identity(len in 2usize..400, seed in 0u64..500) {
            let s = space();
            let tokens: Vec<u32> = (0..len as u32).map(|i| 1000 + i).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let got = span_corrupt_text(&tokens, 0.15, 3.0, &s, &mut rng).unwrap();
            prop_assert_eq!(reconstruct(&got.input, &got.target, &s).unwrap(), tokens);
        }

        #[test]
        fn extreme_reconstruction_identity(len in 2usize..400, seed in 0u64..200) {
            let s = space();
            let tokens: Vec<u32> = (0..len as u32).map(|i| 2000 + i).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let got = span_corrupt_text(&tokens, 0.5, 32.0, &s, &mut rng).unwrap();
            prop_assert_eq!(reconstruct(&got.input, &got.target, &s).unwrap(), tokens);
        }

        #[test]
        fn patch_mask_exact_count(rows in 1usize..30, cols in 1usize..30, pct in 0u32..=100, seed in 0u64..100) {
            let rate = pct as f64 / 100.0;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mask = patch_mask(rows, cols, rate, &mut rng).unwrap();
            let want = (rate * (rows * cols) as f64).round() as usize;
            prop_assert_eq!(mask.iter().filter(|&&m| m).count(), want);
        }

        #[test]
        fn dynamic_mask_subset_of_causal(n in 1usize..24, seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.3)).collect();
            let dm = dynamic_decoder_mask(n, &m).unwrap();
            for i in 0..n {
                prop_assert!(dm.allows(i, i), "diagonal at {i}");
                for j in 0..n {
                    if j > i {
                        prop_assert!(!dm.allows(i, j));
                    }
                }
            }
        }
    }
}
