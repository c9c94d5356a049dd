//! Inference-time decoding rules: nucleus filtering, classifier-free
//! guidance mixing, the localization EOS gate, IoU/NMS over boxes, and
//! constrained sampling. Operates on supplied distributions; there is no
//! model here.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::token_space::Box2D;

/// A probability distribution over the vocabulary for one decode step, with
/// an optional allowed-token mask.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDistribution<T> {
    probs: Vec<T>,
    allowed: Option<Vec<bool>>,
}

impl<T: Real> StepDistribution<T> {
    /// Validated constructor: probabilities must be nonnegative and sum to 1
    /// within 1e-9.
    pub fn from_probs(probs: Vec<T>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Contract("empty distribution".into()));
        }
        let mut sum = T::zero();
        for &p in &probs {
            if !(p >= T::zero()) {
                return Err(Error::Validation(format!(
                    "negative or NaN probability {}",
                    p.as_f64()
                )));
            }
            sum += p;
        }
        if (sum - T::one()).abs().as_f64() > 1e-9 {
            return Err(Error::Validation(format!(
                "probabilities sum to {}, expected 1 +/- 1e-9",
                sum.as_f64()
            )));
        }
        Ok(StepDistribution {
            probs,
            allowed: None,
        })
    }

    /// Softmax of raw logits.
    pub fn from_logits(logits: &[T]) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::Contract("empty logits".into()));
        }
        let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
        let sum: T = exps.iter().copied().sum();
        Ok(StepDistribution {
            probs: exps.into_iter().map(|e| e / sum).collect(),
            allowed: None,
        })
    }

    /// Attach an allowed-token mask (same length as the vocabulary).
    pub fn with_mask(mut self, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != self.probs.len() {
            return Err(Error::Shape(format!(
                "mask length {} != vocab {}",
                allowed.len(),
                self.probs.len()
            )));
        }
        self.allowed = Some(allowed);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    fn is_allowed(&self, id: usize) -> bool {
        self.allowed.as_ref().map_or(true, |m| m[id])
    }

    /// Probabilities with the mask applied and renormalized.
    pub fn effective_probs(&self) -> Result<Vec<T>> {
        let mut out = self.probs.clone();
        if let Some(mask) = &self.allowed {
            for (p, &ok) in out.iter_mut().zip(mask) {
                if !ok {
                    *p = T::zero();
                }
            }
        }
        let sum: T = out.iter().copied().sum();
        if !(sum > T::zero()) {
            return Err(Error::Contract(
                "no probability mass on allowed tokens".into(),
            ));
        }
        for p in out.iter_mut() {
            *p /= sum;
        }
        Ok(out)
    }
}

/// Nucleus filter: the smallest probability-sorted prefix whose cumulative
/// mass reaches `p` (ties broken by token id), renormalized over the kept
/// set. Returns the kept ids in selection order.
pub fn top_p_filter<T: Real>(
    dist: &StepDistribution<T>,
    p: T,
) -> Result<(Vec<usize>, StepDistribution<T>)> {
    if !(p > T::zero() && p <= T::one()) {
        return Err(Error::range("p", p.as_f64(), 0.0, 1.0));
    }
    let probs = dist.effective_probs()?;
    let mut order: Vec<usize> = (0..probs.len()).filter(|&i| dist.is_allowed(i)).collect();
    order.sort_by(|&a, &b| {
        probs[b]
            .as_f64()
            .total_cmp(&probs[a].as_f64())
            .then(a.cmp(&b))
    });

    let mut kept = Vec::new();
    let mut mass = T::zero();
    for id in order {
        kept.push(id);
        mass += probs[id];
        if mass >= p {
            break;
        }
    }
    let mut filtered = vec![T::zero(); probs.len()];
    for &id in &kept {
        filtered[id] = probs[id] / mass;
    }
    Ok((kept, StepDistribution {
        probs: filtered,
        allowed: dist.allowed.clone(),
    }))
}

/// Classifier-free guidance in logit space: `uncond + alpha * (cond - uncond)`.
pub fn cfg_mix<T: Real>(cond: &[T], uncond: &[T], alpha: T) -> Result<Vec<T>> {
    if cond.len() != uncond.len() {
        return Err(Error::Shape(format!(
            "conditional {} vs unconditional {} logits",
            cond.len(),
            uncond.len()
        )));
    }
    Ok(cond
        .iter()
        .zip(uncond)
        .map(|(&c, &u)| u + alpha * (c - u))
        .collect())
}

/// EOS emission policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EosMode {
    /// Emit EOS only when its probability exceeds 0.5, even if it is argmax.
    Localization,
    /// Standard argmax behavior.
    Default,
}

/// Decide whether this step emits EOS.
pub fn eos_gate<T: Real>(dist: &StepDistribution<T>, eos_id: usize, mode: EosMode) -> Result<bool> {
    if eos_id >= dist.len() {
        return Err(Error::range(
            "eos_id",
            eos_id as f64,
            0.0,
            (dist.len() - 1) as f64,
        ));
    }
    let probs = dist.effective_probs()?;
    match mode {
        EosMode::Localization => Ok(probs[eos_id].as_f64() > 0.5),
        EosMode::Default => {
            let argmax = probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.as_f64().total_cmp(&b.1.as_f64()).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .unwrap();
            Ok(argmax == eos_id)
        }
    }
}

/// Intersection-over-union of two boxes, in [0, 1].
pub fn iou(a: &Box2D, b: &Box2D) -> f64 {
    let y1 = a.y1.max(b.y1);
    let x1 = a.x1.max(b.x1);
    let y2 = a.y2.min(b.y2);
    let x2 = a.x2.min(b.x2);
    if y2 <= y1 || x2 <= x1 {
        return 0.0;
    }
    let inter = (y2 - y1) * (x2 - x1);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        // Two identical degenerate (zero-area) boxes overlap fully.
        return 1.0;
    }
    inter / union
}

/// Greedy non-maximum suppression: process by descending score (ties
/// canonically by box coordinates, then input index) and drop boxes whose
/// IoU with a kept box exceeds `threshold`. Returns kept input indices.
pub fn nms(boxes: &[Box2D], scores: &[f64], threshold: f64) -> Result<Vec<usize>> {
    if boxes.len() != scores.len() {
        return Err(Error::Shape(format!(
            "{} boxes vs {} scores",
            boxes.len(),
            scores.len()
        )));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::range("threshold", threshold, 0.0, 1.0));
    }
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| {
                let ka = (boxes[a].y1, boxes[a].x1, boxes[a].y2, boxes[a].x2);
                let kb = (boxes[b].y1, boxes[b].x1, boxes[b].y2, boxes[b].x2);
                ka.partial_cmp(&kb).unwrap_or(std::cmp::Ordering::Equal)
            })
            .then(a.cmp(&b))
    });

    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        if kept.iter().all(|&k| iou(&boxes[i], &boxes[k]) <= threshold) {
            kept.push(i);
        }
    }
    Ok(kept)
}

/// Draw one token. Temperature reshapes the distribution before the draw
/// (`t -> 0` approaches argmax) and the allowed-token mask is respected.
pub fn sample<T: Real>(
    dist: &StepDistribution<T>,
    temperature: T,
    rng: &mut impl Rng,
) -> Result<usize> {
    if !(temperature > T::zero()) {
        return Err(Error::range("temperature", temperature.as_f64(), 0.0, f64::INFINITY));
    }
    let probs = dist.effective_probs()?;
    // p^(1/t), computed against the row max so tiny temperatures stay finite.
    let max = probs.iter().copied().fold(T::zero(), T::max);
    let inv_t = temperature.recip();
    let shaped: Vec<f64> = probs
        .iter()
        .map(|&p| {
            if p > T::zero() {
                (p / max).as_f64().powf(inv_t.as_f64())
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = shaped.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Contract("no samplable token".into()));
    }
    let mut draw = rng.gen_range(0.0..total);
    for (i, &w) in shaped.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        if draw < w {
            return Ok(i);
        }
        draw -= w;
    }
    Ok(shaped.iter().rposition(|&w| w > 0.0).unwrap())
}

/// The full guided decode step in the fixed order: guidance mixing, then
/// temperature, then nucleus filtering, then the draw.
pub fn guided_sample<T: Real>(
    cond_logits: &[T],
    uncond_logits: Option<&[T]>,
    alpha: T,
    temperature: T,
    top_p: T,
    allowed: Option<&[bool]>,
    rng: &mut impl Rng,
) -> Result<usize> {
    let logits = match uncond_logits {
        Some(u) => cfg_mix(cond_logits, u, alpha)?,
        None => cond_logits.to_vec(),
    };
    if !(temperature > T::zero()) {
        return Err(Error::range("temperature", temperature.as_f64(), 0.0, f64::INFINITY));
    }
    let scaled: Vec<T> = logits.iter().map(|&l| l / temperature).collect();
    let mut dist = StepDistribution::from_logits(&scaled)?;
    if let Some(mask) = allowed {
        dist = dist.with_mask(mask.to_vec())?;
    }
    let (_, filtered) = top_p_filter(&dist, top_p)?;
    sample(&filtered, T::one(), rng)
}

/// Named decoding configuration, loadable from config files for audit.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DecodePreset {
    pub name: String,
    pub temperature: f64,
    pub top_p: f64,
    #[serde(default)]
    pub cfg_alpha: Option<f64>,
    #[serde(default)]
    pub negative_prompt: Option<String>,
    #[serde(default)]
    pub eos_gate: bool,
    #[serde(default)]
    pub nms_threshold: Option<f64>,
}

impl DecodePreset {
    /// Canonical one-line JSON for audit output.
    pub fn to_jsonl(&self) -> String {
        let alpha = match self.cfg_alpha {
            Some(a) => format!("{a:.1}"),
            None => "null".into(),
        };
        let neg = match &self.negative_prompt {
            Some(p) => format!("\"{p}\""),
            None => "null".into(),
        };
        let nms = match self.nms_threshold {
            Some(t) => format!("{t:.1}"),
            None => "null".into(),
        };
        format!(
            r#"{{"name":"{}","temperature":{:.1},"top_p":{:.2},"cfg_alpha":{alpha},"negative_prompt":{neg},"eos_gate":{},"nms_threshold":{nms}}}"#,
            self.name, self.temperature, self.top_p, self.eos_gate
        )
    }
}

/// The preset table: image generation, dense labels, segmentation,
/// localization.
pub fn preset_registry() -> Vec<DecodePreset> {
    vec![
        DecodePreset {
            name: "image_gen".into(),
            temperature: 1.0,
            top_p: 0.95,
            cfg_alpha: Some(10.0),
            negative_prompt: Some("An image of a random picture.".into()),
            eos_gate: false,
            nms_threshold: None,
        },
        DecodePreset {
            name: "dense_label".into(),
            temperature: 1.0,
            top_p: 0.95,
            cfg_alpha: None,
            negative_prompt: None,
            eos_gate: false,
            nms_threshold: None,
        },
        DecodePreset {
            name: "segmentation".into(),
            temperature: 1.0,
            top_p: 0.97,
            cfg_alpha: None,
            negative_prompt: None,
            eos_gate: false,
            nms_threshold: None,
        },
        DecodePreset {
            name: "localization".into(),
            temperature: 1.0,
            top_p: 0.95,
            cfg_alpha: None,
            negative_prompt: None,
            eos_gate: true,
            nms_threshold: Some(0.8),
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dist(probs: &[f64]) -> StepDistribution<f64> {
        StepDistribution::from_probs(probs.to_vec()).unwrap()
    }

    #[test]
    fn from_probs_validates() {
        assert!(StepDistribution::from_probs(vec![0.5, 0.6]).is_err());
        assert!(StepDistribution::from_probs(vec![-0.1, 1.1]).is_err());
        assert!(StepDistribution::from_probs(vec![0.5, 0.5]).is_ok());
    }

    #[test]
    fn top_p_full_support_at_one() {
        let d = dist(&[0.5, 0.3, 0.2]);
        let (kept, _) = top_p_filter(&d, 1.0).unwrap();
        assert_eq!(kept.len(), 3);
    }

    #[test]
    fn top_p_single_dominant() {
        let d = dist(&[0.97, 0.02, 0.01]);
        let (kept, f) = top_p_filter(&d, 0.95).unwrap();
        assert_eq!(kept, vec![0]);
        assert_eq!(f.probs()[0], 1.0);
    }

    #[test]
    fn top_p_keeps_all_below_threshold() {
        let d = dist(&[0.5, 0.3, 0.2]);
        let (kept, _) = top_p_filter(&d, 0.95).unwrap();
        assert_eq!(kept.len(), 3, "0.8 < 0.95 so the whole support stays");
    }

    #[test]
    fn top_p_minimal_prefix() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let n = rng.gen_range(2..30);
            let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            let probs: Vec<f64> = raw.iter().map(|p| p / sum).collect();
            let d = dist(&probs);
            let p = rng.gen_range(0.05..1.0);
            let (kept, _) = top_p_filter(&d, p).unwrap();
            let mass: f64 = kept.iter().map(|&i| probs[i]).sum();
            assert!(mass >= p - 1e-12, "kept mass {mass} < {p}");
            let smallest = *kept.last().unwrap();
            assert!(
                mass - probs[smallest] < p,
                "prefix not minimal: dropping the smallest kept still covers {p}"
            );
        }
    }

    #[test]
    fn cfg_endpoints() {
        let cond = vec![1.0, 2.0, 3.0];
        let uncond = vec![0.5, 0.5, 0.5];
        assert_eq!(cfg_mix(&cond, &uncond, 1.0).unwrap(), cond);
        assert_eq!(cfg_mix(&cond, &uncond, 0.0).unwrap(), uncond);
        assert_eq!(cfg_mix(&cond, &cond, 12.0).unwrap(), cond);
        assert!(cfg_mix(&cond, &uncond[..2], 1.0).is_err());
    }

    #[test]
    fn eos_gate_rules() {
        // EOS (id 0) is argmax at 0.4: suppressed in localization mode.
        let d = dist(&[0.4, 0.3, 0.3]);
        assert!(!eos_gate(&d, 0, EosMode::Localization).unwrap());
        assert!(eos_gate(&d, 0, EosMode::Default).unwrap());

        let d = dist(&[0.6, 0.2, 0.2]);
        assert!(eos_gate(&d, 0, EosMode::Localization).unwrap());
    }

    fn b(y1: f64, x1: f64, y2: f64, x2: f64) -> Box2D {
        Box2D::new(y1, x1, y2, x2).unwrap()
    }

    #[test]
    fn iou_cases() {
        let unit = b(0.0, 0.0, 1.0, 1.0);
        assert_eq!(iou(&unit, &unit), 1.0);
        assert_eq!(iou(&unit, &b(0.0, 0.0, 1.0, 0.5)), 0.5);
        assert_eq!(iou(&b(0.0, 0.0, 0.4, 0.4), &b(0.5, 0.5, 0.9, 0.9)), 0.0);
        // Symmetry, and strictly below 1 for overlapping-but-different boxes.
        let (p, q) = (b(0.1, 0.1, 0.6, 0.7), b(0.2, 0.0, 0.9, 0.5));
        assert_eq!(iou(&p, &q), iou(&q, &p));
        assert!(iou(&p, &q) > 0.0 && iou(&p, &q) < 1.0);
    }

    #[test]
    fn nms_identical_boxes_keep_one() {
        let unit = b(0.0, 0.0, 1.0, 1.0);
        let kept = nms(&[unit, unit, unit], &[0.9, 0.8, 0.7], 0.8).unwrap();
        assert_eq!(kept, vec![0]);
    }

    #[test]
    fn nms_disjoint_keep_all() {
        let boxes = [b(0.0, 0.0, 0.2, 0.2), b(0.5, 0.5, 0.7, 0.7)];
        let kept = nms(&boxes, &[0.5, 0.9], 0.8).unwrap();
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn nms_keeps_half_overlap_at_08() {
        // IoU exactly 0.5 <= 0.8: both stay.
        let boxes = [b(0.0, 0.0, 1.0, 1.0), b(0.0, 0.0, 1.0, 0.5)];
        let kept = nms(&boxes, &[0.9, 0.8], 0.8).unwrap();
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn nms_permutation_invariant() {
        let boxes = vec![
            b(0.00, 0.00, 0.50, 0.50),
            b(0.02, 0.02, 0.52, 0.52),
            b(0.40, 0.40, 0.90, 0.90),
            b(0.41, 0.41, 0.91, 0.91),
            b(0.10, 0.60, 0.30, 0.95),
        ];
        let scores = vec![0.9, 0.8, 0.95, 0.7, 0.6];
        let base: Vec<Box2D> = nms(&boxes, &scores, 0.5)
            .unwrap()
            .into_iter()
            .map(|i| boxes[i])
            .collect();

        let perm = [4usize, 2, 0, 3, 1];
        let pboxes: Vec<Box2D> = perm.iter().map(|&i| boxes[i]).collect();
        let pscores: Vec<f64> = perm.iter().map(|&i| scores[i]).collect();
        let mut got: Vec<Box2D> = nms(&pboxes, &pscores, 0.5)
            .unwrap()
            .into_iter()
            .map(|i| pboxes[i])
            .collect();

        let mut want = base;
        let key = |bx: &Box2D| (bx.y1, bx.x1, bx.y2, bx.x2);
        got.sort_by(|a, b| key(a).partial_cmp(&key(b)).unwrap());
        want.sort_by(|a, b| key(a).partial_cmp(&key(b)).unwrap());
        assert_eq!(got, want);
    }

    #[test]
    fn one_hot_sampling() {
        let d = dist(&[0.0, 1.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            assert_eq!(sample(&d, 1.0, &mut rng).unwrap(), 1);
        }
    }

    #[test]
    fn tiny_temperature_is_argmax() {
        let d = dist(&[0.2, 0.5, 0.3]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(sample(&d, 1e-4, &mut rng).unwrap(), 1);
        }
    }

    #[test]
    fn sampling_respects_mask() {
        let d = dist(&[0.5, 0.25, 0.25])
            .with_mask(vec![false, true, true])
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            assert_ne!(sample(&d, 1.0, &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn empty_support_after_mask_errors() {
        let d = dist(&[0.5, 0.5, 0.0])
            .with_mask(vec![false, false, true])
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(matches!(
            sample(&d, 1.0, &mut rng),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn empirical_frequencies_match() {
        let probs = vec![0.5, 0.3, 0.15, 0.05];
        let d = dist(&probs);
        let (_, filtered) = top_p_filter(&d, 0.95).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 100_000;
        let mut counts = vec![0u64; probs.len()];
        for _ in 0..n {
            counts[sample(&filtered, 1.0, &mut rng).unwrap()] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            let got = c as f64 / n as f64;
            let want = filtered.probs()[i];
            assert!((got - want).abs() <= 0.01, "token {i}: {got} vs {want}");
        }
    }

    #[test]
    fn preset_table_values() {
        let presets = preset_registry();
        let by_name = |n: &str| presets.iter().find(|p| p.name == n).unwrap();
        assert_eq!(by_name("image_gen").top_p, 0.95);
        assert_eq!(by_name("image_gen").temperature, 1.0);
        assert_eq!(by_name("image_gen").cfg_alpha, Some(10.0));
        assert_eq!(
            by_name("image_gen").negative_prompt.as_deref(),
            Some("An image of a random picture.")
        );
        assert_eq!(by_name("dense_label").cfg_alpha, None);
        assert_eq!(by_name("segmentation").top_p, 0.97);
        assert!(by_name("localization").eos_gate);
        assert_eq!(by_name("localization").nms_threshold, Some(0.8));
    }

    #[test]
    fn guided_sample_deterministic() {
        let cond = vec![2.0, 1.0, 0.5, 0.1];
        let uncond = vec![1.0, 1.0, 1.0, 1.0];
        let run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            guided_sample(&cond, Some(&uncond), 10.0, 1.0, 0.95, None, &mut rng).unwrap()
        };
        assert_eq!(run(9), run(9));
    }
}
