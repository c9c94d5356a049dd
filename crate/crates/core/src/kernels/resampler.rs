//! Perceiver-style resampler: a fixed set of latent vectors cross-attends to
//! each history frame's tokens (cosine attention), compressing every frame to
//! `latents` output tokens. Two layers of attention + GELU MLP, residual
//! connections throughout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::attention::{SCALE_MAX, SCALE_MIN};
use crate::error::{Error, Result};
use crate::modality::MAX_HISTORY_FRAMES;
use crate::scalar::Real;

/// Whether latents query each frame independently or all frames at once.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryMode {
    /// Independent pass per frame; output block `t` depends only on frame `t`.
    PerFrame,
    /// One pass over the concatenated frames.
    Joint,
}

/// Resampler geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResamplerConfig {
    pub latents: usize,
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub mlp_dim: usize,
    pub query_mode: QueryMode,
}

impl ResamplerConfig {
    /// Image-history preset (base size): 32 latents, 2 layers, 768 dims,
    /// 12 heads of 64, 2048 MLP.
    pub fn image_paper() -> Self {
        ResamplerConfig {
            latents: 32,
            layers: 2,
            model_dim: 768,
            heads: 12,
            head_dim: 64,
            mlp_dim: 2048,
            query_mode: QueryMode::PerFrame,
        }
    }

    /// Audio-history preset (base size): 16 latents, same trunk.
    pub fn audio_paper() -> Self {
        ResamplerConfig {
            latents: 16,
            ..Self::image_paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latents == 0 || self.layers == 0 {
            return Err(Error::Config("latents and layers must be positive".into()));
        }
        if self.heads * self.head_dim != self.model_dim {
            return Err(Error::Shape(format!(
                "heads {} x head_dim {} != model_dim {}",
                self.heads, self.head_dim, self.model_dim
            )));
        }
        Ok(())
    }
}

/// One layer's weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ResamplerLayerParams<T> {
    pub wq: Vec<T>,
    pub wk: Vec<T>,
    pub wv: Vec<T>,
    pub wo: Vec<T>,
    /// Per-head cosine logit scale.
    pub scale: Vec<T>,
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
    pub b2: Vec<T>,
}

/// Full parameter bundle: initial latent embeddings plus per-layer weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ResamplerParams<T> {
    pub latent_init: Vec<T>,
    pub layers: Vec<ResamplerLayerParams<T>>,
}

impl<T: Real> ResamplerParams<T> {
    /// Seeded random initialization scaled by `1/sqrt(fan_in)`.
    pub fn random(config: &ResamplerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.model_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |rows: usize, cols: usize| -> Vec<T> {
            let s = 1.0 / (rows as f64).sqrt();
            (0..rows * cols)
                .map(|_| T::from_f64(rng.gen_range(-s..s)))
                .collect()
        };
        let mut layers = Vec::with_capacity(config.layers);
        for _ in 0..config.layers {
            layers.push(ResamplerLayerParams {
                wq: draw(d, d),
                wk: draw(d, d),
                wv: draw(d, d),
                wo: draw(d, d),
                scale: vec![T::from_f64(10.0); config.heads],
                w1: draw(d, config.mlp_dim),
                b1: vec![T::zero(); config.mlp_dim],
                w2: draw(config.mlp_dim, d),
                b2: vec![T::zero(); d],
            });
        }
        Ok(ResamplerParams {
            latent_init: draw(config.latents, d),
            layers,
        })
    }
}

fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

// tanh-approximated GELU.
fn gelu<T: Real>(x: T) -> T {
    let c = T::from_f64(0.797_884_560_802_865_4); // sqrt(2/pi)
    let a = T::from_f64(0.044_715);
    let half = T::from_f64(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

fn cos_sim<T: Real>(a: &[T], b: &[T]) -> T {
    let dot: T = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    let na: T = a.iter().map(|&x| x * x).sum::<T>().sqrt();
    let nb: T = b.iter().map(|&x| x * x).sum::<T>().sqrt();
    let eps = T::from_f64(super::attention::COS_EPS);
    let den = if na * nb > eps { na * nb } else { eps };
    let cos = dot / den;
    if cos > T::one() {
        T::one()
    } else if cos < -T::one() {
        -T::one()
    } else {
        cos
    }
}

// One resampler pass: latents cross-attend to `kv` ([n_kv x d]) through all
// layers. Returns [latents x d].
fn run_latents<T: Real>(
    kv: &[T],
    n_kv: usize,
    config: &ResamplerConfig,
    params: &ResamplerParams<T>,
) -> Vec<T> {
    let d = config.model_dim;
    let hd = config.head_dim;
    let l = config.latents;
    let mut x = params.latent_init.clone();
    for layer in &params.layers {
        let q = matmul(&x, &layer.wq, l, d, d);
        let k = matmul(kv, &layer.wk, n_kv, d, d);
        let v = matmul(kv, &layer.wv, n_kv, d, d);

        let mut ctx = vec![T::zero(); l * d];
        for h in 0..config.heads {
            let s = {
                let raw = layer.scale[h];
                let lo = T::from_f64(SCALE_MIN);
                let hi = T::from_f64(SCALE_MAX);
                if raw < lo {
                    lo
                } else if raw > hi {
                    hi
                } else {
                    raw
                }
            };
            for i in 0..l {
                let qi = &q[i * d + h * hd..i * d + (h + 1) * hd];
                let logits: Vec<T> = (0..n_kv)
                    .map(|j| s * cos_sim(qi, &k[j * d + h * hd..j * d + (h + 1) * hd]))
                    .collect();
                let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
                let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
                let sum: T = exps.iter().copied().sum();
                for (j, &e) in exps.iter().enumerate() {
                    let w = e / sum;
                    let vj = &v[j * d + h * hd..j * d + (h + 1) * hd];
                    let c = &mut ctx[i * d + h * hd..i * d + (h + 1) * hd];
                    for (cv, &vv) in c.iter_mut().zip(vj) {
                        *cv += w * vv;
                    }
                }
            }
        }
        let attn_out = matmul(&ctx, &layer.wo, l, d, d);
        for (xv, &a) in x.iter_mut().zip(&attn_out) {
            *xv += a;
        }

        let mut hidden = matmul(&x, &layer.w1, l, d, config.mlp_dim);
        for (hv, b) in hidden.iter_mut().zip(layer.b1.iter().cycle()) {
            *hv = gelu(*hv + *b);
        }
        let mlp_out = matmul(&hidden, &layer.w2, l, config.mlp_dim, d);
        for i in 0..l {
            for c in 0..d {
                x[i * d + c] += mlp_out[i * d + c] + layer.b2[c];
            }
        }
    }
    x
}

/// Compress up to four frames of `tokens_per_frame x model_dim` features.
/// Per-frame mode emits `frames * latents` tokens (block `t` depends only on
/// frame `t`); joint mode emits `latents` tokens over all frames at once.
pub fn resample<T: Real>(
    frames: &[T],
    n_frames: usize,
    tokens_per_frame: usize,
    config: &ResamplerConfig,
    params: &ResamplerParams<T>,
) -> Result<Vec<T>> {
    config.validate()?;
    if n_frames == 0 || n_frames > MAX_HISTORY_FRAMES as usize {
        return Err(Error::Budget(format!(
            "history frames must be in 1..={MAX_HISTORY_FRAMES}, got {n_frames}"
        )));
    }
    let d = config.model_dim;
    if frames.len() != n_frames * tokens_per_frame * d {
        return Err(Error::Shape(format!(
            "{} values != {n_frames} x {tokens_per_frame} x {d}",
            frames.len()
        )));
    }
    match config.query_mode {
        QueryMode::PerFrame => {
            let mut out = Vec::with_capacity(n_frames * config.latents * d);
            let per = tokens_per_frame * d;
            for t in 0..n_frames {
                let kv = &frames[t * per..(t + 1) * per];
                out.extend(run_latents(kv, tokens_per_frame, config, params));
            }
            Ok(out)
        }
        QueryMode::Joint => Ok(run_latents(
            frames,
            n_frames * tokens_per_frame,
            config,
            params,
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(mode: QueryMode) -> ResamplerConfig {
        ResamplerConfig {
            latents: 5,
            layers: 2,
            model_dim: 16,
            heads: 4,
            head_dim: 4,
            mlp_dim: 24,
            query_mode: mode,
        }
    }

    fn frames(seed: u64, n_frames: usize, tokens: usize, d: usize) -> Vec<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n_frames * tokens * d)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect()
    }

    #[test]
    fn per_frame_output_is_frames_times_latents() {
        let cfg = small_config(QueryMode::PerFrame);
        let params = ResamplerParams::<f64>::random(&cfg, 0).unwrap();
        for t in 1..=4 {
            let x = frames(7, t, 9, cfg.model_dim);
            let out = resample(&x, t, 9, &cfg, &params).unwrap();
            assert_eq!(out.len(), t * cfg.latents * cfg.model_dim);
        }
    }

    #[test]
    fn paper_budgets_hold() {
        // 4 image frames x 32 latents = 128 tokens; 1 audio frame x 16 = 16.
        let mut img = ResamplerConfig::image_paper();
        // Shrink the trunk so the test stays fast; latent count is what matters.
        img.model_dim = 16;
        img.heads = 4;
        img.head_dim = 4;
        img.mlp_dim = 8;
        let params = ResamplerParams::<f64>::random(&img, 1).unwrap();
        let x = frames(3, 4, 6, img.model_dim);
        let out = resample(&x, 4, 6, &img, &params).unwrap();
        assert_eq!(out.len() / img.model_dim, 128);

        let mut aud = ResamplerConfig::audio_paper();
        aud.model_dim = 16;
        aud.heads = 4;
        aud.head_dim = 4;
        aud.mlp_dim = 8;
        let params = ResamplerParams::<f64>::random(&aud, 2).unwrap();
        let x = frames(4, 1, 6, aud.model_dim);
        let out = resample(&x, 1, 6, &aud, &params).unwrap();
        assert_eq!(out.len() / aud.model_dim, 16);
    }

    #[test]
    fn per_frame_blocks_are_independent() {
        let cfg = small_config(QueryMode::PerFrame);
        let params = ResamplerParams::<f64>::random(&cfg, 3).unwrap();
        let tokens = 7;
        let base = frames(11, 4, tokens, cfg.model_dim);
        let out_base = resample(&base, 4, tokens, &cfg, &params).unwrap();

        let mut perturbed = base.clone();
        let frame2 = 2 * tokens * cfg.model_dim;
        perturbed[frame2 + 5] += 0.25;
        let out_pert = resample(&perturbed, 4, tokens, &cfg, &params).unwrap();

        let block = cfg.latents * cfg.model_dim;
        for t in 0..4 {
            let a = &out_base[t * block..(t + 1) * block];
            let b = &out_pert[t * block..(t + 1) * block];
            if t == 2 {
                assert_ne!(a, b, "perturbed frame must change its own block");
            } else {
                assert_eq!(a, b, "frame {t} block changed bit-unequal");
            }
        }
    }

    #[test]
    fn joint_mode_emits_one_block() {
        let cfg = small_config(QueryMode::Joint);
        let params = ResamplerParams::<f64>::random(&cfg, 4).unwrap();
        let x = frames(13, 3, 7, cfg.model_dim);
        let out = resample(&x, 3, 7, &cfg, &params).unwrap();
        assert_eq!(out.len(), cfg.latents * cfg.model_dim);
    }

    #[test]
    fn five_frames_rejected() {
        let cfg = small_config(QueryMode::PerFrame);
        let params = ResamplerParams::<f64>::random(&cfg, 5).unwrap();
        let x = frames(17, 5, 4, cfg.model_dim);
        assert!(matches!(
            resample(&x, 5, 4, &cfg, &params),
            Err(Error::Budget(_))
        ));
    }
}
