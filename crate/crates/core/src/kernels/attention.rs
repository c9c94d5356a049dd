//! Masked attention cores with the two stability variants: LayerNorm on
//! queries and keys before the dot product, and clamped-scale cosine
//! similarity logits. Forward and analytic backward for both; the backward
//! passes are validated against central finite differences.
//!
//! Masked (query, key) pairs never enter the max/sum/output loops, so a
//! masked key cannot influence an output row even at the last bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::rope::rope_2d;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// LayerNorm variance stabilizer. Kept tiny so per-row rescaling of raw
/// inputs leaves normalized rows unchanged to f64 precision while zero rows
/// still normalize to finite zeros.
pub const LN_EPS: f64 = 1e-30;
/// Cosine-similarity denominator floor.
pub const COS_EPS: f64 = 1e-6;
/// Clamp range for the learnable cosine logit scale.
pub const SCALE_MIN: f64 = 0.01;
pub const SCALE_MAX: f64 = 100.0;

/// Which attention core to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionKind {
    QkNorm,
    Cosine,
}

/// One attention problem: Q/K/V as `[heads x seq x head_dim]` row-major
/// arrays, a shared boolean mask, and 2D grid positions per token.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionCase<T> {
    pub heads: usize,
    pub seq_q: usize,
    pub seq_kv: usize,
    pub head_dim: usize,
    pub q: Vec<T>,
    pub k: Vec<T>,
    pub v: Vec<T>,
    /// `mask[i * seq_kv + j]`: may query row `i` attend to key `j`.
    pub mask: Vec<bool>,
    pub positions_q: Vec<(i64, i64)>,
    pub positions_kv: Vec<(i64, i64)>,
}

impl<T: Real> AttentionCase<T> {
    pub fn new(
        heads: usize,
        seq_q: usize,
        seq_kv: usize,
        head_dim: usize,
        q: Vec<T>,
        k: Vec<T>,
        v: Vec<T>,
        mask: Vec<bool>,
    ) -> Result<Self> {
        let case = AttentionCase {
            heads,
            seq_q,
            seq_kv,
            head_dim,
            q,
            k,
            v,
            mask,
            positions_q: vec![(0, 0); seq_q],
            positions_kv: vec![(0, 0); seq_kv],
        };
        case.validate()?;
        Ok(case)
    }

    pub fn validate(&self) -> Result<()> {
        if self.head_dim == 0 || self.head_dim % 2 != 0 {
            return Err(Error::Shape(format!(
                "head_dim {} must be even and positive",
                self.head_dim
            )));
        }
        let nq = self.heads * self.seq_q * self.head_dim;
        let nkv = self.heads * self.seq_kv * self.head_dim;
        if self.q.len() != nq || self.k.len() != nkv || self.v.len() != nkv {
            return Err(Error::Shape(format!(
                "q/k/v lengths {}/{}/{} do not match {}x({}|{})x{}",
                self.q.len(),
                self.k.len(),
                self.v.len(),
                self.heads,
                self.seq_q,
                self.seq_kv,
                self.head_dim
            )));
        }
        if self.mask.len() != self.seq_q * self.seq_kv {
            return Err(Error::Shape(format!(
                "mask length {} != {}x{}",
                self.mask.len(),
                self.seq_q,
                self.seq_kv
            )));
        }
        if self.positions_q.len() != self.seq_q || self.positions_kv.len() != self.seq_kv {
            return Err(Error::Shape("position lists do not match sequence".into()));
        }
        for i in 0..self.seq_q {
            if !self.mask[i * self.seq_kv..(i + 1) * self.seq_kv]
                .iter()
                .any(|&m| m)
            {
                return Err(Error::Contract(format!(
                    "query row {i} has no allowed keys"
                )));
            }
        }
        Ok(())
    }

    /// Random self-attention case with a full mask.
    pub fn random(seed: u64, heads: usize, seq_q: usize, seq_kv: usize, head_dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<T> {
            (0..n)
                .map(|_| T::from_f64(rng.gen_range(-1.0..1.0)))
                .collect()
        };
        AttentionCase {
            heads,
            seq_q,
            seq_kv,
            head_dim,
            q: draw(heads * seq_q * head_dim),
            k: draw(heads * seq_kv * head_dim),
            v: draw(heads * seq_kv * head_dim),
            mask: vec![true; seq_q * seq_kv],
            positions_q: (0..seq_q as i64).map(|i| (i, 0)).collect(),
            positions_kv: (0..seq_kv as i64).map(|i| (i, 0)).collect(),
        }
    }

    /// Random causal self-attention case (`seq_q == seq_kv`).
    pub fn random_causal(seed: u64, heads: usize, seq: usize, head_dim: usize) -> Self {
        let mut case = Self::random(seed, heads, seq, seq, head_dim);
        for i in 0..seq {
            for j in 0..seq {
                case.mask[i * seq + j] = j <= i;
            }
        }
        case
    }

    /// Rotate Q and K rows in place by their 2D grid positions.
    pub fn apply_rope_2d(&mut self, base: f64) -> Result<()> {
        let d = self.head_dim;
        for h in 0..self.heads {
            let qs = h * self.seq_q * d;
            let qe = qs + self.seq_q * d;
            let rotated = rope_2d(&self.q[qs..qe], &self.positions_q, base)?;
            self.q[qs..qe].copy_from_slice(&rotated);

            let ks = h * self.seq_kv * d;
            let ke = ks + self.seq_kv * d;
            let rotated = rope_2d(&self.k[ks..ke], &self.positions_kv, base)?;
            self.k[ks..ke].copy_from_slice(&rotated);
        }
        Ok(())
    }

    fn q_row(&self, h: usize, i: usize) -> &[T] {
        let s = (h * self.seq_q + i) * self.head_dim;
        &self.q[s..s + self.head_dim]
    }

    fn k_row(&self, h: usize, j: usize) -> &[T] {
        let s = (h * self.seq_kv + j) * self.head_dim;
        &self.k[s..s + self.head_dim]
    }

    fn v_row(&self, h: usize, j: usize) -> &[T] {
        let s = (h * self.seq_kv + j) * self.head_dim;
        &self.v[s..s + self.head_dim]
    }

    fn allowed(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.seq_kv + j]
    }
}

/// Per-head affine LayerNorm parameters for queries and keys, each
/// `[heads x head_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QkNormParams<T> {
    pub q_gain: Vec<T>,
    pub q_bias: Vec<T>,
    pub k_gain: Vec<T>,
    pub k_bias: Vec<T>,
}

impl<T: Real> QkNormParams<T> {
    /// Unit gain, zero bias.
    pub fn identity(heads: usize, head_dim: usize) -> Self {
        let n = heads * head_dim;
        QkNormParams {
            q_gain: vec![T::one(); n],
            q_bias: vec![T::zero(); n],
            k_gain: vec![T::one(); n],
            k_bias: vec![T::zero(); n],
        }
    }

    /// Gains near one, biases near zero.
    pub fn random(seed: u64, heads: usize, head_dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = heads * head_dim;
        let mut draw = |center: f64| -> Vec<T> {
            (0..n)
                .map(|_| T::from_f64(center + 0.2 * rng.gen_range(-1.0..1.0)))
                .collect()
        };
        QkNormParams {
            q_gain: draw(1.0),
            q_bias: draw(0.0),
            k_gain: draw(1.0),
            k_bias: draw(0.0),
        }
    }
}

/// Learnable per-head cosine logit scale (clamped to `[SCALE_MIN, SCALE_MAX]`
/// at use).
#[derive(Debug, Clone, PartialEq)]
pub struct CosineParams<T> {
    pub scale: Vec<T>,
}

impl<T: Real> CosineParams<T> {
    pub fn uniform(heads: usize, scale: f64) -> Self {
        CosineParams {
            scale: vec![T::from_f64(scale); heads],
        }
    }

    pub fn random(seed: u64, heads: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CosineParams {
            scale: (0..heads)
                .map(|_| T::from_f64(rng.gen_range(1.0..30.0)))
                .collect(),
        }
    }

    fn effective(&self, h: usize) -> T {
        clamp(
            self.scale[h],
            T::from_f64(SCALE_MIN),
            T::from_f64(SCALE_MAX),
        )
    }
}

/// Attention result: outputs `[heads x seq_q x head_dim]` and the softmax
/// weights `[heads x seq_q x seq_kv]` (exact zeros where masked).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput<T> {
    pub output: Vec<T>,
    pub weights: Vec<T>,
}

/// Gradients with respect to the case inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrads<T> {
    pub dq: Vec<T>,
    pub dk: Vec<T>,
    pub dv: Vec<T>,
}

/// [`AttentionGrads`] plus the QK-norm parameter gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct QkNormGrads<T> {
    pub input: AttentionGrads<T>,
    pub d_q_gain: Vec<T>,
    pub d_q_bias: Vec<T>,
    pub d_k_gain: Vec<T>,
    pub d_k_bias: Vec<T>,
}

/// [`AttentionGrads`] plus the per-head scale gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineGrads<T> {
    pub input: AttentionGrads<T>,
    pub d_scale: Vec<T>,
}

fn clamp<T: Real>(v: T, lo: T, hi: T) -> T {
    if v < lo {
        lo
    } else if v > hi {
        hi
    } else {
        v
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

// (normalized_affine, xhat, inv_std) for one row.
fn layer_norm_row<T: Real>(x: &[T], gain: &[T], bias: &[T]) -> (Vec<T>, Vec<T>, T) {
    let n = T::from_usize(x.len());
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let inv_std = (var + T::from_f64(LN_EPS)).sqrt().recip();
    let xhat: Vec<T> = x.iter().map(|&v| (v - mean) * inv_std).collect();
    let y: Vec<T> = xhat
        .iter()
        .zip(gain.iter().zip(bias))
        .map(|(&xh, (&g, &b))| xh * g + b)
        .collect();
    (y, xhat, inv_std)
}

// dL/dx for one LayerNorm row given dL/dxhat.
fn layer_norm_backward_row<T: Real>(d_xhat: &[T], xhat: &[T], inv_std: T) -> Vec<T> {
    let n = T::from_usize(d_xhat.len());
    let mean_d = d_xhat.iter().copied().sum::<T>() / n;
    let mean_dx = d_xhat.iter().zip(xhat).map(|(&g, &xh)| g * xh).sum::<T>() / n;
    d_xhat
        .iter()
        .zip(xhat)
        .map(|(&g, &xh)| inv_std * (g - mean_d - xh * mean_dx))
        .collect()
}

// Softmax over the allowed entries of one logit row; masked entries stay
// exactly zero and never enter the max/sum.
fn masked_softmax_row<T: Real>(logits: &[T], allowed: impl Fn(usize) -> bool) -> Result<Vec<T>> {
    let mut max = None::<T>;
    for (j, &l) in logits.iter().enumerate() {
        if allowed(j) {
            max = Some(match max {
                Some(m) if m >= l => m,
                _ => l,
            });
        }
    }
    let max = max.ok_or_else(|| Error::Contract("query row has no allowed keys".into()))?;
    let mut out = vec![T::zero(); logits.len()];
    let mut sum = T::zero();
    for (j, &l) in logits.iter().enumerate() {
        if allowed(j) {
            let e = (l - max).exp();
            out[j] = e;
            sum += e;
        }
    }
    for w in out.iter_mut() {
        *w /= sum;
    }
    Ok(out)
}

// Shared epilogue: weights -> output.
fn weighted_values<T: Real>(case: &AttentionCase<T>, h: usize, i: usize, weights: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); case.head_dim];
    for j in 0..case.seq_kv {
        if !case.allowed(i, j) {
            continue;
        }
        let w = weights[j];
        for (o, &v) in out.iter_mut().zip(case.v_row(h, j)) {
            *o += w * v;
        }
    }
    out
}

/// Attention with LayerNorm applied to queries and keys before the scaled dot
/// product.
pub fn qk_norm_attention<T: Real>(
    case: &AttentionCase<T>,
    params: &QkNormParams<T>,
) -> Result<AttentionOutput<T>> {
    Ok(QkNormForward::run(case, params)?.into_output())
}

// Forward pass with the caches backward needs.
struct QkNormForward<T> {
    qhat: Vec<T>,
    khat: Vec<T>,
    q_xhat: Vec<T>,
    k_xhat: Vec<T>,
    q_inv_std: Vec<T>,
    k_inv_std: Vec<T>,
    output: Vec<T>,
    weights: Vec<T>,
}

impl<T: Real> QkNormForward<T> {
    fn run(case: &AttentionCase<T>, params: &QkNormParams<T>) -> Result<Self> {
        case.validate()?;
        let d = case.head_dim;
        let inv_sqrt_d = T::from_usize(d).sqrt().recip();
        let (hq, hkv) = (case.heads * case.seq_q, case.heads * case.seq_kv);
        let mut fwd = QkNormForward {
            qhat: vec![T::zero(); hq * d],
            khat: vec![T::zero(); hkv * d],
            q_xhat: vec![T::zero(); hq * d],
            k_xhat: vec![T::zero(); hkv * d],
            q_inv_std: vec![T::zero(); hq],
            k_inv_std: vec![T::zero(); hkv],
            output: vec![T::zero(); hq * d],
            weights: vec![T::zero(); case.heads * case.seq_q * case.seq_kv],
        };
        for h in 0..case.heads {
            let gq = &params.q_gain[h * d..(h + 1) * d];
            let bq = &params.q_bias[h * d..(h + 1) * d];
            let gk = &params.k_gain[h * d..(h + 1) * d];
            let bk = &params.k_bias[h * d..(h + 1) * d];
            for i in 0..case.seq_q {
                let (y, xhat, inv) = layer_norm_row(case.q_row(h, i), gq, bq);
                let r = h * case.seq_q + i;
                fwd.qhat[r * d..(r + 1) * d].copy_from_slice(&y);
                fwd.q_xhat[r * d..(r + 1) * d].copy_from_slice(&xhat);
                fwd.q_inv_std[r] = inv;
            }
            for j in 0..case.seq_kv {
                let (y, xhat, inv) = layer_norm_row(case.k_row(h, j), gk, bk);
                let r = h * case.seq_kv + j;
                fwd.khat[r * d..(r + 1) * d].copy_from_slice(&y);
                fwd.k_xhat[r * d..(r + 1) * d].copy_from_slice(&xhat);
                fwd.k_inv_std[r] = inv;
            }
            for i in 0..case.seq_q {
                let qi = &fwd.qhat[(h * case.seq_q + i) * d..(h * case.seq_q + i + 1) * d];
                let logits: Vec<T> = (0..case.seq_kv)
                    .map(|j| {
                        let kj = &fwd.khat[(h * case.seq_kv + j) * d..(h * case.seq_kv + j + 1) * d];
                        dot(qi, kj) * inv_sqrt_d
                    })
                    .collect();
                let w = masked_softmax_row(&logits, |j| case.allowed(i, j))?;
                let out = weighted_values(case, h, i, &w);
                let r = h * case.seq_q + i;
                fwd.output[r * d..(r + 1) * d].copy_from_slice(&out);
                fwd.weights[r * case.seq_kv..(r + 1) * case.seq_kv].copy_from_slice(&w);
            }
        }
        Ok(fwd)
    }

    fn into_output(self) -> AttentionOutput<T> {
        AttentionOutput {
            output: self.output,
            weights: self.weights,
        }
    }
}

/// Analytic backward of [`qk_norm_attention`] for an upstream gradient of the
/// output, `[heads x seq_q x head_dim]`.
pub fn qk_norm_attention_backward<T: Real>(
    case: &AttentionCase<T>,
    params: &QkNormParams<T>,
    upstream: &[T],
) -> Result<QkNormGrads<T>> {
    let d = case.head_dim;
    if upstream.len() != case.heads * case.seq_q * d {
        return Err(Error::Shape(format!(
            "upstream length {} != {}x{}x{}",
            upstream.len(),
            case.heads,
            case.seq_q,
            d
        )));
    }
    let fwd = QkNormForward::run(case, params)?;
    let inv_sqrt_d = T::from_usize(d).sqrt().recip();

    let mut grads = QkNormGrads {
        input: AttentionGrads {
            dq: vec![T::zero(); case.q.len()],
            dk: vec![T::zero(); case.k.len()],
            dv: vec![T::zero(); case.v.len()],
        },
        d_q_gain: vec![T::zero(); params.q_gain.len()],
        d_q_bias: vec![T::zero(); params.q_bias.len()],
        d_k_gain: vec![T::zero(); params.k_gain.len()],
        d_k_bias: vec![T::zero(); params.k_bias.len()],
    };

    for h in 0..case.heads {
        let mut d_khat = vec![T::zero(); case.seq_kv * d];
        for i in 0..case.seq_q {
            let r = h * case.seq_q + i;
            let d_out = &upstream[r * d..(r + 1) * d];
            let w = &fwd.weights[r * case.seq_kv..(r + 1) * case.seq_kv];

            // dL/dweights and the softmax row Jacobian.
            let mut dw = vec![T::zero(); case.seq_kv];
            for j in 0..case.seq_kv {
                if case.allowed(i, j) {
                    dw[j] = dot(d_out, case.v_row(h, j));
                }
            }
            let row_dot: T = (0..case.seq_kv)
                .filter(|&j| case.allowed(i, j))
                .map(|j| w[j] * dw[j])
                .sum();

            let qi = &fwd.qhat[r * d..(r + 1) * d];
            let mut d_qhat = vec![T::zero(); d];
            for j in 0..case.seq_kv {
                if !case.allowed(i, j) {
                    continue;
                }
                let d_logit = w[j] * (dw[j] - row_dot);
                let kr = h * case.seq_kv + j;
                let kj = &fwd.khat[kr * d..(kr + 1) * d];
                for c in 0..d {
                    d_qhat[c] += d_logit * kj[c] * inv_sqrt_d;
                    d_khat[j * d + c] += d_logit * qi[c] * inv_sqrt_d;
                }
                // dV accumulates the plain weights (output is linear in V).
                let dvj = &mut grads.input.dv[(kr) * d..(kr + 1) * d];
                for (dv, &g) in dvj.iter_mut().zip(d_out) {
                    *dv += w[j] * g;
                }
            }

            // Affine + LayerNorm backward for the query row.
            let xhat = &fwd.q_xhat[r * d..(r + 1) * d];
            let gain = &params.q_gain[h * d..(h + 1) * d];
            let mut d_xhat = vec![T::zero(); d];
            for c in 0..d {
                grads.d_q_gain[h * d + c] += d_qhat[c] * xhat[c];
                grads.d_q_bias[h * d + c] += d_qhat[c];
                d_xhat[c] = d_qhat[c] * gain[c];
            }
            let dx = layer_norm_backward_row(&d_xhat, xhat, fwd.q_inv_std[r]);
            grads.input.dq[r * d..(r + 1) * d].copy_from_slice(&dx);
        }

        // Affine + LayerNorm backward for each key row.
        for j in 0..case.seq_kv {
            let kr = h * case.seq_kv + j;
            let xhat = &fwd.k_xhat[kr * d..(kr + 1) * d];
            let gain = &params.k_gain[h * d..(h + 1) * d];
            let mut d_xhat = vec![T::zero(); d];
            for c in 0..d {
                grads.d_k_gain[h * d + c] += d_khat[j * d + c] * xhat[c];
                grads.d_k_bias[h * d + c] += d_khat[j * d + c];
                d_xhat[c] = d_khat[j * d + c] * gain[c];
            }
            let dx = layer_norm_backward_row(&d_xhat, xhat, fwd.k_inv_std[kr]);
            grads.input.dk[kr * d..(kr + 1) * d].copy_from_slice(&dx);
        }
    }
    Ok(grads)
}

// Cosine of two rows with an epsilon-floored denominator; the clamp guards
// float rounding past Cauchy-Schwarz.
fn cos_row<T: Real>(a: &[T], b: &[T]) -> (T, T, T, T) {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    let den = {
        let p = na * nb;
        let eps = T::from_f64(COS_EPS);
        if p > eps {
            p
        } else {
            eps
        }
    };
    let cos = clamp(dot(a, b) / den, -T::one(), T::one());
    (cos, na, nb, den)
}

/// Attention with logits `scale * cos(q_i, k_j)`, scale clamped per head.
/// Zero-norm rows are epsilon-stabilized, never NaN.
pub fn cosine_attention<T: Real>(
    case: &AttentionCase<T>,
    params: &CosineParams<T>,
) -> Result<AttentionOutput<T>> {
    case.validate()?;
    if params.scale.len() != case.heads {
        return Err(Error::Shape(format!(
            "{} scales for {} heads",
            params.scale.len(),
            case.heads
        )));
    }
    let d = case.head_dim;
    let mut output = vec![T::zero(); case.heads * case.seq_q * d];
    let mut weights = vec![T::zero(); case.heads * case.seq_q * case.seq_kv];
    for h in 0..case.heads {
        let s = params.effective(h);
        for i in 0..case.seq_q {
            let logits: Vec<T> = (0..case.seq_kv)
                .map(|j| s * cos_row(case.q_row(h, i), case.k_row(h, j)).0)
                .collect();
            let w = masked_softmax_row(&logits, |j| case.allowed(i, j))?;
            let out = weighted_values(case, h, i, &w);
            let r = h * case.seq_q + i;
            output[r * d..(r + 1) * d].copy_from_slice(&out);
            weights[r * case.seq_kv..(r + 1) * case.seq_kv].copy_from_slice(&w);
        }
    }
    Ok(AttentionOutput { output, weights })
}

/// Analytic backward of [`cosine_attention`].
pub fn cosine_attention_backward<T: Real>(
    case: &AttentionCase<T>,
    params: &CosineParams<T>,
    upstream: &[T],
) -> Result<CosineGrads<T>> {
    let d = case.head_dim;
    if upstream.len() != case.heads * case.seq_q * d {
        return Err(Error::Shape(format!(
            "upstream length {} != {}x{}x{}",
            upstream.len(),
            case.heads,
            case.seq_q,
            d
        )));
    }
    let fwd = cosine_attention(case, params)?;
    let eps = T::from_f64(COS_EPS);

    let mut grads = CosineGrads {
        input: AttentionGrads {
            dq: vec![T::zero(); case.q.len()],
            dk: vec![T::zero(); case.k.len()],
            dv: vec![T::zero(); case.v.len()],
        },
        d_scale: vec![T::zero(); params.scale.len()],
    };

    for h in 0..case.heads {
        let s = params.effective(h);
        // The clamp blocks the scale gradient outside its open interval.
        let scale_active =
            params.scale[h] > T::from_f64(SCALE_MIN) && params.scale[h] < T::from_f64(SCALE_MAX);
        for i in 0..case.seq_q {
            let r = h * case.seq_q + i;
            let d_out = &upstream[r * d..(r + 1) * d];
            let w = &fwd.weights[r * case.seq_kv..(r + 1) * case.seq_kv];

            let mut dw = vec![T::zero(); case.seq_kv];
            for j in 0..case.seq_kv {
                if case.allowed(i, j) {
                    dw[j] = dot(d_out, case.v_row(h, j));
                }
            }
            let row_dot: T = (0..case.seq_kv)
                .filter(|&j| case.allowed(i, j))
                .map(|j| w[j] * dw[j])
                .sum();

            let qi = case.q_row(h, i);
            for j in 0..case.seq_kv {
                if !case.allowed(i, j) {
                    continue;
                }
                let d_logit = w[j] * (dw[j] - row_dot);
                let kj = case.k_row(h, j);
                let (cos, nq, nk, den) = cos_row(qi, kj);
                if scale_active {
                    grads.d_scale[h] += d_logit * cos;
                }
                let d_cos = d_logit * s;
                let floored = nq * nk <= eps;
                for c in 0..d {
                    let (dq_c, dk_c) = if floored {
                        // Denominator pinned at eps: only the dot product varies.
                        (kj[c] / den, qi[c] / den)
                    } else {
                        (
                            kj[c] / den - cos * qi[c] / (nq * nq),
                            qi[c] / den - cos * kj[c] / (nk * nk),
                        )
                    };
                    grads.input.dq[r * d + c] += d_cos * dq_c;
                    grads.input.dk[(h * case.seq_kv + j) * d + c] += d_cos * dk_c;
                }
                let kr = h * case.seq_kv + j;
                let dvj = &mut grads.input.dv[kr * d..(kr + 1) * d];
                for (dv, &g) in dvj.iter_mut().zip(d_out) {
                    *dv += w[j] * g;
                }
            }
        }
    }
    Ok(grads)
}
