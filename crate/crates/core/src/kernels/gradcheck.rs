//! Central-finite-difference validation of the attention backward passes.
//!
//! The oracle side only ever calls the forward pass: the loss is
//! `sum(output * upstream)` for a fixed random upstream, and each parameter
//! is perturbed by `+/-h` to estimate its gradient. The analytic side is the
//! backward pass under test.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::attention::{
    cosine_attention, cosine_attention_backward, qk_norm_attention, qk_norm_attention_backward,
    AttentionCase, AttentionKind, CosineParams, QkNormParams,
};
use crate::error::Result;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Elementwise relative-error threshold.
pub const FD_TOLERANCE: f64 = 1e-6;

/// Worst elementwise error for one parameter group.
#[derive(Debug, Clone)]
pub struct ParamReport {
    pub name: &'static str,
    pub max_rel_err: f64,
    /// Flat index of the worst element within the group.
    pub worst_index: usize,
}

/// Result of one gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub kind: AttentionKind,
    pub seed: u64,
    pub per_param: Vec<ParamReport>,
    pub threshold: f64,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.per_param
            .iter()
            .map(|p| p.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn pass(&self) -> bool {
        self.max_rel_err() <= self.threshold
    }
}

// Relative error with a unit floor so exact zeros compare cleanly.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / 1.0f64.max(a.abs()).max(n.abs())
}

fn loss(output: &[f64], upstream: &[f64]) -> f64 {
    output.iter().zip(upstream).map(|(o, u)| o * u).sum()
}

fn compare(name: &'static str, analytic: &[f64], numeric: &[f64]) -> ParamReport {
    let mut worst = ParamReport {
        name,
        max_rel_err: 0.0,
        worst_index: 0,
    };
    for (idx, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let e = rel_err(a, n);
        if e > worst.max_rel_err {
            worst.max_rel_err = e;
            worst.worst_index = idx;
        }
    }
    worst
}

// FD gradient of `loss(forward())` with respect to each element of `values`,
// where `forward` re-runs with the perturbed vector swapped in.
fn fd_grad(values: &[f64], mut eval: impl FnMut(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; values.len()];
    let mut work = values.to_vec();
    for i in 0..values.len() {
        let orig = work[i];
        work[i] = orig + FD_STEP;
        let plus = eval(&work)?;
        work[i] = orig - FD_STEP;
        let minus = eval(&work)?;
        work[i] = orig;
        grad[i] = (plus - minus) / (2.0 * FD_STEP);
    }
    Ok(grad)
}

/// Check one random case of the given kind. `sabotage` deliberately corrupts
/// one analytic gradient entry; it exists so the failure path of this harness
/// is itself testable.
pub fn check_attention(
    kind: AttentionKind,
    heads: usize,
    seq: usize,
    head_dim: usize,
    seed: u64,
    sabotage: bool,
) -> Result<GradCheckReport> {
    let case = AttentionCase::<f64>::random_causal(seed, heads, seq, head_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let upstream: Vec<f64> = (0..heads * seq * head_dim)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();

    let mut per_param = Vec::new();
    match kind {
        AttentionKind::QkNorm => {
            let params = QkNormParams::<f64>::random(seed.wrapping_add(1), heads, head_dim);
            let mut grads = qk_norm_attention_backward(&case, &params, &upstream)?;
            if sabotage {
                grads.input.dq[0] += 1e-3;
            }

            let run_case = |q: &[f64], k: &[f64], v: &[f64]| -> Result<f64> {
                let mut c = case.clone();
                c.q = q.to_vec();
                c.k = k.to_vec();
                c.v = v.to_vec();
                Ok(loss(&qk_norm_attention(&c, &params)?.output, &upstream))
            };
            let fd_q = fd_grad(&case.q, |q| run_case(q, &case.k, &case.v))?;
            let fd_k = fd_grad(&case.k, |k| run_case(&case.q, k, &case.v))?;
            let fd_v = fd_grad(&case.v, |v| run_case(&case.q, &case.k, v))?;
            per_param.push(compare("q", &grads.input.dq, &fd_q));
            per_param.push(compare("k", &grads.input.dk, &fd_k));
            per_param.push(compare("v", &grads.input.dv, &fd_v));

            let with_params = |p: QkNormParams<f64>| -> Result<f64> {
                Ok(loss(&qk_norm_attention(&case, &p)?.output, &upstream))
            };
            let fd = fd_grad(&params.q_gain, |g| {
                let mut p = params.clone();
                p.q_gain = g.to_vec();
                with_params(p)
            })?;
            per_param.push(compare("q_gain", &grads.d_q_gain, &fd));
            let fd = fd_grad(&params.q_bias, |b| {
                let mut p = params.clone();
                p.q_bias = b.to_vec();
                with_params(p)
            })?;
            per_param.push(compare("q_bias", &grads.d_q_bias, &fd));
            let fd = fd_grad(&params.k_gain, |g| {
                let mut p = params.clone();
                p.k_gain = g.to_vec();
                with_params(p)
            })?;
            per_param.push(compare("k_gain", &grads.d_k_gain, &fd));
            let fd = fd_grad(&params.k_bias, |b| {
                let mut p = params.clone();
                p.k_bias = b.to_vec();
                with_params(p)
            })?;
            per_param.push(compare("k_bias", &grads.d_k_bias, &fd));
        }
        AttentionKind::Cosine => {
            let params = CosineParams::<f64>::random(seed.wrapping_add(1), heads);
            let mut grads = cosine_attention_backward(&case, &params, &upstream)?;
            if sabotage {
                grads.input.dq[0] += 1e-3;
            }

            let run_case = |q: &[f64], k: &[f64], v: &[f64]| -> Result<f64> {
                let mut c = case.clone();
                c.q = q.to_vec();
                c.k = k.to_vec();
                c.v = v.to_vec();
                Ok(loss(&cosine_attention(&c, &params)?.output, &upstream))
            };
            let fd_q = fd_grad(&case.q, |q| run_case(q, &case.k, &case.v))?;
            let fd_k = fd_grad(&case.k, |k| run_case(&case.q, k, &case.v))?;
            let fd_v = fd_grad(&case.v, |v| run_case(&case.q, &case.k, v))?;
            per_param.push(compare("q", &grads.input.dq, &fd_q));
            per_param.push(compare("k", &grads.input.dk, &fd_k));
            per_param.push(compare("v", &grads.input.dv, &fd_v));

            let fd = fd_grad(&params.scale, |s| {
                let p = CosineParams { scale: s.to_vec() };
                Ok(loss(&cosine_attention(&case, &p)?.output, &upstream))
            })?;
            per_param.push(compare("scale", &grads.d_scale, &fd));
        }
    }

    Ok(GradCheckReport {
        kind,
        seed,
        per_param,
        threshold: FD_TOLERANCE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qk_norm_matches_finite_differences() {
        for seed in 0..3 {
            let report = check_attention(AttentionKind::QkNorm, 2, 4, 8, seed, false).unwrap();
            assert!(
                report.pass(),
                "seed {seed}: max rel err {}",
                report.max_rel_err()
            );
        }
    }

    #[test]
    fn cosine_matches_finite_differences() {
        for seed in 0..3 {
            let report = check_attention(AttentionKind::Cosine, 2, 4, 8, seed, false).unwrap();
            assert!(
                report.pass(),
                "seed {seed}: max rel err {}",
                report.max_rel_err()
            );
        }
    }

    #[test]
    fn sabotage_is_detected() {
        let report = check_attention(AttentionKind::QkNorm, 1, 3, 4, 0, true).unwrap();
        assert!(!report.pass());
        let worst = report
            .per_param
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
            .unwrap();
        assert_eq!(worst.name, "q");
        assert_eq!(worst.worst_index, 0);
    }
}
