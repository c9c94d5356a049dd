//! Binary fixture format for attention cases: a `.bin` of little-endian f64
//! arrays (Q then K then V) next to a `.json` sidecar carrying shapes, seed,
//! the mask as run lengths, and a digest of the expected output.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::attention::AttentionCase;
use crate::error::{Error, Result};
use crate::rle::{decode_runs, encode_runs};

/// Sidecar metadata stored as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureMeta {
    pub heads: usize,
    pub seq_q: usize,
    pub seq_kv: usize,
    pub head_dim: usize,
    pub seed: u64,
    pub mask_runs: Vec<u32>,
    /// SHA-256 of the expected output's little-endian bytes.
    pub expected_digest: String,
}

/// Hex SHA-256 digest of a float array's little-endian bytes.
pub fn digest_f64(values: &[f64]) -> String {
    let mut hasher = Sha256::new();
    for v in values {
        hasher.update(v.to_le_bytes());
    }
    hex::encode(hasher.finalize())
}

fn bin_path(base: &Path) -> std::path::PathBuf {
    base.with_extension("bin")
}

fn json_path(base: &Path) -> std::path::PathBuf {
    base.with_extension("json")
}

/// Write `{base}.bin` and `{base}.json` for a case and its expected output.
pub fn write_fixture(
    base: &Path,
    case: &AttentionCase<f64>,
    seed: u64,
    expected_output: &[f64],
) -> Result<()> {
    case.validate()?;
    let mut bytes = Vec::with_capacity((case.q.len() + case.k.len() + case.v.len()) * 8);
    for v in case.q.iter().chain(&case.k).chain(&case.v) {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(bin_path(base), bytes)?;

    let meta = FixtureMeta {
        heads: case.heads,
        seq_q: case.seq_q,
        seq_kv: case.seq_kv,
        head_dim: case.head_dim,
        seed,
        mask_runs: encode_runs(&case.mask),
        expected_digest: digest_f64(expected_output),
    };
    let json = serde_json::to_string_pretty(&meta)
        .map_err(|e| Error::Schema(format!("sidecar serialization: {e}")))?;
    fs::write(json_path(base), json)?;
    Ok(())
}

/// Read a fixture back. The returned case carries default (zero) positions.
pub fn read_fixture(base: &Path) -> Result<(AttentionCase<f64>, FixtureMeta)> {
    let json = fs::read_to_string(json_path(base))?;
    let meta: FixtureMeta =
        serde_json::from_str(&json).map_err(|e| Error::Schema(format!("sidecar parse: {e}")))?;

    let bytes = fs::read(bin_path(base))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Schema("binary payload is not f64-aligned".into()));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let nq = meta.heads * meta.seq_q * meta.head_dim;
    let nkv = meta.heads * meta.seq_kv * meta.head_dim;
    if values.len() != nq + 2 * nkv {
        return Err(Error::Schema(format!(
            "binary payload holds {} values, sidecar shapes need {}",
            values.len(),
            nq + 2 * nkv
        )));
    }
    let mask = decode_runs(&meta.mask_runs, meta.seq_q * meta.seq_kv)?;
    let case = AttentionCase::new(
        meta.heads,
        meta.seq_q,
        meta.seq_kv,
        meta.head_dim,
        values[..nq].to_vec(),
        values[nq..nq + nkv].to_vec(),
        values[nq + nkv..].to_vec(),
        mask,
    )?;
    Ok((case, meta))
}

#[cfg(test)]
mod tests {
    use super::super::attention::{qk_norm_attention, QkNormParams};
    use super::*;

    #[test]
    fn fixture_round_trip_and_digest() {
        let dir = std::env::temp_dir().join("anymodal-fixture-test");
        fs::create_dir_all(&dir).unwrap();
        let base = dir.join("case0");

        let case = AttentionCase::<f64>::random_causal(42, 2, 6, 8);
        let out = qk_norm_attention(&case, &QkNormParams::identity(2, 8)).unwrap();
        write_fixture(&base, &case, 42, &out.output).unwrap();

        let (loaded, meta) = read_fixture(&base).unwrap();
        assert_eq!(loaded.q, case.q);
        assert_eq!(loaded.k, case.k);
        assert_eq!(loaded.v, case.v);
        assert_eq!(loaded.mask, case.mask);
        assert_eq!(meta.seed, 42);

        let again = qk_norm_attention(&loaded, &QkNormParams::identity(2, 8)).unwrap();
        assert_eq!(digest_f64(&again.output), meta.expected_digest);
    }
}
