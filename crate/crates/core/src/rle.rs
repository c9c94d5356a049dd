//! Run-length encoding for boolean masks, used by the serialized plan and
//! mask formats. Runs alternate starting with `true`; a leading zero-length
//! run means the mask starts with `false`.

use crate::error::{Error, Result};

/// Encode a boolean row into alternating run lengths.
pub fn encode_runs(bits: &[bool]) -> Vec<u32> {
    let mut runs = Vec::new();
    let mut current = true;
    let mut count = 0u32;
    for &b in bits {
        if b == current {
            count += 1;
        } else {
            runs.push(count);
            current = b;
            count = 1;
        }
    }
    runs.push(count);
    // Trailing empty run from an all-false prefix start: only keep if nonzero
    // content exists.
    if runs == [0] {
        runs.clear();
    }
    runs
}

/// Decode alternating run lengths back into `len` booleans.
pub fn decode_runs(runs: &[u32], len: usize) -> Result<Vec<bool>> {
    let mut out = Vec::with_capacity(len);
    let mut current = true;
    for &run in runs {
        for _ in 0..run {
            out.push(current);
        }
        current = !current;
    }
    if out.len() != len {
        return Err(Error::Schema(format!(
            "run lengths cover {} bits, expected {len}",
            out.len()
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn basic_runs() {
        assert_eq!(encode_runs(&[true, true, false, true]), vec![2, 1, 1]);
        assert_eq!(encode_runs(&[false, false]), vec![0, 2]);
        assert_eq!(encode_runs(&[]), Vec::<u32>::new());
    }

    proptest! {
        #[test]
        fn round_trip(bits in proptest::collection::vec(any::<bool>(), 0..200)) {
            let runs = encode_runs(&bits);
            prop_assert_eq!(decode_runs(&runs, bits.len()).unwrap(), bits);
        }
    }
}
