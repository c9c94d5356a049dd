//! Dynamic packing: budget-checked pairing of examples, one-hot-matrix
//! packing of token blocks, segment-id attention masks, and the streaming
//! pool heuristic that re-arranges a stream so long examples meet short ones
//! they can share a sequence with.

use crate::denoiser::DecoderMask;
use crate::error::{Error, Result};
use crate::modality::BudgetSet;
use crate::scalar::Real;

/// Encoder/decoder token counts of one example.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExampleLens {
    pub id: u64,
    pub enc_len: u32,
    pub dec_len: u32,
}

impl ExampleLens {
    pub fn validate(&self, budget: &BudgetSet) -> Result<()> {
        if self.enc_len == 0 || self.enc_len > budget.encoder_max {
            return Err(Error::range(
                "enc_len",
                self.enc_len as f64,
                1.0,
                budget.encoder_max as f64,
            ));
        }
        if self.dec_len == 0 || self.dec_len > budget.decoder_max {
            return Err(Error::range(
                "dec_len",
                self.dec_len as f64,
                1.0,
                budget.decoder_max as f64,
            ));
        }
        Ok(())
    }

    /// Size measure for "largest": total tokens.
    pub fn size(&self) -> u64 {
        self.enc_len as u64 + self.dec_len as u64
    }

    /// Larger size wins; ties go to the lower id.
    fn beats(&self, other: &ExampleLens) -> bool {
        (self.size(), std::cmp::Reverse(self.id)) > (other.size(), std::cmp::Reverse(other.id))
    }
}

/// True iff the pair fits the packed budgets.
pub fn can_pack(a: &ExampleLens, b: &ExampleLens, budget: &BudgetSet) -> bool {
    a.enc_len + b.enc_len <= budget.packed_encoder && a.dec_len + b.dec_len <= budget.packed_decoder
}

/// One example's actual token blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemberTokens {
    pub id: u64,
    pub enc: Vec<u32>,
    pub dec: Vec<u32>,
}

impl MemberTokens {
    pub fn lens(&self) -> ExampleLens {
        ExampleLens {
            id: self.id,
            enc_len: self.enc.len() as u32,
            dec_len: self.dec.len() as u32,
        }
    }
}

/// One-hot matrix `[rows x cols]` with at most one 1 per row, stored as the
/// source column of each row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackingMatrix {
    pub rows: usize,
    pub cols: usize,
    src: Vec<Option<usize>>,
}

impl PackingMatrix {
    fn new(rows: usize, cols: usize) -> Self {
        PackingMatrix {
            rows,
            cols,
            src: vec![None; rows],
        }
    }

    pub fn source_of(&self, row: usize) -> Option<usize> {
        self.src[row]
    }

    /// Multiply against a concatenated token vector; pad rows emit `pad`.
    pub fn apply_tokens(&self, concat: &[u32], pad: u32) -> Result<Vec<u32>> {
        if concat.len() != self.cols {
            return Err(Error::Shape(format!(
                "vector length {} != matrix cols {}",
                concat.len(),
                self.cols
            )));
        }
        Ok(self
            .src
            .iter()
            .map(|s| s.map_or(pad, |c| concat[c]))
            .collect())
    }

    /// Dense float form for matrix-product checks.
    pub fn to_dense<T: Real>(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.rows * self.cols];
        for (row, s) in self.src.iter().enumerate() {
            if let Some(col) = s {
                out[row * self.cols + col] = T::one();
            }
        }
        out
    }

    /// Scatter packed values back to source positions.
    pub fn unapply(&self, packed: &[u32]) -> Result<Vec<u32>> {
        if packed.len() != self.rows {
            return Err(Error::Shape(format!(
                "vector length {} != matrix rows {}",
                packed.len(),
                self.rows
            )));
        }
        let mut out = vec![0u32; self.cols];
        let mut seen = vec![false; self.cols];
        for (row, s) in self.src.iter().enumerate() {
            if let Some(col) = *s {
                if seen[col] {
                    return Err(Error::Contract(format!(
                        "source column {col} written twice"
                    )));
                }
                seen[col] = true;
                out[col] = packed[row];
            }
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::Contract("a source column was never packed".into()));
        }
        Ok(out)
    }
}

/// Pad value written into unused slots.
pub const PAD_TOKEN: u32 = 0;

/// One or two examples packed into a single encoder/decoder sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedBatch {
    pub members: Vec<u64>,
    /// Member (enc_len, dec_len), in slot order.
    pub member_lens: Vec<(u32, u32)>,
    pub enc_tokens: Vec<u32>,
    pub dec_tokens: Vec<u32>,
    /// Segment id per slot; `None` marks padding.
    pub enc_segments: Vec<Option<u8>>,
    pub dec_segments: Vec<Option<u8>>,
    pub p_enc: PackingMatrix,
    pub p_dec: PackingMatrix,
    /// Solo example that only fits the unpacked budgets.
    pub oversized: bool,
}

/// The three attention masks of a packed batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedMasks {
    /// `[enc x enc]` self mask.
    pub encoder: Vec<bool>,
    /// `[dec x dec]` self mask (segment gate AND per-member dynamic mask).
    pub decoder_self: Vec<bool>,
    /// `[dec x enc]` cross mask (segment gate only).
    pub cross: Vec<bool>,
}

fn fill_slots(
    blocks: &[&[u32]],
    budget_len: usize,
) -> (Vec<u32>, Vec<Option<u8>>, PackingMatrix) {
    let total: usize = blocks.iter().map(|b| b.len()).sum();
    let mut tokens = vec![PAD_TOKEN; budget_len];
    let mut segments = vec![None; budget_len];
    let mut matrix = PackingMatrix::new(budget_len, total);
    let mut slot = 0usize;
    let mut col = 0usize;
    for (seg, block) in blocks.iter().enumerate() {
        for &t in *block {
            tokens[slot] = t;
            segments[slot] = Some(seg as u8);
            matrix.src[slot] = Some(col);
            slot += 1;
            col += 1;
        }
    }
    (tokens, segments, matrix)
}

/// Pack one or two members into a batch. Pairs must satisfy [`can_pack`];
/// solos that exceed the packed budgets fall back to the unpacked maxima.
pub fn pack(members: &[MemberTokens], budget: &BudgetSet) -> Result<PackedBatch> {
    if members.is_empty() || members.len() > 2 {
        return Err(Error::Contract(format!(
            "a packed sequence holds 1 or 2 members, got {}",
            members.len()
        )));
    }
    let lens: Vec<ExampleLens> = members.iter().map(MemberTokens::lens).collect();
    for l in &lens {
        l.validate(budget)?;
    }
    let oversized = members.len() == 1
        && (lens[0].enc_len > budget.packed_encoder || lens[0].dec_len > budget.packed_decoder);
    if members.len() == 2 && !can_pack(&lens[0], &lens[1], budget) {
        return Err(Error::Budget(format!(
            "members {} and {} exceed the packed budgets {}/{}",
            lens[0].id, lens[1].id, budget.packed_encoder, budget.packed_decoder
        )));
    }
    let (enc_budget, dec_budget) = if oversized {
        (budget.encoder_max, budget.decoder_max)
    } else {
        (budget.packed_encoder, budget.packed_decoder)
    };

    let enc_blocks: Vec<&[u32]> = members.iter().map(|m| m.enc.as_slice()).collect();
    let dec_blocks: Vec<&[u32]> = members.iter().map(|m| m.dec.as_slice()).collect();
    let (enc_tokens, enc_segments, p_enc) = fill_slots(&enc_blocks, enc_budget as usize);
    let (dec_tokens, dec_segments, p_dec) = fill_slots(&dec_blocks, dec_budget as usize);

    Ok(PackedBatch {
        members: members.iter().map(|m| m.id).collect(),
        member_lens: lens.iter().map(|l| (l.enc_len, l.dec_len)).collect(),
        enc_tokens,
        dec_tokens,
        enc_segments,
        dec_segments,
        p_enc,
        p_dec,
        oversized,
    })
}

/// Recover the original member blocks, bit-exactly.
pub fn unpack(batch: &PackedBatch) -> Result<Vec<MemberTokens>> {
    let enc_concat = batch.p_enc.unapply(&batch.enc_tokens)?;
    let dec_concat = batch.p_dec.unapply(&batch.dec_tokens)?;
    let mut out = Vec::with_capacity(batch.members.len());
    let (mut e, mut d) = (0usize, 0usize);
    for (i, &id) in batch.members.iter().enumerate() {
        let (el, dl) = batch.member_lens[i];
        out.push(MemberTokens {
            id,
            enc: enc_concat[e..e + el as usize].to_vec(),
            dec: dec_concat[d..d + dl as usize].to_vec(),
        });
        e += el as usize;
        d += dl as usize;
    }
    Ok(out)
}

fn same_segment(a: Option<u8>, b: Option<u8>) -> bool {
    matches!((a, b), (Some(x), Some(y)) if x == y)
}

/// Build the batch attention masks from segment ids and each member's dynamic
/// decoder mask (in slot order).
pub fn build_masks(
    enc_segments: &[Option<u8>],
    dec_segments: &[Option<u8>],
    member_masks: &[&DecoderMask],
) -> Result<PackedMasks> {
    let le = enc_segments.len();
    let ld = dec_segments.len();

    let mut encoder = vec![false; le * le];
    for i in 0..le {
        for j in 0..le {
            encoder[i * le + j] = same_segment(enc_segments[i], enc_segments[j]);
        }
    }

    // Member start offsets in the decoder slots.
    let mut starts = Vec::with_capacity(member_masks.len());
    let mut expected = 0usize;
    for mask in member_masks {
        starts.push(expected);
        expected += mask.n;
    }
    let real_dec = dec_segments.iter().filter(|s| s.is_some()).count();
    if expected != real_dec {
        return Err(Error::Shape(format!(
            "member decoder masks cover {expected} slots, batch has {real_dec} real slots"
        )));
    }

    let mut decoder_self = vec![false; ld * ld];
    for i in 0..ld {
        for j in 0..ld {
            if !same_segment(dec_segments[i], dec_segments[j]) {
                continue;
            }
            let seg = dec_segments[i].unwrap() as usize;
            let start = starts[seg];
            decoder_self[i * ld + j] = member_masks[seg].allows(i - start, j - start);
        }
    }

    let mut cross = vec![false; ld * le];
    for i in 0..ld {
        for j in 0..le {
            cross[i * le + j] = same_segment(dec_segments[i], enc_segments[j]);
        }
    }

    Ok(PackedMasks {
        encoder,
        decoder_self,
        cross,
    })
}

/// What the streaming heuristic emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Emission {
    /// `first` came from the pool, `second` is the arrival that paired with it.
    Pair {
        first: ExampleLens,
        second: ExampleLens,
    },
    Solo {
        example: ExampleLens,
        oversized: bool,
    },
}

impl Emission {
    pub fn example_count(&self) -> u64 {
        match self {
            Emission::Pair { .. } => 2,
            Emission::Solo { .. } => 1,
        }
    }
}

/// Counters accumulated over a stream.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PackStats {
    pub examples: u64,
    pub emissions: u64,
    pub pairs: u64,
    pub solos: u64,
    pub oversized_solos: u64,
    pub real_tokens: u64,
    pub slot_tokens: u64,
    /// High-water mark of the pool.
    pub max_pool: usize,
}

impl PackStats {
    /// Merge shard counters (order-independent).
    pub fn merge(&mut self, other: &PackStats) {
        self.examples += other.examples;
        self.emissions += other.emissions;
        self.pairs += other.pairs;
        self.solos += other.solos;
        self.oversized_solos += other.oversized_solos;
        self.real_tokens += other.real_tokens;
        self.slot_tokens += other.slot_tokens;
        self.max_pool = self.max_pool.max(other.max_pool);
    }
}

/// Utilization summary of a packed stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Utilization {
    /// Real tokens over emitted slots.
    pub slot_utilization: f64,
    /// Solo emissions over examples.
    pub solo_rate: f64,
    /// Packed utilization over the pad-everything-to-maximum baseline.
    pub density_gain: f64,
}

/// Compute utilization from stream counters.
pub fn utilization(stats: &PackStats, budget: &BudgetSet) -> Result<Utilization> {
    if stats.emissions == 0 {
        return Err(Error::Contract("no emissions to summarize".into()));
    }
    let slot_utilization = stats.real_tokens as f64 / stats.slot_tokens as f64;
    let baseline_slots = stats.examples * (budget.encoder_max + budget.decoder_max) as u64;
    let baseline = stats.real_tokens as f64 / baseline_slots as f64;
    Ok(Utilization {
        slot_utilization,
        solo_rate: stats.solos as f64 / stats.examples as f64,
        density_gain: slot_utilization / baseline,
    })
}

/// Maximum examples held by the streaming pool.
pub const POOL_CAPACITY: usize = 10;

/// Streaming re-arrangement pool. Single-owner mutable state: one stream, one
/// pool.
#[derive(Debug, Clone)]
pub struct PackerPool {
    budget: BudgetSet,
    held: Vec<ExampleLens>,
    stats: PackStats,
}

impl PackerPool {
    pub fn new(budget: BudgetSet) -> Self {
        PackerPool {
            budget,
            held: Vec::with_capacity(POOL_CAPACITY + 1),
            stats: PackStats::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.held.len()
    }

    pub fn is_empty(&self) -> bool {
        self.held.is_empty()
    }

    pub fn stats(&self) -> PackStats {
        self.stats
    }

    fn record(&mut self, emission: Emission) -> Emission {
        self.stats.emissions += 1;
        match emission {
            Emission::Pair { first, second } => {
                self.stats.pairs += 1;
                self.stats.real_tokens += first.size() + second.size();
                self.stats.slot_tokens +=
                    (self.budget.packed_encoder + self.budget.packed_decoder) as u64;
            }
            Emission::Solo { example, oversized } => {
                self.stats.solos += 1;
                self.stats.real_tokens += example.size();
                self.stats.slot_tokens += if oversized {
                    self.stats.oversized_solos += 1;
                    (self.budget.encoder_max + self.budget.decoder_max) as u64
                } else {
                    (self.budget.packed_encoder + self.budget.packed_decoder) as u64
                };
            }
        }
        emission
    }

    // Index of the largest held example (ties to the lowest id).
    fn largest_index(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, ex) in self.held.iter().enumerate() {
            match best {
                Some(b) if !ex.beats(&self.held[b]) => {}
                _ => best = Some(i),
            }
        }
        best
    }

    /// Feed one example; possibly emits a pair or an overflow solo.
    pub fn push(&mut self, example: ExampleLens) -> Result<Option<Emission>> {
        example.validate(&self.budget)?;
        self.stats.examples += 1;

        // A single example beyond the packed budgets can never pair; it goes
        // straight out under the unpacked budgets.
        if example.enc_len > self.budget.packed_encoder
            || example.dec_len > self.budget.packed_decoder
        {
            return Ok(Some(self.record(Emission::Solo {
                example,
                oversized: true,
            })));
        }

        // Pair with the largest pool member that fits.
        let mut best: Option<usize> = None;
        for (i, held) in self.held.iter().enumerate() {
            if !can_pack(held, &example, &self.budget) {
                continue;
            }
            match best {
                Some(b) if !held.beats(&self.held[b]) => {}
                _ => best = Some(i),
            }
        }
        if let Some(i) = best {
            let first = self.held.remove(i);
            return Ok(Some(self.record(Emission::Pair {
                first,
                second: example,
            })));
        }

        self.held.push(example);
        self.stats.max_pool = self.stats.max_pool.max(self.held.len().min(POOL_CAPACITY));
        if self.held.len() > POOL_CAPACITY {
            let i = self.largest_index().expect("pool is non-empty");
            let example = self.held.remove(i);
            return Ok(Some(self.record(Emission::Solo {
                example,
                oversized: false,
            })));
        }
        Ok(None)
    }

    /// End of stream: drain the pool as solos, largest first.
    pub fn finish(&mut self) -> Vec<Emission> {
        let mut out = Vec::with_capacity(self.held.len());
        while let Some(i) = self.largest_index() {
            let example = self.held.remove(i);
            out.push(self.record(Emission::Solo {
                example,
                oversized: false,
            }));
        }
        out
    }
}

/// Run the heuristic over a whole stream.
pub fn stream_pack(
    stream: impl IntoIterator<Item = ExampleLens>,
    budget: &BudgetSet,
) -> Result<(Vec<Emission>, PackStats)> {
    let mut pool = PackerPool::new(*budget);
    let mut emissions = Vec::new();
    for example in stream {
        if let Some(e) = pool.push(example)? {
            emissions.push(e);
        }
        debug_assert!(pool.len() <= POOL_CAPACITY);
    }
    emissions.extend(pool.finish());
    Ok((emissions, pool.stats()))
}

/// Bundled synthetic workload: 80% short examples (<= 400 encoder / 600
/// decoder tokens), 20% near the pairing edge. Deterministic under seed.
pub fn short_heavy_workload(n: usize, seed: u64) -> Vec<ExampleLens> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            if rng.gen_bool(0.8) {
                ExampleLens {
                    id: i as u64,
                    enc_len: rng.gen_range(50..=400),
                    dec_len: rng.gen_range(50..=600),
                }
            } else {
                ExampleLens {
                    id: i as u64,
                    enc_len: rng.gen_range(400..=464),
                    dec_len: rng.gen_range(600..=680),
                }
            }
        })
        .collect()
}
