//! Structure-to-token codecs over the location-bin range, plus the
//! constrained-decoding masks for keypoint prediction.

use super::geometry::{
    ActionCommand, Box2D, CameraPose, Cuboid3D, KeypointSet, Point2D, KEYPOINT_COUNT,
};
use super::{dequantize, quantize, TokenRange, TokenSpace};
use crate::error::{Error, Result};

/// Text printed for an invisible keypoint; tokenized through the injected
/// tokenizer when encoding keypoint sets.
pub const MISSING_KEYPOINT_TEXT: &str = "MISSING";

/// External text tokenizer. The toolkit never implements BPE; anything that
/// maps text to ids inside the text range plugs in here.
pub trait TextTokenizer {
    fn encode_text(&self, text: &str) -> Vec<u32>;
    fn decode_text(&self, ids: &[u32]) -> String;
}

/// Byte-level fallback tokenizer: one id per byte. Deterministic and
/// reversible, used by the CLI and tests when no external vocabulary is wired
/// in.
#[derive(Debug, Clone, Copy, Default)]
pub struct ByteTokenizer;

impl TextTokenizer for ByteTokenizer {
    fn encode_text(&self, text: &str) -> Vec<u32> {
        text.bytes().map(u32::from).collect()
    }

    fn decode_text(&self, ids: &[u32]) -> String {
        let bytes: Vec<u8> = ids.iter().map(|&id| (id & 0xff) as u8).collect();
        String::from_utf8_lossy(&bytes).into_owned()
    }
}

/// Allowed-token set over the full vocabulary, stored as a bitset. The
/// complement is always the exact remainder of the vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenMask {
    words: Vec<u64>,
    vocab: u32,
}

impl TokenMask {
    pub fn empty(vocab: u32) -> Self {
        TokenMask {
            words: vec![0; (vocab as usize + 63) / 64],
            vocab,
        }
    }

    pub fn vocab(&self) -> u32 {
        self.vocab
    }

    pub fn insert(&mut self, id: u32) {
        debug_assert!(id < self.vocab);
        self.words[(id / 64) as usize] |= 1u64 << (id % 64);
    }

    pub fn allows(&self, id: u32) -> bool {
        if id >= self.vocab {
            return false;
        }
        self.words[(id / 64) as usize] >> (id % 64) & 1 == 1
    }

    /// Number of allowed ids.
    pub fn cardinality(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// The disallowed side of the partition.
    pub fn complement(&self) -> TokenMask {
        let mut out = TokenMask {
            words: self.words.iter().map(|w| !w).collect(),
            vocab: self.vocab,
        };
        // Clear bits past the vocabulary end.
        let tail = self.vocab as usize % 64;
        if tail != 0 {
            if let Some(last) = out.words.last_mut() {
                *last &= (1u64 << tail) - 1;
            }
        }
        out
    }

    pub fn allowed_ids(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.vocab).filter(move |&id| self.allows(id))
    }
}

/// Normalization ranges for cuboid encoding. The depth maps by `z / z_max`,
/// log-dimensions map affinely from `[-dim_bound, dim_bound]`, rotation
/// components from `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CuboidNorm {
    /// Maximum virtual depth in meters.
    pub z_max: f64,
    /// Symmetric bound on log-normalized dimensions.
    pub dim_bound: f64,
}

impl Default for CuboidNorm {
    fn default() -> Self {
        CuboidNorm {
            z_max: 100.0,
            dim_bound: 4.0,
        }
    }
}

/// Declared physical ranges for continuous action deltas, per dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionRanges {
    /// `(lo, hi)` per delta slot, at most 6 (position x3, rotation x3).
    pub deltas: Vec<(f64, f64)>,
}

impl ActionRanges {
    pub fn new(deltas: Vec<(f64, f64)>) -> Result<Self> {
        if deltas.len() > 6 {
            return Err(Error::Config(format!(
                "at most 6 delta ranges (position x3, rotation x3), got {}",
                deltas.len()
            )));
        }
        for &(lo, hi) in &deltas {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Config(format!("bad delta range ({lo}, {hi})")));
            }
        }
        Ok(ActionRanges { deltas })
    }

    /// Six symmetric unit ranges; a placeholder until a dataset declares its own.
    pub fn unit() -> Self {
        ActionRanges {
            deltas: vec![(-1.0, 1.0); 6],
        }
    }
}

impl Default for ActionRanges {
    fn default() -> Self {
        ActionRanges::unit()
    }
}

fn to_unit(name: &'static str, v: f64, lo: f64, hi: f64) -> Result<f64> {
    if !(v >= lo && v <= hi) {
        return Err(Error::range(name, v, lo, hi));
    }
    Ok((v - lo) / (hi - lo))
}

fn loc_token(space: &TokenSpace, v: f64) -> Result<u32> {
    space.location(quantize(v, space.location_bins())?)
}

fn loc_value(space: &TokenSpace, token: u32) -> Result<f64> {
    match space.resolve(token)? {
        (TokenRange::Location, local) => dequantize(local, space.location_bins()),
        (range, _) => Err(Error::Schema(format!(
            "expected a location token, got id {token} in {range:?}"
        ))),
    }
}

/// Encode a point as `[y, x]` location tokens.
pub fn encode_point(p: &Point2D, space: &TokenSpace) -> Result<[u32; 2]> {
    p.validate()?;
    Ok([loc_token(space, p.y)?, loc_token(space, p.x)?])
}

/// Decode `[y, x]` location tokens back to bin-center coordinates.
pub fn decode_point(tokens: &[u32; 2], space: &TokenSpace) -> Result<Point2D> {
    Point2D::new(loc_value(space, tokens[0])?, loc_value(space, tokens[1])?)
}

/// Encode a box as `[y1, x1, y2, x2]` location tokens.
pub fn encode_box(b: &Box2D, space: &TokenSpace) -> Result<[u32; 4]> {
    b.validate()?;
    Ok([
        loc_token(space, b.y1)?,
        loc_token(space, b.x1)?,
        loc_token(space, b.y2)?,
        loc_token(space, b.x2)?,
    ])
}

/// Decode `[y1, x1, y2, x2]` tokens; corners that come back out of order are
/// a malformed box.
pub fn decode_box(tokens: &[u32; 4], space: &TokenSpace) -> Result<Box2D> {
    let y1 = loc_value(space, tokens[0])?;
    let x1 = loc_value(space, tokens[1])?;
    let y2 = loc_value(space, tokens[2])?;
    let x2 = loc_value(space, tokens[3])?;
    if y1 > y2 || x1 > x2 {
        return Err(Error::MalformedBox(format!("[{y1}, {x1}, {y2}, {x2}]")));
    }
    Box2D::new(y1, x1, y2, x2)
}

/// Encode a camera pose as `[theta, phi, r]` location tokens. Angles map
/// affinely from `[-pi, pi]`, distance by `r / r_max`.
pub fn encode_camera_pose(c: &CameraPose, r_max: f64, space: &TokenSpace) -> Result<[u32; 3]> {
    c.validate()?;
    use std::f64::consts::PI;
    let t = to_unit("theta", c.theta, -PI, PI)?;
    let p = to_unit("phi", c.phi, -PI, PI)?;
    let r = to_unit("r", c.r, 0.0, r_max)?;
    Ok([
        loc_token(space, t)?,
        loc_token(space, p)?,
        loc_token(space, r)?,
    ])
}

/// Decode `[theta, phi, r]` tokens back to bin-center pose values.
pub fn decode_camera_pose(tokens: &[u32; 3], r_max: f64, space: &TokenSpace) -> Result<CameraPose> {
    use std::f64::consts::PI;
    let t = loc_value(space, tokens[0])?;
    let p = loc_value(space, tokens[1])?;
    let r = loc_value(space, tokens[2])?;
    CameraPose::new(t * 2.0 * PI - PI, p * 2.0 * PI - PI, r * r_max)
}

/// Encode a cuboid as exactly 12 location tokens in the order
/// `[u, v, z, w_bar, h_bar, l_bar, p1..p6]`.
pub fn encode_cuboid(c: &Cuboid3D, norm: &CuboidNorm, space: &TokenSpace) -> Result<[u32; 12]> {
    c.validate()?;
    let mut unit = [0.0f64; 12];
    unit[0] = to_unit("u", c.u, 0.0, 1.0)?;
    unit[1] = to_unit("v", c.v, 0.0, 1.0)?;
    unit[2] = to_unit("z", c.z, 0.0, norm.z_max)?;
    unit[3] = to_unit("w_bar", c.w_bar, -norm.dim_bound, norm.dim_bound)?;
    unit[4] = to_unit("h_bar", c.h_bar, -norm.dim_bound, norm.dim_bound)?;
    unit[5] = to_unit("l_bar", c.l_bar, -norm.dim_bound, norm.dim_bound)?;
    for (i, &p) in c.rotation.iter().enumerate() {
        unit[6 + i] = to_unit("rotation component", p, -1.0, 1.0)?;
    }
    let mut out = [0u32; 12];
    for (slot, &v) in out.iter_mut().zip(unit.iter()) {
        *slot = loc_token(space, v)?;
    }
    Ok(out)
}

/// Decode 12 cuboid tokens back to bin-center field values.
pub fn decode_cuboid(tokens: &[u32; 12], norm: &CuboidNorm, space: &TokenSpace) -> Result<Cuboid3D> {
    let mut unit = [0.0f64; 12];
    for (u, &t) in unit.iter_mut().zip(tokens.iter()) {
        *u = loc_value(space, t)?;
    }
    let from = |u: f64, lo: f64, hi: f64| lo + u * (hi - lo);
    let c = Cuboid3D {
        u: unit[0],
        v: unit[1],
        z: from(unit[2], 0.0, norm.z_max),
        w_bar: from(unit[3], -norm.dim_bound, norm.dim_bound),
        h_bar: from(unit[4], -norm.dim_bound, norm.dim_bound),
        l_bar: from(unit[5], -norm.dim_bound, norm.dim_bound),
        rotation: [
            from(unit[6], -1.0, 1.0),
            from(unit[7], -1.0, 1.0),
            from(unit[8], -1.0, 1.0),
            from(unit[9], -1.0, 1.0),
            from(unit[10], -1.0, 1.0),
            from(unit[11], -1.0, 1.0),
        ],
    };
    c.validate()?;
    Ok(c)
}

fn missing_ids(space: &TokenSpace, tok: &dyn TextTokenizer) -> Result<Vec<u32>> {
    let ids = tok.encode_text(MISSING_KEYPOINT_TEXT);
    if ids.is_empty() {
        return Err(Error::Config(
            "tokenizer produced no ids for the missing-keypoint text".into(),
        ));
    }
    for &id in &ids {
        if id >= space.count(TokenRange::Text) {
            return Err(Error::Config(format!(
                "tokenizer id {id} outside the text range"
            )));
        }
    }
    Ok(ids)
}

/// Encode 17 fixed-order keypoint entries: two location tokens per visible
/// point, the missing-text ids per invisible one.
pub fn encode_keypoints(
    k: &KeypointSet,
    space: &TokenSpace,
    tok: &dyn TextTokenizer,
) -> Result<Vec<u32>> {
    k.validate()?;
    let missing = missing_ids(space, tok)?;
    let mut out = Vec::with_capacity(KEYPOINT_COUNT * 2);
    for entry in &k.keypoints {
        match entry {
            Some(p) => out.extend_from_slice(&encode_point(p, space)?),
            None => out.extend_from_slice(&missing),
        }
    }
    Ok(out)
}

/// Decode a keypoint token sequence produced by [`encode_keypoints`]. The
/// person box is the query context and is supplied, not decoded.
pub fn decode_keypoints(
    tokens: &[u32],
    person_box: Box2D,
    space: &TokenSpace,
    tok: &dyn TextTokenizer,
) -> Result<KeypointSet> {
    let missing = missing_ids(space, tok)?;
    let mut keypoints: [Option<Point2D>; KEYPOINT_COUNT] = Default::default();
    let mut pos = 0usize;
    for (i, slot) in keypoints.iter_mut().enumerate() {
        if pos >= tokens.len() {
            return Err(Error::Schema(format!(
                "keypoint sequence ended after {i} of {KEYPOINT_COUNT} entries"
            )));
        }
        if space.is_location(tokens[pos]) {
            if pos + 1 >= tokens.len() || !space.is_location(tokens[pos + 1]) {
                return Err(Error::Schema(format!(
                    "entry {i}: visible keypoint needs two location tokens"
                )));
            }
            *slot = Some(decode_point(&[tokens[pos], tokens[pos + 1]], space)?);
            pos += 2;
        } else {
            let end = pos + missing.len();
            if tokens.len() < end || tokens[pos..end] != missing[..] {
                return Err(Error::Schema(format!(
                    "entry {i}: expected the missing-keypoint sequence"
                )));
            }
            pos = end;
        }
    }
    if pos != tokens.len() {
        return Err(Error::Schema(format!(
            "{} trailing tokens after {KEYPOINT_COUNT} keypoint entries",
            tokens.len() - pos
        )));
    }
    KeypointSet::new(person_box, keypoints)
}

/// Allowed-token mask for one step of constrained keypoint decoding.
///
/// `step` is the position inside the current entry: at step 0 the model may
/// open a visible point (any location token) or, unless `force_visible` is
/// set, start the missing-text sequence; from step 1 on, only location tokens
/// complete the coordinate pair.
pub fn build_keypoint_constraint(
    step: usize,
    force_visible: bool,
    space: &TokenSpace,
    tok: &dyn TextTokenizer,
) -> Result<TokenMask> {
    let mut mask = TokenMask::empty(space.total_vocab());
    for local in 0..space.location_bins() {
        mask.insert(space.location(local)?);
    }
    if step == 0 && !force_visible {
        let missing = missing_ids(space, tok)?;
        mask.insert(missing[0]);
    }
    Ok(mask)
}

/// Encode an action: discrete commands pass through the tokenizer verbatim,
/// continuous deltas become one location token each (affine range mapping)
/// followed by a binary gripper token when present.
pub fn encode_action(
    a: &ActionCommand,
    ranges: &ActionRanges,
    space: &TokenSpace,
    tok: &dyn TextTokenizer,
) -> Result<Vec<u32>> {
    match a {
        ActionCommand::Discrete(cmd) => {
            let ids = tok.encode_text(cmd);
            for &id in &ids {
                if id >= space.count(TokenRange::Text) {
                    return Err(Error::Config(format!(
                        "tokenizer id {id} outside the text range"
                    )));
                }
            }
            Ok(ids)
        }
        ActionCommand::Continuous { deltas, gripper } => {
            // The declared ranges pin the delta arity; otherwise a trailing
            // gripper token would be indistinguishable from one more delta.
            if deltas.len() != ranges.deltas.len() {
                return Err(Error::Config(format!(
                    "{} deltas but {} declared ranges; the ranges config fixes the arity",
                    deltas.len(),
                    ranges.deltas.len()
                )));
            }
            let mut out = Vec::with_capacity(deltas.len() + 1);
            for (&v, &(lo, hi)) in deltas.iter().zip(&ranges.deltas) {
                out.push(loc_token(space, to_unit("delta", v, lo, hi)?)?);
            }
            if let Some(open) = gripper {
                out.push(loc_token(space, if *open { 1.0 } else { 0.0 })?);
            }
            Ok(out)
        }
    }
}

/// Decode an action sequence. All-location sequences are continuous (delta
/// count comes from the declared ranges, one extra token is the gripper);
/// anything else decodes as a discrete text command.
pub fn decode_action(
    tokens: &[u32],
    ranges: &ActionRanges,
    space: &TokenSpace,
    tok: &dyn TextTokenizer,
) -> Result<ActionCommand> {
    let all_location = !tokens.is_empty() && tokens.iter().all(|&t| space.is_location(t));
    if !all_location {
        return Ok(ActionCommand::Discrete(tok.decode_text(tokens)));
    }
    let n = tokens.len();
    let n_ranges = ranges.deltas.len();
    let (n_deltas, has_gripper) = if n == n_ranges {
        (n, false)
    } else if n == n_ranges + 1 {
        (n_ranges, true)
    } else {
        return Err(Error::Schema(format!(
            "{n} location tokens for {n_ranges} declared deltas (plus an optional gripper)"
        )));
    };
    let mut deltas = Vec::with_capacity(n_deltas);
    for i in 0..n_deltas {
        let (lo, hi) = ranges.deltas[i];
        deltas.push(lo + loc_value(space, tokens[i])? * (hi - lo));
    }
    let gripper = if has_gripper {
        Some(loc_value(space, tokens[n - 1])? >= 0.5)
    } else {
        None
    };
    Ok(ActionCommand::Continuous { deltas, gripper })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space() -> TokenSpace {
        TokenSpace::paper()
    }

    fn local(space: &TokenSpace, token: u32) -> u32 {
        let (range, local) = space.resolve(token).unwrap();
        assert_eq!(range, TokenRange::Location, "token {token} not a location");
        local
    }

    #[test]
    fn point_tokens_y_first() {
        let s = space();
        let t = encode_point(&Point2D::new(0.25, 0.75).unwrap(), &s).unwrap();
        assert_eq!([local(&s, t[0]), local(&s, t[1])], [250, 750]);

        let t = encode_point(&Point2D::new(0.0, 0.0).unwrap(), &s).unwrap();
        assert_eq!([local(&s, t[0]), local(&s, t[1])], [0, 0]);

        let t = encode_point(&Point2D::new(1.0, 0.0).unwrap(), &s).unwrap();
        assert_eq!([local(&s, t[0]), local(&s, t[1])], [999, 0]);
    }

    #[test]
    fn box_tokens_and_decode() {
        let s = space();
        let t = encode_box(&Box2D::new(0.0, 0.0, 1.0, 1.0).unwrap(), &s).unwrap();
        assert_eq!(t.map(|x| local(&s, x)), [0, 0, 999, 999]);

        let t = encode_box(&Box2D::new(0.1, 0.2, 0.3, 0.4).unwrap(), &s).unwrap();
        assert_eq!(t.map(|x| local(&s, x)), [100, 200, 300, 400]);

        let b = decode_box(&t, &s).unwrap();
        assert_eq!([b.y1, b.x1, b.y2, b.x2], [0.1005, 0.2005, 0.3005, 0.4005]);
    }

    #[test]
    fn decode_malformed_box() {
        let s = space();
        let t = [
            s.location(500).unwrap(),
            s.location(0).unwrap(),
            s.location(100).unwrap(),
            s.location(999).unwrap(),
        ];
        assert!(matches!(decode_box(&t, &s), Err(Error::MalformedBox(_))));
    }

    #[test]
    fn pose_affine_mapping() {
        use std::f64::consts::PI;
        let s = space();
        let t = encode_camera_pose(&CameraPose::new(-PI, -PI, 0.0).unwrap(), 10.0, &s).unwrap();
        assert_eq!(t.map(|x| local(&s, x)), [0, 0, 0]);

        let t = encode_camera_pose(&CameraPose::new(0.0, 0.0, 5.0).unwrap(), 10.0, &s).unwrap();
        assert_eq!(t.map(|x| local(&s, x)), [500, 500, 500]);

        let t = encode_camera_pose(&CameraPose::new(PI, 0.0, 1.0).unwrap(), 10.0, &s).unwrap();
        assert_eq!(local(&s, t[0]), 999);

        // Distance beyond the configured maximum is a range error.
        let far = CameraPose::new(0.0, 0.0, 11.0).unwrap();
        assert!(encode_camera_pose(&far, 10.0, &s).is_err());
    }

    #[test]
    fn cuboid_midpoint_is_all_500() {
        let s = space();
        let norm = CuboidNorm::default();
        let c = Cuboid3D {
            u: 0.5,
            v: 0.5,
            z: norm.z_max / 2.0,
            w_bar: 0.0,
            h_bar: 0.0,
            l_bar: 0.0,
            rotation: [0.0; 6],
        };
        let t = encode_cuboid(&c, &norm, &s).unwrap();
        assert_eq!(t.len(), 12);
        assert!(t.iter().all(|&x| local(&s, x) == 500));

        let c2 = Cuboid3D { u: 0.2, ..c };
        let t2 = encode_cuboid(&c2, &norm, &s).unwrap();
        assert_eq!(local(&s, t2[0]), 200);
        assert!(t2[1..].iter().all(|&x| local(&s, x) == 500));
    }

    #[test]
    fn cuboid_range_error_names_field() {
        let s = space();
        let norm = CuboidNorm::default();
        let c = Cuboid3D {
            u: 0.5,
            v: 0.5,
            z: norm.z_max + 1.0,
            w_bar: 0.0,
            h_bar: 0.0,
            l_bar: 0.0,
            rotation: [0.0; 6],
        };
        match encode_cuboid(&c, &norm, &s) {
            Err(Error::Range { what, .. }) => assert_eq!(what, "z"),
            other => panic!("expected range error on z, got {other:?}"),
        }
    }

    #[test]
    fn keypoints_all_missing() {
        let s = space();
        let tok = ByteTokenizer;
        let k = KeypointSet::new(
            Box2D::new(0.0, 0.0, 1.0, 1.0).unwrap(),
            Default::default(),
        )
        .unwrap();
        let t = encode_keypoints(&k, &s, &tok).unwrap();
        let missing_len = tok.encode_text(MISSING_KEYPOINT_TEXT).len();
        assert_eq!(t.len(), KEYPOINT_COUNT * missing_len);
        assert!(t.iter().all(|&id| !s.is_location(id)));

        let back = decode_keypoints(&t, k.person_box, &s, &tok).unwrap();
        assert_eq!(back, k);
    }

    #[test]
    fn keypoints_one_visible() {
        let s = space();
        let tok = ByteTokenizer;
        let mut pts: [Option<Point2D>; KEYPOINT_COUNT] = Default::default();
        pts[3] = Some(Point2D::new(0.5, 0.5).unwrap());
        let k = KeypointSet::new(Box2D::new(0.0, 0.0, 1.0, 1.0).unwrap(), pts).unwrap();
        let t = encode_keypoints(&k, &s, &tok).unwrap();
        let locs: Vec<u32> = t
            .iter()
            .filter(|&&id| s.is_location(id))
            .map(|&id| local(&s, id))
            .collect();
        assert_eq!(locs, vec![500, 500]);
    }

    #[test]
    fn keypoint_constraint_cardinality() {
        let s = space();
        let tok = ByteTokenizer;
        let forced = build_keypoint_constraint(0, true, &s, &tok).unwrap();
        assert_eq!(forced.cardinality(), 1000);

        let free = build_keypoint_constraint(0, false, &s, &tok).unwrap();
        assert_eq!(free.cardinality(), 1001);
        assert!(free.allows(tok.encode_text(MISSING_KEYPOINT_TEXT)[0]));

        let second = build_keypoint_constraint(1, false, &s, &tok).unwrap();
        assert_eq!(second.cardinality(), 1000);
    }

    #[test]
    fn mask_partitions_vocab() {
        let s = space();
        let tok = ByteTokenizer;
        let mask = build_keypoint_constraint(0, false, &s, &tok).unwrap();
        let comp = mask.complement();
        assert_eq!(
            mask.cardinality() + comp.cardinality(),
            s.total_vocab() as usize
        );
        for id in [0u32, 31_999, 32_210, 33_209, s.total_vocab() - 1] {
            assert!(mask.allows(id) ^ comp.allows(id));
        }
    }

    #[test]
    fn action_discrete_passthrough() {
        let s = space();
        let tok = ByteTokenizer;
        let a = ActionCommand::Discrete("stop".into());
        let t = encode_action(&a, &ActionRanges::unit(), &s, &tok).unwrap();
        assert_eq!(t, tok.encode_text("stop"));
        let back = decode_action(&t, &ActionRanges::unit(), &s, &tok).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn action_continuous_midpoint_and_edges() {
        let s = space();
        let tok = ByteTokenizer;
        let ranges = ActionRanges::new(vec![(-2.0, 2.0); 6]).unwrap();

        let mid = ActionCommand::Continuous {
            deltas: vec![0.0; 6],
            gripper: None,
        };
        let t = encode_action(&mid, &ranges, &s, &tok).unwrap();
        assert!(t.iter().all(|&x| local(&s, x) == 500));

        let one = ActionRanges::new(vec![(-2.0, 2.0)]).unwrap();
        let edge = ActionCommand::Continuous {
            deltas: vec![2.0],
            gripper: Some(true),
        };
        let t = encode_action(&edge, &one, &s, &tok).unwrap();
        assert_eq!(t.iter().map(|&x| local(&s, x)).collect::<Vec<_>>(), vec![
            999, 999
        ]);
        let back = decode_action(&t, &one, &s, &tok).unwrap();
        match back {
            ActionCommand::Continuous { deltas, gripper } => {
                assert_eq!(deltas.len(), 1);
                assert_eq!(gripper, Some(true));
            }
            other => panic!("wrong decode {other:?}"),
        }

        let out_of_range = ActionCommand::Continuous {
            deltas: vec![2.5],
            gripper: None,
        };
        assert!(encode_action(&out_of_range, &one, &s, &tok).is_err());

        // Arity is pinned by the config.
        let wrong_arity = ActionCommand::Continuous {
            deltas: vec![0.0, 0.0],
            gripper: None,
        };
        assert!(encode_action(&wrong_arity, &one, &s, &tok).is_err());
    }
}
