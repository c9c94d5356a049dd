//! JSONL record schema for geometric entities and their token encodings.
//!
//! Writers emit canonical key order and fixed 6-decimal float formatting so
//! encode/decode round trips are byte-stable and golden-file friendly.

use serde_json::Value;

use super::codec::{
    decode_action, decode_box, decode_camera_pose, decode_cuboid, decode_keypoints, decode_point,
    encode_action, encode_box, encode_camera_pose, encode_cuboid, encode_keypoints, encode_point,
    ActionRanges, CuboidNorm, TextTokenizer,
};
use super::geometry::{
    ActionCommand, Box2D, CameraPose, Cuboid3D, GeometricEntity, KeypointSet, Point2D,
    KEYPOINT_COUNT,
};
use super::TokenSpace;
use crate::error::{Error, Result};

/// Everything needed to run the codec over records: the vocabulary layout and
/// the normalization configuration for poses, cuboids, and actions.
#[derive(Debug, Clone)]
pub struct CodecConfig {
    pub space: TokenSpace,
    /// Maximum camera distance for pose encoding.
    pub r_max: f64,
    pub cuboid: CuboidNorm,
    pub action: ActionRanges,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            space: TokenSpace::paper(),
            r_max: 100.0,
            cuboid: CuboidNorm::default(),
            action: ActionRanges::unit(),
        }
    }
}

/// Token-side record: the entity kind and its global token ids. Keypoint
/// records carry the person box (query context) as four extra tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenRecord {
    pub kind: String,
    pub tokens: Vec<u32>,
    pub person_box: Option<[u32; 4]>,
}

/// Encode an entity into its token record.
pub fn encode_entity(
    entity: &GeometricEntity,
    cfg: &CodecConfig,
    tok: &dyn TextTokenizer,
) -> Result<TokenRecord> {
    let (tokens, person_box) = match entity {
        GeometricEntity::Point(p) => (encode_point(p, &cfg.space)?.to_vec(), None),
        GeometricEntity::Box(b) => (encode_box(b, &cfg.space)?.to_vec(), None),
        GeometricEntity::Cuboid(c) => (encode_cuboid(c, &cfg.cuboid, &cfg.space)?.to_vec(), None),
        GeometricEntity::Pose(c) => (
            encode_camera_pose(c, cfg.r_max, &cfg.space)?.to_vec(),
            None,
        ),
        GeometricEntity::Keypoints(k) => (
            encode_keypoints(k, &cfg.space, tok)?,
            Some(encode_box(&k.person_box, &cfg.space)?),
        ),
        GeometricEntity::Action(a) => (encode_action(a, &cfg.action, &cfg.space, tok)?, None),
    };
    Ok(TokenRecord {
        kind: entity.kind().to_string(),
        tokens,
        person_box,
    })
}

/// Decode a token record back into an entity (values land on bin centers).
pub fn decode_entity(
    record: &TokenRecord,
    cfg: &CodecConfig,
    tok: &dyn TextTokenizer,
) -> Result<GeometricEntity> {
    let t = &record.tokens;
    let fixed = |n: usize| -> Result<()> {
        if t.len() != n {
            return Err(Error::Schema(format!(
                "kind {:?} expects {n} tokens, got {}",
                record.kind,
                t.len()
            )));
        }
        Ok(())
    };
    match record.kind.as_str() {
        "point" => {
            fixed(2)?;
            Ok(GeometricEntity::Point(decode_point(
                &[t[0], t[1]],
                &cfg.space,
            )?))
        }
        "box" => {
            fixed(4)?;
            Ok(GeometricEntity::Box(decode_box(
                &[t[0], t[1], t[2], t[3]],
                &cfg.space,
            )?))
        }
        "cuboid" => {
            fixed(12)?;
            let mut arr = [0u32; 12];
            arr.copy_from_slice(t);
            Ok(GeometricEntity::Cuboid(decode_cuboid(
                &arr,
                &cfg.cuboid,
                &cfg.space,
            )?))
        }
        "pose" => {
            fixed(3)?;
            Ok(GeometricEntity::Pose(decode_camera_pose(
                &[t[0], t[1], t[2]],
                cfg.r_max,
                &cfg.space,
            )?))
        }
        "keypoints" => {
            let pb = record.person_box.ok_or_else(|| {
                Error::Schema("keypoints record is missing its person_box tokens".into())
            })?;
            let person_box = decode_box(&pb, &cfg.space)?;
            Ok(GeometricEntity::Keypoints(decode_keypoints(
                t, person_box, &cfg.space, tok,
            )?))
        }
        "action" => Ok(GeometricEntity::Action(decode_action(
            t,
            &cfg.action,
            &cfg.space,
            tok,
        )?)),
        other => Err(Error::Schema(format!("unknown record kind {other:?}"))),
    }
}

// Fixed 6-decimal float formatting; negative zero normalizes to zero so
// formatting is canonical.
fn fmt_f(v: f64) -> String {
    let v = if v == 0.0 { 0.0 } else { v };
    format!("{v:.6}")
}

fn fmt_f_list(vs: &[f64]) -> String {
    let parts: Vec<String> = vs.iter().map(|&v| fmt_f(v)).collect();
    format!("[{}]", parts.join(","))
}

fn fmt_u_list(vs: &[u32]) -> String {
    let parts: Vec<String> = vs.iter().map(|v| v.to_string()).collect();
    format!("[{}]", parts.join(","))
}

/// Canonical one-line JSON for an entity record.
pub fn write_entity(entity: &GeometricEntity) -> String {
    let fields = match entity {
        GeometricEntity::Point(p) => format!(r#"{{"y":{},"x":{}}}"#, fmt_f(p.y), fmt_f(p.x)),
        GeometricEntity::Box(b) => format!(
            r#"{{"y1":{},"x1":{},"y2":{},"x2":{}}}"#,
            fmt_f(b.y1),
            fmt_f(b.x1),
            fmt_f(b.y2),
            fmt_f(b.x2)
        ),
        GeometricEntity::Cuboid(c) => format!(
            r#"{{"u":{},"v":{},"z":{},"w_bar":{},"h_bar":{},"l_bar":{},"p":{}}}"#,
            fmt_f(c.u),
            fmt_f(c.v),
            fmt_f(c.z),
            fmt_f(c.w_bar),
            fmt_f(c.h_bar),
            fmt_f(c.l_bar),
            fmt_f_list(&c.rotation)
        ),
        GeometricEntity::Pose(c) => format!(
            r#"{{"theta":{},"phi":{},"r":{}}}"#,
            fmt_f(c.theta),
            fmt_f(c.phi),
            fmt_f(c.r)
        ),
        GeometricEntity::Keypoints(k) => {
            let pts: Vec<String> = k
                .keypoints
                .iter()
                .map(|entry| match entry {
                    Some(p) => fmt_f_list(&[p.y, p.x]),
                    None => "null".to_string(),
                })
                .collect();
            format!(
                r#"{{"person_box":{},"keypoints":[{}]}}"#,
                fmt_f_list(&[
                    k.person_box.y1,
                    k.person_box.x1,
                    k.person_box.y2,
                    k.person_box.x2
                ]),
                pts.join(",")
            )
        }
        GeometricEntity::Action(a) => match a {
            ActionCommand::Discrete(cmd) =>

                format!(r#"{{"command":{}}}"#, Value::String(cmd.clone())),
            ActionCommand::Continuous { deltas, gripper } => {
                let g = match gripper {
                    Some(true) => "true",
                    Some(false) => "false",
                    None => "null",
                };
                format!(r#"{{"deltas":{},"gripper":{}}}"#, fmt_f_list(deltas), g)
            }
        },
    };
    format!(r#"{{"kind":"{}","fields":{}}}"#, entity.kind(), fields)
}

/// Canonical one-line JSON for a token record.
pub fn write_token_record(record: &TokenRecord) -> String {
    match record.person_box {
        Some(pb) => format!(
            r#"{{"kind":"{}","person_box":{},"tokens":{}}}"#,
            record.kind,
            fmt_u_list(&pb),
            fmt_u_list(&record.tokens)
        ),
        None => format!(
            r#"{{"kind":"{}","tokens":{}}}"#,
            record.kind,
            fmt_u_list(&record.tokens)
        ),
    }
}

fn get_f64(v: &Value, key: &str) -> Result<f64> {
    v.get(key)
        .and_then(Value::as_f64)
        .ok_or_else(|| Error::Schema(format!("missing or non-numeric field {key:?}")))
}

fn as_f64_list(v: &Value, key: &str) -> Result<Vec<f64>> {
    let arr = v
        .get(key)
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Schema(format!("missing or non-array field {key:?}")))?;
    arr.iter()
        .map(|x| {
            x.as_f64()
                .ok_or_else(|| Error::Schema(format!("non-numeric element in {key:?}")))
        })
        .collect()
}

/// Parse one entity record line. Invariant violations surface as errors.
pub fn parse_entity(line: &str) -> Result<GeometricEntity> {
    let v: Value =
        serde_json::from_str(line).map_err(|e| Error::Schema(format!("invalid JSON: {e}")))?;
    let kind = v
        .get("kind")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Schema("missing \"kind\"".into()))?;
    let fields = v
        .get("fields")
        .ok_or_else(|| Error::Schema("missing \"fields\"".into()))?;
    match kind {
        "point" => Ok(GeometricEntity::Point(Point2D::new(
            get_f64(fields, "y")?,
            get_f64(fields, "x")?,
        )?)),
        "box" => Ok(GeometricEntity::Box(Box2D::new(
            get_f64(fields, "y1")?,
            get_f64(fields, "x1")?,
            get_f64(fields, "y2")?,
            get_f64(fields, "x2")?,
        )?)),
        "cuboid" => {
            let p = as_f64_list(fields, "p")?;
            if p.len() != 6 {
                return Err(Error::Schema(format!(
                    "cuboid rotation needs 6 components, got {}",
                    p.len()
                )));
            }
            let c = Cuboid3D {
                u: get_f64(fields, "u")?,
                v: get_f64(fields, "v")?,
                z: get_f64(fields, "z")?,
                w_bar: get_f64(fields, "w_bar")?,
                h_bar: get_f64(fields, "h_bar")?,
                l_bar: get_f64(fields, "l_bar")?,
                rotation: [p[0], p[1], p[2], p[3], p[4], p[5]],
            };
            c.validate()?;
            Ok(GeometricEntity::Cuboid(c))
        }
        "pose" => Ok(GeometricEntity::Pose(CameraPose::new(
            get_f64(fields, "theta")?,
            get_f64(fields, "phi")?,
            get_f64(fields, "r")?,
        )?)),
        "keypoints" => {
            let pb = as_f64_list(fields, "person_box")?;
            if pb.len() != 4 {
                return Err(Error::Schema("person_box needs 4 coordinates".into()));
            }
            let person_box = Box2D::new(pb[0], pb[1], pb[2], pb[3])?;
            let entries = fields
                .get("keypoints")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::Schema("missing \"keypoints\" array".into()))?;
            if entries.len() != KEYPOINT_COUNT {
                return Err(Error::Schema(format!(
                    "keypoints needs exactly {KEYPOINT_COUNT} entries, got {}",
                    entries.len()
                )));
            }
            let mut keypoints: [Option<Point2D>; KEYPOINT_COUNT] = Default::default();
            for (slot, entry) in keypoints.iter_mut().zip(entries) {
                if entry.is_null() {
                    continue;
                }
                let pair = entry
                    .as_array()
                    .filter(|a| a.len() == 2)
                    .ok_or_else(|| Error::Schema("keypoint entry must be [y, x] or null".into()))?;
                let y = pair[0]
                    .as_f64()
                    .ok_or_else(|| Error::Schema("non-numeric keypoint coordinate".into()))?;
                let x = pair[1]
                    .as_f64()
                    .ok_or_else(|| Error::Schema("non-numeric keypoint coordinate".into()))?;
                *slot = Some(Point2D::new(y, x)?);
            }
            Ok(GeometricEntity::Keypoints(KeypointSet::new(
                person_box, keypoints,
            )?))
        }
        "action" => {
            if let Some(cmd) = fields.get("command").and_then(Value::as_str) {
                return Ok(GeometricEntity::Action(ActionCommand::Discrete(
                    cmd.to_string(),
                )));
            }
            let deltas = as_f64_list(fields, "deltas")?;
            let gripper = match fields.get("gripper") {
                None | Some(Value::Null) => None,
                Some(Value::Bool(b)) => Some(*b),
                Some(_) => return Err(Error::Schema("gripper must be a bool or null".into())),
            };
            Ok(GeometricEntity::Action(ActionCommand::Continuous {
                deltas,
                gripper,
            }))
        }
        other => Err(Error::Schema(format!("unknown record kind {other:?}"))),
    }
}

/// Parse one token record line.
pub fn parse_token_record(line: &str) -> Result<TokenRecord> {
    let v: Value =
        serde_json::from_str(line).map_err(|e| Error::Schema(format!("invalid JSON: {e}")))?;
    let kind = v
        .get("kind")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Schema("missing \"kind\"".into()))?
        .to_string();
    let as_u32_list = |key: &str| -> Result<Vec<u32>> {
        let arr = v
            .get(key)
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Schema(format!("missing or non-array field {key:?}")))?;
        arr.iter()
            .map(|x| {
                x.as_u64()
                    .filter(|&n| n <= u32::MAX as u64)
                    .map(|n| n as u32)
                    .ok_or_else(|| Error::Schema(format!("bad token id in {key:?}")))
            })
            .collect()
    };
    let tokens = as_u32_list("tokens")?;
    let person_box = if v.get("person_box").is_some() {
        let pb = as_u32_list("person_box")?;
        if pb.len() != 4 {
            return Err(Error::Schema("person_box needs 4 tokens".into()));
        }
        Some([pb[0], pb[1], pb[2], pb[3]])
    } else {
        None
    };
    Ok(TokenRecord {
        kind,
        tokens,
        person_box,
    })
}
