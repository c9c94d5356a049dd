//! Config resolution: command-line flags override the config file, which
//! overrides the built-in defaults. The default config path comes from
//! `ANYMODAL_CONFIG` when no `--config` flag is given.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

use anymodal::decoding::{preset_registry, DecodePreset};
use anymodal::modality::{BudgetSet, ModalityPreset};
use anymodal::pipeline::MixtureSpec;
use anymodal::token_space::schema::CodecConfig;
use anymodal::token_space::{ActionRanges, CuboidNorm};

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "ANYMODAL_CONFIG";

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    budgets: Option<BudgetSet>,
    modality: Option<ModalityPreset>,
    r_max: Option<f64>,
    cuboid_z_max: Option<f64>,
    cuboid_dim_bound: Option<f64>,
    action_ranges: Option<Vec<(f64, f64)>>,
    decode_presets: Option<Vec<DecodePreset>>,
    mixtures: Option<Vec<MixtureSpec>>,
}

/// Fully resolved configuration.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub budgets: BudgetSet,
    pub modality: ModalityPreset,
    pub codec: CodecConfig,
    pub decode_presets: Vec<DecodePreset>,
    pub mixtures: Vec<MixtureSpec>,
}

impl Default for Resolved {
    fn default() -> Self {
        Resolved {
            budgets: BudgetSet::paper(),
            modality: ModalityPreset::paper(),
            codec: CodecConfig::default(),
            decode_presets: preset_registry(),
            mixtures: vec![MixtureSpec::paper_pretrain(), MixtureSpec::paper_instruct()],
        }
    }
}

/// Load configuration from `--config`, else `ANYMODAL_CONFIG`, else defaults.
pub fn load(flag: Option<&Path>) -> Result<Resolved> {
    let path: Option<PathBuf> = match flag {
        Some(p) => Some(p.to_path_buf()),
        None => std::env::var_os(CONFIG_ENV).map(PathBuf::from),
    };
    let mut resolved = Resolved::default();
    let Some(path) = path else {
        return Ok(resolved);
    };
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let file: FileConfig = serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))?;

    if let Some(b) = file.budgets {
        b.validate()?;
        resolved.budgets = b;
    }
    if let Some(m) = file.modality {
        resolved.modality = m;
    }
    if let Some(r) = file.r_max {
        resolved.codec.r_max = r;
    }
    if let Some(z) = file.cuboid_z_max {
        resolved.codec.cuboid = CuboidNorm {
            z_max: z,
            ..resolved.codec.cuboid
        };
    }
    if let Some(d) = file.cuboid_dim_bound {
        resolved.codec.cuboid = CuboidNorm {
            dim_bound: d,
            ..resolved.codec.cuboid
        };
    }
    if let Some(ranges) = file.action_ranges {
        resolved.codec.action = ActionRanges::new(ranges)?;
    }
    if let Some(presets) = file.decode_presets {
        resolved.decode_presets = presets;
    }
    if let Some(mixtures) = file.mixtures {
        for m in &mixtures {
            m.validate()?;
        }
        resolved.mixtures = mixtures;
    }
    Ok(resolved)
}
