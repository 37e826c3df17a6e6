//! Versioned text checkpoints: architecture header, named parameter
//! tensors and the running normalization state.

use std::path::Path;

use keratitis_core::data::InfectionTask;
use keratitis_core::model::{Model, ModelConfig, NormState, TrunkKind, Variant};

use crate::error::{CliError, Result};
use crate::formats::fmt_f64;

const MAGIC: &str = "keratitis-ckpt v1";

fn variant_name(v: Variant) -> &'static str {
    v.name()
}

fn variant_from_name(name: &str) -> Option<Variant> {
    match name {
        "ST-bacteria" => Some(Variant::SingleTask(InfectionTask::Bacteria)),
        "ST-fungi" => Some(Variant::SingleTask(InfectionTask::Fungi)),
        "ST-amoeba" => Some(Variant::SingleTask(InfectionTask::Amoeba)),
        "Mv1" => Some(Variant::MultitaskV1),
        "Mv2" => Some(Variant::MultitaskV2),
        "sex" => Some(Variant::SexHead),
        "age" => Some(Variant::AgeHead),
        _ => None,
    }
}

/// Serialize a fitted model.
pub fn write_checkpoint(
    config: &ModelConfig,
    params: &[f64],
    norm: &NormState,
    path: &Path,
) -> Result<()> {
    let model = Model::new(config.clone()).map_err(CliError::from)?;
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    out.push_str(&format!("variant {}\n", variant_name(config.variant)));
    match config.trunk {
        TrunkKind::Linear { in_dim } => out.push_str(&format!("trunk linear {in_dim}\n")),
        TrunkKind::TinyConv { image_size } => {
            out.push_str(&format!("trunk tinyconv {image_size}\n"))
        }
    }
    out.push_str(&format!("hidden {}\n", config.hidden));
    out.push_str(&format!("dropout {}\n", fmt_f64(config.dropout_p)));
    out.push_str(&format!("batchnorm {}\n", config.use_batchnorm));
    for entry in &model.layout().entries {
        out.push_str(&format!("tensor {} {}\n", entry.name, entry.len));
        for v in &params[entry.offset..entry.offset + entry.len] {
            out.push_str(&fmt_f64(*v));
            out.push('\n');
        }
    }
    for (name, values) in [("norm.mean", &norm.mean), ("norm.var", &norm.var)] {
        out.push_str(&format!("state {} {}\n", name, values.len()));
        for v in values {
            out.push_str(&fmt_f64(*v));
            out.push('\n');
        }
    }
    out.push_str("end\n");
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    std::fs::write(path, out).map_err(|e| CliError::io(path, e))
}

/// Load a checkpoint back into its configuration, parameters and state.
pub fn read_checkpoint(path: &Path) -> Result<(ModelConfig, Vec<f64>, NormState)> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let bad = |msg: String| CliError::Validation(format!("{}: {msg}", path.display()));
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(bad("not a checkpoint file".into()));
    }

    let mut header = std::collections::BTreeMap::new();
    let mut trunk: Option<TrunkKind> = None;
    for _ in 0..5 {
        let line = lines.next().ok_or_else(|| bad("truncated header".into()))?;
        let (key, value) = line
            .split_once(' ')
            .ok_or_else(|| bad(format!("bad header line `{line}`")))?;
        if key == "trunk" {
            let (kind, dim) = value
                .split_once(' ')
                .ok_or_else(|| bad(format!("bad trunk line `{line}`")))?;
            let dim: usize = dim.parse().map_err(|_| bad(format!("bad trunk size `{dim}`")))?;
            trunk = Some(match kind {
                "linear" => TrunkKind::Linear { in_dim: dim },
                "tinyconv" => TrunkKind::TinyConv { image_size: dim },
                other => return Err(bad(format!("unknown trunk `{other}`"))),
            });
        } else {
            header.insert(key.to_string(), value.to_string());
        }
    }
    let variant = header
        .get("variant")
        .and_then(|v| variant_from_name(v))
        .ok_or_else(|| bad("missing or unknown variant".into()))?;
    let config = ModelConfig {
        variant,
        trunk: trunk.ok_or_else(|| bad("missing trunk".into()))?,
        hidden: header
            .get("hidden")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("missing hidden".into()))?,
        dropout_p: header
            .get("dropout")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("missing dropout".into()))?,
        use_batchnorm: header
            .get("batchnorm")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("missing batchnorm".into()))?,
    };
    let model = Model::new(config.clone()).map_err(CliError::from)?;
    let mut params = vec![0.0; model.param_len()];
    let mut norm = model.init_norm();

    let read_block = |lines: &mut std::str::Lines<'_>, expect_kind: &str, name: &str, len: usize, dst: &mut [f64]| -> Result<()> {
        let line = lines
            .next()
            .ok_or_else(|| bad(format!("missing `{name}` block")))?;
        let expected = format!("{expect_kind} {name} {len}");
        if line != expected {
            return Err(bad(format!("expected `{expected}`, found `{line}`")));
        }
        for slot in dst.iter_mut() {
            let raw = lines
                .next()
                .ok_or_else(|| bad(format!("truncated `{name}` block")))?;
            *slot = raw
                .trim()
                .parse()
                .map_err(|_| bad(format!("bad value `{raw}` in `{name}`")))?;
        }
        Ok(())
    };

    let entries: Vec<_> = model.layout().entries.clone();
    for entry in &entries {
        let mut slice = vec![0.0; entry.len];
        read_block(&mut lines, "tensor", entry.name, entry.len, &mut slice)?;
        params[entry.offset..entry.offset + entry.len].copy_from_slice(&slice);
    }
    let f = model.feature_len();
    let mut mean = vec![0.0; f];
    read_block(&mut lines, "state", "norm.mean", f, &mut mean)?;
    let mut var = vec![0.0; f];
    read_block(&mut lines, "state", "norm.var", f, &mut var)?;
    norm.mean = mean;
    norm.var = var;
    if lines.next() != Some("end") {
        return Err(bad("missing end marker".into()));
    }
    Ok((config, params, norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let tmp = TempDir::new().unwrap();
        let config = ModelConfig {
            variant: Variant::MultitaskV2,
            trunk: TrunkKind::Linear { in_dim: 7 },
            hidden: 5,
            dropout_p: 0.3,
            use_batchnorm: true,
        };
        let model = Model::new(config.clone()).unwrap();
        let params = model.init_params(99);
        let mut norm = model.init_norm();
        norm.mean[0] = 0.12345678912345678;
        norm.var[2] = 7.5e-3;
        let path = tmp.path().join("models/round0.ckpt");
        write_checkpoint(&config, &params, &norm, &path).unwrap();
        let (config2, params2, norm2) = read_checkpoint(&path).unwrap();
        assert_eq!(config2, config);
        assert_eq!(params2, params);
        assert_eq!(norm2, norm);
    }

    #[test]
    fn all_variants_round_trip() {
        let tmp = TempDir::new().unwrap();
        for (i, variant) in [
            Variant::SingleTask(InfectionTask::Fungi),
            Variant::MultitaskV1,
            Variant::SexHead,
            Variant::AgeHead,
        ]
        .into_iter()
        .enumerate()
        {
            let config = ModelConfig {
                variant,
                trunk: TrunkKind::TinyConv { image_size: 8 },
                hidden: 4,
                dropout_p: 0.0,
                use_batchnorm: false,
            };
            let model = Model::new(config.clone()).unwrap();
            let params = model.init_params(i as u64);
            let norm = model.init_norm();
            let path = tmp.path().join(format!("v{i}.ckpt"));
            write_checkpoint(&config, &params, &norm, &path).unwrap();
            let (config2, params2, _) = read_checkpoint(&path).unwrap();
            assert_eq!(config2, config);
            assert_eq!(params2, params);
        }
    }

    #[test]
    fn corrupted_checkpoint_is_rejected() {
        let tmp = TempDir::new().unwrap();
        let path = tmp.path().join("bad.ckpt");
        std::fs::write(&path, "something else\n").unwrap();
        assert!(read_checkpoint(&path).is_err());
    }
}
