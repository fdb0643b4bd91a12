//! Flat `key=value` text form of [`ModelConfig`].
//!
//! One field per line, `#` starts a comment, unknown keys are rejected and
//! missing keys keep their defaults.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::ModelConfig;
use crate::tensor::DType;

pub fn model_config_to_string(cfg: &ModelConfig) -> String {
    let dilations: Vec<String> = cfg.aspp_dilations.iter().map(|d| d.to_string()).collect();
    let dtype = match cfg.dtype {
        DType::F32 => "f32",
        DType::F64 => "f64",
    };
    format!(
        "input_height={}\ninput_width={}\nbase_channels={}\nneck_channels={}\nkernel_size={}\n\
         se_reduction={}\naspp_dilations={}\nscale_mode={}\nregion_type={}\nshared_lkb={}\n\
         residual_attention={}\nseed={}\ndtype={}\n",
        cfg.input_height,
        cfg.input_width,
        cfg.base_channels,
        cfg.neck_channels,
        cfg.kernel_size,
        cfg.se_reduction,
        dilations.join(","),
        cfg.scale_mode,
        cfg.region_type,
        cfg.shared_lkb,
        cfg.residual_attention,
        cfg.seed,
        dtype,
    )
}

pub fn parse_model_config(text: &str, origin: &str) -> Result<ModelConfig> {
    let mut cfg = ModelConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |message: String| Error::Parse {
            location: format!("{origin}:{}", i + 1),
            message,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("expected key=value, got `{line}`")))?;
        let (key, value) = (key.trim(), value.trim());
        let int = |v: &str| v.parse::<usize>().map_err(|e| bad(format!("{key}: {e}")));
        let flag = |v: &str| v.parse::<bool>().map_err(|e| bad(format!("{key}: {e}")));
        match key {
            "input_height" => cfg.input_height = int(value)?,
            "input_width" => cfg.input_width = int(value)?,
            "base_channels" => cfg.base_channels = int(value)?,
            "neck_channels" => cfg.neck_channels = int(value)?,
            "kernel_size" => cfg.kernel_size = int(value)?,
            "se_reduction" => cfg.se_reduction = int(value)?,
            "aspp_dilations" => {
                cfg.aspp_dilations = value.split(',').map(|d| int(d.trim())).collect::<Result<_>>()?
            }
            "scale_mode" => cfg.scale_mode = value.parse().map_err(|e: Error| bad(e.to_string()))?,
            "region_type" => cfg.region_type = value.parse().map_err(|e: Error| bad(e.to_string()))?,
            "shared_lkb" => cfg.shared_lkb = flag(value)?,
            "residual_attention" => cfg.residual_attention = flag(value)?,
            "seed" => cfg.seed = value.parse().map_err(|e| bad(format!("seed: {e}")))?,
            "dtype" => {
                cfg.dtype = match value {
                    "f32" => DType::F32,
                    "f64" => DType::F64,
                    other => return Err(bad(format!("dtype must be f32|f64, got `{other}`"))),
                }
            }
            other => return Err(bad(format!("unknown key `{other}`"))),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn write_model_config(path: &Path, cfg: &ModelConfig) -> Result<()> {
    fs::write(path, model_config_to_string(cfg)).map_err(|e| Error::io(path, e))
}

pub fn read_model_config(path: &Path) -> Result<ModelConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_model_config(&text, &path.display().to_string())
}
