//! Checkpoint files: a UTF-8 header followed by little-endian `f64` parameter values.
//!
//! ```text
//! converter-checkpoint 1
//! [config]
//! batch_size = 32
//! ...
//! [tensors]
//! embed 10x32
//! ...
//! [data]
//! <raw values, tensors in header order, row-major>
//! ```

use std::fs;
use std::path::Path;

use converter_core::model::ConverterParams;
use converter_core::train::TrainConfig;
use converter_core::ComplexTensor;

use crate::config::{apply_entries, parse_entries};
use crate::error::{CliError, CliResult};

pub const MAGIC: &str = "converter-checkpoint 1";
const DATA_MARK: &[u8] = b"[data]\n";

fn shape_string(shape: &[usize]) -> String {
    shape
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("x")
}

pub fn to_bytes(cfg: &TrainConfig, params: &ConverterParams) -> Vec<u8> {
    let mut header = format!("{MAGIC}\n[config]\n{}[tensors]\n", cfg.canonical());
    let named = params.named();
    for (name, t) in &named {
        header.push_str(&format!("{name} {}\n", shape_string(t.shape())));
    }
    let mut out = header.into_bytes();
    out.extend_from_slice(DATA_MARK);
    for (_, t) in &named {
        for v in t.real_parts() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Rebuilds the configuration and parameters, checking every tensor against the shapes the
/// configuration implies.
pub fn from_bytes(bytes: &[u8]) -> Result<(TrainConfig, ConverterParams), String> {
    let split = bytes
        .windows(DATA_MARK.len())
        .position(|w| w == DATA_MARK)
        .ok_or("missing [data] section")?;
    let header = std::str::from_utf8(&bytes[..split]).map_err(|_| "header is not UTF-8")?;
    let data = &bytes[split + DATA_MARK.len()..];
    let mut lines = header.lines();
    if lines.next() != Some(MAGIC) {
        return Err(format!("not a checkpoint (expected '{MAGIC}')"));
    }
    if lines.next() != Some("[config]") {
        return Err("missing [config] section".into());
    }
    let mut config_text = String::new();
    let mut tensor_lines = Vec::new();
    let mut in_tensors = false;
    for line in lines {
        if line == "[tensors]" {
            in_tensors = true;
        } else if in_tensors {
            tensor_lines.push(line);
        } else {
            config_text.push_str(line);
            config_text.push('\n');
        }
    }
    let mut cfg = TrainConfig::default();
    let entries = parse_entries(&config_text, "checkpoint").map_err(|e| e.to_string())?;
    apply_entries(&mut cfg, &entries, "checkpoint").map_err(|e| e.to_string())?;
    cfg.validate().map_err(|e| e.to_string())?;
    let mut params = cfg.init_params().map_err(|e| e.to_string())?;
    let expected: Vec<(String, Vec<usize>)> = params
        .named()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    if tensor_lines.len() != expected.len() {
        return Err(format!(
            "expected {} tensors for this configuration, found {}",
            expected.len(),
            tensor_lines.len()
        ));
    }
    for (line, (name, shape)) in tensor_lines.iter().zip(&expected) {
        let want = format!("{name} {}", shape_string(shape));
        if *line != want {
            return Err(format!(
                "tensor mismatch: expected '{want}', found '{line}'"
            ));
        }
    }
    let total: usize = expected
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum();
    if data.len() != total * 8 {
        return Err(format!(
            "expected {} data bytes, found {}",
            total * 8,
            data.len()
        ));
    }
    let mut values = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    for (slot, (_, shape)) in params.tensors_mut().into_iter().zip(&expected) {
        let n: usize = shape.iter().product();
        let v: Vec<f64> = values.by_ref().take(n).collect();
        *slot = ComplexTensor::from_real(shape, &v).map_err(|e| e.to_string())?;
    }
    Ok((cfg, params))
}

/// Writes via a temporary file and a rename so an interrupted save leaves the old file intact.
pub fn save(path: &Path, cfg: &TrainConfig, params: &ConverterParams) -> CliResult<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, to_bytes(cfg, params)).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn load(path: &Path) -> CliResult<(TrainConfig, ConverterParams)> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    from_bytes(&bytes).map_err(|message| CliError::Checkpoint {
        path: path.to_path_buf(),
        message,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use converter_core::model::PeVariant;
    use converter_core::tasks::Task;

    fn small(pe: PeVariant) -> TrainConfig {
        TrainConfig {
            task: Task::MiniListops,
            seq_len: 12,
            d_model: 4,
            d_hidden: 5,
            cheb_order: 3,
            blocks: 2,
            pe,
            perm_factor: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn byte_exact_round_trip() {
        for pe in [PeVariant::NoPe, PeVariant::Ape, PeVariant::Rpe] {
            let cfg = small(pe);
            let p = cfg.init_params().unwrap();
            let bytes = to_bytes(&cfg, &p);
            let (cfg2, p2) = from_bytes(&bytes).unwrap();
            assert_eq!(cfg2, cfg);
            assert_eq!(p2, p);
            assert_eq!(to_bytes(&cfg2, &p2), bytes);
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let cfg = small(PeVariant::Spe);
        let bytes = to_bytes(&cfg, &cfg.init_params().unwrap());
        assert!(from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(from_bytes(b"hello").is_err());
        let text = String::from_utf8_lossy(&bytes).replace("d_model = 4", "d_model = 5");
        let mut edited = text.split("[data]\n").next().unwrap().as_bytes().to_vec();
        edited.extend_from_slice(&bytes[bytes.windows(7).position(|w| w == DATA_MARK).unwrap()..]);
        assert!(from_bytes(&edited).unwrap_err().contains("mismatch"));
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let cfg = small(PeVariant::Rpe);
        let p = cfg.init_params().unwrap();
        save(&path, &cfg, &p).unwrap();
        assert_eq!(load(&path).unwrap().1, p);
        assert!(matches!(
            load(&dir.path().join("none")),
            Err(CliError::Io { .. })
        ));
    }
}
