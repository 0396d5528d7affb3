//! Checkpoint file: a single structured text document holding the model
//! config, training progress, optimizer state and every named parameter
//! array. Floats are written with 17 significant digits so
//! save → load → save is bit-stable.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::autodiff::{AdamState, ParamSet};
use crate::model::{validate_params, ModelConfig};
use crate::{real, Real};

const MAGIC: &str = "mmgat-checkpoint v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("integrity error in field `{field}`: {msg}")]
    Integrity { field: String, msg: String },
}

fn integrity(field: &str, msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Integrity {
        field: field.to_string(),
        msg: msg.into(),
    }
}

/// Everything needed to resume training or run inference.
#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub model: ModelConfig,
    pub k_neighbors: usize,
    /// Epochs completed so far.
    pub epoch: u64,
    pub base_lr: f64,
    pub lr_factor: f64,
    pub params: ParamSet<T>,
    pub adam: AdamState<T>,
}

fn fmt_vals<T: Real>(vals: &[T]) -> String {
    let mut s = String::new();
    for (i, v) in vals.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{:.16e}", v);
    }
    s
}

pub fn save_checkpoint<T: Real>(ck: &Checkpoint<T>, path: &Path) -> Result<(), CheckpointError> {
    let m = &ck.model;
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "joint_count = {}", m.joint_count);
    let _ = writeln!(out, "k_neighbors = {}", ck.k_neighbors);
    let _ = writeln!(out, "include_edge_features = {}", m.include_edge_features);
    let _ = writeln!(
        out,
        "edge_widths = {}",
        m.edge_widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(" ")
    );
    let _ = writeln!(out, "gat_layers = {}", m.gat_layers);
    let _ = writeln!(out, "gat_width = {}", m.gat_width);
    let _ = writeln!(
        out,
        "head_hidden = {}",
        m.head_hidden.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(" ")
    );
    let _ = writeln!(out, "dropout_rate = {:.16e}", m.dropout_rate);
    let _ = writeln!(out, "leaky_slope = {:.16e}", m.leaky_slope);
    let _ = writeln!(out, "epoch = {}", ck.epoch);
    let _ = writeln!(out, "base_lr = {:.16e}", ck.base_lr);
    let _ = writeln!(out, "lr_factor = {:.16e}", ck.lr_factor);
    let _ = writeln!(out, "adam_step = {}", ck.adam.step);
    let _ = writeln!(out, "adam_beta1 = {:.16e}", ck.adam.beta1);
    let _ = writeln!(out, "adam_beta2 = {:.16e}", ck.adam.beta2);
    let _ = writeln!(out, "adam_epsilon = {:.16e}", ck.adam.epsilon);
    let _ = writeln!(out, "adam_lr = {:.16e}", ck.adam.lr);
    for (i, e) in ck.params.entries().iter().enumerate() {
        let dims = e.shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(" ");
        let _ = writeln!(out, "param {} {}", e.name, dims);
        let _ = writeln!(out, "{}", fmt_vals(&e.data));
        let _ = writeln!(out, "adam_m {}", e.name);
        let _ = writeln!(out, "{}", fmt_vals(&ck.adam.m[i]));
        let _ = writeln!(out, "adam_v {}", e.name);
        let _ = writeln!(out, "{}", fmt_vals(&ck.adam.v[i]));
    }
    fs::write(path, out).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

struct LineReader<'a> {
    lines: std::str::Lines<'a>,
}

impl<'a> LineReader<'a> {
    fn next_line(&mut self, field: &str) -> Result<&'a str, CheckpointError> {
        self.lines
            .next()
            .ok_or_else(|| integrity(field, "file truncated"))
    }

    fn keyed(&mut self, key: &str) -> Result<&'a str, CheckpointError> {
        let line = self.next_line(key)?;
        let (k, v) = line
            .split_once(" = ")
            .ok_or_else(|| integrity(key, format!("malformed line `{line}`")))?;
        if k != key {
            return Err(integrity(key, format!("expected field `{key}`, found `{k}`")));
        }
        Ok(v)
    }

    fn keyed_usize(&mut self, key: &str) -> Result<usize, CheckpointError> {
        self.keyed(key)?
            .parse()
            .map_err(|_| integrity(key, "not an integer"))
    }

    fn keyed_u64(&mut self, key: &str) -> Result<u64, CheckpointError> {
        self.keyed(key)?
            .parse()
            .map_err(|_| integrity(key, "not an integer"))
    }

    fn keyed_f64(&mut self, key: &str) -> Result<f64, CheckpointError> {
        self.keyed(key)?
            .parse()
            .map_err(|_| integrity(key, "not a real number"))
    }

    fn keyed_bool(&mut self, key: &str) -> Result<bool, CheckpointError> {
        self.keyed(key)?
            .parse()
            .map_err(|_| integrity(key, "not a boolean"))
    }

    fn keyed_usize_list(&mut self, key: &str) -> Result<Vec<usize>, CheckpointError> {
        self.keyed(key)?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| integrity(key, "not an integer list")))
            .collect()
    }
}

fn parse_vals<T: Real>(line: &str, field: &str, want: usize) -> Result<Vec<T>, CheckpointError> {
    let vals: Result<Vec<T>, _> = line
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map(|v| real::<T>(v))
                .map_err(|_| integrity(field, format!("bad value `{t}`")))
        })
        .collect();
    let vals = vals?;
    if vals.len() != want {
        return Err(integrity(
            field,
            format!("expected {want} values, found {}", vals.len()),
        ));
    }
    Ok(vals)
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>, CheckpointError> {
    let text = fs::read_to_string(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut r = LineReader { lines: text.lines() };
    let magic = r.next_line("magic")?;
    if magic != MAGIC {
        return Err(integrity("magic", format!("unexpected header `{magic}`")));
    }
    let joint_count = r.keyed_usize("joint_count")?;
    let k_neighbors = r.keyed_usize("k_neighbors")?;
    let include_edge_features = r.keyed_bool("include_edge_features")?;
    let edge_widths = r.keyed_usize_list("edge_widths")?;
    let gat_layers = r.keyed_usize("gat_layers")?;
    let gat_width = r.keyed_usize("gat_width")?;
    let head_hidden = r.keyed_usize_list("head_hidden")?;
    let dropout_rate = r.keyed_f64("dropout_rate")?;
    let leaky_slope = r.keyed_f64("leaky_slope")?;
    let epoch = r.keyed_u64("epoch")?;
    let base_lr = r.keyed_f64("base_lr")?;
    let lr_factor = r.keyed_f64("lr_factor")?;
    let adam_step = r.keyed_u64("adam_step")?;
    let adam_beta1 = r.keyed_f64("adam_beta1")?;
    let adam_beta2 = r.keyed_f64("adam_beta2")?;
    let adam_epsilon = r.keyed_f64("adam_epsilon")?;
    let adam_lr = r.keyed_f64("adam_lr")?;

    let model = ModelConfig {
        edge_widths,
        gat_layers,
        gat_width,
        head_hidden,
        dropout_rate,
        leaky_slope,
        joint_count,
        include_edge_features,
    };

    let mut params = ParamSet::new();
    let mut m = Vec::new();
    let mut v = Vec::new();
    loop {
        let line = match r.lines.next() {
            Some(l) if !l.trim().is_empty() => l,
            _ => break,
        };
        let mut toks = line.split_whitespace();
        let tag = toks.next().unwrap_or_default();
        if tag != "param" {
            return Err(integrity("param", format!("expected `param`, found `{tag}`")));
        }
        let name = toks
            .next()
            .ok_or_else(|| integrity("param", "missing name"))?
            .to_string();
        let shape: Result<Vec<usize>, _> = toks
            .map(|t| t.parse().map_err(|_| integrity(&name, "bad dimension")))
            .collect();
        let shape = shape?;
        let len: usize = shape.iter().product();
        let data_line = r.next_line(&name)?;
        let data = parse_vals::<T>(data_line, &name, len)?;

        for (tag_want, store) in [("adam_m", &mut m), ("adam_v", &mut v)] {
            let header = r.next_line(tag_want)?;
            let expect = format!("{tag_want} {name}");
            if header != expect {
                return Err(integrity(
                    tag_want,
                    format!("expected `{expect}`, found `{header}`"),
                ));
            }
            let vals_line = r.next_line(tag_want)?;
            store.push(parse_vals::<T>(vals_line, &format!("{tag_want} {name}"), len)?);
        }
        params.push(name, shape, data);
    }

    validate_params(&model, &params)
        .map_err(|e| integrity("param", e.to_string()))?;

    let adam = AdamState {
        step: adam_step,
        m,
        v,
        beta1: real(adam_beta1),
        beta2: real(adam_beta2),
        epsilon: real(adam_epsilon),
        lr: real(adam_lr),
    };
    Ok(Checkpoint {
        model,
        k_neighbors,
        epoch,
        base_lr,
        lr_factor,
        params,
        adam,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    fn small_cfg() -> ModelConfig {
        let mut cfg = ModelConfig::new(3);
        cfg.edge_widths = vec![8, 8, 8];
        cfg.gat_width = 16;
        cfg.head_hidden = vec![16, 16];
        cfg
    }

    fn sample_checkpoint() -> Checkpoint<f64> {
        let model = small_cfg();
        let params = init_params::<f64>(&model, 9);
        let mut adam = AdamState::new(&params, 0.003);
        adam.step = 7;
        // non-trivial moments so the round trip exercises them
        for m in &mut adam.m {
            for (i, v) in m.iter_mut().enumerate() {
                *v = 0.01 * (i as f64 + 1.0);
            }
        }
        Checkpoint {
            model,
            k_neighbors: 12,
            epoch: 5,
            base_lr: 0.001,
            lr_factor: 0.995,
            params,
            adam,
        }
    }

    #[test]
    fn round_trip_preserves_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.txt");
        let ck = sample_checkpoint();
        save_checkpoint(&ck, &path).unwrap();
        let got = load_checkpoint::<f64>(&path).unwrap();
        assert_eq!(got.epoch, 5);
        assert_eq!(got.k_neighbors, 12);
        assert_eq!(got.model, ck.model);
        assert_eq!(got.adam.step, 7);
        assert_eq!(got.adam, ck.adam);
        for (a, b) in ck.params.entries().iter().zip(got.params.entries()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            assert_eq!(a.data, b.data);
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.txt");
        let p2 = dir.path().join("b.txt");
        let ck = sample_checkpoint();
        save_checkpoint(&ck, &p1).unwrap();
        let loaded = load_checkpoint::<f64>(&p1).unwrap();
        save_checkpoint(&loaded, &p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn truncated_file_names_missing_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.txt");
        save_checkpoint(&sample_checkpoint(), &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let head: Vec<&str> = text.lines().take(4).collect();
        fs::write(&path, head.join("\n")).unwrap();
        match load_checkpoint::<f64>(&path) {
            Err(CheckpointError::Integrity { field, .. }) => {
                assert_eq!(field, "edge_widths");
            }
            other => panic!("expected integrity error, got {other:?}"),
        }
    }

    #[test]
    fn corrupt_value_names_the_parameter() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.txt");
        save_checkpoint(&sample_checkpoint(), &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        // clobber the value line right after the first param header
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        let hdr = lines.iter().position(|l| l.starts_with("param ")).unwrap();
        let name = lines[hdr].split_whitespace().nth(1).unwrap().to_string();
        lines[hdr + 1] = "bogus".into();
        fs::write(&path, lines.join("\n")).unwrap();
        match load_checkpoint::<f64>(&path) {
            Err(CheckpointError::Integrity { field, .. }) => assert_eq!(field, name),
            other => panic!("expected integrity error, got {other:?}"),
        }
    }

    #[test]
    fn config_parameter_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.txt");
        save_checkpoint(&sample_checkpoint(), &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        // claim a different width than the stored arrays
        let text = text.replace("gat_width = 16", "gat_width = 32");
        fs::write(&path, text).unwrap();
        match load_checkpoint::<f64>(&path) {
            Err(CheckpointError::Integrity { field, .. }) => assert_eq!(field, "param"),
            other => panic!("expected integrity error, got {other:?}"),
        }
    }
}
