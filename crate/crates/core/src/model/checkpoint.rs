//! Plain-text checkpoints. Values are written with the shortest exact `f64`
//! representation, so a save/load round trip is bitwise.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use super::{Ablations, Model, ModelConfig};
use crate::numerics::{AdamState, Tensor};

const MAGIC: &str = "tegaarec-checkpoint 1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("checkpoint does not match the model: {0}")]
    Mismatch(String),
}

/// A model plus optional optimizer state and free-form training metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub adam: Option<AdamState>,
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(model: Model) -> Self {
        Self {
            model,
            adam: None,
            meta: BTreeMap::new(),
        }
    }
}

fn write_values(out: &mut String, values: &[f64], cols: usize) {
    for row in values.chunks(cols.max(1)) {
        let mut first = true;
        for v in row {
            if !first {
                out.push(' ');
            }
            first = false;
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
}

fn config_lines(c: &ModelConfig) -> Vec<(&'static str, String)> {
    let ab = c.ablations.enabled();
    vec![
        ("num_users", c.num_users.to_string()),
        ("num_items", c.num_items.to_string()),
        ("dim", c.dim.to_string()),
        ("heads", c.heads.to_string()),
        ("layers", c.layers.to_string()),
        ("ff_mult", c.ff_mult.to_string()),
        ("max_len", c.max_len.to_string()),
        ("layer_norm_eps", c.layer_norm_eps.to_string()),
        ("dropout", c.dropout.to_string()),
        ("init_std", c.init_std.to_string()),
        ("ablations", if ab.is_empty() { "-".into() } else { ab.join(",") }),
    ]
}

pub fn write_checkpoint(ckpt: &Checkpoint) -> String {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    for (k, v) in config_lines(&ckpt.model.config) {
        let _ = writeln!(out, "config {k} {v}");
    }
    for (k, v) in &ckpt.meta {
        let _ = writeln!(out, "meta {k} {v}");
    }
    let params = &ckpt.model.params;
    for (name, t) in params.names.iter().zip(&params.tensors) {
        let _ = writeln!(out, "tensor {name} {} {}", t.rows(), t.cols());
        write_values(&mut out, t.data(), t.cols());
    }
    if let Some(adam) = &ckpt.adam {
        let _ = writeln!(
            out,
            "adam {} {} {} {}",
            adam.step, adam.beta1, adam.beta2, adam.epsilon
        );
        for (i, name) in params.names.iter().enumerate() {
            let cols = params.tensors[i].cols();
            let _ = writeln!(out, "moment1 {name}");
            write_values(&mut out, &adam.first[i], cols);
            let _ = writeln!(out, "moment2 {name}");
            write_values(&mut out, &adam.second[i], cols);
        }
    }
    out.push_str("end\n");
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str, CheckpointError> {
        match self.inner.next() {
            Some((i, l)) => {
                self.last = i + 1;
                Ok(l)
            }
            None => Err(self.err("unexpected end of file")),
        }
    }

    fn err(&self, message: impl Into<String>) -> CheckpointError {
        CheckpointError::Parse {
            line: self.last,
            message: message.into(),
        }
    }

    fn values(&mut self, rows: usize, cols: usize) -> Result<Vec<f64>, CheckpointError> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let line = self.next()?;
            let before = data.len();
            for tok in line.split_ascii_whitespace() {
                let v: f64 = tok.parse().map_err(|_| self.err(format!("bad number {tok:?}")))?;
                if !v.is_finite() {
                    return Err(self.err("non-finite value"));
                }
                data.push(v);
            }
            if data.len() - before != cols {
                return Err(self.err(format!("expected {cols} values, found {}", data.len() - before)));
            }
        }
        Ok(data)
    }
}

fn parse_config(
    entries: &BTreeMap<String, String>,
    lines: &Lines<'_>,
) -> Result<ModelConfig, CheckpointError> {
    let get = |k: &str| {
        entries
            .get(k)
            .ok_or_else(|| lines.err(format!("missing config key {k}")))
    };
    fn num<T: std::str::FromStr>(lines: &Lines<'_>, k: &str, v: &str) -> Result<T, CheckpointError> {
        v.parse().map_err(|_| lines.err(format!("bad value {v:?} for {k}")))
    }
    let mut ablations = Ablations::default();
    let ab = get("ablations")?;
    if ab != "-" {
        for name in ab.split(',') {
            ablations
                .set(name, true)
                .map_err(|e| lines.err(e.to_string()))?;
        }
    }
    let config = ModelConfig {
        num_users: num(lines, "num_users", get("num_users")?)?,
        num_items: num(lines, "num_items", get("num_items")?)?,
        dim: num(lines, "dim", get("dim")?)?,
        heads: num(lines, "heads", get("heads")?)?,
        layers: num(lines, "layers", get("layers")?)?,
        ff_mult: num(lines, "ff_mult", get("ff_mult")?)?,
        max_len: num(lines, "max_len", get("max_len")?)?,
        layer_norm_eps: num(lines, "layer_norm_eps", get("layer_norm_eps")?)?,
        dropout: num(lines, "dropout", get("dropout")?)?,
        init_std: num(lines, "init_std", get("init_std")?)?,
        ablations,
    };
    config
        .validate()
        .map_err(|e| CheckpointError::Mismatch(e.to_string()))?;
    Ok(config)
}

/// Parses a checkpoint. Tensor names and shapes must match the layout implied
/// by the stored configuration.
pub fn read_checkpoint(text: &str) -> Result<Checkpoint, CheckpointError> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        last: 0,
    };
    if lines.next()? != MAGIC {
        return Err(lines.err("not a tegaarec checkpoint"));
    }
    let mut config = BTreeMap::new();
    let mut meta = BTreeMap::new();
    let mut line = lines.next()?;
    loop {
        let mut parts = line.splitn(3, ' ');
        let (kind, key, value) = (parts.next(), parts.next(), parts.next().unwrap_or(""));
        match (kind, key) {
            (Some("config"), Some(k)) => config.insert(k.to_string(), value.to_string()),
            (Some("meta"), Some(k)) => meta.insert(k.to_string(), value.to_string()),
            _ => break,
        };
        line = lines.next()?;
    }
    let config = parse_config(&config, &lines)?;
    let mut model = Model::new(config, 0).map_err(|e| CheckpointError::Mismatch(e.to_string()))?;
    let count = model.params.len();
    for i in 0..count {
        let expected = &model.params.tensors[i];
        let mut f = line.split(' ');
        let (Some("tensor"), Some(name), Some(r), Some(c), None) = (f.next(), f.next(), f.next(), f.next(), f.next())
        else {
            return Err(lines.err(format!("expected a tensor header, found {line:?}")));
        };
        if name != model.params.names[i] {
            return Err(CheckpointError::Mismatch(format!(
                "tensor {i} is {name}, expected {}",
                model.params.names[i]
            )));
        }
        let rows: usize = r.parse().map_err(|_| lines.err("bad row count"))?;
        let cols: usize = c.parse().map_err(|_| lines.err("bad column count"))?;
        if rows != expected.rows() || cols != expected.cols() {
            return Err(CheckpointError::Mismatch(format!(
                "{name} has shape {rows}x{cols}, expected {}x{}",
                expected.rows(),
                expected.cols()
            )));
        }
        let data = lines.values(rows, cols)?;
        let shape = expected.shape().to_vec();
        model.params.tensors[i] = Arc::new(Tensor::new(shape, data).map_err(|e| lines.err(e.to_string()))?);
        line = lines.next()?;
    }
    let mut adam = None;
    if let Some(rest) = line.strip_prefix("adam ") {
        let f: Vec<&str> = rest.split(' ').collect();
        if f.len() != 4 {
            return Err(lines.err("adam header needs step, beta1, beta2 and epsilon"));
        }
        let bad = |_| lines.err("bad adam header");
        let mut state = AdamState::with_hyper(
            model.params.sizes(),
            f[1].parse().map_err(bad)?,
            f[2].parse().map_err(bad)?,
            f[3].parse().map_err(bad)?,
        );
        state.step = f[0].parse().map_err(|_| lines.err("bad adam step"))?;
        for i in 0..count {
            let name = &model.params.names[i];
            let (rows, cols) = (model.params.tensors[i].rows(), model.params.tensors[i].cols());
            for (tag, buf) in [("moment1", &mut state.first[i]), ("moment2", &mut state.second[i])] {
                let header = lines.next()?;
                if header != format!("{tag} {name}") {
                    return Err(lines.err(format!("expected {tag} {name}, found {header:?}")));
                }
                *buf = lines.values(rows, cols)?;
            }
        }
        adam = Some(state);
        line = lines.next()?;
    }
    if line != "end" {
        return Err(lines.err(format!("expected end, found {line:?}")));
    }
    Ok(Checkpoint { model, adam, meta })
}
