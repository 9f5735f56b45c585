//! Text checkpoint format, version 1.
//!
//! ```text
//! DPNAV-CKPT-1
//! config <key> = <value>          one line per ModelConfig field
//! param <path> <d0,d1,...>        shape of the tensor
//! <v0> <v1> ...                   row-major values on the next line
//! buffer <path> <len>             batch-norm running statistic
//! <v0> <v1> ...
//! end
//! ```
//!
//! Values are written in the shortest decimal form that parses back to the
//! same `f64`, so f64 checkpoints round-trip bit-exactly. Paths and keys
//! contain no whitespace. Records may appear in any order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{ModelConfig, ModelError, ModelParams, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &str = "DPNAV-CKPT-1";

fn values_line<T: Scalar>(w: &mut impl Write, data: &[T]) -> std::io::Result<()> {
    let mut first = true;
    for v in data {
        if !first {
            w.write_all(b" ")?;
        }
        first = false;
        write!(w, "{:?}", v.to_f64_lossy())?;
    }
    w.write_all(b"\n")
}

pub fn write_checkpoint<T: Scalar>(w: &mut impl Write, cfg: &ModelConfig, params: &ModelParams<T>) -> Result<()> {
    writeln!(w, "{CHECKPOINT_MAGIC}")?;
    for (k, v) in cfg.to_kv() {
        writeln!(w, "config {k} = {v}")?;
    }
    for (path, t) in &params.params {
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        writeln!(w, "param {path} {}", dims.join(","))?;
        values_line(w, t.data())?;
    }
    for (path, b) in &params.buffers {
        writeln!(w, "buffer {path} {}", b.len())?;
        values_line(w, b)?;
    }
    writeln!(w, "end")?;
    Ok(())
}

pub fn save_checkpoint<T: Scalar>(path: impl AsRef<Path>, cfg: &ModelConfig, params: &ModelParams<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, cfg, params)?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<T: Scalar>(r: impl BufRead) -> Result<(ModelConfig, ModelParams<T>)> {
    let mut lines = r.lines().enumerate();
    let err = |line: usize, msg: String| ModelError::Checkpoint { line: line + 1, msg };
    match lines.next() {
        Some((_, Ok(l))) if l.trim_end() == CHECKPOINT_MAGIC => {}
        Some((i, Ok(l))) => return Err(err(i, format!("expected `{CHECKPOINT_MAGIC}`, found `{l}`"))),
        Some((_, Err(e))) => return Err(e.into()),
        None => return Err(err(0, "empty file".into())),
    }
    let mut cfg = ModelConfig::default();
    let mut params = BTreeMap::new();
    let mut buffers = BTreeMap::new();
    let mut ended = false;

    let next_values = |lines: &mut dyn Iterator<Item = (usize, std::io::Result<String>)>, want: usize, at: usize| -> Result<Vec<T>> {
        let (i, l) = lines.next().ok_or_else(|| err(at, "missing value line".into()))?;
        let l = l?;
        let vals: Vec<T> = l
            .split_ascii_whitespace()
            .map(|s| s.parse::<f64>().map(T::lit).map_err(|_| err(i, format!("bad number `{s}`"))))
            .collect::<Result<_>>()?;
        if vals.len() != want {
            return Err(err(i, format!("{} values, expected {want}", vals.len())));
        }
        Ok(vals)
    };

    while let Some((i, line)) = lines.next() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.splitn(2, ' ');
        let tag = parts.next().unwrap_or_default();
        let rest = parts.next().unwrap_or_default();
        match tag {
            "config" => {
                let (k, v) = rest.split_once('=').ok_or_else(|| err(i, "config line without `=`".into()))?;
                cfg.set(k.trim(), v.trim()).map_err(|e| err(i, e.to_string()))?;
            }
            "param" => {
                let (path, dims) = rest.split_once(' ').ok_or_else(|| err(i, "param line needs path and shape".into()))?;
                let shape: Vec<usize> = dims
                    .split(',')
                    .map(|d| d.trim().parse().map_err(|_| err(i, format!("bad dimension `{d}`"))))
                    .collect::<Result<_>>()?;
                let vals = next_values(&mut lines, shape.iter().product(), i)?;
                params.insert(path.to_string(), Tensor::new(shape, vals)?);
            }
            "buffer" => {
                let (path, n) = rest.split_once(' ').ok_or_else(|| err(i, "buffer line needs path and length".into()))?;
                let n: usize = n.trim().parse().map_err(|_| err(i, format!("bad length `{n}`")))?;
                buffers.insert(path.to_string(), next_values(&mut lines, n, i)?);
            }
            "end" => {
                ended = true;
                break;
            }
            other => return Err(err(i, format!("unknown record `{other}`"))),
        }
    }
    if !ended {
        return Err(err(0, "truncated checkpoint (no `end`)".into()));
    }
    let params = ModelParams { params, buffers };
    cfg.validate()?;
    params.check(&cfg)?;
    Ok((cfg, params))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<(ModelConfig, ModelParams<T>)> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
