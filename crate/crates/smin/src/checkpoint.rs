//! Text checkpoint format: a versioned header, the config hash, and every
//! parameter tensor with a shape line. Values print with Rust's shortest
//! round-trip float formatting, so reloads are bit-exact.

use std::fs;
use std::path::Path;

use crate::error::{Result, SminError};
use crate::metapath::MetapathKind;
use crate::model::ModelParams;
use crate::numerics::DenseMatrix;

const MAGIC: &str = "smin-checkpoint v1";

pub fn write(path: &Path, params: &ModelParams, config_hash: &str, epoch: usize) -> Result<()> {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    out.push_str(&format!("config_hash {config_hash}\n"));
    out.push_str(&format!("epoch {epoch}\n"));
    out.push_str(&format!("d {}\n", params.d));
    out.push_str(&format!("layers {}\n", params.layers));
    let paths: Vec<String> = params.metapaths.iter().map(|k| k.to_string()).collect();
    out.push_str(&format!("metapaths {}\n", paths.join(",")));
    out.push_str(&format!(
        "shape users {} items {}\n",
        params.user_count(),
        params.item_count()
    ));
    for (name, tensor) in params.tensors() {
        out.push_str(&format!("tensor {name} {} {}\n", tensor.rows(), tensor.cols()));
        for r in 0..tensor.rows() {
            let row: Vec<String> = tensor.row(r).iter().map(|v| format!("{v}")).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
    }
    out.push_str("end\n");
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, out)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub struct Checkpoint {
    pub params: ModelParams,
    pub config_hash: String,
    pub epoch: usize,
}

pub fn read(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path)
        .map_err(|e| SminError::Checkpoint(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    let bad = |msg: &str| SminError::Checkpoint(format!("{}: {msg}", path.display()));

    if lines.next() != Some(MAGIC) {
        return Err(bad("not a checkpoint file"));
    }
    let mut config_hash = String::new();
    let mut epoch = 0usize;
    let mut d = 0usize;
    let mut layers = 0usize;
    let mut metapaths: Vec<MetapathKind> = Vec::new();
    let mut users = 0usize;
    let mut items = 0usize;
    let mut named: Vec<(String, DenseMatrix)> = Vec::new();

    while let Some(line) = lines.next() {
        let mut fields = line.split_whitespace();
        match fields.next() {
            Some("config_hash") => {
                config_hash = fields.next().ok_or_else(|| bad("missing hash"))?.to_string();
            }
            Some("epoch") => {
                epoch = fields
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad("bad epoch"))?;
            }
            Some("d") => {
                d = fields
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad("bad d"))?;
            }
            Some("layers") => {
                layers = fields
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad("bad layers"))?;
            }
            Some("metapaths") => {
                let list = fields.next().ok_or_else(|| bad("missing metapaths"))?;
                metapaths = list
                    .split(',')
                    .map(|s| s.parse())
                    .collect::<Result<Vec<_>>>()?;
            }
            Some("shape") => {
                let rest: Vec<&str> = fields.collect();
                if rest.len() != 4 || rest[0] != "users" || rest[2] != "items" {
                    return Err(bad("bad shape line"));
                }
                users = rest[1].parse().map_err(|_| bad("bad user count"))?;
                items = rest[3].parse().map_err(|_| bad("bad item count"))?;
            }
            Some("tensor") => {
                let name = fields.next().ok_or_else(|| bad("missing tensor name"))?;
                let rows: usize = fields
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad("bad tensor rows"))?;
                let cols: usize = fields
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad("bad tensor cols"))?;
                let mut data = Vec::with_capacity(rows * cols);
                for _ in 0..rows {
                    let row = lines.next().ok_or_else(|| bad("truncated tensor"))?;
                    for v in row.split_whitespace() {
                        data.push(
                            v.parse::<f64>()
                                .map_err(|_| bad(&format!("bad value in tensor '{name}'")))?,
                        );
                    }
                }
                if data.len() != rows * cols {
                    return Err(bad(&format!("tensor '{name}' has wrong value count")));
                }
                named.push((name.to_string(), DenseMatrix::from_vec(rows, cols, data)?));
            }
            Some("end") => break,
            Some(other) => return Err(bad(&format!("unexpected line '{other}'"))),
            None => continue,
        }
    }
    if d == 0 || layers == 0 || users == 0 || items == 0 {
        return Err(bad("incomplete header"));
    }
    let mut params = ModelParams::init(d, layers, &metapaths, users, items, 0)?;
    params.set_from_named(&named)?;
    Ok(Checkpoint {
        params,
        config_hash,
        epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metapath::MetapathKind;

    #[test]
    fn round_trip_is_bit_exact() {
        let params = ModelParams::init(4, 2, &MetapathKind::ALL, 3, 5, 123).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.tsv");
        write(&path, &params, "deadbeef", 7).unwrap();
        let loaded = read(&path).unwrap();
        assert_eq!(loaded.config_hash, "deadbeef");
        assert_eq!(loaded.epoch, 7);
        for ((an, at), (bn, bt)) in params.tensors().iter().zip(loaded.params.tensors().iter()) {
            assert_eq!(an, bn);
            assert_eq!(at.values(), bt.values(), "tensor {an} drifted");
        }
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tsv");
        std::fs::write(&path, "nonsense\n").unwrap();
        assert!(matches!(read(&path), Err(SminError::Checkpoint(_))));
    }
}
