//! Tab-separated outputs of the command-line tool.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Tensor2;
use crate::vae::TrainHistory;

pub const HISTORY_HEADER: &str = "epoch\trecon\tkl\tl1\tbeta\ttotal\tval_micro_f1\tval_cosine";

fn real(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(body.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// One row per epoch; reals carry 17 significant digits.
pub fn emit_history(history: &TrainHistory, path: &Path) -> Result<()> {
    if history.is_empty() {
        return Err(Error::Invalid("cannot emit an empty history".into()));
    }
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for r in &history.records {
        let l = &r.loss;
        let cells = [l.recon, l.kl, l.l1, l.beta, l.total, r.val_micro_f1, r.val_cosine];
        out.push_str(&r.epoch.to_string());
        for v in cells {
            out.push('\t');
            out.push_str(&real(v));
        }
        out.push('\n');
    }
    write_file(path, &out)
}

/// `sample_id z0 .. z{q-1}`, values printed with round-trip precision.
pub fn write_embedding(path: &Path, sample_ids: &[String], z: &Tensor2) -> Result<()> {
    let mut out = String::from("sample_id");
    for j in 0..z.cols() {
        out.push_str(&format!("\tz{j}"));
    }
    out.push('\n');
    for (i, sid) in sample_ids.iter().enumerate() {
        out.push_str(sid);
        for v in z.row(i) {
            out.push('\t');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    write_file(path, &out)
}

pub fn read_embedding(path: &Path) -> Result<(Vec<String>, Tensor2)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embedding(&text).map_err(|e| Error::in_file(path, e))
}

fn parse_embedding(text: &str) -> Result<(Vec<String>, Tensor2)> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(Error::NoRecords)?;
    let mut cols = header.split('\t');
    if cols.next() != Some("sample_id") {
        return Err(Error::Parse {
            line: 1,
            message: "embedding header must start with sample_id".into(),
        });
    }
    let dim = cols.count();
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        ids.push(fields.next().unwrap_or_default().to_string());
        let before = data.len();
        for f in fields {
            data.push(f.parse::<f64>().map_err(|_| Error::Parse {
                line: idx + 2,
                message: format!("value {f:?} is not a number"),
            })?);
        }
        if data.len() - before != dim {
            return Err(Error::Parse {
                line: idx + 2,
                message: format!("expected {dim} values, found {}", data.len() - before),
            });
        }
    }
    if ids.is_empty() {
        return Err(Error::NoRecords);
    }
    let n = ids.len();
    Ok((ids, Tensor2::from_vec(n, dim, data)?))
}

/// Two-column `header_a header_b` rows.
pub fn write_pairs<'a>(
    path: &Path,
    header: (&str, &str),
    rows: impl IntoIterator<Item = (&'a str, String)>,
) -> Result<()> {
    let mut out = format!("{}\t{}\n", header.0, header.1);
    for (a, b) in rows {
        out.push_str(&format!("{a}\t{b}\n"));
    }
    write_file(path, &out)
}

/// `metric value` rows; reals use 17 significant digits.
pub fn write_metrics(path: &Path, metrics: &[(&str, f64)]) -> Result<()> {
    write_pairs(path, ("metric", "value"), metrics.iter().map(|(k, v)| (*k, real(*v))))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_file(path, text)
}

/// `sample_id x y cluster label`.
pub fn write_scatter(
    path: &Path,
    sample_ids: &[String],
    xy: &Tensor2,
    clusters: &[usize],
    labels: &[String],
) -> Result<()> {
    let mut out = String::from("sample_id\tx\ty\tcluster\tlabel\n");
    for (i, sid) in sample_ids.iter().enumerate() {
        out.push_str(&format!(
            "{sid}\t{}\t{}\t{}\t{}\n",
            xy.get(i, 0),
            xy.get(i, 1),
            clusters[i],
            labels[i]
        ));
    }
    write_file(path, &out)
}

/// Reads a `sample_id<TAB>value` file such as labels or cluster assignments.
pub fn read_pairs_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut map = BTreeMap::new();
    let reader = std::io::BufReader::new(file);
    for (idx, line) in std::io::BufRead::lines(reader).enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if idx == 0 || line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('\t').ok_or_else(|| {
            Error::in_file(
                path,
                Error::Parse {
                    line: idx + 1,
                    message: "expected two tab-separated fields".into(),
                },
            )
        })?;
        map.insert(k.to_string(), v.to_string());
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vae::{EpochRecord, VaeLossBreakdown};

    #[test]
    fn history_format() {
        let rec = |epoch, beta| EpochRecord {
            epoch,
            loss: VaeLossBreakdown {
                recon: 0.5,
                kl: 1.0 / 3.0,
                l1: 0.0,
                beta,
                total: 0.5 + beta / 3.0,
            },
            val_micro_f1: 0.25,
            val_cosine: 0.75,
        };
        let h = TrainHistory {
            records: vec![rec(0, 0.0), rec(1, 0.5)],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.tsv");
        emit_history(&h, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], HISTORY_HEADER);
        let kl: Vec<&str> = lines[1].split('\t').collect();
        assert_eq!(kl[2], "3.3333333333333331e-1");
        assert_eq!(kl[2].parse::<f64>().unwrap(), 1.0 / 3.0);
        assert!(emit_history(&TrainHistory::default(), &p).is_err());
    }

    #[test]
    fn embedding_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.tsv");
        let z = Tensor2::from_rows(&[vec![0.1, -2.5e-17], vec![1.0 / 3.0, 7.0]]).unwrap();
        let ids = vec!["a".to_string(), "b".to_string()];
        write_embedding(&p, &ids, &z).unwrap();
        let (back_ids, back) = read_embedding(&p).unwrap();
        assert_eq!(back_ids, ids);
        assert_eq!(back, z);
        fs::write(&p, "sample_id\tz0\na\tx\n").unwrap();
        let err = read_embedding(&p).unwrap_err().to_string();
        assert!(err.contains("e.tsv") && err.contains("line 2"));
    }
}
