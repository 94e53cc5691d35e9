//! On-disk formats.
//!
//! - Embeddings (`EMB1`): an ASCII header line `EMB1 <rows> <dim> <f32|f64>`
//!   followed by little-endian row-major values. Row `r` has id `r`.
//! - Pairs: one `query_id<TAB>item_id` line per ground-truth edge.
//! - History: one `epoch<TAB>loss<TAB>lr` line per epoch.
//! - Encoders: two consecutive EMB1 blocks, the `d_in × d_out` weight and
//!   the `1 × d_out` bias.
//!
//! Every writer goes through a temporary file in the target directory and
//! renames it into place.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use clap::ValueEnum;
use vsematch::{EpochRecord, Matrix, PairIndex, ToyEncoder};

use crate::error::{CliError, Result};

pub const MAGIC: &str = "EMB1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    fn tag(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }

    fn width(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

pub fn encode_matrix(m: &Matrix, precision: Precision, out: &mut Vec<u8>) {
    out.extend_from_slice(format!("{MAGIC} {} {} {}\n", m.rows(), m.cols(), precision.tag()).as_bytes());
    for &v in m.as_slice() {
        match precision {
            Precision::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Precision::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
}

fn read_header(reader: &mut impl BufRead) -> std::result::Result<(usize, usize, Precision), String> {
    let mut line = Vec::new();
    reader
        .take(256)
        .read_until(b'\n', &mut line)
        .map_err(|e| e.to_string())?;
    if line.last() != Some(&b'\n') {
        return Err("missing or overlong EMB1 header line".into());
    }
    let line = std::str::from_utf8(&line[..line.len() - 1]).map_err(|_| "header is not ASCII")?;
    let fields: Vec<&str> = line.split(' ').collect();
    let [magic, rows, dim, ty] = fields.as_slice() else {
        return Err(format!("expected `{MAGIC} <rows> <dim> <f32|f64>`, got `{line}`"));
    };
    if *magic != MAGIC {
        return Err(format!("bad magic `{magic}`"));
    }
    let rows = rows.parse().map_err(|_| format!("bad row count `{rows}`"))?;
    let dim = dim.parse().map_err(|_| format!("bad dimension `{dim}`"))?;
    let precision = match *ty {
        "f32" => Precision::F32,
        "f64" => Precision::F64,
        other => return Err(format!("unknown value type `{other}`")),
    };
    Ok((rows, dim, precision))
}

fn read_block(reader: &mut impl BufRead) -> std::result::Result<Matrix, String> {
    let (rows, dim, precision) = read_header(reader)?;
    let len = rows.checked_mul(dim).ok_or("matrix size overflows")?;
    let bytes = len.checked_mul(precision.width()).ok_or("matrix size overflows")?;
    let mut raw = Vec::new();
    reader
        .take(bytes as u64)
        .read_to_end(&mut raw)
        .map_err(|e| e.to_string())?;
    if raw.len() != bytes {
        return Err(format!(
            "expected {bytes} bytes of {} data, found {}",
            precision.tag(),
            raw.len()
        ));
    }
    let data: Vec<f64> = match precision {
        Precision::F32 => raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Precision::F64 => raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Matrix::from_vec(rows, dim, data).map_err(|e| e.to_string())
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::io(path, e))
}

fn expect_eof(reader: &mut impl Read, path: &Path) -> Result<()> {
    let mut extra = [0u8; 1];
    match reader.read(&mut extra) {
        Ok(0) => Ok(()),
        Ok(_) => Err(CliError::format(path, "trailing bytes after the last block")),
        Err(e) => Err(CliError::io(path, e)),
    }
}

pub fn read_embeddings(path: &Path) -> Result<Matrix> {
    let mut reader = open(path)?;
    let m = read_block(&mut reader).map_err(|e| CliError::format(path, e))?;
    expect_eof(&mut reader, path)?;
    Ok(m)
}

pub fn write_embeddings(path: &Path, m: &Matrix, precision: Precision) -> Result<()> {
    let mut buf = Vec::new();
    encode_matrix(m, precision, &mut buf);
    write_atomic(path, &buf)
}

pub fn write_encoder(path: &Path, encoder: &ToyEncoder, precision: Precision) -> Result<()> {
    let mut buf = Vec::new();
    encode_matrix(&encoder.weight, precision, &mut buf);
    let bias = Matrix::from_vec(1, encoder.bias.len(), encoder.bias.clone())?;
    encode_matrix(&bias, precision, &mut buf);
    write_atomic(path, &buf)
}

pub fn read_encoder(path: &Path) -> Result<ToyEncoder> {
    let mut reader = open(path)?;
    let weight = read_block(&mut reader).map_err(|e| CliError::format(path, format!("weight: {e}")))?;
    let bias = read_block(&mut reader).map_err(|e| CliError::format(path, format!("bias: {e}")))?;
    expect_eof(&mut reader, path)?;
    if bias.rows() != 1 {
        return Err(CliError::format(
            path,
            format!("bias must have one row, found {}", bias.rows()),
        ));
    }
    Ok(ToyEncoder::new(weight, bias.into_vec())?)
}

fn parse_id(field: &str, what: &str, limit: usize) -> std::result::Result<usize, String> {
    let id = usize::from_str(field).map_err(|_| format!("{what} id `{field}` is not a row index"))?;
    if id >= limit {
        return Err(format!("{what} id {id} out of range (file has {limit} rows)"));
    }
    Ok(id)
}

/// Reads a pairs file against embedding sets of the given sizes.
pub fn read_pairs(path: &Path, n_queries: usize, n_items: usize) -> Result<PairIndex> {
    let mut edges = Vec::new();
    for (n, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let bad = |m: String| CliError::format(path, format!("line {}: {m}", n + 1));
        let (q, i) = line
            .split_once('\t')
            .ok_or_else(|| bad("expected `query_id<TAB>item_id`".into()))?;
        let q = parse_id(q, "query", n_queries).map_err(bad)?;
        let i = parse_id(i, "item", n_items).map_err(bad)?;
        edges.push((q, i));
    }
    Ok(PairIndex::from_pairs(edges, n_queries, n_items)?)
}

/// Pairs from `path`, or the diagonal when no file is given.
pub fn pairs_or_diagonal(path: Option<&Path>, n_queries: usize, n_items: usize) -> Result<PairIndex> {
    match path {
        Some(p) => read_pairs(p, n_queries, n_items),
        None if n_queries == n_items => Ok(PairIndex::diagonal(n_queries)),
        None => Err(CliError::Shape(format!(
            "no pairs file and {n_queries} queries vs {n_items} items cannot be paired diagonally"
        ))),
    }
}

pub fn write_pairs(path: &Path, pairs: &PairIndex) -> Result<()> {
    let mut text = String::new();
    for (q, i) in pairs.pairs() {
        writeln!(text, "{q}\t{i}").unwrap();
    }
    write_atomic(path, text.as_bytes())
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut text = String::new();
    for r in history {
        writeln!(text, "{}\t{:?}\t{:?}", r.epoch, r.loss, r.lr).unwrap();
    }
    write_atomic(path, text.as_bytes())
}

pub fn read_history(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut out = Vec::new();
    for (n, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        let bad = || CliError::format(path, format!("line {}: expected `epoch<TAB>loss<TAB>lr`", n + 1));
        let fields: Vec<&str> = line.split('\t').collect();
        let [epoch, loss, lr] = fields.as_slice() else {
            return Err(bad());
        };
        out.push(EpochRecord {
            epoch: epoch.parse().map_err(|_| bad())?,
            loss: loss.parse().map_err(|_| bad())?,
            lr: lr.parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

/// Writes `bytes` to a temporary sibling of `path`, then renames it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}
