//! File formats.
//!
//! | object            | format                                                        |
//! |-------------------|---------------------------------------------------------------|
//! | signal            | JSON `{"fs", "samples"}` or CSV `t,value` (fs given separately) |
//! | SSP map           | CSV, first line `# L_win=<int> fs=<float>`, then rows          |
//! | autocorrelation   | CSV `t_m,value`                                                |
//! | gradient batch    | binary `DOHAGRAD`, u32 N, u32 D, N·D f64 (LE); or CSV rows     |
//! | norm queue        | CSV, one norm per line, oldest first                           |
//! | clip              | binary `DOHACLIP`, u32 C, u32 T, C·T f64 (LE), channel-major   |
//! | metrics           | CSV `epoch,mode,train_loss,holdout_mae,holdout_rmse,holdout_r` |
//!
//! Floats are written in shortest round-trip form, so every writer/reader
//! pair is lossless.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{DohaError, Result};
use crate::harmonizer::{GradientBatch, Mode};
use crate::signal::Signal;
use crate::ssp::{AutocorrSeq, SspMap};
use crate::toy::corpus::{Corpus, CorpusItem, DomainSpec};
use crate::toy::model::Clip;
use crate::toy::train::EpochMetrics;

pub const GRAD_MAGIC: &[u8; 8] = b"DOHAGRAD";
pub const CLIP_MAGIC: &[u8; 8] = b"DOHACLIP";

fn format_err<T>(path: &Path, msg: impl std::fmt::Display) -> Result<T> {
    Err(DohaError::Format(format!("{}: {msg}", path.display())))
}

fn parse_f64(path: &Path, line: usize, s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| DohaError::Format(format!("{}:{line}: not a number: {s:?}", path.display())))
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    create_parent(path)?;
    fs::write(path, text)?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| DohaError::Format(format!("{}: {e}", path.display())))
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

// ---------------------------------------------------------------- signals

pub fn write_signal_csv(path: &Path, signal: &Signal) -> Result<()> {
    let mut out = String::from("t,value\n");
    for (t, v) in signal.samples.iter().enumerate() {
        out.push_str(&format!("{t},{v}\n"));
    }
    write_text(path, &out)
}

/// Reads a `t,value` CSV; rows must be in `t` order starting at 0.
pub fn read_signal_csv(path: &Path, fs: f64) -> Result<Signal> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "t" || &headers[1] != "value" {
        return format_err(path, "expected header `t,value`");
    }
    let mut samples = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let t = parse_f64(path, k + 2, &rec[0])?;
        if t != k as f64 {
            return format_err(path, format!("row {} has t={t}, expected {k}", k + 2));
        }
        samples.push(parse_f64(path, k + 2, &rec[1])?);
    }
    Signal::new(samples, fs)
}

/// Writes JSON unless the extension is `.csv`.
pub fn write_signal(path: &Path, signal: &Signal) -> Result<()> {
    if is_csv(path) {
        write_signal_csv(path, signal)
    } else {
        write_json(path, signal)
    }
}

/// Reads JSON, or CSV when the extension is `.csv` (which needs `fs`).
pub fn read_signal(path: &Path, fs: Option<f64>) -> Result<Signal> {
    if is_csv(path) {
        let fs = fs.ok_or_else(|| DohaError::Parameter("a CSV signal needs a sampling rate (--fs)".into()))?;
        read_signal_csv(path, fs)
    } else {
        let s: Signal = read_json(path)?;
        Signal::new(s.samples, s.fs)
    }
}

// ---------------------------------------------------------------- SSP maps

pub fn ssp_to_csv(map: &SspMap) -> String {
    let mut out = format!("# L_win={} fs={}\n", map.l_win, map.fs);
    for i in 0..map.size() {
        let row: Vec<String> = map.row(i).iter().map(f64::to_string).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_ssp_csv(path: &Path, map: &SspMap) -> Result<()> {
    write_text(path, &ssp_to_csv(map))
}

pub fn read_ssp_csv(path: &Path) -> Result<SspMap> {
    let file = BufReader::new(fs::File::open(path)?);
    let mut lines = file.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    let (l_win, fs) = parse_ssp_header(&header).ok_or_else(|| {
        DohaError::Format(format!("{}: expected header `# L_win=<int> fs=<float>`", path.display()))
    })?;
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line.split(',').map(|s| parse_f64(path, k + 2, s)).collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    SspMap::from_rows(&rows, l_win, fs).or_else(|e| format_err(path, e))
}

fn parse_ssp_header(line: &str) -> Option<(usize, f64)> {
    let rest = line.trim().strip_prefix('#')?;
    let (mut l_win, mut fs) = (None, None);
    for part in rest.split_whitespace() {
        match part.split_once('=')? {
            ("L_win", v) => l_win = v.parse().ok(),
            ("fs", v) => fs = v.parse().ok(),
            _ => {}
        }
    }
    Some((l_win?, fs?))
}

pub fn write_seq_csv(path: &Path, seq: &AutocorrSeq) -> Result<()> {
    let mut out = String::from("t_m,value\n");
    for (t, v) in seq.values.iter().enumerate() {
        out.push_str(&format!("{t},{v}\n"));
    }
    write_text(path, &out)
}

pub fn read_seq_csv(path: &Path, fs: f64) -> Result<AutocorrSeq> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut values = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        values.push(parse_f64(path, k + 2, &rec?[1])?);
    }
    Ok(AutocorrSeq { values, fs })
}

// ---------------------------------------------------------------- gradients

fn read_header(path: &Path, bytes: &[u8], magic: &[u8; 8]) -> Result<(usize, usize)> {
    if bytes.len() < 16 || &bytes[..8] != magic {
        return format_err(path, format!("missing {} header", String::from_utf8_lossy(magic)));
    }
    let a = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let b = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let expected = a.checked_mul(b).and_then(|n| n.checked_mul(8)).and_then(|n| n.checked_add(16));
    if expected != Some(bytes.len()) {
        return format_err(path, format!("header says {a}x{b} values but the file holds {} bytes", bytes.len()));
    }
    Ok((a, b))
}

fn decode_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()
}

fn encode(magic: &[u8; 8], a: usize, b: usize, values: impl Iterator<Item = f64>) -> Result<Vec<u8>> {
    let a32 = u32::try_from(a).map_err(|_| DohaError::Parameter("dimension exceeds u32".into()))?;
    let b32 = u32::try_from(b).map_err(|_| DohaError::Parameter("dimension exceeds u32".into()))?;
    let mut out = Vec::with_capacity(16 + a * b * 8);
    out.extend_from_slice(magic);
    out.extend_from_slice(&a32.to_le_bytes());
    out.extend_from_slice(&b32.to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn write_grads_bin(path: &Path, batch: &GradientBatch) -> Result<()> {
    let bytes = encode(GRAD_MAGIC, batch.len(), batch.dim(), batch.grads.iter().flatten().copied())?;
    create_parent(path)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn write_grads_csv(path: &Path, batch: &GradientBatch) -> Result<()> {
    let mut out = String::new();
    for g in &batch.grads {
        let row: Vec<String> = g.iter().map(f64::to_string).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_text(path, &out)
}

/// Binary unless the extension is `.csv`.
pub fn write_grads(path: &Path, batch: &GradientBatch) -> Result<()> {
    if is_csv(path) {
        write_grads_csv(path, batch)
    } else {
        write_grads_bin(path, batch)
    }
}

/// Reads either gradient format, recognising the binary one by its magic.
/// Instance ids are the row indices.
pub fn read_grads(path: &Path) -> Result<GradientBatch> {
    let bytes = fs::read(path)?;
    let grads = if bytes.starts_with(GRAD_MAGIC) {
        let (n, d) = read_header(path, &bytes, GRAD_MAGIC)?;
        let flat = decode_f64s(&bytes[16..]);
        if d == 0 {
            vec![Vec::new(); n]
        } else {
            flat.chunks(d).map(<[f64]>::to_vec).collect()
        }
    } else {
        let text = String::from_utf8(bytes).or_else(|_| format_err(path, "neither DOHAGRAD nor UTF-8 CSV"))?;
        let mut rows = Vec::new();
        for (k, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            rows.push(line.split(',').map(|s| parse_f64(path, k + 1, s)).collect::<Result<Vec<_>>>()?);
        }
        rows
    };
    GradientBatch::from_grads(grads).or_else(|e| format_err(path, e))
}

pub fn write_queue_csv(path: &Path, norms: impl IntoIterator<Item = f64>) -> Result<()> {
    let mut out = String::new();
    for v in norms {
        out.push_str(&format!("{v}\n"));
    }
    write_text(path, &out)
}

pub fn read_queue_csv(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    let mut norms = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line == "norm" {
            continue;
        }
        let v = parse_f64(path, k + 1, line)?;
        if !(v.is_finite() && v >= 0.0) {
            return format_err(path, format!("line {}: norm must be finite and >= 0", k + 1));
        }
        norms.push(v);
    }
    Ok(norms)
}

// ---------------------------------------------------------------- clips

pub fn clip_to_bytes(clip: &Clip) -> Result<Vec<u8>> {
    encode(CLIP_MAGIC, clip.channels(), clip.frames(), clip.data().iter().copied())
}

pub fn write_clip(path: &Path, clip: &Clip) -> Result<()> {
    let bytes = clip_to_bytes(clip)?;
    create_parent(path)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_clip(path: &Path) -> Result<Clip> {
    let bytes = fs::read(path)?;
    let (c, t) = read_header(path, &bytes, CLIP_MAGIC)?;
    Clip::new(c, t, decode_f64s(&bytes[16..])).or_else(|e| format_err(path, e))
}

// ---------------------------------------------------------------- corpora

/// Root descriptor of a corpus directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CorpusIndex {
    fs: f64,
    l_win: usize,
    domains: Vec<DomainSpec>,
    /// Item counts per domain, in domain order.
    counts: Vec<usize>,
}

/// Per-item sidecar next to the label map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSidecar {
    pub true_hr: f64,
    pub delay: usize,
    pub domain: String,
    #[serde(default)]
    pub burst: bool,
    #[serde(default)]
    pub label_fault: bool,
}

pub const CORPUS_INDEX: &str = "corpus.json";

fn item_stem(dir: &Path, domain: &str, k: usize) -> PathBuf {
    dir.join(domain).join(format!("item_{k:04}"))
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn check_domain_name(name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && name != "."
        && name != ".."
        && name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
    if ok {
        Ok(())
    } else {
        Err(DohaError::Parameter(format!("domain name {name:?} is not usable as a directory name")))
    }
}

/// Writes one directory per domain holding `item_NNNN.clip`,
/// `item_NNNN.ssp.csv`, `item_NNNN.json` and `item_NNNN.truth.json`, plus a
/// root `corpus.json`.
pub fn save_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    let mut names: Vec<&str> = Vec::new();
    for d in &corpus.domains {
        check_domain_name(&d.name)?;
        if names.contains(&d.name.as_str()) {
            return Err(DohaError::Parameter(format!("duplicate domain name {:?}", d.name)));
        }
        names.push(&d.name);
    }
    let mut counts = vec![0usize; corpus.domains.len()];
    for it in &corpus.items {
        let name = names
            .get(it.domain)
            .ok_or_else(|| DohaError::Parameter(format!("item refers to unknown domain {}", it.domain)))?;
        let stem = item_stem(dir, name, counts[it.domain]);
        counts[it.domain] += 1;
        write_clip(&with_suffix(&stem, ".clip"), &it.clip)?;
        write_ssp_csv(&with_suffix(&stem, ".ssp.csv"), &it.label)?;
        write_json(&with_suffix(&stem, ".truth.json"), &it.truth)?;
        let side = LabelSidecar {
            true_hr: it.true_hr,
            delay: it.delay,
            domain: name.to_string(),
            burst: it.burst,
            label_fault: it.label_fault,
        };
        write_json(&with_suffix(&stem, ".json"), &side)?;
    }
    let index = CorpusIndex { fs: corpus.fs, l_win: corpus.l_win, domains: corpus.domains.clone(), counts };
    write_json(&dir.join(CORPUS_INDEX), &index)
}

/// Inverse of [`save_corpus`]; items come back grouped by domain.
pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let index_path = dir.join(CORPUS_INDEX);
    if !index_path.is_file() {
        return Err(DohaError::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} is not a corpus directory (no {CORPUS_INDEX})", dir.display()),
        )));
    }
    let index: CorpusIndex = read_json(&index_path)?;
    if index.counts.len() != index.domains.len() {
        return format_err(&index_path, "counts and domains differ in length");
    }
    let mut items = Vec::new();
    for (d, (spec, &count)) in index.domains.iter().zip(&index.counts).enumerate() {
        check_domain_name(&spec.name)?;
        for k in 0..count {
            let stem = item_stem(dir, &spec.name, k);
            let side_path = with_suffix(&stem, ".json");
            let side: LabelSidecar = read_json(&side_path)?;
            if side.domain != spec.name {
                return format_err(&side_path, format!("sidecar names domain {:?}", side.domain));
            }
            let clip = read_clip(&with_suffix(&stem, ".clip"))?;
            let label = read_ssp_csv(&with_suffix(&stem, ".ssp.csv"))?;
            let truth_path = with_suffix(&stem, ".truth.json");
            let truth = read_signal(&truth_path, None)?;
            items.push(CorpusItem {
                domain: d,
                clip,
                truth,
                label,
                true_hr: side.true_hr,
                delay: side.delay,
                burst: side.burst,
                label_fault: side.label_fault,
            });
        }
    }
    Ok(Corpus { domains: index.domains, fs: index.fs, l_win: index.l_win, items })
}

// ---------------------------------------------------------------- metrics

/// One row of a metrics file. Missing held-out scores are written as `NA`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub mode: Mode,
    pub train_loss: f64,
    pub holdout_mae: Option<f64>,
    pub holdout_rmse: Option<f64>,
    pub holdout_r: Option<f64>,
}

impl From<&EpochMetrics> for MetricsRow {
    fn from(m: &EpochMetrics) -> Self {
        Self {
            epoch: m.epoch,
            mode: m.mode,
            train_loss: m.train_loss,
            holdout_mae: m.holdout.map(|h| h.mae),
            holdout_rmse: m.holdout.map(|h| h.rmse),
            holdout_r: m.holdout.and_then(|h| h.pearson),
        }
    }
}

pub const METRICS_HEADER: &str = "epoch,mode,train_loss,holdout_mae,holdout_rmse,holdout_r";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

pub fn metrics_to_csv(rows: &[MetricsRow]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch,
            r.mode,
            r.train_loss,
            opt(r.holdout_mae),
            opt(r.holdout_rmse),
            opt(r.holdout_r)
        ));
    }
    out
}

pub fn write_metrics_csv(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    let rows: Vec<MetricsRow> = metrics.iter().map(MetricsRow::from).collect();
    write_text(path, &metrics_to_csv(&rows))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if headers.join(",") != METRICS_HEADER {
        return format_err(path, format!("expected header `{METRICS_HEADER}`"));
    }
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let maybe = |s: &str| -> Result<Option<f64>> {
            if s == "NA" {
                Ok(None)
            } else {
                parse_f64(path, line, s).map(Some)
            }
        };
        rows.push(MetricsRow {
            epoch: rec[0]
                .parse()
                .map_err(|_| DohaError::Format(format!("{}:{line}: bad epoch", path.display())))?,
            mode: rec[1].parse().or_else(|e| format_err(path, e))?,
            train_loss: parse_f64(path, line, &rec[2])?,
            holdout_mae: maybe(&rec[3])?,
            holdout_rmse: maybe(&rec[4])?,
            holdout_r: maybe(&rec[5])?,
        });
    }
    Ok(rows)
}
