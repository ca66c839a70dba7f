//! Instance files in, score tables out.
//!
//! Instance files are JSON Lines, one task instance per line:
//!
//! ```json
//! {"id": "q17",
//!  "samples": [{"embedding": [0.6, 0.8], "seq_logprob": -0.9, "token_count": 3,
//!               "text": "a cat", "cluster_id": 0}],
//!  "greedy": {"embedding": [0.6, 0.8], "token_logprobs": [-0.1, -0.2]},
//!  "label": 1, "quality": 0.31}
//! ```
//!
//! A sample may give `token_logprobs` instead of `seq_logprob`; the sum is
//! used. Log-probabilities are natural logs. `label` is 1 for a correct
//! response and 0 for a wrong one.
//!
//! Score files are comma-separated with a header row and columns
//! `id, v, u, q, <baselines in alphabetical order>, label, quality`.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::kernel::{ResponseSample, ScoreBundle};

/// Off-norm embeddings within this distance of 1 are renormalized on load;
/// anything further is rejected.
pub const RENORMALIZE_LIMIT: f64 = 1e-3;

/// Identifier of the generator behind every seeded shuffle and draw.
pub const RNG_ALGORITHM: &str = "chacha20 (rand_chacha 0.9, seed_from_u64)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: String,
    pub samples: Vec<ResponseSample>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub greedy: Option<ResponseSample>,
    /// 1 = correct, 0 = wrong.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<f64>,
}

impl InstanceRecord {
    pub fn new(id: impl Into<String>, samples: Vec<ResponseSample>) -> Self {
        Self { id: id.into(), samples, greedy: None, label: None, quality: None }
    }

    pub fn k(&self) -> usize {
        self.samples.len()
    }

    /// True when every sample carries a cluster id.
    pub fn is_cluster_labeled(&self) -> bool {
        !self.samples.is_empty() && self.samples.iter().all(|s| s.cluster_id.is_some())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub records: Vec<InstanceRecord>,
    /// Shared embedding dimension; 0 for an empty dataset.
    pub dim: usize,
    pub provenance: String,
}

impl Dataset {
    pub fn new(records: Vec<InstanceRecord>, provenance: impl Into<String>) -> Result<Self> {
        let mut ids = HashSet::new();
        let mut dim = None;
        for rec in &records {
            if !ids.insert(rec.id.as_str()) {
                return Err(validation(format!("duplicate id '{}'", rec.id)));
            }
            let d = record_dim(rec)?;
            match dim {
                None => dim = Some(d),
                Some(prev) if prev != d => {
                    return Err(Error::Structural(format!(
                        "record '{}' has dimension {d}, expected {prev}",
                        rec.id
                    )))
                }
                _ => {}
            }
        }
        Ok(Self { records, dim: dim.unwrap_or(0), provenance: provenance.into() })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn subset(&self, idx: &[usize], tag: &str) -> Dataset {
        Dataset {
            records: idx.iter().map(|&i| self.records[i].clone()).collect(),
            dim: self.dim,
            provenance: format!("{} [{tag}]", self.provenance),
        }
    }
}

fn record_dim(rec: &InstanceRecord) -> Result<usize> {
    let first = rec
        .samples
        .first()
        .ok_or_else(|| validation(format!("record '{}' has no samples", rec.id)))?;
    let d = first.embedding.len();
    for (i, s) in rec.samples.iter().chain(rec.greedy.iter()).enumerate() {
        if s.embedding.len() != d {
            return Err(Error::Structural(format!(
                "record '{}' sample {i} has dimension {}, expected {d}",
                rec.id,
                s.embedding.len()
            )));
        }
    }
    Ok(d)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSample {
    embedding: Vec<f64>,
    #[serde(default)]
    seq_logprob: Option<f64>,
    #[serde(default)]
    token_logprobs: Option<Vec<f64>>,
    #[serde(default)]
    token_count: Option<u32>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    cluster_id: Option<i64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    samples: Vec<RawSample>,
    #[serde(default)]
    greedy: Option<RawSample>,
    #[serde(default)]
    label: Option<i64>,
    #[serde(default)]
    quality: Option<f64>,
}

fn convert_sample(raw: RawSample, what: &str) -> std::result::Result<ResponseSample, String> {
    let norm = raw.embedding.iter().map(|x| x * x).sum::<f64>().sqrt();
    if raw.embedding.is_empty() {
        return Err(format!("{what}: empty embedding"));
    }
    let off = (norm - 1.0).abs();
    let embedding = if !norm.is_finite() || off > RENORMALIZE_LIMIT {
        return Err(format!("{what}: embedding norm {norm} is not within {RENORMALIZE_LIMIT} of 1"));
    } else if off > crate::linalg::NORM_TOLERANCE {
        log::warn!("{what}: embedding norm {norm:.9}; renormalizing");
        raw.embedding.iter().map(|x| x / norm).collect()
    } else {
        raw.embedding
    };

    let seq_logprob = match (raw.seq_logprob, &raw.token_logprobs) {
        (Some(lp), _) => lp,
        (None, Some(t)) => t.iter().sum(),
        (None, None) => return Err(format!("{what}: needs seq_logprob or token_logprobs")),
    };
    if !seq_logprob.is_finite() || seq_logprob > 0.0 {
        return Err(format!("{what}: seq_logprob {seq_logprob} must be finite and <= 0"));
    }
    let token_count = match (raw.token_count, &raw.token_logprobs) {
        (Some(0), _) => return Err(format!("{what}: token_count must be >= 1")),
        (Some(n), _) => Some(n),
        (None, Some(t)) if !t.is_empty() => Some(t.len() as u32),
        _ => None,
    };
    Ok(ResponseSample {
        embedding,
        seq_logprob,
        token_count,
        token_logprobs: raw.token_logprobs,
        text: raw.text,
        cluster_id: raw.cluster_id,
    })
}

fn convert_record(raw: RawRecord) -> std::result::Result<InstanceRecord, String> {
    if raw.samples.is_empty() {
        return Err(format!("record '{}' has no samples", raw.id));
    }
    let mut missing_counts = false;
    let mut samples = Vec::with_capacity(raw.samples.len());
    for (i, s) in raw.samples.into_iter().enumerate() {
        let s = convert_sample(s, &format!("record '{}' sample {i}", raw.id))?;
        missing_counts |= s.token_count.is_none();
        samples.push(s);
    }
    if missing_counts {
        log::warn!(
            "record '{}': samples without token_count; length normalization is disabled for them",
            raw.id
        );
    }
    let greedy = raw
        .greedy
        .map(|g| convert_sample(g, &format!("record '{}' greedy", raw.id)))
        .transpose()?;
    let label = match raw.label {
        None => None,
        Some(l @ (0 | 1)) => Some(l as u8),
        Some(l) => return Err(format!("record '{}': label {l} is not 0 or 1", raw.id)),
    };
    if let Some(q) = raw.quality {
        if !q.is_finite() {
            return Err(format!("record '{}': quality {q} is not finite", raw.id));
        }
    }
    let rec = InstanceRecord { id: raw.id, samples, greedy, label, quality: raw.quality };
    record_dim(&rec).map_err(|e| e.to_string())?;
    Ok(rec)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Skip invalid lines instead of failing the whole file.
    pub lenient: bool,
}

/// Lines skipped in lenient mode, as `(line number, reason)`.
#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub skipped: Vec<(usize, String)>,
}

/// Strict load: any invalid line fails the whole file.
pub fn load_instances(path: impl AsRef<Path>) -> Result<Dataset> {
    load_instances_with(path, LoadOptions::default()).map(|(ds, _)| ds)
}

pub fn load_instances_with(path: impl AsRef<Path>, opts: LoadOptions) -> Result<(Dataset, LoadReport)> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut lines = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            lines.push((i + 1, line));
        }
    }
    let parsed: Vec<(usize, std::result::Result<InstanceRecord, String>)> = lines
        .into_par_iter()
        .map(|(n, line)| {
            let rec = serde_json::from_str::<RawRecord>(&line)
                .map_err(|e| e.to_string())
                .and_then(convert_record);
            (n, rec)
        })
        .collect();

    let mut report = LoadReport::default();
    let mut records = Vec::with_capacity(parsed.len());
    let mut ids = HashSet::new();
    let mut dim: Option<(usize, usize)> = None;
    let fail = |line: usize, message: String| Error::Parse { path: path.to_path_buf(), line, message };
    for (line, rec) in parsed {
        let checked = rec.and_then(|rec| {
            let d = rec.samples[0].embedding.len();
            if let Some((prev, from)) = dim {
                if d != prev {
                    return Err(format!(
                        "record '{}' has dimension {d} but line {from} has dimension {prev}",
                        rec.id
                    ));
                }
            }
            if ids.contains(&rec.id) {
                return Err(format!("duplicate id '{}'", rec.id));
            }
            Ok(rec)
        });
        match checked {
            Ok(rec) => {
                dim.get_or_insert((rec.samples[0].embedding.len(), line));
                ids.insert(rec.id.clone());
                records.push(rec);
            }
            Err(message) if opts.lenient => {
                log::warn!("{}:{line}: skipped: {message}", path.display());
                report.skipped.push((line, message));
            }
            Err(message) => return Err(fail(line, message)),
        }
    }
    let dataset = Dataset {
        records,
        dim: dim.map_or(0, |(d, _)| d),
        provenance: path.display().to_string(),
    };
    Ok((dataset, report))
}

/// Writes records as JSON Lines. Floats use the shortest round-tripping form.
pub fn write_instances(records: &[InstanceRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for rec in records {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// A seeded permutation of `0..n`.
pub fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    idx
}

/// Size of the development side for `n` records.
pub fn dev_size(n: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(validation(format!("dev fraction must be in (0, 1), got {fraction}")));
    }
    let m = (n as f64 * fraction).round() as usize;
    if m == 0 || m >= n {
        return Err(validation(format!(
            "dev fraction {fraction} on {n} records leaves an empty side"
        )));
    }
    Ok(m)
}

/// Index split used by [`split_dev`]; each side is returned in input order.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let m = dev_size(n, fraction)?;
    let order = shuffled_indices(n, seed);
    let mut dev = order[..m].to_vec();
    let mut eval = order[m..].to_vec();
    dev.sort_unstable();
    eval.sort_unstable();
    Ok((dev, eval))
}

/// Seeded dev/eval split. The dev side is for label-free calibration only.
pub fn split_dev(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (dev, eval) = split_indices(dataset.len(), fraction, seed)?;
    Ok((dataset.subset(&dev, "dev"), dataset.subset(&eval, "eval")))
}

/// 17 significant digits.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_cell(cell: &str, what: &str, line: usize, path: &Path) -> Result<Option<f64>> {
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse::<f64>().map(Some).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("bad {what} value '{cell}': {e}"),
    })
}

/// Writes one row per record in dataset order.
pub fn write_scores(dataset: &Dataset, bundles: &[ScoreBundle], path: impl AsRef<Path>) -> Result<()> {
    let table = ScoreTable::from_scores(dataset, bundles)?;
    table.write(path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub id: String,
    /// Aligned with [`ScoreTable::metric_columns`].
    pub metrics: Vec<f64>,
    pub label: Option<u8>,
    pub quality: Option<f64>,
}

/// An in-memory score file.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    /// `v, u, q` followed by baseline names.
    pub metric_columns: Vec<String>,
    pub rows: Vec<ScoreRow>,
}

impl ScoreTable {
    pub fn from_scores(dataset: &Dataset, bundles: &[ScoreBundle]) -> Result<Self> {
        if dataset.len() != bundles.len() {
            return Err(Error::Structural(format!(
                "{} records but {} score bundles",
                dataset.len(),
                bundles.len()
            )));
        }
        let baseline_names: Vec<String> = bundles
            .first()
            .map(|b| b.baselines.keys().cloned().collect())
            .unwrap_or_default();
        let mut metric_columns = vec!["v".to_string(), "u".into(), "q".into()];
        metric_columns.extend(baseline_names.iter().cloned());
        let mut rows = Vec::with_capacity(bundles.len());
        for (rec, b) in dataset.records.iter().zip(bundles) {
            if !b.baselines.keys().eq(baseline_names.iter()) {
                return Err(Error::Structural(format!(
                    "record '{}' has a different baseline set than the first record",
                    rec.id
                )));
            }
            let mut metrics = vec![b.v, b.u, b.q];
            metrics.extend(b.baselines.values().copied());
            rows.push(ScoreRow { id: rec.id.clone(), metrics, label: rec.label, quality: rec.quality });
        }
        Ok(Self { metric_columns, rows })
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["id".to_string()];
        h.extend(self.metric_columns.iter().cloned());
        h.push("label".into());
        h.push("quality".into());
        h
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.header())?;
        for row in &self.rows {
            let mut cells = vec![row.id.clone()];
            cells.extend(row.metrics.iter().map(|&x| format_float(x)));
            cells.push(row.label.map(|l| l.to_string()).unwrap_or_default());
            cells.push(row.quality.map(format_float).unwrap_or_default());
            w.write_record(&cells)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let n = header.len();
        if n < 3 || header[0] != "id" || header[n - 2] != "label" || header[n - 1] != "quality" {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: "score header must start with 'id' and end with 'label,quality'".into(),
            });
        }
        let metric_columns = header[1..n - 2].to_vec();
        let mut rows = Vec::new();
        let mut ids = HashSet::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let id = rec[0].to_string();
            if !ids.insert(id.clone()) {
                return Err(Error::Parse { path: path.to_path_buf(), line, message: format!("duplicate id '{id}'") });
            }
            let mut metrics = Vec::with_capacity(metric_columns.len());
            for (c, name) in metric_columns.iter().enumerate() {
                let v = parse_cell(&rec[c + 1], name, line, path)?.ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("missing value for '{name}'"),
                })?;
                metrics.push(v);
            }
            let label = match &rec[n - 2] {
                "" => None,
                "0" => Some(0),
                "1" => Some(1),
                other => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line,
                        message: format!("label '{other}' is not 0 or 1"),
                    })
                }
            };
            let quality = parse_cell(&rec[n - 1], "quality", line, path)?;
            rows.push(ScoreRow { id, metrics, label, quality });
        }
        Ok(Self { metric_columns, rows })
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.metric_columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| validation(format!("no metric column '{name}' (have {:?})", self.metric_columns)))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let c = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r.metrics[c]).collect())
    }

    /// Labels for every row; errors if any row is unlabeled.
    pub fn labels(&self) -> Result<Vec<u8>> {
        self.rows
            .iter()
            .map(|r| r.label.ok_or_else(|| validation(format!("row '{}' has no label", r.id))))
            .collect()
    }

    pub fn qualities(&self) -> Option<Vec<f64>> {
        self.rows.iter().map(|r| r.quality).collect()
    }
}

/// Sidecar path for a run's audit record, e.g. `scores.csv.run.json`.
pub fn sidecar_path(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let f = write_lines(&[]);
        let ds = load_instances(f.path()).unwrap();
        assert!(ds.is_empty());
        assert_eq!(ds.dim, 0);
    }

    #[test]
    fn token_logprobs_are_summed() {
        let f = write_lines(&[r#"{"id":"a","samples":[{"embedding":[1.0,0.0],"token_logprobs":[-0.5,-0.5]}]}"#]);
        let ds = load_instances(f.path()).unwrap();
        let s = &ds.records[0].samples[0];
        assert_eq!(s.seq_logprob, -1.0);
        assert_eq!(s.token_count, Some(2));
    }

    #[test]
    fn slightly_off_norm_is_renormalized() {
        let f = write_lines(&[r#"{"id":"a","samples":[{"embedding":[1.0005,0.0],"seq_logprob":-1.0}]}"#]);
        let ds = load_instances(f.path()).unwrap();
        let e = &ds.records[0].samples[0].embedding;
        let n = e.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-15);
    }

    #[test]
    fn far_off_norm_is_rejected_with_line() {
        let f = write_lines(&[
            r#"{"id":"a","samples":[{"embedding":[1.0,0.0],"seq_logprob":-1.0}]}"#,
            r#"{"id":"b","samples":[{"embedding":[1.5,0.0],"seq_logprob":-1.0}]}"#,
        ]);
        match load_instances(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = write_lines(&[r#"{"id":"a","samples":[{"embedding":[1.0],"seq_logprob":-1.0}]}"#, "{not json"]);
        match load_instances(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mixed_dimensions_name_both() {
        let f = write_lines(&[
            r#"{"id":"a","samples":[{"embedding":[1.0,0.0],"seq_logprob":-1.0}]}"#,
            r#"{"id":"b","samples":[{"embedding":[1.0,0.0,0.0],"seq_logprob":-1.0}]}"#,
        ]);
        let err = load_instances(f.path()).unwrap_err().to_string();
        assert!(err.contains("dimension 3") && err.contains("dimension 2"), "{err}");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let line = r#"{"id":"a","samples":[{"embedding":[1.0],"seq_logprob":-1.0}]}"#;
        let f = write_lines(&[line, line]);
        assert!(load_instances(f.path()).unwrap_err().to_string().contains("duplicate"));
    }

    #[test]
    fn bad_label_and_positive_logprob_rejected() {
        let f = write_lines(&[r#"{"id":"a","label":2,"samples":[{"embedding":[1.0],"seq_logprob":-1.0}]}"#]);
        assert!(load_instances(f.path()).is_err());
        let f = write_lines(&[r#"{"id":"a","samples":[{"embedding":[1.0],"seq_logprob":0.3}]}"#]);
        assert!(load_instances(f.path()).is_err());
    }

    #[test]
    fn lenient_mode_counts_skips() {
        let f = write_lines(&[
            r#"{"id":"a","samples":[{"embedding":[1.0],"seq_logprob":-1.0}]}"#,
            "garbage",
            r#"{"id":"b","samples":[{"embedding":[1.0],"seq_logprob":-2.0}]}"#,
        ]);
        let (ds, report) = load_instances_with(f.path(), LoadOptions { lenient: true }).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(report.skipped.len(), 1);
        assert_eq!(report.skipped[0].0, 2);
    }

    fn dataset(n: usize) -> Dataset {
        let recs = (0..n)
            .map(|i| {
                let mut r = InstanceRecord::new(format!("r{i}"), vec![ResponseSample::new(vec![1.0], -1.0)]);
                r.label = Some((i % 2) as u8);
                r
            })
            .collect();
        Dataset::new(recs, "test").unwrap()
    }

    #[test]
    fn split_sizes() {
        let (dev, eval) = split_dev(&dataset(100), 0.05, 1).unwrap();
        assert_eq!(dev.len(), 5);
        assert_eq!(eval.len(), 95);
        let (dev, eval) = split_dev(&dataset(2), 0.5, 1).unwrap();
        assert_eq!((dev.len(), eval.len()), (1, 1));
        assert!(split_dev(&dataset(5), 0.05, 1).is_err());
        assert!(split_dev(&dataset(5), 1.0, 1).is_err());
    }

    #[test]
    fn split_is_deterministic_and_exhaustive() {
        let ds = dataset(50);
        let a = split_dev(&ds, 0.2, 9).unwrap();
        let b = split_dev(&ds, 0.2, 9).unwrap();
        assert_eq!(a, b);
        let mut ids: Vec<String> = a.0.records.iter().chain(&a.1.records).map(|r| r.id.clone()).collect();
        ids.sort();
        let mut all: Vec<String> = ds.records.iter().map(|r| r.id.clone()).collect();
        all.sort();
        assert_eq!(ids, all);
    }

    #[test]
    fn header_only_for_empty_dataset() {
        let f = tempfile::NamedTempFile::new().unwrap();
        write_scores(&Dataset::default(), &[], f.path()).unwrap();
        let text = std::fs::read_to_string(f.path()).unwrap();
        assert_eq!(text, "id,v,u,q,label,quality\n");
    }

    #[test]
    fn misaligned_bundles_rejected() {
        let f = tempfile::NamedTempFile::new().unwrap();
        assert!(write_scores(&dataset(3), &[ScoreBundle::default()], f.path()).is_err());
    }

    #[test]
    fn rows_follow_input_order() {
        let ds = dataset(3);
        let bundles: Vec<ScoreBundle> = (0..3)
            .map(|i| ScoreBundle { v: i as f64, u: 0.0, q: 0.0, baselines: Default::default() })
            .collect();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_scores(&ds, &bundles, f.path()).unwrap();
        let t = ScoreTable::read(f.path()).unwrap();
        assert_eq!(t.rows.len(), 3);
        let ids: Vec<&str> = t.rows.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, vec!["r0", "r1", "r2"]);
    }

    proptest! {
        #[test]
        fn scores_round_trip_bit_exact(values in prop::collection::vec((any::<f64>(), -1e6f64..1e6, 0.0f64..1.0, -50.0f64..0.0), 1..20)) {
            let values: Vec<_> = values.into_iter().filter(|v| v.0.is_finite()).collect();
            let ds = dataset(values.len());
            let bundles: Vec<ScoreBundle> = values
                .iter()
                .map(|&(v, u, q, b)| {
                    let mut baselines = std::collections::BTreeMap::new();
                    baselines.insert("ln_entropy".to_string(), b);
                    ScoreBundle { v, u, q, baselines }
                })
                .collect();
            let f = tempfile::NamedTempFile::new().unwrap();
            write_scores(&ds, &bundles, f.path()).unwrap();
            let t = ScoreTable::read(f.path()).unwrap();
            prop_assert_eq!(&t.metric_columns, &vec!["v".to_string(), "u".into(), "q".into(), "ln_entropy".into()]);
            for (row, b) in t.rows.iter().zip(&bundles) {
                prop_assert_eq!(row.metrics[0].to_bits(), b.v.to_bits());
                prop_assert_eq!(row.metrics[1].to_bits(), b.u.to_bits());
                prop_assert_eq!(row.metrics[2].to_bits(), b.q.to_bits());
                prop_assert_eq!(row.metrics[3].to_bits(), b.baselines["ln_entropy"].to_bits());
            }
        }
    }
}
