//! Labeled and logged datasets, CSV ingestion and fold splitting.
//!
//! Labeled CSV: header `f0,...,f{d-1},label`.
//! Logged CSV: header `f0,...,f{d-1},action,propensity,reward`.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{CrmError, Result};
use crate::numeric;
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    examples: Vec<LabeledExample>,
    d: usize,
    k: usize,
}

impl LabeledDataset {
    pub fn new(examples: Vec<LabeledExample>, d: usize, k: usize) -> Result<Self> {
        if examples.is_empty() {
            return Err(CrmError::arg("no records"));
        }
        for (i, ex) in examples.iter().enumerate() {
            if ex.features.len() != d {
                return Err(CrmError::dims(format!("{d} features"), ex.features.len()));
            }
            if ex.features.iter().any(|v| !v.is_finite()) {
                return Err(CrmError::domain(format!("example {i}: non-finite feature")));
            }
            if ex.label >= k {
                return Err(CrmError::domain(format!(
                    "example {i}: label {} not below k = {k}",
                    ex.label
                )));
            }
        }
        Ok(Self { examples, d, k })
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::new(
            indices.iter().map(|&i| self.examples[i].clone()).collect(),
            self.d,
            self.k,
        )
    }

    pub fn max_feature_norm(&self) -> f64 {
        self.examples
            .iter()
            .map(|e| numeric::norm(&e.features))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub features: Vec<f64>,
    pub action: usize,
    pub propensity: f64,
    pub reward: f64,
}

impl LogRecord {
    fn validate(&self, d: usize, k: usize) -> Result<()> {
        if self.features.len() != d {
            return Err(CrmError::dims(format!("{d} features"), self.features.len()));
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(CrmError::domain("non-finite feature"));
        }
        if self.action >= k {
            return Err(CrmError::domain(format!(
                "action {} not below k = {k}",
                self.action
            )));
        }
        if !(self.propensity > 0.0 && self.propensity <= 1.0) {
            return Err(CrmError::domain(format!(
                "propensity {} outside (0, 1]",
                self.propensity
            )));
        }
        if !(0.0..=1.0).contains(&self.reward) {
            return Err(CrmError::domain(format!(
                "reward {} outside [0, 1]",
                self.reward
            )));
        }
        Ok(())
    }
}

/// Logged bandit feedback with a bound `B` on every context norm.
#[derive(Debug, Clone, PartialEq)]
pub struct LoggedDataset {
    records: Vec<LogRecord>,
    d: usize,
    k: usize,
    feature_norm_bound: f64,
}

impl LoggedDataset {
    /// Validates every record and sets `B` to the largest context norm.
    pub fn new(records: Vec<LogRecord>, d: usize, k: usize) -> Result<Self> {
        if records.is_empty() {
            return Err(CrmError::arg("no records"));
        }
        for (i, r) in records.iter().enumerate() {
            r.validate(d, k)
                .map_err(|e| CrmError::domain(format!("record {i}: {e}")))?;
        }
        let feature_norm_bound = records
            .iter()
            .map(|r| numeric::norm(&r.features))
            .fold(0.0, f64::max);
        Ok(Self {
            records,
            d,
            k,
            feature_norm_bound,
        })
    }

    /// Replaces `B` with a caller-supplied bound, which must dominate every record.
    pub fn with_norm_bound(mut self, bound: f64) -> Result<Self> {
        if bound < self.max_feature_norm() {
            return Err(CrmError::arg(format!(
                "norm bound {bound} is below the largest context norm {}",
                self.max_feature_norm()
            )));
        }
        self.feature_norm_bound = bound;
        Ok(self)
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn feature_norm_bound(&self) -> f64 {
        self.feature_norm_bound
    }

    pub fn max_feature_norm(&self) -> f64 {
        self.records
            .iter()
            .map(|r| numeric::norm(&r.features))
            .fold(0.0, f64::max)
    }

    /// Records at `indices`; the norm bound is inherited.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(CrmError::arg("no records"));
        }
        Ok(Self {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            d: self.d,
            k: self.k,
            feature_norm_bound: self.feature_norm_bound,
        })
    }

    /// Copy with record `index` replaced; `B` grows if the new record needs it.
    pub fn replace_record(&self, index: usize, record: LogRecord) -> Result<Self> {
        record.validate(self.d, self.k)?;
        let mut out = self.clone();
        out.feature_norm_bound = out.feature_norm_bound.max(numeric::norm(&record.features));
        out.records[index] = record;
        Ok(out)
    }
}

fn parse_header(path: &Path, header: &csv::StringRecord, tail: &[&str]) -> Result<usize> {
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    if cols.len() < tail.len() || cols[cols.len() - tail.len()..] != *tail {
        return Err(CrmError::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("header must end with {}", tail.join(",")),
        });
    }
    let d = cols.len() - tail.len();
    for (j, c) in cols[..d].iter().enumerate() {
        if *c != format!("f{j}") {
            return Err(CrmError::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: format!("expected column f{j}, found {c:?}"),
            });
        }
    }
    Ok(d)
}

struct Rows<'a> {
    path: &'a Path,
    reader: csv::Reader<Box<dyn Read>>,
}

impl<'a> Rows<'a> {
    fn open(path: &'a Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| CrmError::io(path, e))?;
        let reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(Box::new(std::io::BufReader::new(file)) as Box<dyn Read>);
        Ok(Self { path, reader })
    }

    fn header(&mut self) -> Result<csv::StringRecord> {
        let path = self.path;
        self.reader.headers().cloned().map_err(|e| CrmError::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: e.to_string(),
        })
    }

    /// Calls `f(line, fields)` for each data row.
    fn for_each(&mut self, mut f: impl FnMut(usize, &[f64]) -> Result<()>) -> Result<usize> {
        let mut record = csv::StringRecord::new();
        let mut values = Vec::new();
        let mut count = 0;
        loop {
            let more = self
                .reader
                .read_record(&mut record)
                .map_err(|e| CrmError::Parse {
                    path: self.path.to_path_buf(),
                    line: e.position().map_or(0, |p| p.line() as usize),
                    message: e.to_string(),
                })?;
            if !more {
                break;
            }
            let line = record.position().map_or(0, |p| p.line() as usize);
            values.clear();
            for field in record.iter() {
                let v: f64 = field.trim().parse().map_err(|_| CrmError::Parse {
                    path: self.path.to_path_buf(),
                    line,
                    message: format!("not a number: {field:?}"),
                })?;
                values.push(v);
            }
            f(line, &values)?;
            count += 1;
        }
        Ok(count)
    }
}

fn parse_index(path: &Path, line: usize, value: f64, what: &str) -> Result<usize> {
    if value < 0.0 || value.fract() != 0.0 || !value.is_finite() {
        return Err(CrmError::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{what} must be a nonnegative integer, found {value}"),
        });
    }
    Ok(value as usize)
}

fn at_line(path: &Path, line: usize, err: CrmError) -> CrmError {
    CrmError::domain(format!("{}: line {line}: {err}", path.display()))
}

/// Reads a labeled CSV; `d` comes from the header.
pub fn load_labeled(path: impl AsRef<Path>, k: usize) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let mut rows = Rows::open(path)?;
    let d = parse_header(path, &rows.header()?, &["label"])?;
    let mut examples = Vec::new();
    rows.for_each(|line, v| {
        let label = parse_index(path, line, v[d], "label")?;
        if label >= k {
            return Err(at_line(
                path,
                line,
                CrmError::domain(format!("label {label} not below k = {k}")),
            ));
        }
        if v[..d].iter().any(|x| !x.is_finite()) {
            return Err(at_line(path, line, CrmError::domain("non-finite feature")));
        }
        examples.push(LabeledExample {
            features: v[..d].to_vec(),
            label,
        });
        Ok(())
    })?;
    if examples.is_empty() {
        return Err(CrmError::Format {
            path: path.to_path_buf(),
            message: "no records".into(),
        });
    }
    LabeledDataset::new(examples, d, k)
}

/// Reads a logged CSV and sets `B` to the largest context norm.
pub fn load_logged(path: impl AsRef<Path>, k: usize) -> Result<LoggedDataset> {
    let path = path.as_ref();
    let mut rows = Rows::open(path)?;
    let d = parse_header(path, &rows.header()?, &["action", "propensity", "reward"])?;
    let mut records = Vec::new();
    rows.for_each(|line, v| {
        let record = LogRecord {
            features: v[..d].to_vec(),
            action: parse_index(path, line, v[d], "action")?,
            propensity: v[d + 1],
            reward: v[d + 2],
        };
        record.validate(d, k).map_err(|e| at_line(path, line, e))?;
        records.push(record);
        Ok(())
    })?;
    if records.is_empty() {
        return Err(CrmError::Format {
            path: path.to_path_buf(),
            message: "no records".into(),
        });
    }
    LoggedDataset::new(records, d, k)
}

fn feature_header(d: usize) -> String {
    (0..d)
        .map(|j| format!("f{j}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn write_row(out: &mut impl Write, features: &[f64], tail: &[String]) -> std::io::Result<()> {
    let mut first = true;
    for v in features
        .iter()
        .map(|v| v.to_string())
        .chain(tail.iter().cloned())
    {
        if !first {
            out.write_all(b",")?;
        }
        out.write_all(v.as_bytes())?;
        first = false;
    }
    out.write_all(b"\n")
}

/// Writes a logged CSV. Values use the shortest round-tripping decimal form.
pub fn write_logged(data: &LoggedDataset, out: &mut impl Write) -> std::io::Result<()> {
    let d = data.d();
    if d > 0 {
        writeln!(out, "{},action,propensity,reward", feature_header(d))?;
    } else {
        writeln!(out, "action,propensity,reward")?;
    }
    for r in data.records() {
        write_row(
            out,
            &r.features,
            &[
                r.action.to_string(),
                r.propensity.to_string(),
                r.reward.to_string(),
            ],
        )?;
    }
    Ok(())
}

pub fn write_labeled(data: &LabeledDataset, out: &mut impl Write) -> std::io::Result<()> {
    let d = data.d();
    if d > 0 {
        writeln!(out, "{},label", feature_header(d))?;
    } else {
        writeln!(out, "label")?;
    }
    for e in data.examples() {
        write_row(out, &e.features, &[e.label.to_string()])?;
    }
    Ok(())
}

pub fn save_logged(data: &LoggedDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| CrmError::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_logged(data, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| CrmError::io(path, e))
}

pub fn save_labeled(data: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| CrmError::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_labeled(data, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| CrmError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    fold_of: Vec<usize>,
    num_folds: usize,
}

impl FoldAssignment {
    pub fn fold_of(&self) -> &[usize] {
        &self.fold_of
    }

    pub fn num_folds(&self) -> usize {
        self.num_folds
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_folds];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }

    /// (training indices, holdout indices) for `fold`.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let (mut train, mut hold) = (Vec::new(), Vec::new());
        for (i, &f) in self.fold_of.iter().enumerate() {
            if f == fold {
                hold.push(i);
            } else {
                train.push(i);
            }
        }
        (train, hold)
    }
}

/// Seeded Fisher-Yates permutation, then position `j` goes to fold `j mod num_folds`.
pub fn kfold_split(n: usize, num_folds: usize, seed: u64) -> Result<FoldAssignment> {
    if num_folds == 0 {
        return Err(CrmError::arg("need at least one fold"));
    }
    if num_folds > n {
        return Err(CrmError::arg(format!(
            "{num_folds} folds requested for {n} records"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng_from(seed::derive(seed, "kfold")));
    let mut fold_of = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % num_folds;
    }
    Ok(FoldAssignment { fold_of, num_folds })
}
