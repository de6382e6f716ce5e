//! Cohort ingestion, frequency filtering, splitting and synthetic cohorts.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::Tensor2;
use crate::rng::{stream_rng, Stream};

/// Dense row-major matrix with entries in {0,1}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMatrix {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl BinaryMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        BinaryMatrix {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut m = BinaryMatrix::zeros(rows.len(), cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Invalid(format!("row {i} has length {} not {cols}", r.len())));
            }
            for (j, &v) in r.iter().enumerate() {
                if v > 1 {
                    return Err(Error::Invalid(format!("entry ({i},{j}) = {v} is not binary")));
                }
                m.data[i * cols + j] = v;
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        self.data[i * self.cols + j] = value as u8;
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.cols];
        for i in 0..self.rows {
            for (c, &v) in counts.iter_mut().zip(self.row(i)) {
                *c += v as usize;
            }
        }
        counts
    }

    pub fn ones(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn to_tensor(&self) -> Tensor2 {
        Tensor2::from_vec(self.rows, self.cols, self.data.iter().map(|&v| v as f64).collect())
            .expect("shape is consistent by construction")
    }

    pub fn select_rows_tensor(&self, indices: &[usize]) -> Tensor2 {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend(self.row(i).iter().map(|&v| v as f64));
        }
        Tensor2::from_vec(indices.len(), self.cols, data).expect("shape is consistent by construction")
    }
}

/// Sample × locus mutation incidence matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    sample_ids: Vec<String>,
    locus_ids: Vec<String>,
    matrix: BinaryMatrix,
    labels: Option<BTreeMap<String, String>>,
}

impl Cohort {
    pub fn new(
        sample_ids: Vec<String>,
        locus_ids: Vec<String>,
        matrix: BinaryMatrix,
        labels: Option<BTreeMap<String, String>>,
    ) -> Result<Self> {
        if matrix.rows() != sample_ids.len() || matrix.cols() != locus_ids.len() {
            return Err(Error::Invalid(format!(
                "matrix is {}x{} but there are {} samples and {} loci",
                matrix.rows(),
                matrix.cols(),
                sample_ids.len(),
                locus_ids.len()
            )));
        }
        if let Some(dup) = first_duplicate(&sample_ids) {
            return Err(Error::Invalid(format!("duplicate sample id {dup}")));
        }
        if let Some(w) = locus_ids.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Invalid(format!(
                "locus ids not strictly sorted at {} / {}",
                w[0], w[1]
            )));
        }
        if let Some(labels) = &labels {
            let known: HashSet<&str> = sample_ids.iter().map(String::as_str).collect();
            if let Some(s) = labels.keys().find(|s| !known.contains(s.as_str())) {
                return Err(Error::Invalid(format!("label for unknown sample {s}")));
            }
        }
        Ok(Cohort {
            sample_ids,
            locus_ids,
            matrix,
            labels,
        })
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn locus_ids(&self) -> &[String] {
        &self.locus_ids
    }

    pub fn matrix(&self) -> &BinaryMatrix {
        &self.matrix
    }

    pub fn labels(&self) -> Option<&BTreeMap<String, String>> {
        self.labels.as_ref()
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn n_loci(&self) -> usize {
        self.locus_ids.len()
    }

    pub fn with_labels(mut self, labels: BTreeMap<String, String>) -> Result<Self> {
        let known: HashSet<&str> = self.sample_ids.iter().map(String::as_str).collect();
        if let Some(s) = labels.keys().find(|s| !known.contains(s.as_str())) {
            return Err(Error::Invalid(format!("label for unknown sample {s}")));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Labels in sample order; `None` where a sample is unlabelled.
    pub fn label_vector(&self) -> Vec<Option<&str>> {
        self.sample_ids
            .iter()
            .map(|s| self.labels.as_ref().and_then(|l| l.get(s)).map(String::as_str))
            .collect()
    }
}

fn first_duplicate(ids: &[String]) -> Option<&str> {
    let mut seen = HashSet::with_capacity(ids.len());
    ids.iter().find(|id| !seen.insert(id.as_str())).map(String::as_str)
}

/// Reads a two-column TSV with the given header, returning rows with their
/// 1-based line numbers.
fn read_pairs<R: BufRead>(reader: R, header: [&str; 2]) -> Result<Vec<(usize, String, String)>> {
    let mut lines = reader.lines();
    let first = match lines.next() {
        None => return Err(Error::NoRecords),
        Some(l) => l.map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?,
    };
    let expected = format!("{}\t{}", header[0], header[1]);
    if first.trim_end_matches('\r') != expected {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {expected:?}, found {first:?}"),
        });
    }
    let mut out = Vec::new();
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        match (fields.next(), fields.next(), fields.next()) {
            (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => {
                out.push((lineno, a.to_string(), b.to_string()))
            }
            _ => {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("expected two non-empty tab-separated fields, found {line:?}"),
                })
            }
        }
    }
    if out.is_empty() {
        return Err(Error::NoRecords);
    }
    Ok(out)
}

/// Builds a cohort from `sample_id\tlocus_id` records. Samples keep their
/// order of first appearance; loci are sorted lexicographically.
pub fn ingest_profiles<R: BufRead, L: BufRead>(stream: R, labels_stream: Option<L>) -> Result<Cohort> {
    let records = read_pairs(stream, ["sample_id", "locus_id"])?;
    let mut sample_ids: Vec<String> = Vec::new();
    let mut sample_index: HashMap<String, usize> = HashMap::new();
    let mut loci: BTreeSet<&str> = BTreeSet::new();
    for (_, s, l) in &records {
        if !sample_index.contains_key(s) {
            sample_index.insert(s.clone(), sample_ids.len());
            sample_ids.push(s.clone());
        }
        loci.insert(l.as_str());
    }
    let locus_ids: Vec<String> = loci.into_iter().map(str::to_string).collect();
    let locus_index: HashMap<&str, usize> = locus_ids.iter().enumerate().map(|(j, l)| (l.as_str(), j)).collect();
    let mut matrix = BinaryMatrix::zeros(sample_ids.len(), locus_ids.len());
    for (_, s, l) in &records {
        matrix.set(sample_index[s], locus_index[l.as_str()], true);
    }
    let labels = match labels_stream {
        Some(r) => Some(read_labels(r)?),
        None => None,
    };
    Cohort::new(sample_ids, locus_ids, matrix, labels)
}

/// Parses a `sample_id\tlabel` TSV.
pub fn read_labels<R: BufRead>(reader: R) -> Result<BTreeMap<String, String>> {
    let mut labels = BTreeMap::new();
    for (line, s, l) in read_pairs(reader, ["sample_id", "label"])? {
        if labels.insert(s.clone(), l).is_some() {
            return Err(Error::Parse {
                line,
                message: format!("duplicate label for sample {s}"),
            });
        }
    }
    Ok(labels)
}

/// Keeps the loci mutated in at least `min_count` samples. Returns the
/// filtered cohort and the per-column retention mask.
pub fn filter_low_frequency(cohort: &Cohort, min_count: usize) -> Result<(Cohort, Vec<bool>)> {
    if min_count == 0 {
        return Err(Error::config("min_count", "must be >= 1"));
    }
    let mask: Vec<bool> = cohort
        .matrix
        .column_counts()
        .into_iter()
        .map(|c| c >= min_count)
        .collect();
    let kept: Vec<usize> = mask.iter().enumerate().filter(|(_, &k)| k).map(|(j, _)| j).collect();
    let mut matrix = BinaryMatrix::zeros(cohort.n_samples(), kept.len());
    for i in 0..cohort.n_samples() {
        for (jj, &j) in kept.iter().enumerate() {
            matrix.data[i * kept.len() + jj] = cohort.matrix.get(i, j);
        }
    }
    let locus_ids = kept.iter().map(|&j| cohort.locus_ids[j].clone()).collect();
    let filtered = Cohort {
        sample_ids: cohort.sample_ids.clone(),
        locus_ids,
        matrix,
        labels: cohort.labels.clone(),
    };
    Ok((filtered, mask))
}

/// Train/validation partition of sample indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    pub seed: u64,
}

fn seeded_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, Stream::Split));
    idx
}

pub fn holdout_split(n: usize, train_fraction: f64, seed: u64) -> Result<SplitPlan> {
    if n < 2 {
        return Err(Error::Invalid(format!(
            "holdout split needs at least 2 samples, got {n}"
        )));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::config("train_fraction", "must lie in (0,1)"));
    }
    let n_train = (train_fraction * n as f64).round() as usize;
    let perm = seeded_permutation(n, seed);
    let (train, val) = perm.split_at(n_train);
    Ok(SplitPlan {
        train_indices: train.to_vec(),
        val_indices: val.to_vec(),
        seed,
    })
}

/// k folds over a seeded permutation; the first `n mod k` folds get one extra
/// sample.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<SplitPlan>> {
    if k < 2 {
        return Err(Error::config("k", "fold count must be >= 2"));
    }
    if k > n {
        return Err(Error::Invalid(format!("fold count {k} exceeds sample count {n}")));
    }
    let perm = seeded_permutation(n, seed);
    let (base, extra) = (n / k, n % k);
    let mut bounds = Vec::with_capacity(k + 1);
    bounds.push(0);
    for f in 0..k {
        let size = base + usize::from(f < extra);
        bounds.push(bounds[f] + size);
    }
    Ok((0..k)
        .map(|f| {
            let val = perm[bounds[f]..bounds[f + 1]].to_vec();
            let train = perm[..bounds[f]]
                .iter()
                .chain(&perm[bounds[f + 1]..])
                .copied()
                .collect();
            SplitPlan {
                train_indices: train,
                val_indices: val,
                seed,
            }
        })
        .collect())
}

/// Parameters of a planted-cluster cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub n_loci: usize,
    pub n_clusters: usize,
    pub background_rate: f64,
    pub enriched_rate: f64,
    pub enriched_loci_per_cluster: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("n_samples", self.n_samples),
            ("n_loci", self.n_loci),
            ("n_clusters", self.n_clusters),
            ("enriched_loci_per_cluster", self.enriched_loci_per_cluster),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        for (field, p) in [
            ("background_rate", self.background_rate),
            ("enriched_rate", self.enriched_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(field, "must be a probability in [0,1]"));
            }
        }
        if !(self.enriched_rate > self.background_rate) {
            return Err(Error::config("enriched_rate", "must exceed background_rate"));
        }
        if self.n_clusters > self.n_samples {
            return Err(Error::config("n_clusters", "must not exceed n_samples"));
        }
        if self.enriched_loci_per_cluster * self.n_clusters > self.n_loci {
            return Err(Error::config(
                "enriched_loci_per_cluster",
                "enriched_loci_per_cluster × n_clusters exceeds n_loci",
            ));
        }
        Ok(())
    }
}

/// Zero-padded identifiers keep lexicographic and numeric order aligned.
pub fn synthetic_locus_id(j: usize, n_loci: usize) -> String {
    let width = n_loci.saturating_sub(1).to_string().len();
    format!("locus{j:0width$}")
}

pub fn synthetic_sample_id(i: usize, n_samples: usize) -> String {
    let width = n_samples.saturating_sub(1).to_string().len();
    format!("sample{i:0width$}")
}

/// Generates a cohort with planted clusters: cluster `c` owns the loci
/// `c·m .. (c+1)·m` for `m = enriched_loci_per_cluster`. Labels hold the
/// cluster id of every sample.
pub fn generate_synthetic_cohort(spec: &SyntheticSpec) -> Result<Cohort> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, Stream::Synth);
    let m = spec.enriched_loci_per_cluster;
    let mut matrix = BinaryMatrix::zeros(spec.n_samples, spec.n_loci);
    let mut labels = BTreeMap::new();
    let sample_ids: Vec<String> = (0..spec.n_samples)
        .map(|i| synthetic_sample_id(i, spec.n_samples))
        .collect();
    for (i, sid) in sample_ids.iter().enumerate() {
        let cluster = rng.random_range(0..spec.n_clusters);
        let enriched = cluster * m..(cluster + 1) * m;
        for j in 0..spec.n_loci {
            let p = if enriched.contains(&j) {
                spec.enriched_rate
            } else {
                spec.background_rate
            };
            let u: f64 = rng.random();
            matrix.set(i, j, u < p);
        }
        labels.insert(sid.clone(), cluster.to_string());
    }
    let locus_ids = (0..spec.n_loci).map(|j| synthetic_locus_id(j, spec.n_loci)).collect();
    Cohort::new(sample_ids, locus_ids, matrix, Some(labels))
}

/// Writes `sample_id\tlocus_id` records for every set entry.
pub fn write_profiles(cohort: &Cohort, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "sample_id\tlocus_id").map_err(io)?;
    for (i, s) in cohort.sample_ids.iter().enumerate() {
        for (j, l) in cohort.locus_ids.iter().enumerate() {
            if cohort.matrix.get(i, j) == 1 {
                writeln!(w, "{s}\t{l}").map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

/// Writes a `sample_id\tlabel` TSV following `order`.
pub fn write_labels<'a>(path: &Path, rows: impl IntoIterator<Item = (&'a str, String)>) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "sample_id\tlabel").map_err(io)?;
    for (s, l) in rows {
        writeln!(w, "{s}\t{l}").map_err(io)?;
    }
    w.flush().map_err(io)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

pub const CACHE_LOCI: &str = "loci.txt";
pub const CACHE_MATRIX: &str = "matrix.tsv";
pub const CACHE_LABELS: &str = "labels.tsv";

/// Writes the cohort cache (`loci.txt`, `matrix.tsv`, plus `labels.tsv`
/// when labels are present) into `dir`.
pub fn write_cohort_cache(cohort: &Cohort, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let loci_path = dir.join(CACHE_LOCI);
    let mut w = create(&loci_path)?;
    for l in &cohort.locus_ids {
        writeln!(w, "{l}").map_err(|e| Error::io(&loci_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&loci_path, e))?;

    let matrix_path = dir.join(CACHE_MATRIX);
    let io = |e| Error::io(&matrix_path, e);
    let mut w = create(&matrix_path)?;
    write!(w, "sample_id").map_err(io)?;
    for l in &cohort.locus_ids {
        write!(w, "\t{l}").map_err(io)?;
    }
    writeln!(w).map_err(io)?;
    let mut line = String::new();
    for (i, s) in cohort.sample_ids.iter().enumerate() {
        line.clear();
        line.push_str(s);
        for &v in cohort.matrix.row(i) {
            line.push('\t');
            line.push(if v == 1 { '1' } else { '0' });
        }
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)?;

    if let Some(labels) = &cohort.labels {
        write_labels(
            &dir.join(CACHE_LABELS),
            cohort
                .sample_ids
                .iter()
                .filter_map(|s| labels.get(s).map(|l| (s.as_str(), l.clone()))),
        )?;
    }
    Ok(())
}

/// Reads a cohort cache written by [`write_cohort_cache`].
pub fn read_cohort_cache(dir: &Path) -> Result<Cohort> {
    let loci_path = dir.join(CACHE_LOCI);
    let loci_text = fs::read_to_string(&loci_path).map_err(|e| Error::io(&loci_path, e))?;
    let locus_ids: Vec<String> = loci_text.lines().map(str::to_string).collect();

    let matrix_path = dir.join(CACHE_MATRIX);
    let text = fs::read_to_string(&matrix_path).map_err(|e| Error::io(&matrix_path, e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or(Error::NoRecords)?;
    let mut cols = header.split('\t');
    if cols.next() != Some("sample_id") {
        return Err(Error::Parse {
            line: 1,
            message: "matrix header must start with sample_id".into(),
        });
    }
    if !cols.eq(locus_ids.iter().map(String::as_str)) {
        return Err(Error::Parse {
            line: 1,
            message: format!("matrix columns disagree with {}", CACHE_LOCI),
        });
    }
    let mut sample_ids = Vec::new();
    let mut data = Vec::new();
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        let mut fields = line.split('\t');
        let sid = fields.next().unwrap_or_default();
        let before = data.len();
        for f in fields {
            data.push(match f {
                "0" => 0u8,
                "1" => 1u8,
                other => {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("cell {other:?} is not 0/1"),
                    })
                }
            });
        }
        if data.len() - before != locus_ids.len() {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected {} cells", locus_ids.len()),
            });
        }
        sample_ids.push(sid.to_string());
    }
    let matrix = BinaryMatrix {
        rows: sample_ids.len(),
        cols: locus_ids.len(),
        data,
    };
    let labels_path = dir.join(CACHE_LABELS);
    let labels = if labels_path.exists() {
        let f = fs::File::open(&labels_path).map_err(|e| Error::io(&labels_path, e))?;
        Some(read_labels(std::io::BufReader::new(f))?)
    } else {
        None
    };
    Cohort::new(sample_ids, locus_ids, matrix, labels)
}
