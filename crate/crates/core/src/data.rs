//! Dataset ingestion, unit-ball scaling and the half-split protocol.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng;

/// Tag mixed into provenance hashes; bump when preprocessing changes.
const PREPROCESSING: &str = "minmax01+onehot+unitball/v1";

#[derive(Clone, Debug, PartialEq)]
pub struct Provenance {
    pub source: String,
    pub hash: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub provenance: Provenance,
    /// Rows dropped at load time because of missing values.
    pub dropped_rows: usize,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, num_classes: usize, source: &str) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::DimensionMismatch { expected: features.nrows(), got: labels.len() });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::InvalidLabel { label: bad, classes: num_classes });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("features"));
        }
        let hash = content_hash(&features, &labels);
        Ok(Dataset {
            features,
            labels,
            num_classes,
            class_names: (0..num_classes).map(|c| c.to_string()).collect(),
            provenance: Provenance { source: source.to_string(), hash },
            dropped_rows: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.features.as_slice().expect("standard layout")[i * d..(i + 1) * d]
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            class_names: self.class_names.clone(),
            provenance: self.provenance.clone(),
            dropped_rows: 0,
        }
    }

    pub fn prefix(&self, n: usize) -> Dataset {
        self.subset(&(0..n.min(self.len())).collect::<Vec<_>>())
    }

    pub fn max_row_norm(&self) -> f64 {
        max_row_norm(self.features.view())
    }

    /// Gathers rows `idx` into `x` (resized as needed) and `y`.
    pub fn gather(&self, idx: &[usize], x: &mut Vec<f64>, y: &mut Vec<usize>) {
        x.clear();
        y.clear();
        for &i in idx {
            x.extend_from_slice(self.row(i));
            y.push(self.labels[i]);
        }
    }
}

fn content_hash(features: &Array2<f64>, labels: &[usize]) -> String {
    let mut h = Sha256::new();
    h.update(PREPROCESSING.as_bytes());
    h.update((features.nrows() as u64).to_le_bytes());
    h.update((features.ncols() as u64).to_le_bytes());
    for v in features.iter() {
        h.update(v.to_le_bytes());
    }
    for &y in labels {
        h.update((y as u64).to_le_bytes());
    }
    hex(&h.finalize())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn max_row_norm(x: ArrayView2<f64>) -> f64 {
    x.rows()
        .into_iter()
        .map(|r| r.dot(&r).sqrt())
        .fold(0.0, f64::max)
}

/// Divides every row by `max(1, largest row norm)` and returns that factor.
pub fn normalize_unit_ball(features: &mut Array2<f64>) -> f64 {
    let scale = max_row_norm(features.view()).max(1.0);
    if scale > 1.0 {
        features.mapv_inplace(|v| v / scale);
    }
    scale
}

/// Seeded half split. The first `floor(m/2)` shuffled rows train; the scale
/// factor is fitted on them and reused for the evaluation half.
pub fn split_halves(data: &Dataset, seed: u64) -> (Dataset, Dataset) {
    let perm = rng::permutation(&mut rng::stream(seed, rng::STREAM_SPLIT), data.len());
    let half = data.len() / 2;
    let mut train = data.subset(&perm[..half]);
    let mut eval = data.subset(&perm[half..]);
    let scale = normalize_unit_ball(&mut train.features);
    if scale > 1.0 {
        eval.features.mapv_inplace(|v| v / scale);
    }
    (train, eval)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColumnRole {
    Label,
    Numeric,
    Categorical,
    Ignore,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schema {
    pub roles: Vec<ColumnRole>,
}

impl Schema {
    /// Parses `column_index:role` lines. Ranges `a..b` (inclusive) are
    /// accepted for the index; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map: HashMap<usize, ColumnRole> = HashMap::new();
        let err = |line: usize, msg: &str| Error::Parse {
            path: "<schema>".into(),
            line,
            msg: msg.to_string(),
        };
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (idx, role) = line
                .split_once(':')
                .ok_or_else(|| err(no + 1, "expected `index:role`"))?;
            let role = match role.trim() {
                "label" => ColumnRole::Label,
                "numeric" => ColumnRole::Numeric,
                "categorical" => ColumnRole::Categorical,
                "ignore" => ColumnRole::Ignore,
                other => return Err(err(no + 1, &format!("unknown role `{other}`"))),
            };
            let idx = idx.trim();
            let (lo, hi) = match idx.split_once("..") {
                Some((a, b)) => (a.trim().parse(), b.trim().parse()),
                None => (idx.parse(), idx.parse()),
            };
            let (lo, hi): (usize, usize) = match (lo, hi) {
                (Ok(a), Ok(b)) if a <= b => (a, b),
                _ => return Err(err(no + 1, "bad column index")),
            };
            for c in lo..=hi {
                if map.insert(c, role).is_some() {
                    return Err(err(no + 1, &format!("column {c} declared twice")));
                }
            }
        }
        let width = map.keys().max().map_or(0, |m| m + 1);
        let roles: Vec<ColumnRole> = (0..width)
            .map(|c| map.get(&c).copied().unwrap_or(ColumnRole::Ignore))
            .collect();
        if roles.iter().filter(|&&r| r == ColumnRole::Label).count() != 1 {
            return Err(err(0, "schema needs exactly one label column"));
        }
        Ok(Schema { roles })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse { line, msg, .. } => Error::Parse { path: path.to_path_buf(), line, msg },
            other => other,
        })
    }
}

fn is_missing(field: &str) -> bool {
    field.is_empty() || field == "?"
}

/// Loads a comma-separated file.
///
/// Rows with a missing field (`?` or empty) in a used column are dropped.
/// Numeric columns are min-max scaled to `[0, 1]` over the file, categorical
/// columns one-hot encoded in first-appearance order, labels re-encoded in
/// first-appearance order. Rows are finally scaled into the unit ball.
pub fn load_csv(path: &Path, schema: &Schema) -> Result<Dataset> {
    let text = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile {
            path: path.to_path_buf(),
            hint: "run scripts/prepare_data.py or pass the right --data path".into(),
        },
        _ => e.into(),
    })?;
    let source = path.file_name().map_or("csv".into(), |s| s.to_string_lossy().into_owned());
    let parsed = parse_csv(&String::from_utf8_lossy(&text), schema, path)?;
    let mut ds = parsed.into_dataset(&source)?;
    let mut h = Sha256::new();
    h.update(PREPROCESSING.as_bytes());
    h.update(format!("{:?}", schema.roles).as_bytes());
    h.update(&text);
    ds.provenance.hash = hex(&h.finalize());
    Ok(ds)
}

struct ParsedCsv {
    features: Array2<f64>,
    labels: Vec<usize>,
    class_names: Vec<String>,
    dropped: usize,
}

impl ParsedCsv {
    fn into_dataset(self, source: &str) -> Result<Dataset> {
        let mut ds = Dataset::new(self.features, self.labels, self.class_names.len(), source)?;
        normalize_unit_ball(&mut ds.features);
        ds.class_names = self.class_names;
        ds.dropped_rows = self.dropped;
        Ok(ds)
    }
}

fn parse_csv(text: &str, schema: &Schema, path: &Path) -> Result<ParsedCsv> {
    let ncols = schema.roles.len();
    let err = |line: usize, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
    let mut rows: Vec<(usize, Vec<&str>)> = Vec::new();
    let mut dropped = 0;
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < ncols {
            return Err(err(no + 1, format!("expected at least {ncols} fields, found {}", fields.len())));
        }
        let missing = schema
            .roles
            .iter()
            .zip(&fields)
            .any(|(&r, f)| r != ColumnRole::Ignore && is_missing(f));
        if missing {
            dropped += 1;
        } else {
            rows.push((no + 1, fields));
        }
    }
    if rows.len() < 2 {
        return Err(err(0, "fewer than two complete rows".into()));
    }

    // Per-column encoders.
    enum Enc {
        Numeric { min: f64, max: f64, vals: Vec<f64> },
        Categorical { levels: Vec<String> },
    }
    let mut encs: Vec<(usize, Enc)> = Vec::new();
    let mut class_names: Vec<String> = Vec::new();
    let mut labels = Vec::with_capacity(rows.len());
    for (c, role) in schema.roles.iter().enumerate() {
        match role {
            ColumnRole::Numeric => {
                let mut vals = Vec::with_capacity(rows.len());
                for (line, f) in &rows {
                    let v: f64 = f[c]
                        .parse()
                        .map_err(|_| err(*line, format!("column {c}: `{}` is not a number", f[c])))?;
                    if !v.is_finite() {
                        return Err(err(*line, format!("column {c}: non-finite value")));
                    }
                    vals.push(v);
                }
                let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
                let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                encs.push((c, Enc::Numeric { min, max, vals }));
            }
            ColumnRole::Categorical => {
                let mut levels: Vec<String> = Vec::new();
                for (_, f) in &rows {
                    if !levels.iter().any(|l| l == f[c]) {
                        levels.push(f[c].to_string());
                    }
                }
                encs.push((c, Enc::Categorical { levels }));
            }
            ColumnRole::Label => {
                for (_, f) in &rows {
                    let pos = match class_names.iter().position(|l| l == f[c]) {
                        Some(p) => p,
                        None => {
                            class_names.push(f[c].to_string());
                            class_names.len() - 1
                        }
                    };
                    labels.push(pos);
                }
            }
            ColumnRole::Ignore => {}
        }
    }
    let d: usize = encs
        .iter()
        .map(|(_, e)| match e {
            Enc::Numeric { .. } => 1,
            Enc::Categorical { levels } => levels.len(),
        })
        .sum();
    if d == 0 {
        return Err(err(0, "schema declares no feature columns".into()));
    }
    let mut features = Array2::zeros((rows.len(), d));
    let mut offset = 0;
    for (c, enc) in &encs {
        match enc {
            Enc::Numeric { min, max, vals } => {
                let span = max - min;
                for (r, v) in vals.iter().enumerate() {
                    features[[r, offset]] = if span > 0.0 { (v - min) / span } else { 0.0 };
                }
                offset += 1;
            }
            Enc::Categorical { levels } => {
                for (r, (_, f)) in rows.iter().enumerate() {
                    let k = levels.iter().position(|l| l == f[*c]).expect("level seen");
                    features[[r, offset + k]] = 1.0;
                }
                offset += levels.len();
            }
        }
    }
    if class_names.len() < 2 {
        return Err(err(0, "need at least two label values".into()));
    }
    Ok(ParsedCsv { features, labels, class_names, dropped })
}

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn count(&self) -> usize {
        self.pixels.len() / (self.rows * self.cols).max(1)
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or(Error::Format { offset: offset as u64, msg: "truncated header".into() })
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES {
        return Err(Error::Format { offset: 0, msg: format!("bad image magic {magic:#010x}") });
    }
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let need = 16 + n * rows * cols;
    if bytes.len() < need {
        return Err(Error::Format { offset: bytes.len() as u64, msg: format!("truncated pixels, need {need} bytes") });
    }
    Ok(IdxImages { rows, cols, pixels: bytes[16..need].to_vec() })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABELS {
        return Err(Error::Format { offset: 0, msg: format!("bad label magic {magic:#010x}") });
    }
    let n = be_u32(bytes, 4)? as usize;
    if bytes.len() < 8 + n {
        return Err(Error::Format { offset: bytes.len() as u64, msg: "truncated labels".into() });
    }
    Ok(bytes[8..8 + n].to_vec())
}

pub fn encode_idx_images(img: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + img.pixels.len());
    for v in [IDX_IMAGES, img.count() as u32, img.rows as u32, img.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&img.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Pixel matrix scaled to `[0, 1]`, one flattened image per row, before any
/// unit-ball scaling.
pub fn idx_features(img: &IdxImages) -> Array2<f64> {
    let d = img.rows * img.cols;
    Array2::from_shape_fn((img.count(), d), |(i, j)| f64::from(img.pixels[i * d + j]) / 255.0)
}

pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let read = |p: &Path| {
        std::fs::read(p).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile {
                path: p.to_path_buf(),
                hint: "run scripts/prepare_data.py or point at an IDX file".into(),
            },
            _ => e.into(),
        })
    };
    let img_bytes = read(images)?;
    let lab_bytes = read(labels)?;
    let img = parse_idx_images(&img_bytes)?;
    let labs = parse_idx_labels(&lab_bytes)?;
    if labs.len() != img.count() {
        return Err(Error::Format {
            offset: 4,
            msg: format!("{} images but {} labels", img.count(), labs.len()),
        });
    }
    let mut features = idx_features(&img);
    normalize_unit_ball(&mut features);
    let classes = labs.iter().map(|&l| l as usize + 1).max().unwrap_or(0).max(2);
    let source = images.file_name().map_or("idx".into(), |s| s.to_string_lossy().into_owned());
    let mut ds = Dataset::new(features, labs.iter().map(|&l| l as usize).collect(), classes, &source)?;
    let mut h = Sha256::new();
    h.update(PREPROCESSING.as_bytes());
    h.update(&img_bytes);
    h.update(&lab_bytes);
    ds.provenance.hash = hex(&h.finalize());
    Ok(ds)
}

/// Writes the preprocessed dataset as tab-separated text: a `#` header with
/// metadata, then `label<TAB>x_1<TAB>...<TAB>x_d` per row.
pub fn write_tsv<W: Write>(ds: &Dataset, mut out: W) -> Result<()> {
    writeln!(
        out,
        "# source={} hash={} classes={} dim={} rows={} dropped={}",
        ds.provenance.source,
        ds.provenance.hash,
        ds.num_classes,
        ds.dim(),
        ds.len(),
        ds.dropped_rows
    )?;
    writeln!(out, "# class_names={}", ds.class_names.join("\t"))?;
    for i in 0..ds.len() {
        write!(out, "{}", ds.labels[i])?;
        for v in ds.row(i) {
            write!(out, "\t{v:?}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn read_tsv(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile {
            path: path.to_path_buf(),
            hint: "create it with `wasspac ingest`".into(),
        },
        _ => e.into(),
    })?;
    let err = |line: usize, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
    let mut meta: HashMap<String, String> = HashMap::new();
    let mut class_names = None;
    let mut labels = Vec::new();
    let mut values = Vec::new();
    let mut dim = None;
    for (no, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if let Some(rest) = line.strip_prefix("# class_names=") {
            class_names = Some(rest.split('\t').map(str::to_string).collect::<Vec<_>>());
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            for kv in rest.split_whitespace() {
                if let Some((k, v)) = kv.split_once('=') {
                    meta.insert(k.to_string(), v.to_string());
                }
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let y: usize = fields
            .next()
            .unwrap_or("")
            .parse()
            .map_err(|_| err(no + 1, "bad label".into()))?;
        let row: Vec<f64> = fields
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| err(no + 1, format!("{e}")))?;
        match dim {
            None => dim = Some(row.len()),
            Some(d) if d != row.len() => return Err(err(no + 1, format!("expected {d} features"))),
            _ => {}
        }
        labels.push(y);
        values.extend(row);
    }
    let d = dim.ok_or_else(|| err(0, "no rows".into()))?;
    let classes = match meta.get("classes") {
        Some(c) => c.parse().map_err(|_| err(1, "bad classes field".into()))?,
        None => labels.iter().max().map_or(2, |m| m + 1),
    };
    let features = Array2::from_shape_vec((labels.len(), d), values).expect("row-major rows");
    let source = meta.get("source").cloned().unwrap_or_else(|| "tsv".into());
    let mut ds = Dataset::new(features, labels, classes, &source)?;
    if let Some(h) = meta.get("hash") {
        ds.provenance.hash = h.clone();
    }
    if let Some(names) = class_names {
        if names.len() == classes {
            ds.class_names = names;
        }
    }
    ds.dropped_rows = meta.get("dropped").and_then(|v| v.parse().ok()).unwrap_or(0);
    Ok(ds)
}
