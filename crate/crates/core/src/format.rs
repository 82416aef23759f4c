//! Model bundle file format.
//!
//! A bundle file is a UTF-8 manifest followed by a binary blob:
//!
//! ```text
//! sasse-model
//! format_version=1
//! d=64
//! r=50
//! b=16
//! k=4
//! lambda=0.1
//! threshold=0.5
//! seed=0
//! css=greedy
//! payload_bytes=...
//! index_bytes=...
//! section classifier f64 0 3 65
//! section cluster0.columns u32 1560 1 50
//! section cluster0.z f64 1760 50 112
//! section cluster0.w f64 46560 64 50
//! ...
//! end
//! ```
//!
//! Each `section` line gives name, element type, byte offset into the blob,
//! rows and columns. Matrices are row-major, little-endian. Sections appear in
//! this order: classifier hyperplanes, then per cluster the selected column
//! indices, `Z` and `W`. The f64 sections are the stored model parameters;
//! the u32 index sections and the manifest are accounted separately. A
//! bundle that still carries its training centroids appends them as a final
//! `centroids` section (`k x d`), reported as auxiliary bytes: they are only
//! used to score routing accuracy, never to predict.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::codec::Precision;
use crate::config::{CssStrategy, TrainConfig};
use crate::embed::EmbeddingModel;
use crate::pipeline::{ClusterModel, ModelBundle};
use crate::ridge::RegressorModel;
use crate::route::RoutingClassifier;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "sasse-model";
const END: &str = "end";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a model bundle (bad magic line)")]
    BadMagic,
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("binary section {name}: {reason}")]
    Section { name: String, reason: String },
    #[error("inconsistent bundle: {0}")]
    Bundle(String),
}

/// Byte counts of a serialized bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SerializedSizes {
    pub manifest_bytes: u64,
    /// Column index sections (4 bytes per index).
    pub index_bytes: u64,
    /// Stored reals: hyperplanes, every `Z` and every `W`.
    pub payload_bytes: u64,
    /// Optional training centroids.
    pub auxiliary_bytes: u64,
}

impl SerializedSizes {
    pub fn total(&self) -> u64 {
        self.manifest_bytes + self.index_bytes + self.payload_bytes + self.auxiliary_bytes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ElementType {
    F64,
    U32,
}

impl ElementType {
    fn size(self) -> u64 {
        match self {
            ElementType::F64 => 8,
            ElementType::U32 => 4,
        }
    }

    fn name(self) -> &'static str {
        match self {
            ElementType::F64 => "f64",
            ElementType::U32 => "u32",
        }
    }
}

struct Section {
    name: String,
    ty: ElementType,
    offset: u64,
    rows: usize,
    cols: usize,
}

const CENTROIDS: &str = "centroids";

impl Section {
    fn bytes(&self) -> u64 {
        (self.rows * self.cols) as u64 * self.ty.size()
    }

    fn is_auxiliary(&self) -> bool {
        self.name == CENTROIDS
    }
}

/// (payload, index, auxiliary) byte totals.
fn byte_totals(sections: &[Section]) -> (u64, u64, u64) {
    let mut totals = (0, 0, 0);
    for s in sections {
        match (s.is_auxiliary(), s.ty) {
            (true, _) => totals.2 += s.bytes(),
            (false, ElementType::F64) => totals.0 += s.bytes(),
            (false, ElementType::U32) => totals.1 += s.bytes(),
        }
    }
    totals
}

fn section_layout(bundle: &ModelBundle) -> Vec<Section> {
    let mut sections = Vec::new();
    let mut offset = 0;
    let mut push = |name: String, ty: ElementType, rows: usize, cols: usize| {
        let s = Section {
            name,
            ty,
            offset,
            rows,
            cols,
        };
        offset += s.bytes();
        sections.push(s);
    };
    let hyper = bundle.classifier().hyperplanes();
    push("classifier".into(), ElementType::F64, hyper.nrows(), hyper.ncols());
    for (i, c) in bundle.clusters().iter().enumerate() {
        push(format!("cluster{i}.columns"), ElementType::U32, 1, c.embedding.r());
        let z = c.embedding.z();
        push(format!("cluster{i}.z"), ElementType::F64, z.nrows(), z.ncols());
        let w = c.regressor.weights();
        push(format!("cluster{i}.w"), ElementType::F64, w.nrows(), w.ncols());
    }
    if let Some(c) = bundle.centroids() {
        push(CENTROIDS.into(), ElementType::F64, c.nrows(), c.ncols());
    }
    sections
}

fn manifest(bundle: &ModelBundle, sections: &[Section]) -> String {
    let cfg = bundle.config();
    let (payload, index, auxiliary) = byte_totals(sections);
    let mut m = String::new();
    m.push_str(MAGIC);
    m.push('\n');
    let mut kv = |k: &str, v: String| {
        m.push_str(k);
        m.push('=');
        m.push_str(&v);
        m.push('\n');
    };
    kv("format_version", FORMAT_VERSION.to_string());
    kv("d", bundle.dim().to_string());
    kv("r", cfg.r.to_string());
    kv("b", cfg.precision.bits().to_string());
    kv("k", cfg.k.to_string());
    kv("lambda", cfg.lambda.to_string());
    kv("threshold", cfg.threshold.to_string());
    kv("seed", cfg.seed.to_string());
    kv("css", cfg.css_strategy.to_string());
    kv("payload_bytes", payload.to_string());
    kv("index_bytes", index.to_string());
    kv("auxiliary_bytes", auxiliary.to_string());
    for s in sections {
        m.push_str(&format!(
            "section {} {} {} {} {}\n",
            s.name,
            s.ty.name(),
            s.offset,
            s.rows,
            s.cols
        ));
    }
    m.push_str(END);
    m.push('\n');
    m
}

fn write_matrix_f64(out: &mut Vec<u8>, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
}

/// Sizes the bundle would have when written.
pub fn serialized_sizes(bundle: &ModelBundle) -> SerializedSizes {
    let sections = section_layout(bundle);
    let (payload_bytes, index_bytes, auxiliary_bytes) = byte_totals(&sections);
    SerializedSizes {
        manifest_bytes: manifest(bundle, &sections).len() as u64,
        index_bytes,
        payload_bytes,
        auxiliary_bytes,
    }
}

/// Serializes the bundle to bytes.
pub fn to_bytes(bundle: &ModelBundle) -> Vec<u8> {
    let sections = section_layout(bundle);
    let mut out = manifest(bundle, &sections).into_bytes();
    write_matrix_f64(&mut out, bundle.classifier().hyperplanes());
    for c in bundle.clusters() {
        for &idx in c.embedding.columns() {
            out.extend_from_slice(&(idx as u32).to_le_bytes());
        }
        write_matrix_f64(&mut out, c.embedding.z());
        write_matrix_f64(&mut out, c.regressor.weights());
    }
    if let Some(c) = bundle.centroids() {
        write_matrix_f64(&mut out, c);
    }
    out
}

pub fn write_bundle<W: Write>(bundle: &ModelBundle, mut writer: W) -> Result<SerializedSizes, FormatError> {
    writer.write_all(&to_bytes(bundle))?;
    writer.flush()?;
    Ok(serialized_sizes(bundle))
}

pub fn save_bundle(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<SerializedSizes, FormatError> {
    write_bundle(bundle, BufWriter::new(File::create(path)?))
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<ModelBundle, FormatError> {
    read_bundle(BufReader::new(File::open(path)?))
}

pub fn read_bundle<R: Read>(mut reader: R) -> Result<ModelBundle, FormatError> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}

struct ManifestFields {
    d: usize,
    r: usize,
    b: usize,
    k: usize,
    lambda: f64,
    threshold: f64,
    seed: u64,
    css: CssStrategy,
    payload_bytes: u64,
    index_bytes: u64,
    auxiliary_bytes: u64,
}

/// Splits off the manifest, returning its lines and the binary blob.
fn split_manifest(bytes: &[u8]) -> Result<(Vec<&str>, &[u8]), FormatError> {
    let mut lines = Vec::new();
    let mut pos = 0;
    loop {
        let rest = &bytes[pos..];
        let nl = rest
            .iter()
            .position(|&c| c == b'\n')
            .ok_or_else(|| FormatError::Manifest("missing end line".into()))?;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| FormatError::Manifest("manifest is not UTF-8".into()))?;
        pos += nl + 1;
        if line == END {
            return Ok((lines, &bytes[pos..]));
        }
        lines.push(line);
    }
}

fn parse_fields(lines: &[&str]) -> Result<(ManifestFields, Vec<Section>), FormatError> {
    let mut map = std::collections::HashMap::new();
    let mut sections = Vec::new();
    for line in lines {
        if let Some(rest) = line.strip_prefix("section ") {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            if parts.len() != 5 {
                return Err(FormatError::Manifest(format!("malformed section line {line:?}")));
            }
            let ty = match parts[1] {
                "f64" => ElementType::F64,
                "u32" => ElementType::U32,
                other => return Err(FormatError::Manifest(format!("unknown element type {other}"))),
            };
            let num = |s: &str| {
                s.parse::<u64>()
                    .map_err(|_| FormatError::Manifest(format!("bad number in {line:?}")))
            };
            sections.push(Section {
                name: parts[0].to_string(),
                ty,
                offset: num(parts[2])?,
                rows: num(parts[3])? as usize,
                cols: num(parts[4])? as usize,
            });
        } else if let Some((k, v)) = line.split_once('=') {
            map.insert(k, v);
        } else {
            return Err(FormatError::Manifest(format!("unrecognized line {line:?}")));
        }
    }
    fn get<T: std::str::FromStr>(
        map: &std::collections::HashMap<&str, &str>,
        key: &str,
    ) -> Result<T, FormatError> {
        map.get(key)
            .ok_or_else(|| FormatError::Manifest(format!("missing key {key}")))?
            .parse()
            .map_err(|_| FormatError::Manifest(format!("bad value for {key}")))
    }
    let version: u32 = get(&map, "format_version")?;
    if version != FORMAT_VERSION {
        return Err(FormatError::Version(version));
    }
    let css: String = get(&map, "css")?;
    let fields = ManifestFields {
        d: get(&map, "d")?,
        r: get(&map, "r")?,
        b: get(&map, "b")?,
        k: get(&map, "k")?,
        lambda: get(&map, "lambda")?,
        threshold: get(&map, "threshold")?,
        seed: get(&map, "seed")?,
        css: css
            .parse()
            .map_err(|_| FormatError::Manifest(format!("unknown css strategy {css}")))?,
        payload_bytes: get(&map, "payload_bytes")?,
        index_bytes: get(&map, "index_bytes")?,
        auxiliary_bytes: get(&map, "auxiliary_bytes")?,
    };
    Ok((fields, sections))
}

struct BlobReader<'a> {
    blob: &'a [u8],
    sections: std::iter::Peekable<std::vec::IntoIter<Section>>,
    cursor: u64,
}

impl BlobReader<'_> {
    fn next(&mut self, name: &str, ty: ElementType, rows: usize, cols: usize) -> Result<&[u8], FormatError> {
        let err = |reason: String| FormatError::Section {
            name: name.to_string(),
            reason,
        };
        let s = self.sections.next().ok_or_else(|| err("missing".into()))?;
        if s.name != name || s.ty != ty {
            return Err(err(format!("found {} ({}) instead", s.name, s.ty.name())));
        }
        if (s.rows, s.cols) != (rows, cols) {
            return Err(err(format!("shape {}x{}, expected {rows}x{cols}", s.rows, s.cols)));
        }
        if s.offset != self.cursor {
            return Err(err(format!("offset {} where {} was expected", s.offset, self.cursor)));
        }
        let end = s.offset + s.bytes();
        if end > self.blob.len() as u64 {
            return Err(err("truncated".into()));
        }
        self.cursor = end;
        Ok(&self.blob[s.offset as usize..end as usize])
    }

    fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>, FormatError> {
        let data = self.next(name, ElementType::F64, rows, cols)?;
        let values: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(DMatrix::from_row_slice(rows, cols, &values))
    }

    fn indices(&mut self, name: &str, count: usize) -> Result<Vec<usize>, FormatError> {
        let data = self.next(name, ElementType::U32, 1, count)?;
        Ok(data
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4-byte chunk")) as usize)
            .collect())
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelBundle, FormatError> {
    if !bytes.starts_with(MAGIC.as_bytes()) || bytes.get(MAGIC.len()) != Some(&b'\n') {
        return Err(FormatError::BadMagic);
    }
    let (lines, blob) = split_manifest(bytes)?;
    let (f, sections) = parse_fields(&lines[1..])?;
    let precision = Precision::from_bits(f.b).ok_or_else(|| FormatError::Manifest(format!("bad precision {}", f.b)))?;
    let config = TrainConfig {
        r: f.r,
        k: f.k,
        precision,
        lambda: f.lambda,
        threshold: f.threshold,
        seed: f.seed,
        css_strategy: f.css,
    };
    config
        .validate()
        .map_err(|e| FormatError::Manifest(e.to_string()))?;
    let expected_payload = crate::pipeline::storage_bytes(f.d, f.r, f.b, f.k);
    if f.payload_bytes != expected_payload {
        return Err(FormatError::Bundle(format!(
            "payload_bytes={} but the shape implies {expected_payload}",
            f.payload_bytes
        )));
    }
    if f.index_bytes != 4 * (f.k * f.r) as u64 {
        return Err(FormatError::Bundle(format!("index_bytes={}", f.index_bytes)));
    }

    let mut reader = BlobReader {
        blob,
        sections: sections.into_iter().peekable(),
        cursor: 0,
    };
    let hyper = reader.matrix("classifier", f.k - 1, f.d + 1)?;
    let classifier = RoutingClassifier::from_parts(hyper, f.k).map_err(|e| FormatError::Bundle(e.to_string()))?;
    let label_len = precision.label_len();
    let mut clusters = Vec::with_capacity(f.k);
    for i in 0..f.k {
        let columns = reader.indices(&format!("cluster{i}.columns"), f.r)?;
        let z = reader.matrix(&format!("cluster{i}.z"), f.r, label_len)?;
        let w = reader.matrix(&format!("cluster{i}.w"), f.d, f.r)?;
        let embedding = EmbeddingModel::from_parts(columns, z).map_err(|e| FormatError::Bundle(e.to_string()))?;
        let regressor = RegressorModel::from_parts(w, f.lambda).map_err(|e| FormatError::Bundle(e.to_string()))?;
        clusters.push(ClusterModel {
            embedding,
            regressor,
        });
    }
    let centroids = if reader.sections.peek().is_some_and(Section::is_auxiliary) {
        Some(reader.matrix(CENTROIDS, f.k, f.d)?)
    } else {
        None
    };
    let aux_read = centroids.as_ref().map_or(0, |c| 8 * c.len() as u64);
    if f.auxiliary_bytes != aux_read {
        return Err(FormatError::Bundle(format!("auxiliary_bytes={}", f.auxiliary_bytes)));
    }
    if reader.sections.next().is_some() {
        return Err(FormatError::Manifest("unexpected extra sections".into()));
    }
    if reader.cursor != blob.len() as u64 {
        return Err(FormatError::Bundle(format!(
            "{} trailing bytes after the last section",
            blob.len() as u64 - reader.cursor
        )));
    }
    ModelBundle::from_parts(config, f.d, classifier, clusters, centroids).map_err(|e| FormatError::Bundle(e.to_string()))
}
