//! Datasets, the synthetic generator, matrix loaders, and metrics output.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{Fallback, RoundMetrics};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Features with optional ground truth. Training code only ever sees the
/// label-free [`Unlabeled`] view.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Option<Vec<usize>>,
    pub split: Split,
}

/// Features without labels; the only dataset type the training path accepts.
#[derive(Clone, Copy, Debug)]
pub struct Unlabeled<'a> {
    features: ArrayView2<'a, f64>,
}

impl<'a> Unlabeled<'a> {
    pub fn new(features: ArrayView2<'a, f64>) -> Result<Self> {
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite feature".into()));
        }
        Ok(Unlabeled { features })
    }

    pub fn features(&self) -> ArrayView2<'a, f64> {
        self.features
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Option<Vec<usize>>, split: Split) -> Result<Self> {
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite feature".into()));
        }
        if let Some(l) = &labels {
            if l.len() != features.nrows() {
                return Err(Error::Input(format!(
                    "{} labels for {} rows",
                    l.len(),
                    features.nrows()
                )));
            }
        }
        Ok(Dataset {
            features,
            labels,
            split,
        })
    }

    pub fn unlabeled(&self) -> Unlabeled<'_> {
        Unlabeled {
            features: self.features.view(),
        }
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::Input(format!(
                "{} labels for {} rows",
                labels.len(),
                self.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let features = self.features.select(ndarray::Axis(0), indices);
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Dataset {
            features,
            labels,
            split: self.split,
        }
    }

    /// A seeded random subset holding `fraction` of the rows, kept in
    /// original order.
    pub fn sample_fraction(&self, fraction: f64, seed: u64) -> Dataset {
        let n = self.len();
        let keep = ((fraction.clamp(0.0, 1.0) * n as f64).round() as usize).min(n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, n, keep).into_vec();
        idx.sort_unstable();
        self.subset(&idx)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    /// Training classes.
    pub num_classes: usize,
    pub points_per_class: usize,
    pub dim: usize,
    /// Radius of the sphere the class centers lie on.
    pub separation: f64,
    pub within_std: f64,
    pub heldout_classes: usize,
    /// Spread along one random direction shared by every class. Each point
    /// gets an offset u·scale·v with u uniform of unit variance. 0 gives
    /// plain isotropic blobs.
    pub nuisance_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_classes: 20,
            points_per_class: 50,
            dim: 32,
            separation: 10.0,
            within_std: 1.0,
            heldout_classes: 5,
            nuisance_scale: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// Thin classes stretched along a shared nuisance direction: raw
    /// nearest-neighbor structure is poor until the encoder learns to
    /// suppress that direction, which transfers to held-out classes.
    pub fn benchmark(seed: u64) -> Self {
        SyntheticSpec {
            separation: 6.0,
            within_std: 0.05,
            nuisance_scale: 24.0,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.points_per_class == 0 || self.dim == 0 {
            return Err(Error::Config(
                "synthetic classes, points and dim must be positive".into(),
            ));
        }
        for (name, v) in [
            ("separation", self.separation),
            ("within_std", self.within_std),
            ("nuisance_scale", self.nuisance_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("synthetic.{name} must be >= 0")));
            }
        }
        Ok(())
    }
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Array1<f64> {
    loop {
        let v = Array1::from_shape_simple_fn(dim, || rng.sample::<f64, _>(StandardNormal));
        let norm = v.dot(&v).sqrt();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

/// Train classes 0..C and held-out classes C..C+H, class-major rows.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let total = spec.num_classes + spec.heldout_classes;
    let centers: Vec<Array1<f64>> = (0..total)
        .map(|_| random_unit(&mut rng, spec.dim) * spec.separation)
        .collect();
    let direction = random_unit(&mut rng, spec.dim);
    let half_width = 3f64.sqrt();
    let style = Uniform::new_inclusive(-half_width, half_width).expect("finite");
    let mut make = |classes: std::ops::Range<usize>, split| {
        let rows = classes.len() * spec.points_per_class;
        let mut x = Array2::zeros((rows, spec.dim));
        let mut labels = Vec::with_capacity(rows);
        let mut r = 0;
        for c in classes {
            for _ in 0..spec.points_per_class {
                let u = style.sample(&mut rng) * spec.nuisance_scale;
                let mut row = x.row_mut(r);
                for (d, v) in row.iter_mut().enumerate() {
                    let noise: f64 = rng.sample(StandardNormal);
                    *v = centers[c][d] + spec.within_std * noise + u * direction[d];
                }
                labels.push(c);
                r += 1;
            }
        }
        Dataset::new(x, Some(labels), split)
    };
    let train = make(0..spec.num_classes, Split::Train)?;
    let test = make(spec.num_classes..total, Split::Test)?;
    Ok((train, test))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatrixFormat {
    Raw64,
    Dsv,
    Idx,
}

impl MatrixFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "raw64" => Some(MatrixFormat::Raw64),
            "dsv" | "csv" | "tsv" => Some(MatrixFormat::Dsv),
            "idx" => Some(MatrixFormat::Idx),
            _ => None,
        }
    }

    /// Guess from the file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        let name = path.file_name()?.to_str()?.to_ascii_lowercase();
        if name.ends_with(".raw64") {
            Some(MatrixFormat::Raw64)
        } else if name.ends_with(".csv") || name.ends_with(".tsv") || name.ends_with(".dsv") || name.ends_with(".txt") {
            Some(MatrixFormat::Dsv)
        } else if name.contains("-idx") || name.ends_with(".idx") {
            Some(MatrixFormat::Idx)
        } else {
            None
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DsvOptions {
    /// `None` splits on commas, semicolons, tabs or runs of spaces.
    pub delimiter: Option<char>,
    /// Last column is an integer class label.
    pub label_column: bool,
}

pub const RAW64_MAGIC: [u8; 4] = *b"UR64";

pub fn raw64_bytes(x: ArrayView2<f64>) -> Vec<u8> {
    let mut buf = Vec::with_capacity(12 + 8 * x.len());
    buf.extend_from_slice(&RAW64_MAGIC);
    buf.extend_from_slice(&(x.nrows() as u32).to_le_bytes());
    buf.extend_from_slice(&(x.ncols() as u32).to_le_bytes());
    for v in x.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn write_raw64(path: &Path, x: ArrayView2<f64>) -> Result<()> {
    std::fs::write(path, raw64_bytes(x))?;
    Ok(())
}

fn parse_err(location: String, message: impl Into<String>) -> Error {
    Error::Parse {
        location,
        message: message.into(),
    }
}

pub fn parse_raw64(bytes: &[u8]) -> Result<Array2<f64>> {
    if bytes.len() < 12 {
        return Err(parse_err("byte 0".into(), "truncated raw64 header"));
    }
    if bytes[..4] != RAW64_MAGIC {
        return Err(parse_err("byte 0".into(), "bad raw64 magic"));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = 12 + 8 * n * d;
    if bytes.len() != expected {
        return Err(parse_err(
            format!("byte {}", bytes.len().min(expected)),
            format!("header says {n}x{d} ({expected} bytes), file has {}", bytes.len()),
        ));
    }
    let mut vals = Vec::with_capacity(n * d);
    for (i, c) in bytes[12..].chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(c.try_into().unwrap());
        if !v.is_finite() {
            return Err(parse_err(format!("byte {}", 12 + 8 * i), "non-finite value"));
        }
        vals.push(v);
    }
    Ok(Array2::from_shape_vec((n, d), vals).expect("sized"))
}

pub fn parse_dsv(text: &str, opts: DsvOptions) -> Result<(Array2<f64>, Option<Vec<usize>>)> {
    let mut vals = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let loc = || format!("line {}", lineno + 1);
        let fields: Vec<&str> = match opts.delimiter {
            Some(c) => line.split(c).map(str::trim).collect(),
            None => line
                .split(|c: char| c == ',' || c == ';' || c == '\t' || c == ' ')
                .filter(|s| !s.is_empty())
                .collect(),
        };
        if let Some(w) = width {
            if fields.len() != w {
                return Err(parse_err(loc(), format!("expected {w} fields, found {}", fields.len())));
            }
        } else {
            let min = if opts.label_column { 2 } else { 1 };
            if fields.len() < min {
                return Err(parse_err(loc(), "too few fields"));
            }
            width = Some(fields.len());
        }
        let (feat, label) = if opts.label_column {
            (&fields[..fields.len() - 1], Some(fields[fields.len() - 1]))
        } else {
            (&fields[..], None)
        };
        for (col, f) in feat.iter().enumerate() {
            let v: f64 = f
                .parse()
                .map_err(|_| parse_err(loc(), format!("field {} is not a number: {f:?}", col + 1)))?;
            if !v.is_finite() {
                return Err(parse_err(loc(), format!("field {} is not finite", col + 1)));
            }
            vals.push(v);
        }
        if let Some(l) = label {
            labels.push(
                l.parse::<usize>()
                    .map_err(|_| parse_err(loc(), format!("label {l:?} is not a nonnegative integer")))?,
            );
        }
        rows += 1;
    }
    let cols = width.map(|w| if opts.label_column { w - 1 } else { w }).unwrap_or(0);
    let x = Array2::from_shape_vec((rows, cols), vals).expect("sized");
    Ok((x, opts.label_column.then_some(labels)))
}

fn parse_idx_header(bytes: &[u8]) -> Result<(Vec<usize>, usize)> {
    if bytes.len() < 4 {
        return Err(parse_err("byte 0".into(), "truncated IDX magic"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(parse_err("byte 0".into(), "bad IDX magic"));
    }
    if bytes[2] != 0x08 {
        return Err(parse_err(
            "byte 2".into(),
            format!("unsupported IDX element type 0x{:02x}, only unsigned bytes", bytes[2]),
        ));
    }
    let ndim = bytes[3] as usize;
    if ndim == 0 {
        return Err(parse_err("byte 3".into(), "IDX with zero dimensions"));
    }
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(parse_err(format!("byte {}", bytes.len()), "truncated IDX dimensions"));
    }
    // IDX stores dimensions big-endian.
    let dims: Vec<usize> = (0..ndim)
        .map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize)
        .collect();
    let count: usize = dims.iter().product();
    if bytes.len() != header + count {
        return Err(parse_err(
            format!("byte {}", bytes.len().min(header + count)),
            format!("dims {dims:?} need {} bytes, file has {}", header + count, bytes.len()),
        ));
    }
    Ok((dims, header))
}

/// Unsigned-byte IDX tensor as an N × (product of remaining dims) matrix
/// scaled to [0, 1].
pub fn parse_idx(bytes: &[u8]) -> Result<Array2<f64>> {
    let (dims, header) = parse_idx_header(bytes)?;
    let n = dims[0];
    let d: usize = dims[1..].iter().product();
    let vals = bytes[header..].iter().map(|&b| b as f64 / 255.0).collect();
    Ok(Array2::from_shape_vec((n, d), vals).expect("sized"))
}

/// One-dimensional unsigned-byte IDX file of labels.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let (dims, header) = parse_idx_header(bytes)?;
    if dims.len() != 1 {
        return Err(parse_err("byte 3".into(), "label IDX must be one-dimensional"));
    }
    Ok(bytes[header..].iter().map(|&b| b as usize).collect())
}

pub fn load_matrix_dataset(
    path: &Path,
    format: MatrixFormat,
    dsv: DsvOptions,
    split: Split,
) -> Result<Dataset> {
    let bytes = std::fs::read(path)?;
    let (x, labels) = match format {
        MatrixFormat::Raw64 => (parse_raw64(&bytes)?, None),
        MatrixFormat::Idx => (parse_idx(&bytes)?, None),
        MatrixFormat::Dsv => {
            let text = String::from_utf8(bytes)
                .map_err(|e| parse_err(format!("byte {}", e.utf8_error().valid_up_to()), "invalid UTF-8"))?;
            parse_dsv(&text, dsv)?
        }
    };
    Dataset::new(x, labels, split)
}

/// Labels from an IDX file or from text with one integer per line.
pub fn load_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() >= 4 && bytes[0] == 0 && bytes[1] == 0 {
        return parse_idx_labels(&bytes);
    }
    let text = String::from_utf8(bytes).map_err(|_| parse_err("byte 0".into(), "invalid UTF-8"))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<usize>()
                .map_err(|_| parse_err(format!("line {}", i + 1), format!("bad label {:?}", l.trim())))
        })
        .collect()
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut s = String::with_capacity(labels.len() * 3);
    for l in labels {
        writeln!(s, "{l}").unwrap();
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub const METRICS_VERSION: u32 = 1;
pub const METRICS_HEADER: &str = "round,epsilon,fallback,num_clusters,num_outliers,mean_cluster_size,nmi,way,episodes,mean_loss,accuracy_mean,accuracy_std";

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn metrics_csv(history: &[RoundMetrics]) -> String {
    let mut s = String::new();
    s.push_str(METRICS_HEADER);
    s.push('\n');
    for m in history {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            m.round,
            num(m.epsilon),
            m.fallback.label(),
            m.num_clusters,
            m.num_outliers,
            num(m.mean_cluster_size),
            opt(m.nmi),
            m.way,
            m.episodes,
            opt(m.mean_loss),
            opt(m.accuracy_mean),
            opt(m.accuracy_std),
        )
        .unwrap();
    }
    s
}

pub fn write_metrics(history: &[RoundMetrics], path: &Path) -> Result<()> {
    if history.is_empty() {
        return Err(Error::Contract("empty metrics history".into()));
    }
    std::fs::write(path, metrics_csv(history))?;
    Ok(())
}

pub fn parse_metrics(text: &str) -> Result<Vec<RoundMetrics>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == METRICS_HEADER => {}
        _ => return Err(parse_err("line 1".into(), "unexpected metrics header")),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let loc = || format!("line {}", i + 1);
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 12 {
            return Err(parse_err(loc(), format!("expected 12 fields, found {}", f.len())));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|_| parse_err(loc(), format!("bad integer {s:?}")));
        let real = |s: &str| s.parse::<f64>().map_err(|_| parse_err(loc(), format!("bad number {s:?}")));
        let maybe = |s: &str| if s.is_empty() { Ok(None) } else { real(s).map(Some) };
        out.push(RoundMetrics {
            round: int(f[0])?,
            epsilon: real(f[1])?,
            fallback: Fallback::parse(f[2]).ok_or_else(|| parse_err(loc(), format!("bad fallback {:?}", f[2])))?,
            num_clusters: int(f[3])?,
            num_outliers: int(f[4])?,
            mean_cluster_size: real(f[5])?,
            nmi: maybe(f[6])?,
            way: int(f[7])?,
            episodes: int(f[8])?,
            mean_loss: maybe(f[9])?,
            accuracy_mean: maybe(f[10])?,
            accuracy_std: maybe(f[11])?,
        });
    }
    Ok(out)
}

pub fn read_metrics(path: &Path) -> Result<Vec<RoundMetrics>> {
    parse_metrics(&std::fs::read_to_string(path)?)
}
