//! Embedding pools: storage, the `EMB1` binary format, CSV import/export and
//! synthetic generation.
//!
//! `EMB1` layout (all integers little-endian):
//!
//! | field            | type                 |
//! |------------------|----------------------|
//! | magic            | `b"EMB1"`            |
//! | version          | u16 (= 1)            |
//! | dim              | u32                  |
//! | record count     | u32                  |
//! | per record       | speaker id, utterance id (u32 byte length + UTF-8), split u8, `dim` × f32 |
//!
//! Split bytes: 0 = train, 1 = enroll, 2 = trial.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_at, Error, Result};
use crate::linalg::{axpy, norm, Mat};

pub const EMB_MAGIC: &[u8; 4] = b"EMB1";
pub const EMB_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Enroll,
    Trial,
}

impl Split {
    pub fn as_byte(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Enroll => 1,
            Split::Trial => 2,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Split::Train),
            1 => Some(Split::Enroll),
            2 => Some(Split::Trial),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Enroll => "enroll",
            Split::Trial => "trial",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "enroll" => Ok(Split::Enroll),
            "trial" => Ok(Split::Trial),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub speaker: String,
    pub utterance: String,
    pub split: Split,
    pub vector: Vec<f64>,
}

/// A labeled collection of speaker vectors sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingPool {
    dim: usize,
    records: Vec<Record>,
    keys: HashSet<(String, String)>,
}

impl EmbeddingPool {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidShape("pool dimension must be >= 1".into()));
        }
        Ok(EmbeddingPool { dim, records: Vec::new(), keys: HashSet::new() })
    }

    pub fn from_records(dim: usize, records: impl IntoIterator<Item = Record>) -> Result<Self> {
        let mut pool = Self::new(dim)?;
        for r in records {
            pool.push(r)?;
        }
        Ok(pool)
    }

    pub fn push(&mut self, record: Record) -> Result<()> {
        if record.vector.len() != self.dim {
            return Err(Error::DimMismatch { expected: self.dim, got: record.vector.len() });
        }
        if !record.vector.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite(format!("{}/{}", record.speaker, record.utterance)));
        }
        let key = (record.speaker.clone(), record.utterance.clone());
        if !self.keys.insert(key) {
            return Err(Error::DuplicateRecord { speaker: record.speaker, utterance: record.utterance });
        }
        self.records.push(record);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn split_records(&self, split: Split) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn has_split(&self, split: Split) -> bool {
        self.records.iter().any(|r| r.split == split)
    }

    /// Sorted, deduplicated speaker ids.
    pub fn speakers(&self) -> Vec<String> {
        let set: std::collections::BTreeSet<&str> = self.records.iter().map(|r| r.speaker.as_str()).collect();
        set.into_iter().map(str::to_owned).collect()
    }

    /// Records grouped by speaker (sorted by id), optionally restricted to splits.
    pub fn by_speaker(&self, splits: Option<&[Split]>) -> BTreeMap<String, Vec<&Record>> {
        let mut out: BTreeMap<String, Vec<&Record>> = BTreeMap::new();
        for r in &self.records {
            if splits.is_none_or(|s| s.contains(&r.split)) {
                out.entry(r.speaker.clone()).or_default().push(r);
            }
        }
        out
    }

    /// Sub-pool containing only the given splits.
    pub fn subset(&self, splits: &[Split]) -> EmbeddingPool {
        let records: Vec<Record> = self.records.iter().filter(|r| splits.contains(&r.split)).cloned().collect();
        let keys = records.iter().map(|r| (r.speaker.clone(), r.utterance.clone())).collect();
        EmbeddingPool { dim: self.dim, records, keys }
    }

    /// SHA-256 of the `EMB1` encoding, hex.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_emb_bytes()))
    }

    pub fn to_emb_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(14 + self.records.len() * (self.dim * 4 + 32));
        buf.extend_from_slice(EMB_MAGIC);
        buf.extend_from_slice(&EMB_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            for s in [&r.speaker, &r.utterance] {
                buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
                buf.extend_from_slice(s.as_bytes());
            }
            buf.push(r.split.as_byte());
            for &x in &r.vector {
                buf.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        buf
    }

    pub fn from_emb_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(4, "magic")?;
        if magic != EMB_MAGIC {
            return Err(cur.fail(0, "bad magic, expected EMB1"));
        }
        let version = cur.u16("version")?;
        if version != EMB_VERSION {
            return Err(cur.fail(4, &format!("unsupported version {version}")));
        }
        let dim = cur.u32("dim")? as usize;
        if dim == 0 {
            return Err(cur.fail(6, "dim must be >= 1"));
        }
        let count = cur.u32("record count")? as usize;
        let mut pool = EmbeddingPool::new(dim)?;
        for i in 0..count {
            let speaker = cur.string(&format!("record {i} speaker id"))?;
            let utterance = cur.string(&format!("record {i} utterance id"))?;
            let at = cur.pos;
            let split_byte = cur.take(1, &format!("record {i} split"))?[0];
            let split = Split::from_byte(split_byte)
                .ok_or_else(|| cur.fail(at, &format!("invalid split byte {split_byte}")))?;
            let at = cur.pos;
            let raw = cur.take(dim * 4, &format!("record {i} vector"))?;
            let vector: Vec<f64> =
                raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
            pool.push(Record { speaker, utterance, split, vector }).map_err(|e| match e {
                Error::DuplicateRecord { .. } | Error::NonFinite(_) => cur.fail(at, &e.to_string()),
                other => other,
            })?;
        }
        if cur.pos != bytes.len() {
            return Err(cur.fail(cur.pos, "trailing bytes after last record"));
        }
        Ok(pool)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["speaker".to_string(), "utterance".into(), "split".into()];
        header.extend((0..self.dim).map(|i| format!("v{i}")));
        wtr.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.speaker.clone(), r.utterance.clone(), r.split.to_string()];
            row.extend(r.vector.iter().map(|x| x.to_string()));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.len() < 4 {
            return Err(Error::Format { offset: 0, reason: "need speaker,utterance,split,v0.. columns".into() });
        }
        for (i, expected) in ["speaker", "utterance", "split"].iter().enumerate() {
            if &headers[i] != *expected {
                return Err(Error::Format {
                    offset: 0,
                    reason: format!("column {i} must be {expected:?}, found {:?}", &headers[i]),
                });
            }
        }
        let dim = headers.len() - 3;
        for k in 0..dim {
            if headers[k + 3] != format!("v{k}") {
                return Err(Error::Format {
                    offset: 0,
                    reason: format!("column {} must be \"v{k}\", found {:?}", k + 3, &headers[k + 3]),
                });
            }
        }
        let mut pool = EmbeddingPool::new(dim)?;
        for row in rdr.records() {
            let row = row?;
            let offset = row.position().map_or(0, |p| p.byte());
            let fail = |reason: String| Error::Format { offset, reason };
            let split: Split = row[2].parse().map_err(fail)?;
            let vector = (0..dim)
                .map(|k| row[k + 3].trim().parse::<f64>().map_err(|e| fail(format!("v{k}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            pool.push(Record { speaker: row[0].to_string(), utterance: row[1].to_string(), split, vector })?;
        }
        Ok(pool)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn fail(&self, offset: usize, reason: &str) -> Error {
        Error::Format { offset: offset as u64, reason: reason.to_string() }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(self.pos, &format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let at = self.pos;
        let len = self.u32(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.fail(at, &format!("{what} is not UTF-8")))
    }
}

pub fn save_pool(pool: &EmbeddingPool, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path.as_ref(), pool.to_emb_bytes()).map_err(io_at(path.as_ref()))?;
    Ok(())
}

pub fn load_pool(path: impl AsRef<Path>) -> Result<EmbeddingPool> {
    EmbeddingPool::from_emb_bytes(&std::fs::read(path.as_ref()).map_err(io_at(path.as_ref()))?)
}

/// Loads `.csv` files through the CSV importer and everything else as `EMB1`.
pub fn load_pool_any(path: impl AsRef<Path>) -> Result<EmbeddingPool> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        EmbeddingPool::read_csv(std::fs::File::open(path).map_err(io_at(path))?)
    } else {
        load_pool(path)
    }
}

/// Parameters of the synthetic Gaussian speaker model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub num_speakers: usize,
    pub utterances_per_speaker: usize,
    pub dim: usize,
    pub sigma_within: f64,
    pub sigma_between: f64,
    pub seed: u64,
    pub normalize: bool,
    /// The first `train_speakers` speakers go entirely to the train split.
    pub train_speakers: usize,
    /// Remaining speakers: this many enrollment utterances, the rest trials.
    pub enroll_per_speaker: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_speakers: 40,
            utterances_per_speaker: 10,
            dim: 16,
            sigma_within: 0.25,
            sigma_between: 1.0,
            seed: 7,
            normalize: false,
            train_speakers: 20,
            enroll_per_speaker: 3,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.num_speakers < 2 {
            return bad("num_speakers must be >= 2");
        }
        if self.dim == 0 {
            return bad("dim must be >= 1");
        }
        if self.utterances_per_speaker == 0 {
            return bad("utterances_per_speaker must be >= 1");
        }
        if !(self.sigma_within > 0.0 && self.sigma_within.is_finite()) {
            return bad("sigma_within must be > 0");
        }
        if !(self.sigma_between > 0.0 && self.sigma_between.is_finite()) {
            return bad("sigma_between must be > 0");
        }
        if self.train_speakers > self.num_speakers {
            return bad("train_speakers must be <= num_speakers");
        }
        if self.train_speakers < self.num_speakers
            && (self.enroll_per_speaker == 0 || self.enroll_per_speaker >= self.utterances_per_speaker)
        {
            return bad("enroll_per_speaker must be in [1, utterances_per_speaker)");
        }
        Ok(())
    }
}

/// Isotropic Gaussian speakers; values are stored at f32 precision so the pool
/// round-trips through `EMB1` bit-exactly.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<EmbeddingPool> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.dim;
    let mut pool = EmbeddingPool::new(d)?;
    let width = spec.num_speakers.to_string().len().max(4);
    for s in 0..spec.num_speakers {
        let centroid: Vec<f64> = (0..d).map(|_| spec.sigma_between * rng.sample::<f64, _>(StandardNormal)).collect();
        let speaker = format!("spk{s:0width$}");
        for u in 0..spec.utterances_per_speaker {
            let mut v: Vec<f64> =
                centroid.iter().map(|c| c + spec.sigma_within * rng.sample::<f64, _>(StandardNormal)).collect();
            if spec.normalize {
                let n = norm(&v);
                if n > 0.0 {
                    v.iter_mut().for_each(|x| *x /= n);
                }
            }
            let vector = v.into_iter().map(|x| x as f32 as f64).collect();
            let split = if s < spec.train_speakers {
                Split::Train
            } else if u < spec.enroll_per_speaker {
                Split::Enroll
            } else {
                Split::Trial
            };
            pool.push(Record { speaker: speaker.clone(), utterance: format!("{speaker}-u{u:03}"), split, vector })?;
        }
    }
    Ok(pool)
}

/// Sample statistics of a set of vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolStats {
    pub mean: Vec<f64>,
    pub covariance: Mat,
    pub centroids: BTreeMap<String, Vec<f64>>,
    pub count: usize,
}

pub fn mean_of<'a>(dim: usize, vectors: impl IntoIterator<Item = &'a [f64]>) -> Result<Vec<f64>> {
    let mut mean = vec![0.0; dim];
    let mut n = 0usize;
    for v in vectors {
        axpy(1.0, v, &mut mean);
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyPool("no vectors to average".into()));
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    Ok(mean)
}

/// Statistics over the records of the train split. Mean, unbiased covariance,
/// per-speaker centroids.
pub fn pool_stats(pool: &EmbeddingPool) -> Result<PoolStats> {
    let train: Vec<&Record> = pool.split_records(Split::Train).collect();
    stats_of(pool.dim(), &train)
}

pub fn stats_of(dim: usize, records: &[&Record]) -> Result<PoolStats> {
    if records.is_empty() {
        return Err(Error::EmptyPool("no train records".into()));
    }
    let n = records.len();
    if n < 2 {
        return Err(Error::DegenerateCovariance(n));
    }
    let mean = mean_of(dim, records.iter().map(|r| r.vector.as_slice()))?;
    let mut covariance = Mat::zeros(dim);
    for r in records {
        for i in 0..dim {
            let di = r.vector[i] - mean[i];
            for j in 0..=i {
                covariance[(i, j)] += di * (r.vector[j] - mean[j]);
            }
        }
    }
    for i in 0..dim {
        for j in 0..=i {
            let c = covariance[(i, j)] / (n - 1) as f64;
            covariance[(i, j)] = c;
            covariance[(j, i)] = c;
        }
    }
    let mut grouped: BTreeMap<String, Vec<&[f64]>> = BTreeMap::new();
    for r in records {
        grouped.entry(r.speaker.clone()).or_default().push(&r.vector);
    }
    let centroids =
        grouped.into_iter().map(|(s, vs)| Ok((s, mean_of(dim, vs)?))).collect::<Result<BTreeMap<_, _>>>()?;
    Ok(PoolStats { mean, covariance, centroids, count: n })
}
