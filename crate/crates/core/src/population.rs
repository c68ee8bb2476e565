//! Synthetic identity populations and labeled dataset files.
//!
//! Two generative models stand in for a face-capture pipeline:
//!
//! * **bit level**: each identity owns a hidden uniformly random string; every
//!   sample is an independent noisy view that flips each bit with
//!   probability `p_same`.
//! * **template level**: each identity owns a random unit centroid; samples
//!   add isotropic Gaussian noise of total expected norm `sigma` and are
//!   renormalized.
//!
//! Every identity draws from its own ChaCha stream, so populations are
//! reproducible and identity `i` does not depend on how many identities
//! were generated.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::rng;

pub const BIT_MAGIC: &[u8; 7] = b"SBAPOP1";
pub const TEMPLATE_MAGIC: &[u8; 7] = b"SBAPOPT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IdentityId(pub u32);

impl fmt::Display for IdentityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl From<u32> for IdentityId {
    fn from(v: u32) -> Self {
        Self(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Session {
    Enroll,
    Auth,
}

impl Session {
    fn to_byte(self) -> u8 {
        match self {
            Session::Enroll => 0,
            Session::Auth => 1,
        }
    }

    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Session::Enroll),
            1 => Ok(Session::Auth),
            other => Err(Error::Parse(format!("invalid session tag {other}"))),
        }
    }
}

impl fmt::Display for Session {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Session::Enroll => "enroll",
            Session::Auth => "auth",
        })
    }
}

/// A real-valued embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct Template {
    coords: Vec<f64>,
}

impl Template {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Params(
                "template must have at least one coordinate".into(),
            ));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::Params("template coordinates must be finite".into()));
        }
        Ok(Self { coords })
    }

    /// Builds a unit-norm template. Fails on the zero vector.
    pub fn normalized(coords: Vec<f64>) -> Result<Self> {
        let mut t = Self::new(coords)?;
        let norm = t.norm();
        if norm == 0.0 {
            return Err(Error::Params("cannot normalize the zero vector".into()));
        }
        t.coords.iter_mut().for_each(|c| *c /= norm);
        Ok(t)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn norm(&self) -> f64 {
        self.coords.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn euclidean(&self, other: &Template) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        Ok(self
            .coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    pub fn negated(&self) -> Template {
        Template {
            coords: self.coords.iter().map(|c| -c).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Bits(BitString),
    Template(Template),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub id: IdentityId,
    pub session: Session,
    pub payload: Payload,
}

impl LabeledSample {
    pub fn bits(&self) -> Option<&BitString> {
        match &self.payload {
            Payload::Bits(b) => Some(b),
            Payload::Template(_) => None,
        }
    }

    pub fn template(&self) -> Option<&Template> {
        match &self.payload {
            Payload::Template(t) => Some(t),
            Payload::Bits(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PopulationMode {
    BitLevel,
    TemplateLevel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PopulationConfig {
    pub count: usize,
    pub mode: PopulationMode,
    /// Bit-flip probability (bit level) or noise norm scale (template level).
    pub noise: f64,
    /// String length `n` (bit level) or template dimension `d`.
    pub len: usize,
    pub seed: u64,
    /// Bit level only: each hidden bit is repeated this many times to fill
    /// `len`. `1` gives iid bits.
    pub repeat: usize,
    /// Identities are numbered `first_id..first_id + count`.
    pub first_id: u32,
}

impl PopulationConfig {
    pub fn bit_level(count: usize, n: usize, p_same: f64, seed: u64) -> Self {
        Self {
            count,
            mode: PopulationMode::BitLevel,
            noise: p_same,
            len: n,
            seed,
            repeat: 1,
            first_id: 0,
        }
    }

    pub fn template_level(count: usize, d: usize, sigma: f64, seed: u64) -> Self {
        Self {
            count,
            mode: PopulationMode::TemplateLevel,
            noise: sigma,
            len: d,
            seed,
            repeat: 1,
            first_id: 0,
        }
    }

    pub fn with_repeat(mut self, repeat: usize) -> Self {
        self.repeat = repeat;
        self
    }

    pub fn with_first_id(mut self, first_id: u32) -> Self {
        self.first_id = first_id;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("population count must be at least 1".into()));
        }
        if self.len == 0 {
            return Err(Error::Config("length/dimension must be at least 1".into()));
        }
        if u32::try_from(self.count)
            .ok()
            .and_then(|c| self.first_id.checked_add(c - 1))
            .is_none()
        {
            return Err(Error::Config("identity ids overflow u32".into()));
        }
        match self.mode {
            PopulationMode::BitLevel => {
                if !(0.0..0.5).contains(&self.noise) {
                    return Err(Error::Config(format!(
                        "p_same must satisfy 0 <= p_same < 0.5, got {}",
                        self.noise
                    )));
                }
                if self.repeat == 0 || !self.len.is_multiple_of(self.repeat) {
                    return Err(Error::Config(format!(
                        "repeat factor {} must divide n = {}",
                        self.repeat, self.len
                    )));
                }
            }
            PopulationMode::TemplateLevel => {
                if !(self.noise >= 0.0 && self.noise.is_finite()) {
                    return Err(Error::Config(format!(
                        "sigma must be finite and >= 0, got {}",
                        self.noise
                    )));
                }
                if self.repeat != 1 {
                    return Err(Error::Config(
                        "repeat applies to bit-level mode only".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Generates one enroll and one auth sample per identity, ordered by id.
pub fn generate_population(cfg: &PopulationConfig) -> Result<Vec<LabeledSample>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.count * 2);
    for offset in 0..cfg.count as u32 {
        let id = IdentityId(cfg.first_id + offset);
        let mut rng = rng::stream(cfg.seed, u64::from(id.0));
        let (enroll, auth) = match cfg.mode {
            PopulationMode::BitLevel => {
                let hidden = BitString::from_fn(cfg.len / cfg.repeat, |_| rng.random());
                let truth = BitString::from_fn(cfg.len, |i| hidden.get(i / cfg.repeat));
                let e = noisy_bits(&truth, cfg.noise, &mut rng);
                let a = noisy_bits(&truth, cfg.noise, &mut rng);
                (Payload::Bits(e), Payload::Bits(a))
            }
            PopulationMode::TemplateLevel => {
                let centroid = random_unit(cfg.len, &mut rng)?;
                let e = noisy_template(&centroid, cfg.noise, &mut rng)?;
                let a = noisy_template(&centroid, cfg.noise, &mut rng)?;
                (Payload::Template(e), Payload::Template(a))
            }
        };
        out.push(LabeledSample {
            id,
            session: Session::Enroll,
            payload: enroll,
        });
        out.push(LabeledSample {
            id,
            session: Session::Auth,
            payload: auth,
        });
    }
    Ok(out)
}

fn noisy_bits(truth: &BitString, p: f64, rng: &mut rng::Rng) -> BitString {
    let mut out = truth.clone();
    if p > 0.0 {
        for i in 0..out.len() {
            if rng.random_bool(p) {
                out.flip(i);
            }
        }
    }
    out
}

pub(crate) fn random_unit(d: usize, rng: &mut rng::Rng) -> Result<Template> {
    loop {
        let coords: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        if coords.iter().any(|c| *c != 0.0) {
            return Template::normalized(coords);
        }
    }
}

/// Per-coordinate standard deviation is `sigma / sqrt(d)`, so the expected
/// squared noise norm is `sigma^2` independent of dimension.
fn noisy_template(centroid: &Template, sigma: f64, rng: &mut rng::Rng) -> Result<Template> {
    if sigma == 0.0 {
        return Ok(centroid.clone());
    }
    let scale = sigma / (centroid.dim() as f64).sqrt();
    let coords = centroid
        .coords()
        .iter()
        .map(|c| {
            let z: f64 = StandardNormal.sample(rng);
            c + scale * z
        })
        .collect();
    Template::normalized(coords)
}

/// Samples for one session, in dataset order.
pub fn session_samples(
    samples: &[LabeledSample],
    session: Session,
) -> impl Iterator<Item = &LabeledSample> {
    samples.iter().filter(move |s| s.session == session)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetFormat {
    BitLevel,
    TemplateLevel,
}

impl DatasetFormat {
    fn magic(self) -> &'static [u8; 7] {
        match self {
            DatasetFormat::BitLevel => BIT_MAGIC,
            DatasetFormat::TemplateLevel => TEMPLATE_MAGIC,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LoadOptions {
    /// Expected `n` (bit level) or `d` (template level); `None` accepts the header.
    pub expected_len: Option<usize>,
    /// Allowed samples per (id, session) pair.
    pub max_per_session: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            expected_len: None,
            max_per_session: 1,
        }
    }
}

pub fn write_dataset<W: Write>(mut w: W, samples: &[LabeledSample]) -> Result<()> {
    let (format, len) = match samples.first().map(|s| &s.payload) {
        None => return Ok(()),
        Some(Payload::Bits(b)) => (DatasetFormat::BitLevel, b.len()),
        Some(Payload::Template(t)) => (DatasetFormat::TemplateLevel, t.dim()),
    };
    let count = u32::try_from(samples.len())
        .map_err(|_| Error::Params("too many records for dataset format".into()))?;
    w.write_all(format.magic())?;
    w.write_all(&(len as u32).to_le_bytes())?;
    w.write_all(&count.to_le_bytes())?;
    for s in samples {
        w.write_all(&s.id.0.to_le_bytes())?;
        w.write_all(&[s.session.to_byte()])?;
        match (&s.payload, format) {
            (Payload::Bits(b), DatasetFormat::BitLevel) if b.len() == len => {
                w.write_all(&b.to_packed())?
            }
            (Payload::Template(t), DatasetFormat::TemplateLevel) if t.dim() == len => {
                for c in t.coords() {
                    w.write_all(&c.to_le_bytes())?;
                }
            }
            (Payload::Bits(b), DatasetFormat::BitLevel) => {
                return Err(Error::LengthMismatch {
                    expected: len,
                    actual: b.len(),
                })
            }
            (Payload::Template(t), DatasetFormat::TemplateLevel) => {
                return Err(Error::DimensionMismatch {
                    expected: len,
                    actual: t.dim(),
                })
            }
            _ => {
                return Err(Error::Params(
                    "dataset mixes bit strings and templates".into(),
                ))
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes samples to `path`. An empty sample list produces an empty file.
pub fn save_dataset(path: impl AsRef<Path>, samples: &[LabeledSample]) -> Result<()> {
    write_dataset(BufWriter::new(File::create(path)?), samples)
}

pub fn read_dataset<R: Read>(
    mut r: R,
    format: DatasetFormat,
    opts: &LoadOptions,
) -> Result<Vec<LabeledSample>> {
    let mut first = [0u8; 1];
    if r.read(&mut first)? == 0 {
        return Ok(Vec::new());
    }
    let mut magic = [0u8; 7];
    magic[0] = first[0];
    read_exact(&mut r, &mut magic[1..], "magic")?;
    if &magic != format.magic() {
        return Err(Error::Parse(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(format.magic())
        )));
    }
    let len = read_u32(&mut r, "header length")? as usize;
    let count = read_u32(&mut r, "header count")? as usize;
    if let Some(expected) = opts.expected_len {
        if expected != len {
            return Err(match format {
                DatasetFormat::BitLevel => Error::LengthMismatch {
                    expected,
                    actual: len,
                },
                DatasetFormat::TemplateLevel => Error::DimensionMismatch {
                    expected,
                    actual: len,
                },
            });
        }
    }
    if len == 0 {
        return Err(Error::Parse("zero record length".into()));
    }

    let mut seen = std::collections::HashMap::new();
    let mut out = Vec::with_capacity(count.min(1 << 20));
    let mut buf = vec![
        0u8;
        match format {
            DatasetFormat::BitLevel => len.div_ceil(8),
            DatasetFormat::TemplateLevel => len * 8,
        }
    ];
    for rec in 0..count {
        let id = IdentityId(read_u32(&mut r, "record id")?);
        let mut tag = [0u8; 1];
        read_exact(&mut r, &mut tag, "record session")?;
        let session = Session::from_byte(tag[0])?;
        read_exact(&mut r, &mut buf, "record payload")?;
        let payload = match format {
            DatasetFormat::BitLevel => Payload::Bits(BitString::from_packed(&buf, len)?),
            DatasetFormat::TemplateLevel => {
                let coords = buf
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                Payload::Template(
                    Template::new(coords)
                        .map_err(|e| Error::Parse(format!("record {rec}: {e}")))?,
                )
            }
        };
        let n = seen.entry((id, session)).or_insert(0usize);
        *n += 1;
        if *n > opts.max_per_session {
            return Err(Error::DuplicateSample { id, session });
        }
        out.push(LabeledSample {
            id,
            session,
            payload,
        });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Parse("trailing bytes after last record".into()));
    }
    Ok(out)
}

pub fn load_dataset(
    path: impl AsRef<Path>,
    format: DatasetFormat,
    opts: &LoadOptions,
) -> Result<Vec<LabeledSample>> {
    read_dataset(BufReader::new(File::open(path)?), format, opts)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Parse(format!("truncated {what}")),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}
