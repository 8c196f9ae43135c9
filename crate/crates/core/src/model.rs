//! Single-file model container.
//!
//! Layout: magic `TEVM`, format version (u32), section count (u32), then
//! sections in a fixed order. Each section is a 4-byte tag, a u64 payload
//! length and the payload. Payloads hold u32 shape headers followed by
//! 32-bit little-endian floats; the network section also carries its
//! architecture as a JSON header. Every integer is little-endian.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::backend::{LdaTransform, PldaModel};
use crate::embednet::{FrameNet, FrameNetConfig};
use crate::gmm::DiagGmm;
use crate::tvspace::TotalVariabilityModel;

pub const MAGIC: &[u8; 4] = b"TEVM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("unsupported model format version {0}")]
    Version(u32),
    #[error("unknown section tag {0:?}")]
    UnknownTag(String),
    #[error("duplicate section {0}")]
    DuplicateSection(&'static str),
    #[error("section {tag} is malformed: {reason}")]
    Malformed { tag: &'static str, reason: String },
    #[error("section {0} is not present")]
    Missing(&'static str),
    #[error("total-variability section needs the GMM section")]
    TvmWithoutGmm,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Section {
    Gmm,
    Tvm,
    Dnn,
    Lda,
    Plda,
}

impl Section {
    /// Write order.
    pub const ALL: [Section; 5] = [Section::Gmm, Section::Tvm, Section::Dnn, Section::Lda, Section::Plda];

    pub fn tag(self) -> &'static [u8; 4] {
        match self {
            Section::Gmm => b"GMM ",
            Section::Tvm => b"TVM ",
            Section::Dnn => b"DNN ",
            Section::Lda => b"LDA ",
            Section::Plda => b"PLDA",
        }
    }

    pub fn name(self) -> &'static str {
        std::str::from_utf8(self.tag()).unwrap()
    }

    fn from_tag(tag: &[u8; 4]) -> Result<Self, ModelError> {
        Self::ALL
            .into_iter()
            .find(|s| s.tag() == tag)
            .ok_or_else(|| ModelError::UnknownTag(String::from_utf8_lossy(tag).into_owned()))
    }
}

/// Any subset of the pipeline's trained models.
#[derive(Debug, Clone, Default)]
pub struct ModelFile {
    pub gmm: Option<DiagGmm>,
    /// Total-variability matrix; its UBM is the `gmm` section.
    pub tmatrix: Option<DMatrix<f64>>,
    pub dnn: Option<FrameNet>,
    pub lda: Option<LdaTransform>,
    pub plda: Option<PldaModel>,
}

impl ModelFile {
    pub fn sections(&self) -> Vec<Section> {
        let present = [
            self.gmm.is_some(),
            self.tmatrix.is_some(),
            self.dnn.is_some(),
            self.lda.is_some(),
            self.plda.is_some(),
        ];
        Section::ALL.into_iter().zip(present).filter(|(_, p)| *p).map(|(s, _)| s).collect()
    }

    pub fn require_gmm(&self) -> Result<&DiagGmm, ModelError> {
        self.gmm.as_ref().ok_or(ModelError::Missing("GMM "))
    }

    pub fn require_dnn(&self) -> Result<&FrameNet, ModelError> {
        self.dnn.as_ref().ok_or(ModelError::Missing("DNN "))
    }

    pub fn tv_model(&self) -> Result<TotalVariabilityModel, ModelError> {
        let t = self.tmatrix.clone().ok_or(ModelError::Missing("TVM "))?;
        let ubm = self.gmm.clone().ok_or(ModelError::TvmWithoutGmm)?;
        TotalVariabilityModel::new(ubm, t)
            .map_err(|e| ModelError::Malformed { tag: "TVM ", reason: e.to_string() })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        if self.tmatrix.is_some() && self.gmm.is_none() {
            return Err(ModelError::TvmWithoutGmm);
        }
        let sections = self.sections();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        put_u32(&mut out, sections.len() as u32);
        for s in sections {
            let payload = match s {
                Section::Gmm => encode_gmm(self.gmm.as_ref().unwrap()),
                Section::Tvm => encode_matrix_only(self.tmatrix.as_ref().unwrap()),
                Section::Dnn => encode_dnn(self.dnn.as_ref().unwrap())?,
                Section::Lda => encode_lda(self.lda.as_ref().unwrap()),
                Section::Plda => encode_plda(self.plda.as_ref().unwrap()),
            };
            out.extend_from_slice(s.tag());
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(&payload);
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        Ok(())
    }

    /// Decodes the sections listed in `wanted` (all when `None`); other
    /// sections are skipped without being parsed.
    pub fn from_bytes(bytes: &[u8], wanted: Option<&[Section]>) -> Result<Self, ModelError> {
        let mut r = Cursor { buf: bytes, pos: 0, tag: "header" };
        if r.take(4)? != MAGIC {
            return Err(ModelError::BadMagic);
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(ModelError::Version(version));
        }
        let count = r.u32()?;
        let mut raw: Vec<(Section, &[u8])> = Vec::new();
        for _ in 0..count {
            let tag: [u8; 4] = r.take(4)?.try_into().unwrap();
            let section = Section::from_tag(&tag)?;
            if raw.iter().any(|(s, _)| *s == section) {
                return Err(ModelError::DuplicateSection(section.name()));
            }
            let len = r.u64()? as usize;
            raw.push((section, r.take(len)?));
        }
        if r.pos != bytes.len() {
            return Err(ModelError::Malformed { tag: "header", reason: "trailing bytes".into() });
        }
        let mut m = ModelFile::default();
        for (section, payload) in raw {
            if wanted.is_some_and(|w| !w.contains(&section)) {
                continue;
            }
            let mut c = Cursor { buf: payload, pos: 0, tag: section.name() };
            match section {
                Section::Gmm => m.gmm = Some(decode_gmm(&mut c)?),
                Section::Tvm => m.tmatrix = Some(c.matrix()?),
                Section::Dnn => m.dnn = Some(decode_dnn(&mut c)?),
                Section::Lda => m.lda = Some(decode_lda(&mut c)?),
                Section::Plda => m.plda = Some(decode_plda(&mut c)?),
            }
            c.finish()?;
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_bytes(&read_all(path)?, None)
    }

    pub fn load_sections(path: &Path, wanted: &[Section]) -> Result<Self, ModelError> {
        Self::from_bytes(&read_all(path)?, Some(wanted))
    }

    /// Loads `path` if it exists, otherwise starts empty.
    pub fn load_or_default(path: &Path) -> Result<Self, ModelError> {
        if path.exists() {
            Self::load(path)
        } else {
            Ok(Self::default())
        }
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>, ModelError> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s<'a>(out: &mut Vec<u8>, values: impl IntoIterator<Item = &'a f64>) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn put_matrix(out: &mut Vec<u8>, m: &DMatrix<f64>) {
    put_u32(out, m.nrows() as u32);
    put_u32(out, m.ncols() as u32);
    for i in 0..m.nrows() {
        put_f32s(out, m.row(i).iter());
    }
}

fn encode_matrix_only(m: &DMatrix<f64>) -> Vec<u8> {
    let mut out = Vec::new();
    put_matrix(&mut out, m);
    out
}

fn encode_gmm(g: &DiagGmm) -> Vec<u8> {
    let mut out = Vec::new();
    put_u32(&mut out, g.n_components() as u32);
    put_u32(&mut out, g.dim() as u32);
    put_f32s(&mut out, g.weights());
    put_f32s(&mut out, g.means());
    put_f32s(&mut out, g.variances());
    out
}

fn encode_dnn(net: &FrameNet) -> Result<Vec<u8>, ModelError> {
    let mut out = Vec::new();
    let cfg = serde_json::to_vec(net.config())
        .map_err(|e| ModelError::Malformed { tag: "DNN ", reason: e.to_string() })?;
    put_u32(&mut out, cfg.len() as u32);
    out.extend_from_slice(&cfg);
    let layers = net.layer_ranges();
    put_u32(&mut out, layers.len() as u32);
    for (name, range) in layers {
        put_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, range.len() as u32);
        put_f32s(&mut out, &net.parameters()[range]);
    }
    Ok(out)
}

fn encode_lda(l: &LdaTransform) -> Vec<u8> {
    let mut out = Vec::new();
    put_u32(&mut out, l.mean.len() as u32);
    put_f32s(&mut out, l.mean.iter());
    put_matrix(&mut out, &l.projection);
    out
}

fn encode_plda(p: &PldaModel) -> Vec<u8> {
    let mut out = Vec::new();
    put_u32(&mut out, p.mu.len() as u32);
    put_f32s(&mut out, p.mu.iter());
    put_matrix(&mut out, &p.between);
    put_matrix(&mut out, &p.within);
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    tag: &'static str,
}

impl<'a> Cursor<'a> {
    fn malformed(&self, reason: impl Into<String>) -> ModelError {
        ModelError::Malformed { tag: self.tag, reason: reason.into() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.buf.len() - self.pos < n {
            return Err(self.malformed(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>, ModelError> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| self.malformed("size overflow"))?)?;
        let v: Vec<f64> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(self.malformed("non-finite value"));
        }
        Ok(v)
    }

    fn matrix(&mut self) -> Result<DMatrix<f64>, ModelError> {
        let (r, c) = (self.u32()? as usize, self.u32()? as usize);
        Ok(DMatrix::from_row_slice(r, c, &self.f32s(r * c)?))
    }

    fn finish(&self) -> Result<(), ModelError> {
        if self.pos != self.buf.len() {
            return Err(self.malformed("payload longer than its contents"));
        }
        Ok(())
    }
}

fn decode_gmm(c: &mut Cursor) -> Result<DiagGmm, ModelError> {
    let (n, d) = (c.u32()? as usize, c.u32()? as usize);
    let w = c.f32s(n)?;
    let m = c.f32s(n * d)?;
    let v = c.f32s(n * d)?;
    DiagGmm::new(w, m, v, d).map_err(|e| c.malformed(e.to_string()))
}

fn decode_dnn(c: &mut Cursor) -> Result<FrameNet, ModelError> {
    let len = c.u32()? as usize;
    let cfg: FrameNetConfig = serde_json::from_slice(c.take(len)?).map_err(|e| c.malformed(e.to_string()))?;
    let expected = FrameNet::new(cfg.clone()).map_err(|e| c.malformed(e.to_string()))?.layer_ranges();
    let n_layers = c.u32()? as usize;
    if n_layers != expected.len() {
        return Err(c.malformed(format!("{} layer blobs, architecture has {}", n_layers, expected.len())));
    }
    let mut params = Vec::new();
    for (name, range) in expected {
        let name_len = c.u32()? as usize;
        let got = String::from_utf8_lossy(c.take(name_len)?).into_owned();
        let count = c.u32()? as usize;
        if got != name || count != range.len() {
            return Err(c.malformed(format!("blob {got}[{count}] where {name}[{}] expected", range.len())));
        }
        params.extend(c.f32s(count)?);
    }
    FrameNet::from_parameters(cfg, params).map_err(|e| c.malformed(e.to_string()))
}

fn decode_lda(c: &mut Cursor) -> Result<LdaTransform, ModelError> {
    let d = c.u32()? as usize;
    let mean = DVector::from_vec(c.f32s(d)?);
    let projection = c.matrix()?;
    if projection.nrows() != d {
        return Err(c.malformed("projection rows differ from mean length"));
    }
    Ok(LdaTransform { projection, mean })
}

fn decode_plda(c: &mut Cursor) -> Result<PldaModel, ModelError> {
    let d = c.u32()? as usize;
    let mu = DVector::from_vec(c.f32s(d)?);
    let between = c.matrix()?;
    let within = c.matrix()?;
    PldaModel::new(mu, between, within).map_err(|e| c.malformed(e.to_string()))
}
