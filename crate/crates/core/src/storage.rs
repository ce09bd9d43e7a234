//! Model persistence.
//!
//! A model file is: the magic `SRNM`, a format version, a JSON metadata
//! block (kind, input side, dimensions, label inventory, vocabulary), then
//! every parameter tensor in registration order as raw little-endian 64-bit
//! payloads. Raw bit copies make save→load→save byte-identical.

use crate::encoder::Vocab;
use crate::error::{Error, Result};
use crate::model::{AnyModel, BioModel, CtcModel, Dims, InputKind, InputSpec, ModelKind, SrnnModel};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"SRNM";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct DimsMeta {
    ctx: usize,
    seg: usize,
    stroke: usize,
    label: usize,
    dur: usize,
    phi: usize,
    embed: usize,
    bio: usize,
}

impl From<&Dims> for DimsMeta {
    fn from(d: &Dims) -> Self {
        DimsMeta {
            ctx: d.ctx,
            seg: d.seg,
            stroke: d.stroke,
            label: d.label_embed,
            dur: d.dur_embed,
            phi: d.phi,
            embed: d.sym_embed,
            bio: d.bio_hidden,
        }
    }
}

impl From<&DimsMeta> for Dims {
    fn from(m: &DimsMeta) -> Self {
        Dims {
            ctx: m.ctx,
            seg: m.seg,
            stroke: m.stroke,
            label_embed: m.label,
            dur_embed: m.dur,
            phi: m.phi,
            sym_embed: m.embed,
            bio_hidden: m.bio,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    kind: String,
    input: String,
    input_dim: usize,
    max_seg_len: usize,
    labels: Vec<String>,
    /// Vocabulary in embedding-row order (UNK row excluded).
    vocab: Vec<String>,
    dims: DimsMeta,
}

fn kind_name(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Srnn => "srnn",
        ModelKind::Bio => "bio",
        ModelKind::Ctc => "ctc",
    }
}

fn input_name(kind: InputKind) -> &'static str {
    match kind {
        InputKind::Vectors => "vectors",
        InputKind::Strokes => "strokes",
        InputKind::Symbols => "symbols",
    }
}

fn meta_of(model: &AnyModel) -> ModelMeta {
    let front = model.front();
    let (dims, max_seg_len) = match model {
        AnyModel::Srnn(m) => (&m.dims, m.max_seg_len),
        AnyModel::Bio(m) => (&m.dims, 0),
        AnyModel::Ctc(m) => (&m.dims, 0),
    };
    ModelMeta {
        kind: kind_name(model.kind()).to_string(),
        input: input_name(front.input_kind).to_string(),
        input_dim: if front.input_kind == InputKind::Vectors { front.input_dim } else { 0 },
        max_seg_len,
        labels: model.labels().to_vec(),
        vocab: front.vocab.as_ref().map(|v| v.symbols().to_vec()).unwrap_or_default(),
        dims: dims.into(),
    }
}

pub fn save_model(path: &Path, model: &AnyModel) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    let meta = serde_json::to_vec(&meta_of(model)).map_err(|e| Error::ModelFormat(e.to_string()))?;
    out.write_all(&(meta.len() as u32).to_le_bytes())?;
    out.write_all(&meta)?;

    let params = model.params();
    out.write_all(&(params.len() as u32).to_le_bytes())?;
    for id in params.ids() {
        let name = params.name(id).as_bytes();
        out.write_all(&(name.len() as u16).to_le_bytes())?;
        out.write_all(name)?;
        let tensor = params.value(id);
        out.write_all(&[tensor.shape().len() as u8])?;
        for &d in tensor.shape() {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in tensor.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn build_skeleton(meta: &ModelMeta) -> Result<AnyModel> {
    let dims: Dims = (&meta.dims).into();
    let input = match meta.input.as_str() {
        "vectors" => InputSpec::Vectors { dim: meta.input_dim },
        "strokes" => InputSpec::Strokes,
        "symbols" => InputSpec::Symbols { vocab: Vocab::build(meta.vocab.iter().cloned()) },
        other => return Err(Error::ModelFormat(format!("unknown input kind {other:?}"))),
    };
    let labels = meta.labels.clone();
    Ok(match meta.kind.as_str() {
        "srnn" => AnyModel::Srnn(SrnnModel::new(dims, meta.max_seg_len, labels, &input, 0)?),
        "bio" => AnyModel::Bio(BioModel::new(dims, labels, &input, 0)?),
        "ctc" => AnyModel::Ctc(CtcModel::new(dims, labels, &input, 0)?),
        other => return Err(Error::ModelFormat(format!("unknown model kind {other:?}"))),
    })
}

pub fn load_model(path: &Path) -> Result<AnyModel> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let magic = read_exact::<4>(&mut r)?;
    if &magic != MAGIC {
        return Err(Error::ModelFormat("bad magic; not a model file".into()));
    }
    let version = u32::from_le_bytes(read_exact::<4>(&mut r)?);
    if version != VERSION {
        return Err(Error::ModelFormat(format!(
            "unsupported model format version {version}, expected {VERSION}"
        )));
    }
    let meta_len = u32::from_le_bytes(read_exact::<4>(&mut r)?) as usize;
    let mut meta_buf = vec![0u8; meta_len];
    r.read_exact(&mut meta_buf)?;
    let meta: ModelMeta =
        serde_json::from_slice(&meta_buf).map_err(|e| Error::ModelFormat(e.to_string()))?;

    let mut model = build_skeleton(&meta)?;
    let params = model.params_mut();
    let count = u32::from_le_bytes(read_exact::<4>(&mut r)?) as usize;
    if count != params.len() {
        return Err(Error::ModelFormat(format!(
            "file holds {count} tensors, model defines {}",
            params.len()
        )));
    }
    for id in (0..count).map(crate::diffgraph::ParamId) {
        let name_len = u16::from_le_bytes(read_exact::<2>(&mut r)?) as usize;
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf)?;
        let name = String::from_utf8(name_buf).map_err(|e| Error::ModelFormat(e.to_string()))?;
        if name != params.name(id) {
            return Err(Error::ModelFormat(format!(
                "tensor {name:?} does not match expected {:?}",
                params.name(id)
            )));
        }
        let ndim = read_exact::<1>(&mut r)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u32::from_le_bytes(read_exact::<4>(&mut r)?) as usize);
        }
        if shape != params.value(id).shape() {
            return Err(Error::ModelFormat(format!(
                "tensor {name:?} has shape {shape:?}, model expects {:?}",
                params.value(id).shape()
            )));
        }
        let data = params.value_mut(id).data_mut();
        for slot in data.iter_mut() {
            *slot = f64::from_le_bytes(read_exact::<8>(&mut r)?);
        }
    }
    Ok(model)
}
