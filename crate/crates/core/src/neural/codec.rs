//! Versioned binary weight format.
//!
//! ```text
//! "AMLB" | version: u16 | kind: u8 | body
//! ```
//!
//! All integers and floats are big-endian. Bodies:
//!
//! * `SequenceClassifier`: `H, D, head_in, head_out` as u32, then every
//!   parameter as f64. For each gate in the order input, forget, output,
//!   candidate: `W` (H×D, row-major), `U` (H×H), `b` (H); then the head
//!   weights (1×H) and bias.
//! * `DenseNetwork`: layer count u32, then `(inputs, outputs, activation)`
//!   as u32 per layer, then per layer its weights (row-major) and biases.
//!
//! Other kinds wrap one of these bodies with extra header fields.

use super::{Activation, DenseLayer, DenseNetwork, Matrix, Model, SequenceClassifier};
use crate::bytes::{len_u32, put_f64s, put_u16, put_u32, Reader};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"AMLB";
pub const FORMAT_VERSION: u16 = 1;

/// Upper bound on any single dimension; rejects absurd headers before allocating.
const MAX_DIM: u32 = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ModelKind {
    SequenceClassifier = 1,
    DenseNetwork = 2,
    Surrogate = 3,
    FeatureAttacker = 4,
}

impl ModelKind {
    fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            1 => ModelKind::SequenceClassifier,
            2 => ModelKind::DenseNetwork,
            3 => ModelKind::Surrogate,
            4 => ModelKind::FeatureAttacker,
            _ => return None,
        })
    }
}

/// A model with a binary weight encoding.
pub trait ModelBytes: Sized {
    const KIND: ModelKind;

    fn write_body(&self, out: &mut Vec<u8>);

    #[doc(hidden)]
    fn read_body(r: &mut Reader<'_>) -> Result<Self>;
}

pub fn save_weights<M: ModelBytes>(model: &M) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u16(&mut out, FORMAT_VERSION);
    out.push(M::KIND as u8);
    model.write_body(&mut out);
    out
}

pub fn load_weights<M: ModelBytes>(bytes: &[u8]) -> Result<M> {
    let mut r = Reader::new(bytes);
    let kind = read_preamble(&mut r)?;
    if kind != M::KIND {
        return Err(Error::Codec(format!("expected {:?} weights, found {kind:?}", M::KIND)));
    }
    let model = M::read_body(&mut r)?;
    r.finish()?;
    Ok(model)
}

/// Kind tag of an encoded model, after checking magic and version.
pub fn peek_kind(bytes: &[u8]) -> Result<ModelKind> {
    read_preamble(&mut Reader::new(bytes))
}

fn read_preamble(r: &mut Reader<'_>) -> Result<ModelKind> {
    let magic = r.take(4).map_err(|_| Error::Codec("missing magic".into()))?;
    if magic != MAGIC {
        return Err(Error::Codec(format!("bad magic {magic:02x?}")));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::Codec(format!("unsupported weight format version {version}")));
    }
    let kind = r.u8()?;
    ModelKind::from_byte(kind).ok_or_else(|| Error::Codec(format!("unknown model kind {kind}")))
}

pub(crate) fn read_dim(r: &mut Reader<'_>, what: &str) -> Result<usize> {
    let v = r.u32()?;
    if v == 0 || v > MAX_DIM {
        return Err(Error::Codec(format!("implausible {what} {v}")));
    }
    Ok(v as usize)
}

fn fill_params<M: Model>(model: &mut M, r: &mut Reader<'_>) -> Result<()> {
    for block in model.params_mut() {
        let values = r.f64s(block.len())?;
        block.copy_from_slice(&values);
    }
    Ok(())
}

impl ModelBytes for SequenceClassifier {
    const KIND: ModelKind = ModelKind::SequenceClassifier;

    fn write_body(&self, out: &mut Vec<u8>) {
        put_u32(out, len_u32(self.hidden()));
        put_u32(out, len_u32(self.input()));
        put_u32(out, len_u32(self.head.inputs()));
        put_u32(out, len_u32(self.head.outputs()));
        for block in self.params() {
            put_f64s(out, block);
        }
    }

    fn read_body(r: &mut Reader<'_>) -> Result<Self> {
        let hidden = read_dim(r, "hidden size")?;
        let input = read_dim(r, "input size")?;
        let head_in = read_dim(r, "head input size")?;
        let head_out = read_dim(r, "head output size")?;
        if head_in != hidden || head_out != 1 {
            return Err(Error::Codec(format!(
                "head {head_in}->{head_out} does not fit hidden size {hidden}"
            )));
        }
        let mut model = SequenceClassifier::zeros(hidden, input);
        fill_params(&mut model, r)?;
        Ok(model)
    }
}

impl ModelBytes for DenseNetwork {
    const KIND: ModelKind = ModelKind::DenseNetwork;

    fn write_body(&self, out: &mut Vec<u8>) {
        put_u32(out, len_u32(self.layers().len()));
        for l in self.layers() {
            put_u32(out, len_u32(l.inputs()));
            put_u32(out, len_u32(l.outputs()));
            put_u32(out, l.activation.code());
        }
        for block in self.params() {
            put_f64s(out, block);
        }
    }

    fn read_body(r: &mut Reader<'_>) -> Result<Self> {
        let count = read_dim(r, "layer count")?;
        if count > 64 {
            return Err(Error::Codec(format!("implausible layer count {count}")));
        }
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let inputs = read_dim(r, "layer inputs")?;
            let outputs = read_dim(r, "layer outputs")?;
            let code = r.u32()?;
            let activation = Activation::from_code(code)
                .ok_or_else(|| Error::Codec(format!("unknown activation {code}")))?;
            layers.push(DenseLayer {
                weights: Matrix::zeros(outputs, inputs),
                biases: vec![0.0; outputs],
                activation,
            });
        }
        let mut net = DenseNetwork::new(layers).map_err(|e| Error::Codec(e.to_string()))?;
        fill_params(&mut net, r)?;
        Ok(net)
    }
}
