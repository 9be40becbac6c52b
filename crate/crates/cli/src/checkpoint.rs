//! Binary checkpoint files.
//!
//! Layout (all little-endian):
//!
//! ```text
//! magic   8 bytes  "MERGEQCK"
//! version u16      1
//! source_hash u64  content hash of the source checkpoint (0 for sources)
//! records ...      until end of file
//! ```
//!
//! Each record: `name_len u32, name utf-8, kind u8 (0 float | 1 int),
//! bits u8, step f64, dim_count u32, dims u32..., payload` where the
//! payload is `f64` values for float records and `i32` for int records.
//!
//! Per layer `k` a checkpoint stores `layers.k.weight` (float or int),
//! `layers.k.bias` (float), and `layers.k.act` — an int record of shape
//! `[1]` whose payload encodes the activation function (0 identity,
//! 1 relu) and whose `bits`/`step` carry the activation quantization
//! scheme (bits 0 when activations stay in full precision).
//!
//! The content hash is SHA-256 over the record bytes, truncated to the
//! first 8 bytes; save → load → save round-trips are byte-identical.

use std::fs;
use std::io::Write;
use std::path::Path;

use mergeq_core::nnet::{Activation, DenseLayer, Network};
use mergeq_core::quant::{QuantScheme, QuantTarget, QuantizedLayer, QuantizedNet, QuantizedTensor};
use mergeq_core::tensor::Tensor;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

const MAGIC: &[u8; 8] = b"MERGEQCK";
const VERSION: u16 = 1;

const KIND_FLOAT: u8 = 0;
const KIND_INT: u8 = 1;

/// What a checkpoint holds: full-precision or quantized weights.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Float(Network),
    Quantized(QuantizedNet),
}

impl Model {
    /// Float view: quantized weights are dequantized.
    pub fn to_network(&self) -> Result<Network> {
        match self {
            Model::Float(net) => Ok(net.clone()),
            Model::Quantized(q) => Ok(q.to_network()?),
        }
    }

    pub fn as_quantized(&self) -> Option<&QuantizedNet> {
        match self {
            Model::Quantized(q) => Some(q),
            Model::Float(_) => None,
        }
    }
}

/// A checkpoint read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedCheckpoint {
    pub model: Model,
    /// Hash stored in the header: the source this model derives from.
    pub source_hash: u64,
    /// Hash of this file's own tensor records.
    pub content_hash: u64,
}

fn push_record(
    buf: &mut Vec<u8>,
    name: &str,
    kind: u8,
    bits: u8,
    step: f64,
    dims: &[usize],
    payload: RecordPayload<'_>,
) {
    buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.push(kind);
    buf.push(bits);
    buf.extend_from_slice(&step.to_le_bytes());
    buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    match payload {
        RecordPayload::Float(values) => {
            for &v in values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        RecordPayload::Int(values) => {
            for &v in values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
}

enum RecordPayload<'a> {
    Float(&'a [f64]),
    Int(&'a [i32]),
}

fn act_code(activation: Activation) -> i32 {
    match activation {
        Activation::Identity => 0,
        Activation::Relu => 1,
    }
}

fn act_from_code(code: i32) -> Result<Activation> {
    match code {
        0 => Ok(Activation::Identity),
        1 => Ok(Activation::Relu),
        other => Err(CliError::Format(format!("unknown activation code {other}"))),
    }
}

/// Serialize the per-tensor records (everything after the header).
fn encode_records(model: &Model) -> Vec<u8> {
    let mut buf = Vec::new();
    match model {
        Model::Float(net) => {
            for (k, layer) in net.layers().iter().enumerate() {
                push_record(
                    &mut buf,
                    &format!("layers.{k}.weight"),
                    KIND_FLOAT,
                    0,
                    0.0,
                    layer.weight().shape(),
                    RecordPayload::Float(layer.weight().data()),
                );
                push_record(
                    &mut buf,
                    &format!("layers.{k}.bias"),
                    KIND_FLOAT,
                    0,
                    0.0,
                    layer.bias().shape(),
                    RecordPayload::Float(layer.bias().data()),
                );
                push_record(
                    &mut buf,
                    &format!("layers.{k}.act"),
                    KIND_INT,
                    0,
                    0.0,
                    &[1],
                    RecordPayload::Int(&[act_code(layer.activation())]),
                );
            }
        }
        Model::Quantized(qnet) => {
            for (k, layer) in qnet.layers.iter().enumerate() {
                push_record(
                    &mut buf,
                    &format!("layers.{k}.weight"),
                    KIND_INT,
                    layer.weight.scheme.bits,
                    layer.weight.scheme.step,
                    layer.weight.shape(),
                    RecordPayload::Int(layer.weight.ints()),
                );
                push_record(
                    &mut buf,
                    &format!("layers.{k}.bias"),
                    KIND_FLOAT,
                    0,
                    0.0,
                    layer.bias.shape(),
                    RecordPayload::Float(layer.bias.data()),
                );
                let (bits, step) = match &layer.act_scheme {
                    Some(s) => (s.bits, s.step),
                    None => (0, 0.0),
                };
                push_record(
                    &mut buf,
                    &format!("layers.{k}.act"),
                    KIND_INT,
                    bits,
                    step,
                    &[1],
                    RecordPayload::Int(&[act_code(layer.activation)]),
                );
            }
        }
    }
    buf
}

/// First 8 bytes of SHA-256 over the record bytes, little-endian.
pub fn content_hash(records: &[u8]) -> u64 {
    let digest = Sha256::digest(records);
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Write a checkpoint atomically (temp file + rename).
pub fn save_checkpoint(path: &Path, model: &Model, source_hash: u64) -> Result<u64> {
    let records = encode_records(model);
    let own_hash = content_hash(&records);
    let mut bytes = Vec::with_capacity(18 + records.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&source_hash.to_le_bytes());
    bytes.extend_from_slice(&records);

    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(own_hash)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(CliError::Format("truncated checkpoint".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

struct RawRecord {
    name: String,
    kind: u8,
    bits: u8,
    step: f64,
    dims: Vec<usize>,
    floats: Vec<f64>,
    ints: Vec<i32>,
}

fn parse_record(cur: &mut Cursor<'_>) -> Result<RawRecord> {
    let name_len = cur.u32()? as usize;
    if name_len > 4096 {
        return Err(CliError::Format("unreasonable record name length".into()));
    }
    let name = String::from_utf8(cur.take(name_len)?.to_vec())
        .map_err(|_| CliError::Format("record name is not UTF-8".into()))?;
    let kind = cur.u8()?;
    let bits = cur.u8()?;
    let step = cur.f64()?;
    let dim_count = cur.u32()? as usize;
    let mut dims = Vec::with_capacity(dim_count);
    for _ in 0..dim_count {
        dims.push(cur.u32()? as usize);
    }
    let count: usize = dims.iter().product();
    let mut floats = Vec::new();
    let mut ints = Vec::new();
    match kind {
        KIND_FLOAT => {
            floats.reserve(count);
            for _ in 0..count {
                floats.push(cur.f64()?);
            }
        }
        KIND_INT => {
            ints.reserve(count);
            for _ in 0..count {
                ints.push(cur.i32()?);
            }
        }
        other => return Err(CliError::Format(format!("unknown record kind {other}"))),
    }
    Ok(RawRecord {
        name,
        kind,
        bits,
        step,
        dims,
        floats,
        ints,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let bytes = fs::read(path)?;
    if bytes.len() < 18 {
        return Err(CliError::Format("file too short for a checkpoint header".into()));
    }
    if &bytes[..8] != MAGIC {
        return Err(CliError::Format("bad magic; not a checkpoint file".into()));
    }
    let version = u16::from_le_bytes(bytes[8..10].try_into().unwrap());
    if version != VERSION {
        return Err(CliError::Format(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let source_hash = u64::from_le_bytes(bytes[10..18].try_into().unwrap());
    let records_bytes = &bytes[18..];
    let own_hash = content_hash(records_bytes);

    let mut cur = Cursor {
        bytes: records_bytes,
        pos: 0,
    };
    let mut records = Vec::new();
    while !cur.done() {
        records.push(parse_record(&mut cur)?);
    }

    let model = assemble_model(&records)?;
    Ok(LoadedCheckpoint {
        model,
        source_hash,
        content_hash: own_hash,
    })
}

fn assemble_model(records: &[RawRecord]) -> Result<Model> {
    let mut layer_count = 0usize;
    for r in records {
        let Some(rest) = r.name.strip_prefix("layers.") else {
            return Err(CliError::Format(format!("unexpected record `{}`", r.name)));
        };
        let Some((idx, field)) = rest.split_once('.') else {
            return Err(CliError::Format(format!("unexpected record `{}`", r.name)));
        };
        let idx: usize = idx
            .parse()
            .map_err(|_| CliError::Format(format!("bad layer index in `{}`", r.name)))?;
        if !matches!(field, "weight" | "bias" | "act") {
            return Err(CliError::Format(format!("unexpected record `{}`", r.name)));
        }
        layer_count = layer_count.max(idx + 1);
    }
    if layer_count == 0 {
        return Err(CliError::Format("checkpoint holds no layers".into()));
    }

    let find = |name: &str| -> Result<&RawRecord> {
        records
            .iter()
            .find(|r| r.name == name)
            .ok_or_else(|| CliError::Format(format!("missing record `{name}`")))
    };

    let mut float_layers: Vec<DenseLayer> = Vec::new();
    let mut quant_layers: Vec<QuantizedLayer> = Vec::new();
    let mut any_float_weight = false;
    let mut any_int_weight = false;

    for k in 0..layer_count {
        let weight = find(&format!("layers.{k}.weight"))?;
        let bias = find(&format!("layers.{k}.bias"))?;
        let act = find(&format!("layers.{k}.act"))?;

        if bias.kind != KIND_FLOAT {
            return Err(CliError::Format(format!("layer {k} bias must be float")));
        }
        let bias_tensor = Tensor::new(bias.dims.clone(), bias.floats.clone())
            .map_err(|e| CliError::Format(format!("layer {k} bias: {e}")))?;

        if act.kind != KIND_INT || act.ints.len() != 1 {
            return Err(CliError::Format(format!(
                "layer {k} activation record malformed"
            )));
        }
        let activation = act_from_code(act.ints[0])?;
        let act_scheme = if act.bits == 0 {
            None
        } else {
            Some(
                QuantScheme::new(act.bits, act.step, QuantTarget::Activation)
                    .map_err(|e| CliError::Format(format!("layer {k} act scheme: {e}")))?,
            )
        };

        match weight.kind {
            KIND_FLOAT => {
                any_float_weight = true;
                let w = Tensor::new(weight.dims.clone(), weight.floats.clone())
                    .map_err(|e| CliError::Format(format!("layer {k} weight: {e}")))?;
                float_layers.push(
                    DenseLayer::new(w, bias_tensor, activation)
                        .map_err(|e| CliError::Format(format!("layer {k}: {e}")))?,
                );
            }
            KIND_INT => {
                any_int_weight = true;
                let scheme = QuantScheme::new(weight.bits, weight.step, QuantTarget::Weight)
                    .map_err(|e| CliError::Format(format!("layer {k} weight scheme: {e}")))?;
                let ints = QuantizedTensor::new(weight.dims.clone(), weight.ints.clone(), scheme)
                    .map_err(|e| CliError::Format(format!("layer {k} weight ints: {e}")))?;
                quant_layers.push(QuantizedLayer {
                    weight: ints,
                    bias: bias_tensor,
                    activation,
                    act_scheme,
                });
            }
            _ => unreachable!("kind validated in parse_record"),
        }
    }

    match (any_float_weight, any_int_weight) {
        (true, false) => {
            let net = Network::new(float_layers)
                .map_err(|e| CliError::Format(format!("invalid network: {e}")))?;
            Ok(Model::Float(net))
        }
        (false, true) => {
            let q = QuantizedNet {
                layers: quant_layers,
            };
            // Validate layer chaining through the float view.
            q.to_network()
                .map_err(|e| CliError::Format(format!("invalid network: {e}")))?;
            Ok(Model::Quantized(q))
        }
        _ => Err(CliError::Format(
            "checkpoint mixes float and int weight records".into(),
        )),
    }
}
