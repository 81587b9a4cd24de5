//! `RRES` container: a JSON header describing tensors followed by their raw
//! little-endian FP32 payload.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "RRES"
//! 4       4     version, u32 LE (= 1)
//! 8       8     header length in bytes, u64 LE
//! 16      n     header, UTF-8 JSON
//! 16+n    ...   payload: concatenated f32 LE tensors
//! ```
//!
//! Tensor offsets in the header are byte offsets into the payload.

use std::fs;
use std::path::Path;

use faultrange_core::data::Dataset;
use faultrange_core::nn::{Layer, LayerKind, ModelGraph, ParamSlot};
use faultrange_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::json::from_slice_with_path;

pub const MAGIC: &[u8; 4] = b"RRES";
pub const VERSION: u32 = 1;
const PREFIX: usize = 16;

/// Location of one tensor in the payload.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub shape: Vec<usize>,
    pub offset: u64,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub slot: ParamSlot,
    #[serde(flatten)]
    pub tensor: TensorEntry,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    #[serde(flatten)]
    pub kind: LayerKind,
    pub params: Vec<ParamEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub content: String,
    pub input_shape: Vec<usize>,
    pub class_names: Vec<String>,
    pub protection_points: Vec<usize>,
    pub layers: Vec<LayerEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub content: String,
    pub id: String,
    pub class_names: Vec<String>,
    pub images: TensorEntry,
    /// Labels stored as FP32 class indices.
    pub labels: TensorEntry,
}

/// Frame `header` and `payload` into container bytes.
pub fn encode(header: &impl Serialize, payload: &[u8]) -> Vec<u8> {
    let header = serde_json::to_vec(header).expect("header serializes");
    let mut out = Vec::with_capacity(PREFIX + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(payload);
    out
}

/// Split container bytes into (header JSON, payload).
pub fn decode(bytes: &[u8]) -> Result<(&[u8], &[u8])> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            what: "magic",
            offset: 0,
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            found: bytes[..4].to_vec(),
            expected: MAGIC.to_vec(),
        });
    }
    if bytes.len() < PREFIX {
        return Err(Error::Truncated {
            what: "prefix",
            offset: bytes.len() as u64,
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let end = (PREFIX as u64)
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len() as u64)
        .ok_or(Error::Truncated {
            what: "header",
            offset: PREFIX as u64,
        })? as usize;
    Ok((&bytes[PREFIX..end], &bytes[end..]))
}

struct PayloadWriter {
    bytes: Vec<u8>,
}

impl PayloadWriter {
    fn push(&mut self, t: &Tensor) -> TensorEntry {
        let offset = self.bytes.len() as u64;
        for v in t.data() {
            self.bytes.extend_from_slice(&v.to_le_bytes());
        }
        TensorEntry {
            shape: t.shape().to_vec(),
            offset,
            count: t.len() as u64,
        }
    }
}

/// Checks that `entries` tile the payload without overlap, then reads them.
fn read_tensors(entries: &[(String, &TensorEntry)], payload: &[u8]) -> Result<Vec<Tensor>> {
    let declared: u64 = entries.iter().map(|(_, e)| e.count).fold(0u64, u64::saturating_add);
    let actual = payload.len() as u64 / 4;
    if declared != actual || !payload.len().is_multiple_of(4) {
        return Err(Error::CountMismatch { declared, actual });
    }
    let mut spans = Vec::with_capacity(entries.len());
    for (name, e) in entries {
        let len = e.count.checked_mul(4);
        let end = len.and_then(|l| e.offset.checked_add(l));
        match end {
            Some(end) if end <= payload.len() as u64 && e.offset % 4 == 0 => {
                spans.push((e.offset, end, name.clone()))
            }
            _ => {
                return Err(Error::OffsetOverflow {
                    name: name.clone(),
                    offset: e.offset,
                    len: len.unwrap_or(u64::MAX),
                    payload: payload.len() as u64,
                })
            }
        }
        let n: u64 = e.shape.iter().map(|&d| d as u64).product();
        if n != e.count {
            return Err(Error::TensorShape {
                name: name.clone(),
                message: format!("shape {:?} has {n} elements, count says {}", e.shape, e.count),
            });
        }
    }
    spans.sort();
    for w in spans.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(Error::Overlap {
                first: w[0].2.clone(),
                second: w[1].2.clone(),
            });
        }
    }
    entries
        .iter()
        .map(|(name, e)| {
            let start = e.offset as usize;
            let data = payload[start..start + 4 * e.count as usize]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            Tensor::new(e.shape.clone(), data).map_err(|err| Error::TensorShape {
                name: name.clone(),
                message: err.to_string(),
            })
        })
        .collect()
}

pub fn encode_model(model: &ModelGraph) -> Vec<u8> {
    let mut payload = PayloadWriter { bytes: Vec::new() };
    let layers = model
        .layers()
        .iter()
        .map(|layer| LayerEntry {
            kind: layer.kind.clone(),
            params: layer
                .kind
                .param_shapes()
                .into_iter()
                .zip(&layer.params)
                .map(|((slot, _), t)| ParamEntry {
                    slot,
                    tensor: payload.push(t),
                })
                .collect(),
        })
        .collect();
    let header = ModelHeader {
        content: "model".into(),
        input_shape: model.input_shape().to_vec(),
        class_names: model.class_names().to_vec(),
        protection_points: model.protection_points().to_vec(),
        layers,
    };
    encode(&header, &payload.bytes)
}

pub fn decode_model(bytes: &[u8]) -> Result<ModelGraph> {
    let (header, payload) = decode(bytes)?;
    let header: ModelHeader = from_slice_with_path(header, "model header")?;
    if header.content != "model" {
        return Err(Error::Schema {
            file: "model header".into(),
            path: "content".into(),
            message: format!("expected \"model\", found {:?}", header.content),
        });
    }
    let mut entries = Vec::new();
    for (i, layer) in header.layers.iter().enumerate() {
        let expected: Vec<ParamSlot> = layer.kind.param_shapes().into_iter().map(|(s, _)| s).collect();
        let found: Vec<ParamSlot> = layer.params.iter().map(|p| p.slot).collect();
        if expected != found {
            return Err(Error::Schema {
                file: "model header".into(),
                path: format!("layers[{i}].params"),
                message: format!("{} needs slots {expected:?}, found {found:?}", layer.kind.name()),
            });
        }
        for p in &layer.params {
            entries.push((format!("layers[{i}].{:?}", p.slot).to_lowercase(), &p.tensor));
        }
    }
    let mut tensors = read_tensors(&entries, payload)?.into_iter();
    let layers = header
        .layers
        .iter()
        .map(|l| {
            let params = tensors.by_ref().take(l.params.len()).collect();
            Layer::new(l.kind.clone(), params).map_err(Error::from)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ModelGraph::new(
        header.input_shape,
        header.class_names,
        layers,
        header.protection_points,
    )?)
}

pub fn save_model(model: &ModelGraph, path: &Path) -> Result<()> {
    fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ModelGraph> {
    decode_model(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    let first = ds.images.first().ok_or_else(|| {
        faultrange_core::Error::Config("cannot store an empty dataset".into())
    })?;
    let mut shape = vec![ds.len()];
    shape.extend_from_slice(first.shape());
    let images = Tensor::new(
        shape,
        ds.images.iter().flat_map(|t| t.data().iter().copied()).collect(),
    )?;
    let labels = Tensor::from_vec(ds.labels.iter().map(|&l| l as f32).collect());
    let mut payload = PayloadWriter { bytes: Vec::new() };
    let header = DatasetHeader {
        content: "dataset".into(),
        id: ds.id.clone(),
        class_names: ds.class_names.clone(),
        images: payload.push(&images),
        labels: payload.push(&labels),
    };
    Ok(encode(&header, &payload.bytes))
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let (header, payload) = decode(bytes)?;
    let header: DatasetHeader = from_slice_with_path(header, "dataset header")?;
    if header.content != "dataset" {
        return Err(Error::Schema {
            file: "dataset header".into(),
            path: "content".into(),
            message: format!("expected \"dataset\", found {:?}", header.content),
        });
    }
    let entries = [("images".to_string(), &header.images), ("labels".to_string(), &header.labels)];
    let mut tensors = read_tensors(&entries, payload)?.into_iter();
    let (images, labels) = (tensors.next().expect("two"), tensors.next().expect("two"));
    let n = images.shape()[0];
    if images.shape().len() < 2 || labels.shape() != [n] {
        return Err(Error::TensorShape {
            name: "labels".into(),
            message: format!("images {:?} vs labels {:?}", images.shape(), labels.shape()),
        });
    }
    let image_shape = images.shape()[1..].to_vec();
    let per = images.len() / n;
    let images = images
        .data()
        .chunks_exact(per)
        .map(|c| Tensor::new(image_shape.clone(), c.to_vec()))
        .collect::<faultrange_core::Result<Vec<_>>>()?;
    let labels = labels
        .data()
        .iter()
        .map(|&l| {
            if l >= 0.0 && l.fract() == 0.0 {
                Ok(l as usize)
            } else {
                Err(Error::TensorShape {
                    name: "labels".into(),
                    message: format!("label {l} is not a class index"),
                })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(header.id, header.class_names, images, labels)?)
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, encode_dataset(ds)?).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
