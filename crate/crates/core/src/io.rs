//! On-disk formats.
//!
//! A model is a JSON manifest plus one little-endian `f32` blob file named
//! after the manifest with a `.bin` extension. The manifest lists the layer
//! specs and, per parameter blob, its shape, byte offset, byte length and
//! SHA-256. A dataset is a single binary file:
//!
//! ```text
//! b"THDS" | version u32 | N u32 | C u32 | H u32 | W u32 | N·C·H·W f32 | N u32 labels
//! ```
//!
//! All integers and floats little-endian.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::{Architecture, LayerKind, LayerParams, LayerSpec, ModelGraph};
use crate::nn::{BnAffine, ConvKernel, FcParams};
use crate::tensor::{Shape, Tensor};

pub const MODEL_FORMAT: &str = "thinner-model";
pub const MODEL_VERSION: u32 = 1;
pub const DATASET_MAGIC: &[u8; 4] = b"THDS";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobEntry {
    pub layer: String,
    pub name: String,
    pub shape: Vec<usize>,
    /// Bytes from the start of the blob file.
    pub offset: u64,
    /// Bytes.
    pub length: u64,
    pub sha256: String,
}

impl BlobEntry {
    fn label(&self) -> String {
        format!("{}.{}", self.layer, self.name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format: String,
    pub version: u32,
    pub name: String,
    pub input_shape: [usize; 3],
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
    pub blob_file: String,
    pub blobs: Vec<BlobEntry>,
}

/// Path of the blob file belonging to a manifest.
pub fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn f32_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn save_model(model: &ModelGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    model.validate()?;
    let bin = blob_path(path);
    let file = File::create(&bin).map_err(|e| Error::io(&bin, e))?;
    let mut out = BufWriter::new(file);
    let mut blobs = Vec::new();
    let mut offset = 0u64;
    for l in &model.arch.layers {
        let Some(p) = model.params.get(&l.id) else {
            continue;
        };
        for (name, shape, values) in p.blobs() {
            let bytes = f32_bytes(values);
            out.write_all(&bytes).map_err(|e| Error::io(&bin, e))?;
            blobs.push(BlobEntry {
                layer: l.id.clone(),
                name: name.to_string(),
                shape,
                offset,
                length: bytes.len() as u64,
                sha256: hex(&Sha256::digest(&bytes)),
            });
            offset += bytes.len() as u64;
        }
    }
    out.flush().map_err(|e| Error::io(&bin, e))?;
    let manifest = ModelManifest {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        name: model.arch.name.clone(),
        input_shape: model.arch.input_shape,
        classes: model.arch.classes,
        layers: model.arch.layers.clone(),
        blob_file: bin
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        blobs,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

/// Reads only the manifest and architecture; no blob is touched.
pub fn load_architecture(path: impl AsRef<Path>) -> Result<Architecture> {
    let m = read_manifest(path.as_ref())?;
    Architecture::new(m.name, m.input_shape, m.classes, m.layers)
}

fn read_manifest(path: &Path) -> Result<ModelManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m: ModelManifest = serde_json::from_str(&text)?;
    if m.format != MODEL_FORMAT || m.version != MODEL_VERSION {
        return Err(Error::Graph(format!(
            "unsupported model format {} v{}",
            m.format, m.version
        )));
    }
    Ok(m)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelGraph> {
    let path = path.as_ref();
    let m = read_manifest(path)?;
    let arch = Architecture::new(m.name.clone(), m.input_shape, m.classes, m.layers.clone())?;
    let bin = path.with_file_name(&m.blob_file);
    let file = File::open(&bin).map_err(|e| Error::io(&bin, e))?;
    let file_len = file.metadata().map_err(|e| Error::io(&bin, e))?.len();
    let mut reader = BufReader::new(file);

    // Each blob must own exactly the file region between its offset and the
    // next blob's offset (or end of file).
    let mut order: Vec<&BlobEntry> = m.blobs.iter().collect();
    order.sort_by_key(|b| b.offset);
    for (i, b) in order.iter().enumerate() {
        let declared = 4 * b.shape.iter().product::<usize>() as u64;
        if b.length != declared {
            return Err(Error::Blob {
                blob: b.label(),
                reason: format!("length {} bytes disagrees with shape {:?}", b.length, b.shape),
            });
        }
        let region_end = order.get(i + 1).map_or(file_len, |n| n.offset);
        let region_start = if i == 0 { 0 } else { b.offset };
        if b.offset != region_start || region_end < b.offset || region_end - b.offset != b.length {
            return Err(Error::Blob {
                blob: b.label(),
                reason: format!(
                    "declares {} floats but occupies a {}-byte region at offset {}",
                    b.length / 4,
                    region_end.saturating_sub(b.offset),
                    b.offset
                ),
            });
        }
    }
    if order.is_empty() && file_len != 0 {
        return Err(Error::Blob {
            blob: m.blob_file.clone(),
            reason: "blob file is not empty but the manifest declares no blobs".into(),
        });
    }

    let mut blobs: BTreeMap<(String, String), (Vec<usize>, Vec<f32>)> = BTreeMap::new();
    for b in &m.blobs {
        reader
            .seek(SeekFrom::Start(b.offset))
            .map_err(|e| Error::io(&bin, e))?;
        let mut bytes = vec![0u8; b.length as usize];
        reader.read_exact(&mut bytes).map_err(|e| Error::Blob {
            blob: b.label(),
            reason: format!("read failed: {e}"),
        })?;
        if hex(&Sha256::digest(&bytes)) != b.sha256 {
            return Err(Error::Blob {
                blob: b.label(),
                reason: "checksum mismatch".into(),
            });
        }
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if blobs
            .insert((b.layer.clone(), b.name.clone()), (b.shape.clone(), values))
            .is_some()
        {
            return Err(Error::Blob {
                blob: b.label(),
                reason: "declared twice".into(),
            });
        }
    }

    let inputs = arch.input_shapes()?;
    let mut params = BTreeMap::new();
    for (i, l) in arch.layers.iter().enumerate() {
        let want = arch.param_shapes(i, inputs[i]);
        if want.is_empty() {
            continue;
        }
        let mut take = |name: &str| -> Result<Vec<f32>> {
            let (shape, values) = blobs
                .remove(&(l.id.clone(), name.to_string()))
                .ok_or_else(|| Error::Blob {
                    blob: format!("{}.{name}", l.id),
                    reason: "missing from manifest".into(),
                })?;
            let expect = &want.iter().find(|(n, _)| *n == name).expect("known blob").1;
            if &shape != expect {
                return Err(Error::Blob {
                    blob: format!("{}.{name}", l.id),
                    reason: format!("shape {shape:?}, architecture requires {expect:?}"),
                });
            }
            Ok(values)
        };
        let p = match &l.kind {
            LayerKind::Conv {
                filters,
                kernel,
                stride,
                pad,
                bias,
            } => {
                let w = take("weight")?;
                let b = if *bias { Some(take("bias")?) } else { None };
                LayerParams::Conv(ConvKernel::new(
                    Tensor::from_vec(Shape::new(*filters, inputs[i].c(), *kernel, *kernel), w)?,
                    b,
                    *stride,
                    *pad,
                )?)
            }
            LayerKind::Fc { outputs } => LayerParams::Fc(FcParams::new(
                inputs[i].sample_len(),
                *outputs,
                take("weight")?,
                take("bias")?,
            )?),
            LayerKind::BnAffine => LayerParams::Bn(BnAffine {
                scale: take("scale")?,
                shift: take("shift")?,
            }),
            _ => unreachable!("parameterless layers have no blob shapes"),
        };
        params.insert(l.id.clone(), p);
    }
    if let Some(((layer, name), _)) = blobs.into_iter().next() {
        return Err(Error::Blob {
            blob: format!("{layer}.{name}"),
            reason: "not used by any layer".into(),
        });
    }
    ModelGraph::new(arch, params)
}

pub fn save_dataset(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let s = data.images.shape();
    let mut buf = Vec::with_capacity(24 + 4 * s.len() + 4 * data.len());
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    for e in s.0 {
        let e = u32::try_from(e).map_err(|_| Error::Dataset(format!("extent {e} exceeds u32")))?;
        buf.extend_from_slice(&e.to_le_bytes());
    }
    buf.extend(f32_bytes(data.images.data()));
    for &l in &data.labels {
        let l = u32::try_from(l).map_err(|_| Error::Dataset(format!("label {l} exceeds u32")))?;
        buf.extend_from_slice(&l.to_le_bytes());
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Loads a dataset; with `classes`, every label must be below it.
pub fn load_dataset(path: impl AsRef<Path>, classes: Option<usize>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let u32_at = |off: usize| -> Result<u32> {
        bytes
            .get(off..off + 4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| Error::Dataset(format!("truncated header ({} bytes)", bytes.len())))
    };
    if bytes.get(..4) != Some(DATASET_MAGIC.as_slice()) {
        return Err(Error::Dataset("missing THDS magic".into()));
    }
    let version = u32_at(4)?;
    if version != DATASET_VERSION {
        return Err(Error::Dataset(format!("unsupported version {version}")));
    }
    let dims: Vec<usize> = (0..4).map(|i| u32_at(8 + 4 * i).map(|v| v as usize)).collect::<Result<_>>()?;
    let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
    if shape.is_empty() {
        return Err(Error::Dataset(format!("empty extents {shape}")));
    }
    let expect = 24 + 4 * shape.len() + 4 * shape.n();
    if bytes.len() != expect {
        return Err(Error::Dataset(format!(
            "{shape} requires {expect} bytes, file has {}",
            bytes.len()
        )));
    }
    let pixels = &bytes[24..24 + 4 * shape.len()];
    let images: Vec<f32> = pixels
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let labels: Vec<usize> = bytes[24 + 4 * shape.len()..]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let d = Dataset::new(Tensor::from_vec(shape, images)?, labels)?;
    if let Some(k) = classes {
        d.check_classes(k)?;
    }
    Ok(d)
}
