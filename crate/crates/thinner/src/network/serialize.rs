//! Model file format.
//!
//! Layout, in order:
//!
//! 1. ASCII line `THINNER-MODEL <version> <header_len>\n` — `header_len` is
//!    zero-padded to 10 digits and counts this line plus the JSON header and
//!    its trailing newline, so readers can locate the payload from a
//!    fixed-width prefix.
//! 2. A compact JSON header: input shape, prunable layer indices, layer
//!    descriptors (kind, hyper-parameters, byte offsets of each parameter
//!    tensor inside the payload) and the payload length.
//! 3. The payload: every parameter tensor as little-endian `f64`, row-major,
//!    in layer order (filters/weights before bias).
//! 4. A little-endian CRC-32 (IEEE) of everything before it.
//!
//! Loads are strict: wrong magic or malformed header is a format error, a
//! version from the future is a version error (checked before the CRC so a
//! valid newer file is not misreported), and any truncation or bit flip is
//! a checksum error. Saves go to a temp file in the target directory first
//! and are renamed into place, so a crash never leaves a half-written model
//! at the destination.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};

use super::{Layer, Model};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &str = "THINNER-MODEL";
const VERSION: u64 = 1;
/// `MAGIC` + space + version digit + space + 10-digit length + newline.
const FIRST_LINE_LEN: usize = MAGIC.len() + 1 + 1 + 1 + 10 + 1;

// --- CRC-32 (IEEE 802.3, polynomial 0xEDB88320) -----------------------------

const fn crc_table() -> [u32; 256] {
    let mut table = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut c = i as u32;
        let mut k = 0;
        while k < 8 {
            c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
            k += 1;
        }
        table[i] = c;
        i += 1;
    }
    table
}

static CRC_TABLE: [u32; 256] = crc_table();

fn crc32(bytes: &[u8]) -> u32 {
    let mut c = 0xFFFF_FFFFu32;
    for &b in bytes {
        c = CRC_TABLE[((c ^ u32::from(b)) & 0xFF) as usize] ^ (c >> 8);
    }
    c ^ 0xFFFF_FFFF
}

// --- header -----------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct Header {
    input_shape: [usize; 3],
    prunable: Vec<usize>,
    payload_len: usize,
    layers: Vec<LayerHeader>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LayerHeader {
    Conv2d {
        out_channels: usize,
        in_channels: usize,
        kernel: [usize; 2],
        stride: usize,
        padding: usize,
        filters_offset: usize,
        bias_offset: usize,
    },
    Dense {
        inputs: usize,
        outputs: usize,
        weights_offset: usize,
        bias_offset: usize,
    },
    Relu,
    MaxPool2d {
        size: usize,
    },
    Flatten,
    SoftmaxOutput,
}

// --- save -------------------------------------------------------------------

/// Serialises the model. The write is atomic: temp file in the same
/// directory, then rename.
pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let mut payload: Vec<u8> = Vec::new();
    let push_tensor = |payload: &mut Vec<u8>, t: &Tensor| -> usize {
        let offset = payload.len();
        let mut buf = vec![0u8; t.len() * 8];
        LittleEndian::write_f64_into(t.data(), &mut buf);
        payload.extend_from_slice(&buf);
        offset
    };
    let layers: Vec<LayerHeader> = model
        .layers()
        .iter()
        .map(|layer| match layer {
            Layer::Conv2d {
                filters,
                bias,
                stride,
                padding,
            } => {
                let s = filters.shape();
                let filters_offset = push_tensor(&mut payload, filters);
                let bias_offset = push_tensor(&mut payload, bias);
                LayerHeader::Conv2d {
                    out_channels: s[0],
                    in_channels: s[1],
                    kernel: [s[2], s[3]],
                    stride: *stride,
                    padding: *padding,
                    filters_offset,
                    bias_offset,
                }
            }
            Layer::Dense { weights, bias } => {
                let s = weights.shape();
                let weights_offset = push_tensor(&mut payload, weights);
                let bias_offset = push_tensor(&mut payload, bias);
                LayerHeader::Dense {
                    inputs: s[0],
                    outputs: s[1],
                    weights_offset,
                    bias_offset,
                }
            }
            Layer::Relu => LayerHeader::Relu,
            Layer::MaxPool2d { size } => LayerHeader::MaxPool2d { size: *size },
            Layer::Flatten => LayerHeader::Flatten,
            Layer::SoftmaxOutput => LayerHeader::SoftmaxOutput,
        })
        .collect();

    let header = Header {
        input_shape: model.input_shape(),
        prunable: model.prunable().to_vec(),
        payload_len: payload.len(),
        layers,
    };
    let header_json = serde_json::to_vec(&header)?;
    let header_len = FIRST_LINE_LEN + header_json.len() + 1;

    let mut bytes = Vec::with_capacity(header_len + payload.len() + 4);
    bytes.extend_from_slice(format!("{MAGIC} {VERSION} {header_len:010}\n").as_bytes());
    debug_assert_eq!(bytes.len(), FIRST_LINE_LEN);
    bytes.extend_from_slice(&header_json);
    bytes.push(b'\n');
    bytes.extend_from_slice(&payload);
    let crc = crc32(&bytes);
    bytes.extend_from_slice(&crc.to_le_bytes());

    write_atomic(path, &bytes)
}

/// Writes `bytes` to a temp file next to `path`, then renames into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    static NONCE: AtomicU64 = AtomicU64::new(0);
    let n = NONCE.fetch_add(1, Ordering::Relaxed);
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("cannot write to {}", path.display())))?;
    let tmp = path.with_file_name(format!(
        ".{}.{}.{n}.tmp",
        file_name.to_string_lossy(),
        std::process::id()
    ));
    std::fs::write(&tmp, bytes)?;
    match std::fs::rename(&tmp, path) {
        Ok(()) => Ok(()),
        Err(e) => {
            let _ = std::fs::remove_file(&tmp);
            Err(e.into())
        }
    }
}

// --- load -------------------------------------------------------------------

/// Reads a model file back, verifying magic, version, CRC, and structure
/// (in that order of blame: format, version, checksum, format).
pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < FIRST_LINE_LEN + 4 {
        return Err(Error::Checksum(format!(
            "file is {} bytes, shorter than the {FIRST_LINE_LEN}-byte header prefix plus trailer",
            bytes.len()
        )));
    }
    let line = &bytes[..FIRST_LINE_LEN];
    if bytes[FIRST_LINE_LEN - 1] != b'\n' || !line.starts_with(MAGIC.as_bytes()) {
        return Err(Error::ModelFormat("missing magic line".into()));
    }
    let text = std::str::from_utf8(&line[..FIRST_LINE_LEN - 1])
        .map_err(|_| Error::ModelFormat("magic line is not ASCII".into()))?;
    let mut parts = text.split_whitespace();
    let (magic, version, header_len) = (parts.next(), parts.next(), parts.next());
    if magic != Some(MAGIC) || parts.next().is_some() {
        return Err(Error::ModelFormat("missing magic line".into()));
    }
    let version: u64 = version
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::ModelFormat("unreadable version field".into()))?;
    if version != VERSION {
        return Err(Error::ModelVersion { found: version });
    }
    let header_len: usize = header_len
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::ModelFormat("unreadable header length".into()))?;
    if header_len < FIRST_LINE_LEN + 2 || header_len + 4 > bytes.len() {
        return Err(Error::Checksum(format!(
            "declared header of {header_len} bytes does not fit a {}-byte file",
            bytes.len()
        )));
    }

    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = LittleEndian::read_u32(trailer);
    let actual = crc32(body);
    if stored != actual {
        return Err(Error::Checksum(format!(
            "CRC mismatch: stored 0x{stored:08x}, computed 0x{actual:08x}"
        )));
    }

    let header: Header = serde_json::from_slice(&body[FIRST_LINE_LEN..header_len - 1])
        .map_err(|e| Error::ModelFormat(format!("bad JSON header: {e}")))?;
    let payload = &body[header_len..];
    if payload.len() != header.payload_len {
        return Err(Error::ModelFormat(format!(
            "payload is {} bytes but header declares {}",
            payload.len(),
            header.payload_len
        )));
    }

    let read_tensor = |shape: &[usize], offset: usize| -> Result<Tensor> {
        let count: usize = shape.iter().product();
        let end = offset
            .checked_add(count * 8)
            .filter(|&e| e <= payload.len())
            .ok_or_else(|| {
                Error::ModelFormat(format!(
                    "tensor {shape:?} at offset {offset} runs past the payload"
                ))
            })?;
        let mut data = vec![0.0f64; count];
        LittleEndian::read_f64_into(&payload[offset..end], &mut data);
        Tensor::new(shape, data)
    };

    let layers: Vec<Layer> = header
        .layers
        .iter()
        .map(|lh| -> Result<Layer> {
            Ok(match *lh {
                LayerHeader::Conv2d {
                    out_channels,
                    in_channels,
                    kernel,
                    stride,
                    padding,
                    filters_offset,
                    bias_offset,
                } => Layer::Conv2d {
                    filters: read_tensor(
                        &[out_channels, in_channels, kernel[0], kernel[1]],
                        filters_offset,
                    )?,
                    bias: read_tensor(&[out_channels], bias_offset)?,
                    stride,
                    padding,
                },
                LayerHeader::Dense {
                    inputs,
                    outputs,
                    weights_offset,
                    bias_offset,
                } => Layer::Dense {
                    weights: read_tensor(&[inputs, outputs], weights_offset)?,
                    bias: read_tensor(&[outputs], bias_offset)?,
                },
                LayerHeader::Relu => Layer::Relu,
                LayerHeader::MaxPool2d { size } => Layer::MaxPool2d { size },
                LayerHeader::Flatten => Layer::Flatten,
                LayerHeader::SoftmaxOutput => Layer::SoftmaxOutput,
            })
        })
        .collect::<Result<_>>()?;

    Model::new(layers, header.prunable, header.input_shape)
}
