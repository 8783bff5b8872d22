//! Encode/decode facade and on-disk artifacts.
//!
//! Every artifact shares one container layout: a UTF-8 header of
//! `key = value` lines and `blob name rows cols` declarations, a checksum
//! line, a `---` terminator, then the blobs as raw little-endian `f64`s in
//! declaration order.
//!
//! ```text
//! mmae-model
//! version = 1
//! joint.dim = 179
//! blob eeg.0.weight 440 896
//! ...
//! payload = 1234567
//! checksum = <sha256 of every byte above this line plus the payload>
//! ---
//! <payload>
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

use crate::autoencoder::{StackedEncoder, TiedAutoencoder};
use crate::data::{Criterion, SegmentMeta, SegmentedDataset};
use crate::error::{Error, FormatError, Result};
use crate::multimodal::{JointBranch, MultimodalBatch, MultimodalModel, SoftmaxHead};
use crate::nn::{ActivationKind, RealMatrix};
use crate::seed::RNG_NAME;

pub const FORMAT_VERSION: u32 = 1;
pub const MODEL_MAGIC: &str = "mmae-model";
pub const CODES_MAGIC: &str = "mmae-codes";
pub const DATASET_MAGIC: &str = "mmae-dataset";
pub const RECON_MAGIC: &str = "mmae-recon";
const TERMINATOR: &str = "---";

/// Parsed container: header fields in file order plus named blobs.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub magic: String,
    pub fields: Vec<(String, String)>,
    pub blobs: Vec<(String, RealMatrix)>,
}

impl Container {
    pub fn new(magic: &str) -> Self {
        Self {
            magic: magic.into(),
            fields: Vec::new(),
            blobs: Vec::new(),
        }
    }

    pub fn field(&mut self, key: &str, value: impl fmt::Display) -> &mut Self {
        self.fields.push((key.into(), value.to_string()));
        self
    }

    pub fn blob(&mut self, name: &str, m: &RealMatrix) -> &mut Self {
        self.blobs.push((name.into(), m.clone()));
        self
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = format!("{}\nversion = {FORMAT_VERSION}\n", self.magic);
        for (k, v) in &self.fields {
            debug_assert!(!k.contains(['\n', '=']) && !v.contains('\n'));
            header.push_str(&format!("{k} = {v}\n"));
        }
        let mut payload = Vec::new();
        for (name, m) in &self.blobs {
            header.push_str(&format!("blob {name} {} {}\n", m.rows(), m.cols()));
            for v in m.as_slice() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        header.push_str(&format!("payload = {}\n", payload.len()));
        let checksum = digest_hex(header.as_bytes(), &payload);
        let mut out = header.into_bytes();
        out.extend_from_slice(format!("checksum = {checksum}\n{TERMINATOR}\n").as_bytes());
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8], expected_magic: &str) -> Result<Self> {
        let malformed = |m: String| Error::from(FormatError::Malformed(m));
        let mut lines = Lines { bytes, pos: 0 };

        let magic = lines.next_line()?.unwrap_or("");
        if magic != expected_magic {
            let found: String = String::from_utf8_lossy(&bytes[..bytes.len().min(16)])
                .lines()
                .next()
                .unwrap_or("")
                .into();
            return Err(FormatError::BadMagic {
                expected: expected_magic.into(),
                found: if magic.is_empty() {
                    found
                } else {
                    magic.into()
                },
            }
            .into());
        }
        let version_line = lines
            .next_line()?
            .ok_or_else(|| malformed("missing version line".into()))?;
        let version: u32 = version_line
            .strip_prefix("version = ")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| malformed(format!("bad version line {version_line:?}")))?;
        if version != FORMAT_VERSION {
            return Err(FormatError::UnsupportedVersion {
                found: version,
                supported: FORMAT_VERSION,
            }
            .into());
        }

        let mut fields = Vec::new();
        let mut decls = Vec::new();
        let mut payload_len = None;
        let mut checksum = None;
        let mut header_end = 0;
        loop {
            let before = lines.pos;
            let Some(line) = lines.next_line()? else {
                return Err(FormatError::Truncated {
                    expected: payload_len.unwrap_or(0),
                    found: 0,
                }
                .into());
            };
            if line == TERMINATOR {
                break;
            }
            if let Some(rest) = line.strip_prefix("blob ") {
                let parts: Vec<&str> = rest.split(' ').collect();
                let [name, rows, cols] = parts[..] else {
                    return Err(malformed(format!("bad blob line {line:?}")));
                };
                let parse = |s: &str| {
                    s.parse::<usize>()
                        .map_err(|_| malformed(format!("bad blob line {line:?}")))
                };
                decls.push((name.to_string(), parse(rows)?, parse(cols)?));
            } else if let Some((k, v)) = line.split_once(" = ") {
                match k {
                    "payload" => {
                        payload_len = Some(
                            v.parse()
                                .map_err(|_| malformed(format!("bad payload {v:?}")))?,
                        )
                    }
                    "checksum" => {
                        checksum = Some(v.to_string());
                        header_end = before;
                    }
                    _ => fields.push((k.to_string(), v.to_string())),
                }
            } else {
                return Err(malformed(format!("unrecognized header line {line:?}")));
            }
        }
        let expected = payload_len.ok_or_else(|| malformed("missing payload length".into()))?;
        let checksum = checksum.ok_or_else(|| malformed("missing checksum".into()))?;
        let payload = &bytes[lines.pos..];
        if payload.len() < expected {
            return Err(FormatError::Truncated {
                expected,
                found: payload.len(),
            }
            .into());
        }
        if payload.len() > expected {
            return Err(malformed(format!(
                "{} bytes after the declared payload",
                payload.len() - expected
            )));
        }
        let actual = digest_hex(&bytes[..header_end], payload);
        if actual != checksum {
            return Err(FormatError::Checksum {
                expected: checksum,
                actual,
            }
            .into());
        }
        let declared = decls.iter().fold(0usize, |acc, (_, r, c)| {
            acc.saturating_add(r.saturating_mul(*c).saturating_mul(8))
        });
        if declared != expected {
            return Err(malformed(format!(
                "blobs declare {declared} bytes, payload is {expected}"
            )));
        }
        let mut offset = 0;
        let mut blobs = Vec::with_capacity(decls.len());
        for (name, rows, cols) in decls {
            let n = rows * cols;
            let values = payload[offset..offset + 8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            offset += 8 * n;
            let m = RealMatrix::new(rows, cols, values)
                .map_err(|e| malformed(format!("blob {name}: {e}")))?;
            blobs.push((name, m));
        }
        Ok(Self {
            magic: magic.into(),
            fields,
            blobs,
        })
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| FormatError::Malformed(format!("missing header field {key:?}")).into())
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key)?;
        v.parse()
            .map_err(|_| FormatError::Malformed(format!("bad value {v:?} for {key:?}")).into())
    }

    fn take_blob(&mut self, name: &str) -> Result<RealMatrix> {
        let i = self
            .blobs
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| FormatError::Malformed(format!("missing blob {name:?}")))?;
        Ok(self.blobs.remove(i).1)
    }
}

struct Lines<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self) -> Result<Option<&'a str>> {
        let Some(end) = self.bytes[self.pos..].iter().position(|&b| b == b'\n') else {
            return Ok(None);
        };
        let line = std::str::from_utf8(&self.bytes[self.pos..self.pos + end])
            .map_err(|_| FormatError::Malformed("header is not UTF-8".into()))?;
        self.pos += end + 1;
        Ok(Some(line))
    }
}

fn digest_hex(header: &[u8], payload: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(header);
    h.update(payload);
    hex::encode(h.finalize())
}

/// Writes through a sibling temporary file and renames, so readers never see
/// a partial artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |e| Error::io(format!("writing {}", path.display()), e);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    let tmp = path.with_extension("tmp-write");
    std::fs::write(&tmp, bytes).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

/// 128-bit content hash of a serialized model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fingerprint(pub [u8; 16]);

impl Fingerprint {
    pub fn of_bytes(bytes: &[u8]) -> Self {
        let digest = Sha256::digest(bytes);
        Self(digest[..16].try_into().expect("sha256 digest is 32 bytes"))
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl std::str::FromStr for Fingerprint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bytes =
            hex::decode(s).map_err(|_| FormatError::Malformed(format!("bad fingerprint {s:?}")))?;
        let arr: [u8; 16] = bytes
            .try_into()
            .map_err(|_| FormatError::Malformed(format!("fingerprint {s:?} is not 128 bits")))?;
        Ok(Self(arr))
    }
}

/// A model plus the settings that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub model: MultimodalModel,
    /// Echo of the architecture and training settings.
    pub config: serde_json::Value,
}

fn join<T: fmt::Display>(items: impl IntoIterator<Item = T>) -> String {
    items
        .into_iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn split<T: std::str::FromStr>(s: &str, key: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|v| {
            v.parse().map_err(|_| {
                FormatError::Malformed(format!("bad list item {v:?} in {key:?}")).into()
            })
        })
        .collect()
}

impl ModelArtifact {
    pub fn new(model: MultimodalModel, config: serde_json::Value) -> Self {
        Self { model, config }
    }

    pub fn to_container(&self) -> Container {
        let m = &self.model;
        let mut c = Container::new(MODEL_MAGIC);
        c.field("rng", RNG_NAME);
        c.field("pretrained", m.pretrained);
        for (name, stack) in [("eeg", &m.eeg), ("emg", &m.emg)] {
            c.field(&format!("{name}.dims"), join(stack.dims()));
            c.field(
                &format!("{name}.activations"),
                join(stack.layers().iter().map(|l| l.activation.name())),
            );
            c.field(
                &format!("{name}.weight_decay"),
                join(
                    stack
                        .layers()
                        .iter()
                        .map(|l| format!("{:?}", l.weight_decay)),
                ),
            );
        }
        c.field("joint.dim", m.code_dim());
        if let Some(head) = &m.head {
            c.field(
                "head.labels",
                serde_json::to_string(&head.labels).expect("labels serialize"),
            );
        }
        c.field(
            "config",
            serde_json::to_string(&self.config).expect("config serializes"),
        );
        for (name, stack) in [("eeg", &m.eeg), ("emg", &m.emg)] {
            for (l, layer) in stack.layers().iter().enumerate() {
                c.blob(&format!("{name}.{l}.weight"), &layer.weight);
                c.blob(&format!("{name}.{l}.enc_bias"), &layer.enc_bias);
                c.blob(&format!("{name}.{l}.dec_bias"), &layer.dec_bias);
            }
        }
        for (name, branch) in [("eeg", &m.joint_eeg), ("emg", &m.joint_emg)] {
            c.blob(&format!("joint.{name}.weight"), &branch.weight);
            c.blob(&format!("joint.{name}.enc_bias"), &branch.enc_bias);
            c.blob(&format!("joint.{name}.dec_bias"), &branch.dec_bias);
        }
        if let Some(head) = &m.head {
            c.blob("head.weight", &head.weight);
            c.blob("head.bias", &head.bias);
        }
        c
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_container().to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut c = Container::from_bytes(bytes, MODEL_MAGIC)?;
        let malformed = |m: String| Error::from(FormatError::Malformed(m));
        let rng = c.get("rng")?;
        if rng != RNG_NAME {
            log::warn!("model was produced with generator {rng:?}; this build uses {RNG_NAME:?}");
        }
        let mut stacks = Vec::new();
        for name in ["eeg", "emg"] {
            let dims: Vec<usize> = split(c.get(&format!("{name}.dims"))?, "dims")?;
            let acts: Vec<String> = split(c.get(&format!("{name}.activations"))?, "activations")?;
            let decays: Vec<f64> = split(c.get(&format!("{name}.weight_decay"))?, "weight_decay")?;
            if dims.len() < 2 || acts.len() != dims.len() - 1 || decays.len() != acts.len() {
                return Err(malformed(format!("{name} stack header is inconsistent")));
            }
            let mut layers = Vec::new();
            for (l, (act, decay)) in acts.iter().zip(&decays).enumerate() {
                let activation = ActivationKind::parse(act)
                    .ok_or_else(|| malformed(format!("unknown activation {act:?}")))?;
                let w = c.take_blob(&format!("{name}.{l}.weight"))?;
                if w.shape() != (dims[l + 1], dims[l]) {
                    return Err(malformed(format!(
                        "{name}.{l}.weight has shape {:?}",
                        w.shape()
                    )));
                }
                let b = c.take_blob(&format!("{name}.{l}.enc_bias"))?;
                let bp = c.take_blob(&format!("{name}.{l}.dec_bias"))?;
                layers.push(
                    TiedAutoencoder::from_parts(w, b, bp, activation, *decay)
                        .map_err(|e| malformed(e.to_string()))?,
                );
            }
            stacks.push(StackedEncoder::new(layers).map_err(|e| malformed(e.to_string()))?);
        }
        let joint_dim: usize = c.parse("joint.dim")?;
        let mut branches = Vec::new();
        for (name, stack) in ["eeg", "emg"].iter().zip(&stacks) {
            let branch = JointBranch {
                weight: c.take_blob(&format!("joint.{name}.weight"))?,
                enc_bias: c.take_blob(&format!("joint.{name}.enc_bias"))?,
                dec_bias: c.take_blob(&format!("joint.{name}.dec_bias"))?,
            };
            let top = stack.output_dim();
            if branch.weight.shape() != (joint_dim, top)
                || branch.enc_bias.shape() != (joint_dim, 1)
                || branch.dec_bias.shape() != (top, 1)
            {
                return Err(malformed(format!(
                    "joint.{name} blobs disagree with the header"
                )));
            }
            branches.push(branch);
        }
        let head = match c.get("head.labels") {
            Ok(labels) => {
                let labels: Vec<String> = serde_json::from_str(labels)
                    .map_err(|e| malformed(format!("head.labels: {e}")))?;
                let weight = c.take_blob("head.weight")?;
                let bias = c.take_blob("head.bias")?;
                if weight.shape() != (labels.len(), joint_dim) || bias.shape() != (labels.len(), 1)
                {
                    return Err(malformed("head blobs disagree with the header".into()));
                }
                Some(SoftmaxHead {
                    weight,
                    bias,
                    labels,
                })
            }
            Err(_) => None,
        };
        if let Some((name, _)) = c.blobs.first() {
            return Err(malformed(format!("unexpected blob {name:?}")));
        }
        let config = serde_json::from_str(c.get("config")?)
            .map_err(|e| malformed(format!("config: {e}")))?;
        let pretrained: bool = c.parse("pretrained")?;
        let emg = stacks.pop().expect("two stacks");
        let eeg = stacks.pop().expect("two stacks");
        let joint_emg = branches.pop().expect("two branches");
        let joint_eeg = branches.pop().expect("two branches");
        Ok(Self {
            model: MultimodalModel {
                eeg,
                emg,
                joint_eeg,
                joint_emg,
                head,
                pretrained,
            },
            config,
        })
    }

    pub fn fingerprint(&self) -> Fingerprint {
        Fingerprint::of_bytes(&self.to_bytes())
    }
}

pub fn save_model(artifact: &ModelArtifact, path: &Path) -> Result<Fingerprint> {
    let bytes = artifact.to_bytes();
    write_atomic(path, &bytes)?;
    Ok(Fingerprint::of_bytes(&bytes))
}

pub fn load_model(path: &Path) -> Result<ModelArtifact> {
    ModelArtifact::from_bytes(&read(path)?)
}

/// Joint codes for a batch, tagged with the model that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeBlock {
    /// Shape `(J, n)`.
    pub z: RealMatrix,
    pub model_fingerprint: Fingerprint,
    /// `(X_e, X_m)`.
    pub source_dims: (usize, usize),
    /// Seconds since the Unix epoch.
    pub created_at: u64,
}

impl CodeBlock {
    pub fn code_dim(&self) -> usize {
        self.z.rows()
    }

    pub fn len(&self) -> usize {
        self.z.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.z.cols() == 0
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut c = Container::new(CODES_MAGIC);
        c.field("fingerprint", self.model_fingerprint)
            .field(
                "source_dims",
                format!("{},{}", self.source_dims.0, self.source_dims.1),
            )
            .field("code_dim", self.z.rows())
            .field("samples", self.z.cols())
            .field("created_at", self.created_at)
            .blob("z", &self.z);
        c.to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut c = Container::from_bytes(bytes, CODES_MAGIC)?;
        let dims: Vec<usize> = split(c.get("source_dims")?, "source_dims")?;
        let [xe, xm] = dims[..] else {
            return Err(FormatError::Malformed("source_dims needs two entries".into()).into());
        };
        let j: usize = c.parse("code_dim")?;
        let n: usize = c.parse("samples")?;
        let z = c.take_blob("z")?;
        if z.shape() != (j, n) {
            return Err(FormatError::Malformed(format!(
                "code blob has shape {:?} but the header declares ({j}, {n})",
                z.shape()
            ))
            .into());
        }
        Ok(Self {
            z,
            model_fingerprint: c.parse("fingerprint")?,
            source_dims: (xe, xm),
            created_at: c.parse("created_at")?,
        })
    }
}

pub fn save_codes(code: &CodeBlock, path: &Path) -> Result<()> {
    write_atomic(path, &code.to_bytes())
}

pub fn load_codes(path: &Path) -> Result<CodeBlock> {
    CodeBlock::from_bytes(&read(path)?)
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Encodes a batch through the joint layer, stamped with the current time.
pub fn encode(artifact: &ModelArtifact, batch: &MultimodalBatch) -> Result<CodeBlock> {
    encode_at(artifact, batch, unix_now())
}

pub fn encode_at(
    artifact: &ModelArtifact,
    batch: &MultimodalBatch,
    created_at: u64,
) -> Result<CodeBlock> {
    if !artifact.model.pretrained {
        return Err(Error::Untrained);
    }
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(CodeBlock {
        z: artifact.model.joint_forward(batch)?,
        model_fingerprint: artifact.fingerprint(),
        source_dims: artifact.model.source_dims(),
        created_at,
    })
}

/// Reconstructs `(eeg, emg)`; refuses codes produced by a different model.
pub fn decode(artifact: &ModelArtifact, code: &CodeBlock) -> Result<(RealMatrix, RealMatrix)> {
    let actual = artifact.fingerprint();
    if code.model_fingerprint != actual {
        return Err(FormatError::FingerprintMismatch {
            expected: code.model_fingerprint.to_string(),
            actual: actual.to_string(),
        }
        .into());
    }
    if code.source_dims != artifact.model.source_dims() {
        return Err(FormatError::Malformed(
            "code block source dimensions disagree with the model".into(),
        )
        .into());
    }
    artifact.model.decode(&code.z)
}

pub fn dataset_to_bytes(ds: &SegmentedDataset) -> Vec<u8> {
    let mut c = Container::new(DATASET_MAGIC);
    c.field("samples", ds.len());
    c.field(
        "criteria",
        serde_json::to_string(&ds.labels.keys().collect::<Vec<_>>()).expect("criteria serialize"),
    );
    c.field(
        "meta",
        serde_json::to_string(&ds.meta).expect("meta serializes"),
    );
    c.blob("eeg", &ds.eeg).blob("emg", &ds.emg);
    for (crit, labels) in &ds.labels {
        let row = RealMatrix::new(1, labels.len(), labels.iter().map(|&l| l as f64).collect())
            .expect("finite labels");
        c.blob(&format!("labels.{crit}"), &row);
    }
    c.to_bytes()
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<SegmentedDataset> {
    let mut c = Container::from_bytes(bytes, DATASET_MAGIC)?;
    let malformed = |m: String| Error::from(FormatError::Malformed(m));
    let criteria: Vec<Criterion> = serde_json::from_str(c.get("criteria")?)
        .map_err(|e| malformed(format!("criteria: {e}")))?;
    let meta: Vec<SegmentMeta> =
        serde_json::from_str(c.get("meta")?).map_err(|e| malformed(format!("meta: {e}")))?;
    let eeg = c.take_blob("eeg")?;
    let emg = c.take_blob("emg")?;
    let mut labels = BTreeMap::new();
    for crit in criteria {
        let row = c.take_blob(&format!("labels.{crit}"))?;
        labels.insert(crit, row.as_slice().iter().map(|&v| v as usize).collect());
    }
    let samples: usize = c.parse("samples")?;
    if eeg.cols() != samples {
        return Err(malformed(format!(
            "header declares {samples} samples, blobs hold {}",
            eeg.cols()
        )));
    }
    SegmentedDataset::new(eeg, emg, labels, meta).map_err(|e| malformed(e.to_string()))
}

pub fn save_dataset(ds: &SegmentedDataset, path: &Path) -> Result<()> {
    write_atomic(path, &dataset_to_bytes(ds))
}

pub fn load_dataset(path: &Path) -> Result<SegmentedDataset> {
    dataset_from_bytes(&read(path)?)
}

/// Decoded signals and the fingerprint of the model that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub eeg: RealMatrix,
    pub emg: RealMatrix,
    pub model_fingerprint: Fingerprint,
}

pub fn save_reconstruction(r: &Reconstruction, path: &Path) -> Result<()> {
    let mut c = Container::new(RECON_MAGIC);
    c.field("fingerprint", r.model_fingerprint)
        .field("samples", r.eeg.cols())
        .blob("eeg", &r.eeg)
        .blob("emg", &r.emg);
    write_atomic(path, &c.to_bytes())
}

pub fn load_reconstruction(path: &Path) -> Result<Reconstruction> {
    let mut c = Container::from_bytes(&read(path)?, RECON_MAGIC)?;
    Ok(Reconstruction {
        eeg: c.take_blob("eeg")?,
        emg: c.take_blob("emg")?,
        model_fingerprint: c.parse("fingerprint")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multimodal::default_class_names;
    use crate::seed;

    fn model(seed_value: u64, head: bool) -> ModelArtifact {
        let mut rng = seed::rng(seed_value);
        let eeg =
            StackedEncoder::glorot(&[12, 6, 5], ActivationKind::Sigmoid, 1e-4, &mut rng).unwrap();
        let emg = StackedEncoder::glorot(&[10, 6], ActivationKind::Tanh, 0.0, &mut rng).unwrap();
        let mut m = MultimodalModel::from_pretrained(eeg, emg, 3, seed_value).unwrap();
        if head {
            m.head = Some(SoftmaxHead::glorot(3, default_class_names(2), &mut rng).unwrap());
        }
        ModelArtifact::new(m, serde_json::json!({ "seed": seed_value, "note": "a\nb" }))
    }

    fn batch(n: usize) -> MultimodalBatch {
        let e = RealMatrix::new(
            12,
            n,
            (0..12 * n).map(|i| (i as f64 * 0.37).sin().abs()).collect(),
        )
        .unwrap();
        let m = RealMatrix::new(
            10,
            n,
            (0..10 * n).map(|i| (i as f64 * 0.11).cos().abs()).collect(),
        )
        .unwrap();
        MultimodalBatch::complete(e, m).unwrap()
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        for head in [false, true] {
            let a = model(5, head);
            let bytes = a.to_bytes();
            let b = ModelArtifact::from_bytes(&bytes).unwrap();
            assert_eq!(a, b);
            assert_eq!(b.to_bytes(), bytes);
        }
    }

    #[test]
    fn file_round_trip_and_fingerprint() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mmae");
        let a = model(6, true);
        let fp = save_model(&a, &path).unwrap();
        assert_eq!(fp, a.fingerprint());
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.fingerprint(), fp);
        let path2 = dir.path().join("m2.mmae");
        save_model(&loaded, &path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
        assert_ne!(model(7, true).fingerprint(), fp);
    }

    #[test]
    fn corruption_is_detected_distinctly() {
        let bytes = model(8, false).to_bytes();
        let mut flipped = bytes.clone();
        let last = flipped.len() - 3;
        flipped[last] ^= 0x01;
        assert!(matches!(
            ModelArtifact::from_bytes(&flipped),
            Err(Error::Format(FormatError::Checksum { .. }))
        ));
        assert!(matches!(
            ModelArtifact::from_bytes(&bytes[..bytes.len() - 10]),
            Err(Error::Format(FormatError::Truncated { .. }))
        ));
        let future = String::from_utf8_lossy(&bytes).replacen("version = 1", "version = 2", 1);
        assert!(matches!(
            ModelArtifact::from_bytes(future.as_bytes()),
            Err(Error::Format(FormatError::UnsupportedVersion {
                found: 2,
                ..
            }))
        ));
        assert!(matches!(
            CodeBlock::from_bytes(&bytes),
            Err(Error::Format(FormatError::BadMagic { .. }))
        ));
        assert!(ModelArtifact::from_bytes(b"").is_err());
    }

    #[test]
    fn encode_decode_contract() {
        let a = model(9, false);
        let x = batch(4);
        let c1 = encode_at(&a, &x, 1).unwrap();
        let c2 = encode_at(&a, &x, 1).unwrap();
        assert_eq!(c1.to_bytes(), c2.to_bytes());
        let (re, rm) = decode(&a, &c1).unwrap();
        assert_eq!((re.shape(), rm.shape()), (x.eeg.shape(), x.emg.shape()));
        assert!(matches!(
            decode(&model(10, false), &c1),
            Err(Error::Format(FormatError::FingerprintMismatch { .. }))
        ));
        assert!(matches!(encode(&a, &batch(0)), Err(Error::EmptyBatch)));
        let mut raw = a.clone();
        raw.model.pretrained = false;
        assert!(matches!(encode(&raw, &x), Err(Error::Untrained)));
    }

    #[test]
    fn code_file_layout() {
        let a = model(11, false);
        let code = encode_at(&a, &batch(50), 1_700_000_000).unwrap();
        let bytes = code.to_bytes();
        let payload = 8 * 3 * 50;
        assert!(bytes.len() > payload && bytes.len() - payload < 1024);
        assert_eq!(CodeBlock::from_bytes(&bytes).unwrap(), code);

        // header J disagreeing with the blob
        let mut c = Container::new(CODES_MAGIC);
        c.field("fingerprint", code.model_fingerprint)
            .field("source_dims", "12,10")
            .field("code_dim", 4)
            .field("samples", 50)
            .field("created_at", 0)
            .blob("z", &code.z);
        assert!(matches!(
            CodeBlock::from_bytes(&c.to_bytes()),
            Err(Error::Format(FormatError::Malformed(_)))
        ));
    }

    #[test]
    fn dataset_round_trip() {
        let ds = crate::data::synth_multimodal(&crate::data::SynthSpec {
            samples: 20,
            segment_dim: 8,
            latent_dim: 2,
            ..Default::default()
        })
        .unwrap();
        let bytes = dataset_to_bytes(&ds);
        assert_eq!(dataset_from_bytes(&bytes).unwrap(), ds);
    }
}
