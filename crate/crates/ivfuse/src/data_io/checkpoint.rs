//! Versioned binary checkpoint: magic, format version, a training-config
//! snapshot, every model tensor as a shape header plus little-endian f32
//! payload, and a SHA-256 integrity checksum over the payload.
//!
//! The format is self-contained on purpose: a checkpoint can be reloaded
//! without any framework and round-trips bit-exactly.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::net::{self, ConvLayerParams, ModelParams};
use crate::tensor::Tensor4;
use crate::trainer::TrainConfig;

const MAGIC: &[u8; 8] = b"IVFUSECK";
const CHECKSUM_LEN: usize = 32;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32_slice(out: &mut Vec<u8>, values: &[f32]) {
    put_u32(out, values.len() as u32);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn encode_config(out: &mut Vec<u8>, config: &TrainConfig) {
    put_u64(out, config.epochs as u64);
    put_u64(out, config.batch_size as u64);
    put_f64(out, config.lr0);
    put_f64(out, config.lr_decay_factor);
    put_u64(out, config.lr_decay_every as u64);
    put_u64(out, config.seed);
    put_f64(out, config.loss_weights.alpha1);
    put_f64(out, config.loss_weights.alpha2);
    put_f64(out, config.loss_weights.alpha3);
    put_f64(out, config.loss_weights.alpha4);
    put_f64(out, config.loss_weights.lambda);
    put_u64(out, config.crop.0 as u64);
    put_u64(out, config.crop.1 as u64);
}

fn encode_layer(out: &mut Vec<u8>, layer: &ConvLayerParams) {
    let (o, i, kh, kw) = layer.kernel.shape();
    for d in [o, i, kh, kw] {
        put_u32(out, d as u32);
    }
    for v in layer.kernel.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    put_f32_slice(out, &layer.bias);
    put_f32_slice(out, &layer.bn_gamma);
    put_f32_slice(out, &layer.bn_beta);
    put_f32_slice(out, &layer.bn_running_mean);
    put_f32_slice(out, &layer.bn_running_var);
    match layer.prelu_slope {
        Some(s) => {
            out.push(1);
            out.extend_from_slice(&s.to_le_bytes());
        }
        None => out.push(0),
    }
}

/// Serialize parameters and config to `path`. Byte-deterministic: the same
/// inputs always produce the same file.
pub fn save_checkpoint(params: &ModelParams, config: &TrainConfig, path: &Path) -> Result<()> {
    let mut payload = Vec::new();
    encode_config(&mut payload, config);
    for idx in 0..7 {
        encode_layer(&mut payload, params.layer(idx));
    }

    let mut file = Vec::with_capacity(payload.len() + 64);
    file.extend_from_slice(MAGIC);
    put_u32(&mut file, params.format_version);
    put_u64(&mut file, payload.len() as u64);
    file.extend_from_slice(&payload);
    file.extend_from_slice(&Sha256::digest(&payload));
    fs::write(path, file).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Data(format!(
                "{}: checkpoint ends early at byte {} (needed {n} more)",
                self.path.display(),
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32_vec(&mut self, len: usize) -> Result<Vec<f32>> {
        let raw = self.take(len * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn counted_f32_vec(&mut self) -> Result<Vec<f32>> {
        let len = self.u32()? as usize;
        self.f32_vec(len)
    }
}

fn decode_config(r: &mut Reader) -> Result<TrainConfig> {
    Ok(TrainConfig {
        epochs: r.u64()? as usize,
        batch_size: r.u64()? as usize,
        lr0: r.f64()?,
        lr_decay_factor: r.f64()?,
        lr_decay_every: r.u64()? as usize,
        seed: r.u64()?,
        loss_weights: LossWeights {
            alpha1: r.f64()?,
            alpha2: r.f64()?,
            alpha3: r.f64()?,
            alpha4: r.f64()?,
            lambda: r.f64()?,
        },
        crop: (r.u64()? as usize, r.u64()? as usize),
    })
}

fn decode_layer(r: &mut Reader) -> Result<ConvLayerParams> {
    let (o, i, kh, kw) = (
        r.u32()? as usize,
        r.u32()? as usize,
        r.u32()? as usize,
        r.u32()? as usize,
    );
    if o == 0 || i == 0 || kh == 0 || kw == 0 || o * i * kh * kw > 16 << 20 {
        return Err(Error::Data(format!(
            "{}: implausible kernel shape ({o},{i},{kh},{kw})",
            r.path.display()
        )));
    }
    let kernel = Tensor4::new(o, i, kh, kw, r.f32_vec(o * i * kh * kw)?)?;
    let bias = r.counted_f32_vec()?;
    let bn_gamma = r.counted_f32_vec()?;
    let bn_beta = r.counted_f32_vec()?;
    let bn_running_mean = r.counted_f32_vec()?;
    let bn_running_var = r.counted_f32_vec()?;
    let prelu_slope = match r.take(1)?[0] {
        0 => None,
        1 => Some(f32::from_le_bytes(r.take(4)?.try_into().unwrap())),
        flag => {
            return Err(Error::Data(format!(
                "{}: bad slope flag {flag}",
                r.path.display()
            )))
        }
    };
    Ok(ConvLayerParams {
        kernel,
        bias,
        bn_gamma,
        bn_beta,
        bn_running_mean,
        bn_running_var,
        prelu_slope,
    })
}

/// Load and fully validate a checkpoint. The format version is checked
/// before anything else is interpreted; the checksum must match the payload.
pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, TrainConfig)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        path,
        bytes: &bytes,
        pos: 0,
    };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Data(format!(
            "{}: not a checkpoint file (bad magic)",
            path.display()
        )));
    }
    let version = r.u32()?;
    if version != net::FORMAT_VERSION {
        return Err(Error::Data(format!(
            "{}: unsupported checkpoint format version {version} (this build reads version {})",
            path.display(),
            net::FORMAT_VERSION
        )));
    }
    let payload_len = r.u64()? as usize;
    let payload = r.take(payload_len)?;
    let checksum = r.take(CHECKSUM_LEN)?;
    if r.pos != bytes.len() {
        return Err(Error::Data(format!(
            "{}: {} trailing bytes after checksum",
            path.display(),
            bytes.len() - r.pos
        )));
    }
    if Sha256::digest(payload).as_slice() != checksum {
        return Err(Error::Data(format!(
            "{}: checkpoint payload failed its integrity check (corrupt file)",
            path.display()
        )));
    }

    let mut pr = Reader {
        path,
        bytes: payload,
        pos: 0,
    };
    let config = decode_config(&mut pr)?;
    let mut layers = Vec::with_capacity(7);
    for _ in 0..7 {
        layers.push(decode_layer(&mut pr)?);
    }
    if pr.pos != payload.len() {
        return Err(Error::Data(format!(
            "{}: {} unread bytes in checkpoint payload",
            path.display(),
            payload.len() - pr.pos
        )));
    }
    let params = ModelParams {
        encoder: layers.drain(..4).collect(),
        decoder: layers,
        format_version: version,
    };
    params.validate()?;
    Ok((params, config))
}
