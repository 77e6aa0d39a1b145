//! Binary model files.
//!
//! All integers are little-endian.
//!
//! ```text
//! magic "DCV1" | version u16 | representation u8 (0 full, 1 quantized) | layer count u16
//! per layer:  in_dim u16 | out_dim u16 | activation u8
//! per layer, full:       weights f32[out*in] | biases f32[out]
//! per layer, quantized:  weight exp i8 | in exp i8 | preact exp i8 | act exp i8
//!                        | weight codes i8[out*in] | bias codes i32[out] | LUT i8[256]
//! ```

use std::fs;
use std::path::Path;

use super::{DenseLayer, FullModel, Model, QDenseLayer, QuantModel, Representation};
use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::quant::{ActivationLut, QTensor, QuantParams, LUT_SIZE};

pub const MAGIC: [u8; 4] = *b"DCV1";
pub const FORMAT_VERSION: u16 = 1;

pub fn to_bytes(m: &Model) -> Vec<u8> {
    let arch = m.architecture();
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(m.representation().tag());
    out.extend_from_slice(&(arch.len() as u16).to_le_bytes());
    for &(in_dim, out_dim, act) in &arch {
        out.extend_from_slice(&(in_dim as u16).to_le_bytes());
        out.extend_from_slice(&(out_dim as u16).to_le_bytes());
        out.push(act.id());
    }
    match m {
        Model::Full(full) => {
            for layer in full.layers() {
                for v in layer.weights().iter().chain(layer.biases()) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Model::Quantized(q) => {
            for layer in q.layers() {
                for params in [
                    layer.weight_params(),
                    layer.in_params(),
                    layer.preact_params(),
                    layer.act_params(),
                ] {
                    out.push(params.exponent() as i8 as u8);
                }
                out.extend(layer.weights().codes().iter().map(|&c| c as u8));
                for b in layer.biases() {
                    out.extend_from_slice(&b.to_le_bytes());
                }
                out.extend(layer.lut().table().iter().map(|&c| c as u8));
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.offset < n {
            return Err(Error::format_at_byte(
                self.offset,
                format!(
                    "truncated while reading {what}: need {n} bytes, {} left",
                    self.bytes.len() - self.offset
                ),
            ));
        }
        let slice = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(slice)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn i32(&mut self, what: &str) -> Result<i32> {
        let b = self.take(4, what)?;
        Ok(i32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        let b = self.take(4, what)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn exponent(&mut self, what: &str) -> Result<QuantParams> {
        let at = self.offset;
        let e = self.u8(what)? as i8;
        QuantParams::new(e as i32).map_err(|err| Error::format_at_byte(at, format!("{what}: {err}")))
    }
}

/// Parses a model file image. Never returns a partially-read model.
pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, offset: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format_at_byte(0, "bad magic, expected \"DCV1\""));
    }
    let version = r.u16("format version")?;
    if version != FORMAT_VERSION {
        return Err(Error::format_at_byte(
            4,
            format!("unsupported format version {version}"),
        ));
    }
    let rep_at = r.offset;
    let representation = match r.u8("representation")? {
        0 => Representation::Full,
        1 => Representation::Quantized,
        other => {
            return Err(Error::format_at_byte(
                rep_at,
                format!("unknown representation tag {other}"),
            ))
        }
    };
    let count_at = r.offset;
    let n_layers = r.u16("layer count")? as usize;
    if n_layers == 0 {
        return Err(Error::format_at_byte(count_at, "model has no layers"));
    }
    let mut headers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let at = r.offset;
        let in_dim = r.u16("layer in_dim")? as usize;
        let out_dim = r.u16("layer out_dim")? as usize;
        let act_at = r.offset;
        let act = Activation::from_id(r.u8("activation")?)
            .map_err(|e| Error::format_at_byte(act_at, e.to_string()))?;
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::format_at_byte(at, "zero layer dimension"));
        }
        headers.push((in_dim, out_dim, act));
    }

    let model = match representation {
        Representation::Full => {
            let mut layers = Vec::with_capacity(n_layers);
            for &(in_dim, out_dim, act) in &headers {
                let at = r.offset;
                let weights = (0..in_dim * out_dim)
                    .map(|_| r.f32("weights"))
                    .collect::<Result<Vec<_>>>()?;
                let biases = (0..out_dim)
                    .map(|_| r.f32("biases"))
                    .collect::<Result<Vec<_>>>()?;
                layers.push(
                    DenseLayer::new(in_dim, out_dim, weights, biases, act)
                        .map_err(|e| Error::format_at_byte(at, e.to_string()))?,
                );
            }
            let mut m = FullModel::new(layers)
                .map_err(|e| Error::format_at_byte(count_at, e.to_string()))?;
            m.set_pretrained(true);
            Model::Full(m)
        }
        Representation::Quantized => {
            let mut layers = Vec::with_capacity(n_layers);
            for &(in_dim, out_dim, act) in &headers {
                let at = r.offset;
                let w_params = r.exponent("weight exponent")?;
                let in_params = r.exponent("input exponent")?;
                let preact_params = r.exponent("pre-activation exponent")?;
                let act_params = r.exponent("activation exponent")?;
                let codes = r
                    .take(in_dim * out_dim, "weight codes")?
                    .iter()
                    .map(|&b| b as i8)
                    .collect();
                let biases = (0..out_dim)
                    .map(|_| r.i32("bias codes"))
                    .collect::<Result<Vec<_>>>()?;
                let mut table = [0i8; LUT_SIZE];
                for (slot, &b) in table.iter_mut().zip(r.take(LUT_SIZE, "LUT")?) {
                    *slot = b as i8;
                }
                let weights = QTensor::new(codes, vec![out_dim, in_dim], w_params)?;
                let lut = ActivationLut::from_table(table, act, preact_params, act_params);
                layers.push(
                    QDenseLayer::new(weights, biases, in_params, lut)
                        .map_err(|e| Error::format_at_byte(at, e.to_string()))?,
                );
            }
            let mut m = QuantModel::new(layers)
                .map_err(|e| Error::format_at_byte(count_at, e.to_string()))?;
            m.set_pretrained(true);
            Model::Quantized(m)
        }
    };
    if r.offset != bytes.len() {
        return Err(Error::format_at_byte(
            r.offset,
            format!("{} trailing bytes", bytes.len() - r.offset),
        ));
    }
    Ok(model)
}

pub fn save_model(m: &Model, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(m))?;
    Ok(())
}

/// Loaded models are treated as checkpoints, i.e. pretrained.
pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    from_bytes(&fs::read(path)?)
}
