use std::fs;
use std::path::Path;

use super::{ChainConfig, ChainModel};
use crate::error::{Error, Result};
use crate::features::{decode_emo1, encode_emo1};
use crate::nn::Network;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EMOM";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serializes a model: magic, version, length-prefixed JSON config, then
/// every parameter tensor of the encoder, decoder and predictor in
/// declaration order as an EMO1 record (first dimension as rows, the
/// product of the rest as columns).
pub fn write_checkpoint(model: &ChainModel) -> Vec<u8> {
    let config = serde_json::to_vec(model.config()).expect("config serializes");
    let mut out = Vec::with_capacity(12 + config.len() + 8 * model.param_count());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    for (net, params) in networks(model) {
        let mut offset = 0;
        for shape in net.param_shapes() {
            let n: usize = shape.iter().product();
            encode_emo1(&mut out, shape[0], n / shape[0], &params[offset..offset + n]);
            offset += n;
        }
    }
    out
}

fn networks(model: &ChainModel) -> [(&Network, &[f64]); 3] {
    [
        (&model.encoder, &model.theta_e),
        (&model.decoder, &model.theta_d),
        (&model.predictor, &model.theta_p),
    ]
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<ChainModel> {
    if bytes.len() < 12 || &bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("not an EMOM checkpoint".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let config_len = word(8) as usize;
    let config_end = 12 + config_len;
    let config_bytes = bytes
        .get(12..config_end)
        .ok_or_else(|| Error::Format("truncated checkpoint config".into()))?;
    let config: ChainConfig =
        serde_json::from_slice(config_bytes).map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
    let mut model = ChainModel::untrained(&config)?;

    let mut cursor = config_end;
    let mut flat = Vec::with_capacity(model.param_count());
    for (net, _) in networks(&model) {
        for shape in net.param_shapes() {
            let (m, used) = decode_emo1(&bytes[cursor..])?;
            let n: usize = shape.iter().product();
            if m.rows() != shape[0] || m.rows() * m.cols() != n {
                return Err(Error::Format(format!(
                    "parameter tensor {}x{} does not match shape {shape:?}",
                    m.rows(),
                    m.cols()
                )));
            }
            if m.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::Format("checkpoint holds non-finite parameters".into()));
            }
            flat.extend_from_slice(m.data());
            cursor += used;
        }
    }
    if cursor != bytes.len() {
        return Err(Error::Format(format!("{} trailing checkpoint bytes", bytes.len() - cursor)));
    }
    model.set_params(&flat)?;
    model.set_config(config);
    Ok(model)
}

pub fn save_checkpoint(model: &ChainModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ChainModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{build_chain, ArchConfig};

    #[test]
    fn round_trip_is_exact() {
        let config = ChainConfig {
            arch: ArchConfig::tiny(),
            context: 16,
            seed: 5,
            ..ChainConfig::default()
        };
        let model = build_chain(&config).unwrap();
        let bytes = write_checkpoint(&model);
        assert_eq!(&bytes[0..4], b"EMOM");
        let back = read_checkpoint(&bytes).unwrap();
        assert_eq!(back.params(), model.params());
        assert_eq!(back.config(), model.config());
        assert_eq!(write_checkpoint(&back), bytes);
        assert!(matches!(read_checkpoint(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
    }
}
