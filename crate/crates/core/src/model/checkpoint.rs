//! Binary model checkpoints.
//!
//! Layout: magic `TSAM1`, a `u32` format version, then tagged sections. Each
//! section is a 4-byte tag, a `u64` byte length and the payload:
//!
//! * `CONF` model configuration (JSON)
//! * `ENCO` encoder layers as tensors
//! * `CLSF` classifier tensors, running statistics included
//! * `STAT` source statistics (JSON), optional
//! * `META` seed and training metadata (JSON)

use std::fs;
use std::path::Path;

use super::{ClassifierParams, EncoderParams, ModelConfig, ModelMetadata, ModelState, SageLayer, SourceStats};
use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"TSAM1";
const VERSION: u32 = 1;

fn section(w: &mut ByteWriter, tag: &[u8; 4], payload: Vec<u8>) {
    w.bytes(tag);
    w.u64(payload.len() as u64);
    w.bytes(&payload);
}

pub fn write_model(model: &ModelState) -> Result<Vec<u8>> {
    let mut w = ByteWriter::new();
    w.bytes(CHECKPOINT_MAGIC);
    w.u32(VERSION);
    section(&mut w, b"CONF", serde_json::to_vec(&model.config)?);

    let mut enc = ByteWriter::new();
    enc.u64(model.encoder.layers.len() as u64);
    for l in &model.encoder.layers {
        for t in [&l.w_self, &l.b_self, &l.w_nbr, &l.b_nbr] {
            enc.tensor(t);
        }
    }
    section(&mut w, b"ENCO", enc.into_inner());

    let c = &model.classifier;
    let mut cls = ByteWriter::new();
    for t in [
        &c.w1,
        &c.b1,
        &c.bn_scale,
        &c.bn_shift,
        &c.running_mean,
        &c.running_var,
        &c.w2,
        &c.b2,
    ] {
        cls.tensor(t);
    }
    section(&mut w, b"CLSF", cls.into_inner());

    if let Some(stats) = &model.source_stats {
        section(&mut w, b"STAT", serde_json::to_vec(stats)?);
    }
    section(&mut w, b"META", serde_json::to_vec(&model.metadata)?);
    Ok(w.into_inner())
}

pub fn save_model(path: impl AsRef<Path>, model: &ModelState) -> Result<()> {
    fs::write(path, write_model(model)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelState> {
    read_model(&fs::read(path)?)
}

/// Parses a checkpoint. A checkpoint without source statistics is rejected
/// with [`Error::MissingStats`], since it cannot drive adaptation.
pub fn read_model(bytes: &[u8]) -> Result<ModelState> {
    let mut r = ByteReader::new(bytes, "checkpoint");
    if r.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a model checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "checkpoint version {} is not supported (expected {})",
            version, VERSION
        )));
    }

    let mut config: Option<ModelConfig> = None;
    let mut encoder = None;
    let mut classifier = None;
    let mut stats: Option<SourceStats> = None;
    let mut metadata: Option<ModelMetadata> = None;
    while r.remaining() > 0 {
        let tag: [u8; 4] = r.take(4)?.try_into().expect("four bytes");
        let len = r.usize()?;
        let payload = r.take(len)?;
        match &tag {
            b"CONF" => config = Some(serde_json::from_slice(payload)?),
            b"ENCO" => encoder = Some(read_encoder(payload)?),
            b"CLSF" => classifier = Some(read_classifier(payload)?),
            b"STAT" => stats = Some(serde_json::from_slice(payload)?),
            b"META" => metadata = Some(serde_json::from_slice(payload)?),
            other => {
                return Err(Error::Checkpoint(format!(
                    "unknown section '{}'",
                    String::from_utf8_lossy(other)
                )))
            }
        }
    }
    let missing = |what: &str| Error::Checkpoint(format!("missing {} section", what));
    let config = config.ok_or_else(|| missing("CONF"))?;
    let encoder = encoder.ok_or_else(|| missing("ENCO"))?;
    let classifier = classifier.ok_or_else(|| missing("CLSF"))?;
    let metadata = metadata.ok_or_else(|| missing("META"))?;
    let stats = stats.ok_or(Error::MissingStats)?;
    if encoder.layers.len() != config.num_layers || classifier.w2.cols() != config.num_classes {
        return Err(Error::Checkpoint("tensor shapes disagree with the stored configuration".into()));
    }
    if stats.nbr_dist.num_classes() != config.num_classes {
        return Err(Error::Checkpoint("source statistics have the wrong class count".into()));
    }
    Ok(ModelState {
        config,
        encoder,
        classifier,
        source_stats: Some(stats),
        metadata,
    })
}

fn read_encoder(payload: &[u8]) -> Result<EncoderParams> {
    let mut r = ByteReader::new(payload, "encoder section");
    let n = r.usize()?;
    let mut layers = Vec::new();
    for _ in 0..n {
        layers.push(SageLayer {
            w_self: r.tensor()?,
            b_self: r.tensor()?,
            w_nbr: r.tensor()?,
            b_nbr: r.tensor()?,
        });
    }
    Ok(EncoderParams { layers })
}

fn read_classifier(payload: &[u8]) -> Result<ClassifierParams> {
    let mut r = ByteReader::new(payload, "classifier section");
    Ok(ClassifierParams {
        w1: r.tensor()?,
        b1: r.tensor()?,
        bn_scale: r.tensor()?,
        bn_shift: r.tensor()?,
        running_mean: r.tensor()?,
        running_var: r.tensor()?,
        w2: r.tensor()?,
        b2: r.tensor()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::path3;
    use crate::model::compute_source_stats;

    fn model_with_stats() -> ModelState {
        let g = path3([0, 1, 0]);
        let mut m = ModelState::init(ModelConfig::synthetic(2, 2), 9).unwrap();
        m.source_stats = Some(compute_source_stats(&g, g.labels()).unwrap());
        m
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model_with_stats();
        let back = read_model(&write_model(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn missing_stats_is_a_distinct_error() {
        let mut m = model_with_stats();
        m.source_stats = None;
        assert!(matches!(read_model(&write_model(&m).unwrap()), Err(Error::MissingStats)));
    }

    #[test]
    fn version_and_truncation_are_checked() {
        let bytes = write_model(&model_with_stats()).unwrap();
        let mut bumped = bytes.clone();
        bumped[5] = 7;
        assert!(matches!(read_model(&bumped), Err(Error::Checkpoint(m)) if m.contains("version")));
        assert!(matches!(read_model(&bytes[..bytes.len() - 10]), Err(Error::Checkpoint(_))));
        assert!(read_model(b"TSAG1....").is_err());
    }
}
