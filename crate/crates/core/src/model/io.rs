use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AffordanceModel, ChannelNorm, ModelConfig};
use crate::dataspec::{read_arrays, write_arrays, ChannelSpec};
use crate::error::Result;

pub const MODEL_MAGIC: [u8; 4] = *b"AFFM";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    specs: Vec<ChannelSpec>,
    norms: Vec<ChannelNorm>,
}

pub fn write_model_to(model: &AffordanceModel, w: &mut impl Write) -> Result<()> {
    let header = serde_json::to_value(Header {
        config: model.config.clone(),
        specs: model.specs.clone(),
        norms: model.norms.clone(),
    })?;
    write_arrays(w, MODEL_MAGIC, &header, &model.params)
}

pub fn write_model(model: &AffordanceModel, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model_to(model, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Reads a model, checking every expected array is present with its shape.
pub fn read_model_from(r: &mut impl Read) -> Result<AffordanceModel> {
    let (header, arrays) = read_arrays(r, MODEL_MAGIC)?;
    let header: Header = serde_json::from_value(header)?;
    let mut model = AffordanceModel::new(header.specs, header.norms, header.config)?;
    model.params.assign_from(arrays)?;
    Ok(model)
}

pub fn read_model(path: impl AsRef<Path>) -> Result<AffordanceModel> {
    read_model_from(&mut BufReader::new(File::open(path)?))
}
