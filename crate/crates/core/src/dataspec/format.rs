//! Binary envelope shared by dataset and parameter files:
//!
//! ```text
//! magic      4 bytes   "AFFD" | "AFFM" | "AFFB"
//! version    u32 LE
//! meta_len   u64 LE
//! meta       meta_len bytes of UTF-8 JSON
//! payload    little-endian f64, layout described by meta
//! ```
//!
//! Dataset payload: per sample, per channel in declared order, one
//! availability byte (0/1) followed (if 1) by the row-major channel payload.
//! Parameter payload: arrays concatenated in metadata order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AffordanceSample, ChannelSpec, Dataset, SampleMeta};
use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Tensor};

pub const DATASET_MAGIC: [u8; 4] = *b"AFFD";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetMeta {
    channels: Vec<ChannelSpec>,
    sample_count: usize,
    #[serde(default)]
    scenario: serde_json::Value,
    samples: Vec<SampleMeta>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayMeta {
    hyperparameters: serde_json::Value,
    arrays: Vec<ArrayEntry>,
}

fn write_header(w: &mut impl Write, magic: [u8; 4], meta: &[u8]) -> Result<()> {
    w.write_all(&magic)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(meta.len() as u64).to_le_bytes())?;
    w.write_all(meta)?;
    Ok(())
}

fn read_exact_or(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Truncated(what.to_string()),
        _ => Error::Io(e),
    })
}

fn read_header(r: &mut impl Read, magic: [u8; 4]) -> Result<Vec<u8>> {
    let mut found = [0u8; 4];
    read_exact_or(r, &mut found, "magic")?;
    if found != magic {
        return Err(Error::BadMagic {
            expected: magic,
            found,
        });
    }
    let mut v = [0u8; 4];
    read_exact_or(r, &mut v, "version")?;
    let version = u32::from_le_bytes(v);
    if version != FORMAT_VERSION {
        return Err(Error::Version(version));
    }
    let mut l = [0u8; 8];
    read_exact_or(r, &mut l, "metadata length")?;
    let len = u64::from_le_bytes(l);
    let mut meta = Vec::new();
    r.take(len).read_to_end(&mut meta)?;
    if meta.len() as u64 != len {
        return Err(Error::Truncated("metadata block".into()));
    }
    Ok(meta)
}

fn write_f64s(w: &mut impl Write, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_f64s(r: &mut impl Read, n: usize, what: &str) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    read_exact_or(r, &mut buf, what)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

fn expect_eof(r: &mut impl Read) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(Error::Format("trailing bytes after payload".into())),
    }
}

pub fn write_dataset_to(ds: &Dataset, w: &mut impl Write) -> Result<()> {
    ds.validate()?;
    let meta = DatasetMeta {
        channels: ds.specs.clone(),
        sample_count: ds.samples.len(),
        scenario: ds.scenario.clone(),
        samples: ds.samples.iter().map(|s| s.meta.clone()).collect(),
    };
    write_header(w, DATASET_MAGIC, &serde_json::to_vec(&meta)?)?;
    for s in &ds.samples {
        for payload in &s.channels {
            match payload {
                None => w.write_all(&[0u8])?,
                Some(t) => {
                    w.write_all(&[1u8])?;
                    write_f64s(w, t.data())?;
                }
            }
        }
    }
    Ok(())
}

pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset_to(ds, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_dataset_from(r: &mut impl Read) -> Result<Dataset> {
    let meta: DatasetMeta = serde_json::from_slice(&read_header(r, DATASET_MAGIC)?)?;
    if meta.samples.len() != meta.sample_count {
        return Err(Error::Format(format!(
            "sample_count {} but {} metadata records",
            meta.sample_count,
            meta.samples.len()
        )));
    }
    super::validate_specs(&meta.channels)?;
    let mut samples = Vec::with_capacity(meta.sample_count);
    for (j, sm) in meta.samples.into_iter().enumerate() {
        let mut channels = Vec::with_capacity(meta.channels.len());
        for spec in &meta.channels {
            let mut flag = [0u8; 1];
            read_exact_or(r, &mut flag, &format!("mask of sample {j}"))?;
            match flag[0] {
                0 => channels.push(None),
                1 => {
                    let shape = spec.payload_shape();
                    let n = shape.iter().product();
                    let data = read_f64s(r, n, &format!("sample {j} channel `{}`", spec.name))?;
                    channels.push(Some(Tensor::new(shape, data)?));
                }
                other => {
                    return Err(Error::Format(format!(
                        "sample {j} channel `{}`: availability byte {other}",
                        spec.name
                    )))
                }
            }
        }
        let sample = AffordanceSample { channels, meta: sm };
        sample.validate(&meta.channels)?;
        samples.push(sample);
    }
    expect_eof(r)?;
    Ok(Dataset {
        specs: meta.channels,
        samples,
        scenario: meta.scenario,
    })
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let mut r = BufReader::new(File::open(path)?);
    read_dataset_from(&mut r)
}

/// Writes named arrays in the shared envelope under `magic`.
pub fn write_arrays(
    w: &mut impl Write,
    magic: [u8; 4],
    hyperparameters: &serde_json::Value,
    params: &ParamSet,
) -> Result<()> {
    let meta = ArrayMeta {
        hyperparameters: hyperparameters.clone(),
        arrays: params
            .iter()
            .map(|(name, t)| ArrayEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    write_header(w, magic, &serde_json::to_vec(&meta)?)?;
    for t in params.tensors() {
        write_f64s(w, t.data())?;
    }
    Ok(())
}

/// Reads arrays written by [`write_arrays`]; returns hyperparameters and the arrays.
pub fn read_arrays(r: &mut impl Read, magic: [u8; 4]) -> Result<(serde_json::Value, ParamSet)> {
    let meta: ArrayMeta = serde_json::from_slice(&read_header(r, magic)?)?;
    let mut params = ParamSet::new();
    for entry in meta.arrays {
        let n = entry.shape.iter().product();
        let data = read_f64s(r, n, &format!("array `{}`", entry.name))?;
        params.insert(entry.name, Tensor::new(entry.shape, data)?)?;
    }
    expect_eof(r)?;
    Ok((meta.hyperparameters, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataspec::{Split, Units};

    fn meta(i: usize) -> SampleMeta {
        SampleMeta {
            scenario: "unit".into(),
            object: format!("obj-{i}"),
            object_param: i as f64,
            outcome: "none".into(),
            split: Split::Train,
            action: None,
        }
    }

    fn specs() -> Vec<ChannelSpec> {
        vec![
            ChannelSpec::image("object", 2, 2),
            ChannelSpec::trajectory("effect", 1, Units::Newtons, None),
            ChannelSpec::trajectory("ur10", 2, Units::Radians, Some("ur10")),
        ]
    }

    #[test]
    fn empty_dataset_is_header_only() {
        let ds = Dataset::new(specs(), vec![]).unwrap();
        let mut buf = Vec::new();
        write_dataset_to(&ds, &mut buf).unwrap();
        let meta_len = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
        assert_eq!(buf.len(), 16 + meta_len);
        assert_eq!(&buf[..4], b"AFFD");
        let back = read_dataset_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn masked_channel_has_no_payload() {
        let sp = specs();
        let sample = AffordanceSample {
            channels: vec![
                Some(Tensor::new(vec![2, 2], vec![0.5, 1.0, 0.5, 0.5]).unwrap()),
                None,
                Some(Tensor::from_fn(&[100, 2], |i| i as f64 * 0.01)),
            ],
            meta: meta(0),
        };
        let ds = Dataset::new(sp, vec![sample]).unwrap();
        let mut buf = Vec::new();
        write_dataset_to(&ds, &mut buf).unwrap();
        let meta_len = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
        let payload = &buf[16 + meta_len..];
        // 1 + 4·8, then 1 (masked), then 1 + 200·8
        assert_eq!(payload.len(), 1 + 32 + 1 + 1 + 1600);
        assert_eq!(payload[33], 0);
        let back = read_dataset_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, ds);
        assert!(back.samples[0].channels[1].is_none());
    }

    #[test]
    fn header_errors() {
        let ds = Dataset::new(specs(), vec![]).unwrap();
        let mut buf = Vec::new();
        write_dataset_to(&ds, &mut buf).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_dataset_from(&mut bad.as_slice()), Err(Error::BadMagic { .. })));

        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(matches!(read_dataset_from(&mut bad.as_slice()), Err(Error::Version(9))));

        let short = &buf[..buf.len() - 3];
        assert!(matches!(read_dataset_from(&mut &short[..]), Err(Error::Truncated(_))));
    }

    #[test]
    fn truncated_payload_and_bad_mask() {
        let sp = specs();
        let sample = AffordanceSample {
            channels: vec![None, Some(Tensor::zeros(&[100, 1])), None],
            meta: meta(1),
        };
        let ds = Dataset::new(sp, vec![sample]).unwrap();
        let mut buf = Vec::new();
        write_dataset_to(&ds, &mut buf).unwrap();
        let cut = &buf[..buf.len() - 8];
        assert!(matches!(read_dataset_from(&mut &cut[..]), Err(Error::Truncated(_))));

        let meta_len = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
        let mut bad = buf.clone();
        bad[16 + meta_len] = 7;
        assert!(matches!(read_dataset_from(&mut bad.as_slice()), Err(Error::Format(_))));

        // masking every channel violates the at-least-one invariant
        let mut bad = buf.clone();
        bad[16 + meta_len + 1] = 0;
        bad.truncate(16 + meta_len + 3);
        assert!(read_dataset_from(&mut bad.as_slice()).is_err());
    }

    #[test]
    fn arrays_round_trip() {
        let mut p = ParamSet::new();
        p.insert("a", Tensor::from_fn(&[3, 2], |i| (i as f64).sqrt()))
            .unwrap();
        p.insert("b", Tensor::scalar(-0.0)).unwrap();
        let hp = serde_json::json!({"latent_dim": 4});
        let mut buf = Vec::new();
        write_arrays(&mut buf, *b"AFFM", &hp, &p).unwrap();
        let (hp2, p2) = read_arrays(&mut buf.as_slice(), *b"AFFM").unwrap();
        assert_eq!(hp, hp2);
        for (x, y) in p.tensors().iter().zip(p2.tensors()) {
            let xb: Vec<u64> = x.data().iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u64> = y.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
        assert!(matches!(
            read_arrays(&mut buf.as_slice(), *b"AFFB"),
            Err(Error::BadMagic { .. })
        ));
    }
}
