//! Layer stacks shared by the affordance model and the baseline.

use rand_chacha::ChaCha8Rng;

use super::{init, ChannelNorm, SIGMA_FLOOR};
use crate::dataspec::ChannelSpec;
use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Tape, Tensor, Var};

const KERNEL: usize = 4;
const STRIDE: usize = 2;
const PAD: usize = 1;

pub(crate) fn image_dims(spec: &ChannelSpec) -> Result<(usize, usize)> {
    let [h, w] = spec
        .image_shape
        .ok_or_else(|| Error::invalid(format!("image channel `{}` lacks a shape", spec.name)))?;
    if h % 8 != 0 || w % 8 != 0 || h == 0 || w == 0 {
        return Err(Error::invalid(format!(
            "image channel `{}`: {h}x{w} must be a positive multiple of 8",
            spec.name
        )));
    }
    Ok((h, w))
}

/// Parameters of a conv encoder to `out_dim` features under `{name}/enc/`.
pub(crate) fn insert_encoder(
    p: &mut ParamSet,
    spec: &ChannelSpec,
    widths: [usize; 3],
    out_dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let (ih, iw) = image_dims(spec)?;
    let n = &spec.name;
    let [c0, c1, c2] = widths;
    let flat = c2 * (ih / 8) * (iw / 8);
    let kk = KERNEL * KERNEL;
    for (i, (cin, cout)) in [(1, c0), (c0, c1), (c1, c2)].into_iter().enumerate() {
        p.insert(format!("{n}/enc/conv{i}/k"), init(&[cout, cin, KERNEL, KERNEL], cin * kk, 2.0, rng))?;
        p.insert(format!("{n}/enc/conv{i}/b"), Tensor::zeros(&[cout]))?;
    }
    p.insert(format!("{n}/enc/fc/w"), init(&[flat, out_dim], flat, 1.0, rng))?;
    p.insert(format!("{n}/enc/fc/b"), Tensor::zeros(&[out_dim]))?;
    Ok(())
}

/// Parameters of a deconv decoder from `in_dim` features under `{name}/dec/`.
pub(crate) fn insert_decoder(
    p: &mut ParamSet,
    spec: &ChannelSpec,
    widths: [usize; 3],
    in_dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let (ih, iw) = image_dims(spec)?;
    let n = &spec.name;
    let [c0, c1, c2] = widths;
    let flat = c2 * (ih / 8) * (iw / 8);
    let kk = KERNEL * KERNEL;
    p.insert(format!("{n}/dec/fc/w"), init(&[in_dim, flat], in_dim, 2.0, rng))?;
    p.insert(format!("{n}/dec/fc/b"), Tensor::zeros(&[flat]))?;
    // a stride-2 transposed conv spreads each input over k²/s² outputs
    for (i, (cin, cout, gain)) in [(c2, c1, 2.0), (c1, c0, 2.0), (c0, 1, 1.0)].into_iter().enumerate() {
        let fan = cin * kk / (STRIDE * STRIDE);
        p.insert(format!("{n}/dec/deconv{i}/k"), init(&[cin, cout, KERNEL, KERNEL], fan, gain, rng))?;
        p.insert(format!("{n}/dec/deconv{i}/b"), Tensor::zeros(&[cout]))?;
    }
    p.insert(format!("{n}/dec/sigma/w"), init(&[in_dim, 1], in_dim, 1.0, rng))?;
    p.insert(format!("{n}/dec/sigma/b"), Tensor::zeros(&[1]))?;
    Ok(())
}

pub(crate) fn linear_layer(tape: &mut Tape, prefix: &str, x: Var) -> Result<Var> {
    let w = tape.param(&format!("{prefix}/w"))?;
    let b = tape.param(&format!("{prefix}/b"))?;
    tape.linear(x, w, b)
}

/// Encodes one image into a `[1, out_dim]` row.
pub(crate) fn encode_image(tape: &mut Tape, spec: &ChannelSpec, norm: &ChannelNorm, img: &Tensor) -> Result<Var> {
    let (h, w) = image_dims(spec)?;
    let n = &spec.name;
    if img.len() != h * w {
        return Err(Error::shape("encode", format!("`{n}` image {:?}, expected {h}x{w}", img.shape())));
    }
    let mut x = tape.input(Tensor::new(vec![1, h, w], norm.forward(img.data()))?)?;
    for i in 0..3 {
        let k = tape.param(&format!("{n}/enc/conv{i}/k"))?;
        let b = tape.param(&format!("{n}/enc/conv{i}/b"))?;
        x = tape.conv2d(x, k, b, STRIDE, PAD)?;
        x = tape.relu(x)?;
    }
    let flat = tape.value(x).len();
    let x = tape.reshape(x, &[1, flat])?;
    linear_layer(tape, &format!("{n}/enc/fc"), x)
}

/// Decodes a `[1, in_dim]` row into `(μ [1, h, w], σ [1, 1])`, normalized.
pub(crate) fn decode_image(tape: &mut Tape, spec: &ChannelSpec, widths: [usize; 3], features: Var) -> Result<(Var, Var)> {
    let (h, w) = image_dims(spec)?;
    let n = &spec.name;
    let x = linear_layer(tape, &format!("{n}/dec/fc"), features)?;
    let x = tape.relu(x)?;
    let mut x = tape.reshape(x, &[widths[2], h / 8, w / 8])?;
    for i in 0..3 {
        let k = tape.param(&format!("{n}/dec/deconv{i}/k"))?;
        let b = tape.param(&format!("{n}/dec/deconv{i}/b"))?;
        x = tape.deconv2d(x, k, b, STRIDE, PAD)?;
        if i < 2 {
            x = tape.relu(x)?;
        }
    }
    let raw = linear_layer(tape, &format!("{n}/dec/sigma"), features)?;
    let s = tape.softplus(raw)?;
    let sigma = tape.add_scalar(s, SIGMA_FLOOR)?;
    Ok((x, sigma))
}

/// Dense stack `{prefix}/{0..layers}` with ReLU between layers.
pub(crate) fn mlp(tape: &mut Tape, prefix: &str, mut x: Var, layers: usize) -> Result<Var> {
    for l in 0..layers {
        x = linear_layer(tape, &format!("{prefix}/{l}"), x)?;
        if l + 1 < layers {
            x = tape.relu(x)?;
        }
    }
    Ok(x)
}

/// Parameters for [`mlp`] through the given layer widths; the last layer
/// uses unit gain.
pub(crate) fn insert_mlp(p: &mut ParamSet, prefix: &str, widths: &[usize], rng: &mut ChaCha8Rng) -> Result<()> {
    let layers = widths.len() - 1;
    for l in 0..layers {
        let gain = if l + 1 == layers { 1.0 } else { 2.0 };
        p.insert(format!("{prefix}/{l}/w"), init(&[widths[l], widths[l + 1]], widths[l], gain, rng))?;
        p.insert(format!("{prefix}/{l}/b"), Tensor::zeros(&[widths[l + 1]]))?;
    }
    Ok(())
}
