//! Network manifests: header attributes `input_shape`, `tap` (layer name)
//! and optional `classes`, then one section per layer in order with a
//! `type` key. Dense and conv layers reference their weight tensor through
//! `path` and their bias tensor through `bias`.

use std::fs;
use std::path::{Path, PathBuf};

use super::{Layer, LayerKind, Network};
use crate::error::{Error, Result};
use crate::manifest::{Manifest, ManifestEntry, ManifestKind};
use crate::tensor::{read_tensor, write_tensor, Tensor};

fn parse_list(field: &str, text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Manifest(format!("bad {field} '{text}'")))
        })
        .collect()
}

fn required<T: std::str::FromStr>(entry: &ManifestEntry, key: &str) -> Result<T> {
    entry
        .parse(key)?
        .ok_or_else(|| Error::Manifest(format!("layer '{}' is missing '{key}'", entry.name)))
}

fn load_param(manifest: &Manifest, entry: &ManifestEntry, rel: &str, rank: usize) -> Result<(Vec<usize>, Vec<f32>)> {
    let t = read_tensor(manifest.resolve(rel))?;
    if t.shape().len() != rank {
        return Err(Error::Manifest(format!(
            "layer '{}': tensor '{rel}' has rank {}, expected {rank}",
            entry.name,
            t.shape().len()
        )));
    }
    let shape = t.shape().to_vec();
    Ok((shape, t.into_f32()?))
}

fn load_layer(manifest: &Manifest, entry: &ManifestEntry) -> Result<Layer> {
    let ty = entry.require("type")?;
    let kind = match ty {
        "dense" => {
            let path = entry
                .path
                .as_deref()
                .ok_or_else(|| Error::Manifest(format!("layer '{}' has no weight path", entry.name)))?;
            let (shape, weight) = load_param(manifest, entry, path, 2)?;
            let (_, bias) = load_param(manifest, entry, entry.require("bias")?, 1)?;
            LayerKind::Dense {
                weight,
                bias,
                inputs: shape[1],
                outputs: shape[0],
            }
        }
        "conv2d" => {
            let path = entry
                .path
                .as_deref()
                .ok_or_else(|| Error::Manifest(format!("layer '{}' has no kernel path", entry.name)))?;
            let (shape, kernel) = load_param(manifest, entry, path, 4)?;
            let (_, bias) = load_param(manifest, entry, entry.require("bias")?, 1)?;
            LayerKind::Conv2d {
                kernel,
                bias,
                out_channels: shape[0],
                in_channels: shape[1],
                kh: shape[2],
                kw: shape[3],
                stride: entry.parse("stride")?.unwrap_or(1),
                padding: entry.parse("padding")?.unwrap_or(0),
            }
        }
        "maxpool2d" => {
            let window: usize = required(entry, "window")?;
            LayerKind::MaxPool2d {
                window,
                stride: entry.parse("stride")?.unwrap_or(window),
            }
        }
        "relu" => LayerKind::Relu,
        "flatten" => LayerKind::Flatten,
        "softmax" => LayerKind::Softmax,
        other => {
            return Err(Error::Manifest(format!(
                "layer '{}' has unknown type '{other}'",
                entry.name
            )))
        }
    };
    Ok(Layer::new(entry.name.as_str(), kind))
}

pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    let manifest = Manifest::load(path)?;
    manifest.expect_kind(ManifestKind::Network)?;
    let input_shape = parse_list(
        "input_shape",
        manifest
            .attribute("input_shape")
            .ok_or_else(|| Error::Manifest("network is missing 'input_shape'".into()))?,
    )?;
    let layers = manifest
        .entries
        .iter()
        .map(|e| load_layer(&manifest, e))
        .collect::<Result<Vec<_>>>()?;
    let tap_name = manifest
        .attribute("tap")
        .ok_or_else(|| Error::Manifest("network is missing 'tap'".into()))?;
    let tap = layers
        .iter()
        .position(|l| l.name == tap_name)
        .ok_or_else(|| Error::Manifest(format!("tap layer '{tap_name}' not found")))?;
    let net = Network::new(layers, input_shape, tap)?;
    match manifest.attribute("classes") {
        Some(list) => net.with_class_names(list.split(',').map(|s| s.trim().to_string()).collect()),
        None => Ok(net),
    }
}

fn write_params(
    dir: &Path,
    stem: &str,
    index: usize,
    shape: Vec<usize>,
    weight: &[f32],
    bias: &[f32],
) -> Result<(String, String)> {
    let w = format!("{stem}.{index:03}.weight.stf");
    let b = format!("{stem}.{index:03}.bias.stf");
    write_tensor(&Tensor::from_f32(shape, weight.to_vec())?, dir.join(&w))?;
    write_tensor(&Tensor::from_f32(vec![bias.len()], bias.to_vec())?, dir.join(&b))?;
    Ok((w, b))
}

/// Writes `<stem>.manifest` plus one tensor file per weight and bias into
/// `dir`, returning the manifest path.
pub fn save_network(net: &Network, dir: impl AsRef<Path>, stem: &str) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = Manifest::new(ManifestKind::Network);
    let shape: Vec<String> = net.input_shape().iter().map(usize::to_string).collect();
    manifest.set_attribute("input_shape", shape.join(","));
    manifest.set_attribute("tap", &net.layers()[net.tap_index()].name);
    if let Some(names) = net.class_names() {
        manifest.set_attribute("classes", names.join(","));
    }
    for (i, layer) in net.layers().iter().enumerate() {
        let entry = ManifestEntry::new(layer.name.as_str()).with("type", layer.kind.tag());
        let entry = match &layer.kind {
            LayerKind::Dense {
                weight,
                bias,
                inputs,
                outputs,
            } => {
                let (w, b) = write_params(dir, stem, i, vec![*outputs, *inputs], weight, bias)?;
                entry.with_path(w).with("bias", b)
            }
            LayerKind::Conv2d {
                kernel,
                bias,
                out_channels,
                in_channels,
                kh,
                kw,
                stride,
                padding,
            } => {
                let shape = vec![*out_channels, *in_channels, *kh, *kw];
                let (w, b) = write_params(dir, stem, i, shape, kernel, bias)?;
                entry
                    .with_path(w)
                    .with("bias", b)
                    .with("stride", stride)
                    .with("padding", padding)
            }
            LayerKind::MaxPool2d { window, stride } => {
                entry.with("window", window).with("stride", stride)
            }
            _ => entry,
        };
        manifest.push(entry)?;
    }
    let path = dir.join(format!("{stem}.manifest"));
    manifest.save(&path)?;
    Ok(path)
}
