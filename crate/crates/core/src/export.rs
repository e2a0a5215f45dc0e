//! On-disk formats for relevance maps and relevance distributions.
//!
//! A map `<stem>` is stored as `<stem>.f32` (little-endian `f32`, row-major),
//! `<stem>.json` (sidecar) and `<stem>.csv` (one row per entry, indices then
//! value). A distribution stores all `M` maps back to back in `<stem>.f32`
//! with its own sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bayes::RelevanceDistribution;
use crate::error::{Error, Result};
use crate::lrp::RelevanceMap;
use crate::tensor::Tensor;

pub const MAP_FORMAT: &str = "blrp-relevance/v1";
pub const DISTRIBUTION_FORMAT: &str = "blrp-distribution/v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapSidecar {
    pub format: String,
    pub dtype: String,
    pub data: String,
    pub shape: Vec<usize>,
    pub class_index: usize,
    /// Rule description, e.g. `zero;0=gamma(0.25)`.
    pub rule: String,
    /// `lrp`, `blrp`, `mean`, ...
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionSidecar {
    pub format: String,
    pub dtype: String,
    pub data: String,
    pub samples: usize,
    /// Shape of one map.
    pub shape: Vec<usize>,
    pub class_index: usize,
    pub rule: String,
    /// Seed reproducing each sample.
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<usize>,
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn le_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn read_floats(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * 4 {
        return Err(Error::format(
            "data",
            format!(
                "{} has {} bytes, size mismatch with {expected} floats",
                path.display(),
                bytes.len()
            ),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format("sidecar", format!("{}: {e}", path.display())))
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// CSV with one row per entry: one index column per axis, then the value.
pub fn map_to_csv(t: &Tensor) -> String {
    let names: Vec<String> = match t.ndim() {
        1 => vec!["index".into()],
        2 => vec!["row".into(), "col".into()],
        3 => vec!["channel".into(), "row".into(), "col".into()],
        n => (0..n).map(|i| format!("axis{i}")).collect(),
    };
    let mut out = names.join(",") + ",value\n";
    let shape = t.shape();
    let mut idx = vec![0usize; shape.len()];
    for v in t.data() {
        for i in &idx {
            out.push_str(&i.to_string());
            out.push(',');
        }
        out.push_str(&v.to_string());
        out.push('\n');
        for a in (0..idx.len()).rev() {
            idx[a] += 1;
            if idx[a] < shape[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    out
}

/// Writes `<stem>.f32`, `<stem>.json` and `<stem>.csv`. `meta` supplies the
/// descriptive fields; shape, class and file name are taken from the map.
pub fn save_relevance_map(map: &RelevanceMap, stem: impl AsRef<Path>, meta: &MapSidecar) -> Result<()> {
    let stem = stem.as_ref();
    let data = with_ext(stem, "f32");
    write(&data, &le_bytes(map.values.data()))?;
    let sidecar = MapSidecar {
        format: MAP_FORMAT.into(),
        dtype: "f32le".into(),
        data: file_name(&data),
        shape: map.values.shape().to_vec(),
        class_index: map.class_index,
        ..meta.clone()
    };
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes") + "\n";
    write(&with_ext(stem, "json"), json.as_bytes())?;
    write(&with_ext(stem, "csv"), map_to_csv(&map.values).as_bytes())
}

/// Loads a map from its sidecar path (`<stem>.json`).
pub fn load_relevance_map(sidecar: impl AsRef<Path>) -> Result<(RelevanceMap, MapSidecar)> {
    let path = sidecar.as_ref();
    let meta: MapSidecar = read_json(path)?;
    if meta.format != MAP_FORMAT {
        return Err(Error::format("format", format!("expected {MAP_FORMAT}, found {}", meta.format)));
    }
    let n = meta.shape.iter().product();
    let values = read_floats(&path.with_file_name(&meta.data), n)?;
    let map = RelevanceMap::new(Tensor::new(meta.shape.clone(), values)?, meta.class_index)?;
    Ok((map, meta))
}

/// Writes `<stem>.f32` (all samples stacked) and `<stem>.json`.
pub fn save_distribution(
    dist: &RelevanceDistribution,
    stem: impl AsRef<Path>,
    rule: &str,
    image_id: Option<usize>,
) -> Result<()> {
    let stem = stem.as_ref();
    let data = with_ext(stem, "f32");
    let mut bytes = Vec::new();
    for s in &dist.samples {
        bytes.extend(le_bytes(s.values.data()));
    }
    write(&data, &bytes)?;
    let sidecar = DistributionSidecar {
        format: DISTRIBUTION_FORMAT.into(),
        dtype: "f32le".into(),
        data: file_name(&data),
        samples: dist.len(),
        shape: dist.samples[0].values.shape().to_vec(),
        class_index: dist.class_index,
        rule: rule.into(),
        seeds: dist.seeds.clone(),
        warning: dist.warning.clone(),
        image_id,
    };
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes") + "\n";
    write(&with_ext(stem, "json"), json.as_bytes())
}

pub fn load_distribution(sidecar: impl AsRef<Path>) -> Result<(RelevanceDistribution, DistributionSidecar)> {
    let path = sidecar.as_ref();
    let meta: DistributionSidecar = read_json(path)?;
    if meta.format != DISTRIBUTION_FORMAT {
        return Err(Error::format(
            "format",
            format!("expected {DISTRIBUTION_FORMAT}, found {}", meta.format),
        ));
    }
    let per: usize = meta.shape.iter().product();
    let values = read_floats(&path.with_file_name(&meta.data), per * meta.samples)?;
    let maps = values
        .chunks_exact(per.max(1))
        .take(meta.samples)
        .map(|c| RelevanceMap::new(Tensor::new(meta.shape.clone(), c.to_vec())?, meta.class_index))
        .collect::<Result<Vec<_>>>()?;
    let mut dist = RelevanceDistribution::new(maps, meta.seeds.clone())?;
    dist.warning = meta.warning.clone();
    Ok((dist, meta))
}
