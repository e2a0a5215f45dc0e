//! Fixed output layout and shared loading.
//!
//! ```text
//! <out>/models/   model.json, model.bin, model.stats.json
//! <out>/maps/     img_NNNNN/{lrp,blrp_pXX,stability}.{f32,json,csv}
//! <out>/curves/   train.csv, flip_images.csv, flip_aggregate.csv, flip_summary.json
//! <out>/renders/  img_NNNNN/*.png, flip_curves.png, grid.png
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use blrp::data::{load_mnist_with_stats, PixelStats};
use blrp::{load_model, Dataset, Network};
use serde::Serialize;

use crate::error::{io_err, CliError, CliResult};

#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn models(&self) -> PathBuf {
        self.root.join("models")
    }

    pub fn maps(&self) -> PathBuf {
        self.root.join("maps")
    }

    pub fn curves(&self) -> PathBuf {
        self.root.join("curves")
    }

    pub fn renders(&self) -> PathBuf {
        self.root.join("renders")
    }

    pub fn model(&self) -> PathBuf {
        self.models().join("model.json")
    }

    pub fn image_dir(base: &Path, index: usize) -> PathBuf {
        base.join(format!("img_{index:05}"))
    }
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    write_file(path, text)
}

/// `models/model.json` → `models/model.stats.json`.
pub fn stats_path(model: &Path) -> PathBuf {
    let stem = model.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    model.with_file_name(format!("{stem}.stats.json"))
}

pub fn save_stats(model: &Path, stats: &PixelStats) -> CliResult<()> {
    write_json(&stats_path(model), stats)
}

pub fn load_stats(model: &Path) -> CliResult<PixelStats> {
    let path = stats_path(model);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| {
        CliError::Core(blrp::Error::Format {
            field: "stats".into(),
            message: format!("{}: {e}", path.display()),
        })
    })
}

/// A trained model with the standardization it was trained under, and a
/// standardized evaluation split.
pub struct Loaded {
    pub net: Network,
    pub stats: PixelStats,
    pub data: Dataset,
}

pub fn load_all(model: &Path, images: &Path, labels: &Path) -> CliResult<Loaded> {
    let net = load_model(model)?;
    let stats = load_stats(model)?;
    let data = load_mnist_with_stats(images, labels, &stats, None)?;
    if data.sample_shape() != net.input_shape() {
        return Err(CliError::Core(blrp::Error::Dimension(format!(
            "images {:?} do not fit the model input {:?}",
            data.sample_shape(),
            net.input_shape()
        ))));
    }
    Ok(Loaded { net, stats, data })
}

/// File-name tag of a percentile: `5 → p05`, `50 → p50`, `2.5 → p2_5`.
pub fn alpha_tag(alpha: f64) -> String {
    if alpha.fract() == 0.0 {
        format!("p{:02}", alpha as u64)
    } else {
        format!("p{}", alpha.to_string().replace('.', "_"))
    }
}

pub fn blrp_method(alpha: f64) -> String {
    format!("blrp_{}", alpha_tag(alpha))
}

pub fn configure_threads(threads: usize) {
    if threads > 0 {
        // the global pool can only be set once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
}
