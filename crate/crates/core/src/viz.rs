//! Heatmap normalization, the seismic ramp, and PPM/PNG output.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Positives divided by the largest positive, negatives by the magnitude of
/// the most negative value. Each sign class is scaled independently, so an
/// all-zero map stays zero and a one-signed map uses only its own branch.
pub fn minmax_normalize(r: &Tensor) -> Tensor {
    let max_pos = r.data().iter().fold(0.0f32, |m, &v| m.max(v));
    let min_neg = r.data().iter().fold(0.0f32, |m, &v| m.min(v));
    r.map(|v| {
        if v > 0.0 {
            v / max_pos
        } else if v < 0.0 {
            v / -min_neg
        } else {
            0.0
        }
    })
}

/// `√|R| · sign(R)`, element-wise, for rendering.
///
/// Rounded back to `f32`, neighbouring inputs can collapse onto one value;
/// use [`medical_transform_f64`] when the exact ranking matters.
pub fn medical_transform(r: &Tensor) -> Tensor {
    r.map(|v| v.abs().sqrt().copysign(v))
}

/// `√|R| · sign(R)` in `f64`, strictly increasing over all finite `f32`
/// inputs, so `flip_order` of the result equals `flip_order` of `r`.
pub fn medical_transform_f64(r: &[f32]) -> Vec<f64> {
    r.iter().map(|&v| (v as f64).abs().sqrt().copysign(v as f64)).collect()
}

/// Piecewise-linear blue (−1) → white (0) → red (+1). Inputs are clamped and
/// NaN renders as white.
pub fn seismic_colormap(v: f32) -> [u8; 3] {
    let v = if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
    let fade = |t: f32| (255.0 * (1.0 - t)).round() as u8;
    if v >= 0.0 {
        let c = fade(v);
        [255, c, c]
    } else {
        let c = fade(-v);
        [c, c, 255]
    }
}

/// An 8-bit RGB raster, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

/// A colormapped relevance map; same dimensions as the source map.
pub type RenderedHeatmap = RgbImage;

impl RgbImage {
    pub fn new(width: usize, height: usize, fill: [u8; 3]) -> Self {
        RgbImage {
            width,
            height,
            rgb: fill.repeat(width * height),
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, c: [u8; 3]) {
        if x < self.width && y < self.height {
            let i = 3 * (y * self.width + x);
            self.rgb[i..i + 3].copy_from_slice(&c);
        }
    }

    pub fn fill_rect(&mut self, x0: usize, y0: usize, w: usize, h: usize, c: [u8; 3]) {
        for y in y0..(y0 + h).min(self.height) {
            for x in x0..(x0 + w).min(self.width) {
                self.set(x, y, c);
            }
        }
    }

    /// Nearest-neighbour enlargement by an integer factor.
    pub fn upscale(&self, factor: usize) -> RgbImage {
        let mut out = RgbImage::new(self.width * factor, self.height * factor, [0; 3]);
        for y in 0..out.height {
            for x in 0..out.width {
                out.set(x, y, self.get(x / factor, y / factor));
            }
        }
        out
    }

    /// Copies `src` with its top-left corner at `(x0, y0)`, clipping.
    pub fn blit(&mut self, src: &RgbImage, x0: usize, y0: usize) {
        for y in 0..src.height {
            for x in 0..src.width {
                self.set(x0 + x, y0 + y, src.get(x, y));
            }
        }
    }
}

/// Channel-sums a `C×H×W` map (an `H×W` map is used as is), optionally
/// applies [`medical_transform`], MinMax-normalizes and colormaps.
pub fn render_heatmap(r: &Tensor, medical: bool) -> Result<RenderedHeatmap> {
    let map = crate::lrp::channel_sum(r);
    let &[h, w] = map.shape() else {
        return Err(Error::dim(format!("cannot render a map of shape {:?}", r.shape())));
    };
    if !map.is_finite() {
        return Err(Error::Numeric("cannot render a non-finite map".into()));
    }
    let map = if medical { medical_transform(&map) } else { map };
    let norm = minmax_normalize(&map);
    Ok(RgbImage {
        width: w,
        height: h,
        rgb: norm.data().iter().flat_map(|&v| seismic_colormap(v)).collect(),
    })
}

/// Grayscale rendering of an input image, scaled between its min and max.
pub fn render_grayscale(x: &Tensor) -> Result<RgbImage> {
    let map = crate::lrp::channel_sum(x);
    let &[h, w] = map.shape() else {
        return Err(Error::dim(format!("cannot render an image of shape {:?}", x.shape())));
    };
    let lo = map.data().iter().fold(f32::INFINITY, |m, &v| m.min(v));
    let hi = map.data().iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v));
    let span = if hi > lo { hi - lo } else { 1.0 };
    Ok(RgbImage {
        width: w,
        height: h,
        rgb: map
            .data()
            .iter()
            .flat_map(|&v| {
                let g = (255.0 * (v - lo) / span).round() as u8;
                [g, g, g]
            })
            .collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    Ppm,
    Png,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("ppm") => Ok(ImageFormat::Ppm),
            Some("png") => Ok(ImageFormat::Png),
            _ => Err(Error::format(
                "extension",
                format!("{} is neither .ppm nor .png", path.display()),
            )),
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Ppm => "ppm",
            ImageFormat::Png => "png",
        }
    }
}

/// Binary P6 bytes: `P6\n<w> <h>\n255\n` followed by the raw RGB triples.
pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.rgb);
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format("header", format!("truncated PPM header at byte offset {pos}")));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    if fields[0] != "P6" {
        return Err(Error::format("magic", format!("expected P6, found {:?}", fields[0])));
    }
    let num = |i: usize, name: &'static str| {
        fields[i]
            .parse::<usize>()
            .map_err(|_| Error::format(name, format!("not a number: {:?}", fields[i])))
    };
    let (width, height, maxval) = (num(1, "width")?, num(2, "height")?, num(3, "maxval")?);
    if maxval != 255 {
        return Err(Error::format("maxval", format!("only 8-bit PPM is supported, found {maxval}")));
    }
    let need = 3 * width * height;
    if bytes.len() < pos + need {
        return Err(Error::format(
            "raster",
            format!("expected {need} bytes at byte offset {pos}, file has {}", bytes.len()),
        ));
    }
    Ok(RgbImage {
        width,
        height,
        rgb: bytes[pos..pos + need].to_vec(),
    })
}

fn write_png(img: &RgbImage, w: impl Write) -> std::result::Result<(), png::EncodingError> {
    let mut enc = png::Encoder::new(w, img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header()?;
    writer.write_image_data(&img.rgb)?;
    writer.finish()
}

/// Writes PPM or PNG, chosen by `format`.
pub fn write_image(img: &RgbImage, path: impl AsRef<Path>, format: ImageFormat) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    match format {
        ImageFormat::Ppm => out.write_all(&encode_ppm(img)).map_err(|e| Error::io(path, e))?,
        ImageFormat::Png => write_png(img, &mut out).map_err(|e| match e {
            png::EncodingError::IoError(io) => Error::io(path, io),
            other => Error::format("png", other.to_string()),
        })?,
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads a P6 PPM or an 8-bit RGB PNG, chosen by extension.
pub fn read_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    match ImageFormat::from_path(path)? {
        ImageFormat::Ppm => decode_ppm(&bytes),
        ImageFormat::Png => decode_png(&bytes),
    }
}

pub fn decode_png(bytes: &[u8]) -> Result<RgbImage> {
    let bad = |e: png::DecodingError| Error::format("png", e.to_string());
    let mut reader = png::Decoder::new(std::io::Cursor::new(bytes)).read_info().map_err(bad)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format("png", "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(bad)?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format(
            "png",
            format!("expected 8-bit RGB, found {:?} {:?}", info.color_type, info.bit_depth),
        ));
    }
    buf.truncate(info.buffer_size());
    Ok(RgbImage {
        width: info.width as usize,
        height: info.height as usize,
        rgb: buf,
    })
}
