use std::fs;
use std::path::{Path, PathBuf};

use blrp::export::{load_relevance_map, MapSidecar};
use blrp::viz::{render_heatmap, write_image, ImageFormat, RgbImage};

use crate::args::RenderArgs;
use crate::error::{io_err, CliError, CliResult};
use crate::layout::{ensure_dir, Layout};
use crate::plot::{draw_text, plot_curves, text_width, PlotLayout, Series, BLACK, WHITE};

/// One method's aggregate curve read back from CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveRows {
    pub method: String,
    pub fraction: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

const AGGREGATE_HEADER: [&str; 6] = ["method", "step", "fraction", "mean", "stderr", "count"];

fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> CliError {
    CliError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads an aggregate flip CSV; methods keep their first-appearance order.
pub fn read_aggregate_csv(path: &Path) -> CliResult<Vec<CurveRows>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| parse_error(path, 1, e.to_string()))?
        .clone();
    if header.iter().collect::<Vec<_>>() != AGGREGATE_HEADER {
        return Err(parse_error(path, 1, format!("expected header {}", AGGREGATE_HEADER.join(","))));
    }
    let mut curves: Vec<CurveRows> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let num = |i: usize| -> CliResult<f64> {
            record[i]
                .parse::<f64>()
                .map_err(|_| parse_error(path, line, format!("column {} is not a number: {:?}", AGGREGATE_HEADER[i], &record[i])))
        };
        let (fraction, mean, stderr) = (num(2)?, num(3)?, num(4)?);
        let method = record[0].to_string();
        let idx = match curves.iter().position(|c| c.method == method) {
            Some(i) => i,
            None => {
                curves.push(CurveRows {
                    method,
                    fraction: vec![],
                    mean: vec![],
                    stderr: vec![],
                });
                curves.len() - 1
            }
        };
        let c = &mut curves[idx];
        c.fraction.push(fraction);
        c.mean.push(mean);
        c.stderr.push(stderr);
    }
    if curves.is_empty() {
        return Err(parse_error(path, 1, "no curve rows"));
    }
    Ok(curves)
}

/// Keeps `methods` (in that order) or all curves when `None`.
pub fn select_methods(curves: Vec<CurveRows>, methods: Option<&[String]>) -> CliResult<Vec<CurveRows>> {
    let Some(methods) = methods else {
        return Ok(curves);
    };
    let methods: Vec<&String> = methods.iter().filter(|m| !m.is_empty()).collect();
    if methods.is_empty() {
        return Err(CliError::usage("empty method list"));
    }
    methods
        .into_iter()
        .map(|m| {
            curves.iter().find(|c| &c.method == m).cloned().ok_or_else(|| {
                let known: Vec<&str> = curves.iter().map(|c| c.method.as_str()).collect();
                CliError::usage(format!("method {m:?} not in the CSV (have {})", known.join(",")))
            })
        })
        .collect()
}

pub fn render_curves(curves: &[CurveRows]) -> (RgbImage, PlotLayout) {
    let series: Vec<Series> = curves
        .iter()
        .map(|c| Series {
            name: &c.method,
            x: &c.fraction,
            mean: &c.mean,
            stderr: &c.stderr,
        })
        .collect();
    plot_curves(&series, "flipped fraction", "score")
}

fn method_rank(meta: &MapSidecar) -> (u8, u64) {
    match meta.method.as_str() {
        "lrp" => (0, 0),
        "blrp" => (1, (meta.alpha.unwrap_or(0.0) * 1000.0) as u64),
        "stability" => (3, 0),
        _ => (2, 0),
    }
}

fn column_title(meta: &MapSidecar) -> String {
    match (meta.method.as_str(), meta.alpha) {
        ("blrp", Some(a)) => format!("p{a}"),
        (m, _) => m.to_string(),
    }
}

/// Maps of one `maps/img_NNNNN` directory in display order: LRP, B-LRP
/// percentiles by alpha, stability.
pub fn load_map_dir(dir: &Path) -> CliResult<Vec<(MapSidecar, blrp::lrp::RelevanceMap)>> {
    let mut entries = Vec::new();
    for e in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = e.map_err(io_err(dir))?.path();
        if path.extension().is_some_and(|x| x == "json") {
            // distribution sidecars use another format and are skipped
            if let Ok((map, meta)) = load_relevance_map(&path) {
                entries.push((meta, map));
            }
        }
    }
    if entries.is_empty() {
        return Err(CliError::usage(format!("no relevance maps in {}", dir.display())));
    }
    entries.sort_by_key(|(m, _)| (method_rank(m), m.data.clone()));
    Ok(entries)
}

/// One row per directory, one column per map, titles above the first row.
pub fn render_grid(dirs: &[PathBuf], scale: usize, medical: bool) -> CliResult<RgbImage> {
    let rows = dirs.iter().map(|d| load_map_dir(d)).collect::<CliResult<Vec<_>>>()?;
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let first = &rows[0][0].1.pixel_map();
    let (h, w) = (first.shape()[0] * scale, first.shape()[first.ndim() - 1] * scale);
    let gap = 6;
    let title = 16;
    let cell_w = w.max(text_width("stability", 1)) + gap;
    let mut img = RgbImage::new(gap + cols * cell_w, title + rows.len() * (h + gap) + gap, WHITE);
    for (c, (meta, _)) in rows[0].iter().enumerate() {
        draw_text(&mut img, gap + c * cell_w, 4, &column_title(meta), 1, BLACK);
    }
    for (r, row) in rows.iter().enumerate() {
        for (c, (meta, map)) in row.iter().enumerate() {
            let medical = medical && meta.method != "stability";
            let tile = render_heatmap(&map.values, medical)?.upscale(scale);
            img.blit(&tile, gap + c * cell_w, title + r * (h + gap));
        }
    }
    Ok(img)
}

pub struct RenderOutcome {
    pub curves: Option<(PathBuf, PlotLayout)>,
    pub grid: Option<PathBuf>,
}

pub fn cmd_render(args: &RenderArgs) -> CliResult<RenderOutcome> {
    if args.curves.is_none() && args.maps.is_empty() {
        return Err(CliError::usage("nothing to render: pass --curves and/or --maps"));
    }
    if args.scale == 0 {
        return Err(CliError::usage("--scale must be at least 1"));
    }
    let layout = Layout::new(&args.out);
    let format: ImageFormat = args.format.into();
    let mut outcome = RenderOutcome { curves: None, grid: None };
    if let Some(csv) = &args.curves {
        let curves = select_methods(read_aggregate_csv(csv)?, args.methods.as_deref())?;
        let (img, plot) = render_curves(&curves);
        ensure_dir(&layout.renders())?;
        let path = layout.renders().join(format!("flip_curves.{}", format.extension()));
        write_image(&img, &path, format)?;
        outcome.curves = Some((path, plot));
    }
    if !args.maps.is_empty() {
        let img = render_grid(&args.maps, args.scale, args.medical)?;
        ensure_dir(&layout.renders())?;
        let path = layout.renders().join(format!("grid.{}", format.extension()));
        write_image(&img, &path, format)?;
        outcome.grid = Some(path);
    }
    Ok(outcome)
}
