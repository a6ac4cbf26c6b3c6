//! Files written for people: metric tables, SVG figures and heatmap PNGs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;
use smerf_core::metrics::{AggregateRecord, MetricRecord, SaturationPoint};
use smerf_core::reasoning::ReasoningKind;
use smerf_core::saliency::Method;
use smerf_core::{Error, Result};

use crate::stages::AttributionInputs;
use crate::store::{self, DumpEntry, DumpOutcome};

const GRID_COLUMNS: usize = 4;
const TILE: usize = 64;
const GAP: usize = 2;

#[derive(Serialize)]
struct MetricRow<'a> {
    reasoning: &'a str,
    method: &'a str,
    bucket: u8,
    image: usize,
    pafl: f64,
    safl: f64,
    background: f64,
    pmafl: f64,
    smafl: Option<f64>,
    piou: f64,
    siou: f64,
    object_count: usize,
    dual_feature: bool,
    weak_evidence: bool,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(csv_err)
}

pub fn write_metric_files(dir: &Path, records: &[MetricRecord], aggregates: &[AggregateRecord]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv_writer(&dir.join("metrics.csv"))?;
    for r in records {
        w.serialize(MetricRow {
            reasoning: r.reasoning.name(),
            method: r.method.name(),
            bucket: r.bucket,
            image: r.image,
            pafl: r.pafl,
            safl: r.safl,
            background: r.background,
            pmafl: r.pmafl,
            smafl: r.smafl,
            piou: r.piou,
            siou: r.siou,
            object_count: r.object_count,
            dual_feature: r.dual_feature,
            weak_evidence: r.weak_evidence,
        })
        .map_err(csv_err)?;
    }
    w.flush()?;
    store::write_json(&dir.join("aggregate.json"), &aggregates)?;

    let mut w = csv_writer(&dir.join("success_matrix.csv"))?;
    w.write_record(["reasoning", "method", "success_fraction", "success_fraction_strong", "min_bucket_pafl"]).map_err(csv_err)?;
    for a in aggregates {
        let strong = a.success_fraction_strong.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([
            a.reasoning.name(),
            a.method.name(),
            &a.success_fraction.to_string(),
            &strong,
            &a.min_bucket_pafl.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;

    let mut w = csv_writer(&dir.join("failure_matrix.csv"))?;
    w.write_record(["reasoning", "method", "wrong_focus_fraction", "wrong_focus", "degenerate"]).map_err(csv_err)?;
    for a in aggregates {
        w.write_record([
            a.reasoning.name(),
            a.method.name(),
            &a.wrong_focus_fraction.to_string(),
            &a.wrong_focus.to_string(),
            &a.degenerate.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;

    let mut w = csv_writer(&dir.join("saturation.csv"))?;
    w.write_record(["reasoning", "method", "objects", "buckets", "pafl", "safl"]).map_err(csv_err)?;
    for p in smerf_core::metrics::saturation_curve(aggregates) {
        w.write_record([
            p.reasoning.name(),
            p.method.name(),
            &p.objects.to_string(),
            &p.buckets.to_string(),
            &p.pafl.to_string(),
            &p.safl.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn color(v: f64) -> [u8; 3] {
    let c = |x: f64| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
    [c(3.0 * v), c(3.0 * v - 1.0), c(3.0 * v - 2.0)]
}

fn write_png(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, width as u32, height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| Error::Io(std::io::Error::other(e)))?;
    w.write_image_data(rgb).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    Ok(())
}

/// One PNG per method: a row per bucket, each cell the input next to its map.
pub fn write_heatmap_grids(dir: &Path, inputs: &AttributionInputs, entries: &[DumpEntry]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut maps: BTreeMap<(Method, u8, usize), &[f32]> = BTreeMap::new();
    for e in entries {
        if let DumpOutcome::Map(v) = &e.outcome {
            maps.insert((e.method, e.bucket, e.image), v);
        }
    }
    let methods: Vec<Method> = {
        let mut m: Vec<Method> = entries.iter().map(|e| e.method).collect();
        m.dedup();
        m.sort();
        m.dedup();
        m
    };
    let rows = inputs.buckets.len();
    let columns = inputs.buckets.iter().map(|(_, s)| s.len()).max().unwrap_or(0).clamp(1, GRID_COLUMNS);
    let width = columns * (2 * TILE + GAP) + GAP;
    let height = rows * (TILE + GAP) + GAP;
    let mut written = Vec::new();
    for method in methods {
        let mut rgb = vec![255u8; width * height * 3];
        for (row, (bucket, scenes)) in inputs.buckets.iter().enumerate() {
            for (col, scene) in scenes.iter().take(columns).enumerate() {
                let y0 = GAP + row * (TILE + GAP);
                let x0 = GAP + col * (2 * TILE + GAP);
                let px = scene.render().pixels;
                let data = px.data();
                let map = maps.get(&(method, bucket.id, col));
                let peak = map.map(|m| m.iter().fold(0.0f32, |a, &v| a.max(v))).unwrap_or(0.0);
                for y in 0..TILE {
                    for x in 0..TILE {
                        let at = |xx: usize| ((y0 + y) * width + xx) * 3;
                        for ch in 0..3 {
                            rgb[at(x0 + x) + ch] = (data[ch * TILE * TILE + y * TILE + x].clamp(0.0, 1.0) * 255.0).round() as u8;
                        }
                        let v = match map {
                            Some(m) if peak > 0.0 => (m[y * TILE + x] / peak) as f64,
                            _ => 0.0,
                        };
                        rgb[at(x0 + TILE + x)..at(x0 + TILE + x) + 3].copy_from_slice(&color(v));
                    }
                }
            }
        }
        let path = dir.join(format!("{}.png", method.name()));
        write_png(&path, width, height, &rgb)?;
        written.push(path);
    }
    Ok(written)
}

struct Svg {
    body: String,
    width: f64,
    height: f64,
}

impl Svg {
    fn new(width: f64, height: f64, title: &str) -> Svg {
        let mut body = String::new();
        let _ = writeln!(body, r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#, width / 2.0, escape(title));
        Svg { body, width, height }
    }

    fn push(&mut self, s: String) {
        self.body.push_str(&s);
        self.body.push('\n');
    }

    fn save(self, path: &Path) -> Result<PathBuf> {
        let text = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        );
        fs::write(path, text)?;
        Ok(path.to_path_buf())
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

const LEFT: f64 = 50.0;
const TOP: f64 = 30.0;
const PLOT_H: f64 = 220.0;
const BOTTOM: f64 = 130.0;

fn y_of(v: f64) -> f64 {
    TOP + PLOT_H * (1.0 - v.clamp(0.0, 1.0))
}

fn axes(svg: &mut Svg, plot_w: f64) {
    svg.push(format!(r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}" stroke="black"/>"#, TOP + PLOT_H));
    svg.push(format!(r#"<line x1="{LEFT}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#, TOP + PLOT_H, LEFT + plot_w));
    for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let y = y_of(t);
        svg.push(format!(r#"<text x="{}" y="{}" text-anchor="end" font-size="10">{t}</text>"#, LEFT - 4.0, y + 3.0));
        svg.push(format!(r##"<line x1="{LEFT}" y1="{y}" x2="{}" y2="{y}" stroke="#ddd"/>"##, LEFT + plot_w));
    }
}

fn x_label(svg: &mut Svg, x: f64, label: &str) {
    let y = TOP + PLOT_H + 8.0;
    svg.push(format!(
        r#"<text x="{x}" y="{y}" font-size="10" transform="rotate(60 {x} {y})">{}</text>"#,
        escape(label)
    ));
}

fn bar_chart(path: &Path, reasoning: ReasoningKind, aggs: &[AggregateRecord]) -> Result<PathBuf> {
    let slot = 36.0;
    let plot_w = slot * aggs.len().max(1) as f64;
    let mut svg = Svg::new(LEFT + plot_w + 20.0, TOP + PLOT_H + BOTTOM, &format!("{reasoning}: PAFL and SAFL by method"));
    axes(&mut svg, plot_w);
    for (i, a) in aggs.iter().enumerate() {
        let x = LEFT + slot * i as f64 + 4.0;
        for (k, (name, stat, fill)) in
            [("pafl", a.mean_by_bucket.pafl, "#3b6fb6"), ("safl", a.mean_by_bucket.safl, "#d9822b")].into_iter().enumerate()
        {
            let bx = x + 14.0 * k as f64;
            let top = y_of(stat.mean);
            svg.push(format!(
                r#"<rect x="{bx}" y="{top}" width="12" height="{}" fill="{fill}" data-method="{}" data-metric="{name}" data-value="{}" data-std="{}"/>"#,
                TOP + PLOT_H - top,
                a.method.name(),
                stat.mean,
                stat.std
            ));
            let (lo, hi) = (y_of(stat.mean - stat.std), y_of(stat.mean + stat.std));
            svg.push(format!(r#"<line x1="{0}" y1="{lo}" x2="{0}" y2="{hi}" stroke="black"/>"#, bx + 6.0));
        }
        x_label(&mut svg, x + 8.0, a.method.name());
    }
    svg.save(path)
}

fn min_pafl_chart(path: &Path, reasoning: ReasoningKind, aggs: &[AggregateRecord]) -> Result<PathBuf> {
    let slot = 36.0;
    let plot_w = slot * aggs.len().max(1) as f64;
    let mut svg = Svg::new(LEFT + plot_w + 20.0, TOP + PLOT_H + BOTTOM, &format!("{reasoning}: lowest bucket PAFL"));
    axes(&mut svg, plot_w);
    for (i, a) in aggs.iter().enumerate() {
        let x = LEFT + slot * i as f64 + slot / 2.0;
        svg.push(format!(
            r##"<circle cx="{x}" cy="{}" r="4" fill="#3b6fb6" data-method="{}" data-value="{}"/>"##,
            y_of(a.min_bucket_pafl),
            a.method.name(),
            a.min_bucket_pafl
        ));
        x_label(&mut svg, x, a.method.name());
    }
    svg.save(path)
}

fn saturation_chart(path: &Path, reasoning: ReasoningKind, points: &[SaturationPoint]) -> Result<PathBuf> {
    let mut by_method: BTreeMap<Method, Vec<&SaturationPoint>> = BTreeMap::new();
    for p in points {
        by_method.entry(p.method).or_default().push(p);
    }
    let plot_w = 300.0;
    let mut svg = Svg::new(LEFT + plot_w + 160.0, TOP + PLOT_H + 50.0, &format!("{reasoning}: PAFL by visible objects"));
    axes(&mut svg, plot_w);
    let x_of = |objects: usize| LEFT + 20.0 + (objects.saturating_sub(1) as f64) * (plot_w - 40.0) / 2.0;
    for n in 1..=3 {
        svg.push(format!(r#"<text x="{}" y="{}" text-anchor="middle" font-size="10">{n}</text>"#, x_of(n), TOP + PLOT_H + 14.0));
    }
    for (i, (method, pts)) in by_method.iter().enumerate() {
        let hue = (i * 360 / by_method.len().max(1)) as f64;
        let stroke = format!("hsl({hue},65%,45%)");
        let coords: Vec<String> = pts.iter().map(|p| format!("{},{}", x_of(p.objects), y_of(p.pafl))).collect();
        svg.push(format!(
            r#"<polyline points="{}" fill="none" stroke="{stroke}" data-method="{}"/>"#,
            coords.join(" "),
            method.name()
        ));
        for p in pts {
            svg.push(format!(
                r#"<circle cx="{}" cy="{}" r="2.5" fill="{stroke}" data-method="{}" data-objects="{}" data-value="{}"/>"#,
                x_of(p.objects),
                y_of(p.pafl),
                method.name(),
                p.objects,
                p.pafl
            ));
        }
        let ly = TOP + 12.0 * i as f64;
        svg.push(format!(r#"<text x="{}" y="{ly}" font-size="10" fill="{stroke}">{}</text>"#, LEFT + plot_w + 10.0, method.name()));
    }
    svg.save(path)
}

pub fn write_reasoning_figures(
    dir: &Path,
    reasoning: ReasoningKind,
    aggs: &[AggregateRecord],
    saturation: &[SaturationPoint],
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    Ok(vec![
        bar_chart(&dir.join("pafl_safl.svg"), reasoning, aggs)?,
        min_pafl_chart(&dir.join("min_pafl.svg"), reasoning, aggs)?,
        saturation_chart(&dir.join("saturation.svg"), reasoning, saturation)?,
    ])
}

type Matrix = BTreeMap<Method, BTreeMap<ReasoningKind, f64>>;

fn matrix(aggs: &[AggregateRecord], f: fn(&AggregateRecord) -> f64) -> Matrix {
    let mut m = Matrix::new();
    for a in aggs {
        m.entry(a.method).or_default().insert(a.reasoning, f(a));
    }
    m
}

fn write_matrix_csv(path: &Path, columns: &[ReasoningKind], m: &Matrix) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["method".to_string()];
    header.extend(columns.iter().map(|r| r.name().to_string()));
    w.write_record(&header).map_err(csv_err)?;
    for (method, row) in m {
        let mut rec = vec![method.name().to_string()];
        rec.extend(columns.iter().map(|r| row.get(r).map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn heatmap(path: &Path, title: &str, columns: &[ReasoningKind], m: &Matrix) -> Result<PathBuf> {
    let (cell_w, cell_h, left, top) = (80.0, 18.0, 150.0, 50.0);
    let mut svg = Svg::new(left + cell_w * columns.len() as f64 + 20.0, top + cell_h * m.len() as f64 + 20.0, title);
    for (j, r) in columns.iter().enumerate() {
        svg.push(format!(
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="10">{}</text>"#,
            left + cell_w * (j as f64 + 0.5),
            top - 6.0,
            r.name()
        ));
    }
    for (i, (method, row)) in m.iter().enumerate() {
        let y = top + cell_h * i as f64;
        svg.push(format!(r#"<text x="{}" y="{}" text-anchor="end" font-size="10">{}</text>"#, left - 6.0, y + 13.0, method.name()));
        for (j, r) in columns.iter().enumerate() {
            let x = left + cell_w * j as f64;
            match row.get(r) {
                Some(&v) => {
                    let shade = (255.0 * (1.0 - v.clamp(0.0, 1.0))).round() as u8;
                    svg.push(format!(
                        r#"<rect x="{x}" y="{y}" width="{cell_w}" height="{cell_h}" fill="rgb({shade},{shade},255)" data-method="{}" data-reasoning="{}" data-value="{v}"/>"#,
                        method.name(),
                        r.name()
                    ));
                    svg.push(format!(
                        r#"<text x="{}" y="{}" text-anchor="middle" font-size="10">{v:.2}</text>"#,
                        x + cell_w / 2.0,
                        y + 13.0
                    ));
                }
                None => svg.push(format!(r##"<rect x="{x}" y="{y}" width="{cell_w}" height="{cell_h}" fill="#eee"/>"##)),
            }
        }
    }
    svg.save(path)
}

fn cross_min_pafl(path: &Path, columns: &[ReasoningKind], m: &Matrix) -> Result<PathBuf> {
    let slot = 80.0;
    let plot_w = slot * columns.len() as f64;
    let mut svg = Svg::new(LEFT + plot_w + 160.0, TOP + PLOT_H + BOTTOM, "Lowest bucket PAFL per reasoning type");
    axes(&mut svg, plot_w);
    for (j, r) in columns.iter().enumerate() {
        x_label(&mut svg, LEFT + slot * (j as f64 + 0.5), r.name());
    }
    for (i, (method, row)) in m.iter().enumerate() {
        let hue = (i * 360 / m.len().max(1)) as f64;
        let fill = format!("hsl({hue},65%,45%)");
        for (j, r) in columns.iter().enumerate() {
            if let Some(&v) = row.get(r) {
                let x = LEFT + slot * (j as f64 + 0.5) + (i as f64 - m.len() as f64 / 2.0) * 3.0;
                svg.push(format!(
                    r#"<circle cx="{x}" cy="{}" r="3" fill="{fill}" data-method="{}" data-reasoning="{}" data-value="{v}"/>"#,
                    y_of(v),
                    method.name(),
                    r.name()
                ));
            }
        }
        svg.push(format!(
            r#"<text x="{}" y="{}" font-size="10" fill="{fill}">{}</text>"#,
            LEFT + plot_w + 10.0,
            TOP + 12.0 * i as f64,
            method.name()
        ));
    }
    svg.save(path)
}

/// Matrices and figures comparing methods across reasoning types.
pub fn write_summary(dir: &Path, aggs: &[AggregateRecord]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let columns: Vec<ReasoningKind> = ReasoningKind::ALL.into_iter().filter(|r| aggs.iter().any(|a| a.reasoning == *r)).collect();
    let success = matrix(aggs, |a| a.success_fraction);
    let failure = matrix(aggs, |a| a.wrong_focus_fraction);
    let min_pafl = matrix(aggs, |a| a.min_bucket_pafl);
    write_matrix_csv(&dir.join("success_matrix.csv"), &columns, &success)?;
    write_matrix_csv(&dir.join("failure_matrix.csv"), &columns, &failure)?;
    write_matrix_csv(&dir.join("min_pafl_matrix.csv"), &columns, &min_pafl)?;
    let mut written = vec![dir.join("success_matrix.csv"), dir.join("failure_matrix.csv"), dir.join("min_pafl_matrix.csv")];
    written.push(heatmap(&dir.join("success_heatmap.svg"), "Fraction of dual-feature buckets with PAFL above 0.5", &columns, &success)?);
    written.push(heatmap(&dir.join("failure_heatmap.svg"), "Fraction of dual-feature buckets with SAFL above PAFL", &columns, &failure)?);
    written.push(cross_min_pafl(&dir.join("min_pafl.svg"), &columns, &min_pafl)?);
    Ok(written)
}
