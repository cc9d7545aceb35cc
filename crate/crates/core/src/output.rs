//! Files written by a run: report.json, profile.csv, gradient.svg,
//! difference.svg and segmentation.png.

use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gradient::{DensityProfile, GradientFit, ProfilePeak};
use crate::pipeline::PipelineOutput;
use crate::regions::{RegionLabel, RegionSet, ResidualSeries};
use crate::segmentation::SegmentationMap;

pub const PROFILE_CSV_HEADER: &str = "distance_km,mean_density,count,q25,q75";

/// RGB for display labels 0..=4: discarded urban, water, terrain, urban,
/// center.
pub const SEGMENTATION_PALETTE: [[u8; 3]; 5] = [
    [160, 160, 160],
    [40, 90, 200],
    [120, 170, 80],
    [230, 140, 40],
    [200, 20, 20],
];

pub fn profile_csv(p: &DensityProfile) -> String {
    let mut s = String::from(PROFILE_CSV_HEADER);
    s.push('\n');
    for i in 0..p.len() {
        writeln!(
            s,
            "{},{},{},{},{}",
            p.bin_distance_km[i], p.mean_density[i], p.pixel_count[i], p.q25[i], p.q75[i]
        )
        .unwrap();
    }
    s
}

const W: f64 = 800.0;
const H: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

/// Linear map from data space to the plot area.
struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        let (x1, y1) = (if x1 > x0 { x1 } else { x0 + 1.0 }, if y1 > y0 { y1 } else { y0 + 1.0 });
        let pad = 0.05 * (y1 - y0);
        Frame { x0, x1, y0: y0 - pad, y1: y1 + pad }
    }

    fn x(&self, v: f64) -> f64 {
        LEFT + (v - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn y(&self, v: f64) -> f64 {
        H - BOTTOM - (v - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }
}

fn svg_open(s: &mut String, title: &str) {
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{title}</text>"#, W / 2.0).unwrap();
}

fn axes(s: &mut String, f: &Frame, xlabel: &str, ylabel: &str) {
    let (bx, by) = (LEFT, H - BOTTOM);
    writeln!(
        s,
        r#"<path d="M{bx} {TOP} V{by} H{}" fill="none" stroke="black"/>"#,
        W - RIGHT
    )
    .unwrap();
    for i in 0..=5 {
        let t = i as f64 / 5.0;
        let xv = f.x0 + t * (f.x1 - f.x0);
        let yv = f.y0 + t * (f.y1 - f.y0);
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{:.2}</text>"#,
            f.x(xv),
            by + 18.0,
            xv
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{:.3}</text>"#,
            bx - 6.0,
            f.y(yv) + 4.0,
            yv
        )
        .unwrap();
    }
    writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">{xlabel}</text>"#, (LEFT + W - RIGHT) / 2.0, H - 10.0).unwrap();
    writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{ylabel}</text>"#,
        (TOP + H - BOTTOM) / 2.0,
        (TOP + H - BOTTOM) / 2.0
    )
    .unwrap();
}

/// Profile means, interquartile band, fitted line and peaks.
pub fn gradient_svg(p: &DensityProfile, fit: &GradientFit, peaks: &[ProfilePeak]) -> String {
    let d_max = p.bin_distance_km.last().copied().unwrap_or(0.0);
    let d_min = p.bin_distance_km.first().copied().unwrap_or(0.0);
    let lo = p.q25.iter().chain(&p.mean_density).copied().fold(f64::INFINITY, f64::min);
    let hi = p.q75.iter().chain(&p.mean_density).copied().fold(f64::NEG_INFINITY, f64::max);
    let (line0, line1) = (fit.predict(d_min), fit.predict(d_max));
    let f = Frame::new(d_min, d_max, lo.min(line0).min(line1), hi.max(line0).max(line1));

    let mut s = String::new();
    svg_open(&mut s, "Density gradient");
    axes(&mut s, &f, "distance to nearest center (km)", "density");

    if !p.is_empty() {
        let mut d = String::new();
        for (i, &x) in p.bin_distance_km.iter().enumerate() {
            write!(d, "{}{:.2} {:.2} ", if i == 0 { 'M' } else { 'L' }, f.x(x), f.y(p.q75[i])).unwrap();
        }
        for (i, &x) in p.bin_distance_km.iter().enumerate().rev() {
            write!(d, "L{:.2} {:.2} ", f.x(x), f.y(p.q25[i])).unwrap();
        }
        writeln!(s, r##"<path class="iqr" d="{}Z" fill="#9ecae1" fill-opacity="0.5" stroke="none"/>"##, d).unwrap();
    }
    for (x, y) in p.bin_distance_km.iter().zip(&p.mean_density) {
        writeln!(s, r##"<circle class="point" cx="{:.2}" cy="{:.2}" r="2" fill="#08519c"/>"##, f.x(*x), f.y(*y)).unwrap();
    }
    for (x, y) in &fit.minima_points {
        writeln!(
            s,
            r##"<circle class="minimum" cx="{:.2}" cy="{:.2}" r="4" fill="none" stroke="#31a354"/>"##,
            f.x(*x),
            f.y(*y)
        )
        .unwrap();
    }
    writeln!(
        s,
        r##"<line class="fit" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#e6550d" stroke-width="2"/>"##,
        f.x(d_min),
        f.y(line0),
        f.x(d_max),
        f.y(line1)
    )
    .unwrap();
    for pk in peaks {
        let (x, y) = (f.x(pk.distance_km), f.y(pk.density));
        writeln!(
            s,
            r##"<path class="peak" d="M{:.2} {:.2} l-6 -10 h12 Z" fill="#de2d26"/>"##,
            x,
            y - 4.0
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="end">alpha = {:.5} /km, r2 = {:.3}</text>"#,
        W - RIGHT - 6.0,
        TOP + 14.0,
        fit.alpha,
        fit.r_squared
    )
    .unwrap();
    s.push_str("</svg>\n");
    s
}

/// Residuals over green (uniform) and red (variation) region bands.
pub fn difference_svg(r: &ResidualSeries, rs: Option<&RegionSet>) -> String {
    let d_min = r.distance_km.first().copied().unwrap_or(0.0);
    let d_max = r.distance_km.last().copied().unwrap_or(0.0);
    let lo = r.residual.iter().copied().fold(0.0f64, f64::min);
    let hi = r.residual.iter().copied().fold(0.0f64, f64::max);
    let f = Frame::new(d_min, d_max, lo, hi);

    let mut s = String::new();
    svg_open(&mut s, "Observed minus fitted density");
    if let Some(rs) = rs {
        for reg in &rs.regions {
            let (class, colour) = match reg.label {
                RegionLabel::Uniform => ("band uniform", "#a1d99b"),
                RegionLabel::Variation => ("band variation", "#fc9272"),
            };
            let (x0, x1) = (f.x(reg.start_km), f.x(reg.end_km));
            writeln!(
                s,
                r#"<rect class="{class}" x="{:.2}" y="{TOP}" width="{:.2}" height="{}" fill="{colour}" fill-opacity="0.5"/>"#,
                x0,
                (x1 - x0).max(0.0),
                H - TOP - BOTTOM
            )
            .unwrap();
        }
    }
    axes(&mut s, &f, "distance to nearest center (km)", "residual");
    writeln!(
        s,
        r#"<line class="zero" x1="{LEFT}" y1="{:.2}" x2="{}" y2="{:.2}" stroke="black" stroke-dasharray="4 3"/>"#,
        f.y(0.0),
        W - RIGHT,
        f.y(0.0)
    )
    .unwrap();
    let mut d = String::new();
    for (i, (x, y)) in r.distance_km.iter().zip(&r.residual).enumerate() {
        write!(d, "{}{:.2} {:.2} ", if i == 0 { 'M' } else { 'L' }, f.x(*x), f.y(*y)).unwrap();
    }
    if !d.is_empty() {
        writeln!(s, r#"<path class="residual" d="{}" fill="none" stroke="black" stroke-width="1.2"/>"#, d.trim_end()).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Indexed-colour PNG of the display labels.
pub fn write_segmentation_png(seg: &SegmentationMap, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), seg.width as u32, seg.height as u32);
    enc.set_color(png::ColorType::Indexed);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_palette(SEGMENTATION_PALETTE.concat());
    let encode_err = |e: png::EncodingError| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = enc.write_header().map_err(encode_err)?;
    w.write_image_data(&seg.display_labels()).map_err(encode_err)?;
    w.finish().map_err(encode_err)?;
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes all run artefacts into `dir`, creating it if needed.
pub fn emit_outputs(out: &PipelineOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join("report.json"), &out.report.to_json())?;
    write(&dir.join("profile.csv"), &profile_csv(&out.profile))?;
    write(
        &dir.join("gradient.svg"),
        &gradient_svg(&out.profile, &out.fit, &out.report.gradient.peaks),
    )?;
    if let Some(r) = &out.residuals {
        write(&dir.join("difference.svg"), &difference_svg(r, out.report.regions.as_ref()))?;
    }
    write_segmentation_png(&out.segmentation, &dir.join("segmentation.png"))?;
    Ok(())
}
