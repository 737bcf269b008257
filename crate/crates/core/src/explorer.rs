//! Design-space bookkeeping: measurement-table ingestion, two-objective
//! dominance, and the Pareto frontier of dynamic energy efficiency versus
//! mean IoU (both maximized).

use crate::error::{Error, Result};
use crate::metrics::{energy_efficiency, PlatformMeasurement};

/// One candidate design: a model scale on a device at some precision.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignPoint {
    pub id: String,
    pub base: usize,
    pub device: String,
    pub model_bits: String,
    pub data_bits: String,
    /// Frames per joule above idle power.
    pub dynamic_eff: f64,
    /// Mean IoU in percent.
    pub miou: f64,
    pub wiou: Option<f64>,
    pub fps: Option<f64>,
}

/// A transcribed measurement-table row. The efficiency columns are optional:
/// when present they are used verbatim, otherwise they are recomputed from
/// the (fps, idle, runtime) triple.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRow {
    pub base: usize,
    pub device: String,
    pub model_bits: String,
    pub data_bits: String,
    pub wiou: f64,
    pub miou: f64,
    pub fps: f64,
    pub idle_w: f64,
    pub runtime_w: f64,
    pub dyn_eff: Option<f64>,
    pub rt_eff: Option<f64>,
}

impl MeasurementRow {
    pub fn to_platform_measurement(&self) -> PlatformMeasurement {
        PlatformMeasurement {
            device: self.device.clone(),
            model_bits: self.model_bits.clone(),
            data_bits: self.data_bits.clone(),
            fps: self.fps,
            idle_power_w: self.idle_w,
            runtime_power_w: self.runtime_w,
        }
    }
}

pub const MEASUREMENT_CSV_HEADER: &str =
    "base,device,model_bits,data_bits,wiou,miou,fps,idle_w,runtime_w,dyn_eff,rt_eff";

/// Parse a measurement CSV. Column order is fixed; the two trailing
/// efficiency columns may be absent (9-column layout) or empty.
pub fn parse_measurement_csv(text: &str) -> Result<Vec<MeasurementRow>> {
    let mut rows = Vec::new();
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse("measurement csv is empty".into()))?;
    let expected9 = &MEASUREMENT_CSV_HEADER[..MEASUREMENT_CSV_HEADER.rfind(",dyn_eff").unwrap()];
    if header.trim() != MEASUREMENT_CSV_HEADER && header.trim() != expected9 {
        return Err(Error::Parse(format!("unexpected measurement csv header: {header}")));
    }
    for (lineno, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 9 && fields.len() != 11 {
            return Err(Error::Parse(format!(
                "line {}: expected 9 or 11 fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let num = |i: usize, name: &str| -> Result<f64> {
            fields[i].parse::<f64>().map_err(|_| {
                Error::Parse(format!("line {}: bad {name} value '{}'", lineno + 1, fields[i]))
            })
        };
        let opt = |i: usize, name: &str| -> Result<Option<f64>> {
            if fields.len() <= i || fields[i].is_empty() {
                Ok(None)
            } else {
                num(i, name).map(Some)
            }
        };
        rows.push(MeasurementRow {
            base: fields[0].parse().map_err(|_| {
                Error::Parse(format!("line {}: bad base '{}'", lineno + 1, fields[0]))
            })?,
            device: fields[1].to_string(),
            model_bits: fields[2].to_string(),
            data_bits: fields[3].to_string(),
            wiou: num(4, "wiou")?,
            miou: num(5, "miou")?,
            fps: num(6, "fps")?,
            idle_w: num(7, "idle_w")?,
            runtime_w: num(8, "runtime_w")?,
            dyn_eff: opt(9, "dyn_eff")?,
            rt_eff: opt(10, "rt_eff")?,
        });
    }
    Ok(rows)
}

/// Turn measurement rows into design points, preferring transcribed
/// efficiency values and recomputing from the power triple otherwise.
pub fn design_points(rows: &[MeasurementRow]) -> Result<Vec<DesignPoint>> {
    rows.iter()
        .map(|r| {
            let dynamic_eff = match r.dyn_eff {
                Some(v) => v,
                None => energy_efficiency(&r.to_platform_measurement())?.0,
            };
            if dynamic_eff <= 0.0 {
                return Err(Error::InvalidParam(format!(
                    "dynamic efficiency must be > 0, got {dynamic_eff}"
                )));
            }
            if !(0.0..=100.0).contains(&r.miou) {
                return Err(Error::InvalidParam(format!(
                    "miou must be within [0, 100], got {}",
                    r.miou
                )));
            }
            Ok(DesignPoint {
                id: format!("{}-base{}-{}-{}", r.device, r.base, r.model_bits, r.data_bits),
                base: r.base,
                device: r.device.clone(),
                model_bits: r.model_bits.clone(),
                data_bits: r.data_bits.clone(),
                dynamic_eff,
                miou: r.miou,
                wiou: Some(r.wiou),
                fps: Some(r.fps),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dominance {
    ADominates,
    BDominates,
    Incomparable,
    Equal,
}

/// Standard two-objective dominance on (dynamic_eff, miou), both maximized.
pub fn dominance(a: &DesignPoint, b: &DesignPoint) -> Dominance {
    let ge = a.dynamic_eff >= b.dynamic_eff && a.miou >= b.miou;
    let le = a.dynamic_eff <= b.dynamic_eff && a.miou <= b.miou;
    match (ge, le) {
        (true, true) => Dominance::Equal,
        (true, false) => Dominance::ADominates,
        (false, true) => Dominance::BDominates,
        (false, false) => Dominance::Incomparable,
    }
}

/// Non-dominated subset, sorted by efficiency ascending. Exact duplicates
/// (same id and coordinates) are deduplicated; distinct points tied on both
/// axes are all kept.
pub fn pareto_front(points: &[DesignPoint]) -> Result<Vec<DesignPoint>> {
    if points.is_empty() {
        return Err(Error::InvalidParam("pareto_front needs at least one point".into()));
    }
    let mut sorted: Vec<&DesignPoint> = points.iter().collect();
    sorted.sort_by(|a, b| {
        b.dynamic_eff
            .partial_cmp(&a.dynamic_eff)
            .unwrap()
            .then(b.miou.partial_cmp(&a.miou).unwrap())
            .then(a.id.cmp(&b.id))
    });
    sorted.dedup_by(|a, b| a.id == b.id && a.dynamic_eff == b.dynamic_eff && a.miou == b.miou);

    // Sweep from highest efficiency down; a point survives iff its miou
    // strictly exceeds everything seen so far, or ties a surviving point on
    // both axes.
    let mut front: Vec<DesignPoint> = Vec::new();
    let mut best_miou = f64::NEG_INFINITY;
    let mut best_eff = f64::NAN;
    for p in sorted {
        if p.miou > best_miou {
            best_miou = p.miou;
            best_eff = p.dynamic_eff;
            front.push(p.clone());
        } else if p.miou == best_miou && p.dynamic_eff == best_eff {
            front.push(p.clone());
        }
    }
    front.sort_by(|a, b| {
        a.dynamic_eff
            .partial_cmp(&b.dynamic_eff)
            .unwrap()
            .then(a.miou.partial_cmp(&b.miou).unwrap())
            .then(a.id.cmp(&b.id))
    });
    Ok(front)
}

pub const FRONT_CSV_HEADER: &str = "id,base,device,model_bits,data_bits,dynamic_eff,miou";

pub fn front_to_csv(front: &[DesignPoint]) -> String {
    let mut out = String::from(FRONT_CSV_HEADER);
    out.push('\n');
    for p in front {
        out.push_str(&format!(
            "{},{},{},{},{},{:.2},{:.2}\n",
            p.id, p.base, p.device, p.model_bits, p.data_bits, p.dynamic_eff, p.miou
        ));
    }
    out
}

/// Scatter plot of all points with the front drawn as a dashed polyline.
/// Efficiency is on a log10 x-axis, mean IoU linear on y.
pub fn render_svg(points: &[DesignPoint], front: &[DesignPoint]) -> String {
    let (w, h, margin) = (800.0, 560.0, 60.0);
    let xs: Vec<f64> = points.iter().map(|p| p.dynamic_eff.log10()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.miou).collect();
    let (x_min, x_max) = bounds(&xs, 0.05);
    let (y_min, y_max) = bounds(&ys, 0.05);
    let px = |v: f64| margin + (v.log10() - x_min) / (x_max - x_min) * (w - 2.0 * margin);
    let py = |v: f64| h - margin - (v - y_min) / (y_max - y_min) * (h - 2.0 * margin);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
         <line x1=\"{m}\" y1=\"{ym}\" x2=\"{xm}\" y2=\"{ym}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{ym}\" stroke=\"black\"/>\n",
        m = margin,
        ym = h - margin,
        xm = w - margin,
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"14\">\
         Dynamic Energy Efficiency [frames/J]</text>\n",
        w / 2.0,
        h - margin / 3.0
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"14\" \
         transform=\"rotate(-90 {x} {y})\">Mean IoU [%]</text>\n",
        margin / 3.0,
        h / 2.0,
        x = margin / 3.0,
        y = h / 2.0
    ));
    if front.len() > 1 {
        let pts: Vec<String> =
            front.iter().map(|p| format!("{:.1},{:.1}", px(p.dynamic_eff), py(p.miou))).collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"gray\" \
             stroke-dasharray=\"6,4\" stroke-width=\"1.5\"/>\n",
            pts.join(" ")
        ));
    }
    for p in points {
        let on_front =
            front.iter().any(|f| f.id == p.id && f.dynamic_eff == p.dynamic_eff && f.miou == p.miou);
        let color = if on_front { "crimson" } else { "steelblue" };
        svg.push_str(&format!(
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"4\" fill=\"{color}\">\
             <title>{} ({:.2}, {:.2})</title></circle>\n",
            px(p.dynamic_eff),
            py(p.miou),
            p.id,
            p.dynamic_eff,
            p.miou
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Coarse terminal rendering: '*' for points, 'O' for front members.
pub fn render_ascii(points: &[DesignPoint], front: &[DesignPoint], cols: usize, rows: usize) -> String {
    let xs: Vec<f64> = points.iter().map(|p| p.dynamic_eff.log10()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.miou).collect();
    let (x_min, x_max) = bounds(&xs, 0.0);
    let (y_min, y_max) = bounds(&ys, 0.0);
    let mut grid = vec![vec![b' '; cols]; rows];
    let place = |grid: &mut Vec<Vec<u8>>, p: &DesignPoint, ch: u8| {
        let cx = if x_max > x_min {
            ((p.dynamic_eff.log10() - x_min) / (x_max - x_min) * (cols - 1) as f64).round() as usize
        } else {
            0
        };
        let cy = if y_max > y_min {
            ((p.miou - y_min) / (y_max - y_min) * (rows - 1) as f64).round() as usize
        } else {
            0
        };
        grid[rows - 1 - cy][cx] = ch;
    };
    for p in points {
        place(&mut grid, p, b'*');
    }
    for p in front {
        place(&mut grid, p, b'O');
    }
    let mut out = String::new();
    for row in grid {
        out.push_str(std::str::from_utf8(&row).unwrap());
        out.push('\n');
    }
    out.push_str(&format!(
        "x: {:.2}..{:.2} frames/J (log scale)  y: {:.2}..{:.2} mIoU%  O = front\n",
        10f64.powf(x_min),
        10f64.powf(x_max),
        y_min,
        y_max
    ));
    out
}

fn bounds(values: &[f64], pad_frac: f64) -> (f64, f64) {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (max - min).max(1e-9);
    (min - span * pad_frac, max + span * pad_frac)
}
