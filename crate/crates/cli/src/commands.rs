use std::path::{Path, PathBuf};

use crackseg::dataflow::{self, DataflowConfig, SkipPlacement};
use crackseg::explorer;
use crackseg::io::{container, pnm};
use crackseg::metrics::{self, ConfusionMatrix};
use crackseg::model::{self, ModelConfig, UpsampleMode};
use crackseg::quant;
use crackseg::tensor::Tensor;
use crackseg::{Error, Result};

use crate::config::RunConfig;

fn argmax_mask(logits: &Tensor) -> pnm::Mask {
    let s = logits.shape;
    let mut data = Vec::with_capacity(s.h * s.w);
    for y in 0..s.h {
        for x in 0..s.w {
            data.push((logits.at(0, 1, y, x) > logits.at(0, 0, y, x)) as u8);
        }
    }
    pnm::Mask { h: s.h, w: s.w, data }
}

/// Sorted image files (.ppm/.pgm) under a directory, or the single file.
fn image_list(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(p.extension().and_then(|e| e.to_str()), Some("ppm") | Some("pgm"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Parse(format!("no .ppm/.pgm images under {}", path.display())));
    }
    Ok(files)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, contents)?;
    Ok(())
}

pub fn build(
    config: Option<&Path>,
    c: Option<usize>,
    upsample: Option<String>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let mut cfg = RunConfig::load(config, &["c", "upsample", "seed", "out"])?;
    let c = cfg.require("c", c)?;
    let upsample = cfg.resolve("upsample", upsample, "tconv".to_string())?;
    let seed = cfg.resolve("seed", seed, 0u64)?;
    let out: PathBuf = cfg.require("out", out.map(|p| p.display().to_string()))?.into();
    cfg.print_resolved("build");

    let mode = match upsample.as_str() {
        "tconv" => UpsampleMode::Tconv,
        "nearest" => UpsampleMode::Nearest,
        other => return Err(Error::Config(format!("unknown upsample mode '{other}'"))),
    };
    let model_cfg = ModelConfig::new(c, mode)?;
    let graph = model::init_params(model::build_model(model_cfg)?, seed);
    container::save_model(&out, &graph)?;
    let stats = model::count_stats(&graph, model_cfg.input_hw)?;
    let report = format!(
        "model c={c} upsample={upsample} seed={seed}\n\
         params {:.3}M ({})\n\
         GOPs {:.2} (macs {}) at {}x{}\n",
        stats.param_count as f64 / 1e6,
        stats.param_count,
        stats.gops,
        stats.mac_count,
        model_cfg.input_hw.0,
        model_cfg.input_hw.1,
    );
    print!("{report}");
    write_file(&out.with_extension("stats.txt"), &report)?;
    Ok(())
}

pub fn infer(
    config: Option<&Path>,
    model: Option<PathBuf>,
    images: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    logits_dir: Option<PathBuf>,
) -> Result<()> {
    let mut cfg = RunConfig::load(config, &["model", "images", "out-dir", "logits-dir"])?;
    let model: PathBuf = cfg.require("model", model.map(|p| p.display().to_string()))?.into();
    let images: PathBuf = cfg.require("images", images.map(|p| p.display().to_string()))?.into();
    let out_dir: PathBuf = cfg.require("out-dir", out_dir.map(|p| p.display().to_string()))?.into();
    let logits_dir = cfg
        .resolve_opt("logits-dir", logits_dir.map(|p| p.display().to_string()))?
        .map(PathBuf::from);
    cfg.print_resolved("infer");

    let graph = container::load_model(&model)?;
    std::fs::create_dir_all(&out_dir)?;
    if let Some(dir) = &logits_dir {
        std::fs::create_dir_all(dir)?;
    }
    for path in image_list(&images)? {
        let image = pnm::load_image(&path)?;
        let logits = model::forward(&graph, &image)?;
        let stem = path.file_stem().unwrap().to_string_lossy().to_string();
        pnm::write_mask(&out_dir.join(format!("{stem}.pgm")), &argmax_mask(&logits))?;
        if let Some(dir) = &logits_dir {
            let bytes: Vec<u8> =
                logits.as_f32()?.iter().flat_map(|v| v.to_le_bytes()).collect();
            std::fs::write(dir.join(format!("{stem}.bin")), bytes)?;
        }
        println!("inferred {stem} ({}x{})", logits.shape.h, logits.shape.w);
    }
    Ok(())
}

pub fn quantize(
    config: Option<&Path>,
    model: Option<PathBuf>,
    calib_dir: Option<PathBuf>,
    weight_bits: Option<u8>,
    out: Option<PathBuf>,
) -> Result<()> {
    let mut cfg = RunConfig::load(config, &["model", "calib-dir", "weight-bits", "out"])?;
    let model: PathBuf = cfg.require("model", model.map(|p| p.display().to_string()))?.into();
    let calib_dir: PathBuf =
        cfg.require("calib-dir", calib_dir.map(|p| p.display().to_string()))?.into();
    let weight_bits = cfg.resolve("weight-bits", weight_bits, 8u8)?;
    let out: PathBuf = cfg.require("out", out.map(|p| p.display().to_string()))?.into();
    cfg.print_resolved("quantize");

    let graph = container::load_model(&model)?;
    let folded = quant::fold_bn(&graph)?;
    let calib: Vec<Tensor> = image_list(&calib_dir)?
        .iter()
        .map(|p| pnm::load_image(p))
        .collect::<Result<_>>()?;
    let stats = quant::calibrate(&folded, &calib)?;
    let qg = quant::quantize_model(&folded, &stats, weight_bits)?;
    container::write_container(&out, &quant::quantized_to_container(&qg))?;
    let report = format!(
        "calibration images: {}\nweight precision: int{weight_bits}\n\
         saturated weights: {} of {} ({:.4}%)\n",
        calib.len(),
        qg.saturation.saturated,
        qg.saturation.total,
        100.0 * qg.saturation.fraction(),
    );
    print!("{report}");
    write_file(&out.with_extension("saturation.txt"), &report)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn simulate(
    config: Option<&Path>,
    model: Option<PathBuf>,
    input: Option<PathBuf>,
    skip: Option<String>,
    clock_mhz: Option<f64>,
    frames: Option<usize>,
    report_csv: Option<PathBuf>,
    plan_dump: Option<PathBuf>,
    verify: bool,
) -> Result<()> {
    let mut cfg = RunConfig::load(
        config,
        &["model", "input", "skip", "clock-mhz", "frames", "report-csv", "plan-dump"],
    )?;
    let model: PathBuf = cfg.require("model", model.map(|p| p.display().to_string()))?.into();
    let input: PathBuf = cfg.require("input", input.map(|p| p.display().to_string()))?.into();
    let skip = cfg.resolve("skip", skip, "on_chip".to_string())?;
    let clock_mhz = cfg.resolve("clock-mhz", clock_mhz, 300.0f64)?;
    let frames = cfg.resolve("frames", frames, 1usize)?;
    let report_csv = cfg
        .resolve_opt("report-csv", report_csv.map(|p| p.display().to_string()))?
        .map(PathBuf::from);
    let plan_dump_path = cfg
        .resolve_opt("plan-dump", plan_dump.map(|p| p.display().to_string()))?
        .map(PathBuf::from);
    cfg.print_resolved("simulate");

    let placement = match skip.as_str() {
        "on_chip" => SkipPlacement::OnChip,
        "off_chip" => SkipPlacement::OffChip,
        other => return Err(Error::Config(format!("unknown skip placement '{other}'"))),
    };
    if frames == 0 {
        return Err(Error::Config("frames must be >= 1".into()));
    }
    let qg = quant::container_to_quantized(&container::read_container(&model)?)?;
    let image = pnm::load_image(&input)?;
    let q_in = quant::quantize_input(&qg, &image)?;
    let df = DataflowConfig {
        skip_placement: placement,
        clock_mhz,
        ..DataflowConfig::default()
    };
    let plan = dataflow::plan(&qg, &df, (image.shape.h, image.shape.w))?;
    if let Some(path) = &plan_dump_path {
        write_file(path, &dataflow::plan_dump(&plan))?;
    }
    let frame_inputs: Vec<Tensor> = std::iter::repeat_with(|| q_in.clone()).take(frames).collect();
    let (logits, report) = dataflow::simulate_frames(&plan, &frame_inputs)?;
    print!("{}", report.to_text());
    if let Some(path) = &report_csv {
        write_file(path, &report.to_csv())?;
    }
    if verify {
        let want = quant::integer_forward(&qg, &q_in)?;
        for (i, got) in logits.iter().enumerate() {
            let a: Vec<u32> = got.as_f32()?.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = want.as_f32()?.iter().map(|v| v.to_bits()).collect();
            if a != b {
                return Err(Error::Verification(format!(
                    "simulator logits diverge from the integer engine on frame {i}"
                )));
            }
        }
        println!("verified: simulator logits match the integer engine bit-exactly");
    }
    Ok(())
}

pub fn metrics(
    config: Option<&Path>,
    pred_dir: Option<PathBuf>,
    gt_dir: Option<PathBuf>,
    measurements: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let mut cfg = RunConfig::load(config, &["pred-dir", "gt-dir", "measurements", "out"])?;
    let pred_dir = cfg
        .resolve_opt("pred-dir", pred_dir.map(|p| p.display().to_string()))?
        .map(PathBuf::from);
    let gt_dir =
        cfg.resolve_opt("gt-dir", gt_dir.map(|p| p.display().to_string()))?.map(PathBuf::from);
    let measurements = cfg
        .resolve_opt("measurements", measurements.map(|p| p.display().to_string()))?
        .map(PathBuf::from);
    let out: PathBuf = cfg.require("out", out.map(|p| p.display().to_string()))?.into();
    cfg.print_resolved("metrics");

    match (pred_dir, gt_dir, measurements) {
        (Some(pred), Some(gt), None) => score_masks(&pred, &gt, &out),
        (None, None, Some(table)) => energy_table(&table, &out),
        _ => Err(Error::Config(
            "metrics needs either --pred-dir with --gt-dir, or --measurements".into(),
        )),
    }
}

fn score_masks(pred_dir: &Path, gt_dir: &Path, out: &Path) -> Result<()> {
    let mut rows = String::from("name,iou_bg,iou_crack,miou,wiou\n");
    let mut total = ConfusionMatrix::default();
    let mut names: Vec<String> = std::fs::read_dir(gt_dir)
        .map_err(|e| Error::Parse(format!("cannot read {}: {e}", gt_dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("pgm"))
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().to_string()))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Parse(format!("no .pgm masks under {}", gt_dir.display())));
    }
    for name in &names {
        let gt = pnm::load_mask(&gt_dir.join(name))?;
        let pred = pnm::load_mask(&pred_dir.join(name))?;
        if (pred.h, pred.w) != (gt.h, gt.w) {
            return Err(Error::Shape(format!(
                "{name}: prediction {}x{} vs ground truth {}x{}",
                pred.h, pred.w, gt.h, gt.w
            )));
        }
        let cm = metrics::confusion(&pred.data, &gt.data)?;
        total = total.merge(&cm);
        let s = metrics::default_scores(&cm)?;
        rows.push_str(&format!(
            "{name},{:.6},{:.6},{:.6},{:.6}\n",
            s.iou_bg, s.iou_crack, s.miou, s.wiou
        ));
    }
    let s = metrics::default_scores(&total)?;
    rows.push_str(&format!(
        "TOTAL,{:.6},{:.6},{:.6},{:.6}\n",
        s.iou_bg, s.iou_crack, s.miou, s.wiou
    ));
    write_file(out, &rows)?;
    println!(
        "scored {} masks: miou {:.4} wiou {:.4} (micro-averaged)",
        names.len(),
        s.miou,
        s.wiou
    );
    Ok(())
}

fn energy_table(table: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(table)?;
    let rows = explorer::parse_measurement_csv(&text)?;
    let mut csv = String::from("base,device,model_bits,data_bits,fps,idle_w,runtime_w,dyn_eff,rt_eff\n");
    for row in &rows {
        let (dyn_eff, rt_eff) = metrics::energy_efficiency(&row.to_platform_measurement())?;
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{:.2},{:.2}\n",
            row.base,
            row.device,
            row.model_bits,
            row.data_bits,
            row.fps,
            row.idle_w,
            row.runtime_w,
            dyn_eff,
            rt_eff
        ));
    }
    write_file(out, &csv)?;
    println!("derived efficiency columns for {} rows", rows.len());
    Ok(())
}

pub fn pareto(
    config: Option<&Path>,
    points: Option<PathBuf>,
    front_out: Option<PathBuf>,
    svg_out: Option<PathBuf>,
) -> Result<()> {
    let mut cfg = RunConfig::load(config, &["points", "front-out", "svg-out"])?;
    let points: PathBuf = cfg.require("points", points.map(|p| p.display().to_string()))?.into();
    let front_out: PathBuf =
        cfg.require("front-out", front_out.map(|p| p.display().to_string()))?.into();
    let svg_out = cfg
        .resolve_opt("svg-out", svg_out.map(|p| p.display().to_string()))?
        .map(PathBuf::from);
    cfg.print_resolved("pareto");

    let text = std::fs::read_to_string(&points)?;
    let rows = explorer::parse_measurement_csv(&text)?;
    let candidates = explorer::design_points(&rows)?;
    let front = explorer::pareto_front(&candidates)?;
    write_file(&front_out, &explorer::front_to_csv(&front))?;
    if let Some(path) = &svg_out {
        write_file(path, &explorer::render_svg(&candidates, &front))?;
    }
    println!("{} candidate points, {} on the front:", candidates.len(), front.len());
    print!("{}", explorer::render_ascii(&candidates, &front, 72, 18));
    for p in &front {
        println!("  ({:.2}, {:.2}) {}", p.dynamic_eff, p.miou, p.id);
    }
    Ok(())
}
