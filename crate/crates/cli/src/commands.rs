use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use segbench::metrics::{evaluate_case_with, CaseMetrics, EvalOptions, HausdorffMode};
use segbench::nrrd::{read_mask, read_volume, write_mask, write_volume, Encoding};
use segbench::phantom::{generate, plan_cohort, CohortEntry, CohortVariation, PhantomSpec};
use segbench::pipeline::{
    localizers, offset_sweep, patch_size_sweep, run_pipeline, segmenters, CaseInput, DEFAULT_ROI, DEFAULT_SWEEP_DEPTH,
};
use segbench::postprocess::mask_ops;
use segbench::preprocess::{parse_augmentation_config, volume_ops, AugmentationMode, AugmentationPipeline, Axis};
use segbench::quality::{assess_quality, quality_distribution, QualityReport, DEFAULT_MARGIN};
use segbench::report::{
    fmt_opt, read_case_metrics_csv, read_quality_csv, read_summary_csv, read_team_attributes, team_from_rows,
    write_case_metrics_csv, write_case_metrics_json, write_json, write_leaderboard_csv, write_manifest_csv,
    write_offset_curve_csv, write_patch_curve_csv, write_quality_csv, Correlation, RankReport,
};
use segbench::stats::{build_leaderboard, compare_groups, correlate, Leaderboard, Metric};
use segbench::{Dims, Spacing};

use crate::config::{self, RunConfig};
use crate::{
    ApplyArgs, AugmentArgs, Cli, Command, EvaluateArgs, ExperimentCommand, Format, OffsetArgs, Outcome, PatchSizeArgs,
    PipelineArgs, PostprocessArgs, PreprocessCommand, QualityArgs, RankArgs, SynthArgs, Usage,
};

const DEFAULT_OFFSETS: [f64; 9] = [0.0, 25.0, 50.0, 75.0, 100.0, 125.0, 150.0, 175.0, 200.0];
const DEFAULT_PATCH_SIZES: [(usize, usize); 6] =
    [(400, 400), (368, 352), (336, 304), (304, 256), (272, 208), (240, 160)];
const DEFAULT_COHORT: usize = 54;

struct Ctx {
    seed: u64,
    format: Format,
    cfg: RunConfig,
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(Usage(msg.into()))
}

pub fn run(cli: Cli) -> Result<Outcome> {
    let cfg = match &cli.config {
        Some(p) => config::load(p).map_err(|e| usage(format!("{e:#}")))?,
        None => RunConfig::default(),
    };
    let jobs = cli.jobs.or(cfg.jobs).unwrap_or(0);
    let ctx = Ctx {
        seed: cli.seed.or(cfg.seed).unwrap_or(0),
        format: cli.format.or(cfg.format).unwrap_or(Format::Csv),
        cfg,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("cannot start worker pool")?;
    pool.install(|| match cli.command {
        Command::Evaluate(a) => evaluate(&ctx, a),
        Command::Rank(a) => rank(&ctx, a),
        Command::Quality(a) => quality(&ctx, a),
        Command::Preprocess(PreprocessCommand::Apply(a)) => preprocess_apply(a),
        Command::Preprocess(PreprocessCommand::Augment(a)) => preprocess_augment(&ctx, a),
        Command::Postprocess(a) => postprocess(a),
        Command::Pipeline(a) => pipeline(&ctx, a),
        Command::Experiment(ExperimentCommand::Offset(a)) => experiment_offset(&ctx, a),
        Command::Experiment(ExperimentCommand::PatchSize(a)) => experiment_patch(&ctx, a),
        Command::Synth(a) => synth(&ctx, a),
    })
}

// ---- argument helpers

fn require_file(p: &Path) -> Result<()> {
    if !p.is_file() {
        return Err(usage(format!("no such file: {}", p.display())));
    }
    Ok(())
}

fn require_dir(p: &Path) -> Result<()> {
    if !p.is_dir() {
        return Err(usage(format!("no such directory: {}", p.display())));
    }
    Ok(())
}

fn require_parent(p: &Path) -> Result<()> {
    match p.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => {
            Err(usage(format!("output directory does not exist: {}", dir.display())))
        }
        _ => Ok(()),
    }
}

fn parse_sizes<const N: usize>(s: &str) -> Result<[usize; N]> {
    let parts: Vec<_> = s.split(['x', 'X']).map(|t| t.trim().parse::<usize>()).collect();
    match parts.into_iter().collect::<Result<Vec<_>, _>>() {
        Ok(v) if v.len() == N && v.iter().all(|&d| d > 0) => Ok(v.try_into().unwrap()),
        _ => Err(usage(format!("expected {N} positive sizes joined by `x`, got `{s}`"))),
    }
}

fn parse_hd_mode(s: Option<&str>) -> Result<HausdorffMode> {
    match s.unwrap_or("symmetric") {
        "symmetric" => Ok(HausdorffMode::Symmetric),
        "directed" => Ok(HausdorffMode::Directed),
        other => Err(usage(format!("hd mode must be symmetric or directed, got `{other}`"))),
    }
}

fn parse_axis(s: Option<&str>) -> Result<Axis> {
    s.unwrap_or("x").parse().map_err(|e| usage(format!("{e}")))
}

fn parse_encoding(s: &str) -> Result<Encoding> {
    s.parse().map_err(|e| usage(format!("{e}")))
}

// ---- case discovery

#[derive(Debug, Default)]
struct CaseFiles {
    scan: Option<PathBuf>,
    label: Option<PathBuf>,
}

/// `<id>.nrrd` and `<id>_label.nrrd` files in `dir`, keyed by id.
fn list_cases(dir: &Path) -> Result<BTreeMap<String, CaseFiles>> {
    let mut out: BTreeMap<String, CaseFiles> = BTreeMap::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("cannot list {}", dir.display()))? {
        let path = entry?.path();
        if !path.is_file() || path.extension().and_then(|e| e.to_str()) != Some("nrrd") {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()).map(str::to_string) else {
            continue;
        };
        match stem.strip_suffix("_label") {
            Some(id) => out.entry(id.to_string()).or_default().label = Some(path),
            None => out.entry(stem).or_default().scan = Some(path),
        }
    }
    Ok(out)
}

// ---- output

fn emit(out: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> segbench::Result<()>) -> Result<()> {
    match out {
        Some(p) => {
            let file = File::create(p).with_context(|| format!("cannot create {}", p.display()))?;
            let mut w = BufWriter::new(file);
            write(&mut w).with_context(|| format!("cannot write {}", p.display()))?;
            w.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            write(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn report_failures<T>(results: Vec<(String, Result<T>)>) -> (Vec<(String, T)>, bool) {
    let mut ok = Vec::with_capacity(results.len());
    let mut failed = false;
    for (id, r) in results {
        match r {
            Ok(v) => ok.push((id, v)),
            Err(e) => {
                eprintln!("case {id}: {e:#}");
                failed = true;
            }
        }
    }
    (ok, failed)
}

fn outcome(partial: bool) -> Outcome {
    if partial {
        Outcome::Partial
    } else {
        Outcome::Complete
    }
}

// ---- evaluate

fn evaluate(ctx: &Ctx, a: EvaluateArgs) -> Result<Outcome> {
    require_dir(&a.pred)?;
    require_dir(&a.truth)?;
    if let Some(o) = &a.out {
        require_parent(o)?;
    }
    let opts = EvalOptions {
        hd_mode: parse_hd_mode(a.hd_mode.as_deref().or(ctx.cfg.evaluate.hd_mode.as_deref()))?,
        diameter_axis: parse_axis(a.diameter_axis.as_deref().or(ctx.cfg.evaluate.diameter_axis.as_deref()))?.index(),
    };
    let truth = list_cases(&a.truth)?;
    let pred = list_cases(&a.pred)?;
    let mut partial = false;
    let mut pairs = Vec::new();
    for (id, t) in &truth {
        let Some(tl) = &t.label else { continue };
        match pred.get(id).and_then(|p| p.label.as_ref().or(p.scan.as_ref())) {
            Some(pp) => pairs.push((id.clone(), pp.clone(), tl.clone())),
            None => {
                eprintln!("unpaired case {id}: no prediction in {}", a.pred.display());
                partial = true;
            }
        }
    }
    for id in pred.keys() {
        if truth.get(id).is_none_or(|t| t.label.is_none()) {
            eprintln!("unpaired case {id}: no ground truth in {}", a.truth.display());
            partial = true;
        }
    }
    if pairs.is_empty() && !partial {
        bail!("no `<id>_label.nrrd` cases found in {}", a.truth.display());
    }
    let results: Vec<(String, Result<CaseMetrics>)> = pairs
        .par_iter()
        .map(|(id, pp, tp)| {
            let r = (|| {
                let truth = read_mask(tp)?;
                let pred = read_mask(pp)?;
                Ok(evaluate_case_with(&pred, &truth, opts)?)
            })();
            (id.clone(), r)
        })
        .collect();
    let (rows, failed) = report_failures(results);
    emit(a.out.as_deref(), |w| match ctx.format {
        Format::Csv => write_case_metrics_csv(w, &rows),
        Format::Json => write_case_metrics_json(w, &rows),
    })?;
    Ok(outcome(partial || failed))
}

// ---- rank

fn rank(ctx: &Ctx, a: RankArgs) -> Result<Outcome> {
    for p in a
        .metrics
        .iter()
        .chain(&a.summary)
        .chain(&a.attributes)
        .chain(&a.quality)
    {
        require_file(p)?;
    }
    require_parent(&a.out)?;
    let hd_mode = parse_hd_mode(a.hd_mode.as_deref().or(ctx.cfg.rank.hd_mode.as_deref()))?;
    let attributes = match &a.attributes {
        Some(p) => read_team_attributes(File::open(p)?).with_context(|| format!("reading {}", p.display()))?,
        None => BTreeMap::new(),
    };
    let mut teams = Vec::new();
    for p in &a.metrics {
        let id = p
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| usage(format!("bad metrics file name {}", p.display())))?;
        let rows = read_case_metrics_csv(File::open(p)?).with_context(|| format!("reading {}", p.display()))?;
        let mut team = team_from_rows(id, rows);
        if let Some(tags) = attributes.get(id) {
            team.attributes = tags.clone();
        }
        teams.push(team);
    }
    let leaderboard = match &a.summary {
        Some(p) => {
            let rows = read_summary_csv(File::open(p)?).with_context(|| format!("reading {}", p.display()))?;
            Leaderboard::from_summaries(rows, "as published")
        }
        None => build_leaderboard(&teams)?,
    };
    let mut report = RankReport::new(leaderboard, hd_mode);
    let keys: BTreeSet<&String> = teams.iter().flat_map(|t| t.attributes.keys()).collect();
    for key in keys {
        match compare_groups(&teams, key, Metric::Dice) {
            Ok(g) => report.group_comparisons.push(g),
            Err(e) => eprintln!("attribute {key}: skipped ({e})"),
        }
    }
    if let Some(q) = &a.quality {
        let snr = read_quality_csv(File::open(q)?).with_context(|| format!("reading {}", q.display()))?;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (id, s) in snr {
            let dices: Vec<f64> = teams.iter().filter_map(|t| t.cases.get(&id)).map(|m| m.dice).collect();
            if !teams.is_empty() && dices.len() == teams.len() {
                xs.push(s);
                ys.push(dices.iter().sum::<f64>() / dices.len() as f64);
            }
        }
        match correlate(&xs, &ys) {
            Ok(r) => report.correlations.push(Correlation {
                x: "snr".into(),
                y: "dice".into(),
                n: xs.len(),
                r,
            }),
            Err(e) => eprintln!("snr/dice correlation skipped ({e})"),
        }
    }
    let csv_path = a.out.with_extension("csv");
    let json_path = a.out.with_extension("json");
    emit(Some(&csv_path), |w| write_leaderboard_csv(w, &report.leaderboard))?;
    emit(Some(&json_path), |w| write_json(w, &report))?;
    Ok(Outcome::Complete)
}

// ---- quality

#[derive(Serialize)]
struct QualityRow<'a> {
    scan_id: &'a str,
    #[serde(flatten)]
    report: &'a QualityReport,
}

fn quality(ctx: &Ctx, a: QualityArgs) -> Result<Outcome> {
    require_dir(&a.data)?;
    if let Some(o) = &a.out {
        require_parent(o)?;
    }
    let margin = a.margin.or(ctx.cfg.quality.margin).unwrap_or(DEFAULT_MARGIN);
    let mut partial = false;
    let mut pairs = Vec::new();
    for (id, f) in list_cases(&a.data)? {
        match (f.scan, f.label) {
            (Some(s), Some(l)) => pairs.push((id, s, l)),
            _ => {
                eprintln!("unpaired case {id}: needs both {id}.nrrd and {id}_label.nrrd");
                partial = true;
            }
        }
    }
    if pairs.is_empty() && !partial {
        bail!("no cases found in {}", a.data.display());
    }
    let results: Vec<(String, Result<QualityReport>)> = pairs
        .par_iter()
        .map(|(id, s, l)| {
            let r = (|| Ok(assess_quality(&read_volume(s)?, &read_mask(l)?, margin)?))();
            (id.clone(), r)
        })
        .collect();
    let (rows, failed) = report_failures(results);
    emit(a.out.as_deref(), |w| match ctx.format {
        Format::Csv => write_quality_csv(w, &rows),
        Format::Json => {
            let reports: Vec<QualityReport> = rows.iter().map(|(_, q)| *q).collect();
            let scans: Vec<QualityRow> = rows
                .iter()
                .map(|(id, q)| QualityRow { scan_id: id, report: q })
                .collect();
            write_json(
                w,
                &serde_json::json!({
                    "margin": margin,
                    "scans": scans,
                    "distribution": quality_distribution(&reports).ok(),
                }),
            )
        }
    })?;
    Ok(outcome(partial || failed))
}

// ---- preprocess / postprocess

fn preprocess_apply(a: ApplyArgs) -> Result<Outcome> {
    require_file(&a.input)?;
    require_parent(&a.output)?;
    let encoding = parse_encoding(&a.encoding)?;
    let reg = volume_ops();
    let ops = a
        .ops
        .iter()
        .map(|s| reg.build_str(s, &()).map_err(|e| usage(format!("{e}"))))
        .collect::<Result<Vec<_>>>()?;
    let mut v = read_volume(&a.input)?;
    for op in &ops {
        v = op.apply(&v).with_context(|| format!("operator {}", op.name()))?;
    }
    write_volume(&v, &a.output, encoding)?;
    Ok(Outcome::Complete)
}

fn preprocess_augment(ctx: &Ctx, a: AugmentArgs) -> Result<Outcome> {
    require_file(&a.volume)?;
    require_file(&a.label)?;
    require_file(&a.spec)?;
    let encoding = parse_encoding(&a.encoding)?;
    let mode = match a.mode.as_str() {
        "offline" => AugmentationMode::Offline,
        "online" | "online-stream" => AugmentationMode::OnlineStream,
        other => return Err(usage(format!("mode must be offline or online-stream, got `{other}`"))),
    };
    let text = std::fs::read_to_string(&a.spec)?;
    let specs = parse_augmentation_config(&text).map_err(|e| usage(format!("{}: {e}", a.spec.display())))?;
    let mut aug = AugmentationPipeline::new(specs, ctx.seed).map_err(|e| usage(format!("{e}")))?;
    aug.register_base(read_volume(&a.volume)?, read_mask(&a.label)?)?;
    std::fs::create_dir_all(&a.out_dir)?;
    let stem = a.volume.file_stem().and_then(|s| s.to_str()).unwrap_or("case");
    for (i, (v, m)) in aug.run(mode, a.count)?.into_iter().enumerate() {
        write_volume(&v, a.out_dir.join(format!("{stem}_aug{i:03}.nrrd")), encoding)?;
        write_mask(&m, a.out_dir.join(format!("{stem}_aug{i:03}_label.nrrd")), encoding)?;
    }
    Ok(Outcome::Complete)
}

fn postprocess(a: PostprocessArgs) -> Result<Outcome> {
    require_file(&a.input)?;
    require_parent(&a.output)?;
    let encoding = parse_encoding(&a.encoding)?;
    let reg = mask_ops();
    let ops = a
        .ops
        .iter()
        .map(|s| reg.build_str(s, &()).map_err(|e| usage(format!("{e}"))))
        .collect::<Result<Vec<_>>>()?;
    let mut m = read_mask(&a.input)?;
    for op in &ops {
        m = op.apply(&m);
    }
    write_mask(&m, &a.output, encoding)?;
    Ok(Outcome::Complete)
}

// ---- pipeline

#[derive(Serialize)]
struct PipelineRow {
    case_id: String,
    center: [usize; 3],
    roi_origin: [i64; 3],
    roi_size: [usize; 3],
    dice: Option<f64>,
}

fn pipeline(ctx: &Ctx, a: PipelineArgs) -> Result<Outcome> {
    require_dir(&a.data)?;
    if let Some(o) = &a.out {
        require_parent(o)?;
    }
    let encoding = parse_encoding(&a.encoding)?;
    let pc = &ctx.cfg.pipeline;
    let roi = match &a.roi {
        Some(s) => parse_sizes::<3>(s)?,
        None => pc.roi.unwrap_or(DEFAULT_ROI),
    };
    let loc_spec = a
        .localizer
        .as_deref()
        .or(pc.localizer.as_deref())
        .unwrap_or("threshold");
    let seg_spec = a
        .segmenter
        .as_deref()
        .or(pc.segmenter.as_deref())
        .unwrap_or("threshold");
    let loc = localizers()
        .build_str(loc_spec, &())
        .map_err(|e| usage(format!("{e}")))?;
    let seg = segmenters()
        .build_str(seg_spec, &())
        .map_err(|e| usage(format!("{e}")))?;
    let cases: Vec<(String, CaseFiles)> = list_cases(&a.data)?
        .into_iter()
        .filter(|(_, f)| f.scan.is_some())
        .collect();
    if cases.is_empty() {
        bail!("no `<id>.nrrd` scans found in {}", a.data.display());
    }
    std::fs::create_dir_all(&a.out_dir)?;
    let results: Vec<(String, Result<PipelineRow>)> = cases
        .par_iter()
        .map(|(id, f)| {
            let r = (|| {
                let v = read_volume(f.scan.as_ref().unwrap())?;
                let truth = f.label.as_ref().map(read_mask).transpose()?;
                let mut case = CaseInput::new(id, &v);
                if let Some(t) = &truth {
                    case = case.with_truth(t);
                }
                let run = run_pipeline(&case, loc.as_ref(), seg.as_ref(), roi)?;
                write_mask(&run.mask, a.out_dir.join(format!("{id}.nrrd")), encoding)?;
                let dice = truth
                    .as_ref()
                    .map(|t| segbench::metrics::dice(&run.mask, t))
                    .transpose()?;
                Ok(PipelineRow {
                    case_id: id.clone(),
                    center: run.center.as_array(),
                    roi_origin: run.roi.origin,
                    roi_size: roi,
                    dice,
                })
            })();
            (id.clone(), r)
        })
        .collect();
    let (rows, failed) = report_failures(results);
    let rows: Vec<PipelineRow> = rows.into_iter().map(|(_, r)| r).collect();
    emit(a.out.as_deref(), |w| match ctx.format {
        Format::Json => write_json(w, &rows),
        Format::Csv => write_pipeline_csv(w, &rows),
    })?;
    Ok(outcome(failed))
}

fn write_pipeline_csv(w: &mut dyn Write, rows: &[PipelineRow]) -> segbench::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "case_id", "center_x", "center_y", "center_z", "origin_x", "origin_y", "origin_z", "dice",
    ])?;
    for r in rows {
        let mut rec = vec![r.case_id.clone()];
        rec.extend(r.center.iter().map(|c| c.to_string()));
        rec.extend(r.roi_origin.iter().map(|c| c.to_string()));
        rec.push(fmt_opt(r.dice));
        out.write_record(rec)?;
    }
    out.flush()?;
    Ok(())
}

// ---- experiments

fn experiment_offset(ctx: &Ctx, a: OffsetArgs) -> Result<Outcome> {
    require_file(&a.volume)?;
    require_file(&a.label)?;
    if let Some(o) = &a.out {
        require_parent(o)?;
    }
    let ec = &ctx.cfg.experiment;
    let roi = match &a.roi {
        Some(s) => parse_sizes::<3>(s)?,
        None => ec.roi.unwrap_or(DEFAULT_ROI),
    };
    let axis = parse_axis(a.axis.as_deref().or(ec.axis.as_deref()))?;
    let offsets = a
        .offsets
        .clone()
        .or_else(|| ec.offsets.clone())
        .unwrap_or_else(|| DEFAULT_OFFSETS.to_vec());
    let seg_spec = a.segmenter.as_deref().or(ec.segmenter.as_deref()).unwrap_or("oracle");
    let seg = segmenters()
        .build_str(seg_spec, &())
        .map_err(|e| usage(format!("{e}")))?;
    let v = read_volume(&a.volume)?;
    let m = read_mask(&a.label)?;
    let curve = offset_sweep(&v, &m, seg.as_ref(), roi, &offsets, axis.index())?;
    emit(a.out.as_deref(), |w| match ctx.format {
        Format::Csv => write_offset_curve_csv(w, &curve),
        Format::Json => write_json(w, &curve),
    })?;
    Ok(Outcome::Complete)
}

fn experiment_patch(ctx: &Ctx, a: PatchSizeArgs) -> Result<Outcome> {
    require_file(&a.label)?;
    if let Some(o) = &a.out {
        require_parent(o)?;
    }
    let ec = &ctx.cfg.experiment;
    let sizes: Vec<(usize, usize)> = match (&a.sizes, &ec.sizes) {
        (Some(list), _) => list
            .iter()
            .map(|s| parse_sizes::<2>(s).map(|[x, y]| (x, y)))
            .collect::<Result<_>>()?,
        (None, Some(list)) => list.iter().map(|&[x, y]| (x, y)).collect(),
        (None, None) => DEFAULT_PATCH_SIZES.to_vec(),
    };
    let depth = a.depth.or(ec.depth).unwrap_or(DEFAULT_SWEEP_DEPTH);
    let m = read_mask(&a.label)?;
    let curve = patch_size_sweep(&m, &sizes, depth)?;
    emit(a.out.as_deref(), |w| match ctx.format {
        Format::Csv => write_patch_curve_csv(w, &curve),
        Format::Json => write_json(w, &curve),
    })?;
    Ok(Outcome::Complete)
}

// ---- synth

#[derive(Serialize)]
struct ManifestRow<'a> {
    id: &'a str,
    tier: String,
    seed: u64,
}

fn synth(ctx: &Ctx, a: SynthArgs) -> Result<Outcome> {
    let sc = &ctx.cfg.synth;
    let count = a.count.or(sc.count).unwrap_or(DEFAULT_COHORT);
    if count == 0 {
        return Err(usage("count must be positive"));
    }
    let dims = match &a.dims {
        Some(s) => parse_sizes::<3>(s)?,
        None => sc.dims.unwrap_or([576, 576, 88]),
    };
    let spacing = Spacing::isotropic(a.spacing.or(sc.spacing).unwrap_or(0.625));
    spacing.validate().map_err(|e| usage(format!("{e}")))?;
    let encoding = parse_encoding(a.encoding.as_deref().or(sc.encoding.as_deref()).unwrap_or("gzip"))?;
    let mut variation = CohortVariation::default();
    if let Some(f) = sc.tier_fractions {
        variation.tier_fractions = f;
    }
    if let Some(s) = sc.tier_snr {
        variation.tier_snr = s;
    }
    if let Some(j) = sc.center_jitter_mm {
        variation.center_jitter_mm = j;
    }
    if let Some(j) = sc.axis_jitter {
        variation.axis_jitter = j;
    }
    let base = PhantomSpec::centered(Dims::from_array(dims), spacing);
    let entries = plan_cohort(&base, count, &variation, ctx.seed)?;
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("cannot create {}", a.out_dir.display()))?;
    let results: Vec<(String, Result<()>)> = entries
        .par_iter()
        .map(|e| {
            let r = (|| {
                let (v, m) = generate(&e.spec)?;
                write_volume(&v, a.out_dir.join(format!("{}.nrrd", e.id)), encoding)?;
                write_mask(&m, a.out_dir.join(format!("{}_label.nrrd", e.id)), encoding)?;
                Ok(())
            })();
            (e.id.clone(), r)
        })
        .collect();
    let (_, failed) = report_failures(results);
    write_manifest(ctx.format, &a.out_dir, &entries)?;
    Ok(outcome(failed))
}

fn write_manifest(format: Format, dir: &Path, entries: &[CohortEntry]) -> Result<()> {
    match format {
        Format::Csv => emit(Some(&dir.join("manifest.csv")), |w| write_manifest_csv(w, entries)),
        Format::Json => {
            let rows: Vec<ManifestRow> = entries
                .iter()
                .map(|e| ManifestRow {
                    id: &e.id,
                    tier: e.tier.to_string(),
                    seed: e.seed,
                })
                .collect();
            emit(Some(&dir.join("manifest.json")), |w| write_json(w, &rows))
        }
    }
}
