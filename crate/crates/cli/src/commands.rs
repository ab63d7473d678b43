use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hazediff_core::hazesynth::{make_toy_dataset, HazeScene};
use hazediff_core::io::{read_image, write_field, write_image};
use hazediff_core::metrics::{evaluate, Psnr, QualityReport};
use hazediff_core::patches::{make_uniform_weights, plan_patches, PatchGrid};
use hazediff_core::pist::{pist_weight, NoiseSchedule, PistParams};
use hazediff_core::sampler::model_io::{load_model, save_model};
use hazediff_core::sampler::train::loss_trace_csv;
use hazediff_core::sampler::{
    dehaze, train_toy, Denoiser, ExternalDenoiser, OracleDenoiser, TinyConfig, TinyDenoiser,
};
use hazediff_core::transmission::{estimate_transmission, TransmissionMap};
use hazediff_core::PixelImage;
use serde::Serialize;

use crate::args::*;
use crate::config::RunConfig;

/// Invalid combination of otherwise well-formed arguments.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(UsageError(msg.into()).into())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Tmap(a) => tmap(a),
        Command::Synth(a) => synth(a),
        Command::Schedule {
            command: ScheduleCommand::Dump(a),
        } => schedule_dump(a),
        Command::Patches {
            command: PatchesCommand::Plan(a),
        } => patches_plan(a),
        Command::Dehaze(a) => dehaze_cmd(a),
        Command::TrainToy(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    RunConfig::load(path).map_err(|e| UsageError(format!("{e:#}")).into())
}

fn validated(cfg: RunConfig) -> Result<RunConfig> {
    match cfg.validate() {
        Ok(()) => Ok(cfg),
        Err(e) => usage(format!("{e:#}")),
    }
}

fn apply_dcp(cfg: &mut RunConfig, a: &DcpArgs) {
    let d = &mut cfg.dcp;
    if let Some(v) = a.omega {
        d.omega = v;
    }
    if let Some(v) = a.window {
        d.window = v;
    }
    if let Some(v) = a.guided_radius {
        d.guided_radius = v;
    }
    if let Some(v) = a.guided_reg {
        d.guided_reg = v;
    }
    if let Some(v) = a.t0 {
        d.t0 = v;
    }
    if let Some(v) = a.tau_g {
        d.tau_g = v;
    }
    if let Some(v) = a.tau_b {
        d.tau_b = v;
    }
}

fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    if threads == Some(0) {
        return usage("--threads must be >= 1");
    }
    Ok(rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()?)
}

fn read_tmap(path: &Path) -> Result<TransmissionMap> {
    let img = read_image(path)?;
    Ok(TransmissionMap::from_image(&img)?)
}

#[derive(Serialize)]
struct TmapSidecar<'a> {
    input: &'a Path,
    airlight: f64,
    mean_transmission: f64,
    sky_coverage: f64,
    params: &'a hazediff_core::DcpParams,
}

fn tmap(a: TmapArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    apply_dcp(&mut cfg, &a.dcp);
    let cfg = validated(cfg)?;
    let img = read_image(&a.input)?;
    if img.channels() != 3 {
        bail!("transmission estimation needs an RGB image, got {}", img.shape());
    }
    let est = estimate_transmission(&img, &cfg.dcp)?;
    write_image(&a.output, &est.map.to_image())?;
    if let Some(p) = &a.dark {
        write_image(p, &est.dark)?;
    }
    if let Some(p) = &a.sky_mask {
        write_image(p, &est.sky_smooth.to_image())?;
    }
    if let Some(p) = &a.raw {
        write_field(p, &est.raw)?;
    }
    let sidecar = TmapSidecar {
        input: &a.input,
        airlight: est.airlight,
        mean_transmission: est.map.mean(),
        sky_coverage: est.sky.coverage(),
        params: &cfg.dcp,
    };
    let json = a.json.clone().unwrap_or_else(|| a.output.with_extension("json"));
    write_text(&json, &to_json(&sidecar)?)
}

#[derive(Serialize)]
struct SceneInfo {
    source: &'static str,
    seed: u64,
    index: usize,
    height: usize,
    width: usize,
    airlight: f64,
    mean_transmission: f64,
}

fn write_scene(dir: &Path, scene: &HazeScene, info: SceneInfo) -> Result<()> {
    write_image(dir.join("hazy.png"), &scene.hazy())?;
    write_image(dir.join("clear.png"), &scene.clear)?;
    write_image(dir.join("tmap.pgm"), &scene.tmap.to_image())?;
    write_text(&dir.join("scene.json"), &to_json(&info)?)
}

fn synth(a: SynthArgs) -> Result<()> {
    if let Some(v) = a.airlight.filter(|v| !(*v > 0.0 && *v <= 1.0)) {
        return usage(format!("--airlight {v} outside (0, 1]"));
    }
    if !a.generate {
        let (Some(clear), Some(tm)) = (&a.clear, &a.tmap) else {
            return usage("synth needs --clear and --tmap, or --generate");
        };
        let clear = read_image(clear)?;
        if clear.channels() != 3 {
            bail!("clear image must be RGB, got {}", clear.shape());
        }
        let scene = HazeScene::new(clear, read_tmap(tm)?, a.airlight.unwrap_or(0.8))?;
        let info = SceneInfo {
            source: "input",
            seed: a.seed,
            index: 0,
            height: scene.clear.height(),
            width: scene.clear.width(),
            airlight: scene.airlight,
            mean_transmission: scene.tmap.mean(),
        };
        return write_scene(&a.output, &scene, info);
    }
    if a.count == 0 {
        return usage("--count must be >= 1");
    }
    let scenes = make_toy_dataset(a.count, a.size, a.seed)?;
    for (i, mut scene) in scenes.into_iter().enumerate() {
        if let Some(v) = a.airlight {
            scene.airlight = v;
        }
        let dir = if a.count == 1 {
            a.output.clone()
        } else {
            a.output.join(format!("scene_{i:03}"))
        };
        let info = SceneInfo {
            source: "generated",
            seed: a.seed,
            index: i,
            height: a.size,
            width: a.size,
            airlight: scene.airlight,
            mean_transmission: scene.tmap.mean(),
        };
        write_scene(&dir, &scene, info)?;
    }
    Ok(())
}

fn schedule_dump(a: ScheduleArgs) -> Result<()> {
    let sched = match NoiseSchedule::linear(a.steps, a.beta_start, a.beta_end) {
        Ok(s) => s,
        Err(e) => return usage(e.to_string()),
    };
    let pist = PistParams {
        a: a.pist_a,
        steps: a.steps,
    };
    if let Err(e) = pist.validate() {
        return usage(e.to_string());
    }
    if let Some(t) = a.tau.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return usage(format!("--tau value {t} outside [0, 1]"));
    }
    let mut out = String::from("t,beta,alpha,gamma");
    for tau in &a.tau {
        out.push_str(&format!(",W_tau={tau}"));
    }
    out.push('\n');
    for t in 1..=a.steps {
        out.push_str(&format!(
            "{t},{:?},{:?},{:?}",
            sched.beta(t),
            sched.alpha(t),
            sched.gamma(t)
        ));
        for &tau in &a.tau {
            out.push_str(&format!(",{:?}", pist_weight(t, tau, &pist)));
        }
        out.push('\n');
    }
    emit(a.output.as_deref(), &out)
}

#[derive(Serialize)]
struct PlanReport {
    grid: PatchGrid,
    count: usize,
    cover_counts: Vec<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<Vec<f64>>>,
}

fn patches_plan(a: PlanArgs) -> Result<()> {
    let grid = match plan_patches(a.height, a.width, a.patch, a.stride) {
        Ok(g) => g,
        Err(e) => return usage(e.to_string()),
    };
    let report = PlanReport {
        count: grid.len(),
        cover_counts: grid.cover_counts(),
        weights: a.weights.then(|| make_uniform_weights(&grid).maps),
        grid,
    };
    emit(a.output.as_deref(), &to_json(&report)?)
}

#[derive(Serialize)]
struct DehazeProvenance<'a> {
    command: &'static str,
    input: &'a Path,
    tmap: Option<&'a Path>,
    backend: &'static str,
    model: Option<&'a Path>,
    clear: Option<&'a Path>,
    config: &'a RunConfig,
}

fn dehaze_cmd(a: DehazeArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    apply_dcp(&mut cfg, &a.dcp);
    if let Some(v) = a.steps {
        cfg.sampler.sampling_steps = Some(v);
    }
    if let Some(v) = a.total_steps {
        cfg.schedule.steps = v;
    }
    if let Some(v) = a.patch {
        cfg.sampler.patch = v;
    }
    if let Some(v) = a.stride {
        cfg.sampler.stride = v;
    }
    if let Some(v) = a.pist_a {
        cfg.pist.a = v;
    }
    if let Some(v) = a.hadtp {
        cfg.hadtp.enabled = v == Toggle::On;
    }
    if let Some(v) = a.kappa {
        cfg.hadtp.kappa = v;
    }
    if a.deterministic {
        cfg.sampler.deterministic = true;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    let cfg = validated(cfg)?;
    let sampler_cfg = cfg.sampler();
    match a.backend {
        Backend::Oracle if a.clear.is_none() => return usage("the oracle backend needs --clear"),
        Backend::Tiny if a.model.is_none() => return usage("the tiny backend needs --model"),
        Backend::External if a.denoiser_cmd.is_none() => {
            return usage("the external backend needs --denoiser-cmd")
        }
        _ => {}
    }

    let hazy = read_image(&a.input)?;
    let tmap = match &a.tmap {
        Some(p) => read_tmap(p)?,
        None => {
            if hazy.channels() != 3 {
                bail!("estimating a transmission map needs an RGB input");
            }
            estimate_transmission(&hazy, &cfg.dcp)?.map
        }
    };
    let clear = a.clear.as_deref().map(read_image).transpose()?;

    let denoiser: Box<dyn Denoiser> = match a.backend {
        Backend::Oracle => {
            let Some(clear) = &clear else {
                return usage("the oracle backend needs --clear");
            };
            tmap.ensure_matches(hazy.shape(), "transmission map")?;
            Box::new(OracleDenoiser::new(clear, &tmap, sampler_cfg.pist)?)
        }
        Backend::Tiny => {
            let Some(path) = &a.model else {
                return usage("the tiny backend needs --model");
            };
            let model = load_model(path)?;
            if model.config().pist != sampler_cfg.pist {
                bail!(
                    "model was trained with a = {}, T = {}; run uses a = {}, T = {}",
                    model.config().pist.a,
                    model.config().pist.steps,
                    sampler_cfg.pist.a,
                    sampler_cfg.pist.steps
                );
            }
            Box::new(model)
        }
        Backend::External => {
            let Some(cmd) = &a.denoiser_cmd else {
                return usage("the external backend needs --denoiser-cmd");
            };
            let mut parts = cmd.split_whitespace().map(String::from);
            let Some(program) = parts.next() else {
                return usage("--denoiser-cmd is empty");
            };
            let rest: Vec<String> = parts.collect();
            Box::new(ExternalDenoiser::spawn(&program, &rest)?)
        }
    };

    let pool = thread_pool(a.threads)?;
    let out = pool.install(|| dehaze(&hazy, &tmap, denoiser.as_ref(), &sampler_cfg))?;

    write_image(a.output.join("result.png"), &out.image)?;
    write_image(a.output.join("tmap.pgm"), &tmap.to_image())?;
    let provenance = DehazeProvenance {
        command: "dehaze",
        input: &a.input,
        tmap: a.tmap.as_deref(),
        backend: match a.backend {
            Backend::Oracle => "oracle",
            Backend::Tiny => "tiny",
            Backend::External => "external",
        },
        model: a.model.as_deref(),
        clear: a.clear.as_deref(),
        config: &cfg,
    };
    write_text(&a.output.join("config.json"), &to_json(&provenance)?)?;
    let trace_dir = a.trace_dir.clone().unwrap_or_else(|| a.output.join("trace"));
    write_text(&trace_dir.join("steps.csv"), &out.trace.to_csv())?;
    if let Some(clear) = &clear {
        let report = evaluate(clear, &out.image)?;
        write_text(&a.output.join("report.json"), &to_json(&report)?)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct TrainProvenance<'a> {
    command: &'static str,
    parameters: usize,
    first_loss: Option<f64>,
    last_loss: Option<f64>,
    config: &'a RunConfig,
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    let t = &mut cfg.train;
    for (dst, src) in [
        (&mut t.scenes, a.scenes),
        (&mut t.size, a.size),
        (&mut t.steps, a.steps),
        (&mut t.batch, a.batch),
        (&mut t.patch, a.patch),
        (&mut t.base, a.base),
    ] {
        if let Some(v) = src {
            *dst = v;
        }
    }
    if let Some(v) = a.lr {
        t.lr = v;
    }
    if let Some(v) = a.pist_a {
        cfg.pist.a = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    let cfg = validated(cfg)?;
    if cfg.train.scenes == 0 {
        return usage("--scenes must be >= 1");
    }
    let pist = cfg.pist();
    let schedule = NoiseSchedule::linear(
        cfg.schedule.steps,
        cfg.schedule.beta_start,
        cfg.schedule.beta_end,
    )?;
    let data = make_toy_dataset(cfg.train.scenes, cfg.train.size, cfg.seed)?;
    let model = TinyDenoiser::new(
        TinyConfig {
            base: cfg.train.base,
            pist,
        },
        cfg.seed,
    )?;
    let pool = thread_pool(a.threads)?;
    let (trained, losses) =
        pool.install(|| train_toy(&data, model, &schedule, &pist, &cfg.train()))?;
    save_model(&a.out_model, &trained)?;
    let trace = a.trace.clone().unwrap_or_else(|| a.out_model.with_extension("csv"));
    write_text(&trace, &loss_trace_csv(&losses))?;
    let provenance = TrainProvenance {
        command: "train-toy",
        parameters: trained.num_params(),
        first_loss: losses.first().copied(),
        last_loss: losses.last().copied(),
        config: &cfg,
    };
    write_text(&a.out_model.with_extension("json"), &to_json(&provenance)?)
}

#[derive(Serialize)]
struct PairReport {
    name: String,
    #[serde(flatten)]
    report: QualityReport,
}

#[derive(Serialize)]
struct BatchReport {
    images: Vec<PairReport>,
    mean_psnr: Psnr,
    mean_ssim: f64,
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && matches!(ext.as_deref(), Some("png" | "pgm" | "ppm" | "pnm")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn compare(reference: &Path, test: &Path) -> Result<QualityReport> {
    let (r, t): (PixelImage, PixelImage) = (read_image(reference)?, read_image(test)?);
    evaluate(&r, &t).with_context(|| format!("comparing {} with {}", reference.display(), test.display()))
}

fn eval(a: EvalArgs) -> Result<()> {
    let text = match (a.reference.is_dir(), a.test.is_dir()) {
        (false, false) => to_json(&compare(&a.reference, &a.test)?)?,
        (true, true) => {
            let mut images = Vec::new();
            for r in image_files(&a.reference)? {
                let name = r.file_name().expect("listed file").to_string_lossy().into_owned();
                let t = a.test.join(&name);
                if !t.is_file() {
                    bail!("no test image paired with {name} in {}", a.test.display());
                }
                images.push(PairReport {
                    report: compare(&r, &t)?,
                    name,
                });
            }
            if images.is_empty() {
                bail!("no images in {}", a.reference.display());
            }
            let n = images.len() as f64;
            let mean_psnr =
                Psnr::from_db(images.iter().map(|p| p.report.psnr.db()).sum::<f64>() / n);
            let mean_ssim = images.iter().map(|p| p.report.ssim).sum::<f64>() / n;
            to_json(&BatchReport {
                images,
                mean_psnr,
                mean_ssim,
            })?
        }
        _ => return usage("--ref and --test must both be files or both be directories"),
    };
    emit(a.output.as_deref(), &text)
}
