//! `cgc`: generate synthetic datasets, train feature fields, render, select
//! and evaluate.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cgc_core::io::{self, CameraRecord, LoadedDataset};
use cgc_core::metrics::evaluate;
use cgc_core::raster::{rasterize, RenderOptions};
use cgc_core::segmenter::{
    convex_hull_extract, object_mask, pick_discriminative_feature, select_gaussians_3d, similarity_map,
    DEFAULT_THRESHOLD,
};
use cgc_core::synth::{CorruptionConfig, Query, SceneSpec, SyntheticData};
use cgc_core::trainer::{train, write_log, TrainConfig};
use cgc_core::{Camera, Error, GaussianCloud, SegmentMask};
use clap::{Parser, Subcommand, ValueEnum};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "cgc", version, about = "Contrastive Gaussian clustering toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    Standard,
    TwoObjects,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset directory.
    Generate {
        /// Scene spec as JSON; defaults to the chosen preset.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "standard")]
        preset: Preset,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0.3)]
        split_prob: f64,
        #[arg(long, default_value_t = 0.0)]
        drop_prob: f64,
        #[arg(long, default_value_t = 0.0)]
        merge_prob: f64,
    },
    /// Train a cloud on a dataset directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Starting cloud; defaults to the dataset's own cloud.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Full training configuration as JSON; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        freeze_geometry: bool,
        #[arg(long)]
        lambda_clustering: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        no_regularization: bool,
        /// Defaults to `<out>.log.jsonl`.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Keep per-iteration wall times in the log.
        #[arg(long)]
        timings: bool,
    },
    /// Render a color image and a feature map.
    Render {
        #[arg(long)]
        model: PathBuf,
        /// View index into `--data`, or a camera JSON file.
        #[arg(long)]
        camera: String,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out_image: Option<PathBuf>,
        #[arg(long)]
        out_feat: Option<PathBuf>,
    },
    /// Pixel-prompted 2D object mask.
    Select {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        view: usize,
        #[arg(long, value_parser = parse_pixel)]
        pixel: (usize, usize),
        /// View to segment; defaults to the prompt view.
        #[arg(long)]
        target_view: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        t: f64,
        #[arg(long)]
        out_mask: PathBuf,
    },
    /// Pixel-prompted 3D selection, completed by the seeds' convex hull.
    Segment3d {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        view: usize,
        #[arg(long, value_parser = parse_pixel)]
        pixel: (usize, usize),
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        t: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score pixel-prompted masks on the held-out views.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Query list as JSON; defaults to the dataset's queries.
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        t: f64,
        /// Boundary band radius in pixels.
        #[arg(long)]
        band: Option<usize>,
        /// JSON lines report; a table goes to stdout either way.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_pixel(s: &str) -> Result<(usize, usize), String> {
    let (u, v) = s.split_once(',').ok_or("expected u,v")?;
    let p = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("{x:?}: {e}"));
    Ok((p(u)?, p(v)?))
}

/// A failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::NonFiniteParameter { .. } | Error::NonFiniteGradient { .. } => EXIT_NUMERICAL,
            Error::Training { source, .. }
                if matches!(
                    **source,
                    Error::NonFiniteParameter { .. } | Error::NonFiniteGradient { .. }
                ) =>
            {
                EXIT_NUMERICAL
            }
            _ => EXIT_DATA,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

fn data_error(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_DATA,
        message: message.into(),
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| data_error(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| data_error(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> CliResult<GaussianCloud> {
    io::load_ply(path)
        .map(|p| p.cloud)
        .map_err(|e| data_error(format!("{}: {e}", path.display())))
}

fn load_data(path: &Path) -> CliResult<LoadedDataset> {
    io::load_dataset(path).map_err(|e| data_error(format!("{}: {e}", path.display())))
}

fn camera_at(data: &LoadedDataset, view: usize) -> CliResult<&Camera> {
    data.cameras
        .get(view)
        .ok_or_else(|| usage(format!("view {view} out of range (dataset has {})", data.cameras.len())))
}

fn generate(
    spec: Option<PathBuf>,
    preset: Preset,
    out: &Path,
    seed: Option<u64>,
    corruption: CorruptionConfig,
) -> CliResult {
    let mut spec = match spec {
        Some(p) => read_json::<SceneSpec>(&p)?,
        None => match preset {
            Preset::Standard => SceneSpec::standard(),
            Preset::TwoObjects => SceneSpec::two_objects(),
        },
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let data = SyntheticData::build(&spec, &corruption)?;
    fs::create_dir_all(out).map_err(|e| data_error(format!("{}: {e}", out.display())))?;
    let manifest = io::write_dataset(out, &data)?;
    fs::write(
        out.join("spec.json"),
        serde_json::to_string_pretty(&spec).expect("spec serializes") + "\n",
    )
    .map_err(|e| data_error(e.to_string()))?;
    println!(
        "wrote {} views ({} train, {} test) and {} gaussians to {}",
        manifest.views.len(),
        data.train.len(),
        data.test.len(),
        data.scene.cloud.len(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train_cmd(
    data: &Path,
    out: &Path,
    init: Option<PathBuf>,
    config: Option<PathBuf>,
    iters: Option<usize>,
    freeze_geometry: bool,
    lambda_clustering: Option<f64>,
    seed: Option<u64>,
    no_regularization: bool,
    log: Option<PathBuf>,
    timings: bool,
) -> CliResult {
    let ds = load_data(data)?;
    let cloud = match init {
        Some(p) => load_model(&p)?,
        None => {
            ds.labeled_cloud()?
                .ok_or_else(|| usage("dataset has no cloud; pass --init"))?
                .cloud
        }
    };
    let mut cfg = match config {
        Some(p) => read_json::<TrainConfig>(&p)?,
        None => TrainConfig::default(),
    };
    if let Some(n) = iters {
        cfg.iterations = n;
    }
    if let Some(l) = lambda_clustering {
        cfg.lambda_clustering = l;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.freeze_geometry |= freeze_geometry;
    if no_regularization {
        cfg.regularization_enabled = false;
    }
    cfg.validate()?;
    let mut result = train(&cloud, &ds.training_set(), &cfg)?;
    if !timings {
        for r in &mut result.log {
            r.ms = None;
        }
    }
    io::save_ply(out, &result.cloud, None)?;
    let log_path = log.unwrap_or_else(|| {
        let mut p = out.as_os_str().to_owned();
        p.push(".log.jsonl");
        PathBuf::from(p)
    });
    write_log(&log_path, &result.log)?;
    if let Some(last) = result.log.last() {
        println!(
            "{} iterations, final total {:.6}, {} gaussians",
            last.iteration,
            last.total,
            result.cloud.len()
        );
    } else {
        println!("0 iterations; cloud copied");
    }
    Ok(())
}

fn render_cmd(
    model: &Path,
    camera: &str,
    data: Option<PathBuf>,
    out_image: Option<PathBuf>,
    out_feat: Option<PathBuf>,
) -> CliResult {
    let cloud = load_model(model)?;
    let cam = match camera.parse::<usize>() {
        Ok(i) => {
            let data = data.ok_or_else(|| usage("a camera index needs --data"))?;
            camera_at(&load_data(&data)?, i)?.clone()
        }
        Err(_) => read_json::<CameraRecord>(Path::new(camera))?.to_camera()?,
    };
    if out_image.is_none() && out_feat.is_none() {
        return Err(usage("nothing to write; pass --out-image and/or --out-feat"));
    }
    let out = rasterize(&cloud, &cam, &RenderOptions::default())?;
    if let Some(p) = out_image {
        io::save_ppm(p, &out.color)?;
    }
    if let Some(p) = out_feat {
        io::save_cgcf(p, &out.features)?;
    }
    Ok(())
}

/// Discriminative feature at a pixel of a view; a zero feature is an error
/// naming the pixel.
fn prompt_feature(cloud: &GaussianCloud, cam: &Camera, pixel: (usize, usize)) -> CliResult<Vec<f64>> {
    let fm = rasterize(cloud, cam, &RenderOptions::default())?.features;
    let d = pick_discriminative_feature(&fm, pixel)?;
    if d.degenerate {
        return Err(Error::DegenerateFeature { u: pixel.0, v: pixel.1 }.into());
    }
    Ok(d.vector)
}

fn select_cmd(
    model: &Path,
    data: &Path,
    view: usize,
    pixel: (usize, usize),
    target_view: Option<usize>,
    t: f64,
    out_mask: &Path,
) -> CliResult {
    let cloud = load_model(model)?;
    let ds = load_data(data)?;
    let q = prompt_feature(&cloud, camera_at(&ds, view)?, pixel)?;
    let target = camera_at(&ds, target_view.unwrap_or(view))?;
    let fm = rasterize(&cloud, target, &RenderOptions::default())?.features;
    let mask = object_mask(&similarity_map(&fm, &q)?, t);
    let labels = SegmentMask {
        width: mask.width,
        height: mask.height,
        labels: mask.data.iter().map(|&b| b as u16).collect(),
    };
    io::save_pgm16(out_mask, &labels)?;
    println!("{} pixels selected", mask.count());
    Ok(())
}

fn segment3d_cmd(model: &Path, data: &Path, view: usize, pixel: (usize, usize), t: f64, out: &Path) -> CliResult {
    let cloud = load_model(model)?;
    let ds = load_data(data)?;
    let q = prompt_feature(&cloud, camera_at(&ds, view)?, pixel)?;
    let seeds = select_gaussians_3d(&cloud, &q, t)?;
    if seeds.is_empty() {
        return Err(data_error("no gaussian reaches the similarity threshold"));
    }
    let sel = convex_hull_extract(&cloud, &seeds);
    io::save_ply(out, &cloud.subset(&sel.hull_indices), None)?;
    println!(
        "{} seeds, {} gaussians in the hull{}",
        sel.seed_indices.len(),
        sel.hull_indices.len(),
        if sel.degenerate {
            " (degenerate hull: seeds only)"
        } else {
            ""
        }
    );
    Ok(())
}

fn eval_cmd(
    model: &Path,
    data: &Path,
    queries: Option<PathBuf>,
    t: f64,
    band: Option<usize>,
    out: Option<PathBuf>,
) -> CliResult {
    let cloud = load_model(model)?;
    let ds = load_data(data)?;
    let queries: Vec<Query> = match queries {
        Some(p) => read_json(&p)?,
        None => ds
            .queries()?
            .ok_or_else(|| usage("dataset has no queries; pass --queries"))?,
    };
    let report = evaluate(&cloud, &ds.cameras, &ds.gt_masks, &ds.test, &queries, t, band)?;
    print!("{}", report.to_table());
    if let Some(p) = out {
        fs::write(&p, report.to_jsonl()?).map_err(|e| data_error(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Generate {
            spec,
            preset,
            out,
            seed,
            split_prob,
            drop_prob,
            merge_prob,
        } => generate(
            spec,
            preset,
            &out,
            seed,
            CorruptionConfig {
                split_prob,
                drop_prob,
                merge_prob,
            },
        ),
        Command::Train {
            data,
            out,
            init,
            config,
            iters,
            freeze_geometry,
            lambda_clustering,
            seed,
            no_regularization,
            log,
            timings,
        } => train_cmd(
            &data,
            &out,
            init,
            config,
            iters,
            freeze_geometry,
            lambda_clustering,
            seed,
            no_regularization,
            log,
            timings,
        ),
        Command::Render {
            model,
            camera,
            data,
            out_image,
            out_feat,
        } => render_cmd(&model, &camera, data, out_image, out_feat),
        Command::Select {
            model,
            data,
            view,
            pixel,
            target_view,
            t,
            out_mask,
        } => select_cmd(&model, &data, view, pixel, target_view, t, &out_mask),
        Command::Segment3d {
            model,
            data,
            view,
            pixel,
            t,
            out,
        } => segment3d_cmd(&model, &data, view, pixel, t, &out),
        Command::Eval {
            model,
            data,
            queries,
            t,
            band,
            out,
        } => eval_cmd(&model, &data, queries, t, band, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
