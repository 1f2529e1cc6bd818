//! `nlos`: simulate, reconstruct, score and render.
//!
//! Exit codes: 0 on success, 2 when an argument, config or input file fails
//! to parse or validate, 1 when a run fails (the message names the stage).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use nlos_core::baselines::{
    back_projection, log_bp, ls_cg_reconstruct, metrics, rel_misfit, thresholded_surface,
};
use nlos_core::io::{
    load_json, ls_curves_csv, project_surface, project_volume, read_file, read_histogram,
    read_surface, read_volume, simulate, surface_albedo_map, to_pgm16, trace_csv, write_file,
    write_histogram, write_surface, write_volume, GeometryConfig, Manifest, ReconstructConfig,
    SceneConfig, View, HISTOGRAM_MAGIC, MANIFEST_VERSION, SURFACE_MAGIC, VOLUME_MAGIC,
};
use nlos_core::{sscr_reconstruct, AlbedoVolume, Error, ForwardOperator, SurfaceG};

#[derive(Parser)]
#[command(name = "nlos", version, about = "Few-shot non-line-of-sight reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Sscr,
    Bp,
    Logbp,
    Ls,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Sscr => "sscr",
            Method::Bp => "bp",
            Method::Logbp => "logbp",
            Method::Ls => "ls",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Map {
    Depth,
    Albedo,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scene and sample a photon histogram.
    Simulate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        geometry: PathBuf,
        #[arg(long)]
        pulses: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Histogram output; the true surface goes to `<output>.truth.surf`.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Reconstruct a histogram; writes `<prefix>.vol`, `.surf`, `.trace.csv`
    /// and `.manifest.json`.
    Reconstruct {
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long)]
        config: PathBuf,
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Compare a reconstructed surface with the truth; writes JSON.
    Metrics {
        #[arg(long)]
        recon: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Project a volume or surface file to a 16-bit PGM.
    Render {
        #[arg(long)]
        input: PathBuf,
        /// front, top or side
        #[arg(long, default_value = "front")]
        view: View,
        /// Surface front views only.
        #[arg(long, value_enum, default_value = "depth")]
        map: Map,
        #[arg(short, long)]
        output: PathBuf,
    },
}

/// A failure and its exit code.
struct Failure {
    code: u8,
    error: Error,
}

/// Parse and validation problems exit 2; a missing or unreadable file is a
/// runtime failure.
fn invalid(error: Error) -> Failure {
    let code = if matches!(error, Error::Io(_)) { 1 } else { 2 };
    Failure { code, error }
}

fn runtime(stage: &'static str) -> impl FnOnce(Error) -> Failure {
    move |e| Failure {
        code: 1,
        error: match e {
            Error::Stage { .. } => e,
            other => other.in_stage(stage),
        },
    }
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn run_simulate(
    scene: &Path,
    geometry: &Path,
    pulses: u64,
    seed: u64,
    output: &Path,
) -> Result<(), Failure> {
    let scene: SceneConfig = load_json(scene).map_err(invalid)?;
    scene.validate().map_err(invalid)?;
    let geometry = load_json::<GeometryConfig>(geometry)
        .and_then(|g| g.build())
        .map_err(invalid)?;
    if pulses == 0 {
        return Err(invalid(Error::Config("pulses must be >= 1".into())));
    }
    let sim = simulate(&scene, &geometry, pulses, seed).map_err(runtime("simulate"))?;
    info!(
        "{} events over {} bins, eta = {:e}",
        sim.hist.total_counts(),
        sim.hist.counts.len(),
        sim.noise.eta
    );
    write_file(output, &write_histogram(&sim.hist)).map_err(runtime("write"))?;
    write_file(&with_suffix(output, ".truth.surf"), &write_surface(&sim.truth))
        .map_err(runtime("write"))
}

fn run_reconstruct(method: Method, config: &Path, input: &Path, output: &Path) -> Result<(), Failure> {
    let cfg: ReconstructConfig = load_json(config).map_err(invalid)?;
    cfg.validate().map_err(invalid)?;
    let grid = cfg.grid.build().map_err(invalid)?;
    let hist = read_file(input).map_err(invalid)?;
    let hist = read_histogram(&hist).map_err(invalid)?;
    let stage = method.name();

    let (volume, surface, trace, params): (AlbedoVolume, SurfaceG, String, _) = match method {
        Method::Sscr => {
            let state = sscr_reconstruct(&hist, &grid, &cfg.sscr).map_err(runtime(stage))?;
            let trace = trace_csv(&state.trace);
            (state.u, state.g, trace, Some(state.params))
        }
        Method::Bp | Method::Logbp | Method::Ls => {
            let op = ForwardOperator::new(&grid, &hist.geometry).map_err(invalid)?;
            let (volume, trace) = match method {
                Method::Ls => {
                    let r = ls_cg_reconstruct(&hist, &op, cfg.ls_iters).map_err(runtime(stage))?;
                    (r.volume, ls_curves_csv(&r.curves))
                }
                _ => {
                    let v = if matches!(method, Method::Bp) {
                        back_projection(&hist, &op)
                    } else {
                        log_bp(&hist, &op, cfg.log_sigma)
                    }
                    .map_err(runtime(stage))?;
                    let misfit = match nlos_core::driver::init_tau(&hist)
                        .and_then(|tau| rel_misfit(&v, &tau, &op))
                    {
                        Ok(m) => m.to_string(),
                        Err(Error::ZeroSignal) => "nan".into(),
                        Err(e) => return Err(runtime(stage)(e)),
                    };
                    (v, format!("iteration,misfit\n0,{misfit}\n"))
                }
            };
            let surface = thresholded_surface(&volume, cfg.surface_threshold.unwrap_or(0.0))
                .map_err(runtime("surface"))?;
            (volume, surface, trace, None)
        }
    };

    let manifest = Manifest {
        version: MANIFEST_VERSION,
        method: stage.into(),
        rng_id: hist.rng_id.clone(),
        seed: hist.seed,
        pulses: hist.pulses,
        grid: grid.clone(),
        config: serde_json::to_value(&cfg).map_err(|e| invalid(e.into()))?,
        params,
    };
    let json = manifest.to_json().map_err(runtime("write"))?;
    for (suffix, bytes) in [
        (".vol", write_volume(&volume)),
        (".surf", write_surface(&surface)),
        (".trace.csv", trace.into_bytes()),
        (".manifest.json", json.into_bytes()),
    ] {
        write_file(&with_suffix(output, suffix), &bytes).map_err(runtime("write"))?;
    }
    info!("{stage}: {} foreground pixels", surface.foreground_count());
    Ok(())
}

fn run_metrics(recon: &Path, truth: &Path, output: &Path) -> Result<(), Failure> {
    let load = |p: &Path| {
        read_file(p)
            .and_then(|b| read_surface(&b, None))
            .map_err(invalid)
    };
    let m = metrics(&load(recon)?, &load(truth)?).map_err(invalid)?;
    let json = serde_json::to_string_pretty(&m).map_err(|e| invalid(e.into()))? + "\n";
    write_file(output, json.as_bytes()).map_err(runtime("write"))
}

fn run_render(input: &Path, view: View, map: Map, output: &Path) -> Result<(), Failure> {
    let bytes = read_file(input).map_err(invalid)?;
    let magic = bytes.split(|&b| b == b'\n').next().unwrap_or_default();
    let img = if magic == VOLUME_MAGIC.as_bytes() {
        project_volume(&read_volume(&bytes).map_err(invalid)?, view)
    } else if magic == SURFACE_MAGIC.as_bytes() {
        let s = read_surface(&bytes, None).map_err(invalid)?;
        match (view, map) {
            (View::Front, Map::Albedo) => surface_albedo_map(&s),
            _ => project_surface(&s, view),
        }
    } else {
        return Err(invalid(Error::Format {
            offset: 0,
            message: format!(
                "input: expected a {VOLUME_MAGIC} or {SURFACE_MAGIC} file (histograms, {HISTOGRAM_MAGIC}, cannot be rendered)"
            ),
        }));
    };
    write_file(output, &to_pgm16(&img)).map_err(runtime("write"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate {
            scene,
            geometry,
            pulses,
            seed,
            output,
        } => run_simulate(&scene, &geometry, pulses, seed, &output),
        Command::Reconstruct {
            method,
            config,
            input,
            output,
        } => run_reconstruct(method, &config, &input, &output),
        Command::Metrics {
            recon,
            truth,
            output,
        } => run_metrics(&recon, &truth, &output),
        Command::Render {
            input,
            view,
            map,
            output,
        } => run_render(&input, view, map, &output),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.error);
            ExitCode::from(f.code)
        }
    }
}
