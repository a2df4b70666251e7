use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use f2b_core::backpred::{predict_back, BackPredictorSpec, PredictionInput};
use f2b_core::fusion::fuse_with_stats;
use f2b_core::geometry::{load_mesh, save_obj};
use f2b_core::metrics::{evaluate, EvalReport};
use f2b_core::ortho::{
    load_cloud, load_maps, render_back_truth, render_maps, save_cloud, save_maps, ViewFrame,
};
use f2b_core::pipeline::{
    prepare_mesh, read_manifest, run_corpus, run_pipeline, view_direction, PipelineConfig,
    PipelineInput, PredictorKind,
};
use f2b_core::recon::reconstruct;
use f2b_core::symmetry::{detect_symmetry, reflect_maps, write_plane_record};

/// Single-view 3D reconstruction from front and back 2.5D maps.
#[derive(Parser, Debug)]
#[command(name = "f2b", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Flat key=value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Map resolution.
    #[arg(long, global = true, value_parser = ["137", "256"])]
    resolution: Option<String>,
    /// Config override, `key=value`; repeatable and applied last.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// More log output (-v debug, -vv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Normalize a mesh and render its front maps.
    Render {
        mesh: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the true back maps here.
        #[arg(long)]
        back: Option<PathBuf>,
    },
    /// Detect a reflective symmetry plane in front maps.
    Symmetry {
        front: PathBuf,
        /// Plane record output.
        #[arg(long)]
        out: PathBuf,
        /// Write reflected maps when the verdict is symmetric.
        #[arg(long)]
        reflected: Option<PathBuf>,
    },
    /// Predict back maps from front (and reflected) maps.
    PredictBack {
        front: PathBuf,
        #[arg(long)]
        reflected: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// oracle, heuristic or external; defaults to the config.
        #[arg(long)]
        predictor: Option<String>,
        /// Ground-truth mesh for the oracle predictor.
        #[arg(long)]
        mesh: Option<PathBuf>,
        /// Shell command for the external predictor.
        #[arg(long)]
        command: Option<String>,
    },
    /// Fuse front, reflected and back maps into an oriented point cloud.
    Fuse {
        front: PathBuf,
        back: PathBuf,
        #[arg(long)]
        reflected: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Screened Poisson reconstruction of an oriented point cloud.
    Reconstruct {
        cloud: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        grid_res: Option<usize>,
        #[arg(long)]
        screen_weight: Option<f64>,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Compare a reconstruction against ground truth.
    Evaluate {
        pred: PathBuf,
        truth: PathBuf,
        /// Normalize the ground truth the way `render` does.
        #[arg(long)]
        normalize: bool,
        #[arg(long)]
        samples: Option<usize>,
        /// Append a CSV row (with header when the file is new).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run every stage on a mesh or F2BM front maps.
    Pipeline {
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Reuse stage artifacts that are still valid.
        #[arg(long)]
        resume: bool,
    },
    /// Run the pipeline over a manifest of `path [tag]` lines.
    Corpus {
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        resume: bool,
    },
}

const EXIT_PARTIAL: u8 = 2;

fn load_config(g: &Global) -> Result<PipelineConfig> {
    let mut config = match &g.config {
        Some(path) => {
            PipelineConfig::load(path).with_context(|| format!("loading {}", path.display()))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(seed) = g.seed {
        config.seed = seed;
    }
    if let Some(res) = &g.resolution {
        config.set("resolution", res)?;
    }
    for o in &g.overrides {
        config.apply_override(o)?;
    }
    config.validate()?;
    Ok(config)
}

fn maps_arg(path: &Path) -> Result<f2b_core::ortho::MapSet> {
    load_maps(path, None).with_context(|| format!("reading {}", path.display()))
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut config = load_config(&cli.global)?;
    match cli.command {
        Command::Render { mesh, out, back } => {
            let mesh = prepare_mesh(&mesh)?;
            let frame = ViewFrame::fit(&mesh, view_direction(&config), config.resolution)?;
            let front = render_maps(&mesh, &frame)?;
            save_maps(&front, &out)?;
            println!("front_pixels={}", front.defined_count());
            if let Some(back_path) = back {
                let b = render_back_truth(&mesh, &frame)?;
                save_maps(&b, &back_path)?;
                println!("back_pixels={}", b.defined_count());
            }
        }
        Command::Symmetry {
            front,
            out,
            reflected,
        } => {
            let maps = maps_arg(&front)?;
            let verdict = detect_symmetry(&maps, &config.symmetry);
            let record = write_plane_record(&verdict);
            std::fs::write(&out, &record).with_context(|| format!("writing {}", out.display()))?;
            print!("{record}");
            if let (Some(path), Some(plane)) = (reflected, verdict.plane) {
                save_maps(&reflect_maps(&maps, &plane), path)?;
            }
        }
        Command::PredictBack {
            front,
            reflected,
            out,
            predictor,
            mesh,
            command,
        } => {
            if let Some(p) = predictor {
                config.set("predictor", &p)?;
            }
            if let Some(c) = command {
                config.set("predictor.command", &c)?;
            }
            let spec = match config.predictor {
                PredictorKind::Oracle => match mesh {
                    Some(m) => BackPredictorSpec::Oracle {
                        mesh: prepare_mesh(m)?,
                    },
                    None => bail!("the oracle predictor needs --mesh"),
                },
                PredictorKind::Heuristic => BackPredictorSpec::Heuristic,
                PredictorKind::External => BackPredictorSpec::External {
                    command: config
                        .predictor_command
                        .clone()
                        .context("the external predictor needs --command or predictor.command")?,
                    workdir: None,
                    timeout: config.predictor_timeout,
                },
            };
            let front = maps_arg(&front)?;
            let reflected = reflected.map(|r| maps_arg(&r)).transpose()?;
            let back = predict_back(
                &spec,
                PredictionInput {
                    front: &front,
                    reflected: reflected.as_ref(),
                },
            )?;
            save_maps(&back, &out)?;
            println!("back_pixels={}", back.defined_count());
        }
        Command::Fuse {
            front,
            back,
            reflected,
            out,
        } => {
            let front = maps_arg(&front)?;
            let back = maps_arg(&back)?;
            let reflected = reflected.map(|r| maps_arg(&r)).transpose()?;
            let (cloud, stats) =
                fuse_with_stats(&front, reflected.as_ref(), &back, &config.fusion)?;
            save_cloud(&cloud, &out)?;
            println!(
                "points={} culled_by_front={} culled_by_reflected={} displaced={} outliers={}",
                cloud.len(),
                stats.culled_by_front,
                stats.culled_by_reflected,
                stats.displaced,
                stats.outliers
            );
        }
        Command::Reconstruct {
            cloud,
            out,
            grid_res,
            screen_weight,
            tol,
        } => {
            let mut params = config.recon;
            if let Some(g) = grid_res {
                params.grid_resolution = g;
            }
            if let Some(w) = screen_weight {
                params.screening = w;
            }
            if let Some(t) = tol {
                params.tolerance = t;
            }
            let cloud = load_cloud(&cloud)?;
            let mesh = reconstruct(&cloud, &params)?;
            save_obj(&mesh, &out)?;
            println!(
                "vertices={} triangles={} watertight={}",
                mesh.vertices.len(),
                mesh.triangles.len(),
                mesh.is_watertight()
            );
        }
        Command::Evaluate {
            pred,
            truth,
            normalize,
            samples,
            csv,
        } => {
            let pred = load_mesh(&pred)?;
            let truth = if normalize {
                prepare_mesh(&truth)?
            } else {
                load_mesh(&truth)?
            };
            let n = samples.unwrap_or(config.eval_samples).max(1);
            let report = evaluate(&pred, &truth, n, config.eval_seed)?;
            print!("{}", report.to_key_values());
            if let Some(path) = csv {
                append_csv(&path, &report)?;
            }
        }
        Command::Pipeline { input, out, resume } => {
            if let Some(o) = out {
                config.output = o;
            }
            let artifacts = run_pipeline(&PipelineInput::from_path(input), &config, resume)?;
            println!("output={}", artifacts.dir.display());
            println!(
                "verdict={}",
                if artifacts.verdict.is_symmetric() {
                    "symmetric"
                } else {
                    "asymmetric"
                }
            );
            if let Some(r) = artifacts.report {
                print!("{}", r.to_key_values());
            }
        }
        Command::Corpus {
            manifest,
            out,
            resume,
        } => {
            if let Some(o) = out {
                config.output = o;
            }
            let entries = read_manifest(&manifest)?;
            let outcome = run_corpus(&entries, &config, resume)?;
            println!("results={}", outcome.results_csv.display());
            println!("summary={}", outcome.summary_csv.display());
            println!(
                "succeeded={} failed={}",
                outcome.rows.len(),
                outcome.failures.len()
            );
            for (name, err) in &outcome.failures {
                eprintln!("failed {name}: {err}");
            }
            if !outcome.is_complete() {
                return Ok(ExitCode::from(EXIT_PARTIAL));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn append_csv(path: &Path, report: &EvalReport) -> Result<()> {
    use std::io::Write;
    let fresh = !path.exists();
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    if fresh {
        writeln!(f, "{}", EvalReport::csv_header())?;
    }
    writeln!(f, "{}", report.csv_row())?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if let Some(d) = e
                .downcast_ref::<f2b_core::Error>()
                .and_then(|e| e.diagnostics())
            {
                if !d.is_empty() {
                    eprintln!("diagnostics:\n{d}");
                }
            }
            ExitCode::FAILURE
        }
    }
}
