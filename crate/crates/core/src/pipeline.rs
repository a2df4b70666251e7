//! Pipeline orchestration: flat key=value configuration, single-model runs
//! with resumable on-disk stages, and corpus evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::backpred::{predict_back, BackPredictorSpec, PredictionInput, DEFAULT_EXTERNAL_TIMEOUT};
use crate::error::{Error, Result};
use crate::fusion::{fuse_with_stats, FusionParams, FusionStats};
use crate::geometry::{load_mesh, normalize_mesh, save_obj, TriangleMesh, Vec3};
use crate::metrics::{evaluate, EvalReport, DEFAULT_SAMPLES};
use crate::ortho::{
    load_cloud, load_maps, mask_with_silhouette, render_maps, save_cloud, save_maps, MapSet,
    ViewFrame, DEFAULT_RESOLUTION, MIN_RESOLUTION,
};
use crate::recon::{reconstruct, ReconParams};
use crate::shapes::elevated_direction;
use crate::symmetry::{
    coverage, detect_symmetry, parse_plane, read_plane_record, reflect_maps, write_plane_record,
    SymmetryConfig, SymmetryVerdict,
};
use crate::util::digest;

pub const MAX_RESOLUTION: usize = 4096;

pub const FRONT_FILE: &str = "front.f2bm";
pub const PLANE_FILE: &str = "plane.txt";
pub const REFLECTED_FILE: &str = "reflected.f2bm";
pub const BACK_FILE: &str = "back.f2bm";
pub const CLOUD_FILE: &str = "cloud.txt";
pub const MESH_FILE: &str = "mesh.obj";
pub const REPORT_FILE: &str = "report.txt";
pub const LOG_FILE: &str = "pipeline.log";
const STAMP_DIR: &str = ".stamps";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymmetryMode {
    Detect,
    None,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictorKind {
    Oracle,
    Heuristic,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ViewSpec {
    /// Elevated view drawn from `seed`.
    Random,
    Direction(Vec3),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub resolution: usize,
    /// Seeds the view draw.
    pub seed: u64,
    pub view: ViewSpec,
    pub symmetry_mode: SymmetryMode,
    /// `nx,ny,nz,d`, used in fixed mode.
    pub symmetry_plane: Option<String>,
    pub symmetry: SymmetryConfig,
    pub fusion: FusionParams,
    pub recon: ReconParams,
    pub predictor: PredictorKind,
    pub predictor_command: Option<String>,
    pub predictor_timeout: Duration,
    pub eval_samples: usize,
    pub eval_seed: u64,
    pub output: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            resolution: DEFAULT_RESOLUTION,
            seed: 0,
            view: ViewSpec::Random,
            symmetry_mode: SymmetryMode::Detect,
            symmetry_plane: None,
            symmetry: SymmetryConfig::default(),
            fusion: FusionParams::default(),
            recon: ReconParams::default(),
            predictor: PredictorKind::Heuristic,
            predictor_command: None,
            predictor_timeout: DEFAULT_EXTERNAL_TIMEOUT,
            eval_samples: DEFAULT_SAMPLES,
            eval_seed: 0,
            output: PathBuf::from("f2b-out"),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for {key}")))
}

fn parse_vec3(key: &str, value: &str) -> Result<Vec3> {
    let v: Vec<f64> = value
        .split(',')
        .map(|t| parse_value(key, t))
        .collect::<Result<_>>()?;
    if v.len() != 3 {
        return Err(Error::Config(format!("{key} needs x,y,z, got '{value}'")));
    }
    Ok(Vec3::new(v[0], v[1], v[2]))
}

impl PipelineConfig {
    pub const KEYS: [&'static str; 33] = [
        "resolution",
        "seed",
        "view",
        "output",
        "symmetry",
        "symmetry.plane",
        "symmetry.seed",
        "symmetry.rounds",
        "symmetry.pairs_per_round",
        "symmetry.bandwidth",
        "symmetry.hull_px",
        "symmetry.hull_frac",
        "symmetry.visibility_frac",
        "symmetry.loose_factor",
        "symmetry.min_coverage",
        "symmetry.icp_iterations",
        "symmetry.icp_distance_px",
        "symmetry.icp_normal_deg",
        "symmetry.max_candidates",
        "symmetry.offset_polish",
        "fusion.min_separation",
        "fusion.outlier_threshold",
        "fusion.neighbor_radius",
        "recon.grid_resolution",
        "recon.screening",
        "recon.tolerance",
        "recon.max_iterations",
        "predictor",
        "predictor.command",
        "predictor.timeout",
        "eval.samples",
        "eval.seed",
        "eval.enabled",
    ];

    /// Parses a config file on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut config = PipelineConfig::default();
        config.apply_text(text)?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PipelineConfig::from_text(&text)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            self.apply_override(line)
                .map_err(|e| Error::Config(format!("line {}: {e}", k + 1)))?;
        }
        Ok(())
    }

    /// Applies one `key=value` assignment.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got '{assignment}'")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let sym = &mut self.symmetry;
        match key {
            "resolution" => self.resolution = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "view" => {
                self.view = match value {
                    "random" => ViewSpec::Random,
                    v => ViewSpec::Direction(parse_vec3(key, v)?),
                }
            }
            "output" => self.output = PathBuf::from(value),
            "symmetry" => {
                self.symmetry_mode = match value {
                    "detect" => SymmetryMode::Detect,
                    "none" => SymmetryMode::None,
                    "fixed" => SymmetryMode::Fixed,
                    v => {
                        return Err(Error::Config(format!(
                            "symmetry must be detect, none or fixed, got '{v}'"
                        )))
                    }
                }
            }
            "symmetry.plane" => {
                self.symmetry_plane = (!value.is_empty()).then(|| value.to_string())
            }
            "symmetry.seed" => sym.seed = parse_value(key, value)?,
            "symmetry.rounds" => sym.rounds = parse_value(key, value)?,
            "symmetry.pairs_per_round" => sym.pairs_per_round = parse_value(key, value)?,
            "symmetry.bandwidth" => sym.bandwidth = parse_value(key, value)?,
            "symmetry.hull_px" => sym.hull_px = parse_value(key, value)?,
            "symmetry.hull_frac" => sym.hull_frac = parse_value(key, value)?,
            "symmetry.visibility_frac" => sym.visibility_frac = parse_value(key, value)?,
            "symmetry.loose_factor" => sym.loose_factor = parse_value(key, value)?,
            "symmetry.min_coverage" => sym.min_coverage = parse_value(key, value)?,
            "symmetry.icp_iterations" => sym.icp_iterations = parse_value(key, value)?,
            "symmetry.icp_distance_px" => sym.icp_distance_px = parse_value(key, value)?,
            "symmetry.icp_normal_deg" => sym.icp_normal_deg = parse_value(key, value)?,
            "symmetry.max_candidates" => sym.max_candidates = parse_value(key, value)?,
            "symmetry.offset_polish" => sym.offset_polish = parse_value(key, value)?,
            "fusion.min_separation" => self.fusion.min_separation = parse_value(key, value)?,
            "fusion.outlier_threshold" => self.fusion.outlier_threshold = parse_value(key, value)?,
            "fusion.neighbor_radius" => self.fusion.neighbor_radius = parse_value(key, value)?,
            "recon.grid_resolution" => self.recon.grid_resolution = parse_value(key, value)?,
            "recon.screening" => self.recon.screening = parse_value(key, value)?,
            "recon.tolerance" => self.recon.tolerance = parse_value(key, value)?,
            "recon.max_iterations" => self.recon.max_iterations = parse_value(key, value)?,
            "predictor" => {
                self.predictor = match value {
                    "oracle" => PredictorKind::Oracle,
                    "heuristic" => PredictorKind::Heuristic,
                    "external" => PredictorKind::External,
                    v => {
                        return Err(Error::Config(format!(
                            "predictor must be oracle, heuristic or external, got '{v}'"
                        )))
                    }
                }
            }
            "predictor.command" => {
                self.predictor_command = (!value.is_empty()).then(|| value.to_string())
            }
            "predictor.timeout" => {
                let secs: f64 = parse_value(key, value)?;
                if !(secs > 0.0 && secs.is_finite()) {
                    return Err(Error::Config(format!(
                        "predictor.timeout must be positive, got {secs}"
                    )));
                }
                self.predictor_timeout = Duration::from_secs_f64(secs);
            }
            "eval.samples" => self.eval_samples = parse_value(key, value)?,
            "eval.seed" => self.eval_seed = parse_value(key, value)?,
            "eval.enabled" => {
                let on: bool = parse_value(key, value)?;
                if !on {
                    self.eval_samples = 0;
                } else if self.eval_samples == 0 {
                    self.eval_samples = DEFAULT_SAMPLES;
                }
            }
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let sym = &self.symmetry;
        let opt = |s: &Option<String>| s.clone().unwrap_or_default();
        Some(match key {
            "resolution" => self.resolution.to_string(),
            "seed" => self.seed.to_string(),
            "view" => match self.view {
                ViewSpec::Random => "random".into(),
                ViewSpec::Direction(v) => format!("{},{},{}", v.x, v.y, v.z),
            },
            "output" => self.output.display().to_string(),
            "symmetry" => match self.symmetry_mode {
                SymmetryMode::Detect => "detect",
                SymmetryMode::None => "none",
                SymmetryMode::Fixed => "fixed",
            }
            .into(),
            "symmetry.plane" => opt(&self.symmetry_plane),
            "symmetry.seed" => sym.seed.to_string(),
            "symmetry.rounds" => sym.rounds.to_string(),
            "symmetry.pairs_per_round" => sym.pairs_per_round.to_string(),
            "symmetry.bandwidth" => sym.bandwidth.to_string(),
            "symmetry.hull_px" => sym.hull_px.to_string(),
            "symmetry.hull_frac" => sym.hull_frac.to_string(),
            "symmetry.visibility_frac" => sym.visibility_frac.to_string(),
            "symmetry.loose_factor" => sym.loose_factor.to_string(),
            "symmetry.min_coverage" => sym.min_coverage.to_string(),
            "symmetry.icp_iterations" => sym.icp_iterations.to_string(),
            "symmetry.icp_distance_px" => sym.icp_distance_px.to_string(),
            "symmetry.icp_normal_deg" => sym.icp_normal_deg.to_string(),
            "symmetry.max_candidates" => sym.max_candidates.to_string(),
            "symmetry.offset_polish" => sym.offset_polish.to_string(),
            "fusion.min_separation" => self.fusion.min_separation.to_string(),
            "fusion.outlier_threshold" => self.fusion.outlier_threshold.to_string(),
            "fusion.neighbor_radius" => self.fusion.neighbor_radius.to_string(),
            "recon.grid_resolution" => self.recon.grid_resolution.to_string(),
            "recon.screening" => self.recon.screening.to_string(),
            "recon.tolerance" => self.recon.tolerance.to_string(),
            "recon.max_iterations" => self.recon.max_iterations.to_string(),
            "predictor" => match self.predictor {
                PredictorKind::Oracle => "oracle",
                PredictorKind::Heuristic => "heuristic",
                PredictorKind::External => "external",
            }
            .into(),
            "predictor.command" => opt(&self.predictor_command),
            "predictor.timeout" => self.predictor_timeout.as_secs_f64().to_string(),
            "eval.samples" => self.eval_samples.to_string(),
            "eval.seed" => self.eval_seed.to_string(),
            "eval.enabled" => (self.eval_samples > 0).to_string(),
            _ => return None,
        })
    }

    /// Every key in canonical order; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            let _ = writeln!(out, "{key}={}", self.get(key).unwrap_or_default());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if !(MIN_RESOLUTION..=MAX_RESOLUTION).contains(&self.resolution) {
            return Err(Error::Config(format!(
                "resolution {} outside [{MIN_RESOLUTION}, {MAX_RESOLUTION}]",
                self.resolution
            )));
        }
        if let ViewSpec::Direction(v) = self.view {
            if !(v.norm() > 0.0 && v.iter().all(|c| c.is_finite())) {
                return Err(Error::Config(
                    "view direction must be a finite nonzero vector".into(),
                ));
            }
        }
        self.symmetry.validate()?;
        match (&self.symmetry_mode, &self.symmetry_plane) {
            (SymmetryMode::Fixed, None) => {
                return Err(Error::Config("symmetry=fixed needs symmetry.plane".into()));
            }
            (_, Some(text)) => {
                parse_plane(text)?;
            }
            _ => {}
        }
        self.fusion.validate()?;
        self.recon.validate()?;
        if self.predictor == PredictorKind::External && self.predictor_command.is_none() {
            return Err(Error::Config(
                "predictor=external needs predictor.command".into(),
            ));
        }
        Ok(())
    }

    /// Config text that determines stage results; excludes the output path.
    fn fingerprint(&self) -> String {
        self.to_text()
            .lines()
            .filter(|l| !l.starts_with("output="))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// What the pipeline starts from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PipelineInput {
    /// OBJ or OFF mesh; it is normalized, rendered, and used as ground truth.
    Mesh(PathBuf),
    /// F2BM front maps with their `.frame` sidecar.
    Maps(PathBuf),
}

impl PipelineInput {
    /// Maps for `.f2bm` files, a mesh otherwise.
    pub fn from_path(path: impl Into<PathBuf>) -> Self {
        let path = path.into();
        let is_maps = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("f2bm"));
        if is_maps {
            PipelineInput::Maps(path)
        } else {
            PipelineInput::Mesh(path)
        }
    }

    pub fn path(&self) -> &Path {
        match self {
            PipelineInput::Mesh(p) | PipelineInput::Maps(p) => p,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub name: &'static str,
    pub seconds: f64,
    pub resumed: bool,
    /// (file name, short digest) of each artifact.
    pub artifacts: Vec<(String, String)>,
}

impl StageRecord {
    pub fn log_line(&self) -> String {
        let mut s = format!(
            "stage={} secs={:.3} resumed={}",
            self.name, self.seconds, self.resumed
        );
        for (file, d) in &self.artifacts {
            let _ = write!(s, " {file}={d}");
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct Artifacts {
    pub dir: PathBuf,
    pub verdict: SymmetryVerdict,
    pub fusion: Option<FusionStats>,
    pub report: Option<EvalReport>,
    pub stages: Vec<StageRecord>,
}

impl Artifacts {
    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    pub fn has_reflected(&self) -> bool {
        self.verdict.is_symmetric()
    }
}

struct Runner {
    dir: PathBuf,
    fingerprint: String,
    chain: String,
    resume: bool,
    stages: Vec<StageRecord>,
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(digest(&bytes))
}

impl Runner {
    fn digests(&self, files: &[&str]) -> Result<Vec<(String, String)>> {
        files
            .iter()
            .map(|f| Ok((f.to_string(), file_digest(&self.dir.join(f))?)))
            .collect()
    }

    fn stamp_text(key: &str, artifacts: &[(String, String)]) -> String {
        let mut s = format!("key={key}\n");
        for (f, d) in artifacts {
            let _ = writeln!(s, "{f}={d}");
        }
        s
    }

    /// Runs `compute` (which writes `files`), or, when resuming and the
    /// stamp matches both the upstream state and the files on disk,
    /// `load` instead.
    fn stage<T>(
        &mut self,
        name: &'static str,
        files: &[&str],
        compute: impl FnOnce(&Path) -> Result<T>,
        load: impl FnOnce(&Path) -> Result<T>,
    ) -> Result<T> {
        let wrap = |e: Error| Error::Stage {
            stage: name,
            source: Box::new(e),
        };
        let start = Instant::now();
        let key = digest(format!("{name}\n{}\n{}", self.fingerprint, self.chain).as_bytes());
        let stamp = self.dir.join(STAMP_DIR).join(name);
        let fresh = self.resume
            && fs::read_to_string(&stamp).ok().is_some_and(|text| {
                self.digests(files)
                    .is_ok_and(|current| text == Self::stamp_text(&key, &current))
            });
        let value = if fresh {
            load(&self.dir).map_err(wrap)?
        } else {
            let _ = fs::remove_file(&stamp);
            compute(&self.dir).map_err(wrap)?
        };
        let artifacts = self.digests(files).map_err(wrap)?;
        if !fresh {
            let dir = self.dir.join(STAMP_DIR);
            fs::create_dir_all(&dir).map_err(|e| wrap(Error::io(&dir, e)))?;
            fs::write(&stamp, Self::stamp_text(&key, &artifacts))
                .map_err(|e| wrap(Error::io(&stamp, e)))?;
        }
        for (f, d) in &artifacts {
            let _ = write!(self.chain, "{name}:{f}={d};");
        }
        let record = StageRecord {
            name,
            seconds: start.elapsed().as_secs_f64(),
            resumed: fresh,
            artifacts,
        };
        log::info!("{}", record.log_line());
        self.stages.push(record);
        Ok(value)
    }
}

pub fn view_direction(config: &PipelineConfig) -> Vec3 {
    match config.view {
        ViewSpec::Random => elevated_direction(&mut ChaCha8Rng::seed_from_u64(config.seed)),
        ViewSpec::Direction(v) => v,
    }
}

/// Loads and normalizes a ground-truth mesh the way the pipeline does.
pub fn prepare_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    Ok(normalize_mesh(&load_mesh(path)?)?.0)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn symmetry_verdict(front: &MapSet, config: &PipelineConfig) -> Result<SymmetryVerdict> {
    Ok(match config.symmetry_mode {
        SymmetryMode::Detect => detect_symmetry(front, &config.symmetry),
        SymmetryMode::None => SymmetryVerdict::asymmetric("symmetry disabled"),
        SymmetryMode::Fixed => {
            let text = config.symmetry_plane.as_deref().unwrap_or_default();
            let plane = parse_plane(text)?;
            let mut v = SymmetryVerdict::asymmetric("fixed plane");
            v.plane = Some(plane);
            v.candidate = Some(plane);
            v.coverage = coverage(front, &reflect_maps(front, &plane));
            v
        }
    })
}

fn predictor_spec(
    config: &PipelineConfig,
    truth: Option<&TriangleMesh>,
) -> Result<BackPredictorSpec> {
    Ok(match config.predictor {
        PredictorKind::Oracle => BackPredictorSpec::Oracle {
            mesh: truth
                .cloned()
                .ok_or_else(|| Error::Config("the oracle predictor needs a mesh input".into()))?,
        },
        PredictorKind::Heuristic => BackPredictorSpec::Heuristic,
        PredictorKind::External => BackPredictorSpec::External {
            command: config.predictor_command.clone().unwrap_or_default(),
            workdir: None,
            timeout: config.predictor_timeout,
        },
    })
}

/// Runs every stage for one input, writing artifacts into `config.output`.
/// With `resume`, stages whose stamps match the current config, upstream
/// artifacts and on-disk outputs are loaded instead of recomputed.
pub fn run_pipeline(
    input: &PipelineInput,
    config: &PipelineConfig,
    resume: bool,
) -> Result<Artifacts> {
    config.validate()?;
    let truth = match input {
        PipelineInput::Mesh(path) => Some(prepare_mesh(path)?),
        PipelineInput::Maps(_) => None,
    };
    // fail before any stage runs
    let spec = predictor_spec(config, truth.as_ref())?;
    let dir = config.output.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut runner = Runner {
        dir: dir.clone(),
        fingerprint: config.fingerprint(),
        chain: format!("input={}", file_digest(input.path())?),
        resume,
        stages: Vec::new(),
    };
    let front_frame = FRONT_FILE.replace(".f2bm", ".frame");
    let front = match (input, &truth) {
        (PipelineInput::Mesh(_), Some(mesh)) => runner.stage(
            "render",
            &[FRONT_FILE, &front_frame],
            |d| {
                let frame = ViewFrame::fit(mesh, view_direction(config), config.resolution)?;
                let maps = render_maps(mesh, &frame)?;
                save_maps(&maps, d.join(FRONT_FILE))?;
                Ok(maps)
            },
            |d| load_maps(d.join(FRONT_FILE), None),
        )?,
        (input, _) => runner.stage(
            "ingest",
            &[FRONT_FILE, &front_frame],
            |d| {
                let maps = mask_with_silhouette(&load_maps(input.path(), None)?)?;
                save_maps(&maps, d.join(FRONT_FILE))?;
                Ok(maps)
            },
            |d| load_maps(d.join(FRONT_FILE), None),
        )?,
    };
    let verdict = runner.stage(
        "symmetry",
        &[PLANE_FILE],
        |d| {
            let v = symmetry_verdict(&front, config)?;
            write_text(&d.join(PLANE_FILE), &write_plane_record(&v))?;
            Ok(v)
        },
        |d| read_plane_record(&read_text(&d.join(PLANE_FILE))?),
    )?;
    let reflected = match verdict.plane {
        Some(plane) => Some(runner.stage(
            "reflect",
            &[REFLECTED_FILE, "reflected.frame"],
            |d| {
                let r = reflect_maps(&front, &plane);
                save_maps(&r, d.join(REFLECTED_FILE))?;
                Ok(r)
            },
            |d| load_maps(d.join(REFLECTED_FILE), None),
        )?),
        None => {
            for f in [REFLECTED_FILE, "reflected.frame"] {
                let _ = fs::remove_file(dir.join(f));
            }
            None
        }
    };
    let back = runner.stage(
        "predict_back",
        &[BACK_FILE, "back.frame"],
        |d| {
            let input = PredictionInput {
                front: &front,
                reflected: reflected.as_ref(),
            };
            let back = predict_back(&spec, input)?;
            save_maps(&back, d.join(BACK_FILE))?;
            Ok(back)
        },
        |d| load_maps(d.join(BACK_FILE), None),
    )?;
    let (cloud, fusion) = runner.stage(
        "fuse",
        &[CLOUD_FILE],
        |d| {
            let (cloud, stats) =
                fuse_with_stats(&front, reflected.as_ref(), &back, &config.fusion)?;
            save_cloud(&cloud, d.join(CLOUD_FILE))?;
            // downstream stages see exactly what a resumed run would load
            Ok((load_cloud(d.join(CLOUD_FILE))?, Some(stats)))
        },
        |d| Ok((load_cloud(d.join(CLOUD_FILE))?, None)),
    )?;
    let mesh = runner.stage(
        "reconstruct",
        &[MESH_FILE],
        |d| {
            let mesh = reconstruct(&cloud, &config.recon)?;
            save_obj(&mesh, d.join(MESH_FILE))?;
            load_mesh(d.join(MESH_FILE))
        },
        |d| load_mesh(d.join(MESH_FILE)),
    )?;
    let report = match &truth {
        Some(truth) if config.eval_samples > 0 => Some(runner.stage(
            "evaluate",
            &[REPORT_FILE],
            |d| {
                let r = evaluate(&mesh, truth, config.eval_samples, config.eval_seed)?;
                write_text(&d.join(REPORT_FILE), &r.to_key_values())?;
                Ok(r)
            },
            |d| read_report(&read_text(&d.join(REPORT_FILE))?),
        )?),
        _ => None,
    };
    let log: String = runner.stages.iter().map(|s| s.log_line() + "\n").collect();
    write_text(&dir.join(LOG_FILE), &log)?;
    Ok(Artifacts {
        dir,
        verdict,
        fusion,
        report,
        stages: runner.stages,
    })
}

/// Parses the key=value text written by [`EvalReport::to_key_values`].
pub fn read_report(text: &str) -> Result<EvalReport> {
    let kv: BTreeMap<&str, &str> = text
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim(), v.trim()))
        .collect();
    fn field<T: FromStr>(kv: &BTreeMap<&str, &str>, key: &str) -> Result<T> {
        kv.get(key)
            .ok_or_else(|| Error::Format(format!("report lacks {key}")))?
            .parse()
            .map_err(|_| Error::Format(format!("invalid report field {key}")))
    }
    Ok(EvalReport {
        md: field(&kv, "md")?,
        md_max: field(&kv, "md_max")?,
        md_forward: field(&kv, "md_forward")?,
        md_backward: field(&kv, "md_backward")?,
        cd: field(&kv, "cd")?,
        cd_x10: field(&kv, "cd_x10")?,
        normal_consistency: field(&kv, "normal_consistency")?,
        samples: field(&kv, "samples")?,
        seed: field(&kv, "seed")?,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusEntry {
    pub name: String,
    pub input: PipelineInput,
    pub tag: String,
}

/// Reads a manifest of `path [tag]` lines. Relative paths are resolved
/// against the manifest's directory; names are file stems and must be
/// unique.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<CorpusEntry>> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&text, base)
}

pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<CorpusEntry>> {
    let mut entries: Vec<CorpusEntry> = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let file = PathBuf::from(parts.next().unwrap_or_default());
        let tag = parts.next().unwrap_or("untagged").to_string();
        if parts.next().is_some() {
            return Err(Error::parse(k + 1, "expected 'path [tag]'"));
        }
        let name = file
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| Error::parse(k + 1, "entry has no file name"))?;
        if name.contains(',') || tag.contains(',') {
            return Err(Error::parse(k + 1, "names and tags may not contain commas"));
        }
        if entries.iter().any(|e| e.name == name) {
            return Err(Error::parse(
                k + 1,
                format!("duplicate model name '{name}'"),
            ));
        }
        let file = if file.is_absolute() {
            file
        } else {
            base.join(file)
        };
        entries.push(CorpusEntry {
            name,
            input: PipelineInput::from_path(file),
            tag,
        });
    }
    Ok(entries)
}

#[derive(Debug, Clone)]
pub struct CorpusRow {
    pub name: String,
    pub tag: String,
    pub report: Option<EvalReport>,
    pub symmetric: bool,
}

#[derive(Debug, Clone)]
pub struct CorpusOutcome {
    /// Successful models in manifest order.
    pub rows: Vec<CorpusRow>,
    /// (name, error message) of failed models in manifest order.
    pub failures: Vec<(String, String)>,
    pub results_csv: PathBuf,
    pub summary_csv: PathBuf,
}

impl CorpusOutcome {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

const MEAN_FIELDS: usize = 7;

fn report_means(fields: &[f64; MEAN_FIELDS], count: usize) -> String {
    fields
        .iter()
        .map(|v| (v / count as f64).to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn mean_values(r: &EvalReport) -> [f64; MEAN_FIELDS] {
    [
        r.md,
        r.md_max,
        r.md_forward,
        r.md_backward,
        r.cd,
        r.cd_x10,
        r.normal_consistency,
    ]
}

/// CSV with one row per successful model, and a summary with per-tag and
/// overall means of the evaluated ones.
pub fn write_corpus_csv(rows: &[CorpusRow]) -> (String, String) {
    let mut results = format!("name,tag,symmetric,{}\n", EvalReport::csv_header());
    for row in rows {
        let metrics = match &row.report {
            Some(r) => r.csv_row(),
            None => vec![""; EvalReport::FIELDS.len()].join(","),
        };
        let _ = writeln!(
            results,
            "{},{},{},{metrics}",
            row.name, row.tag, row.symmetric
        );
    }
    let mut summary = format!(
        "tag,count,{}\n",
        EvalReport::FIELDS[..MEAN_FIELDS].join(",")
    );
    let mut groups: BTreeMap<&str, ([f64; MEAN_FIELDS], usize)> = BTreeMap::new();
    let mut all = ([0.0; MEAN_FIELDS], 0);
    for row in rows {
        if let Some(r) = &row.report {
            let g = groups.entry(&row.tag).or_insert(([0.0; MEAN_FIELDS], 0));
            for (i, v) in mean_values(r).iter().enumerate() {
                g.0[i] += v;
                all.0[i] += v;
            }
            g.1 += 1;
            all.1 += 1;
        }
    }
    for (tag, (sums, n)) in &groups {
        let _ = writeln!(summary, "{tag},{n},{}", report_means(sums, *n));
    }
    if all.1 > 0 {
        let _ = writeln!(summary, "all,{},{}", all.1, report_means(&all.0, all.1));
    }
    (results, summary)
}

/// Runs every manifest entry (in parallel) into `config.output/<name>` and
/// writes `results.csv` and `summary.csv` into `config.output`. Failures
/// are logged and reported, not fatal.
pub fn run_corpus(
    entries: &[CorpusEntry],
    config: &PipelineConfig,
    resume: bool,
) -> Result<CorpusOutcome> {
    config.validate()?;
    let root = config.output.clone();
    fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    let outcomes: Vec<std::result::Result<CorpusRow, (String, String)>> = entries
        .par_iter()
        .map(|entry| {
            let mut cfg = config.clone();
            cfg.output = root.join(&entry.name);
            match run_pipeline(&entry.input, &cfg, resume) {
                Ok(a) => Ok(CorpusRow {
                    name: entry.name.clone(),
                    tag: entry.tag.clone(),
                    report: a.report,
                    symmetric: a.verdict.is_symmetric(),
                }),
                Err(e) => {
                    log::error!("model {} failed: {e}", entry.name);
                    Err((entry.name.clone(), e.to_string()))
                }
            }
        })
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => rows.push(r),
            Err(f) => failures.push(f),
        }
    }
    let (results, summary) = write_corpus_csv(&rows);
    let results_csv = root.join("results.csv");
    let summary_csv = root.join("summary.csv");
    write_text(&results_csv, &results)?;
    write_text(&summary_csv, &summary)?;
    Ok(CorpusOutcome {
        rows,
        failures,
        results_csv,
        summary_csv,
    })
}
