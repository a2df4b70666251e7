//! Back-view map prediction and map similarity measures.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::geometry::{TriangleMesh, Vec3};
use crate::ortho::{load_maps, render_back_truth, save_maps, MapSet};

/// Depth loss weight in [`similarity_score`].
pub const DEPTH_WEIGHT: f64 = 1000.0;
/// Normal loss weight in [`similarity_score`].
pub const NORMAL_WEIGHT: f64 = 100.0;
/// Environment variable naming the root for external predictor temp dirs.
pub const TMPDIR_ENV: &str = "F2B_TMPDIR";
pub const DEFAULT_EXTERNAL_TIMEOUT: Duration = Duration::from_secs(60);

/// Thickness used by the heuristic when no pixel has both a front and a
/// reflected depth, as a fraction of the frustum depth range.
const FALLBACK_THICKNESS: f64 = 0.1;
const HIDDEN_GAP_PX: f64 = 2.0;

#[derive(Debug, Clone)]
pub enum BackPredictorSpec {
    /// Renders the true back view of a known mesh.
    Oracle { mesh: TriangleMesh },
    /// Reflected back candidates, padded with a constant thickness.
    Heuristic,
    /// Runs `command` through `sh -c` with `{dir}` replaced by a fresh
    /// directory holding `front.f2bm` (and `reflected.f2bm`); the command
    /// must leave `back.f2bm` there.
    External {
        command: String,
        workdir: Option<PathBuf>,
        timeout: Duration,
    },
}

impl BackPredictorSpec {
    pub fn name(&self) -> &'static str {
        match self {
            BackPredictorSpec::Oracle { .. } => "oracle",
            BackPredictorSpec::Heuristic => "heuristic",
            BackPredictorSpec::External { .. } => "external",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PredictionInput<'a> {
    pub front: &'a MapSet,
    pub reflected: Option<&'a MapSet>,
}

/// Back maps in the opposite frame of `input.front`, masked to the front
/// silhouette dilated by one pixel.
pub fn predict_back(spec: &BackPredictorSpec, input: PredictionInput) -> Result<MapSet> {
    if let Some(r) = input.reflected {
        if !r.frame.approx_eq(&input.front.frame, 1e-12) {
            return Err(Error::Shape(
                "reflected maps are not in the front frame".into(),
            ));
        }
    }
    let back = match spec {
        BackPredictorSpec::Oracle { mesh } => render_back_truth(mesh, &input.front.frame)?,
        BackPredictorSpec::Heuristic => heuristic_back(input.front, input.reflected),
        BackPredictorSpec::External {
            command,
            workdir,
            timeout,
        } => external_back(command, workdir.as_deref(), *timeout, input)?,
    };
    Ok(mask_to_front(back, input.front))
}

fn mask_to_front(mut back: MapSet, front: &MapSet) -> MapSet {
    let allowed = front.dilated_silhouette(1);
    for (idx, &ok) in allowed.iter().enumerate() {
        if !ok && back.is_defined(idx) {
            back.clear(idx);
        }
    }
    back
}

/// Reflected samples that can stand for the back surface: viewer-averted
/// and more than `HIDDEN_GAP_PX` pixels behind the front surface. The rest
/// are reflections of visible surface.
fn hidden_reflected(front: &MapSet, reflected: &MapSet, idx: usize) -> bool {
    let gap = HIDDEN_GAP_PX * front.frame.pixel_size();
    front.is_defined(idx)
        && reflected.is_defined(idx)
        && reflected.depth[idx] as f64 - front.depth[idx] as f64 > gap
        && reflected.world_normal(idx).dot(&front.frame.direction) > 0.0
}

/// Median of `reflected - front` over pixels holding a hidden reflected
/// sample.
pub fn median_thickness(front: &MapSet, reflected: &MapSet) -> Option<f64> {
    let mut t: Vec<f64> = (0..front.depth.len())
        .filter(|&i| hidden_reflected(front, reflected, i))
        .map(|i| reflected.depth[i] as f64 - front.depth[i] as f64)
        .collect();
    if t.is_empty() {
        return None;
    }
    t.sort_by(f64::total_cmp);
    let m = t.len() / 2;
    Some(if t.len() % 2 == 1 {
        t[m]
    } else {
        0.5 * (t[m - 1] + t[m])
    })
}

fn heuristic_back(front: &MapSet, reflected: Option<&MapSet>) -> MapSet {
    let frame = &front.frame;
    let back_frame = frame.opposite();
    let thickness = reflected
        .and_then(|r| median_thickness(front, r))
        .unwrap_or(FALLBACK_THICKNESS * frame.depth_range());
    let d = frame.direction;
    let mut out = MapSet::empty(back_frame);
    for idx in (0..front.depth.len()).filter(|&i| front.is_defined(i)) {
        let (col, row) = front.coords(idx);
        let (depth, normal) = match reflected.filter(|r| hidden_reflected(front, r, idx)) {
            Some(r) => (r.depth[idx] as f64, r.world_normal(idx)),
            None => {
                let n = front.world_normal(idx);
                (front.depth[idx] as f64 + thickness, n - 2.0 * n.dot(&d) * d)
            }
        };
        let p = frame.point_at(col, row, depth);
        out.set(idx, back_frame.depth_of(&p), &back_frame.to_view(&normal));
    }
    out
}

fn external_back(
    command: &str,
    workdir: Option<&Path>,
    timeout: Duration,
    input: PredictionInput,
) -> Result<MapSet> {
    let fail = |message: String, diagnostics: String| Error::Predictor {
        message,
        diagnostics,
    };
    let dir = match std::env::var_os(TMPDIR_ENV) {
        Some(root) => tempfile::Builder::new().prefix("f2b-").tempdir_in(root),
        None => tempfile::Builder::new().prefix("f2b-").tempdir(),
    }
    .map_err(|e| fail(format!("cannot create temp dir: {e}"), String::new()))?;
    save_maps(input.front, dir.path().join("front.f2bm"))?;
    if let Some(r) = input.reflected {
        save_maps(r, dir.path().join("reflected.f2bm"))?;
    }
    let line = command.replace("{dir}", &dir.path().to_string_lossy());
    let mut cmd = Command::new("sh");
    cmd.arg("-c")
        .arg(&line)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    if let Some(w) = workdir {
        cmd.current_dir(w);
    }
    let mut child = cmd
        .spawn()
        .map_err(|e| fail(format!("cannot start '{line}': {e}"), String::new()))?;
    let drain = |pipe: Option<Box<dyn Read + Send>>| {
        std::thread::spawn(move || {
            let mut buf = Vec::new();
            if let Some(mut p) = pipe {
                let _ = p.read_to_end(&mut buf);
            }
            buf
        })
    };
    let stdout = drain(
        child
            .stdout
            .take()
            .map(|p| Box::new(p) as Box<dyn Read + Send>),
    );
    let stderr = drain(
        child
            .stderr
            .take()
            .map(|p| Box::new(p) as Box<dyn Read + Send>),
    );
    let start = Instant::now();
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) if start.elapsed() >= timeout => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(fail(
                    format!("'{line}' timed out after {timeout:?}"),
                    String::new(),
                ));
            }
            Ok(None) => std::thread::sleep(Duration::from_millis(10)),
            Err(e) => return Err(fail(format!("waiting for '{line}': {e}"), String::new())),
        }
    };
    let text = |h: std::thread::JoinHandle<Vec<u8>>| {
        String::from_utf8_lossy(&h.join().unwrap_or_default()).into_owned()
    };
    let diagnostics = format!("stdout:\n{}\nstderr:\n{}", text(stdout), text(stderr));
    if !status.success() {
        return Err(fail(format!("'{line}' exited with {status}"), diagnostics));
    }
    let back_frame = input.front.frame.opposite();
    load_maps(dir.path().join("back.f2bm"), Some(back_frame))
        .map_err(|e| fail(format!("malformed back.f2bm: {e}"), diagnostics))
}

fn same_lattice(a: &MapSet, b: &MapSet) -> Result<()> {
    if a.resolution() != b.resolution() || !a.frame.approx_eq(&b.frame, 1e-9) {
        return Err(Error::Shape("maps are not in the same frame".into()));
    }
    Ok(())
}

/// Mean absolute depth difference over the full raster, background counted
/// as depth 0, with depths scaled to [0, 1] by the frustum depth range.
pub fn depth_l1(pred: &MapSet, truth: &MapSet) -> Result<f64> {
    same_lattice(pred, truth)?;
    let range = truth.frame.depth_range();
    let at = |m: &MapSet, i: usize| {
        if m.is_defined(i) {
            m.depth[i] as f64 / range
        } else {
            0.0
        }
    };
    let sum: f64 = (0..truth.depth.len())
        .map(|i| (at(pred, i) - at(truth, i)).abs())
        .sum();
    Ok(sum / truth.depth.len() as f64)
}

/// [`depth_l1`] averaged over the union of defined pixels instead of the
/// full raster.
pub fn depth_l1_defined(pred: &MapSet, truth: &MapSet) -> Result<f64> {
    same_lattice(pred, truth)?;
    let union = (0..truth.depth.len())
        .filter(|&i| pred.is_defined(i) || truth.is_defined(i))
        .count();
    if union == 0 {
        return Ok(0.0);
    }
    Ok(depth_l1(pred, truth)? * truth.depth.len() as f64 / union as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalComparison {
    pub mean: f64,
    pub compared: usize,
    pub skipped_zero: usize,
}

/// Mean `1 - cos` between normals over pixels defined in both maps.
pub fn normal_cos(pred: &MapSet, truth: &MapSet) -> Result<f64> {
    Ok(normal_comparison(pred, truth)?.mean)
}

pub fn normal_comparison(pred: &MapSet, truth: &MapSet) -> Result<NormalComparison> {
    same_lattice(pred, truth)?;
    let (mut sum, mut compared, mut skipped_zero) = (0.0, 0, 0);
    for i in (0..truth.depth.len()).filter(|&i| pred.is_defined(i) && truth.is_defined(i)) {
        let (a, b): (Vec3, Vec3) = (pred.view_normal(i), truth.view_normal(i));
        let norm = a.norm() * b.norm();
        if norm == 0.0 {
            skipped_zero += 1;
            continue;
        }
        if a != b {
            sum += 1.0 - (a.dot(&b) / norm).clamp(-1.0, 1.0);
        }
        compared += 1;
    }
    Ok(NormalComparison {
        mean: if compared == 0 {
            0.0
        } else {
            sum / compared as f64
        },
        compared,
        skipped_zero,
    })
}

/// `1000 · depth_l1 + 100 · normal_cos`.
pub fn similarity_score(pred: &MapSet, truth: &MapSet) -> Result<f64> {
    Ok(weighted_score(
        depth_l1(pred, truth)?,
        normal_cos(pred, truth)?,
    ))
}

pub fn weighted_score(depth_l1: f64, normal_cos: f64) -> f64 {
    DEPTH_WEIGHT * depth_l1 + NORMAL_WEIGHT * normal_cos
}
