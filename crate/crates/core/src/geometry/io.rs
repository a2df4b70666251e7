use std::fs;
use std::io::Write;
use std::path::Path;

use super::{TriangleMesh, Vec3};
use crate::error::{Error, Result};
use crate::util::sig9;

/// Loads an OBJ or OFF mesh, chosen by extension (falling back to the
/// `OFF` header). Degenerate triangles are dropped.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    let mesh = match ext.as_deref() {
        Some("off") => parse_off(&text)?,
        Some("obj") => parse_obj(&text)?,
        _ if text.trim_start().starts_with("OFF") => parse_off(&text)?,
        _ => parse_obj(&text)?,
    };
    log::debug!(
        "loaded {}: {} vertices, {} triangles",
        path.display(),
        mesh.vertices.len(),
        mesh.triangles.len()
    );
    Ok(mesh)
}

fn parse_f64(tok: Option<&str>, line: usize, what: &str) -> Result<f64> {
    let tok = tok.ok_or_else(|| Error::parse(line, format!("missing {what}")))?;
    tok.parse::<f64>()
        .map_err(|_| Error::parse(line, format!("invalid {what} '{tok}'")))
}

fn finish(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<TriangleMesh> {
    if vertices.is_empty() || triangles.is_empty() {
        return Err(Error::EmptyInput(format!(
            "{} vertices, {} faces",
            vertices.len(),
            triangles.len()
        )));
    }
    let mesh = TriangleMesh::new(vertices, triangles)?;
    if mesh.triangles.is_empty() {
        return Err(Error::EmptyInput("all faces are degenerate".into()));
    }
    Ok(mesh)
}

/// Parses Wavefront OBJ text. Polygons are fan-triangulated; texture and
/// normal references are ignored; negative indices are relative.
pub fn parse_obj(text: &str) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut faces: Vec<(usize, Vec<i64>)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("");
        let mut toks = content.split_whitespace();
        match toks.next() {
            Some("v") => {
                let x = parse_f64(toks.next(), line, "x coordinate")?;
                let y = parse_f64(toks.next(), line, "y coordinate")?;
                let z = parse_f64(toks.next(), line, "z coordinate")?;
                vertices.push(Vec3::new(x, y, z));
            }
            Some("f") => {
                let idx = toks
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or("");
                        head.parse::<i64>()
                            .map_err(|_| Error::parse(line, format!("invalid face index '{t}'")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                if idx.len() < 3 {
                    return Err(Error::parse(line, "face with fewer than 3 vertices"));
                }
                // resolved against the vertex count seen so far
                let seen = vertices.len() as i64;
                let resolved = idx
                    .into_iter()
                    .map(|i| if i < 0 { seen + i + 1 } else { i })
                    .collect();
                faces.push((line, resolved));
            }
            _ => {}
        }
    }
    let n = vertices.len() as i64;
    let mut triangles = Vec::new();
    for (line, idx) in faces {
        for &i in &idx {
            if i < 1 || i > n {
                return Err(Error::parse(
                    line,
                    format!("vertex index {i} out of range (1..={n})"),
                ));
            }
        }
        let idx: Vec<u32> = idx.iter().map(|&i| (i - 1) as u32).collect();
        for k in 1..idx.len() - 1 {
            triangles.push([idx[0], idx[k], idx[k + 1]]);
        }
    }
    finish(vertices, triangles)
}

/// Parses an OFF file. Polygons are fan-triangulated; per-face colors ignored.
pub fn parse_off(text: &str) -> Result<TriangleMesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (hline, header) = lines
        .next()
        .ok_or_else(|| Error::EmptyInput("empty OFF file".into()))?;
    if !header.starts_with("OFF") {
        return Err(Error::parse(hline, "missing OFF header"));
    }
    // counts may share the header line
    let rest = header[3..].trim();
    let (cline, counts) = if rest.is_empty() {
        lines
            .next()
            .ok_or_else(|| Error::parse(hline, "missing element counts"))?
    } else {
        (hline, rest)
    };
    let counts: Vec<usize> = counts
        .split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| Error::parse(cline, format!("invalid count '{t}'")))
        })
        .collect::<Result<_>>()?;
    if counts.len() < 2 {
        return Err(Error::parse(cline, "expected vertex and face counts"));
    }
    let (nv, nf) = (counts[0], counts[1]);

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (line, l) = lines
            .next()
            .ok_or_else(|| Error::parse(cline, format!("expected {nv} vertices")))?;
        let mut toks = l.split_whitespace();
        let x = parse_f64(toks.next(), line, "x coordinate")?;
        let y = parse_f64(toks.next(), line, "y coordinate")?;
        let z = parse_f64(toks.next(), line, "z coordinate")?;
        vertices.push(Vec3::new(x, y, z));
    }
    let mut triangles = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (line, l) = lines
            .next()
            .ok_or_else(|| Error::parse(cline, format!("expected {nf} faces")))?;
        let toks: Vec<usize> = l
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| Error::parse(line, format!("invalid face token '{t}'")))
            })
            .collect::<Result<_>>()?;
        let k = *toks
            .first()
            .ok_or_else(|| Error::parse(line, "empty face"))?;
        if k < 3 || toks.len() < k + 1 {
            return Err(Error::parse(line, format!("face declares {k} vertices")));
        }
        let idx = &toks[1..=k];
        if let Some(&bad) = idx.iter().find(|&&i| i >= nv) {
            return Err(Error::parse(
                line,
                format!("vertex index {bad} out of range (0..{nv})"),
            ));
        }
        for j in 1..k - 1 {
            triangles.push([idx[0] as u32, idx[j] as u32, idx[j + 1] as u32]);
        }
    }
    finish(vertices, triangles)
}

/// Serializes a mesh as OBJ with 9 significant digits per coordinate.
pub fn write_obj(mesh: &TriangleMesh, mut out: impl Write) -> std::io::Result<()> {
    for v in &mesh.vertices {
        writeln!(out, "v {} {} {}", sig9(v.x), sig9(v.y), sig9(v.z))?;
    }
    for t in &mesh.triangles {
        writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    Ok(())
}

pub fn save_obj(mesh: &TriangleMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_obj(mesh, &mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}
