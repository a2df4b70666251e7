//! `F2BM` raster container.
//!
//! Layout, all little-endian: the 4 magic bytes `F2BM`, then `u32` version
//! (1), width, height and channel count (5), then `width * height * 5` `f32`
//! values in row-major pixel order with channels interleaved as
//! `depth, nx, ny, nz, mask`. Mask values are exactly 0.0 or 1.0 and
//! background pixels store 0.0 in every channel.
//!
//! The container carries no camera. [`save_maps`] writes the frame next to
//! the raster as a `.frame` key=value file, which [`load_maps`] reads back.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use super::{MapSet, ViewFrame};
use crate::error::{Error, Result};
use crate::geometry::Vec3;

pub const F2BM_MAGIC: &[u8; 4] = b"F2BM";
pub const F2BM_VERSION: u32 = 1;
pub const F2BM_CHANNELS: u32 = 5;

pub fn write_f2bm(maps: &MapSet, mut out: impl Write) -> std::io::Result<()> {
    let res = maps.resolution() as u32;
    let mut buf = Vec::with_capacity(20 + maps.depth.len() * 20);
    buf.extend_from_slice(F2BM_MAGIC);
    for v in [F2BM_VERSION, res, res, F2BM_CHANNELS] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for idx in 0..maps.depth.len() {
        let px = if maps.is_defined(idx) {
            let [x, y, z] = maps.normal[idx];
            [maps.depth[idx], x, y, z, 1.0]
        } else {
            [0.0; 5]
        };
        for v in px {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)
}

/// Reads an `F2BM` raster and attaches `frame` to it.
pub fn read_f2bm(mut input: impl Read, frame: ViewFrame) -> Result<MapSet> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::Format(format!("read failed: {e}")))?;
    if bytes.len() < 20 || &bytes[..4] != F2BM_MAGIC {
        return Err(Error::Format("missing F2BM magic".into()));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap());
    let (version, width, height, channels) = (word(0), word(1), word(2), word(3));
    if version != F2BM_VERSION {
        return Err(Error::Format(format!("unsupported F2BM version {version}")));
    }
    if channels != F2BM_CHANNELS {
        return Err(Error::Format(format!(
            "expected 5 channels, found {channels}"
        )));
    }
    if width != height || width as usize != frame.resolution {
        return Err(Error::Shape(format!(
            "raster is {width}x{height}, frame expects {0}x{0}",
            frame.resolution
        )));
    }
    let n = (width as usize) * (height as usize);
    let expected = 20 + n * 5 * 4;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let mut maps = MapSet::empty(frame);
    for (idx, px) in bytes[20..].chunks_exact(20).enumerate() {
        let ch: Vec<f32> = px
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        match ch[4] {
            m if m == 1.0 => {
                maps.depth[idx] = ch[0];
                maps.normal[idx] = [ch[1], ch[2], ch[3]];
                maps.silhouette[idx] = true;
            }
            m if m == 0.0 => {}
            m => return Err(Error::Format(format!("mask value {m} at pixel {idx}"))),
        }
    }
    Ok(maps)
}

fn frame_path(path: &Path) -> PathBuf {
    path.with_extension("frame")
}

fn vec_str(v: &Vec3) -> String {
    format!("{},{},{}", v.x, v.y, v.z)
}

/// Frame sidecar text; floats use the shortest exact representation.
pub fn write_frame(frame: &ViewFrame) -> String {
    format!(
        "direction={}\nright={}\nup={}\ncenter={}\nhalf_width={}\nresolution={}\nnear={}\nfar={}\nmirrored={}\n",
        vec_str(&frame.direction),
        vec_str(&frame.right),
        vec_str(&frame.up),
        vec_str(&frame.center),
        frame.half_width,
        frame.resolution,
        frame.near,
        frame.far,
        frame.mirrored
    )
}

pub fn read_frame(text: &str) -> Result<ViewFrame> {
    let mut fields = std::collections::HashMap::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(k + 1, "expected key=value"))?;
        fields.insert(key.trim().to_string(), (k + 1, value.trim().to_string()));
    }
    let get = |key: &str| {
        fields
            .get(key)
            .ok_or_else(|| Error::Format(format!("frame is missing '{key}'")))
    };
    let num = |key: &str| -> Result<f64> {
        let (line, v) = get(key)?;
        v.parse()
            .map_err(|_| Error::parse(*line, format!("invalid {key} '{v}'")))
    };
    let vec = |key: &str| -> Result<Vec3> {
        let (line, v) = get(key)?;
        let parts: Vec<f64> = v
            .split(',')
            .map(|t| t.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(*line, format!("invalid {key} '{v}'")))?;
        if parts.len() != 3 {
            return Err(Error::parse(*line, format!("{key} needs 3 components")));
        }
        Ok(Vec3::new(parts[0], parts[1], parts[2]))
    };
    let (rline, rv) = get("resolution")?;
    let resolution = rv
        .parse()
        .map_err(|_| Error::parse(*rline, format!("invalid resolution '{rv}'")))?;
    let mirrored = match fields.get("mirrored") {
        None => false,
        Some((line, v)) => v
            .parse()
            .map_err(|_| Error::parse(*line, format!("invalid mirrored '{v}'")))?,
    };
    let frame = ViewFrame {
        direction: vec("direction")?,
        right: vec("right")?,
        up: vec("up")?,
        center: vec("center")?,
        half_width: num("half_width")?,
        resolution,
        near: num("near")?,
        far: num("far")?,
        mirrored,
    };
    frame.validate()?;
    Ok(frame)
}

/// Writes `path` (F2BM) and its `.frame` sidecar.
pub fn save_maps(maps: &MapSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_f2bm(maps, &mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))?;
    let fpath = frame_path(path);
    fs::write(&fpath, write_frame(&maps.frame)).map_err(|e| Error::io(fpath, e))
}

/// Reads `path` using its `.frame` sidecar, or `frame` when given.
pub fn load_maps(path: impl AsRef<Path>, frame: Option<ViewFrame>) -> Result<MapSet> {
    let path = path.as_ref();
    let frame = match frame {
        Some(f) => f,
        None => {
            let fpath = frame_path(path);
            let text = fs::read_to_string(&fpath).map_err(|e| Error::io(fpath, e))?;
            read_frame(&text)?
        }
    };
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_f2bm(std::io::BufReader::new(file), frame)
}

/// Depth channel as a little-endian PFM (bottom row first), background 0.
pub fn write_pfm(maps: &MapSet, mut out: impl Write) -> std::io::Result<()> {
    let res = maps.resolution();
    write!(out, "Pf\n{res} {res}\n-1.0\n")?;
    for row in (0..res).rev() {
        for col in 0..res {
            let idx = row * res + col;
            let d = if maps.is_defined(idx) {
                maps.depth[idx]
            } else {
                0.0
            };
            out.write_all(&d.to_le_bytes())?;
        }
    }
    Ok(())
}
