use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::util::sig9;

/// Which map a point was un-projected from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SourceTag {
    Front,
    Reflected,
    Back,
}

impl SourceTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            SourceTag::Front => "front",
            SourceTag::Reflected => "reflected",
            SourceTag::Back => "back",
        }
    }
}

impl fmt::Display for SourceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SourceTag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "front" => Ok(SourceTag::Front),
            "reflected" => Ok(SourceTag::Reflected),
            "back" => Ok(SourceTag::Back),
            other => Err(format!("unknown source tag '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedPoint {
    pub position: Vec3,
    pub normal: Vec3,
    pub tag: SourceTag,
    /// Row-major pixel index in the map the point came from.
    pub pixel: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OrientedPointCloud {
    pub points: Vec<OrientedPoint>,
}

impl OrientedPointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.points.iter().map(|p| p.position).collect()
    }

    pub fn count(&self, tag: SourceTag) -> usize {
        self.points.iter().filter(|p| p.tag == tag).count()
    }

    pub fn extend(&mut self, other: OrientedPointCloud) {
        self.points.extend(other.points);
    }

    pub fn translated(&self, offset: &Vec3) -> OrientedPointCloud {
        OrientedPointCloud {
            points: self
                .points
                .iter()
                .map(|p| OrientedPoint {
                    position: p.position + offset,
                    ..*p
                })
                .collect(),
        }
    }

    pub fn with_flipped_normals(&self) -> OrientedPointCloud {
        OrientedPointCloud {
            points: self
                .points
                .iter()
                .map(|p| OrientedPoint {
                    normal: -p.normal,
                    ..*p
                })
                .collect(),
        }
    }
}

/// Writes `x y z nx ny nz tag` lines with 9 significant digits.
pub fn write_cloud(cloud: &OrientedPointCloud, mut out: impl Write) -> std::io::Result<()> {
    for p in &cloud.points {
        let (x, n) = (p.position, p.normal);
        writeln!(
            out,
            "{} {} {} {} {} {} {}",
            sig9(x.x),
            sig9(x.y),
            sig9(x.z),
            sig9(n.x),
            sig9(n.y),
            sig9(n.z),
            p.tag
        )?;
    }
    Ok(())
}

pub fn read_cloud(text: &str) -> Result<OrientedPointCloud> {
    let mut points = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 7 {
            return Err(Error::parse(
                line_no,
                format!("expected 7 fields, found {}", toks.len()),
            ));
        }
        let mut v = [0.0f64; 6];
        for (slot, tok) in v.iter_mut().zip(&toks) {
            *slot = tok
                .parse()
                .map_err(|_| Error::parse(line_no, format!("invalid number '{tok}'")))?;
        }
        let tag = toks[6]
            .parse()
            .map_err(|e: String| Error::parse(line_no, e))?;
        points.push(OrientedPoint {
            position: Vec3::new(v[0], v[1], v[2]),
            normal: Vec3::new(v[3], v[4], v[5]),
            tag,
            pixel: None,
        });
    }
    Ok(OrientedPointCloud { points })
}

pub fn save_cloud(cloud: &OrientedPointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_cloud(cloud, &mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_cloud(path: impl AsRef<Path>) -> Result<OrientedPointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_cloud(&text)
}
