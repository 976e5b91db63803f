//! Point cloud, pair list and sidecar files.
//!
//! Clouds are CSV (`x,y,z` per line, optional header) or ASCII PLY. Pair
//! lists are CSV rows `y1,y2,y3,x1,x2,x3`. Coordinates are written with 17
//! significant digits so a write/read round trip is exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use arcs::consensus::{Pair, PairList};
use arcs::geom::Point3;
use arcs::matching::{CorrespondenceSet, PointCloud};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// `{:.16e}` keeps 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Loads a cloud, choosing the parser from the `.ply` extension or a `ply`
/// magic line. An empty file gives an empty cloud and a warning on stderr.
pub fn load_cloud(path: &Path) -> Result<PointCloud, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    if bytes.iter().all(|b| b.is_ascii_whitespace()) {
        eprintln!("warning: {} is empty; using an empty cloud", path.display());
        return Ok(PointCloud::new(Vec::new())?);
    }
    let is_ply = bytes.starts_with(b"ply")
        || path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply"));
    let points = if is_ply {
        parse_ply(path, &bytes)?
    } else {
        let text = String::from_utf8(bytes).map_err(|_| CliError::parse(path, 0, "file is not UTF-8 text"))?;
        parse_rows::<3>(path, &text)?.into_iter().map(Point3::from).collect()
    };
    Ok(PointCloud::new(points)?)
}

/// Parses numeric CSV rows of width `N`. A first line that does not parse
/// is taken as a header; blank lines are skipped.
fn parse_rows<const N: usize>(path: &Path, text: &str) -> Result<Vec<[f64; N]>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            CliError::parse(path, line, &e.to_string())
        })?;
        let line = rec.position().map_or(k + 1, |p| p.line() as usize);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let values: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match values {
            Ok(v) if v.len() == N => {
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(CliError::parse(path, line, "non-finite coordinate"));
                }
                out.push(v.try_into().expect("length checked"));
            }
            Ok(v) => {
                return Err(CliError::parse(path, line, &format!("expected {N} values, found {}", v.len())));
            }
            Err(_) if k == 0 && out.is_empty() => {}
            Err(_) => {
                let row: Vec<&str> = rec.iter().collect();
                return Err(CliError::parse(path, line, &format!("non-numeric row {:?}", row.join(","))));
            }
        }
    }
    Ok(out)
}

fn parse_ply(path: &Path, bytes: &[u8]) -> Result<Vec<Point3>, CliError> {
    let header_end = find_subslice(bytes, b"end_header")
        .ok_or_else(|| CliError::parse(path, 1, "PLY header has no end_header"))?;
    let header = String::from_utf8_lossy(&bytes[..header_end - b"end_header".len()]);
    let mut lines = header.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(CliError::parse(path, 1, "missing ply magic line")),
    }

    // (name, count, property names) per element, in file order
    let mut elements: Vec<(String, usize, Vec<String>)> = Vec::new();
    let mut ascii = false;
    for (i, line) in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", _] => ascii = true,
            ["format", fmt, _] => {
                return Err(CliError::Unsupported(format!(
                    "{}: PLY format {fmt} is not supported; convert to ASCII PLY or CSV",
                    path.display()
                )))
            }
            ["element", name, count] => {
                let n = count.parse().map_err(|_| CliError::parse(path, i + 1, "bad element count"))?;
                elements.push((name.to_string(), n, Vec::new()));
            }
            ["property", "list", ..] => match elements.last_mut() {
                Some((name, _, _)) if name == "vertex" => {
                    return Err(CliError::Unsupported(format!(
                        "{}: list properties on vertices are not supported",
                        path.display()
                    )))
                }
                Some((_, _, props)) => props.push("<list>".into()),
                None => return Err(CliError::parse(path, i + 1, "property before any element")),
            },
            ["property", _ty, name] => match elements.last_mut() {
                Some((_, _, props)) => props.push(name.to_string()),
                None => return Err(CliError::parse(path, i + 1, "property before any element")),
            },
            [] | ["comment", ..] | ["obj_info", ..] => {}
            _ => return Err(CliError::parse(path, i + 1, &format!("unrecognized header line {line:?}"))),
        }
    }
    if !ascii {
        return Err(CliError::parse(path, 2, "PLY header has no format line"));
    }
    let header_lines = header.lines().count() + 1;
    let body = std::str::from_utf8(&bytes[header_end..])
        .map_err(|_| CliError::parse(path, header_lines, "PLY body is not text"))?;
    let mut body_lines = body.lines().enumerate().skip(1).filter(|(_, l)| !l.trim().is_empty());

    let mut points = Vec::new();
    for (name, count, props) in &elements {
        if name != "vertex" {
            for _ in 0..*count {
                body_lines.next();
            }
            continue;
        }
        let col = |axis: &str| {
            props.iter().position(|p| p == axis).ok_or_else(|| {
                CliError::parse(path, 1, &format!("vertex element has no {axis} property"))
            })
        };
        let (cx, cy, cz) = (col("x")?, col("y")?, col("z")?);
        for _ in 0..*count {
            let (i, line) = body_lines
                .next()
                .ok_or_else(|| CliError::parse(path, header_lines + points.len(), "fewer vertices than declared"))?;
            let lineno = header_lines + i;
            let vals: Vec<&str> = line.split_whitespace().collect();
            if vals.len() < props.len() {
                return Err(CliError::parse(path, lineno, "vertex line has too few values"));
            }
            let get = |c: usize| {
                vals[c]
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| CliError::parse(path, lineno, &format!("non-numeric value {:?}", vals[c])))
            };
            points.push(Point3::new(get(cx)?, get(cy)?, get(cz)?));
        }
        return Ok(points);
    }
    Err(CliError::parse(path, 1, "PLY file has no vertex element"))
}

fn find_subslice(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle).map(|p| p + needle.len())
}

pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<(), CliError> {
    let mut s = String::from("x,y,z\n");
    for p in cloud.points() {
        s.push_str(&format!("{},{},{}\n", fmt_f64(p.x), fmt_f64(p.y), fmt_f64(p.z)));
    }
    write_text(path, &s)
}

pub fn load_pairs(path: &Path) -> Result<PairList, CliError> {
    let text = read_text(path)?;
    if text.trim().is_empty() {
        eprintln!("warning: {} is empty; using an empty pair list", path.display());
    }
    let rows = parse_rows::<6>(path, &text)?;
    let pairs = rows
        .into_iter()
        .map(|r| Pair { y: Point3::new(r[0], r[1], r[2]), x: Point3::new(r[3], r[4], r[5]) })
        .collect();
    Ok(PairList::new(pairs)?)
}

pub fn write_pairs(path: &Path, pairs: &PairList) -> Result<(), CliError> {
    let mut s = String::from("y1,y2,y3,x1,x2,x3\n");
    for p in pairs.pairs() {
        let v = [p.y.x, p.y.y, p.y.z, p.x.x, p.x.y, p.x.z].map(fmt_f64);
        s.push_str(&v.join(","));
        s.push('\n');
    }
    write_text(path, &s)
}

pub fn write_correspondences(out: &mut dyn Write, c: &CorrespondenceSet) -> std::io::Result<()> {
    writeln!(out, "i,j")?;
    for (i, j) in c.pairs() {
        writeln!(out, "{i},{j}")?;
    }
    Ok(())
}

/// Inliers of a sidecar: pair indices for pair lists, `[i, j]` index pairs
/// for cloud pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Inliers {
    Indices(Vec<usize>),
    Correspondences(Vec<[usize; 2]>),
}

/// Ground truth written next to generated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    /// Row-major rotation.
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub inliers: Inliers,
    pub sigma: f64,
    pub seed: u64,
}

impl Truth {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = read_text(path)?;
        serde_json::from_str(&text).map_err(|e| CliError::parse(path, e.line(), &e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        write_text(path, &(serde_json::to_string_pretty(self).expect("truth serializes") + "\n"))
    }
}
