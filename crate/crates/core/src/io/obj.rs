//! Wavefront OBJ reading and writing (`v`, `vt`, `f` records).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{RefitError, Result};
use crate::geometry::{Mesh, Vec2, Vec3};

/// Formats `x` with nine significant digits and no trailing zeros.
pub fn format_number(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x.is_finite() { "0".into() } else { format!("{x}") };
    }
    let exp = x.abs().log10().floor() as i32;
    if !(-5..9).contains(&exp) {
        return format!("{x:.8e}");
    }
    let decimals = (8 - exp).max(0) as usize;
    let s = format!("{x:.decimals$}");
    let s = if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    };
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

pub fn write_obj(mesh: &Mesh) -> String {
    let mut out = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(out, "v {} {} {}", format_number(v.x), format_number(v.y), format_number(v.z));
    }
    if let Some(uvs) = &mesh.uvs {
        for t in uvs {
            let _ = writeln!(out, "vt {} {}", format_number(t.x), format_number(t.y));
        }
        for f in &mesh.faces {
            let _ = writeln!(out, "f {0}/{0} {1}/{1} {2}/{2}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
    } else {
        for f in &mesh.faces {
            let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
    }
    out
}

fn resolve(index: &str, count: usize, what: &str) -> std::result::Result<usize, String> {
    let i: i64 = index.parse().map_err(|_| format!("invalid {what} index `{index}`"))?;
    let resolved = if i > 0 {
        i - 1
    } else if i < 0 {
        count as i64 + i
    } else {
        return Err(format!("{what} index 0 is not allowed"));
    };
    if resolved < 0 || resolved as usize >= count {
        return Err(format!("{what} index {i} out of range ({count} defined)"));
    }
    Ok(resolved as usize)
}

/// Parses OBJ text. Polygons are fan-triangulated. A vertex referenced with
/// several texture coordinates is split into one vertex per coordinate.
pub fn parse_obj(text: &str, path: &Path) -> Result<Mesh> {
    let err = |line: usize, message: String| RefitError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut positions: Vec<Vec3> = Vec::new();
    let mut texcoords: Vec<Vec2> = Vec::new();
    let mut corners: Vec<(usize, [(usize, Option<usize>); 3])> = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line_no = ln + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut parts = line.split_whitespace();
        let Some(tag) = parts.next() else { continue };
        let rest: Vec<&str> = parts.collect();
        let floats = |n: usize| -> Result<Vec<f64>> {
            if rest.len() < n {
                return Err(err(line_no, format!("`{tag}` needs {n} numbers")));
            }
            rest[..n]
                .iter()
                .map(|s| s.parse::<f64>().map_err(|_| err(line_no, format!("invalid number `{s}`"))))
                .collect()
        };
        match tag {
            "v" => {
                let c = floats(3)?;
                positions.push(Vec3::new(c[0], c[1], c[2]));
            }
            "vt" => {
                let c = floats(2)?;
                texcoords.push(Vec2::new(c[0], c[1]));
            }
            "f" => {
                if rest.len() < 3 {
                    return Err(err(line_no, "face needs at least 3 vertices".into()));
                }
                let mut poly = Vec::with_capacity(rest.len());
                for token in &rest {
                    let mut it = token.split('/');
                    let v = resolve(it.next().unwrap_or(""), positions.len(), "vertex").map_err(|m| err(line_no, m))?;
                    let t = match it.next() {
                        Some(s) if !s.is_empty() => {
                            Some(resolve(s, texcoords.len(), "texture").map_err(|m| err(line_no, m))?)
                        }
                        _ => None,
                    };
                    poly.push((v, t));
                }
                for k in 1..poly.len() - 1 {
                    corners.push((line_no, [poly[0], poly[k], poly[k + 1]]));
                }
            }
            _ => {}
        }
    }

    let has_uv = !corners.is_empty() && corners.iter().all(|(_, c)| c.iter().all(|x| x.1.is_some()));
    if !has_uv {
        let faces = corners.iter().map(|(_, c)| [c[0].0, c[1].0, c[2].0]).collect();
        return Ok(Mesh::new(positions, faces));
    }

    let mut vertices = positions.clone();
    let mut uvs: Vec<Option<Vec2>> = vec![None; positions.len()];
    let mut assigned: Vec<Option<usize>> = vec![None; positions.len()];
    let mut split: HashMap<(usize, usize), usize> = HashMap::new();
    let mut faces = Vec::with_capacity(corners.len());
    for (_, c) in &corners {
        let mut tri = [0; 3];
        for (k, &(v, t)) in c.iter().enumerate() {
            let t = t.expect("checked above");
            tri[k] = match assigned[v] {
                None => {
                    assigned[v] = Some(t);
                    uvs[v] = Some(texcoords[t]);
                    v
                }
                Some(t0) if t0 == t => v,
                Some(_) => *split.entry((v, t)).or_insert_with(|| {
                    vertices.push(positions[v]);
                    uvs.push(Some(texcoords[t]));
                    vertices.len() - 1
                }),
            };
        }
        faces.push(tri);
    }
    let uvs = uvs.into_iter().map(|u| u.unwrap_or_else(Vec2::zeros)).collect();
    Ok(Mesh::new(vertices, faces).with_uvs(uvs))
}

pub fn read_obj(path: &Path) -> Result<Mesh> {
    let text = std::fs::read_to_string(path).map_err(|source| RefitError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mesh = parse_obj(&text, path)?;
    mesh.validate_indices()?;
    Ok(mesh)
}
