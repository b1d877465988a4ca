//! TetGen `.node` / `.ele` text format.
//!
//! `.node`: header `V 3 nattr nmarker`, then `idx x y z [attr...] [marker]`.
//! `.ele`: header `T 4 nattr`, then `idx i j k l [attr...]`.
//! Lines starting with `#` and blank lines are ignored. Vertex numbering may
//! start at 0 or 1; element indices follow the numbering of the node file.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{TetMesh, Vec3};
use crate::error::{Error, Result};

/// Parsed `.node` table: vertices and the index of the first row.
pub fn parse_node(text: &str, name: &str) -> Result<(Vec<Vec3>, usize)> {
    let mut lines = data_lines(text);
    let (ln, header) = lines.next().ok_or_else(|| Error::parse(name, 0, "empty node file"))?;
    let h = parse_usizes(&header, ln, name)?;
    if h.len() < 2 || h.len() > 4 {
        return Err(Error::parse(name, ln, "node header must be `count dim [nattr] [nmarker]`"));
    }
    let count = h[0];
    if h[1] != 3 {
        return Err(Error::parse(name, ln, format!("dimension {} unsupported, need 3", h[1])));
    }
    let nattr = h.get(2).copied().unwrap_or(0);
    let nmark = h.get(3).copied().unwrap_or(0);
    if nmark > 1 {
        return Err(Error::parse(name, ln, "boundary marker count must be 0 or 1"));
    }
    let expected = 4 + nattr + nmark;
    // Bound the preallocation by what the text could possibly hold.
    let mut vertices = Vec::with_capacity(count.min(text.len() / 8 + 1));
    let mut base = 0;
    for (row, (ln, line)) in lines.by_ref().take(count).enumerate() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != expected {
            return Err(Error::parse(name, ln, format!("expected {expected} fields, got {}", toks.len())));
        }
        let idx: usize = toks[0].parse().map_err(|_| Error::parse(name, ln, "bad node index"))?;
        if row == 0 {
            if idx > 1 {
                return Err(Error::parse(name, ln, "node numbering must start at 0 or 1"));
            }
            base = idx;
        } else if idx != base + row {
            return Err(Error::parse(name, ln, format!("node index {idx} out of sequence")));
        }
        let mut p = [0.0f64; 3];
        for (c, tok) in p.iter_mut().zip(&toks[1..4]) {
            *c = tok.parse().map_err(|_| Error::parse(name, ln, format!("bad coordinate `{tok}`")))?;
            if !c.is_finite() {
                return Err(Error::parse(name, ln, "non-finite coordinate"));
            }
        }
        vertices.push(Vec3::new(p[0], p[1], p[2]));
    }
    if vertices.len() != count {
        return Err(Error::parse(name, 0, format!("header declares {count} nodes, found {}", vertices.len())));
    }
    if let Some((ln, _)) = lines.next() {
        return Err(Error::parse(name, ln, "trailing data after node table"));
    }
    Ok((vertices, base))
}

/// Parsed `.ele` table with indices converted to 0-based using `base`.
pub fn parse_ele(text: &str, name: &str, base: usize) -> Result<Vec<[usize; 4]>> {
    let mut lines = data_lines(text);
    let (ln, header) = lines.next().ok_or_else(|| Error::parse(name, 0, "empty element file"))?;
    let h = parse_usizes(&header, ln, name)?;
    if h.len() < 2 || h.len() > 3 {
        return Err(Error::parse(name, ln, "element header must be `count nodes [nattr]`"));
    }
    let count = h[0];
    if h[1] != 4 {
        return Err(Error::parse(name, ln, format!("{} nodes per element unsupported, need 4", h[1])));
    }
    let nattr = h.get(2).copied().unwrap_or(0);
    let mut tets = Vec::with_capacity(count.min(text.len() / 8 + 1));
    for (ln, line) in lines.by_ref().take(count) {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 5 + nattr {
            return Err(Error::parse(
                name,
                ln,
                format!("malformed element: expected {} fields, got {}", 5 + nattr, toks.len()),
            ));
        }
        let mut t = [0usize; 4];
        for (slot, tok) in t.iter_mut().zip(&toks[1..5]) {
            let i: usize = tok.parse().map_err(|_| Error::parse(name, ln, format!("bad vertex index `{tok}`")))?;
            *slot = i
                .checked_sub(base)
                .ok_or_else(|| Error::parse(name, ln, format!("vertex index {i} below numbering base {base}")))?;
        }
        for tok in &toks[5..] {
            tok.parse::<f64>().map_err(|_| Error::parse(name, ln, "bad element attribute"))?;
        }
        tets.push(t);
    }
    if tets.len() != count {
        return Err(Error::parse(name, 0, format!("header declares {count} elements, found {}", tets.len())));
    }
    if let Some((ln, _)) = lines.next() {
        return Err(Error::parse(name, ln, "trailing data after element table"));
    }
    Ok(tets)
}

pub fn load_mesh(node_path: &Path, ele_path: &Path) -> Result<TetMesh> {
    let node = fs::read_to_string(node_path).map_err(|e| Error::io(node_path, e))?;
    let ele = fs::read_to_string(ele_path).map_err(|e| Error::io(ele_path, e))?;
    let (vertices, base) = parse_node(&node, &node_path.display().to_string())?;
    let tets = parse_ele(&ele, &ele_path.display().to_string(), base)?;
    TetMesh::new(vertices, tets)
}

/// `.node` text with 1-based numbering and round-trip exact coordinates.
pub fn write_node(mesh: &TetMesh) -> String {
    let mut s = String::with_capacity(mesh.n_vertices() * 80);
    let _ = writeln!(s, "{} 3 0 0", mesh.n_vertices());
    for (i, v) in mesh.vertices().iter().enumerate() {
        let _ = writeln!(s, "{} {:.17e} {:.17e} {:.17e}", i + 1, v.x, v.y, v.z);
    }
    s
}

pub fn write_ele(mesh: &TetMesh) -> String {
    let mut s = String::with_capacity(mesh.n_tets() * 32);
    let _ = writeln!(s, "{} 4 0", mesh.n_tets());
    for (k, t) in mesh.tets().iter().enumerate() {
        let _ = writeln!(s, "{} {} {} {} {}", k + 1, t[0] + 1, t[1] + 1, t[2] + 1, t[3] + 1);
    }
    s
}

/// Writes `<stem>.node` and `<stem>.ele`.
pub fn save_mesh(mesh: &TetMesh, stem: &Path) -> Result<()> {
    // appended rather than `with_extension`, so stems may contain dots
    let with = |ext: &str| {
        let mut s = stem.as_os_str().to_owned();
        s.push(ext);
        std::path::PathBuf::from(s)
    };
    let node = with(".node");
    let ele = with(".ele");
    fs::write(&node, write_node(mesh)).map_err(|e| Error::io(&node, e))?;
    fs::write(&ele, write_ele(mesh)).map_err(|e| Error::io(&ele, e))?;
    Ok(())
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, String)> + '_ {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then(|| (i + 1, l.to_string()))
    })
}

fn parse_usizes(line: &str, ln: usize, name: &str) -> Result<Vec<usize>> {
    line.split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::parse(name, ln, format!("bad header field `{t}`"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const TET_NODE: &str = "# unit tet\n4 3 0 0\n1 0 0 0\n2 1 0 0\n3 0 1 0\n4 0 0 1\n";
    const TET_ELE: &str = "1 4 0\n1 1 2 3 4\n";

    #[test]
    fn single_tet_file() {
        let (v, base) = parse_node(TET_NODE, "t.node").unwrap();
        assert_eq!(base, 1);
        let t = parse_ele(TET_ELE, "t.ele", base).unwrap();
        let m = TetMesh::new(v, t).unwrap();
        assert_eq!(m.n_vertices(), 4);
        assert_eq!(m.n_tets(), 1);
        assert_eq!(m.boundary_faces().len(), 4);
    }

    #[test]
    fn zero_based_and_markers() {
        let node = "4 3 1 1\n0 0 0 0 7.0 1\n1 1 0 0 7.0 1\n2 0 1 0 7.0 0\n3 0 0 1 7.0 1\n";
        let (v, base) = parse_node(node, "n").unwrap();
        assert_eq!(base, 0);
        let t = parse_ele("1 4 1\n0 0 1 2 3 2.0\n", "e", base).unwrap();
        assert_eq!(t, vec![[0, 1, 2, 3]]);
        assert_eq!(v[1], Vec3::x());
    }

    #[test]
    fn five_index_element_rejected() {
        let (_, base) = parse_node(TET_NODE, "t.node").unwrap();
        let err = parse_ele("1 4 0\n1 1 2 3 4 4\n", "bad.ele", base).unwrap_err();
        assert!(err.to_string().contains("malformed element"), "{err}");
    }

    #[test]
    fn index_errors() {
        let (v, base) = parse_node(TET_NODE, "t.node").unwrap();
        // 0 below base 1
        assert!(parse_ele("1 4 0\n1 0 1 2 3\n", "e", base).is_err());
        // 5 is out of range once validated
        let t = parse_ele("1 4 0\n1 1 2 3 5\n", "e", base).unwrap();
        assert!(TetMesh::new(v, t).is_err());
        assert!(parse_node("2 3 0 0\n1 0 0 0\n", "n").is_err());
        assert!(parse_node("1 3 0 0\n1 0 0 nan\n", "n").is_err());
        assert!(parse_node("1 2 0 0\n1 0 0\n", "n").is_err());
        assert!(parse_node("1 3 0 0\n1 0 0 0\n3 1 1 1\n", "n").is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let m = crate::deform::canonical_cylinder(1.3, 4.0, 150).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("cyl");
        save_mesh(&m, &stem).unwrap();
        let back = load_mesh(&stem.with_extension("node"), &stem.with_extension("ele")).unwrap();
        assert_eq!(back.vertices(), m.vertices());
        assert_eq!(back.tets(), m.tets());
    }
}
