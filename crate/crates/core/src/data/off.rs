use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Real;

/// Triangle mesh: vertex coordinates and vertex-index triples.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[Real; 3]>,
    pub faces: Vec<[usize; 3]>,
}

pub fn load_off_mesh(path: &Path) -> Result<Mesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_off(&text)
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

/// Parses OFF text. Polygons with more than three corners are split into a
/// fan around their first vertex. A header fused with the counts
/// (`OFF4 4 0`) is accepted.
pub fn parse_off(text: &str) -> Result<Mesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let last_line = text.lines().count().max(1);

    let (hl, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let rest = header
        .strip_prefix("OFF")
        .ok_or_else(|| parse_err(hl, format!("expected `OFF` header, found `{header}`")))?
        .trim();
    let (cl, counts) = if rest.is_empty() {
        lines.next().ok_or_else(|| parse_err(last_line, "missing counts line"))?
    } else {
        (hl, rest)
    };
    let counts: Vec<usize> = counts
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| parse_err(cl, format!("bad count `{t}`"))))
        .collect::<Result<_>>()?;
    if counts.len() < 2 {
        return Err(parse_err(cl, "counts line needs vertex and face counts"));
    }
    let (nv, nf) = (counts[0], counts[1]);

    let mut vertices = Vec::with_capacity(nv);
    for v in 0..nv {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| parse_err(last_line, format!("file ends after {v} of {nv} vertices")))?;
        let xyz: Vec<Real> = l
            .split_whitespace()
            .take(3)
            .map(|t| t.parse().map_err(|_| parse_err(ln, format!("bad coordinate `{t}`"))))
            .collect::<Result<_>>()?;
        if xyz.len() != 3 || xyz.iter().any(|c| !c.is_finite()) {
            return Err(parse_err(ln, "vertex needs three finite coordinates"));
        }
        vertices.push([xyz[0], xyz[1], xyz[2]]);
    }

    let mut faces = Vec::with_capacity(nf);
    for f in 0..nf {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| parse_err(last_line, format!("file ends after {f} of {nf} faces")))?;
        let mut tokens = l.split_whitespace();
        let m: usize = tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| parse_err(ln, "face line must start with a corner count"))?;
        if m < 3 {
            return Err(parse_err(ln, format!("face with {m} corners")));
        }
        let idx: Vec<usize> = tokens
            .take(m)
            .map(|t| t.parse().map_err(|_| parse_err(ln, format!("bad vertex index `{t}`"))))
            .collect::<Result<_>>()?;
        if idx.len() != m {
            return Err(parse_err(ln, format!("face lists {} of {m} corners", idx.len())));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= nv) {
            return Err(parse_err(ln, format!("vertex index {bad} out of range for {nv} vertices")));
        }
        for c in 1..m - 1 {
            faces.push([idx[0], idx[c], idx[c + 1]]);
        }
    }
    Ok(Mesh { vertices, faces })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TETRA: &str = "OFF\n4 4 6\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 1 2\n3 0 1 3\n3 0 2 3\n3 1 2 3\n";

    #[test]
    fn tetrahedron_counts() {
        let m = parse_off(TETRA).unwrap();
        assert_eq!((m.vertices.len(), m.faces.len()), (4, 4));
    }

    #[test]
    fn quad_becomes_two_fan_triangles() {
        let m = parse_off("OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n").unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn fused_header_and_comments() {
        let m = parse_off("# mesh\nOFF3 1 0\n0 0 0\n1 0 0 # corner\n0 1 0\n3 0 1 2\n").unwrap();
        assert_eq!(m.faces.len(), 1);
    }

    #[test]
    fn truncated_file_names_the_line() {
        let err = parse_off("OFF\n4 4 6\n0 0 0\n1 0 0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }), "{err}");
    }

    #[test]
    fn bad_header_and_index() {
        assert!(matches!(parse_off("PLY\n"), Err(Error::Parse { line: 1, .. })));
        let err = parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 7\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 6, .. }));
    }
}
