//! OFF mesh parser, ModelNet flavor.
//!
//! Standard Object File Format text: an `OFF` header, a counts line
//! (vertices, faces, edges), vertex lines of three coordinates, then face
//! lines of `m i_1 … i_m`. Two ModelNet realities are handled explicitly:
//! the header is sometimes fused with the counts (`OFF492 1038 0` on one
//! line), and some faces are degenerate. Faces with more than three
//! vertices are fan-triangulated around their first vertex; triangles with
//! fewer than three distinct vertices are dropped and counted.

use crate::error::{Error, Result};
use crate::geometry::TriangleMesh;

/// A parsed mesh plus the number of degenerate triangles dropped.
#[derive(Debug, Clone)]
pub struct ParsedOff {
    pub mesh: TriangleMesh,
    pub dropped_faces: usize,
}

/// Tokens with their 1-based source line, comments (`#` to end of line)
/// stripped.
struct Tokens<'a> {
    items: std::vec::IntoIter<(&'a str, usize)>,
    last_line: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let mut items = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("");
            for tok in line.split_whitespace() {
                items.push((tok, i + 1));
            }
        }
        Tokens {
            items: items.into_iter(),
            last_line: 1,
        }
    }

    fn next(&mut self, what: &str) -> Result<(&'a str, usize)> {
        match self.items.next() {
            Some((tok, line)) => {
                self.last_line = line;
                Ok((tok, line))
            }
            None => Err(Error::Parse {
                line: self.last_line,
                msg: format!("unexpected end of file, expected {what}"),
            }),
        }
    }

    fn count(&mut self, what: &str) -> Result<usize> {
        let (tok, line) = self.next(what)?;
        tok.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("expected {what}, got {tok:?}"),
        })
    }

    fn real(&mut self, what: &str) -> Result<f64> {
        let (tok, line) = self.next(what)?;
        tok.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("expected {what}, got {tok:?}"),
        })
    }
}

/// Parses OFF text into a triangle mesh.
///
/// Returns the mesh together with the count of dropped degenerate
/// triangles; any structural problem is a parse error carrying the
/// offending line number.
pub fn parse_off(text: &str) -> Result<ParsedOff> {
    let mut toks = Tokens::new(text);
    let (header, header_line) = toks.next("OFF header")?;
    let num_vertices = match header.strip_prefix("OFF") {
        Some("") => toks.count("vertex count")?,
        // ModelNet quirk: counts fused onto the header token.
        Some(rest) => rest.parse().map_err(|_| Error::Parse {
            line: header_line,
            msg: format!("malformed fused OFF header {header:?}"),
        })?,
        None => {
            return Err(Error::Parse {
                line: header_line,
                msg: format!("missing OFF header, got {header:?}"),
            })
        }
    };
    let num_faces = toks.count("face count")?;
    let _num_edges = toks.count("edge count")?;

    let mut vertices = Vec::with_capacity(num_vertices);
    for _ in 0..num_vertices {
        let x = toks.real("vertex coordinate")?;
        let y = toks.real("vertex coordinate")?;
        let z = toks.real("vertex coordinate")?;
        vertices.push([x, y, z]);
    }

    let mut faces = Vec::with_capacity(num_faces);
    let mut dropped = 0usize;
    for _ in 0..num_faces {
        let m = toks.count("face vertex count")?;
        let mut idx = Vec::with_capacity(m);
        for _ in 0..m {
            let (tok, line) = toks.next("vertex index")?;
            let v: usize = tok.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("expected vertex index, got {tok:?}"),
            })?;
            if v >= num_vertices {
                return Err(Error::Parse {
                    line,
                    msg: format!("vertex index {v} out of range (0..{num_vertices})"),
                });
            }
            idx.push(v as u32);
        }
        if m < 3 {
            dropped += 1;
            continue;
        }
        // Fan triangulation around the first vertex.
        for i in 1..m - 1 {
            let tri = [idx[0], idx[i], idx[i + 1]];
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                dropped += 1;
            } else {
                faces.push(tri);
            }
        }
    }

    if let Some((tok, line)) = toks.items.next() {
        return Err(Error::Parse {
            line,
            msg: format!("unexpected trailing content {tok:?}"),
        });
    }

    Ok(ParsedOff {
        mesh: TriangleMesh { vertices, faces },
        dropped_faces: dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TETRA: &str = "OFF\n4 4 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 1 2\n3 0 1 3\n3 0 2 3\n3 1 2 3\n";

    #[test]
    fn minimal_tetrahedron() {
        let p = parse_off(TETRA).unwrap();
        assert_eq!(p.mesh.vertices.len(), 4);
        assert_eq!(p.mesh.faces.len(), 4);
        assert_eq!(p.dropped_faces, 0);
        assert_eq!(p.mesh.vertices[3], [0.0, 0.0, 1.0]);
        assert_eq!(p.mesh.faces[1], [0, 1, 3]);
    }

    #[test]
    fn quad_face_fan_triangulates() {
        let text = "OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n";
        let p = parse_off(text).unwrap();
        assert_eq!(p.mesh.faces, vec![[0, 1, 2], [0, 2, 3]]);
        assert_eq!(p.dropped_faces, 0);
    }

    #[test]
    fn fused_header_matches_spaced_form() {
        let fused = TETRA.replacen("OFF\n4 4 0", "OFF4 4 0", 1);
        let a = parse_off(TETRA).unwrap();
        let b = parse_off(&fused).unwrap();
        assert_eq!(a.mesh.vertices, b.mesh.vertices);
        assert_eq!(a.mesh.faces, b.mesh.faces);
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let text = "# exported\nOFF\n\n3 1 0  # counts\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";
        let p = parse_off(text).unwrap();
        assert_eq!(p.mesh.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn degenerate_faces_dropped_and_counted() {
        // A 2-vertex face and a triangle with a repeated index.
        let text = "OFF\n3 3 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n2 0 1\n3 0 0 2\n";
        let p = parse_off(text).unwrap();
        assert_eq!(p.mesh.faces, vec![[0, 1, 2]]);
        assert_eq!(p.dropped_faces, 2);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let missing = parse_off("PLY\n3 1 0\n").unwrap_err();
        assert!(matches!(missing, Error::Parse { line: 1, .. }), "{missing}");

        let bad_num = parse_off("OFF\n3 1 0\n0 0 zero\n").unwrap_err();
        match bad_num {
            Error::Parse { line, ref msg } => {
                assert_eq!(line, 3);
                assert!(msg.contains("zero"), "{msg}");
            }
            other => panic!("unexpected {other}"),
        }

        let oob = parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 9\n").unwrap_err();
        match oob {
            Error::Parse { line, ref msg } => {
                assert_eq!(line, 6);
                assert!(msg.contains("out of range"), "{msg}");
            }
            other => panic!("unexpected {other}"),
        }

        let truncated = parse_off("OFF\n4 1 0\n0 0 0\n").unwrap_err();
        assert!(matches!(truncated, Error::Parse { .. }), "{truncated}");

        let trailing = parse_off(&format!("{TETRA}17\n")).unwrap_err();
        match trailing {
            Error::Parse { line, ref msg } => {
                assert_eq!(line, 11);
                assert!(msg.contains("trailing"), "{msg}");
            }
            other => panic!("unexpected {other}"),
        }
    }
}
