//! Plain-text template export/import for inspection and golden tests.
//!
//! Line-oriented format, one record per line, fields space-separated:
//!
//! ```text
//! repose-template 1
//! counts <verts> <faces> <betas> <joints>
//! parent <joint> <parent-or--1> <name>
//! v <x> <y> <z> <u> <vv> <label>
//! f <a> <b> <c>
//! sb <beta> <vertex> <dx> <dy> <dz>
//! jr <joint> <vertex> <w>
//! sw <vertex> <joint> <w>
//! ```
//!
//! Floats print with Rust's shortest round-trip formatting, so export ->
//! import -> export is byte-stable.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::bodymodel::{BodyError, BodyTemplate, Segment, JOINT_NAMES, JOINT_PARENTS, NUM_JOINTS};

pub fn export_template(template: &BodyTemplate) -> String {
    let mut out = String::new();
    let n = template.num_vertices();
    writeln!(out, "repose-template 1").unwrap();
    writeln!(
        out,
        "counts {} {} {} {}",
        n,
        template.faces.len(),
        template.num_betas(),
        NUM_JOINTS
    )
    .unwrap();
    for (k, name) in JOINT_NAMES.iter().enumerate() {
        writeln!(out, "parent {} {} {}", k, JOINT_PARENTS[k], name).unwrap();
    }
    for i in 0..n {
        let p = template.vertices[i];
        let uv = template.uv[i];
        writeln!(
            out,
            "v {:?} {:?} {:?} {:?} {:?} {}",
            p[0],
            p[1],
            p[2],
            uv[0],
            uv[1],
            template.labels[i].name()
        )
        .unwrap();
    }
    for f in &template.faces {
        writeln!(out, "f {} {} {}", f[0], f[1], f[2]).unwrap();
    }
    for (b, col) in template.shape_basis.iter().enumerate() {
        for (i, d) in col.iter().enumerate() {
            if d != &[0.0, 0.0, 0.0] {
                writeln!(out, "sb {} {} {:?} {:?} {:?}", b, i, d[0], d[1], d[2]).unwrap();
            }
        }
    }
    for (k, row) in template.joint_regressor.iter().enumerate() {
        for (i, &w) in row.iter().enumerate() {
            if w != 0.0 {
                writeln!(out, "jr {} {} {:?}", k, i, w).unwrap();
            }
        }
    }
    for (i, row) in template.skin_weights.iter().enumerate() {
        for (k, &w) in row.iter().enumerate() {
            if w != 0.0 {
                writeln!(out, "sw {} {} {:?}", i, k, w).unwrap();
            }
        }
    }
    out
}

pub fn export_template_file(template: &BodyTemplate, path: &Path) -> Result<(), BodyError> {
    fs::write(path, export_template(template))?;
    Ok(())
}

pub fn import_template(text: &str) -> Result<BodyTemplate, BodyError> {
    let err = |line: usize, message: &str| BodyError::Parse {
        line,
        message: message.to_string(),
    };
    let mut lines = text.lines().enumerate();
    let (ln, header) = lines.next().ok_or_else(|| err(0, "empty file"))?;
    if header.trim() != "repose-template 1" {
        return Err(err(ln + 1, "bad header"));
    }
    let (ln, counts_line) = lines.next().ok_or_else(|| err(1, "missing counts"))?;
    let counts: Vec<usize> = counts_line
        .strip_prefix("counts ")
        .ok_or_else(|| err(ln + 1, "expected counts"))?
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| err(ln + 1, "bad count")))
        .collect::<Result<_, _>>()?;
    if counts.len() != 4 {
        return Err(err(ln + 1, "counts needs 4 fields"));
    }
    let (nv, nf, nb, nj) = (counts[0], counts[1], counts[2], counts[3]);
    if nj != NUM_JOINTS {
        return Err(err(ln + 1, "unsupported joint count"));
    }

    let mut vertices = Vec::with_capacity(nv);
    let mut uv = Vec::with_capacity(nv);
    let mut labels = Vec::with_capacity(nv);
    let mut faces = Vec::with_capacity(nf);
    let mut shape_basis = vec![vec![[0.0f64; 3]; nv]; nb];
    let mut joint_regressor = vec![vec![0.0f64; nv]; nj];
    let mut skin_weights = vec![vec![0.0f64; nj]; nv];

    for (ln, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut toks = line.split_whitespace();
        let tag = toks.next().unwrap();
        let mut f64s = |n: usize| -> Result<Vec<f64>, BodyError> {
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                out.push(
                    toks.next()
                        .ok_or_else(|| err(ln + 1, "missing field"))?
                        .parse()
                        .map_err(|_| err(ln + 1, "bad float"))?,
                );
            }
            Ok(out)
        };
        match tag {
            "parent" => { /* fixed chain; names are informational */ }
            "v" => {
                let vals = f64s(5)?;
                let label = toks.next().ok_or_else(|| err(ln + 1, "missing label"))?;
                vertices.push([vals[0], vals[1], vals[2]]);
                uv.push([vals[3], vals[4]]);
                labels.push(
                    Segment::from_name(label).ok_or_else(|| err(ln + 1, "unknown label"))?,
                );
            }
            "f" => {
                let a = f64s(3)?;
                faces.push([a[0] as usize, a[1] as usize, a[2] as usize]);
            }
            "sb" => {
                let a = f64s(5)?;
                shape_basis[a[0] as usize][a[1] as usize] = [a[2], a[3], a[4]];
            }
            "jr" => {
                let a = f64s(3)?;
                joint_regressor[a[0] as usize][a[1] as usize] = a[2];
            }
            "sw" => {
                let a = f64s(3)?;
                skin_weights[a[0] as usize][a[1] as usize] = a[2];
            }
            other => return Err(err(ln + 1, &format!("unknown record {other}"))),
        }
    }
    if vertices.len() != nv || faces.len() != nf {
        return Err(BodyError::Parse {
            line: 0,
            message: format!(
                "count mismatch: {} verts / {} faces declared, {} / {} found",
                nv,
                nf,
                vertices.len(),
                faces.len()
            ),
        });
    }
    BodyTemplate::from_parts(
        vertices,
        faces,
        uv,
        shape_basis,
        joint_regressor,
        skin_weights,
        labels,
    )
}

pub fn import_template_file(path: &Path) -> Result<BodyTemplate, BodyError> {
    let text = fs::read_to_string(path)?;
    import_template(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bodymodel::{build_default_template, BodyConfig};

    #[test]
    fn export_import_round_trip() {
        let t = build_default_template(&BodyConfig::default()).unwrap();
        let text = export_template(&t);
        let back = import_template(&text).unwrap();
        assert_eq!(t.vertices, back.vertices);
        assert_eq!(t.faces, back.faces);
        assert_eq!(t.uv, back.uv);
        assert_eq!(t.labels, back.labels);
        assert_eq!(t.shape_basis, back.shape_basis);
        assert_eq!(t.joint_regressor, back.joint_regressor);
        assert_eq!(t.skin_weights, back.skin_weights);
        // byte-stable second export
        assert_eq!(text, export_template(&back));
    }

    #[test]
    fn corrupt_input_reports_line() {
        let t = build_default_template(&BodyConfig::default()).unwrap();
        let mut text = export_template(&t);
        text.push_str("banana 1 2 3\n");
        match import_template(&text) {
            Err(BodyError::Parse { line, .. }) => assert!(line > 0),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
