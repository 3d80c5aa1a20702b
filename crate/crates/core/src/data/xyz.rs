use std::path::Path;

use super::LabeledCloud;
use crate::error::{Error, Result};
use crate::graph::FeatureMatrix;
use crate::tensor::Real;

pub fn load_xyz(path: &Path) -> Result<LabeledCloud> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_xyz(&text)
}

/// Whitespace-separated `x y z` rows with an optional integer part label
/// as a fourth column. Either every row carries a label or none does.
pub fn parse_xyz(text: &str) -> Result<LabeledCloud> {
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut labelled = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let ln = i + 1;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let has_label = match tokens.len() {
            3 => false,
            4 => true,
            c => return Err(Error::Parse { line: ln, message: format!("expected 3 or 4 columns, found {c}") }),
        };
        if *labelled.get_or_insert(has_label) != has_label {
            return Err(Error::Parse { line: ln, message: "rows mix labelled and unlabelled points".into() });
        }
        for t in &tokens[..3] {
            let v: Real = t
                .parse()
                .map_err(|_| Error::Parse { line: ln, message: format!("bad coordinate `{t}`") })?;
            values.push(v);
        }
        if has_label {
            let l = tokens[3]
                .parse()
                .map_err(|_| Error::Parse { line: ln, message: format!("bad label `{}`", tokens[3]) })?;
            labels.push(l);
        }
    }
    if values.is_empty() {
        return Err(Error::Data("point file holds no points".into()));
    }
    let points = FeatureMatrix::new(values.len() / 3, 3, values)?;
    let mut cloud = LabeledCloud::new(points);
    if labelled == Some(true) {
        cloud.point_labels = Some(labels);
    }
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labelled_and_plain_rows() {
        let c = parse_xyz("0 0 0 1\n1 2 3 0\n").unwrap();
        assert_eq!(c.points.n(), 2);
        assert_eq!(c.point_labels, Some(vec![1, 0]));
        assert_eq!(parse_xyz("# header\n1 2 3\n").unwrap().point_labels, None);
    }

    #[test]
    fn mixed_rows_are_rejected() {
        assert!(matches!(parse_xyz("0 0 0 1\n1 2 3\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_xyz("0 0\n"), Err(Error::Parse { line: 1, .. })));
    }
}
