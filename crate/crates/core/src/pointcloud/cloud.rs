use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// A set of points in model space, optionally labeled with a class id.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
    pub label: Option<usize>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Size("point cloud needs at least one point".into()));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::Domain {
                op: "point_cloud",
                detail: format!("point {i} has a non-finite coordinate"),
            });
        }
        Ok(Self {
            points,
            label: None,
        })
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn translated(&self, t: [f64; 3]) -> Self {
        Self {
            points: self
                .points
                .iter()
                .map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]])
                .collect(),
            label: self.label,
        }
    }
}

#[inline]
pub fn sq_dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// One parsed XYZ line: a point plus an optional integer label.
pub type XyzRecord = ([f64; 3], Option<i64>);

/// Parses ASCII XYZ: three reals per line, an optional trailing integer
/// label, `#` comment lines and blank lines ignored.
pub fn parse_xyz(text: &str) -> Result<Vec<XyzRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 && fields.len() != 4 {
            return Err(Error::Format(format!(
                "line {}: expected 3 or 4 fields, found {}",
                lineno + 1,
                fields.len()
            )));
        }
        let mut p = [0.0; 3];
        for (c, f) in p.iter_mut().zip(&fields) {
            *c = f
                .parse()
                .map_err(|e| Error::Format(format!("line {}: {f:?}: {e}", lineno + 1)))?;
        }
        let label = match fields.get(3) {
            Some(f) => Some(
                f.parse()
                    .map_err(|e| Error::Format(format!("line {}: label {f:?}: {e}", lineno + 1)))?,
            ),
            None => None,
        };
        out.push((p, label));
    }
    Ok(out)
}

/// Formats points with 17 significant digits so parsing recovers them
/// exactly.
pub fn format_xyz(points: &[[f64; 3]], labels: Option<&[i64]>) -> String {
    let mut s = String::with_capacity(points.len() * 72);
    for (i, p) in points.iter().enumerate() {
        write!(s, "{:.16e} {:.16e} {:.16e}", p[0], p[1], p[2]).unwrap();
        if let Some(l) = labels {
            write!(s, " {}", l[i]).unwrap();
        }
        s.push('\n');
    }
    s
}

/// Reads a cloud; if every line carries the same label it becomes the
/// cloud label.
pub fn read_xyz(path: impl AsRef<Path>) -> Result<PointCloud> {
    let records = parse_xyz(&fs::read_to_string(path)?)?;
    let points = records.iter().map(|r| r.0).collect();
    let mut cloud = PointCloud::new(points)?;
    if let Some(Some(first)) = records.first().map(|r| r.1) {
        if first >= 0 && records.iter().all(|r| r.1 == Some(first)) {
            cloud.label = Some(first as usize);
        }
    }
    Ok(cloud)
}

/// Writes a cloud; the cloud label, if any, is repeated on every line.
pub fn write_xyz(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let labels = cloud.label.map(|l| vec![l as i64; cloud.len()]);
    fs::write(path, format_xyz(cloud.points(), labels.as_deref()))?;
    Ok(())
}

/// Writes points with an explicit per-point integer column.
pub fn write_labeled_xyz(path: impl AsRef<Path>, points: &[[f64; 3]], labels: &[i64]) -> Result<()> {
    if points.len() != labels.len() {
        return Err(Error::Size(format!(
            "{} points but {} labels",
            points.len(),
            labels.len()
        )));
    }
    fs::write(path, format_xyz(points, Some(labels)))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(PointCloud::new(vec![]).is_err());
        assert!(PointCloud::new(vec![[0.0, f64::NAN, 0.0]]).is_err());
    }

    #[test]
    fn parses_comments_and_labels() {
        let text = "# header\n1 2 3\n\n4.5 -1e-3 0 7\n";
        let r = parse_xyz(text).unwrap();
        assert_eq!(r, vec![([1.0, 2.0, 3.0], None), ([4.5, -1e-3, 0.0], Some(7))]);
        assert!(parse_xyz("1 2\n").is_err());
        assert!(parse_xyz("1 2 x\n").is_err());
        assert!(parse_xyz("1 2 3 4.5\n").is_err());
    }

    #[test]
    fn file_round_trip_keeps_label() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.xyz");
        let cloud = PointCloud::new(vec![[0.1, 0.2, 0.3], [1.0 / 3.0, -2.0, 5e-300]])
            .unwrap()
            .with_label(2);
        write_xyz(&path, &cloud).unwrap();
        assert_eq!(read_xyz(&path).unwrap(), cloud);
    }

    proptest! {
        #[test]
        fn text_round_trip_is_exact(
            pts in prop::collection::vec(prop::array::uniform3(-1e6f64..1e6), 1..20)
        ) {
            let parsed = parse_xyz(&format_xyz(&pts, None)).unwrap();
            let back: Vec<[f64; 3]> = parsed.into_iter().map(|r| r.0).collect();
            prop_assert_eq!(back, pts);
        }
    }
}
