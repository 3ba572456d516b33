//! Point file formats.
//!
//! ASCII: one point per line, whitespace-separated `x y z [f0 f1 ...]`,
//! lines starting with `#` and blank lines ignored.
//!
//! Binary: magic `PCF1`, little-endian `u32` point count, `u32` feature
//! dimension, then `N * (3 + feature_dim)` little-endian `f32` values.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{Point, PointCloud};

pub const BINARY_MAGIC: &[u8; 4] = b"PCF1";

pub fn read_points(path: impl AsRef<Path>) -> Result<PointCloud> {
    let bytes = fs::read(path)?;
    parse_points(&bytes)
}

/// Parses either format, selected by the presence of the binary magic.
pub fn parse_points(bytes: &[u8]) -> Result<PointCloud> {
    if bytes.starts_with(BINARY_MAGIC) {
        parse_binary(bytes)
    } else {
        let text = std::str::from_utf8(bytes).map_err(|e| {
            let line = bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1;
            Error::parse(line, "invalid UTF-8")
        })?;
        parse_ascii(text)
    }
}

pub fn parse_ascii(text: &str) -> Result<PointCloud> {
    let mut points = Vec::new();
    let mut dim: Option<usize> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let values = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| Error::parse(line_no, format!("not a number: {tok:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() < 3 {
            return Err(Error::parse(
                line_no,
                format!("expected at least 3 values, found {}", values.len()),
            ));
        }
        let fdim = values.len() - 3;
        match dim {
            None => dim = Some(fdim),
            Some(d) if d != fdim => {
                return Err(Error::parse(
                    line_no,
                    format!("expected {d} feature values, found {fdim}"),
                ))
            }
            _ => {}
        }
        let position = [values[0], values[1], values[2]];
        if !position.iter().all(|c| c.is_finite()) {
            return Err(Error::parse(line_no, "non-finite coordinate"));
        }
        let mut p = Point::new(position);
        if fdim > 0 {
            p.features = Some(values[3..].to_vec());
        }
        points.push(p);
    }
    Ok(PointCloud::new(points))
}

fn parse_binary(bytes: &[u8]) -> Result<PointCloud> {
    let header = |off: usize| -> Result<u32> {
        bytes
            .get(off..off + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4-byte slice")))
            .ok_or_else(|| Error::parse(0, "truncated binary header"))
    };
    let n = header(4)? as usize;
    let fdim = header(8)? as usize;
    let stride = 3 + fdim;
    let body = &bytes[12..];
    let expected = n
        .checked_mul(stride)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| Error::parse(0, "binary size overflow"))?;
    if body.len() != expected {
        return Err(Error::parse(
            0,
            format!("binary body has {} bytes, header implies {expected}", body.len()),
        ));
    }
    let floats: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
        .collect();
    let mut points = Vec::with_capacity(n);
    for (i, rec) in floats.chunks_exact(stride).enumerate() {
        let position = [rec[0], rec[1], rec[2]];
        if !position.iter().all(|c| c.is_finite()) {
            return Err(Error::parse(i + 1, "non-finite coordinate in binary record"));
        }
        let mut p = Point::new(position);
        if fdim > 0 {
            p.features = Some(rec[3..].to_vec());
        }
        points.push(p);
    }
    Ok(PointCloud::new(points))
}

pub fn write_ascii<W: Write>(cloud: &PointCloud, mut out: W) -> Result<()> {
    for p in &cloud.points {
        write!(out, "{} {} {}", p.position[0], p.position[1], p.position[2])?;
        if let Some(f) = &p.features {
            for v in f {
                write!(out, " {v}")?;
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Writes the binary format. Values are narrowed to `f32`.
pub fn write_binary<W: Write>(cloud: &PointCloud, mut out: W) -> Result<()> {
    let fdim = cloud.feature_dim().unwrap_or(0);
    out.write_all(BINARY_MAGIC)?;
    out.write_all(&(cloud.len() as u32).to_le_bytes())?;
    out.write_all(&(fdim as u32).to_le_bytes())?;
    for p in &cloud.points {
        for c in p.position {
            out.write_all(&(c as f32).to_le_bytes())?;
        }
        let feats = p.features.as_deref().unwrap_or(&[]);
        if feats.len() != fdim {
            return Err(Error::DimMismatch(format!(
                "point has {} features, cloud has {fdim}",
                feats.len()
            )));
        }
        for v in feats {
            out.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_with_comments_and_features() {
        let text = "# header\n0 0 0 1 2\n\n1.5 -2 3e-1 3 4\n";
        let cloud = parse_ascii(text).unwrap();
        assert_eq!(cloud.len(), 2);
        assert_eq!(cloud.points[1].position, [1.5, -2.0, 0.3]);
        assert_eq!(cloud.points[1].features.as_deref(), Some(&[3.0, 4.0][..]));
        assert_eq!(cloud.points[0].weight, 1.0);
    }

    #[test]
    fn bad_token_reports_line() {
        let text = "0 0 0\n1 1 1\n2 2 2\n3 3 3\n4 x 4\n";
        match parse_ascii(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn short_line_and_ragged_features_rejected() {
        assert!(matches!(parse_ascii("1 2\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(
            parse_ascii("0 0 0 1\n0 0 0\n"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn binary_round_trip() {
        let cloud = PointCloud::new(vec![
            Point::new([0.5, 1.0, -2.0]).with_features(vec![0.25]),
            Point::new([3.0, 4.0, 5.0]).with_features(vec![-1.0]),
        ]);
        let mut buf = Vec::new();
        write_binary(&cloud, &mut buf).unwrap();
        assert_eq!(&buf[..4], BINARY_MAGIC);
        assert_eq!(buf.len(), 12 + 2 * 4 * 4);
        assert_eq!(parse_points(&buf).unwrap(), cloud);
    }

    #[test]
    fn truncated_binary_rejected() {
        let mut buf = Vec::new();
        write_binary(&PointCloud::from_positions([[1.0, 2.0, 3.0]]), &mut buf).unwrap();
        buf.pop();
        assert!(parse_points(&buf).is_err());
    }
}
