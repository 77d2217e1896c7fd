//! KITTI odometry pose files: one pose per line, twelve reals forming the
//! row-major 3×4 matrix `[R | t]`.

use std::fmt::Write as _;
use std::path::Path;

use super::Pose;
use crate::error::{Error, Result};

/// Parses one pose line; `line_no` is 1-based and only used in errors.
pub fn parse_pose_line(line: &str, path: &str, line_no: usize) -> Result<Pose> {
    let mut vals = [0.0f64; 12];
    let mut n = 0;
    for tok in line.split_whitespace() {
        if n == 12 {
            return Err(Error::Parse {
                path: path.to_string(),
                line: line_no,
                msg: "more than 12 values".into(),
            });
        }
        vals[n] = tok.parse().map_err(|_| Error::Parse {
            path: path.to_string(),
            line: line_no,
            msg: format!("not a number: {tok:?}"),
        })?;
        n += 1;
    }
    if n != 12 {
        return Err(Error::Parse {
            path: path.to_string(),
            line: line_no,
            msg: format!("expected 12 values, found {n}"),
        });
    }
    Ok(Pose::from_row_major_3x4(&vals))
}

pub fn parse_poses(text: &str, path: &str) -> Result<Vec<Pose>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_pose_line(l, path, i + 1))
        .collect()
}

/// 17 significant digits, enough for a bit-exact round trip.
pub fn format_poses(poses: &[Pose]) -> String {
    let mut out = String::with_capacity(poses.len() * 12 * 24);
    for p in poses {
        for (i, v) in p.to_row_major_3x4().iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            write!(out, "{v:.16e}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn read_poses(path: &Path) -> Result<Vec<Pose>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_poses(&text, &path.display().to_string())
}

pub fn write_poses(path: &Path, poses: &[Pose]) -> Result<()> {
    std::fs::write(path, format_poses(poses)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_line() {
        let p = parse_pose_line("1 0 0 0 0 1 0 0 0 0 1 0", "x", 1).unwrap();
        assert_eq!(p, Pose::identity());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1 0 0 0 0 1\n";
        match parse_poses(text, "poses.txt") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(parse_poses("1 0 0 0 0 1 0 0 0 0 1 zz", "p").is_err());
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let vals: [f64; 12] = [
            0.1 + 0.2,
            -1.0 / 3.0,
            std::f64::consts::PI,
            1e-300,
            5e-324,
            -0.0,
            123_456_789.123_456_78,
            2.0f64.sqrt(),
            f64::MAX,
            f64::MIN_POSITIVE,
            -7.5,
            1.0 / 7.0,
        ];
        let p = Pose::from_row_major_3x4(&vals);
        let back = parse_poses(&format_poses(&[p]), "mem").unwrap();
        for (a, b) in p.to_row_major_3x4().iter().zip(back[0].to_row_major_3x4()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
