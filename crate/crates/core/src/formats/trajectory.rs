use super::{parse_floats, FormatError};
use crate::lie_se3::{Pose, Quat};
use nalgebra::Vector3;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

/// One line per pose: `t tx ty tz qx qy qz qw`.
pub fn write_trajectory_to<W: Write>(mut w: W, poses: &[(f64, Pose)]) -> io::Result<()> {
    for (t, p) in poses {
        let q = p.quat();
        let x = p.translation();
        writeln!(w, "{} {} {} {} {} {} {} {}", t, x.x, x.y, x.z, q.x, q.y, q.z, q.w)?;
    }
    Ok(())
}

pub fn write_trajectory(path: &Path, poses: &[(f64, Pose)]) -> Result<(), FormatError> {
    let mut buf = Vec::new();
    write_trajectory_to(&mut buf, poses).expect("writing to memory");
    fs::write(path, buf).map_err(|e| FormatError::io(path, e))
}

/// Parses trajectory text; `path` is only used in diagnostics. Blank lines
/// and lines starting with `#` are ignored.
pub fn parse_trajectory(text: &str, path: &Path) -> Result<Vec<(f64, Pose)>, FormatError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let [t, tx, ty, tz, qx, qy, qz, qw] = parse_floats::<8>(line, ' ', path, i + 1)?;
        let pose = Pose::from_stored(Quat::new(qw, qx, qy, qz), Vector3::new(tx, ty, tz))
            .map_err(|e| FormatError::Parse { path: path.to_path_buf(), line: i + 1, msg: e.to_string() })?;
        out.push((t, pose));
    }
    Ok(out)
}

pub fn read_trajectory(path: &Path) -> Result<Vec<(f64, Pose)>, FormatError> {
    let text = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    parse_trajectory(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie_se3::{exp_se3, Twist};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("traj.txt");
        write_trajectory(&p, &[]).unwrap();
        assert_eq!(fs::read(&p).unwrap().len(), 0);
        assert!(read_trajectory(&p).unwrap().is_empty());
    }

    #[test]
    fn random_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let poses: Vec<(f64, Pose)> = (0..200)
            .map(|k| {
                let w = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                let v = Vector3::new(rng.gen_range(-9.0..9.0), rng.gen_range(-9.0..9.0), rng.gen_range(-9.0..9.0));
                (k as f64 * 0.1, exp_se3(&Twist::new(w * 1.8, v).unwrap()))
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("traj.txt");
        write_trajectory(&p, &poses).unwrap();
        assert_eq!(read_trajectory(&p).unwrap(), poses);
    }

    #[test]
    fn malformed_line_is_located() {
        let mut text = String::new();
        for _ in 0..6 {
            text.push_str("0 0 0 0 0 0 0 1\n");
        }
        text.push_str("0 0 zero 0 0 0 0 1\n");
        let err = parse_trajectory(&text, Path::new("t.txt")).unwrap_err();
        assert!(matches!(err, FormatError::Parse { line: 7, .. }), "{err}");
        assert!(err.to_string().contains("t.txt:7"));
        let short = parse_trajectory("1 2 3\n", Path::new("t.txt")).unwrap_err();
        assert!(matches!(short, FormatError::Parse { line: 1, .. }));
    }

    #[test]
    fn missing_file() {
        let err = read_trajectory(Path::new("/nonexistent/traj.txt")).unwrap_err();
        assert!(matches!(err, FormatError::Missing(_)));
    }
}
