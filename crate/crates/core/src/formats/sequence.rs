use super::trajectory::{parse_trajectory, write_trajectory_to};
use super::{parse_floats, FormatError};
use crate::lie_se3::RotationMatrix;
use crate::model::{Image, ImuSample};
use crate::simulator::{CameraSpec, Frame, Scene, SyncedSequence};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

const IMU_HEADER: &str = "t,ax,ay,az,wx,wy,wz";
const MANIFEST_HEADER: &str = "index,t,file,width,height";
const LANDMARK_HEADER: &str = "x,y,z";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    camera_rate: f64,
    imu_rate: f64,
    time_offset: f64,
    /// Camera-from-IMU rotation, row major.
    extrinsics: [[f64; 3]; 3],
    gravity: [f64; 3],
    pixel_noise: f64,
    #[serde(with = "super::u64_text")]
    render_seed: u64,
    camera: CameraSpec,
}

/// Layout under `dir`: `meta.toml`, `imu.csv`, `gt.txt` (trajectory format,
/// one pose per frame), `landmarks.csv`, and `frames/` holding
/// `manifest.csv` plus one raw little-endian `f64` file per image.
pub fn write_sequence(dir: &Path, seq: &SyncedSequence) -> Result<(), FormatError> {
    let frames_dir = dir.join("frames");
    fs::create_dir_all(&frames_dir).map_err(|e| FormatError::io(&frames_dir, e))?;
    let put = |name: &Path, bytes: &[u8]| fs::write(name, bytes).map_err(|e| FormatError::io(name, e));

    let m = seq.extrinsics.matrix();
    let meta = Meta {
        camera_rate: seq.camera_rate,
        imu_rate: seq.imu_rate,
        time_offset: seq.time_offset,
        extrinsics: [0, 1, 2].map(|r| [m[(r, 0)], m[(r, 1)], m[(r, 2)]]),
        gravity: seq.gravity.into(),
        pixel_noise: seq.scene.pixel_noise,
        render_seed: seq.scene.render_seed,
        camera: seq.scene.camera.clone(),
    };
    put(&dir.join("meta.toml"), toml::to_string(&meta).expect("meta serializes").as_bytes())?;

    let mut imu = String::from(IMU_HEADER);
    imu.push('\n');
    for s in &seq.imu {
        let _ = writeln!(imu, "{},{},{},{},{},{},{}", s.t, s.a.x, s.a.y, s.a.z, s.w.x, s.w.y, s.w.z);
    }
    put(&dir.join("imu.csv"), imu.as_bytes())?;

    if seq.gt_poses.len() != seq.frames.len() {
        return Err(FormatError::schema(dir, format!("{} poses for {} frames", seq.gt_poses.len(), seq.frames.len())));
    }
    let gt: Vec<_> = seq.frames.iter().map(|f| f.t).zip(seq.gt_poses.iter().copied()).collect();
    let mut buf = Vec::new();
    write_trajectory_to(&mut buf, &gt).expect("writing to memory");
    put(&dir.join("gt.txt"), &buf)?;

    let mut lm = String::from(LANDMARK_HEADER);
    lm.push('\n');
    for p in &seq.scene.landmarks {
        let _ = writeln!(lm, "{},{},{}", p.x, p.y, p.z);
    }
    put(&dir.join("landmarks.csv"), lm.as_bytes())?;

    let mut manifest = String::from(MANIFEST_HEADER);
    manifest.push('\n');
    for (k, f) in seq.frames.iter().enumerate() {
        let name = format!("{k:06}.f64");
        let _ = writeln!(manifest, "{k},{},{name},{},{}", f.t, f.image.width, f.image.height);
        let bytes: Vec<u8> = f.image.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        put(&frames_dir.join(&name), &bytes)?;
    }
    put(&frames_dir.join("manifest.csv"), manifest.as_bytes())
}

fn read_text(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path).map_err(|e| FormatError::io(path, e))
}

/// Data lines of a CSV with a fixed header, numbered from 1 at the header.
fn csv_rows<'a>(text: &'a str, header: &str, path: &Path) -> Result<Vec<(usize, &'a str)>, FormatError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        Some((_, h)) => return Err(FormatError::Parse { path: path.to_path_buf(), line: 1, msg: format!("expected header {header:?}, found {h:?}") }),
        None => return Err(FormatError::Parse { path: path.to_path_buf(), line: 1, msg: "empty file".into() }),
    }
    Ok(lines.filter(|(_, l)| !l.trim().is_empty()).map(|(i, l)| (i + 1, l)).collect())
}

pub fn read_sequence(dir: &Path) -> Result<SyncedSequence, FormatError> {
    if !dir.is_dir() {
        return Err(FormatError::Missing(dir.to_path_buf()));
    }
    let meta_path = dir.join("meta.toml");
    let meta: Meta =
        toml::from_str(&read_text(&meta_path)?).map_err(|e| FormatError::schema(&meta_path, e.to_string()))?;
    let extrinsics = RotationMatrix::new(Matrix3::from_fn(|r, c| meta.extrinsics[r][c]))
        .map_err(|e| FormatError::schema(&meta_path, format!("extrinsics: {e}")))?;

    let imu_path = dir.join("imu.csv");
    let imu_text = read_text(&imu_path)?;
    let mut imu = Vec::new();
    for (line, row) in csv_rows(&imu_text, IMU_HEADER, &imu_path)? {
        let [t, ax, ay, az, wx, wy, wz] = parse_floats::<7>(row, ',', &imu_path, line)?;
        if let Some(prev) = imu.last().map(|s: &ImuSample| s.t) {
            if !(t > prev) {
                return Err(FormatError::Parse { path: imu_path, line, msg: format!("timestamp {t} does not increase") });
            }
        }
        imu.push(ImuSample { a: Vector3::new(ax, ay, az), w: Vector3::new(wx, wy, wz), t });
    }

    let gt_path = dir.join("gt.txt");
    let gt = parse_trajectory(&read_text(&gt_path)?, &gt_path)?;

    let lm_path = dir.join("landmarks.csv");
    let lm_text = read_text(&lm_path)?;
    let landmarks = csv_rows(&lm_text, LANDMARK_HEADER, &lm_path)?
        .into_iter()
        .map(|(line, row)| parse_floats::<3>(row, ',', &lm_path, line).map(Vector3::from))
        .collect::<Result<Vec<_>, _>>()?;

    let frames_dir = dir.join("frames");
    let man_path = frames_dir.join("manifest.csv");
    let man_text = read_text(&man_path)?;
    let mut frames = Vec::new();
    for (line, row) in csv_rows(&man_text, MANIFEST_HEADER, &man_path)? {
        let err = |msg: String| FormatError::Parse { path: man_path.clone(), line, msg };
        let fields: Vec<&str> = row.split(',').map(str::trim).collect();
        let [index, t, file, width, height] = fields[..] else {
            return Err(err(format!("expected 5 fields, found {}", fields.len())));
        };
        let index: usize = index.parse().map_err(|_| err(format!("bad index {index:?}")))?;
        if index != frames.len() {
            return Err(err(format!("frame index {index} out of order")));
        }
        let t: f64 = t.parse().map_err(|_| err(format!("bad timestamp {t:?}")))?;
        let width: usize = width.parse().map_err(|_| err(format!("bad width {width:?}")))?;
        let height: usize = height.parse().map_err(|_| err(format!("bad height {height:?}")))?;
        if file.contains('/') || file.contains('\\') || file.starts_with('.') {
            return Err(err(format!("frame file {file:?} must be a plain file name")));
        }
        let img_path = frames_dir.join(file);
        let raw = fs::read(&img_path).map_err(|e| FormatError::io(&img_path, e))?;
        if raw.len() != width * height * 8 {
            return Err(FormatError::schema(
                &img_path,
                format!("{} bytes, expected {} for {width}x{height}", raw.len(), width * height * 8),
            ));
        }
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        frames.push(Frame { t, image: Image { width, height, data } });
    }
    if gt.len() != frames.len() {
        return Err(FormatError::schema(&gt_path, format!("{} poses for {} frames", gt.len(), frames.len())));
    }
    if let Some(k) = gt.iter().zip(&frames).position(|((t, _), f)| *t != f.t) {
        return Err(FormatError::Parse {
            path: gt_path,
            line: k + 1,
            msg: format!("pose time {} differs from frame time {}", gt[k].0, frames[k].t),
        });
    }

    Ok(SyncedSequence {
        camera_rate: meta.camera_rate,
        imu_rate: meta.imu_rate,
        frames,
        imu,
        gt_poses: gt.into_iter().map(|(_, p)| p).collect(),
        extrinsics,
        time_offset: meta.time_offset,
        gravity: Vector3::from(meta.gravity),
        scene: Scene { landmarks, camera: meta.camera, pixel_noise: meta.pixel_noise, render_seed: meta.render_seed },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{generate_trajectory, perturb_extrinsics, shift_imu_clock, CalibPerturbation, TrajectorySpec};

    fn seq() -> SyncedSequence {
        let spec = TrajectorySpec {
            duration: 1.0,
            camera: CameraSpec { width: 12, height: 10, focal: 6.0, ..CameraSpec::default() },
            landmark_count: 30,
            seed: 3,
            ..TrajectorySpec::default()
        };
        let s = generate_trajectory(&spec).unwrap();
        let s = perturb_extrinsics(&s, &CalibPerturbation::new(7.5, 20.0, 1)).unwrap();
        shift_imu_clock(&s, 0.013)
    }

    #[test]
    fn round_trip_is_exact() {
        let s = seq();
        let dir = tempfile::tempdir().unwrap();
        write_sequence(dir.path(), &s).unwrap();
        let back = read_sequence(dir.path()).unwrap();
        assert_eq!(back.extrinsics, s.extrinsics);
        assert_eq!(back, s);
    }

    #[test]
    fn missing_pieces_are_named() {
        let s = seq();
        let dir = tempfile::tempdir().unwrap();
        write_sequence(dir.path(), &s).unwrap();
        fs::remove_file(dir.path().join("imu.csv")).unwrap();
        match read_sequence(dir.path()) {
            Err(FormatError::Missing(p)) => assert!(p.ends_with("imu.csv")),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(read_sequence(&dir.path().join("nope")), Err(FormatError::Missing(_))));
    }

    #[test]
    fn schema_errors() {
        let s = seq();
        let dir = tempfile::tempdir().unwrap();
        write_sequence(dir.path(), &s).unwrap();
        let imu = dir.path().join("imu.csv");
        let text = fs::read_to_string(&imu).unwrap().replacen("t,ax", "time,ax", 1);
        fs::write(&imu, text).unwrap();
        assert!(matches!(read_sequence(dir.path()), Err(FormatError::Parse { line: 1, .. })));
        write_sequence(dir.path(), &s).unwrap();
        fs::write(dir.path().join("frames/000002.f64"), [0u8; 7]).unwrap();
        assert!(matches!(read_sequence(dir.path()), Err(FormatError::Schema { .. })));
    }
}
