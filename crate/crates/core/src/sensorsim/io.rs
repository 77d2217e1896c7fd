//! Sequence ingestion and dataset persistence.
//!
//! A persisted dataset is a directory:
//!
//! ```text
//! manifest.json   shapes, frame period, r_imu, scene config (if synthetic)
//! poses.txt       KITTI pose lines, one per frame
//! imu.csv         header + one row per IMU sample, (T-1)·r_imu rows
//! frames/000000.png ...
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ImuSample, SceneConfig, SensorStream, StreamMeta};
use crate::error::{Error, Result};
use crate::geometry::{kitti, Trajectory};
use crate::image::Image;

pub const IMU_HEADER: &str = "gx,gy,gz,ax,ay,az";
pub const MANIFEST_VERSION: u32 = 1;

/// Parses IMU rows (6 reals each, comma or whitespace separated). A first
/// line that does not parse as numbers is treated as a header.
pub fn parse_imu_csv(text: &str, path: &str) -> Result<Vec<ImuSample>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .collect();
        let parsed: std::result::Result<Vec<f64>, _> = toks.iter().map(|t| t.parse::<f64>()).collect();
        match parsed {
            Err(_) if i == 0 => continue,
            Err(_) => {
                return Err(Error::Parse {
                    path: path.to_string(),
                    line: i + 1,
                    msg: "IMU row is not numeric".into(),
                })
            }
            Ok(v) if v.len() != 6 => {
                return Err(Error::Parse {
                    path: path.to_string(),
                    line: i + 1,
                    msg: format!("expected 6 IMU values, found {}", v.len()),
                })
            }
            Ok(v) => out.push([v[0], v[1], v[2], v[3], v[4], v[5]]),
        }
    }
    Ok(out)
}

pub fn format_imu_csv(samples: &[ImuSample]) -> String {
    let mut s = String::with_capacity(samples.len() * 6 * 22);
    s.push_str(IMU_HEADER);
    s.push('\n');
    for row in samples {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Loads a KITTI-layout sequence: a directory of PNG frames (sorted by
/// name), a pose file and an IMU CSV. Frames are resized to `size` (c, h, w)
/// and scaled to `[0, 1]`.
pub fn load_kitti_sequence(
    image_dir: &Path,
    pose_file: &Path,
    imu_file: &Path,
    imu_samples: usize,
    size: (usize, usize, usize),
    frame_period: f64,
) -> Result<SensorStream> {
    let poses = kitti::read_poses(pose_file)?;
    let images = list_images(image_dir)?;
    if images.len() != poses.len() {
        return Err(Error::Structural(format!(
            "{} images but {} poses",
            images.len(),
            poses.len()
        )));
    }
    if poses.len() < 2 {
        return Err(Error::Structural("sequence needs at least two frames".into()));
    }
    let imu_text = std::fs::read_to_string(imu_file).map_err(|e| Error::io(imu_file, e))?;
    let imu = parse_imu_csv(&imu_text, &imu_file.display().to_string())?;
    let windows = chunk_imu(imu, poses.len() - 1, imu_samples)?;
    let (c, h, w) = size;
    let frames = images
        .iter()
        .map(|p| Image::read_png(p, c).map(|img| img.resize(h, w)))
        .collect::<Result<Vec<_>>>()?;
    let gt = Trajectory::with_period(poses, frame_period)?;
    SensorStream::new(
        frames,
        windows,
        gt,
        StreamMeta {
            frame_period,
            imu_samples,
            source: format!("kitti:{}", image_dir.display()),
        },
    )
}

fn chunk_imu(imu: Vec<ImuSample>, transitions: usize, r: usize) -> Result<Vec<Vec<ImuSample>>> {
    if r == 0 || imu.len() != transitions * r {
        return Err(Error::Structural(format!(
            "{} IMU rows do not split into {transitions} windows of {r}",
            imu.len()
        )));
    }
    Ok(imu.chunks(r).map(|c| c.to_vec()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub imu_samples: usize,
    pub frame_period: f64,
    pub source: String,
    pub scene: Option<SceneConfig>,
}

pub fn save_dataset(stream: &SensorStream, scene: Option<&SceneConfig>, dir: &Path) -> Result<()> {
    let frames_dir = dir.join("frames");
    std::fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    let (c, h, w) = stream.frame_shape();
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        frames: stream.len(),
        channels: c,
        height: h,
        width: w,
        imu_samples: stream.meta().imu_samples,
        frame_period: stream.meta().frame_period,
        source: stream.meta().source.clone(),
        scene: scene.cloned(),
    };
    let mpath = dir.join("manifest.json");
    std::fs::write(&mpath, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&mpath, e))?;
    kitti::write_poses(&dir.join("poses.txt"), stream.gt().poses())?;
    let flat: Vec<ImuSample> = stream.imu_windows().iter().flatten().copied().collect();
    let ipath = dir.join("imu.csv");
    std::fs::write(&ipath, format_imu_csv(&flat)).map_err(|e| Error::io(&ipath, e))?;
    for (i, f) in stream.frames().iter().enumerate() {
        f.write_png(&frames_dir.join(format!("{i:06}.png")))?;
    }
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let mpath = dir.join("manifest.json");
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let m: DatasetManifest = serde_json::from_str(&text)?;
    if m.version != MANIFEST_VERSION {
        return Err(Error::Structural(format!("unsupported manifest version {}", m.version)));
    }
    Ok(m)
}

pub fn load_dataset(dir: &Path) -> Result<(SensorStream, DatasetManifest)> {
    let m = read_manifest(dir)?;
    let mut stream = load_kitti_sequence(
        &dir.join("frames"),
        &dir.join("poses.txt"),
        &dir.join("imu.csv"),
        m.imu_samples,
        (m.channels, m.height, m.width),
        m.frame_period,
    )?;
    stream.meta.source = m.source.clone();
    if stream.len() != m.frames {
        return Err(Error::Structural(format!(
            "manifest lists {} frames, found {}",
            m.frames,
            stream.len()
        )));
    }
    Ok((stream, m))
}
