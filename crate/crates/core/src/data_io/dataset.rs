//! KITTI odometry directory layout:
//! `sequences/NN/{velodyne/NNNNNN.bin, image_2/NNNNNN.png, calib.txt}`.

use std::fs;
use std::path::{Path, PathBuf};

use super::kitti::{save_kitti_scan, save_png_rgb, KittiCalib};
use super::synthetic::SyntheticScene;
use crate::error::{Error, Result};
use crate::io_util::write_atomic_str;

pub const TRAIN_SEQUENCES: [u32; 9] = [0, 1, 2, 3, 4, 5, 6, 7, 8];
pub const TEST_SEQUENCES: [u32; 2] = [9, 10];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameFiles {
    pub sequence: u32,
    pub index: u64,
    pub scan: PathBuf,
    pub image: PathBuf,
    pub calib: PathBuf,
}

pub fn sequence_dir(root: &Path, sequence: u32) -> PathBuf {
    root.join("sequences").join(format!("{sequence:02}"))
}

/// Frames present in the listed sequences, ordered by sequence then index.
/// A frame needs both its `.bin` and its `image_2` PNG.
pub fn list_frames(root: &Path, sequences: &[u32]) -> Result<Vec<FrameFiles>> {
    let mut frames = Vec::new();
    for &seq in sequences {
        let dir = sequence_dir(root, seq);
        let velo = dir.join("velodyne");
        if !velo.is_dir() {
            continue;
        }
        let mut indices: Vec<u64> = fs::read_dir(&velo)
            .map_err(|e| Error::io(&velo, e))?
            .filter_map(|entry| {
                let path = entry.ok()?.path();
                if path.extension()? != "bin" {
                    return None;
                }
                path.file_stem()?.to_str()?.parse().ok()
            })
            .collect();
        indices.sort_unstable();
        for index in indices {
            let image = dir.join("image_2").join(format!("{index:06}.png"));
            if !image.is_file() {
                continue;
            }
            frames.push(FrameFiles {
                sequence: seq,
                index,
                scan: velo.join(format!("{index:06}.bin")),
                image,
                calib: dir.join("calib.txt"),
            });
        }
    }
    if frames.is_empty() {
        return Err(Error::Config(format!(
            "no frames found under {} for sequences {sequences:?}",
            root.display()
        )));
    }
    Ok(frames)
}

/// Writes a synthetic scene as one KITTI-format frame (unperturbed cloud).
pub fn write_kitti_frame(
    root: &Path,
    sequence: u32,
    index: u64,
    scene: &SyntheticScene,
) -> Result<FrameFiles> {
    let dir = sequence_dir(root, sequence);
    let files = FrameFiles {
        sequence,
        index,
        scan: dir.join("velodyne").join(format!("{index:06}.bin")),
        image: dir.join("image_2").join(format!("{index:06}.png")),
        calib: dir.join("calib.txt"),
    };
    save_kitti_scan(&files.scan, &scene.scan)?;
    save_png_rgb(&files.image, &scene.frame.image)?;
    let calib = KittiCalib::from_parts(&scene.frame.intrinsics, &scene.cam_from_velo);
    write_atomic_str(&files.calib, &calib.to_text())?;
    Ok(files)
}
