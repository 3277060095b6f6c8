//! Parsers and writers for on-disk inputs: TUM trajectories, GNSS CSV
//! logs and PLY point clouds.
//!
//! Every parser takes raw bytes and reports malformed input as a
//! structured [`Error`](crate::Error); none of them panic on arbitrary
//! input.

mod gnss;
mod ply;
mod tum;

use std::path::Path;

pub use gnss::{parse_gnss, write_gnss};
pub use ply::{parse_ply, parse_ply_header, write_ply, PlyFormat, PlyHeader, PlyProperty, PlyElement, ScalarType};
pub use tum::{parse_trajectory, write_trajectory};

use crate::error::{Error, Result};
use crate::model::{GeoTrack, PointCloud, Trajectory};

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::from(e).in_file(path))
}

pub fn read_trajectory(path: impl AsRef<Path>, frame_id: &str) -> Result<Trajectory> {
    let path = path.as_ref();
    parse_trajectory(&read_file(path)?, frame_id).map_err(|e| e.in_file(path))
}

pub fn read_gnss(path: impl AsRef<Path>) -> Result<GeoTrack> {
    let path = path.as_ref();
    parse_gnss(&read_file(path)?).map_err(|e| e.in_file(path))
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    parse_ply(&read_file(path)?).map_err(|e| e.in_file(path))
}

/// Writes `cloud`, creating missing parent directories.
pub fn save_ply(path: impl AsRef<Path>, cloud: &PointCloud, format: PlyFormat) -> Result<()> {
    write_bytes(path.as_ref(), &write_ply(cloud, format))
}

/// Writes `text`, creating missing parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::from(e).in_file(dir))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::from(e).in_file(path))
}

pub fn read_text(path: &Path) -> Result<String> {
    let bytes = read_file(path)?;
    String::from_utf8(bytes).map_err(|_| Error::Invalid("file is not UTF-8".into()).in_file(path))
}
