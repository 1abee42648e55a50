//! Ring × azimuth projection of a scan with a recorded pixel → point index.
//!
//! Rows are laser rings, columns are `floor((φ + π) / 2π · W)`. When several
//! points fall into one cell the nearest (smallest range) wins. Empty cells
//! hold 0.

use std::f64::consts::{PI, TAU};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data_io::LidarScan;
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::image_ops::{GrayImage, ImageOrigin};
use crate::io_util::{write_atomic, write_atomic_str};

/// Paper-scale map width.
pub const DEFAULT_MAP_WIDTH: usize = 1024;
/// Range mapped to full scale when a depth map is rasterized to 8 bits.
pub const DEPTH_GRAY_RANGE_M: f64 = 80.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    #[default]
    Reflectance,
    Depth,
}

impl FromStr for MapKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reflectance" => Ok(MapKind::Reflectance),
            "depth" => Ok(MapKind::Depth),
            other => Err(Error::Config(format!("unknown map kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for MapKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MapKind::Reflectance => "reflectance",
            MapKind::Depth => "depth",
        })
    }
}

/// `(r, θ, φ)` with `φ = atan2(y, x)` and `θ = arccos(z / r)`. On the z axis
/// φ is 0.
pub fn spherical_coords(p: &Vec3) -> Result<(f64, f64, f64)> {
    let r = p.norm();
    if !(r > 0.0) {
        return Err(Error::UndefinedDirection);
    }
    let theta = (p.z / r).clamp(-1.0, 1.0).acos();
    let phi = if p.x == 0.0 && p.y == 0.0 {
        0.0
    } else {
        p.y.atan2(p.x)
    };
    Ok((r, theta, phi))
}

/// Column of azimuth `phi` in a map `width` wide.
#[inline]
pub fn azimuth_column(phi: f64, width: usize) -> usize {
    let c = ((phi + PI) / TAU * width as f64).floor();
    if c < 0.0 {
        0
    } else {
        (c as usize).min(width - 1)
    }
}

/// Pixel of a point with ring `ring`; `None` at the origin.
pub fn pixel_of(p: &Vec3, ring: u16, width: usize) -> Option<(usize, usize)> {
    let (_, _, phi) = spherical_coords(p).ok()?;
    Some((ring as usize, azimuth_column(phi, width)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMap {
    height: usize,
    width: usize,
    kind: MapKind,
    values: Vec<f64>,
    index: Vec<Option<u32>>,
}

pub fn project(scan: &LidarScan, width: usize, kind: MapKind) -> Result<ProjectionMap> {
    if width == 0 {
        return Err(Error::Config("map width must be positive".into()));
    }
    if scan.len() > u32::MAX as usize {
        return Err(Error::Contract("scan too large for 32-bit indices".into()));
    }
    let height = scan.num_rings();
    let mut values = vec![0.0; height * width];
    let mut index: Vec<Option<u32>> = vec![None; height * width];
    let mut best = vec![f64::INFINITY; height * width];
    for (i, p) in scan.points().iter().enumerate() {
        let Ok((r, _, phi)) = spherical_coords(&p.position) else {
            continue;
        };
        let cell = p.ring as usize * width + azimuth_column(phi, width);
        if r < best[cell] {
            best[cell] = r;
            index[cell] = Some(i as u32);
            values[cell] = match kind {
                MapKind::Reflectance => p.reflectance,
                MapKind::Depth => r,
            };
        }
    }
    Ok(ProjectionMap {
        height,
        width,
        kind,
        values,
        index,
    })
}

impl ProjectionMap {
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn kind(&self) -> MapKind {
        self.kind
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn point_index(&self, row: usize, col: usize) -> Option<usize> {
        if row >= self.height || col >= self.width {
            return None;
        }
        self.index[row * self.width + col].map(|i| i as usize)
    }

    pub fn occupied(&self, row: usize, col: usize) -> bool {
        self.point_index(row, col).is_some()
    }

    pub fn occupancy(&self) -> Vec<bool> {
        self.index.iter().map(Option::is_some).collect()
    }

    pub fn occupied_count(&self) -> usize {
        self.index.iter().filter(|i| i.is_some()).count()
    }

    /// Occupied pixels in row-major order.
    pub fn occupied_pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.index
            .iter()
            .enumerate()
            .filter(|(_, i)| i.is_some())
            .map(move |(k, _)| (k / self.width, k % self.width))
    }

    /// 8-bit intensity image: reflectance × 255, or range scaled so that
    /// [`DEPTH_GRAY_RANGE_M`] is full scale.
    pub fn to_gray(&self) -> Result<GrayImage> {
        let (scale, origin) = match self.kind {
            MapKind::Reflectance => (255.0, ImageOrigin::ReflectanceMap),
            MapKind::Depth => (255.0 / DEPTH_GRAY_RANGE_M, ImageOrigin::DepthMap),
        };
        let values = self
            .values
            .iter()
            .map(|v| (v * scale).clamp(0.0, 255.0))
            .collect();
        GrayImage::new(self.height, self.width, values, origin)
    }

    pub fn header(&self) -> IndexHeader {
        IndexHeader {
            height: self.height,
            width: self.width,
            kind: self.kind,
        }
    }

    /// Flat little-endian i32 indices, row-major, −1 for empty cells.
    pub fn index_bytes(&self) -> Vec<u8> {
        self.index
            .iter()
            .flat_map(|i| i.map_or(-1i32, |v| v as i32).to_le_bytes())
            .collect()
    }

    /// Writes the map image, `<stem>.index.bin` and `<stem>.json`.
    pub fn save(&self, image_path: &Path) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
        self.to_gray()?.save(image_path)?;
        let index_path = image_path.with_extension("index.bin");
        let header_path = image_path.with_extension("json");
        write_atomic(&index_path, &self.index_bytes())?;
        let header = serde_json::to_string_pretty(&self.header())
            .map_err(|e| Error::Format(e.to_string()))?;
        write_atomic_str(&header_path, &header)?;
        Ok((index_path, header_path))
    }
}

/// Lifts an occupied pixel to its exact source point.
pub fn lift(map: &ProjectionMap, pixel: (usize, usize), scan: &LidarScan) -> Result<Vec3> {
    let (row, col) = pixel;
    let i = map
        .point_index(row, col)
        .ok_or(Error::NoCorrespondence { row, col })?;
    scan.point(i)
        .map(|p| p.position)
        .ok_or_else(|| Error::Contract(format!("index {i} is outside the scan")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexHeader {
    pub height: usize,
    pub width: usize,
    pub kind: MapKind,
}

/// Decoded index grid export.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexGrid {
    pub header: IndexHeader,
    pub index: Vec<Option<u32>>,
}

pub fn parse_index_header(text: &str) -> Result<IndexHeader> {
    let h: IndexHeader =
        serde_json::from_str(text).map_err(|e| Error::Format(format!("index header: {e}")))?;
    if h.height == 0 || h.width == 0 {
        return Err(Error::Format("index header dimensions must be positive".into()));
    }
    Ok(h)
}

pub fn decode_index_grid(header: IndexHeader, bytes: &[u8]) -> Result<IndexGrid> {
    let cells = header
        .height
        .checked_mul(header.width)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format("index grid dimensions overflow".into()))?;
    if bytes.len() != cells {
        return Err(Error::Format(format!(
            "index grid holds {} bytes, header implies {cells}",
            bytes.len()
        )));
    }
    let index = bytes
        .chunks_exact(4)
        .map(|b| match i32::from_le_bytes([b[0], b[1], b[2], b[3]]) {
            -1 => Ok(None),
            v if v >= 0 => Ok(Some(v as u32)),
            v => Err(Error::Format(format!("invalid point index {v}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(IndexGrid { header, index })
}

/// Debug-only θ × φ projection: rows are uniform bins of the polar angle
/// between the extremes of the cloud. Leaves voids where lasers are sparse.
pub fn project_theta_debug(scan: &LidarScan, height: usize, width: usize) -> Result<GrayImage> {
    if height == 0 || width == 0 {
        return Err(Error::Config("debug map size must be positive".into()));
    }
    let coords: Vec<(f64, f64, f64, f64)> = scan
        .points()
        .iter()
        .filter_map(|p| {
            spherical_coords(&p.position)
                .ok()
                .map(|(r, t, f)| (r, t, f, p.reflectance))
        })
        .collect();
    let (lo, hi) = coords
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
            (lo.min(c.1), hi.max(c.1))
        });
    let span = (hi - lo).max(f64::EPSILON);
    let mut values = vec![0.0; height * width];
    let mut best = vec![f64::INFINITY; height * width];
    for (r, t, f, refl) in coords {
        let row = (((t - lo) / span * height as f64) as usize).min(height - 1);
        let cell = row * width + azimuth_column(f, width);
        if r < best[cell] {
            best[cell] = r;
            values[cell] = refl * 255.0;
        }
    }
    GrayImage::new(height, width, values, ImageOrigin::ReflectanceMap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::LidarPoint;

    fn scan(points: Vec<LidarPoint>) -> LidarScan {
        LidarScan::new(points, 64).unwrap()
    }

    #[test]
    fn spherical_axis_pole_and_diagonal() {
        let (r, t, f) = spherical_coords(&Vec3::new(1.0, 0.0, 0.0)).unwrap();
        assert_eq!((r, f), (1.0, 0.0));
        assert!((t - PI / 2.0).abs() < 1e-15);

        assert_eq!(spherical_coords(&Vec3::new(0.0, 0.0, 2.0)).unwrap(), (2.0, 0.0, 0.0));

        let (r, t, f) = spherical_coords(&Vec3::new(1.0, 1.0, 2f64.sqrt())).unwrap();
        assert!((r - 2.0).abs() < 1e-15);
        assert!((t - PI / 4.0).abs() < 1e-15);
        assert!((f - PI / 4.0).abs() < 1e-15);

        assert!(matches!(
            spherical_coords(&Vec3::zeros()),
            Err(Error::UndefinedDirection)
        ));
    }

    #[test]
    fn single_point_placement() {
        let s = scan(vec![LidarPoint::new(3.0, 0.0, 0.1, 0.7, 5)]);
        let m = project(&s, 1024, MapKind::Reflectance).unwrap();
        assert_eq!((m.height(), m.width()), (64, 1024));
        assert_eq!(m.occupied_count(), 1);
        assert_eq!(m.point_index(5, 512), Some(0));
        assert_eq!(m.value(5, 512), 0.7);
        assert_eq!(m.value(5, 511), 0.0);
    }

    #[test]
    fn nearest_point_wins_a_cell() {
        let s = scan(vec![
            LidarPoint::new(10.0, 0.0, 0.0, 0.9, 2),
            LidarPoint::new(2.0, 0.0, 0.0, 0.1, 2),
        ]);
        let m = project(&s, 1024, MapKind::Reflectance).unwrap();
        assert_eq!(m.point_index(2, 512), Some(1));
        assert_eq!(m.value(2, 512), 0.1);
        let d = project(&s, 1024, MapKind::Depth).unwrap();
        assert_eq!(d.value(2, 512), 2.0);
    }

    #[test]
    fn lift_returns_source_point_or_errors() {
        let s = scan(vec![LidarPoint::new(-1.0, 2.5, 0.3, 0.5, 7)]);
        let m = project(&s, 1024, MapKind::Reflectance).unwrap();
        let (r, c) = m.occupied_pixels().next().unwrap();
        assert_eq!(lift(&m, (r, c), &s).unwrap(), s.points()[0].position);
        assert!(matches!(
            lift(&m, (0, 0), &s),
            Err(Error::NoCorrespondence { row: 0, col: 0 })
        ));
    }

    #[test]
    fn azimuth_extremes_clamp() {
        assert_eq!(azimuth_column(-PI, 1024), 0);
        assert_eq!(azimuth_column(PI, 1024), 1023);
        assert_eq!(azimuth_column(0.0, 1024), 512);
    }

    #[test]
    fn index_export_roundtrip() {
        let s = scan(vec![
            LidarPoint::new(1.0, 0.0, 0.0, 0.5, 0),
            LidarPoint::new(0.0, 1.0, 0.0, 0.5, 1),
        ]);
        let m = project(&s, 8, MapKind::Depth).unwrap();
        let g = decode_index_grid(m.header(), &m.index_bytes()).unwrap();
        assert_eq!(g.index, m.index);
        let text = serde_json::to_string(&m.header()).unwrap();
        assert_eq!(parse_index_header(&text).unwrap(), m.header());
        assert!(decode_index_grid(m.header(), &[0u8; 5]).is_err());
        let neg = (-7i32).to_le_bytes().repeat(64 * 8);
        assert!(decode_index_grid(m.header(), &neg).is_err());
    }
}
