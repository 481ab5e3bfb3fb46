//! Streamlines, tractograms and the per-subject geometry utilities used by
//! both the density filter and the classifier pipeline.

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = Point3<f64>;

/// An ordered 3-D polyline in millimetres. Always holds at least two finite
/// points and has strictly positive arc length.
#[derive(Debug, Clone, PartialEq)]
pub struct Streamline {
    points: Vec<Point>,
}

impl Streamline {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidStreamline(format!(
                "need at least 2 points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidStreamline("non-finite coordinate".into()));
        }
        let s = Streamline { points };
        if s.arc_length() <= 0.0 {
            return Err(Error::InvalidStreamline("zero arc length".into()));
        }
        Ok(s)
    }

    pub fn from_coords(coords: &[[f64; 3]]) -> Result<Self> {
        Self::new(coords.iter().map(|c| Point::new(c[0], c[1], c[2])).collect())
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }

    /// Sum of consecutive Euclidean distances, in mm.
    pub fn arc_length(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1] - w[0]).norm())
            .sum()
    }

    pub fn centroid(&self) -> Point {
        let sum = self
            .points
            .iter()
            .fold(Vector3::zeros(), |acc, p| acc + p.coords);
        Point::from(sum / self.points.len() as f64)
    }

    /// Cumulative arc length at every vertex, starting at 0.
    pub fn cumulative_lengths(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.points.len());
        let mut acc = 0.0;
        out.push(0.0);
        for w in self.points.windows(2) {
            acc += (w[1] - w[0]).norm();
            out.push(acc);
        }
        out
    }

    /// Apply `f` to every point, revalidating the result.
    pub fn map_points(&self, f: impl Fn(&Point) -> Point) -> Result<Streamline> {
        Streamline::new(self.points.iter().map(f).collect())
    }
}

/// Resample to `n_points` points at equal arc-length spacing using linear
/// interpolation. Both endpoints are copied exactly.
pub fn resample(streamline: &Streamline, n_points: usize) -> Result<Streamline> {
    if n_points < 2 {
        return Err(Error::InvalidArgument(format!(
            "resample needs n_points >= 2, got {n_points}"
        )));
    }
    let pts = streamline.points();
    let cum = streamline.cumulative_lengths();
    let total = *cum.last().unwrap();
    let mut out = Vec::with_capacity(n_points);
    out.push(pts[0]);
    let mut seg = 0;
    for i in 1..n_points - 1 {
        let target = total * i as f64 / (n_points - 1) as f64;
        while seg + 2 < cum.len() && cum[seg + 1] < target {
            seg += 1;
        }
        let seg_len = cum[seg + 1] - cum[seg];
        let t = if seg_len > 0.0 {
            ((target - cum[seg]) / seg_len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        out.push(pts[seg] + (pts[seg + 1] - pts[seg]) * t);
    }
    out.push(*pts.last().unwrap());
    Streamline::new(out)
}

/// Isotropic voxel grid anchored at the origin. Voxel `(i, j, k)` covers
/// `[i, i+1) * voxel_size` along x and likewise for the other axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dims: [usize; 3],
    pub voxel_size: f64,
}

impl Grid {
    pub fn new(dims: [usize; 3], voxel_size: f64) -> Result<Self> {
        if dims.contains(&0) || !(voxel_size > 0.0) || !voxel_size.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "invalid grid dims {dims:?} / voxel size {voxel_size}"
            )));
        }
        Ok(Grid { dims, voxel_size })
    }

    pub fn extent(&self) -> [f64; 3] {
        [
            self.dims[0] as f64 * self.voxel_size,
            self.dims[1] as f64 * self.voxel_size,
            self.dims[2] as f64 * self.voxel_size,
        ]
    }

    pub fn n_voxels(&self) -> usize {
        self.dims.iter().product()
    }

    /// Closed box `[0, extent]` on every axis.
    pub fn contains(&self, p: &Point) -> bool {
        let ext = self.extent();
        (0..3).all(|a| p[a] >= 0.0 && p[a] <= ext[a])
    }

    pub fn contains_streamline(&self, s: &Streamline) -> bool {
        s.points().iter().all(|p| self.contains(p))
    }

    pub fn linear_index(&self, v: [usize; 3]) -> usize {
        (v[2] * self.dims[1] + v[1]) * self.dims[0] + v[0]
    }

    /// Voxel containing `p`; points on the upper boundary belong to the last voxel.
    pub fn voxel_of(&self, p: &Point) -> [usize; 3] {
        let mut v = [0usize; 3];
        for a in 0..3 {
            let idx = (p[a] / self.voxel_size).floor();
            v[a] = (idx.max(0.0) as usize).min(self.dims[a] - 1);
        }
        v
    }
}

/// A set of streamlines on a common grid. Streamline ids are their indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Tractogram {
    streamlines: Vec<Streamline>,
    grid: Grid,
}

impl Tractogram {
    pub fn new(streamlines: Vec<Streamline>, grid: Grid) -> Result<Self> {
        for s in &streamlines {
            if let Some(p) = s.points().iter().find(|p| !grid.contains(p)) {
                return Err(Error::OutsideGrid { x: p.x, y: p.y, z: p.z });
            }
        }
        Ok(Tractogram { streamlines, grid })
    }

    pub fn empty(grid: Grid) -> Self {
        Tractogram { streamlines: Vec::new(), grid }
    }

    pub fn streamlines(&self) -> &[Streamline] {
        &self.streamlines
    }

    pub fn get(&self, id: usize) -> Option<&Streamline> {
        self.streamlines.get(id)
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.streamlines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.streamlines.is_empty()
    }

    /// Streamlines with the given ids, in the given order, as a new tractogram.
    pub fn select(&self, ids: &[usize]) -> Result<Tractogram> {
        let streamlines = ids
            .iter()
            .map(|&id| self.get(id).cloned().ok_or(Error::UnknownId(id)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Tractogram { streamlines, grid: self.grid })
    }

    pub fn lengths(&self) -> Vec<f64> {
        self.streamlines.iter().map(Streamline::arc_length).collect()
    }
}

/// Per-axis min/max used to map coordinates into `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRecord {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl NormalizationRecord {
    pub fn from_streamlines<'a>(streamlines: impl IntoIterator<Item = &'a Streamline>) -> Result<Self> {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        let mut any = false;
        for s in streamlines {
            for p in s.points() {
                any = true;
                for a in 0..3 {
                    min[a] = min[a].min(p[a]);
                    max[a] = max[a].max(p[a]);
                }
            }
        }
        if !any {
            return Err(Error::InvalidArgument("normalization needs at least one streamline".into()));
        }
        Ok(NormalizationRecord { min, max })
    }

    pub fn apply(&self, p: &Point) -> Point {
        let mut out = Point::origin();
        for a in 0..3 {
            let span = self.max[a] - self.min[a];
            out[a] = if span > 0.0 {
                (2.0 * (p[a] - self.min[a]) / span - 1.0).clamp(-1.0, 1.0)
            } else {
                0.0
            };
        }
        out
    }

    /// Inverse map. A degenerate axis maps back to its single value.
    pub fn invert(&self, p: &Point) -> Point {
        let mut out = Point::origin();
        for a in 0..3 {
            let span = self.max[a] - self.min[a];
            out[a] = if span > 0.0 {
                self.min[a] + (p[a] + 1.0) * 0.5 * span
            } else {
                self.min[a]
            };
        }
        out
    }
}

/// Normalized copies of the streamlines plus the record needed to invert the map.
///
/// The result is a plain streamline list rather than a [`Tractogram`]: the
/// normalized coordinates no longer live on the voxel grid.
pub fn normalize_coordinates(tractogram: &Tractogram) -> Result<(Vec<Vec<Point>>, NormalizationRecord)> {
    let record = NormalizationRecord::from_streamlines(tractogram.streamlines())?;
    let out = tractogram
        .streamlines()
        .iter()
        .map(|s| s.points().iter().map(|p| record.apply(p)).collect())
        .collect();
    Ok((out, record))
}

/// Distance from `p` to the closed segment `a`-`b`.
pub fn point_segment_distance(p: &Point, a: &Point, b: &Point) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Distance from `p` to the nearest point of a polyline.
pub fn point_polyline_distance(p: &Point, polyline: &[Point]) -> f64 {
    if polyline.len() == 1 {
        return (p - polyline[0]).norm();
    }
    polyline
        .windows(2)
        .map(|w| point_segment_distance(p, &w[0], &w[1]))
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(coords: &[[f64; 3]]) -> Streamline {
        Streamline::from_coords(coords).unwrap()
    }

    #[test]
    fn arc_length_of_elbow() {
        let s = line(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0]]);
        assert_eq!(s.arc_length(), 2.0);
    }

    #[test]
    fn rejects_short_or_degenerate() {
        assert!(Streamline::from_coords(&[[0.0, 0.0, 0.0]]).is_err());
        assert!(Streamline::from_coords(&[[1.0, 1.0, 1.0], [1.0, 1.0, 1.0]]).is_err());
        assert!(Streamline::from_coords(&[[0.0, 0.0, 0.0], [f64::NAN, 0.0, 0.0]]).is_err());
    }

    #[test]
    fn resample_uniform_line() {
        let s = line(&[[0.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        let r = resample(&s, 4).unwrap();
        let xs: Vec<f64> = r.points().iter().map(|p| p.x).collect();
        assert_eq!(xs, vec![0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn resample_two_points_gives_endpoints() {
        let s = line(&[[0.0, 0.0, 0.0], [1.0, 2.0, 0.0], [4.0, 2.0, 1.0]]);
        let r = resample(&s, 2).unwrap();
        assert_eq!(r.points()[0], s.points()[0]);
        assert_eq!(r.points()[1], s.points()[2]);
        assert!(resample(&s, 1).is_err());
    }

    #[test]
    fn resample_preserves_straight_length() {
        let s = line(&[[0.5, 0.5, 0.5], [2.0, 3.0, 4.5], [3.5, 5.5, 8.5]]);
        let r = resample(&s, 17).unwrap();
        assert!((r.arc_length() - s.arc_length()).abs() < 1e-9);
    }

    #[test]
    fn normalize_span_and_degenerate_axis() {
        let grid = Grid::new([20, 20, 20], 1.0).unwrap();
        let t = Tractogram::new(
            vec![line(&[[0.0, 3.0, 2.0], [5.0, 3.0, 2.0], [10.0, 3.0, 2.0]])],
            grid,
        )
        .unwrap();
        let (norm, rec) = normalize_coordinates(&t).unwrap();
        let xs: Vec<f64> = norm[0].iter().map(|p| p.x).collect();
        assert_eq!(xs, vec![-1.0, 0.0, 1.0]);
        assert!(norm[0].iter().all(|p| p.y == 0.0 && p.z == 0.0));
        let back = rec.invert(&norm[0][1]);
        assert!((back - Point::new(5.0, 3.0, 2.0)).norm() < 1e-12);
    }

    #[test]
    fn tractogram_rejects_out_of_grid() {
        let grid = Grid::new([2, 2, 2], 1.0).unwrap();
        let err = Tractogram::new(vec![line(&[[0.0, 0.0, 0.0], [3.0, 0.0, 0.0]])], grid);
        assert!(matches!(err, Err(Error::OutsideGrid { .. })));
    }

    #[test]
    fn voxel_of_upper_boundary() {
        let grid = Grid::new([4, 4, 4], 2.0).unwrap();
        assert_eq!(grid.voxel_of(&Point::new(8.0, 0.0, 3.9)), [3, 0, 1]);
    }
}
