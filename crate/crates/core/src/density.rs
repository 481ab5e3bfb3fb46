//! Voxelized, direction-binned track density.
//!
//! Every streamline segment is clipped against the voxel grid and each piece
//! is credited, in mm, to one `(voxel, bin)` cell, where the bin is the fixed
//! axis most parallel to the segment. Cells are addressed as
//! `voxel_linear_index * n_bins + bin`.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tractogram::{Grid, Point, Streamline, Tractogram};

/// Fixed antipodally symmetric orientation axes.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionBins {
    axes: Vec<Vector3<f64>>,
}

impl DirectionBins {
    /// 3 gives the coordinate axes, 6 the icosahedron's vertex axes, 10 the
    /// dodecahedron's. Other counts use a Fibonacci spiral on the hemisphere.
    pub fn new(n: usize) -> Result<Self> {
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        let raw: Vec<Vector3<f64>> = match n {
            0 => return Err(Error::InvalidArgument("need at least one direction bin".into())),
            3 => vec![Vector3::x(), Vector3::y(), Vector3::z()],
            6 => vec![
                Vector3::new(0.0, 1.0, phi),
                Vector3::new(0.0, 1.0, -phi),
                Vector3::new(1.0, phi, 0.0),
                Vector3::new(1.0, -phi, 0.0),
                Vector3::new(phi, 0.0, 1.0),
                Vector3::new(-phi, 0.0, 1.0),
            ],
            10 => {
                let ip = 1.0 / phi;
                vec![
                    Vector3::new(1.0, 1.0, 1.0),
                    Vector3::new(1.0, 1.0, -1.0),
                    Vector3::new(1.0, -1.0, 1.0),
                    Vector3::new(-1.0, 1.0, 1.0),
                    Vector3::new(0.0, ip, phi),
                    Vector3::new(0.0, ip, -phi),
                    Vector3::new(ip, phi, 0.0),
                    Vector3::new(ip, -phi, 0.0),
                    Vector3::new(phi, 0.0, ip),
                    Vector3::new(-phi, 0.0, ip),
                ]
            }
            _ => (0..n)
                .map(|i| {
                    let z = 1.0 - (i as f64 + 0.5) / n as f64;
                    let r = (1.0 - z * z).sqrt();
                    let theta = std::f64::consts::PI * (3.0 - 5f64.sqrt()) * i as f64;
                    Vector3::new(r * theta.cos(), r * theta.sin(), z)
                })
                .collect(),
        };
        Ok(DirectionBins { axes: raw.into_iter().map(|v| v.normalize()).collect() })
    }

    pub fn from_axes(axes: Vec<Vector3<f64>>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidArgument("need at least one direction bin".into()));
        }
        for (i, a) in axes.iter().enumerate() {
            if ((a.norm() - 1.0).abs()) > 1e-9 {
                return Err(Error::InvalidArgument(format!("axis {i} is not unit length")));
            }
            for b in &axes[..i] {
                if a.dot(b).abs() > 1.0 - 1e-9 {
                    return Err(Error::InvalidArgument(format!("axis {i} is parallel to another")));
                }
            }
        }
        Ok(DirectionBins { axes })
    }

    pub fn len(&self) -> usize {
        self.axes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.axes.is_empty()
    }

    pub fn axes(&self) -> &[Vector3<f64>] {
        &self.axes
    }

    /// Bin whose axis maximizes |cos| with `dir`; ties go to the lower index.
    pub fn bin_of(&self, dir: &Vector3<f64>) -> usize {
        let mut best = 0;
        let mut best_cos = f64::NEG_INFINITY;
        for (i, a) in self.axes.iter().enumerate() {
            let c = a.dot(dir).abs();
            if c > best_cos {
                best = i;
                best_cos = c;
            }
        }
        best
    }
}

/// One `(cell, length_mm)` entry of a streamline's footprint.
pub type Contribution = (u32, f64);

/// Pieces of the segment `a`-`b` per voxel, in traversal order, as
/// `(voxel_linear_index, length_mm)`. Zero-length pieces are skipped.
pub fn traverse_segment(grid: &Grid, a: &Point, b: &Point) -> Vec<(usize, f64)> {
    let d = b - a;
    let len = d.norm();
    if len == 0.0 {
        return Vec::new();
    }
    // Parameters where the segment crosses a voxel boundary plane.
    let mut ts = vec![0.0, 1.0];
    for ax in 0..3 {
        if d[ax] == 0.0 {
            continue;
        }
        let (lo, hi) = if a[ax] < b[ax] { (a[ax], b[ax]) } else { (b[ax], a[ax]) };
        let first = (lo / grid.voxel_size).floor() as i64 + 1;
        let last = (hi / grid.voxel_size).ceil() as i64 - 1;
        for k in first..=last {
            let t = (k as f64 * grid.voxel_size - a[ax]) / d[ax];
            if t > 0.0 && t < 1.0 {
                ts.push(t);
            }
        }
    }
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(ts.len());
    for w in ts.windows(2) {
        let piece = (w[1] - w[0]) * len;
        if piece <= 0.0 {
            continue;
        }
        let mid = a + d * (0.5 * (w[0] + w[1]));
        let v = grid.linear_index(grid.voxel_of(&mid));
        match out.last_mut() {
            Some((last_v, l)) if *last_v == v => *l += piece,
            _ => out.push((v, piece)),
        }
    }
    out
}

/// Merged footprint of one streamline, sorted by cell.
pub fn rasterize(streamline: &Streamline, grid: &Grid, bins: &DirectionBins) -> Result<Vec<Contribution>> {
    if let Some(p) = streamline.points().iter().find(|p| !grid.contains(p)) {
        return Err(Error::OutsideGrid { x: p.x, y: p.y, z: p.z });
    }
    let n_bins = bins.len();
    let mut raw: Vec<Contribution> = Vec::new();
    for w in streamline.points().windows(2) {
        let d = w[1] - w[0];
        if d.norm() == 0.0 {
            continue;
        }
        let bin = bins.bin_of(&d);
        for (v, l) in traverse_segment(grid, &w[0], &w[1]) {
            raw.push(((v * n_bins + bin) as u32, l));
        }
    }
    // Stable sort keeps summation order deterministic.
    raw.sort_by_key(|&(c, _)| c);
    let mut merged: Vec<Contribution> = Vec::with_capacity(raw.len());
    for (c, l) in raw {
        match merged.last_mut() {
            Some((mc, ml)) if *mc == c => *ml += l,
            _ => merged.push((c, l)),
        }
    }
    Ok(merged)
}

/// Footprints of every streamline of a tractogram, stored contiguously.
#[derive(Debug, Clone)]
pub struct Contributions {
    offsets: Vec<usize>,
    entries: Vec<Contribution>,
    n_cells: usize,
}

impl Contributions {
    pub fn compute(tractogram: &Tractogram, bins: &DirectionBins) -> Result<Self> {
        let grid = tractogram.grid();
        let n_cells = grid.n_voxels() * bins.len();
        if n_cells > u32::MAX as usize {
            return Err(Error::InvalidArgument("grid too large for 32-bit cell indices".into()));
        }
        let per: Vec<Vec<Contribution>> = tractogram
            .streamlines()
            .par_iter()
            .map(|s| rasterize(s, &grid, bins))
            .collect::<Result<_>>()?;
        let mut offsets = Vec::with_capacity(per.len() + 1);
        offsets.push(0);
        let mut entries = Vec::with_capacity(per.iter().map(Vec::len).sum());
        for p in per {
            entries.extend(p);
            offsets.push(entries.len());
        }
        Ok(Contributions { offsets, entries, n_cells })
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn of(&self, id: usize) -> &[Contribution] {
        &self.entries[self.offsets[id]..self.offsets[id + 1]]
    }

    /// Track density of the given ids, summed in id order.
    pub fn density(&self, ids: impl IntoIterator<Item = usize>) -> Vec<f64> {
        let mut td = vec![0.0; self.n_cells];
        for id in ids {
            for &(c, l) in self.of(id) {
                td[c as usize] += l;
            }
        }
        td
    }
}

/// Per-cell target amounts the filter fits track density against, normalized
/// to unit total.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetDensityField {
    pub grid: Grid,
    pub bins: DirectionBins,
    mu: Vec<f64>,
    mu_sq_sum: f64,
}

impl TargetDensityField {
    pub fn new(grid: Grid, bins: DirectionBins, mu: Vec<f64>) -> Result<Self> {
        if mu.len() != grid.n_voxels() * bins.len() {
            return Err(Error::ShapeMismatch(format!(
                "target has {} cells, grid expects {}",
                mu.len(),
                grid.n_voxels() * bins.len()
            )));
        }
        if mu.iter().any(|&m| !m.is_finite() || m < 0.0) {
            return Err(Error::InvalidArgument("target amounts must be finite and >= 0".into()));
        }
        let mu_sq_sum = mu.iter().map(|m| m * m).sum();
        Ok(TargetDensityField { grid, bins, mu, mu_sq_sum })
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn n_cells(&self) -> usize {
        self.mu.len()
    }

    /// Σ μ², the cost of an empty fit.
    pub fn mu_sq_sum(&self) -> f64 {
        self.mu_sq_sum
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write(&self, mut out: impl Write) -> Result<()> {
        let g = &self.grid;
        writeln!(out, "rsift density field")?;
        writeln!(out, "dims: {},{},{}", g.dims[0], g.dims[1], g.dims[2])?;
        writeln!(out, "voxel_size: {}", g.voxel_size)?;
        writeln!(out, "bins: {}", self.bins.len())?;
        for a in self.bins.axes() {
            writeln!(out, "axis: {},{},{}", a.x, a.y, a.z)?;
        }
        writeln!(out, "END")?;
        for m in &self.mu {
            out.write_all(&m.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read(&bytes[..])
    }

    pub fn read(mut input: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        let end = find_end(&bytes).ok_or_else(|| Error::Format("density field header lacks END".into()))?;
        let header = std::str::from_utf8(&bytes[..end.0])
            .map_err(|_| Error::Format("density field header is not UTF-8".into()))?;
        let mut lines = header.lines();
        if lines.next() != Some("rsift density field") {
            return Err(Error::Format("not a density field file".into()));
        }
        let mut dims = None;
        let mut voxel_size = None;
        let mut n_bins = None;
        let mut axes = Vec::new();
        for line in lines {
            let (k, v) = line
                .split_once(':')
                .ok_or_else(|| Error::Format(format!("bad header line {line:?}")))?;
            let nums = || -> Result<Vec<f64>> {
                v.split(',')
                    .map(|s| s.trim().parse::<f64>().map_err(|_| Error::Format(format!("bad number in {line:?}"))))
                    .collect()
            };
            match k.trim() {
                "dims" => {
                    let d = nums()?;
                    if d.len() != 3 {
                        return Err(Error::Format("dims needs 3 values".into()));
                    }
                    dims = Some([d[0] as usize, d[1] as usize, d[2] as usize]);
                }
                "voxel_size" => voxel_size = nums()?.first().copied(),
                "bins" => n_bins = nums()?.first().map(|&b| b as usize),
                "axis" => {
                    let a = nums()?;
                    if a.len() != 3 {
                        return Err(Error::Format("axis needs 3 values".into()));
                    }
                    axes.push(Vector3::new(a[0], a[1], a[2]));
                }
                other => return Err(Error::Format(format!("unknown header key {other:?}"))),
            }
        }
        let (Some(dims), Some(voxel_size), Some(n_bins)) = (dims, voxel_size, n_bins) else {
            return Err(Error::Format("density field header incomplete".into()));
        };
        if axes.len() != n_bins {
            return Err(Error::Format(format!("expected {n_bins} axes, found {}", axes.len())));
        }
        let grid = Grid::new(dims, voxel_size)?;
        let bins = DirectionBins::from_axes(axes)?;
        let body = &bytes[end.1..];
        let n = grid.n_voxels() * n_bins;
        if body.len() != n * 8 {
            return Err(Error::Format(format!("expected {} body bytes, found {}", n * 8, body.len())));
        }
        let mu = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        TargetDensityField::new(grid, bins, mu)
    }
}

/// Byte range of the header text and the start of the body.
fn find_end(bytes: &[u8]) -> Option<(usize, usize)> {
    let pat = b"\nEND\n";
    bytes
        .windows(pat.len())
        .position(|w| w == pat)
        .map(|i| (i + 1, i + pat.len()))
}

/// Track density of `reference`, normalized so the cells sum to one.
pub fn build_target_field(reference: &Tractogram, bins: &DirectionBins) -> Result<TargetDensityField> {
    if reference.is_empty() {
        return Err(Error::InvalidArgument("reference tractogram is empty".into()));
    }
    let contributions = Contributions::compute(reference, bins)?;
    let mut mu = contributions.density(0..reference.len());
    let total: f64 = mu.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument("reference has no in-grid length".into()));
    }
    for m in &mut mu {
        *m /= total;
    }
    TargetDensityField::new(reference.grid(), bins.clone(), mu)
}
