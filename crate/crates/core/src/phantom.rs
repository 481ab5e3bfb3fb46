//! Synthetic ground-truth bundles and the two labeled experiment datasets
//! built from them: rotated false positives, and replicated redundants.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Rotation3, Vector3};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::compress::compress;
use crate::error::{Error, Result};
use crate::rng::{rng_for, Rng};
use crate::tractogram::{Grid, Point, Streamline, Tractogram};

/// Ratio of total streamlines to ground-truth streamlines in the reference
/// false-positive experiment (89 570 from 12 196).
pub const FP_TOTAL_RATIO: f64 = 89_570.0 / 12_196.0;

/// How often each fifth of the second half appears in the redundancy experiment.
pub const REDUNDANCY_MULTIPLICITIES: [u32; 5] = [2, 3, 5, 10, 49];

pub const ROTATION_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub n_bundles: usize,
    pub streamlines_per_bundle: usize,
    pub grid_dims: [usize; 3],
    pub voxel_size: f64,
    pub min_length_mm: f64,
    pub max_length_mm: f64,
    /// Range of straight-line distances between a bundle's two endpoint regions.
    pub chord_mm: [f64; 2],
    /// Maximum sideways bulge of a bundle's control points, relative to its chord.
    pub curvature: f64,
    /// Radius of the endpoint regions.
    pub endpoint_radius_mm: f64,
    /// Per-streamline jitter of the curve's control points.
    pub jitter_mm: f64,
    /// Distance kept between generated geometry and the grid boundary.
    pub margin_mm: f64,
    pub step_mm: f64,
    pub compress_tolerance_mm: Option<f64>,
    pub rng_seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            n_bundles: 40,
            streamlines_per_bundle: 25,
            grid_dims: [40, 40, 40],
            voxel_size: 2.0,
            min_length_mm: 40.0,
            max_length_mm: 250.0,
            chord_mm: [35.0, 70.0],
            curvature: 0.35,
            endpoint_radius_mm: 6.0,
            jitter_mm: 2.5,
            margin_mm: 4.0,
            step_mm: 1.0,
            compress_tolerance_mm: Some(0.35),
            rng_seed: 1,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<Grid> {
        if self.n_bundles == 0 || self.streamlines_per_bundle == 0 {
            return Err(Error::InvalidArgument("bundle counts must be >= 1".into()));
        }
        if !(self.min_length_mm > 0.0 && self.min_length_mm < self.max_length_mm) {
            return Err(Error::InvalidArgument("need 0 < min_length_mm < max_length_mm".into()));
        }
        if !(self.chord_mm[0] > 0.0 && self.chord_mm[0] <= self.chord_mm[1]) {
            return Err(Error::InvalidArgument("invalid chord range".into()));
        }
        if !(self.step_mm > 0.0) || self.curvature < 0.0 || self.jitter_mm < 0.0 {
            return Err(Error::InvalidArgument("invalid step / curvature / jitter".into()));
        }
        Grid::new(self.grid_dims, self.voxel_size)
    }
}

fn cubic_bezier(c: &[Point; 4], t: f64) -> Point {
    let u = 1.0 - t;
    let w = [u * u * u, 3.0 * u * u * t, 3.0 * u * t * t, t * t * t];
    Point::from(
        c[0].coords * w[0] + c[1].coords * w[1] + c[2].coords * w[2] + c[3].coords * w[3],
    )
}

fn sample_curve(c: &[Point; 4], step: f64) -> Vec<Point> {
    // Rough length from the control polygon bounds the sample count.
    let approx: f64 = c.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
    let n = ((approx / step).ceil() as usize).max(2) + 1;
    (0..n).map(|i| cubic_bezier(c, i as f64 / (n - 1) as f64)).collect()
}

fn random_unit(rng: &mut Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

fn random_in_ball(rng: &mut Rng, radius: f64) -> Vector3<f64> {
    if radius <= 0.0 {
        return Vector3::zeros();
    }
    loop {
        let v = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        if v.norm_squared() <= 1.0 {
            return v * radius;
        }
    }
}

fn inside_with_margin(grid: &Grid, p: &Point, margin: f64) -> bool {
    let ext = grid.extent();
    (0..3).all(|a| p[a] >= margin && p[a] <= ext[a] - margin)
}

const BUNDLE_ATTEMPTS: usize = 1000;
const STREAMLINE_ATTEMPTS: usize = 100;

fn draw_bundle(spec: &PhantomSpec, grid: &Grid, rng: &mut Rng) -> Result<[Point; 4]> {
    let ext = grid.extent();
    let inset = spec.margin_mm + spec.endpoint_radius_mm + spec.jitter_mm;
    if (0..3).any(|a| ext[a] <= 2.0 * inset) {
        return Err(Error::GeometryDoesNotFit("margins exceed the grid".into()));
    }
    for _ in 0..BUNDLE_ATTEMPTS {
        let mut a = Point::origin();
        for ax in 0..3 {
            a[ax] = rng.gen_range(inset..ext[ax] - inset);
        }
        let chord = rng.gen_range(spec.chord_mm[0]..=spec.chord_mm[1]);
        let dir = random_unit(rng);
        let b = a + dir * chord;
        let perp = {
            let r = random_unit(rng);
            let p = r - dir * r.dot(&dir);
            if p.norm() < 1e-6 {
                continue;
            }
            p.normalize()
        };
        let bulge1 = rng.gen_range(-spec.curvature..=spec.curvature) * chord;
        let bulge2 = rng.gen_range(-spec.curvature..=spec.curvature) * chord;
        let c1 = a + (b - a) / 3.0 + perp * bulge1;
        let c2 = a + (b - a) * (2.0 / 3.0) + perp * bulge2;
        let ctrl = [a, c1, c2, b];
        let centre = sample_curve(&ctrl, spec.step_mm);
        if !centre.iter().all(|p| inside_with_margin(grid, p, inset)) {
            continue;
        }
        let len: f64 = centre.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
        // Leave room for jitter to stay within bounds.
        if len < spec.min_length_mm * 1.05 || len > spec.max_length_mm * 0.95 {
            continue;
        }
        return Ok(ctrl);
    }
    Err(Error::GeometryDoesNotFit(format!(
        "no bundle fits after {BUNDLE_ATTEMPTS} attempts"
    )))
}

fn draw_member(
    spec: &PhantomSpec,
    grid: &Grid,
    ctrl: &[Point; 4],
    rng: &mut Rng,
) -> Result<Streamline> {
    for _ in 0..STREAMLINE_ATTEMPTS {
        let jittered = [
            ctrl[0] + random_in_ball(rng, spec.endpoint_radius_mm),
            ctrl[1] + random_in_ball(rng, spec.jitter_mm),
            ctrl[2] + random_in_ball(rng, spec.jitter_mm),
            ctrl[3] + random_in_ball(rng, spec.endpoint_radius_mm),
        ];
        let pts = sample_curve(&jittered, spec.step_mm);
        if !pts.iter().all(|p| inside_with_margin(grid, p, spec.margin_mm)) {
            continue;
        }
        let Ok(mut s) = Streamline::new(pts) else { continue };
        if let Some(tol) = spec.compress_tolerance_mm {
            s = compress(&s, tol);
        }
        let len = s.arc_length();
        if len < spec.min_length_mm || len > spec.max_length_mm {
            continue;
        }
        return Ok(s);
    }
    Err(Error::GeometryDoesNotFit(format!(
        "no in-bounds streamline after {STREAMLINE_ATTEMPTS} attempts"
    )))
}

/// Ground truth plus the bundle each streamline was drawn from.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub tractogram: Tractogram,
    pub bundle_of: Vec<usize>,
}

/// Generate bundles of smooth curves and shuffle them so that any prefix of
/// the result samples every bundle.
pub fn generate_bundles(spec: &PhantomSpec) -> Result<GroundTruth> {
    let grid = spec.validate()?;
    let mut members = Vec::with_capacity(spec.n_bundles * spec.streamlines_per_bundle);
    for b in 0..spec.n_bundles {
        let mut rng = rng_for(spec.rng_seed, &[0xB0, b as u64]);
        let ctrl = draw_bundle(spec, &grid, &mut rng)?;
        for _ in 0..spec.streamlines_per_bundle {
            members.push((draw_member(spec, &grid, &ctrl, &mut rng)?, b));
        }
    }
    let mut rng = rng_for(spec.rng_seed, &[0x5F]);
    members.shuffle(&mut rng);
    let (streamlines, bundle_of): (Vec<_>, Vec<_>) = members.into_iter().unzip();
    Ok(GroundTruth {
        tractogram: Tractogram::new(streamlines, grid)?,
        bundle_of,
    })
}

pub fn generate_ground_truth(spec: &PhantomSpec) -> Result<Tractogram> {
    Ok(generate_bundles(spec)?.tractogram)
}

const MIN_ANGLE: f64 = 45.0;
const MAX_ANGLE: f64 = 315.0;

/// Rigidly rotate about the centroid with Euler angles drawn from [45°, 315°],
/// redrawing until the result lies inside the grid.
pub fn distort_rotate(streamline: &Streamline, grid: &Grid, rng: &mut Rng) -> Result<Streamline> {
    let centre = streamline.centroid();
    for _ in 0..ROTATION_ATTEMPTS {
        let [roll, pitch, yaw] =
            [(); 3].map(|_| rng.gen_range(MIN_ANGLE..=MAX_ANGLE).to_radians());
        let rot = Rotation3::from_euler_angles(roll, pitch, yaw);
        let pts: Vec<Point> = streamline
            .points()
            .iter()
            .map(|p| centre + rot * (p - centre))
            .collect();
        if pts.iter().all(|p| grid.contains(p)) {
            return Streamline::new(pts);
        }
    }
    Err(Error::RotationFailed(ROTATION_ATTEMPTS))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TruthLabel {
    TruePositive,
    FalsePositive,
    Redundant(u32),
}

impl TruthLabel {
    pub fn multiplicity(&self) -> u32 {
        match self {
            TruthLabel::Redundant(m) => *m,
            _ => 1,
        }
    }

    pub fn is_plausible(&self) -> bool {
        !matches!(self, TruthLabel::FalsePositive)
    }
}

impl fmt::Display for TruthLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TruthLabel::TruePositive => write!(f, "TP"),
            TruthLabel::FalsePositive => write!(f, "FP"),
            TruthLabel::Redundant(_) => write!(f, "R"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LabeledTractogram {
    pub tractogram: Tractogram,
    pub labels: Vec<TruthLabel>,
    /// Ground-truth id each streamline was derived from.
    pub provenance: Vec<usize>,
    /// Ground-truth ids left out so the redundancy groups divide evenly.
    pub dropped: Vec<usize>,
}

impl LabeledTractogram {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Default total for a false-positive experiment built from `m` ground-truth
/// streamlines, keeping the reference ratio of total to ground truth.
pub fn fp_total_for(m: usize) -> usize {
    (m as f64 * FP_TOTAL_RATIO).round() as usize
}

/// First half kept as true positives; second half rotated into false
/// positives; rotated copies of random ground-truth streamlines fill up to
/// `total`.
pub fn build_fp_experiment(ground_truth: &Tractogram, total: usize, seed: u64) -> Result<LabeledTractogram> {
    let m = ground_truth.len();
    if m == 0 || !m.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "ground truth size must be even and nonzero, got {m}"
        )));
    }
    if total < m {
        return Err(Error::InvalidArgument(format!(
            "target total {total} is below the ground truth size {m}"
        )));
    }
    let grid = ground_truth.grid();
    let half = m / 2;
    let mut streamlines = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    let mut provenance = Vec::with_capacity(total);
    for (id, s) in ground_truth.streamlines().iter().enumerate().take(half) {
        streamlines.push(s.clone());
        labels.push(TruthLabel::TruePositive);
        provenance.push(id);
    }
    for id in half..m {
        let mut rng = rng_for(seed, &[0xF0, id as u64]);
        streamlines.push(distort_rotate(&ground_truth.streamlines()[id], &grid, &mut rng)?);
        labels.push(TruthLabel::FalsePositive);
        provenance.push(id);
    }
    let mut pick = rng_for(seed, &[0xF1]);
    let mut filler = 0u64;
    while streamlines.len() < total {
        let src = pick.gen_range(0..m);
        let mut rng = rng_for(seed, &[0xF2, filler]);
        filler += 1;
        // A source that cannot be rotated into the grid is skipped, not fatal.
        if let Ok(s) = distort_rotate(&ground_truth.streamlines()[src], &grid, &mut rng) {
            streamlines.push(s);
            labels.push(TruthLabel::FalsePositive);
            provenance.push(src);
        }
    }
    Ok(LabeledTractogram {
        tractogram: Tractogram::new(streamlines, grid)?,
        labels,
        provenance,
        dropped: Vec::new(),
    })
}

/// First half kept once; the second half split into five equal groups whose
/// members appear 2, 3, 5, 10 and 49 times. Up to four trailing streamlines
/// are dropped so the groups divide evenly.
pub fn build_redundancy_experiment(ground_truth: &Tractogram) -> Result<LabeledTractogram> {
    let m = ground_truth.len();
    let half = m / 2;
    let rest = m - half;
    let group = rest / REDUNDANCY_MULTIPLICITIES.len();
    if group == 0 {
        return Err(Error::InvalidArgument(format!(
            "ground truth of {m} streamlines cannot form five nonempty groups"
        )));
    }
    let used = half + group * REDUNDANCY_MULTIPLICITIES.len();
    let mut streamlines = Vec::new();
    let mut labels = Vec::new();
    let mut provenance = Vec::new();
    for (id, s) in ground_truth.streamlines().iter().enumerate().take(half) {
        streamlines.push(s.clone());
        labels.push(TruthLabel::TruePositive);
        provenance.push(id);
    }
    for (g, &mult) in REDUNDANCY_MULTIPLICITIES.iter().enumerate() {
        let start = half + g * group;
        for id in start..start + group {
            for _ in 0..mult {
                streamlines.push(ground_truth.streamlines()[id].clone());
                labels.push(TruthLabel::Redundant(mult));
                provenance.push(id);
            }
        }
    }
    Ok(LabeledTractogram {
        tractogram: Tractogram::new(streamlines, ground_truth.grid())?,
        labels,
        provenance,
        dropped: (used..m).collect(),
    })
}

pub fn write_label_sidecar(labeled: &LabeledTractogram, mut out: impl Write) -> Result<()> {
    writeln!(out, "id,truth_label,multiplicity,provenance_id")?;
    for (id, (label, prov)) in labeled.labels.iter().zip(&labeled.provenance).enumerate() {
        writeln!(out, "{id},{label},{},{prov}", label.multiplicity())?;
    }
    Ok(())
}

pub fn save_label_sidecar(labeled: &LabeledTractogram, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_label_sidecar(labeled, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Read `(label, provenance)` rows back; ids must be dense and in order.
pub fn read_label_sidecar(input: impl BufRead) -> Result<(Vec<TruthLabel>, Vec<usize>)> {
    let mut labels = Vec::new();
    let mut provenance = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim() != "id,truth_label,multiplicity,provenance_id" {
                return Err(Error::Format(format!("unexpected label header {line:?}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(Error::Format(format!("bad label row {line:?}")));
        }
        let id = parse_field::<usize>(f[0], &line)?;
        if id != labels.len() {
            return Err(Error::Format(format!("label ids not dense at {id}")));
        }
        let mult = parse_field::<u32>(f[2], &line)?;
        let label = match f[1] {
            "TP" => TruthLabel::TruePositive,
            "FP" => TruthLabel::FalsePositive,
            "R" => TruthLabel::Redundant(mult),
            other => return Err(Error::Format(format!("unknown truth label {other:?}"))),
        };
        labels.push(label);
        provenance.push(parse_field::<usize>(f[3], &line)?);
    }
    Ok((labels, provenance))
}

fn parse_field<T: FromStr>(s: &str, line: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Format(format!("bad field {s:?} in {line:?}")))
}
