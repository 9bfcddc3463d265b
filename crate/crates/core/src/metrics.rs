//! Per-case segmentation metrics.
//!
//! Overlap scores come from voxel counts. Surface distances use physical
//! (spacing-weighted) Euclidean distances between surface voxel centres,
//! computed with an exact separable distance transform restricted to the
//! bounding box of both surfaces.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::postprocess::FACE_OFFSETS;
use crate::volume::{Dims, Mask, Spacing, VoxelIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn pred_count(&self) -> u64 {
        self.tp + self.fp
    }

    pub fn truth_count(&self) -> u64 {
        self.tp + self.fn_
    }

    /// `2|A∩B| / (|A|+|B|)`, 1.0 when both are empty.
    pub fn dice(&self) -> f64 {
        let denom = self.pred_count() + self.truth_count();
        if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }

    /// `|A∩B| / |A∪B|`, 1.0 when both are empty.
    pub fn iou(&self) -> f64 {
        let union = self.tp + self.fp + self.fn_;
        if union == 0 {
            1.0
        } else {
            self.tp as f64 / union as f64
        }
    }
}

/// Counts with `pred` as the prediction and `truth` as the reference.
pub fn confusion(pred: &Mask, truth: &Mask) -> Result<ConfusionCounts> {
    pred.check_geometry(truth)?;
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.bits().iter().zip(truth.bits()) {
        match (p, t) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

pub fn dice(a: &Mask, b: &Mask) -> Result<f64> {
    Ok(confusion(a, b)?.dice())
}

pub fn iou(a: &Mask, b: &Mask) -> Result<f64> {
    Ok(confusion(a, b)?.iou())
}

/// Returns `(sensitivity, specificity)` of `pred` against `truth`.
pub fn sensitivity_specificity(pred: &Mask, truth: &Mask) -> Result<(f64, f64, ConfusionCounts)> {
    let c = confusion(pred, truth)?;
    if c.truth_count() == 0 || c.tn + c.fp == 0 {
        return Err(Error::DegenerateTruth);
    }
    let sens = c.tp as f64 / (c.tp + c.fn_) as f64;
    let spec = c.tn as f64 / (c.tn + c.fp) as f64;
    Ok((sens, spec, c))
}

/// Boundary voxels of a mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfacePointSet {
    pub points: Vec<VoxelIndex>,
}

impl SurfacePointSet {
    pub fn count(&self) -> usize {
        self.points.len()
    }
}

/// Foreground voxels with at least one background face neighbour; the grid
/// border counts as background. Points are in linear-index order.
pub fn surface(m: &Mask) -> SurfacePointSet {
    let dims = m.dims();
    let bits = m.bits();
    let points = (0..dims.nz)
        .into_par_iter()
        .flat_map_iter(|iz| {
            let mut out = Vec::new();
            for iy in 0..dims.ny {
                for ix in 0..dims.nx {
                    if !bits[dims.index(ix, iy, iz)] {
                        continue;
                    }
                    let p = [ix as i64, iy as i64, iz as i64];
                    let boundary = FACE_OFFSETS.iter().any(|o| {
                        match dims.checked_index([p[0] + o[0], p[1] + o[1], p[2] + o[2]]) {
                            Some(j) => !bits[j],
                            None => true,
                        }
                    });
                    if boundary {
                        out.push(VoxelIndex::new(ix, iy, iz));
                    }
                }
            }
            out
        })
        .collect();
    SurfacePointSet { points }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HausdorffMode {
    /// Largest distance from a surface voxel of the second mask to the
    /// surface of the first.
    Directed,
    #[default]
    Symmetric,
}

/// Nearest-surface distances in both directions for one mask pair.
#[derive(Debug, Clone)]
pub struct SurfaceDistances {
    /// For each surface voxel of A, distance (mm) to the surface of B.
    pub a_to_b: Vec<f64>,
    /// For each surface voxel of B, distance (mm) to the surface of A.
    pub b_to_a: Vec<f64>,
}

impl SurfaceDistances {
    pub fn compute(a: &Mask, b: &Mask) -> Result<Self> {
        a.check_geometry(b)?;
        let sa = surface(a);
        let sb = surface(b);
        if sa.points.is_empty() || sb.points.is_empty() {
            return Err(Error::EmptyMask);
        }
        Ok(Self::from_surfaces(&sa, &sb, a.spacing()))
    }

    pub fn from_surfaces(sa: &SurfacePointSet, sb: &SurfacePointSet, spacing: Spacing) -> Self {
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        for p in sa.points.iter().chain(&sb.points) {
            for (ax, c) in p.as_array().into_iter().enumerate() {
                lo[ax] = lo[ax].min(c);
                hi[ax] = hi[ax].max(c);
            }
        }
        let region = Region { lo, hi };
        let dist_to_b = squared_edt(&region, &sb.points, spacing);
        let dist_to_a = squared_edt(&region, &sa.points, spacing);
        let lookup = |field: &[f64], pts: &[VoxelIndex]| -> Vec<f64> {
            pts.iter().map(|p| field[region.index(*p)].sqrt()).collect()
        };
        Self {
            a_to_b: lookup(&dist_to_b, &sa.points),
            b_to_a: lookup(&dist_to_a, &sb.points),
        }
    }

    pub fn hausdorff(&self, mode: HausdorffMode) -> f64 {
        let max = |v: &[f64]| v.iter().copied().fold(0.0f64, f64::max);
        match mode {
            HausdorffMode::Directed => max(&self.b_to_a),
            HausdorffMode::Symmetric => max(&self.a_to_b).max(max(&self.b_to_a)),
        }
    }

    pub fn stsd(&self) -> f64 {
        let total: f64 = self.a_to_b.iter().sum::<f64>() + self.b_to_a.iter().sum::<f64>();
        total / (self.a_to_b.len() + self.b_to_a.len()) as f64
    }
}

pub fn hausdorff_mm(a: &Mask, b: &Mask, mode: HausdorffMode) -> Result<f64> {
    Ok(SurfaceDistances::compute(a, b)?.hausdorff(mode))
}

/// Average symmetric surface-to-surface distance in mm.
pub fn stsd_mm(a: &Mask, b: &Mask) -> Result<f64> {
    Ok(SurfaceDistances::compute(a, b)?.stsd())
}

struct Region {
    lo: [usize; 3],
    hi: [usize; 3],
}

impl Region {
    fn dims(&self) -> Dims {
        Dims::new(
            self.hi[0] - self.lo[0] + 1,
            self.hi[1] - self.lo[1] + 1,
            self.hi[2] - self.lo[2] + 1,
        )
    }

    fn index(&self, p: VoxelIndex) -> usize {
        self.dims()
            .index(p.ix - self.lo[0], p.iy - self.lo[1], p.iz - self.lo[2])
    }
}

/// Squared physical distance from every voxel of `region` to the nearest
/// source. Separable lower-envelope transform, one axis at a time; exact.
fn squared_edt(region: &Region, sources: &[VoxelIndex], spacing: Spacing) -> Vec<f64> {
    let dims = region.dims();
    let mut field = vec![f64::INFINITY; dims.len()];
    for p in sources {
        field[region.index(*p)] = 0.0;
    }
    let d = dims.as_array();
    let strides = [1, d[0], d[0] * d[1]];
    for axis in 0..3 {
        let n = d[axis];
        let stride = strides[axis];
        let starts = crate::postprocess::line_starts(dims, axis);
        let step = spacing[axis];
        let lines: Vec<Vec<f64>> = starts
            .par_iter()
            .map(|&start| {
                let line: Vec<f64> = (0..n).map(|k| field[start + k * stride]).collect();
                envelope_1d(&line, step)
            })
            .collect();
        for (start, line) in starts.iter().zip(lines) {
            for (k, v) in line.into_iter().enumerate() {
                field[start + k * stride] = v;
            }
        }
    }
    field
}

/// `out[q] = min_p ((q - p) * step)^2 + f[p]` over finite `f[p]`.
fn envelope_1d(f: &[f64], step: f64) -> Vec<f64> {
    let n = f.len();
    let mut out = vec![f64::INFINITY; n];
    // parabola apexes and the boundaries between them
    let mut apex: Vec<usize> = Vec::with_capacity(n);
    let mut bound: Vec<f64> = Vec::with_capacity(n + 1);
    let pos = |i: usize| i as f64 * step;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let Some(&v) = apex.last() else {
                apex.push(q);
                bound.clear();
                bound.push(f64::NEG_INFINITY);
                break;
            };
            let s = ((f[q] + pos(q) * pos(q)) - (f[v] + pos(v) * pos(v))) / (2.0 * (pos(q) - pos(v)));
            if s <= *bound.last().unwrap() {
                apex.pop();
                bound.pop();
                if apex.is_empty() {
                    continue;
                }
            } else {
                apex.push(q);
                bound.push(s);
                break;
            }
        }
    }
    if apex.is_empty() {
        return out;
    }
    let mut k = 0;
    for (q, slot) in out.iter_mut().enumerate() {
        let x = pos(q);
        while k + 1 < apex.len() && bound[k + 1] < x {
            k += 1;
        }
        let p = apex[k];
        let dx = (q as f64 - p as f64) * step;
        *slot = dx * dx + f[p];
    }
    out
}

/// Foreground extent along `axis`, in mm: `(max - min + 1) * spacing`.
pub fn la_diameter_mm_along(m: &Mask, axis: usize) -> Result<f64> {
    let (lo, hi) = m.bounding_box().ok_or(Error::EmptyMask)?;
    Ok((hi[axis] - lo[axis] + 1) as f64 * m.spacing()[axis])
}

pub fn la_diameter_mm(m: &Mask) -> Result<f64> {
    la_diameter_mm_along(m, 0)
}

/// Foreground volume in cm³.
pub fn la_volume_cm3(m: &Mask) -> f64 {
    m.count() as f64 * m.spacing().voxel_volume_mm3() / 1000.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub hd_mode: HausdorffMode,
    pub diameter_axis: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            hd_mode: HausdorffMode::Symmetric,
            diameter_axis: 0,
        }
    }
}

/// All per-case values. Overlap scores are fractions; surface distances
/// are absent when the prediction is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub dice: f64,
    pub iou: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub hd_mm: Option<f64>,
    pub stsd_mm: Option<f64>,
    pub diameter_pred_mm: f64,
    pub diameter_true_mm: f64,
    pub diameter_err_pct: f64,
    pub volume_pred_cm3: f64,
    pub volume_true_cm3: f64,
    pub volume_err_pct: f64,
}

pub fn evaluate_case(pred: &Mask, truth: &Mask) -> Result<CaseMetrics> {
    evaluate_case_with(pred, truth, EvalOptions::default())
}

pub fn evaluate_case_with(pred: &Mask, truth: &Mask, opts: EvalOptions) -> Result<CaseMetrics> {
    let (sensitivity, specificity, counts) = sensitivity_specificity(pred, truth)?;
    let (hd_mm, stsd_mm) = if counts.pred_count() == 0 {
        (None, None)
    } else {
        let sd = SurfaceDistances::compute(pred, truth)?;
        (Some(sd.hausdorff(opts.hd_mode)), Some(sd.stsd()))
    };
    let diameter_true_mm = la_diameter_mm_along(truth, opts.diameter_axis)?;
    // an empty prediction has zero extent
    let diameter_pred_mm = la_diameter_mm_along(pred, opts.diameter_axis).unwrap_or(0.0);
    let volume_true_cm3 = la_volume_cm3(truth);
    let volume_pred_cm3 = la_volume_cm3(pred);
    Ok(CaseMetrics {
        dice: counts.dice(),
        iou: counts.iou(),
        sensitivity,
        specificity,
        hd_mm,
        stsd_mm,
        diameter_pred_mm,
        diameter_true_mm,
        diameter_err_pct: 100.0 * (diameter_pred_mm - diameter_true_mm).abs() / diameter_true_mm,
        volume_pred_cm3,
        volume_true_cm3,
        volume_err_pct: 100.0 * (volume_pred_cm3 - volume_true_cm3).abs() / volume_true_cm3,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceDice {
    pub z: usize,
    /// `None` where neither mask has foreground on the slice.
    pub dice: Option<f64>,
}

/// 2D Dice of every xy slice.
pub fn dice_profile_z(pred: &Mask, truth: &Mask) -> Result<Vec<SliceDice>> {
    pred.check_geometry(truth)?;
    let dims = pred.dims();
    let plane = dims.nx * dims.ny;
    Ok((0..dims.nz)
        .map(|z| {
            let range = z * plane..(z + 1) * plane;
            let (mut inter, mut na, mut nb) = (0u64, 0u64, 0u64);
            for (&a, &b) in pred.bits()[range.clone()].iter().zip(&truth.bits()[range]) {
                inter += (a && b) as u64;
                na += a as u64;
                nb += b as u64;
            }
            let dice = (na + nb > 0).then(|| 2.0 * inter as f64 / (na + nb) as f64);
            SliceDice { z, dice }
        })
        .collect())
}
