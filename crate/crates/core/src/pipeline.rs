//! Localize, crop, segment, pad back; plus the ROI offset and patch-size
//! experiments.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::dice;
use crate::nrrd::read_mask;
use crate::postprocess::{closing, largest_component, Connectivity, StructuringElement};
use crate::registry::Registry;
use crate::volume::{downsample, Dims, Mask, Volume, VolumeData, VoxelIndex};

pub const DEFAULT_ROI: [usize; 3] = [240, 160, 96];
pub const DEFAULT_SWEEP_DEPTH: usize = 96;

/// Crop placement in full-volume voxel coordinates. The origin may be
/// negative and the far corner may exceed the grid; those voxels are
/// zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RoiBox {
    pub origin: [i64; 3],
    pub size: [usize; 3],
}

impl RoiBox {
    /// Box of `size` centred on `center`. Axes where the box is at least as
    /// long as the grid are padded symmetrically instead.
    pub fn place(center: VoxelIndex, size: [usize; 3], dims: Dims) -> Result<Self> {
        Self::place_signed(center.as_signed(), size, dims)
    }

    /// As [`RoiBox::place`], for centres that may lie off the grid.
    pub fn place_signed(c: [i64; 3], size: [usize; 3], dims: Dims) -> Result<Self> {
        if size.contains(&0) {
            return Err(Error::InvalidSpec(format!("roi size must be positive, got {size:?}")));
        }
        let d = dims.as_array();
        let origin = std::array::from_fn(|a| {
            if size[a] >= d[a] {
                -(((size[a] - d[a]) / 2) as i64)
            } else {
                c[a] - (size[a] / 2) as i64
            }
        });
        Ok(Self { origin, size })
    }

    pub fn full(dims: Dims) -> Self {
        Self {
            origin: [0; 3],
            size: dims.as_array(),
        }
    }

    pub fn dims(&self) -> Dims {
        Dims::from_array(self.size)
    }

    pub fn voxel_count(&self) -> usize {
        self.size.iter().product()
    }

    pub fn in_bounds(&self, dims: Dims) -> bool {
        let d = dims.as_array();
        (0..3).all(|a| self.origin[a] >= 0 && self.origin[a] + self.size[a] as i64 <= d[a] as i64)
    }

    /// Voxels before and after the grid along each axis.
    pub fn padding(&self, dims: Dims) -> [(usize, usize); 3] {
        let d = dims.as_array();
        std::array::from_fn(|a| {
            let before = (-self.origin[a]).max(0) as usize;
            let end = self.origin[a] + self.size[a] as i64;
            let after = (end - d[a] as i64).max(0) as usize;
            (before.min(self.size[a]), after.min(self.size[a]))
        })
    }

    /// Box voxels that lie inside the grid.
    pub fn overlap_count(&self, dims: Dims) -> usize {
        let d = dims.as_array();
        (0..3)
            .map(|a| {
                let lo = self.origin[a].max(0);
                let hi = (self.origin[a] + self.size[a] as i64).min(d[a] as i64);
                (hi - lo).max(0) as usize
            })
            .product()
    }

    pub fn contains(&self, p: VoxelIndex) -> bool {
        let p = p.as_signed();
        (0..3).all(|a| p[a] >= self.origin[a] && p[a] < self.origin[a] + self.size[a] as i64)
    }

    /// Full-grid index of a patch voxel, or `None` for padding.
    #[inline]
    pub fn source_index(&self, local: VoxelIndex, dims: Dims) -> Option<usize> {
        let l = local.as_signed();
        dims.checked_index([self.origin[0] + l[0], self.origin[1] + l[1], self.origin[2] + l[2]])
    }

    /// In-box foreground count.
    pub fn count_inside(&self, m: &Mask) -> usize {
        m.foreground().filter(|&p| self.contains(p)).count()
    }
}

fn extract<T: Copy + Send + Sync>(dims: Dims, roi: &RoiBox, fill: T, get: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let pd = roi.dims();
    let plane = pd.nx * pd.ny;
    (0..pd.nz)
        .into_par_iter()
        .flat_map_iter(|iz| {
            let get = &get;
            (0..plane).map(move |i| {
                let local = VoxelIndex {
                    ix: i % pd.nx,
                    iy: i / pd.nx,
                    iz,
                };
                roi.source_index(local, dims).map_or(fill, get)
            })
        })
        .collect()
}

pub fn crop_volume_to(v: &Volume, roi: &RoiBox) -> Volume {
    let values = extract(v.dims(), roi, 0.0, |i| v.value(i));
    let data = VolumeData::from_f64(v.intensity_type(), values);
    Volume::new(roi.dims(), v.spacing(), data).expect("patch length matches box")
}

pub fn crop_mask_to(m: &Mask, roi: &RoiBox) -> Mask {
    let bits = extract(m.dims(), roi, false, |i| m.bits()[i]);
    Mask::new(roi.dims(), m.spacing(), bits).expect("patch length matches box")
}

pub fn crop_volume(v: &Volume, center: VoxelIndex, size: [usize; 3]) -> Result<(Volume, RoiBox)> {
    let roi = RoiBox::place(center, size, v.dims())?;
    Ok((crop_volume_to(v, &roi), roi))
}

pub fn crop_mask(m: &Mask, center: VoxelIndex, size: [usize; 3]) -> Result<(Mask, RoiBox)> {
    let roi = RoiBox::place(center, size, m.dims())?;
    Ok((crop_mask_to(m, &roi), roi))
}

/// Places `patch` back into a background grid of `full_dims`, dropping
/// padded voxels.
pub fn uncrop(patch: &Mask, roi: &RoiBox, full_dims: Dims) -> Result<Mask> {
    if patch.dims().as_array() != roi.size {
        return Err(Error::BoxInconsistent {
            patch: patch.dims().as_array(),
            size: roi.size,
        });
    }
    let mut out = Mask::empty(full_dims, patch.spacing())?;
    let pd = patch.dims();
    let bits = out.bits_mut();
    for (i, &b) in patch.bits().iter().enumerate() {
        if b {
            if let Some(j) = roi.source_index(pd.coords(i), full_dims) {
                bits[j] = true;
            }
        }
    }
    Ok(out)
}

/// Integer centroid of the foreground, each axis rounded half up.
pub fn localize_oracle(truth: &Mask) -> Result<VoxelIndex> {
    let mut sum = [0u128; 3];
    let mut n = 0u128;
    for p in truth.foreground() {
        let a = p.as_array();
        for k in 0..3 {
            sum[k] += a[k] as u128;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let r = |s: u128| ((2 * s + n) / (2 * n)) as usize;
    Ok(VoxelIndex {
        ix: r(sum[0]),
        iy: r(sum[1]),
        iz: r(sum[2]),
    })
}

const OTSU_BINS: usize = 256;

/// Otsu threshold over `values`; voxels strictly above it are foreground.
/// `None` when all values are equal.
pub fn otsu_threshold(values: &[f64]) -> Option<f64> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if !(hi > lo) {
        return None;
    }
    let width = (hi - lo) / OTSU_BINS as f64;
    let mut hist = [0u64; OTSU_BINS];
    for &v in values {
        let b = (((v - lo) / width) as usize).min(OTSU_BINS - 1);
        hist[b] += 1;
    }
    let total = values.len() as f64;
    let weighted: f64 = hist.iter().enumerate().map(|(i, &h)| i as f64 * h as f64).sum();
    let (mut w0, mut s0) = (0.0, 0.0);
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (k, &h) in hist.iter().enumerate().take(OTSU_BINS - 1) {
        w0 += h as f64;
        s0 += k as f64 * h as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = s0 / w0;
        let m1 = (weighted - s0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best.0 {
            best = (between, k);
        }
    }
    Some(lo + (best.1 + 1) as f64 * width)
}

fn threshold_mask(v: &Volume, valid: impl Fn(usize) -> bool) -> Result<Mask> {
    let values: Vec<f64> = (0..v.len()).filter(|&i| valid(i)).map(|i| v.value(i)).collect();
    let t = otsu_threshold(&values).ok_or(Error::NoForeground)?;
    let bits = (0..v.len()).map(|i| valid(i) && v.value(i) > t).collect();
    let m = Mask::new(v.dims(), v.spacing(), bits)?;
    if m.is_empty() {
        return Err(Error::NoForeground);
    }
    Ok(m)
}

/// Otsu on a downsampled copy, largest 26-connected bright component, its
/// centroid mapped back to full resolution.
pub fn localize_threshold(v: &Volume, downsample_factor: usize) -> Result<VoxelIndex> {
    if downsample_factor == 0 {
        return Err(Error::InvalidSpec("downsample factor must be positive".into()));
    }
    let d = v.dims().as_array();
    let f: [usize; 3] = std::array::from_fn(|a| downsample_factor.min(d[a]));
    let small = downsample(v, f)?;
    let m = largest_component(&threshold_mask(&small, |_| true)?, Connectivity::TwentySix);
    let mut sum = [0.0f64; 3];
    let mut n = 0.0;
    for p in m.foreground() {
        let a = p.as_array();
        for k in 0..3 {
            sum[k] += a[k] as f64;
        }
        n += 1.0;
    }
    let full: [usize; 3] = std::array::from_fn(|a| {
        let c = sum[a] / n;
        (((c + 0.5) * f[a] as f64 - 0.5).round().max(0.0) as usize).min(d[a] - 1)
    });
    Ok(VoxelIndex {
        ix: full[0],
        iy: full[1],
        iz: full[2],
    })
}

/// One case handed to a pipeline. `truth` is only read by oracle stages.
#[derive(Debug, Clone, Copy)]
pub struct CaseInput<'a> {
    pub case_id: &'a str,
    pub volume: &'a Volume,
    pub truth: Option<&'a Mask>,
}

impl<'a> CaseInput<'a> {
    pub fn new(case_id: &'a str, volume: &'a Volume) -> Self {
        Self {
            case_id,
            volume,
            truth: None,
        }
    }

    pub fn with_truth(mut self, truth: &'a Mask) -> Self {
        self.truth = Some(truth);
        self
    }

    fn require_truth(&self, who: &str) -> Result<&'a Mask> {
        let t = self
            .truth
            .ok_or_else(|| Error::InvalidSpec(format!("{who} needs a ground-truth mask")))?;
        t.check_volume(self.volume)?;
        Ok(t)
    }
}

/// First stage: picks the ROI centre.
pub trait Localizer: Send + Sync {
    fn name(&self) -> &'static str;
    fn locate(&self, case: &CaseInput) -> Result<VoxelIndex>;
}

/// Second stage: segments a cropped patch. The output has the patch's
/// geometry.
pub trait Segmenter: Send + Sync {
    fn name(&self) -> &'static str;
    fn segment(&self, patch: &Volume, roi: &RoiBox, case: &CaseInput) -> Result<Mask>;
}

struct ThresholdLocalizer {
    factor: usize,
}

impl Localizer for ThresholdLocalizer {
    fn name(&self) -> &'static str {
        "threshold"
    }
    fn locate(&self, case: &CaseInput) -> Result<VoxelIndex> {
        localize_threshold(case.volume, self.factor)
    }
}

struct OracleLocalizer;

impl Localizer for OracleLocalizer {
    fn name(&self) -> &'static str {
        "oracle"
    }
    fn locate(&self, case: &CaseInput) -> Result<VoxelIndex> {
        localize_oracle(case.require_truth("oracle localizer")?)
    }
}

struct FixedCenter {
    at: [Option<usize>; 3],
}

impl Localizer for FixedCenter {
    fn name(&self) -> &'static str {
        "fixed-center"
    }
    fn locate(&self, case: &CaseInput) -> Result<VoxelIndex> {
        let dims = case.volume.dims();
        let c = dims.center().as_array();
        let d = dims.as_array();
        let p: [usize; 3] = std::array::from_fn(|a| self.at[a].unwrap_or(c[a]));
        if (0..3).any(|a| p[a] >= d[a]) {
            return Err(Error::InvalidSpec(format!("fixed centre {p:?} lies outside {d:?}")));
        }
        Ok(VoxelIndex {
            ix: p[0],
            iy: p[1],
            iz: p[2],
        })
    }
}

/// Built-in localizers: `threshold`, `oracle`, `fixed-center`.
pub fn localizers() -> Registry<dyn Localizer> {
    let mut reg: Registry<dyn Localizer> = Registry::new("localizer");
    reg.register(
        "threshold",
        "Otsu on a downsampled scan, centroid of the largest component (factor=4)",
        |p, _| {
            p.expect_keys(&["factor"])?;
            let factor: usize = p.get_or("factor", 4)?;
            if factor == 0 {
                return Err(Error::InvalidSpec("factor must be positive".into()));
            }
            Ok(Box::new(ThresholdLocalizer { factor }) as Box<dyn Localizer>)
        },
    );
    reg.register("oracle", "centroid of the ground-truth mask", |p, _| {
        p.expect_keys(&[])?;
        Ok(Box::new(OracleLocalizer) as Box<dyn Localizer>)
    });
    reg.register(
        "fixed-center",
        "constant centre; x, y, z default to the grid centre",
        |p, _| {
            p.expect_keys(&["x", "y", "z"])?;
            Ok(Box::new(FixedCenter {
                at: [p.get("x")?, p.get("y")?, p.get("z")?],
            }) as Box<dyn Localizer>)
        },
    );
    reg
}

struct OracleSegmenter;

impl Segmenter for OracleSegmenter {
    fn name(&self) -> &'static str {
        "oracle"
    }
    fn segment(&self, _patch: &Volume, roi: &RoiBox, case: &CaseInput) -> Result<Mask> {
        Ok(crop_mask_to(case.require_truth("oracle segmenter")?, roi))
    }
}

struct ThresholdSegmenter {
    cleanup: bool,
    closing_radius: usize,
}

impl Segmenter for ThresholdSegmenter {
    fn name(&self) -> &'static str {
        "threshold"
    }
    fn segment(&self, patch: &Volume, roi: &RoiBox, case: &CaseInput) -> Result<Mask> {
        let full = case.volume.dims();
        let pd = patch.dims();
        // padding must not pull the threshold down
        let m = threshold_mask(patch, |i| roi.source_index(pd.coords(i), full).is_some())?;
        if !self.cleanup {
            return Ok(m);
        }
        let m = largest_component(&m, Connectivity::TwentySix);
        Ok(if self.closing_radius > 0 {
            closing(&m, StructuringElement::cross(self.closing_radius))
        } else {
            m
        })
    }
}

struct ExternalSegmenter {
    dir: PathBuf,
}

impl ExternalSegmenter {
    fn path_for(&self, case_id: &str) -> Option<PathBuf> {
        [format!("{case_id}.nrrd"), format!("{case_id}_label.nrrd")]
            .into_iter()
            .map(|f| self.dir.join(f))
            .find(|p| p.is_file())
    }
}

impl Segmenter for ExternalSegmenter {
    fn name(&self) -> &'static str {
        "external"
    }
    fn segment(&self, _patch: &Volume, roi: &RoiBox, case: &CaseInput) -> Result<Mask> {
        let path = self
            .path_for(case.case_id)
            .ok_or_else(|| Error::MissingPrediction(case.case_id.to_string()))?;
        let pred = read_mask(&path)?;
        pred.check_volume(case.volume)?;
        Ok(crop_mask_to(&pred, roi))
    }
}

/// Built-in segmenters: `oracle`, `threshold`, `external`.
pub fn segmenters() -> Registry<dyn Segmenter> {
    let mut reg: Registry<dyn Segmenter> = Registry::new("segmenter");
    reg.register("oracle", "crop of the ground-truth mask", |p, _| {
        p.expect_keys(&[])?;
        Ok(Box::new(OracleSegmenter) as Box<dyn Segmenter>)
    });
    reg.register(
        "threshold",
        "Otsu threshold, then largest component and closing (cleanup=true, closing_radius=1)",
        |p, _| {
            p.expect_keys(&["cleanup", "closing_radius"])?;
            Ok(Box::new(ThresholdSegmenter {
                cleanup: p.get_or("cleanup", true)?,
                closing_radius: p.get_or("closing_radius", 1)?,
            }) as Box<dyn Segmenter>)
        },
    );
    reg.register("external", "full-size prediction read from dir/<case>.nrrd", |p, _| {
        p.expect_keys(&["dir"])?;
        let dir = p
            .raw("dir")
            .ok_or_else(|| Error::InvalidSpec("external segmenter needs `dir`".into()))?;
        Ok(Box::new(ExternalSegmenter { dir: dir.into() }) as Box<dyn Segmenter>)
    });
    reg
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub center: VoxelIndex,
    pub roi: RoiBox,
    pub mask: Mask,
}

/// `uncrop(seg(crop(v, loc(v), roi_size)))`.
pub fn run_pipeline(
    case: &CaseInput,
    loc: &dyn Localizer,
    seg: &dyn Segmenter,
    roi_size: [usize; 3],
) -> Result<PipelineRun> {
    let center = loc.locate(case)?;
    run_at(case, center, seg, roi_size)
}

fn run_at(case: &CaseInput, center: VoxelIndex, seg: &dyn Segmenter, roi_size: [usize; 3]) -> Result<PipelineRun> {
    let dims = case.volume.dims();
    let roi = RoiBox::place(center, roi_size, dims)?;
    let patch = crop_volume_to(case.volume, &roi);
    let out = seg.segment(&patch, &roi, case)?;
    let mask = uncrop(&out, &roi, dims)?;
    Ok(PipelineRun { center, roi, mask })
}

/// Dice of the oracle pipeline, `2k / (|A| + k)` with `k` in-box voxels.
pub fn in_box_dice_bound(truth: &Mask, roi: &RoiBox) -> f64 {
    let k = roi.count_inside(truth) as f64;
    let a = truth.count() as f64;
    if a == 0.0 {
        return 1.0;
    }
    2.0 * k / (a + k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetPoint {
    pub offset_pct: f64,
    pub displacement: i64,
    pub dice: f64,
}

/// The largest shift of the box along `axis` that keeps the whole mask
/// inside it: box low edge may move up to the mask's low edge.
pub fn max_no_loss_displacement(truth: &Mask, roi_size: [usize; 3], axis: usize) -> Result<i64> {
    let c = localize_oracle(truth)?.as_signed();
    let (lo, hi) = truth.bounding_box().ok_or(Error::EmptyMask)?;
    let w = roi_size[axis];
    let extent = hi[axis] - lo[axis] + 1;
    let d = lo[axis] as i64 - (c[axis] - (w / 2) as i64);
    if extent > w || d < 0 {
        return Err(Error::RoiTooSmall { axis, extent, size: w });
    }
    Ok(d)
}

/// Shifts the ROI centre from the mask centroid by `offset_pct` of the
/// maximal no-loss displacement along `axis` and scores each placement.
pub fn offset_sweep(
    v: &Volume,
    truth: &Mask,
    seg: &dyn Segmenter,
    roi_size: [usize; 3],
    offsets_pct: &[f64],
    axis: usize,
) -> Result<Vec<OffsetPoint>> {
    if axis > 2 {
        return Err(Error::InvalidSpec(format!("axis index {axis} out of range")));
    }
    truth.check_volume(v)?;
    let c = localize_oracle(truth)?.as_signed();
    let max_d = max_no_loss_displacement(truth, roi_size, axis)?;
    let case = CaseInput::new("sweep", v).with_truth(truth);
    let dims = v.dims();
    offsets_pct
        .par_iter()
        .map(|&pct| {
            if !pct.is_finite() || pct < 0.0 {
                return Err(Error::InvalidSpec(format!(
                    "offset must be a non-negative percentage, got {pct}"
                )));
            }
            let d = (pct / 100.0 * max_d as f64).round() as i64;
            let mut centre = c;
            centre[axis] += d;
            let roi = RoiBox::place_signed(centre, roi_size, dims)?;
            let patch = crop_volume_to(v, &roi);
            let out = seg.segment(&patch, &roi, &case)?;
            let mask = uncrop(&out, &roi, dims)?;
            Ok(OffsetPoint {
                offset_pct: pct,
                displacement: d,
                dice: dice(&mask, truth)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchPoint {
    pub size: [usize; 3],
    pub background_pct: f64,
    pub containment_pct: f64,
}

/// Boxes of each in-plane size and fixed `depth`, centred on the truth
/// centroid. Background share is over the box voxels inside the grid.
pub fn patch_size_sweep(truth: &Mask, sizes: &[(usize, usize)], depth: usize) -> Result<Vec<PatchPoint>> {
    let c = localize_oracle(truth)?;
    let total = truth.count() as f64;
    let dims = truth.dims();
    sizes
        .par_iter()
        .map(|&(wx, wy)| {
            let size = [wx, wy, depth];
            let roi = RoiBox::place(c, size, dims)?;
            let k = roi.count_inside(truth) as f64;
            let voxels = roi.overlap_count(dims) as f64;
            Ok(PatchPoint {
                size,
                background_pct: 100.0 * (1.0 - k / voxels),
                containment_pct: 100.0 * k / total,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{IntensityType, Spacing};

    fn ellipsoid(dims: Dims, c: [f64; 3], r: [f64; 3]) -> Mask {
        Mask::from_fn(dims, Spacing::default(), |p| {
            let q = p.as_array();
            (0..3).map(|a| ((q[a] as f64 - c[a]) / r[a]).powi(2)).sum::<f64>() <= 1.0
        })
        .unwrap()
    }

    fn two_level(m: &Mask) -> Volume {
        Volume::from_fn(m.dims(), m.spacing(), IntensityType::U16, |p| {
            if m.get(p.ix, p.iy, p.iz) {
                1200.0
            } else {
                1000.0
            }
        })
        .unwrap()
    }

    #[test]
    fn placement_and_padding() {
        let dims = Dims::new(576, 576, 88);
        let roi = RoiBox::place(
            VoxelIndex {
                ix: 288,
                iy: 288,
                iz: 44,
            },
            DEFAULT_ROI,
            dims,
        )
        .unwrap();
        assert_eq!(roi.origin, [168, 208, -4]);
        assert_eq!(roi.padding(dims), [(0, 0), (0, 0), (4, 4)]);
        assert!(!roi.in_bounds(dims));
        assert_eq!(roi.overlap_count(dims), 240 * 160 * 88);
        let whole = RoiBox::place(dims.center(), [576, 576, 88], dims).unwrap();
        assert_eq!(whole, RoiBox::full(dims));
        assert!(RoiBox::place(dims.center(), [0, 1, 1], dims).is_err());
    }

    #[test]
    fn crop_uncrop_round_trip() {
        let dims = Dims::new(20, 18, 9);
        let m = ellipsoid(dims, [9.0, 8.0, 4.0], [4.0, 3.0, 2.0]);
        let (patch, roi) = crop_mask(&m, localize_oracle(&m).unwrap(), [12, 10, 8]).unwrap();
        assert!(roi.in_bounds(dims));
        assert_eq!(uncrop(&patch, &roi, dims).unwrap(), m);
        let (patch, roi) = crop_mask(&m, localize_oracle(&m).unwrap(), [12, 10, 12]).unwrap();
        assert_eq!(roi.padding(dims)[2], (1, 2));
        assert_eq!(uncrop(&patch, &roi, dims).unwrap(), m);
        let wrong = Mask::empty(Dims::new(3, 3, 3), m.spacing()).unwrap();
        assert!(matches!(uncrop(&wrong, &roi, dims), Err(Error::BoxInconsistent { .. })));
    }

    #[test]
    fn partial_box_keeps_intersection() {
        let dims = Dims::new(16, 16, 4);
        let m = Mask::from_fn(dims, Spacing::default(), |p| p.ix >= 4 && p.ix < 12 && p.iy < 8).unwrap();
        let (patch, roi) = crop_mask(&m, VoxelIndex { ix: 2, iy: 4, iz: 2 }, [8, 8, 4]).unwrap();
        let back = uncrop(&patch, &roi, dims).unwrap();
        let expected = Mask::from_fn(dims, Spacing::default(), |p| m.get(p.ix, p.iy, p.iz) && roi.contains(p)).unwrap();
        assert_eq!(back, expected);
        assert_eq!(back.count(), roi.count_inside(&m));
    }

    #[test]
    fn volume_crop_pads_with_zero() {
        let v = Volume::from_fn(Dims::new(4, 4, 2), Spacing::default(), IntensityType::U8, |_| 9.0).unwrap();
        let (p, roi) = crop_volume(&v, VoxelIndex { ix: 0, iy: 0, iz: 0 }, [2, 2, 4]).unwrap();
        assert_eq!(roi.origin, [-1, -1, -1]);
        assert_eq!(p.value(0), 0.0);
        assert_eq!(p.get(1, 1, 1), 9.0);
        assert_eq!(p.get(1, 1, 3), 0.0);
    }

    #[test]
    fn oracle_centroids() {
        let dims = Dims::new(40, 40, 40);
        let single = Mask::from_voxels(dims, Spacing::default(), [VoxelIndex { ix: 10, iy: 20, iz: 30 }]).unwrap();
        assert_eq!(localize_oracle(&single).unwrap(), VoxelIndex { ix: 10, iy: 20, iz: 30 });
        // L shape: (0,0) (1,0) (0,1) → mean (1/3, 1/3) → (0, 0); with (0,2) → (0.25, 0.75) → (0, 1)
        let l = Mask::from_voxels(
            dims,
            Spacing::default(),
            [(0, 0), (1, 0), (0, 1), (0, 2)].map(|(x, y)| VoxelIndex { ix: x, iy: y, iz: 5 }),
        )
        .unwrap();
        assert_eq!(localize_oracle(&l).unwrap(), VoxelIndex { ix: 0, iy: 1, iz: 5 });
        // (0.5) rounds up
        let pair = Mask::from_voxels(
            dims,
            Spacing::default(),
            [0, 1].map(|x| VoxelIndex { ix: x, iy: 0, iz: 0 }),
        )
        .unwrap();
        assert_eq!(localize_oracle(&pair).unwrap().ix, 1);
        assert!(matches!(
            localize_oracle(&Mask::empty(dims, Spacing::default()).unwrap()),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn threshold_localizer_picks_larger_blob() {
        let dims = Dims::new(48, 48, 24);
        let big = ellipsoid(dims, [30.0, 30.0, 12.0], [6.0, 6.0, 6.0]);
        let small = ellipsoid(dims, [8.0, 8.0, 6.0], [2.5, 2.5, 2.5]);
        let v = two_level(&big.union(&small).unwrap());
        let c = localize_threshold(&v, 2).unwrap();
        for (got, want) in c.as_array().iter().zip([30usize, 30, 12]) {
            assert!((*got as i64 - want as i64).abs() <= 1, "{c:?}");
        }
        let flat = Volume::from_fn(dims, Spacing::default(), IntensityType::U8, |_| 3.0).unwrap();
        assert!(matches!(localize_threshold(&flat, 2), Err(Error::NoForeground)));
    }

    #[test]
    fn pipelines_compose() {
        let dims = Dims::new(64, 64, 24);
        let truth = ellipsoid(dims, [30.0, 34.0, 12.0], [9.0, 7.0, 5.0]);
        let v = two_level(&truth);
        let case = CaseInput::new("c1", &v).with_truth(&truth);
        let locs = localizers();
        let segs = segmenters();
        let oracle = locs.build_str("oracle", &()).unwrap();
        let run = run_pipeline(
            &case,
            oracle.as_ref(),
            segs.build_str("oracle", &()).unwrap().as_ref(),
            [32, 24, 16],
        )
        .unwrap();
        assert_eq!(run.mask, truth);
        let run = run_pipeline(
            &case,
            oracle.as_ref(),
            segs.build_str("threshold", &()).unwrap().as_ref(),
            [32, 24, 16],
        )
        .unwrap();
        assert_eq!(dice(&run.mask, &truth).unwrap(), 1.0);
        let fixed = locs.build_str("fixed-center:x=12", &()).unwrap();
        let run = run_pipeline(
            &case,
            fixed.as_ref(),
            segs.build_str("oracle", &()).unwrap().as_ref(),
            [16, 24, 16],
        )
        .unwrap();
        let bound = in_box_dice_bound(&truth, &run.roi);
        assert!(bound < 1.0);
        assert_eq!(dice(&run.mask, &truth).unwrap(), bound);
        let no_truth = CaseInput::new("c1", &v);
        assert!(oracle.locate(&no_truth).is_err());
        let ext = segs.build_str("external:dir=/nonexistent", &()).unwrap();
        assert!(matches!(
            run_pipeline(&case, oracle.as_ref(), ext.as_ref(), [8, 8, 8]),
            Err(Error::MissingPrediction(_))
        ));
        assert!(segs.build_str("external", &()).is_err());
        assert!(locs.build_str("cnn", &()).is_err());
    }

    #[test]
    fn offset_sweep_bound() {
        let dims = Dims::new(80, 40, 20);
        let truth = ellipsoid(dims, [40.0, 20.0, 10.0], [8.0, 6.0, 4.0]);
        let v = two_level(&truth);
        let seg = segmenters().build_str("oracle", &()).unwrap();
        let offsets = [0.0, 50.0, 100.0, 125.0, 150.0, 200.0];
        let curve = offset_sweep(&v, &truth, seg.as_ref(), [32, 24, 16], &offsets, 0).unwrap();
        assert_eq!(curve[0].dice, 1.0);
        assert_eq!(curve[2].dice, 1.0);
        assert!(curve[3].dice < 1.0);
        for w in curve.windows(2) {
            assert!(w[1].dice <= w[0].dice);
        }
        assert!(matches!(
            offset_sweep(&v, &truth, seg.as_ref(), [10, 24, 16], &offsets, 0),
            Err(Error::RoiTooSmall { .. })
        ));
    }

    #[test]
    fn patch_sweep_counts() {
        let dims = Dims::new(64, 64, 20);
        let truth = ellipsoid(dims, [32.0, 32.0, 10.0], [6.0, 5.0, 4.0]);
        let pts = patch_size_sweep(&truth, &[(64, 64), (40, 40), (20, 16), (8, 8)], 24).unwrap();
        let n = truth.count() as f64;
        assert_eq!(pts[0].containment_pct, 100.0);
        assert_eq!(pts[0].background_pct, 100.0 * (1.0 - n / (64.0 * 64.0 * 20.0)));
        assert!(pts[0].background_pct > pts[1].background_pct);
        assert!(pts[1].background_pct > pts[2].background_pct);
        assert_eq!(pts[2].containment_pct, 100.0);
        assert!(pts[3].containment_pct < 100.0);
    }

    #[test]
    fn otsu_splits_two_levels() {
        let vals = [10.0, 10.0, 10.0, 90.0, 90.0];
        let t = otsu_threshold(&vals).unwrap();
        assert!(t > 10.0 && t < 90.0);
        assert_eq!(otsu_threshold(&[4.0, 4.0]), None);
    }
}
