//! In-memory grids.
//!
//! Every grid stores its samples in x-fastest order: the voxel at
//! `(ix, iy, iz)` lives at `ix + iy * nx + iz * nx * ny`. File formats that
//! use another layout are converted at the I/O boundary.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub const fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Self { nx, ny, nz }
    }

    pub fn from_array(d: [usize; 3]) -> Self {
        Self::new(d[0], d[1], d[2])
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        debug_assert!(ix < self.nx && iy < self.ny && iz < self.nz);
        ix + self.nx * (iy + self.ny * iz)
    }

    #[inline]
    pub fn coords(&self, i: usize) -> VoxelIndex {
        let ix = i % self.nx;
        let rest = i / self.nx;
        VoxelIndex::new(ix, rest % self.ny, rest / self.ny)
    }

    /// Linear index of a signed coordinate, or `None` when it falls outside.
    #[inline]
    pub fn checked_index(&self, p: [i64; 3]) -> Option<usize> {
        let d = self.as_array();
        if (0..3).all(|a| p[a] >= 0 && (p[a] as usize) < d[a]) {
            Some(self.index(p[0] as usize, p[1] as usize, p[2] as usize))
        } else {
            None
        }
    }

    pub fn contains(&self, v: VoxelIndex) -> bool {
        v.ix < self.nx && v.iy < self.ny && v.iz < self.nz
    }

    pub fn center(&self) -> VoxelIndex {
        VoxelIndex::new(self.nx / 2, self.ny / 2, self.nz / 2)
    }

    fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return Err(Error::ZeroDim(self.as_array()));
        }
        Ok(())
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.nx, self.ny, self.nz)
    }
}

/// Physical voxel edge lengths in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spacing(pub [f64; 3]);

impl Spacing {
    pub const fn isotropic(s: f64) -> Self {
        Spacing([s, s, s])
    }

    pub fn new(sx: f64, sy: f64, sz: f64) -> Result<Self> {
        let s = Spacing([sx, sy, sz]);
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::NonPositiveSpacing(self.0))
        }
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.0[0] * self.0[1] * self.0[2]
    }

    pub fn scaled(&self, c: f64) -> Spacing {
        Spacing([self.0[0] * c, self.0[1] * c, self.0[2] * c])
    }
}

impl Default for Spacing {
    fn default() -> Self {
        Spacing::isotropic(1.0)
    }
}

impl std::ops::Index<usize> for Spacing {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VoxelIndex {
    pub ix: usize,
    pub iy: usize,
    pub iz: usize,
}

impl VoxelIndex {
    pub const fn new(ix: usize, iy: usize, iz: usize) -> Self {
        Self { ix, iy, iz }
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.ix, self.iy, self.iz]
    }

    pub fn as_signed(&self) -> [i64; 3] {
        [self.ix as i64, self.iy as i64, self.iz as i64]
    }
}

impl From<[usize; 3]> for VoxelIndex {
    fn from(a: [usize; 3]) -> Self {
        VoxelIndex::new(a[0], a[1], a[2])
    }
}

impl fmt::Display for VoxelIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.ix, self.iy, self.iz)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntensityType {
    U8,
    U16,
    F32,
}

impl IntensityType {
    pub fn byte_width(&self) -> usize {
        match self {
            IntensityType::U8 => 1,
            IntensityType::U16 => 2,
            IntensityType::F32 => 4,
        }
    }

    /// Largest representable value for integer types.
    pub fn max_level(&self) -> Option<f64> {
        match self {
            IntensityType::U8 => Some(u8::MAX as f64),
            IntensityType::U16 => Some(u16::MAX as f64),
            IntensityType::F32 => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum VolumeData {
    U8(Vec<u8>),
    U16(Vec<u16>),
    F32(Vec<f32>),
}

impl VolumeData {
    pub fn len(&self) -> usize {
        match self {
            VolumeData::U8(d) => d.len(),
            VolumeData::U16(d) => d.len(),
            VolumeData::F32(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn intensity_type(&self) -> IntensityType {
        match self {
            VolumeData::U8(_) => IntensityType::U8,
            VolumeData::U16(_) => IntensityType::U16,
            VolumeData::F32(_) => IntensityType::F32,
        }
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        match self {
            VolumeData::U8(d) => d[i] as f64,
            VolumeData::U16(d) => d[i] as f64,
            VolumeData::F32(d) => d[i] as f64,
        }
    }

    /// Builds data of the requested type from real values, rounding and
    /// clamping into the integer range where needed.
    pub fn from_f64(kind: IntensityType, values: impl IntoIterator<Item = f64>) -> Self {
        match kind {
            IntensityType::U8 => {
                VolumeData::U8(values.into_iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect())
            }
            IntensityType::U16 => VolumeData::U16(
                values
                    .into_iter()
                    .map(|v| v.round().clamp(0.0, 65535.0) as u16)
                    .collect(),
            ),
            IntensityType::F32 => VolumeData::F32(values.into_iter().map(|v| v as f32).collect()),
        }
    }
}

/// A scalar intensity grid with physical spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: Dims,
    spacing: Spacing,
    data: VolumeData,
}

impl Volume {
    pub fn new(dims: Dims, spacing: Spacing, data: VolumeData) -> Result<Self> {
        dims.validate()?;
        spacing.validate()?;
        if data.len() != dims.len() {
            return Err(Error::DataLength {
                dims: dims.as_array(),
                expected: dims.len(),
                actual: data.len(),
            });
        }
        Ok(Self { dims, spacing, data })
    }

    pub fn from_f32(dims: Dims, spacing: Spacing, data: Vec<f32>) -> Result<Self> {
        Self::new(dims, spacing, VolumeData::F32(data))
    }

    pub fn from_fn(dims: Dims, spacing: Spacing, kind: IntensityType, f: impl Fn(VoxelIndex) -> f64) -> Result<Self> {
        let values = (0..dims.len()).map(|i| f(dims.coords(i)));
        Self::new(dims, spacing, VolumeData::from_f64(kind, values))
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn data(&self) -> &VolumeData {
        &self.data
    }

    pub fn into_data(self) -> VolumeData {
        self.data
    }

    pub fn intensity_type(&self) -> IntensityType {
        self.data.intensity_type()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn value(&self, i: usize) -> f64 {
        self.data.get(i)
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize, iz: usize) -> f64 {
        self.data.get(self.dims.index(ix, iy, iz))
    }

    pub fn to_f64(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.value(i)).collect()
    }

    /// Same geometry and intensity type, new values.
    pub fn with_values(&self, values: impl IntoIterator<Item = f64>) -> Self {
        let data = VolumeData::from_f64(self.intensity_type(), values);
        assert_eq!(data.len(), self.len());
        Self {
            dims: self.dims,
            spacing: self.spacing,
            data,
        }
    }

    pub fn with_spacing(mut self, spacing: Spacing) -> Result<Self> {
        spacing.validate()?;
        self.spacing = spacing;
        Ok(self)
    }

    pub fn min_max(&self) -> (f64, f64) {
        (0..self.len()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| {
            let v = self.value(i);
            (lo.min(v), hi.max(v))
        })
    }
}

/// A binary label grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    dims: Dims,
    spacing: Spacing,
    bits: Vec<bool>,
}

// Spacing is validated finite, so equality is reflexive.
impl Eq for Spacing {}

impl Mask {
    pub fn new(dims: Dims, spacing: Spacing, bits: Vec<bool>) -> Result<Self> {
        dims.validate()?;
        spacing.validate()?;
        if bits.len() != dims.len() {
            return Err(Error::DataLength {
                dims: dims.as_array(),
                expected: dims.len(),
                actual: bits.len(),
            });
        }
        Ok(Self { dims, spacing, bits })
    }

    pub fn empty(dims: Dims, spacing: Spacing) -> Result<Self> {
        Self::new(dims, spacing, vec![false; dims.len()])
    }

    pub fn from_fn(dims: Dims, spacing: Spacing, f: impl Fn(VoxelIndex) -> bool) -> Result<Self> {
        let bits = (0..dims.len()).map(|i| f(dims.coords(i))).collect();
        Self::new(dims, spacing, bits)
    }

    /// Builds a mask from foreground voxel coordinates.
    pub fn from_voxels(dims: Dims, spacing: Spacing, voxels: impl IntoIterator<Item = VoxelIndex>) -> Result<Self> {
        let mut m = Self::empty(dims, spacing)?;
        for v in voxels {
            if !dims.contains(v) {
                return Err(Error::InvalidSpec(format!("voxel {v} outside {dims}")));
            }
            m.bits[dims.index(v.ix, v.iy, v.iz)] = true;
        }
        Ok(m)
    }

    pub(crate) fn from_parts_unchecked(dims: Dims, spacing: Spacing, bits: Vec<bool>) -> Self {
        debug_assert_eq!(bits.len(), dims.len());
        Self { dims, spacing, bits }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    pub fn into_bits(self) -> Vec<bool> {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize, iz: usize) -> bool {
        self.bits[self.dims.index(ix, iy, iz)]
    }

    #[inline]
    pub fn set(&mut self, ix: usize, iy: usize, iz: usize, value: bool) {
        let i = self.dims.index(ix, iy, iz);
        self.bits[i] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn with_spacing(mut self, spacing: Spacing) -> Result<Self> {
        spacing.validate()?;
        self.spacing = spacing;
        Ok(self)
    }

    pub fn complement(&self) -> Mask {
        self.map_bits(|b| !b)
    }

    pub fn map_bits(&self, f: impl Fn(bool) -> bool) -> Mask {
        Mask::from_parts_unchecked(self.dims, self.spacing, self.bits.iter().map(|&b| f(b)).collect())
    }

    pub fn zip_with(&self, other: &Mask, f: impl Fn(bool, bool) -> bool) -> Result<Mask> {
        self.check_geometry(other)?;
        let bits = self.bits.iter().zip(&other.bits).map(|(&a, &b)| f(a, b)).collect();
        Ok(Mask::from_parts_unchecked(self.dims, self.spacing, bits))
    }

    pub fn intersection(&self, other: &Mask) -> Result<Mask> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn union(&self, other: &Mask) -> Result<Mask> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn foreground(&self) -> impl Iterator<Item = VoxelIndex> + '_ {
        let dims = self.dims;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| dims.coords(i))
    }

    /// Inclusive bounding box of the foreground: `(min, max)` per axis.
    pub fn bounding_box(&self) -> Option<([usize; 3], [usize; 3])> {
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut any = false;
        for v in self.foreground() {
            any = true;
            for (a, c) in v.as_array().into_iter().enumerate() {
                lo[a] = lo[a].min(c);
                hi[a] = hi[a].max(c);
            }
        }
        any.then_some((lo, hi))
    }

    pub fn check_geometry(&self, other: &Mask) -> Result<()> {
        check_geometry((self.dims, self.spacing), (other.dims, other.spacing))
    }

    pub fn check_volume(&self, v: &Volume) -> Result<()> {
        check_geometry((v.dims(), v.spacing()), (self.dims, self.spacing))
    }
}

pub(crate) fn check_geometry(a: (Dims, Spacing), b: (Dims, Spacing)) -> Result<()> {
    if a.0 != b.0 || a.1 != b.1 {
        return Err(Error::GeometryMismatch {
            left: format!("{} @ {:?}", a.0, a.1 .0),
            right: format!("{} @ {:?}", b.0, b.1 .0),
        });
    }
    Ok(())
}

/// Block-mean downsampling. Output dims are `ceil(dim / factor)`; partial
/// blocks at the far edges average only the voxels they cover. The result
/// is always a float volume.
pub fn downsample(v: &Volume, factor: [usize; 3]) -> Result<Volume> {
    let d = v.dims().as_array();
    if (0..3).any(|a| factor[a] == 0 || factor[a] > d[a]) {
        return Err(Error::FactorExceedsDim { factor, dims: d });
    }
    let out = Dims::new(
        d[0].div_ceil(factor[0]),
        d[1].div_ceil(factor[1]),
        d[2].div_ceil(factor[2]),
    );
    let mut sums = vec![0.0f64; out.len()];
    let mut counts = vec![0u32; out.len()];
    let dims = v.dims();
    for iz in 0..d[2] {
        let oz = iz / factor[2];
        for iy in 0..d[1] {
            let oy = iy / factor[1];
            let row = dims.index(0, iy, iz);
            for ix in 0..d[0] {
                let o = out.index(ix / factor[0], oy, oz);
                sums[o] += v.value(row + ix);
                counts[o] += 1;
            }
        }
    }
    let data = sums.iter().zip(&counts).map(|(s, &c)| (s / c as f64) as f32).collect();
    let s = v.spacing().0;
    let spacing = Spacing([
        s[0] * factor[0] as f64,
        s[1] * factor[1] as f64,
        s[2] * factor[2] as f64,
    ]);
    Volume::from_f32(out, spacing, data)
}
