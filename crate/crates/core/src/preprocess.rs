//! Intensity normalisation, slice-wise CLAHE and deterministic geometric
//! augmentation.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::{Params, Registry, StrategySpec};
use crate::volume::{Dims, IntensityType, Mask, Volume};

/// Affine rescale to `[0, 1]` as a float volume.
pub fn normalize_intensity(v: &Volume) -> Result<Volume> {
    let (lo, hi) = v.min_max();
    if hi <= lo {
        return Err(Error::ConstantVolume);
    }
    let span = hi - lo;
    let data = (0..v.len()).map(|i| ((v.value(i) - lo) / span) as f32).collect();
    Volume::from_f32(v.dims(), v.spacing(), data)
}

const FLOAT_BINS: usize = 256;

/// How intensities map onto histogram bins.
struct Levels {
    kind: IntensityType,
    bins: usize,
    lo: f64,
    hi: f64,
}

impl Levels {
    fn for_volume(v: &Volume) -> Self {
        let (lo, hi) = v.min_max();
        match v.intensity_type() {
            IntensityType::F32 => Levels {
                kind: IntensityType::F32,
                bins: FLOAT_BINS,
                lo,
                hi,
            },
            // integer grids: one bin per level in [0, max]
            kind => Levels {
                kind,
                bins: (hi.max(1.0) as usize) + 1,
                lo: 0.0,
                hi,
            },
        }
    }

    #[inline]
    fn bin(&self, value: f64) -> usize {
        match self.kind {
            IntensityType::F32 => {
                if self.hi <= self.lo {
                    0
                } else {
                    (((value - self.lo) / (self.hi - self.lo)) * self.bins as f64)
                        .floor()
                        .clamp(0.0, (self.bins - 1) as f64) as usize
                }
            }
            _ => value as usize,
        }
    }

    /// Converts a mapped level in `[0, bins - 1]` back to an intensity.
    #[inline]
    fn output(&self, level: f64) -> f64 {
        match self.kind {
            IntensityType::F32 => self.lo + (self.hi - self.lo) * level / (self.bins - 1) as f64,
            _ => level.round().clamp(0.0, (self.bins - 1) as f64),
        }
    }
}

/// Contrast-limited adaptive histogram equalisation applied independently
/// to every xy slice.
///
/// Each slice is split into `tiles = (tx, ty)` tiles. A tile's histogram is
/// clipped at `clip_limit` times the uniform bin height and the excess is
/// spread evenly over all bins; its mapping is `(L - 1) * cdf / n`. Each
/// voxel's output interpolates bilinearly between the mappings of the four
/// nearest tile centres. Integer grids use one bin per level up to the
/// volume maximum; float grids use 256 bins over their range. Pass
/// `f64::INFINITY` to disable clipping.
pub fn clahe_slicewise(v: &Volume, tiles: (usize, usize), clip_limit: f64) -> Result<Volume> {
    let dims = v.dims();
    let (tx, ty) = tiles;
    if tx == 0 || ty == 0 || tx > dims.nx || ty > dims.ny {
        return Err(Error::TooManyTiles {
            tiles: [tx, ty],
            slice: [dims.nx, dims.ny],
        });
    }
    if clip_limit.is_nan() || clip_limit <= 1.0 {
        return Err(Error::InvalidSpec(format!(
            "clip limit must exceed 1.0, got {clip_limit}"
        )));
    }
    let levels = Levels::for_volume(v);
    if v.intensity_type() == IntensityType::F32 && levels.hi <= levels.lo {
        return Ok(v.clone());
    }
    let plane = dims.nx * dims.ny;
    let slices: Vec<Vec<f64>> = (0..dims.nz)
        .into_par_iter()
        .map(|z| {
            let values: Vec<f64> = (0..plane).map(|i| v.value(z * plane + i)).collect();
            clahe_slice(&values, dims.nx, dims.ny, tiles, clip_limit, &levels)
        })
        .collect();
    Ok(v.with_values(slices.into_iter().flatten()))
}

fn tile_edges(n: usize, t: usize) -> Vec<usize> {
    (0..=t).map(|i| i * n / t).collect()
}

fn clahe_slice(
    values: &[f64],
    nx: usize,
    ny: usize,
    (tx, ty): (usize, usize),
    clip_limit: f64,
    levels: &Levels,
) -> Vec<f64> {
    let xe = tile_edges(nx, tx);
    let ye = tile_edges(ny, ty);
    let bins = levels.bins;
    let mut maps: Vec<Vec<f64>> = Vec::with_capacity(tx * ty);
    for j in 0..ty {
        for i in 0..tx {
            let mut hist = vec![0.0f64; bins];
            let mut n = 0usize;
            for y in ye[j]..ye[j + 1] {
                for x in xe[i]..xe[i + 1] {
                    hist[levels.bin(values[y * nx + x])] += 1.0;
                    n += 1;
                }
            }
            if clip_limit.is_finite() {
                let limit = clip_limit * n as f64 / bins as f64;
                let mut excess = 0.0;
                for h in hist.iter_mut() {
                    if *h > limit {
                        excess += *h - limit;
                        *h = limit;
                    }
                }
                let share = excess / bins as f64;
                for h in hist.iter_mut() {
                    *h += share;
                }
            }
            let scale = (bins - 1) as f64 / n as f64;
            let mut cdf = 0.0;
            maps.push(
                hist.iter()
                    .map(|h| {
                        cdf += h;
                        cdf * scale
                    })
                    .collect(),
            );
        }
    }
    let centre = |e: &[usize], k: usize| (e[k] + e[k + 1] - 1) as f64 / 2.0;
    // neighbouring tile pair and weight toward the second
    let locate = |pos: f64, e: &[usize], t: usize| -> (usize, usize, f64) {
        if pos <= centre(e, 0) {
            return (0, 0, 0.0);
        }
        if pos >= centre(e, t - 1) {
            return (t - 1, t - 1, 0.0);
        }
        let mut k = 0;
        while centre(e, k + 1) <= pos {
            k += 1;
        }
        let (c0, c1) = (centre(e, k), centre(e, k + 1));
        (k, k + 1, (pos - c0) / (c1 - c0))
    };
    let xs: Vec<_> = (0..nx).map(|x| locate(x as f64, &xe, tx)).collect();
    let mut out = Vec::with_capacity(values.len());
    for y in 0..ny {
        let (j0, j1, wy) = locate(y as f64, &ye, ty);
        for (x, &(i0, i1, wx)) in xs.iter().enumerate() {
            let b = levels.bin(values[y * nx + x]);
            let m00 = maps[j0 * tx + i0][b];
            let m10 = maps[j0 * tx + i1][b];
            let m01 = maps[j1 * tx + i0][b];
            let m11 = maps[j1 * tx + i1][b];
            // lerp form is exact when neighbouring mappings agree
            let top = m00 + wx * (m10 - m00);
            let bottom = m01 + wx * (m11 - m01);
            out.push(levels.output(top + wy * (bottom - top)));
        }
    }
    out
}

/// A whole-volume intensity or resampling step.
pub trait VolumeOp: Send + Sync {
    fn name(&self) -> String;
    fn apply(&self, v: &Volume) -> Result<Volume>;
}

struct Normalize;

impl VolumeOp for Normalize {
    fn name(&self) -> String {
        "normalize".into()
    }
    fn apply(&self, v: &Volume) -> Result<Volume> {
        normalize_intensity(v)
    }
}

struct Clahe {
    tiles: (usize, usize),
    clip: f64,
}

impl VolumeOp for Clahe {
    fn name(&self) -> String {
        format!(
            "clahe:tiles_x={},tiles_y={},clip={}",
            self.tiles.0, self.tiles.1, self.clip
        )
    }
    fn apply(&self, v: &Volume) -> Result<Volume> {
        clahe_slicewise(v, self.tiles, self.clip)
    }
}

struct Downsample([usize; 3]);

impl VolumeOp for Downsample {
    fn name(&self) -> String {
        format!("downsample:x={},y={},z={}", self.0[0], self.0[1], self.0[2])
    }
    fn apply(&self, v: &Volume) -> Result<Volume> {
        crate::volume::downsample(v, self.0)
    }
}

/// Built-in volume steps: `normalize`, `clahe`, `downsample`.
pub fn volume_ops() -> Registry<dyn VolumeOp> {
    let mut reg: Registry<dyn VolumeOp> = Registry::new("preprocess operator");
    reg.register("normalize", "rescale intensities to [0, 1]", |p, _| {
        p.expect_keys(&[])?;
        Ok(Box::new(Normalize) as Box<dyn VolumeOp>)
    });
    reg.register(
        "clahe",
        "slice-wise CLAHE (tiles_x=8, tiles_y=8, clip=2.0; clip=inf disables clipping)",
        |p, _| {
            p.expect_keys(&["tiles_x", "tiles_y", "clip"])?;
            Ok(Box::new(Clahe {
                tiles: (p.get_or("tiles_x", 8)?, p.get_or("tiles_y", 8)?),
                clip: p.get_or("clip", 2.0)?,
            }) as Box<dyn VolumeOp>)
        },
    );
    reg.register(
        "downsample",
        "block-mean downsampling by integer factors (x, y, z default 1)",
        |p, _| {
            p.expect_keys(&["x", "y", "z"])?;
            let f = [p.get_or("x", 1)?, p.get_or("y", 1)?, p.get_or("z", 1)?];
            if f.contains(&0) {
                return Err(Error::InvalidSpec("downsample factors must be positive".into()));
            }
            Ok(Box::new(Downsample(f)) as Box<dyn VolumeOp>)
        },
    );
    reg
}

/// A declarative augmentation: registry name, parameters and seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentationSpec {
    pub kind: String,
    pub params: Params,
    pub seed: u64,
}

impl AugmentationSpec {
    pub fn new(kind: &str, params: Params, seed: u64) -> Self {
        Self {
            kind: kind.to_string(),
            params,
            seed,
        }
    }

    pub fn strategy(&self) -> StrategySpec {
        StrategySpec {
            name: self.kind.clone(),
            params: self.params.clone(),
        }
    }
}

#[derive(Debug, Deserialize)]
struct AugmentationFile {
    #[serde(default)]
    augmentation: Vec<toml::Table>,
}

/// Reads `[[augmentation]]` entries from TOML. Each entry needs `kind` and
/// `seed`; remaining keys become parameters.
pub fn parse_augmentation_config(text: &str) -> Result<Vec<AugmentationSpec>> {
    let file: AugmentationFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    file.augmentation
        .into_iter()
        .map(|mut t| {
            let kind = match t.remove("kind") {
                Some(toml::Value::String(s)) => s,
                _ => return Err(Error::InvalidSpec("augmentation entry needs a string `kind`".into())),
            };
            let seed = match t.remove("seed") {
                Some(toml::Value::Integer(s)) if s >= 0 => s as u64,
                _ => {
                    return Err(Error::InvalidSpec(format!(
                        "augmentation `{kind}` needs a non-negative `seed`"
                    )))
                }
            };
            let mut params = Params::new();
            for (k, v) in t {
                let v = match v {
                    toml::Value::String(s) => s,
                    other => other.to_string(),
                };
                params = params.with(&k, v);
            }
            Ok(AugmentationSpec { kind, params, seed })
        })
        .collect()
}

/// Inverse coordinate map: output voxel position to source position.
pub trait CoordMap: Send + Sync {
    fn source(&self, p: [f64; 3]) -> [f64; 3];
}

/// A geometric augmentation. Each draw uses the supplied generator, so
/// identical seeds give identical transforms.
pub trait Augmenter: Send + Sync {
    fn name(&self) -> &'static str;
    fn draw(&self, dims: Dims, rng: &mut ChaCha8Rng) -> Box<dyn CoordMap>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(&self) -> usize {
        *self as usize
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            other => Err(Error::InvalidSpec(format!("axis must be x, y or z, got `{other}`"))),
        }
    }
}

fn slice_centre(dims: Dims) -> [f64; 3] {
    [
        (dims.nx as f64 - 1.0) / 2.0,
        (dims.ny as f64 - 1.0) / 2.0,
        (dims.nz as f64 - 1.0) / 2.0,
    ]
}

/// Rotation in the xy plane about the slice centre. Multiples of 90° use
/// exact sines and cosines.
struct Rotate {
    angle_deg: f64,
    random: bool,
}

struct RotateMap {
    cos: f64,
    sin: f64,
    centre: [f64; 3],
}

fn exact_sin_cos(angle_deg: f64) -> (f64, f64) {
    let turns = angle_deg / 90.0;
    if turns.fract() == 0.0 {
        match (turns as i64).rem_euclid(4) {
            0 => (0.0, 1.0),
            1 => (1.0, 0.0),
            2 => (0.0, -1.0),
            _ => (-1.0, 0.0),
        }
    } else {
        (angle_deg * PI / 180.0).sin_cos()
    }
}

impl CoordMap for RotateMap {
    fn source(&self, p: [f64; 3]) -> [f64; 3] {
        let dx = p[0] - self.centre[0];
        let dy = p[1] - self.centre[1];
        // inverse rotation
        [
            self.cos * dx + self.sin * dy + self.centre[0],
            -self.sin * dx + self.cos * dy + self.centre[1],
            p[2],
        ]
    }
}

impl Augmenter for Rotate {
    fn name(&self) -> &'static str {
        "rotate"
    }
    fn draw(&self, dims: Dims, rng: &mut ChaCha8Rng) -> Box<dyn CoordMap> {
        let angle = if self.random && self.angle_deg != 0.0 {
            rng.gen_range(-self.angle_deg.abs()..=self.angle_deg.abs())
        } else {
            self.angle_deg
        };
        let (sin, cos) = exact_sin_cos(angle);
        Box::new(RotateMap {
            cos,
            sin,
            centre: slice_centre(dims),
        })
    }
}

struct Flip {
    axis: Axis,
    random: bool,
}

struct FlipMap {
    axis: usize,
    extent: f64,
    active: bool,
}

impl CoordMap for FlipMap {
    fn source(&self, mut p: [f64; 3]) -> [f64; 3] {
        if self.active {
            p[self.axis] = self.extent - p[self.axis];
        }
        p
    }
}

impl Augmenter for Flip {
    fn name(&self) -> &'static str {
        "flip"
    }
    fn draw(&self, dims: Dims, rng: &mut ChaCha8Rng) -> Box<dyn CoordMap> {
        let active = !self.random || rng.gen_bool(0.5);
        let axis = self.axis.index();
        Box::new(FlipMap {
            axis,
            extent: (dims.as_array()[axis] - 1) as f64,
            active,
        })
    }
}

/// In-plane zoom about the slice centre. `tilt` makes the zoom vary
/// linearly along y, a keystone-style perspective.
struct PerspectiveScale {
    scale: f64,
    tilt: f64,
    random: bool,
}

struct ScaleMap {
    scale: f64,
    tilt: f64,
    centre: [f64; 3],
    half_y: f64,
}

impl CoordMap for ScaleMap {
    fn source(&self, p: [f64; 3]) -> [f64; 3] {
        let dy = p[1] - self.centre[1];
        let rel = if self.half_y > 0.0 { dy / self.half_y } else { 0.0 };
        let s = self.scale * (1.0 + self.tilt * rel);
        [
            (p[0] - self.centre[0]) / s + self.centre[0],
            dy / s + self.centre[1],
            p[2],
        ]
    }
}

impl Augmenter for PerspectiveScale {
    fn name(&self) -> &'static str {
        "perspective-scale"
    }
    fn draw(&self, dims: Dims, rng: &mut ChaCha8Rng) -> Box<dyn CoordMap> {
        let (scale, tilt) = if self.random {
            let hi = self.scale.max(1.0 / self.scale);
            let s = if hi > 1.0 { rng.gen_range(1.0 / hi..=hi) } else { 1.0 };
            let t = if self.tilt != 0.0 {
                rng.gen_range(-self.tilt.abs()..=self.tilt.abs())
            } else {
                0.0
            };
            (s, t)
        } else {
            (self.scale, self.tilt)
        };
        let centre = slice_centre(dims);
        Box::new(ScaleMap {
            scale,
            tilt,
            centre,
            half_y: centre[1],
        })
    }
}

/// Smooth in-plane displacement field: random vectors on a coarse
/// `grid x grid` lattice, upsampled with Catmull-Rom interpolation.
struct Elastic {
    magnitude: f64,
    grid: usize,
}

struct ElasticMap {
    grid: usize,
    dx: Vec<f64>,
    dy: Vec<f64>,
    extent: [f64; 2],
}

fn catmull_rom(p: [f64; 4], t: f64) -> f64 {
    let t2 = t * t;
    let t3 = t2 * t;
    0.5 * ((2.0 * p[1])
        + (-p[0] + p[2]) * t
        + (2.0 * p[0] - 5.0 * p[1] + 4.0 * p[2] - p[3]) * t2
        + (-p[0] + 3.0 * p[1] - 3.0 * p[2] + p[3]) * t3)
}

impl ElasticMap {
    fn sample(&self, field: &[f64], x: f64, y: f64) -> f64 {
        let g = self.grid;
        let gx = if self.extent[0] > 0.0 {
            x / self.extent[0] * (g - 1) as f64
        } else {
            0.0
        };
        let gy = if self.extent[1] > 0.0 {
            y / self.extent[1] * (g - 1) as f64
        } else {
            0.0
        };
        let (ix, tx) = (gx.floor() as i64, gx - gx.floor());
        let (iy, ty) = (gy.floor() as i64, gy - gy.floor());
        let at = |i: i64, j: i64| {
            let i = i.clamp(0, g as i64 - 1) as usize;
            let j = j.clamp(0, g as i64 - 1) as usize;
            field[j * g + i]
        };
        let rows: [f64; 4] = std::array::from_fn(|r| {
            let j = iy - 1 + r as i64;
            catmull_rom(std::array::from_fn(|c| at(ix - 1 + c as i64, j)), tx)
        });
        catmull_rom(rows, ty)
    }
}

impl CoordMap for ElasticMap {
    fn source(&self, p: [f64; 3]) -> [f64; 3] {
        [
            p[0] + self.sample(&self.dx, p[0], p[1]),
            p[1] + self.sample(&self.dy, p[0], p[1]),
            p[2],
        ]
    }
}

impl Augmenter for Elastic {
    fn name(&self) -> &'static str {
        "elastic"
    }
    fn draw(&self, dims: Dims, rng: &mut ChaCha8Rng) -> Box<dyn CoordMap> {
        let n = self.grid * self.grid;
        let mut field = || -> Vec<f64> {
            (0..n)
                .map(|_| {
                    if self.magnitude == 0.0 {
                        0.0
                    } else {
                        rng.gen_range(-self.magnitude..=self.magnitude)
                    }
                })
                .collect()
        };
        let dx = field();
        let dy = field();
        Box::new(ElasticMap {
            grid: self.grid,
            dx,
            dy,
            extent: [(dims.nx - 1) as f64, (dims.ny - 1) as f64],
        })
    }
}

fn finite(p: &Params, key: &str, default: f64) -> Result<f64> {
    let v: f64 = p.get_or(key, default)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::InvalidSpec(format!("`{key}` must be finite")))
    }
}

/// Built-in augmentations: `rotate`, `elastic`, `perspective-scale`, `flip`.
pub fn augmenters() -> Registry<dyn Augmenter> {
    let mut reg: Registry<dyn Augmenter> = Registry::new("augmentation");
    reg.register(
        "rotate",
        "xy-plane rotation (angle_deg; random=true draws from ±angle_deg)",
        |p, _| {
            p.expect_keys(&["angle_deg", "random"])?;
            Ok(Box::new(Rotate {
                angle_deg: finite(p, "angle_deg", 0.0)?,
                random: p.get_or("random", false)?,
            }) as Box<dyn Augmenter>)
        },
    );
    reg.register(
        "elastic",
        "smooth in-plane deformation (magnitude in voxels, grid control points per axis)",
        |p, _| {
            p.expect_keys(&["magnitude", "grid"])?;
            let magnitude = finite(p, "magnitude", 2.0)?;
            let grid: usize = p.get_or("grid", 4)?;
            if magnitude < 0.0 || grid < 2 {
                return Err(Error::InvalidSpec("elastic needs magnitude >= 0 and grid >= 2".into()));
            }
            Ok(Box::new(Elastic { magnitude, grid }) as Box<dyn Augmenter>)
        },
    );
    reg.register(
        "perspective-scale",
        "in-plane zoom (scale > 0, tilt in [0, 1); random=true draws within the bounds)",
        |p, _| {
            p.expect_keys(&["scale", "tilt", "random"])?;
            let scale = finite(p, "scale", 1.0)?;
            let tilt = finite(p, "tilt", 0.0)?;
            if scale <= 0.0 || tilt.abs() >= 1.0 {
                return Err(Error::InvalidSpec(
                    "perspective-scale needs scale > 0 and |tilt| < 1".into(),
                ));
            }
            Ok(Box::new(PerspectiveScale {
                scale,
                tilt,
                random: p.get_or("random", false)?,
            }) as Box<dyn Augmenter>)
        },
    );
    reg.register(
        "flip",
        "mirror along axis=x|y|z (random=true flips with p=0.5)",
        |p, _| {
            p.expect_keys(&["axis", "random"])?;
            let axis: Axis = p
                .raw("axis")
                .ok_or_else(|| Error::InvalidSpec("flip needs `axis`".into()))?
                .parse()?;
            Ok(Box::new(Flip {
                axis,
                random: p.get_or("random", false)?,
            }) as Box<dyn Augmenter>)
        },
    );
    reg
}

/// Resamples a volume (trilinear) and its mask (nearest neighbour) through
/// the same map. Samples outside the grid read as 0 / background.
pub fn resample(v: &Volume, m: &Mask, map: &dyn CoordMap) -> Result<(Volume, Mask)> {
    m.check_volume(v)?;
    let dims = v.dims();
    let d = dims.as_array();
    let plane = dims.nx * dims.ny;
    let slices: Vec<(Vec<f64>, Vec<bool>)> = (0..dims.nz)
        .into_par_iter()
        .map(|iz| {
            let mut vals = Vec::with_capacity(plane);
            let mut bits = Vec::with_capacity(plane);
            for iy in 0..dims.ny {
                for ix in 0..dims.nx {
                    let s = map.source([ix as f64, iy as f64, iz as f64]);
                    vals.push(trilinear(v, d, s));
                    bits.push(nearest(m, d, s));
                }
            }
            (vals, bits)
        })
        .collect();
    let mut values = Vec::with_capacity(dims.len());
    let mut bits = Vec::with_capacity(dims.len());
    for (v_, b) in slices {
        values.extend(v_);
        bits.extend(b);
    }
    Ok((v.with_values(values), Mask::new(dims, m.spacing(), bits)?))
}

fn inside(d: [usize; 3], s: [f64; 3]) -> bool {
    (0..3).all(|a| s[a] >= 0.0 && s[a] <= (d[a] - 1) as f64)
}

fn trilinear(v: &Volume, d: [usize; 3], s: [f64; 3]) -> f64 {
    if !inside(d, s) {
        return 0.0;
    }
    let base: [usize; 3] = std::array::from_fn(|a| s[a].floor() as usize);
    let frac: [f64; 3] = std::array::from_fn(|a| s[a] - base[a] as f64);
    let mut acc = 0.0;
    for corner in 0..8 {
        let mut w = 1.0;
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let hi = (corner >> a) & 1 == 1;
            let f = if hi { frac[a] } else { 1.0 - frac[a] };
            if f == 0.0 {
                w = 0.0;
                break;
            }
            w *= f;
            idx[a] = if hi { (base[a] + 1).min(d[a] - 1) } else { base[a] };
        }
        if w != 0.0 {
            acc += w * v.get(idx[0], idx[1], idx[2]);
        }
    }
    acc
}

fn nearest(m: &Mask, d: [usize; 3], s: [f64; 3]) -> bool {
    let r: [f64; 3] = std::array::from_fn(|a| (s[a] + 0.5).floor());
    if !inside(d, r) {
        return false;
    }
    m.get(r[0] as usize, r[1] as usize, r[2] as usize)
}

fn mix_seed(spec_seed: u64, variant_seed: u64) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix(spec_seed ^ splitmix(variant_seed))
}

/// Applies one spec with an explicit seed.
pub fn apply_augmentation(v: &Volume, m: &Mask, spec: &AugmentationSpec) -> Result<(Volume, Mask)> {
    let aug = augmenters().build(&spec.strategy(), &())?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let map = aug.draw(v.dims(), &mut rng);
    resample(v, m, map.as_ref())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AugmentationMode {
    Offline,
    OnlineStream,
}

/// Chains augmentation specs over a registered base pair. Variant `i` uses
/// seed `base_seed + i` mixed with each spec's own seed, so the offline set
/// and the online stream agree draw for draw.
pub struct AugmentationPipeline {
    specs: Vec<AugmentationSpec>,
    augmenters: Vec<Box<dyn Augmenter>>,
    base: Option<(Volume, Mask)>,
    base_seed: u64,
}

impl AugmentationPipeline {
    pub fn new(specs: Vec<AugmentationSpec>, base_seed: u64) -> Result<Self> {
        let reg = augmenters();
        let augmenters = specs
            .iter()
            .map(|s| reg.build(&s.strategy(), &()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            specs,
            augmenters,
            base: None,
            base_seed,
        })
    }

    pub fn register_base(&mut self, v: Volume, m: Mask) -> Result<()> {
        m.check_volume(&v)?;
        self.base = Some((v, m));
        Ok(())
    }

    pub fn variant(&self, index: u64) -> Result<(Volume, Mask)> {
        let (v, m) = self.base.as_ref().ok_or(Error::NoBaseData)?;
        let variant_seed = self.base_seed.wrapping_add(index);
        let mut cur = (v.clone(), m.clone());
        for (spec, aug) in self.specs.iter().zip(&self.augmenters) {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, variant_seed));
            let map = aug.draw(cur.0.dims(), &mut rng);
            cur = resample(&cur.0, &cur.1, map.as_ref())?;
        }
        Ok(cur)
    }

    /// Materialises exactly `count` variants.
    pub fn offline(&self, count: usize) -> Result<Vec<(Volume, Mask)>> {
        if self.base.is_none() {
            return Err(Error::NoBaseData);
        }
        (0..count as u64).map(|i| self.variant(i)).collect()
    }

    /// Unbounded deterministic stream of variants.
    pub fn online(&self) -> Result<impl Iterator<Item = Result<(Volume, Mask)>> + '_> {
        if self.base.is_none() {
            return Err(Error::NoBaseData);
        }
        Ok((0u64..).map(move |i| self.variant(i)))
    }

    /// `count` variants in either mode.
    pub fn run(&self, mode: AugmentationMode, count: usize) -> Result<Vec<(Volume, Mask)>> {
        match mode {
            AugmentationMode::Offline => self.offline(count),
            AugmentationMode::OnlineStream => self.online()?.take(count).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Spacing;
    use proptest::prelude::*;

    fn slice_volume(nx: usize, ny: usize, kind: IntensityType, f: impl Fn(usize, usize) -> f64) -> Volume {
        Volume::from_fn(Dims::new(nx, ny, 1), Spacing::default(), kind, |p| f(p.ix, p.iy)).unwrap()
    }

    /// Plain global histogram equalisation with integer arithmetic:
    /// `round((L - 1) * cdf(v) / n)`, half rounding up.
    fn histogram_equalize(values: &[u64], levels: u64) -> Vec<u64> {
        let n = values.len() as u64;
        let mut hist = vec![0u64; levels as usize];
        for &v in values {
            hist[v as usize] += 1;
        }
        let mut cdf = vec![0u64; levels as usize];
        let mut acc = 0;
        for (i, h) in hist.iter().enumerate() {
            acc += h;
            cdf[i] = acc;
        }
        values
            .iter()
            .map(|&v| (2 * (levels - 1) * cdf[v as usize] + n) / (2 * n))
            .collect()
    }

    #[test]
    fn volume_op_registry() {
        let v = slice_volume(8, 8, IntensityType::U8, |x, y| (x * 8 + y) as f64);
        let ops = volume_ops();
        let n = ops.build_str("normalize", &()).unwrap().apply(&v).unwrap();
        assert_eq!(n, normalize_intensity(&v).unwrap());
        let c = ops.build_str("clahe:tiles_x=2,tiles_y=2,clip=3", &()).unwrap();
        assert_eq!(c.apply(&v).unwrap(), clahe_slicewise(&v, (2, 2), 3.0).unwrap());
        let d = ops.build_str("downsample:x=2,y=2", &()).unwrap().apply(&v).unwrap();
        assert_eq!(d.dims(), Dims::new(4, 4, 1));
        assert!(ops.build_str("downsample:x=0", &()).is_err());
        assert!(ops.build_str("sharpen", &()).is_err());
    }

    #[test]
    fn normalize_cases() {
        let v = slice_volume(2, 1, IntensityType::U8, |x, _| if x == 0 { 0.0 } else { 255.0 });
        assert_eq!(normalize_intensity(&v).unwrap().to_f64(), vec![0.0, 1.0]);
        let v = slice_volume(3, 1, IntensityType::U8, |x, _| 10.0 * (x + 1) as f64);
        let n = normalize_intensity(&v).unwrap();
        assert_eq!(n.to_f64(), vec![0.0, 0.5, 1.0]);
        assert_eq!(normalize_intensity(&n).unwrap(), n);
        let flat = slice_volume(3, 3, IntensityType::U8, |_, _| 4.0);
        assert!(matches!(normalize_intensity(&flat), Err(Error::ConstantVolume)));
    }

    #[test]
    fn clahe_constant_slice() {
        let v = slice_volume(16, 16, IntensityType::U8, |_, _| 77.0);
        let out = clahe_slicewise(&v, (4, 4), 2.0).unwrap();
        let vals = out.to_f64();
        assert!(vals.iter().all(|&x| x == vals[0]));
    }

    #[test]
    fn clahe_single_tile_unclipped_is_histogram_equalisation() {
        let v = slice_volume(13, 9, IntensityType::U8, |x, y| ((x * 7 + y * 13) % 40) as f64);
        let out = clahe_slicewise(&v, (1, 1), f64::INFINITY).unwrap();
        let input: Vec<u64> = v.to_f64().iter().map(|&x| x as u64).collect();
        let expected = histogram_equalize(&input, 40);
        let got: Vec<u64> = out.to_f64().iter().map(|&x| x as u64).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn clahe_checkerboard_two_levels() {
        let v = slice_volume(
            8,
            8,
            IntensityType::U8,
            |x, y| if (x + y) % 2 == 0 { 20.0 } else { 200.0 },
        );
        let out = clahe_slicewise(&v, (1, 1), f64::INFINITY).unwrap().to_f64();
        let lo = out[0];
        let hi = out[1];
        assert!(lo < hi);
        assert!(out.iter().all(|&x| x == lo || x == hi));
        // half the pixels are <= 20: round(200 * 0.5) = 100
        assert_eq!((lo, hi), (100.0, 200.0));
    }

    #[test]
    fn clahe_errors_and_range() {
        let v = slice_volume(4, 4, IntensityType::U16, |x, y| (x * 1000 + y) as f64);
        assert!(matches!(
            clahe_slicewise(&v, (5, 1), 2.0),
            Err(Error::TooManyTiles { .. })
        ));
        assert!(matches!(
            clahe_slicewise(&v, (0, 1), 2.0),
            Err(Error::TooManyTiles { .. })
        ));
        assert!(clahe_slicewise(&v, (2, 2), 1.0).is_err());
        let out = clahe_slicewise(&v, (2, 2), 3.0).unwrap();
        let (lo, hi) = out.min_max();
        assert!(lo >= 0.0 && hi <= v.min_max().1);
        let f = slice_volume(16, 16, IntensityType::F32, |x, y| (x as f64).sin() + y as f64);
        let out = clahe_slicewise(&f, (4, 4), 2.5).unwrap();
        let (flo, fhi) = f.min_max();
        let (olo, ohi) = out.min_max();
        assert!(olo >= flo - 1e-6 && ohi <= fhi + 1e-6);
    }

    fn pair(n: usize, nz: usize) -> (Volume, Mask) {
        let d = Dims::new(n, n, nz);
        let v = Volume::from_fn(d, Spacing::default(), IntensityType::F32, |p| {
            (p.ix * 3 + p.iy * 5 + p.iz * 11) as f64
        })
        .unwrap();
        let m = Mask::from_fn(d, Spacing::default(), |p| p.ix < n / 2 && p.iy + 1 < n && p.iz % 2 == 0).unwrap();
        (v, m)
    }

    fn spec(s: &str, seed: u64) -> AugmentationSpec {
        let st: StrategySpec = s.parse().unwrap();
        AugmentationSpec::new(&st.name, st.params, seed)
    }

    #[test]
    fn identity_transforms() {
        let (v, m) = pair(9, 3);
        for s in ["rotate:angle_deg=0", "elastic:magnitude=0", "perspective-scale:scale=1"] {
            let (v2, m2) = apply_augmentation(&v, &m, &spec(s, 5)).unwrap();
            assert_eq!(v2, v, "{s}");
            assert_eq!(m2, m, "{s}");
        }
    }

    #[test]
    fn flip_is_involution() {
        let (v, m) = pair(7, 4);
        for axis in ["x", "y", "z"] {
            let s = spec(&format!("flip:axis={axis}"), 0);
            let (v1, m1) = apply_augmentation(&v, &m, &s).unwrap();
            assert_ne!(m1, m);
            let (v2, m2) = apply_augmentation(&v1, &m1, &s).unwrap();
            assert_eq!((v2, m2), (v.clone(), m.clone()));
        }
    }

    #[test]
    fn quarter_turns_cycle() {
        let (v, m) = pair(8, 2);
        let s = spec("rotate:angle_deg=90", 0);
        let mut cur = (v.clone(), m.clone());
        for k in 1..=4 {
            cur = apply_augmentation(&cur.0, &cur.1, &s).unwrap();
            if k < 4 {
                assert_ne!(cur.1, m);
            }
            assert_eq!(cur.1.count(), m.count());
        }
        assert_eq!(cur, (v.clone(), m.clone()));
        let (_, half) = apply_augmentation(&v, &m, &spec("rotate:angle_deg=180", 0)).unwrap();
        let twice = {
            let a = apply_augmentation(&v, &m, &s).unwrap();
            apply_augmentation(&a.0, &a.1, &s).unwrap().1
        };
        assert_eq!(half, twice);
    }

    #[test]
    fn elastic_is_deterministic_and_binary() {
        let (v, m) = pair(16, 2);
        let s = spec("elastic:magnitude=2.0,grid=4", 42);
        let a = apply_augmentation(&v, &m, &s).unwrap();
        let b = apply_augmentation(&v, &m, &s).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0, v);
        let other = apply_augmentation(&v, &m, &spec("elastic:magnitude=2.0,grid=4", 43)).unwrap();
        assert_ne!(other.0, a.0);
    }

    #[test]
    fn invalid_specs() {
        let (v, m) = pair(4, 1);
        for s in [
            "flip",
            "flip:axis=w",
            "elastic:grid=1",
            "elastic:magnitude=-1",
            "perspective-scale:scale=0",
            "rotate:angle_deg=inf",
            "rotate:speed=3",
            "shear",
        ] {
            assert!(apply_augmentation(&v, &m, &spec(s, 0)).is_err(), "{s}");
        }
    }

    #[test]
    fn pipeline_modes_agree() {
        let (v, m) = pair(10, 2);
        let specs = vec![
            spec("rotate:angle_deg=15,random=true", 1),
            spec("flip:axis=x,random=true", 2),
            spec("elastic:magnitude=1.5", 3),
        ];
        let mut p = AugmentationPipeline::new(specs, 100).unwrap();
        assert!(matches!(p.offline(1), Err(Error::NoBaseData)));
        p.register_base(v, m).unwrap();
        assert!(p.offline(0).unwrap().is_empty());
        let off = p.offline(5).unwrap();
        let on: Vec<_> = p.online().unwrap().take(5).collect::<Result<_>>().unwrap();
        assert_eq!(off, on);
        assert_eq!(p.run(AugmentationMode::OnlineStream, 5).unwrap(), off);
        assert_ne!(off[0], off[1]);
    }

    #[test]
    fn flip_pipelines_preserve_mask_count() {
        let (v, m) = pair(9, 3);
        let specs = vec![spec("flip:axis=x,random=true", 1), spec("flip:axis=z,random=true", 2)];
        let mut p = AugmentationPipeline::new(specs, 7).unwrap();
        p.register_base(v, m.clone()).unwrap();
        for (_, mm) in p.offline(6).unwrap() {
            assert_eq!(mm.count(), m.count());
        }
    }

    #[test]
    fn config_parsing() {
        let text = r#"
            [[augmentation]]
            kind = "rotate"
            angle_deg = 10.0
            random = true
            seed = 4

            [[augmentation]]
            kind = "flip"
            axis = "y"
            seed = 9
        "#;
        let specs = parse_augmentation_config(text).unwrap();
        assert_eq!(specs.len(), 2);
        assert_eq!(specs[0].kind, "rotate");
        assert_eq!(specs[0].params.get::<f64>("angle_deg").unwrap(), Some(10.0));
        assert_eq!(specs[1].params.raw("axis"), Some("y"));
        assert_eq!(specs[1].seed, 9);
        assert!(parse_augmentation_config("[[augmentation]]\nkind = \"flip\"\n").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn masks_stay_binary_and_deterministic(seed in any::<u64>(), angle in -180.0f64..180.0, scale in 0.5f64..2.0) {
            let (v, m) = pair(8, 2);
            let specs = vec![
                spec(&format!("rotate:angle_deg={angle}"), seed),
                spec(&format!("perspective-scale:scale={scale},tilt=0.2"), seed),
                spec("elastic:magnitude=1.0", seed),
            ];
            let mut p = AugmentationPipeline::new(specs, seed).unwrap();
            p.register_base(v, m).unwrap();
            let a = p.variant(3).unwrap();
            let b = p.variant(3).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.1.len(), 128);
        }
    }
}
