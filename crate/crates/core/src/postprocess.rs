//! Binary mask clean-up: connected components, morphology, majority smoothing.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::{Params, Registry};
use crate::volume::{Dims, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity {
    Six,
    #[default]
    TwentySix,
}

impl Connectivity {
    pub fn from_count(n: u32) -> Result<Self> {
        match n {
            6 => Ok(Connectivity::Six),
            26 => Ok(Connectivity::TwentySix),
            _ => Err(Error::InvalidSpec(format!("connectivity must be 6 or 26, got {n}"))),
        }
    }

    pub fn offsets(&self) -> &'static [[i64; 3]] {
        match self {
            Connectivity::Six => &FACE_OFFSETS,
            Connectivity::TwentySix => &ALL_OFFSETS,
        }
    }
}

pub(crate) const FACE_OFFSETS: [[i64; 3]; 6] = [[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]];

const ALL_OFFSETS: [[i64; 3]; 26] = {
    let mut out = [[0i64; 3]; 26];
    let mut n = 0;
    let mut dz = -1;
    while dz <= 1 {
        let mut dy = -1;
        while dy <= 1 {
            let mut dx = -1;
            while dx <= 1 {
                if !(dx == 0 && dy == 0 && dz == 0) {
                    out[n] = [dx, dy, dz];
                    n += 1;
                }
                dx += 1;
            }
            dy += 1;
        }
        dz += 1;
    }
    out
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementShape {
    /// L1 ball: the 6-connected cross grown `radius` times.
    Cross,
    /// Chebyshev ball: a `(2r+1)^3` cube.
    Cube,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuringElement {
    pub shape: ElementShape,
    pub radius: usize,
}

impl StructuringElement {
    pub fn new(shape: ElementShape, radius: usize) -> Result<Self> {
        if radius == 0 {
            return Err(Error::InvalidSpec("structuring element radius must be >= 1".into()));
        }
        Ok(Self { shape, radius })
    }

    pub fn cross(radius: usize) -> Self {
        Self::new(ElementShape::Cross, radius).expect("radius >= 1")
    }

    pub fn cube(radius: usize) -> Self {
        Self::new(ElementShape::Cube, radius).expect("radius >= 1")
    }

    /// All offsets covered by the element, origin included.
    pub fn offsets(&self) -> Vec<[i64; 3]> {
        let r = self.radius as i64;
        let mut out = Vec::new();
        for dz in -r..=r {
            for dy in -r..=r {
                for dx in -r..=r {
                    let keep = match self.shape {
                        ElementShape::Cube => true,
                        ElementShape::Cross => dx.abs() + dy.abs() + dz.abs() <= r,
                    };
                    if keep {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

/// Labels foreground components. Labels start at 1 and are assigned in
/// increasing order of each component's smallest linear index; background
/// is 0. Returns the label grid and the size of each component (index
/// `label - 1`).
pub fn label_components(m: &Mask, connectivity: Connectivity) -> (Vec<u32>, Vec<usize>) {
    let dims = m.dims();
    let bits = m.bits();
    let mut labels = vec![0u32; bits.len()];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    let offsets = connectivity.offsets();
    for seed in 0..bits.len() {
        if !bits[seed] || labels[seed] != 0 {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        labels[seed] = label;
        queue.push_back(seed);
        let mut size = 0usize;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let p = dims.coords(i).as_signed();
            for o in offsets {
                if let Some(j) = dims.checked_index([p[0] + o[0], p[1] + o[1], p[2] + o[2]]) {
                    if bits[j] && labels[j] == 0 {
                        labels[j] = label;
                        queue.push_back(j);
                    }
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

pub fn component_count(m: &Mask, connectivity: Connectivity) -> usize {
    label_components(m, connectivity).1.len()
}

/// Keeps only the largest component; ties go to the component whose
/// smallest linear index comes first.
pub fn largest_component(m: &Mask, connectivity: Connectivity) -> Mask {
    let (labels, sizes) = label_components(m, connectivity);
    let Some(best) = sizes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i as u32 + 1)
    else {
        return m.clone();
    };
    Mask::from_parts_unchecked(m.dims(), m.spacing(), labels.iter().map(|&l| l == best).collect())
}

pub fn dilate(m: &Mask, se: StructuringElement) -> Mask {
    let bits = match se.shape {
        ElementShape::Cube => box_filter(m.dims(), m.bits(), se.radius, false, Reduce::Any),
        ElementShape::Cross => {
            let mut cur = m.bits().to_vec();
            for _ in 0..se.radius {
                cur = cross_step(m.dims(), &cur, Reduce::Any);
            }
            cur
        }
    };
    Mask::from_parts_unchecked(m.dims(), m.spacing(), bits)
}

/// Erosion; voxels outside the grid count as background.
pub fn erode(m: &Mask, se: StructuringElement) -> Mask {
    let bits = match se.shape {
        ElementShape::Cube => box_filter(m.dims(), m.bits(), se.radius, false, Reduce::All),
        ElementShape::Cross => {
            let mut cur = m.bits().to_vec();
            for _ in 0..se.radius {
                cur = cross_step(m.dims(), &cur, Reduce::All);
            }
            cur
        }
    };
    Mask::from_parts_unchecked(m.dims(), m.spacing(), bits)
}

/// Dilation then erosion, computed on a grid padded by the element radius
/// so that foreground touching the border survives.
pub fn closing(m: &Mask, se: StructuringElement) -> Mask {
    let r = se.radius;
    let padded = pad(m, r);
    crop_padding(&erode(&dilate(&padded, se), se), m.dims(), r)
}

fn pad(m: &Mask, r: usize) -> Mask {
    let d = m.dims();
    let pd = Dims::new(d.nx + 2 * r, d.ny + 2 * r, d.nz + 2 * r);
    let mut bits = vec![false; pd.len()];
    for (i, &b) in m.bits().iter().enumerate() {
        if b {
            let p = d.coords(i);
            bits[pd.index(p.ix + r, p.iy + r, p.iz + r)] = true;
        }
    }
    Mask::from_parts_unchecked(pd, m.spacing(), bits)
}

fn crop_padding(m: &Mask, d: Dims, r: usize) -> Mask {
    let bits = (0..d.len())
        .map(|i| {
            let p = d.coords(i);
            m.get(p.ix + r, p.iy + r, p.iz + r)
        })
        .collect();
    Mask::from_parts_unchecked(d, m.spacing(), bits)
}

pub fn opening(m: &Mask, se: StructuringElement) -> Mask {
    dilate(&erode(m, se), se)
}

#[derive(Clone, Copy)]
enum Reduce {
    Any,
    All,
}

fn cross_step(dims: Dims, bits: &[bool], reduce: Reduce) -> Vec<bool> {
    (0..bits.len())
        .map(|i| {
            let p = dims.coords(i).as_signed();
            let neighbours = FACE_OFFSETS.iter().map(|o| {
                dims.checked_index([p[0] + o[0], p[1] + o[1], p[2] + o[2]])
                    .map(|j| bits[j])
            });
            match reduce {
                Reduce::Any => bits[i] || neighbours.into_iter().any(|b| b == Some(true)),
                Reduce::All => bits[i] && neighbours.into_iter().all(|b| b == Some(true)),
            }
        })
        .collect()
}

/// Separable any/all filter over a `(2r+1)^3` window. `outside` is the
/// value assumed beyond the grid.
fn box_filter(dims: Dims, bits: &[bool], r: usize, outside: bool, reduce: Reduce) -> Vec<bool> {
    let d = dims.as_array();
    let strides = [1, d[0], d[0] * d[1]];
    let mut cur = bits.to_vec();
    for axis in 0..3 {
        let n = d[axis];
        let stride = strides[axis];
        let mut next = vec![false; cur.len()];
        let mut line = vec![false; n];
        for start in line_starts(dims, axis) {
            for (k, slot) in line.iter_mut().enumerate() {
                *slot = cur[start + k * stride];
            }
            for k in 0..n {
                let lo = k as i64 - r as i64;
                let hi = k as i64 + r as i64;
                let out_of_range = lo < 0 || hi >= n as i64;
                let window = &line[lo.max(0) as usize..=(hi.min(n as i64 - 1) as usize)];
                next[start + k * stride] = match reduce {
                    Reduce::Any => window.iter().any(|&b| b) || (out_of_range && outside),
                    Reduce::All => window.iter().all(|&b| b) && (!out_of_range || outside),
                };
            }
        }
        cur = next;
    }
    cur
}

/// Linear indices of the first voxel of every grid line along `axis`.
pub(crate) fn line_starts(dims: Dims, axis: usize) -> Vec<usize> {
    let d = dims.as_array();
    let mut out = Vec::new();
    match axis {
        0 => {
            for iz in 0..d[2] {
                for iy in 0..d[1] {
                    out.push(dims.index(0, iy, iz));
                }
            }
        }
        1 => {
            for iz in 0..d[2] {
                for ix in 0..d[0] {
                    out.push(dims.index(ix, 0, iz));
                }
            }
        }
        _ => {
            for iy in 0..d[1] {
                for ix in 0..d[0] {
                    out.push(dims.index(ix, iy, 0));
                }
            }
        }
    }
    out
}

/// Majority filter over the 3x3x3 neighbourhood (centre included), counting
/// only voxels inside the grid. Ties keep the current value.
pub fn smooth_surface(m: &Mask, iterations: usize) -> Mask {
    let dims = m.dims();
    let d = dims.as_array();
    let strides = [1, d[0], d[0] * d[1]];
    let mut cur = m.bits().to_vec();
    for _ in 0..iterations {
        let mut counts: Vec<u8> = cur.iter().map(|&b| b as u8).collect();
        for axis in 0..3 {
            let n = d[axis];
            let stride = strides[axis];
            let mut next = vec![0u8; counts.len()];
            for start in line_starts(dims, axis) {
                for k in 0..n {
                    let mut s = counts[start + k * stride];
                    if k > 0 {
                        s += counts[start + (k - 1) * stride];
                    }
                    if k + 1 < n {
                        s += counts[start + (k + 1) * stride];
                    }
                    next[start + k * stride] = s;
                }
            }
            counts = next;
        }
        let window = |k: usize, n: usize| 1 + (k > 0) as usize + (k + 1 < n) as usize;
        let next: Vec<bool> = (0..cur.len())
            .map(|i| {
                let p = dims.coords(i);
                let total = window(p.ix, d[0]) * window(p.iy, d[1]) * window(p.iz, d[2]);
                let fg = counts[i] as usize * 2;
                if fg > total {
                    true
                } else if fg < total {
                    false
                } else {
                    cur[i]
                }
            })
            .collect();
        if next == cur {
            break;
        }
        cur = next;
    }
    Mask::from_parts_unchecked(dims, m.spacing(), cur)
}

/// A named mask-to-mask operator, chained by the `postprocess` workflow.
pub trait MaskOp: Send + Sync {
    fn name(&self) -> String;
    fn apply(&self, m: &Mask) -> Mask;
}

struct LargestComponentOp(Connectivity);
struct MorphOp {
    kind: &'static str,
    se: StructuringElement,
}
struct SmoothOp(usize);

impl MaskOp for LargestComponentOp {
    fn name(&self) -> String {
        let n = match self.0 {
            Connectivity::Six => 6,
            Connectivity::TwentySix => 26,
        };
        format!("largest-component:connectivity={n}")
    }
    fn apply(&self, m: &Mask) -> Mask {
        largest_component(m, self.0)
    }
}

impl MaskOp for MorphOp {
    fn name(&self) -> String {
        let shape = match self.se.shape {
            ElementShape::Cross => "cross",
            ElementShape::Cube => "cube",
        };
        format!("{}:radius={},shape={shape}", self.kind, self.se.radius)
    }
    fn apply(&self, m: &Mask) -> Mask {
        match self.kind {
            "dilate" => dilate(m, self.se),
            "erode" => erode(m, self.se),
            "close" => closing(m, self.se),
            _ => opening(m, self.se),
        }
    }
}

impl MaskOp for SmoothOp {
    fn name(&self) -> String {
        format!("smooth:iterations={}", self.0)
    }
    fn apply(&self, m: &Mask) -> Mask {
        smooth_surface(m, self.0)
    }
}

fn element_from(p: &Params) -> Result<StructuringElement> {
    p.expect_keys(&["shape", "radius"])?;
    let shape = match p.raw("shape").unwrap_or("cross") {
        "cross" => ElementShape::Cross,
        "cube" => ElementShape::Cube,
        other => return Err(Error::InvalidSpec(format!("unknown element shape `{other}`"))),
    };
    StructuringElement::new(shape, p.get_or("radius", 1)?)
}

/// Built-in operators: `largest-component`, `dilate`, `erode`, `close`,
/// `open`, `smooth`.
pub fn mask_ops() -> Registry<dyn MaskOp> {
    let mut reg: Registry<dyn MaskOp> = Registry::new("postprocess operator");
    reg.register(
        "largest-component",
        "keep the largest connected component (connectivity=6|26, default 26)",
        |p, _| {
            p.expect_keys(&["connectivity"])?;
            let c = Connectivity::from_count(p.get_or("connectivity", 26)?)?;
            Ok(Box::new(LargestComponentOp(c)) as Box<dyn MaskOp>)
        },
    );
    for (kind, summary) in [
        ("dilate", "binary dilation (shape=cross|cube, radius>=1)"),
        ("erode", "binary erosion; grid border is background"),
        ("close", "dilation followed by erosion"),
        ("open", "erosion followed by dilation"),
    ] {
        reg.register(kind, summary, move |p, _| {
            Ok(Box::new(MorphOp {
                kind,
                se: element_from(p)?,
            }) as Box<dyn MaskOp>)
        });
    }
    reg.register("smooth", "26-neighbourhood majority filter (iterations>=1)", |p, _| {
        p.expect_keys(&["iterations"])?;
        let n: usize = p.get_or("iterations", 1)?;
        if n == 0 {
            return Err(Error::InvalidSpec("iterations must be >= 1".into()));
        }
        Ok(Box::new(SmoothOp(n)) as Box<dyn MaskOp>)
    });
    reg
}
