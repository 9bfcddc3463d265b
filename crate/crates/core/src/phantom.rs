//! Synthetic atrium phantoms: an ellipsoidal body with attached vein
//! tubes, cut by a valve plane, filled with Gaussian intensities.
//!
//! Geometry is in millimetres with voxel `(0, 0, 0)` centred at the origin.
//! A voxel is foreground iff its centre lies inside the solid.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quality::QualityBand;
use crate::volume::{Dims, IntensityType, Mask, Spacing, Volume, VolumeData};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center_mm: [f64; 3],
    pub semi_axes_mm: [f64; 3],
}

impl Ellipsoid {
    fn contains(&self, p: [f64; 3]) -> bool {
        (0..3)
            .map(|a| ((p[a] - self.center_mm[a]) / self.semi_axes_mm[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    }
}

/// Solid cylinder from `attach_mm` along `direction`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tube {
    pub attach_mm: [f64; 3],
    pub direction: [f64; 3],
    pub radius_mm: f64,
    pub length_mm: f64,
}

impl Tube {
    fn unit(&self) -> [f64; 3] {
        let n = self.direction.iter().map(|d| d * d).sum::<f64>().sqrt();
        self.direction.map(|d| d / n)
    }

    fn contains(&self, p: [f64; 3], u: [f64; 3]) -> bool {
        let d: [f64; 3] = std::array::from_fn(|a| p[a] - self.attach_mm[a]);
        let t = d[0] * u[0] + d[1] * u[1] + d[2] * u[2];
        if t < 0.0 || t > self.length_mm {
            return false;
        }
        let r2 = (0..3).map(|a| (d[a] - t * u[a]).powi(2)).sum::<f64>();
        r2 <= self.radius_mm * self.radius_mm
    }

    fn end(&self) -> [f64; 3] {
        let u = self.unit();
        std::array::from_fn(|a| self.attach_mm[a] + self.length_mm * u[a])
    }
}

/// Voxels with `(p - point) · normal < 0` are cut away.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub point_mm: [f64; 3],
    pub normal: [f64; 3],
}

impl Plane {
    fn keeps(&self, p: [f64; 3]) -> bool {
        (0..3).map(|a| (p[a] - self.point_mm[a]) * self.normal[a]).sum::<f64>() >= 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intensities {
    pub mu_fg: f64,
    pub sigma_fg: f64,
    pub mu_bg: f64,
    pub sigma_bg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: Dims,
    pub spacing: Spacing,
    pub body: Ellipsoid,
    pub pv_tubes: Vec<Tube>,
    pub mitral_plane: Option<Plane>,
    pub intensities: Intensities,
    pub seed: u64,
    #[serde(default)]
    pub allow_clipping: bool,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self::centered(Dims::new(576, 576, 88), Spacing::isotropic(0.625))
    }
}

impl PhantomSpec {
    /// Atrium-like default geometry centred in the given grid: a
    /// 48 x 40 x 32 mm body, four 4 mm veins and a valve cut.
    pub fn centered(dims: Dims, spacing: Spacing) -> Self {
        let d = dims.as_array();
        let c: [f64; 3] = std::array::from_fn(|a| (d[a] - 1) as f64 * spacing[a] / 2.0);
        let semi = [24.0, 20.0, 16.0];
        let pv_tubes = [(-1.0, 1.0), (1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)]
            .map(|(sx, sz)| Tube {
                attach_mm: [c[0] + sx * 14.0, c[1] + 8.0, c[2] + sz * 4.0],
                direction: [sx, 0.6, sz * 0.25],
                radius_mm: 4.0,
                length_mm: 22.0,
            })
            .to_vec();
        Self {
            dims,
            spacing,
            body: Ellipsoid {
                center_mm: c,
                semi_axes_mm: semi,
            },
            pv_tubes,
            mitral_plane: Some(Plane {
                point_mm: [c[0], c[1], c[2] - 13.0],
                normal: [0.0, 0.0, 1.0],
            }),
            intensities: Intensities {
                mu_fg: 1250.0,
                sigma_fg: 60.0,
                mu_bg: 1000.0,
                sigma_bg: 100.0,
            },
            seed: 0,
            allow_clipping: false,
        }
    }

    /// A lone sphere of `radius_mm`, no veins, no cut, noiseless.
    pub fn sphere(dims: Dims, spacing: Spacing, radius_mm: f64) -> Self {
        let mut s = Self::centered(dims, spacing);
        s.body.semi_axes_mm = [radius_mm; 3];
        s.pv_tubes.clear();
        s.mitral_plane = None;
        s.intensities.sigma_fg = 0.0;
        s.intensities.sigma_bg = 0.0;
        s
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.spacing.validate()?;
        let bad = |what: &str| Err(Error::InvalidSpec(format!("phantom {what}")));
        if self.dims.as_array().contains(&0) {
            return bad("dims must be positive");
        }
        if self.body.semi_axes_mm.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return bad("semi-axes must be positive");
        }
        for t in &self.pv_tubes {
            if !(t.radius_mm > 0.0 && t.length_mm > 0.0) || t.direction.iter().all(|&d| d == 0.0) {
                return bad("tubes need positive radius and length and a non-zero direction");
            }
        }
        let i = self.intensities;
        if !(i.mu_fg > i.mu_bg) {
            return bad("needs mu_fg > mu_bg");
        }
        if i.sigma_fg < 0.0 || i.sigma_bg < 0.0 {
            return bad("sigmas must be non-negative");
        }
        if !self.allow_clipping {
            self.check_bounds()?;
        }
        Ok(())
    }

    fn check_bounds(&self) -> Result<()> {
        let d = self.dims.as_array();
        let mut lo: [f64; 3] = std::array::from_fn(|a| self.body.center_mm[a] - self.body.semi_axes_mm[a]);
        let mut hi: [f64; 3] = std::array::from_fn(|a| self.body.center_mm[a] + self.body.semi_axes_mm[a]);
        for t in &self.pv_tubes {
            for p in [t.attach_mm, t.end()] {
                for a in 0..3 {
                    lo[a] = lo[a].min(p[a] - t.radius_mm);
                    hi[a] = hi[a].max(p[a] + t.radius_mm);
                }
            }
        }
        for a in 0..3 {
            let extent = (d[a] - 1) as f64 * self.spacing[a];
            if lo[a] < 0.0 || hi[a] > extent {
                return Err(Error::GeometryOutOfBounds(format!(
                    "solid spans [{:.3}, {:.3}] mm on axis {a}, grid covers [0, {:.3}]",
                    lo[a], hi[a], extent
                )));
            }
        }
        Ok(())
    }
}

fn mix(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Voxelises the solid only.
pub fn generate_mask(spec: &PhantomSpec) -> Result<Mask> {
    spec.validate()?;
    let dims = spec.dims;
    let s = spec.spacing;
    let units: Vec<[f64; 3]> = spec.pv_tubes.iter().map(Tube::unit).collect();
    let plane = dims.nx * dims.ny;
    let bits: Vec<bool> = (0..dims.nz)
        .into_par_iter()
        .flat_map_iter(|iz| {
            let units = &units;
            (0..plane).map(move |i| {
                let p = [
                    (i % dims.nx) as f64 * s[0],
                    (i / dims.nx) as f64 * s[1],
                    iz as f64 * s[2],
                ];
                let inside = spec.body.contains(p) || spec.pv_tubes.iter().zip(units).any(|(t, &u)| t.contains(p, u));
                inside && spec.mitral_plane.is_none_or(|pl| pl.keeps(p))
            })
        })
        .collect();
    Mask::new(dims, s, bits)
}

/// Scan and label. The same spec always yields bit-identical output.
pub fn generate(spec: &PhantomSpec) -> Result<(Volume, Mask)> {
    let mask = generate_mask(spec)?;
    let volume = fill_intensities(spec, &mask)?;
    Ok((volume, mask))
}

fn fill_intensities(spec: &PhantomSpec, mask: &Mask) -> Result<Volume> {
    let dims = spec.dims;
    let i = spec.intensities;
    let fg = Normal::new(i.mu_fg, i.sigma_fg).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let bg = Normal::new(i.mu_bg, i.sigma_bg).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let plane = dims.nx * dims.ny;
    let max = IntensityType::U16.max_level().unwrap_or(f64::MAX);
    let slices: Vec<Vec<u16>> = mask
        .bits()
        .par_chunks(plane)
        .enumerate()
        .map(|(iz, bits)| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(spec.seed, iz as u64));
            bits.iter()
                .map(|&b| {
                    let v = if b { fg.sample(&mut rng) } else { bg.sample(&mut rng) };
                    v.round().clamp(0.0, max) as u16
                })
                .collect()
        })
        .collect();
    Volume::new(dims, spec.spacing, VolumeData::U16(slices.concat()))
}

/// Cohort jitter and tier targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortVariation {
    /// Uniform jitter of the body centre, each axis, in mm.
    pub center_jitter_mm: f64,
    /// Relative jitter of the semi-axes: each scaled by `U(1 - f, 1 + f)`.
    pub axis_jitter: f64,
    /// Fractions of high, medium and low quality members.
    pub tier_fractions: [f64; 3],
    /// SNR each tier aims at.
    pub tier_snr: [f64; 3],
}

impl Default for CohortVariation {
    fn default() -> Self {
        Self {
            center_jitter_mm: 2.0,
            axis_jitter: 0.1,
            tier_fractions: [0.15, 0.70, 0.15],
            tier_snr: [0.5, 2.0, 4.5],
        }
    }
}

const TIERS: [QualityBand; 3] = [QualityBand::High, QualityBand::Medium, QualityBand::Low];

/// Largest-remainder apportionment of `n` over `fractions`; ties go to the
/// earlier entry.
pub fn tier_counts(fractions: [f64; 3], n: usize) -> Result<[usize; 3]> {
    let total: f64 = fractions.iter().sum();
    if fractions.iter().any(|&f| !(f >= 0.0 && f.is_finite())) || !(total > 0.0) {
        return Err(Error::InvalidSpec(format!("bad tier fractions {fractions:?}")));
    }
    let quotas = fractions.map(|f| f / total * n as f64);
    let mut counts = quotas.map(|q| q.floor() as usize);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let short = n - counts.iter().sum::<usize>();
    for &k in order.iter().take(short) {
        counts[k] += 1;
    }
    Ok(counts)
}

/// One planned cohort member: everything needed to regenerate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortEntry {
    pub id: String,
    pub tier: QualityBand,
    pub seed: u64,
    pub spec: PhantomSpec,
}

/// Contrast that puts a phantom's SNR at `target`.
fn tier_intensities(base: Intensities, target_snr: f64, tier: QualityBand) -> Result<Intensities> {
    let infeasible = |why: String| Err(Error::InfeasibleTier(format!("{tier}: {why}")));
    if base.sigma_bg == 0.0 {
        if tier == QualityBand::High {
            return Ok(base);
        }
        return infeasible("background noise is zero, so snr is always 0".into());
    }
    if QualityBand::from_snr(target_snr) != tier || target_snr <= 0.0 {
        return infeasible(format!("target snr {target_snr} lies outside the band"));
    }
    let mu_fg = base.mu_bg + base.sigma_bg / target_snr;
    let top = IntensityType::U16.max_level().unwrap_or(f64::MAX);
    if base.mu_bg - 5.0 * base.sigma_bg < 0.0 || mu_fg + 5.0 * base.sigma_fg > top {
        return infeasible(format!(
            "intensities mu_bg={} sigma_bg={} mu_fg={mu_fg} would clip the 16-bit range",
            base.mu_bg, base.sigma_bg
        ));
    }
    Ok(Intensities { mu_fg, ..base })
}

/// Deterministic cohort layout: tier per member, member seeds and
/// jittered specs. Nothing is voxelised.
pub fn plan_cohort(base: &PhantomSpec, n: usize, variation: &CohortVariation, seed: u64) -> Result<Vec<CohortEntry>> {
    if n == 0 {
        return Err(Error::InvalidSpec("cohort size must be at least 1".into()));
    }
    let counts = tier_counts(variation.tier_fractions, n)?;
    let mut tiers: Vec<usize> = (0..3).flat_map(|k| std::iter::repeat_n(k, counts[k])).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    tiers.shuffle(&mut rng);
    let width = n.to_string().len().max(3);
    tiers
        .into_iter()
        .enumerate()
        .map(|(i, k)| {
            let member_seed = mix(seed, i as u64 + 1);
            let mut spec = base.clone().with_seed(member_seed);
            let mut jr = ChaCha8Rng::seed_from_u64(mix(member_seed, u64::MAX));
            if variation.center_jitter_mm > 0.0 {
                let u = Uniform::new_inclusive(-variation.center_jitter_mm, variation.center_jitter_mm);
                let shift: [f64; 3] = std::array::from_fn(|_| u.sample(&mut jr));
                for a in 0..3 {
                    spec.body.center_mm[a] += shift[a];
                }
                for t in spec.pv_tubes.iter_mut() {
                    for a in 0..3 {
                        t.attach_mm[a] += shift[a];
                    }
                }
                if let Some(p) = spec.mitral_plane.as_mut() {
                    for a in 0..3 {
                        p.point_mm[a] += shift[a];
                    }
                }
            }
            if variation.axis_jitter > 0.0 {
                let f = variation.axis_jitter.min(0.9);
                let u = Uniform::new_inclusive(1.0 - f, 1.0 + f);
                for a in 0..3 {
                    spec.body.semi_axes_mm[a] *= u.sample(&mut jr);
                }
            }
            spec.intensities = tier_intensities(base.intensities, variation.tier_snr[k], TIERS[k])?;
            spec.validate()?;
            Ok(CohortEntry {
                id: format!("case_{:0width$}", i + 1),
                tier: TIERS[k],
                seed: member_seed,
                spec,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortMember {
    pub entry: CohortEntry,
    pub volume: Volume,
    pub mask: Mask,
}

/// Plans and generates every member in parallel.
pub fn generate_cohort(
    base: &PhantomSpec,
    n: usize,
    variation: &CohortVariation,
    seed: u64,
) -> Result<Vec<CohortMember>> {
    plan_cohort(base, n, variation, seed)?
        .into_par_iter()
        .map(|entry| {
            let (volume, mask) = generate(&entry.spec)?;
            Ok(CohortMember { entry, volume, mask })
        })
        .collect()
}
