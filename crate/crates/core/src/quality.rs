//! Scan quality from a scan and its atrium mask.
//!
//! Foreground statistics are taken over the mask itself. The mask grown by
//! `margin` voxels (6-connected) is a guard band excluded from both regions,
//! as is a `margin`-wide frame at the grid border. Everything else is
//! background.
//!
//! * `snr = σ_bg / (μ_fg − μ_bg)`: noise relative to contrast, lower is better
//! * `cr  = μ_fg / μ_bg`
//! * `het = σ_fg / μ_fg`
//!
//! Standard deviations are population (divide by n).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::postprocess::{dilate, StructuringElement};
use crate::volume::{Mask, Volume};

pub const DEFAULT_MARGIN: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QualityBand {
    High,
    Medium,
    Low,
}

impl QualityBand {
    pub const ALL: [QualityBand; 3] = [QualityBand::High, QualityBand::Medium, QualityBand::Low];

    /// `snr < 1` is high, `1 <= snr <= 3` medium, above 3 low.
    pub fn from_snr(snr: f64) -> Self {
        if snr < 1.0 {
            QualityBand::High
        } else if snr <= 3.0 {
            QualityBand::Medium
        } else {
            QualityBand::Low
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            QualityBand::High => "high",
            QualityBand::Medium => "medium",
            QualityBand::Low => "low",
        }
    }

    fn slot(&self) -> usize {
        *self as usize
    }
}

impl fmt::Display for QualityBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QualityBand {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "high" => Ok(QualityBand::High),
            "medium" => Ok(QualityBand::Medium),
            "low" => Ok(QualityBand::Low),
            other => Err(Error::Parse(format!("unknown quality band `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub snr: f64,
    pub cr: f64,
    pub het: f64,
    pub band: QualityBand,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Moments {
    n: usize,
    mean: f64,
    std: f64,
}

fn moments(values: impl Iterator<Item = f64> + Clone) -> Option<Moments> {
    let (n, sum) = values.clone().fold((0usize, 0.0f64), |(n, s), v| (n + 1, s + v));
    if n == 0 {
        return None;
    }
    let mean = sum / n as f64;
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    Some(Moments {
        n,
        mean,
        std: (ss / n as f64).sqrt(),
    })
}

pub fn assess_quality(scan: &Volume, la: &Mask, margin: usize) -> Result<QualityReport> {
    la.check_volume(scan)?;
    if la.is_empty() {
        return Err(Error::EmptyMask);
    }
    let guard = if margin > 0 {
        dilate(la, StructuringElement::cross(margin))
    } else {
        la.clone()
    };
    let dims = scan.dims();
    let inner = |c: usize, n: usize| c >= margin && c + margin < n;

    let fg = moments(
        la.bits()
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| scan.value(i)),
    )
    .ok_or(Error::EmptyMask)?;
    let bg = moments(
        guard
            .bits()
            .iter()
            .enumerate()
            .filter(|&(i, &g)| {
                if g {
                    return false;
                }
                let p = dims.coords(i);
                inner(p.ix, dims.nx) && inner(p.iy, dims.ny) && inner(p.iz, dims.nz)
            })
            .map(|(i, _)| scan.value(i)),
    )
    .ok_or(Error::EmptyBackground)?;
    debug_assert!(fg.n > 0 && bg.n > 0);

    if fg.mean <= bg.mean {
        return Err(Error::DegenerateContrast {
            fg: fg.mean,
            bg: bg.mean,
        });
    }
    let snr = bg.std / (fg.mean - bg.mean);
    Ok(QualityReport {
        snr,
        cr: fg.mean / bg.mean,
        het: if fg.mean == 0.0 { 0.0 } else { fg.std / fg.mean },
        band: QualityBand::from_snr(snr),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandHistogram {
    /// Counts in `[high, medium, low]` order.
    pub counts: [usize; 3],
    pub fractions: [f64; 3],
}

impl BandHistogram {
    pub fn count(&self, band: QualityBand) -> usize {
        self.counts[band.slot()]
    }

    pub fn fraction(&self, band: QualityBand) -> f64 {
        self.fractions[band.slot()]
    }
}

pub fn quality_distribution(reports: &[QualityReport]) -> Result<BandHistogram> {
    if reports.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut counts = [0usize; 3];
    for r in reports {
        counts[r.band.slot()] += 1;
    }
    let n = reports.len() as f64;
    Ok(BandHistogram {
        counts,
        fractions: counts.map(|c| c as f64 / n),
    })
}
