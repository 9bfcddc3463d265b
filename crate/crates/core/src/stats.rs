//! Cross-case and cross-team statistics: aggregation, Welch's t-test,
//! Pearson correlation, attribute group comparisons and leaderboards.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::CaseMetrics;

/// Metrics that can be aggregated and ranked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Dice,
    Iou,
    Sensitivity,
    Specificity,
    HdMm,
    StsdMm,
    DiameterErrPct,
    VolumeErrPct,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::Dice,
        Metric::Iou,
        Metric::Sensitivity,
        Metric::Specificity,
        Metric::HdMm,
        Metric::StsdMm,
        Metric::DiameterErrPct,
        Metric::VolumeErrPct,
    ];

    /// The technical metrics shown on a leaderboard.
    pub const TECHNICAL: [Metric; 6] = [
        Metric::Dice,
        Metric::Iou,
        Metric::Sensitivity,
        Metric::Specificity,
        Metric::HdMm,
        Metric::StsdMm,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Dice => "dice",
            Metric::Iou => "iou",
            Metric::Sensitivity => "sensitivity",
            Metric::Specificity => "specificity",
            Metric::HdMm => "hd_mm",
            Metric::StsdMm => "stsd_mm",
            Metric::DiameterErrPct => "diameter_err_pct",
            Metric::VolumeErrPct => "volume_err_pct",
        }
    }

    pub fn value(&self, m: &CaseMetrics) -> Option<f64> {
        match self {
            Metric::Dice => Some(m.dice),
            Metric::Iou => Some(m.iou),
            Metric::Sensitivity => Some(m.sensitivity),
            Metric::Specificity => Some(m.specificity),
            Metric::HdMm => m.hd_mm,
            Metric::StsdMm => m.stsd_mm,
            Metric::DiameterErrPct => Some(m.diameter_err_pct),
            Metric::VolumeErrPct => Some(m.volume_err_pct),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| Error::UnknownMetric(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (n − 1); 0 for a single value.
    pub std: f64,
    pub n: usize,
}

pub fn mean_std(xs: &[f64]) -> Result<MeanStd> {
    if xs.is_empty() {
        return Err(Error::EmptyCases);
    }
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let std = if n < 2 {
        0.0
    } else {
        (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Ok(MeanStd { mean, std, n })
}

fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
}

/// Natural log of the gamma function (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularised incomplete beta `I_x(a, b)`.
pub fn incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(x, a, b) / a
    } else {
        1.0 - front * beta_cf(1.0 - x, b, a) / b
    }
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=500 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Two-tailed tail probability `P(|T| >= |t|)` for Student's t with `df`
/// degrees of freedom.
pub fn t_two_tailed_p(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    if !t.is_finite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    incomplete_beta(x, 0.5 * df, 0.5).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

/// Welch's unequal-variance two-sample t-test, two-tailed.
pub fn welch_ttest(xs: &[f64], ys: &[f64]) -> Result<WelchTest> {
    if xs.len() < 2 || ys.len() < 2 {
        return Err(Error::DegenerateSample("each sample needs at least two values".into()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::DegenerateSample("non-finite value".into()));
    }
    let (nx, ny) = (xs.len() as f64, ys.len() as f64);
    let mx = xs.iter().sum::<f64>() / nx;
    let my = ys.iter().sum::<f64>() / ny;
    let vx = sample_variance(xs) / nx;
    let vy = sample_variance(ys) / ny;
    let se2 = vx + vy;
    if se2 == 0.0 {
        return Err(Error::DegenerateSample("both samples are constant".into()));
    }
    let t = (mx - my) / se2.sqrt();
    let df = se2 * se2 / (vx * vx / (nx - 1.0) + vy * vy / (ny - 1.0));
    Ok(WelchTest {
        t,
        df,
        p: t_two_tailed_p(t, df),
    })
}

/// Pearson product-moment correlation.
pub fn correlate(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidSpec(format!(
            "samples differ in length ({} vs {})",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::DegenerateSample("need at least two pairs".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ConstantSample);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// One team's submission: per-case metrics plus descriptive tags
/// (dimensionality, cnn_count, framework, architecture, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeamResult {
    pub team_id: String,
    pub attributes: BTreeMap<String, String>,
    pub cases: BTreeMap<String, CaseMetrics>,
}

impl TeamResult {
    pub fn new(team_id: impl Into<String>) -> Self {
        Self {
            team_id: team_id.into(),
            attributes: BTreeMap::new(),
            cases: BTreeMap::new(),
        }
    }

    pub fn values(&self, metric: Metric) -> Vec<f64> {
        self.cases.values().filter_map(|c| metric.value(c)).collect()
    }
}

/// Mean and sample std of every metric with at least one defined value.
pub fn aggregate(team: &TeamResult) -> Result<BTreeMap<Metric, MeanStd>> {
    if team.cases.is_empty() {
        return Err(Error::EmptyCases);
    }
    let mut out = BTreeMap::new();
    for metric in Metric::ALL {
        let xs = team.values(metric);
        if !xs.is_empty() {
            out.insert(metric, mean_std(&xs)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub value: String,
    pub teams: Vec<String>,
    /// Mean over the team-level means.
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub a: String,
    pub b: String,
    /// `None` when either group has fewer than two teams or no spread.
    pub test: Option<WelchTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupComparison {
    pub attribute: String,
    pub metric: Metric,
    pub groups: Vec<GroupSummary>,
    pub pairwise: Vec<PairwiseTest>,
}

/// Splits teams by an attribute and compares team-level means of `metric`.
/// Teams without the attribute are left out.
pub fn compare_groups(teams: &[TeamResult], attribute: &str, metric: Metric) -> Result<GroupComparison> {
    let mut groups: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
    for team in teams {
        let Some(value) = team.attributes.get(attribute) else {
            continue;
        };
        let xs = team.values(metric);
        if xs.is_empty() {
            continue;
        }
        let m = mean_std(&xs)?.mean;
        groups.entry(value.clone()).or_default().push((team.team_id.clone(), m));
    }
    if groups.len() < 2 {
        return Err(Error::DegeneratePartition(attribute.to_string()));
    }
    for members in groups.values_mut() {
        members.sort_by(|a, b| a.0.cmp(&b.0));
    }
    let summaries: Vec<GroupSummary> = groups
        .iter()
        .map(|(value, members)| {
            let means: Vec<f64> = members.iter().map(|m| m.1).collect();
            GroupSummary {
                value: value.clone(),
                teams: members.iter().map(|m| m.0.clone()).collect(),
                mean: means.iter().sum::<f64>() / means.len() as f64,
            }
        })
        .collect();
    let keys: Vec<&String> = groups.keys().collect();
    let mut pairwise = Vec::new();
    for i in 0..keys.len() {
        for j in i + 1..keys.len() {
            let xs: Vec<f64> = groups[keys[i]].iter().map(|m| m.1).collect();
            let ys: Vec<f64> = groups[keys[j]].iter().map(|m| m.1).collect();
            pairwise.push(PairwiseTest {
                a: keys[i].clone(),
                b: keys[j].clone(),
                test: welch_ttest(&xs, &ys).ok(),
            });
        }
    }
    Ok(GroupComparison {
        attribute: attribute.to_string(),
        metric,
        groups: summaries,
        pairwise,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub rank: usize,
    pub team_id: String,
    pub stats: BTreeMap<Metric, MeanStd>,
    pub p_value: Option<f64>,
}

impl LeaderboardRow {
    pub fn mean(&self, metric: Metric) -> Option<f64> {
        self.stats.get(&metric).map(|s| s.mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaderboard {
    pub rows: Vec<LeaderboardRow>,
    /// How `p_value` was obtained.
    pub p_value_method: String,
}

pub const POOLED_REST_METHOD: &str =
    "welch two-tailed t-test of the team's per-case dice against the pooled per-case dice of all other teams";

impl Leaderboard {
    pub fn order(&self) -> Vec<&str> {
        self.rows.iter().map(|r| r.team_id.as_str()).collect()
    }

    /// Ranks pre-aggregated rows (e.g. a published summary table). Their
    /// `p_value`s are kept as given.
    pub fn from_summaries(rows: Vec<LeaderboardRow>, p_value_method: impl Into<String>) -> Self {
        let mut rows = rows;
        sort_rows(&mut rows);
        Self {
            rows,
            p_value_method: p_value_method.into(),
        }
    }
}

fn sort_rows(rows: &mut [LeaderboardRow]) {
    rows.sort_by(|a, b| {
        let dice = |r: &LeaderboardRow| r.mean(Metric::Dice).unwrap_or(f64::NEG_INFINITY);
        let stsd = |r: &LeaderboardRow| r.mean(Metric::StsdMm).unwrap_or(f64::INFINITY);
        dice(b)
            .total_cmp(&dice(a))
            .then(stsd(a).total_cmp(&stsd(b)))
            .then(a.team_id.cmp(&b.team_id))
    });
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
}

/// Ranks teams by mean Dice (descending); ties fall to lower mean STSD, then
/// team id.
pub fn build_leaderboard(teams: &[TeamResult]) -> Result<Leaderboard> {
    if let Some(first) = teams.first() {
        for t in &teams[1..] {
            if !t.cases.keys().eq(first.cases.keys()) {
                return Err(Error::CaseSetMismatch {
                    team: t.team_id.clone(),
                    reference: first.team_id.clone(),
                });
            }
        }
    }
    let mut rows = Vec::with_capacity(teams.len());
    for (i, team) in teams.iter().enumerate() {
        let own = team.values(Metric::Dice);
        let rest: Vec<f64> = teams
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .flat_map(|(_, t)| t.values(Metric::Dice))
            .collect();
        let p_value = if rest.is_empty() {
            None
        } else {
            welch_ttest(&own, &rest).ok().map(|w| w.p)
        };
        rows.push(LeaderboardRow {
            rank: 0,
            team_id: team.team_id.clone(),
            stats: aggregate(team)?,
            p_value,
        });
    }
    sort_rows(&mut rows);
    Ok(Leaderboard {
        rows,
        p_value_method: POOLED_REST_METHOD.to_string(),
    })
}
