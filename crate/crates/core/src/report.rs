//! CSV and JSON serialisation for case metrics, leaderboards, quality
//! reports, cohort manifests and sweep curves.
//!
//! Floating values are printed like C's `%g` with 6 significant digits;
//! absent values print as `NA`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{CaseMetrics, HausdorffMode};
use crate::phantom::CohortEntry;
use crate::pipeline::{OffsetPoint, PatchPoint};
use crate::quality::QualityReport;
use crate::stats::{GroupComparison, Leaderboard, LeaderboardRow, MeanStd, Metric, TeamResult};

pub const NA: &str = "NA";

pub const CASE_COLUMNS: [&str; 9] = [
    "case_id",
    "dice",
    "iou",
    "sensitivity",
    "specificity",
    "hd_mm",
    "stsd_mm",
    "diameter_err_pct",
    "volume_err_pct",
];

/// `%g` with six significant digits.
pub fn fmt_g(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mant, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mant), exp.abs())
    } else {
        trim_zeros(&format!("{:.*}", (5 - exp) as usize, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| NA.to_string(), fmt_g)
}

fn parse_opt(field: &str, column: &str) -> Result<Option<f64>> {
    let f = field.trim().trim_end_matches('*');
    if f.is_empty() || f == NA {
        return Ok(None);
    }
    f.parse()
        .map(Some)
        .map_err(|_| Error::Parse(format!("column `{column}`: `{field}` is not a number")))
}

fn parse_req(field: &str, column: &str) -> Result<f64> {
    parse_opt(field, column)?.ok_or_else(|| Error::Parse(format!("column `{column}` must not be empty")))
}

fn case_row(id: &str, m: &CaseMetrics) -> Vec<String> {
    vec![
        id.to_string(),
        fmt_g(m.dice),
        fmt_g(m.iou),
        fmt_g(m.sensitivity),
        fmt_g(m.specificity),
        fmt_opt(m.hd_mm),
        fmt_opt(m.stsd_mm),
        fmt_g(m.diameter_err_pct),
        fmt_g(m.volume_err_pct),
    ]
}

pub fn write_case_metrics_csv<W: Write>(w: W, rows: &[(String, CaseMetrics)]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CASE_COLUMNS)?;
    for (id, m) in rows {
        out.write_record(case_row(id, m))?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct CaseJson<'a> {
    case_id: &'a str,
    #[serde(flatten)]
    metrics: &'a CaseMetrics,
}

pub fn write_case_metrics_json<W: Write>(w: W, rows: &[(String, CaseMetrics)]) -> Result<()> {
    let items: Vec<CaseJson> = rows
        .iter()
        .map(|(id, m)| CaseJson {
            case_id: id,
            metrics: m,
        })
        .collect();
    serde_json::to_writer_pretty(w, &items)?;
    Ok(())
}

fn header_index(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

/// Reads a case-metrics CSV. Raw diameters and volumes are not part of the
/// format and come back as NaN.
pub fn read_case_metrics_csv<R: Read>(r: R) -> Result<Vec<(String, CaseMetrics)>> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    let idx: Vec<usize> = CASE_COLUMNS
        .iter()
        .map(|c| header_index(&headers, c).ok_or_else(|| Error::Parse(format!("missing column `{c}`"))))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let get = |k: usize| rec.get(idx[k]).unwrap_or("");
        let m = CaseMetrics {
            dice: parse_req(get(1), "dice")?,
            iou: parse_req(get(2), "iou")?,
            sensitivity: parse_req(get(3), "sensitivity")?,
            specificity: parse_req(get(4), "specificity")?,
            hd_mm: parse_opt(get(5), "hd_mm")?,
            stsd_mm: parse_opt(get(6), "stsd_mm")?,
            diameter_pred_mm: f64::NAN,
            diameter_true_mm: f64::NAN,
            diameter_err_pct: parse_req(get(7), "diameter_err_pct")?,
            volume_pred_cm3: f64::NAN,
            volume_true_cm3: f64::NAN,
            volume_err_pct: parse_req(get(8), "volume_err_pct")?,
        };
        rows.push((get(0).to_string(), m));
    }
    Ok(rows)
}

/// Team tags: a `team` column followed by any attribute columns.
pub fn read_team_attributes<R: Read>(r: R) -> Result<BTreeMap<String, BTreeMap<String, String>>> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    let team = header_index(&headers, "team")
        .or_else(|| header_index(&headers, "team_id"))
        .ok_or_else(|| Error::Parse("attributes file needs a `team` column".into()))?;
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let tags = headers
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != team)
            .filter_map(|(i, h)| rec.get(i).map(|v| (h.trim().to_string(), v.trim().to_string())))
            .filter(|(_, v)| !v.is_empty())
            .collect();
        out.insert(rec.get(team).unwrap_or("").trim().to_string(), tags);
    }
    Ok(out)
}

pub fn team_from_rows(team_id: &str, rows: Vec<(String, CaseMetrics)>) -> TeamResult {
    let mut t = TeamResult::new(team_id);
    t.cases = rows.into_iter().collect();
    t
}

fn leaderboard_header(with_rank: bool) -> Vec<String> {
    let mut h = Vec::new();
    if with_rank {
        h.push("rank".to_string());
    }
    h.push("team".to_string());
    for m in Metric::TECHNICAL {
        h.push(format!("{m}_mean"));
        h.push(format!("{m}_std"));
    }
    h.push("p_value".to_string());
    h
}

pub fn write_leaderboard_csv<W: Write>(w: W, lb: &Leaderboard) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(leaderboard_header(true))?;
    for row in &lb.rows {
        let mut rec = vec![row.rank.to_string(), row.team_id.clone()];
        for m in Metric::TECHNICAL {
            let s = row.stats.get(&m);
            rec.push(fmt_opt(s.map(|s| s.mean)));
            rec.push(fmt_opt(s.map(|s| s.std)));
        }
        rec.push(fmt_opt(row.p_value));
        out.write_record(rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads published per-team summaries: `team`, `<metric>_mean`,
/// `<metric>_std` for any technical metrics, optional `n` and `p_value`.
/// Asterisks marking significance are ignored.
pub fn read_summary_csv<R: Read>(r: R) -> Result<Vec<LeaderboardRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    let team = header_index(&headers, "team").ok_or_else(|| Error::Parse("summary needs a `team` column".into()))?;
    let n_col = header_index(&headers, "n");
    let p_col = header_index(&headers, "p_value");
    let metric_cols: Vec<(Metric, usize, Option<usize>)> = Metric::ALL
        .iter()
        .filter_map(|&m| {
            header_index(&headers, &format!("{m}_mean")).map(|i| (m, i, header_index(&headers, &format!("{m}_std"))))
        })
        .collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let n = match n_col {
            Some(i) => parse_opt(rec.get(i).unwrap_or(""), "n")?.map_or(0, |v| v as usize),
            None => 0,
        };
        let mut stats = BTreeMap::new();
        for &(m, mi, si) in &metric_cols {
            let name = m.name();
            if let Some(mean) = parse_opt(rec.get(mi).unwrap_or(""), name)? {
                let std = match si {
                    Some(i) => parse_opt(rec.get(i).unwrap_or(""), name)?.unwrap_or(0.0),
                    None => 0.0,
                };
                stats.insert(m, MeanStd { mean, std, n });
            }
        }
        rows.push(LeaderboardRow {
            rank: 0,
            team_id: rec.get(team).unwrap_or("").trim().to_string(),
            stats,
            p_value: match p_col {
                Some(i) => parse_opt(rec.get(i).unwrap_or(""), "p_value")?,
                None => None,
            },
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub x: String,
    pub y: String,
    pub n: usize,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub hd_mode: HausdorffMode,
    pub p_value_method: String,
    pub std: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub metadata: ReportMetadata,
    pub leaderboard: Leaderboard,
    pub group_comparisons: Vec<GroupComparison>,
    pub correlations: Vec<Correlation>,
}

impl RankReport {
    pub fn new(leaderboard: Leaderboard, hd_mode: HausdorffMode) -> Self {
        Self {
            metadata: ReportMetadata {
                hd_mode,
                p_value_method: leaderboard.p_value_method.clone(),
                std: "sample (n - 1)".into(),
                version: env!("CARGO_PKG_VERSION").into(),
            },
            leaderboard,
            group_comparisons: Vec::new(),
            correlations: Vec::new(),
        }
    }
}

pub fn write_json<W: Write, T: Serialize>(w: W, value: &T) -> Result<()> {
    let mut w = w;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn write_quality_csv<W: Write>(w: W, rows: &[(String, QualityReport)]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["scan_id", "snr", "cr", "het", "band"])?;
    for (id, q) in rows {
        out.write_record([id.clone(), fmt_g(q.snr), fmt_g(q.cr), fmt_g(q.het), q.band.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_quality_csv<R: Read>(r: R) -> Result<Vec<(String, f64)>> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    let id = header_index(&headers, "scan_id").ok_or_else(|| Error::Parse("quality file needs `scan_id`".into()))?;
    let snr = header_index(&headers, "snr").ok_or_else(|| Error::Parse("quality file needs `snr`".into()))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        out.push((
            rec.get(id).unwrap_or("").to_string(),
            parse_req(rec.get(snr).unwrap_or(""), "snr")?,
        ));
    }
    Ok(out)
}

pub fn write_manifest_csv<W: Write>(w: W, entries: &[CohortEntry]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["id", "tier", "seed"])?;
    for e in entries {
        out.write_record([e.id.clone(), e.tier.to_string(), e.seed.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_offset_curve_csv<W: Write>(w: W, points: &[OffsetPoint]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["offset_pct", "displacement_vox", "dice"])?;
    for p in points {
        out.write_record([fmt_g(p.offset_pct), p.displacement.to_string(), fmt_g(p.dice)])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_patch_curve_csv<W: Write>(w: W, points: &[PatchPoint]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["size_x", "size_y", "size_z", "background_pct", "containment_pct"])?;
    for p in points {
        out.write_record([
            p.size[0].to_string(),
            p.size[1].to_string(),
            p.size[2].to_string(),
            fmt_g(p.background_pct),
            fmt_g(p.containment_pct),
        ])?;
    }
    out.flush()?;
    Ok(())
}
