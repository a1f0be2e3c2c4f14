//! Verification error rates.
//!
//! A comparison is accepted when its score is at least the threshold, so
//! `FMR(t)` is the share of impostor scores `>= t` and `FNMR(t)` the share
//! of genuine scores `< t`. Every metric is read off the DET curve, which
//! holds one point per distinct observed score plus a final point just
//! above the largest score where nothing is accepted.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// FMR targets of the standard report.
pub const FMR_TARGETS: [f64; 3] = [0.01, 0.001, 0.0001];

/// Genuine and impostor scores of one view.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSet {
    genuine: Vec<f64>,
    impostor: Vec<f64>,
}

impl ScoreSet {
    pub fn new(mut genuine: Vec<f64>, mut impostor: Vec<f64>) -> Result<Self> {
        if genuine.is_empty() || impostor.is_empty() {
            return Err(Error::Metrics(format!(
                "need genuine and impostor scores, got {} and {}",
                genuine.len(),
                impostor.len()
            )));
        }
        if genuine.iter().chain(&impostor).any(|s| !s.is_finite()) {
            return Err(Error::Metrics("non-finite score".into()));
        }
        genuine.sort_by(f64::total_cmp);
        impostor.sort_by(f64::total_cmp);
        Ok(Self { genuine, impostor })
    }

    /// Genuine scores, ascending.
    pub fn genuine(&self) -> &[f64] {
        &self.genuine
    }

    /// Impostor scores, ascending.
    pub fn impostor(&self) -> &[f64] {
        &self.impostor
    }

    /// Applies `f` to every score.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.genuine.iter().map(|&s| f(s)).collect(), self.impostor.iter().map(|&s| f(s)).collect())
    }
}

fn below(sorted: &[f64], t: f64) -> usize {
    sorted.partition_point(|&s| s < t)
}

pub fn fmr_fnmr(scores: &ScoreSet, threshold: f64) -> (f64, f64) {
    let (g, i) = (&scores.genuine, &scores.impostor);
    let fmr = (i.len() - below(i, threshold)) as f64 / i.len() as f64;
    let fnmr = below(g, threshold) as f64 / g.len() as f64;
    (fmr, fnmr)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetPoint {
    pub threshold: f64,
    pub fmr: f64,
    pub fnmr: f64,
}

/// DET curve with thresholds ascending. The first point accepts every
/// comparison (FMR 1), the last rejects every one (FNMR 1).
pub fn det_curve(scores: &ScoreSet) -> Vec<DetPoint> {
    let (g, imp) = (&scores.genuine, &scores.impostor);
    let (ng, ni) = (g.len() as f64, imp.len() as f64);
    let mut points = Vec::new();
    let (mut a, mut b) = (0, 0);
    while a < g.len() || b < imp.len() {
        let t = match (g.get(a), imp.get(b)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        points.push(DetPoint { threshold: t, fmr: (imp.len() - b) as f64 / ni, fnmr: a as f64 / ng });
        while g.get(a) == Some(&t) {
            a += 1;
        }
        while imp.get(b) == Some(&t) {
            b += 1;
        }
    }
    let top = g[g.len() - 1].max(imp[imp.len() - 1]);
    points.push(DetPoint { threshold: top.next_up(), fmr: 0.0, fnmr: 1.0 });
    points
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Eer {
    pub eer: f64,
    pub threshold: f64,
}

/// The lowest threshold minimizing `|FMR - FNMR|`, with the EER reported as
/// the mean of the two rates there.
pub fn eer_from_det(curve: &[DetPoint]) -> Result<Eer> {
    let mut best: Option<(f64, &DetPoint)> = None;
    for p in curve {
        let gap = (p.fmr - p.fnmr).abs();
        if best.is_none_or(|(g, _)| gap < g) {
            best = Some((gap, p));
        }
    }
    let (_, p) = best.ok_or_else(|| Error::Metrics("empty DET curve".into()))?;
    Ok(Eer { eer: (p.fmr + p.fnmr) / 2.0, threshold: p.threshold })
}

pub fn eer(scores: &ScoreSet) -> Eer {
    eer_from_det(&det_curve(scores)).expect("curve of a nonempty set")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tar {
    pub tar: f64,
    pub threshold: f64,
    pub fmr: f64,
}

/// TAR at the lowest threshold whose FMR does not exceed `target`.
pub fn tar_from_det(curve: &[DetPoint], target: f64) -> Result<Tar> {
    curve
        .iter()
        .find(|p| p.fmr <= target)
        .map(|p| Tar { tar: 1.0 - p.fnmr, threshold: p.threshold, fmr: p.fmr })
        .ok_or_else(|| Error::Metrics(format!("no DET point reaches FMR {target}")))
}

pub fn tar_at_fmr(scores: &ScoreSet, target: f64) -> Tar {
    tar_from_det(&det_curve(scores), target).expect("the last point has FMR 0")
}

/// Set when `impostors * target < 10`, i.e. fewer than ten impostor
/// comparisons can fall above the operating threshold.
pub fn resolution_warning(impostors: usize, target: f64) -> Option<String> {
    (impostors as f64 * target < 10.0).then(|| {
        format!("{impostors} impostor scores cannot resolve FMR {target}; at least {:.0} are needed", 10.0 / target)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Normal,
    Enhanced,
    Fused,
}

impl View {
    pub const ALL: [View; 3] = [View::Normal, View::Enhanced, View::Fused];

    pub fn as_str(self) -> &'static str {
        match self {
            View::Normal => "normal",
            View::Enhanced => "enhanced",
            View::Fused => "fused",
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for View {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        View::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown view `{s}` (expected normal, enhanced or fused)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewReport {
    pub eer: f64,
    pub eer_threshold: f64,
    pub tar_at_1pct: f64,
    pub tar_at_0p1pct: f64,
    pub tar_at_0p01pct: f64,
    /// Absent when the report was computed from a DET curve alone.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub genuine_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impostor_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ViewReport {
    /// Metrics of a DET curve, with the genuine and impostor counts behind
    /// it when known.
    pub fn from_det(curve: &[DetPoint], counts: Option<(usize, usize)>) -> Result<Self> {
        let e = eer_from_det(curve)?;
        let tar = |t| tar_from_det(curve, t).map(|r| r.tar);
        Ok(Self {
            eer: e.eer,
            eer_threshold: e.threshold,
            tar_at_1pct: tar(FMR_TARGETS[0])?,
            tar_at_0p1pct: tar(FMR_TARGETS[1])?,
            tar_at_0p01pct: tar(FMR_TARGETS[2])?,
            genuine_count: counts.map(|c| c.0),
            impostor_count: counts.map(|c| c.1),
            warnings: counts
                .map(|(_, imp)| FMR_TARGETS.iter().filter_map(|&t| resolution_warning(imp, t)).collect())
                .unwrap_or_default(),
        })
    }

    pub fn from_scores(scores: &ScoreSet) -> Self {
        Self::from_det(&det_curve(scores), Some((scores.genuine.len(), scores.impostor.len())))
            .expect("curve of a nonempty set")
    }
}

/// One [`ViewReport`] per evaluated view, serialized as TOML tables named
/// after the view.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normal: Option<ViewReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub enhanced: Option<ViewReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fused: Option<ViewReport>,
}

impl Report {
    pub fn set(&mut self, view: View, r: ViewReport) {
        *match view {
            View::Normal => &mut self.normal,
            View::Enhanced => &mut self.enhanced,
            View::Fused => &mut self.fused,
        } = Some(r);
    }

    pub fn get(&self, view: View) -> Option<&ViewReport> {
        match view {
            View::Normal => self.normal.as_ref(),
            View::Enhanced => self.enhanced.as_ref(),
            View::Fused => self.fused.as_ref(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("finite fields serialize")
    }
}

pub const DET_HEADER: &str = "threshold,fmr,fnmr";

/// DET points as CSV. Values are written in shortest round-trip form so the
/// curve can be read back exactly.
pub fn write_det_csv(curve: &[DetPoint]) -> String {
    let mut out = String::with_capacity(32 * (curve.len() + 1));
    out.push_str(DET_HEADER);
    out.push('\n');
    for p in curve {
        out.push_str(&format!("{},{},{}\n", p.threshold, p.fmr, p.fnmr));
    }
    out
}

pub fn parse_det_csv(bytes: &[u8]) -> Result<Vec<DetPoint>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header = reader.headers().map_err(|e| Error::Scores(format!("DET header: {e}")))?;
    if header.iter().collect::<Vec<_>>() != DET_HEADER.split(',').collect::<Vec<_>>() {
        return Err(Error::Scores(format!("DET header must be `{DET_HEADER}`")));
    }
    let mut points: Vec<DetPoint> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::Scores(format!("line {line}: {e}")))?;
        let field = |k: usize| -> Result<f64> {
            let v: f64 = record
                .get(k)
                .ok_or_else(|| Error::Scores(format!("line {line}: missing column {}", k + 1)))?
                .trim()
                .parse()
                .map_err(|e| Error::Scores(format!("line {line}: {e}")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Scores(format!("line {line}: non-finite value")))
            }
        };
        let p = DetPoint { threshold: field(0)?, fmr: field(1)?, fnmr: field(2)? };
        if !(0.0..=1.0).contains(&p.fmr) || !(0.0..=1.0).contains(&p.fnmr) {
            return Err(Error::Scores(format!("line {line}: rates outside [0, 1]")));
        }
        if let Some(prev) = points.last() {
            if p.threshold <= prev.threshold || p.fmr > prev.fmr || p.fnmr < prev.fnmr {
                return Err(Error::Scores(format!("line {line}: curve is not monotone in threshold")));
            }
        }
        points.push(p);
    }
    if points.is_empty() {
        return Err(Error::Scores("DET curve has no points".into()));
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> ScoreSet {
        ScoreSet::new(vec![0.9, 0.8, 0.4], vec![0.5, 0.3, 0.2]).unwrap()
    }

    #[test]
    fn hand_counted_rates() {
        let (fmr, fnmr) = fmr_fnmr(&example(), 0.45);
        assert_eq!((fmr, fnmr), (1.0 / 3.0, 1.0 / 3.0));
        assert_eq!(fmr_fnmr(&example(), 0.0), (1.0, 0.0));
        assert_eq!(fmr_fnmr(&example(), 1.0), (0.0, 1.0));
    }

    #[test]
    fn example_eer() {
        let e = eer(&example());
        assert_eq!(e.eer, 1.0 / 3.0);
        assert_eq!(e.threshold, 0.5);
    }

    #[test]
    fn separated_and_chance() {
        let sep = ScoreSet::new(vec![0.7, 0.9], vec![0.1, 0.6]).unwrap();
        assert_eq!(eer(&sep).eer, 0.0);
        for t in FMR_TARGETS {
            assert_eq!(tar_at_fmr(&sep, t).tar, 1.0);
        }
        let same = ScoreSet::new(vec![0.1, 0.5, 0.5, 0.9], vec![0.9, 0.5, 0.1, 0.5]).unwrap();
        assert_eq!(eer(&same).eer, 0.5);
    }

    #[test]
    fn det_boundaries() {
        let d = det_curve(&example());
        assert_eq!(d.len(), 7);
        assert_eq!((d[0].fmr, d[0].fnmr), (1.0, 0.0));
        assert_eq!((d[6].fmr, d[6].fnmr), (0.0, 1.0));
        assert!(d[6].threshold > 0.9);
    }

    #[test]
    fn warning_below_resolution() {
        let s = ScoreSet::new(vec![1.0], (0..100).map(|i| i as f64 / 200.0).collect()).unwrap();
        let r = ViewReport::from_scores(&s);
        assert_eq!(r.warnings.len(), 3);
        assert!(r.warnings.iter().any(|w| w.contains("0.0001")));
        let s = ScoreSet::new(vec![1.0], (0..1000).map(|i| i as f64 / 2000.0).collect()).unwrap();
        assert_eq!(ViewReport::from_scores(&s).warnings.len(), 2);
    }

    #[test]
    fn det_csv_round_trip_is_exact() {
        let d = det_curve(&ScoreSet::new(vec![0.1 + 0.2, 1.0 / 3.0], vec![0.7f64.sqrt(), 1e-300]).unwrap());
        assert_eq!(parse_det_csv(write_det_csv(&d).as_bytes()).unwrap(), d);
    }

    #[test]
    fn report_toml_sections() {
        let mut rep = Report::default();
        rep.set(View::Fused, ViewReport::from_scores(&example()));
        let text = rep.to_toml();
        assert!(text.contains("[fused]") && text.contains("tar_at_0p01pct") && !text.contains("[normal]"), "{text}");
        let back: Report = toml::from_str(&text).unwrap();
        assert_eq!(back, rep);
    }
}
