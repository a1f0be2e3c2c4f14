//! Comparison scores of the two streams and their sum fusion.
//!
//! A probe is compared against every enrolled identity: the claim of its
//! own identity is genuine, every other claim an impostor. The comparison
//! score of a stream is the softmax probability the stream's model assigns
//! to the claimed identity.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{to_network_input, ClaheParams, GrayImage};
use crate::metrics::{ScoreSet, View};
use crate::model::{predict, Checkpoint, ModelConfig, ModelParams};
use crate::protocol::Sample;
use crate::train::load_stream_image;

pub const SCORES_HEADER: [&str; 6] =
    ["probe_path", "claimed_id", "label", "score_normal", "score_enhanced", "score_fused"];
/// Significant digits written per score.
pub const SCORE_DIGITS: usize = 9;

#[derive(Clone, Debug, PartialEq)]
pub struct ScorePair {
    pub probe: String,
    pub claimed_id: usize,
    pub genuine: bool,
    pub normal: f64,
    pub enhanced: f64,
    pub fused: f64,
}

impl ScorePair {
    pub fn new(probe: impl Into<String>, claimed_id: usize, genuine: bool, normal: f64, enhanced: f64) -> Self {
        Self { probe: probe.into(), claimed_id, genuine, normal, enhanced, fused: normal + enhanced }
    }

    pub fn score(&self, view: View) -> f64 {
        match view {
            View::Normal => self.normal,
            View::Enhanced => self.enhanced,
            View::Fused => self.fused,
        }
    }
}

/// A trained stream: weights plus the enhancement its inputs receive.
#[derive(Clone, Debug)]
pub struct StreamModel {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub clahe: Option<ClaheParams>,
}

impl From<Checkpoint> for StreamModel {
    fn from(c: Checkpoint) -> Self {
        Self { config: c.config, params: c.params, clahe: c.meta.clahe }
    }
}

impl StreamModel {
    /// Class probabilities for an image already enhanced for this stream.
    pub fn probabilities(&self, img: &GrayImage) -> Result<Vec<f32>> {
        predict(&self.config, &self.params, &to_network_input(img))
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }
}

/// Scores of one probe against every identity from the two streams'
/// probability vectors.
pub fn probe_scores(probe: &str, identity: usize, normal: &[f32], enhanced: &[f32]) -> Result<Vec<ScorePair>> {
    if normal.len() != enhanced.len() {
        return Err(Error::InvalidArgument(format!(
            "stream class counts differ: {} vs {}",
            normal.len(),
            enhanced.len()
        )));
    }
    if identity >= normal.len() {
        return Err(Error::InvalidArgument(format!("identity {identity} outside 0..{}", normal.len())));
    }
    Ok(normal
        .iter()
        .zip(enhanced)
        .enumerate()
        .map(|(claim, (&n, &e))| ScorePair::new(probe, claim, claim == identity, n as f64, e as f64))
        .collect())
}

/// Fused score of one probe, whose true identity is `identity`, against
/// one claimed identity. The images are the probe prepared for each stream.
pub fn comparison_score(
    normal: &StreamModel,
    enhanced: &StreamModel,
    probe_normal: &GrayImage,
    probe_enhanced: &GrayImage,
    identity: usize,
    claimed_id: usize,
) -> Result<ScorePair> {
    check_models(normal, enhanced, claimed_id + 1)?;
    let pn = normal.probabilities(probe_normal)?;
    let pe = enhanced.probabilities(probe_enhanced)?;
    Ok(ScorePair::new("", claimed_id, claimed_id == identity, pn[claimed_id] as f64, pe[claimed_id] as f64))
}

fn check_models(normal: &StreamModel, enhanced: &StreamModel, needed: usize) -> Result<()> {
    if normal.num_classes() != enhanced.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "normal model has {} classes, enhanced model {}",
            normal.num_classes(),
            enhanced.num_classes()
        )));
    }
    if needed > normal.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "claimed identity {} outside the models' 0..{}",
            needed - 1,
            normal.num_classes()
        )));
    }
    Ok(())
}

/// Path text as written to the scores file, `/`-separated.
pub fn probe_name(sample: &Sample) -> String {
    sample.path.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/")
}

/// Scores every probe against all `identities` claims, in probe order.
/// Probes are processed in parallel on the current rayon pool; the result
/// does not depend on the pool size.
pub fn generate_scores(
    root: &Path,
    probes: &[Sample],
    identities: usize,
    normal: &StreamModel,
    enhanced: &StreamModel,
) -> Result<Vec<ScorePair>> {
    if probes.is_empty() {
        return Err(Error::Protocol("no probes to score".into()));
    }
    check_models(normal, enhanced, identities)?;
    if normal.num_classes() != identities {
        return Err(Error::Protocol(format!(
            "protocol has {identities} identities, models have {} classes",
            normal.num_classes()
        )));
    }
    let per_probe: Vec<Vec<ScorePair>> = probes
        .par_iter()
        .map(|s| {
            let pn = normal.probabilities(&load_stream_image(root, s, normal.clahe)?)?;
            let pe = enhanced.probabilities(&load_stream_image(root, s, enhanced.clahe)?)?;
            probe_scores(&probe_name(s), s.identity, &pn, &pe)
        })
        .collect::<Result<_>>()?;
    Ok(per_probe.into_iter().flatten().collect())
}

/// Genuine and impostor counts of [`generate_scores`] without inference.
pub fn score_counts(probes: usize, identities: usize) -> (usize, usize) {
    (probes, probes * identities.saturating_sub(1))
}

pub fn score_set(pairs: &[ScorePair], view: View) -> Result<ScoreSet> {
    let (g, i): (Vec<&ScorePair>, Vec<&ScorePair>) = pairs.iter().partition(|p| p.genuine);
    ScoreSet::new(g.iter().map(|p| p.score(view)).collect(), i.iter().map(|p| p.score(view)).collect())
}

/// `%g`-style formatting with `digits` significant digits.
pub fn format_sig(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let trim = |s: String| {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    };
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -5 || exp >= digits as i32 {
        format!("{}e{exp}", trim(mantissa.to_string()))
    } else {
        trim(format!("{:.*}", (digits as i32 - 1 - exp) as usize, x))
    }
}

pub fn write_scores_csv<W: Write>(pairs: &[ScorePair], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Scores(e.to_string());
    w.write_record(SCORES_HEADER).map_err(err)?;
    for p in pairs {
        w.write_record([
            p.probe.as_str(),
            &p.claimed_id.to_string(),
            if p.genuine { "genuine" } else { "impostor" },
            &format_sig(p.normal, SCORE_DIGITS),
            &format_sig(p.enhanced, SCORE_DIGITS),
            &format_sig(p.fused, SCORE_DIGITS),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::Scores(e.to_string()))
}

pub fn scores_csv_bytes(pairs: &[ScorePair]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_scores_csv(pairs, &mut out)?;
    Ok(out)
}

pub fn parse_scores_csv(bytes: &[u8]) -> Result<Vec<ScorePair>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header = reader.headers().map_err(|e| Error::Scores(format!("header: {e}")))?;
    if header.iter().collect::<Vec<_>>() != SCORES_HEADER {
        return Err(Error::Scores(format!("header must be `{}`", SCORES_HEADER.join(","))));
    }
    let mut pairs = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let r = record.map_err(|e| Error::Scores(format!("line {line}: {e}")))?;
        let bad = |what: &str| Error::Scores(format!("line {line}: invalid {what}"));
        let score = |k: usize, what: &str| -> Result<f64> {
            r.get(k).and_then(|v| v.trim().parse::<f64>().ok()).filter(|v| v.is_finite()).ok_or_else(|| bad(what))
        };
        let genuine = match r.get(2) {
            Some("genuine") => true,
            Some("impostor") => false,
            _ => return Err(bad("label (expected genuine or impostor)")),
        };
        pairs.push(ScorePair {
            probe: r.get(0).ok_or_else(|| bad("probe_path"))?.to_string(),
            claimed_id: r.get(1).and_then(|v| v.trim().parse().ok()).ok_or_else(|| bad("claimed_id"))?,
            genuine,
            normal: score(3, "score_normal")?,
            enhanced: score(4, "score_enhanced")?,
            fused: score(5, "score_fused")?,
        });
    }
    Ok(pairs)
}
