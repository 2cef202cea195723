//! APCER / BPCER, D-EER, fixed operating points and DET curves.
//!
//! A score at or above the threshold classifies the pair as a morph.

use std::collections::BTreeMap;
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};

/// Fixed operating points reported for every method.
pub const OPERATING_POINTS: [f64; 3] = [0.05, 0.10, 0.30];

/// Orientation of a raw score before it enters a [`ScoreSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Polarity {
    LargerIsMorph,
    LargerIsGenuine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub pair_id: String,
    pub score: f64,
    pub label: Label,
}

/// Scores oriented so that larger means morph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub entries: Vec<ScoreEntry>,
    pub method_tag: String,
    pub split_tag: String,
}

impl ScoreSet {
    pub fn new(method_tag: impl Into<String>, split_tag: impl Into<String>, entries: Vec<ScoreEntry>) -> Result<Self> {
        if let Some(e) = entries.iter().find(|e| !e.score.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite score for {}", e.pair_id)));
        }
        Ok(ScoreSet {
            entries,
            method_tag: method_tag.into(),
            split_tag: split_tag.into(),
        })
    }

    /// The one place raw scores are oriented.
    pub fn from_raw(
        method_tag: impl Into<String>,
        split_tag: impl Into<String>,
        pair_ids: Vec<String>,
        raw: &[f64],
        labels: &[Label],
        polarity: Polarity,
    ) -> Result<Self> {
        if pair_ids.len() != raw.len() || raw.len() != labels.len() {
            return Err(Error::LengthMismatch(pair_ids.len(), raw.len().min(labels.len())));
        }
        let sign = match polarity {
            Polarity::LargerIsMorph => 1.0,
            Polarity::LargerIsGenuine => -1.0,
        };
        let entries = pair_ids
            .into_iter()
            .zip(raw)
            .zip(labels)
            .map(|((pair_id, &s), &label)| ScoreEntry {
                pair_id,
                score: sign * s,
                label,
            })
            .collect();
        ScoreSet::new(method_tag, split_tag, entries)
    }

    pub fn counts(&self) -> (usize, usize) {
        let m = self.entries.iter().filter(|e| e.label.is_morph()).count();
        (m, self.entries.len() - m)
    }

    fn require_both(&self) -> Result<(usize, usize)> {
        let (m, b) = self.counts();
        if m == 0 || b == 0 {
            return Err(Error::SingleClass(format!("{} morph / {} bona fide scores in {}", m, b, self.method_tag)));
        }
        Ok((m, b))
    }
}

/// `(apcer, bpcer)` at threshold `t`.
pub fn rates_at_threshold(scores: &ScoreSet, t: f64) -> Result<(f64, f64)> {
    let (nm, nb) = scores.require_both()?;
    let mut missed = 0usize;
    let mut false_alarm = 0usize;
    for e in &scores.entries {
        if e.label.is_morph() {
            if e.score < t {
                missed += 1;
            }
        } else if e.score >= t {
            false_alarm += 1;
        }
    }
    Ok((missed as f64 / nm as f64, false_alarm as f64 / nb as f64))
}

/// One candidate threshold of the sweep, with exact error counts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepPoint {
    pub threshold: f64,
    pub missed_morphs: usize,
    pub false_alarms: usize,
}

/// Every candidate threshold (−∞, midpoints of sorted unique scores, +∞),
/// ascending, with the error counts there.
#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub n_morph: usize,
    pub n_bona_fide: usize,
    pub points: Vec<SweepPoint>,
}

impl Sweep {
    pub fn new(scores: &ScoreSet) -> Result<Sweep> {
        let (nm, nb) = scores.require_both()?;
        let mut s: Vec<(f64, bool)> = scores.entries.iter().map(|e| (e.score, e.label.is_morph())).collect();
        s.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut points = Vec::with_capacity(s.len() + 2);
        points.push(SweepPoint {
            threshold: f64::NEG_INFINITY,
            missed_morphs: 0,
            false_alarms: nb,
        });
        let (mut morph_below, mut bona_below) = (0usize, 0usize);
        let mut i = 0;
        while i < s.len() {
            let v = s[i].0;
            while i < s.len() && s[i].0 == v {
                if s[i].1 {
                    morph_below += 1;
                } else {
                    bona_below += 1;
                }
                i += 1;
            }
            let threshold = if i < s.len() { v + (s[i].0 - v) / 2.0 } else { f64::INFINITY };
            points.push(SweepPoint {
                threshold,
                missed_morphs: morph_below,
                false_alarms: nb - bona_below,
            });
        }
        Ok(Sweep {
            n_morph: nm,
            n_bona_fide: nb,
            points,
        })
    }

    pub fn apcer(&self, p: &SweepPoint) -> f64 {
        p.missed_morphs as f64 / self.n_morph as f64
    }

    pub fn bpcer(&self, p: &SweepPoint) -> f64 {
        p.false_alarms as f64 / self.n_bona_fide as f64
    }

    /// |apcer − bpcer| scaled by both class sizes, exact.
    fn gap(&self, p: &SweepPoint) -> u128 {
        let a = p.missed_morphs as u128 * self.n_bona_fide as u128;
        let b = p.false_alarms as u128 * self.n_morph as u128;
        a.abs_diff(b)
    }
}

/// D-EER and the threshold where it is attained.
pub fn d_eer(scores: &ScoreSet) -> Result<(f64, f64)> {
    let sweep = Sweep::new(scores)?;
    let mut best = &sweep.points[0];
    for p in &sweep.points[1..] {
        if sweep.gap(p) < sweep.gap(best) {
            best = p;
        }
    }
    Ok(((sweep.apcer(best) + sweep.bpcer(best)) / 2.0, best.threshold))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedKind {
    Apcer,
    Bpcer,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedRate {
    /// The complementary rate at the chosen threshold.
    pub rate: f64,
    pub threshold: f64,
    /// Set when only a degenerate (infinite) threshold meets the constraint.
    pub warning: bool,
}

/// Complementary error rate at the threshold whose `kind` rate is the
/// largest value not above `fixed_value`; ties go to the smaller
/// complementary rate, then the lower threshold.
pub fn rate_at_fixed(scores: &ScoreSet, kind: FixedKind, fixed_value: f64) -> Result<FixedRate> {
    if !(fixed_value > 0.0 && fixed_value < 1.0) {
        return Err(Error::InvalidInput(format!("fixed value {fixed_value} outside (0,1)")));
    }
    let sweep = Sweep::new(scores)?;
    let (n_fixed, fixed_of, other_of): (usize, fn(&SweepPoint) -> usize, fn(&SweepPoint) -> usize) = match kind {
        FixedKind::Apcer => (sweep.n_morph, |p| p.missed_morphs, |p| p.false_alarms),
        FixedKind::Bpcer => (sweep.n_bona_fide, |p| p.false_alarms, |p| p.missed_morphs),
    };
    let mut best: Option<&SweepPoint> = None;
    for p in &sweep.points {
        if fixed_of(p) as f64 / n_fixed as f64 > fixed_value {
            continue;
        }
        best = match best {
            None => Some(p),
            Some(b) if fixed_of(p) > fixed_of(b) || (fixed_of(p) == fixed_of(b) && other_of(p) < other_of(b)) => Some(p),
            keep => keep,
        };
    }
    let best = best.expect("an infinite threshold always meets the constraint");
    let rate = match kind {
        FixedKind::Apcer => sweep.bpcer(best),
        FixedKind::Bpcer => sweep.apcer(best),
    };
    Ok(FixedRate {
        rate,
        threshold: best.threshold,
        warning: best.threshold.is_infinite(),
    })
}

/// `(apcer, bpcer)` over the full sweep, down-sampled to `n_points` with both
/// endpoints kept.
pub fn det_curve(scores: &ScoreSet, n_points: usize) -> Result<Vec<(f64, f64)>> {
    if n_points < 2 {
        return Err(Error::InvalidInput("a DET curve needs at least 2 points".into()));
    }
    let sweep = Sweep::new(scores)?;
    let full: Vec<(f64, f64)> = sweep.points.iter().map(|p| (sweep.apcer(p), sweep.bpcer(p))).collect();
    if full.len() <= n_points {
        return Ok(full);
    }
    let n = full.len();
    Ok((0..n_points)
        .map(|i| {
            let idx = ((i * (n - 1)) as f64 / (n_points - 1) as f64).round() as usize;
            full[idx]
        })
        .collect())
}

/// Area under the ROC traced by a DET curve (TPR = 1 − apcer, FPR = bpcer).
pub fn det_auc(det: &[(f64, f64)]) -> f64 {
    let mut area = 0.0;
    for w in det.windows(2) {
        let (a0, b0) = w[0];
        let (a1, b1) = w[1];
        area += (b0 - b1) * ((1.0 - a0) + (1.0 - a1)) / 2.0;
    }
    area
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub split: String,
    pub n_morph: usize,
    pub n_bona_fide: usize,
    pub d_eer: f64,
    #[serde(with = "extended_f64")]
    pub threshold_at_eer: f64,
    pub apcer_at_bpcer: BTreeMap<String, f64>,
    pub bpcer_at_apcer: BTreeMap<String, f64>,
    pub det_samples: Vec<(f64, f64)>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// JSON has no infinities; they travel as the strings "inf" and "-inf".
mod extended_f64 {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        match *v {
            f64::INFINITY => s.serialize_str("inf"),
            f64::NEG_INFINITY => s.serialize_str("-inf"),
            x => s.serialize_f64(x),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) if t == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Text(t) => Err(D::Error::custom(format!("expected a number, \"inf\" or \"-inf\", got `{t}`"))),
        }
    }
}

fn pct(v: f64) -> String {
    format!("{}%", (v * 100.0).round() as i64)
}

pub fn evaluate(scores: &ScoreSet, det_points: usize) -> Result<EvalReport> {
    let (nm, nb) = scores.require_both()?;
    let (eer, thr) = d_eer(scores)?;
    let mut apcer_at_bpcer = BTreeMap::new();
    let mut bpcer_at_apcer = BTreeMap::new();
    let mut warnings = Vec::new();
    for v in OPERATING_POINTS {
        let a = rate_at_fixed(scores, FixedKind::Bpcer, v)?;
        let b = rate_at_fixed(scores, FixedKind::Apcer, v)?;
        if a.warning {
            warnings.push(format!("APCER@BPCER={} needs an infinite threshold", pct(v)));
        }
        if b.warning {
            warnings.push(format!("BPCER@APCER={} needs an infinite threshold", pct(v)));
        }
        apcer_at_bpcer.insert(pct(v), a.rate);
        bpcer_at_apcer.insert(pct(v), b.rate);
    }
    Ok(EvalReport {
        method: scores.method_tag.clone(),
        split: scores.split_tag.clone(),
        n_morph: nm,
        n_bona_fide: nb,
        d_eer: eer,
        threshold_at_eer: thr,
        apcer_at_bpcer,
        bpcer_at_apcer,
        det_samples: det_curve(scores, det_points)?,
        warnings,
    })
}

#[derive(Serialize, Deserialize)]
struct ScoreRow {
    pair_id: String,
    score: f64,
    label: u8,
    method_tag: String,
    split_tag: String,
}

/// Writes `pair_id,score,label,method_tag,split_tag` rows for every set.
pub fn write_scores_csv(path: &Path, sets: &[&ScoreSet]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for set in sets {
        for e in &set.entries {
            w.serialize(ScoreRow {
                pair_id: e.pair_id.clone(),
                score: e.score,
                label: e.label.y(),
                method_tag: set.method_tag.clone(),
                split_tag: set.split_tag.clone(),
            })?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a scores file back, one set per (method, split) in first-seen order.
pub fn read_scores_csv(path: &Path) -> Result<Vec<ScoreSet>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut sets: Vec<ScoreSet> = Vec::new();
    for row in r.deserialize() {
        let row: ScoreRow = row?;
        let label = Label::try_from(row.label).map_err(Error::InvalidInput)?;
        let entry = ScoreEntry {
            pair_id: row.pair_id,
            score: row.score,
            label,
        };
        match sets.iter_mut().find(|s| s.method_tag == row.method_tag && s.split_tag == row.split_tag) {
            Some(s) => s.entries.push(entry),
            None => sets.push(ScoreSet::new(row.method_tag, row.split_tag, vec![entry])?),
        }
    }
    Ok(sets)
}

pub fn write_det_csv(path: &Path, det: &[(f64, f64)]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["apcer", "bpcer"])?;
    for (a, b) in det {
        w.write_record([a.to_string(), b.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Inverse standard normal CDF (Acklam's rational approximation).
fn probit(p: f64) -> f64 {
    const A: [f64; 6] = [-3.969683028665376e1, 2.209460984245205e2, -2.759285104469687e2, 1.383577518672690e2, -3.066479806614716e1, 2.506628277459239];
    const B: [f64; 5] = [-5.447609879822406e1, 1.615858368580409e2, -1.556989798598866e2, 6.680131188771972e1, -1.328068155288572e1];
    const C: [f64; 6] = [-7.784894002430293e-3, -3.223964580411365e-1, -2.400758277161838, -2.549732539343734, 4.374664141464968, 2.938163982698783];
    const D: [f64; 4] = [7.784695709041462e-3, 3.224671290700398e-1, 2.445134137142996, 3.754408661907416];
    let pl = 0.02425;
    if p < pl {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5]) / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - pl {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -probit(1.0 - p)
    }
}

const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [23, 190, 207],
];

/// DET plot on normal-deviate axes (0.1 % to 99.9 %), one color per curve.
pub fn render_det_png(path: &Path, curves: &[(&str, &[(f64, f64)])]) -> Result<()> {
    const SIZE: u32 = 480;
    const MARGIN: f64 = 40.0;
    let lo = probit(0.001);
    let hi = probit(0.999);
    let span = SIZE as f64 - 2.0 * MARGIN;
    let to_px = |rate: f64| MARGIN + (probit(rate.clamp(0.001, 0.999)) - lo) / (hi - lo) * span;
    let mut img = RgbImage::from_pixel(SIZE, SIZE, Rgb([255, 255, 255]));
    let grid = Rgb([220, 220, 220]);
    for tick in [0.001, 0.01, 0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 0.9, 0.95, 0.99, 0.999] {
        let v = to_px(tick).round() as u32;
        for k in MARGIN as u32..=(SIZE - MARGIN as u32) {
            img.put_pixel(v, k, grid);
            img.put_pixel(k, SIZE - 1 - v, grid);
        }
    }
    for k in MARGIN as u32..=(SIZE - MARGIN as u32) {
        let a = MARGIN as u32;
        img.put_pixel(a, k, Rgb([0, 0, 0]));
        img.put_pixel(k, SIZE - a, Rgb([0, 0, 0]));
    }
    for (ci, (_, pts)) in curves.iter().enumerate() {
        let color = Rgb(PALETTE[ci % PALETTE.len()]);
        // x: bpcer, y: apcer (up)
        let xy: Vec<(f64, f64)> = pts.iter().map(|&(a, b)| (to_px(b), SIZE as f64 - to_px(a))).collect();
        for w in xy.windows(2) {
            let (x0, y0) = w[0];
            let (x1, y1) = w[1];
            let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
            for s in 0..=steps {
                let t = s as f64 / steps as f64;
                let x = (x0 + t * (x1 - x0)).round() as i64;
                let y = (y0 + t * (y1 - y0)).round() as i64;
                for (dx, dy) in [(0, 0), (1, 0), (0, 1)] {
                    let (px, py) = (x + dx, y + dy);
                    if px >= 0 && py >= 0 && (px as u32) < SIZE && (py as u32) < SIZE {
                        img.put_pixel(px as u32, py as u32, color);
                    }
                }
            }
        }
    }
    crate::imaging::save_rgb(&img, path)
}
