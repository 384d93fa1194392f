//! Evaluation: confusion counts, specificity/sensitivity/accuracy, ROC
//! curve, trapezoidal AUC, cut-off selection, AUC interpretation bands and
//! the results table.
//!
//! A sample is predicted positive when `score ≥ threshold`, everywhere.
//! "Accuracy" is the mean of specificity and sensitivity, not the raw hit
//! rate. Table values are rounded half-up at display precision.

use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub score: f64,
    pub label: u8,
}

impl ScoredSample {
    pub fn new(score: f64, label: u8) -> Self {
        Self { score, label }
    }
}

pub fn scored(scores: &[f64], labels: &[u8]) -> Vec<ScoredSample> {
    scores
        .iter()
        .zip(labels)
        .map(|(&s, &l)| ScoredSample::new(s, l))
        .collect()
}

fn check_samples(samples: &[ScoredSample]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no scored samples".into()));
    }
    if let Some(s) = samples
        .iter()
        .find(|s| !s.score.is_finite() || s.label > 1)
    {
        return Err(Error::InvalidArgument(format!("invalid scored sample {s:?}")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

pub fn confusion_at(samples: &[ScoredSample], threshold: f64) -> Result<Confusion> {
    check_samples(samples)?;
    let mut c = Confusion::default();
    for s in samples {
        match (s.score >= threshold, s.label == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Specificity, sensitivity and their mean, in percent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpSeAcc {
    pub sp: f64,
    pub se: f64,
    pub acc: f64,
}

pub fn sp_se_acc(c: &Confusion) -> Result<SpSeAcc> {
    let negatives = c.tn + c.fp;
    let positives = c.tp + c.fn_;
    if negatives == 0 || positives == 0 {
        return Err(Error::InvalidArgument(format!(
            "degenerate evaluation set: {negatives} negatives, {positives} positives"
        )));
    }
    let sp = 100.0 * c.tn as f64 / negatives as f64;
    let se = 100.0 * c.tp as f64 / positives as f64;
    Ok(SpSeAcc {
        sp,
        se,
        acc: (sp + se) / 2.0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
    pub tp: usize,
    pub fp: usize,
}

/// Operating points for decreasing thresholds: a sentinel `+∞` (nothing
/// predicted positive) followed by every distinct score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub positives: usize,
    pub negatives: usize,
}

pub fn roc_curve(samples: &[ScoredSample]) -> Result<RocCurve> {
    check_samples(samples)?;
    let positives = samples.iter().filter(|s| s.label == 1).count();
    let negatives = samples.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::InvalidArgument(
            "ROC needs at least one positive and one negative sample".into(),
        ));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));

    let point = |threshold: f64, tp: usize, fp: usize| RocPoint {
        threshold,
        fpr: fp as f64 / negatives as f64,
        tpr: tp as f64 / positives as f64,
        tp,
        fp,
    };
    let mut points = vec![point(f64::INFINITY, 0, 0)];
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].score;
        while i < sorted.len() && sorted[i].score == t {
            if sorted[i].label == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(point(t, tp, fp));
    }
    Ok(RocCurve {
        points,
        positives,
        negatives,
    })
}

/// Trapezoidal area under the curve.
pub fn auc(curve: &RocCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Convenience: `auc(roc_curve(samples))`.
pub fn auc_of(samples: &[ScoredSample]) -> Result<f64> {
    Ok(auc(&roc_curve(samples)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cutoff {
    pub threshold: f64,
    pub sp: f64,
    pub se: f64,
}

/// Threshold maximizing `Sp + Se` (equivalently `tpr − fpr`). Ties go to the
/// higher sensitivity, then the lower threshold. The comparison is done on
/// exact integer counts.
pub fn choose_cutoff(curve: &RocCurve, samples: &[ScoredSample]) -> Result<Cutoff> {
    let (p, n) = (curve.positives as i128, curve.negatives as i128);
    // (tpr − fpr)·P·N = tp·N − fp·P
    let key = |pt: &RocPoint| (pt.tp as i128 * n - pt.fp as i128 * p, pt.tp);
    let best = curve
        .points
        .iter()
        .fold(None::<&RocPoint>, |best, pt| match best {
            Some(b) if key(b) > key(pt) => Some(b),
            // equal keys: later points have lower thresholds
            _ => Some(pt),
        })
        .ok_or_else(|| Error::InvalidArgument("empty ROC curve".into()))?;
    let stats = sp_se_acc(&confusion_at(samples, best.threshold)?)?;
    Ok(Cutoff {
        threshold: best.threshold,
        sp: stats.sp,
        se: stats.se,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Band {
    WorseThanChance,
    No,
    Poor,
    Acceptable,
    Good,
    Excellent,
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Band::WorseThanChance => "Worse than chance",
            Band::No => "No discrimination",
            Band::Poor => "Poor discrimination",
            Band::Acceptable => "Acceptable discrimination",
            Band::Good => "Good discrimination",
            Band::Excellent => "Excellent discrimination",
        })
    }
}

/// Maps an AUC onto the half-open bands `[0.5, 0.6)`, …, `[0.9, 1.0]`.
pub fn interpret(auc_value: f64) -> Result<Band> {
    if !(0.0..=1.0).contains(&auc_value) {
        return Err(Error::InvalidArgument(format!(
            "AUC must lie in [0, 1], got {auc_value}"
        )));
    }
    Ok(match auc_value {
        a if a < 0.5 => Band::WorseThanChance,
        a if a < 0.6 => Band::No,
        a if a < 0.7 => Band::Poor,
        a if a < 0.8 => Band::Acceptable,
        a if a < 0.9 => Band::Good,
        _ => Band::Excellent,
    })
}

/// Half-up rounding to `places` decimals. A 1e-9 guard on the scaled value
/// absorbs binary representation error, so `84.765 → 84.77`.
pub fn round_half_up(x: f64, places: u32) -> f64 {
    let f = 10f64.powi(places as i32);
    (x * f + 0.5 + 1e-9).floor() / f
}

pub fn fixed(x: f64, places: u32) -> String {
    format!("{:.*}", places as usize, round_half_up(x, places))
}

/// One input row: Sp/Se/Acc in percent. A supplied `acc` is checked against
/// `(sp + se) / 2`; a missing one is computed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub model: String,
    pub auc: f64,
    pub sp: f64,
    pub se: f64,
    #[serde(default)]
    pub acc: Option<f64>,
}

impl ResultRow {
    pub fn new(model: impl Into<String>, auc: f64, sp: f64, se: f64) -> Self {
        Self {
            model: model.into(),
            auc,
            sp,
            se,
            acc: None,
        }
    }
}

/// Largest tolerated gap between a supplied accuracy and `(Sp + Se) / 2`.
pub const ACC_TOLERANCE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub auc: f64,
    pub sp: f64,
    pub se: f64,
    pub acc: f64,
    pub interpretation: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

pub fn report(rows: &[ResultRow]) -> Result<Report> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("report needs at least one row".into()));
    }
    let rows = rows
        .iter()
        .map(|r| {
            let expected = (r.sp + r.se) / 2.0;
            if let Some(acc) = r.acc {
                if (acc - expected).abs() > ACC_TOLERANCE + 1e-9 {
                    return Err(Error::InconsistentAccuracy {
                        row: r.model.clone(),
                        acc,
                        expected,
                    });
                }
            }
            Ok(ReportRow {
                model: r.model.clone(),
                auc: r.auc,
                sp: r.sp,
                se: r.se,
                acc: expected,
                interpretation: interpret(r.auc)?.to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Report { rows })
}

impl Report {
    /// Aligned table: AUC to three decimals, Sp/Se/Acc to two.
    pub fn render_text(&self) -> String {
        let name_w = self
            .rows
            .iter()
            .map(|r| r.model.chars().count())
            .max()
            .unwrap_or(0)
            .max("Model".len());
        let mut s = format!(
            "{:<name_w$}  {:>5}  {:>6}  {:>6}  {:>7}  Interpretation\n",
            "Model", "AUC", "Sp (%)", "Se (%)", "Acc (%)"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<name_w$}  {:>5}  {:>6}  {:>6}  {:>7}  {}",
                r.model,
                fixed(r.auc, 3),
                fixed(r.sp, 2),
                fixed(r.se, 2),
                fixed(r.acc, 2),
                r.interpretation
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// `threshold fpr tpr` per line, tab-separated, with a comment header.
pub fn roc_table(curve: &RocCurve) -> String {
    let mut s = String::from("# threshold\tfpr\ttpr\n");
    for p in &curve.points {
        let _ = writeln!(s, "{}\t{}\t{}", p.threshold, p.fpr, p.tpr);
    }
    s
}
