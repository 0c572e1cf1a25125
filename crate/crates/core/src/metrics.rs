//! Binary-classification metrics with fake as the positive class.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Real => "real",
            Label::Fake => "fake",
        }
    }

    pub fn is_fake(&self) -> bool {
        matches!(self, Label::Fake)
    }

    pub fn flipped(&self) -> Label {
        match self {
            Label::Real => Label::Fake,
            Label::Fake => Label::Real,
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Label {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "real" => Ok(Label::Real),
            "fake" => Ok(Label::Fake),
            other => Err(Error::arg(format!("label must be `real` or `fake`, got `{other}`"))),
        }
    }
}

/// Scores in [0, 1] paired with ground truth.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoredSet {
    pub pairs: Vec<(f64, Label)>,
}

impl ScoredSet {
    pub fn new(pairs: Vec<(f64, Label)>) -> Self {
        ScoredSet { pairs }
    }

    pub fn from_parts(fake: &[f64], real: &[f64]) -> Self {
        let mut pairs: Vec<(f64, Label)> = fake.iter().map(|&s| (s, Label::Fake)).collect();
        pairs.extend(real.iter().map(|&s| (s, Label::Real)));
        ScoredSet { pairs }
    }

    fn counts(&self) -> (usize, usize) {
        let pos = self.pairs.iter().filter(|(_, l)| l.is_fake()).count();
        (pos, self.pairs.len() - pos)
    }

    fn require_both(&self, what: &str) -> Result<(usize, usize)> {
        let (pos, neg) = self.counts();
        if pos == 0 || neg == 0 {
            return Err(Error::arg(format!("{what} needs both real and fake samples")));
        }
        Ok((pos, neg))
    }

    /// Distinct thresholds in descending order with the (fake, real) counts
    /// scoring exactly at each.
    fn grouped_desc(&self) -> Vec<(f64, usize, usize)> {
        let mut sorted: Vec<(f64, Label)> = self.pairs.clone();
        sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut groups: Vec<(f64, usize, usize)> = Vec::new();
        for (s, l) in sorted {
            match groups.last_mut() {
                Some(g) if g.0 == s => {
                    if l.is_fake() {
                        g.1 += 1
                    } else {
                        g.2 += 1
                    }
                }
                _ => groups.push((s, l.is_fake() as usize, (!l.is_fake()) as usize)),
            }
        }
        groups
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    pub accuracy: f64,
    pub f1: f64,
    pub fpr: f64,
    pub fnr: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy, F1, FPR and FNR with "fake" predicted when `score >= threshold`.
pub fn threshold_metrics(s: &ScoredSet, threshold: f64) -> Result<ThresholdMetrics> {
    if s.pairs.is_empty() {
        return Err(Error::arg("empty score set"));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for &(score, label) in &s.pairs {
        match (score >= threshold, label.is_fake()) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(ThresholdMetrics {
        accuracy: ratio(tp + tn, s.pairs.len()),
        f1: ratio(2 * tp, 2 * tp + fp + fn_),
        fpr: ratio(fp, fp + tn),
        fnr: ratio(fn_, fn_ + tp),
    })
}

/// ROC operating points (FPR, TPR) from the strictest threshold down,
/// starting at (0, 0). Tied scores form a single step.
pub fn roc_points(s: &ScoredSet) -> Result<Vec<(f64, f64)>> {
    let (pos, neg) = s.require_both("ROC")?;
    let mut pts = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (_, f, r) in s.grouped_desc() {
        tp += f;
        fp += r;
        pts.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(pts)
}

/// Trapezoidal area under the ROC curve.
pub fn roc_auc(s: &ScoredSet) -> Result<f64> {
    let pts = roc_points(s)?;
    Ok(pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum())
}

/// Step-wise average precision: `Σ (R_n − R_{n−1}) · P_n` over descending
/// distinct thresholds.
pub fn average_precision(s: &ScoredSet) -> Result<f64> {
    let (pos, _) = s.require_both("average precision")?;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for (_, f, r) in s.grouped_desc() {
        tp += f;
        fp += r;
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// Equal error rate. Operating points are taken at every distinct score
/// (predict fake at `score >= t`) plus the reject-all point; the first
/// adjacent pair where `FPR − FNR` changes sign is linearly interpolated to
/// `FPR = FNR`, and an exact crossing is returned directly.
pub fn eer(s: &ScoredSet) -> Result<f64> {
    let (pos, neg) = s.require_both("EER")?;
    // ascending thresholds: start from accept-all (FPR 1, FNR 0)
    let mut groups = s.grouped_desc();
    groups.reverse();
    let mut points = Vec::with_capacity(groups.len() + 1);
    let (mut fn_, mut tn) = (0usize, 0usize);
    points.push((1.0, 0.0));
    for (_, f, r) in groups {
        fn_ += f;
        tn += r;
        points.push(((neg - tn) as f64 / neg as f64, fn_ as f64 / pos as f64));
    }
    for w in points.windows(2) {
        let (f1, n1) = w[0];
        let (f2, n2) = w[1];
        let d1 = f1 - n1;
        let d2 = f2 - n2;
        if d1 == 0.0 {
            return Ok(f1);
        }
        if d2 == 0.0 {
            return Ok(f2);
        }
        if d1 > 0.0 && d2 < 0.0 {
            let a = d1 / (d1 - d2);
            return Ok(f1 + a * (f2 - f1));
        }
    }
    // the last point is (0, 1), so a crossing always exists
    unreachable!("FPR - FNR never changed sign")
}

/// The seven headline metrics for one experimental condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub criterion: String,
    pub manipulation: String,
    pub magnitude: String,
    pub acc: f64,
    pub auc: f64,
    pub f1: f64,
    pub ap: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub eer: f64,
}

pub const REPORT_HEADER: &str = "dataset,criterion,manipulation,magnitude,acc,auc,f1,ap,fpr,fnr,eer";

impl EvalReport {
    pub fn compute(
        s: &ScoredSet,
        threshold: f64,
        dataset: &str,
        criterion: &str,
        manipulation: &str,
        magnitude: &str,
    ) -> Result<Self> {
        let t = threshold_metrics(s, threshold)?;
        Ok(EvalReport {
            dataset: dataset.into(),
            criterion: criterion.into(),
            manipulation: manipulation.into(),
            magnitude: magnitude.into(),
            acc: t.accuracy,
            auc: roc_auc(s)?,
            f1: t.f1,
            ap: average_precision(s)?,
            fpr: t.fpr,
            fnr: t.fnr,
            eer: eer(s)?,
        })
    }

    pub fn metric_values(&self) -> [(&'static str, f64); 7] {
        [
            ("acc", self.acc),
            ("auc", self.auc),
            ("f1", self.f1),
            ("ap", self.ap),
            ("fpr", self.fpr),
            ("fnr", self.fnr),
            ("eer", self.eer),
        ]
    }

    /// One CSV row matching [`REPORT_HEADER`].
    pub fn csv_row(&self) -> String {
        let mut row = format!("{},{},{},{}", self.dataset, self.criterion, self.manipulation, self.magnitude);
        for (_, v) in self.metric_values() {
            row.push_str(&format!(",{v:?}"));
        }
        row
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 11 {
            return Err(Error::parse(None, format!("report row has {} fields, expected 11", f.len())));
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse().map_err(|_| Error::parse(None, format!("bad metric value `{}`", f[i])))
        };
        Ok(EvalReport {
            dataset: f[0].into(),
            criterion: f[1].into(),
            manipulation: f[2].into(),
            magnitude: f[3].into(),
            acc: num(4)?,
            auc: num(5)?,
            f1: num(6)?,
            ap: num(7)?,
            fpr: num(8)?,
            fnr: num(9)?,
            eer: num(10)?,
        })
    }
}
