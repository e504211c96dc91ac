//! Privacy and utility metrics.
//!
//! Scores are affine-calibrated cosines standing in for PLDA log-likelihood
//! ratios; absolute similarity-matrix values therefore depend on the
//! calibration, while orderings and EERs do not.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::cosine;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `score = alpha · cos + beta`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration::identity()
    }
}

impl Calibration {
    pub fn identity() -> Self {
        Calibration { alpha: 1.0, beta: 0.0 }
    }

    /// Maps the mean target score to +2 and the mean non-target score to -2.
    pub fn from_means(target_mean: f64, nontarget_mean: f64) -> Result<Self> {
        let gap = target_mean - nontarget_mean;
        if !(gap.abs() > 0.0) {
            return Err(Error::InvalidConfig("target and non-target means coincide".into()));
        }
        let alpha = 4.0 / gap;
        Ok(Calibration { alpha, beta: 2.0 - alpha * target_mean })
    }

    /// Class-balanced logistic regression of the target flag on the raw cosine,
    /// fitted by Newton's method with a small ridge on `alpha`.
    pub fn fit_logistic(targets: &[f64], nontargets: &[f64]) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::EmptyScores("target"));
        }
        if nontargets.is_empty() {
            return Err(Error::EmptyScores("non-target"));
        }
        const RIDGE: f64 = 1e-3;
        let (mut a, mut b) = (1.0f64, 0.0f64);
        let wt = 0.5 / targets.len() as f64;
        let wn = 0.5 / nontargets.len() as f64;
        for _ in 0..100 {
            // gradient and Hessian of the weighted negative log-likelihood
            let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (RIDGE * a, 0.0, RIDGE, 0.0, 0.0);
            let mut acc = |s: f64, y: f64, w: f64| {
                let p = sigmoid(a * s + b);
                let r = w * (p - y);
                let h = w * p * (1.0 - p);
                ga += r * s;
                gb += r;
                haa += h * s * s;
                hab += h * s;
                hbb += h;
            };
            targets.iter().for_each(|&s| acc(s, 1.0, wt));
            nontargets.iter().for_each(|&s| acc(s, 0.0, wn));
            let det = haa * hbb - hab * hab;
            if !(det > 0.0) {
                break;
            }
            let da = (hbb * ga - hab * gb) / det;
            let db = (haa * gb - hab * ga) / det;
            a -= da;
            b -= db;
            if da.abs() + db.abs() < 1e-12 {
                break;
            }
        }
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::NonFinite("calibration fit".into()));
        }
        Ok(Calibration { alpha: a, beta: b })
    }

    pub fn score(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        llr_score(a, b, self)
    }
}

pub fn llr_score(a: &[f64], b: &[f64], calib: &Calibration) -> Result<f64> {
    Ok(calib.alpha * cosine(a, b)? + calib.beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Block {
    Oo,
    Oa,
    Aa,
}

impl Block {
    /// Blocks built from one data set against itself drop self-pairs on the diagonal.
    pub fn same_data(self) -> bool {
        matches!(self, Block::Oo | Block::Aa)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Block::Oo => "oo",
            Block::Oa => "oa",
            Block::Aa => "aa",
        }
    }
}

/// Utterance vectors of one speaker.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerUtterances {
    pub speaker: String,
    pub vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub block: Block,
    pub speakers: Vec<String>,
    /// Row-major `N × N`.
    pub values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn from_values(block: Block, speakers: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let n = speakers.len();
        if values.len() != n * n {
            return Err(Error::DimensionMismatch { expected: n * n, got: values.len() });
        }
        Ok(SimilarityMatrix { block, speakers, values })
    }

    pub fn n(&self) -> usize {
        self.speakers.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n() + j]
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["speaker".to_string()];
        header.extend(self.speakers.iter().cloned());
        wtr.write_record(&header)?;
        for (i, s) in self.speakers.iter().enumerate() {
            let mut row = vec![s.clone()];
            row.extend((0..self.n()).map(|j| self.get(i, j).to_string()));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Cell `(i, j)` is the sigmoid of the mean score over utterance pairs of
/// speakers `i` and `j`; for same-data blocks the diagonal skips `k = l`.
pub fn similarity_matrix<F>(
    group_a: &[SpeakerUtterances],
    group_b: &[SpeakerUtterances],
    block: Block,
    scorer: F,
) -> Result<SimilarityMatrix>
where
    F: Fn(&[f64], &[f64]) -> Result<f64>,
{
    if group_a.len() != group_b.len() {
        return Err(Error::DimensionMismatch { expected: group_a.len(), got: group_b.len() });
    }
    for (a, b) in group_a.iter().zip(group_b) {
        if a.speaker != b.speaker {
            return Err(Error::InvalidShape(format!("speaker order differs: {:?} vs {:?}", a.speaker, b.speaker)));
        }
        if a.vectors.is_empty() || b.vectors.is_empty() {
            return Err(Error::InsufficientUtterances(a.speaker.clone()));
        }
        if block.same_data() && a.vectors.len() < 2 {
            return Err(Error::InsufficientUtterances(a.speaker.clone()));
        }
    }
    let n = group_a.len();
    let mut values = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let exclude_self = block.same_data() && i == j;
            let mut sum = 0.0;
            let mut count = 0usize;
            for (k, x) in group_a[i].vectors.iter().enumerate() {
                for (l, y) in group_b[j].vectors.iter().enumerate() {
                    if exclude_self && k == l {
                        continue;
                    }
                    sum += scorer(x, y)?;
                    count += 1;
                }
            }
            values.push(sigmoid(sum / count as f64));
        }
    }
    SimilarityMatrix::from_values(block, group_a.iter().map(|g| g.speaker.clone()).collect(), values)
}

/// `|mean(diag) - mean(offdiag)|`
pub fn d_diag(m: &SimilarityMatrix) -> Result<f64> {
    let n = m.n();
    if n < 2 {
        return Err(Error::MatrixTooSmall(n));
    }
    let mut diag = 0.0;
    let mut off = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                diag += m.get(i, j);
            } else {
                off += m.get(i, j);
            }
        }
    }
    Ok((diag / n as f64 - off / (n * (n - 1)) as f64).abs())
}

/// Gain of voice distinctiveness in dB.
pub fn g_vd(m_aa: &SimilarityMatrix, m_oo: &SimilarityMatrix) -> Result<f64> {
    let reference = d_diag(m_oo)?;
    if reference == 0.0 {
        return Err(Error::DegenerateReference);
    }
    Ok(10.0 * (d_diag(m_aa)? / reference).log10())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub target: Vec<f64>,
    pub nontarget: Vec<f64>,
}

impl ScoreSet {
    pub fn new(target: Vec<f64>, nontarget: Vec<f64>) -> Self {
        ScoreSet { target, nontarget }
    }

    fn check(&self) -> Result<()> {
        if self.target.is_empty() {
            return Err(Error::EmptyScores("target"));
        }
        if self.nontarget.is_empty() {
            return Err(Error::EmptyScores("non-target"));
        }
        if self.target.iter().chain(&self.nontarget).any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("scores".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerResult {
    pub eer: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OperatingPoint {
    threshold: f64,
    far: f64,
    frr: f64,
}

/// Operating points for "accept if score >= t", with `t` below every score,
/// at each midpoint between consecutive distinct scores, and above every
/// score. Ordered by increasing threshold.
fn operating_points(scores: &ScoreSet) -> Vec<OperatingPoint> {
    let mut all: Vec<(f64, bool)> =
        scores.target.iter().map(|&s| (s, true)).chain(scores.nontarget.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let nt = scores.target.len() as f64;
    let nn = scores.nontarget.len() as f64;
    let mut rejected_targets = 0usize;
    let mut rejected_nontargets = 0usize;
    let mut points = vec![OperatingPoint { threshold: all[0].0 - 1.0, far: 1.0, frr: 0.0 }];
    let mut i = 0;
    while i < all.len() {
        let v = all[i].0;
        while i < all.len() && all[i].0 == v {
            if all[i].1 {
                rejected_targets += 1;
            } else {
                rejected_nontargets += 1;
            }
            i += 1;
        }
        let threshold = if i < all.len() { 0.5 * (v + all[i].0) } else { v + 1.0 };
        points.push(OperatingPoint {
            threshold,
            far: (nn - rejected_nontargets as f64) / nn,
            frr: rejected_targets as f64 / nt,
        });
    }
    points
}

fn cross(o: &OperatingPoint, a: &OperatingPoint, b: &OperatingPoint) -> f64 {
    (a.far - o.far) * (b.frr - o.frr) - (a.frr - o.frr) * (b.far - o.far)
}

fn interpolate(p: &OperatingPoint, q: &OperatingPoint) -> EerResult {
    let dp = p.far - p.frr;
    let dq = q.far - q.frr;
    if dp == dq {
        return EerResult { eer: 0.5 * (p.far + p.frr), threshold: p.threshold };
    }
    let lambda = dp / (dp - dq);
    EerResult { eer: p.far + lambda * (q.far - p.far), threshold: p.threshold + lambda * (q.threshold - p.threshold) }
}

/// Equal error rate on the convex hull of the ROC: operating points are
/// swept over all score midpoints, the lower convex hull of (FAR, FRR) is
/// taken, and FAR = FRR is located by linear interpolation between the two
/// bracketing hull vertices.
pub fn eer(scores: &ScoreSet) -> Result<EerResult> {
    scores.check()?;
    let mut pts = operating_points(scores);
    // ascending FAR (descending threshold)
    pts.reverse();
    let mut hull: Vec<OperatingPoint> = Vec::with_capacity(pts.len());
    for p in pts {
        while hull.len() >= 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], &p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    for w in hull.windows(2) {
        let (p, q) = (&w[0], &w[1]);
        // along the hull FAR rises and FRR falls; find where FAR - FRR turns non-negative
        if p.far - p.frr <= 0.0 && q.far - q.frr >= 0.0 {
            return Ok(interpolate(p, q));
        }
    }
    unreachable!("hull spans (0, 1) to (1, 0)")
}

/// EER from the raw FAR/FRR curve without convexification; can exceed 0.5
/// when targets score systematically below non-targets.
pub fn sweep_eer(scores: &ScoreSet) -> Result<EerResult> {
    scores.check()?;
    let pts = operating_points(scores);
    for w in pts.windows(2) {
        let (p, q) = (&w[0], &w[1]);
        if p.far - p.frr >= 0.0 && q.far - q.frr <= 0.0 {
            return Ok(interpolate(p, q));
        }
    }
    unreachable!("curve runs from FAR=1 to FRR=1")
}

/// `Σ w_i e_i / Σ w_i`
pub fn weighted_average_eer(per_subset: &[(f64, f64)]) -> Result<f64> {
    if per_subset.iter().any(|&(_, w)| !(w >= 0.0)) {
        return Err(Error::InvalidConfig("subset weights must be non-negative".into()));
    }
    let total: f64 = per_subset.iter().map(|&(_, w)| w).sum();
    if !(total > 0.0) {
        return Err(Error::ZeroWeightSum);
    }
    Ok(per_subset.iter().map(|&(e, w)| e * w).sum::<f64>() / total)
}

/// One verification trial with its score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTrial {
    pub enroll_id: String,
    pub test_id: String,
    pub score: f64,
    pub target: bool,
}

pub fn write_scores_csv<W: Write>(trials: &[ScoredTrial], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["enroll_id", "test_id", "score", "target_flag"])?;
    for t in trials {
        wtr.write_record([
            t.enroll_id.as_str(),
            t.test_id.as_str(),
            &t.score.to_string(),
            if t.target { "1" } else { "0" },
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn score_set(trials: &[ScoredTrial]) -> ScoreSet {
    let mut s = ScoreSet::default();
    for t in trials {
        if t.target {
            s.target.push(t.score);
        } else {
            s.nontarget.push(t.score);
        }
    }
    s
}
