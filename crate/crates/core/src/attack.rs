//! Attack scenarios at embedding level.
//!
//! Every scenario scores enrollment models (per-speaker means of the enroll
//! split) against every trial utterance. The user protects the trial side;
//! informed attackers rebuild the anonymizer with their own seed and apply it
//! to the enrollment side.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::anonymizer::{model_hash, AnonymizerModel, SelectionConfig, SelectionPool, Variant};
use crate::error::{Error, Result};
use crate::linalg::cosine;
use crate::metrics::{
    self, d_diag, g_vd, similarity_matrix, Block, Calibration, ScoreSet, ScoredTrial, SimilarityMatrix,
    SpeakerUtterances,
};
use crate::pool::{mean_of, EmbeddingPool, Record, Split};
use crate::training::{train, StackSpec, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Unprotected,
    Ignorant,
    LazyInformed,
    SemiInformed,
}

impl Scenario {
    pub const ALL: [Scenario; 4] =
        [Scenario::Unprotected, Scenario::Ignorant, Scenario::LazyInformed, Scenario::SemiInformed];

    pub fn informed(self) -> bool {
        matches!(self, Scenario::LazyInformed | Scenario::SemiInformed)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Unprotected => "unprotected",
            Scenario::Ignorant => "ignorant",
            Scenario::LazyInformed => "lazy-informed",
            Scenario::SemiInformed => "semi-informed",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown scenario {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnonymizerKind {
    OhnnRoh,
    OhnnLoh,
    Selection,
}

impl AnonymizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AnonymizerKind::OhnnRoh => "ohnn-roh",
            AnonymizerKind::OhnnLoh => "ohnn-loh",
            AnonymizerKind::Selection => "selection",
        }
    }
}

/// How the stock scorer's affine calibration is obtained.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationMethod {
    #[default]
    Logistic,
    Means,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub user_seed: u64,
    pub attacker_seed: u64,
    pub anonymizer: AnonymizerKind,
    pub stack: StackSpec,
    /// `seed` is overridden by the user/attacker seed.
    pub train: TrainConfig,
    /// `seed` is overridden by the user/attacker seed.
    pub selection: SelectionConfig,
    pub calibration: CalibrationMethod,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            scenario: Scenario::Unprotected,
            user_seed: 50,
            attacker_seed: 1986,
            anonymizer: AnonymizerKind::OhnnRoh,
            stack: StackSpec::default(),
            train: TrainConfig::default(),
            selection: SelectionConfig::default(),
            calibration: CalibrationMethod::Logistic,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.user_seed == self.attacker_seed {
            return Err(Error::InvalidConfig("user_seed and attacker_seed must differ".into()));
        }
        self.train.validate()?;
        self.selection.validate()?;
        if self.anonymizer != AnonymizerKind::Selection {
            let want = match self.anonymizer {
                AnonymizerKind::OhnnLoh => Variant::Loh,
                _ => Variant::Roh,
            };
            if self.stack.variant != want {
                return Err(Error::InvalidConfig(format!(
                    "anonymizer {} does not match stack variant {:?}",
                    self.anonymizer.as_str(),
                    self.stack.variant
                )));
            }
        }
        Ok(())
    }
}

/// A fitted anonymizer, applied at speaker level.
#[derive(Debug, Clone)]
pub enum Anonymizer {
    Ohnn(AnonymizerModel),
    Selection { pool: SelectionPool, cfg: SelectionConfig },
}

impl Anonymizer {
    /// Maps one utterance of a speaker whose centroid is `centroid`.
    pub fn map(&self, speaker: &str, centroid: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Anonymizer::Ohnn(m) => m.anonymize_conditioned(centroid, x),
            Anonymizer::Selection { pool, cfg } => pool.pseudo_vector(centroid, &cfg.for_speaker(speaker)),
        }
    }

    pub fn fingerprint(&self) -> Option<String> {
        match self {
            Anonymizer::Ohnn(m) => Some(model_hash(m)),
            Anonymizer::Selection { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Trials,
    Enrollment,
    Both,
}

impl Side {
    pub fn splits(self) -> &'static [Split] {
        match self {
            Side::Trials => &[Split::Trial],
            Side::Enrollment => &[Split::Enroll],
            Side::Both => &[Split::Enroll, Split::Trial],
        }
    }
}

/// Anonymizes the records of `splits`, one mapping per speaker conditioned
/// on the centroid of that speaker's records in those splits.
pub fn anonymize_splits(pool: &EmbeddingPool, anonymizer: &Anonymizer, splits: &[Split]) -> Result<EmbeddingPool> {
    let mut centroids = BTreeMap::new();
    for (speaker, mut recs) in pool.by_speaker(Some(splits)) {
        recs.sort_by(|a, b| a.utterance.cmp(&b.utterance));
        centroids.insert(speaker, mean_of(pool.dim(), recs.iter().map(|r| r.vector.as_slice()))?);
    }
    let mut selection_cache: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut out = Vec::with_capacity(pool.len());
    for r in pool.records() {
        let mut rec = r.clone();
        if splits.contains(&r.split) {
            let c = &centroids[&r.speaker];
            rec.vector = match anonymizer {
                Anonymizer::Selection { .. } => {
                    if !selection_cache.contains_key(r.speaker.as_str()) {
                        selection_cache.insert(&r.speaker, anonymizer.map(&r.speaker, c, &r.vector)?);
                    }
                    selection_cache[r.speaker.as_str()].clone()
                }
                Anonymizer::Ohnn(_) => anonymizer.map(&r.speaker, c, &r.vector)?,
            };
        }
        out.push(rec);
    }
    EmbeddingPool::from_records(pool.dim(), out)
}

pub fn anonymize_pool(pool: &EmbeddingPool, anonymizer: &Anonymizer, side: Side) -> Result<EmbeddingPool> {
    anonymize_splits(pool, anonymizer, side.splits())
}

/// Enrollment models and the full cross trial list.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialList {
    pub enroll: Vec<(String, Vec<f64>)>,
    /// `(enroll index, trial record, target)`
    pub trials: Vec<(usize, Record, bool)>,
}

impl TrialList {
    pub fn from_pool(pool: &EmbeddingPool) -> Result<Self> {
        if !pool.has_split(Split::Enroll) {
            return Err(Error::SplitMissing("enroll".into()));
        }
        if !pool.has_split(Split::Trial) {
            return Err(Error::SplitMissing("trial".into()));
        }
        let trial_speakers = pool.by_speaker(Some(&[Split::Trial]));
        let mut enroll = Vec::new();
        for (speaker, mut recs) in pool.by_speaker(Some(&[Split::Enroll])) {
            if !trial_speakers.contains_key(&speaker) {
                return Err(Error::SplitMissing(format!("trial utterances for enrolled speaker {speaker}")));
            }
            recs.sort_by(|a, b| a.utterance.cmp(&b.utterance));
            let m = mean_of(pool.dim(), recs.iter().map(|r| r.vector.as_slice()))?;
            enroll.push((speaker, m));
        }
        let mut tests: Vec<&Record> = pool.split_records(Split::Trial).collect();
        tests.sort_by(|a, b| (&a.speaker, &a.utterance).cmp(&(&b.speaker, &b.utterance)));
        let mut trials = Vec::with_capacity(enroll.len() * tests.len());
        for (e, (speaker, _)) in enroll.iter().enumerate() {
            for t in &tests {
                trials.push((e, (*t).clone(), &t.speaker == speaker));
            }
        }
        Ok(TrialList { enroll, trials })
    }

    /// Replaces enrollment models and trial vectors from other pools with the
    /// same records (anonymized copies of the source pool).
    fn with_sides(&self, enroll_pool: &EmbeddingPool, trial_pool: &EmbeddingPool) -> Result<TrialList> {
        let enrolled = TrialList::from_pool(enroll_pool)?;
        let lookup: BTreeMap<(&str, &str), &Record> =
            trial_pool.split_records(Split::Trial).map(|r| ((r.speaker.as_str(), r.utterance.as_str()), r)).collect();
        let trials = self
            .trials
            .iter()
            .map(|(e, r, t)| {
                let rec = lookup
                    .get(&(r.speaker.as_str(), r.utterance.as_str()))
                    .ok_or_else(|| Error::SplitMissing(format!("trial {}", r.utterance)))?;
                Ok((*e, (*rec).clone(), *t))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TrialList { enroll: enrolled.enroll, trials })
    }

    pub fn score(&self, calib: &Calibration) -> Result<Vec<ScoredTrial>> {
        self.trials
            .iter()
            .map(|(e, r, target)| {
                Ok(ScoredTrial {
                    enroll_id: self.enroll[*e].0.clone(),
                    test_id: r.utterance.clone(),
                    score: metrics::llr_score(&self.enroll[*e].1, &r.vector, calib)?,
                    target: *target,
                })
            })
            .collect()
    }
}

/// Raw cosines of all same-speaker and different-speaker utterance pairs in
/// the train split.
pub fn train_pair_cosines(pool: &EmbeddingPool) -> Result<ScoreSet> {
    let mut recs: Vec<&Record> = pool.split_records(Split::Train).collect();
    if recs.is_empty() {
        return Err(Error::SplitMissing("train".into()));
    }
    recs.sort_by(|a, b| (&a.speaker, &a.utterance).cmp(&(&b.speaker, &b.utterance)));
    let mut s = ScoreSet::default();
    for i in 0..recs.len() {
        for j in i + 1..recs.len() {
            let c = cosine(&recs[i].vector, &recs[j].vector)?;
            if recs[i].speaker == recs[j].speaker {
                s.target.push(c);
            } else {
                s.nontarget.push(c);
            }
        }
    }
    Ok(s)
}

pub fn fit_calibration(pool: &EmbeddingPool, method: CalibrationMethod) -> Result<Calibration> {
    if method == CalibrationMethod::Identity {
        return Ok(Calibration::identity());
    }
    let s = train_pair_cosines(pool)?;
    match method {
        CalibrationMethod::Logistic => Calibration::fit_logistic(&s.target, &s.nontarget),
        CalibrationMethod::Means => {
            if s.target.is_empty() || s.nontarget.is_empty() {
                return Err(Error::EmptyScores(if s.target.is_empty() { "target" } else { "non-target" }));
            }
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            Calibration::from_means(mean(&s.target), mean(&s.nontarget))
        }
        CalibrationMethod::Identity => unreachable!(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: Scenario,
    pub anonymizer: AnonymizerKind,
    /// Raw EER from the FAR/FRR sweep; may exceed 0.5.
    pub eer: f64,
    pub eer_capped: f64,
    /// EER on the ROC convex hull.
    pub eer_rocch: f64,
    pub threshold: f64,
    pub num_target: usize,
    pub num_nontarget: usize,
    pub calibration: Calibration,
    pub pool_fingerprint: String,
    pub user_model_sha256: Option<String>,
    pub attacker_model_sha256: Option<String>,
    pub config: ScenarioConfig,
    pub notes: Vec<String>,
    #[serde(skip)]
    pub scores: Vec<ScoredTrial>,
}

impl ScenarioReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_scores_csv<W: Write>(&self, w: W) -> Result<()> {
        metrics::write_scores_csv(&self.scores, w)
    }
}

/// Trains (OHNN) or configures (selection) an anonymizer with `seed`.
pub fn build_anonymizer(
    pool: &EmbeddingPool,
    external: Option<&EmbeddingPool>,
    cfg: &ScenarioConfig,
    seed: u64,
) -> Result<Anonymizer> {
    match cfg.anonymizer {
        AnonymizerKind::Selection => {
            let ext =
                external.ok_or_else(|| Error::InvalidConfig("selection anonymizer needs an external pool".into()))?;
            Ok(Anonymizer::Selection {
                pool: SelectionPool::new(ext)?,
                cfg: SelectionConfig { seed, ..cfg.selection.clone() },
            })
        }
        AnonymizerKind::OhnnRoh | AnonymizerKind::OhnnLoh => {
            let tc = TrainConfig { seed, ..cfg.train.clone() };
            Ok(Anonymizer::Ohnn(train(pool, &cfg.stack, &tc)?.model))
        }
    }
}

/// Runs several scenarios sharing one user and (if needed) one attacker anonymizer.
pub fn run_scenarios(
    pool: &EmbeddingPool,
    external: Option<&EmbeddingPool>,
    cfg: &ScenarioConfig,
    scenarios: &[Scenario],
) -> Result<Vec<ScenarioReport>> {
    cfg.validate()?;
    let base = TrialList::from_pool(pool)?;
    let stock = fit_calibration(pool, cfg.calibration)?;
    let needs_user = scenarios.iter().any(|s| *s != Scenario::Unprotected);
    let needs_attacker = scenarios.iter().any(|s| s.informed());
    let user = if needs_user { Some(build_anonymizer(pool, external, cfg, cfg.user_seed)?) } else { None };
    let attacker = if needs_attacker { Some(build_anonymizer(pool, external, cfg, cfg.attacker_seed)?) } else { None };
    if let (Some(Anonymizer::Ohnn(u)), Some(Anonymizer::Ohnn(a))) = (&user, &attacker) {
        if u.stack.params() == a.stack.params() {
            return Err(Error::InvalidConfig("user and attacker models coincide".into()));
        }
    }
    let user_trials = match &user {
        Some(u) => Some(anonymize_pool(pool, u, Side::Trials)?),
        None => None,
    };
    let fingerprint = pool.fingerprint();

    let mut reports = Vec::with_capacity(scenarios.len());
    for &scenario in scenarios {
        let mut notes = Vec::new();
        let (trials, calib) = match scenario {
            Scenario::Unprotected => (base.clone(), stock),
            Scenario::Ignorant => (base.with_sides(pool, user_trials.as_ref().unwrap())?, stock),
            Scenario::LazyInformed | Scenario::SemiInformed => {
                let att = attacker.as_ref().unwrap();
                let enroll = anonymize_pool(pool, att, Side::Enrollment)?;
                let trials = base.with_sides(&enroll, user_trials.as_ref().unwrap())?;
                let calib = if scenario == Scenario::SemiInformed {
                    notes.push(
                        "semi-informed attacker refits only the affine score calibration on attacker-anonymized \
                         train data; the EER is unchanged by any increasing affine map"
                            .to_string(),
                    );
                    let anon_train = anonymize_splits(pool, att, &[Split::Train])?;
                    fit_calibration(&anon_train, cfg.calibration)?
                } else {
                    stock
                };
                (trials, calib)
            }
        };
        let scores = trials.score(&calib)?;
        let set = metrics::score_set(&scores);
        let raw = metrics::sweep_eer(&set)?;
        let hull = metrics::eer(&set)?;
        if raw.eer > 0.5 {
            notes.push(format!("raw EER {:.4} exceeds 0.5; capped value is informational", raw.eer));
        }
        reports.push(ScenarioReport {
            scenario,
            anonymizer: cfg.anonymizer,
            eer: raw.eer,
            eer_capped: raw.eer.min(0.5),
            eer_rocch: hull.eer,
            threshold: raw.threshold,
            num_target: set.target.len(),
            num_nontarget: set.nontarget.len(),
            calibration: calib,
            pool_fingerprint: fingerprint.clone(),
            user_model_sha256: if scenario == Scenario::Unprotected {
                None
            } else {
                user.as_ref().and_then(Anonymizer::fingerprint)
            },
            attacker_model_sha256: if scenario.informed() {
                attacker.as_ref().and_then(Anonymizer::fingerprint)
            } else {
                None
            },
            config: ScenarioConfig { scenario, ..cfg.clone() },
            notes,
            scores,
        });
    }
    Ok(reports)
}

pub fn run_scenario(
    pool: &EmbeddingPool,
    external: Option<&EmbeddingPool>,
    cfg: &ScenarioConfig,
) -> Result<ScenarioReport> {
    Ok(run_scenarios(pool, external, cfg, &[cfg.scenario])?.remove(0))
}

/// Utterance vectors of `splits`, grouped by speaker; both levels sorted by id.
pub fn speaker_groups(pool: &EmbeddingPool, splits: &[Split]) -> Vec<SpeakerUtterances> {
    pool.by_speaker(Some(splits))
        .into_iter()
        .map(|(speaker, mut recs)| {
            recs.sort_by(|a, b| a.utterance.cmp(&b.utterance));
            SpeakerUtterances { speaker, vectors: recs.into_iter().map(|r| r.vector.clone()).collect() }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistinctivenessReport {
    pub calibration: Calibration,
    pub m_oo: SimilarityMatrix,
    pub m_oa: SimilarityMatrix,
    pub m_aa: SimilarityMatrix,
    pub d_diag_oo: f64,
    pub d_diag_aa: f64,
    pub g_vd_db: f64,
}

/// Voice-similarity matrices over the held-out splits (enroll and trial),
/// with the whole held-out side anonymized by `anonymizer`.
pub fn distinctiveness(
    pool: &EmbeddingPool,
    anonymizer: &Anonymizer,
    calib: Calibration,
) -> Result<DistinctivenessReport> {
    let splits = Side::Both.splits();
    let anon = anonymize_splits(pool, anonymizer, splits)?;
    let orig = speaker_groups(pool, splits);
    let anon = speaker_groups(&anon, splits);
    if orig.is_empty() {
        return Err(Error::SplitMissing("enroll/trial".into()));
    }
    let scorer = |a: &[f64], b: &[f64]| metrics::llr_score(a, b, &calib);
    let m_oo = similarity_matrix(&orig, &orig, Block::Oo, scorer)?;
    let m_oa = similarity_matrix(&orig, &anon, Block::Oa, scorer)?;
    let m_aa = similarity_matrix(&anon, &anon, Block::Aa, scorer)?;
    Ok(DistinctivenessReport {
        calibration: calib,
        d_diag_oo: d_diag(&m_oo)?,
        d_diag_aa: d_diag(&m_aa)?,
        g_vd_db: g_vd(&m_aa, &m_oo)?,
        m_oo,
        m_oa,
        m_aa,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairCosineReport {
    /// `cos(x, f(x))` per utterance.
    pub positive: Vec<f64>,
    /// `cos(x_i, f(x_j))` for utterances of different speakers.
    pub negative: Vec<f64>,
}

impl PairCosineReport {
    pub fn mean_positive(&self) -> f64 {
        self.positive.iter().sum::<f64>() / self.positive.len().max(1) as f64
    }

    pub fn mean_negative(&self) -> f64 {
        self.negative.iter().sum::<f64>() / self.negative.len().max(1) as f64
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["pair", "cosine"])?;
        for c in &self.positive {
            wtr.write_record(["positive", &c.to_string()])?;
        }
        for c in &self.negative {
            wtr.write_record(["negative", &c.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

const NEGATIVE_PARTNERS: usize = 100;

/// Original-vs-anonymized cosines over the held-out splits (the whole pool
/// when there are none). Each utterance is paired with up to 100 following
/// utterances (cyclically, sorted by id) of other speakers for the negatives.
pub fn pair_cosine_report(pool: &EmbeddingPool, anonymizer: &Anonymizer) -> Result<PairCosineReport> {
    let held_out = [Split::Enroll, Split::Trial];
    let splits: &[Split] = if held_out.iter().any(|&s| pool.has_split(s)) {
        &held_out
    } else {
        &[Split::Train, Split::Enroll, Split::Trial]
    };
    let anon = anonymize_splits(pool, anonymizer, splits)?;
    let mut pairs: Vec<(&Record, &Record)> =
        pool.records().iter().zip(anon.records()).filter(|(r, _)| splits.contains(&r.split)).collect();
    pairs.sort_by(|a, b| (&a.0.speaker, &a.0.utterance).cmp(&(&b.0.speaker, &b.0.utterance)));
    let n = pairs.len();
    let mut report = PairCosineReport::default();
    for (i, (o, a)) in pairs.iter().enumerate() {
        report.positive.push(cosine(&o.vector, &a.vector)?);
        for k in 1..n.min(NEGATIVE_PARTNERS + 1) {
            let (o2, a2) = pairs[(i + k) % n];
            if o2.speaker != o.speaker {
                report.negative.push(cosine(&o.vector, &a2.vector)?);
            }
        }
    }
    Ok(report)
}
