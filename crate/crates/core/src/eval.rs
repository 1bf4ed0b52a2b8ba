//! Evaluation protocols: property recognition with a growing number of
//! target-robot objects, and identity recognition with a growing number of
//! trials per object. Both compare a baseline trained on the target's own
//! features against a transfer condition trained on projected features.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::augment_trials;
use crate::correspond::{identity_pairs, kema_inputs, property_pairs, CorrespondenceSet, LabelKind, Labeler};
use crate::data::{Behavior, DatasetManifest, Modality, ObjectDescriptor, Provenance, TrialFilter, TrialRecord};
use crate::edn::{train_edn, EdnConfig};
use crate::error::{Error, Result};
use crate::kema::{fit_kema, KemaConfig};
use crate::svm::{argmax_rows, train_svm, SvmConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Weight,
    Content,
    #[serde(alias = "objectId", alias = "identity")]
    ObjectId,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Weight, Task::Content, Task::ObjectId];

    pub fn label_kind(self) -> LabelKind {
        match self {
            Task::Weight => LabelKind::Weight,
            Task::Content => LabelKind::Content,
            Task::ObjectId => LabelKind::ObjectId,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Weight => "weight",
            Task::Content => "content",
            Task::ObjectId => "object-id",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weight" => Ok(Task::Weight),
            "content" => Ok(Task::Content),
            "object-id" | "objectId" | "identity" => Ok(Task::ObjectId),
            _ => Err(Error::UnknownName {
                kind: "task",
                name: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Baseline,
    EdnIdentity,
    EdnProperty,
    KemaIdentity,
    KemaProperty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Projection {
    Edn,
    Kema,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Baseline,
        Method::EdnIdentity,
        Method::EdnProperty,
        Method::KemaIdentity,
        Method::KemaProperty,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::EdnIdentity => "edn-identity",
            Method::EdnProperty => "edn-property",
            Method::KemaIdentity => "kema-identity",
            Method::KemaProperty => "kema-property",
        }
    }

    fn projection(self) -> Option<(Projection, bool)> {
        match self {
            Method::Baseline => None,
            Method::EdnIdentity => Some((Projection::Edn, false)),
            Method::EdnProperty => Some((Projection::Edn, true)),
            Method::KemaIdentity => Some((Projection::Kema, false)),
            Method::KemaProperty => Some((Projection::Kema, true)),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::UnknownName {
                kind: "method",
                name: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    /// Target's own features at the current budget.
    Baseline,
    /// Projected features at the current budget.
    Transfer,
    /// Target's own features from every object or trial (`A_all`).
    All,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Baseline => "baseline",
            Condition::Transfer => "transfer",
            Condition::All => "all",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Condition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Condition::Baseline),
            "transfer" => Ok(Condition::Transfer),
            "all" => Ok(Condition::All),
            _ => Err(Error::UnknownName {
                kind: "condition",
                name: s.to_string(),
            }),
        }
    }
}

/// A behavior-modality pair evaluated on both robots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Channel {
    pub behavior: Behavior,
    pub modality: Modality,
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.behavior, self.modality)
    }
}

impl std::str::FromStr for Channel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (b, m) = s.rsplit_once('-').ok_or_else(|| Error::UnknownName {
            kind: "channel",
            name: s.to_string(),
        })?;
        Ok(Channel {
            behavior: b.parse()?,
            modality: m.parse()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub task: Task,
    pub method: Method,
    pub source: String,
    pub target: String,
    /// Empty means every channel both robots share.
    pub channels: Vec<Channel>,
    pub repeats: usize,
    /// Identity task only.
    pub folds: usize,
    /// Ascending; `None` derives the default schedule.
    pub budgets: Option<Vec<usize>>,
    /// Budgets averaged by the mean accuracy delta; `None` means 10
    /// (property) or 4 (identity).
    pub m: Option<usize>,
    pub seed: u64,
    /// Share of objects held out in the property task.
    pub test_fraction: f64,
    /// Objects sampled for the identity task.
    pub identity_objects: usize,
    /// Augmented trials per object; 0 disables augmentation.
    pub augment_k: usize,
    /// Internal folds estimating per-channel weights.
    pub weight_cv_folds: usize,
    /// Property correspondences are subsampled to at most this many pairs.
    pub max_pairs: usize,
    pub svm: SvmConfig,
    pub edn: EdnConfig,
    pub kema: KemaConfig,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            task: Task::Weight,
            method: Method::KemaIdentity,
            source: "baxter".into(),
            target: "ur5".into(),
            channels: Vec::new(),
            repeats: 10,
            folds: 5,
            budgets: None,
            m: None,
            seed: 0,
            test_fraction: 0.2,
            identity_objects: 12,
            augment_k: crate::augment::DEFAULT_AUGMENT_K,
            weight_cv_folds: 3,
            max_pairs: 20_000,
            svm: SvmConfig::default(),
            edn: EdnConfig::default(),
            kema: KemaConfig::default(),
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::InvalidConfig("at least one repeat is required".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!("test fraction {} outside (0, 1)", self.test_fraction)));
        }
        if self.task == Task::ObjectId && matches!(self.method, Method::EdnProperty | Method::KemaProperty) {
            return Err(Error::InvalidConfig(
                "property correspondences need a weight or content task".into(),
            ));
        }
        if self.weight_cv_folds < 2 {
            return Err(Error::InvalidConfig("weight estimation needs at least 2 folds".into()));
        }
        if let Some(b) = &self.budgets {
            if b.is_empty() || b.windows(2).any(|w| w[0] >= w[1]) || b[0] == 0 {
                return Err(Error::InvalidConfig("budgets must be positive and strictly ascending".into()));
            }
        }
        self.svm.validate()?;
        if self.method.projection().is_some_and(|(p, _)| p == Projection::Edn) {
            self.edn.validate()?;
        }
        if self.method.projection().is_some_and(|(p, _)| p == Projection::Kema) {
            self.kema.validate()?;
        }
        Ok(())
    }

    pub fn default_m(&self) -> usize {
        self.m.unwrap_or(if self.task == Task::ObjectId { 4 } else { 10 })
    }
}

/// `100 * matches / total`.
pub fn accuracy<T: PartialEq>(predictions: &[T], truths: &[T]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput("no predictions to score"));
    }
    if predictions.len() != truths.len() {
        return Err(Error::dims("prediction count", truths.len(), predictions.len()));
    }
    let hits = predictions.iter().zip(truths).filter(|(p, t)| p == t).count();
    Ok(100.0 * hits as f64 / predictions.len() as f64)
}

/// `(1/m) * sum_{j<m} (a_all - projected[j])`, with `projected` ordered by
/// ascending budget.
pub fn mean_accuracy_delta(a_all: f64, projected: &[f64], m: usize) -> Result<f64> {
    if m == 0 || projected.len() < m {
        return Err(Error::TooFewBudgets {
            have: projected.len(),
            need: m.max(1),
        });
    }
    Ok(projected[..m].iter().map(|p| a_all - p).sum::<f64>() / m as f64)
}

/// Per-channel class scores over one set of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelScores {
    pub classes: Vec<String>,
    /// `samples x classes`.
    pub scores: DMatrix<f64>,
    /// Training accuracy in percent; becomes the combination weight.
    pub train_accuracy: f64,
}

/// Weights are training accuracies normalized to sum 1; each score row is
/// divided by its maximum before weighting. Returns class indices.
pub fn weighted_context_combination(channels: &[ChannelScores]) -> Result<Vec<usize>> {
    let first = channels.first().ok_or(Error::EmptyInput("no channel scores to combine"))?;
    for c in channels {
        if c.classes != first.classes || c.scores.shape() != first.scores.shape() {
            return Err(Error::InconsistentClassSets);
        }
        if !(c.train_accuracy >= 0.0) {
            return Err(Error::InvalidConfig(format!("negative channel weight {}", c.train_accuracy)));
        }
    }
    let total: f64 = channels.iter().map(|c| c.train_accuracy).sum();
    if total <= 0.0 {
        return Err(Error::AllZeroWeights);
    }
    let mut combined = DMatrix::zeros(first.scores.nrows(), first.scores.ncols());
    for c in channels {
        let w = c.train_accuracy / total;
        for r in 0..c.scores.nrows() {
            let max = c.scores.row(r).max();
            let norm = if max > 0.0 { max } else { 1.0 };
            for k in 0..c.scores.ncols() {
                combined[(r, k)] += w * c.scores[(r, k)] / norm;
            }
        }
    }
    Ok(argmax_rows(&combined))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub repeat: usize,
    pub fold: usize,
    pub budget: usize,
    pub condition: Condition,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelWeightRow {
    pub repeat: usize,
    pub fold: usize,
    pub budget: usize,
    pub condition: Condition,
    pub channel: String,
    pub weight: f64,
}

/// Target-robot trial keys `(object, trial)` used by one budget step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAudit {
    pub repeat: usize,
    pub fold: usize,
    pub budget: usize,
    /// Real target trials feeding the classifier, the augmentation
    /// statistics and the projection.
    pub train: Vec<(String, usize)>,
    pub test: Vec<(String, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub budget: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub protocol: String,
    pub task: Task,
    pub method: Method,
    pub source: String,
    pub target: String,
    pub channels: Vec<String>,
    pub repeats: usize,
    pub m: usize,
    pub a_all_mean: f64,
    pub a_all_std: f64,
    /// Mean accuracy delta per condition, averaged over repeats.
    pub mean_accuracy_delta: BTreeMap<String, f64>,
    pub curves: BTreeMap<String, Vec<CurvePoint>>,
    /// Mean weight per channel and condition.
    pub channel_weights: BTreeMap<String, BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub budgets: Vec<usize>,
    pub rows: Vec<AccuracyRow>,
    pub channel_weights: Vec<ChannelWeightRow>,
    pub audits: Vec<SplitAudit>,
    pub summary: Summary,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-repeat accuracies, averaged over folds: `(repeat -> A_all,
/// condition -> repeat -> budget-ordered curve)`.
#[allow(clippy::type_complexity)]
fn per_repeat(rows: &[AccuracyRow], budgets: &[usize]) -> (BTreeMap<usize, f64>, BTreeMap<Condition, BTreeMap<usize, Vec<f64>>>) {
    let mut acc: BTreeMap<(Condition, usize, usize), Vec<f64>> = BTreeMap::new();
    for r in rows {
        let budget = if r.condition == Condition::All { 0 } else { r.budget };
        acc.entry((r.condition, r.repeat, budget)).or_default().push(r.accuracy);
    }
    let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    let mut all = BTreeMap::new();
    let mut curves: BTreeMap<Condition, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for ((cond, repeat, budget), v) in &acc {
        if *cond == Condition::All {
            all.insert(*repeat, mean(v));
        } else {
            let curve = curves.entry(*cond).or_default().entry(*repeat).or_insert_with(|| vec![f64::NAN; budgets.len()]);
            if let Some(i) = budgets.iter().position(|b| b == budget) {
                curve[i] = mean(v);
            }
        }
    }
    (all, curves)
}

#[allow(clippy::too_many_arguments)]
fn summarize(
    protocol: &str,
    config: &ProtocolConfig,
    channels: &[Channel],
    budgets: &[usize],
    m: usize,
    rows: &[AccuracyRow],
    weights: &[ChannelWeightRow],
) -> Result<Summary> {
    let (all, curves) = per_repeat(rows, budgets);
    let all_values: Vec<f64> = all.values().copied().collect();
    let (a_all_mean, a_all_std) = mean_std(&all_values);
    let mut deltas = BTreeMap::new();
    let mut curve_out = BTreeMap::new();
    for (cond, per_rep) in &curves {
        let mut d = Vec::new();
        for (repeat, curve) in per_rep {
            let a_all = *all.get(repeat).ok_or(Error::EmptyInput("missing full-data accuracy"))?;
            d.push(mean_accuracy_delta(a_all, curve, m)?);
        }
        deltas.insert(cond.to_string(), mean_std(&d).0);
        let points = budgets
            .iter()
            .enumerate()
            .map(|(i, &budget)| {
                let xs: Vec<f64> = per_rep.values().map(|c| c[i]).collect();
                let (mean, std) = mean_std(&xs);
                CurvePoint { budget, mean, std }
            })
            .collect();
        curve_out.insert(cond.to_string(), points);
    }
    let mut w: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for row in weights {
        w.entry(row.condition.to_string()).or_default().entry(row.channel.clone()).or_default().push(row.weight);
    }
    let channel_weights = w
        .into_iter()
        .map(|(c, per)| (c, per.into_iter().map(|(ch, v)| (ch, mean_std(&v).0)).collect()))
        .collect();
    Ok(Summary {
        protocol: protocol.to_string(),
        task: config.task,
        method: config.method,
        source: config.source.clone(),
        target: config.target.clone(),
        channels: channels.iter().map(|c| c.to_string()).collect(),
        repeats: config.repeats,
        m,
        a_all_mean,
        a_all_std,
        mean_accuracy_delta: deltas,
        curves: curve_out,
        channel_weights,
    })
}

/// SplitMix64 over a base seed and a path of indices.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    let mut z = seed;
    for &p in path {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15 ^ p.wrapping_mul(0xbf58_476d_1ce4_e5b9));
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

struct ChannelData<'a> {
    name: String,
    source: Vec<&'a TrialRecord>,
    target: Vec<&'a TrialRecord>,
}

fn resolve_channels(manifest: &DatasetManifest, config: &ProtocolConfig) -> Result<Vec<Channel>> {
    let src = manifest.robot(&config.source)?;
    let tgt = manifest.robot(&config.target)?;
    if !config.channels.is_empty() {
        return Ok(config.channels.clone());
    }
    let mut out = Vec::new();
    for &behavior in tgt.behaviors.iter().filter(|b| b.is_interactive()) {
        for &modality in &tgt.modalities {
            if src.behaviors.contains(&behavior) && src.modalities.contains(&modality) {
                out.push(Channel { behavior, modality });
            }
        }
    }
    if out.is_empty() {
        return Err(Error::ContextMismatch(format!(
            "{} and {} share no behavior-modality pair",
            config.source, config.target
        )));
    }
    Ok(out)
}

fn load_channels<'a>(manifest: &'a DatasetManifest, config: &ProtocolConfig, channels: &[Channel]) -> Result<Vec<ChannelData<'a>>> {
    channels
        .iter()
        .map(|c| {
            let pick = |robot: &str| {
                manifest.select_trials(&TrialFilter::context(robot, c.behavior, c.modality).with_provenance(Provenance::Real))
            };
            let source = pick(&config.source)?;
            let target = pick(&config.target)?;
            if source.is_empty() || target.is_empty() {
                return Err(Error::EmptyInput("a channel has no records for one of the robots"));
            }
            Ok(ChannelData {
                name: c.to_string(),
                source,
                target,
            })
        })
        .collect()
}

/// One train/test evaluation: which target trials train, which test, and
/// which source objects feed the projection.
struct Job {
    repeat: usize,
    fold: usize,
    budget: usize,
    condition: Condition,
    source_objects: BTreeSet<String>,
    train: BTreeSet<(String, usize)>,
    test: BTreeSet<(String, usize)>,
}

struct JobResult {
    accuracy: f64,
    weights: Vec<(String, f64)>,
}

struct Context<'a> {
    config: &'a ProtocolConfig,
    objects: &'a [ObjectDescriptor],
    channels: Vec<ChannelData<'a>>,
}

fn features(records: &[&TrialRecord]) -> DMatrix<f64> {
    let dim = records.first().map_or(0, |r| r.feature.len());
    DMatrix::from_fn(records.len(), dim, |i, j| records[i].feature[j])
}

fn stack(a: DMatrix<f64>, b: DMatrix<f64>) -> DMatrix<f64> {
    let (ra, rb) = (a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(ra + rb, a.ncols().max(b.ncols()));
    out.view_mut((0, 0), (ra, a.ncols())).copy_from(&a);
    out.view_mut((ra, 0), (rb, b.ncols())).copy_from(&b);
    out
}

/// Uniform subsample of correspondence pairs, keeping their order.
fn cap_pairs(mut set: CorrespondenceSet, max: usize, seed: u64) -> CorrespondenceSet {
    if set.pairs.len() > max {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx: Vec<usize> = (0..set.pairs.len()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(max);
        idx.sort_unstable();
        set.pairs = idx.into_iter().map(|i| set.pairs[i]).collect();
    }
    set
}

/// Accuracy of an SVM on held-out parts of its own training data.
fn cv_accuracy(x: &DMatrix<f64>, y: &[String], config: &SvmConfig, folds: usize, seed: u64) -> Result<f64> {
    let n = y.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut hits = 0usize;
    for f in 0..folds.min(n) {
        let test: Vec<usize> = order.iter().copied().skip(f).step_by(folds).collect();
        let train: Vec<usize> = order.iter().copied().enumerate().filter(|(i, _)| i % folds != f).map(|(_, v)| v).collect();
        let ytr: Vec<String> = train.iter().map(|&i| y[i].clone()).collect();
        let xte = x.select_rows(&test);
        let pred = match train_svm(&x.select_rows(&train), &ytr, config) {
            Ok(model) => model.predict(&xte)?,
            Err(Error::SingleClass) => vec![ytr[0].clone(); test.len()],
            Err(e) => return Err(e),
        };
        hits += test.iter().zip(&pred).filter(|(&i, p)| &y[i] == *p).count();
    }
    Ok(100.0 * hits as f64 / n as f64)
}

impl Context<'_> {
    fn run(&self, job: &Job) -> Result<JobResult> {
        let cfg = self.config;
        let task_labels = Labeler::new(self.objects, cfg.task.label_kind());
        let projection = match job.condition {
            Condition::Transfer => cfg.method.projection(),
            _ => None,
        };
        let job_seed = derive_seed(cfg.seed, &[job.repeat as u64, job.fold as u64, job.budget as u64, job.condition as u64]);
        let use_cv = self.channels.len() > 1;

        let mut outcomes = Vec::with_capacity(self.channels.len());
        let mut test_keys: Option<Vec<(String, usize)>> = None;
        let mut truths = Vec::new();
        for (ci, ch) in self.channels.iter().enumerate() {
            let ch_seed = derive_seed(job_seed, &[ci as u64]);
            let key = |r: &TrialRecord| (r.object.clone(), r.trial);
            let train_real: Vec<&TrialRecord> = ch.target.iter().copied().filter(|r| job.train.contains(&key(r))).collect();
            let test: Vec<&TrialRecord> = ch.target.iter().copied().filter(|r| job.test.contains(&key(r))).collect();
            if train_real.is_empty() || test.is_empty() {
                return Err(Error::EmptyInput("a split left no target trials"));
            }
            let keys: Vec<(String, usize)> = test.iter().map(|r| key(r)).collect();
            match &test_keys {
                None => {
                    truths = test.iter().map(|r| task_labels.label(&r.object)).collect::<Result<Vec<_>>>()?;
                    test_keys = Some(keys);
                }
                Some(k) if *k != keys => {
                    return Err(Error::ContextMismatch(format!("{} covers different test trials", ch.name)));
                }
                Some(_) => {}
            }
            let train_owned = if cfg.augment_k > 0 {
                augment_trials(&train_real, cfg.augment_k, derive_seed(ch_seed, &[1]))?
            } else {
                train_real.iter().map(|r| (*r).clone()).collect()
            };
            let train: Vec<&TrialRecord> = train_owned.iter().collect();
            let train_y = |recs: &[&TrialRecord]| recs.iter().map(|r| task_labels.label(&r.object)).collect::<Result<Vec<_>>>();

            let (x, y, test_x) = match projection {
                None => (features(&train), train_y(&train)?, features(&test)),
                Some((kind, by_property)) => {
                    let source: Vec<&TrialRecord> =
                        ch.source.iter().copied().filter(|r| job.source_objects.contains(&r.object)).collect();
                    match kind {
                        Projection::Edn => {
                            let pairs = if by_property {
                                property_pairs(&source, &train, cfg.task.label_kind(), self.objects)?
                            } else {
                                identity_pairs(&source, &train)?
                            };
                            let pairs = cap_pairs(pairs, cfg.max_pairs, derive_seed(ch_seed, &[2]));
                            let edn_cfg = EdnConfig {
                                seed: derive_seed(cfg.edn.seed, &[job_seed, ci as u64]),
                                ..cfg.edn.clone()
                            };
                            let model = train_edn(&pairs, &edn_cfg)?;
                            let generated = model.forward_batch(&features(&source))?;
                            let mut y = train_y(&source)?;
                            y.extend(train_y(&train)?);
                            (stack(generated, features(&train)), y, features(&test))
                        }
                        Projection::Kema => {
                            let label = if by_property { cfg.task.label_kind() } else { LabelKind::ObjectId };
                            let inputs = kema_inputs(&source, &train, label, self.objects)?;
                            let model = fit_kema(&inputs, &cfg.kema)?;
                            let z1 = model.project_matrix(&inputs.x1, 1)?;
                            let z2 = model.project_matrix(&inputs.x2, 2)?;
                            let mut y = Vec::with_capacity(inputs.keys1.len() + inputs.keys2.len());
                            for k in inputs.keys1.iter().chain(&inputs.keys2) {
                                y.push(task_labels.label(&k.object)?);
                            }
                            (stack(z1, z2), y, model.project_matrix(&features(&test), 2)?)
                        }
                    }
                }
            };
            let model = train_svm(&x, &y, &cfg.svm)?;
            let scores = model.decision_scores(&test_x)?;
            let weight = if use_cv {
                cv_accuracy(&x, &y, &cfg.svm, cfg.weight_cv_folds, derive_seed(ch_seed, &[3]))?
            } else {
                1.0
            };
            outcomes.push((ch.name.clone(), ChannelScores {
                classes: model.classes.clone(),
                scores,
                train_accuracy: weight,
            }));
        }

        let mut scores: Vec<ChannelScores> = outcomes.iter().map(|(_, s)| s.clone()).collect();
        if scores.iter().all(|s| s.train_accuracy == 0.0) {
            log::warn!("every channel scored zero on its training data; weighting equally");
            scores.iter_mut().for_each(|s| s.train_accuracy = 1.0);
        }
        let total: f64 = scores.iter().map(|s| s.train_accuracy).sum();
        let picked = weighted_context_combination(&scores)?;
        let predictions: Vec<String> = picked.iter().map(|&i| scores[0].classes[i].clone()).collect();
        Ok(JobResult {
            accuracy: accuracy(&predictions, &truths)?,
            weights: outcomes
                .iter()
                .zip(&scores)
                .map(|((name, _), s)| (name.clone(), s.train_accuracy / total))
                .collect(),
        })
    }
}

fn check_leakage(job: &Job, by_object: bool) -> Result<()> {
    if job.condition == Condition::All {
        return Ok(());
    }
    if let Some(k) = job.train.intersection(&job.test).next() {
        return Err(Error::Leakage(format!("trial {}#{} is in both training and test sets", k.0, k.1)));
    }
    if by_object {
        let train: BTreeSet<&str> = job.train.iter().map(|k| k.0.as_str()).collect();
        if let Some(k) = job.test.iter().find(|k| train.contains(k.0.as_str())) {
            return Err(Error::Leakage(format!("object {} is in both training and test sets", k.0)));
        }
    }
    Ok(())
}

fn execute(ctx: &Context, jobs: Vec<Job>, by_object: bool) -> Result<(Vec<AccuracyRow>, Vec<ChannelWeightRow>, Vec<SplitAudit>)> {
    for job in &jobs {
        check_leakage(job, by_object)?;
    }
    let results: Vec<Result<JobResult>> = jobs.par_iter().map(|job| ctx.run(job)).collect();
    let mut rows = Vec::new();
    let mut weights = Vec::new();
    let mut audits = Vec::new();
    for (job, res) in jobs.iter().zip(results) {
        let res = res?;
        rows.push(AccuracyRow {
            repeat: job.repeat,
            fold: job.fold,
            budget: job.budget,
            condition: job.condition,
            accuracy: res.accuracy,
        });
        for (channel, weight) in res.weights {
            weights.push(ChannelWeightRow {
                repeat: job.repeat,
                fold: job.fold,
                budget: job.budget,
                condition: job.condition,
                channel,
                weight,
            });
        }
        // Transfer jobs reuse the baseline split of the same step.
        if job.condition == Condition::Baseline {
            audits.push(SplitAudit {
                repeat: job.repeat,
                fold: job.fold,
                budget: job.budget,
                train: job.train.iter().cloned().collect(),
                test: job.test.iter().cloned().collect(),
            });
        }
    }
    Ok((rows, weights, audits))
}

fn conditions(method: Method) -> &'static [Condition] {
    if method == Method::Baseline {
        &[Condition::Baseline]
    } else {
        &[Condition::Baseline, Condition::Transfer]
    }
}

/// Default property schedule: one object per class, then ten evenly
/// spaced budgets up to the whole pool.
pub fn property_budgets(classes: usize, pool: usize) -> Vec<usize> {
    let mut b = vec![classes];
    for j in 1..=10 {
        let v = classes + ((pool - classes) as f64 * j as f64 / 10.0).round() as usize;
        if v > *b.last().expect("nonempty") {
            b.push(v);
        }
    }
    b
}

/// Puts one object of each class first (in pool order), then the rest.
pub fn stratified_order(pool: &[String], label: impl Fn(&str) -> String) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let (mut head, mut tail) = (Vec::new(), Vec::new());
    for id in pool {
        if seen.insert(label(id)) {
            head.push(id.clone());
        } else {
            tail.push(id.clone());
        }
    }
    head.extend(tail);
    head
}

fn trial_keys(objects: &[String], trials: usize) -> BTreeSet<(String, usize)> {
    objects.iter().flat_map(|o| (0..trials).map(move |t| (o.clone(), t))).collect()
}

/// Property recognition: per repeat, hold out a share of objects, grow the
/// target's training objects along the budget schedule; the source robot
/// contributes every object.
pub fn run_property_protocol(manifest: &DatasetManifest, config: &ProtocolConfig) -> Result<EvaluationReport> {
    config.validate()?;
    if config.task == Task::ObjectId {
        return Err(Error::InvalidConfig("identity recognition uses the identity protocol".into()));
    }
    let channels = resolve_channels(manifest, config)?;
    let ctx = Context {
        config,
        objects: &manifest.objects,
        channels: load_channels(manifest, config, &channels)?,
    };
    let trials = manifest.robot(&config.target)?.trials_per_object;
    let all_ids: Vec<String> = manifest.objects.iter().map(|o| o.id.clone()).collect();
    let n = all_ids.len();
    let n_test = ((n as f64) * config.test_fraction).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::InvalidConfig(format!("cannot hold out {n_test} of {n} objects")));
    }
    let pool = n - n_test;
    let labeler = Labeler::new(&manifest.objects, config.task.label_kind());
    let classes: BTreeSet<String> = manifest.objects.iter().map(|o| config.task.label_kind().label_of(o)).collect();
    let budgets = match &config.budgets {
        Some(b) => b.clone(),
        None => property_budgets(classes.len().min(pool), pool),
    };
    if let Some(&b) = budgets.iter().find(|&&b| b > pool) {
        return Err(Error::BudgetExceedsPool { budget: b, pool });
    }
    let m = config.default_m();
    if budgets.len() < m {
        return Err(Error::TooFewBudgets { have: budgets.len(), need: m });
    }

    let mut jobs = Vec::new();
    let everything: BTreeSet<String> = all_ids.iter().cloned().collect();
    for repeat in 0..config.repeats {
        let mut shuffled = all_ids.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[0x5917, repeat as u64])));
        let test_ids = &shuffled[..n_test];
        let order = stratified_order(&shuffled[n_test..], |id| labeler.label(id).unwrap_or_default());
        let test = trial_keys(test_ids, trials);
        jobs.push(Job {
            repeat,
            fold: 0,
            budget: n,
            condition: Condition::All,
            source_objects: everything.clone(),
            train: trial_keys(&all_ids, trials),
            test: test.clone(),
        });
        for &budget in &budgets {
            for &condition in conditions(config.method) {
                jobs.push(Job {
                    repeat,
                    fold: 0,
                    budget,
                    condition,
                    source_objects: everything.clone(),
                    train: trial_keys(&order[..budget], trials),
                    test: test.clone(),
                });
            }
        }
    }
    let (rows, weights, audits) = execute(&ctx, jobs, true)?;
    let summary = summarize("property", config, &channels, &budgets, m, &rows, &weights)?;
    Ok(EvaluationReport {
        budgets,
        rows,
        channel_weights: weights,
        audits,
        summary,
    })
}

/// Picks objects in random order, skipping any whose (weight, content)
/// pair was already taken.
pub fn sample_unique_objects(objects: &[ObjectDescriptor], count: usize, seed: u64) -> Result<Vec<String>> {
    let mut order: Vec<&ObjectDescriptor> = objects.iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut taken = BTreeSet::new();
    let mut out = Vec::new();
    for o in order {
        if out.len() == count {
            break;
        }
        if taken.insert((o.weight, o.content)) {
            out.push(o.id.clone());
        }
    }
    if out.len() < count {
        return Err(Error::InsufficientUniqueObjects {
            found: out.len(),
            needed: count,
        });
    }
    out.sort();
    Ok(out)
}

/// Identity recognition: per repeat, sample objects with distinct
/// properties; each fold holds out one trial per object and grows the
/// target's trials per object; the source robot contributes all trials.
pub fn run_identity_protocol(manifest: &DatasetManifest, config: &ProtocolConfig) -> Result<EvaluationReport> {
    config.validate()?;
    let config = &ProtocolConfig {
        task: Task::ObjectId,
        ..config.clone()
    };
    let channels = resolve_channels(manifest, config)?;
    let ctx = Context {
        config,
        objects: &manifest.objects,
        channels: load_channels(manifest, config, &channels)?,
    };
    let trials = manifest.robot(&config.target)?.trials_per_object;
    if config.folds == 0 || config.folds > trials {
        return Err(Error::InvalidConfig(format!("{} folds over {trials} trials per object", config.folds)));
    }
    let pool = trials - 1;
    let budgets = config.budgets.clone().unwrap_or_else(|| (1..=pool).collect());
    if let Some(&b) = budgets.iter().find(|&&b| b > pool) {
        return Err(Error::BudgetExceedsPool { budget: b, pool });
    }
    let m = config.default_m();
    if budgets.len() < m {
        return Err(Error::TooFewBudgets { have: budgets.len(), need: m });
    }

    let mut jobs = Vec::new();
    for repeat in 0..config.repeats {
        let ids = sample_unique_objects(&manifest.objects, config.identity_objects, derive_seed(config.seed, &[0x1d, repeat as u64]))?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[0x7a, repeat as u64]));
        let orders: Vec<Vec<usize>> = ids
            .iter()
            .map(|_| {
                let mut o: Vec<usize> = (0..trials).collect();
                o.shuffle(&mut rng);
                o
            })
            .collect();
        let source: BTreeSet<String> = ids.iter().cloned().collect();
        let all = trial_keys(&ids, trials);
        for fold in 0..config.folds {
            let test: BTreeSet<(String, usize)> = ids.iter().zip(&orders).map(|(id, o)| (id.clone(), o[fold])).collect();
            jobs.push(Job {
                repeat,
                fold,
                budget: trials,
                condition: Condition::All,
                source_objects: source.clone(),
                train: all.clone(),
                test: test.clone(),
            });
            for &budget in &budgets {
                let train: BTreeSet<(String, usize)> = ids
                    .iter()
                    .zip(&orders)
                    .flat_map(|(id, o)| {
                        o.iter().filter(|&&t| t != o[fold]).take(budget).map(move |&t| (id.clone(), t))
                    })
                    .collect();
                for &condition in conditions(config.method) {
                    jobs.push(Job {
                        repeat,
                        fold,
                        budget,
                        condition,
                        source_objects: source.clone(),
                        train: train.clone(),
                        test: test.clone(),
                    });
                }
            }
        }
    }
    let (rows, weights, audits) = execute(&ctx, jobs, false)?;
    let summary = summarize("identity", config, &channels, &budgets, m, &rows, &weights)?;
    Ok(EvaluationReport {
        budgets,
        rows,
        channel_weights: weights,
        audits,
        summary,
    })
}

/// Dispatches on the task: identity recognition or property recognition.
pub fn run_protocol(manifest: &DatasetManifest, config: &ProtocolConfig) -> Result<EvaluationReport> {
    match config.task {
        Task::ObjectId => run_identity_protocol(manifest, config),
        _ => run_property_protocol(manifest, config),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    task: Task,
    method: Method,
    repeat: usize,
    fold: usize,
    budget: usize,
    condition: Condition,
    accuracy: f64,
}

/// One row per repeat, fold, budget and condition.
pub fn write_report_csv(report: &EvaluationReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in &report.rows {
        w.serialize(CsvRow {
            task: report.summary.task,
            method: report.summary.method,
            repeat: r.repeat,
            fold: r.fold,
            budget: r.budget,
            condition: r.condition,
            accuracy: r.accuracy,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Rows of a report CSV tagged with their task and method.
pub fn read_report_csv(path: &Path) -> Result<Vec<(Task, Method, AccuracyRow)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::SchemaViolation(format!("{}: {other:?}", path.display())),
    })?;
    r.deserialize::<CsvRow>()
        .map(|row| {
            let row = row?;
            Ok((
                row.task,
                row.method,
                AccuracyRow {
                    repeat: row.repeat,
                    fold: row.fold,
                    budget: row.budget,
                    condition: row.condition,
                    accuracy: row.accuracy,
                },
            ))
        })
        .collect()
}

pub fn write_summary_json(report: &EvaluationReport, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(&report.summary)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
