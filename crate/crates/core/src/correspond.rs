//! Source/target correspondences for projection learning.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{ObjectDescriptor, Provenance, SensorimotorContext, TrialRecord};
use crate::error::{Error, Result};

/// What a sample is labeled with: one of the recognition targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelKind {
    Weight,
    Content,
    ObjectId,
}

impl LabelKind {
    pub fn label_of(self, object: &ObjectDescriptor) -> String {
        match self {
            LabelKind::Weight => object.weight.to_string(),
            LabelKind::Content => object.content.to_string(),
            LabelKind::ObjectId => object.id.clone(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LabelKind::Weight => "weight",
            LabelKind::Content => "content",
            LabelKind::ObjectId => "object-id",
        }
    }
}

impl fmt::Display for LabelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for LabelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weight" => Ok(LabelKind::Weight),
            "content" => Ok(LabelKind::Content),
            "object-id" | "objectId" | "object" | "identity" => Ok(LabelKind::ObjectId),
            _ => Err(Error::UnknownLabel(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrespondenceMode {
    Identity,
    Property,
}

/// Identifies one trial of one robot within a context.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrialKey {
    pub object: String,
    pub trial: usize,
    pub provenance: Provenance,
}

impl From<&TrialRecord> for TrialKey {
    fn from(r: &TrialRecord) -> Self {
        TrialKey {
            object: r.object.clone(),
            trial: r.trial,
            provenance: r.provenance,
        }
    }
}

impl fmt::Display for TrialKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.object, self.trial)
    }
}

/// Aligned source/target sample pairs. Features are stored once per
/// distinct trial; `pairs` indexes rows of the two feature matrices.
#[derive(Debug, Clone)]
pub struct CorrespondenceSet {
    pub mode: CorrespondenceMode,
    pub property: LabelKind,
    pub source_context: SensorimotorContext,
    pub target_context: SensorimotorContext,
    pub source_keys: Vec<TrialKey>,
    pub target_keys: Vec<TrialKey>,
    pub source_features: DMatrix<f64>,
    pub target_features: DMatrix<f64>,
    pub pairs: Vec<(usize, usize)>,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pair_keys(&self) -> impl Iterator<Item = (&TrialKey, &TrialKey)> {
        self.pairs.iter().map(|&(s, t)| (&self.source_keys[s], &self.target_keys[t]))
    }
}

/// Single context shared by every trial in `trials`.
fn common_context<'a>(trials: &[&'a TrialRecord], side: &str) -> Result<Option<&'a SensorimotorContext>> {
    let Some(first) = trials.first() else {
        return Ok(None);
    };
    if let Some(other) = trials.iter().find(|t| t.context != first.context) {
        return Err(Error::ContextMismatch(format!(
            "{side} trials mix {} and {}",
            first.context, other.context
        )));
    }
    Ok(Some(&first.context))
}

fn check_contexts(
    src: &[&TrialRecord],
    tgt: &[&TrialRecord],
) -> Result<(SensorimotorContext, Option<SensorimotorContext>)> {
    let s = common_context(src, "source")?.ok_or(Error::EmptyInput("no source trials"))?;
    let t = common_context(tgt, "target")?;
    if let Some(t) = t {
        if !s.same_channel(t) {
            return Err(Error::ContextMismatch(format!("source {s} vs target {t}")));
        }
    }
    Ok((s.clone(), t.cloned()))
}

fn sorted<'a>(trials: &[&'a TrialRecord]) -> Vec<&'a TrialRecord> {
    let mut v = trials.to_vec();
    v.sort_by(|a, b| (&a.object, a.trial, a.provenance).cmp(&(&b.object, b.trial, b.provenance)));
    v
}

fn feature_matrix(trials: &[&TrialRecord], dim: usize) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(trials.len(), dim);
    for (i, t) in trials.iter().enumerate() {
        if t.feature.len() != dim {
            return Err(Error::dims(format!("feature of {}#{}", t.object, t.trial), dim, t.feature.len()));
        }
        m.row_mut(i).copy_from_slice(&t.feature);
    }
    Ok(m)
}

/// Pairs every source trial with every target trial whose grouping key
/// matches. Pair order follows (source object, source trial, target
/// object, target trial).
fn pair_by<F>(
    src: &[&TrialRecord],
    tgt: &[&TrialRecord],
    mode: CorrespondenceMode,
    property: LabelKind,
    key: F,
) -> Result<CorrespondenceSet>
where
    F: Fn(&TrialRecord) -> Result<String>,
{
    let (source_context, target_context) = check_contexts(src, tgt)?;
    let target_context = target_context.ok_or(Error::EmptyInput("no target trials"))?;
    let src = sorted(src);
    let tgt = sorted(tgt);

    let mut by_key: HashMap<String, Vec<usize>> = HashMap::new();
    for (j, t) in tgt.iter().enumerate() {
        by_key.entry(key(t)?).or_default().push(j);
    }
    let mut pairs = Vec::new();
    for (i, s) in src.iter().enumerate() {
        if let Some(js) = by_key.get(&key(s)?) {
            pairs.extend(js.iter().map(|&j| (i, j)));
        }
    }
    Ok(CorrespondenceSet {
        mode,
        property,
        source_features: feature_matrix(&src, source_context.feature_dim)?,
        target_features: feature_matrix(&tgt, target_context.feature_dim)?,
        source_keys: src.iter().map(|r| TrialKey::from(*r)).collect(),
        target_keys: tgt.iter().map(|r| TrialKey::from(*r)).collect(),
        source_context,
        target_context,
        pairs,
    })
}

/// Full source x target Cartesian product within each shared object.
pub fn identity_pairs(src: &[&TrialRecord], tgt: &[&TrialRecord]) -> Result<CorrespondenceSet> {
    pair_by(src, tgt, CorrespondenceMode::Identity, LabelKind::ObjectId, |r| Ok(r.object.clone()))
}

/// Cartesian product within each shared value of `property` (weight or
/// content); pairs may cross objects but never property values.
pub fn property_pairs(
    src: &[&TrialRecord],
    tgt: &[&TrialRecord],
    property: LabelKind,
    objects: &[ObjectDescriptor],
) -> Result<CorrespondenceSet> {
    if property == LabelKind::ObjectId {
        return Err(Error::InvalidConfig(
            "property correspondences pair on weight or content".into(),
        ));
    }
    let lookup = Labeler::new(objects, property);
    pair_by(src, tgt, CorrespondenceMode::Property, property, |r| lookup.label(&r.object))
}

/// Per-object label lookup.
pub struct Labeler<'a> {
    objects: HashMap<&'a str, &'a ObjectDescriptor>,
    kind: LabelKind,
}

impl<'a> Labeler<'a> {
    pub fn new(objects: &'a [ObjectDescriptor], kind: LabelKind) -> Self {
        Labeler {
            objects: objects.iter().map(|o| (o.id.as_str(), o)).collect(),
            kind,
        }
    }

    pub fn label(&self, object: &str) -> Result<String> {
        self.objects
            .get(object)
            .map(|o| self.kind.label_of(o))
            .ok_or_else(|| Error::UnknownName {
                kind: "object",
                name: object.to_string(),
            })
    }
}

/// Labeled samples of both domains for kernel manifold alignment.
#[derive(Debug, Clone)]
pub struct KemaInputs {
    pub x1: DMatrix<f64>,
    pub y1: Vec<String>,
    pub x2: DMatrix<f64>,
    pub y2: Vec<String>,
    pub keys1: Vec<TrialKey>,
    pub keys2: Vec<TrialKey>,
}

impl KemaInputs {
    /// Builds inputs directly from feature matrices and labels.
    pub fn from_parts(x1: DMatrix<f64>, y1: Vec<String>, x2: DMatrix<f64>, y2: Vec<String>) -> Result<Self> {
        if x1.nrows() != y1.len() {
            return Err(Error::dims("domain 1 labels", x1.nrows(), y1.len()));
        }
        if x2.nrows() != y2.len() {
            return Err(Error::dims("domain 2 labels", x2.nrows(), y2.len()));
        }
        let keys = |n: usize, d: &str| {
            (0..n)
                .map(|i| TrialKey {
                    object: format!("{d}-{i}"),
                    trial: 0,
                    provenance: Provenance::Real,
                })
                .collect()
        };
        Ok(KemaInputs {
            keys1: keys(x1.nrows(), "d1"),
            keys2: keys(x2.nrows(), "d2"),
            x1,
            y1,
            x2,
            y2,
        })
    }

    pub fn distinct_labels(&self) -> Vec<String> {
        let mut all: Vec<String> = self.y1.iter().chain(&self.y2).cloned().collect();
        all.sort();
        all.dedup();
        all
    }
}

/// Stacks each domain's features with the chosen label per sample.
pub fn kema_inputs(
    src: &[&TrialRecord],
    tgt: &[&TrialRecord],
    label: LabelKind,
    objects: &[ObjectDescriptor],
) -> Result<KemaInputs> {
    let (source_context, target_context) = check_contexts(src, tgt)?;
    let labeler = Labeler::new(objects, label);
    let src = sorted(src);
    let tgt = sorted(tgt);
    let target_dim = target_context.map_or(0, |c| c.feature_dim);
    Ok(KemaInputs {
        x1: feature_matrix(&src, source_context.feature_dim)?,
        y1: src.iter().map(|r| labeler.label(&r.object)).collect::<Result<_>>()?,
        x2: feature_matrix(&tgt, target_dim)?,
        y2: tgt.iter().map(|r| labeler.label(&r.object)).collect::<Result<_>>()?,
        keys1: src.iter().map(|r| TrialKey::from(*r)).collect(),
        keys2: tgt.iter().map(|r| TrialKey::from(*r)).collect(),
    })
}

/// Number of identity pairs implied by per-object trial counts.
pub fn expected_identity_count(src: &[&TrialRecord], tgt: &[&TrialRecord]) -> usize {
    let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for s in src {
        counts.entry(s.object.as_str()).or_default().0 += 1;
    }
    for t in tgt {
        counts.entry(t.object.as_str()).or_default().1 += 1;
    }
    counts.values().map(|(a, b)| a * b).sum()
}
