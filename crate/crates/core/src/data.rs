//! Domain types for the two-robot object-interaction dataset, manifest
//! loading and validation, and trial selection.
//!
//! A manifest is a single JSON document with three top-level keys:
//!
//! ```json
//! {
//!   "robots":  [{"name": "ur5", "behaviors": ["grasp", ...], "modalities": ["audio", ...],
//!                "trials_per_object": 5, "effort_joints": 6}],
//!   "objects": [{"id": "blue-rice-50g", "color": "blue", "content": "rice", "weight": "50g"}],
//!   "records": [{"object": "blue-rice-50g", "robot": "ur5", "behavior": "shake",
//!                "modality": "audio", "trial": 0, "file": "ur5/shake-audio.csv", "row": 12}]
//! }
//! ```
//!
//! `file` is relative to the manifest's directory and names a headerless CSV
//! holding one feature vector per line. `row` defaults to `trial` and
//! `provenance` (`real` or `augmented`) defaults to `real`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

macro_rules! label_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal $(| $alias:literal)*),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(
                #[serde(rename = $text $(, alias = $alias)*)]
                $variant,
            )+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text,)+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl std::str::FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text $(| $alias)* => Ok($name::$variant),)+
                    _ => Err(Error::UnknownName { kind: stringify!($name), name: s.to_string() }),
                }
            }
        }
    };
}

label_enum!(
    /// Container color. Visual only; never a recognition target.
    Color {
        Blue => "blue",
        Green => "green",
        Red => "red",
        White => "white",
        Yellow => "yellow",
    }
);

label_enum!(
    Content {
        Buttons => "buttons",
        Dices => "dices",
        Marbles => "marbles",
        NutsBolts => "nuts-bolts",
        Pasta => "pasta",
        Rice => "rice",
        Empty => "empty",
    }
);

label_enum!(
    Weight {
        Empty => "empty",
        G50 => "50g" | "g50",
        G100 => "100g" | "g100",
        G150 => "150g" | "g150",
    }
);

label_enum!(
    /// Exploratory behaviors. `Look` is non-interactive and records no
    /// non-visual modality, but robots still perform it, so it counts
    /// toward the interaction bookkeeping.
    Behavior {
        Look => "look",
        Grasp => "grasp",
        Pick => "pick",
        Hold => "hold",
        Shake => "shake",
        Lower => "lower",
        Drop => "drop",
        Push => "push",
    }
);

label_enum!(
    Modality {
        Audio => "audio",
        Effort => "effort",
        Force => "force",
    }
);

impl Behavior {
    pub fn is_interactive(self) -> bool {
        self != Behavior::Look
    }
}

/// Number of bins along the time axis of every binned feature.
pub const TEMPORAL_BINS: usize = 10;
/// Frequency bins of the audio spectro-temporal histogram.
pub const FREQUENCY_BINS: usize = 10;
/// Force is recorded along three axes.
pub const FORCE_AXES: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectDescriptor {
    pub id: String,
    pub color: Color,
    pub content: Content,
    pub weight: Weight,
}

impl ObjectDescriptor {
    pub fn validate(&self) -> Result<()> {
        if (self.content == Content::Empty) != (self.weight == Weight::Empty) {
            return Err(Error::SchemaViolation(format!(
                "object `{}`: content {} with weight {} (empty content must pair with empty weight)",
                self.id, self.content, self.weight
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RobotDescriptor {
    pub name: String,
    pub behaviors: Vec<Behavior>,
    pub modalities: Vec<Modality>,
    pub trials_per_object: usize,
    pub effort_joints: usize,
}

impl RobotDescriptor {
    pub fn feature_dim(&self, modality: Modality) -> usize {
        match modality {
            Modality::Audio => FREQUENCY_BINS * TEMPORAL_BINS,
            Modality::Force => FORCE_AXES * TEMPORAL_BINS,
            Modality::Effort => self.effort_joints * TEMPORAL_BINS,
        }
    }

    pub fn context(&self, behavior: Behavior, modality: Modality) -> SensorimotorContext {
        SensorimotorContext {
            robot: self.name.clone(),
            behavior,
            modality,
            feature_dim: self.feature_dim(modality),
        }
    }

    /// Every interactive (behavior, modality) context of this robot.
    pub fn contexts(&self) -> Vec<SensorimotorContext> {
        self.behaviors
            .iter()
            .filter(|b| b.is_interactive())
            .flat_map(|&b| self.modalities.iter().map(move |&m| (b, m)))
            .map(|(b, m)| self.context(b, m))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SensorimotorContext {
    pub robot: String,
    pub behavior: Behavior,
    pub modality: Modality,
    pub feature_dim: usize,
}

impl SensorimotorContext {
    /// True when the other context uses the same behavior and modality,
    /// whichever robot recorded it.
    pub fn same_channel(&self, other: &SensorimotorContext) -> bool {
        self.behavior == other.behavior && self.modality == other.modality
    }
}

impl fmt::Display for SensorimotorContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}-{}", self.robot, self.behavior, self.modality)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    #[default]
    Real,
    Augmented,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub object: String,
    pub context: SensorimotorContext,
    pub trial: usize,
    pub feature: Vec<f64>,
    pub provenance: Provenance,
}

impl TrialRecord {
    fn sort_key(&self) -> (&str, usize, &str, Behavior, Modality, Provenance) {
        (
            &self.object,
            self.trial,
            &self.context.robot,
            self.context.behavior,
            self.context.modality,
            self.provenance,
        )
    }
}

/// On-disk record entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordEntry {
    pub object: String,
    pub robot: String,
    pub behavior: Behavior,
    pub modality: Modality,
    pub trial: usize,
    pub file: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row: Option<usize>,
    #[serde(default, skip_serializing_if = "is_real")]
    pub provenance: Provenance,
}

fn is_real(p: &Provenance) -> bool {
    *p == Provenance::Real
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestDocument {
    robots: Vec<RobotDescriptor>,
    objects: Vec<ObjectDescriptor>,
    records: Vec<RecordEntry>,
}

/// A validated dataset: robots, objects and every trial record with its
/// feature vector loaded. Records are kept in (object id, trial) order.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub robots: Vec<RobotDescriptor>,
    pub objects: Vec<ObjectDescriptor>,
    pub records: Vec<TrialRecord>,
}

/// Which records [`DatasetManifest::select_trials`] should return. Unset
/// fields match everything.
#[derive(Debug, Clone, Default)]
pub struct TrialFilter {
    pub robot: Option<String>,
    pub behavior: Option<Behavior>,
    pub modality: Option<Modality>,
    pub objects: Option<BTreeSet<String>>,
    pub trials: Option<BTreeSet<usize>>,
    pub provenance: Option<Provenance>,
}

impl TrialFilter {
    pub fn context(robot: &str, behavior: Behavior, modality: Modality) -> Self {
        TrialFilter {
            robot: Some(robot.to_string()),
            behavior: Some(behavior),
            modality: Some(modality),
            ..Default::default()
        }
    }

    pub fn with_objects<I, S>(mut self, objects: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.objects = Some(objects.into_iter().map(Into::into).collect());
        self
    }

    pub fn with_trials(mut self, trials: impl IntoIterator<Item = usize>) -> Self {
        self.trials = Some(trials.into_iter().collect());
        self
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = Some(provenance);
        self
    }

    fn matches(&self, r: &TrialRecord) -> bool {
        self.robot.as_ref().is_none_or(|x| *x == r.context.robot)
            && self.behavior.is_none_or(|x| x == r.context.behavior)
            && self.modality.is_none_or(|x| x == r.context.modality)
            && self.objects.as_ref().is_none_or(|x| x.contains(&r.object))
            && self.trials.as_ref().is_none_or(|x| x.contains(&r.trial))
            && self.provenance.is_none_or(|x| x == r.provenance)
    }
}

impl DatasetManifest {
    /// Builds a manifest from parts, validating every invariant and sorting
    /// records into canonical order.
    pub fn new(
        robots: Vec<RobotDescriptor>,
        mut objects: Vec<ObjectDescriptor>,
        mut records: Vec<TrialRecord>,
    ) -> Result<Self> {
        objects.sort_by(|a, b| a.id.cmp(&b.id));
        records.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        let manifest = DatasetManifest {
            robots,
            objects,
            records,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        for robot in &self.robots {
            if !names.insert(robot.name.as_str()) {
                return Err(Error::SchemaViolation(format!("duplicate robot `{}`", robot.name)));
            }
            if robot.trials_per_object == 0 {
                return Err(Error::SchemaViolation(format!(
                    "robot `{}` declares zero trials per object",
                    robot.name
                )));
            }
            if robot.modalities.contains(&Modality::Effort) && robot.effort_joints == 0 {
                return Err(Error::SchemaViolation(format!(
                    "robot `{}` records effort but declares zero joints",
                    robot.name
                )));
            }
        }
        let mut ids = BTreeSet::new();
        for object in &self.objects {
            object.validate()?;
            if !ids.insert(object.id.as_str()) {
                return Err(Error::SchemaViolation(format!("duplicate object id `{}`", object.id)));
            }
        }

        let mut seen = BTreeSet::new();
        for record in &self.records {
            let robot = self.robot(&record.context.robot)?;
            if !ids.contains(record.object.as_str()) {
                return Err(Error::UnknownName {
                    kind: "object",
                    name: record.object.clone(),
                });
            }
            let ctx = &record.context;
            if !ctx.behavior.is_interactive() {
                return Err(Error::SchemaViolation(format!(
                    "record for `{}` uses non-interactive behavior {}",
                    record.object, ctx.behavior
                )));
            }
            if !robot.behaviors.contains(&ctx.behavior) || !robot.modalities.contains(&ctx.modality) {
                return Err(Error::SchemaViolation(format!(
                    "robot `{}` does not declare context {}-{}",
                    robot.name, ctx.behavior, ctx.modality
                )));
            }
            let dim = robot.feature_dim(ctx.modality);
            if ctx.feature_dim != dim {
                return Err(Error::dims(format!("context {ctx}"), dim, ctx.feature_dim));
            }
            if record.feature.len() != dim {
                return Err(Error::dims(
                    format!("feature of {} trial {} in {ctx}", record.object, record.trial),
                    dim,
                    record.feature.len(),
                ));
            }
            if record.provenance == Provenance::Real && record.trial >= robot.trials_per_object {
                return Err(Error::SchemaViolation(format!(
                    "trial {} of `{}` exceeds the {} trials declared for `{}`",
                    record.trial, record.object, robot.trials_per_object, robot.name
                )));
            }
            if record.feature.iter().any(|v| !v.is_finite()) {
                return Err(Error::SchemaViolation(format!(
                    "non-finite feature value for `{}` trial {} in {ctx}",
                    record.object, record.trial
                )));
            }
            if !seen.insert(record.sort_key()) {
                return Err(Error::SchemaViolation(format!(
                    "duplicate record for `{}` trial {} in {ctx}",
                    record.object, record.trial
                )));
            }
        }
        Ok(())
    }

    pub fn robot(&self, name: &str) -> Result<&RobotDescriptor> {
        self.robots.iter().find(|r| r.name == name).ok_or_else(|| Error::UnknownName {
            kind: "robot",
            name: name.to_string(),
        })
    }

    pub fn object(&self, id: &str) -> Result<&ObjectDescriptor> {
        self.objects
            .binary_search_by(|o| o.id.as_str().cmp(id))
            .map(|i| &self.objects[i])
            .map_err(|_| Error::UnknownName {
                kind: "object",
                name: id.to_string(),
            })
    }

    pub fn object_map(&self) -> HashMap<&str, &ObjectDescriptor> {
        self.objects.iter().map(|o| (o.id.as_str(), o)).collect()
    }

    /// Total object interactions: every robot performs every declared
    /// behavior on every object, `trials_per_object` times.
    pub fn interaction_count(&self) -> usize {
        self.robots
            .iter()
            .map(|r| r.behaviors.len() * self.objects.len() * r.trials_per_object)
            .sum()
    }

    /// Records matching every field of `filter`, in (object id, trial) order.
    pub fn select_trials(&self, filter: &TrialFilter) -> Result<Vec<&TrialRecord>> {
        if let Some(robot) = &filter.robot {
            self.robot(robot)?;
        }
        if let Some(b) = filter.behavior {
            if !self.robots.iter().any(|r| r.behaviors.contains(&b)) {
                return Err(Error::UnknownName {
                    kind: "behavior",
                    name: b.to_string(),
                });
            }
        }
        if let Some(m) = filter.modality {
            if !self.robots.iter().any(|r| r.modalities.contains(&m)) {
                return Err(Error::UnknownName {
                    kind: "modality",
                    name: m.to_string(),
                });
            }
        }
        if let Some(objects) = &filter.objects {
            for id in objects {
                self.object(id)?;
            }
        }
        if let Some(trials) = &filter.trials {
            let max_trials = self.robots.iter().map(|r| r.trials_per_object).max().unwrap_or(0);
            let max_record = self.records.iter().map(|r| r.trial + 1).max().unwrap_or(0);
            for &t in trials {
                if t >= max_trials.max(max_record) {
                    return Err(Error::UnknownName {
                        kind: "trial index",
                        name: t.to_string(),
                    });
                }
            }
        }
        Ok(self.records.iter().filter(|r| filter.matches(r)).collect())
    }

    /// Adds records (e.g. augmented trials) and restores canonical order.
    pub fn extend_records(&mut self, records: impl IntoIterator<Item = TrialRecord>) -> Result<()> {
        self.records.extend(records);
        self.records.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        self.validate()
    }
}

/// Loads and validates a manifest, reading every referenced feature file.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: ManifestDocument =
        serde_json::from_str(&text).map_err(|e| Error::SchemaViolation(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));

    let robots: HashMap<&str, &RobotDescriptor> = doc.robots.iter().map(|r| (r.name.as_str(), r)).collect();
    let mut cache: HashMap<PathBuf, Vec<Vec<f64>>> = HashMap::new();
    let mut records = Vec::with_capacity(doc.records.len());
    for entry in &doc.records {
        let robot = robots.get(entry.robot.as_str()).ok_or_else(|| Error::UnknownName {
            kind: "robot",
            name: entry.robot.clone(),
        })?;
        let file = base.join(&entry.file);
        if !cache.contains_key(&file) {
            let rows = read_feature_csv(&file)?;
            cache.insert(file.clone(), rows);
        }
        let rows = &cache[&file];
        let row = entry.row.unwrap_or(entry.trial);
        let feature = rows.get(row).ok_or_else(|| {
            Error::SchemaViolation(format!(
                "{} has {} rows; record for `{}` trial {} needs row {row}",
                file.display(),
                rows.len(),
                entry.object,
                entry.trial
            ))
        })?;
        records.push(TrialRecord {
            object: entry.object.clone(),
            context: robot.context(entry.behavior, entry.modality),
            trial: entry.trial,
            feature: feature.clone(),
            provenance: entry.provenance,
        });
    }
    DatasetManifest::new(doc.robots, doc.objects, records)
}

/// Writes `manifest.json` into `dir` plus one feature CSV per
/// (robot, behavior, modality, provenance). Returns the manifest path.
pub fn write_manifest(manifest: &DatasetManifest, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let mut groups: BTreeMap<(String, Behavior, Modality, Provenance), Vec<&TrialRecord>> = BTreeMap::new();
    for r in &manifest.records {
        groups
            .entry((r.context.robot.clone(), r.context.behavior, r.context.modality, r.provenance))
            .or_default()
            .push(r);
    }

    let mut entries = Vec::with_capacity(manifest.records.len());
    for ((robot, behavior, modality, provenance), records) in &groups {
        let suffix = match provenance {
            Provenance::Real => "",
            Provenance::Augmented => "-augmented",
        };
        let rel = PathBuf::from(robot).join(format!("{behavior}-{modality}{suffix}.csv"));
        let abs = dir.join(&rel);
        if let Some(parent) = abs.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        write_feature_csv(&abs, records.iter().map(|r| r.feature.as_slice()))?;
        for (row, r) in records.iter().enumerate() {
            entries.push(RecordEntry {
                object: r.object.clone(),
                robot: robot.clone(),
                behavior: *behavior,
                modality: *modality,
                trial: r.trial,
                file: rel.clone(),
                row: Some(row),
                provenance: *provenance,
            });
        }
    }

    let doc = ManifestDocument {
        robots: manifest.robots.clone(),
        objects: manifest.objects.clone(),
        records: entries,
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&doc)?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Reads a headerless CSV of decimal floats, one vector per line.
pub fn read_feature_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .map(|field| {
                field.parse::<f64>().map_err(|_| {
                    Error::SchemaViolation(format!(
                        "{} line {}: `{field}` is not a number",
                        path.display(),
                        line + 1
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_feature_csv<'a>(path: &Path, rows: impl IntoIterator<Item = &'a [f64]>) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for row in rows {
        // `{}` on f64 prints the shortest string that parses back exactly.
        writer.write_record(row.iter().map(|v| v.to_string()))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn robot(name: &str, trials: usize) -> RobotDescriptor {
        RobotDescriptor {
            name: name.into(),
            behaviors: vec![Behavior::Pick],
            modalities: vec![Modality::Force],
            trials_per_object: trials,
            effort_joints: 0,
        }
    }

    fn object(id: &str) -> ObjectDescriptor {
        ObjectDescriptor {
            id: id.into(),
            color: Color::Red,
            content: Content::Rice,
            weight: Weight::G50,
        }
    }

    #[test]
    fn empty_content_requires_empty_weight() {
        let mut o = object("x");
        o.content = Content::Empty;
        assert!(matches!(o.validate(), Err(Error::SchemaViolation(_))));
        o.weight = Weight::Empty;
        assert!(o.validate().is_ok());
    }

    #[test]
    fn feature_dims_follow_modality() {
        let mut r = robot("baxter", 5);
        r.effort_joints = 7;
        assert_eq!(r.feature_dim(Modality::Audio), 100);
        assert_eq!(r.feature_dim(Modality::Force), 30);
        assert_eq!(r.feature_dim(Modality::Effort), 70);
    }

    #[test]
    fn weight_accepts_both_spellings() {
        assert_eq!("50g".parse::<Weight>().unwrap(), Weight::G50);
        assert_eq!("g150".parse::<Weight>().unwrap(), Weight::G150);
        assert!("200g".parse::<Weight>().is_err());
    }

    #[test]
    fn minimal_manifest_counts_one_interaction() {
        let r = robot("ur5", 1);
        let rec = TrialRecord {
            object: "x".into(),
            context: r.context(Behavior::Pick, Modality::Force),
            trial: 0,
            feature: vec![0.0; 30],
            provenance: Provenance::Real,
        };
        let m = DatasetManifest::new(vec![r], vec![object("x")], vec![rec]).unwrap();
        assert_eq!(m.interaction_count(), 1);
    }

    #[test]
    fn real_trial_beyond_declared_count_is_rejected() {
        let r = robot("ur5", 1);
        let rec = TrialRecord {
            object: "x".into(),
            context: r.context(Behavior::Pick, Modality::Force),
            trial: 1,
            feature: vec![0.0; 30],
            provenance: Provenance::Real,
        };
        let err = DatasetManifest::new(vec![r], vec![object("x")], vec![rec]).unwrap_err();
        assert!(matches!(err, Error::SchemaViolation(_)));
    }

    #[test]
    fn duplicate_object_ids_are_rejected() {
        let err = DatasetManifest::new(vec![robot("ur5", 1)], vec![object("x"), object("x")], vec![]).unwrap_err();
        assert!(matches!(err, Error::SchemaViolation(_)));
    }
}
