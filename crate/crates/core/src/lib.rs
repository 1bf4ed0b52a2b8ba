//! Cross-robot transfer of implicit object knowledge.
//!
//! Binned sensorimotor features from a source robot are projected either
//! into a target robot's feature space (encoder-decoder network) or into a
//! latent space shared by both robots (kernel manifold alignment), and
//! target-robot classifiers for object weight, content and identity are
//! trained on the projected data.

pub mod augment;
pub mod correspond;
pub mod data;
pub mod edn;
pub mod error;
pub mod eval;
pub mod featurize;
pub mod kema;
pub mod linalg;
pub mod model_io;
pub mod svm;
pub mod synth;

pub use correspond::{CorrespondenceMode, CorrespondenceSet, KemaInputs, LabelKind, TrialKey};
pub use data::{
    Behavior, Color, Content, DatasetManifest, Modality, ObjectDescriptor, Provenance, RobotDescriptor,
    SensorimotorContext, TrialFilter, TrialRecord, Weight,
};
pub use edn::{EdnConfig, EdnModel};
pub use error::{Error, Result};
pub use kema::{KemaConfig, KemaModel};
pub use svm::{Gamma, SvmConfig, SvmModel};
pub use eval::{EvaluationReport, Method, ProtocolConfig, Task};
pub use synth::{SynthConfig, SynthDataset};
