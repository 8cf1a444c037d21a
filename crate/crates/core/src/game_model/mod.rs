//! Tabular two-player turn-based games with private information: specs,
//! fixtures, validation, simulation, datasets and policies.

pub mod dataset;
pub mod fixtures;
pub mod policy;
pub mod simulate;
pub mod spec;
pub mod spec_io;
pub mod validate;

pub use dataset::{read_dataset, write_dataset, HiddenTrace, OfflineDataset, SimulatedData, StepRecord, Trajectory};
pub use policy::{PolicyClass, PolicyPair};
pub use simulate::simulate_dataset;
pub use spec::{actor, BehaviorPolicyPair, GameSpec, Player, Spaces, SpecBundle};
pub use spec_io::{load_spec, read_spec, write_spec};
pub use validate::{validate_spec, ValidationReport};
