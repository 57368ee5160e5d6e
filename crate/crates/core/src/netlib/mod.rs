//! Network architectures, the modified softmax head, Lipschitz bounds and
//! checkpoints.

mod checkpoint;
mod lipschitz;
mod network;

pub use checkpoint::{checkpoint_dir, BufferEntry, Checkpoint, CheckpointManifest, ParamEntry};
pub use lipschitz::{
    lipschitz_bound, lipschitz_penalty, lipschitz_report, lipschitz_term, ComponentBound,
    LipschitzReport,
};
pub use network::{modified_softmax, Architecture, DenseLayer, Head, Network, NetworkKind, Prediction};
