//! Toy CycleGAN: architecture descriptors, networks, objective terms,
//! pretraining and fine-tuning.

pub mod arch;
mod bundle;
pub mod losses;
pub mod network;
pub mod train;

pub use arch::{ArchSpec, ConvSpec, CostTerm, Layer, MaskSlot, ResidualSpec};
pub use bundle::{BundleDescriptor, CompactDescriptor, CompactPair, CycleGanBundle, Direction};
pub use losses::{DisMap, FidelityLoss, GanLoss, Reduction};
pub use network::{Network, WeightBundle};
