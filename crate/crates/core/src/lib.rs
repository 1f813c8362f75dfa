//! Hierarchical distribution matchers (HiDM) for probabilistic amplitude
//! shaping of 16-QAM.
//!
//! A HiDM maps `k` uniform input bits to `N` shaped output amplitudes through
//! stacked layers of small energy-sorted lookup tables: each upper layer emits
//! *virtual amplitudes* that select disjoint LUTs in the layer below, so the
//! whole mapper is invertible, operation-free, and friendly to LUT-width and
//! memory limits of real synthesis tools.
//!
//! The crate is organised by concern:
//!
//! - [`shaping`]: alphabet-level entropy/energy math and the Maxwell-Boltzmann
//!   reference solver used to measure shaping quality.
//! - [`structure`]: characterization vectors, design constraints, and the
//!   layered LUT construction itself.
//! - [`codec`]: the invertible bit ↔ amplitude mapping over a built structure.
//! - [`analysis`]: exact output-distribution recursion, loss metrics, and
//!   closed-form memory accounting.
//! - [`design`]: constraint-pruned exhaustive vector search, the
//!   semi-analytical loss predictors, and the end-to-end design driver.
//! - [`sim`]: Monte-Carlo NGMI-vs-OSNR evaluation of the shaped constellation
//!   over the AWGN channel.

pub mod analysis;
pub mod codec;
pub mod design;
pub mod shaping;
pub mod sim;
pub mod structure;

pub use analysis::{
    decoding_memory, empirical_distribution, encoding_memory, estimate_decoding_memory, metrics,
    output_distribution, EmpiricalMode, MemoryReport, MetricsReport, StructureMetrics,
};
pub use codec::{encode, Decoder};
pub use design::{design, DesignConfig, DesignReport, Objective};
pub use shaping::{AmplitudeAlphabet, AmplitudeDistribution, MbReference};
pub use structure::{BitBudget, CharacterizationVectors, HidmStructure};
