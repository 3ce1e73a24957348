//! Differentially private synthesis of categorical microdata.
//!
//! Two synthesisers share one pipeline:
//!
//! * **catall** releases the full cross-tabulation with Laplace noise of
//!   scale `1/ε` and draws a multinomial sample from it;
//! * **ipf** releases a set of margins (all two-way by default) at scale
//!   `M/ε`, reconciles them by iterative proportional fitting and samples
//!   from the fitted joint table.
//!
//! Both run without noise when no ε is given. [`metrics`] scores the output
//! for disclosure (replicated uniques) and utility (standardised pMSE per
//! margin), and [`harness`] runs replicated ε sweeps over CSV data.
//!
//! ```
//! use std::sync::Arc;
//! use dpsynth::{build_table, synthesize, Codebook, Method, RecordSet, RngStream, StructuralZeros, SynthesisConfig};
//!
//! let codebook = Arc::new(Codebook::from_cardinalities(&[2, 3])?);
//! let records = RecordSet::from_rows(2, [[0, 0], [0, 2], [1, 1], [1, 1]])?;
//! let table = build_table(&records, codebook, Arc::new(StructuralZeros::none()))?;
//!
//! let config = SynthesisConfig::new(Method::Catall).with_epsilon(Some(1.0));
//! let synthetic = synthesize(&table, &config, RngStream::new(7, 0))?;
//! assert_eq!(synthetic.len(), 4);
//! # Ok::<(), dpsynth::Error>(())
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dp_noise;
pub mod error;
pub mod harness;
pub mod ipf;
pub mod metrics;
pub mod rng;
pub mod synth;
pub mod tabulate;

pub use dp_noise::{laplace_scale, Method, NoiseConfig, Provenance, Released};
pub use error::{Error, Result};
pub use ipf::{default_init, ipf_fit, IpfResult, IpfTargets};
pub use metrics::{disclosure, utility_summary, DisclosureReport, UtilityReport};
pub use rng::RngStream;
pub use synth::{synthesize, MarginSelection, SampleSize, SynthDataset, SynthesisConfig};
pub use tabulate::{
    all_margins, build_table, marginalize, Codebook, ContingencyTable, MarginSpec, MarginTable,
    RecordSet, StructuralZeros, TableMode, Variable,
};

/// The guide's chapters, compiled so that their examples run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tables.md")]
    mod tables {}
    #[doc = include_str!("../../../book/src/noise.md")]
    mod noise {}
    #[doc = include_str!("../../../book/src/ipf.md")]
    mod ipf {}
    #[doc = include_str!("../../../book/src/synthesis.md")]
    mod synthesis {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
