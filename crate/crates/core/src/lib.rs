//! Form–meaning systematicity toolkit.
//!
//! Estimates the mutual information between word forms (phone strings) and
//! word meanings (semantic vectors) as the difference between the
//! cross-entropies of two phone-level LSTM language models, one of which is
//! conditioned on the meaning. Also provides the significance machinery
//! (sign-flip permutation tests, Benjamini–Hochberg), phonestheme mining,
//! Gaussian-process hyperparameter search and a synthetic-lexicon oracle with
//! exactly computable entropies.
//!
//! Data-parallel inner loops (permutations, per-word gradients, Monte Carlo
//! phonestheme sampling) run on rayon when the `parallel` feature is enabled
//! (the default) and sequentially otherwise. Results never depend on the
//! schedule: every random draw is keyed by a counter derived from the seed.

pub mod exec;
pub mod hyperopt;
pub mod infotheory;
pub mod lexicon;
pub mod phonesthemes;
pub mod phonolm;
pub mod rng;
pub mod semspace;
pub mod stats;
pub mod synthbench;

pub use exec::Execution;
pub use infotheory::{EntropyEstimate, MiEstimate, PerWordLoss, WordLoss};
pub use lexicon::{Lexicon, Phone, PhoneId, PhoneInventory, Sign};
