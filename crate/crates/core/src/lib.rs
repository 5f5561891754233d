pub mod classify;
pub mod datasets;
pub mod detect;
#[cfg(feature = "external")]
mod external;
pub mod fixtures;
pub mod hash;
pub mod imaging;
pub mod metrics;
pub mod pipeline;
pub mod prng;
