//! Joint user scheduling, OFDMA resource-unit allocation and MU-MIMO user
//! selection for 802.11ax uplink under unsaturated traffic.
//!
//! The crate contains the link and traffic model ([`channel`], [`phy`],
//! [`traffic`]), the RU plan ([`ru_plan`]), a hierarchical deep Q-learning
//! scheduler ([`agents`] over [`nn`]), comparison schedulers
//! ([`baselines`]), an exhaustive per-step solver ([`oracle`]) and the
//! experiment runner ([`sim`]).

pub mod agents;
pub mod baselines;
pub mod channel;
pub mod error;
pub mod linalg;
pub mod nn;
pub mod oracle;
pub mod phy;
pub mod rng;
pub mod ru_plan;
pub mod sim;
pub mod traffic;
pub mod world;

pub use error::{Error, Result};
