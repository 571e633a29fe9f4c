//! Command-line harness for `mace-core`: experiment specs, the external
//! evaluator protocol, and repeated-seed campaigns with CSV/JSON output.

pub mod campaign;
pub mod config;
pub mod external;

pub use campaign::{run_campaign, Campaign, CampaignSummary};
pub use config::{Algorithm, ExperimentSpec};
pub use external::ExternalEvaluator;
