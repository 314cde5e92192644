//! Declarative run configuration, one section per stage.

use serde::{Deserialize, Serialize};

use crate::clf::ClassifierHyper;
use crate::embed::EmbedParams;
use crate::enm::EnmParams;
use crate::error::Result;
use crate::harness::{ExperimentConfig, PipelineParams};
use crate::senm::SignParams;
use crate::syngen::GeneratorParams;

/// Every tunable value. Missing keys take their defaults, so a config file
/// only needs the values it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed for the unsupervised stages.
    pub seed: u64,
    /// Worker threads; all cores when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub syngen: GeneratorParams,
    pub enm: EnmParams,
    pub sign: SignParams,
    pub embed: EmbedParams,
    pub classifier: ClassifierHyper,
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            threads: None,
            syngen: GeneratorParams::default(),
            enm: EnmParams::default(),
            sign: SignParams::default(),
            embed: EmbedParams::default(),
            classifier: ClassifierHyper::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn pipeline(&self) -> PipelineParams {
        PipelineParams {
            enm: self.enm.clone(),
            sign: self.sign.clone(),
            embed: self.embed.clone(),
            classifier: self.classifier.clone(),
            seed: self.seed,
        }
    }

    /// Checks every section that has invariants of its own.
    pub fn validate(&self) -> Result<()> {
        self.syngen.validate()?;
        self.embed.walk.validate()?;
        self.embed.skipgram.validate()?;
        self.classifier.validate()?;
        self.experiment.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip_through_json() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let text = serde_json::to_string(&c).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.classifier.batch_size, 128);
        assert_eq!(c.experiment.seeds, vec![24, 524, 1024, 1524, 2024]);
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"classifier": {"epochs": 7}}"#).unwrap();
        assert_eq!(c.classifier.epochs, 7);
        assert_eq!(c.classifier.dropout, 0.2);
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus": 1}"#).is_err());
    }
}
