use serde::{Deserialize, Serialize};

use crate::eval::AltSimilarity;
use crate::nn::SgdConfig;
use crate::scenario::AugmentParams;
use crate::urf::UrfParams;
use crate::{Error, Result};

/// How the step-III similarity matrix is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMethod {
    /// Path-index agreement in a per-epoch unsupervised forest.
    Rfap,
    /// Shared-terminal fraction in the same forest.
    Breiman,
    Cosine,
    L2,
    Knn,
    Rank,
}

impl SimilarityMethod {
    pub const ALL: [SimilarityMethod; 6] = [
        SimilarityMethod::Rfap,
        SimilarityMethod::Breiman,
        SimilarityMethod::Cosine,
        SimilarityMethod::L2,
        SimilarityMethod::Knn,
        SimilarityMethod::Rank,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SimilarityMethod::Rfap => "rfap",
            SimilarityMethod::Breiman => "breiman",
            SimilarityMethod::Cosine => "cosine",
            SimilarityMethod::L2 => "l2",
            SimilarityMethod::Knn => "knn",
            SimilarityMethod::Rank => "rank",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn uses_forest(self) -> bool {
        matches!(self, SimilarityMethod::Rfap | SimilarityMethod::Breiman)
    }
}

/// Post-processing of the per-batch similarity matrix before it becomes the
/// pairwise target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Calibration {
    /// Use similarities as soft targets unchanged.
    Raw,
    /// Off-diagonal pairs ranked in the top `1/Q` of the batch become 1, the
    /// rest 0. Ties at the cut-off count as similar.
    TopFraction,
}

/// Number of clusters for step III.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QChoice {
    Fixed(usize),
    /// Silhouette search over `[min, max]` on step-II features.
    Estimate {
        min: usize,
        max: usize,
    },
}

/// Switches for the three terms of the step-III objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossToggles {
    pub categorical: bool,
    pub cluster: bool,
    pub consistency: bool,
}

impl Default for LossToggles {
    fn default() -> Self {
        LossToggles {
            categorical: true,
            cluster: true,
            consistency: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Feature dimension F.
    pub features: usize,
    pub pretrain: SgdConfig,
    pub finetune: SgdConfig,
    pub cluster: SgdConfig,
    /// Ramp-up length T in epochs.
    pub ramp_length: f64,
    /// Ramp-up ceiling lambda.
    pub ramp_lambda: f64,
    pub q: QChoice,
    /// Share of each step-III batch taken from labelled data.
    pub labeled_fraction: f64,
    pub urf: UrfParams,
    pub augment: AugmentParams,
    pub similarity: SimilarityMethod,
    pub calibration: Calibration,
    /// k for the kNN and rank similarities.
    pub knn_k: usize,
    pub rank_k: usize,
    pub losses: LossToggles,
    /// Run step I; without it the backbone starts from random weights and
    /// step II trains every layer.
    pub use_ssl: bool,
    /// Run step II and keep the categorical loss in step III.
    pub use_labeled: bool,
    /// Backbone layers frozen after step I.
    pub freeze_prefix: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let sgd = |epochs, seed| SgdConfig {
            epochs,
            seed,
            ..SgdConfig::default()
        };
        PipelineConfig {
            seed: 0,
            features: 64,
            pretrain: sgd(30, 1),
            finetune: sgd(20, 2),
            cluster: SgdConfig {
                learning_rate: 0.01,
                ..sgd(50, 3)
            },
            ramp_length: 50.0,
            ramp_lambda: 5.0,
            q: QChoice::Fixed(3),
            labeled_fraction: 0.5,
            urf: UrfParams::default(),
            augment: AugmentParams {
                erase_patch_fraction: 0.1,
                noise_sigma: 0.05,
                seed: 0,
            },
            similarity: SimilarityMethod::Rfap,
            calibration: Calibration::TopFraction,
            knn_k: 10,
            rank_k: 5,
            losses: LossToggles::default(),
            use_ssl: true,
            use_labeled: true,
            freeze_prefix: 3,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        for s in [&self.pretrain, &self.finetune, &self.cluster] {
            s.validate()?;
        }
        if self.features == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        if !(self.ramp_length > 0.0) {
            return Err(Error::Config(format!(
                "ramp length T must be positive, got {}",
                self.ramp_length
            )));
        }
        if !(self.ramp_lambda > 0.0) {
            return Err(Error::Config(format!(
                "ramp ceiling lambda must be positive, got {}",
                self.ramp_lambda
            )));
        }
        match self.q {
            QChoice::Fixed(q) if q < 2 => {
                return Err(Error::Config(format!("Q must be at least 2, got {q}")))
            }
            QChoice::Estimate { min, max } if min < 2 || min > max => {
                return Err(Error::Config(format!(
                    "Q search range [{min}, {max}] is invalid"
                )))
            }
            _ => {}
        }
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction < 1.0) {
            return Err(Error::Config(format!(
                "labelled batch fraction must lie in (0, 1), got {}",
                self.labeled_fraction
            )));
        }
        self.urf.validate()?;
        Ok(())
    }

    pub(crate) fn alt_similarity(&self) -> Option<AltSimilarity> {
        match self.similarity {
            SimilarityMethod::Cosine => Some(AltSimilarity::Cosine),
            SimilarityMethod::L2 => Some(AltSimilarity::L2),
            SimilarityMethod::Knn => Some(AltSimilarity::Knn { k: self.knn_k }),
            SimilarityMethod::Rank => Some(AltSimilarity::Rank { k: self.rank_k }),
            SimilarityMethod::Rfap | SimilarityMethod::Breiman => None,
        }
    }
}
