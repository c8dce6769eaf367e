//! Critics, the similarity matrix, the multi-modality InfoNCE loss and the
//! quarter-turn routing that makes the learnt representations equivariant.

mod critic;
mod infonce;
mod routing;

pub use critic::{critic_eval, CriticKind, CriticSpec, LatentShape, Reduction, COSINE_EPS};
pub use infonce::{
    infonce_loss, infonce_loss_and_grad, similarity_matrix, Group, LatentBatch, LossConfig, LossGrad,
    SimilarityMatrix,
};
pub use routing::{equivariant_latent, training_loss, ActivationDecay, BatchEncoder, StepLoss};
