//! Conditional adversarial synthesis of printed-and-captured CDPs.
//!
//! A U-Net generator maps a template to its expected capture appearance and
//! a PatchGAN discriminator scores (template, image) pairs patch by patch.

mod losses;
mod network;
mod train;

pub use losses::{
    discriminator_loss, generator_loss, ssim_graph, GeneratorLoss, LossWeights, PROB_EPS,
};
pub use network::{template_input, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
pub use train::{
    load_history, save_history, synthesize_all, train, train_l1, EpochLoss, TrainConfig,
    TrainOutcome, TrainingPair,
};
