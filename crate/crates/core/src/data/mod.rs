//! Long-tailed datasets, anti-long-tailed resampling and mixed batches.

mod batch;
mod dataset;
mod mix;
mod profile;
mod sampler;

pub use batch::{build_training_batch, pair_group_frequencies, shuffled, TrainBatch};
pub use dataset::{
    load_image_folder, load_unlabelled_images, one_hot, Batch, Dataset, SampleShape,
    SyntheticOod, SyntheticTask,
};
pub use mix::{cutmix, cutmix_region, mixup, two_hot, MixMethod, MixedSample, PatchRegion, Source};
pub use profile::{compute_prior, make_longtail_profile, ClassProfile};
pub use sampler::AntiLongTailSampler;
