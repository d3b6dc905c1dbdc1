use ndarray::Array2;

use super::config::{DataConfig, RunConfig};
use crate::data::{
    load_image_folder, load_unlabelled_images, make_longtail_profile, ClassProfile, Dataset,
    SyntheticTask,
};
use crate::error::{Error, Result};
use crate::rng;

/// A named set of OOD inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct OodInputs {
    pub name: String,
    pub inputs: Array2<f64>,
}

/// Every split a run needs, materialized.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub profile: ClassProfile,
    pub val_ood: Option<Array2<f64>>,
    pub ood: Vec<OodInputs>,
    pub class_names: Vec<String>,
}

/// The synthetic task a config describes, if any.
pub fn synthetic_task(cfg: &RunConfig) -> Option<SyntheticTask> {
    match &cfg.data {
        DataConfig::Synthetic(s) => Some(SyntheticTask {
            num_classes: s.num_classes,
            shape: s.shape,
            radius: s.radius,
            noise: s.noise,
            seed: cfg.seed,
        }),
        DataConfig::ImageFolder(_) => None,
    }
}

/// Builds or loads the train, validation and test splits plus OOD sets.
/// Synthetic splits are drawn from independent substreams of the run seed.
pub fn prepare_data(cfg: &RunConfig) -> Result<PreparedData> {
    match &cfg.data {
        DataConfig::Synthetic(s) => {
            let task = synthetic_task(cfg).expect("synthetic");
            let profile = make_longtail_profile(s.num_classes, s.n_max, s.imbalance_ratio)?;
            let seed = |i: u64| rng::derive_seed(cfg.seed, &[rng::TAG_DATA, i]);
            let ood_seed = |i: u64| rng::derive_seed(cfg.seed, &[rng::TAG_OOD, i]);
            let train = task.sample_longtail(&profile, seed(0))?;
            let val = task.sample_balanced(s.val_per_class, seed(1))?;
            let test = task.sample_balanced(s.test_per_class, seed(2))?;
            let val_ood = task.sample_ood(&s.val_ood, s.ood_count, ood_seed(0));
            let ood = s
                .ood
                .iter()
                .enumerate()
                .map(|(i, o)| OodInputs {
                    name: o.name.clone(),
                    inputs: task.sample_ood(&o.source, s.ood_count, ood_seed(1 + i as u64)),
                })
                .collect();
            Ok(PreparedData {
                train,
                val,
                test,
                profile,
                val_ood: Some(val_ood),
                ood,
                class_names: (0..s.num_classes).map(|c| format!("class{c}")).collect(),
            })
        }
        DataConfig::ImageFolder(f) => {
            let (train, names) = load_image_folder(&f.train_dir)?;
            let (test, test_names) = load_image_folder(&f.test_dir)?;
            if names != test_names {
                return Err(Error::invalid(format!(
                    "class folders differ between {} and {}",
                    f.train_dir.display(),
                    f.test_dir.display()
                )));
            }
            if test.shape != train.shape {
                return Err(Error::shape("train and test images differ in size"));
            }
            let profile = train.profile()?;
            let mut ood = Vec::with_capacity(f.ood_dirs.len());
            for dir in &f.ood_dirs {
                let name = dir
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_else(|| dir.display().to_string());
                ood.push(OodInputs {
                    name,
                    inputs: load_unlabelled_images(dir, train.shape)?,
                });
            }
            Ok(PreparedData {
                val: test.clone(),
                train,
                test,
                profile,
                val_ood: ood.first().map(|o| o.inputs.clone()),
                ood,
                class_names: names,
            })
        }
    }
}
