//! In-memory datasets: the synthetic Gaussian-mixture task, synthetic OOD
//! generators, and an image-folder adapter.

use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::ClassProfile;
use crate::error::{Error, Result};
use crate::rng;

/// Channel-major layout of one flattened sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl SampleShape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Both spatial extents exceed one pixel.
    pub fn is_spatial(&self) -> bool {
        self.height > 1 && self.width > 1
    }
}

/// Row-per-sample inputs with integer labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
    pub shape: SampleShape,
    pub num_classes: usize,
}

/// A selection of rows from a [`Dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
    /// Row indices into the source dataset.
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn one_hot(&self, num_classes: usize) -> Array2<f64> {
        one_hot(&self.labels, num_classes)
    }
}

pub fn one_hot(labels: &[usize], num_classes: usize) -> Array2<f64> {
    let mut t = Array2::zeros((labels.len(), num_classes));
    for (i, &y) in labels.iter().enumerate() {
        t[[i, y]] = 1.0;
    }
    t
}

impl Dataset {
    pub fn new(
        inputs: Array2<f64>,
        labels: Vec<usize>,
        shape: SampleShape,
        num_classes: usize,
    ) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return Err(Error::shape("inputs and labels differ in length"));
        }
        if inputs.ncols() != shape.len() {
            return Err(Error::shape(format!(
                "rows have {} values, shape implies {}",
                inputs.ncols(),
                shape.len()
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::invalid(format!("label {y} >= num_classes {num_classes}")));
        }
        Ok(Self {
            inputs,
            labels,
            shape,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        Batch {
            inputs: self.inputs.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            indices: indices.to_vec(),
        }
    }

    /// Per-class counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    pub fn profile(&self) -> Result<ClassProfile> {
        ClassProfile::from_counts(self.class_counts())
    }
}

/// C-class isotropic Gaussian mixture with class means on a sphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub num_classes: usize,
    pub shape: SampleShape,
    /// Norm of every class mean.
    pub radius: f64,
    /// Per-coordinate standard deviation.
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticTask {
    /// Means for `num_classes + extra` directions; the extra ones are held
    /// out for OOD sampling.
    fn directions(&self, count: usize) -> Array2<f64> {
        let dim = self.shape.len();
        let mut r = rng::stream(self.seed, &[rng::TAG_DATA]);
        let mut means = Array2::zeros((count, dim));
        for mut row in means.outer_iter_mut() {
            row.mapv_inplace(|_| -> f64 { StandardNormal.sample(&mut r) });
            let norm = row.dot(&row).sqrt();
            row.mapv_inplace(|v| v / norm * self.radius);
        }
        means
    }

    pub fn class_means(&self) -> Array2<f64> {
        self.directions(self.num_classes)
    }

    fn draw(&self, mean: ndarray::ArrayView1<'_, f64>, rng: &mut impl Rng) -> Vec<f64> {
        mean.iter()
            .map(|&m| {
                let z: f64 = StandardNormal.sample(rng);
                m + self.noise * z
            })
            .collect()
    }

    /// Samples `counts[c]` points of class `c`, laid out contiguously by class.
    pub fn sample(&self, counts: &[usize], seed: u64) -> Result<Dataset> {
        if counts.len() != self.num_classes {
            return Err(Error::shape("counts length differs from num_classes"));
        }
        let means = self.class_means();
        let mut r = rng::stream(seed, &[rng::TAG_DATA]);
        let total: usize = counts.iter().sum();
        let mut inputs = Array2::zeros((total, self.shape.len()));
        let mut labels = Vec::with_capacity(total);
        let mut row = 0;
        for (c, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                let x = self.draw(means.row(c), &mut r);
                inputs.row_mut(row).assign(&ndarray::ArrayView1::from(&x));
                labels.push(c);
                row += 1;
            }
        }
        Dataset::new(inputs, labels, self.shape, self.num_classes)
    }

    pub fn sample_longtail(&self, profile: &ClassProfile, seed: u64) -> Result<Dataset> {
        self.sample(profile.counts(), seed)
    }

    pub fn sample_balanced(&self, per_class: usize, seed: u64) -> Result<Dataset> {
        self.sample(&vec![per_class; self.num_classes], seed)
    }

    /// OOD inputs from `source`, one row per sample.
    pub fn sample_ood(&self, source: &SyntheticOod, count: usize, seed: u64) -> Array2<f64> {
        let dim = self.shape.len();
        let mut r = rng::stream(seed, &[rng::TAG_OOD]);
        let mut out = Array2::zeros((count, dim));
        match *source {
            SyntheticOod::HeldOut { classes } => {
                let all = self.directions(self.num_classes + classes.max(1));
                for i in 0..count {
                    let k = self.num_classes + r.random_range(0..classes.max(1));
                    let x = self.draw(all.row(k), &mut r);
                    out.row_mut(i).assign(&ndarray::ArrayView1::from(&x));
                }
            }
            SyntheticOod::Blob { scale } => {
                for mut row in out.outer_iter_mut() {
                    row.mapv_inplace(|_| {
                        let z: f64 = StandardNormal.sample(&mut r);
                        z * scale
                    });
                }
            }
            SyntheticOod::Uniform { half_width } => {
                for v in out.iter_mut() {
                    *v = r.random_range(-half_width..=half_width);
                }
            }
        }
        out
    }
}

/// Synthetic outlier generators for the Gaussian-mixture task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticOod {
    /// Mixture components never seen in training, same radius and noise.
    HeldOut { classes: usize },
    /// Isotropic Gaussian at the origin with the given per-coordinate scale.
    Blob { scale: f64 },
    /// Uniform noise in `[-half_width, half_width]^d`.
    Uniform { half_width: f64 },
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            files.extend(image_files(&path)?);
        } else if matches!(
            path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
            Some("png")
        ) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn load_image(path: &Path, expected: Option<SampleShape>) -> Result<(Vec<f64>, SampleShape)> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let shape = SampleShape::new(3, h as usize, w as usize);
    if let Some(e) = expected {
        if e != shape {
            return Err(Error::shape(format!(
                "{}: {}x{} image, expected {}x{}",
                path.display(),
                h,
                w,
                e.height,
                e.width
            )));
        }
    }
    let plane = shape.height * shape.width;
    let mut data = vec![0.0; shape.len()];
    for (x, y, px) in img.enumerate_pixels() {
        let k = y as usize * shape.width + x as usize;
        for c in 0..3 {
            data[c * plane + k] = px[c] as f64 / 255.0;
        }
    }
    Ok((data, shape))
}

/// Reads `root/<class>/*.png`; classes are the sorted subdirectory names.
pub fn load_image_folder(root: &Path) -> Result<(Dataset, Vec<String>)> {
    let mut classes: Vec<String> = std::fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    classes.sort();
    if classes.len() < 2 {
        return Err(Error::invalid(format!(
            "{}: need at least two class directories",
            root.display()
        )));
    }
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut shape = None;
    for (c, name) in classes.iter().enumerate() {
        for file in image_files(&root.join(name))? {
            let (data, s) = load_image(&file, shape)?;
            shape = Some(s);
            rows.extend(data);
            labels.push(c);
        }
    }
    let shape = shape.ok_or_else(|| Error::Empty(format!("{}: no png images", root.display())))?;
    let inputs = Array2::from_shape_vec((labels.len(), shape.len()), rows)
        .map_err(|e| Error::shape(e.to_string()))?;
    Ok((Dataset::new(inputs, labels, shape, classes.len())?, classes))
}

/// Reads every png below `root` as unlabelled OOD inputs.
pub fn load_unlabelled_images(root: &Path, shape: SampleShape) -> Result<Array2<f64>> {
    let files = image_files(root)?;
    if files.is_empty() {
        return Err(Error::Empty(format!("{}: no png images", root.display())));
    }
    let mut rows = Vec::with_capacity(files.len() * shape.len());
    for file in &files {
        rows.extend(load_image(file, Some(shape))?.0);
    }
    Array2::from_shape_vec((files.len(), shape.len()), rows).map_err(|e| Error::shape(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task() -> SyntheticTask {
        SyntheticTask {
            num_classes: 3,
            shape: SampleShape::new(1, 2, 4),
            radius: 3.0,
            noise: 0.5,
            seed: 11,
        }
    }

    #[test]
    fn synthetic_layout_and_determinism() {
        let t = task();
        let d = t.sample(&[5, 3, 1], 4).unwrap();
        assert_eq!(d.labels, vec![0, 0, 0, 0, 0, 1, 1, 1, 2]);
        assert_eq!(d.inputs.dim(), (9, 8));
        assert_eq!(d, t.sample(&[5, 3, 1], 4).unwrap());
        assert_ne!(d, t.sample(&[5, 3, 1], 5).unwrap());
        let means = t.class_means();
        for row in means.outer_iter() {
            assert!((row.dot(&row).sqrt() - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn held_out_directions_are_new() {
        let t = task();
        let ood = t.sample_ood(&SyntheticOod::HeldOut { classes: 2 }, 50, 1);
        assert_eq!(ood.dim(), (50, 8));
        assert!(ood.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn dataset_validation() {
        let shape = SampleShape::new(1, 1, 2);
        assert!(Dataset::new(Array2::zeros((2, 2)), vec![0], shape, 2).is_err());
        assert!(Dataset::new(Array2::zeros((1, 3)), vec![0], shape, 2).is_err());
        assert!(Dataset::new(Array2::zeros((1, 2)), vec![2], shape, 2).is_err());
    }

    #[test]
    fn image_folder_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for (class, value) in [("cat", 10u8), ("dog", 200u8)] {
            let sub = dir.path().join(class);
            std::fs::create_dir(&sub).unwrap();
            for k in 0..2 {
                let img = image::RgbImage::from_pixel(4, 3, image::Rgb([value, 0, 255]));
                img.save(sub.join(format!("{k}.png"))).unwrap();
            }
        }
        let (d, classes) = load_image_folder(dir.path()).unwrap();
        assert_eq!(classes, vec!["cat", "dog"]);
        assert_eq!(d.shape, SampleShape::new(3, 3, 4));
        assert_eq!(d.labels, vec![0, 0, 1, 1]);
        assert!((d.inputs[[0, 0]] - 10.0 / 255.0).abs() < 1e-12);
        assert_eq!(d.inputs[[3, 12]], 0.0);
        assert_eq!(d.inputs[[3, 24]], 1.0);
        let ood = load_unlabelled_images(dir.path(), d.shape).unwrap();
        assert_eq!(ood.nrows(), 4);
    }
}
