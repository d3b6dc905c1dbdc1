//! Mixup and CutMix with two-hot soft labels.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SampleShape;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixMethod {
    Mixup,
    Cutmix,
}

/// A mixture of two source samples.
///
/// `lam` is the label mass on the first source; for CutMix it is recomputed
/// from the pasted area so the label always matches the pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedSample {
    pub input: Vec<f64>,
    pub soft_label: Vec<f64>,
    pub lam: f64,
    pub src_i: usize,
    pub src_j: usize,
    pub label_i: usize,
    pub label_j: usize,
    pub method: MixMethod,
}

/// Source sample view: flattened input and its label.
#[derive(Debug, Clone, Copy)]
pub struct Source<'a> {
    pub input: &'a [f64],
    pub label: usize,
    pub index: usize,
}

/// Axis-aligned rectangle `[y0, y1) x [x0, x1)` on the spatial grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchRegion {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
}

impl PatchRegion {
    pub fn area(&self) -> usize {
        (self.y1 - self.y0) * (self.x1 - self.x0)
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.y0..self.y1).contains(&y) && (self.x0..self.x1).contains(&x)
    }

    /// Patch of side fractions `sqrt(1 - lam)` centred at `(cy, cx)`, clipped
    /// to the `height x width` grid.
    pub fn centred(lam_target: f64, cy: usize, cx: usize, height: usize, width: usize) -> Self {
        let ratio = (1.0 - lam_target).max(0.0).sqrt();
        let cut_h = (height as f64 * ratio) as usize;
        let cut_w = (width as f64 * ratio) as usize;
        let clip = |c: usize, half: usize, hi: usize, low: bool| -> usize {
            let v = if low {
                c as isize - half as isize
            } else {
                c as isize + half as isize
            };
            v.clamp(0, hi as isize) as usize
        };
        Self {
            y0: clip(cy, cut_h / 2, height, true),
            y1: clip(cy, cut_h - cut_h / 2, height, false),
            x0: clip(cx, cut_w / 2, width, true),
            x1: clip(cx, cut_w - cut_w / 2, width, false),
        }
    }
}

pub fn two_hot(num_classes: usize, label_i: usize, label_j: usize, lam: f64) -> Vec<f64> {
    let mut y = vec![0.0; num_classes];
    y[label_i] += lam;
    y[label_j] += 1.0 - lam;
    y
}

fn check_pair(a: &Source<'_>, b: &Source<'_>, num_classes: usize) -> Result<()> {
    if a.input.len() != b.input.len() {
        return Err(Error::shape(format!(
            "mixing inputs of length {} and {}",
            a.input.len(),
            b.input.len()
        )));
    }
    if a.label >= num_classes || b.label >= num_classes {
        return Err(Error::invalid("source label out of range"));
    }
    Ok(())
}

fn check_lam(lam: f64) -> Result<()> {
    if (0.0..=1.0).contains(&lam) {
        Ok(())
    } else {
        Err(Error::invalid(format!("mix coefficient {lam} outside [0, 1]")))
    }
}

/// `lam * x_i + (1 - lam) * x_j` with the matching two-hot label.
pub fn mixup(a: Source<'_>, b: Source<'_>, lam: f64, num_classes: usize) -> Result<MixedSample> {
    check_lam(lam)?;
    check_pair(&a, &b, num_classes)?;
    let input = a
        .input
        .iter()
        .zip(b.input)
        .map(|(&xi, &xj)| lam * xi + (1.0 - lam) * xj)
        .collect();
    Ok(MixedSample {
        input,
        soft_label: two_hot(num_classes, a.label, b.label, lam),
        lam,
        src_i: a.index,
        src_j: b.index,
        label_i: a.label,
        label_j: b.label,
        method: MixMethod::Mixup,
    })
}

/// Pastes `region` of `b` into `a` across all channels.
pub fn cutmix_region(
    a: Source<'_>,
    b: Source<'_>,
    shape: SampleShape,
    region: PatchRegion,
    num_classes: usize,
) -> Result<MixedSample> {
    check_pair(&a, &b, num_classes)?;
    if !shape.is_spatial() {
        return Err(Error::invalid(format!(
            "cutmix needs a spatial input, got {}x{}x{}",
            shape.channels, shape.height, shape.width
        )));
    }
    if a.input.len() != shape.len() {
        return Err(Error::shape("input length does not match sample shape"));
    }
    if region.y1 > shape.height || region.x1 > shape.width || region.y0 > region.y1 || region.x0 > region.x1 {
        return Err(Error::invalid("patch region outside the image"));
    }
    let mut input = a.input.to_vec();
    let plane = shape.height * shape.width;
    for c in 0..shape.channels {
        for y in region.y0..region.y1 {
            for x in region.x0..region.x1 {
                let k = c * plane + y * shape.width + x;
                input[k] = b.input[k];
            }
        }
    }
    let lam = 1.0 - region.area() as f64 / plane as f64;
    Ok(MixedSample {
        input,
        soft_label: two_hot(num_classes, a.label, b.label, lam),
        lam,
        src_i: a.index,
        src_j: b.index,
        label_i: a.label,
        label_j: b.label,
        method: MixMethod::Cutmix,
    })
}

/// CutMix with a patch of area fraction about `1 - lam_target` at a uniform
/// random centre; the stored `lam` reflects the clipped area.
pub fn cutmix<R: Rng + ?Sized>(
    a: Source<'_>,
    b: Source<'_>,
    shape: SampleShape,
    lam_target: f64,
    num_classes: usize,
    rng: &mut R,
) -> Result<MixedSample> {
    check_lam(lam_target)?;
    if !shape.is_spatial() {
        return Err(Error::invalid("cutmix needs a spatial input"));
    }
    let cy = rng.random_range(0..shape.height);
    let cx = rng.random_range(0..shape.width);
    let region = PatchRegion::centred(lam_target, cy, cx, shape.height, shape.width);
    cutmix_region(a, b, shape, region, num_classes)
}
