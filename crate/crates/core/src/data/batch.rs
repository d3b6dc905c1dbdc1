use ndarray::Array2;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use super::mix::{cutmix, mixup, MixMethod, MixedSample, Source};
use super::{Batch, SampleShape};
use crate::error::{Error, Result};
use crate::rng;

/// One training step's data: the long-tailed batch, its anti-long-tailed
/// partner batch, and a Mixup plus a CutMix sample for every position pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainBatch {
    pub shape: SampleShape,
    pub num_classes: usize,
    pub id: Batch,
    pub anti: Batch,
    pub mixed_mixup: Vec<MixedSample>,
    pub mixed_cutmix: Vec<MixedSample>,
    /// `(position in id, position in anti)` for every mixed pair.
    pub pairing: Vec<(usize, usize)>,
}

impl TrainBatch {
    pub fn mixed(&self, method: MixMethod) -> &[MixedSample] {
        match method {
            MixMethod::Mixup => &self.mixed_mixup,
            MixMethod::Cutmix => &self.mixed_cutmix,
        }
    }

    pub fn mixed_inputs(&self, method: MixMethod) -> Array2<f64> {
        let rows = self.mixed(method);
        let mut out = Array2::zeros((rows.len(), self.shape.len()));
        for (i, m) in rows.iter().enumerate() {
            out.row_mut(i).assign(&ndarray::ArrayView1::from(&m.input));
        }
        out
    }

    pub fn mixed_targets(&self, method: MixMethod) -> Array2<f64> {
        let rows = self.mixed(method);
        let mut out = Array2::zeros((rows.len(), self.num_classes));
        for (i, m) in rows.iter().enumerate() {
            out.row_mut(i).assign(&ndarray::ArrayView1::from(&m.soft_label));
        }
        out
    }

    pub fn num_pairs(&self) -> usize {
        self.pairing.len()
    }
}

/// Pairs position `p` of `id` with position `p` of `anti`, draws one
/// `lam ~ Beta(alpha, alpha)` per pair and emits a Mixup and a CutMix sample
/// sharing that pair and that drawn coefficient.
pub fn build_training_batch(
    id: Batch,
    anti: Batch,
    shape: SampleShape,
    num_classes: usize,
    alpha: f64,
    seed: u64,
) -> Result<TrainBatch> {
    if id.len() != anti.len() {
        return Err(Error::shape(format!(
            "id batch has {} samples, anti batch {}",
            id.len(),
            anti.len()
        )));
    }
    if !(alpha > 0.0) {
        return Err(Error::invalid("alpha must be positive"));
    }
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::invalid(e.to_string()))?;
    let mut r = rng::stream(seed, &[rng::TAG_MIX]);
    let mut mixed_mixup = Vec::with_capacity(id.len());
    let mut mixed_cutmix = Vec::with_capacity(id.len());
    let mut pairing = Vec::with_capacity(id.len());
    for p in 0..id.len() {
        let lam: f64 = beta.sample(&mut r).clamp(0.0, 1.0);
        let a = Source {
            input: id.inputs.row(p).to_slice().expect("standard layout"),
            label: id.labels[p],
            index: p,
        };
        let b = Source {
            input: anti.inputs.row(p).to_slice().expect("standard layout"),
            label: anti.labels[p],
            index: p,
        };
        mixed_mixup.push(mixup(a, b, lam, num_classes)?);
        mixed_cutmix.push(cutmix(a, b, shape, lam, num_classes, &mut r)?);
        pairing.push((p, p));
    }
    Ok(TrainBatch {
        shape,
        num_classes,
        id,
        anti,
        mixed_mixup,
        mixed_cutmix,
        pairing,
    })
}

/// Fraction of `(id, anti)` label pairs falling in each (group, group) cell,
/// where `group_of` maps a class to head (0), medium (1) or tail (2).
pub fn pair_group_frequencies(
    pairs: impl IntoIterator<Item = (usize, usize)>,
    group_of: impl Fn(usize) -> usize,
) -> [[f64; 3]; 3] {
    let mut counts = [[0usize; 3]; 3];
    let mut total = 0usize;
    for (a, b) in pairs {
        counts[group_of(a)][group_of(b)] += 1;
        total += 1;
    }
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = counts[i][j] as f64 / total.max(1) as f64;
        }
    }
    out
}

/// Random without-replacement order of `0..n`.
pub fn shuffled(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_longtail_profile, AntiLongTailSampler, Dataset, SyntheticTask};

    fn small_dataset() -> Dataset {
        SyntheticTask {
            num_classes: 3,
            shape: SampleShape::new(1, 4, 4),
            radius: 2.0,
            noise: 0.3,
            seed: 3,
        }
        .sample(&[6, 3, 2], 0)
        .unwrap()
    }

    #[test]
    fn positional_pairing_and_counts() {
        let d = small_dataset();
        let b = build_training_batch(
            d.batch(&[0, 1, 2, 3]),
            d.batch(&[10, 9, 8, 7]),
            d.shape,
            3,
            1.0,
            5,
        )
        .unwrap();
        assert_eq!(b.mixed_mixup.len(), 4);
        assert_eq!(b.mixed_cutmix.len(), 4);
        assert_eq!(b.pairing, vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
        for (m, c) in b.mixed_mixup.iter().zip(&b.mixed_cutmix) {
            assert_eq!((m.src_i, m.src_j), (c.src_i, c.src_j));
        }
    }

    #[test]
    fn concentrated_beta_gives_half() {
        let d = small_dataset();
        let b = build_training_batch(d.batch(&[0, 1, 2]), d.batch(&[5, 6, 10]), d.shape, 3, 1e6, 1)
            .unwrap();
        for m in &b.mixed_mixup {
            assert!((m.lam - 0.5).abs() < 0.01, "lam = {}", m.lam);
        }
    }

    #[test]
    fn deterministic_batches() {
        let d = small_dataset();
        let make = || {
            build_training_batch(d.batch(&[0, 4, 7]), d.batch(&[9, 10, 1]), d.shape, 3, 1.0, 77)
                .unwrap()
        };
        let a = serde_json::to_vec(&make()).unwrap();
        let b = serde_json::to_vec(&make()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn length_mismatch_rejected() {
        let d = small_dataset();
        assert!(build_training_batch(d.batch(&[0, 1]), d.batch(&[2]), d.shape, 3, 1.0, 0).is_err());
    }

    #[test]
    fn head_tail_pairs_dominate_head_head() {
        let profile = make_longtail_profile(10, 5000, 100.0).unwrap();
        let group = |c: usize| (3 * c) / 10;
        let mut sampler = AntiLongTailSampler::new(&profile, 1);
        let labels: Vec<usize> = profile
            .counts()
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
            .collect();
        let mut order_rng = rng::stream(2, &[rng::TAG_ORDER]);
        let order = shuffled(labels.len(), &mut order_rng);
        let pairs = order
            .iter()
            .take(20_000)
            .map(|&i| (labels[i], labels[sampler.next_index()]));
        let freq = pair_group_frequencies(pairs, group);
        assert!(freq[0][2] > freq[0][0], "{freq:?}");
    }
}
