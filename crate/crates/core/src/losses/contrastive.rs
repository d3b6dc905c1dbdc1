//! Boundary-center contrastive terms: the virtual-boundary distance pushing
//! source features away from their mixture, the dual-entropy weighted
//! center distance pulling features to their class center, and the bounded
//! combination of the two.

use std::sync::atomic::{AtomicBool, Ordering};

use ndarray::Array2;

use super::config::LossConfig;
use crate::autograd::{Graph, Var};
use crate::error::{ensure_finite, Error, Result};

/// Exponent cap for the boundary-center combination.
pub const EXP_CLAMP: f64 = 80.0;

static CLAMP_WARNED: AtomicBool = AtomicBool::new(false);

fn squared_distances(g: &mut Graph, a: Var, b: Var) -> Var {
    let d = g.sub(a, b);
    let sq = g.square(d);
    g.sum_rows(sq)
}

/// `mean_p (|z_i - z_mix|^2 + |z_j - z_mix|^2)` over aligned rows.
pub fn vbl_distance(g: &mut Graph, z_i: Var, z_j: Var, z_mix: Var) -> Result<Var> {
    let (si, sj, sm) = (g.shape(z_i), g.shape(z_j), g.shape(z_mix));
    if si != sm || sj != sm {
        return Err(Error::shape(format!(
            "source features {si:?}/{sj:?} do not cover mixed features {sm:?}"
        )));
    }
    if sm.0 == 0 {
        return Err(Error::Empty("mixed features".into()));
    }
    let a = squared_distances(g, z_i, z_mix);
    let b = squared_distances(g, z_j, z_mix);
    let s = g.add(a, b);
    Ok(g.mean(s))
}

/// `-sum_c (p_c + t_c) log(max(p_c, floor))` per row, `B x 1`.
pub fn dual_entropy(g: &mut Graph, probs: Var, targets: &Array2<f64>, floor: f64) -> Var {
    let t = g.constant(targets.clone());
    let mass = g.add(probs, t);
    let clamped = g.clamp_min(probs, floor);
    let logp = g.ln(clamped);
    let prod = g.mul(mass, logp);
    let s = g.sum_rows(prod);
    g.neg(s)
}

/// One center-distance entry: feature row, class whose center it is pulled
/// to, and a multiplier (1 for ID samples, the mixing share for mixed ones).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterEntry {
    pub row: usize,
    pub class: usize,
    pub share: f64,
}

/// `(1/2) * (1/n) * sum_entries share * w_row * |z_row - c_class|^2`, where
/// `n` is the number of distinct samples.
pub fn dec_distance(
    g: &mut Graph,
    features: Var,
    weights: Var,
    entries: &[CenterEntry],
    centers: &Array2<f64>,
    num_samples: usize,
) -> Result<Var> {
    if entries.is_empty() || num_samples == 0 {
        return Err(Error::Empty("center entries".into()));
    }
    let (b, d) = g.shape(features);
    if g.shape(weights) != (b, 1) {
        return Err(Error::shape("dual-entropy weights must be B x 1"));
    }
    if centers.ncols() != d {
        return Err(Error::shape(format!(
            "centers have dim {}, features {d}",
            centers.ncols()
        )));
    }
    let rows: Vec<usize> = entries.iter().map(|e| e.row).collect();
    if rows.iter().any(|&r| r >= b) || entries.iter().any(|e| e.class >= centers.nrows()) {
        return Err(Error::invalid("center entry out of range"));
    }
    let z = g.select_rows(features, &rows);
    let mut gathered = Array2::zeros((entries.len(), d));
    for (i, e) in entries.iter().enumerate() {
        gathered.row_mut(i).assign(&centers.row(e.class));
    }
    let c = g.constant(gathered);
    let dist = squared_distances(g, z, c);
    let w = g.select_rows(weights, &rows);
    let share = g.constant(Array2::from_shape_fn((entries.len(), 1), |(i, _)| entries[i].share));
    let ws = g.mul(w, share);
    let weighted = g.mul(dist, ws);
    let total = g.sum(weighted);
    Ok(g.scale(total, 0.5 / num_samples as f64))
}

/// Bounded combination `(e^{g0 d+} - e^{g1 d-} + eps0) / (e^{g0 d+} + e^{g1 d-} + eps1)`.
/// Exponents are capped at [`EXP_CLAMP`]; the flag reports whether a cap hit.
pub fn cbcl(g: &mut Graph, d_plus: Var, d_minus: Var, cfg: &LossConfig) -> (Var, bool) {
    let a = g.scale(d_plus, cfg.gamma0);
    let b = g.scale(d_minus, cfg.gamma1);
    let clamped = g.scalar(a) > EXP_CLAMP || g.scalar(b) > EXP_CLAMP;
    if clamped {
        // warn once; every clamped step is also flagged in the step log
        let level = if CLAMP_WARNED.swap(true, Ordering::Relaxed) {
            log::Level::Debug
        } else {
            log::Level::Warn
        };
        log::log!(
            level,
            "boundary-center exponent clamped at {EXP_CLAMP} (gamma0*d+ = {}, gamma1*d- = {}); later clamps are logged at debug level",
            g.scalar(a),
            g.scalar(b)
        );
    }
    let a = g.clamp_max(a, EXP_CLAMP);
    let b = g.clamp_max(b, EXP_CLAMP);
    let ea = g.exp(a);
    let eb = g.exp(b);
    let diff = g.sub(ea, eb);
    let num = g.add_scalar(diff, cfg.eps0);
    let sum = g.add(ea, eb);
    let den = g.add_scalar(sum, cfg.eps1);
    (g.div(num, den), clamped)
}

fn matrix(rows: usize, cols: usize, data: &[f64]) -> Result<Array2<f64>> {
    Array2::from_shape_vec((rows, cols), data.to_vec()).map_err(|e| Error::shape(e.to_string()))
}

/// Virtual-boundary distance over plain `P x d` feature matrices.
pub fn vbl_distance_value(z_i: &Array2<f64>, z_j: &Array2<f64>, z_mix: &Array2<f64>) -> Result<f64> {
    let mut g = Graph::new();
    let (a, b, m) = (g.constant(z_i.clone()), g.constant(z_j.clone()), g.constant(z_mix.clone()));
    let d = vbl_distance(&mut g, a, b, m)?;
    Ok(g.scalar(d))
}

/// Dual-entropy weight of one probability vector against its target.
pub fn dual_entropy_weight(probs: &[f64], target: &[f64], floor: f64) -> Result<f64> {
    if probs.len() != target.len() || probs.is_empty() {
        return Err(Error::shape("probs and target differ in length"));
    }
    ensure_finite(probs, "probabilities")?;
    let mut g = Graph::new();
    let p = g.constant(matrix(1, probs.len(), probs)?);
    let w = dual_entropy(&mut g, p, &matrix(1, target.len(), target)?, floor);
    Ok(g.scalar(w))
}

/// Center distance for ID samples with one-hot `labels`; also reports
/// whether any used center has never been updated.
pub fn dec_distance_value(
    features: &Array2<f64>,
    probs: &Array2<f64>,
    labels: &[usize],
    centers: &crate::moe::ClassCenters,
    floor: f64,
) -> Result<(f64, bool)> {
    if features.nrows() != labels.len() || probs.nrows() != labels.len() {
        return Err(Error::shape("features, probs and labels differ in length"));
    }
    let targets = crate::data::one_hot(labels, probs.ncols());
    let mut g = Graph::new();
    let z = g.constant(features.clone());
    let p = g.constant(probs.clone());
    let w = dual_entropy(&mut g, p, &targets, floor);
    let entries: Vec<CenterEntry> = labels
        .iter()
        .enumerate()
        .map(|(row, &class)| CenterEntry {
            row,
            class,
            share: 1.0,
        })
        .collect();
    let unseen = labels.iter().any(|&y| !centers.seen(y));
    let d = dec_distance(&mut g, z, w, &entries, &centers.centers, labels.len())?;
    Ok((g.scalar(d), unseen))
}

/// Boundary-center combination over plain distances.
pub fn cbcl_loss(d_plus: f64, d_minus: f64, cfg: &LossConfig) -> Result<f64> {
    if !(d_plus >= 0.0) || !(d_minus >= 0.0) {
        return Err(Error::invalid("distances must be non-negative"));
    }
    if !(cfg.gamma0 > 0.0 && cfg.gamma1 > 0.0) {
        return Err(Error::invalid("gamma0 and gamma1 must be positive"));
    }
    let mut g = Graph::new();
    let a = g.scalar_constant(d_plus);
    let b = g.scalar_constant(d_minus);
    let (l, _) = cbcl(&mut g, a, b, cfg);
    Ok(g.scalar(l))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moe::ClassCenters;
    use ndarray::array;

    fn cfg() -> LossConfig {
        LossConfig::default()
    }

    #[test]
    fn vbl_examples() {
        let z = array![[0.3, -0.1]];
        assert_eq!(vbl_distance_value(&z, &z, &z).unwrap(), 0.0);
        let d = vbl_distance_value(&array![[1.0, 0.0]], &array![[-1.0, 0.0]], &array![[0.0, 0.0]])
            .unwrap();
        assert_eq!(d, 2.0);
        assert!(vbl_distance_value(&array![[1.0, 0.0]], &array![[1.0, 0.0], [0.0, 0.0]], &z).is_err());
    }

    #[test]
    fn dual_entropy_examples() {
        let w = dual_entropy_weight(&[0.0, 1.0, 0.0], &[0.0, 1.0, 0.0], 1e-8).unwrap();
        assert_eq!(w, 0.0);
        let c = 5.0;
        let w = dual_entropy_weight(&[0.2; 5], &[1.0, 0.0, 0.0, 0.0, 0.0], 1e-8).unwrap();
        assert!((w - 2.0 * (c as f64).ln()).abs() < 1e-12);
        let w = dual_entropy_weight(&[0.7, 0.3], &[0.0, 1.0], 1e-8).unwrap();
        let oracle = -(0.7 * 0.7f64.ln() + 0.3 * 0.3f64.ln()) - 0.3f64.ln();
        assert!((w - oracle).abs() < 1e-12);
        assert!((w - 1.8149).abs() < 1e-4);
    }

    #[test]
    fn dec_examples() {
        let mut centers = ClassCenters::new(2, 2, 1.0).unwrap();
        centers.update(array![[1.0, 1.0], [2.0, 0.0]].view(), &[0, 1]).unwrap();
        let probs = array![[0.5, 0.5], [0.1, 0.9]];
        let (d, unseen) =
            dec_distance_value(&array![[1.0, 1.0], [2.0, 0.0]], &probs, &[0, 1], &centers, 1e-8).unwrap();
        assert_eq!(d, 0.0);
        assert!(!unseen);

        // single sample, weight 2, squared distance 3 -> 3
        let mut g = Graph::new();
        let z = g.constant(array![[1.0, 1.0, 1.0]]);
        let w = g.constant(array![[2.0]]);
        let entries = [CenterEntry {
            row: 0,
            class: 0,
            share: 1.0,
        }];
        let d = dec_distance(&mut g, z, w, &entries, &array![[0.0, 0.0, 0.0]], 1).unwrap();
        assert_eq!(g.scalar(d), 3.0);
    }

    #[test]
    fn dec_flags_unseen_center() {
        let centers = ClassCenters::new(2, 1, 0.1).unwrap();
        let (_, unseen) =
            dec_distance_value(&array![[1.0]], &array![[0.5, 0.5]], &[1], &centers, 1e-8).unwrap();
        assert!(unseen);
    }

    #[test]
    fn cbcl_examples() {
        assert!(cbcl_loss(0.0, 0.0, &cfg()).unwrap().abs() < 1e-6);
        assert!((cbcl_loss(60.0, 0.0, &cfg()).unwrap() - 1.0).abs() < 1e-12);
        let e = std::f64::consts::E;
        let l = cbcl_loss(1.0, 2.0, &cfg()).unwrap();
        assert!((l - (e - e * e) / (e + e * e)).abs() < 1e-6);
        assert!((l + 0.5f64.tanh()).abs() < 1e-6);
        assert!(cbcl_loss(-1.0, 0.0, &cfg()).is_err());
    }

    #[test]
    fn cbcl_clamps_large_exponents() {
        let mut g = Graph::new();
        let a = g.scalar_constant(500.0);
        let b = g.scalar_constant(1.0);
        let (l, clamped) = cbcl(&mut g, a, b, &cfg());
        assert!(clamped);
        assert!(g.scalar(l).is_finite());
        assert!((g.scalar(l) - 1.0).abs() < 1e-12);
    }
}
