//! Energy score, ambiguity-aware margin recalibration and the
//! logit-adjusted classification loss.

use ndarray::{Array1, Array2, ArrayView2};

use super::config::{EnergyInput, LossConfig};
use crate::autograd::{Graph, Var};
use crate::error::{ensure_finite, Error, Result};

/// `E = -tau * log sum_c exp(x_c / tau)` per row, `B x C -> B x 1`.
pub fn energy(g: &mut Graph, x: Var, tau: f64) -> Var {
    let scaled = g.scale(x, 1.0 / tau);
    let lse = g.logsumexp_rows(scaled);
    g.scale(lse, -tau)
}

/// `1 + softmax_n(E_n)` over the batch, `B x 1 -> B x 1`.
pub fn aala_factors(g: &mut Graph, energies: Var) -> Var {
    let row = g.transpose(energies);
    let sm = g.softmax_rows(row);
    let col = g.transpose(sm);
    g.add_scalar(col, 1.0)
}

/// `factor_i * log(prior_j)`, `B x 1` factors against a `1 x C` prior row.
pub fn margins(g: &mut Graph, factors: Var, log_prior: &[f64]) -> Var {
    let row = g.constant(Array2::from_shape_vec((1, log_prior.len()), log_prior.to_vec()).expect("row"));
    g.matmul(factors, row)
}

/// `log softmax(v + T)` per row.
pub fn adjusted_log_probs(g: &mut Graph, logits: Var, margins: Var) -> Var {
    let adj = g.add(logits, margins);
    g.log_softmax_rows(adj)
}

/// `-sum_c t_c log p_c` per row, `B x 1`.
pub fn soft_cross_entropy(g: &mut Graph, log_probs: Var, targets: &Array2<f64>) -> Var {
    let t = g.constant(targets.clone());
    let prod = g.mul(log_probs, t);
    let s = g.sum_rows(prod);
    g.neg(s)
}

/// Tape nodes of one classification-loss evaluation.
#[derive(Debug, Clone)]
pub struct ClsTerms {
    /// Scalar loss.
    pub loss: Var,
    /// Per-expert energies, `B x 1`.
    pub energies: Vec<Var>,
    /// Per-expert margin factors, `B x 1` (all ones when AALA is off).
    pub factors: Vec<Var>,
    /// Per-expert adjusted log-probabilities, `B x C`.
    pub log_probs: Vec<Var>,
}

pub(crate) fn check_targets(targets: ArrayView2<'_, f64>) -> Result<()> {
    for (i, row) in targets.outer_iter().enumerate() {
        let s: f64 = row.sum();
        if (s - 1.0).abs() > 1e-6 || row.iter().any(|&v| v < 0.0) {
            return Err(Error::invalid(format!(
                "target row {i} is not a distribution (sum {s})"
            )));
        }
    }
    Ok(())
}

/// Logit-adjusted soft cross-entropy summed over experts and averaged over
/// the batch.
///
/// `logits[k]` and `features[k]` are expert `k`'s outputs (`B x C`, `B x d`),
/// `expert_priors` is `K x C`, `weights` is `B x K`. With AALA enabled each
/// expert's margins are rescaled per sample by `1 + softmax` of that expert's
/// energies over the batch; otherwise the factor is a constant one and the
/// loss is the static logit-adjusted loss.
pub fn cls_loss(
    g: &mut Graph,
    logits: &[Var],
    features: &[Var],
    targets: &Array2<f64>,
    expert_priors: &Array2<f64>,
    weights: &Array2<f64>,
    cfg: &LossConfig,
) -> Result<ClsTerms> {
    let k_total = logits.len();
    if k_total == 0 || expert_priors.nrows() != k_total || weights.ncols() != k_total {
        return Err(Error::shape("expert count differs between logits, priors and weights"));
    }
    let (b, c) = g.shape(logits[0]);
    if targets.dim() != (b, c) || weights.nrows() != b || expert_priors.ncols() != c {
        return Err(Error::shape(format!(
            "logits {b}x{c}, targets {:?}, weights {:?}, priors {:?}",
            targets.dim(),
            weights.dim(),
            expert_priors.dim()
        )));
    }
    check_targets(targets.view())?;
    if expert_priors.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::invalid("expert priors must be positive"));
    }
    let mut energies = Vec::with_capacity(k_total);
    let mut factors = Vec::with_capacity(k_total);
    let mut log_probs = Vec::with_capacity(k_total);
    let mut total: Option<Var> = None;
    for k in 0..k_total {
        let source = match cfg.energy_input {
            EnergyInput::Logits => logits[k],
            EnergyInput::Feature => *features.get(k).ok_or_else(|| {
                Error::shape("feature-based energy needs per-expert features")
            })?,
        };
        let e = energy(g, source, cfg.tau_energy);
        let f = if cfg.aala_enabled {
            aala_factors(g, e)
        } else {
            g.constant(Array2::ones((b, 1)))
        };
        let log_prior: Vec<f64> = expert_priors.row(k).iter().map(|p| p.ln()).collect();
        let m = margins(g, f, &log_prior);
        let lp = adjusted_log_probs(g, logits[k], m);
        let ce = soft_cross_entropy(g, lp, targets);
        let w = g.constant(weights.column(k).to_owned().insert_axis(ndarray::Axis(1)));
        let weighted = g.mul(ce, w);
        total = Some(match total {
            Some(t) => g.add(t, weighted),
            None => weighted,
        });
        energies.push(e);
        factors.push(f);
        log_probs.push(lp);
    }
    let loss = g.mean(total.expect("at least one expert"));
    Ok(ClsTerms {
        loss,
        energies,
        factors,
        log_probs,
    })
}

/// Energy score of one logit vector.
pub fn energy_score(logits: &[f64], tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::invalid("energy temperature must be > 0"));
    }
    if logits.is_empty() {
        return Err(Error::Empty("logits".into()));
    }
    ensure_finite(logits, "energy logits")?;
    let mut g = Graph::new();
    let x = g.constant(Array2::from_shape_vec((1, logits.len()), logits.to_vec()).expect("row"));
    let e = energy(&mut g, x, tau);
    Ok(g.scalar(e))
}

/// `1 + exp(E_i) / sum_n exp(E_n)` for every sample of the batch.
pub fn aala_factor(energies: &[f64]) -> Result<Vec<f64>> {
    if energies.is_empty() {
        return Err(Error::Empty("energy batch".into()));
    }
    ensure_finite(energies, "energies")?;
    let mut g = Graph::new();
    let e = g.constant(Array2::from_shape_vec((energies.len(), 1), energies.to_vec()).expect("col"));
    let f = aala_factors(&mut g, e);
    Ok(g.value(f).iter().copied().collect())
}

/// `T[i, j] = factor_i * log(prior_j)` for one expert.
pub fn recalibrated_margins(prior: &[f64], factors: &[f64]) -> Result<Array2<f64>> {
    if prior.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::invalid("margin prior must be positive"));
    }
    ensure_finite(factors, "margin factors")?;
    let log_prior = Array1::from_iter(prior.iter().map(|p| p.ln()));
    Ok(Array2::from_shape_fn((factors.len(), prior.len()), |(i, j)| {
        factors[i] * log_prior[j]
    }))
}

/// `softmax(v + T)`.
pub fn adjusted_softmax(logits: &[f64], margins: &[f64]) -> Result<Vec<f64>> {
    if logits.len() != margins.len() {
        return Err(Error::shape("logits and margins differ in length"));
    }
    let mut g = Graph::new();
    let v = g.constant(Array2::from_shape_vec((1, logits.len()), logits.to_vec()).expect("row"));
    let t = g.constant(Array2::from_shape_vec((1, margins.len()), margins.to_vec()).expect("row"));
    let lp = adjusted_log_probs(&mut g, v, t);
    Ok(g.value(lp).iter().map(|x| x.exp()).collect())
}

/// Classification loss over plain per-expert logits, `logits[k]` being `B x C`.
pub fn cls_loss_value(
    logits: &[Array2<f64>],
    targets: &Array2<f64>,
    expert_priors: &Array2<f64>,
    weights: &Array2<f64>,
    cfg: &LossConfig,
) -> Result<f64> {
    if cfg.energy_input == EnergyInput::Feature {
        return Err(Error::invalid("cls_loss_value computes energies from logits"));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = logits.iter().map(|l| g.constant(l.clone())).collect();
    let terms = cls_loss(&mut g, &vars, &[], targets, expert_priors, weights, cfg)?;
    Ok(g.scalar(terms.loss))
}
