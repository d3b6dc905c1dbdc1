//! Post-hoc detectors. Every score follows one polarity: higher means more
//! in-distribution.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::autograd::{logsumexp_rows, softmax_rows, Graph, Var};
use crate::error::{ensure_finite, Error, Result};
use crate::moe::Backbone;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Msp,
    Energy,
    Odin,
}

impl ScoreKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Msp => "msp",
            Self::Energy => "energy",
            Self::Odin => "odin",
        }
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "msp" => Ok(Self::Msp),
            "energy" => Ok(Self::Energy),
            "odin" => Ok(Self::Odin),
            other => Err(Error::invalid(format!(
                "unknown detector {other:?} (expected msp, energy or odin)"
            ))),
        }
    }
}

/// ODIN temperature and input-perturbation size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdinConfig {
    pub temperature: f64,
    pub epsilon: f64,
}

impl Default for OdinConfig {
    fn default() -> Self {
        Self {
            temperature: 1000.0,
            epsilon: 0.0014,
        }
    }
}

impl OdinConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("odin.temperature must be positive".into()));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config("odin.epsilon must be non-negative".into()));
        }
        Ok(())
    }
}

/// Detector selection plus the parameters each one needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detector {
    pub kind: ScoreKind,
    /// Energy temperature.
    pub tau: f64,
    pub odin: OdinConfig,
}

impl Detector {
    pub fn new(kind: ScoreKind) -> Self {
        Self {
            kind,
            tau: 1.0,
            odin: OdinConfig::default(),
        }
    }
}

/// Maximum softmax probability of one logit vector.
pub fn msp_score(logits: &[f64]) -> Result<f64> {
    ensure_finite(logits, "logits")?;
    if logits.is_empty() {
        return Err(Error::Empty("logits".into()));
    }
    let row = Array2::from_shape_vec((1, logits.len()), logits.to_vec()).expect("row");
    Ok(softmax_rows(&row).iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Maximum softmax probability per row.
pub fn msp_scores(logits: &Array2<f64>) -> Array1<f64> {
    softmax_rows(logits).map_axis(Axis(1), |r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Negated energy per row, `tau * logsumexp(v / tau)`.
pub fn neg_energy_scores(logits: &Array2<f64>, tau: f64) -> Array1<f64> {
    let scaled = logits / tau;
    logsumexp_rows(&scaled).column(0).mapv(|v| tau * v)
}

/// A classifier whose logits can be differentiated with respect to its input.
pub trait DifferentiableLogits {
    fn input_dim(&self) -> usize;
    /// Logits of `input` recorded on `g`.
    fn logits(&self, g: &mut Graph, input: Var) -> Result<Var>;
}

impl DifferentiableLogits for Backbone {
    fn input_dim(&self) -> usize {
        self.spec().input.len()
    }

    fn logits(&self, g: &mut Graph, input: Var) -> Result<Var> {
        let p = self.bind(g, false)?;
        Ok(self.forward(g, &p, input)?.ensemble)
    }
}

/// ODIN scores of every row of `inputs`: each input is moved by
/// `epsilon * sign(grad_x log max softmax(v(x) / T))`, and the score is the
/// maximum of `softmax(v(x') / T)`.
pub fn odin_scores<M: DifferentiableLogits + ?Sized>(
    model: &M,
    inputs: &Array2<f64>,
    cfg: &OdinConfig,
) -> Result<Array1<f64>> {
    cfg.validate()?;
    if inputs.ncols() != model.input_dim() {
        return Err(Error::shape(format!(
            "inputs have {} columns, model expects {}",
            inputs.ncols(),
            model.input_dim()
        )));
    }
    let mut g = Graph::new();
    let x = g.param(inputs.clone());
    let v = model.logits(&mut g, x)?;
    let scaled = g.scale(v, 1.0 / cfg.temperature);
    let logp = g.log_softmax_rows(scaled);
    let (b, c) = g.shape(logp);
    // one-hot mask of each row's predicted class
    let values = g.value(logp);
    let mut mask = Array2::zeros((b, c));
    for (i, row) in values.outer_iter().enumerate() {
        let arg = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (j, &p)| if p > acc.1 { (j, p) } else { acc })
            .0;
        mask[[i, arg]] = 1.0;
    }
    let m = g.constant(mask);
    let picked = g.mul(logp, m);
    let objective = g.sum(picked);
    let grads = g.backward(objective);
    let grad = grads
        .try_get(x)
        .ok_or_else(|| Error::invalid("model output does not depend on its input"))?;
    let perturbed = inputs + &grad.mapv(|d| cfg.epsilon * sign(d));

    let mut g = Graph::new();
    let x = g.constant(perturbed);
    let v = model.logits(&mut g, x)?;
    let logits = g.value(v) / cfg.temperature;
    Ok(msp_scores(&logits))
}

fn sign(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Scores of every row of `inputs` under `detector`, chunked for ODIN.
pub fn score_inputs(model: &Backbone, inputs: &Array2<f64>, detector: &Detector) -> Result<Array1<f64>> {
    match detector.kind {
        ScoreKind::Msp => Ok(msp_scores(&model.ensemble_logits(inputs)?)),
        ScoreKind::Energy => {
            if !(detector.tau > 0.0) {
                return Err(Error::invalid("energy temperature must be positive"));
            }
            Ok(neg_energy_scores(&model.ensemble_logits(inputs)?, detector.tau))
        }
        ScoreKind::Odin => {
            const CHUNK: usize = 256;
            let mut out = Vec::with_capacity(inputs.nrows());
            let mut start = 0;
            while start < inputs.nrows() {
                let end = (start + CHUNK).min(inputs.nrows());
                let chunk = inputs.slice(ndarray::s![start..end, ..]).to_owned();
                out.extend(odin_scores(model, &chunk, &detector.odin)?);
                start = end;
            }
            Ok(Array1::from(out))
        }
    }
}
