//! Independent static logit-adjusted cross-entropy trainer, used to check
//! that the full objective reduces to it when every extension is off.

use ndarray::Array2;

use super::config::{lr_at, RunConfig};
use super::optim::Sgd;
use super::prepare::PreparedData;
use super::run::{epoch_batches, init_model};
use crate::autograd::Graph;
use crate::error::Result;
use crate::losses::{ExpertReweighting, GroupMembership};
use crate::moe::expert_prior;

/// Per-step loss trace of `mean_i sum_k g_ik * -log softmax(v_ik + log prior_k)[y_i]`
/// trained with the same data order, initialization and optimizer as
/// [`super::fit`].
pub fn reference_static_la_trace(cfg: &RunConfig, data: &PreparedData) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut state = init_model(cfg, data)?;
    let priors = expert_prior(data.profile.priors(), &state.assignment)?;
    let reweighting = GroupMembership {
        out_of_group: cfg.loss.out_of_group_weight,
    };
    let mut opt = Sgd::new(&state.model.params().tensors, cfg.optim.momentum, cfg.optim.weight_decay);
    let train = &data.train;
    let c = train.num_classes;
    let mut trace = Vec::new();
    for epoch in 0..cfg.optim.epochs {
        let lr = lr_at(epoch, &cfg.optim)?;
        for ids in epoch_batches(train.len(), cfg.optim.batch_size, cfg.seed, epoch) {
            let batch = train.batch(&ids);
            let b = batch.len();
            let weights = reweighting.weights(&state.assignment, &batch.labels);
            let mut g = Graph::new();
            let params = state.model.bind(&mut g, true)?;
            let x = g.constant(batch.inputs.clone());
            let pass = state.model.forward(&mut g, &params, x)?;
            let mut terms = Vec::with_capacity(pass.logits.len());
            for (k, &v) in pass.logits.iter().enumerate() {
                let log_prior = g.constant(priors.row(k).mapv(f64::ln).insert_axis(ndarray::Axis(0)));
                let adjusted = g.add_row(v, log_prior);
                let lp = g.log_softmax_rows(adjusted);
                // picks g_ik * log p_ik[y_i]
                let mut pick = Array2::zeros((b, c));
                for (i, &y) in batch.labels.iter().enumerate() {
                    pick[[i, y]] = weights[[i, k]];
                }
                let pick = g.constant(pick);
                let picked = g.mul(lp, pick);
                terms.push(g.sum(picked));
            }
            let mut sum = terms[0];
            for &t in &terms[1..] {
                sum = g.add(sum, t);
            }
            let loss = g.scale(sum, -1.0 / b as f64);
            trace.push(g.scalar(loss));
            let grads = g.backward(loss);
            let grad_values: Vec<Array2<f64>> = params.iter().map(|&p| grads.get(p)).collect();
            opt.step(&mut state.model.params_mut().tensors, &grad_values, lr)?;
        }
    }
    Ok(trace)
}
