//! Negative-cosine consistency between the Mixup and CutMix views of the same
//! source pair, with stop-gradient on the projections.

use ndarray::Array2;

use crate::autograd::{Graph, Var};
use crate::error::{ensure_finite, Error, Result};

/// Unit-normalizes rows; rows with `mask = 0` come out as zeros with zero
/// gradient.
fn normalize_rows(g: &mut Graph, x: Var, mask: &Array2<f64>) -> Var {
    let sq = g.square(x);
    let s = g.sum_rows(sq);
    let safe = g.clamp_min(s, f64::MIN_POSITIVE);
    let norm = g.sqrt(safe);
    let inv = {
        let m = g.constant(mask.clone());
        g.div(m, norm)
    };
    g.mul_col(x, inv)
}

fn check_nonzero(g: &Graph, v: Var, what: &str) -> Result<()> {
    for row in g.value(v).outer_iter() {
        if row.dot(&row) == 0.0 {
            return Err(Error::invalid(format!("zero-norm {what} vector")));
        }
    }
    Ok(())
}

/// `mean_i [ -cos(u_m, sg(h_c)) - cos(u_c, sg(h_m)) ]`.
///
/// `h_m` and `h_c` are detached here, so no gradient reaches whatever
/// produced them through this term. A row where any of the four vectors is
/// exactly zero (e.g. all-dead ReLU features) has no direction; it
/// contributes 0 and no gradient.
pub fn rcl(g: &mut Graph, h_m: Var, h_c: Var, u_m: Var, u_c: Var) -> Result<Var> {
    let shape = g.shape(h_m);
    if g.shape(h_c) != shape || g.shape(u_m) != shape || g.shape(u_c) != shape {
        return Err(Error::shape("projection and prediction shapes differ"));
    }
    if shape.0 == 0 {
        return Err(Error::Empty("consistency pairs".into()));
    }
    let mut mask = Array2::ones((shape.0, 1));
    for v in [h_m, h_c, u_m, u_c] {
        for (i, row) in g.value(v).outer_iter().enumerate() {
            if row.dot(&row) == 0.0 {
                mask[[i, 0]] = 0.0;
            }
        }
    }
    let degenerate = mask.iter().filter(|&&m| m == 0.0).count();
    if degenerate > 0 {
        log::debug!("{degenerate} zero-norm consistency rows skipped");
    }
    let h_m = g.detach(h_m);
    let h_c = g.detach(h_c);
    let (hm, hc, um, uc) = (
        normalize_rows(g, h_m, &mask),
        normalize_rows(g, h_c, &mask),
        normalize_rows(g, u_m, &mask),
        normalize_rows(g, u_c, &mask),
    );
    let a = g.mul(um, hc);
    let b = g.mul(uc, hm);
    let s = g.add(a, b);
    let per_row = g.sum_rows(s);
    let m = g.mean(per_row);
    Ok(g.neg(m))
}

/// Consistency loss of a single pair of views.
pub fn rcl_loss(h_m: &[f64], h_c: &[f64], u_m: &[f64], u_c: &[f64]) -> Result<f64> {
    let n = h_m.len();
    if [h_c.len(), u_m.len(), u_c.len()].iter().any(|&l| l != n) || n == 0 {
        return Err(Error::shape("vectors differ in length"));
    }
    let mut g = Graph::new();
    let row = |g: &mut Graph, v: &[f64]| g.constant(Array2::from_shape_vec((1, n), v.to_vec()).expect("row"));
    ensure_finite(&[h_m, h_c, u_m, u_c].concat(), "consistency vectors")?;
    let (a, b, c, d) = (row(&mut g, h_m), row(&mut g, h_c), row(&mut g, u_m), row(&mut g, u_c));
    for (v, what) in [(a, "h_m"), (b, "h_c"), (c, "u_m"), (d, "u_c")] {
        check_nonzero(&g, v, what)?;
    }
    let l = rcl(&mut g, a, b, c, d)?;
    Ok(g.scalar(l))
}
