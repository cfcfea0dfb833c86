use crate::error::{Error, Result};
use crate::head::{forward_values, ForwardTrace, HeadParameters, HeadTopology};
use crate::num::{dot, Real};

use super::loss::{concept_grad, loss_terms, LossConfig};

/// Gradients share the parameter layout.
pub type GradientSet<T = f64> = HeadParameters<T>;

/// Exact gradient of `L_CE + lambda * L_CON` for one example.
pub fn backward<T: Real>(
    trace: &ForwardTrace<T>,
    t: &HeadTopology,
    p: &HeadParameters<T>,
    label: usize,
    targets: &[f64],
    cfg: &LossConfig,
) -> Result<GradientSet<T>> {
    let mut g = GradientSet::zeros(t);
    backward_into(trace, t, &p.values, label, targets, cfg, T::ONE, &mut g.values)?;
    Ok(g)
}

fn check_trace<T: Real>(trace: &ForwardTrace<T>, t: &HeadTopology, label: usize, targets: &[f64]) -> Result<()> {
    let n_units = t.units.len();
    let ok = trace.hidden.len() == n_units
        && trace.pre_hidden.len() == n_units
        && trace.z.len() == n_units - 1
        && trace.probs.len() == t.num_categories()
        && trace.pre_logits.len() == t.num_categories()
        && targets.len() == t.num_concepts()
        && label < t.num_categories()
        && (0..n_units).all(|u| trace.hidden[u].len() == t.width(u));
    if ok {
        Ok(())
    } else {
        Err(Error::TraceMismatch("trace, targets or label do not fit the topology".into()))
    }
}

/// Adds `scale` times the gradient into `grad`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_into<T: Real>(
    trace: &ForwardTrace<T>,
    t: &HeadTopology,
    p: &[T],
    label: usize,
    targets: &[f64],
    cfg: &LossConfig,
    scale: T,
    grad: &mut [T],
) -> Result<()> {
    check_trace(trace, t, label, targets)?;
    if p.len() != t.num_params() || grad.len() != t.num_params() {
        return Err(Error::ShapeMismatch { expected: t.num_params(), found: p.len().min(grad.len()) });
    }
    let n_units = t.units.len();
    let m = t.num_concepts();
    let lambda = T::from_f64(cfg.lambda);

    let dlogit: Vec<T> =
        trace.probs.iter().enumerate().map(|(j, &pj)| (if j == label { pj - T::ONE } else { pj }) * scale).collect();
    let mut dh: Vec<Vec<T>> = (0..n_units).map(|u| vec![T::ZERO; t.width(u)]).collect();
    let mut dgate = vec![T::ZERO; n_units];

    // Preorder numbering puts every child after its parent.
    for ui in (0..n_units).rev() {
        let unit = &t.units[ui];
        let view = t.unit_view(ui);
        let width = t.width(ui);
        let h = &trace.hidden[ui];
        let gate = trace.gate(ui);
        let mut dh_u = std::mem::take(&mut dh[ui]);

        for (r, &j) in unit.child_categories.iter().enumerate() {
            dgate[ui] += dlogit[j] * trace.pre_logits[j];
            let dxt = dlogit[j] * gate;
            let row = view.cat_w + r * width;
            for k in 0..width {
                grad[row + k] += dxt * h[k];
                dh_u[k] += dxt * p[row + k];
            }
            grad[view.cat_b + r] += dxt;
        }

        if ui > 0 {
            let z = trace.z[ui - 1];
            let dcon = concept_grad(z.to_f64(), targets[ui - 1], m, cfg.concept_loss);
            let ds = dgate[ui] * z * (T::ONE - z) + scale * lambda * T::from_f64(dcon);
            for k in 0..width {
                grad[view.gate_w + k] += ds * h[k];
                dh_u[k] += ds * p[view.gate_w + k];
            }
            grad[view.gate_b] += ds;

            // h_u = relu(W h_parent + b) * gate(parent)
            let pu = unit.parent.expect("non-root unit has a parent");
            let pgate = trace.gate(pu);
            let pre = &trace.pre_hidden[ui];
            dgate[pu] += dot(&dh_u, pre);
            let hp = &trace.hidden[pu];
            let pwidth = t.width(pu);
            for r in 0..unit.hidden {
                if pre[r] <= T::ZERO {
                    continue;
                }
                let da = dh_u[r] * pgate;
                let row = view.hidden_w + r * pwidth;
                for k in 0..pwidth {
                    grad[row + k] += da * hp[k];
                    dh[pu][k] += da * p[row + k];
                }
                grad[view.hidden_b + r] += da;
            }
        }
        dh[ui] = dh_u;
    }
    Ok(())
}

/// Forward, loss terms and scaled gradient in one call.
#[allow(clippy::too_many_arguments)]
pub(crate) fn head_loss_and_grad<T: Real>(
    t: &HeadTopology,
    p: &[T],
    features: &[T],
    label: usize,
    targets: &[f64],
    cfg: &LossConfig,
    scale: T,
    grad: &mut [T],
) -> Result<(f64, f64)> {
    let trace = forward_values(p, t, features, &[])?;
    backward_into(&trace, t, p, label, targets, cfg, scale, grad)?;
    Ok(loss_terms(&trace, label, targets, cfg.concept_loss))
}
