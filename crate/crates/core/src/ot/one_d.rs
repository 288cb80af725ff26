use super::{check_p, check_weights, OtError, WeightedSamples};

/// Mass moved between sample `a` and sample `b` by the monotone plan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanEntry {
    pub a: usize,
    pub b: usize,
    pub mass: f64,
}

/// Stable ascending order: by value, ties by original index.
pub fn sorted_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]).then(i.cmp(&j)));
    idx
}

/// The optimal (monotone) 1D plan, obtained by merging the two cumulative
/// weight sequences in sorted order. Weights are assumed valid.
pub fn quantile_plan(xa: &[f64], wa: &[f64], xb: &[f64], wb: &[f64]) -> Vec<PlanEntry> {
    let oa = sorted_order(xa);
    let ob = sorted_order(xb);
    let cumulative = |order: &[usize], w: &[f64]| {
        let mut acc = 0.0;
        let mut c: Vec<f64> = order
            .iter()
            .map(|&i| {
                acc += w[i];
                acc
            })
            .collect();
        // both quantile functions end at exactly one
        if let Some(last) = c.last_mut() {
            *last = 1.0;
        }
        c
    };
    let (ca, cb) = (cumulative(&oa, wa), cumulative(&ob, wb));
    let mut plan = Vec::with_capacity(oa.len() + ob.len());
    let (mut i, mut j, mut prev) = (0, 0, 0.0);
    while i < oa.len() && j < ob.len() {
        let next = ca[i].min(cb[j]);
        let mass = next - prev;
        if mass > 0.0 {
            plan.push(PlanEntry {
                a: oa[i],
                b: ob[j],
                mass,
            });
        }
        prev = next;
        if ca[i] <= next {
            i += 1;
        }
        if cb[j] <= next {
            j += 1;
        }
    }
    plan
}

/// `W_p^p` between two weighted point sets on the line (unchecked inputs).
pub fn wpp_1d(xa: &[f64], wa: &[f64], xb: &[f64], wb: &[f64], p: f64) -> f64 {
    quantile_plan(xa, wa, xb, wb)
        .iter()
        .map(|e| e.mass * cost_1d(xa[e.a] - xb[e.b], p))
        .sum()
}

#[inline]
pub(crate) fn cost_1d(diff: f64, p: f64) -> f64 {
    if p == 2.0 {
        diff * diff
    } else {
        diff.abs().powf(p)
    }
}

/// Exact `W_p^p` between one-dimensional weighted samples.
pub fn wasserstein_1d(a: &WeightedSamples, b: &WeightedSamples, p: f64) -> Result<f64, OtError> {
    check_p(p)?;
    if a.dim() != 1 || b.dim() != 1 {
        return Err(OtError::DimensionMismatch(format!(
            "expected 1D samples, got d = {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    check_weights(a.weights(), "a")?;
    check_weights(b.weights(), "b")?;
    Ok(wpp_1d(a.values().as_slice(), a.weights(), b.values().as_slice(), b.weights(), p))
}
