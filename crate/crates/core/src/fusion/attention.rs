use super::PixelAttention;
use crate::gradcore::{Graph, ParameterSet, Real, Result, SoftmaxAxis, Var};

/// Batch rows holding slice `i` of every sample.
pub fn slice_rows(batch: usize, k: usize, i: usize) -> Vec<usize> {
    (0..batch).map(|b| b * k + i).collect()
}

/// Group attention over `[R; f^1 .. f^k]`.
///
/// Pooled features are scored by a 1x1 convolution whose weights are tied
/// across the slice groups: the all-focus logit is `r . avg(R) + b_r` and
/// slice `i` gets `s . avg(f^i) + g . avg(R) + b_s`. A softmax over the
/// `k + 1` logits gives `att` (`[B, k+1, 1, 1]`, all-focus first); slice `i`
/// is scaled by weight `i + 1`, and the all-focus weight is not reused.
pub fn channel_attention<T: Real>(
    g: &mut Graph<T>,
    params: &ParameterSet<T>,
    prefix: &str,
    r: Var,
    f: Var,
    k: usize,
) -> Result<(Var, Var)> {
    let batch = g.value(r).shape()[0];
    let pr = g.global_avg_pool(r)?;
    let pf = g.global_avg_pool(f)?;
    let wr = g.param(params, &format!("{prefix}.r.w"))?;
    let br = g.param(params, &format!("{prefix}.r.b"))?;
    let ws = g.param(params, &format!("{prefix}.s.w"))?;
    let bs = g.param(params, &format!("{prefix}.s.b"))?;
    let wg = g.param(params, &format!("{prefix}.g.w"))?;
    let z0 = g.conv2d(pr, wr, Some(br), 1, 0)?;
    let zs = g.conv2d(pf, ws, Some(bs), 1, 0)?;
    let zg = g.conv2d(pr, wg, None, 1, 0)?;
    let mut logits = vec![z0];
    for i in 0..k {
        let zi = g.gather(zs, &slice_rows(batch, k, i))?;
        logits.push(g.add(zi, zg)?);
    }
    let z = g.concat(&logits)?;
    let att = g.softmax(z, SoftmaxAxis::Channel)?;
    let slice_att = g.narrow(att, 1, k)?;
    let per_row = g.reshape(slice_att, &[batch * k, 1, 1, 1])?;
    let weighted = g.mul(f, per_row)?;
    Ok((att, weighted))
}

/// `R' = R * att + R` with a single-channel attention map computed from the
/// refined focal features and broadcast over channels.
pub fn pixel_guidance<T: Real>(
    g: &mut Graph<T>,
    params: &ParameterSet<T>,
    prefix: &str,
    r: Var,
    refined: Var,
    mode: PixelAttention,
) -> Result<Var> {
    let w = g.param(params, &format!("{prefix}.w"))?;
    let b = g.param(params, &format!("{prefix}.b"))?;
    let z = g.conv2d(refined, w, Some(b), 1, 1)?;
    let att = match mode {
        PixelAttention::Softmax => g.softmax(z, SoftmaxAxis::Spatial)?,
        PixelAttention::Sigmoid => g.sigmoid(z)?,
    };
    let gated = g.mul(r, att)?;
    g.add(gated, r)
}
