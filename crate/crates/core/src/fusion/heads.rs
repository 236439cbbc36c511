use super::{ConvLstm, LstmState, NetConfig};
use crate::gradcore::{Graph, ParameterSet, Real, Result, Var};

fn stream<T: Real>(g: &mut Graph<T>, params: &ParameterSet<T>, cfg: &NetConfig, name: &str, feats: &[Var]) -> Result<Var> {
    let [_, _, h2, w2] = g.value(feats[0]).dims4();
    let cell = ConvLstm::new(format!("head.{name}.lstm"), cfg.head_width, cfg.head_kernel);
    let mut state: Option<LstmState> = None;
    // Coarse to fine.
    for (l, &x) in feats.iter().enumerate().rev() {
        let w = g.param(params, &format!("head.{name}.proj.l{l}.w"))?;
        let b = g.param(params, &format!("head.{name}.proj.l{l}.b"))?;
        let p = g.conv2d(x, w, Some(b), 1, 0)?;
        let up = g.upsample(p, h2, w2)?;
        state = Some(cell.step(g, params, up, state)?);
    }
    let h = state.expect("at least one level").h;
    let w = g.param(params, &format!("head.{name}.out.w"))?;
    let b = g.param(params, &format!("head.{name}.out.b"))?;
    let z = g.conv2d(h, w, Some(b), 1, 0)?;
    let s = g.sigmoid(z)?;
    g.upsample(s, cfg.height, cfg.width)
}

/// Focal-stream prediction `s_f` from the refined slice features and
/// all-focus prediction `s_r` from the guided all-focus features.
pub fn heads<T: Real>(
    g: &mut Graph<T>,
    params: &ParameterSet<T>,
    cfg: &NetConfig,
    focal: &[Var],
    all_focus: &[Var],
) -> Result<(Var, Var)> {
    let s_f = stream(g, params, cfg, "f", focal)?;
    let s_r = stream(g, params, cfg, "r", all_focus)?;
    Ok((s_f, s_r))
}
