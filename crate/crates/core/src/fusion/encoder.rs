use super::NetConfig;
use crate::gradcore::{GradError, Graph, ParameterSet, Real, Result, Var};

/// Per-level features, finest level first. `f[l]` holds every slice stacked
/// in the batch axis.
#[derive(Clone, Debug)]
pub struct Features {
    pub r: Vec<Var>,
    pub f: Vec<Var>,
}

fn stage<T: Real>(g: &mut Graph<T>, params: &ParameterSet<T>, cfg: &NetConfig, prefix: &str, x: Var) -> Result<Var> {
    let w = g.param(params, &format!("{prefix}.c0.w"))?;
    let b = g.param(params, &format!("{prefix}.c0.b"))?;
    let y = g.conv2d(x, w, Some(b), 2, 1)?;
    let mut y = g.relu(y)?;
    if cfg.convs_per_stage == 2 {
        let w = g.param(params, &format!("{prefix}.c1.w"))?;
        let b = g.param(params, &format!("{prefix}.c1.b"))?;
        let z = g.conv2d(y, w, Some(b), 1, 1)?;
        y = g.relu(z)?;
    }
    Ok(y)
}

/// Run the all-focus encoder on `all_focus` and the shared slice encoder on
/// `slices`. Each level halves the resolution.
pub fn encode<T: Real>(g: &mut Graph<T>, params: &ParameterSet<T>, cfg: &NetConfig, all_focus: Var, slices: Var) -> Result<Features> {
    let [_, _, h, w] = g.value(all_focus).dims4();
    let div = 1 << cfg.levels();
    if h % div != 0 || w % div != 0 {
        return Err(GradError::Invalid {
            op: "encode",
            detail: format!("input {h}x{w} not divisible by {div}"),
        });
    }
    let mut out = Features {
        r: Vec::with_capacity(cfg.levels()),
        f: Vec::with_capacity(cfg.levels()),
    };
    let (mut r, mut f) = (all_focus, slices);
    for l in 0..cfg.levels() {
        r = stage(g, params, cfg, &format!("enc.r.l{l}"), r)?;
        f = stage(g, params, cfg, &format!("enc.f.l{l}"), f)?;
        out.r.push(r);
        out.f.push(f);
    }
    Ok(out)
}
