use crate::gradcore::{Graph, ParameterSet, Real, Result, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

/// Convolutional LSTM cell. One convolution over `[x; h]` produces the
/// input, forget, output and candidate maps (in that channel order) from
/// parameters `{prefix}.w` / `{prefix}.b`.
#[derive(Clone, Debug)]
pub struct ConvLstm {
    pub prefix: String,
    pub hidden: usize,
    pub kernel: usize,
}

impl ConvLstm {
    pub fn new(prefix: impl Into<String>, hidden: usize, kernel: usize) -> Self {
        Self {
            prefix: prefix.into(),
            hidden,
            kernel,
        }
    }

    /// One step; a missing state is the all-zero initial state.
    pub fn step<T: Real>(&self, g: &mut Graph<T>, params: &ParameterSet<T>, x: Var, state: Option<LstmState>) -> Result<LstmState> {
        let [n, _, hh, ww] = g.value(x).dims4();
        let hd = self.hidden;
        let (h_prev, c_prev) = match state {
            Some(s) => (s.h, Some(s.c)),
            None => (g.constant(Tensor::zeros(&[n, hd, hh, ww])), None),
        };
        let xh = g.concat(&[x, h_prev])?;
        let w = g.param(params, &format!("{}.w", self.prefix))?;
        let b = g.param(params, &format!("{}.b", self.prefix))?;
        let z = g.conv2d(xh, w, Some(b), 1, self.kernel / 2)?;
        let zi = g.narrow(z, 0, hd)?;
        let zf = g.narrow(z, hd, hd)?;
        let zo = g.narrow(z, 2 * hd, hd)?;
        let zg = g.narrow(z, 3 * hd, hd)?;
        let i = g.sigmoid(zi)?;
        let o = g.sigmoid(zo)?;
        let cand = g.tanh(zg)?;
        let ig = g.mul(i, cand)?;
        let c = match c_prev {
            Some(cp) => {
                let f = g.sigmoid(zf)?;
                let fc = g.mul(f, cp)?;
                g.add(fc, ig)?
            }
            None => ig,
        };
        let tc = g.tanh(c)?;
        let h = g.mul(o, tc)?;
        Ok(LstmState { h, c })
    }
}
