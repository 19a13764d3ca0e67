//! Reverse-mode BPTT through readout, LIF dynamics, the delayed recurrent
//! path and the feedforward projections.
//!
//! The recurrent input popped at step `t` is `R[t] = K Q[t]` with
//! `Q[t] = sum_tau h_tau ⊙ S[t - tau]`, so the gradient reaching `Q[t]` is
//! `K^T dR[t]` and each spike `S[t]` collects it from `Q[t + tau]` weighted by
//! its spread coefficient. Delays receive gradient only through the spread
//! coefficients.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::{HiddenLayer, LayerTape, NetworkModel, ParamGroup, ReadoutMode, Tape};
use crate::neuron::{LifParams, Surrogate};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradEntry {
    pub name: String,
    pub group: ParamGroup,
    pub values: Vec<f64>,
}

/// Gradients in the order of [`NetworkModel::params_mut`].
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Gradients {
    pub entries: Vec<GradEntry>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.entries.iter().find(|e| e.name == name).map(|e| e.values.as_slice())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn l2_norm(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|e| &e.values)
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    fn push(&mut self, name: String, group: ParamGroup, values: Vec<f64>) {
        self.entries.push(GradEntry { name, group, values });
    }
}

struct LayerGrads {
    w_ff: Vec<f64>,
    bn: Option<(Vec<f64>, Vec<f64>)>,
    kernel: Vec<f64>,
    delays: Vec<f64>,
}

pub fn backward(model: &NetworkModel, tape: &Tape, dlogits: &[f64]) -> Result<Gradients> {
    let (batch, time) = (tape.batch, tape.time);
    let classes = model.readout.classes;
    if tape.layers.len() != model.layers.len() || dlogits.len() != batch * classes {
        return Err(Error::Shape("tape does not match model".into()));
    }
    for (layer, lt) in model.layers.iter().zip(&tape.layers) {
        if lt.spikes.len() != time * batch * layer.neurons() {
            return Err(Error::Shape("tape does not match model".into()));
        }
    }

    let last = &tape.layers.last().expect("at least one layer").spikes;
    let (dw_out, db_out, mut ds) = readout_backward(model, last, batch, time, dlogits);

    let lif = model.config.lif();
    let surrogate = model.config.surrogate();
    let mut per_layer = Vec::with_capacity(model.layers.len());
    for l in (0..model.layers.len()).rev() {
        let x = if l == 0 { &tape.input } else { &tape.layers[l - 1].spikes };
        let (grads, dx) = layer_backward(&model.layers[l], &tape.layers[l], x, &ds, batch, time, &lif, &surrogate, l > 0);
        per_layer.push(grads);
        ds = dx;
    }
    per_layer.reverse();

    let mut out = Gradients::default();
    for (l, g) in per_layer.into_iter().enumerate() {
        out.push(format!("layer{l}.w_ff"), ParamGroup::Feedforward, g.w_ff);
        if let Some((gamma, beta)) = g.bn {
            out.push(format!("layer{l}.bn.gamma"), ParamGroup::BatchNorm, gamma);
            out.push(format!("layer{l}.bn.beta"), ParamGroup::BatchNorm, beta);
        }
        out.push(format!("layer{l}.w_rec"), ParamGroup::Recurrent, g.kernel);
        out.push(format!("layer{l}.delays"), ParamGroup::Delays, g.delays);
    }
    out.push("readout.w".into(), ParamGroup::Readout, dw_out);
    out.push("readout.b".into(), ParamGroup::Readout, db_out);
    Ok(out)
}

/// Returns `(dW_out, db_out, dS_last)`.
fn readout_backward(
    model: &NetworkModel,
    spikes: &[f64],
    batch: usize,
    time: usize,
    dlogits: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let ro = &model.readout;
    let (n, c) = (ro.n_in, ro.classes);
    let beta = model.config.readout_lif().beta;
    let mut dw = vec![0.0; n * c];
    let mut db = vec![0.0; c];
    let mut ds = vec![0.0; time * batch * n];
    let mut carry = vec![0.0; batch * c];
    let mut da = vec![0.0; batch * c];
    for t in (0..time).rev() {
        let direct = model.config.readout == ReadoutMode::Sum || t + 1 == time;
        for k in 0..batch * c {
            carry[k] = beta * carry[k] + if direct { dlogits[k] } else { 0.0 };
            da[k] = (1.0 - beta) * carry[k];
        }
        for b in 0..batch {
            let row = (t * batch + b) * n;
            let s = &spikes[row..row + n];
            let g = &da[b * c..(b + 1) * c];
            for (bias, gv) in db.iter_mut().zip(g) {
                *bias += gv;
            }
            for i in 0..n {
                let w = &ro.weights[i * c..(i + 1) * c];
                if s[i] != 0.0 {
                    for (dwv, gv) in dw[i * c..(i + 1) * c].iter_mut().zip(g) {
                        *dwv += s[i] * gv;
                    }
                }
                ds[row + i] = w.iter().zip(g).map(|(a, b)| a * b).sum();
            }
        }
    }
    (dw, db, ds)
}

#[allow(clippy::too_many_arguments)]
fn layer_backward(
    layer: &HiddenLayer,
    lt: &LayerTape,
    x: &[f64],
    ds_ext: &[f64],
    batch: usize,
    time: usize,
    lif: &LifParams,
    surrogate: &Surrogate,
    need_dx: bool,
) -> (LayerGrads, Vec<f64>) {
    let n = layer.neurons();
    let width = batch * n;
    let table = &lt.table;
    let s = &lt.spikes;

    // dQ[t] for every step, filled in reverse time order.
    let mut dq = vec![0.0; time * width];
    let mut dz = vec![0.0; time * width];
    let mut dv = vec![0.0; width];
    let mut dsum = vec![0.0; width];
    let mut dr = vec![0.0; width];
    let mut q = vec![0.0; width];
    let mut dk = vec![0.0; layer.kernel.weights().len()];
    let mut dd = vec![0.0; n];

    for t in (0..time).rev() {
        let base = t * width;
        dsum.copy_from_slice(&ds_ext[base..base + width]);
        for r in 0..table.rows {
            let tau = table.first + r;
            if t + tau >= time {
                break;
            }
            if !table.active[r] {
                continue;
            }
            let (coef, grad) = (table.row(r), table.grad_row(r));
            let later = &dq[(t + tau) * width..(t + tau + 1) * width];
            for b in 0..batch {
                for j in 0..n {
                    let idx = b * n + j;
                    let u = later[idx];
                    dsum[idx] += coef[j] * u;
                    dd[j] += grad[j] * s[base + idx] * u;
                }
            }
        }
        for idx in 0..width {
            let over = lt.hidden[base + idx] - lif.v_th;
            let dh = dsum[idx] * surrogate.grad(over) + dv[idx] * lif.reset_grad(lt.resets[base + idx]);
            let di = (1.0 - lif.beta) * dh;
            dv[idx] = lif.beta * dh;
            dz[base + idx] = lt.mask_ff.as_ref().map_or(di, |m| di * m[idx]);
            dr[idx] = lt.mask_rec.as_ref().map_or(di, |m| di * m[idx]);
        }
        layer
            .kernel
            .apply_transpose_accumulate(&dr, batch, &mut dq[base..base + width]);

        q.fill(0.0);
        for r in 0..table.rows {
            let tau = table.first + r;
            if tau > t {
                break;
            }
            if !table.active[r] {
                continue;
            }
            let coef = table.row(r);
            let earlier = &s[(t - tau) * width..(t - tau + 1) * width];
            for (qr, sr) in q.chunks_exact_mut(n).zip(earlier.chunks_exact(n)) {
                for j in 0..n {
                    qr[j] += coef[j] * sr[j];
                }
            }
        }
        layer.kernel.accumulate_grad(&dr, &q, batch, &mut dk);
    }

    let bn = match (&layer.bn, &lt.bn) {
        (Some(bn), Some(cache)) => {
            let (mut dgamma, mut dbeta) = (vec![0.0; n], vec![0.0; n]);
            bn.backward(cache, &mut dz, &mut dgamma, &mut dbeta);
            Some((dgamma, dbeta))
        }
        _ => None,
    };

    let n_in = layer.n_in;
    let mut dw = vec![0.0; n_in * n];
    for (xr, gr) in x.chunks_exact(n_in).zip(dz.chunks_exact(n)) {
        for (i, &xv) in xr.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (w, g) in dw[i * n..(i + 1) * n].iter_mut().zip(gr) {
                *w += xv * g;
            }
        }
    }
    let dx = if need_dx {
        let mut dx = vec![0.0; x.len()];
        for (dxr, gr) in dx.chunks_exact_mut(n_in).zip(dz.chunks_exact(n)) {
            for (i, d) in dxr.iter_mut().enumerate() {
                *d = layer.w_ff[i * n..(i + 1) * n].iter().zip(gr).map(|(a, b)| a * b).sum();
            }
        }
        dx
    } else {
        Vec::new()
    };

    (
        LayerGrads {
            w_ff: dw,
            bn,
            kernel: dk,
            delays: dd,
        },
        dx,
    )
}
