use super::{LstmLayerParams, ModelError};

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Activates pre-activations `z` (gate blocks i, f, g, o) in place and advances the
/// cell. Writes the new cell state, its tanh and the hidden state.
fn step(z: &mut [f64], c_prev: &[f64], c: &mut [f64], tanh_c: &mut [f64], h: &mut [f64]) {
    let hidden = c.len();
    let (zi, rest) = z.split_at_mut(hidden);
    let (zf, rest) = rest.split_at_mut(hidden);
    let (zg, zo) = rest.split_at_mut(hidden);
    for k in 0..hidden {
        let i = sigmoid(zi[k]);
        let f = sigmoid(zf[k]);
        let g = zg[k].tanh();
        let o = sigmoid(zo[k]);
        zi[k] = i;
        zf[k] = f;
        zg[k] = g;
        zo[k] = o;
        c[k] = f * c_prev[k] + i * g;
        tanh_c[k] = c[k].tanh();
        h[k] = o * tanh_c[k];
    }
}

/// One LSTM step on a dense input: returns `(h', c')`.
pub fn lstm_cell(x: &[f64], h: &[f64], c: &[f64], p: &LstmLayerParams) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    if x.len() != p.input_dim || h.len() != p.hidden || c.len() != p.hidden {
        return Err(ModelError::DimensionMismatch(format!(
            "cell expects x[{}], h[{}], c[{}]; got {}, {}, {}",
            p.input_dim,
            p.hidden,
            p.hidden,
            x.len(),
            h.len(),
            c.len()
        )));
    }
    let w = p.width();
    let mut z = p.bias.clone();
    for (d, &xd) in x.iter().enumerate() {
        axpy(xd, &p.w_input[d * w..(d + 1) * w], &mut z);
    }
    for (j, &hj) in h.iter().enumerate() {
        axpy(hj, &p.w_recurrent[j * w..(j + 1) * w], &mut z);
    }
    let mut c_new = vec![0.0; p.hidden];
    let mut tanh_c = vec![0.0; p.hidden];
    let mut h_new = vec![0.0; p.hidden];
    step(&mut z, c, &mut c_new, &mut tanh_c, &mut h_new);
    Ok((h_new, c_new))
}

/// Activations of one layer over one sequence, kept for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerTrace {
    pub hidden: usize,
    pub len: usize,
    /// `[len][4H]` activated gates.
    pub gates: Vec<f64>,
    /// `[len][H]` cell states.
    pub cells: Vec<f64>,
    pub tanh_cells: Vec<f64>,
    /// `[len][H]` hidden states.
    pub h: Vec<f64>,
}

impl LayerTrace {
    pub fn h_at(&self, t: usize) -> &[f64] {
        &self.h[t * self.hidden..(t + 1) * self.hidden]
    }
}

/// Runs the layer over `len` steps from zero state. `project(t, z)` must add the
/// input contribution `W_input·x_t` to `z`.
pub(crate) fn run_layer(p: &LstmLayerParams, len: usize, mut project: impl FnMut(usize, &mut [f64])) -> LayerTrace {
    let hidden = p.hidden;
    let w = p.width();
    let mut tr = LayerTrace {
        hidden,
        len,
        gates: vec![0.0; len * w],
        cells: vec![0.0; len * hidden],
        tanh_cells: vec![0.0; len * hidden],
        h: vec![0.0; len * hidden],
    };
    let zeros = vec![0.0; hidden];
    for t in 0..len {
        let z = &mut tr.gates[t * w..(t + 1) * w];
        z.copy_from_slice(&p.bias);
        project(t, z);
        if t > 0 {
            let h_prev = &tr.h[(t - 1) * hidden..t * hidden];
            for (j, &hj) in h_prev.iter().enumerate() {
                axpy(hj, &p.w_recurrent[j * w..(j + 1) * w], z);
            }
        }
        let (c_done, c_rest) = tr.cells.split_at_mut(t * hidden);
        let c_prev = if t > 0 { &c_done[(t - 1) * hidden..] } else { &zeros[..] };
        step(
            z,
            c_prev,
            &mut c_rest[..hidden],
            &mut tr.tanh_cells[t * hidden..(t + 1) * hidden],
            &mut tr.h[t * hidden..(t + 1) * hidden],
        );
    }
    tr
}

/// Backpropagation through time for one layer.
///
/// `dh_out` is `[len][H]`, the loss gradient arriving at each emitted hidden state
/// from above. Recurrent-weight and bias gradients are added into `grad`; the
/// returned `[len][4H]` pre-activation gradients let the caller form input-weight
/// and input gradients for whatever input representation it has.
pub(crate) fn backprop_layer(p: &LstmLayerParams, tr: &LayerTrace, dh_out: &[f64], grad: &mut LstmLayerParams) -> Vec<f64> {
    let hidden = p.hidden;
    let w = p.width();
    let len = tr.len;
    let mut dz_all = vec![0.0; len * w];
    let mut dh_next = vec![0.0; hidden];
    let mut dc_next = vec![0.0; hidden];
    for t in (0..len).rev() {
        let gates = &tr.gates[t * w..(t + 1) * w];
        let dz = &mut dz_all[t * w..(t + 1) * w];
        for k in 0..hidden {
            let (i, f, g, o) = (gates[k], gates[hidden + k], gates[2 * hidden + k], gates[3 * hidden + k]);
            let tc = tr.tanh_cells[t * hidden + k];
            let c_prev = if t > 0 { tr.cells[(t - 1) * hidden + k] } else { 0.0 };
            let dh = dh_out[t * hidden + k] + dh_next[k];
            let dc = dh * o * (1.0 - tc * tc) + dc_next[k];
            dz[k] = dc * g * i * (1.0 - i);
            dz[hidden + k] = dc * c_prev * f * (1.0 - f);
            dz[2 * hidden + k] = dc * i * (1.0 - g * g);
            dz[3 * hidden + k] = dh * tc * o * (1.0 - o);
            dc_next[k] = dc * f;
        }
        axpy(1.0, dz, &mut grad.bias);
        if t > 0 {
            let h_prev = tr.h_at(t - 1);
            for j in 0..hidden {
                let row = j * w..(j + 1) * w;
                axpy(h_prev[j], dz, &mut grad.w_recurrent[row.clone()]);
                dh_next[j] = dot(&p.w_recurrent[row], dz);
            }
        }
    }
    dz_all
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Scalar-loop reference: indexes weights as `W[gate·H + k][d]` and evaluates each
    /// gate by its own formula.
    #[allow(clippy::needless_range_loop)]
    fn oracle_cell(x: &[f64], h: &[f64], c: &[f64], p: &LstmLayerParams) -> (Vec<f64>, Vec<f64>) {
        let hn = p.hidden;
        let w4 = 4 * hn;
        let pre = |gate: usize, k: usize| {
            let r = gate * hn + k;
            let mut s = p.bias[r];
            for d in 0..x.len() {
                s += p.w_input[d * w4 + r] * x[d];
            }
            for j in 0..hn {
                s += p.w_recurrent[j * w4 + r] * h[j];
            }
            s
        };
        let logistic = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut h_out = vec![0.0; hn];
        let mut c_out = vec![0.0; hn];
        for k in 0..hn {
            let i = logistic(pre(0, k));
            let f = logistic(pre(1, k));
            let g = pre(2, k).tanh();
            let o = logistic(pre(3, k));
            c_out[k] = f * c[k] + i * g;
            h_out[k] = o * c_out[k].tanh();
        }
        (h_out, c_out)
    }

    fn random_layer(d: usize, hidden: usize, seed: u64) -> LstmLayerParams {
        let mut rng = crate::seed::rng(seed, "lstm-test", 0);
        let mut p = LstmLayerParams::zeros(d, hidden);
        for x in p.w_input.iter_mut().chain(&mut p.w_recurrent).chain(&mut p.bias) {
            *x = rng.random_range(-1.0..1.0);
        }
        p
    }

    #[test]
    fn zero_params_give_half_gates_and_zero_state() {
        let p = LstmLayerParams::zeros(3, 4);
        let (h, c) = lstm_cell(&[1.0, -2.0, 0.5], &[0.0; 4], &[0.0; 4], &p).unwrap();
        assert_eq!(h, vec![0.0; 4]);
        assert_eq!(c, vec![0.0; 4]);
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let mut p = LstmLayerParams::zeros(2, 3);
        p.bias[3..6].fill(10.0);
        let v = [0.7, -1.3, 2.0];
        let (_, c) = lstm_cell(&[0.4, 0.1], &[0.0; 3], &v, &p).unwrap();
        for (a, b) in c.iter().zip(v) {
            assert!((a - b).abs() < 1e-4 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn matches_scalar_oracle() {
        let mut rng = crate::seed::rng(9, "cell-inputs", 0);
        for seed in 0..20 {
            let p = random_layer(7, 5, seed);
            let x: Vec<f64> = (0..7).map(|_| rng.random_range(-2.0..2.0)).collect();
            let h: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let c: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
            let (h1, c1) = lstm_cell(&x, &h, &c, &p).unwrap();
            let (h2, c2) = oracle_cell(&x, &h, &c, &p);
            for (a, b) in h1.iter().zip(&h2).chain(c1.iter().zip(&c2)) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn layer_trace_matches_repeated_cells() {
        let p = random_layer(4, 3, 5);
        let mut rng = crate::seed::rng(2, "xs", 0);
        let xs: Vec<Vec<f64>> = (0..6).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let tr = run_layer(&p, xs.len(), |t, z| {
            for (d, &x) in xs[t].iter().enumerate() {
                axpy(x, &p.w_input[d * 12..(d + 1) * 12], z);
            }
        });
        let (mut h, mut c) = (vec![0.0; 3], vec![0.0; 3]);
        for (t, x) in xs.iter().enumerate() {
            (h, c) = oracle_cell(x, &h, &c, &p);
            for k in 0..3 {
                assert!((tr.h_at(t)[k] - h[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cell_rejects_bad_dimensions() {
        let p = LstmLayerParams::zeros(3, 2);
        assert!(matches!(lstm_cell(&[0.0; 2], &[0.0; 2], &[0.0; 2], &p), Err(ModelError::DimensionMismatch(_))));
    }
}
