//! Forward and reverse-mode passes of the GRU encoder-decoder with additive
//! attention.
//!
//! Encoder: `h_i = GRU_enc(E_src[x_i], h_{i-1})`, `h_0 = 0`.
//! Decoder state starts at the last encoder state. At each step the previous
//! state queries the encoder states,
//! `α = softmax_j(v · tanh(W_q s + W_k h_j + b))`, `c = Σ α_j h_j`, then
//! `s' = GRU_dec([E_tgt[y_prev]; c], s)` and
//! `logits = W_o [s'; c] + b_o`. The value head is a linear map of `[s'; c]`;
//! its loss may or may not be propagated into the shared layers.
//!
//! GRU gates (rows of the stacked matrices, in order z, r, n):
//! `z = σ(W_z x + U_z h + b_z)`, `r = σ(W_r x + U_r h + b_r)`,
//! `n = tanh(W_n x + U_n (r ⊙ h) + b_n)`, `h' = (1 - z) ⊙ n + z ⊙ h`.

use ndarray::linalg::general_mat_mul;
use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::params::PolicyParams;
use crate::textcore::BOS;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// In-place numerically stable softmax; returns the log-normalizer.
pub(crate) fn softmax_in_place(v: &mut [f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    v.iter_mut().for_each(|x| *x /= sum);
    max + sum.ln()
}

struct GruOut {
    z: Array1<f64>,
    r: Array1<f64>,
    n: Array1<f64>,
    h: Array1<f64>,
}

/// `xw` is the already-projected input `W x + b`.
fn gru_forward(wh: &Array2<f64>, xw: ArrayView1<f64>, h: ArrayView1<f64>) -> GruOut {
    let hd = h.len();
    let zr = wh.slice(s![..2 * hd, ..]).dot(&h);
    let z = Array1::from_shape_fn(hd, |i| sigmoid(xw[i] + zr[i]));
    let r = Array1::from_shape_fn(hd, |i| sigmoid(xw[hd + i] + zr[hd + i]));
    let rh = &r * &h;
    let un = wh.slice(s![2 * hd.., ..]).dot(&rh);
    let n = Array1::from_shape_fn(hd, |i| (xw[2 * hd + i] + un[i]).tanh());
    let h_new = Array1::from_shape_fn(hd, |i| (1.0 - z[i]) * n[i] + z[i] * h[i]);
    GruOut { z, r, n, h: h_new }
}

/// Returns the gradient w.r.t. the stacked pre-activations and the previous
/// hidden state.
fn gru_backward(
    wh: &Array2<f64>,
    h: ArrayView1<f64>,
    z: ArrayView1<f64>,
    r: ArrayView1<f64>,
    n: ArrayView1<f64>,
    dh_new: &Array1<f64>,
) -> (Array1<f64>, Array1<f64>) {
    let hd = h.len();
    let mut da = Array1::zeros(3 * hd);
    let mut dh = Array1::zeros(hd);
    for i in 0..hd {
        let dn = dh_new[i] * (1.0 - z[i]);
        let dz = dh_new[i] * (h[i] - n[i]);
        dh[i] = dh_new[i] * z[i];
        da[2 * hd + i] = dn * (1.0 - n[i] * n[i]);
        da[i] = dz * z[i] * (1.0 - z[i]);
    }
    let d_rh = wh.slice(s![2 * hd.., ..]).t().dot(&da.slice(s![2 * hd..]));
    for i in 0..hd {
        da[hd + i] = d_rh[i] * h[i] * r[i] * (1.0 - r[i]);
        dh[i] += d_rh[i] * r[i];
    }
    dh += &wh.slice(s![..2 * hd, ..]).t().dot(&da.slice(s![..2 * hd]));
    (da, dh)
}

/// Cached encoder activations.
pub(crate) struct EncoderPass {
    pub src: Vec<u32>,
    x: Array2<f64>,
    /// Row 0 is the zero initial state; row `i + 1` follows token `i`.
    h: Array2<f64>,
    z: Array2<f64>,
    r: Array2<f64>,
    n: Array2<f64>,
    /// `W_k h_j` for every encoder state.
    keys: Array2<f64>,
}

impl EncoderPass {
    pub fn states(&self) -> ArrayView2<'_, f64> {
        self.h.slice(s![1.., ..])
    }

    pub fn final_state(&self) -> ArrayView1<'_, f64> {
        self.h.row(self.h.nrows() - 1)
    }
}

/// Activations of one decoder step.
pub(crate) struct DecoderStep {
    pub prev_token: u32,
    alpha: Array1<f64>,
    u: Array2<f64>,
    x: Array1<f64>,
    z: Array1<f64>,
    r: Array1<f64>,
    n: Array1<f64>,
    pub state: Array1<f64>,
    pub ctx: Array1<f64>,
}

impl DecoderStep {
    pub fn features(&self) -> Array1<f64> {
        concatenate![Axis(0), self.state, self.ctx]
    }
}

/// Teacher-forced pass over one `(src, tgt)` sequence.
pub(crate) struct SequencePass {
    pub enc: EncoderPass,
    pub tgt: Vec<u32>,
    steps: Vec<DecoderStep>,
    feats: Array2<f64>,
    pub probs: Array2<f64>,
    pub logp: Vec<f64>,
    pub values: Vec<f64>,
}

impl PolicyParams {
    pub(crate) fn hidden_dim(&self) -> usize {
        self.enc_wh.ncols()
    }

    pub(crate) fn encode(&self, src: &[u32]) -> EncoderPass {
        let hd = self.hidden_dim();
        let sl = src.len();
        let x = self.enc_embed.select(Axis(0), &src.iter().map(|&t| t as usize).collect::<Vec<_>>());
        let xw = x.dot(&self.enc_wx.t()) + &self.enc_b;
        let mut h = Array2::zeros((sl + 1, hd));
        let mut z = Array2::zeros((sl, hd));
        let mut r = Array2::zeros((sl, hd));
        let mut n = Array2::zeros((sl, hd));
        for i in 0..sl {
            let out = gru_forward(&self.enc_wh, xw.row(i), h.row(i));
            h.row_mut(i + 1).assign(&out.h);
            z.row_mut(i).assign(&out.z);
            r.row_mut(i).assign(&out.r);
            n.row_mut(i).assign(&out.n);
        }
        let keys = h.slice(s![1.., ..]).dot(&self.att_wk.t());
        EncoderPass {
            src: src.to_vec(),
            x,
            h,
            z,
            r,
            n,
            keys,
        }
    }

    pub(crate) fn decoder_step(&self, enc: &EncoderPass, prev_state: ArrayView1<f64>, prev_token: u32) -> DecoderStep {
        let q = self.att_wq.dot(&prev_state) + &self.att_b;
        let u = (&enc.keys + &q).mapv(f64::tanh);
        let mut alpha = u.dot(&self.att_v);
        softmax_in_place(alpha.as_slice_mut().expect("contiguous"));
        let ctx = enc.states().t().dot(&alpha);
        let x = concatenate![Axis(0), self.dec_embed.row(prev_token as usize), ctx];
        let xw = self.dec_wx.dot(&x) + &self.dec_b;
        let out = gru_forward(&self.dec_wh, xw.view(), prev_state);
        DecoderStep {
            prev_token,
            alpha,
            u,
            x,
            z: out.z,
            r: out.r,
            n: out.n,
            state: out.h,
            ctx,
        }
    }

    /// Output logits and value estimate of a decoder step.
    pub(crate) fn step_outputs(&self, step: &DecoderStep) -> (Array1<f64>, f64) {
        let feat = step.features();
        let logits = self.out_w.dot(&feat) + &self.out_b;
        let value = self.value_w.dot(&feat) + self.value_b[0];
        (logits, value)
    }

    /// Runs the decoder on `tgt` with teacher forcing (inputs `BOS, tgt[..T-1]`).
    pub(crate) fn forward(&self, src: &[u32], tgt: &[u32]) -> SequencePass {
        let enc = self.encode(src);
        let t_len = tgt.len();
        let hd = self.hidden_dim();
        let mut steps = Vec::with_capacity(t_len);
        let mut feats = Array2::zeros((t_len, 2 * hd));
        let mut state = enc.final_state().to_owned();
        for t in 0..t_len {
            let prev = if t == 0 { BOS } else { tgt[t - 1] };
            let step = self.decoder_step(&enc, state.view(), prev);
            feats.row_mut(t).slice_mut(s![..hd]).assign(&step.state);
            feats.row_mut(t).slice_mut(s![hd..]).assign(&step.ctx);
            state = step.state.clone();
            steps.push(step);
        }
        let mut probs = feats.dot(&self.out_w.t()) + &self.out_b;
        let mut logp = Vec::with_capacity(t_len);
        for (t, mut row) in probs.rows_mut().into_iter().enumerate() {
            let logit = row[tgt[t] as usize];
            let log_norm = softmax_in_place(row.as_slice_mut().expect("contiguous"));
            logp.push(logit - log_norm);
        }
        let values = (feats.dot(&self.value_w) + self.value_b[0]).to_vec();
        SequencePass {
            enc,
            tgt: tgt.to_vec(),
            steps,
            feats,
            probs,
            logp,
            values,
        }
    }

    /// Accumulates into `grads` the gradient of a loss whose derivatives
    /// w.r.t. each step's target log-probability and value are given.
    /// With `detach_value`, the value loss trains only the value head.
    pub(crate) fn backward(
        &self,
        pass: &SequencePass,
        d_logp: &[f64],
        d_value: &[f64],
        detach_value: bool,
        grads: &mut PolicyParams,
    ) {
        let t_len = pass.tgt.len();
        debug_assert_eq!(d_logp.len(), t_len);
        debug_assert_eq!(d_value.len(), t_len);
        if t_len == 0 {
            return;
        }
        let hd = self.hidden_dim();
        let ed = self.dec_embed.ncols();

        // d logits = g (onehot - p)
        let mut dl = pass.probs.clone();
        for (t, mut row) in dl.rows_mut().into_iter().enumerate() {
            row *= -d_logp[t];
            row[pass.tgt[t] as usize] += d_logp[t];
        }
        general_mat_mul(1.0, &dl.t(), &pass.feats, 1.0, &mut grads.out_w);
        grads.out_b += &dl.sum_axis(Axis(0));
        let mut dfeats = dl.dot(&self.out_w);

        let dv = ArrayView1::from(d_value);
        grads.value_w += &pass.feats.t().dot(&dv);
        grads.value_b[0] += dv.sum();
        if !detach_value {
            for (mut row, &g) in dfeats.rows_mut().into_iter().zip(d_value) {
                row.scaled_add(g, &self.value_w);
            }
        }

        let enc = &pass.enc;
        let sl = enc.src.len();
        let enc_states = enc.states();
        let mut da_all = Array2::zeros((t_len, 3 * hd));
        let mut dq_all = Array2::zeros((t_len, self.att_wq.nrows()));
        let mut dc_all = Array2::zeros((t_len, hd));
        let mut alpha_all = Array2::zeros((t_len, sl));
        let mut prev_states = Array2::zeros((t_len, hd));
        let mut rh_all = Array2::zeros((t_len, hd));
        let mut x_all = Array2::zeros((t_len, ed + hd));
        let mut dkeys = Array2::<f64>::zeros((sl, self.att_wk.nrows()));
        let mut ds = Array1::<f64>::zeros(hd);

        for t in (0..t_len).rev() {
            let step = &pass.steps[t];
            let prev_state = if t == 0 {
                enc.final_state()
            } else {
                pass.steps[t - 1].state.view()
            };
            ds += &dfeats.slice(s![t, ..hd]);
            let mut dc = dfeats.slice(s![t, hd..]).to_owned();

            let (da, mut ds_prev) = gru_backward(
                &self.dec_wh,
                prev_state,
                step.z.view(),
                step.r.view(),
                step.n.view(),
                &ds,
            );
            let dx = self.dec_wx.t().dot(&da);
            grads
                .dec_embed
                .row_mut(step.prev_token as usize)
                .scaled_add(1.0, &dx.slice(s![..ed]));
            dc += &dx.slice(s![ed..]);

            // attention
            let dalpha = enc_states.dot(&dc);
            let dot = step.alpha.dot(&dalpha);
            let dscore = Array1::from_shape_fn(sl, |j| step.alpha[j] * (dalpha[j] - dot));
            grads.att_v += &step.u.t().dot(&dscore);
            let mut dpre = step.u.mapv(|u| 1.0 - u * u);
            for (j, mut row) in dpre.rows_mut().into_iter().enumerate() {
                row *= &(&self.att_v * dscore[j]);
            }
            let dq = dpre.sum_axis(Axis(0));
            dkeys += &dpre;
            ds_prev += &self.att_wq.t().dot(&dq);

            da_all.row_mut(t).assign(&da);
            dq_all.row_mut(t).assign(&dq);
            dc_all.row_mut(t).assign(&dc);
            alpha_all.row_mut(t).assign(&step.alpha);
            prev_states.row_mut(t).assign(&prev_state);
            rh_all.row_mut(t).assign(&(&step.r * &prev_state));
            x_all.row_mut(t).assign(&step.x);
            ds = ds_prev;
        }

        general_mat_mul(1.0, &da_all.t(), &x_all, 1.0, &mut grads.dec_wx);
        {
            let mut zr = grads.dec_wh.slice_mut(s![..2 * hd, ..]);
            general_mat_mul(1.0, &da_all.slice(s![.., ..2 * hd]).t(), &prev_states, 1.0, &mut zr);
        }
        {
            let mut nn = grads.dec_wh.slice_mut(s![2 * hd.., ..]);
            general_mat_mul(1.0, &da_all.slice(s![.., 2 * hd..]).t(), &rh_all, 1.0, &mut nn);
        }
        grads.dec_b += &da_all.sum_axis(Axis(0));
        general_mat_mul(1.0, &dq_all.t(), &prev_states, 1.0, &mut grads.att_wq);
        grads.att_b += &dq_all.sum_axis(Axis(0));

        let mut d_enc = alpha_all.t().dot(&dc_all);
        general_mat_mul(1.0, &dkeys.t(), &enc_states, 1.0, &mut grads.att_wk);
        general_mat_mul(1.0, &dkeys, &self.att_wk, 1.0, &mut d_enc);
        {
            let mut last = d_enc.row_mut(sl - 1);
            last += &ds;
        }
        self.encoder_backward(enc, &d_enc, grads);
    }

    fn encoder_backward(&self, enc: &EncoderPass, d_states: &Array2<f64>, grads: &mut PolicyParams) {
        let hd = self.hidden_dim();
        let sl = enc.src.len();
        let mut da_all = Array2::zeros((sl, 3 * hd));
        let mut rh_all = Array2::zeros((sl, hd));
        let mut dh = Array1::<f64>::zeros(hd);
        for i in (0..sl).rev() {
            dh += &d_states.row(i);
            let h_prev = enc.h.row(i);
            let (da, dh_prev) = gru_backward(
                &self.enc_wh,
                h_prev,
                enc.z.row(i),
                enc.r.row(i),
                enc.n.row(i),
                &dh,
            );
            let dx = self.enc_wx.t().dot(&da);
            grads.enc_embed.row_mut(enc.src[i] as usize).scaled_add(1.0, &dx);
            rh_all.row_mut(i).assign(&(&enc.r.row(i) * &h_prev));
            da_all.row_mut(i).assign(&da);
            dh = dh_prev;
        }
        general_mat_mul(1.0, &da_all.t(), &enc.x, 1.0, &mut grads.enc_wx);
        let h_prev = enc.h.slice(s![..sl, ..]);
        {
            let mut zr = grads.enc_wh.slice_mut(s![..2 * hd, ..]);
            general_mat_mul(1.0, &da_all.slice(s![.., ..2 * hd]).t(), &h_prev, 1.0, &mut zr);
        }
        {
            let mut nn = grads.enc_wh.slice_mut(s![2 * hd.., ..]);
            general_mat_mul(1.0, &da_all.slice(s![.., 2 * hd..]).t(), &rh_all, 1.0, &mut nn);
        }
        grads.enc_b += &da_all.sum_axis(Axis(0));
    }
}
