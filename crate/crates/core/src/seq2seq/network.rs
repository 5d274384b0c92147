use ndarray::{s, Array1, Array2, ArrayView1, Axis};

use super::cell::{add_outer, concat, lstm_backward, lstm_forward, t_dot, LstmStep};
use super::{Gradients, Seq2SeqParams};
use crate::error::{Error, Result};
use crate::text::{TokenId, BOS_ID};

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub h: Array1<f64>,
    pub c: Array1<f64>,
}

/// Encoder states `h_1..h_T` plus what the decoder needs from them.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// T x 2H
    pub states: Array2<f64>,
    /// T x A, the key projections `Wk h_j`.
    keys: Array2<f64>,
    pub initial: DecoderState,
}

struct EncoderCache {
    ids: Vec<TokenId>,
    fwd: Vec<LstmStep>,
    /// Indexed by position, not processing order.
    bwd: Vec<LstmStep>,
    init_pre_tanh: Array1<f64>,
    out: EncoderOutput,
}

fn check_ids(params: &Seq2SeqParams, ids: &[TokenId]) -> Result<()> {
    let v = params.dims.vocab;
    match ids.iter().find(|&&id| id >= v) {
        Some(&id) => Err(Error::TokenOutOfRange { id, vocab: v }),
        None => Ok(()),
    }
}

fn encode_cached(params: &Seq2SeqParams, ids: &[TokenId]) -> Result<EncoderCache> {
    if ids.is_empty() {
        return Err(Error::InvalidArgument("encoder input must be non-empty".into()));
    }
    check_ids(params, ids)?;
    let h = params.dims.hidden;
    let t_len = ids.len();
    let zero = Array1::<f64>::zeros(h);

    let mut fwd: Vec<LstmStep> = Vec::with_capacity(t_len);
    for &id in ids {
        let (hp, cp) = match fwd.last() {
            Some(prev) => (prev.h.view(), prev.c.view()),
            None => (zero.view(), zero.view()),
        };
        let step = lstm_forward(&params.enc_fwd, params.embedding.row(id), hp, cp);
        fwd.push(step);
    }
    let mut bwd_rev: Vec<LstmStep> = Vec::with_capacity(t_len);
    for &id in ids.iter().rev() {
        let (hp, cp) = match bwd_rev.last() {
            Some(prev) => (prev.h.view(), prev.c.view()),
            None => (zero.view(), zero.view()),
        };
        let step = lstm_forward(&params.enc_bwd, params.embedding.row(id), hp, cp);
        bwd_rev.push(step);
    }
    bwd_rev.reverse();
    let bwd = bwd_rev;

    let mut states = Array2::zeros((t_len, 2 * h));
    for t in 0..t_len {
        states.slice_mut(s![t, ..h]).assign(&fwd[t].h);
        states.slice_mut(s![t, h..]).assign(&bwd[t].h);
    }
    let keys = states.dot(&params.att_key.t());
    let init_pre_tanh = params.init_w.dot(&bwd[0].h) + &params.init_b;
    let initial = DecoderState {
        h: init_pre_tanh.mapv(f64::tanh),
        c: Array1::zeros(h),
    };
    Ok(EncoderCache {
        ids: ids.to_vec(),
        fwd,
        bwd,
        init_pre_tanh,
        out: EncoderOutput {
            states,
            keys,
            initial,
        },
    })
}

/// Runs the bidirectional encoder; one `2H` state per input position.
pub fn encode_seq(params: &Seq2SeqParams, ids: &[TokenId]) -> Result<EncoderOutput> {
    Ok(encode_cached(params, ids)?.out)
}

struct AttentionStep {
    /// T x A, `tanh(keys + q)`
    u: Array2<f64>,
    alpha: Array1<f64>,
    context: Array1<f64>,
}

fn attend(params: &Seq2SeqParams, enc: &EncoderOutput, s_prev: ArrayView1<'_, f64>) -> AttentionStep {
    let q = params.att_query.dot(&s_prev) + &params.att_bias;
    let mut u = enc.keys.clone();
    u += &q.view().insert_axis(Axis(0));
    u.mapv_inplace(f64::tanh);
    let scores = u.dot(&params.att_v);
    let alpha = softmax(scores.view());
    let context = enc.states.t().dot(&alpha);
    AttentionStep { u, alpha, context }
}

/// Context vector and attention weights for decoder state `s_prev`.
pub fn attention(
    params: &Seq2SeqParams,
    s_prev: ArrayView1<'_, f64>,
    enc: &EncoderOutput,
) -> (Array1<f64>, Array1<f64>) {
    let step = attend(params, enc, s_prev);
    (step.context, step.alpha)
}

pub(crate) fn softmax(x: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = x.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut out = x.mapv(|v| (v - max).exp());
    let sum = out.sum();
    out /= sum;
    out
}

fn log_softmax(x: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = x.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = x.fold(0.0, |acc, &v| acc + (v - max).exp()).ln() + max;
    x.mapv(|v| v - lse)
}

struct DecoderStep {
    y_prev: TokenId,
    att: AttentionStep,
    lstm: LstmStep,
    readout: Array1<f64>,
    log_probs: Array1<f64>,
}

fn decoder_step(params: &Seq2SeqParams, enc: &EncoderOutput, state: &DecoderState, y_prev: TokenId) -> DecoderStep {
    let att = attend(params, enc, state.h.view());
    let emb = params.embedding.row(y_prev);
    let x = concat(&[emb, att.context.view()]);
    let lstm = lstm_forward(&params.dec, x.view(), state.h.view(), state.c.view());
    let readout = concat(&[lstm.h.view(), att.context.view(), emb]);
    let logits = params.out_w.dot(&readout) + &params.out_b;
    let log_probs = log_softmax(logits.view());
    DecoderStep {
        y_prev,
        att,
        lstm,
        readout,
        log_probs,
    }
}

/// One decoder step: new state and the next-token distribution.
pub fn decode_step(
    params: &Seq2SeqParams,
    enc: &EncoderOutput,
    state: &DecoderState,
    y_prev: TokenId,
) -> (DecoderState, Array1<f64>) {
    let (next, log_probs) = decode_step_log(params, enc, state, y_prev);
    (next, log_probs.mapv(f64::exp))
}

pub(crate) fn decode_step_log(
    params: &Seq2SeqParams,
    enc: &EncoderOutput,
    state: &DecoderState,
    y_prev: TokenId,
) -> (DecoderState, Array1<f64>) {
    let step = decoder_step(params, enc, state, y_prev);
    let next = DecoderState {
        h: step.lstm.h,
        c: step.lstm.c,
    };
    (next, step.log_probs)
}

/// Teacher-forced `log p(target | input)`.
pub fn sequence_log_prob(params: &Seq2SeqParams, input: &[TokenId], target: &[TokenId]) -> Result<f64> {
    check_ids(params, target)?;
    let enc = encode_seq(params, input)?;
    let mut state = enc.initial.clone();
    let mut prev = BOS_ID;
    let mut total = 0.0;
    for &y in target {
        let (next, log_probs) = decode_step_log(params, &enc, &state, prev);
        total += log_probs[y];
        state = next;
        prev = y;
    }
    Ok(total)
}

/// Teacher-forced negative log-likelihood `-sum_i log p(y_i | y_<i, input)`
/// and its gradient with respect to every parameter.
pub fn nll_loss(params: &Seq2SeqParams, input: &[TokenId], target: &[TokenId]) -> Result<(f64, Gradients)> {
    let mut grad = Gradients::zeros(params.dims);
    let loss = forward_backward(params, input, target, &mut grad, 1.0)?;
    Ok((loss, grad))
}

/// Adds `scale * d(nll)/d(params)` into `grad` and returns the unscaled NLL.
pub fn forward_backward(
    params: &Seq2SeqParams,
    input: &[TokenId],
    target: &[TokenId],
    grad: &mut Gradients,
    scale: f64,
) -> Result<f64> {
    if target.is_empty() {
        return Err(Error::InvalidArgument("target must be non-empty".into()));
    }
    check_ids(params, target)?;
    let h = params.dims.hidden;
    let e = params.dims.embed;
    let enc_cache = encode_cached(params, input)?;
    let enc = &enc_cache.out;

    // Forward.
    let mut steps: Vec<DecoderStep> = Vec::with_capacity(target.len());
    let mut state = enc.initial.clone();
    let mut prev = BOS_ID;
    let mut loss = 0.0;
    for &y in target {
        let step = decoder_step(params, enc, &state, prev);
        loss -= step.log_probs[y];
        state = DecoderState {
            h: step.lstm.h.clone(),
            c: step.lstm.c.clone(),
        };
        steps.push(step);
        prev = y;
    }
    if scale == 0.0 {
        return Ok(loss);
    }

    // Backward through the decoder.
    let t_len = input.len();
    let mut d_states = Array2::<f64>::zeros((t_len, 2 * h));
    let mut d_keys = Array2::<f64>::zeros((t_len, params.dims.attention));
    let mut ds_next = Array1::<f64>::zeros(h);
    let mut dc_next = Array1::<f64>::zeros(h);
    for (i, step) in steps.iter().enumerate().rev() {
        let mut dlogits = step.log_probs.mapv(f64::exp);
        dlogits[target[i]] -= 1.0;
        dlogits *= scale;
        add_outer(&mut grad.out_w, dlogits.view(), step.readout.view());
        grad.out_b += &dlogits;
        let dreadout = t_dot(&params.out_w, dlogits.view());

        let mut dh = dreadout.slice(s![..h]).to_owned();
        dh += &ds_next;
        let mut dctx = dreadout.slice(s![h..3 * h]).to_owned();
        let mut demb = dreadout.slice(s![3 * h..]).to_owned();

        let (dxh, dc_prev) = lstm_backward(&params.dec, &step.lstm, dh.view(), dc_next.view(), &mut grad.dec);
        demb += &dxh.slice(s![..e]);
        dctx += &dxh.slice(s![e..e + 2 * h]);
        let mut ds_prev = dxh.slice(s![e + 2 * h..]).to_owned();
        grad.embedding.row_mut(step.y_prev).scaled_add(1.0, &demb);

        // Attention.
        let att = &step.att;
        let dalpha = enc.states.dot(&dctx);
        add_outer(&mut d_states, att.alpha.view(), dctx.view());
        let mean = att.alpha.dot(&dalpha);
        let de = &att.alpha * &(dalpha - mean);
        grad.att_v.scaled_add(1.0, &att.u.t().dot(&de));
        let mut dpre = att.u.mapv(|u| 1.0 - u * u);
        dpre *= &params.att_v.view().insert_axis(Axis(0));
        dpre *= &de.view().insert_axis(Axis(1));
        let dq = dpre.sum_axis(Axis(0));
        d_keys += &dpre;
        let s_prev = &step.lstm.xh.slice(s![e + 2 * h..]);
        add_outer(&mut grad.att_query, dq.view(), *s_prev);
        grad.att_bias += &dq;
        ds_prev += &t_dot(&params.att_query, dq.view());

        ds_next = ds_prev;
        dc_next = dc_prev;
    }

    // Decoder initial state; its cell starts at zero so dc_next is dropped.
    let d_init_pre = &ds_next * &enc_cache.init_pre_tanh.mapv(|x| 1.0 - x.tanh().powi(2));
    add_outer(&mut grad.init_w, d_init_pre.view(), enc_cache.bwd[0].h.view());
    grad.init_b += &d_init_pre;
    let d_bwd0 = t_dot(&params.init_w, d_init_pre.view());
    {
        let mut row = d_states.slice_mut(s![0, h..]);
        row += &d_bwd0;
    }

    // Key projections.
    grad.att_key += &d_keys.t().dot(&enc.states);
    d_states += &d_keys.dot(&params.att_key);

    // Encoder, forward direction: position T-1 down to 0.
    let mut dh_carry = Array1::<f64>::zeros(h);
    let mut dc_carry = Array1::<f64>::zeros(h);
    for t in (0..t_len).rev() {
        let dh = &d_states.slice(s![t, ..h]) + &dh_carry;
        let (dxh, dc_prev) = lstm_backward(&params.enc_fwd, &enc_cache.fwd[t], dh.view(), dc_carry.view(), &mut grad.enc_fwd);
        grad.embedding.row_mut(enc_cache.ids[t]).scaled_add(1.0, &dxh.slice(s![..e]));
        dh_carry = dxh.slice(s![e..]).to_owned();
        dc_carry = dc_prev;
    }
    // Backward direction processed T-1 .. 0, so backprop runs 0 .. T-1.
    let mut dh_carry = Array1::<f64>::zeros(h);
    let mut dc_carry = Array1::<f64>::zeros(h);
    for t in 0..t_len {
        let dh = &d_states.slice(s![t, h..]) + &dh_carry;
        let (dxh, dc_prev) = lstm_backward(&params.enc_bwd, &enc_cache.bwd[t], dh.view(), dc_carry.view(), &mut grad.enc_bwd);
        grad.embedding.row_mut(enc_cache.ids[t]).scaled_add(1.0, &dxh.slice(s![..e]));
        dh_carry = dxh.slice(s![e..]).to_owned();
        dc_carry = dc_prev;
    }
    Ok(loss)
}
