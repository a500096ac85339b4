//! Attention seq2seq policy/value network with exact reverse-mode gradients.
//!
//! Encoder: stacked LSTM over the task embeddings, `e_i` = top-layer output.
//! Decoder: stacked LSTM started from the encoder's final states; step `j`
//! consumes `[embed(a_{j-1}); c_j]` (optionally followed by `e_j`) where the context `c_j` attends over the
//! encoder outputs with query `d_{j-1}` (the previous top-layer decoder
//! output, `d_0` being the encoder's final output) and additive score
//! `v . tanh(W_q d + W_k e + b)`. Policy and value heads read `d_j` through
//! separate tanh hidden layers.

use rand::Rng;

use crate::dag::TaskEmbedding;
use crate::error::{Error, Result};
use crate::scalar::{axpy, dot, Scalar};
use crate::sim::Action;

use super::lstm::{lstm_backward, lstm_forward, matvec_add, matvec_t_add, outer_add, LstmCache};
use super::params::{HeadIds, PolicyParams};

/// Row of the action embedding table fed at the first decoding step.
pub const START_TOKEN: usize = 0;

fn token(prev: Option<Action>) -> usize {
    match prev {
        None => START_TOKEN,
        Some(a) => 1 + a.index(),
    }
}

/// Encoder pass over one task sequence.
#[derive(Debug, Clone)]
pub struct Encoded<T> {
    outputs: Vec<Vec<T>>,
    keys: Vec<Vec<T>>,
    steps: Vec<Vec<LstmCache<T>>>,
    final_h: Vec<Vec<T>>,
    final_c: Vec<Vec<T>>,
}

impl<T: Scalar> Encoded<T> {
    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    /// Encoder outputs `e_1..e_n`.
    pub fn outputs(&self) -> &[Vec<T>] {
        &self.outputs
    }
}

pub fn encode<T: Scalar>(p: &PolicyParams<T>, inputs: &[TaskEmbedding]) -> Result<Encoded<T>> {
    let cfg = p.config();
    if inputs.is_empty() {
        return Err(Error::Shape("empty task sequence".into()));
    }
    if let Some(bad) = inputs.iter().find(|e| e.0.len() != cfg.input_width) {
        return Err(Error::Shape(format!(
            "embedding width {} but network expects {}",
            bad.0.len(),
            cfg.input_width
        )));
    }
    let idx = &p.layout().index;
    let hsz = cfg.hidden;
    let mut h = vec![vec![T::zero(); hsz]; cfg.layers];
    let mut c = vec![vec![T::zero(); hsz]; cfg.layers];
    let mut outputs = Vec::with_capacity(inputs.len());
    let mut steps = Vec::with_capacity(inputs.len());
    for emb in inputs {
        let mut x: Vec<T> = emb.0.iter().map(|&v| T::of(v)).collect();
        let mut layers = Vec::with_capacity(cfg.layers);
        for (l, ids) in idx.encoder.iter().enumerate() {
            let cache = lstm_forward(p, ids, cfg.layer_norm, &x, &h[l], &c[l]);
            h[l].clone_from(&cache.h);
            c[l].clone_from(&cache.c);
            x = cache.h.clone();
            layers.push(cache);
        }
        outputs.push(x);
        steps.push(layers);
    }
    let keys = outputs
        .iter()
        .map(|e| {
            let mut k = p.get(idx.att_bias).to_vec();
            matvec_add(p.get(idx.att_key), e, &mut k);
            k
        })
        .collect();
    Ok(Encoded {
        outputs,
        keys,
        steps,
        final_h: h,
        final_c: c,
    })
}

#[derive(Debug, Clone)]
struct HeadCache<T> {
    hidden: Vec<T>,
}

fn head_forward<T: Scalar>(p: &PolicyParams<T>, ids: &HeadIds, d: &[T], out: &mut [T]) -> HeadCache<T> {
    let mut hidden = p.get(ids.b1).to_vec();
    matvec_add(p.get(ids.w1), d, &mut hidden);
    for v in &mut hidden {
        *v = v.tanh();
    }
    out.copy_from_slice(p.get(ids.b2));
    matvec_add(p.get(ids.w2), &hidden, out);
    HeadCache { hidden }
}

fn head_backward<T: Scalar>(
    p: &PolicyParams<T>,
    grad: &mut PolicyParams<T>,
    ids: &HeadIds,
    cache: &HeadCache<T>,
    d: &[T],
    dout: &[T],
    dd: &mut [T],
) {
    if dout.iter().all(|&g| g == T::zero()) {
        return;
    }
    axpy(T::one(), dout, grad.get_mut(ids.b2));
    outer_add(grad.get_mut(ids.w2), dout, &cache.hidden);
    let mut dhid = vec![T::zero(); cache.hidden.len()];
    matvec_t_add(p.get(ids.w2), dout, &mut dhid);
    for (g, &hv) in dhid.iter_mut().zip(&cache.hidden) {
        *g *= T::one() - hv * hv;
    }
    axpy(T::one(), &dhid, grad.get_mut(ids.b1));
    outer_add(grad.get_mut(ids.w1), &dhid, d);
    matvec_t_add(p.get(ids.w1), &dhid, dd);
}

/// Recurrent decoder state between steps.
#[derive(Debug, Clone)]
pub struct DecoderState<T> {
    h: Vec<Vec<T>>,
    c: Vec<Vec<T>>,
    query: Vec<T>,
    step: usize,
}

impl<T: Scalar> DecoderState<T> {
    pub fn start(enc: &Encoded<T>) -> Self {
        DecoderState {
            h: enc.final_h.clone(),
            c: enc.final_c.clone(),
            query: enc.final_h.last().expect("at least one layer").clone(),
            step: 0,
        }
    }

    pub fn step(&self) -> usize {
        self.step
    }
}

/// Everything one decoding step computed.
#[derive(Debug, Clone)]
pub struct StepCache<T> {
    query: Vec<T>,
    /// tanh(W_q d + W_k e_i + b) per encoder position.
    u: Vec<Vec<T>>,
    alpha: Vec<T>,
    context: Vec<T>,
    token: usize,
    layers: Vec<LstmCache<T>>,
    policy_cache: HeadCache<T>,
    value_cache: HeadCache<T>,
    logits: [T; 2],
    probs: [T; 2],
    log_probs: [T; 2],
    value: T,
}

impl<T: Scalar> StepCache<T> {
    pub fn attention(&self) -> &[T] {
        &self.alpha
    }

    pub fn context(&self) -> &[T] {
        &self.context
    }

    /// Decoder output `d_j`.
    pub fn output(&self) -> &[T] {
        &self.layers.last().expect("at least one layer").h
    }

    pub fn logits(&self) -> [T; 2] {
        self.logits
    }

    /// `(pi(local), pi(offload))`
    pub fn probs(&self) -> [T; 2] {
        self.probs
    }

    pub fn log_probs(&self) -> [T; 2] {
        self.log_probs
    }

    pub fn value(&self) -> T {
        self.value
    }
}

pub fn decode_step<T: Scalar>(
    p: &PolicyParams<T>,
    enc: &Encoded<T>,
    state: &mut DecoderState<T>,
    prev: Option<Action>,
) -> StepCache<T> {
    let cfg = p.config();
    let idx = &p.layout().index;

    let mut q = vec![T::zero(); cfg.attention_hidden];
    matvec_add(p.get(idx.att_query), &state.query, &mut q);
    let v = p.get(idx.att_v);
    let mut u = Vec::with_capacity(enc.len());
    let mut scores = Vec::with_capacity(enc.len());
    for key in &enc.keys {
        let ui: Vec<T> = q.iter().zip(key).map(|(&a, &b)| (a + b).tanh()).collect();
        scores.push(dot(v, &ui));
        u.push(ui);
    }
    let alpha = softmax(&scores);
    let mut context = vec![T::zero(); cfg.hidden];
    for (&a, e) in alpha.iter().zip(&enc.outputs) {
        axpy(a, e, &mut context);
    }

    let tok = token(prev);
    let e = cfg.action_embed;
    let mut x = Vec::with_capacity(cfg.decoder_input());
    x.extend_from_slice(&p.get(idx.action_embed)[tok * e..(tok + 1) * e]);
    x.extend_from_slice(&context);
    if cfg.aligned_input {
        let own = enc.outputs.get(state.step).expect("decoded past the end of the sequence");
        x.extend_from_slice(own);
    }
    let mut layers = Vec::with_capacity(cfg.layers);
    for (l, ids) in idx.decoder.iter().enumerate() {
        let cache = lstm_forward(p, ids, cfg.layer_norm, &x, &state.h[l], &state.c[l]);
        state.h[l].clone_from(&cache.h);
        state.c[l].clone_from(&cache.c);
        x = cache.h.clone();
        layers.push(cache);
    }
    let d = x;

    let mut logits = [T::zero(); 2];
    let policy_cache = head_forward(p, &idx.policy, &d, &mut logits);
    let mut value = [T::zero(); 1];
    let value_cache = head_forward(p, &idx.value, &d, &mut value);
    let log_probs = log_softmax2(logits);
    let probs = [log_probs[0].exp(), log_probs[1].exp()];

    let query = std::mem::replace(&mut state.query, d);
    state.step += 1;
    StepCache {
        query,
        u,
        alpha,
        context,
        token: tok,
        layers,
        policy_cache,
        value_cache,
        logits,
        probs,
        log_probs,
        value: value[0],
    }
}

pub fn softmax<T: Scalar>(xs: &[T]) -> Vec<T> {
    let m = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let ex: Vec<T> = xs.iter().map(|&x| (x - m).exp()).collect();
    let s = ex.iter().copied().sum::<T>();
    ex.into_iter().map(|x| x / s).collect()
}

fn log_softmax2<T: Scalar>(l: [T; 2]) -> [T; 2] {
    let m = l[0].max(l[1]);
    let lse = m + ((l[0] - m).exp() + (l[1] - m).exp()).ln();
    [l[0] - lse, l[1] - lse]
}

/// Full forward pass with every intermediate kept for `backward`.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    pub encoded: Encoded<T>,
    pub steps: Vec<StepCache<T>>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn attention(&self, step: usize) -> &[T] {
        self.steps[step].attention()
    }

    pub fn policy(&self, step: usize) -> [T; 2] {
        self.steps[step].probs()
    }

    pub fn value(&self, step: usize) -> T {
        self.steps[step].value()
    }
}

/// Runs the decoder with the given decisions fed back as previous actions
/// (teacher forcing). `actions` needs at least `n - 1` entries.
pub fn decode<T: Scalar>(p: &PolicyParams<T>, enc: &Encoded<T>, actions: &[Action]) -> Result<Vec<StepCache<T>>> {
    let n = enc.len();
    if actions.len() + 1 < n || actions.len() > n {
        return Err(Error::Shape(format!(
            "{} actions for a sequence of {n} tasks",
            actions.len()
        )));
    }
    let mut state = DecoderState::start(enc);
    let mut steps = Vec::with_capacity(n);
    for j in 0..n {
        let prev = if j == 0 { None } else { Some(actions[j - 1]) };
        steps.push(decode_step(p, enc, &mut state, prev));
    }
    Ok(steps)
}

pub fn forward<T: Scalar>(
    p: &PolicyParams<T>,
    embeddings: &[TaskEmbedding],
    actions: &[Action],
) -> Result<ForwardTrace<T>> {
    let encoded = encode(p, embeddings)?;
    let steps = decode(p, &encoded, actions)?;
    Ok(ForwardTrace { encoded, steps })
}

/// Upstream gradient of a scalar objective w.r.t. the head outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads<T> {
    pub dlogits: Vec<[T; 2]>,
    pub dvalues: Vec<T>,
}

impl<T: Scalar> HeadGrads<T> {
    pub fn zeros(n: usize) -> Self {
        HeadGrads {
            dlogits: vec![[T::zero(); 2]; n],
            dvalues: vec![T::zero(); n],
        }
    }
}

/// Gradient flowing back into one encoder pass; several decoder passes over
/// the same encoding may accumulate here before one `backward_encoder`.
#[derive(Debug, Clone)]
pub struct EncoderGrad<T> {
    d_outputs: Vec<Vec<T>>,
    d_keys: Vec<Vec<T>>,
    dh_final: Vec<Vec<T>>,
    dc_final: Vec<Vec<T>>,
}

impl<T: Scalar> EncoderGrad<T> {
    pub fn zeros(p: &PolicyParams<T>, enc: &Encoded<T>) -> Self {
        let cfg = p.config();
        EncoderGrad {
            d_outputs: vec![vec![T::zero(); cfg.hidden]; enc.len()],
            d_keys: vec![vec![T::zero(); cfg.attention_hidden]; enc.len()],
            dh_final: vec![vec![T::zero(); cfg.hidden]; cfg.layers],
            dc_final: vec![vec![T::zero(); cfg.hidden]; cfg.layers],
        }
    }
}

/// Backpropagation through time over the decoder steps, accumulating
/// parameter gradients into `grad` and encoder-side gradients into `eg`.
pub fn backward_decoder<T: Scalar>(
    p: &PolicyParams<T>,
    enc: &Encoded<T>,
    steps: &[StepCache<T>],
    heads: &HeadGrads<T>,
    grad: &mut PolicyParams<T>,
    eg: &mut EncoderGrad<T>,
) -> Result<()> {
    if heads.dlogits.len() != steps.len() || heads.dvalues.len() != steps.len() {
        return Err(Error::Shape(format!(
            "head gradients for {} steps, trace has {}",
            heads.dlogits.len(),
            steps.len()
        )));
    }
    let cfg = p.config();
    let idx = &p.layout().index;
    let hsz = cfg.hidden;
    let e = cfg.action_embed;
    let mut dh_next = vec![vec![T::zero(); hsz]; cfg.layers];
    let mut dc_next = vec![vec![T::zero(); hsz]; cfg.layers];
    let mut d_query_next = vec![T::zero(); hsz];

    for (j, s) in steps.iter().enumerate().rev() {
        let d = s.output();
        let mut dtop = std::mem::replace(&mut d_query_next, vec![T::zero(); hsz]);
        head_backward(p, grad, &idx.policy, &s.policy_cache, d, &heads.dlogits[j], &mut dtop);
        head_backward(p, grad, &idx.value, &s.value_cache, d, &heads.dvalues[j..j + 1], &mut dtop);

        let mut dh_above = dtop;
        for l in (0..cfg.layers).rev() {
            let mut dh = dh_above;
            axpy(T::one(), &dh_next[l], &mut dh);
            let (dx, dhp, dcp) = lstm_backward(p, grad, &idx.decoder[l], cfg.layer_norm, &s.layers[l], &dh, &dc_next[l]);
            dh_next[l] = dhp;
            dc_next[l] = dcp;
            dh_above = dx;
        }
        let (d_emb, rest) = dh_above.split_at(e);
        let (d_ctx, d_own) = rest.split_at(hsz);
        axpy(T::one(), d_emb, &mut grad.get_mut(idx.action_embed)[s.token * e..(s.token + 1) * e]);
        if cfg.aligned_input {
            axpy(T::one(), d_own, &mut eg.d_outputs[j]);
        }

        // context = sum_i alpha_i e_i
        let dalpha: Vec<T> = enc.outputs.iter().map(|ei| dot(d_ctx, ei)).collect();
        for (&a, de) in s.alpha.iter().zip(eg.d_outputs.iter_mut()) {
            axpy(a, d_ctx, de);
        }
        let mix = s.alpha.iter().zip(&dalpha).map(|(&a, &g)| a * g).sum::<T>();
        let v = p.get(idx.att_v);
        let mut dq = vec![T::zero(); cfg.attention_hidden];
        for i in 0..enc.len() {
            let ds = s.alpha[i] * (dalpha[i] - mix);
            if ds == T::zero() {
                continue;
            }
            axpy(ds, &s.u[i], grad.get_mut(idx.att_v));
            for (k, &uk) in s.u[i].iter().enumerate() {
                let dpre = ds * v[k] * (T::one() - uk * uk);
                dq[k] += dpre;
                eg.d_keys[i][k] += dpre;
            }
        }
        outer_add(grad.get_mut(idx.att_query), &dq, &s.query);
        matvec_t_add(p.get(idx.att_query), &dq, &mut d_query_next);
    }

    // d_0 is the encoder's final top-layer output
    let top = cfg.layers - 1;
    axpy(T::one(), &d_query_next, &mut eg.dh_final[top]);
    for l in 0..cfg.layers {
        axpy(T::one(), &dh_next[l], &mut eg.dh_final[l]);
        axpy(T::one(), &dc_next[l], &mut eg.dc_final[l]);
    }
    Ok(())
}

pub fn backward_encoder<T: Scalar>(
    p: &PolicyParams<T>,
    enc: &Encoded<T>,
    mut eg: EncoderGrad<T>,
    grad: &mut PolicyParams<T>,
) {
    let cfg = p.config();
    let idx = &p.layout().index;
    for i in 0..enc.len() {
        let dk = &eg.d_keys[i];
        axpy(T::one(), dk, grad.get_mut(idx.att_bias));
        outer_add(grad.get_mut(idx.att_key), dk, &enc.outputs[i]);
        matvec_t_add(p.get(idx.att_key), dk, &mut eg.d_outputs[i]);
    }
    let mut dh_next = eg.dh_final;
    let mut dc_next = eg.dc_final;
    for t in (0..enc.len()).rev() {
        let mut dh_above = std::mem::take(&mut eg.d_outputs[t]);
        for l in (0..cfg.layers).rev() {
            let mut dh = dh_above;
            axpy(T::one(), &dh_next[l], &mut dh);
            let (dx, dhp, dcp) = lstm_backward(p, grad, &idx.encoder[l], cfg.layer_norm, &enc.steps[t][l], &dh, &dc_next[l]);
            dh_next[l] = dhp;
            dc_next[l] = dcp;
            dh_above = dx;
        }
    }
}

/// Accumulates the parameter gradient of the objective whose head
/// gradients are `heads` into `grad`.
pub fn backward<T: Scalar>(
    p: &PolicyParams<T>,
    trace: &ForwardTrace<T>,
    heads: &HeadGrads<T>,
    grad: &mut PolicyParams<T>,
) -> Result<()> {
    let mut eg = EncoderGrad::zeros(p, &trace.encoded);
    backward_decoder(p, &trace.encoded, &trace.steps, heads, grad, &mut eg)?;
    backward_encoder(p, &trace.encoded, eg, grad);
    Ok(())
}

/// Draws an action from `(pi(local), pi(offload))`; returns it with its
/// log-probability.
pub fn sample_from<T: Scalar>(log_probs: [T; 2], rng: &mut impl Rng) -> (Action, T) {
    let p1 = log_probs[1].exp().as_f64();
    let a = Action::from_bit(rng.gen::<f64>() < p1);
    (a, log_probs[a.index()])
}

/// Argmax with ties going to local execution.
pub fn greedy_from<T: Scalar>(probs: [T; 2]) -> Action {
    Action::from_bit(probs[1] > probs[0])
}

pub fn sample_action<T: Scalar>(trace: &ForwardTrace<T>, step: usize, rng: &mut impl Rng) -> (Action, T) {
    sample_from(trace.steps[step].log_probs(), rng)
}

pub fn greedy_action<T: Scalar>(trace: &ForwardTrace<T>, step: usize) -> Action {
    greedy_from(trace.steps[step].probs())
}

/// Greedy decoding: each decision is fed back as the next step's input.
pub fn greedy_decode<T: Scalar>(p: &PolicyParams<T>, embeddings: &[TaskEmbedding]) -> Result<Vec<Action>> {
    let enc = encode(p, embeddings)?;
    let mut state = DecoderState::start(&enc);
    let mut prev = None;
    let mut out = Vec::with_capacity(enc.len());
    for _ in 0..enc.len() {
        let s = decode_step(p, &enc, &mut state, prev);
        let a = greedy_from(s.probs());
        out.push(a);
        prev = Some(a);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{NetConfig, ParamLayout};
    use crate::rng;
    use rand::Rng;

    fn embeddings(n: usize, width: usize, seed: u64) -> Vec<TaskEmbedding> {
        let mut r = rng::stream(seed, &[]);
        (0..n)
            .map(|_| TaskEmbedding((0..width).map(|_| r.gen_range(-1.0..1.0)).collect()))
            .collect()
    }

    fn random_params(cfg: &NetConfig, seed: u64, scale: f64) -> PolicyParams<f64> {
        let layout = ParamLayout::new(cfg).unwrap();
        let mut r = rng::stream(seed, &[1]);
        let data = (0..layout.total()).map(|_| r.gen_range(-scale..scale)).collect();
        PolicyParams::from_flat(layout, data).unwrap()
    }

    fn actions(bits: &[u8]) -> Vec<Action> {
        bits.iter().map(|&b| Action::from_bit(b == 1)).collect()
    }

    #[test]
    fn zero_parameters_give_uniform_outputs() {
        let cfg = NetConfig::small(6, 5);
        let p = PolicyParams::<f64>::zeros(ParamLayout::new(&cfg).unwrap());
        let t = forward(&p, &embeddings(4, 6, 1), &actions(&[1, 0, 1])).unwrap();
        for j in 0..4 {
            assert!(t.steps[j].output().iter().all(|&x| x == 0.0));
            assert!(t.attention(j).iter().all(|&a| a == 0.25));
            assert_eq!(t.policy(j), [0.5, 0.5]);
            assert_eq!(t.value(j), 0.0);
        }
        assert!(t.encoded.outputs().iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn singleton_attention() {
        let cfg = NetConfig::small(6, 5);
        let p = random_params(&cfg, 3, 0.5);
        let t = forward(&p, &embeddings(1, 6, 2), &[]).unwrap();
        assert_eq!(t.attention(0), &[1.0]);
    }

    #[test]
    fn normalization_holds() {
        let cfg = NetConfig::small(6, 7);
        for seed in 0..10 {
            let p = random_params(&cfg, seed, 1.0);
            let t = forward(&p, &embeddings(6, 6, seed), &actions(&[0, 1, 1, 0, 1, 0])).unwrap();
            for j in 0..6 {
                assert!((t.attention(j).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                let [a, b] = t.policy(j);
                assert!((a + b - 1.0).abs() < 1e-12);
                assert!(t.value(j).is_finite());
            }
        }
    }

    #[test]
    fn shape_errors() {
        let cfg = NetConfig::small(6, 4);
        let p = random_params(&cfg, 0, 0.1);
        assert!(forward(&p, &embeddings(3, 5, 0), &actions(&[0, 0])).is_err());
        assert!(forward(&p, &[], &[]).is_err());
        assert!(forward(&p, &embeddings(3, 6, 0), &actions(&[0])).is_err());
        assert!(forward(&p, &embeddings(3, 6, 0), &actions(&[0, 0, 0, 0])).is_err());
    }

    #[test]
    fn heads_are_separate() {
        let cfg = NetConfig::small(6, 5);
        let p = random_params(&cfg, 5, 0.5);
        let emb = embeddings(4, 6, 5);
        let acts = actions(&[1, 1, 0, 0]);
        let base = forward(&p, &emb, &acts).unwrap();
        let idx = p.layout().index.clone();

        let mut pv = p.clone();
        for id in [idx.value.w1, idx.value.b1, idx.value.w2, idx.value.b2] {
            pv.get_mut(id).iter_mut().for_each(|x| *x += 0.3);
        }
        let tv = forward(&pv, &emb, &acts).unwrap();
        let mut pp = p.clone();
        for id in [idx.policy.w1, idx.policy.b1, idx.policy.w2, idx.policy.b2] {
            pp.get_mut(id).iter_mut().for_each(|x| *x -= 0.3);
        }
        let tp = forward(&pp, &emb, &acts).unwrap();
        for j in 0..4 {
            assert_eq!(tv.policy(j), base.policy(j));
            assert_ne!(tv.value(j), base.value(j));
            assert_eq!(tp.value(j), base.value(j));
            assert_ne!(tp.policy(j), base.policy(j));
        }
    }

    #[test]
    fn greedy_decode_is_deterministic() {
        let cfg = NetConfig::small(6, 5);
        let p = random_params(&cfg, 9, 1.0);
        let emb = embeddings(7, 6, 9);
        let a = greedy_decode(&p, &emb).unwrap();
        assert_eq!(a, greedy_decode(&p, &emb).unwrap());
        let t = forward(&p, &emb, &a).unwrap();
        for j in 0..7 {
            assert_eq!(greedy_action(&t, j), a[j]);
        }
    }

    #[test]
    fn sampling_rules() {
        let mut r = rng::stream(0, &[]);
        for _ in 0..100 {
            let (a, lp) = sample_from([0.0f64, f64::NEG_INFINITY], &mut r);
            assert_eq!((a, lp), (Action::Local, 0.0));
        }
        let half = [0.5f64.ln(), 0.5f64.ln()];
        let ones = (0..10_000).filter(|_| sample_from(half, &mut r).0 == Action::Offload).count();
        assert!((4700..=5300).contains(&ones), "{ones}");
        assert_eq!(greedy_from([0.4, 0.6]), Action::Offload);
        assert_eq!(greedy_from([0.5, 0.5]), Action::Local);
    }

    fn objective(p: &PolicyParams<f64>, emb: &[TaskEmbedding], acts: &[Action], hg: &HeadGrads<f64>) -> f64 {
        let t = forward(p, emb, acts).unwrap();
        (0..t.len())
            .map(|j| {
                let l = t.steps[j].logits();
                hg.dlogits[j][0] * l[0] + hg.dlogits[j][1] * l[1] + hg.dvalues[j] * t.value(j)
            })
            .sum()
    }

    #[test]
    fn gradient_is_linear_in_upstream() {
        let cfg = NetConfig::small(6, 4);
        let p = random_params(&cfg, 1, 0.4);
        let emb = embeddings(3, 6, 1);
        let acts = actions(&[1, 0, 1]);
        let t = forward(&p, &emb, &acts).unwrap();

        let mut g0 = p.zeros_like();
        backward(&p, &t, &HeadGrads::zeros(3), &mut g0).unwrap();
        assert!(g0.flat().iter().all(|&x| x == 0.0));

        let mut r = rng::stream(4, &[]);
        let mut rand_heads = || HeadGrads {
            dlogits: (0..3).map(|_| [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)]).collect(),
            dvalues: (0..3).map(|_| r.gen_range(-1.0..1.0)).collect(),
        };
        let (a, b) = (rand_heads(), rand_heads());
        let sum = HeadGrads {
            dlogits: a.dlogits.iter().zip(&b.dlogits).map(|(x, y)| [x[0] + y[0], x[1] + y[1]]).collect(),
            dvalues: a.dvalues.iter().zip(&b.dvalues).map(|(x, y)| x + y).collect(),
        };
        let (mut ga, mut gb, mut gs) = (p.zeros_like(), p.zeros_like(), p.zeros_like());
        backward(&p, &t, &a, &mut ga).unwrap();
        backward(&p, &t, &b, &mut gb).unwrap();
        backward(&p, &t, &sum, &mut gs).unwrap();
        ga.add_assign(&gb).unwrap();
        for (x, y) in ga.flat().iter().zip(gs.flat()) {
            assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn matches_finite_differences() {
        for aligned_input in [true, false] {
            check_gradient(&NetConfig {
                aligned_input,
                ..NetConfig::small(6, 4)
            });
        }
    }

    fn check_gradient(cfg: &NetConfig) {
        let p = random_params(cfg, 2, 0.4);
        let emb = embeddings(3, 6, 3);
        let acts = actions(&[0, 1, 1]);
        let mut r = rng::stream(5, &[]);
        let hg = HeadGrads {
            dlogits: (0..3).map(|_| [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)]).collect(),
            dvalues: (0..3).map(|_| r.gen_range(-1.0..1.0)).collect(),
        };
        let t = forward(&p, &emb, &acts).unwrap();
        let mut g = p.zeros_like();
        backward(&p, &t, &hg, &mut g).unwrap();
        let h = 1e-5;
        for i in 0..p.len() {
            let mut plus = p.clone();
            plus.flat_mut()[i] += h;
            let mut minus = p.clone();
            minus.flat_mut()[i] -= h;
            let fd = (objective(&plus, &emb, &acts, &hg) - objective(&minus, &emb, &acts, &hg)) / (2.0 * h);
            let an = g.flat()[i];
            assert!((fd - an).abs() <= 1e-6 * (1.0 + an.abs().max(fd.abs())), "param {i}: {an} vs {fd}");
        }
    }
}
