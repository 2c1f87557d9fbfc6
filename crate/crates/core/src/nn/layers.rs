use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Bound, Init, NnError, ParamId, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

/// Stabilizer under the square root of the modulation network's std.
pub const MN_EPS: f64 = 1e-5;

/// LSTM weights with gate rows ordered (f, i, o, g).
#[derive(Clone, Debug)]
pub struct LstmParams {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmParams {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        init: &mut Init<R>,
    ) -> Self {
        let w_x = store.add(format!("{prefix}.w_x"), init.uniform(&[4 * hidden, input]));
        let w_h = store.add(format!("{prefix}.w_h"), init.uniform(&[4 * hidden, hidden]));
        let mut bias = vec![0.0; 4 * hidden];
        bias[..hidden].fill(1.0);
        let b = store.add(format!("{prefix}.b"), Tensor::vector(bias));
        Self {
            w_x,
            w_h,
            b,
            input,
            hidden,
        }
    }
}

fn cell_update(
    tape: &mut Tape,
    pre: Var,
    hidden: usize,
    c_prev: Var,
) -> Result<(Var, Var), NnError> {
    let sig_part = tape.slice(pre, 0, 0, 3 * hidden)?;
    let sig = tape.sigmoid(sig_part)?;
    let f = tape.slice(sig, 0, 0, hidden)?;
    let i = tape.slice(sig, 0, hidden, hidden)?;
    let o = tape.slice(sig, 0, 2 * hidden, hidden)?;
    let g_part = tape.slice(pre, 0, 3 * hidden, hidden)?;
    let g = tape.tanh(g_part)?;
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    Ok((o, c))
}

/// One LSTM step: `c = σ(f)⊙c_prev + σ(i)⊙tanh(g)`, `h = σ(o)⊙tanh(c)`.
pub fn lstm_step(
    tape: &mut Tape,
    p: &Bound,
    lp: &LstmParams,
    x: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var), NnError> {
    let wx = tape.matvec(p[lp.w_x], x)?;
    lstm_step_projected(tape, p, lp, wx, h_prev, c_prev)
}

/// [`lstm_step`] with the input projection `W_x·x` already computed.
pub fn lstm_step_projected(
    tape: &mut Tape,
    p: &Bound,
    lp: &LstmParams,
    wx: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var), NnError> {
    let wh = tape.matvec(p[lp.w_h], h_prev)?;
    let s = tape.add(wx, wh)?;
    let pre = tape.add(s, p[lp.b])?;
    let (o, c) = cell_update(tape, pre, lp.hidden, c_prev)?;
    let tc = tape.tanh(c)?;
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

/// LSTM step on the concatenation of several input vectors.
pub fn plain_step(
    tape: &mut Tape,
    p: &Bound,
    lp: &LstmParams,
    inputs: &[Var],
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var), NnError> {
    let x = tape.concat(inputs, 0)?;
    lstm_step(tape, p, lp, x, h_prev, c_prev)
}

/// Additive attention weights.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub w_q: ParamId,
    pub w_m: ParamId,
    pub v: ParamId,
    pub b: ParamId,
}

impl AttentionParams {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        query: usize,
        memory: usize,
        width: usize,
        init: &mut Init<R>,
    ) -> Self {
        Self {
            w_q: store.add(format!("{prefix}.w_q"), init.uniform(&[width, query])),
            w_m: store.add(format!("{prefix}.w_m"), init.uniform(&[width, memory])),
            v: store.add(format!("{prefix}.v"), init.uniform(&[width])),
            b: store.add(format!("{prefix}.b"), Tensor::zeros(&[width])),
        }
    }
}

/// Memory rows with their query-independent projection `W_m·m_t + b`.
#[derive(Clone, Debug)]
pub struct AttentionMemory {
    pub rows: Var,
    projected: Var,
    mask: Option<Vec<bool>>,
}

/// Projects a memory [T × H_m] once so that every query reuses it. Rows whose
/// mask entry is false receive zero attention.
pub fn attention_memory(
    tape: &mut Tape,
    p: &Bound,
    ap: &AttentionParams,
    rows: Var,
    mask: Option<Vec<bool>>,
) -> Result<AttentionMemory, NnError> {
    if let Some(m) = &mask {
        if !m.iter().any(|&v| v) {
            return Err(NnError::EmptyMemory);
        }
    }
    let proj = tape.matmul_nt(rows, p[ap.w_m])?;
    let projected = tape.add_row(proj, p[ap.b])?;
    Ok(AttentionMemory {
        rows,
        projected,
        mask,
    })
}

/// Returns `(context, weights)` with `e_t = vᵀ tanh(W_q·q + W_m·m_t + b)`.
pub fn attention(
    tape: &mut Tape,
    p: &Bound,
    ap: &AttentionParams,
    query: Var,
    memory: &AttentionMemory,
) -> Result<(Var, Var), NnError> {
    let q = tape.matvec(p[ap.w_q], query)?;
    let s = tape.add_row(memory.projected, q)?;
    let e = tape.tanh(s)?;
    let scores = tape.matvec(e, p[ap.v])?;
    let weights = tape.softmax_masked(scores, memory.mask.as_deref())?;
    let context = tape.vecmat(weights, memory.rows)?;
    Ok((context, weights))
}

/// Init ranges of the two weight matrices of an [`MlpParams`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpInit {
    pub w1: f64,
    pub w2: f64,
}

/// Two-layer perceptron `W2·tanh(W1·z + b1) + b2`.
#[derive(Clone, Debug)]
pub struct MlpParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl MlpParams {
    /// Weights are uniform in `±scales.w1` and `±scales.w2`; every output
    /// bias equals `out_bias`. With `scales.w2 == 0` the initial output is
    /// constant.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        output: usize,
        out_bias: f64,
        scales: MlpInit,
        init: &mut Init<R>,
    ) -> Self {
        let mut draw = |scale: f64, shape: &[usize]| {
            let saved = std::mem::replace(&mut init.scale, scale);
            let t = init.uniform(shape);
            init.scale = saved;
            t
        };
        Self {
            w1: store.add(format!("{prefix}.w1"), draw(scales.w1, &[hidden, input])),
            b1: store.add(format!("{prefix}.b1"), Tensor::zeros(&[hidden])),
            w2: store.add(format!("{prefix}.w2"), draw(scales.w2, &[output, hidden])),
            b2: store.add(format!("{prefix}.b2"), Tensor::filled(&[output], out_bias)),
        }
    }
}

pub fn mlp(tape: &mut Tape, p: &Bound, m: &MlpParams, z: Var) -> Result<Var, NnError> {
    let a = tape.matvec(p[m.w1], z)?;
    let a = tape.add(a, p[m.b1])?;
    let a = tape.tanh(a)?;
    let o = tape.matvec(p[m.w2], a)?;
    Ok(tape.add(o, p[m.b2])?)
}

/// The (f_γ, f_β) pair for one modulated path.
#[derive(Clone, Debug)]
pub struct MlpPair {
    pub gamma: MlpParams,
    pub beta: MlpParams,
}

impl MlpPair {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        z: usize,
        output: usize,
        scales: MlpInit,
        init: &mut Init<R>,
    ) -> Self {
        Self {
            gamma: MlpParams::new(
                store,
                &format!("{prefix}.gamma"),
                z,
                z,
                output,
                1.0,
                scales,
                init,
            ),
            beta: MlpParams::new(
                store,
                &format!("{prefix}.beta"),
                z,
                z,
                output,
                0.0,
                scales,
                init,
            ),
        }
    }
}

/// Three independent MLP pairs for the h-, x- and c-paths of the decoder.
#[derive(Clone, Debug)]
pub struct ModulationParams {
    pub h: MlpPair,
    pub x: MlpPair,
    pub c: MlpPair,
    /// Normalize each of the four gate blocks separately instead of the whole 4H vector.
    pub per_gate: bool,
}

impl ModulationParams {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        z: usize,
        hidden: usize,
        per_gate: bool,
        scales: MlpInit,
        init: &mut Init<R>,
    ) -> Self {
        Self {
            h: MlpPair::new(store, &format!("{prefix}.h"), z, 4 * hidden, scales, init),
            x: MlpPair::new(store, &format!("{prefix}.x"), z, 4 * hidden, scales, init),
            c: MlpPair::new(store, &format!("{prefix}.c"), z, hidden, scales, init),
            per_gate,
        }
    }
}

/// `γ ⊙ (x − μ)/sqrt(var + ε) + β` with `γ = f_γ(z_s)`, `β = f_β(z_s)`.
/// With `groups > 1` the statistics are taken per contiguous block.
pub fn modulation_network(
    tape: &mut Tape,
    p: &Bound,
    pair: &MlpPair,
    x: Var,
    z_s: Var,
    groups: usize,
) -> Result<Var, NnError> {
    let k = tape.value(x).numel();
    let norm = if groups > 1 {
        let blocks = tape.reshape(x, &[groups, k / groups])?;
        let n = tape.normalize_last(blocks, MN_EPS)?;
        tape.reshape(n, &[k])?
    } else {
        tape.normalize_last(x, MN_EPS)?
    };
    let gamma = mlp(tape, p, &pair.gamma, z_s)?;
    let beta = mlp(tape, p, &pair.beta, z_s)?;
    let scaled = tape.mul(gamma, norm)?;
    Ok(tape.add(scaled, beta)?)
}

/// One syntax-modulated decoder step with input `x_t = [w_prev_emb; z_v]`.
#[allow(clippy::too_many_arguments)]
pub fn smcg_step(
    tape: &mut Tape,
    p: &Bound,
    dec: &LstmParams,
    m: &ModulationParams,
    w_prev_emb: Var,
    z_v: Var,
    z_s: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var), NnError> {
    let groups = if m.per_gate { 4 } else { 1 };
    let x = tape.concat(&[w_prev_emb, z_v], 0)?;
    let wx = tape.matvec(p[dec.w_x], x)?;
    let wh = tape.matvec(p[dec.w_h], h_prev)?;
    let mh = modulation_network(tape, p, &m.h, wh, z_s, groups)?;
    let mx = modulation_network(tape, p, &m.x, wx, z_s, groups)?;
    let s = tape.add(mh, mx)?;
    let pre = tape.add(s, p[dec.b])?;
    let (o, c) = cell_update(tape, pre, dec.hidden, c_prev)?;
    let mc = modulation_network(tape, p, &m.c, c, z_s, 1)?;
    let tc = tape.tanh(mc)?;
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

/// Word output projection `W_g·h + b_g`.
#[derive(Clone, Debug)]
pub struct OutputParams {
    pub w: ParamId,
    pub b: ParamId,
}

impl OutputParams {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        hidden: usize,
        vocab: usize,
        init: &mut Init<R>,
    ) -> Self {
        Self {
            w: store.add(format!("{prefix}.w"), init.uniform(&[vocab, hidden])),
            b: store.add(format!("{prefix}.b"), Tensor::zeros(&[vocab])),
        }
    }

    /// Logits for every row of `states` [T × H], shape [T × V].
    pub fn logits(&self, tape: &mut Tape, p: &Bound, states: Var) -> Result<Var, NnError> {
        let z = tape.matmul_nt(states, p[self.w])?;
        Ok(tape.add_row(z, p[self.b])?)
    }
}

/// `softmax(W_g·h + b_g)`.
pub fn word_distribution(
    tape: &mut Tape,
    p: &Bound,
    out: &OutputParams,
    h: Var,
) -> Result<Var, NnError> {
    let z = tape.matvec(p[out.w], h)?;
    let z = tape.add(z, p[out.b])?;
    Ok(tape.softmax(z)?)
}
