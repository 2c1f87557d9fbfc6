//! The full encoder–decoder–reconstructor network: video and syntax
//! encoders, the modulated caption decoder and the two reconstructors.

mod checkpoint;
mod generate;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{tokenize, Vocabularies, BEGIN, END};
use crate::nn::{
    attention, attention_memory, lstm_step, lstm_step_projected, plain_step, smcg_step,
    AttentionMemory, AttentionParams, Bound, Init, LstmParams, MlpInit, ModulationParams, NnError,
    OutputParams, ParamId, ParamStore,
};
use crate::syntax::{syntax_tokens, SyntaxError};
use crate::tensor::{Tape, Tensor, TensorError, Var};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use generate::{generate_predictions, DecodeMode, Parser};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("video has no frames")]
    EmptyVideo,
    #[error("syntax sequence is empty")]
    EmptySequence,
    #[error("target has {len} words, more than the limit {max}")]
    TargetTooLong { len: usize, max: usize },
    #[error("no decoder states to reconstruct from")]
    EmptyDecoderStates,
    #[error("feature width {found}, model expects {expected}")]
    FeatureWidth { expected: usize, found: usize },
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("worker pool: {0}")]
    Workers(String),
}

impl From<TensorError> for ModelError {
    fn from(e: TensorError) -> Self {
        ModelError::Nn(NnError::Tensor(e))
    }
}

/// How the decoder consumes the syntax context.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    /// Gates and cell modulated by the syntax context.
    Modulated,
    /// Syntax context concatenated into a plain LSTM input.
    Concat,
    /// No syntax input at all.
    Plain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub word_vocab: usize,
    pub syntax_vocab: usize,
    pub feat_dim: usize,
    pub hidden: usize,
    pub word_embed: usize,
    pub syntax_embed: usize,
    pub attention: usize,
    pub decoder: DecoderKind,
    /// Normalize each gate block separately inside the modulation network.
    pub per_gate_norm: bool,
    /// Start the decoder from the mean video state instead of zeros.
    pub init_mean_state: bool,
    pub max_len: usize,
    pub init_scale: f64,
    /// Uniform range of the word and syntax embedding tables.
    #[serde(default = "default_embed_scale")]
    pub embed_scale: f64,
    /// Uniform ranges of the modulation MLP weights. The default zero output
    /// layer starts every γ at 1 and β at 0.
    #[serde(default = "default_modulation_init")]
    pub modulation_init: MlpInit,
}

fn default_embed_scale() -> f64 {
    1.0
}

fn default_modulation_init() -> MlpInit {
    MlpInit { w1: 0.08, w2: 0.0 }
}

impl ModelConfig {
    pub fn new(word_vocab: usize, syntax_vocab: usize, feat_dim: usize) -> Self {
        Self {
            word_vocab,
            syntax_vocab,
            feat_dim,
            hidden: 32,
            word_embed: 32,
            syntax_embed: 32,
            attention: 32,
            decoder: DecoderKind::Modulated,
            per_gate_norm: false,
            init_mean_state: false,
            max_len: 30,
            init_scale: 0.08,
            embed_scale: default_embed_scale(),
            modulation_init: default_modulation_init(),
        }
    }
}

#[derive(Clone, Debug)]
struct Layout {
    word_emb: ParamId,
    syn_emb: Option<ParamId>,
    enc_v: LstmParams,
    enc_s: Option<LstmParams>,
    att_v: AttentionParams,
    att_s: Option<AttentionParams>,
    dec: LstmParams,
    modulation: Option<ModulationParams>,
    out: OutputParams,
    rec_v_att: AttentionParams,
    rec_v: LstmParams,
    rec_s_att: AttentionParams,
    rec_s: LstmParams,
    rec_s_out: OutputParams,
}

#[derive(Clone, Debug)]
pub struct SmcgModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    layout: Layout,
}

/// One training pair in id form.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    /// Valid frames only, [m × D_v].
    pub features: Tensor,
    pub syntax: Vec<usize>,
    /// Caption word ids without begin/end markers.
    pub words: Vec<usize>,
}

/// Drops trailing all-zero frames, which mark padding.
pub fn valid_frames(features: &Tensor) -> Result<Tensor, ModelError> {
    let d = features.last_dim();
    let mut m = features.rows();
    while m > 0 && features.row(m - 1).iter().all(|&v| v == 0.0) {
        m -= 1;
    }
    if m == 0 {
        return Err(ModelError::EmptyVideo);
    }
    Ok(Tensor::matrix(m, d, features.data()[..m * d].to_vec())?)
}

impl Example {
    /// Encodes a caption and its parse; the parse doubles as the exemplar.
    pub fn new(
        features: &Tensor,
        caption: &str,
        parse: &str,
        vocabs: &Vocabularies,
    ) -> Result<Self, ModelError> {
        let words = vocabs.words.encode(&tokenize(caption));
        let syntax = vocabs.syntax.encode(&syntax_tokens(parse)?.tokens);
        Ok(Self {
            features: valid_frames(features)?,
            syntax,
            words,
        })
    }
}

/// Which reconstruction losses are active.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reconstruct {
    pub video: bool,
    pub syntax: bool,
}

/// Loss terms for one example as tape scalars.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub caption: Var,
    pub video: Option<Var>,
    pub syntax: Option<Var>,
}

/// Encoder states: video [m × H] and, when the decoder uses syntax, [n × H].
#[derive(Clone, Debug)]
pub struct EncoderOutputs {
    pub video: Var,
    pub syntax: Option<Var>,
}

/// Attention memories and initial state shared by all decoder steps.
pub(crate) struct DecoderContext {
    video: AttentionMemory,
    syntax: Option<AttentionMemory>,
    h0: Var,
    c0: Var,
}

impl SmcgModel {
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init {
            rng: &mut rng,
            scale: config.init_scale,
        };
        let c = &config;
        let h = c.hidden;
        let mut store = ParamStore::new();
        let uses_syntax = c.decoder != DecoderKind::Plain;
        init.scale = c.embed_scale;
        let word_emb = store.add("word_emb", init.uniform(&[c.word_vocab, c.word_embed]));
        let syn_emb = uses_syntax.then(|| {
            store.add(
                "syntax_emb",
                init.uniform(&[c.syntax_vocab, c.syntax_embed]),
            )
        });
        init.scale = c.init_scale;
        let enc_v = LstmParams::new(&mut store, "enc_video", c.feat_dim, h, &mut init);
        let enc_s = uses_syntax
            .then(|| LstmParams::new(&mut store, "enc_syntax", c.syntax_embed, h, &mut init));
        let att_v = AttentionParams::new(&mut store, "att_video", h, h, c.attention, &mut init);
        let att_s = uses_syntax
            .then(|| AttentionParams::new(&mut store, "att_syntax", h, h, c.attention, &mut init));
        let dec_in = match c.decoder {
            DecoderKind::Concat => c.word_embed + 2 * h,
            _ => c.word_embed + h,
        };
        let dec = LstmParams::new(&mut store, "decoder", dec_in, h, &mut init);
        let modulation = (c.decoder == DecoderKind::Modulated).then(|| {
            ModulationParams::new(
                &mut store,
                "modulation",
                h,
                h,
                c.per_gate_norm,
                c.modulation_init,
                &mut init,
            )
        });
        let out = OutputParams::new(&mut store, "word_out", h, c.word_vocab, &mut init);
        let rec_v_att = AttentionParams::new(
            &mut store,
            "rec_video_att",
            c.feat_dim,
            h,
            c.attention,
            &mut init,
        );
        let rec_v = LstmParams::new(&mut store, "rec_video", h, c.feat_dim, &mut init);
        let rec_s_att =
            AttentionParams::new(&mut store, "rec_syntax_att", h, h, c.attention, &mut init);
        let rec_s = LstmParams::new(&mut store, "rec_syntax", h, h, &mut init);
        let rec_s_out =
            OutputParams::new(&mut store, "rec_syntax_out", h, c.syntax_vocab, &mut init);
        Self {
            config,
            store,
            layout: Layout {
                word_emb,
                syn_emb,
                enc_v,
                enc_s,
                att_v,
                att_s,
                dec,
                modulation,
                out,
                rec_v_att,
                rec_v,
                rec_s_att,
                rec_s,
                rec_s_out,
            },
        }
    }

    pub fn uses_syntax(&self) -> bool {
        self.config.decoder != DecoderKind::Plain
    }

    /// Parameters belonging to the video or syntax reconstructor.
    pub fn reconstructor_params(&self, which: Reconstruct) -> Vec<ParamId> {
        self.store
            .ids()
            .filter(|&id| {
                let n = self.store.name(id);
                (which.video && n.starts_with("rec_video"))
                    || (which.syntax && n.starts_with("rec_syntax"))
            })
            .collect()
    }

    /// Rounds every parameter to f32 precision, as stored in checkpoints.
    pub fn round_to_f32(&mut self) {
        for t in self.store.values_mut() {
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v = f64::from(*v as f32));
        }
    }

    fn zeros(tape: &mut Tape, n: usize) -> Var {
        tape.constant(Tensor::zeros(&[n]))
    }

    /// Runs the video LSTM over `features` [m × D_v] from a zero state.
    pub fn encode_video(
        &self,
        tape: &mut Tape,
        p: &Bound,
        features: Var,
    ) -> Result<Var, ModelError> {
        let ft = tape.value(features);
        if ft.last_dim() != self.config.feat_dim {
            return Err(ModelError::FeatureWidth {
                expected: self.config.feat_dim,
                found: ft.last_dim(),
            });
        }
        let lp = &self.layout.enc_v;
        let xw = tape.matmul_nt(features, p[lp.w_x])?;
        self.run_encoder(tape, p, lp, xw)
    }

    fn run_encoder(
        &self,
        tape: &mut Tape,
        p: &Bound,
        lp: &LstmParams,
        xw: Var,
    ) -> Result<Var, ModelError> {
        let steps = tape.value(xw).rows();
        let mut h = Self::zeros(tape, lp.hidden);
        let mut c = Self::zeros(tape, lp.hidden);
        let mut states = Vec::with_capacity(steps);
        for t in 0..steps {
            let wx = tape.row(xw, t)?;
            (h, c) = lstm_step_projected(tape, p, lp, wx, h, c)?;
            states.push(h);
        }
        Ok(tape.stack(&states)?)
    }

    /// Embeds syntax token ids and runs the syntax LSTM.
    pub fn encode_syntax(
        &self,
        tape: &mut Tape,
        p: &Bound,
        ids: &[usize],
    ) -> Result<Var, ModelError> {
        if ids.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        let (Some(emb), Some(lp)) = (self.layout.syn_emb, &self.layout.enc_s) else {
            return Err(ModelError::Checkpoint(
                "decoder takes no syntax input".into(),
            ));
        };
        let e = tape.embedding(p[emb], ids)?;
        let xw = tape.matmul_nt(e, p[lp.w_x])?;
        self.run_encoder(tape, p, lp, xw)
    }

    pub fn encode(
        &self,
        tape: &mut Tape,
        p: &Bound,
        features: Var,
        syntax: &[usize],
    ) -> Result<EncoderOutputs, ModelError> {
        let video = self.encode_video(tape, p, features)?;
        let syntax = if self.uses_syntax() {
            Some(self.encode_syntax(tape, p, syntax)?)
        } else {
            None
        };
        Ok(EncoderOutputs { video, syntax })
    }

    pub(crate) fn decoder_context(
        &self,
        tape: &mut Tape,
        p: &Bound,
        enc: &EncoderOutputs,
    ) -> Result<DecoderContext, ModelError> {
        let l = &self.layout;
        let video = attention_memory(tape, p, &l.att_v, enc.video, None)?;
        let syntax = match (&l.att_s, enc.syntax) {
            (Some(a), Some(s)) => Some(attention_memory(tape, p, a, s, None)?),
            _ => None,
        };
        let h = self.config.hidden;
        let h0 = if self.config.init_mean_state {
            let m = tape.value(enc.video).rows();
            let w = tape.constant(Tensor::filled(&[m], 1.0 / m as f64));
            tape.vecmat(w, enc.video)?
        } else {
            Self::zeros(tape, h)
        };
        let c0 = Self::zeros(tape, h);
        Ok(DecoderContext {
            video,
            syntax,
            h0,
            c0,
        })
    }

    /// One decoder step from the previous word's embedding.
    pub(crate) fn decoder_step(
        &self,
        tape: &mut Tape,
        p: &Bound,
        ctx: &DecoderContext,
        emb: Var,
        h: Var,
        c: Var,
    ) -> Result<(Var, Var), ModelError> {
        let l = &self.layout;
        let (z_v, _) = attention(tape, p, &l.att_v, h, &ctx.video)?;
        let z_s = match (&l.att_s, &ctx.syntax) {
            (Some(a), Some(mem)) => Some(attention(tape, p, a, h, mem)?.0),
            _ => None,
        };
        let out = match (self.config.decoder, z_s) {
            (DecoderKind::Modulated, Some(z_s)) => {
                let m = l
                    .modulation
                    .as_ref()
                    .expect("modulated decoder has modulation params");
                smcg_step(tape, p, &l.dec, m, emb, z_v, z_s, h, c)?
            }
            (DecoderKind::Concat, Some(z_s)) => {
                plain_step(tape, p, &l.dec, &[emb, z_v, z_s], h, c)?
            }
            _ => plain_step(tape, p, &l.dec, &[emb, z_v], h, c)?,
        };
        Ok(out)
    }

    pub(crate) fn word_embedding(
        &self,
        tape: &mut Tape,
        p: &Bound,
        id: usize,
    ) -> Result<Var, ModelError> {
        let e = tape.embedding(p[self.layout.word_emb], &[id])?;
        Ok(tape.reshape(e, &[self.config.word_embed])?)
    }

    pub(crate) fn step_logits(
        &self,
        tape: &mut Tape,
        p: &Bound,
        h: Var,
    ) -> Result<Var, ModelError> {
        let z = tape.matvec(p[self.layout.out.w], h)?;
        Ok(tape.add(z, p[self.layout.out.b])?)
    }

    /// Decodes with the ground-truth previous word at every step. `inputs`
    /// starts with the begin id. Returns logits [T × V_w] and states [T × H].
    pub fn decode_teacher_forced(
        &self,
        tape: &mut Tape,
        p: &Bound,
        enc: &EncoderOutputs,
        inputs: &[usize],
    ) -> Result<(Var, Var), ModelError> {
        if inputs.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        if inputs.len() > self.config.max_len + 1 {
            return Err(ModelError::TargetTooLong {
                len: inputs.len() - 1,
                max: self.config.max_len,
            });
        }
        let ctx = self.decoder_context(tape, p, enc)?;
        let embs = tape.embedding(p[self.layout.word_emb], inputs)?;
        let (mut h, mut c) = (ctx.h0, ctx.c0);
        let mut states = Vec::with_capacity(inputs.len());
        for t in 0..inputs.len() {
            let e = tape.row(embs, t)?;
            (h, c) = self.decoder_step(tape, p, &ctx, e, h, c)?;
            states.push(h);
        }
        let hs = tape.stack(&states)?;
        let logits = self.layout.out.logits(tape, p, hs)?;
        Ok((logits, hs))
    }

    fn reconstruct(
        &self,
        tape: &mut Tape,
        p: &Bound,
        att: &AttentionParams,
        lp: &LstmParams,
        states: Var,
        steps: usize,
    ) -> Result<Var, ModelError> {
        if steps == 0 {
            return Err(ModelError::EmptyDecoderStates);
        }
        let mem = attention_memory(tape, p, att, states, None)?;
        let mut h = Self::zeros(tape, lp.hidden);
        let mut c = Self::zeros(tape, lp.hidden);
        let mut rows = Vec::with_capacity(steps);
        for _ in 0..steps {
            let (z, _) = attention(tape, p, att, h, &mem)?;
            (h, c) = lstm_step(tape, p, lp, z, h, c)?;
            rows.push(h);
        }
        Ok(tape.stack(&rows)?)
    }

    /// Reconstructed video [m × D_v] from decoder states [T × H].
    pub fn reconstruct_video(
        &self,
        tape: &mut Tape,
        p: &Bound,
        states: Var,
        m: usize,
    ) -> Result<Var, ModelError> {
        self.reconstruct(
            tape,
            p,
            &self.layout.rec_v_att,
            &self.layout.rec_v,
            states,
            m,
        )
    }

    /// Syntax-token logits [n × V_s] from decoder states [T × H].
    pub fn reconstruct_syntax(
        &self,
        tape: &mut Tape,
        p: &Bound,
        states: Var,
        n: usize,
    ) -> Result<Var, ModelError> {
        let hs = self.reconstruct(
            tape,
            p,
            &self.layout.rec_s_att,
            &self.layout.rec_s,
            states,
            n,
        )?;
        Ok(self.layout.rec_s_out.logits(tape, p, hs)?)
    }

    /// Caption cross-entropy (summed over steps), mean Euclidean video
    /// reconstruction error and syntax-token cross-entropy for one example.
    pub fn losses(
        &self,
        tape: &mut Tape,
        p: &Bound,
        ex: &Example,
        rec: Reconstruct,
    ) -> Result<LossTerms, ModelError> {
        let features = tape.constant(ex.features.clone());
        let enc = self.encode(tape, p, features, &ex.syntax)?;
        let mut inputs = Vec::with_capacity(ex.words.len() + 1);
        inputs.push(BEGIN);
        inputs.extend_from_slice(&ex.words);
        let mut targets = ex.words.clone();
        targets.push(END);
        let (logits, states) = self.decode_teacher_forced(tape, p, &enc, &inputs)?;
        let caption = tape.cross_entropy(logits, &targets)?;
        let video = if rec.video {
            let m = ex.features.rows();
            let r = self.reconstruct_video(tape, p, states, m)?;
            let d = tape.euclidean_rows(features, r)?;
            let s = tape.sum(d)?;
            Some(tape.scale(s, 1.0 / m as f64)?)
        } else {
            None
        };
        let syntax = if rec.syntax {
            let logits = self.reconstruct_syntax(tape, p, states, ex.syntax.len())?;
            Some(tape.cross_entropy(logits, &ex.syntax)?)
        } else {
            None
        };
        Ok(LossTerms {
            caption,
            video,
            syntax,
        })
    }
}
