//! Finite-difference checks of every differentiable layer and of the full
//! batch objective, on small randomly initialized instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{total_loss, LossWeights, TrainError};
use crate::model::{DecoderKind, Example, ModelConfig, ModelError, SmcgModel};
use crate::nn::{
    attention, attention_memory, lstm_step, modulation_network, smcg_step, AttentionParams, Bound,
    Init, LstmParams, MlpInit, MlpPair, ModulationParams, OutputParams, ParamStore,
};
use crate::tensor::{grad_check, GradCheckOptions, Tape, Tensor, Var};

/// Names accepted by [`gradcheck_layer`], in reporting order.
pub const GRADCHECK_LAYERS: &[&str] = &[
    "lstm_step",
    "attention",
    "modulation_network",
    "smcg_step",
    "word_output",
    "video_encoder",
    "syntax_encoder",
    "decoder_modulated",
    "decoder_concat",
    "decoder_plain",
    "video_reconstructor",
    "syntax_reconstructor",
    "total_loss",
];

/// Groups of layers selectable as a unit.
pub fn gradcheck_group(module: &str) -> Option<Vec<&'static str>> {
    let pick = |names: &[&'static str]| Some(names.to_vec());
    match module {
        "all" => pick(GRADCHECK_LAYERS),
        "nn" => pick(&GRADCHECK_LAYERS[..5]),
        "model" => pick(&GRADCHECK_LAYERS[5..12]),
        "train" => pick(&GRADCHECK_LAYERS[12..]),
        m => GRADCHECK_LAYERS.iter().find(|&&n| n == m).map(|&n| vec![n]),
    }
}

const WIDTH: usize = 4;

fn opts(seed: u64) -> GradCheckOptions {
    GradCheckOptions {
        samples_per_input: 8,
        seed,
        ..Default::default()
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .expect("positive shape")
}

/// Reduces an output to a scalar with fixed random weights so every
/// coordinate contributes.
fn project(tape: &mut Tape, rng_seed: u64, v: Var) -> Result<Var, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let shape = tape.value(v).shape().to_vec();
    let w = tape.constant(rand_tensor(&mut rng, &shape));
    let y = tape.mul(v, w)?;
    Ok(tape.sum(y)?)
}

/// Checks a layer built from `store` parameters plus `extra` leaves.
fn check_store<F>(
    store: &ParamStore,
    extra: Vec<Tensor>,
    seed: u64,
    f: F,
) -> Result<f64, ModelError>
where
    F: Fn(&mut Tape, &Bound, &[Var]) -> Result<Var, ModelError>,
{
    let n = store.len();
    let mut inputs: Vec<Tensor> = store.iter().map(|(_, t)| t.clone()).collect();
    inputs.extend(extra);
    grad_check(
        |tape, v| {
            let p = Bound::from_vars(v[..n].to_vec());
            f(tape, &p, &v[n..])
        },
        &inputs,
        &opts(seed),
    )
}

const LIVE: MlpInit = MlpInit { w1: 0.5, w2: 0.5 };

fn tiny_model(decoder: DecoderKind, seed: u64) -> SmcgModel {
    let mut cfg = ModelConfig::new(8, 7, 3);
    cfg.hidden = WIDTH;
    cfg.word_embed = 3;
    cfg.syntax_embed = 3;
    cfg.attention = 3;
    cfg.decoder = decoder;
    cfg.init_scale = 0.5;
    cfg.modulation_init = LIVE;
    SmcgModel::new(cfg, seed)
}

fn tiny_example(rng: &mut ChaCha8Rng, frames: usize, syntax: &[usize], words: &[usize]) -> Example {
    Example {
        features: rand_tensor(rng, &[frames, 3]),
        syntax: syntax.to_vec(),
        words: words.to_vec(),
    }
}

fn check_model<F>(model: &SmcgModel, extra: Vec<Tensor>, seed: u64, f: F) -> Result<f64, ModelError>
where
    F: Fn(&mut Tape, &Bound, &[Var]) -> Result<Var, ModelError>,
{
    check_store(&model.store, extra, seed, f)
}

/// Maximum relative gradient error of one named layer.
pub fn gradcheck_layer(name: &str, seed: u64) -> Result<f64, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = WIDTH;
    let mut store = ParamStore::new();
    let err = match name {
        "lstm_step" => {
            let lp = LstmParams::new(
                &mut store,
                "l",
                3,
                h,
                &mut Init {
                    rng: &mut rng,
                    scale: 0.5,
                },
            );
            let extra = vec![
                rand_tensor(&mut rng, &[3]),
                rand_tensor(&mut rng, &[h]),
                rand_tensor(&mut rng, &[h]),
            ];
            check_store(&store, extra, seed, |tape, p, e| {
                let (hh, c) = lstm_step(tape, p, &lp, e[0], e[1], e[2])?;
                let hc = tape.concat(&[hh, c], 0)?;
                project(tape, seed, hc)
            })?
        }
        "attention" => {
            let ap = AttentionParams::new(
                &mut store,
                "a",
                3,
                h,
                5,
                &mut Init {
                    rng: &mut rng,
                    scale: 0.5,
                },
            );
            let extra = vec![rand_tensor(&mut rng, &[3]), rand_tensor(&mut rng, &[4, h])];
            check_store(&store, extra, seed, |tape, p, e| {
                let mem =
                    attention_memory(tape, p, &ap, e[1], Some(vec![true, true, false, true]))?;
                let (ctx, w) = attention(tape, p, &ap, e[0], &mem)?;
                let both = tape.concat(&[ctx, w], 0)?;
                project(tape, seed, both)
            })?
        }
        "modulation_network" => {
            let pair = MlpPair::new(
                &mut store,
                "m",
                h,
                8,
                LIVE,
                &mut Init {
                    rng: &mut rng,
                    scale: 0.5,
                },
            );
            let extra = vec![rand_tensor(&mut rng, &[8]), rand_tensor(&mut rng, &[h])];
            check_store(&store, extra, seed, |tape, p, e| {
                let y = modulation_network(tape, p, &pair, e[0], e[1], 2)?;
                project(tape, seed, y)
            })?
        }
        "smcg_step" => {
            let mut init = Init {
                rng: &mut rng,
                scale: 0.5,
            };
            let dec = LstmParams::new(&mut store, "d", 5, h, &mut init);
            let m = ModulationParams::new(&mut store, "mn", 3, h, false, LIVE, &mut init);
            let extra = [2, 3, 3, h, h]
                .iter()
                .map(|&n| rand_tensor(&mut rng, &[n]))
                .collect();
            check_store(&store, extra, seed, |tape, p, e| {
                let (hh, c) = smcg_step(tape, p, &dec, &m, e[0], e[1], e[2], e[3], e[4])?;
                let hc = tape.concat(&[hh, c], 0)?;
                project(tape, seed, hc)
            })?
        }
        "word_output" => {
            let out = OutputParams::new(
                &mut store,
                "o",
                h,
                6,
                &mut Init {
                    rng: &mut rng,
                    scale: 0.5,
                },
            );
            let extra = vec![rand_tensor(&mut rng, &[3, h])];
            check_store(&store, extra, seed, |tape, p, e| {
                let logits = out.logits(tape, p, e[0])?;
                Ok(tape.cross_entropy(logits, &[1, 5, 2])?)
            })?
        }
        "video_encoder" => {
            let model = tiny_model(DecoderKind::Modulated, seed);
            let extra = vec![rand_tensor(&mut rng, &[3, 3])];
            check_model(&model, extra, seed, |tape, p, e| {
                let states = model.encode_video(tape, p, e[0])?;
                project(tape, seed, states)
            })?
        }
        "syntax_encoder" => {
            let model = tiny_model(DecoderKind::Modulated, seed);
            check_model(&model, Vec::new(), seed, |tape, p, _| {
                let states = model.encode_syntax(tape, p, &[4, 5, 6, 4])?;
                project(tape, seed, states)
            })?
        }
        "decoder_modulated" | "decoder_concat" | "decoder_plain" => {
            let kind = match name {
                "decoder_modulated" => DecoderKind::Modulated,
                "decoder_concat" => DecoderKind::Concat,
                _ => DecoderKind::Plain,
            };
            let model = tiny_model(kind, seed);
            let ex = tiny_example(&mut rng, 2, &[4, 5, 4], &[4, 6, 5]);
            check_model(&model, Vec::new(), seed, |tape, p, _| {
                Ok(model.losses(tape, p, &ex, Default::default())?.caption)
            })?
        }
        "video_reconstructor" => {
            let model = tiny_model(DecoderKind::Modulated, seed);
            let extra = vec![
                rand_tensor(&mut rng, &[4, h]),
                rand_tensor(&mut rng, &[3, 3]),
            ];
            check_model(&model, extra, seed, |tape, p, e| {
                let r = model.reconstruct_video(tape, p, e[0], 3)?;
                let d = tape.euclidean_rows(e[1], r)?;
                Ok(tape.sum(d)?)
            })?
        }
        "syntax_reconstructor" => {
            let model = tiny_model(DecoderKind::Modulated, seed);
            let extra = vec![rand_tensor(&mut rng, &[4, h])];
            check_model(&model, extra, seed, |tape, p, e| {
                let logits = model.reconstruct_syntax(tape, p, e[0], 3)?;
                Ok(tape.cross_entropy(logits, &[4, 6, 5])?)
            })?
        }
        "total_loss" => {
            let model = tiny_model(DecoderKind::Modulated, seed);
            let a = tiny_example(&mut rng, 2, &[4, 5, 4], &[4, 6]);
            let b = tiny_example(&mut rng, 3, &[5, 6, 6, 4], &[7, 5, 4]);
            let weights = LossWeights {
                alpha: 1.0,
                lambda: 1.0,
                eta: 4.0,
            };
            check_model(&model, Vec::new(), seed, |tape, p, _| {
                Ok(total_loss(&model, tape, p, &[&a, &b], weights, 2)?.0)
            })?
        }
        other => {
            return Err(TrainError::Config(format!(
                "unknown gradcheck target {other:?}"
            )))
        }
    };
    Ok(err)
}
