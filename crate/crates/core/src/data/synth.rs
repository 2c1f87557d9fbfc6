//! Toy captioning world: videos are noisy codes of (agent, action, object)
//! triples and captions render the triple through one of several fixed
//! constituency templates.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{dataset_to_string, write_atomic, CaptionInstance, DataError, FeatureSource, Sentence};
use crate::syntax::{parse_bracketed, strip_leaves, tree_edit_distance, SyntaxTree};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionForms {
    pub lemma: String,
    pub vbz: String,
    pub vbg: String,
    pub vbn: String,
}

/// A caption pattern: a word-free skeleton plus one slot per preterminal.
/// Slots are literal words or the placeholders `<agent>`, `<object>`,
/// `<vbz>`, `<vbg>`, `<vbn>`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub name: String,
    pub skeleton: String,
    pub slots: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub agents: Vec<String>,
    pub actions: Vec<ActionForms>,
    pub objects: Vec<String>,
    pub templates: Vec<Template>,
    pub feat_dim: usize,
    pub frames: usize,
    /// Per-dimension std of the Gaussian code drawn for each content word.
    pub code_std: f64,
    /// Std of the isotropic Gaussian noise added to every feature value.
    pub noise: f64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub exemplars_per_video: usize,
    pub embed_dim: usize,
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn action(lemma: &str, vbz: &str, vbg: &str, vbn: &str) -> ActionForms {
    ActionForms {
        lemma: lemma.into(),
        vbz: vbz.into(),
        vbg: vbg.into(),
        vbn: vbn.into(),
    }
}

fn template(name: &str, skeleton: &str, slots: &str) -> Template {
    Template {
        name: name.into(),
        skeleton: skeleton.into(),
        slots: words(slots),
    }
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            agents: words("man woman boy girl dog cat chef player child person baby horse"),
            actions: vec![
                action("ride", "rides", "riding", "ridden"),
                action("play", "plays", "playing", "played"),
                action("push", "pushes", "pushing", "pushed"),
                action("carry", "carries", "carrying", "carried"),
                action("throw", "throws", "throwing", "thrown"),
                action("hold", "holds", "holding", "held"),
                action("kick", "kicks", "kicking", "kicked"),
                action("open", "opens", "opening", "opened"),
                action("wash", "washes", "washing", "washed"),
                action("paint", "paints", "painting", "painted"),
            ],
            objects: words("ball guitar car book cake door box bike phone drum apple kite"),
            templates: vec![
                template(
                    "simple",
                    "(ROOT (S (NP (DT) (NN)) (VP (VBZ) (NP (DT) (NN)))))",
                    "a <agent> <vbz> the <object>",
                ),
                template(
                    "progressive",
                    "(ROOT (S (NP (DT) (NN)) (VP (VBZ) (VP (VBG) (NP (DT) (NN))))))",
                    "a <agent> is <vbg> the <object>",
                ),
                template(
                    "passive",
                    "(ROOT (S (NP (DT) (NN)) (VP (VBZ) (VP (VBN) (PP (IN) (NP (DT) (NN)))))))",
                    "a <object> is <vbn> by the <agent>",
                ),
                template(
                    "gerund-fragment",
                    "(ROOT (FRAG (NP (NP (DT) (NN)) (VP (VBG) (NP (DT) (NN))))))",
                    "a <agent> <vbg> the <object>",
                ),
                template(
                    "existential",
                    "(ROOT (S (NP (EX)) (VP (VBZ) (NP (NP (DT) (NN)) (VP (VBG) (NP (DT) (NN)))))))",
                    "there is a <agent> <vbg> the <object>",
                ),
                template(
                    "passive-fragment",
                    "(ROOT (FRAG (NP (NP (DT) (NN)) (VP (VBN) (PP (IN) (NP (DT) (NN)))))))",
                    "a <object> <vbn> by the <agent>",
                ),
            ],
            feat_dim: 32,
            frames: 8,
            code_std: 0.5,
            noise: 0.1,
            train: 2000,
            val: 200,
            test: 200,
            exemplars_per_video: 5,
            embed_dim: 16,
        }
    }
}

/// Indices of one sampled (agent, action, object) triple.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Content {
    pub agent: usize,
    pub action: usize,
    pub object: usize,
}

fn preterminals(t: &SyntaxTree) -> usize {
    if t.children.is_empty() {
        1
    } else {
        t.children.iter().map(preterminals).sum()
    }
}

fn fill(t: &SyntaxTree, words: &mut impl Iterator<Item = String>) -> SyntaxTree {
    if t.children.is_empty() {
        let w = words.next().expect("one word per preterminal");
        SyntaxTree::node(&t.label, vec![SyntaxTree::word(w)])
    } else {
        SyntaxTree::node(
            &t.label,
            t.children.iter().map(|c| fill(c, words)).collect(),
        )
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::SpecInvalid(m));
        if self.agents.is_empty() || self.actions.is_empty() || self.objects.is_empty() {
            return bad("agents, actions and objects must be nonempty".into());
        }
        if self.templates.len() < 2 {
            return bad("at least two templates are required".into());
        }
        if self.feat_dim == 0 || self.frames == 0 || self.embed_dim == 0 {
            return bad("feat_dim, frames and embed_dim must be positive".into());
        }
        if !(self.code_std > 0.0 && self.code_std.is_finite()) {
            return bad("code_std must be a finite positive number".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be a finite nonnegative number".into());
        }
        if self.exemplars_per_video >= self.templates.len() {
            return bad(format!(
                "exemplars_per_video must be below the template count {}",
                self.templates.len()
            ));
        }
        if self.train == 0 {
            return bad("train split must be nonempty".into());
        }
        let mut skeletons = Vec::new();
        for t in &self.templates {
            let tree = parse_bracketed(&t.skeleton)
                .map_err(|e| DataError::SpecInvalid(format!("{}: {e}", t.name)))?;
            if tree.has_words() {
                return bad(format!("{}: skeleton must be word-free", t.name));
            }
            if preterminals(&tree) != t.slots.len() {
                return bad(format!(
                    "{}: slot count differs from preterminal count",
                    t.name
                ));
            }
            skeletons.push(tree);
        }
        for i in 0..skeletons.len() {
            for j in i + 1..skeletons.len() {
                let d = tree_edit_distance(&skeletons[i], &skeletons[j]);
                if d < 2 {
                    return bad(format!(
                        "templates {} and {} are only {d} edits apart",
                        self.templates[i].name, self.templates[j].name
                    ));
                }
            }
        }
        let grammar = SynthGrammar::from_spec(self);
        for t in &self.templates {
            let tags = grammar.template_tags(t);
            if grammar.templates.iter().filter(|g| g.tags == tags).count() > 1 {
                return bad(format!(
                    "{}: tag sequence shared with another template",
                    t.name
                ));
            }
        }
        Ok(())
    }

    fn slot_word(&self, slot: &str, c: Content) -> String {
        let a = &self.actions[c.action];
        match slot {
            "<agent>" => self.agents[c.agent].clone(),
            "<object>" => self.objects[c.object].clone(),
            "<vbz>" => a.vbz.clone(),
            "<vbg>" => a.vbg.clone(),
            "<vbn>" => a.vbn.clone(),
            w => w.to_string(),
        }
    }

    /// Caption text and worded parse for `content` under template `t`.
    pub fn render(&self, t: usize, c: Content) -> Sentence {
        let tpl = &self.templates[t];
        let ws: Vec<String> = tpl.slots.iter().map(|s| self.slot_word(s, c)).collect();
        let skeleton = parse_bracketed(&tpl.skeleton).expect("validated skeleton");
        let tree = fill(&skeleton, &mut ws.clone().into_iter());
        Sentence {
            text: ws.join(" "),
            parse: tree.to_bracketed(),
        }
    }

    pub fn sample_content<R: Rng>(&self, rng: &mut R) -> Content {
        Content {
            agent: rng.gen_range(0..self.agents.len()),
            action: rng.gen_range(0..self.actions.len()),
            object: rng.gen_range(0..self.objects.len()),
        }
    }
}

/// Fixed code vectors for every content token, drawn from N(0, 1/D).
#[derive(Clone, Debug)]
pub struct FeatureCodes {
    pub agents: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub objects: Vec<Vec<f64>>,
}

impl FeatureCodes {
    pub fn new<R: Rng>(spec: &SynthSpec, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, spec.code_std).expect("valid std");
        let mut draw = |n: usize| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| (0..spec.feat_dim).map(|_| normal.sample(rng)).collect())
                .collect()
        };
        Self {
            agents: draw(spec.agents.len()),
            actions: draw(spec.actions.len()),
            objects: draw(spec.objects.len()),
        }
    }

    /// Frame `i` carries the agent, action or object code for `i mod 3`.
    pub fn frame_code(&self, i: usize, c: Content) -> &[f64] {
        match i % 3 {
            0 => &self.agents[c.agent],
            1 => &self.actions[c.action],
            _ => &self.objects[c.object],
        }
    }

    pub fn features<R: Rng>(&self, spec: &SynthSpec, c: Content, rng: &mut R) -> Vec<Vec<f64>> {
        let noise = Normal::new(0.0, spec.noise).expect("valid std");
        (0..spec.frames)
            .map(|i| {
                self.frame_code(i, c)
                    .iter()
                    .map(|&v| {
                        let x = v + if spec.noise > 0.0 {
                            noise.sample(rng)
                        } else {
                            0.0
                        };
                        (x * 1e6).round() / 1e6
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrammarTemplate {
    pub name: String,
    pub tags: Vec<String>,
    pub skeleton: String,
}

/// Deterministic parser for captions of the synthetic world: words are
/// tagged through a lexicon and a tag sequence matching a template yields
/// that template's tree; anything else becomes a flat fragment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthGrammar {
    pub lexicon: BTreeMap<String, String>,
    /// Content word → lemma (verb forms map to their base form).
    pub content: BTreeMap<String, String>,
    pub templates: Vec<GrammarTemplate>,
}

impl SynthGrammar {
    pub fn from_spec(spec: &SynthSpec) -> Self {
        let mut lexicon = BTreeMap::new();
        let mut content = BTreeMap::new();
        for w in spec.agents.iter().chain(&spec.objects) {
            lexicon.insert(w.clone(), "NN".to_string());
            content.insert(w.clone(), w.clone());
        }
        for a in &spec.actions {
            for (form, tag) in [(&a.vbz, "VBZ"), (&a.vbg, "VBG"), (&a.vbn, "VBN")] {
                lexicon.insert(form.clone(), tag.to_string());
                content.insert(form.clone(), a.lemma.clone());
            }
        }
        let mut grammar = Self {
            lexicon,
            content,
            templates: Vec::new(),
        };
        // Literal words take the tag of the preterminal they fill.
        for t in &spec.templates {
            if let Ok(tree) = parse_bracketed(&t.skeleton) {
                for (slot, tag) in t.slots.iter().zip(tree.leaf_tags()) {
                    if !slot.starts_with('<') {
                        grammar
                            .lexicon
                            .entry(slot.clone())
                            .or_insert_with(|| tag.to_string());
                    }
                }
            }
        }
        grammar.templates = spec
            .templates
            .iter()
            .map(|t| GrammarTemplate {
                name: t.name.clone(),
                tags: grammar.template_tags(t),
                skeleton: t.skeleton.clone(),
            })
            .collect();
        grammar
    }

    fn template_tags(&self, t: &Template) -> Vec<String> {
        parse_bracketed(&t.skeleton)
            .map(|tree| tree.leaf_tags().iter().map(|s| s.to_string()).collect())
            .unwrap_or_default()
    }

    pub fn tag(&self, word: &str) -> &str {
        self.lexicon.get(word).map_or("X", String::as_str)
    }

    /// Worded parse tree of a caption.
    pub fn parse<S: AsRef<str>>(&self, words: &[S]) -> SyntaxTree {
        let tags: Vec<&str> = words.iter().map(|w| self.tag(w.as_ref())).collect();
        for t in &self.templates {
            if t.tags.len() == tags.len() && t.tags.iter().zip(&tags).all(|(a, b)| a == b) {
                let skeleton = parse_bracketed(&t.skeleton).expect("valid skeleton");
                return fill(&skeleton, &mut words.iter().map(|w| w.as_ref().to_string()));
            }
        }
        let leaves = words
            .iter()
            .zip(&tags)
            .map(|(w, t)| SyntaxTree::node(*t, vec![SyntaxTree::word(w.as_ref())]))
            .collect();
        SyntaxTree::node("ROOT", vec![SyntaxTree::node("FRAG", leaves)])
    }

    /// Word-free parse of a caption.
    pub fn skeleton<S: AsRef<str>>(&self, words: &[S]) -> SyntaxTree {
        strip_leaves(&self.parse(words))
    }

    pub fn content_lemmas<S: AsRef<str>>(&self, words: &[S]) -> HashSet<String> {
        words
            .iter()
            .filter_map(|w| self.content.get(w.as_ref()).cloned())
            .collect()
    }

    /// Fraction of the reference's content lemmas present in the prediction.
    pub fn content_recall<S: AsRef<str>, T: AsRef<str>>(
        &self,
        prediction: &[S],
        reference: &[T],
    ) -> f64 {
        let want = self.content_lemmas(reference);
        if want.is_empty() {
            return 1.0;
        }
        let have = self.content_lemmas(prediction);
        want.intersection(&have).count() as f64 / want.len() as f64
    }
}

/// Everything one synthetic generation produces.
#[derive(Clone, Debug)]
pub struct SynthData {
    pub train: Vec<CaptionInstance>,
    pub val: Vec<CaptionInstance>,
    pub test: Vec<CaptionInstance>,
    pub grammar: SynthGrammar,
    /// Word-vector file contents covering every word of the world.
    pub embeddings: String,
    pub codes: FeatureCodes,
}

fn make_split<R: Rng>(
    spec: &SynthSpec,
    codes: &FeatureCodes,
    name: &str,
    count: usize,
    rng: &mut R,
) -> Vec<CaptionInstance> {
    (0..count)
        .map(|i| {
            let content = spec.sample_content(rng);
            let gt = rng.gen_range(0..spec.templates.len());
            let rows = codes.features(spec, content, rng);
            let mut others: Vec<usize> = (0..spec.templates.len()).filter(|&t| t != gt).collect();
            others.shuffle(rng);
            let exemplars = others[..spec.exemplars_per_video]
                .iter()
                .map(|&t| {
                    let c = spec.sample_content(rng);
                    spec.render(t, c)
                })
                .collect();
            CaptionInstance {
                video_id: format!("{name}-{i:05}"),
                features: Tensor::from_rows(&rows).expect("rectangular"),
                source: FeatureSource::Inline(rows),
                captions: vec![spec.render(gt, content)],
                exemplars,
            }
        })
        .collect()
}

fn embeddings_text<R: Rng>(spec: &SynthSpec, grammar: &SynthGrammar, rng: &mut R) -> String {
    let normal = Normal::new(0.0, 1.0).expect("valid std");
    let mut vectors: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let base =
        |rng: &mut R| -> Vec<f64> { (0..spec.embed_dim).map(|_| normal.sample(rng)).collect() };
    for w in spec.agents.iter().chain(&spec.objects) {
        let v = base(rng);
        vectors.insert(w.clone(), v);
    }
    for a in &spec.actions {
        let lemma = base(rng);
        for form in [&a.vbz, &a.vbg, &a.vbn] {
            let v = lemma.iter().map(|x| x + 0.3 * normal.sample(rng)).collect();
            vectors.insert(form.clone(), v);
        }
        vectors.insert(a.lemma.clone(), lemma);
    }
    for w in grammar.lexicon.keys() {
        if !vectors.contains_key(w) {
            let v = base(rng);
            vectors.insert(w.clone(), v);
        }
    }
    let mut out = String::new();
    for (w, v) in vectors {
        out.push_str(&w);
        for x in v {
            out.push_str(&format!(" {x:.6}"));
        }
        out.push('\n');
    }
    out
}

pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<SynthData, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let codes = FeatureCodes::new(spec, &mut rng);
    let train = make_split(spec, &codes, "train", spec.train, &mut rng);
    let val = make_split(spec, &codes, "val", spec.val, &mut rng);
    let test = make_split(spec, &codes, "test", spec.test, &mut rng);
    let grammar = SynthGrammar::from_spec(spec);
    let embeddings = embeddings_text(spec, &grammar, &mut rng);
    Ok(SynthData {
        train,
        val,
        test,
        grammar,
        embeddings,
        codes,
    })
}

pub const SYNTH_FILES: [&str; 6] = [
    "train.jsonl",
    "val.jsonl",
    "test.jsonl",
    "grammar.json",
    "embeddings.txt",
    "spec.json",
];

/// Generates and writes the files listed in [`SYNTH_FILES`] into `dir`.
pub fn write_synth(dir: &Path, spec: &SynthSpec, seed: u64) -> Result<SynthData, DataError> {
    let data = synth_generate(spec, seed)?;
    std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    write_atomic(
        &dir.join("train.jsonl"),
        dataset_to_string(&data.train).as_bytes(),
    )?;
    write_atomic(
        &dir.join("val.jsonl"),
        dataset_to_string(&data.val).as_bytes(),
    )?;
    write_atomic(
        &dir.join("test.jsonl"),
        dataset_to_string(&data.test).as_bytes(),
    )?;
    let grammar = serde_json::to_string_pretty(&data.grammar).expect("serializable");
    write_atomic(&dir.join("grammar.json"), grammar.as_bytes())?;
    write_atomic(&dir.join("embeddings.txt"), data.embeddings.as_bytes())?;
    let spec_json = serde_json::to_string_pretty(spec).expect("serializable");
    write_atomic(&dir.join("spec.json"), spec_json.as_bytes())?;
    Ok(data)
}
