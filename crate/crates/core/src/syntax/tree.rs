use std::fmt;

use super::SyntaxError;

/// A rooted, ordered, labeled constituency tree.
///
/// Phrase and part-of-speech nodes carry their tag as `label`. Surface words
/// hang below preterminals as leaves with `is_word` set.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SyntaxTree {
    pub label: String,
    pub children: Vec<SyntaxTree>,
    pub is_word: bool,
}

impl SyntaxTree {
    pub fn node(label: impl Into<String>, children: Vec<SyntaxTree>) -> Self {
        Self {
            label: label.into(),
            children,
            is_word: false,
        }
    }

    pub fn leaf(label: impl Into<String>) -> Self {
        Self::node(label, Vec::new())
    }

    pub fn word(word: impl Into<String>) -> Self {
        Self {
            label: word.into(),
            children: Vec::new(),
            is_word: true,
        }
    }

    pub fn node_count(&self) -> usize {
        1 + self
            .children
            .iter()
            .map(SyntaxTree::node_count)
            .sum::<usize>()
    }

    pub fn has_words(&self) -> bool {
        self.is_word || self.children.iter().any(SyntaxTree::has_words)
    }

    /// Surface words in left-to-right order.
    pub fn words(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_words(&mut out);
        out
    }

    fn collect_words<'a>(&'a self, out: &mut Vec<&'a str>) {
        if self.is_word {
            out.push(&self.label);
        }
        for c in &self.children {
            c.collect_words(out);
        }
    }

    /// Preterminal tags in left-to-right order (nodes directly above words,
    /// or word-free leaves).
    pub fn leaf_tags(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_leaf_tags(&mut out);
        out
    }

    fn collect_leaf_tags<'a>(&'a self, out: &mut Vec<&'a str>) {
        if self.is_word {
            return;
        }
        if self.children.iter().all(|c| c.is_word) {
            out.push(&self.label);
            return;
        }
        for c in &self.children {
            c.collect_leaf_tags(out);
        }
    }

    /// Canonical bracketed form: `(TAG child child)` with single spaces.
    pub fn to_bracketed(&self) -> String {
        let mut s = String::new();
        self.write_bracketed(&mut s);
        s
    }

    fn write_bracketed(&self, out: &mut String) {
        if self.is_word {
            out.push_str(&self.label);
            return;
        }
        out.push('(');
        out.push_str(&self.label);
        for c in &self.children {
            out.push(' ');
            c.write_bracketed(out);
        }
        out.push(')');
    }
}

impl fmt::Display for SyntaxTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_bracketed())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Lex<'a> {
    Open(usize),
    Close(usize),
    Atom(usize, &'a str),
}

fn lex(text: &str) -> Vec<Lex<'_>> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, ch) in text.char_indices() {
        match ch {
            '(' | ')' => {
                if let Some(s) = start.take() {
                    out.push(Lex::Atom(s, &text[s..i]));
                }
                out.push(if ch == '(' {
                    Lex::Open(i)
                } else {
                    Lex::Close(i)
                });
            }
            c if c.is_whitespace() => {
                if let Some(s) = start.take() {
                    out.push(Lex::Atom(s, &text[s..i]));
                }
            }
            _ => {
                if start.is_none() {
                    start = Some(i);
                }
            }
        }
    }
    if let Some(s) = start {
        out.push(Lex::Atom(s, &text[s..]));
    }
    out
}

/// Rewrites a bracketed string with canonical spacing: tokens separated by one
/// space, except none after `(` and none before `)`.
pub fn normalize_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut prev_open = true;
    for tok in lex(text) {
        match tok {
            Lex::Open(_) => {
                if !prev_open {
                    out.push(' ');
                }
                out.push('(');
                prev_open = true;
            }
            Lex::Close(_) => {
                out.push(')');
                prev_open = false;
            }
            Lex::Atom(_, a) => {
                if !prev_open {
                    out.push(' ');
                }
                out.push_str(a);
                prev_open = false;
            }
        }
    }
    out
}

/// Parses a Penn-Treebank style bracketed tree.
///
/// Every `(TAG ...)` group becomes a node; bare atoms after the tag become
/// word leaves.
pub fn parse_bracketed(text: &str) -> Result<SyntaxTree, SyntaxError> {
    let toks = lex(text);
    if toks.is_empty() {
        return Err(SyntaxError::EmptyInput);
    }
    let mut pos = 0;
    let tree = match toks[0] {
        Lex::Open(_) => parse_group(&toks, &mut pos)?,
        Lex::Close(p) => return Err(SyntaxError::UnbalancedBrackets { position: p }),
        Lex::Atom(p, a) => {
            return Err(SyntaxError::StrayToken {
                position: p,
                token: a.to_string(),
            })
        }
    };
    if let Some(t) = toks.get(pos) {
        return Err(match *t {
            Lex::Close(p) => SyntaxError::UnbalancedBrackets { position: p },
            Lex::Open(p) => SyntaxError::StrayToken {
                position: p,
                token: "(".into(),
            },
            Lex::Atom(p, a) => SyntaxError::StrayToken {
                position: p,
                token: a.to_string(),
            },
        });
    }
    Ok(tree)
}

fn parse_group(toks: &[Lex<'_>], pos: &mut usize) -> Result<SyntaxTree, SyntaxError> {
    let open_at = match toks[*pos] {
        Lex::Open(p) => p,
        _ => unreachable!("caller checks for an opening bracket"),
    };
    *pos += 1;
    let label = match toks.get(*pos) {
        Some(Lex::Atom(_, a)) => {
            *pos += 1;
            a.to_string()
        }
        Some(Lex::Open(p)) | Some(Lex::Close(p)) => {
            return Err(SyntaxError::MissingLabel { position: *p })
        }
        None => return Err(SyntaxError::UnbalancedBrackets { position: open_at }),
    };
    let mut children = Vec::new();
    loop {
        match toks.get(*pos) {
            None => return Err(SyntaxError::UnbalancedBrackets { position: open_at }),
            Some(Lex::Close(_)) => {
                *pos += 1;
                break;
            }
            Some(Lex::Open(_)) => children.push(parse_group(toks, pos)?),
            Some(Lex::Atom(_, a)) => {
                children.push(SyntaxTree::word(*a));
                *pos += 1;
            }
        }
    }
    Ok(SyntaxTree::node(label, children))
}

/// Removes every word leaf, keeping preterminal tags in place.
pub fn strip_leaves(tree: &SyntaxTree) -> SyntaxTree {
    SyntaxTree::node(
        tree.label.clone(),
        tree.children
            .iter()
            .filter(|c| !c.is_word)
            .map(strip_leaves)
            .collect(),
    )
}

/// Linearized form of a word-free tree: brackets and tags, one token each.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SyntaxTokenSequence {
    pub tokens: Vec<String>,
}

impl SyntaxTokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(String::as_str)
    }
}

pub fn linearize(tree: &SyntaxTree) -> Result<SyntaxTokenSequence, SyntaxError> {
    fn walk(t: &SyntaxTree, out: &mut Vec<String>) -> Result<(), SyntaxError> {
        if t.is_word {
            return Err(SyntaxError::WordLeafPresent {
                word: t.label.clone(),
            });
        }
        out.push("(".into());
        out.push(t.label.clone());
        for c in &t.children {
            walk(c, out)?;
        }
        out.push(")".into());
        Ok(())
    }
    let mut tokens = Vec::with_capacity(3 * tree.node_count());
    walk(tree, &mut tokens)?;
    Ok(SyntaxTokenSequence { tokens })
}

pub fn delinearize(seq: &SyntaxTokenSequence) -> Result<SyntaxTree, SyntaxError> {
    let mut stack: Vec<SyntaxTree> = Vec::new();
    let mut root = None;
    let mut i = 0;
    let toks = &seq.tokens;
    while i < toks.len() {
        match toks[i].as_str() {
            "(" => {
                let label = toks
                    .get(i + 1)
                    .filter(|t| *t != "(" && *t != ")")
                    .ok_or(SyntaxError::MissingLabel { position: i })?;
                if root.is_some() {
                    return Err(SyntaxError::StrayToken {
                        position: i,
                        token: "(".into(),
                    });
                }
                stack.push(SyntaxTree::leaf(label.clone()));
                i += 2;
            }
            ")" => {
                let done = stack
                    .pop()
                    .ok_or(SyntaxError::UnbalancedBrackets { position: i })?;
                match stack.last_mut() {
                    Some(parent) => parent.children.push(done),
                    None => root = Some(done),
                }
                i += 1;
            }
            other => {
                return Err(SyntaxError::StrayToken {
                    position: i,
                    token: other.to_string(),
                })
            }
        }
    }
    if !stack.is_empty() {
        return Err(SyntaxError::UnbalancedBrackets {
            position: toks.len(),
        });
    }
    root.ok_or(SyntaxError::EmptyInput)
}
