//! Toy supervised stage: a tabular autoregressive token model trained by
//! gradient descent on sequence negative log-likelihood.
//!
//! The next-token distribution is conditioned on `(state, position, previous
//! token)`, which is enough to memorize one target per state. Unseen contexts
//! have all-zero logits.

use std::collections::HashMap;

use crate::error::OptimError;
use crate::parser::Answer;
use crate::policy::{log_softmax, softmax, ToyPolicy};
use crate::reward::Label;

pub const EOS: &str = "<eos>";
const MARKERS: [&str; 8] = [
    "<think>", "</think>", "<location>", "</location>", "<type>", "</type>", "<answer>", "</answer>",
];

/// Splits text into tag markers and whitespace-separated words.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = text;
    while !rest.is_empty() {
        if let Some(m) = MARKERS.iter().find(|m| rest.starts_with(**m)) {
            out.push(m.to_string());
            rest = &rest[m.len()..];
            continue;
        }
        let next = MARKERS
            .iter()
            .filter_map(|m| rest.find(m))
            .min()
            .unwrap_or(rest.len());
        let (words, tail) = rest.split_at(next.max(1).min(rest.len()));
        // a lone '<' that is not a marker still has to advance
        out.extend(words.split_whitespace().map(str::to_string));
        rest = tail;
    }
    out
}

/// Inverse of [`tokenize`] up to whitespace: words are space-separated, tag
/// markers are glued to their neighbours.
pub fn detokenize(tokens: &[String]) -> String {
    let mut out = String::new();
    let mut prev_word = false;
    for t in tokens {
        let is_word = !MARKERS.contains(&t.as_str());
        if is_word && prev_word {
            out.push(' ');
        }
        out.push_str(t);
        prev_word = is_word;
    }
    out
}

/// Canonical target text for a sample: tags for location and type appear only
/// for anomalous labels.
pub fn render_target(think: &str, label: Label, location: Option<&str>, anomaly_type: Option<&str>) -> String {
    match label {
        Label::Normal => format!("<think>{think}</think><answer>{}</answer>", Answer::No.as_str()),
        Label::Anomalous => format!(
            "<think>{think}</think><location>{}</location><type>{}</type><answer>{}</answer>",
            location.unwrap_or_default(),
            anomaly_type.unwrap_or_default(),
            Answer::Yes.as_str()
        ),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Builds a vocabulary from the tokens of `texts`; id 0 is [`EOS`].
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Vocab { tokens: Vec::new(), index: HashMap::new() };
        v.insert(EOS);
        for text in texts {
            for t in tokenize(text) {
                v.insert(&t);
            }
        }
        v
    }

    fn insert(&mut self, token: &str) {
        if !self.index.contains_key(token) {
            self.index.insert(token.to_string(), self.tokens.len());
            self.tokens.push(token.to_string());
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Result<usize, OptimError> {
        self.index
            .get(token)
            .copied()
            .ok_or_else(|| OptimError::OutOfVocabulary(token.to_string()))
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    /// Token ids of `text` followed by [`EOS`].
    pub fn encode(&self, text: &str) -> Result<Vec<usize>, OptimError> {
        let mut ids = tokenize(text)
            .iter()
            .map(|t| self.id(t))
            .collect::<Result<Vec<_>, _>>()?;
        ids.push(0);
        Ok(ids)
    }
}

type Context = (usize, usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceModel {
    vocab: Vocab,
    logits: HashMap<Context, Vec<f64>>,
}

/// One training target: a state id and its token ids (ending in [`EOS`]).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SftSample {
    pub state: usize,
    pub tokens: Vec<usize>,
}

impl SequenceModel {
    pub fn new(vocab: Vocab) -> Self {
        SequenceModel { vocab, logits: HashMap::new() }
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn context(state: usize, position: usize, prev: Option<usize>) -> Context {
        // position 0 uses EOS as the start symbol
        (state, position, prev.unwrap_or(0))
    }

    fn row(&self, ctx: &Context) -> Vec<f64> {
        self.logits
            .get(ctx)
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.vocab.len()])
    }

    /// Overrides the logits of one context; mainly useful for tests.
    pub fn set_logits(&mut self, state: usize, position: usize, prev: Option<usize>, logits: Vec<f64>) {
        assert_eq!(logits.len(), self.vocab.len());
        self.logits.insert(Self::context(state, position, prev), logits);
    }

    pub fn next_token_probs(&self, state: usize, prefix: &[usize]) -> Vec<f64> {
        softmax(&self.row(&Self::context(state, prefix.len(), prefix.last().copied())))
    }

    pub fn sample(&self, state: usize, text: &str) -> Result<SftSample, OptimError> {
        Ok(SftSample { state, tokens: self.vocab.encode(text)? })
    }

    /// `-sum_i log p(token_i | state, tokens_<i)`.
    pub fn nll_ids(&self, state: usize, tokens: &[usize]) -> Result<f64, OptimError> {
        let mut total = 0.0;
        for (i, &t) in tokens.iter().enumerate() {
            if t >= self.vocab.len() {
                return Err(OptimError::OutOfVocabulary(format!("#{t}")));
            }
            let prev = i.checked_sub(1).map(|j| tokens[j]);
            total -= log_softmax(&self.row(&Self::context(state, i, prev)))[t];
        }
        Ok(total)
    }

    pub fn mean_nll(&self, samples: &[SftSample]) -> Result<f64, OptimError> {
        let mut total = 0.0;
        for s in samples {
            total += self.nll_ids(s.state, &s.tokens)?;
        }
        Ok(total / samples.len().max(1) as f64)
    }

    /// Greedy decoding until [`EOS`] or `max_len` tokens.
    pub fn greedy(&self, state: usize, max_len: usize) -> Vec<String> {
        let mut ids: Vec<usize> = Vec::new();
        while ids.len() < max_len {
            let probs = self.next_token_probs(state, &ids);
            let best = probs
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bp), (i, &p)| if p > bp { (i, p) } else { (bi, bp) })
                .0;
            if best == 0 {
                break;
            }
            ids.push(best);
        }
        ids.into_iter().map(|i| self.vocab.token(i).to_string()).collect()
    }

    pub fn greedy_text(&self, state: usize, max_len: usize) -> String {
        detokenize(&self.greedy(state, max_len))
    }

    /// Log-probability of `text` (plus [`EOS`]) given `state`.
    pub fn log_prob(&self, state: usize, text: &str) -> Result<f64, OptimError> {
        Ok(-self.nll_ids(state, &self.vocab.encode(text)?)?)
    }
}

/// Sequence negative log-likelihood of `tokens` (taken as-is, no [`EOS`]
/// appended) for `state`.
pub fn sequence_nll(model: &SequenceModel, state: usize, tokens: &[String]) -> Result<f64, OptimError> {
    let ids = tokens
        .iter()
        .map(|t| model.vocab.id(t))
        .collect::<Result<Vec<_>, _>>()?;
    model.nll_ids(state, &ids)
}

/// Full-batch gradient descent on the mean sequence NLL.
pub fn run_pa_sft(
    model: &SequenceModel,
    dataset: &[SftSample],
    epochs: usize,
    learning_rate: f64,
) -> Result<SequenceModel, OptimError> {
    let mut model = model.clone();
    if dataset.is_empty() || epochs == 0 {
        return Ok(model);
    }
    let v = model.vocab.len();
    for s in dataset {
        if let Some(&t) = s.tokens.iter().find(|&&t| t >= v) {
            return Err(OptimError::OutOfVocabulary(format!("#{t}")));
        }
    }
    let n = dataset.len() as f64;
    for _ in 0..epochs {
        let mut grads: HashMap<Context, Vec<f64>> = HashMap::new();
        for s in dataset {
            for (i, &t) in s.tokens.iter().enumerate() {
                let prev = i.checked_sub(1).map(|j| s.tokens[j]);
                let ctx = SequenceModel::context(s.state, i, prev);
                let p = softmax(&model.row(&ctx));
                let g = grads.entry(ctx).or_insert_with(|| vec![0.0; v]);
                for (gj, pj) in g.iter_mut().zip(&p) {
                    *gj += pj / n;
                }
                g[t] -= 1.0 / n;
            }
        }
        for (ctx, g) in grads {
            let row = model.logits.entry(ctx).or_insert_with(|| vec![0.0; v]);
            for (z, d) in row.iter_mut().zip(g) {
                *z -= learning_rate * d;
            }
        }
    }
    Ok(model)
}

/// Initial policy for the reinforcement stage: each candidate's logit is its
/// sequence log-probability under the supervised model.
pub fn policy_from_model(model: &SequenceModel, action_table: Vec<Vec<String>>) -> Result<ToyPolicy, OptimError> {
    let logits = action_table
        .iter()
        .enumerate()
        .map(|(s, cands)| cands.iter().map(|c| model.log_prob(s, c)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()?;
    ToyPolicy::new(logits, action_table)
}
