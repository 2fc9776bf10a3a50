//! Paraphrase channel: weighted-candidate sampling (beam-1 / top-K / nucleus),
//! a bundled pivot lexicon that composes a forward and a backward hop,
//! a substitution-only generator, the word-order-drift filter, and the
//! prompt template for an external paraphrasing model (rendered only —
//! never executed here).

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::vocab::Vocab;
use crate::error::{AmpsError, Result};
use crate::model::UNK;

// ── Candidate sampling ──────────────────────────────────────────────────────

/// How a hop chooses among weighted candidates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Sampling {
    /// Deterministic: highest weight wins (first on ties).
    Beam1,
    /// Sample from the K heaviest candidates (K capped to the candidate
    /// count), renormalized.
    TopK(usize),
    /// Sample from the smallest heavy prefix whose mass reaches P·total.
    Nucleus(f64),
}

/// Indices eligible under `mode`, ordered by descending weight (stable: equal
/// weights keep their original relative order).
pub fn eligible_indices(weights: &[f64], mode: Sampling) -> Vec<usize> {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        weights[b]
            .partial_cmp(&weights[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    match mode {
        Sampling::Beam1 => order.truncate(1.min(order.len())),
        Sampling::TopK(k) => order.truncate(k.min(order.len())),
        Sampling::Nucleus(p) => {
            let total: f64 = weights.iter().sum();
            let mut mass = 0.0;
            let mut keep = 0;
            for &i in &order {
                mass += weights[i];
                keep += 1;
                if mass >= p * total {
                    break;
                }
            }
            order.truncate(keep);
        }
    }
    order
}

/// Draw one candidate index under `mode`, renormalizing over the eligible set.
pub fn sample_index(weights: &[f64], mode: Sampling, rng: &mut ChaCha8Rng) -> usize {
    let eligible = eligible_indices(weights, mode);
    debug_assert!(!eligible.is_empty());
    if eligible.len() == 1 {
        return eligible[0];
    }
    let total: f64 = eligible.iter().map(|&i| weights[i]).sum();
    let mut r = rng.gen::<f64>() * total;
    for &i in &eligible {
        r -= weights[i];
        if r <= 0.0 {
            return i;
        }
    }
    *eligible.last().unwrap()
}

// ── Providers ───────────────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct Candidate<T> {
    pub item: T,
    pub weight: f64,
}

#[derive(Clone, Debug, Default)]
pub struct ParaphraseOutcome {
    pub tokens: Vec<u32>,
    /// Content words with no lexicon coverage, emitted as UNK.
    pub unk_passthroughs: usize,
}

/// Anything that can rewrite a transcript into a paraphrase.
pub trait Paraphraser {
    fn paraphrase(&self, y: &[u32], seed: u64) -> Result<ParaphraseOutcome>;
}

/// Round-trip lexicon: content word → pivot candidates → source candidates,
/// word by word, order preserved. Backward candidates may span two tokens
/// (compound splits). Function words and specials pass through unchanged.
pub struct PivotLexicon {
    forward: HashMap<u32, Vec<Candidate<usize>>>,
    backward: Vec<Vec<Candidate<Vec<u32>>>>,
    /// Tokens the lexicon is expected to cover; a member with no forward
    /// entry is a coverage gap and becomes UNK. Everything else (function
    /// words, specials) passes through unchanged.
    content: HashSet<u32>,
    pub sampling: Sampling,
}

/// Forward-hop weights. All profiles are strictly decreasing and keep every
/// cumulative sum at least 0.01 away from 0.95 of the total, so nucleus sets
/// are unambiguous under floating-point summation in any order.
const FWD_BASE: [f64; 3] = [0.80, 0.17, 0.03];
const FWD_LEAKY: [f64; 4] = [0.75, 0.15, 0.07, 0.03];
const BWD_PLAIN: [f64; 4] = [0.56, 0.25, 0.15, 0.04];
const BWD_COMPOUND: [f64; 4] = [0.60, 0.22, 0.14, 0.04];

impl PivotLexicon {
    pub fn from_tables(
        forward: HashMap<u32, Vec<Candidate<usize>>>,
        backward: Vec<Vec<Candidate<Vec<u32>>>>,
        content: HashSet<u32>,
        sampling: Sampling,
    ) -> Self {
        PivotLexicon {
            forward,
            backward,
            content,
            sampling,
        }
    }

    /// Bundled synthetic lexicon over a vocabulary's synonym classes. Each
    /// class owns three pivots; the first member of each class leaks a small
    /// amount of mass to the next class's pivot (noisy-translation stand-in),
    /// and each class's third pivot offers a compound two-token candidate.
    pub fn synthetic(vocab: &Vocab, sampling: Sampling) -> Self {
        let classes = vocab.classes();
        let n_classes = classes.len();
        let pivot = |class: usize, j: usize| class * 3 + j;

        let mut forward: HashMap<u32, Vec<Candidate<usize>>> = HashMap::new();
        for (c, members) in classes.iter().enumerate() {
            for (m, &word) in members.iter().enumerate() {
                let cands: Vec<Candidate<usize>> = if m == 0 && n_classes > 1 {
                    let neighbor = (c + 1) % n_classes;
                    vec![
                        Candidate { item: pivot(c, 0), weight: FWD_LEAKY[0] },
                        Candidate { item: pivot(c, 1), weight: FWD_LEAKY[1] },
                        Candidate { item: pivot(neighbor, 0), weight: FWD_LEAKY[2] },
                        Candidate { item: pivot(c, 2), weight: FWD_LEAKY[3] },
                    ]
                } else {
                    (0..3)
                        .map(|j| Candidate {
                            item: pivot(c, j),
                            weight: FWD_BASE[j],
                        })
                        .collect()
                };
                forward.insert(word, cands);
            }
        }

        let funcs = vocab.function_ids();
        let mut backward: Vec<Vec<Candidate<Vec<u32>>>> = Vec::with_capacity(n_classes * 3);
        for (c, members) in classes.iter().enumerate() {
            for j in 0..3 {
                let rot = |k: usize| members[(j + k) % members.len()];
                let cands: Vec<Candidate<Vec<u32>>> = if j == 2 && !funcs.is_empty() {
                    // Compound split: one candidate expands to word + function
                    // word, mimicking loose multi-word back-translations.
                    let f = funcs[c % funcs.len()];
                    vec![
                        Candidate { item: vec![rot(0)], weight: BWD_COMPOUND[0] },
                        Candidate { item: vec![rot(1)], weight: BWD_COMPOUND[1] },
                        Candidate { item: vec![rot(2), f], weight: BWD_COMPOUND[2] },
                        Candidate { item: vec![rot(3)], weight: BWD_COMPOUND[3] },
                    ]
                } else {
                    (0..members.len())
                        .map(|k| Candidate {
                            item: vec![rot(k)],
                            weight: BWD_PLAIN[k.min(BWD_PLAIN.len() - 1)],
                        })
                        .collect()
                };
                backward.push(cands);
            }
        }
        let content: HashSet<u32> = vocab.content_ids().into_iter().collect();
        PivotLexicon::from_tables(forward, backward, content, sampling)
    }

    pub fn forward_candidates(&self, token: u32) -> Option<&[Candidate<usize>]> {
        self.forward.get(&token).map(Vec::as_slice)
    }

    pub fn backward_candidates(&self, pivot: usize) -> Option<&[Candidate<Vec<u32>>]> {
        self.backward.get(pivot).map(Vec::as_slice)
    }

    pub fn n_pivots(&self) -> usize {
        self.backward.len()
    }
}

impl Paraphraser for PivotLexicon {
    fn paraphrase(&self, y: &[u32], seed: u64) -> Result<ParaphraseOutcome> {
        if y.is_empty() {
            return Err(AmpsError::EmptyInput {
                op: "paraphrase",
                what: "transcript",
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = ParaphraseOutcome::default();
        for &tok in y {
            let Some(fwd) = self.forward.get(&tok) else {
                if self.content.contains(&tok) {
                    out.tokens.push(UNK); // coverage gap
                    out.unk_passthroughs += 1;
                } else {
                    out.tokens.push(tok); // function word / special
                }
                continue;
            };
            let fw: Vec<f64> = fwd.iter().map(|c| c.weight).collect();
            let pivot = fwd[sample_index(&fw, self.sampling, &mut rng)].item;
            match self.backward.get(pivot) {
                Some(bwd) if !bwd.is_empty() => {
                    let bw: Vec<f64> = bwd.iter().map(|c| c.weight).collect();
                    let choice = &bwd[sample_index(&bw, self.sampling, &mut rng)];
                    out.tokens.extend_from_slice(&choice.item);
                }
                _ => {
                    out.tokens.push(UNK);
                    out.unk_passthroughs += 1;
                }
            }
        }
        Ok(out)
    }
}

/// Substitution-only paraphrase: each content word is independently replaced
/// by another member of its synonym class with probability `p_sub`; length
/// and positions never change.
pub fn paraphrase_lexsub(y: &[u32], vocab: &Vocab, p_sub: f64, seed: u64) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(y.len());
    for &tok in y {
        let replaced = match vocab.class_of(tok) {
            Some(ci) if rng.gen::<f64>() < p_sub => {
                let members = &vocab.classes()[ci];
                let others: Vec<u32> =
                    members.iter().copied().filter(|&m| m != tok).collect();
                if others.is_empty() {
                    tok
                } else {
                    others[rng.gen_range(0..others.len())]
                }
            }
            _ => tok,
        };
        out.push(replaced);
    }
    out
}

// ── Word-order drift ────────────────────────────────────────────────────────

/// 1 − LCS/max-length over synonym-class-collapsed sequences (specials
/// stripped): 0 for pure synonym substitution, 1 for no shared order at all.
pub fn word_order_drift(y: &[u32], y_prime: &[u32], vocab: &Vocab) -> f64 {
    #[derive(PartialEq, Eq, Clone, Copy)]
    enum Sym {
        Class(usize),
        Word(u32),
    }
    let collapse = |seq: &[u32]| -> Vec<Sym> {
        seq.iter()
            .filter(|&&t| !vocab.is_special(t))
            .map(|&t| match vocab.class_of(t) {
                Some(c) => Sym::Class(c),
                None => Sym::Word(t),
            })
            .collect()
    };
    let a = collapse(y);
    let b = collapse(y_prime);
    match (a.is_empty(), b.is_empty()) {
        (true, true) => return 0.0,
        (true, false) | (false, true) => return 1.0,
        _ => {}
    }
    // Longest common subsequence, O(|a|·|b|).
    let mut dp = vec![0usize; (a.len() + 1) * (b.len() + 1)];
    let w = b.len() + 1;
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            dp[i * w + j] = if a[i - 1] == b[j - 1] {
                dp[(i - 1) * w + j - 1] + 1
            } else {
                dp[(i - 1) * w + j].max(dp[i * w + j - 1])
            };
        }
    }
    let lcs = dp[a.len() * w + b.len()];
    1.0 - lcs as f64 / a.len().max(b.len()) as f64
}

// ── Prompt rendering ────────────────────────────────────────────────────────

const PROMPT_GUIDELINES: [&str; 9] = [
    "Maintain the original sentence structure and word order as much as possible.",
    "Replace at least one word, and aim to replace as many words as feasible with Hindi synonyms or words with similar meanings.",
    "Do not add extra words or elaborate on the description.",
    "Preserve named entities (e.g., proper names, places) in their original form.",
    "Convert ALL numbers to their Hindi word equivalents. This includes dates, years, percentages, and any other numerical values.",
    "Ensure that all replacements are common Hindi words, avoiding obscure or highly technical terms.",
    "If a direct Hindi synonym is not available, use a phrase that conveys the same meaning.",
    "Maintain the original tense and grammatical structure of the sentence.",
    "If the original sentence contains English words commonly used in Hindi, you may keep them unchanged.",
];

/// Render the paraphrasing prompt for an external model. The language slot is
/// filled exactly once; no request is ever issued from this crate.
pub fn render_llm_prompt(sentence: &str, lang: &str) -> Result<String> {
    if sentence.trim().is_empty() {
        return Err(AmpsError::EmptyInput {
            op: "render_llm_prompt",
            what: "sentence",
        });
    }
    let mut out = String::new();
    out.push_str(&format!(
        "Paraphrase the following sentence in {lang}, strictly adhering to these guidelines:\n"
    ));
    for (i, g) in PROMPT_GUIDELINES.iter().enumerate() {
        out.push_str(&format!("{}. {g}\n", i + 1));
    }
    out.push_str(
        "\nIMPORTANT: Double-check that NO numerical digits remain in your paraphrase. \
         All numbers must be written out in Hindi words.\n",
    );
    out.push_str(&format!("\nSentence: {sentence}\n"));
    Ok(out)
}

// ─────────────────────────────────────────────────────────────────────────────
