//! Synthetic read/spontaneous speech corpus.
//!
//! Transcripts come from a small template grammar over a synthetic
//! vocabulary; frames are synthesized per token ([`frames`]); paraphrases
//! come from a pivot-lexicon round trip or plain synonym substitution
//! ([`paraphrase`]) and are admitted only when their word-order drift stays
//! under a threshold. Everything is a pure function of `(spec, seed)`, and
//! each utterance draws from its own RNG stream keyed by its id.

pub mod frames;
pub mod manifest;
pub mod paraphrase;
pub mod vocab;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use frames::{synthesize_frames, FrameProfile};
pub use manifest::{read_manifest, sidecar_path, write_manifest};
pub use paraphrase::{
    eligible_indices, paraphrase_lexsub, render_llm_prompt, sample_index, word_order_drift,
    Candidate, Paraphraser, ParaphraseOutcome, PivotLexicon, Sampling,
};
pub use vocab::Vocab;

use crate::error::{AmpsError, Result};
use crate::model::EOS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum UttKind {
    Read,
    Spontaneous,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// One synthetic utterance: transcript, optional paraphrase, and frames
/// (row-major, width fixed by the generating profile).
#[derive(Clone, Debug)]
pub struct Utterance {
    pub id: u64,
    pub kind: UttKind,
    pub split: Split,
    /// Token ids; nonempty, ends with EOS.
    pub transcript: Vec<u32>,
    /// Paraphrase token ids; when present: nonempty, ends with EOS, and
    /// within the generation drift threshold of the transcript.
    pub paraphrase: Option<Vec<u32>>,
    pub frames: Vec<f64>,
    pub noise_sigma: f64,
}

/// How paraphrases are produced during generation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ParaphraseMode {
    /// Pivot-lexicon round trip under a sampling mode.
    Roundtrip(Sampling),
    /// Independent same-class substitution with probability `p_sub`.
    LexSub { p_sub: f64 },
}

#[derive(Clone, Debug)]
pub struct CorpusSpec {
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    /// Fraction of utterances drawn as SPONTANEOUS.
    pub spont_frac: f64,
    pub profile: FrameProfile,
    pub mode: ParaphraseMode,
    /// Reject paraphrases with word-order drift above this.
    pub drift_threshold: f64,
    /// Resampling attempts before falling back to the transcript itself.
    pub max_attempts: usize,
}

impl CorpusSpec {
    pub fn desk() -> Self {
        CorpusSpec {
            n_train: 2000,
            n_valid: 200,
            n_test: 300,
            spont_frac: 0.3,
            profile: FrameProfile::desk(),
            mode: ParaphraseMode::Roundtrip(Sampling::Nucleus(0.95)),
            drift_threshold: 0.3,
            max_attempts: 16,
        }
    }

    pub fn total(&self) -> usize {
        self.n_train + self.n_valid + self.n_test
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_valid == 0 || self.n_test == 0 {
            return Err(AmpsError::config("every split needs at least one utterance"));
        }
        if !(0.0..=1.0).contains(&self.spont_frac) {
            return Err(AmpsError::config("spont_frac must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.drift_threshold) {
            return Err(AmpsError::config("drift_threshold must lie in [0, 1]"));
        }
        if self.max_attempts == 0 {
            return Err(AmpsError::config("max_attempts must be positive"));
        }
        if let ParaphraseMode::LexSub { p_sub } = self.mode {
            if !(0.0..=1.0).contains(&p_sub) {
                return Err(AmpsError::config("p_sub must lie in [0, 1]"));
            }
        }
        self.profile.validate()
    }
}

/// Counters worth surfacing after generation.
#[derive(Clone, Debug, Default, Serialize)]
pub struct GenReport {
    pub total: usize,
    pub spontaneous: usize,
    /// Paraphrase candidates rejected by the drift filter.
    pub drift_rejections: usize,
    /// Utterances whose paraphrase fell back to the transcript after
    /// exhausting every attempt.
    pub identity_fallbacks: usize,
    /// Content words the lexicon could not cover (emitted as UNK).
    pub unk_passthroughs: usize,
}

/// Sentence patterns: C = content word, F = function word. Lengths 3–7
/// before the closing EOS.
const TEMPLATES: [&str; 8] = [
    "C F C",
    "F C C",
    "C C F C",
    "C F C C",
    "C F C F C",
    "C C F C C",
    "F C C F C C",
    "C F C C F C C",
];

/// Generate a corpus over the bundled synthetic vocabulary.
pub fn generate_corpus(
    spec: &CorpusSpec,
    vocab_seed: u64,
    seed: u64,
) -> Result<(Vec<Utterance>, GenReport, Vocab)> {
    let vocab = Vocab::synthetic(vocab_seed);
    let (utts, report) = generate_corpus_with_vocab(spec, &vocab, seed)?;
    Ok((utts, report, vocab))
}

/// Generate a corpus over a caller-supplied vocabulary.
pub fn generate_corpus_with_vocab(
    spec: &CorpusSpec,
    vocab: &Vocab,
    seed: u64,
) -> Result<(Vec<Utterance>, GenReport)> {
    spec.validate()?;
    if vocab.content_ids().is_empty() || vocab.function_ids().is_empty() {
        return Err(AmpsError::data(
            "vocabulary has no content or no function words",
        ));
    }
    let content = vocab.content_ids();
    let functions = vocab.function_ids().to_vec();
    let lexicon = match spec.mode {
        ParaphraseMode::Roundtrip(sampling) => Some(PivotLexicon::synthetic(vocab, sampling)),
        ParaphraseMode::LexSub { .. } => None,
    };

    let mut report = GenReport {
        total: spec.total(),
        ..GenReport::default()
    };
    let mut utts = Vec::with_capacity(spec.total());
    for id in 0..spec.total() as u64 {
        // Every utterance owns an RNG stream keyed by (seed, id), so the
        // corpus is insensitive to generation order.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id);

        let split = if (id as usize) < spec.n_train {
            Split::Train
        } else if (id as usize) < spec.n_train + spec.n_valid {
            Split::Valid
        } else {
            Split::Test
        };
        let kind = if rng.gen::<f64>() < spec.spont_frac {
            UttKind::Spontaneous
        } else {
            UttKind::Read
        };
        if kind == UttKind::Spontaneous {
            report.spontaneous += 1;
        }

        // Transcript from the template grammar.
        let template = TEMPLATES[rng.gen_range(0..TEMPLATES.len())];
        let mut transcript = Vec::with_capacity(8);
        for sym in template.split_whitespace() {
            let tok = match sym {
                "C" => content[rng.gen_range(0..content.len())],
                _ => functions[rng.gen_range(0..functions.len())],
            };
            transcript.push(tok);
        }
        transcript.push(EOS);

        // Paraphrase with drift-filtered retries.
        let mut paraphrase = None;
        for _ in 0..spec.max_attempts {
            let sub_seed = rng.gen::<u64>();
            let out = match (&lexicon, spec.mode) {
                (Some(lex), _) => lex.paraphrase(&transcript, sub_seed)?,
                (None, ParaphraseMode::LexSub { p_sub }) => ParaphraseOutcome {
                    tokens: paraphrase_lexsub(&transcript, vocab, p_sub, sub_seed),
                    unk_passthroughs: 0,
                },
                _ => unreachable!("lexicon presence follows the mode"),
            };
            if word_order_drift(&transcript, &out.tokens, vocab) <= spec.drift_threshold {
                report.unk_passthroughs += out.unk_passthroughs;
                paraphrase = Some(out.tokens);
                break;
            }
            report.drift_rejections += 1;
        }
        let paraphrase = paraphrase.unwrap_or_else(|| {
            report.identity_fallbacks += 1;
            transcript.clone()
        });

        let frame_seed = rng.gen::<u64>();
        let frames = synthesize_frames(vocab, &transcript, kind, &spec.profile, frame_seed)?;
        utts.push(Utterance {
            id,
            kind,
            split,
            transcript,
            paraphrase: Some(paraphrase),
            frames,
            noise_sigma: spec.profile.sigma_for(kind),
        });
    }
    Ok((utts, report))
}

// ─────────────────────────────────────────────────────────────────────────────
