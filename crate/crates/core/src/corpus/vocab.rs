//! Token inventory: reserved specials, function words, and content words
//! partitioned into synonym classes.

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AmpsError, Result};
use crate::model::{BOS, EOS, PAD, UNK};

pub const SPECIAL_SURFACES: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Suffix syllables stripped during stem matching (scoring only). A suffix is
/// removed when the remainder keeps at least two syllables.
pub const STEM_SUFFIXES: [&str; 9] = ["na", "ne", "ni", "ta", "te", "ti", "ra", "re", "ri"];

/// Surface form minus one trailing suffix from [`STEM_SUFFIXES`].
pub fn stem(surface: &str) -> &str {
    for suf in STEM_SUFFIXES {
        if let Some(rest) = surface.strip_suffix(suf) {
            if rest.len() >= 4 {
                return rest;
            }
        }
    }
    surface
}

/// Default shape of the bundled synthetic vocabulary.
pub const SYNTH_FUNCTION_WORDS: usize = 10;
pub const SYNTH_CLASSES: usize = 46;
pub const SYNTH_CLASS_SIZE: usize = 4;

#[derive(Clone, Debug)]
pub struct Vocab {
    surfaces: Vec<String>,
    function_ids: Vec<u32>,
    /// Synonym classes: disjoint groups of content-word ids.
    classes: Vec<Vec<u32>>,
    by_surface: HashMap<String, u32>,
    class_of: Vec<Option<usize>>,
}

/// Serializable mirror; indexes are rebuilt on load.
#[derive(Serialize, Deserialize)]
struct VocabFile {
    surfaces: Vec<String>,
    function_ids: Vec<u32>,
    classes: Vec<Vec<u32>>,
}

impl Vocab {
    /// Assemble and validate: dense ids, reserved specials, unique surfaces,
    /// function/content ids disjoint, synonym classes disjoint.
    pub fn from_parts(
        surfaces: Vec<String>,
        function_ids: Vec<u32>,
        classes: Vec<Vec<u32>>,
    ) -> Result<Self> {
        if surfaces.len() < SPECIAL_SURFACES.len() {
            return Err(AmpsError::data("vocabulary smaller than the special set"));
        }
        for (i, s) in SPECIAL_SURFACES.iter().enumerate() {
            if surfaces[i] != *s {
                return Err(AmpsError::data(format!(
                    "special slot {i} must be {s}, found {}",
                    surfaces[i]
                )));
            }
        }
        let mut by_surface = HashMap::with_capacity(surfaces.len());
        for (id, s) in surfaces.iter().enumerate() {
            if by_surface.insert(s.clone(), id as u32).is_some() {
                return Err(AmpsError::data(format!("duplicate surface form {s}")));
            }
        }
        let n = surfaces.len() as u32;
        let mut class_of = vec![None; surfaces.len()];
        let mut seen = HashSet::new();
        for (ci, class) in classes.iter().enumerate() {
            for &id in class {
                if id >= n || id < SPECIAL_SURFACES.len() as u32 {
                    return Err(AmpsError::data(format!("class member id {id} out of range")));
                }
                if !seen.insert(id) {
                    return Err(AmpsError::data(format!("id {id} in two synonym classes")));
                }
                class_of[id as usize] = Some(ci);
            }
        }
        for &id in &function_ids {
            if id >= n || id < SPECIAL_SURFACES.len() as u32 {
                return Err(AmpsError::data(format!("function word id {id} out of range")));
            }
            if seen.contains(&id) {
                return Err(AmpsError::data(format!(
                    "id {id} is both a function word and a content word"
                )));
            }
        }
        Ok(Vocab {
            surfaces,
            function_ids,
            classes,
            by_surface,
            class_of,
        })
    }

    /// Deterministic synthetic vocabulary: consonant-vowel syllable surfaces,
    /// 10 function words, 46 synonym classes of 4 members each.
    pub fn synthetic(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut surfaces: Vec<String> =
            SPECIAL_SURFACES.iter().map(|s| s.to_string()).collect();
        let mut taken: HashSet<String> = surfaces.iter().cloned().collect();
        let mut fresh = |rng: &mut ChaCha8Rng, syllables: std::ops::RangeInclusive<usize>| {
            loop {
                let k = rng.gen_range(syllables.clone());
                let mut w = String::new();
                for _ in 0..k {
                    w.push(CONSONANTS[rng.gen_range(0..CONSONANTS.len())]);
                    w.push(VOWELS[rng.gen_range(0..VOWELS.len())]);
                }
                if taken.insert(w.clone()) {
                    return w;
                }
            }
        };

        let mut function_ids = Vec::with_capacity(SYNTH_FUNCTION_WORDS);
        for _ in 0..SYNTH_FUNCTION_WORDS {
            function_ids.push(surfaces.len() as u32);
            let w = fresh(&mut rng, 1..=1);
            surfaces.push(w);
        }
        let mut classes = Vec::with_capacity(SYNTH_CLASSES);
        for _ in 0..SYNTH_CLASSES {
            let mut class = Vec::with_capacity(SYNTH_CLASS_SIZE);
            for _ in 0..SYNTH_CLASS_SIZE {
                class.push(surfaces.len() as u32);
                let w = fresh(&mut rng, 2..=3);
                surfaces.push(w);
            }
            classes.push(class);
        }
        Vocab::from_parts(surfaces, function_ids, classes)
            .expect("synthetic vocabulary construction is valid")
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn surface(&self, id: u32) -> Result<&str> {
        self.surfaces
            .get(id as usize)
            .map(String::as_str)
            .ok_or(AmpsError::TokenOutOfVocab {
                op: "vocab.surface",
                id,
                vocab: self.surfaces.len(),
            })
    }

    pub fn id_of(&self, surface: &str) -> Option<u32> {
        self.by_surface.get(surface).copied()
    }

    pub fn is_special(&self, id: u32) -> bool {
        matches!(id, PAD | BOS | EOS | UNK)
    }

    pub fn is_function(&self, id: u32) -> bool {
        self.function_ids.contains(&id)
    }

    pub fn is_content(&self, id: u32) -> bool {
        self.class_of.get(id as usize).is_some_and(Option::is_some)
    }

    /// Synonym class index of a content word.
    pub fn class_of(&self, id: u32) -> Option<usize> {
        self.class_of.get(id as usize).copied().flatten()
    }

    pub fn classes(&self) -> &[Vec<u32>] {
        &self.classes
    }

    pub fn function_ids(&self) -> &[u32] {
        &self.function_ids
    }

    pub fn content_ids(&self) -> Vec<u32> {
        self.classes.iter().flatten().copied().collect()
    }

    pub fn to_json(&self) -> String {
        let file = VocabFile {
            surfaces: self.surfaces.clone(),
            function_ids: self.function_ids.clone(),
            classes: self.classes.clone(),
        };
        serde_json::to_string_pretty(&file).expect("vocab serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(text)
            .map_err(|e| AmpsError::data(format!("bad vocabulary file: {e}")))?;
        Vocab::from_parts(file.surfaces, file.function_ids, file.classes)
    }
}

const CONSONANTS: [char; 17] = [
    'b', 'd', 'f', 'g', 'h', 'j', 'k', 'l', 'm', 'n', 'p', 'r', 's', 't', 'v', 'w', 'z',
];
const VOWELS: [char; 5] = ['a', 'e', 'i', 'o', 'u'];

// ─────────────────────────────────────────────────────────────────────────────
