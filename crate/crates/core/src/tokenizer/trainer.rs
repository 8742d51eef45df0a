//! WordPiece-style vocabulary training.
//!
//! Words start as characters (`c`, `##c`, ...). Each round merges the
//! adjacent pair with the highest `freq(ab) / (freq(a) * freq(b))`, ties
//! going to the lexicographically smallest `(a, b)`. Scores are compared by
//! integer cross-multiplication, so there is no float rounding in the
//! selection and training is fully deterministic.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::encode::pre_tokenize;
use super::vocab::{Vocabulary, CONTINUATION, SPECIAL_TOKENS};
use super::TokenizerError;

type Pair = (u32, u32);

struct State {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    words: Vec<(Vec<u32>, u64)>,
    token_freq: Vec<u64>,
    pair_freq: HashMap<Pair, u64>,
    pair_words: HashMap<Pair, Vec<usize>>,
}

impl State {
    fn intern(&mut self, tok: String) -> u32 {
        if let Some(&id) = self.index.get(&tok) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.index.insert(tok.clone(), id);
        self.tokens.push(tok);
        self.token_freq.push(0);
        id
    }

    fn add_word(&mut self, w: usize) {
        let (split, count) = &self.words[w];
        let count = *count;
        for &t in split {
            self.token_freq[t as usize] += count;
        }
        for p in split.windows(2) {
            let pair = (p[0], p[1]);
            *self.pair_freq.entry(pair).or_insert(0) += count;
            let list = self.pair_words.entry(pair).or_default();
            if list.last() != Some(&w) {
                list.push(w);
            }
        }
    }

    fn remove_word(&mut self, w: usize) {
        let (split, count) = &self.words[w];
        let count = *count;
        for &t in split {
            self.token_freq[t as usize] -= count;
        }
        for p in split.windows(2) {
            let pair = (p[0], p[1]);
            let f = self.pair_freq.get_mut(&pair).expect("pair was counted");
            *f -= count;
            if *f == 0 {
                self.pair_freq.remove(&pair);
            }
        }
    }

    /// True if `a` scores strictly better than `b`.
    fn better(&self, a: (Pair, u64), b: (Pair, u64)) -> bool {
        let ((a0, a1), fa) = a;
        let ((b0, b1), fb) = b;
        let lhs = fa as u128 * self.token_freq[b0 as usize] as u128 * self.token_freq[b1 as usize] as u128;
        let rhs = fb as u128 * self.token_freq[a0 as usize] as u128 * self.token_freq[a1 as usize] as u128;
        match lhs.cmp(&rhs) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => {
                let ka = (&self.tokens[a0 as usize], &self.tokens[a1 as usize]);
                let kb = (&self.tokens[b0 as usize], &self.tokens[b1 as usize]);
                ka < kb
            }
        }
    }

    fn best_pair(&self, min_frequency: u64) -> Option<Pair> {
        let mut best: Option<(Pair, u64)> = None;
        for (&pair, &freq) in &self.pair_freq {
            if freq < min_frequency.max(1) {
                continue;
            }
            if best.is_none_or(|b| self.better((pair, freq), b)) {
                best = Some((pair, freq));
            }
        }
        best.map(|(p, _)| p)
    }
}

fn merged_token(left: &str, right: &str) -> String {
    let mut s = left.to_string();
    s.push_str(right.strip_prefix(CONTINUATION).unwrap_or(right));
    s
}

/// Trains a vocabulary from already-normalized lines.
///
/// `vocab_size` counts every entry, specials and the initial character
/// alphabet included; it must be at least that large.
pub fn train_vocab<S: AsRef<str>>(
    lines: &[S],
    vocab_size: usize,
    min_frequency: u64,
) -> Result<Vocabulary, TokenizerError> {
    let mut word_counts: BTreeMap<&str, u64> = BTreeMap::new();
    for line in lines {
        for w in pre_tokenize(line.as_ref()) {
            *word_counts.entry(w).or_insert(0) += 1;
        }
    }
    if word_counts.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }

    let mut alphabet = BTreeSet::new();
    for w in word_counts.keys() {
        for (i, c) in w.chars().enumerate() {
            alphabet.insert(if i == 0 {
                c.to_string()
            } else {
                format!("{CONTINUATION}{c}")
            });
        }
    }
    let required = SPECIAL_TOKENS.len() + alphabet.len();
    if vocab_size < required {
        return Err(TokenizerError::VocabTooSmall {
            requested: vocab_size,
            required,
        });
    }

    let mut st = State {
        tokens: Vec::new(),
        index: HashMap::new(),
        words: Vec::with_capacity(word_counts.len()),
        token_freq: Vec::new(),
        pair_freq: HashMap::new(),
        pair_words: HashMap::new(),
    };
    for tok in SPECIAL_TOKENS.iter().map(|s| s.to_string()).chain(alphabet) {
        st.intern(tok);
    }
    for (w, &count) in &word_counts {
        let split = w
            .chars()
            .enumerate()
            .map(|(i, c)| {
                let tok = if i == 0 {
                    c.to_string()
                } else {
                    format!("{CONTINUATION}{c}")
                };
                st.index[&tok]
            })
            .collect();
        st.words.push((split, count));
        st.add_word(st.words.len() - 1);
    }

    while st.tokens.len() < vocab_size {
        let Some((left, right)) = st.best_pair(min_frequency) else {
            break;
        };
        let merged = merged_token(&st.tokens[left as usize], &st.tokens[right as usize]);
        let new_id = st.intern(merged);
        let mut affected = st.pair_words.remove(&(left, right)).unwrap_or_default();
        affected.dedup();
        for w in affected {
            if !st.words[w].0.windows(2).any(|p| p[0] == left && p[1] == right) {
                continue;
            }
            st.remove_word(w);
            let old = std::mem::take(&mut st.words[w].0);
            let mut split = Vec::with_capacity(old.len());
            let mut i = 0;
            while i < old.len() {
                if i + 1 < old.len() && old[i] == left && old[i + 1] == right {
                    split.push(new_id);
                    i += 2;
                } else {
                    split.push(old[i]);
                    i += 1;
                }
            }
            st.words[w].0 = split;
            st.add_word(w);
        }
    }

    Vocabulary::from_tokens(st.tokens)
}
