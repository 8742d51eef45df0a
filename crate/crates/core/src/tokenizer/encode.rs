use serde::{Deserialize, Serialize};

use super::normalize::{normalize_text, NormalizationProfile};
use super::vocab::{Vocabulary, CLS_ID, PAD_ID, SEP_ID};
use super::TokenizerError;
use crate::corpus::NerSentence;

/// Label value for positions excluded from the loss.
pub const IGNORE_INDEX: usize = usize::MAX;

/// Default sequence budget for encoded inputs.
pub const DEFAULT_MAX_LEN: usize = 128;

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '،' | '؛' | '؟' | '٪' | '۔' | '«' | '»' | '…' | '“' | '”' | '‘' | '’' | '—' | '–'
        )
}

/// Splits on whitespace, then splits every punctuation character into its
/// own word.
pub fn pre_tokenize(text: &str) -> Vec<&str> {
    let mut words = Vec::new();
    for chunk in text.split_whitespace() {
        let mut start = 0;
        for (i, c) in chunk.char_indices() {
            if is_punctuation(c) {
                if start < i {
                    words.push(&chunk[start..i]);
                }
                words.push(&chunk[i..i + c.len_utf8()]);
                start = i + c.len_utf8();
            }
        }
        if start < chunk.len() {
            words.push(&chunk[start..]);
        }
    }
    words
}

/// Normalizes with the tokenizer profile and returns subword ids per word.
pub fn encode_words(text: &str, vocab: &Vocabulary) -> Vec<Vec<u32>> {
    let norm = normalize_text(text, &NormalizationProfile::TOKENIZER);
    pre_tokenize(&norm)
        .into_iter()
        .map(|w| vocab.encode_word(w))
        .collect()
}

fn encode_flat(text: &str, vocab: &Vocabulary) -> Vec<u32> {
    encode_words(text, vocab).into_iter().flatten().collect()
}

/// `[CLS] premise [SEP] hypothesis [SEP]` plus padding to `max_len`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedPair {
    pub token_ids: Vec<u32>,
    pub segment_ids: Vec<u8>,
    pub attention_mask: Vec<u8>,
}

impl EncodedPair {
    /// Number of unpadded positions.
    pub fn real_len(&self) -> usize {
        self.attention_mask.iter().take_while(|&&m| m == 1).count()
    }
}

pub fn encode_pair(
    premise: &str,
    hypothesis: &str,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<EncodedPair, TokenizerError> {
    if max_len < 5 {
        return Err(TokenizerError::MaxLenTooSmall { max_len, min: 5 });
    }
    let mut p = encode_flat(premise, vocab);
    let mut h = encode_flat(hypothesis, vocab);
    let budget = max_len - 3;
    // longest first; ties trim the hypothesis
    while p.len() + h.len() > budget {
        if p.len() > h.len() {
            p.pop();
        } else {
            h.pop();
        }
    }

    let mut token_ids = Vec::with_capacity(max_len);
    let mut segment_ids = Vec::with_capacity(max_len);
    token_ids.push(CLS_ID);
    token_ids.extend_from_slice(&p);
    token_ids.push(SEP_ID);
    segment_ids.resize(token_ids.len(), 0);
    token_ids.extend_from_slice(&h);
    token_ids.push(SEP_ID);
    segment_ids.resize(token_ids.len(), 1);
    let mut attention_mask = vec![1u8; token_ids.len()];

    token_ids.resize(max_len, PAD_ID);
    segment_ids.resize(max_len, 0);
    attention_mask.resize(max_len, 0);
    Ok(EncodedPair {
        token_ids,
        segment_ids,
        attention_mask,
    })
}

/// `[CLS] subwords [SEP]` with one tag per word on its first subword.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedTagged {
    pub token_ids: Vec<u32>,
    pub tag_ids: Vec<usize>,
    pub loss_mask: Vec<bool>,
}

impl EncodedTagged {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

pub fn encode_tagged(
    sentence: &NerSentence,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<EncodedTagged, TokenizerError> {
    if sentence.words.len() != sentence.tags.len() {
        return Err(TokenizerError::Alignment {
            words: sentence.words.len(),
            tags: sentence.tags.len(),
        });
    }
    if max_len < 3 {
        return Err(TokenizerError::MaxLenTooSmall { max_len, min: 3 });
    }
    let mut token_ids = vec![CLS_ID];
    let mut tag_ids = vec![IGNORE_INDEX];
    for (word, tag) in sentence.words.iter().zip(&sentence.tags) {
        let mut pieces = encode_flat(word, vocab);
        if pieces.is_empty() {
            // a word that normalizes away still owns a position
            pieces.push(super::vocab::UNK_ID);
        }
        if token_ids.len() + pieces.len() + 1 > max_len {
            break;
        }
        tag_ids.push(tag.id());
        tag_ids.extend(std::iter::repeat_n(IGNORE_INDEX, pieces.len() - 1));
        token_ids.extend(pieces);
    }
    token_ids.push(SEP_ID);
    tag_ids.push(IGNORE_INDEX);
    let loss_mask = tag_ids.iter().map(|&t| t != IGNORE_INDEX).collect();
    Ok(EncodedTagged {
        token_ids,
        tag_ids,
        loss_mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::NerTag;
    use crate::tokenizer::vocab::{SPECIAL_TOKENS, UNK_ID};

    fn vocab(extra: &[&str]) -> Vocabulary {
        let mut toks: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        toks.extend(extra.iter().map(|s| s.to_string()));
        Vocabulary::from_tokens(toks).unwrap()
    }

    #[test]
    fn pre_tokenize_splits_punctuation() {
        assert_eq!(pre_tokenize("هل ذهبت؟ نعم، ذهبت."), vec!["هل", "ذهبت", "؟", "نعم", "،", "ذهبت", "."]);
        assert_eq!(pre_tokenize("9:15 AM"), vec!["9", ":", "15", "AM"]);
        assert!(pre_tokenize("  ").is_empty());
    }

    #[test]
    fn pair_layout() {
        // p1 p2 | h1
        let v = vocab(&["p", "##q", "h"]);
        let e = encode_pair("pq", "h", &v, 8).unwrap();
        assert_eq!(e.token_ids, vec![CLS_ID, 5, 6, SEP_ID, 7, SEP_ID, PAD_ID, PAD_ID]);
        assert_eq!(e.segment_ids, vec![0, 0, 0, 0, 1, 1, 0, 0]);
        assert_eq!(e.attention_mask, vec![1, 1, 1, 1, 1, 1, 0, 0]);
        assert_eq!(e.real_len(), 6);
    }

    #[test]
    fn longest_first_truncation() {
        let v = vocab(&["a", "b"]);
        let e = encode_pair("a a a a a", "b b b b", &v, 6).unwrap();
        assert_eq!(e.token_ids, vec![CLS_ID, 5, 5, SEP_ID, 6, SEP_ID]);
    }

    #[test]
    fn empty_hypothesis() {
        let v = vocab(&["a"]);
        let e = encode_pair("a", "", &v, 5).unwrap();
        assert_eq!(e.token_ids, vec![CLS_ID, 5, SEP_ID, SEP_ID, PAD_ID]);
        assert_eq!(e.segment_ids, vec![0, 0, 0, 1, 0]);
    }

    #[test]
    fn max_len_floor() {
        let v = vocab(&[]);
        assert!(encode_pair("", "", &v, 4).is_err());
    }

    #[test]
    fn unknown_word_becomes_unk() {
        let v = vocab(&["a"]);
        let e = encode_pair("a zz", "a", &v, 8).unwrap();
        assert_eq!(&e.token_ids[..4], &[CLS_ID, 5, UNK_ID, SEP_ID]);
    }

    #[test]
    fn first_subword_carries_tag() {
        let v = vocab(&["Ah", "##mad"]);
        let s = NerSentence::new(vec!["Ahmad".into()], vec![NerTag::BPer]).unwrap();
        let e = encode_tagged(&s, &v, 16).unwrap();
        assert_eq!(e.token_ids, vec![CLS_ID, 5, 6, SEP_ID]);
        assert_eq!(e.tag_ids, vec![IGNORE_INDEX, NerTag::BPer.id(), IGNORE_INDEX, IGNORE_INDEX]);
        assert_eq!(e.loss_mask, vec![false, true, false, false]);
    }

    #[test]
    fn tagged_truncation_drops_whole_words() {
        let v = vocab(&["Ah", "##mad", "x"]);
        let s = NerSentence::new(
            vec!["x".into(), "Ahmad".into(), "x".into()],
            vec![NerTag::O, NerTag::BPer, NerTag::O],
        )
        .unwrap();
        let e = encode_tagged(&s, &v, 4).unwrap();
        assert_eq!(e.token_ids, vec![CLS_ID, 7, SEP_ID]);
        assert_eq!(e.loss_mask.iter().filter(|&&m| m).count(), 1);
    }

    #[test]
    fn tagged_alignment_error() {
        let v = vocab(&[]);
        let s = NerSentence {
            words: vec!["a".into()],
            tags: vec![],
        };
        assert!(matches!(
            encode_tagged(&s, &v, 8),
            Err(TokenizerError::Alignment { words: 1, tags: 0 })
        ));
    }
}
