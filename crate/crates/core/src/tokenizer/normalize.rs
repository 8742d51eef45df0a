use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use super::TokenizerError;

const TATWEEL: char = '\u{0640}';

/// Switches for text normalization. Canonical composition always runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizationProfile {
    pub remove_tatweel: bool,
    pub remove_diacritics: bool,
    pub collapse_whitespace: bool,
}

impl NormalizationProfile {
    /// Stored-corpus profile: keeps harakat for source fidelity.
    pub const CORPUS: NormalizationProfile = NormalizationProfile {
        remove_tatweel: true,
        remove_diacritics: false,
        collapse_whitespace: true,
    };

    /// Tokenizer profile: also strips harakat to stabilize the vocabulary.
    pub const TOKENIZER: NormalizationProfile = NormalizationProfile {
        remove_tatweel: true,
        remove_diacritics: true,
        collapse_whitespace: true,
    };

    pub const NONE: NormalizationProfile = NormalizationProfile {
        remove_tatweel: false,
        remove_diacritics: false,
        collapse_whitespace: false,
    };
}

impl Default for NormalizationProfile {
    fn default() -> Self {
        Self::CORPUS
    }
}

/// Arabic harakat: tanween, fatha, damma, kasra, shadda, sukun, and the
/// superscript alef.
pub fn is_arabic_diacritic(c: char) -> bool {
    matches!(c, '\u{064B}'..='\u{0652}' | '\u{0670}')
}

/// NFC, then the optional removals, then NFC again so that marks brought
/// together by a removal are recomposed. The result is a fixed point.
pub fn normalize_text(s: &str, profile: &NormalizationProfile) -> String {
    let composed: String = s.nfc().collect();
    let filtered = composed.chars().filter(|&c| {
        !(profile.remove_tatweel && c == TATWEEL) && !(profile.remove_diacritics && is_arabic_diacritic(c))
    });
    let collapsed: String = if profile.collapse_whitespace {
        let mut out = String::with_capacity(composed.len());
        let mut pending_space = false;
        for c in filtered {
            if c.is_whitespace() {
                pending_space = !out.is_empty();
            } else {
                if pending_space {
                    out.push(' ');
                    pending_space = false;
                }
                out.push(c);
            }
        }
        out
    } else {
        filtered.collect()
    };
    collapsed.nfc().collect()
}

/// Decodes UTF-8 and normalizes; invalid input reports the first bad byte offset.
pub fn normalize_bytes(bytes: &[u8], profile: &NormalizationProfile) -> Result<String, TokenizerError> {
    let text = std::str::from_utf8(bytes).map_err(|e| TokenizerError::Decode {
        offset: e.valid_up_to(),
    })?;
    Ok(normalize_text(text, profile))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_is_a_fixed_point() {
        let s = "The tower was still standing at 9:15 AM.";
        assert_eq!(normalize_text(s, &NormalizationProfile::TOKENIZER), s);
    }

    #[test]
    fn tatweel_is_removed() {
        assert_eq!(normalize_text("كـــتاب", &NormalizationProfile::CORPUS), "كتاب");
        assert_eq!(normalize_text("كـــتاب", &NormalizationProfile::NONE), "كـــتاب");
    }

    #[test]
    fn diacritics_only_with_flag() {
        let voweled = "كَتَبَ";
        assert_eq!(normalize_text(voweled, &NormalizationProfile::CORPUS), voweled);
        assert_eq!(normalize_text(voweled, &NormalizationProfile::TOKENIZER), "كتب");
    }

    #[test]
    fn whitespace_collapses_and_trims() {
        assert_eq!(normalize_text("  a \t\n b  ", &NormalizationProfile::CORPUS), "a b");
    }

    #[test]
    fn composition_after_removal() {
        // alef, fatha, hamza above: dropping the fatha leaves a composable pair
        let s = "\u{0627}\u{064E}\u{0654}";
        let once = normalize_text(s, &NormalizationProfile::TOKENIZER);
        assert_eq!(once, "\u{0623}");
        assert_eq!(normalize_text(&once, &NormalizationProfile::TOKENIZER), once);
    }

    #[test]
    fn invalid_utf8_reports_offset() {
        let bytes = b"abc\xffdef";
        assert_eq!(
            normalize_bytes(bytes, &NormalizationProfile::CORPUS).unwrap_err(),
            TokenizerError::Decode { offset: 3 }
        );
    }
}
