//! IOB-tagged NER sentences and the ANERcorp-style CoNLL reader.

use std::fmt;
use std::str::FromStr;

use super::CorpusError;

/// The nine trainable IOB tags over PER/LOC/ORG/MISC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NerTag {
    O,
    BPer,
    IPer,
    BLoc,
    ILoc,
    BOrg,
    IOrg,
    BMisc,
    IMisc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EntityType {
    Per,
    Loc,
    Org,
    Misc,
}

pub const NUM_NER_TAGS: usize = 9;

impl NerTag {
    pub const ALL: [NerTag; NUM_NER_TAGS] = [
        NerTag::O,
        NerTag::BPer,
        NerTag::IPer,
        NerTag::BLoc,
        NerTag::ILoc,
        NerTag::BOrg,
        NerTag::IOrg,
        NerTag::BMisc,
        NerTag::IMisc,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<NerTag> {
        Self::ALL.get(id).copied()
    }

    pub fn entity(self) -> Option<EntityType> {
        use NerTag::*;
        match self {
            O => None,
            BPer | IPer => Some(EntityType::Per),
            BLoc | ILoc => Some(EntityType::Loc),
            BOrg | IOrg => Some(EntityType::Org),
            BMisc | IMisc => Some(EntityType::Misc),
        }
    }

    pub fn is_inside(self) -> bool {
        matches!(self, NerTag::IPer | NerTag::ILoc | NerTag::IOrg | NerTag::IMisc)
    }

    pub fn begin(entity: EntityType) -> NerTag {
        match entity {
            EntityType::Per => NerTag::BPer,
            EntityType::Loc => NerTag::BLoc,
            EntityType::Org => NerTag::BOrg,
            EntityType::Misc => NerTag::BMisc,
        }
    }

    pub fn as_str(self) -> &'static str {
        use NerTag::*;
        match self {
            O => "O",
            BPer => "B-PER",
            IPer => "I-PER",
            BLoc => "B-LOC",
            ILoc => "I-LOC",
            BOrg => "B-ORG",
            IOrg => "I-ORG",
            BMisc => "B-MISC",
            IMisc => "I-MISC",
        }
    }
}

impl fmt::Display for NerTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NerTag {
    type Err = String;

    /// Accepts the canonical spellings plus the `PERS` variant used by ANERcorp.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        if upper == "O" {
            return Ok(NerTag::O);
        }
        let (prefix, kind) = upper.split_once('-').ok_or_else(|| s.to_string())?;
        let entity = match kind {
            "PER" | "PERS" => EntityType::Per,
            "LOC" => EntityType::Loc,
            "ORG" => EntityType::Org,
            "MISC" => EntityType::Misc,
            _ => return Err(s.to_string()),
        };
        let begin = NerTag::begin(entity);
        match prefix {
            "B" => Ok(begin),
            // inside tags directly follow their begin tag in ALL
            "I" => Ok(NerTag::ALL[begin.id() + 1]),
            _ => Err(s.to_string()),
        }
    }
}

/// Words with aligned IOB tags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NerSentence {
    pub words: Vec<String>,
    pub tags: Vec<NerTag>,
}

impl NerSentence {
    pub fn new(words: Vec<String>, tags: Vec<NerTag>) -> Result<Self, CorpusError> {
        if words.len() != tags.len() {
            return Err(CorpusError::Alignment {
                words: words.len(),
                tags: tags.len(),
            });
        }
        Ok(NerSentence { words, tags })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Index of the first I-X not preceded by B-X or I-X of the same type.
    pub fn first_iob_violation(&self) -> Option<usize> {
        first_violation(&self.tags)
    }

    pub fn is_iob_valid(&self) -> bool {
        self.first_iob_violation().is_none()
    }
}

fn first_violation(tags: &[NerTag]) -> Option<usize> {
    let mut prev: Option<NerTag> = None;
    for (i, &tag) in tags.iter().enumerate() {
        if tag.is_inside() && prev.and_then(NerTag::entity) != tag.entity() {
            return Some(i);
        }
        prev = Some(tag);
    }
    None
}

/// Parsed sentences plus the number of I- tags rewritten to B-.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AnerParse {
    pub sentences: Vec<NerSentence>,
    pub repairs: usize,
}

/// Parses `token<TAB>tag` lines with blank lines between sentences.
///
/// Lines without a tab fall back to splitting on the last run of
/// whitespace, which is how the CAMeL splits of ANERcorp are laid out.
/// With `repair`, an orphan `I-X` becomes `B-X`; without it the orphan is
/// reported with its line number.
pub fn parse_anercorp_str(text: &str, repair: bool) -> Result<AnerParse, CorpusError> {
    let mut out = AnerParse::default();
    let mut words = Vec::new();
    let mut tags: Vec<NerTag> = Vec::new();
    let mut lines = Vec::new();

    let flush = |words: &mut Vec<String>,
                     tags: &mut Vec<NerTag>,
                     lines: &mut Vec<usize>,
                     out: &mut AnerParse|
     -> Result<(), CorpusError> {
        if words.is_empty() {
            return Ok(());
        }
        while let Some(i) = first_violation(tags) {
            if !repair {
                return Err(CorpusError::IobViolation {
                    line: lines[i],
                    tag: tags[i].to_string(),
                    previous: if i == 0 { None } else { Some(tags[i - 1].to_string()) },
                });
            }
            tags[i] = NerTag::begin(tags[i].entity().expect("inside tags have an entity"));
            out.repairs += 1;
        }
        out.sentences.push(NerSentence {
            words: std::mem::take(words),
            tags: std::mem::take(tags),
        });
        lines.clear();
        Ok(())
    };

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut words, &mut tags, &mut lines, &mut out)?;
            continue;
        }
        let (token, tag) = match line.split_once('\t') {
            Some((t, g)) => (t.trim(), g.trim()),
            None => match line.trim().rsplit_once(char::is_whitespace) {
                Some((t, g)) => (t.trim(), g.trim()),
                None => {
                    return Err(CorpusError::Parse {
                        line: line_no,
                        message: format!("expected `token<TAB>tag`, got {line:?}"),
                    })
                }
            },
        };
        if token.is_empty() || token.contains('\t') {
            return Err(CorpusError::Parse {
                line: line_no,
                message: format!("malformed token column in {line:?}"),
            });
        }
        let tag: NerTag = tag.parse().map_err(|bad| CorpusError::Parse {
            line: line_no,
            message: format!("unknown tag {bad:?}"),
        })?;
        words.push(token.to_string());
        tags.push(tag);
        lines.push(line_no);
    }
    flush(&mut words, &mut tags, &mut lines, &mut out)?;
    Ok(out)
}

pub fn parse_anercorp(path: &std::path::Path, repair: bool) -> Result<AnerParse, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    parse_anercorp_str(&text, repair)
}
