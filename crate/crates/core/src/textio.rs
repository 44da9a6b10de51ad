//! The structured response grammar:
//!
//! ```text
//! Proficiency Level: <label>; Proficiency Commentary: <feedback>
//! ```
//!
//! plus the templated commentary used as synthetic training targets.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

const LEVEL_KEY: &str = "Proficiency Level:";
const COMMENTARY_KEY: &str = "Proficiency Commentary:";
/// Sequence a commentary may not contain; it would make the grammar ambiguous.
pub const DELIMITER: &str = "; Proficiency Commentary:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProficiencyLabel {
    Novice,
    EarlyExpert,
    IntermediateExpert,
    LateExpert,
}

impl ProficiencyLabel {
    pub const COUNT: usize = 4;
    pub const ALL: [ProficiencyLabel; 4] = [
        ProficiencyLabel::Novice,
        ProficiencyLabel::EarlyExpert,
        ProficiencyLabel::IntermediateExpert,
        ProficiencyLabel::LateExpert,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProficiencyLabel::Novice => "Novice",
            ProficiencyLabel::EarlyExpert => "Early Expert",
            ProficiencyLabel::IntermediateExpert => "Intermediate Expert",
            ProficiencyLabel::LateExpert => "Late Expert",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Case-insensitive match against the canonical strings, ignoring surrounding whitespace.
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        Self::ALL.into_iter().find(|l| l.as_str().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for ProficiencyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A label with its commentary.
///
/// Built through [`StructuredResponse::new`], the commentary is trimmed,
/// non-empty, and free of [`DELIMITER`]. Lenient parses may carry an empty
/// commentary when nothing follows the label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredResponse {
    pub label: ProficiencyLabel,
    pub commentary: String,
}

impl StructuredResponse {
    pub fn new(label: ProficiencyLabel, commentary: &str) -> Result<Self> {
        let commentary = commentary.trim();
        if commentary.is_empty() {
            return Err(Error::Input("commentary is empty".into()));
        }
        if commentary.contains(DELIMITER) {
            return Err(Error::Input(format!("commentary contains `{DELIMITER}`")));
        }
        Ok(Self {
            label,
            commentary: commentary.to_string(),
        })
    }
}

pub fn format_target(resp: &StructuredResponse) -> String {
    format!(
        "{LEVEL_KEY} {}; {COMMENTARY_KEY} {}",
        resp.label.as_str(),
        resp.commentary
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseMode {
    #[default]
    Strict,
    Lenient,
}

fn strip_prefix_ci<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    let head = s.get(..prefix.len())?;
    head.eq_ignore_ascii_case(prefix).then(|| &s[prefix.len()..])
}

fn parse_strict(text: &str) -> Result<StructuredResponse> {
    let fail = |reason: &str| Error::Parse {
        reason: reason.to_string(),
    };
    let rest = strip_prefix_ci(text.trim_start(), LEVEL_KEY).ok_or_else(|| fail("missing `Proficiency Level:`"))?;
    let (label_part, rest) = rest
        .split_once(';')
        .ok_or_else(|| fail("missing `;` after the label"))?;
    let label =
        ProficiencyLabel::parse(label_part).ok_or_else(|| fail(&format!("unknown label `{}`", label_part.trim())))?;
    let commentary = strip_prefix_ci(rest.trim_start(), COMMENTARY_KEY)
        .ok_or_else(|| fail("missing `Proficiency Commentary:`"))?
        .trim();
    if commentary.is_empty() {
        return Err(fail("empty commentary"));
    }
    Ok(StructuredResponse {
        label,
        commentary: commentary.to_string(),
    })
}

/// First label mentioned anywhere in the text; the commentary is whatever
/// follows the next `:` or `;` after it, or the rest of the text if neither
/// appears.
fn parse_lenient(text: &str) -> Result<StructuredResponse> {
    let lower = text.to_ascii_lowercase();
    let (pos, label) = ProficiencyLabel::ALL
        .into_iter()
        .filter_map(|l| lower.find(&l.as_str().to_ascii_lowercase()).map(|p| (p, l)))
        .min_by_key(|&(p, _)| p)
        .ok_or_else(|| Error::Parse {
            reason: "no proficiency label in text".into(),
        })?;
    let after = &text[pos + label.as_str().len()..];
    let commentary = match after.find([':', ';']) {
        Some(i) => &after[i + 1..],
        None => after,
    };
    Ok(StructuredResponse {
        label,
        commentary: commentary.trim().to_string(),
    })
}

/// Parses generated text. Lenient mode falls back to a label scan when the strict grammar fails.
pub fn parse_output(text: &str, mode: ParseMode) -> Result<StructuredResponse> {
    match (parse_strict(text), mode) {
        (Ok(r), _) => Ok(r),
        (Err(e), ParseMode::Strict) => Err(e),
        (Err(_), ParseMode::Lenient) => parse_lenient(text),
    }
}

/// Same as [`parse_output`] for arbitrary bytes (invalid UTF-8 is replaced).
pub fn parse_output_bytes(bytes: &[u8], mode: ParseMode) -> Result<StructuredResponse> {
    parse_output(&String::from_utf8_lossy(bytes), mode)
}

pub const DOMAINS: [&str; 6] = ["basketball", "cooking", "dance", "music", "bouldering", "soccer"];

const SKILLS: [&str; 6] = [
    "shooting form",
    "knife work",
    "body rhythm",
    "phrase timing",
    "foot placement",
    "ball control",
];

const VERDICTS: [&str; 4] = [
    "basic control is still missing",
    "the fundamentals are in place",
    "execution is mostly consistent",
    "movement is fluid and precise",
];

const VARIATIONS: [&str; 4] = [
    "keep practicing slowly",
    "watch the tempo",
    "stay relaxed throughout",
    "focus on balance",
];

pub fn domain_name(domain_id: usize) -> Option<&'static str> {
    DOMAINS.get(domain_id).copied()
}

/// Template fill: domain skill, label verdict, and one of four seeded closing clauses.
pub fn synth_commentary(label: ProficiencyLabel, domain_id: usize, seed: u64) -> Result<String> {
    let skill = SKILLS
        .get(domain_id)
        .ok_or_else(|| Error::Input(format!("domain id {domain_id} outside [0, 5]")))?;
    let mut rng = SplitMix64::derive(seed, &[label.index() as u64, domain_id as u64]);
    let variation = VARIATIONS[rng.below(VARIATIONS.len() as u64) as usize];
    Ok(format!("{skill}: {}, {variation}", VERDICTS[label.index()]))
}

/// Reads `label<TAB>commentary` lines; blank lines are skipped.
pub fn read_corpus(text: &str) -> Result<Vec<StructuredResponse>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let (label, commentary) = line.split_once('\t').ok_or_else(|| Error::Parse {
                reason: format!("corpus line {} has no tab", i + 1),
            })?;
            let label = ProficiencyLabel::parse(label).ok_or_else(|| Error::Parse {
                reason: format!("corpus line {}: unknown label `{label}`", i + 1),
            })?;
            StructuredResponse::new(label, commentary)
        })
        .collect()
}

pub fn write_corpus(items: &[StructuredResponse]) -> String {
    items
        .iter()
        .map(|r| format!("{}\t{}\n", r.label.as_str(), r.commentary))
        .collect()
}
