use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const VID: usize = 3;
/// How a video placeholder is written in prompt text.
pub const VID_MARKER: &str = "<vid>";

const ALPHABET: &str = " abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789.,;:'-";
const SPECIALS: usize = 4;

/// Character-level symbol table with four reserved specials.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    chars: Vec<char>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::standard()
    }
}

impl Vocab {
    pub fn standard() -> Self {
        Self {
            chars: ALPHABET.chars().collect(),
        }
    }

    pub fn len(&self) -> usize {
        SPECIALS + self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn alphabet(&self) -> &[char] {
        &self.chars
    }

    pub fn contains(&self, c: char) -> bool {
        self.chars.contains(&c)
    }

    pub fn id_of(&self, c: char) -> Option<usize> {
        self.chars.iter().position(|&x| x == c).map(|i| i + SPECIALS)
    }

    /// Maps text to ids; every `<vid>` becomes one [`VID`] symbol.
    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(text.len());
        let mut rest = text;
        while let Some(c) = rest.chars().next() {
            if rest.starts_with(VID_MARKER) {
                out.push(VID);
                rest = &rest[VID_MARKER.len()..];
                continue;
            }
            let id = self
                .id_of(c)
                .ok_or_else(|| Error::Input(format!("character {c:?} is not in the vocabulary")))?;
            out.push(id);
            rest = &rest[c.len_utf8()..];
        }
        Ok(out)
    }

    /// Inverse of [`Vocab::tokenize`]; PAD, BOS and EOS render as nothing.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        let mut out = String::with_capacity(ids.len());
        for &id in ids {
            match id {
                VID => out.push_str(VID_MARKER),
                PAD | BOS | EOS => {}
                _ => {
                    if let Some(&c) = self.chars.get(id - SPECIALS) {
                        out.push(c);
                    }
                }
            }
        }
        out
    }
}
