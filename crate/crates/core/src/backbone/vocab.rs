//! Whitespace tokenizer over a fixed vocabulary, and the two prompt layouts
//! fed to the text encoder.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{DptError, Result};
use crate::harness::synthetic::{Color, ShapeKind};

pub const START_TOKEN: &str = "<sot>";
pub const END_TOKEN: &str = "<eot>";
/// Placeholder occupying a learnable context slot.
pub const CONTEXT_TOKEN: &str = "X";
/// Hand-crafted template; `[CLASS]` is replaced by the class word.
pub const TEMPLATE: &str = "a photo of a [CLASS]";

/// Token ids plus the positions the encoder needs.
///
/// Context slots are positions `1..class_token_position`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub token_ids: Vec<usize>,
    pub class_token_position: usize,
    pub end_position: usize,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn context_len(&self) -> usize {
        self.class_token_position.saturating_sub(1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(DptError::Vocabulary(format!("invalid token {t:?} at line {}", i + 1)));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(DptError::Vocabulary(format!("duplicate token {t:?}")));
            }
        }
        for required in [START_TOKEN, END_TOKEN, CONTEXT_TOKEN] {
            if !index.contains_key(required) {
                return Err(DptError::Vocabulary(format!("missing required token {required:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Specials, template words, and one word per (colour, shape) pair.
    pub fn standard() -> Self {
        let mut tokens: Vec<String> = [START_TOKEN, END_TOKEN, CONTEXT_TOKEN, "a", "photo", "of"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for color in Color::ALL {
            for shape in ShapeKind::ALL {
                tokens.push(class_word(shape, color));
            }
        }
        Self::new(tokens).expect("standard vocabulary is well formed")
    }

    /// One token per line.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::new(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Result<usize> {
        self.index
            .get(token)
            .copied()
            .ok_or_else(|| DptError::Vocabulary(format!("unknown token {token:?}")))
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>> {
        text.split_whitespace().map(|w| self.id(w)).collect()
    }

    /// `<sot> a photo of a <class> <eot>`
    pub fn template_sequence(&self, class_name: &str) -> Result<TokenSequence> {
        let words = TEMPLATE.replace("[CLASS]", class_name);
        let body = self.tokenize(&words)?;
        let class_id = self.id(class_name)?;
        let mut ids = vec![self.id(START_TOKEN)?];
        ids.extend(body);
        let class_token_position = ids
            .iter()
            .rposition(|&t| t == class_id)
            .expect("template contains the class word");
        ids.push(self.id(END_TOKEN)?);
        Ok(TokenSequence {
            end_position: ids.len() - 1,
            token_ids: ids,
            class_token_position,
        })
    }

    /// `<sot> X×m <class> <eot>`; the `X` slots are overridden by learned context.
    pub fn prompt_sequence(&self, class_name: &str, context_len: usize) -> Result<TokenSequence> {
        let mut ids = vec![self.id(START_TOKEN)?];
        ids.extend(std::iter::repeat_n(self.id(CONTEXT_TOKEN)?, context_len));
        ids.push(self.id(class_name)?);
        ids.push(self.id(END_TOKEN)?);
        Ok(TokenSequence {
            class_token_position: context_len + 1,
            end_position: context_len + 2,
            token_ids: ids,
        })
    }

    /// Token ids of the template words preceding the class slot.
    pub fn template_context_ids(&self) -> Result<Vec<usize>> {
        let prefix = TEMPLATE.split("[CLASS]").next().unwrap_or_default();
        self.tokenize(prefix)
    }
}

pub fn class_word(shape: ShapeKind, color: Color) -> String {
    format!("{}_{}", color.name(), shape.name())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_layout() {
        let v = Vocabulary::standard();
        let seq = v.template_sequence("red_square").unwrap();
        assert_eq!(seq.len(), 7);
        assert_eq!(seq.class_token_position, 5);
        assert_eq!(seq.end_position, 6);
        assert_eq!(seq.context_len(), 4);
        assert_eq!(v.token(seq.token_ids[5]), Some("red_square"));
        assert_eq!(v.template_context_ids().unwrap().len(), 4);
    }

    #[test]
    fn prompt_layout() {
        let v = Vocabulary::standard();
        let seq = v.prompt_sequence("blue_circle", 16).unwrap();
        assert_eq!(seq.len(), 19);
        assert_eq!(seq.context_len(), 16);
        assert_eq!(v.token(seq.token_ids[seq.end_position]), Some(END_TOKEN));
    }

    #[test]
    fn unknown_word_is_vocabulary_error() {
        let v = Vocabulary::standard();
        assert!(matches!(v.template_sequence("purple_blob"), Err(DptError::Vocabulary(_))));
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let v = Vocabulary::standard();
        v.save(&path).unwrap();
        assert_eq!(Vocabulary::load(&path).unwrap(), v);
    }
}
