use crate::error::{Error, Result};

/// Letter tokenizer: `a`–`z` are ids 0–25, the apostrophe is 26, the word
/// boundary (written as a space) is 27 and the CTC blank is 28.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Tokenizer;

impl Tokenizer {
    pub const APOSTROPHE: usize = 26;
    pub const WORD_BOUNDARY: usize = 27;
    pub const BLANK: usize = 28;
    /// Output vocabulary size including the blank.
    pub const VOCAB: usize = 29;

    pub fn new() -> Self {
        Self
    }

    pub fn vocab_size(&self) -> usize {
        Self::VOCAB
    }

    pub fn blank(&self) -> usize {
        Self::BLANK
    }

    pub fn token_id(c: char) -> Option<usize> {
        match c {
            'a'..='z' => Some(c as usize - 'a' as usize),
            '\'' => Some(Self::APOSTROPHE),
            ' ' => Some(Self::WORD_BOUNDARY),
            _ => None,
        }
    }

    pub fn token_char(id: usize) -> Option<char> {
        match id {
            0..=25 => Some((b'a' + id as u8) as char),
            Self::APOSTROPHE => Some('\''),
            Self::WORD_BOUNDARY => Some(' '),
            _ => None,
        }
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| {
                Self::token_id(c)
                    .ok_or_else(|| Error::contract(format!("character {c:?} not in the alphabet")))
            })
            .collect()
    }

    /// Inverse of [`encode`](Self::encode); blank and unknown ids are errors.
    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        ids.iter()
            .map(|&i| {
                Self::token_char(i)
                    .ok_or_else(|| Error::contract(format!("token id {i} has no character")))
            })
            .collect()
    }

    /// Decoder output to text, dropping blanks and unknown ids.
    pub fn decode_lossy(&self, ids: &[usize]) -> String {
        ids.iter().filter_map(|&i| Self::token_char(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alphabet_layout() {
        let t = Tokenizer::new();
        assert_eq!(t.encode("az' ").unwrap(), vec![0, 25, 26, 27]);
        assert_eq!(t.vocab_size(), 29);
        assert!(t.encode("A").is_err());
        assert!(t.decode(&[Tokenizer::BLANK]).is_err());
        assert_eq!(t.decode_lossy(&[7, 28, 8]), "hi");
    }
}
