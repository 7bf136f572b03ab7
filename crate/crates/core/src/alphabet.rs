//! The 29-symbol output alphabet: `a`..`z`, space, apostrophe, blank.

/// Number of output symbols, blank included.
pub const ALPHABET_SIZE: usize = 29;

/// Index of the CTC blank symbol (always last).
pub const BLANK: usize = 28;

/// Bijective map between characters and network output indices.
///
/// Indices 0..=25 are `a`..`z`, 26 is space, 27 is apostrophe and 28 is
/// the CTC blank. The blank has no character representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Alphabet;

impl Alphabet {
    pub const fn size(&self) -> usize {
        ALPHABET_SIZE
    }

    pub const fn blank_index(&self) -> usize {
        BLANK
    }

    /// Index for a character, or `None` if it is outside the alphabet.
    pub fn index_of(&self, c: char) -> Option<usize> {
        match c {
            'a'..='z' => Some(c as usize - 'a' as usize),
            ' ' => Some(26),
            '\'' => Some(27),
            _ => None,
        }
    }

    /// Character for a non-blank index.
    pub fn char_at(&self, idx: usize) -> Option<char> {
        match idx {
            0..=25 => Some((b'a' + idx as u8) as char),
            26 => Some(' '),
            27 => Some('\''),
            _ => None,
        }
    }

    /// Encode a transcript into indices. Fails on out-of-alphabet chars.
    pub fn encode(&self, text: &str) -> Option<Vec<usize>> {
        text.chars().map(|c| self.index_of(c)).collect()
    }

    /// Decode indices into a string, skipping the blank.
    pub fn decode(&self, indices: &[usize]) -> String {
        indices.iter().filter_map(|&i| self.char_at(i)).collect()
    }

    /// True if every character of `text` is inside the alphabet.
    pub fn is_clean(&self, text: &str) -> bool {
        text.chars().all(|c| self.index_of(c).is_some())
    }
}

/// Transcript cleaning: lowercase, strip punctuation except apostrophe,
/// collapse runs of whitespace to single spaces, trim.
///
/// Digits and non-ASCII letters are kept: they are not punctuation, and
/// downstream validation decides whether such transcripts are usable
/// (there is no digit expansion).
pub fn normalize_text(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_space = false;
    for c in raw.chars() {
        let c = c.to_ascii_lowercase();
        if c.is_alphanumeric() || c == '\'' {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(c);
        } else if c.is_whitespace() {
            pending_space = true;
        }
        // remaining punctuation is dropped
    }
    out
}
