//! Tokenization with byte offsets.
//!
//! The reference [`PieceTokenizer`] splits text into chunks of
//! `whitespace* non-whitespace*`, so a word's leading space belongs to the
//! word's first token, then greedily matches the longest vocabulary piece
//! inside each chunk. Bytes no piece covers become byte-fallback tokens, which
//! makes tokenization total over arbitrary byte strings.
//!
//! Vocabulary file: one piece per line (UTF-8, spaces significant), line
//! number = id. With `n` lines, ids `n..n+256` are the byte-fallback tokens
//! and `n + 256` is BOS.

use std::collections::HashMap;
use std::ops::Range;
use std::path::Path;

use super::EngineError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub id: u32,
    /// Half-open byte range into the source text.
    pub span: Range<usize>,
}

pub trait Tokenizer: Send + Sync {
    fn vocab_size(&self) -> usize;

    fn bos_id(&self) -> u32 {
        (self.vocab_size() - 1) as u32
    }

    /// Spans of the returned tokens tile `text` exactly.
    fn tokenize(&self, text: &[u8]) -> Vec<Token>;

    fn detokenize(&self, ids: &[u32]) -> Vec<u8>;
}

#[derive(Debug, Clone)]
pub struct PieceTokenizer {
    pieces: Vec<String>,
    lookup: HashMap<Vec<u8>, u32>,
    max_piece_len: usize,
}

impl PieceTokenizer {
    pub fn new<S: Into<String>>(pieces: impl IntoIterator<Item = S>) -> Self {
        let pieces: Vec<String> = pieces.into_iter().map(Into::into).collect();
        let mut lookup = HashMap::new();
        for (id, p) in pieces.iter().enumerate() {
            if !p.is_empty() {
                lookup.entry(p.as_bytes().to_vec()).or_insert(id as u32);
            }
        }
        let max_piece_len = pieces.iter().map(String::len).max().unwrap_or(0);
        Self { pieces, lookup, max_piece_len }
    }

    /// Byte-fallback only.
    pub fn bytes_only() -> Self {
        Self::new(Vec::<String>::new())
    }

    pub fn from_vocab_str(text: &str) -> Self {
        Self::new(text.lines().map(|l| l.strip_suffix('\r').unwrap_or(l).to_string()))
    }

    pub fn from_vocab_file(path: &Path) -> Result<Self, EngineError> {
        Ok(Self::from_vocab_str(&std::fs::read_to_string(path)?))
    }

    pub fn to_vocab_string(&self) -> String {
        let mut s = self.pieces.join("\n");
        s.push('\n');
        s
    }

    pub fn piece_count(&self) -> usize {
        self.pieces.len()
    }

    pub fn byte_id(&self, byte: u8) -> u32 {
        (self.pieces.len() + byte as usize) as u32
    }

    fn push_chunk(&self, text: &[u8], range: Range<usize>, out: &mut Vec<Token>) {
        let mut pos = range.start;
        while pos < range.end {
            let longest = self.max_piece_len.min(range.end - pos);
            let hit = (1..=longest)
                .rev()
                .find_map(|len| self.lookup.get(&text[pos..pos + len]).map(|&id| (id, len)));
            let (id, len) = hit.unwrap_or((self.byte_id(text[pos]), 1));
            out.push(Token { id, span: pos..pos + len });
            pos += len;
        }
    }
}

impl Tokenizer for PieceTokenizer {
    fn vocab_size(&self) -> usize {
        self.pieces.len() + 257
    }

    fn tokenize(&self, text: &[u8]) -> Vec<Token> {
        let mut out = Vec::new();
        let mut start = 0;
        while start < text.len() {
            let mut end = start;
            while end < text.len() && text[end].is_ascii_whitespace() {
                end += 1;
            }
            while end < text.len() && !text[end].is_ascii_whitespace() {
                end += 1;
            }
            self.push_chunk(text, start..end, &mut out);
            start = end;
        }
        out
    }

    fn detokenize(&self, ids: &[u32]) -> Vec<u8> {
        let n = self.pieces.len();
        let mut out = Vec::new();
        for &id in ids {
            let id = id as usize;
            if id < n {
                out.extend_from_slice(self.pieces[id].as_bytes());
            } else if id < n + 256 {
                out.push((id - n) as u8);
            }
        }
        out
    }
}
