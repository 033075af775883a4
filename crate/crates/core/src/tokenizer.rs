//! Character-level vocabulary with atomic identifier markers.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::corpus::{SerializedSample, MARKERS};
use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;

const SPECIAL_NAMES: [&str; 4] = ["[PAD]", "[BOS]", "[EOS]", "[UNK]"];
const HEADER_PREFIX: &str = "#guti-vocab";
const FORMAT_VERSION: u32 = 1;

/// Ids `0..4` are PAD/BOS/EOS/UNK, the identifier markers follow, then
/// characters by descending frequency (ties by code point).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    min_count: usize,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>, min_count: usize) -> Result<Self> {
        let index: HashMap<String, TokenId> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        if index.len() != tokens.len() {
            return Err(Error::Vocab("duplicate token".into()));
        }
        let prefix = SPECIAL_NAMES.iter().chain(MARKERS.iter());
        if !prefix.zip(&tokens).all(|(a, b)| a == b) || tokens.len() < Self::first_char_id() as usize {
            return Err(Error::Vocab("special tokens missing or out of order".into()));
        }
        Ok(Vocab {
            tokens,
            index,
            min_count,
        })
    }

    /// First id available to ordinary characters.
    pub const fn first_char_id() -> TokenId {
        (SPECIAL_NAMES.len() + MARKERS.len()) as TokenId
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn is_marker(&self, id: TokenId) -> bool {
        (SPECIAL_NAMES.len() as TokenId..Self::first_char_id()).contains(&id)
    }

    /// Ids of all identifier markers.
    pub fn marker_ids(&self) -> impl Iterator<Item = TokenId> {
        SPECIAL_NAMES.len() as TokenId..Self::first_char_id()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        writeln!(out, "{HEADER_PREFIX} v{FORMAT_VERSION} min_count={}", self.min_count).unwrap();
        for t in &self.tokens {
            writeln!(out, "{t}").unwrap();
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Parses the vocab file format: a header line
    /// `#guti-vocab v1 min_count=N`, then one token per line where the
    /// (0-based) line number after the header is the id.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Vocab("empty vocab file".into()))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(HEADER_PREFIX) {
            return Err(Error::Vocab(format!("bad header `{header}`")));
        }
        if parts.next() != Some(&format!("v{FORMAT_VERSION}")) {
            return Err(Error::Vocab(format!("unsupported version in `{header}`")));
        }
        let min_count = parts
            .next()
            .and_then(|p| p.strip_prefix("min_count="))
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| Error::Vocab(format!("missing min_count in `{header}`")))?;
        Self::from_tokens(lines.map(str::to_string).collect(), min_count)
    }
}

/// Counts characters over the corpus (markers excluded) and keeps those with
/// at least `min_count` occurrences.
pub fn build_vocab(corpus: &[SerializedSample], min_count: usize) -> Result<Vocab> {
    if corpus.is_empty() {
        return Err(Error::Vocab("empty corpus".into()));
    }
    if min_count == 0 {
        return Err(Error::Vocab("min_count must be at least 1".into()));
    }
    let mut counts: HashMap<char, usize> = HashMap::new();
    for sample in corpus {
        for piece in split_markers(&sample.text) {
            if let Piece::Text(s) = piece {
                for c in s.chars() {
                    *counts.entry(c).or_default() += 1;
                }
            }
        }
    }
    let mut chars: Vec<(char, usize)> = counts.into_iter().filter(|(_, n)| *n >= min_count).collect();
    chars.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let tokens = SPECIAL_NAMES
        .iter()
        .chain(MARKERS.iter())
        .map(|s| s.to_string())
        .chain(chars.into_iter().map(|(c, _)| c.to_string()))
        .collect();
    Vocab::from_tokens(tokens, min_count)
}

enum Piece<'a> {
    Marker(&'a str),
    Text(&'a str),
}

/// Greedy left-to-right split into markers and plain text.
fn split_markers(text: &str) -> Vec<Piece<'_>> {
    let mut pieces = Vec::new();
    let mut plain_start = 0;
    let mut i = 0;
    while i < text.len() {
        let rest = &text[i..];
        let hit = MARKERS
            .iter()
            .filter(|m| rest.starts_with(**m))
            .max_by_key(|m| m.len());
        if let Some(m) = hit {
            if plain_start < i {
                pieces.push(Piece::Text(&text[plain_start..i]));
            }
            pieces.push(Piece::Marker(&text[i..i + m.len()]));
            i += m.len();
            plain_start = i;
        } else {
            i += rest.chars().next().map_or(1, char::len_utf8);
        }
    }
    if plain_start < text.len() {
        pieces.push(Piece::Text(&text[plain_start..]));
    }
    pieces
}

/// Markers become single ids; other characters map one-to-one, unknown ones
/// to UNK.
pub fn encode(text: &str, vocab: &Vocab) -> Vec<TokenId> {
    let mut ids = Vec::new();
    for piece in split_markers(text) {
        match piece {
            Piece::Marker(m) => ids.push(vocab.id(m).expect("markers are always in the vocab")),
            Piece::Text(s) => {
                let mut buf = [0u8; 4];
                ids.extend(s.chars().map(|c| vocab.id(c.encode_utf8(&mut buf)).unwrap_or(UNK)));
            }
        }
    }
    ids
}

/// Concatenates tokens; PAD/BOS/EOS/UNK render as nothing.
pub fn decode(ids: &[TokenId], vocab: &Vocab) -> Result<String> {
    let mut out = String::new();
    for &id in ids {
        let tok = vocab
            .token(id)
            .ok_or_else(|| Error::Vocab(format!("id {id} out of range for vocab of {}", vocab.len())))?;
        if id >= SPECIAL_NAMES.len() as TokenId {
            out.push_str(tok);
        }
    }
    Ok(out)
}

/// BOS + text + EOS, the layout used for training.
pub fn encode_sample(sample: &SerializedSample, vocab: &Vocab) -> Vec<TokenId> {
    let mut ids = vec![BOS];
    ids.extend(encode(&sample.text, vocab));
    ids.push(EOS);
    ids
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{serialize, FormCatalog, Poem};

    fn sample(form: &str, theme: &str, body: &str) -> SerializedSample {
        serialize(&Poem::new(form, theme, body).unwrap(), &FormCatalog::builtin()).unwrap()
    }

    fn bare(text: &str) -> SerializedSample {
        let mut s = sample("五绝", "", "一");
        s.text = text.to_string();
        s
    }

    #[test]
    fn single_sample_vocab() {
        let v = build_vocab(&[bare("床前明月光")], 1).unwrap();
        assert_eq!(v.len(), Vocab::first_char_id() as usize + 5);
        assert_eq!(v.id("[PAD]"), Some(PAD));
        assert_eq!(v.id("[UNK]"), Some(UNK));
        assert!(v.marker_ids().all(|id| v.is_marker(id)));
    }

    #[test]
    fn min_count_threshold_maps_hapax_to_unk() {
        let v = build_vocab(&[bare("明月明月光")], 2).unwrap();
        assert_eq!(v.len(), Vocab::first_char_id() as usize + 2);
        let ids = encode("光", &v);
        assert_eq!(ids, vec![UNK]);
        assert!(build_vocab(&[bare("x")], 0).is_err());
        assert!(build_vocab(&[], 1).is_err());
    }

    #[test]
    fn ordering_by_frequency_then_codepoint() {
        let v = build_vocab(&[bare("乙甲甲丙丙")], 1).unwrap();
        let first = Vocab::first_char_id();
        // 丙 (U+4E19) and 甲 (U+7532) both twice: code point order.
        assert_eq!(v.token(first), Some("丙"));
        assert_eq!(v.token(first + 1), Some("甲"));
        assert_eq!(v.token(first + 2), Some("乙"));
    }

    #[test]
    fn markers_are_atomic() {
        let s = sample("五绝", "秋思", "暮燕翻惊户，");
        let v = build_vocab(std::slice::from_ref(&s), 1).unwrap();
        assert_eq!(encode("(格式)", &v).len(), 1);
        assert!(v.is_marker(encode("(格式)", &v)[0]));
        let ids = encode(&s.text, &v);
        assert_eq!(ids.len(), s.token_len());
        assert_eq!(decode(&ids, &v).unwrap(), s.text);
        // A lone parenthesis is an ordinary (here unknown) character.
        assert_eq!(encode("(格", &v), vec![UNK, v.id("格").unwrap_or(UNK)]);
    }

    #[test]
    fn decode_specials_and_range() {
        let v = build_vocab(&[bare("床")], 1).unwrap();
        assert_eq!(decode(&[EOS], &v).unwrap(), "");
        assert_eq!(decode(&[BOS, PAD, UNK], &v).unwrap(), "");
        assert_eq!(encode("", &v), Vec::<TokenId>::new());
        assert!(decode(&[v.len() as TokenId], &v).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let v = build_vocab(&[sample("七绝", "秋思", "年华冉冉飞无翼，风物萧萧滞故乡。")], 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        v.save(&path).unwrap();
        let back = Vocab::load(&path).unwrap();
        assert_eq!(back, v);
        assert!(Vocab::parse("junk\n").is_err());
        assert!(Vocab::parse("#guti-vocab v1 min_count=1\n[PAD]\n").is_err());
    }
}
