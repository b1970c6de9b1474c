use crate::error::{Error, Result};
use crate::sequence::{TokenSequence, EOS, MASK, PAD, SEP, SPECIALS, UNK};
use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

/// Bijective token/id map. Specials occupy the lowest ids in [`SPECIALS`] order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    pub const PAD: usize = 0;
    pub const UNK: usize = 1;
    pub const EOS: usize = 2;
    pub const SEP: usize = 3;
    pub const MASK: usize = 4;

    /// Builds from an ordered list of non-special tokens.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        all.extend(tokens.into_iter().map(Into::into));
        let mut ids = HashMap::with_capacity(all.len());
        for (i, t) in all.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::Input(format!("duplicate vocabulary token '{t}'")));
            }
        }
        Ok(Self { tokens: all, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(Self::UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_special(id: usize) -> bool {
        id < SPECIALS.len()
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<Vec<String>> {
        ids.iter()
            .map(|&i| {
                self.token(i)
                    .map(str::to_owned)
                    .ok_or_else(|| Error::Input(format!("id {i} outside vocabulary of {}", self.len())))
            })
            .collect()
    }

    /// One token per line, line number = id.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            let _ = writeln!(s, "{t}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < SPECIALS.len() || lines[..SPECIALS.len()] != SPECIALS {
            return Err(Error::Input(format!("vocabulary must start with {}", SPECIALS.join(", "))));
        }
        Self::from_tokens(lines[SPECIALS.len()..].iter().copied())
    }
}

/// Counts non-special tokens over all sequences and keeps those seen at
/// least `min_count` times, ordered by frequency (desc) then lexicographically.
pub fn build_vocab<'a, I>(corpora: I, min_count: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a TokenSequence>,
{
    if min_count == 0 {
        return Err(Error::Domain("min_count must be >= 1".into()));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for seq in corpora {
        for t in &seq.tokens {
            if [PAD, UNK, EOS, SEP, MASK].contains(&t.as_str()) {
                continue;
            }
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    Vocabulary::from_tokens(kept.into_iter().map(|(t, _)| t.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(s: &str) -> TokenSequence {
        TokenSequence::parse_line(s)
    }

    #[test]
    fn min_count_filters() {
        let corpus = [seq("a a b a [SEP]")];
        let v = build_vocab(&corpus, 2).unwrap();
        assert!(v.get("a").is_some());
        assert!(v.get("b").is_none());
        assert_eq!(v.id("b"), Vocabulary::UNK);
        assert_eq!(v, build_vocab(&corpus, 2).unwrap());
        assert!(build_vocab(&corpus, 0).is_err());
    }

    #[test]
    fn ordering_and_specials() {
        let corpus = [seq("b c c a [SEP]"), seq("b c [SEP]")];
        let v = build_vocab(&corpus, 1).unwrap();
        assert_eq!(&v.tokens()[..5], &SPECIALS);
        assert_eq!(&v.tokens()[5..], &["c", "b", "a"]);
        assert_eq!(v.id(SEP), Vocabulary::SEP);
        assert_eq!(v.id(MASK), Vocabulary::MASK);
    }

    #[test]
    fn text_round_trip() {
        let v = build_vocab(&[seq("x y y [SEP]")], 1).unwrap();
        let back = Vocabulary::from_text(&v.to_text()).unwrap();
        assert_eq!(v, back);
        let ids: Vec<usize> = (0..v.len()).collect();
        assert_eq!(v.encode(&v.decode(&ids).unwrap()), ids);
        assert!(Vocabulary::from_text("x\ny\n").is_err());
    }
}
