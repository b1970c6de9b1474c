//! Lyric corpus parsing.
//!
//! Songs are separated by blank lines; each remaining line is one sentence.
//! Words are lowercased and stripped of punctuation, keeping apostrophes
//! inside words ("i'm").

use crate::sequence::{TokenSequence, SEP};

/// Splits a normalized word into model tokens. Whole words by default;
/// a hyphenation-based splitter can produce syllables instead.
pub trait WordSplitter {
    fn split(&self, word: &str) -> Vec<String>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct WholeWords;

impl WordSplitter for WholeWords {
    fn split(&self, word: &str) -> Vec<String> {
        vec![word.to_string()]
    }
}

/// Lowercases and strips punctuation; returns `None` if nothing is left.
pub fn normalize_word(raw: &str) -> Option<String> {
    let cleaned: String = raw
        .chars()
        .map(|c| if c == '\u{2019}' || c == '`' { '\'' } else { c })
        .filter(|c| c.is_alphanumeric() || *c == '\'')
        .flat_map(char::to_lowercase)
        .collect();
    let trimmed = cleaned.trim_matches('\'');
    (!trimmed.is_empty()).then(|| trimmed.to_string())
}

/// Words of one lyric line after normalization.
pub fn line_words(line: &str) -> Vec<String> {
    line.split_whitespace().filter_map(normalize_word).collect()
}

pub fn parse_lyrics(text: &str) -> Vec<TokenSequence> {
    parse_lyrics_with(text, &WholeWords)
}

/// Like [`parse_lyrics`] with a custom word splitter. Lines that contain no
/// word after normalization are dropped without ending the song.
pub fn parse_lyrics_with(text: &str, splitter: &dyn WordSplitter) -> Vec<TokenSequence> {
    let mut songs = Vec::new();
    let mut current: Vec<String> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                songs.push(TokenSequence::new(std::mem::take(&mut current)));
            }
            continue;
        }
        let words = line_words(line);
        if words.is_empty() {
            continue;
        }
        for w in &words {
            current.extend(splitter.split(w));
        }
        current.push(SEP.to_string());
    }
    if !current.is_empty() {
        songs.push(TokenSequence::new(current));
    }
    songs
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_line_song() {
        let songs = parse_lyrics("Another day has gone\nI'm still all alone");
        assert_eq!(songs.len(), 1);
        assert_eq!(songs[0].to_line(), "another day has gone [SEP] i'm still all alone [SEP]");
        assert_eq!(songs[0].sentence_ids[4], 0);
        assert_eq!(songs[0].sentence_ids[5], 1);
    }

    #[test]
    fn blank_only_input() {
        assert!(parse_lyrics("\n  \n\n").is_empty());
        assert!(parse_lyrics("").is_empty());
    }

    #[test]
    fn punctuation_and_songs() {
        let text = "Hello, World!\n\u{2018}Round the ‘bend’ we go...\n\n\nSecond song's line\n";
        let songs = parse_lyrics(text);
        assert_eq!(songs.len(), 2);
        assert_eq!(songs[0].to_line(), "hello world [SEP] round the bend we go [SEP]");
        assert_eq!(songs[1].to_line(), "second song's line [SEP]");
    }

    struct Hyphen;
    impl WordSplitter for Hyphen {
        fn split(&self, word: &str) -> Vec<String> {
            if word.len() > 4 {
                let (a, b) = word.split_at(word.len() / 2);
                vec![format!("{a}-"), b.to_string()]
            } else {
                vec![word.to_string()]
            }
        }
    }

    #[test]
    fn custom_splitter() {
        let songs = parse_lyrics_with("singing now", &Hyphen);
        assert_eq!(songs[0].to_line(), "sin- ging now [SEP]");
    }
}
