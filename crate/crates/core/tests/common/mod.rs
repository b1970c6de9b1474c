#![allow(dead_code)]

use tunesmith_core::align::Alignment;
use tunesmith_core::mask::mask_song_at;
use tunesmith_core::model::{Example, Mode, ModelConfig};

pub const SEP: usize = 3;

/// Two-sentence lyric/melody toy pair: each word sings one note (two tokens).
pub fn toy_pair() -> (Vec<usize>, Vec<usize>, Alignment) {
    let lyric = vec![5, 6, SEP, 7, SEP];
    let melody = vec![5, 7, 6, 8, SEP, 5, 9, SEP];
    let al: Alignment = "1-1:1-2 2-2:3-4 3-3:5-5 4-4:6-7 5-5:8-8".parse().unwrap();
    (lyric, melody, al)
}

pub fn tiny_config(layers: usize, hidden: usize, heads: usize, ff: usize) -> ModelConfig {
    ModelConfig {
        layers,
        hidden,
        heads,
        ff,
        lyric_vocab: 8,
        melody_vocab: 10,
        max_len: 64,
        dropout: 0.0,
        alpha: 0.5,
        ..ModelConfig::default()
    }
}

/// One batch per loss term.
pub fn four_batches() -> Vec<(Mode, Vec<Example>)> {
    let (lyric, melody, al) = toy_pair();
    let l2l = mask_song_at(&[5, 6, 7, SEP, 7, 5, SEP], 0.5, &[1, 5]).unwrap();
    let m2m = mask_song_at(&melody, 0.5, &[2, 5]).unwrap();
    vec![
        (Mode::Lyric2Lyric, vec![Example::from_masked(&l2l)]),
        (Mode::Melody2Melody, vec![Example::from_masked(&m2m)]),
        (Mode::Lyric2Melody, vec![Example::paired(&lyric, &melody, Some(&al)).unwrap()]),
        (Mode::Melody2Lyric, vec![Example::paired(&melody, &lyric, Some(&al.transposed())).unwrap()]),
    ]
}
