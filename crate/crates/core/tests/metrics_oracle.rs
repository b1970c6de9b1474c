//! Metric values frozen from an independent DTW table computed outside this
//! crate (plain Python, full O(n*m) recursion).

use tunesmith_core::metrics::{distribution_similarity, dtw, melody_distance, DistributionKind, PitchSeries};
use tunesmith_core::score::{MelodySong, Pitch};

fn song(events: &[(Option<u8>, u32)]) -> MelodySong {
    let ev: Vec<(Pitch, u32)> = events.iter().map(|&(p, d)| (p.map_or(Pitch::Rest, Pitch::Midi), d)).collect();
    MelodySong::from_sequence(&ev, 120.0).unwrap()
}

#[test]
fn dtw_hand_tables() {
    // cost table |a_i - b_j| and cumulative table worked by hand: corner = 4
    assert_eq!(dtw(&[1.0, 3.0, 4.0, 9.0], &[1.0, 2.0, 8.0, 9.0]), 4.0);
    assert_eq!(dtw(&[0.0, 0.0, 1.0], &[0.0, 1.0, 1.0]), 0.0);
    assert_eq!(dtw(&[2.0], &[0.0, 1.0, 5.0]), 2.0 + 1.0 + 3.0);
}

#[test]
fn melody_distance_frozen_pair() {
    let a = song(&[(Some(60), 4), (None, 2), (Some(67), 2), (Some(65), 4)]);
    let b = song(&[(Some(62), 2), (Some(64), 6), (Some(60), 4)]);
    let d = melody_distance(&a, &b).unwrap();
    assert!((d - 40.0).abs() < 1e-9, "{d}");
    let s = PitchSeries::from_song(&a).unwrap();
    assert_eq!(s.0.len(), 12);
}

#[test]
fn rest_only_durations_still_count() {
    let a = song(&[(Some(60), 4), (None, 4)]);
    let b = song(&[(Some(60), 4), (Some(62), 4)]);
    assert_eq!(
        distribution_similarity(std::slice::from_ref(&a), std::slice::from_ref(&b), DistributionKind::Duration)
            .unwrap(),
        1.0
    );
    assert_eq!(distribution_similarity(&[a], &[b], DistributionKind::Pitch).unwrap(), 0.5);
}
