//! Minimal Standard MIDI File reader/writer.
//!
//! Only what melody extraction needs is decoded (note on/off and the
//! tempo meta event); every other event is skipped while still being
//! validated structurally so that errors carry the byte offset where
//! parsing failed.

use super::{quantize, MelodySong, Note, Pitch, RawNote, DEFAULT_BPM};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    NoteOn {
        channel: u8,
        key: u8,
        velocity: u8,
    },
    NoteOff {
        channel: u8,
        key: u8,
    },
    /// Microseconds per quarter note.
    Tempo(u32),
    EndOfTrack,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrackEvent {
    /// Absolute time in ticks.
    pub tick: u64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Smf {
    pub format: u16,
    pub ticks_per_quarter: u16,
    pub tracks: Vec<Vec<TrackEvent>>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err<T>(&self, reason: impl Into<String>) -> Result<T> {
        Err(Error::MidiParse { offset: self.pos, reason: reason.into() })
    }

    fn u8(&mut self) -> Result<u8> {
        match self.bytes.get(self.pos) {
            Some(&b) => {
                self.pos += 1;
                Ok(b)
            }
            None => self.err("unexpected end of data"),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return self.err(format!("need {n} bytes, {} left", self.bytes.len() - self.pos));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn vlq(&mut self) -> Result<u32> {
        let start = self.pos;
        let mut value: u32 = 0;
        for _ in 0..4 {
            let b = self.u8()?;
            value = (value << 7) | (b & 0x7f) as u32;
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(Error::MidiParse { offset: start, reason: "variable-length quantity longer than 4 bytes".into() })
    }
}

impl Smf {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).ok() != Some(b"MThd".as_slice()) {
            return Err(Error::MidiParse { offset: 0, reason: "missing MThd header".into() });
        }
        let header_len = r.u32()? as usize;
        if header_len < 6 {
            return r.err(format!("header length {header_len} < 6"));
        }
        let format = r.u16()?;
        let ntracks = r.u16()?;
        let division_at = r.pos;
        let division = r.u16()?;
        r.take(header_len - 6)?;
        if format > 2 {
            return Err(Error::MidiParse { offset: 8, reason: format!("unknown format {format}") });
        }
        if division & 0x8000 != 0 || division == 0 {
            return Err(Error::MidiParse {
                offset: division_at,
                reason: "SMPTE or zero time division is not supported".into(),
            });
        }

        let mut tracks = Vec::with_capacity(ntracks as usize);
        while tracks.len() < ntracks as usize {
            let chunk_at = r.pos;
            let id = r.take(4)?;
            let len = r.u32()? as usize;
            if id != b"MTrk" {
                // Unknown chunk types are skipped, as SMF requires.
                r.take(len)?;
                continue;
            }
            if bytes.len() - r.pos < len {
                return Err(Error::MidiParse {
                    offset: chunk_at,
                    reason: format!("track chunk length {len} runs past end of file"),
                });
            }
            let body_end = r.pos + len;
            let mut tr = Reader { bytes: &bytes[..body_end], pos: r.pos };
            tracks.push(parse_track(&mut tr)?);
            r.pos = body_end;
        }
        Ok(Smf { format, ticks_per_quarter: division, tracks })
    }

    /// First tempo event by absolute tick over all tracks.
    pub fn first_tempo(&self) -> Option<u32> {
        self.tracks
            .iter()
            .flat_map(|t| t.iter())
            .filter_map(|e| match e.kind {
                EventKind::Tempo(t) => Some((e.tick, t)),
                _ => None,
            })
            .min_by_key(|&(tick, _)| tick)
            .map(|(_, t)| t)
    }
}

fn parse_track(r: &mut Reader<'_>) -> Result<Vec<TrackEvent>> {
    let mut events = Vec::new();
    let mut tick: u64 = 0;
    let mut running: Option<u8> = None;
    while r.pos < r.bytes.len() {
        tick += r.vlq()? as u64;
        let status_at = r.pos;
        let mut status = r.u8()?;
        let mut first_data = None;
        if status < 0x80 {
            match running {
                Some(s) => {
                    first_data = Some(status);
                    status = s;
                }
                None => {
                    return Err(Error::MidiParse {
                        offset: status_at,
                        reason: "data byte without running status".into(),
                    })
                }
            }
        }
        let kind = match status {
            0x80..=0xef => {
                running = Some(status);
                let channel = status & 0x0f;
                let a = match first_data {
                    Some(b) => b,
                    None => r.u8()?,
                };
                let b = if matches!(status & 0xf0, 0xc0 | 0xd0) { 0 } else { r.u8()? };
                if a > 0x7f || b > 0x7f {
                    return Err(Error::MidiParse {
                        offset: r.pos - 1,
                        reason: "channel data byte has high bit set".into(),
                    });
                }
                match status & 0xf0 {
                    0x90 if b > 0 => EventKind::NoteOn { channel, key: a, velocity: b },
                    0x90 | 0x80 => EventKind::NoteOff { channel, key: a },
                    _ => EventKind::Other,
                }
            }
            0xff => {
                running = None;
                let meta = r.u8()?;
                let len = r.vlq()? as usize;
                let data = r.take(len)?;
                match meta {
                    0x51 => {
                        if len != 3 {
                            return Err(Error::MidiParse {
                                offset: status_at,
                                reason: format!("tempo event with length {len}"),
                            });
                        }
                        EventKind::Tempo((data[0] as u32) << 16 | (data[1] as u32) << 8 | data[2] as u32)
                    }
                    0x2f => EventKind::EndOfTrack,
                    _ => EventKind::Other,
                }
            }
            0xf0 | 0xf7 => {
                running = None;
                let len = r.vlq()? as usize;
                r.take(len)?;
                EventKind::Other
            }
            _ => {
                return Err(Error::MidiParse {
                    offset: status_at,
                    reason: format!("unsupported status byte 0x{status:02x}"),
                })
            }
        };
        events.push(TrackEvent { tick, kind });
        if kind == EventKind::EndOfTrack {
            break;
        }
    }
    Ok(events)
}

/// Extracts a monophonic melody from one track of a Standard MIDI File.
///
/// Notes starting on the same sixteenth keep only the highest pitch;
/// an earlier note still sounding at a later onset is truncated there;
/// gaps (including a leading gap from time 0) become rest notes. The whole
/// track is returned as a single phrase.
pub fn parse_midi_melody(bytes: &[u8], track_index: usize) -> Result<MelodySong> {
    let smf = Smf::parse(bytes)?;
    let track =
        smf.tracks.get(track_index).ok_or(Error::NoSuchTrack { index: track_index, count: smf.tracks.len() })?;
    let tempo = smf.first_tempo().unwrap_or(500_000);
    let bpm = if smf.first_tempo().is_some() { 60_000_000.0 / tempo as f64 } else { DEFAULT_BPM };
    let seconds_per_tick = tempo as f64 / 1_000_000.0 / smf.ticks_per_quarter as f64;

    let end_tick = track.last().map(|e| e.tick).unwrap_or(0);
    let mut open: Vec<(u8, u8, u64)> = Vec::new();
    let mut raw = Vec::new();
    for ev in track {
        match ev.kind {
            EventKind::NoteOn { channel, key, .. } => open.push((channel, key, ev.tick)),
            EventKind::NoteOff { channel, key } => {
                if let Some(i) = open.iter().position(|&(c, k, _)| c == channel && k == key) {
                    let (_, key, start) = open.remove(i);
                    raw.push((key, start, ev.tick));
                }
            }
            _ => {}
        }
    }
    for (_, key, start) in open {
        raw.push((key, start, end_tick));
    }
    if raw.is_empty() {
        return Err(Error::EmptyTrack(track_index));
    }
    let raw: Vec<RawNote> = raw
        .into_iter()
        .map(|(key, start, end)| RawNote {
            pitch: Pitch::Midi(key),
            start: start as f64 * seconds_per_tick,
            duration: end.saturating_sub(start) as f64 * seconds_per_tick,
        })
        .collect();
    let mut notes = quantize(&raw, bpm)?;
    notes.sort_by(|a, b| a.onset.cmp(&b.onset).then(b.pitch.cmp(&a.pitch)));
    notes.dedup_by_key(|n| n.onset);

    let mut melody = Vec::with_capacity(notes.len() * 2);
    let mut cursor = 0;
    for i in 0..notes.len() {
        let mut n = notes[i];
        if let Some(next) = notes.get(i + 1) {
            if n.end() > next.onset {
                n.duration = next.onset - n.onset;
            }
        }
        if n.onset > cursor {
            melody.push(Note::new(Pitch::Rest, cursor, n.onset - cursor));
        }
        cursor = n.end();
        melody.push(n);
    }
    let len = melody.len();
    MelodySong::new(melody, vec![len], bpm)
}

const WRITE_TPQ: u16 = 480;

fn push_vlq(out: &mut Vec<u8>, mut v: u32) {
    let mut buf = [0u8; 4];
    let mut n = 0;
    loop {
        buf[n] = (v & 0x7f) as u8;
        n += 1;
        v >>= 7;
        if v == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        out.push(buf[i] | if i > 0 { 0x80 } else { 0 });
    }
}

/// Renders a song as a format-0 SMF with one tempo event; rests become silence.
pub fn write_midi_melody(song: &MelodySong) -> Vec<u8> {
    let ticks_per_sixteenth = (WRITE_TPQ / 4) as u32;
    let tempo = (60_000_000.0 / song.bpm).round().clamp(1.0, 16_777_215.0) as u32;

    let mut body = Vec::new();
    push_vlq(&mut body, 0);
    body.extend_from_slice(&[0xff, 0x51, 0x03]);
    body.extend_from_slice(&tempo.to_be_bytes()[1..]);

    let mut last_tick = 0u32;
    for n in &song.notes {
        let Pitch::Midi(key) = n.pitch else { continue };
        let on = n.onset * ticks_per_sixteenth;
        let off = n.end() * ticks_per_sixteenth;
        push_vlq(&mut body, on - last_tick);
        body.extend_from_slice(&[0x90, key, 80]);
        push_vlq(&mut body, off - on);
        body.extend_from_slice(&[0x80, key, 0]);
        last_tick = off;
    }
    let end = song.total_duration() * ticks_per_sixteenth;
    push_vlq(&mut body, end.saturating_sub(last_tick));
    body.extend_from_slice(&[0xff, 0x2f, 0x00]);

    let mut out = Vec::with_capacity(body.len() + 22);
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&WRITE_TPQ.to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Hand-assembled format-0 file: tpq 96, tempo 500000 (120 BPM).
    fn smf(track: &[u8]) -> Vec<u8> {
        let mut v = b"MThd\x00\x00\x00\x06\x00\x00\x00\x01\x00\x60".to_vec();
        v.extend_from_slice(b"MTrk");
        v.extend_from_slice(&(track.len() as u32).to_be_bytes());
        v.extend_from_slice(track);
        v
    }

    const TEMPO: [u8; 7] = [0x00, 0xff, 0x51, 0x03, 0x07, 0xa1, 0x20];
    const EOT: [u8; 4] = [0x00, 0xff, 0x2f, 0x00];

    #[test]
    fn single_beat_note() {
        let mut t = TEMPO.to_vec();
        t.extend_from_slice(&[0x00, 0x90, 60, 100, 0x60, 0x80, 60, 0]);
        t.extend_from_slice(&EOT);
        let song = parse_midi_melody(&smf(&t), 0).unwrap();
        assert_eq!(song.notes, vec![Note::new(Pitch::Midi(60), 0, 4)]);
        assert_eq!(song.phrase_boundaries, vec![1]);
        assert_eq!(song.bpm, 120.0);
    }

    #[test]
    fn half_beat_gap_becomes_rest() {
        let mut t = TEMPO.to_vec();
        // note, 48-tick silence (half a beat), note; running status on the second pair
        t.extend_from_slice(&[0x00, 0x90, 60, 100, 0x60, 60, 0]);
        t.extend_from_slice(&[0x30, 62, 100, 0x60, 62, 0]);
        t.extend_from_slice(&EOT);
        let song = parse_midi_melody(&smf(&t), 0).unwrap();
        assert_eq!(
            song.notes,
            vec![Note::new(Pitch::Midi(60), 0, 4), Note::new(Pitch::Rest, 4, 2), Note::new(Pitch::Midi(62), 6, 4),]
        );
    }

    #[test]
    fn overlap_truncates_earlier_note() {
        let mut t = TEMPO.to_vec();
        t.extend_from_slice(&[0x00, 0x90, 60, 100]);
        t.extend_from_slice(&[0x30, 0x90, 64, 100]);
        t.extend_from_slice(&[0x30, 0x80, 60, 0]);
        t.extend_from_slice(&[0x30, 0x80, 64, 0]);
        t.extend_from_slice(&EOT);
        let song = parse_midi_melody(&smf(&t), 0).unwrap();
        assert_eq!(song.notes, vec![Note::new(Pitch::Midi(60), 0, 2), Note::new(Pitch::Midi(64), 2, 4)]);
    }

    #[test]
    fn missing_tempo_defaults_to_120() {
        let mut t = vec![0x00, 0x90, 67, 90, 0x18, 0x80, 67, 0];
        t.extend_from_slice(&EOT);
        let song = parse_midi_melody(&smf(&t), 0).unwrap();
        assert_eq!(song.bpm, DEFAULT_BPM);
        assert_eq!(song.notes, vec![Note::new(Pitch::Midi(67), 0, 1)]);
    }

    #[test]
    fn empty_track_is_an_error() {
        let mut t = TEMPO.to_vec();
        t.extend_from_slice(&EOT);
        assert!(matches!(parse_midi_melody(&smf(&t), 0), Err(Error::EmptyTrack(0))));
    }

    #[test]
    fn malformed_reports_offset() {
        let mut t = TEMPO.to_vec();
        t.extend_from_slice(&[0x00, 0xf4, 0x00]);
        let err = parse_midi_melody(&smf(&t), 0).unwrap_err();
        match err {
            // 14-byte header + 8-byte chunk header + 7-byte tempo + 1 delta byte
            Error::MidiParse { offset, .. } => assert_eq!(offset, 30),
            e => panic!("unexpected {e:?}"),
        }
        assert!(matches!(parse_midi_melody(b"RIFF....", 0), Err(Error::MidiParse { offset: 0, .. })));
    }

    #[test]
    fn truncated_chunk_is_an_error() {
        let mut bytes = smf(&[0x00, 0x90, 60, 100]);
        bytes.truncate(bytes.len() - 2);
        assert!(matches!(Smf::parse(&bytes), Err(Error::MidiParse { offset: 14, .. })));
    }

    #[test]
    fn write_then_parse() {
        let song = MelodySong::from_sequence(
            &[(Pitch::Rest, 7), (Pitch::Midi(55), 1), (Pitch::Midi(64), 2), (Pitch::Midi(62), 6)],
            90.0,
        )
        .unwrap();
        let back = parse_midi_melody(&write_midi_melody(&song), 0).unwrap();
        assert_eq!(back.notes, song.notes);
        assert!((back.bpm - 90.0).abs() < 1e-3);
    }

    #[test]
    fn vlq_encoding() {
        for v in [0u32, 0x7f, 0x80, 0x2000, 0x3fff, 0x4000, 0x0fff_ffff] {
            let mut buf = Vec::new();
            push_vlq(&mut buf, v);
            let mut r = Reader { bytes: &buf, pos: 0 };
            assert_eq!(r.vlq().unwrap(), v);
            assert_eq!(r.pos, buf.len());
        }
    }
}
