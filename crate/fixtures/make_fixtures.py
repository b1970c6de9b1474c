"""Regenerates the fixture corpus.

Paired songs get seeded random melodies over hand-written lyrics; MIDI files
are assembled byte by byte from the Standard MIDI File layout. Run from this
directory: python3 make_fixtures.py
"""

import random
import struct
from pathlib import Path

HERE = Path(__file__).parent

TRAIN = [
    ["the morning light is calling", "open every window wide", "let the river carry you"],
    ["paper boats along the harbor", "sailing where the gulls are flying", "home before the evening bell"],
    ["winter rain on quiet streets", "lanterns glowing one by one", "hold my hand and walk with me"],
    ["golden fields beneath the sun", "every seed a tiny promise", "summer dreams are growing tall"],
    ["count the stars above the hill", "whisper wishes to the moon", "sleep until the sky turns blue"],
    ["dancing shadows on the wall", "candle flicker soft and slow", "tell me stories of the sea"],
    ["maple leaves are falling down", "red and amber in the wind", "autumn sings a lullaby"],
    ["running down the sandy shore", "chasing waves that never stop", "laughing till the tide comes in"],
    ["silver bells at midnight ring", "snowflakes drifting through the square", "friends together by the fire"],
    ["mountain roads that twist and climb", "clouds like castles far away", "we will find the other side"],
]

HELDOUT = [
    ["bright kites over the meadow", "tails of ribbon in the breeze", "children running after them"],
    ["old piano in the hallway", "dusty keys remember songs", "play a tune for grandma now"],
    ["trains are rolling through the valley", "whistle echo off the stone", "carry letters to the town"],
    ["the garden gate is open", "roses climbing up the fence", "bees are humming all day long"],
]

CORPUS = [
    ["another day has gone", "i'm still all alone", "waiting by the door", "for the sound of you"],
    ["little bird upon the branch", "singing to the morning sky", "tell me where the rivers go", "tell me why the mountains rise"],
    ["all the lights in the city", "shining like a thousand eyes", "we are dreaming wide awake", "underneath the neon skies"],
    ["slowly turns the water wheel", "grinding grain for daily bread", "miller hums a simple song", "as the sun sinks overhead"],
    ["keep the candle burning bright", "through the long and lonely night", "morning comes to those who wait", "open up the garden gate"],
]

# C major scale degrees around middle C
SCALE = [55, 57, 59, 60, 62, 64, 65, 67, 69, 71, 72]
DURS = [2, 2, 3, 4, 4, 4, 6, 8]
NAMES = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"]


def pitch_name(p):
    return f"{NAMES[p % 12]}{p // 12 - 1}"


def dur_name(d):
    from math import gcd

    g = gcd(d, 16)
    return f"{d // g}/{16 // g}"


def melody_for(lines, rng, shift):
    idx = rng.randrange(3, 8)
    out = []
    for line in lines:
        words = line.split()
        sentence = []
        for w_i, word in enumerate(words):
            notes = []
            for _ in range(2 if rng.random() < 0.3 else 1):
                idx = max(0, min(len(SCALE) - 1, idx + rng.choice([-2, -1, -1, 0, 1, 1, 2])))
                d = rng.choice(DURS)
                if w_i == len(words) - 1 and not notes:
                    d = rng.choice([8, 12, 16])
                notes.append(f"{pitch_name(SCALE[idx] + shift)}:{dur_name(d)}")
            if w_i == len(words) - 1 and rng.random() < 0.4:
                notes.append("R:1/8")
            sentence.append(f"{word}={','.join(notes)}")
        out.append(" ".join(sentence))
    return "\n".join(out) + "\n"


def write_paired(path, songs, seed):
    rng = random.Random(seed)
    blocks = []
    for i, lines in enumerate(songs):
        # a few songs are stored in other keys; preprocessing moves them back
        shift = [0, 2, -3, 5, 0, -5, 7, 0, 3, -2][i % 10]
        blocks.append(melody_for(lines, rng, shift))
    path.write_text("\n".join(blocks))


def vlq(n):
    out = [n & 0x7F]
    n >>= 7
    while n:
        out.append((n & 0x7F) | 0x80)
        n >>= 7
    return bytes(reversed(out))


def midi_bytes(events, tpq=96, tempo_us=500000):
    """events: list of (pitch or None, sixteenths)."""
    tick = tpq // 4
    body = bytearray()
    body += vlq(0) + b"\xff\x51\x03" + tempo_us.to_bytes(3, "big")
    pending_rest = 0
    for pitch, dur in events:
        if pitch is None:
            pending_rest += dur * tick
            continue
        body += vlq(pending_rest) + bytes([0x90, pitch, 80])
        body += vlq(dur * tick) + bytes([0x80, pitch, 0])
        pending_rest = 0
    body += vlq(pending_rest) + b"\xff\x2f\x00"
    header = b"MThd" + struct.pack(">IHHH", 6, 0, 1, tpq)
    return header + b"MTrk" + struct.pack(">I", len(body)) + bytes(body)


def midi_songs():
    rng = random.Random(11)
    first = [(None, 7), (55, 1), (64, 2), (62, 2), (60, 4), (64, 4), (67, 8), (65, 2), (64, 2), (62, 4), (60, 8)]
    songs = [first]
    for shift in [0, 2, -4, 5]:
        ev = []
        idx = 4
        for n in range(24):
            idx = max(0, min(len(SCALE) - 1, idx + rng.choice([-2, -1, 0, 1, 2])))
            ev.append((SCALE[idx] + shift, rng.choice(DURS)))
            if n % 8 == 7:
                ev.append((None, 2))
        songs.append(ev)
    return songs


def main():
    (HERE / "paired").mkdir(exist_ok=True)
    (HERE / "lyrics").mkdir(exist_ok=True)
    (HERE / "midi").mkdir(exist_ok=True)
    write_paired(HERE / "paired" / "train.txt", TRAIN, 5)
    write_paired(HERE / "paired" / "heldout.txt", HELDOUT, 6)
    (HERE / "lyrics" / "corpus.txt").write_text("\n\n".join("\n".join(s) for s in CORPUS) + "\n")
    for i, ev in enumerate(midi_songs(), start=1):
        (HERE / "midi" / f"song{i:02}.mid").write_bytes(midi_bytes(ev))
    broken = bytearray(midi_bytes([(60, 4), (62, 4)]))
    # header (14) + track header (8) + tempo event (7) + delta (1): the first
    # note-on status byte sits at offset 30; a data byte there has no running
    # status to fall back on
    assert broken[30] == 0x90
    broken[30] = 0x05
    (HERE / "midi" / "broken.mid").write_bytes(bytes(broken))


if __name__ == "__main__":
    main()
