#!/usr/bin/env python3
"""Build a Tiny-Shakespeare-style corpus from Project Gutenberg play texts.

The Gutenberg texts ship in the PyPI `shakespeare` sdist (shksprdata/texts).
Speaker headings such as "FIRST CITIZEN." become "First Citizen:" and stage
directions are dropped, so the output reads like the familiar char-rnn file.

    python3 scripts/make_corpus.py --texts <dir> --out data/shakespeare_full.txt
    python3 scripts/make_corpus.py --texts <dir> --out data/shakespeare_subset.txt --max-chars 10000
"""
import argparse
import pathlib
import re

PLAYS = [
    "coriolanus_gut.txt",
    "richard_iii_gut.txt",
    "richard_ii_gut.txt",
    "henry_vi_part_3_gut.txt",
    "romeo_and_juliet_gut.txt",
    "winters_tale_gut.txt",
    "measure_for_measure_gut.txt",
    "taming_of_the_shrew_gut.txt",
    "tempest_gut.txt",
]

SPEAKER = re.compile(r"^([A-Z][A-Z' .,-]*[A-Z])\.\s*$")
DIRECTION = re.compile(r"\[[^\]]*\]")


def convert(text: str) -> list[str]:
    lines = text.splitlines()
    # Skip the front matter up to the first act heading.
    start = next((i for i, l in enumerate(lines) if l.strip().startswith("ACT I")), 0)
    blocks, speaker, speech = [], None, []

    def flush():
        if speaker and speech:
            blocks.append(speaker + ":\n" + "\n".join(speech))

    for raw in lines[start:]:
        line = DIRECTION.sub("", raw).rstrip()
        stripped = line.strip()
        m = SPEAKER.match(stripped)
        if m and not stripped.startswith(("ACT", "SCENE")):
            flush()
            speaker, speech = m.group(1).title(), []
        elif stripped.startswith(("ACT ", "SCENE ", "Enter ", "Exit", "Exeunt")):
            flush()
            speaker, speech = None, []
        elif stripped and speaker:
            speech.append(stripped)
    flush()
    return blocks


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--texts", required=True)
    ap.add_argument("--out", required=True)
    ap.add_argument("--max-chars", type=int, default=0)
    args = ap.parse_args()

    out, size = [], 0
    for play in PLAYS:
        for block in convert((pathlib.Path(args.texts) / play).read_text(encoding="utf-8")):
            piece = block + "\n\n"
            if args.max_chars and size + len(piece) > args.max_chars:
                break
            out.append(piece)
            size += len(piece)
        if args.max_chars and size + 200 > args.max_chars:
            break
    pathlib.Path(args.out).write_text("".join(out), encoding="utf-8")
    print(f"wrote {size} chars to {args.out}")


if __name__ == "__main__":
    main()
