#!/usr/bin/env python3
"""Encode the tokenizer conformance fixtures with the Hugging Face GPT-2 tokenizer.

Writes <name>.ids.json next to each fixture text so the C++ encoder can be
checked against an independent implementation.

    python3 scripts/make_bpe_fixture.py data/gpt2 data/fixtures/*.txt
"""
import json
import pathlib
import sys

from transformers import GPT2Tokenizer


def main() -> None:
    assets = pathlib.Path(sys.argv[1])
    vocab = json.loads((assets / "encoder.json").read_text(encoding="utf-8"))
    lines = (assets / "vocab.bpe").read_text(encoding="utf-8").split("\n")[1:]
    merges = [tuple(l.split()) for l in lines if l]
    tok = GPT2Tokenizer(vocab=vocab, merges=merges)
    for name in sys.argv[2:]:
        path = pathlib.Path(name)
        text = path.read_bytes().decode("utf-8")
        ids = tok.encode(text)
        assert tok.decode(ids) == text
        path.with_suffix(".ids.json").write_text(json.dumps(ids) + "\n")
        print(f"{path}: {len(ids)} tokens")


if __name__ == "__main__":
    main()
