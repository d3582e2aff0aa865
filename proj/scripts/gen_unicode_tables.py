#!/usr/bin/env python3
"""Emit include/ddlab/detail/unicode_tables.hpp (letter, number, whitespace ranges)."""
import sys
import unicodedata


def ranges(pred):
    out, start = [], None
    for cp in range(0x110000):
        hit = pred(cp)
        if hit and start is None:
            start = cp
        elif not hit and start is not None:
            out.append((start, cp - 1))
            start = None
    if start is not None:
        out.append((start, 0x10FFFF))
    return out


def emit(name, rs):
    body = ",\n".join(f"    {{0x{a:X}, 0x{b:X}}}" for a, b in rs)
    return f"inline constexpr CodepointRange {name}[] = {{\n{body}\n}};\n"


def main():
    letter = ranges(lambda c: unicodedata.category(chr(c)).startswith("L"))
    number = ranges(lambda c: unicodedata.category(chr(c)).startswith("N"))
    # Unicode White_Space: str.isspace() minus the 0x1C-0x1F information separators.
    space = ranges(lambda c: chr(c).isspace() and not 0x1C <= c <= 0x1F)
    out = [
        "#pragma once\n",
        f"// Generated by scripts/gen_unicode_tables.py (Unicode {unicodedata.unidata_version}). Do not edit.\n",
        "#include <cstdint>\n",
        "namespace ddlab::detail {\n",
        "struct CodepointRange {\n    char32_t first;\n    char32_t last;\n};\n",
        emit("kLetterRanges", letter),
        emit("kNumberRanges", number),
        emit("kSpaceRanges", space),
        "}  // namespace ddlab::detail\n",
    ]
    sys.stdout.write("\n".join(out))


if __name__ == "__main__":
    main()
