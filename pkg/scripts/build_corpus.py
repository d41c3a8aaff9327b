#!/usr/bin/env python3
"""Assemble a normalized plain-text corpus from one or more input files.

Concatenates the inputs in the given order, applies the package's standard
normalization (lowercase, whitespace collapsed to single spaces, characters
outside a-z and space dropped), and truncates to the requested size. Use it
to regenerate data/corpus.txt from any stack of public-domain English text.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from covbeam.models import normalize_text  # noqa: E402


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("inputs", nargs="+", help="text files, concatenated in order")
    parser.add_argument("-o", "--out", required=True)
    parser.add_argument("--size", type=int, default=100_000,
                        help="truncate the normalized text to this many characters")
    args = parser.parse_args()

    chunks = []
    for path in args.inputs:
        chunks.append(Path(path).read_text(encoding="utf-8", errors="ignore"))
    text = normalize_text(" ".join(chunks))[: args.size]
    Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(f"wrote {len(text)} characters to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
