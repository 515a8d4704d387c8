"""Regenerate the bundled training corpus.

Emits deterministic pseudo-English built from a fixed template grammar, so
the text is public-domain by construction and byte-level models can learn
its structure quickly.  Run from the repository root:

    python3 tools/make_corpus.py > src/uniprune/data/corpus.txt
"""
import sys

import numpy as np

SUBJECTS = [
    "the miller", "the old sailor", "a young fox", "the grey heron",
    "the river keeper", "a quiet scholar", "the baker", "the tin smith",
    "a wandering piper", "the harbor master", "the small owl", "a stone mason",
    "the night watchman", "the ferry man", "a patient gardener", "the map maker",
]
VERBS = [
    "watched", "followed", "carried", "repaired", "remembered", "counted",
    "gathered", "measured", "crossed", "sketched", "traded", "guarded",
]
OBJECTS = [
    "the wooden bridge", "a sack of grain", "the copper kettle", "the low tide",
    "a line of geese", "the broken gate", "the winter stores", "a roll of maps",
    "the village bell", "a basket of apples", "the mill wheel", "the salt barrels",
]
PLACES = [
    "near the weir", "by the north road", "under the elm", "along the quay",
    "behind the granary", "at the ford", "inside the boat shed", "past the orchard",
]
TIMES = [
    "at dawn", "before the frost", "after the rains", "all through autumn",
    "on market day", "in the late evening", "while the mist held", "by lantern light",
]
CONNECTIVES = ["and then", "but soon", "so", "while nearby", "after that", "even so"]


def sentence(rng: np.random.Generator) -> str:
    parts = [
        SUBJECTS[rng.integers(len(SUBJECTS))],
        VERBS[rng.integers(len(VERBS))],
        OBJECTS[rng.integers(len(OBJECTS))],
    ]
    if rng.random() < 0.6:
        parts.append(PLACES[rng.integers(len(PLACES))])
    if rng.random() < 0.5:
        parts.append(TIMES[rng.integers(len(TIMES))])
    text = " ".join(parts)
    if rng.random() < 0.3:
        text += ", " + CONNECTIVES[rng.integers(len(CONNECTIVES))] + " " + " ".join([
            SUBJECTS[rng.integers(len(SUBJECTS))],
            VERBS[rng.integers(len(VERBS))],
            OBJECTS[rng.integers(len(OBJECTS))],
        ])
    return text[0].upper() + text[1:] + "."


def main() -> None:
    rng = np.random.default_rng(20240917)
    out = []
    size = 0
    while size < 200_000:
        para = " ".join(sentence(rng) for _ in range(rng.integers(3, 7)))
        out.append(para)
        size += len(para) + 2
    sys.stdout.write("\n\n".join(out) + "\n")


if __name__ == "__main__":
    main()
