#!/usr/bin/env python3
"""Writes tests/data/extraction_cases.json: free-text answers with the letter a
separate regex implementation extracts from them (null when none)."""

import argparse
import json
import random
import re

PHRASE = re.compile(
    r"the\s+(?:final\s+|correct\s+)?answer\s+is\s*[:\-]?\s*(?:option\s+)?"
    r"([(\[*\"']*)\s*([a-e])([)\]*\"']*)(?![a-z0-9])",
    re.IGNORECASE,
)
LEADING = re.compile(r"\s*\(?([A-E])[.)][ \t]+\S")
BARE = re.compile(r"\s*[(\[*]*([A-E])[)\]*]*[.:]?\s*")


def oracle(text):
    found = None
    for m in PHRASE.finditer(text):
        letter = m.group(2)
        if letter.isupper():
            found = letter
            continue
        bracketed = bool(m.group(1)) and bool(m.group(3))
        tail = text[m.end():].split("\n", 1)[0]
        if bracketed or all(c.isspace() or not c.isalnum() for c in tail):
            found = letter.upper()
    if found:
        return found
    m = LEADING.match(text)
    if m:
        return m.group(1)
    for line in text.split("\n"):
        m = BARE.fullmatch(line)
        if m:
            found = m.group(1)
    return found


FIXED = [
    "The answer is C.",
    "the final answer is: (b)",
    "After review, THE CORRECT ANSWER IS option D because of the ST changes.",
    "The answer is a bit unclear without the tracing.",
    "I think the answer is a",
    "The answer is A. On reflection the answer is E.",
    "B. Left ventricular hypertrophy with strain",
    "(C) Amyloid infiltration",
    "A.Too close",
    "Reasoning first.\nD\n",
    "Options considered\n(B)\nthen\n**E**",
    "Answer: maybe C or D",
    "E",
    "",
    "No letter here at all.",
    "the answer is [d] given the echo",
    "the answer is \"e\" for sure",
    "The answer is F.",
    "the answer is b2 in the table",
    "  c) lowercase leading does not count",
    "The answer is - B",
    "The answer is\nC",
    "I choose A.\nThe answer is d.",
]

FILLER = ["Based on the findings,", "Considering the image,", "Hmm.", "Given the low voltage,",
          "The septum looks thick.", "Sinus rhythm noted.", "No effusion is seen."]
PHRASES = ["the answer is", "The final answer is", "THE ANSWER IS", "the correct answer is:", "The answer is option"]
WRAP = [("", ""), ("(", ")"), ("[", "]"), ("**", "**"), ("'", "'"), ("", "."), ("", ")")]
TAILS = ["", ".", " because of the findings.", "!", "\nMore text follows.", " and b is wrong", "x"]


def random_case(rng):
    kind = rng.randrange(4)
    letter = rng.choice("ABCDEABCDEABCDEabcdef")
    o, c = rng.choice(WRAP)
    if kind == 0:
        return f"{rng.choice(FILLER)} {rng.choice(PHRASES)} {o}{letter}{c}{rng.choice(TAILS)}"
    if kind == 1:
        return f"{rng.choice(['', ' ', '('])}{letter}{rng.choice(['.', ')', ':'])}{rng.choice([' ', '', chr(9)])}{rng.choice(FILLER)}"
    if kind == 2:
        lines = [rng.choice(FILLER) for _ in range(rng.randrange(1, 3))]
        lines.insert(rng.randrange(len(lines) + 1), f"{o}{letter}{c}")
        return "\n".join(lines)
    return " ".join(rng.choice(FILLER) for _ in range(3))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="tests/data/extraction_cases.json")
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    texts = list(FIXED)
    seen = set(texts)
    while len(texts) < 100:
        t = random_case(rng)
        if t not in seen:
            seen.add(t)
            texts.append(t)
    cases = [{"response": t, "expected": oracle(t)} for t in texts]
    with open(args.out, "w") as f:
        json.dump(cases, f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main()
