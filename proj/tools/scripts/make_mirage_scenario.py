#!/usr/bin/env python3
"""Writes the scripted mirage scenario used by the orchestrator tests.

Each modality gets a mock-scripted behavior table and a list of labelled
cases. Mirage cases answer (almost) the same with and without media; grounded
cases change their answer when the media is removed. Overlaps are built from
distinct tokens so the Jaccard similarity of every pair is known exactly.
"""

import argparse
import json
import random
from fractions import Fraction

VOCAB = """
atrial ventricular septal apical basal inferior anterior lateral posterior
septum myocardium pericardium endocardium epicardium valve leaflet annulus
chordae papillary trabeculation chamber cavity outflow inflow root arch
voltage amplitude interval segment wave complex axis rhythm rate conduction
block fascicle branch node sinus junction ectopic premature pause escape
thickened dilated hypokinetic akinetic dyskinetic preserved reduced elevated
depressed prolonged shortened widened narrowed enlarged calcified mobile
regurgitant stenotic diffuse focal patchy transmural subendocardial midwall
enhancement edema fibrosis scar infiltration effusion thrombus mass jet
gradient velocity pressure volume mass fraction strain motion wall function
systolic diastolic filling relaxation compliance contractility perfusion
defect hyperemia washout uptake signal intensity contrast gadolinium mapping
native extracellular relaxometry shortening ejection stroke output index
""".split()
VOCAB = sorted(set(VOCAB), key=VOCAB.index)

DISCLAIMER = """
unable to assess without attached media please provide the recording or
images so a reliable statement can be made no data available here
""".split()

SUBJECTS = {
    "ecg": ["QRS voltage", "the PR interval", "ST segments", "T wave morphology", "the rhythm", "the QRS axis"],
    "echo": ["wall thickness", "ejection fraction", "mitral regurgitation", "diastolic filling", "the pericardium",
             "right ventricular function"],
    "cmr": ["late enhancement", "native T1", "extracellular volume", "ventricular volumes", "myocardial edema",
            "stress perfusion"],
}


def sentence(rng, n):
    return rng.sample(VOCAB, n)


def jac(a, b):
    a, b = set(a), set(b)
    return Fraction(len(a & b), len(a | b))


def make_case(rng, modality, index, mirage, hard):
    subject = f"{rng.choice(SUBJECTS[modality])} in case {modality}-{index:03d}"
    question = f"Case {modality}-{index:03d}: what is the assessment of {subject.split(' in case')[0]}?"
    if mirage:
        if hard == 0:
            present = sentence(rng, 16)
            absent = list(present)
        elif hard == 1:
            # 43 shared of 50: 0.86, just above the threshold
            present = sentence(rng, 50)
            absent = present[:43]
        else:
            # 18 of 20 shared plus nothing new: 0.90
            present = sentence(rng, 20)
            absent = present[:18]
    else:
        if hard == 0:
            present = sentence(rng, 14)
            absent = rng.sample(DISCLAIMER, 10)
        elif hard == 1:
            # 17 of 20: exactly 0.85, not above the threshold
            present = sentence(rng, 20)
            absent = present[:17]
        else:
            # 12 shared, 3 new, of 18: 12 / 21
            present = sentence(rng, 18)
            extra = [w for w in DISCLAIMER if w not in present][:3]
            absent = present[:12] + extra
    return {
        "modality": modality,
        "question": question,
        "subject": subject,
        "mirage": mirage,
        "present": " ".join(present),
        "absent": " ".join(absent),
        "image_absent_similarity": [jac(present, absent).numerator, jac(present, absent).denominator],
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/scenarios/mirage_rates.json")
    ap.add_argument("--seed", type=int, default=20240601)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    plan = {"ecg": (200, 66), "echo": (200, 77), "cmr": (250, 91)}
    cases = []
    tables = {}
    for modality, (total, n_mirage) in plan.items():
        labels = [True] * n_mirage + [False] * (total - n_mirage)
        rng.shuffle(labels)
        entries = []
        for i, mirage in enumerate(labels, start=1):
            case = make_case(rng, modality, i, mirage, hard=i % 3)
            cases.append({k: case[k] for k in ("modality", "question", "subject", "mirage", "image_absent_similarity")})
            # no subject: unrouted questions reach the expert without one
            entries.append({k: case[k] for k in ("question", "present", "absent")})
        tables[modality] = {"id": f"{modality}-scripted", "kind": "mock-scripted", "modality": modality,
                            "entries": entries}
    doc = {
        "description": "Scripted expert behavior with per-modality mirage rates 33.0%, 38.5% and 36.4%.",
        "threshold": 0.85,
        "mirage_rates": {m: n / t for m, (t, n) in plan.items()},
        "tables": tables,
        "cases": cases,
    }
    with open(args.out, "w") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main()
