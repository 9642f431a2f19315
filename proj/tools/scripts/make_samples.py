#!/usr/bin/env python3
"""Writes the synthetic sample media under data/samples."""

import json
import math
import os

LEADS = ["I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6"]
# (P, QRS, T) amplitude scale per lead
SCALE = {
    "I": (0.6, 0.8, 0.6), "II": (1.0, 1.2, 0.9), "III": (0.4, 0.5, 0.3), "aVR": (-0.8, -1.0, -0.7),
    "aVL": (0.3, 0.4, 0.3), "aVF": (0.7, 0.8, 0.6), "V1": (0.4, -1.1, -0.2), "V2": (0.5, -0.6, 0.8),
    "V3": (0.5, 0.4, 0.9), "V4": (0.5, 1.3, 0.9), "V5": (0.5, 1.4, 0.8), "V6": (0.4, 1.1, 0.6),
}


def beat(t):
    p = 0.12 * math.exp(-((t - 0.16) / 0.025) ** 2)
    qrs = -0.1 * math.exp(-((t - 0.26) / 0.008) ** 2) + 1.0 * math.exp(-((t - 0.28) / 0.010) ** 2) \
        - 0.25 * math.exp(-((t - 0.30) / 0.010) ** 2)
    tw = 0.3 * math.exp(-((t - 0.52) / 0.05) ** 2)
    return p, qrs, tw


def ecg_xml(rate=500, seconds=2.5, bpm=72, gain=1000):
    period = 60.0 / bpm
    n = int(rate * seconds)
    lines = ["<?xml version=\"1.0\" encoding=\"UTF-8\"?>", "<ecg>"]
    for lead in LEADS:
        sp, sq, st = SCALE[lead]
        counts = []
        for i in range(n):
            p, q, t = beat((i / rate) % period)
            counts.append(str(round((sp * p + sq * q + st * t) * gain)))
        lines.append(f"  <lead name=\"{lead}\" rate=\"{rate}\" gain=\"{gain}\">{' '.join(counts)}</lead>")
    lines.append("</ecg>")
    return "\n".join(lines) + "\n"


def echo_ppm(w=64, h=48):
    px = bytearray()
    for y in range(h):
        for x in range(w):
            # a grey sector with a darker cavity
            dx, dy = (x - w / 2) / (w / 2), y / h
            inside = abs(dx) < dy
            cavity = (dx * dx + (dy - 0.6) ** 2) < 0.05
            v = 0 if not inside else (40 if cavity else 150 + (x * 7 + y * 13) % 60)
            px += bytes((v, v, v))
    return f"P6\n{w} {h}\n255\n".encode() + bytes(px)


def manifest():
    def series(sid, desc, kind, plane, n):
        return {"series_id": sid, "description": desc, "sequence": kind, "plane": plane,
                "frames": [f"{sid}/frame_{i:02d}.ppm" for i in range(n)]}
    return {
        "study_id": "cmr-sample",
        "modality": "cmr",
        "series": [
            series("s1", "cine short axis stack", "cine", "short-axis", 25),
            series("s2", "cine 4ch", "cine", "4-chamber", 25),
            series("s3", "cine 2ch", "cine", "long-axis", 25),
            series("s4", "LGE short axis PSIR", "lge", "short-axis", 12),
            series("s5", "LGE 4ch", "lge", "4-chamber", 1),
            series("s6", "T1 map MOLLI", "other", "short-axis", 3),
        ],
    }


def main():
    out = os.path.join(os.path.dirname(__file__), "..", "..", "data", "samples")
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "ecg_sample.xml"), "w") as f:
        f.write(ecg_xml())
    with open(os.path.join(out, "echo_sample.ppm"), "wb") as f:
        f.write(echo_ppm())
    with open(os.path.join(out, "cmr_manifest.json"), "w") as f:
        json.dump(manifest(), f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main()
