#!/usr/bin/env python3
"""Writes the ECG golden pair under tests/data: a synthetic 12-lead XML file and
the P6 raster this script draws for it. The drawing follows the documented
layout (4 x 3 cells, 1 mV = cell height / 4, 25 mm/s and 10 mm/mV grid scaled
to the cell) and is kept separate from the C++ renderer on purpose."""

import argparse
import math

LEADS = ["I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6"]
WHITE, MINOR, MAJOR, INK = (255, 255, 255), (255, 214, 214), (236, 128, 128), (0, 0, 0)


def counts_for(lead_index, n, rate):
    out = []
    for i in range(n):
        t = i / rate
        if lead_index == 0 and 0.2 <= t < 0.4:
            out.append(1000)  # 1 mV calibration pulse
            continue
        phase = (t * 1.2) % 1.0
        spike = 900 if 0.30 <= phase < 0.33 else 0
        wave = int(250 * math.sin(2 * math.pi * (phase + lead_index / 12)))
        sign = -1 if lead_index in (3, 6) else 1
        out.append(sign * (spike + wave) - 40 * (lead_index % 3))
    return out


def round_half_away(v):
    return int(math.floor(abs(v) + 0.5)) * (1 if v >= 0 else -1)


class Canvas:
    def __init__(self, w, h):
        self.w, self.h = w, h
        self.px = [WHITE] * (w * h)

    def set(self, x, y, c):
        if 0 <= x < self.w and 0 <= y < self.h:
            self.px[y * self.w + x] = c

    def ppm(self):
        body = bytearray()
        for c in self.px:
            body += bytes(c)
        return f"P6\n{self.w} {self.h}\n255\n".encode() + bytes(body)


def bresenham(cv, x0, y0, x1, y1):
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx, sy = (1 if x0 < x1 else -1), (1 if y0 < y1 else -1)
    err = dx + dy
    while True:
        cv.set(x0, y0, INK)
        if x0 == x1 and y0 == y1:
            return
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def render(leads_mv, rate, w, h):
    cw, ch = w // 3, h // 4
    n = len(leads_mv[0])
    duration = n / rate
    mm_x = cw / (duration * 25.0)
    mm_y = ch / 4.0 / 10.0
    cv = Canvas(w, h)
    for li, samples in enumerate(leads_mv):
        x0, y0 = (li % 3) * cw, (li // 3) * ch
        base = y0 + ch // 2
        for color, sx, sy in ((MINOR, mm_x, mm_y), (MAJOR, 5.0 * mm_x, 5.0 * mm_y)):
            if sx >= 2.0:
                k = 0
                while round_half_away(k * sx) < cw:
                    for y in range(y0, y0 + ch):
                        cv.set(x0 + round_half_away(k * sx), y, color)
                    k += 1
            if sy >= 2.0:
                k = 0
                while True:
                    d = round_half_away(k * sy)
                    up, down = base - d, base + d
                    if up < y0 and down >= y0 + ch:
                        break
                    for x in range(x0, x0 + cw):
                        if up >= y0:
                            cv.set(x, up, color)
                        if down < y0 + ch:
                            cv.set(x, down, color)
                    k += 1
        prev = None
        for i, mv in enumerate(samples):
            x = x0 + (i * cw) // n
            y = min(max(base - round_half_away(mv * (ch / 4.0)), y0), y0 + ch - 1)
            if prev is None:
                cv.set(x, y, INK)
            else:
                bresenham(cv, prev[0], prev[1], x, y)
            prev = (x, y)
    return cv.ppm()


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--dir", default="tests/data")
    ap.add_argument("--width", type=int, default=360)
    ap.add_argument("--height", type=int, default=320)
    args = ap.parse_args()
    rate, seconds, gain = 250, 10, 1000
    n = rate * seconds
    counts = [counts_for(i, n, rate) for i in range(12)]
    xml = ["<?xml version=\"1.0\" encoding=\"UTF-8\"?>", "<ecg>"]
    # leads written in reverse to exercise reordering
    for i in reversed(range(12)):
        xml.append(f"  <lead name=\"{LEADS[i]}\" rate=\"{rate}\" gain=\"{gain}\">{' '.join(map(str, counts[i]))}</lead>")
    xml.append("</ecg>")
    with open(f"{args.dir}/ecg_golden.xml", "w") as f:
        f.write("\n".join(xml) + "\n")
    mv = [[c / gain for c in lead] for lead in counts]
    with open(f"{args.dir}/ecg_golden.ppm", "wb") as f:
        f.write(render(mv, rate, args.width, args.height))


if __name__ == "__main__":
    main()
