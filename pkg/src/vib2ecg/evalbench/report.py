"""Static SVG charts for evaluation reports."""

import xml.etree.ElementTree as ET

import numpy as np

SVG_NS = "http://www.w3.org/2000/svg"
PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b")
WIDTH, HEIGHT = 640, 360
MARGIN = dict(left=64, right=24, top=40, bottom=56)


def _svg(title):
    root = ET.Element("svg", xmlns=SVG_NS, width=str(WIDTH), height=str(HEIGHT), viewBox=f"0 0 {WIDTH} {HEIGHT}")
    ET.SubElement(root, "rect", x="0", y="0", width=str(WIDTH), height=str(HEIGHT), fill="white")
    t = ET.SubElement(root, "text", x=str(WIDTH / 2), y="24", attrib={"text-anchor": "middle", "font-size": "15", "font-family": "sans-serif"})
    t.text = title
    return root


def _text(parent, x, y, s, anchor="middle", size=11, rotate=None):
    attrib = {"text-anchor": anchor, "font-size": str(size), "font-family": "sans-serif"}
    if rotate is not None:
        attrib["transform"] = f"rotate({rotate} {x:.1f} {y:.1f})"
    el = ET.SubElement(parent, "text", x=f"{x:.1f}", y=f"{y:.1f}", attrib=attrib)
    el.text = s
    return el


def _axes(root, y_max, y_label, n_ticks=5):
    x0, x1 = MARGIN["left"], WIDTH - MARGIN["right"]
    y0, y1 = HEIGHT - MARGIN["bottom"], MARGIN["top"]
    ET.SubElement(root, "line", x1=str(x0), y1=str(y0), x2=str(x1), y2=str(y0), stroke="black")
    ET.SubElement(root, "line", x1=str(x0), y1=str(y0), x2=str(x0), y2=str(y1), stroke="black")
    for v in np.linspace(0, y_max, n_ticks + 1):
        y = y0 - (y0 - y1) * v / y_max
        ET.SubElement(root, "line", x1=str(x0 - 4), y1=f"{y:.1f}", x2=str(x0), y2=f"{y:.1f}", stroke="black")
        _text(root, x0 - 8, y + 4, f"{v:.3g}", anchor="end", size=10)
    _text(root, 18, (y0 + y1) / 2, y_label, rotate=-90)
    return x0, x1, y0, y1


def _nice_max(values):
    top = max([float(v) for v in values] + [0.0])
    if top <= 0:
        return 1.0
    mag = 10 ** np.floor(np.log10(top))
    for step in (1, 2, 2.5, 5, 10):
        if step * mag >= top:
            return float(step * mag)
    return float(10 * mag)


def bar_chart(labels, values, title, y_label):
    """One bar per label; returns the SVG as a string."""
    root = _svg(title)
    y_max = _nice_max(values)
    x0, x1, y0, y1 = _axes(root, y_max, y_label)
    n = max(len(labels), 1)
    slot = (x1 - x0) / n
    for i, (lab, v) in enumerate(zip(labels, values)):
        h = (y0 - y1) * float(v) / y_max
        x = x0 + i * slot + 0.15 * slot
        ET.SubElement(root, "rect", x=f"{x:.1f}", y=f"{y0 - h:.1f}", width=f"{0.7 * slot:.1f}", height=f"{h:.1f}", fill=PALETTE[i % len(PALETTE)])
        _text(root, x + 0.35 * slot, y0 + 18, str(lab))
        _text(root, x + 0.35 * slot, y0 - h - 4, f"{float(v):.3g}", size=10)
    return ET.tostring(root, encoding="unicode")


def line_chart(x_values, series, title, y_label, x_label="day"):
    """Lines over a shared x axis; ``series`` maps a legend label to y values."""
    root = _svg(title)
    y_max = _nice_max([v for ys in series.values() for v in ys])
    x0, x1, y0, y1 = _axes(root, y_max, y_label)
    xs = list(x_values)
    span = (max(xs) - min(xs)) or 1
    px = [x0 + 20 + (x1 - x0 - 40) * (x - min(xs)) / span for x in xs]
    for x, p in zip(xs, px):
        _text(root, p, y0 + 18, str(x))
    _text(root, (x0 + x1) / 2, HEIGHT - 12, x_label)
    for k, (name, ys) in enumerate(series.items()):
        color = PALETTE[k % len(PALETTE)]
        pts = [(p, y0 - (y0 - y1) * float(v) / y_max) for p, v in zip(px, ys)]
        ET.SubElement(root, "polyline", points=" ".join(f"{a:.1f},{b:.1f}" for a, b in pts), fill="none", stroke=color, attrib={"stroke-width": "2"})
        for a, b in pts:
            ET.SubElement(root, "circle", cx=f"{a:.1f}", cy=f"{b:.1f}", r="3", fill=color)
        _text(root, x1 - 4, y1 + 14 * (k + 1), name, anchor="end", size=11).set("fill", color)
    return ET.tostring(root, encoding="unicode")


def write_svg(path, svg):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write('<?xml version="1.0" encoding="UTF-8"?>\n')
        fh.write(svg)
        fh.write("\n")


def ablation_charts(summary):
    """(hallucination bars, L1 bars) from ``protocol.summarize(report, "input_mode")``."""
    modes = list(summary)
    hall = bar_chart(modes, [100 * summary[m]["hallucination_pct"] for m in modes], "Hallucination by input", "windows with hallucination (%)")
    l1 = bar_chart(modes, [summary[m]["mean_l1"] for m in modes], "Reconstruction error by input", "mean L1 (normalized)")
    return hall, l1


def temporal_charts(summary):
    """(L1 line, hallucination line) from ``protocol.summarize(report, "day")``."""
    days = sorted(summary)
    l1 = line_chart(days, {"L1": [summary[d]["mean_l1"] for d in days]}, "Reconstruction error by day", "mean L1 (normalized)")
    hall = line_chart(days, {"hallucination": [100 * summary[d]["hallucination_pct"] for d in days]}, "Hallucination by day", "windows with hallucination (%)")
    return l1, hall
