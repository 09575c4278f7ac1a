"""Deterministic SVG rendering of a semantic map with overlaid traces."""

from __future__ import annotations

import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np

from .evaluation import SemanticMap
from .exceptions import IoFailure

SVG_NS = "http://www.w3.org/2000/svg"

# (stroke colour, dash pattern) per trace, cycled
TRACE_STYLES = [
    ("#1f77b4", ""),
    ("#d62728", "6 3"),
    ("#2ca02c", "2 2"),
    ("#9467bd", "8 3 2 3"),
    ("#ff7f0e", "1 3"),
]


def _fmt(v: float) -> str:
    return f"{v:.4f}"


class _Frame:
    """World-to-canvas mapping with y flipped so north is up."""

    def __init__(self, pts: np.ndarray, scale: float = 10.0, margin: float = 40.0, legend: float = 160.0):
        if len(pts):
            lo, hi = pts.min(axis=0), pts.max(axis=0)
        else:
            lo, hi = np.zeros(2), np.array([10.0, 10.0])
        span = np.maximum(hi - lo, 1.0)
        self.lo, self.hi = lo, lo + span
        self.scale, self.margin = scale, margin
        self.width = span[0] * scale + 2 * margin + legend
        self.height = span[1] * scale + 2 * margin
        self.legend_x = span[0] * scale + 2 * margin

    def xy(self, p) -> tuple[float, float]:
        return (self.margin + (p[0] - self.lo[0]) * self.scale,
                self.height - self.margin - (p[1] - self.lo[1]) * self.scale)

    def points(self, arr) -> str:
        return " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in (self.xy(p) for p in arr))


def render_svg(smap: SemanticMap, traces=None) -> str:
    """SVG document text.  ``traces`` maps a legend name to an (n, 2|3) array."""
    traces = dict(traces or {})
    clouds = [s.corners for s in smap.slots] + [t.position[None, :] for t in smap.tags]
    clouds += [np.asarray(tr, dtype=float)[:, :2] for tr in traces.values() if len(tr)]
    pts = np.concatenate(clouds) if clouds else np.zeros((0, 2))
    fr = _Frame(pts)

    ET.register_namespace("", SVG_NS)
    root = ET.Element(f"{{{SVG_NS}}}svg", {
        "width": _fmt(fr.width), "height": _fmt(fr.height),
        "viewBox": f"0 0 {_fmt(fr.width)} {_fmt(fr.height)}",
    })
    ET.SubElement(root, f"{{{SVG_NS}}}rect", {"width": "100%", "height": "100%", "fill": "white"})

    axes = ET.SubElement(root, f"{{{SVG_NS}}}g", {"id": "axes", "stroke": "#888888", "stroke-width": "1"})
    x0, y0 = fr.xy(fr.lo)
    x1, _ = fr.xy((fr.hi[0], fr.lo[1]))
    _, y1 = fr.xy((fr.lo[0], fr.hi[1]))
    ET.SubElement(axes, f"{{{SVG_NS}}}line", {"class": "axis", "x1": _fmt(x0), "y1": _fmt(y0),
                                              "x2": _fmt(x1), "y2": _fmt(y0)})
    ET.SubElement(axes, f"{{{SVG_NS}}}line", {"class": "axis", "x1": _fmt(x0), "y1": _fmt(y0),
                                              "x2": _fmt(x0), "y2": _fmt(y1)})
    for label, (x, y) in ((f"x {fr.lo[0]:.1f}..{fr.hi[0]:.1f} m", (x1, y0 + 20)),
                          (f"y {fr.lo[1]:.1f}..{fr.hi[1]:.1f} m", (x0, y1 - 8))):
        t = ET.SubElement(axes, f"{{{SVG_NS}}}text", {"class": "axis-label", "x": _fmt(x), "y": _fmt(y),
                                                      "font-size": "10", "stroke": "none", "fill": "#444444"})
        t.text = label

    slots = ET.SubElement(root, f"{{{SVG_NS}}}g", {"id": "slots"})
    for s in smap.slots:
        ET.SubElement(slots, f"{{{SVG_NS}}}polygon", {
            "class": "slot", "data-id": s.label, "points": fr.points(s.corners),
            "fill": "#f2f2f2" if s.is_temporary else "#e0ecf8", "stroke": "#333333", "stroke-width": "1",
        })
        cx, cy = fr.xy(s.centroid)
        t = ET.SubElement(slots, f"{{{SVG_NS}}}text", {"class": "slot-label", "x": _fmt(cx), "y": _fmt(cy),
                                                       "font-size": "9", "text-anchor": "middle"})
        t.text = s.label

    tags = ET.SubElement(root, f"{{{SVG_NS}}}g", {"id": "tags"})
    for tag in smap.tags:
        cx, cy = fr.xy(tag.position)
        ET.SubElement(tags, f"{{{SVG_NS}}}rect", {
            "class": "tag", "data-tag-id": str(tag.tag_id), "x": _fmt(cx - 3), "y": _fmt(cy - 3),
            "width": "6", "height": "6", "fill": "#000000",
        })

    layer = ET.SubElement(root, f"{{{SVG_NS}}}g", {"id": "traces", "fill": "none"})
    legend = ET.SubElement(root, f"{{{SVG_NS}}}g", {"id": "legend", "font-size": "11"})
    entries = [("slot", "#e0ecf8", ""), ("tag", "#000000", "")]
    for i, (name, tr) in enumerate(traces.items()):
        colour, dash = TRACE_STYLES[i % len(TRACE_STYLES)]
        width = str(1.5 + i // len(TRACE_STYLES))
        attrs = {"class": "trace", "data-name": str(name), "points": fr.points(np.asarray(tr, dtype=float)[:, :2]),
                 "stroke": colour, "stroke-width": width}
        if dash:
            attrs["stroke-dasharray"] = dash
        ET.SubElement(layer, f"{{{SVG_NS}}}polyline", attrs)
        entries.append((str(name), colour, dash))
    for i, (name, colour, dash) in enumerate(entries):
        y = fr.margin + 18 * i
        x = fr.legend_x
        if i < 2:
            ET.SubElement(legend, f"{{{SVG_NS}}}rect", {"class": "legend-key", "x": _fmt(x), "y": _fmt(y - 8),
                                                         "width": "16", "height": "8", "fill": colour,
                                                         "stroke": "#333333"})
        else:
            attrs = {"class": "legend-key", "x1": _fmt(x), "y1": _fmt(y - 4), "x2": _fmt(x + 16),
                     "y2": _fmt(y - 4), "stroke": colour, "stroke-width": "2"}
            if dash:
                attrs["stroke-dasharray"] = dash
            ET.SubElement(legend, f"{{{SVG_NS}}}line", attrs)
        t = ET.SubElement(legend, f"{{{SVG_NS}}}text", {"class": "legend-label", "x": _fmt(x + 22), "y": _fmt(y)})
        t.text = name

    ET.indent(root)
    return ET.tostring(root, encoding="unicode", xml_declaration=True) + "\n"


def export_plot(smap: SemanticMap, traces, path) -> None:
    text = render_svg(smap, traces)
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
