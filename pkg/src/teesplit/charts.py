"""Self-contained SVG line charts for partition-sweep reports.

Hand-rolled rather than delegated to a plotting library so the output is a
deterministic function of the data: identical inputs give byte-identical
files.
"""

from __future__ import annotations

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def _fmt(v):
    return format(v, ".2f")


def _esc(text):
    return (str(text).replace("&", "&amp;").replace("<", "&lt;")
            .replace(">", "&gt;"))


def _panel(parts, title, x_labels, series, y0, width, height, hline=None):
    left, right, top, bottom = 56, 16, 28, 42
    pw = width - left - right
    ph = height - top - bottom
    vals = [v for _, data in series for v in data]
    lo = min(vals + ([hline] if hline is not None else []))
    hi = max(vals + ([hline] if hline is not None else []))
    if hi == lo:
        hi = lo + 1.0
    pad = 0.08 * (hi - lo)
    lo, hi = lo - pad, hi + pad

    def sx(i):
        if len(x_labels) == 1:
            return left + pw / 2.0
        return left + pw * i / (len(x_labels) - 1)

    def sy(v):
        return y0 + top + ph * (1.0 - (v - lo) / (hi - lo))

    parts.append(f'<text x="{left}" y="{y0 + 18}" font-size="14" '
                 f'font-weight="bold">{_esc(title)}</text>')
    parts.append(f'<rect x="{left}" y="{y0 + top}" width="{pw}" height="{ph}" '
                 f'fill="none" stroke="#999"/>')
    for t in range(5):
        v = lo + (hi - lo) * t / 4.0
        y = sy(v)
        parts.append(f'<line x1="{left - 4}" y1="{_fmt(y)}" x2="{left}" '
                     f'y2="{_fmt(y)}" stroke="#999"/>')
        parts.append(f'<text x="{left - 8}" y="{_fmt(y + 4)}" font-size="10" '
                     f'text-anchor="end">{format(v, ".3g")}</text>')
    for i, lab in enumerate(x_labels):
        x = sx(i)
        parts.append(f'<text x="{_fmt(x)}" y="{y0 + top + ph + 16}" '
                     f'font-size="10" text-anchor="middle">{_esc(lab)}</text>')
    if hline is not None:
        y = sy(hline)
        parts.append(f'<line x1="{left}" y1="{_fmt(y)}" x2="{left + pw}" '
                     f'y2="{_fmt(y)}" stroke="#555" stroke-dasharray="5,4"/>')
    for si, (name, data) in enumerate(series):
        color = _PALETTE[si % len(_PALETTE)]
        pts = " ".join(f"{_fmt(sx(i))},{_fmt(sy(v))}" for i, v in enumerate(data))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     f'stroke-width="2"/>')
        for i, v in enumerate(data):
            parts.append(f'<circle cx="{_fmt(sx(i))}" cy="{_fmt(sy(v))}" '
                         f'r="3" fill="{color}"/>')
        parts.append(f'<text x="{left + pw - 4}" y="{y0 + top + 14 + 14 * si}" '
                     f'font-size="11" text-anchor="end" fill="{color}">'
                     f'{_esc(name)}</text>')


def sweep_chart_svg(x_labels, ssim_series=None, runtime_series=None,
                    threshold=None, width=720):
    """One SVG with a similarity panel and/or a runtime panel over the
    partition points. Each series is (name, values)."""
    panels = []
    if ssim_series:
        panels.append(("Reconstruction similarity by partition point",
                       ssim_series, threshold))
    if runtime_series:
        panels.append(("Predicted runtime by partition point",
                       runtime_series, None))
    if not panels:
        raise ValueError("nothing to chart")
    panel_h = 260
    height = panel_h * len(panels)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" viewBox="0 0 {width} {height}" '
             f'font-family="sans-serif">',
             f'<rect width="{width}" height="{height}" fill="white"/>']
    for pi, (title, series, hline) in enumerate(panels):
        _panel(parts, title, x_labels, series, pi * panel_h, width, panel_h,
               hline)
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
