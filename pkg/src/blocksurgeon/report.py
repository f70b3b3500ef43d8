"""Static SVG scatter of search observations."""

from __future__ import annotations

from typing import Sequence

from .search.pareto import Observation

WIDTH, HEIGHT = 640, 440
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 20, 30, 60


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    step = (hi - lo) / (count - 1)
    return [lo + i * step for i in range(count)]


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def pareto_svg(observations: Sequence[Observation], front: Sequence[Observation], selected: Observation | None,
               base_latency: float | None = None, title: str = "PSNR loss vs latency") -> str:
    """Accuracy loss (x) against raw latency (y); front joined by a step line.

    Output depends only on the inputs, so repeated calls are byte-identical.
    """
    pts = list(observations) + list(front) + ([selected] if selected else [])
    xs = [o.f1 for o in pts] or [0.0]
    ys = [o.latency_ms for o in pts] + ([base_latency] if base_latency is not None else [])
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 0.5, x_hi + 0.5
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    pad_x, pad_y = 0.05 * (x_hi - x_lo), 0.05 * (y_hi - y_lo)
    x_lo, x_hi, y_lo, y_hi = x_lo - pad_x, x_hi + pad_x, y_lo - pad_y, y_hi + pad_y
    pw = WIDTH - MARGIN_L - MARGIN_R
    ph = HEIGHT - MARGIN_T - MARGIN_B

    def sx(v: float) -> float:
        return MARGIN_L + (v - x_lo) / (x_hi - x_lo) * pw

    def sy(v: float) -> float:
        return MARGIN_T + (1.0 - (v - y_lo) / (y_hi - y_lo)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="18" font-size="14" text-anchor="middle" font-family="sans-serif">{title}</text>',
        f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for t in _ticks(x_lo, x_hi):
        x = sx(t)
        out.append(f'<line x1="{x:.2f}" y1="{MARGIN_T + ph}" x2="{x:.2f}" y2="{MARGIN_T + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{x:.2f}" y="{MARGIN_T + ph + 18}" font-size="11" text-anchor="middle" '
                   f'font-family="sans-serif">{_fmt(t)}</text>')
    for t in _ticks(y_lo, y_hi):
        y = sy(t)
        out.append(f'<line x1="{MARGIN_L - 5}" y1="{y:.2f}" x2="{MARGIN_L}" y2="{y:.2f}" stroke="black"/>')
        out.append(f'<text x="{MARGIN_L - 8}" y="{y + 4:.2f}" font-size="11" text-anchor="end" '
                   f'font-family="sans-serif">{_fmt(t)}</text>')
    out.append(f'<text x="{MARGIN_L + pw / 2:.1f}" y="{HEIGHT - 15}" font-size="12" text-anchor="middle" '
               f'font-family="sans-serif">PSNR loss f1 (dB)</text>')
    out.append(f'<text x="16" y="{MARGIN_T + ph / 2:.1f}" font-size="12" text-anchor="middle" font-family="sans-serif" '
               f'transform="rotate(-90 16 {MARGIN_T + ph / 2:.1f})">latency (ms)</text>')
    if base_latency is not None:
        y = sy(base_latency)
        out.append(f'<line x1="{MARGIN_L}" y1="{y:.2f}" x2="{MARGIN_L + pw}" y2="{y:.2f}" stroke="gray" '
                   f'stroke-dasharray="4 3"/>')
    for o in observations:
        out.append(f'<circle cx="{sx(o.f1):.2f}" cy="{sy(o.latency_ms):.2f}" r="2.5" fill="#999999"/>')
    ordered = sorted(front, key=lambda o: (o.f1, o.latency_ms))
    if len(ordered) > 1:
        path = " ".join(f"{sx(o.f1):.2f},{sy(o.latency_ms):.2f}" for o in ordered)
        out.append(f'<polyline points="{path}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>')
    for o in ordered:
        out.append(f'<circle cx="{sx(o.f1):.2f}" cy="{sy(o.latency_ms):.2f}" r="4" fill="#1f77b4"/>')
    if selected is not None:
        out.append(f'<circle cx="{sx(selected.f1):.2f}" cy="{sy(selected.latency_ms):.2f}" r="7" fill="none" '
                   f'stroke="#d62728" stroke-width="2"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
