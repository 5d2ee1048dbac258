"""Tiny dependency-free SVG charts for history curves and metric bars.

Output is plain deterministic SVG text; good enough for eyeballing runs
without dragging a plotting stack into the core package.
"""

from __future__ import annotations

WIDTH, HEIGHT = 640, 400
MARGIN = 56
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _axes(title: str, x_label: str, y_label: str, x_ticks, y_ticks,
          x_range, y_range) -> list[str]:
    x0, x1 = MARGIN, WIDTH - MARGIN // 2
    y0, y1 = HEIGHT - MARGIN, MARGIN // 2
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH // 2}" y="20" text-anchor="middle" font-size="15" '
        f'font-family="sans-serif">{title}</text>',
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
        f'<text x="{(x0 + x1) // 2}" y="{HEIGHT - 10}" text-anchor="middle" '
        f'font-size="12" font-family="sans-serif">{x_label}</text>',
        f'<text x="14" y="{(y0 + y1) // 2}" text-anchor="middle" font-size="12" '
        f'font-family="sans-serif" transform="rotate(-90 14 {(y0 + y1) // 2})">{y_label}</text>',
    ]
    xa, xb = x_range
    ya, yb = y_range
    for tx in x_ticks:
        px = x0 + (tx - xa) / max(xb - xa, 1e-12) * (x1 - x0)
        parts.append(f'<line x1="{px:.1f}" y1="{y0}" x2="{px:.1f}" y2="{y0 + 4}" stroke="black"/>')
        parts.append(f'<text x="{px:.1f}" y="{y0 + 18}" text-anchor="middle" font-size="10" '
                     f'font-family="sans-serif">{_fmt(tx)}</text>')
    for ty in y_ticks:
        py = y0 - (ty - ya) / max(yb - ya, 1e-12) * (y0 - y1)
        parts.append(f'<line x1="{x0 - 4}" y1="{py:.1f}" x2="{x0}" y2="{py:.1f}" stroke="black"/>')
        parts.append(f'<text x="{x0 - 8}" y="{py + 3:.1f}" text-anchor="end" font-size="10" '
                     f'font-family="sans-serif">{_fmt(ty)}</text>')
    return parts


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def line_chart(series: dict[str, list[float]], title: str, path,
               x_label: str = "epoch", y_label: str = "value") -> None:
    xs = range(1, 1 + max(len(v) for v in series.values()))
    all_vals = [v for vals in series.values() for v in vals]
    ya, yb = min(all_vals), max(all_vals)
    if ya == yb:
        ya, yb = ya - 0.5, yb + 0.5
    xa, xb = 1, max(2, max(xs))
    parts = _axes(title, x_label, y_label, _ticks(xa, xb), _ticks(ya, yb), (xa, xb), (ya, yb))
    x0, x1 = MARGIN, WIDTH - MARGIN // 2
    y0, y1 = HEIGHT - MARGIN, MARGIN // 2
    for i, (name, vals) in enumerate(series.items()):
        color = COLORS[i % len(COLORS)]
        pts = []
        for k, v in enumerate(vals, start=1):
            px = x0 + (k - xa) / (xb - xa) * (x1 - x0)
            py = y0 - (v - ya) / (yb - ya) * (y0 - y1)
            pts.append(f"{px:.1f},{py:.1f}")
        parts.append(f'<polyline points="{" ".join(pts)}" fill="none" stroke="{color}" '
                     f'stroke-width="1.5"/>')
        ly = y1 + 16 * i
        parts.append(f'<line x1="{x1 - 110}" y1="{ly}" x2="{x1 - 90}" y2="{ly}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{x1 - 85}" y="{ly + 4}" font-size="11" '
                     f'font-family="sans-serif">{name}</text>')
    parts.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(parts) + "\n")


def bar_chart(labels: list[str], values: list[float], title: str, path,
              y_label: str = "value") -> None:
    ya, yb = 0.0, max(values) * 1.15 if values else 1.0
    parts = _axes(title, "", y_label, [], _ticks(ya, yb), (0, 1), (ya, yb))
    x0, x1 = MARGIN, WIDTH - MARGIN // 2
    y0, y1 = HEIGHT - MARGIN, MARGIN // 2
    n = len(values)
    slot = (x1 - x0) / max(n, 1)
    for i, (label, v) in enumerate(zip(labels, values)):
        bx = x0 + i * slot + slot * 0.15
        bw = slot * 0.7
        bh = (v - ya) / (yb - ya) * (y0 - y1)
        parts.append(f'<rect x="{bx:.1f}" y="{y0 - bh:.1f}" width="{bw:.1f}" '
                     f'height="{bh:.1f}" fill="{COLORS[i % len(COLORS)]}"/>')
        parts.append(f'<text x="{bx + bw / 2:.1f}" y="{y0 - bh - 4:.1f}" text-anchor="middle" '
                     f'font-size="10" font-family="sans-serif">{v:.4f}</text>')
        parts.append(f'<text x="{bx + bw / 2:.1f}" y="{y0 + 14}" text-anchor="middle" '
                     f'font-size="9" font-family="sans-serif">{label}</text>')
    parts.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(parts) + "\n")
