"""Self-contained SVG plots, written byte-deterministically (no render deps)."""

from __future__ import annotations

from pathlib import Path

from .errors import InsufficientDataError

WIDTH, HEIGHT = 640, 420
MARGIN = 56


def _fmt(v: float) -> str:
    return f"{v:.4f}".rstrip("0").rstrip(".")


def _scale(values: list[float]) -> tuple[float, float]:
    lo, hi = min(values), max(values)
    if lo == hi:
        lo, hi = lo - 1.0, hi + 1.0
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


class _Svg:
    def __init__(self, title: str, xlabel: str, ylabel: str,
                 xlim: tuple[float, float], ylim: tuple[float, float]):
        self.xlim, self.ylim = xlim, ylim
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}">',
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
            f'<text x="{WIDTH // 2}" y="24" text-anchor="middle" font-size="16" '
            f'font-family="sans-serif">{title}</text>',
            f'<text x="{WIDTH // 2}" y="{HEIGHT - 8}" text-anchor="middle" font-size="12" '
            f'font-family="sans-serif">{xlabel}</text>',
            f'<text x="16" y="{HEIGHT // 2}" text-anchor="middle" font-size="12" '
            f'font-family="sans-serif" transform="rotate(-90 16 {HEIGHT // 2})">{ylabel}</text>',
            f'<rect x="{MARGIN}" y="{MARGIN}" width="{WIDTH - 2 * MARGIN}" '
            f'height="{HEIGHT - 2 * MARGIN}" fill="none" stroke="black"/>',
        ]
        self._ticks()

    def x(self, v: float) -> float:
        lo, hi = self.xlim
        return MARGIN + (v - lo) / (hi - lo) * (WIDTH - 2 * MARGIN)

    def y(self, v: float) -> float:
        lo, hi = self.ylim
        return HEIGHT - MARGIN - (v - lo) / (hi - lo) * (HEIGHT - 2 * MARGIN)

    def _ticks(self, n: int = 5):
        for i in range(n):
            fx = self.xlim[0] + i * (self.xlim[1] - self.xlim[0]) / (n - 1)
            px = self.x(fx)
            self.parts.append(f'<line x1="{_fmt(px)}" y1="{HEIGHT - MARGIN}" x2="{_fmt(px)}" '
                              f'y2="{HEIGHT - MARGIN + 5}" stroke="black"/>')
            self.parts.append(f'<text x="{_fmt(px)}" y="{HEIGHT - MARGIN + 18}" text-anchor="middle" '
                              f'font-size="10" font-family="sans-serif">{_fmt(fx)}</text>')
            fy = self.ylim[0] + i * (self.ylim[1] - self.ylim[0]) / (n - 1)
            py = self.y(fy)
            self.parts.append(f'<line x1="{MARGIN - 5}" y1="{_fmt(py)}" x2="{MARGIN}" '
                              f'y2="{_fmt(py)}" stroke="black"/>')
            self.parts.append(f'<text x="{MARGIN - 8}" y="{_fmt(py + 3)}" text-anchor="end" '
                              f'font-size="10" font-family="sans-serif">{_fmt(fy)}</text>')

    def polyline(self, xs: list[float], ys: list[float], color: str):
        pts = " ".join(f"{_fmt(self.x(a))},{_fmt(self.y(b))}" for a, b in zip(xs, ys))
        self.parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')

    def dots(self, xs: list[float], ys: list[float], color: str):
        for a, b in zip(xs, ys):
            self.parts.append(f'<circle cx="{_fmt(self.x(a))}" cy="{_fmt(self.y(b))}" r="3.5" '
                              f'fill="{color}" fill-opacity="0.75"/>')

    def legend(self, entries: list[tuple[str, str]]):
        for i, (label, color) in enumerate(entries):
            y = MARGIN + 16 + 16 * i
            self.parts.append(f'<rect x="{WIDTH - MARGIN - 130}" y="{y - 9}" width="10" height="10" '
                              f'fill="{color}"/>')
            self.parts.append(f'<text x="{WIDTH - MARGIN - 115}" y="{y}" font-size="11" '
                              f'font-family="sans-serif">{label}</text>')

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def line_plot(path, series: dict[str, tuple[list[float], list[float]]], title: str,
              xlabel: str, ylabel: str) -> None:
    """One polyline per named series; series maps name -> (xs, ys)."""
    series = {k: v for k, v in series.items() if len(v[0])}
    if not series:
        raise InsufficientDataError("line plot needs at least one nonempty series")
    all_x = [v for xs, _ in series.values() for v in xs]
    all_y = [v for _, ys in series.values() for v in ys]
    svg = _Svg(title, xlabel, ylabel, _scale(all_x), _scale(all_y))
    entries = []
    for i, (name, (xs, ys)) in enumerate(series.items()):
        color = COLORS[i % len(COLORS)]
        svg.polyline(xs, ys, color)
        entries.append((name, color))
    svg.legend(entries)
    Path(path).write_text(svg.render())


def scatter_plot(path, xs: list[float], ys: list[float], title: str,
                 xlabel: str, ylabel: str) -> None:
    if not xs:
        raise InsufficientDataError("scatter plot needs at least one point")
    svg = _Svg(title, xlabel, ylabel, _scale(xs), _scale(ys))
    svg.dots(xs, ys, COLORS[0])
    Path(path).write_text(svg.render())
