"""Minimal standalone SVG 1.1 line charts.

The SVG files are cosmetic; every plotted value is also written to a
sibling CSV, which is the machine-readable contract.
"""

from xml.sax.saxutils import escape

from .errors import ContractError

WIDTH, HEIGHT = 640, 400
MARGIN = 60
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def _scale(lo, hi, a, b):
    span = hi - lo if hi > lo else 1.0
    return lambda v: a + (v - lo) / span * (b - a)


def line_chart(x, series, xlabel="", ylabel="", title="", points=None):
    """Render series of (label, values, dashed) over shared x values.

    ``points`` optionally adds scatter markers as (xs, ys).
    """
    x = [float(v) for v in x]
    if not x or not series:
        raise ContractError("cannot plot an empty series")
    for label, values, _ in series:
        if len(values) != len(x):
            raise ContractError(f"series {label!r} has {len(values)} values for {len(x)} x positions")
    ys = [float(v) for _, values, _ in series for v in values]
    if points is not None:
        ys += [float(v) for v in points[1]]
    y_lo, y_hi = min(ys), max(ys)
    sx = _scale(min(x), max(x), MARGIN, WIDTH - MARGIN)
    sy = _scale(y_lo, y_hi, HEIGHT - MARGIN, MARGIN)
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<text x="{WIDTH / 2}" y="{HEIGHT - 15}" text-anchor="middle" font-size="14">{escape(xlabel)}</text>',
        f'<text x="15" y="{HEIGHT / 2}" text-anchor="middle" font-size="14" transform="rotate(-90 15 {HEIGHT / 2})">{escape(ylabel)}</text>',
    ]
    if title:
        out.append(f'<text x="{WIDTH / 2}" y="25" text-anchor="middle" font-size="16">{escape(title)}</text>')
    for value, anchor, px, py in (
        (min(x), "middle", sx(min(x)), HEIGHT - MARGIN + 18),
        (max(x), "middle", sx(max(x)), HEIGHT - MARGIN + 18),
        (y_lo, "end", MARGIN - 6, sy(y_lo)),
        (y_hi, "end", MARGIN - 6, sy(y_hi)),
    ):
        out.append(f'<text x="{px:.2f}" y="{py:.2f}" text-anchor="{anchor}" font-size="11">{value:.3g}</text>')
    for i, (label, values, dashed) in enumerate(series):
        color = COLORS[i % len(COLORS)]
        pts = " ".join(f"{sx(a):.2f},{sy(float(b)):.2f}" for a, b in zip(x, values))
        dash = ' stroke-dasharray="6,4"' if dashed else ""
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2"{dash} points="{pts}"/>')
        ly = MARGIN + 16 * i
        out.append(f'<line x1="{WIDTH - MARGIN - 120}" y1="{ly}" x2="{WIDTH - MARGIN - 95}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/>')
        out.append(f'<text x="{WIDTH - MARGIN - 90}" y="{ly + 4}" font-size="12">{escape(label)}</text>')
    if points is not None:
        for a, b in zip(*points):
            out.append(f'<circle cx="{sx(float(a)):.2f}" cy="{sy(float(b)):.2f}" r="3" fill="black"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def sweep_svg(sweep, title=""):
    return line_chart(
        sweep.epsilons,
        [("accuracy", sweep.accuracy, False), ("entropy / max", sweep.entropy, True)],
        xlabel="adversarial perturbation epsilon",
        ylabel="accuracy / normalised entropy",
        title=title,
    )


def toy_svg(x, mean, std, data_x=None, data_y=None, title=""):
    lower = [m - 2 * s for m, s in zip(mean, std)]
    upper = [m + 2 * s for m, s in zip(mean, std)]
    pts = None if data_x is None else (data_x, data_y)
    return line_chart(
        x,
        [("predictive mean", mean, False), ("mean - 2 std", lower, True), ("mean + 2 std", upper, True)],
        xlabel="x",
        ylabel="y",
        title=title,
        points=pts,
    )


def emit_plot(path, svg):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(svg)
