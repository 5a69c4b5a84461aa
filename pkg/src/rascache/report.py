"""Report rendering: deterministic SVG heatmaps and matplotlib figures.

The SVG path is byte-reproducible: plain rect markup, linear grayscale from
the matrix minimum (black) to maximum (white), no library involvement. The
PNG path uses matplotlib for human-friendly figures alongside the CSV output.
"""

import csv
import io

CELL = 8
MARGIN_LEFT = 56
MARGIN_TOP = 20
MARGIN_BOTTOM = 36
LABEL_STEP_TARGET = 8  # aim for about this many axis labels per side


def parse_matrix_csv(text: str) -> tuple[str, list[str], list[str], list[list[float]]]:
    """Read a matrix written by TimingMatrix.to_csv (leading # lines allowed)."""
    rows = []
    labels = []
    header = None
    reader = csv.reader(io.StringIO(text))
    for rec in reader:
        if not rec or rec[0].startswith("#"):
            continue
        if header is None:
            header = rec
            continue
        labels.append(rec[0])
        try:
            rows.append([float(x) for x in rec[1:]])
        except ValueError as e:
            raise ValueError(f"matrix row {len(rows) + 1}: {e}") from None
    if header is None or not rows:
        raise ValueError("matrix CSV has no data")
    width = len(header) - 1
    for i, r in enumerate(rows):
        if len(r) != width:
            raise ValueError(f"ragged matrix: row {i + 1} has {len(r)} cells, "
                             f"header implies {width}")
    return header[0], header[1:], labels, rows


def _gray(v: float, lo: float, hi: float) -> str:
    if hi == lo:
        shade = 128
    else:
        shade = round(255 * (v - lo) / (hi - lo))
    return f"#{shade:02x}{shade:02x}{shade:02x}"


def _label_step(n: int) -> int:
    step = 1
    while n // step > LABEL_STEP_TARGET:
        step *= 2
    return step


def render_heatmap(csv_text: str, *, title: str = "", comment: str = "") -> str:
    """Render a matrix CSV as an SVG grid, min mapped to black, max to white."""
    row_name, cols, row_labels, rows = parse_matrix_csv(csv_text)
    nr, nc = len(rows), len(rows[0])
    lo = min(min(r) for r in rows)
    hi = max(max(r) for r in rows)
    width = MARGIN_LEFT + nc * CELL + 8
    height = MARGIN_TOP + nr * CELL + MARGIN_BOTTOM
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
    ]
    if comment:
        out.append(f"<!-- {comment} -->")
    if title:
        out.append(f'<text x="{MARGIN_LEFT}" y="14" font-family="monospace" '
                   f'font-size="11">{title}</text>')
    for i, row in enumerate(rows):
        y = MARGIN_TOP + i * CELL
        for j, v in enumerate(row):
            x = MARGIN_LEFT + j * CELL
            out.append(f'<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" '
                       f'fill="{_gray(v, lo, hi)}"/>')
    rstep = _label_step(nr)
    for i in range(0, nr, rstep):
        y = MARGIN_TOP + i * CELL + CELL
        out.append(f'<text x="4" y="{y}" font-family="monospace" font-size="9">'
                   f'{row_labels[i]}</text>')
    cstep = _label_step(nc)
    ybase = MARGIN_TOP + nr * CELL + 12
    for j in range(0, nc, cstep):
        x = MARGIN_LEFT + j * CELL
        out.append(f'<text x="{x}" y="{ybase}" font-family="monospace" '
                   f'font-size="9">{cols[j]}</text>')
    out.append(f'<text x="4" y="{MARGIN_TOP + 8}" font-family="monospace" '
               f'font-size="9">{row_name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_heatmap_png(csv_text: str, path: str, *, title: str = "") -> None:
    """Matplotlib rendering of the same matrix for quick visual inspection."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    row_name, cols, row_labels, rows = parse_matrix_csv(csv_text)
    fig, ax = plt.subplots(figsize=(7, 5), constrained_layout=True)
    im = ax.imshow(rows, cmap="gray", aspect="auto", interpolation="nearest")
    ax.set_title(title)
    ax.set_ylabel(row_name)
    rstep = _label_step(len(rows))
    ax.set_yticks(range(0, len(rows), rstep),
                  [row_labels[i] for i in range(0, len(rows), rstep)])
    cstep = _label_step(len(cols))
    ax.set_xticks(range(0, len(cols), cstep),
                  [cols[j] for j in range(0, len(cols), cstep)])
    fig.colorbar(im, ax=ax, label="cycles")
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)


def render_sweep_png(rows: list[dict], path: str) -> None:
    """Bar chart of L1 miss rates across sweep rows."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labeled = [(r.get("label", str(i)), r.get("l1_miss_rate"))
               for i, r in enumerate(rows) if r.get("l1_miss_rate") not in (None, "")]
    fig, ax = plt.subplots(figsize=(max(4, 0.9 * len(labeled)), 4),
                           constrained_layout=True)
    if labeled:
        names = [x[0] for x in labeled]
        vals = [float(x[1]) for x in labeled]
        ax.bar(range(len(vals)), vals, color="0.4")
        ax.set_xticks(range(len(vals)), names, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("L1 miss rate")
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)
