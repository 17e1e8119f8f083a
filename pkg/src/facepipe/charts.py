"""Self-contained SVG grouped bar charts of per-class sensitivities."""

from __future__ import annotations

from dataclasses import dataclass, field
from xml.sax.saxutils import escape

_SERIES_COLORS = ("#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3")

_MARGIN_LEFT = 56
_MARGIN_RIGHT = 16
_MARGIN_TOP = 40
_MARGIN_BOTTOM = 64
_GROUP_WIDTH = 72
_PLOT_HEIGHT = 260


@dataclass(frozen=True)
class ChartSpec:
    """Grouped bars: one group per class plus a trailing mean-summary group.

    series maps a condition name to {class name: value in [0, 1] or None};
    summary maps a condition name to its mean sensitivity.
    """

    classes: tuple[str, ...]
    series: dict[str, dict[str, float | None]]
    summary: dict[str, float] = field(default_factory=dict)
    title: str = "Per-class sensitivity"
    x_label: str = "expression class"
    y_label: str = "sensitivity"

    def validate(self) -> None:
        for name, values in self.series.items():
            for cls, v in values.items():
                if v is not None and not (0.0 <= v <= 1.0):
                    raise ValueError(f"series {name!r} value for {cls!r} out of [0, 1]: {v}")
        for name, v in self.summary.items():
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"summary value for {name!r} out of [0, 1]: {v}")


def render_bar_chart_svg(spec: ChartSpec) -> str:
    """Render the chart as a standalone SVG document string."""
    spec.validate()
    conditions = list(spec.series)
    groups: list[tuple[str, dict[str, float | None]]] = [
        (cls, {cond: spec.series[cond].get(cls) for cond in conditions})
        for cls in spec.classes
    ]
    if spec.summary:
        groups.append(("mean", {cond: spec.summary.get(cond) for cond in conditions}))

    width = _MARGIN_LEFT + _MARGIN_RIGHT + _GROUP_WIDTH * max(len(groups), 1)
    height = _MARGIN_TOP + _PLOT_HEIGHT + _MARGIN_BOTTOM
    base_y = _MARGIN_TOP + _PLOT_HEIGHT
    bar_w = (_GROUP_WIDTH - 16) / max(len(conditions), 1)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<title>{escape(spec.title)}</title>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">'
        f'{escape(spec.title)}</text>',
    ]

    # y axis, gridlines and tick labels
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = base_y - tick * _PLOT_HEIGHT
        out.append(
            f'<line x1="{_MARGIN_LEFT}" y1="{y:.1f}" x2="{width - _MARGIN_RIGHT}" '
            f'y2="{y:.1f}" stroke="#dddddd" stroke-width="1"/>'
        )
        out.append(
            f'<text x="{_MARGIN_LEFT - 6}" y="{y + 4:.1f}" text-anchor="end">{tick:.2f}</text>'
        )
    out.append(
        f'<text x="14" y="{_MARGIN_TOP + _PLOT_HEIGHT / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 14 {_MARGIN_TOP + _PLOT_HEIGHT / 2:.1f})">'
        f'{escape(spec.y_label)}</text>'
    )

    for gi, (name, values) in enumerate(groups):
        gx = _MARGIN_LEFT + gi * _GROUP_WIDTH
        bars = []
        for ci, cond in enumerate(conditions):
            v = values.get(cond)
            if v is None:
                continue
            bx = gx + 8 + ci * bar_w
            bh = v * _PLOT_HEIGHT
            color = _SERIES_COLORS[ci % len(_SERIES_COLORS)]
            bars.append(
                f'<rect x="{bx:.1f}" y="{base_y - bh:.1f}" width="{bar_w:.1f}" '
                f'height="{bh:.1f}" fill="{color}"><title>{escape(cond)} '
                f'{escape(name)}: {v:.3f}</title></rect>'
            )
        label = (
            f'<text x="{gx + _GROUP_WIDTH / 2:.1f}" y="{base_y + 16}" '
            f'text-anchor="middle">{escape(name)}</text>'
        )
        out.append(f'<g id="group-{escape(name)}" class="bar-group">' + "".join(bars) + label + "</g>")

    out.append(
        f'<text x="{width / 2:.1f}" y="{height - 28}" text-anchor="middle">'
        f'{escape(spec.x_label)}</text>'
    )

    # legend
    for ci, cond in enumerate(conditions):
        lx = _MARGIN_LEFT + ci * 90
        ly = height - 14
        color = _SERIES_COLORS[ci % len(_SERIES_COLORS)]
        out.append(f'<rect x="{lx}" y="{ly - 9}" width="10" height="10" fill="{color}"/>')
        out.append(f'<text x="{lx + 14}" y="{ly}">{escape(cond)}</text>')

    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_bar_chart_svg(spec: ChartSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(render_bar_chart_svg(spec))
