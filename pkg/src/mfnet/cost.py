"""Analytical parameter and multiply-add accounting for layer graphs.

Conventions (one multiply-add counts as one FLOP):

* conv: params ``O * (C/G) * prod(kernel)`` (+ ``O`` bias);
  MACs ``B * prod(output extent) * O * (C/G) * prod(kernel)``.
* linear: params ``K * C + K``; MACs ``B * K * C``.
* batch norm: ``2 * C`` learnable params (running statistics excluded).
* BN, ReLU, pooling, residual adds and bias additions cost zero MACs.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .graph import GraphSpec, LayerSpec, propagate_shapes

CSV_HEADER = ("name", "kind", "stage", "output_shape", "params", "macs")


@dataclass
class CostRow:
    name: str
    kind: str
    output_shape: tuple[int, ...]
    params: int = 0
    macs: int = 0

    @property
    def stage(self) -> str:
        return self.name.split(".", 1)[0]


@dataclass
class CostReport:
    rows: list[CostRow] = field(default_factory=list)
    title: str = ""

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_macs(self) -> int:
        return sum(r.macs for r in self.rows)

    def stage_totals(self) -> dict[str, tuple[int, int]]:
        """``stage -> (params, macs)`` in first-appearance order."""
        out: dict[str, tuple[int, int]] = {}
        for r in self.rows:
            p, m = out.get(r.stage, (0, 0))
            out[r.stage] = (p + r.params, m + r.macs)
        return out

    def row(self, name: str) -> CostRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)


def layer_params(layer: LayerSpec) -> int:
    return int(sum(int(np.prod(s)) for s in layer.param_shapes().values()))


def layer_macs(layer: LayerSpec, out_shape: tuple[int, ...]) -> int:
    """MACs of ``layer`` for a batched output shape ``(B, ...)``."""
    s = layer.spec
    if layer.kind in ("conv2d", "conv3d"):
        positions = int(np.prod(out_shape[2:])) * out_shape[0]
        return positions * s.out_channels * (s.in_channels // s.groups) * int(np.prod(s.kernel))
    if layer.kind == "linear":
        return out_shape[0] * s.out_features * s.in_features
    return 0


def count_params(graph: GraphSpec) -> CostReport:
    rows = [CostRow(layer.name, layer.kind, graph.shapes[layer.name], layer_params(layer))
            for layer in graph.layers]
    return CostReport(rows, graph.name)


def count_flops(graph: GraphSpec, input_shape=None) -> CostReport:
    """Multiply-adds for a batched ``input_shape`` (default: batch 1 of the signature).

    The spatial extents may differ from the graph's declared signature; shapes
    are re-propagated.  Returned rows carry both params and MACs.
    """
    if input_shape is None:
        input_shape = (1,) + graph.input_shape
    input_shape = tuple(int(a) for a in input_shape)
    if len(input_shape) != len(graph.input_shape) + 1 or input_shape[1] != graph.input_shape[0]:
        raise DimensionError(f"input shape {input_shape} does not fit graph {graph.name!r} "
                             f"with signature {graph.input_shape}")
    shapes = propagate_shapes(graph.layers, graph.input_name, input_shape, batched=True)
    rows = [CostRow(layer.name, layer.kind, shapes[layer.name][1:], layer_params(layer),
                    layer_macs(layer, shapes[layer.name])) for layer in graph.layers]
    return CostReport(rows, graph.name)


def cost_report(graph: GraphSpec, input_shape=None) -> CostReport:
    return count_flops(graph, input_shape)


def _shape_text(shape) -> str:
    return "x".join(str(a) for a in shape)


def human(n: int) -> str:
    if n >= 10**9:
        return f"{n / 1e9:.2f} G"
    if n >= 10**6:
        return f"{n / 1e6:.2f} M"
    if n >= 10**3:
        return f"{n / 1e3:.1f} K"
    return str(n)


def render_report(report: CostReport, fmt: str = "markdown", stages: bool = False) -> str:
    """Render rows as markdown (with totals) or CSV (one row per layer)."""
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(CSV_HEADER)
        for r in report.rows:
            w.writerow((r.name, r.kind, r.stage, _shape_text(r.output_shape), r.params, r.macs))
        return buf.getvalue()
    if fmt != "markdown":
        raise ValueError(f"unknown report format {fmt!r}")
    if stages:
        last_shape = {r.stage: r.output_shape for r in report.rows}
        lines = ["| stage | output_shape | params | macs |", "|---|---|---|---|"]
        for stage, (p, m) in report.stage_totals().items():
            lines.append(f"| {stage} | {_shape_text(last_shape[stage])} | {p} | {m} |")
    else:
        lines = ["| " + " | ".join(CSV_HEADER) + " |", "|" + "---|" * len(CSV_HEADER)]
        for r in report.rows:
            lines.append(f"| {r.name} | {r.kind} | {r.stage} | {_shape_text(r.output_shape)} "
                         f"| {r.params} | {r.macs} |")
    lines.append("")
    lines.append(f"Total params: {report.total_params} ({human(report.total_params)})")
    lines.append(f"Total multiply-adds: {report.total_macs} ({human(report.total_macs)})")
    return "\n".join(lines) + "\n"


def parse_report_csv(text: str) -> CostReport:
    """Inverse of ``render_report(..., "csv")``."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header) != CSV_HEADER:
        raise ValueError(f"unexpected cost report header {header}")
    rows = []
    for rec in reader:
        if not rec:
            continue
        name, kind, _stage, shape, params, macs = rec
        dims = tuple(int(a) for a in shape.split("x")) if shape else ()
        rows.append(CostRow(name, kind, dims, int(params), int(macs)))
    return CostReport(rows)


def compare_table(reports: list[tuple[str, CostReport]]) -> str:
    lines = ["| model | params | multiply-adds |", "|---|---|---|"]
    for label, rep in reports:
        lines.append(f"| {label} | {rep.total_params} ({human(rep.total_params)}) | "
                     f"{rep.total_macs} ({human(rep.total_macs)}) |")
    return "\n".join(lines) + "\n"
