"""Graphviz DOT output for DepGraphs, merged clusters and diff graphs.

Output is byte-stable: nodes are emitted in NodePath order and get ids
``n0, n1, ...`` in that order.
"""

from __future__ import annotations

from .depgraph import DepGraph, node_paths, path_label
from .rootcause import BOLD_BANDS, BOTH, DiffGraph, MergedDepGraph


def _q(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def _lines(*parts: str) -> str:
    # DOT's own line-break escape; parts are escaped individually
    return '"' + "\\n".join(p.replace("\\", "\\\\").replace('"', '\\"') for p in parts) + '"'


def fmt(v: float) -> str:
    if float(v).is_integer():
        return str(int(v))
    return f"{v:.3f}".rstrip("0").rstrip(".")


def _header(name: str, rankdir: str) -> list[str]:
    return [f"digraph {_q(name)} {{", f"  rankdir={rankdir};",
            '  node [shape=box, fontname="Helvetica"];']


def render_depgraph(g: DepGraph, rankdir: str = "LR") -> str:
    paths = node_paths(g)
    order = sorted(g.nodes, key=lambda n: paths[n.id])
    ids = {n.id: f"n{i}" for i, n in enumerate(order)}
    out = _header(g.request_id, rankdir)
    for n in order:
        out.append(f"  {ids[n.id]} [label={_lines(n.label, fmt(n.duration_ms) + ' ms')}];")
    for e in sorted(g.edges, key=lambda e: (paths[e.src], paths[e.dst])):
        out.append(f"  {ids[e.src]} -> {ids[e.dst]} [label={_q(fmt(e.wait_pct) + '%')}];")
    out.append("}")
    return "\n".join(out) + "\n"


def render_merged(m: MergedDepGraph, name: str = "merged", rankdir: str = "LR") -> str:
    paths = m.paths()
    ids = {p: f"n{i}" for i, p in enumerate(paths)}
    out = _header(name, rankdir)
    out.append(f"  // {m.n_graphs} graphs merged; node text: size / count / min–max (ms)")
    for p in paths:
        s = m.stats[p]
        text = f"{fmt(s.size)} / {s.count} / {fmt(s.min)}–{fmt(s.max)}"
        out.append(f"  {ids[p]} [label={_lines(path_label(p), text)}];")
    for parent, child in m.edges():
        ps = m.stats[parent].size
        pct = 100.0 * m.stats[child].size / ps if ps else 0.0
        out.append(f"  {ids[parent]} -> {ids[child]} [label={_q(fmt(pct) + '%')}];")
    out.append("}")
    return "\n".join(out) + "\n"


def render_diff(d: DiffGraph, name: str = "diff", rankdir: str = "LR") -> str:
    paths = d.paths()
    ids = {p: f"n{i}" for i, p in enumerate(paths)}
    bands = "/".join(fmt(b) for b in BOLD_BANDS)
    legend = (f"dashed: first only; dotted: second only; "
              f"penwidth: boldness 1-5, |z| bands {bands}")
    out = _header(name, rankdir)
    out.append(f"  label={_q(legend)};")
    out.append(f"  // first: {d.n_first} graphs; second: {d.n_second} graphs")
    for p in paths:
        n = d.nodes[p]
        s = n.merged
        counts = (f"counts {n.first.count if n.first else 0}"
                  f" | {n.second.count if n.second else 0}")
        text = f"{fmt(s.size)} / {s.count} / {fmt(s.min)}–{fmt(s.max)}"
        out.append(f"  {ids[p]} [label={_lines(path_label(p), text, counts)}, "
                   f"style={n.style}];")
    for parent, child in d.edges():
        n = d.nodes[child]
        width = n.boldness if n.origin == BOTH else 1
        out.append(f"  {ids[parent]} -> {ids[child]} [style={n.style}, penwidth={width}];")
    out.append("}")
    return "\n".join(out) + "\n"


def render_dot(g, **options) -> str:
    if isinstance(g, DepGraph):
        return render_depgraph(g, **options)
    if isinstance(g, MergedDepGraph):
        return render_merged(g, **options)
    if isinstance(g, DiffGraph):
        return render_diff(g, **options)
    raise TypeError(f"cannot render {type(g).__name__}")
