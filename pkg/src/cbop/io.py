"""CSV and JSON readers and writers; node ids are one-based in every file."""
import csv
import json
from pathlib import Path

import numpy as np

from .errors import InputError
from .graph import build_graph

FLOAT_FMT = "{:.17g}"


def _rows(path, required):
    path = Path(path)
    if not path.is_file():
        raise InputError(f"file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        fields = [f.strip() for f in (reader.fieldnames or [])]
        missing = [c for c in required if c not in fields]
        if missing:
            raise InputError(f"{path}: missing column(s) {', '.join(missing)}")
        reader.fieldnames = fields
        rows = list(reader)
    if not rows:
        raise InputError(f"{path}: no data rows")
    return rows


def _num(value, path, kind=float):
    try:
        return kind(value)
    except (TypeError, ValueError):
        raise InputError(f"{path}: cannot parse {value!r}") from None


def read_graph(path, cost_from_affinity=False):
    """Read an edge list with header ``src,dst,affinity,cost``.

    The ``cost`` column may be omitted when `cost_from_affinity` is set.
    """
    required = ["src", "dst", "affinity"] + ([] if cost_from_affinity else ["cost"])
    edges = []
    for r in _rows(path, required):
        e = (_num(r["src"], path, int), _num(r["dst"], path, int), _num(r["affinity"], path))
        if not cost_from_affinity:
            e += (_num(r["cost"], path),)
        edges.append(e)
    return build_graph(edges, cost_from_affinity=cost_from_affinity)


def _node_index(r, path, n):
    i = _num(r["node"], path, int)
    if not 1 <= i <= n:
        raise InputError(f"{path}: node {i} outside 1..{n}")
    return i - 1


def read_margins(path, n):
    """Read ``node,sigma_in,sigma_out``; nodes not listed get zero mass."""
    si, so = np.zeros(n), np.zeros(n)
    for r in _rows(path, ["node", "sigma_in", "sigma_out"]):
        i = _node_index(r, path, n)
        si[i] = _num(r["sigma_in"], path)
        so[i] = _num(r["sigma_out"], path)
    return si, so


def read_weights(path, n):
    """Read ``node,weight``; every node must be listed."""
    w = np.full(n, np.nan)
    for r in _rows(path, ["node", "weight"]):
        w[_node_index(r, path, n)] = _num(r["weight"], path)
    if np.any(np.isnan(w)):
        raise InputError(f"{path}: every node needs a weight")
    return w


def read_groups(path, n):
    """Read ``node,group,membership`` into an ``n x p`` matrix and group labels."""
    rows = _rows(path, ["node", "group", "membership"])
    labels = list(dict.fromkeys(r["group"].strip() for r in rows))
    col = {g: k for k, g in enumerate(labels)}
    M = np.zeros((n, len(labels)))
    for r in rows:
        M[_node_index(r, path, n), col[r["group"].strip()]] += _num(r["membership"], path)
    return M, tuple(labels)


def fmt(x):
    return FLOAT_FMT.format(float(x))


def write_matrix(path, M, name="value", sparse=True):
    """Long-format ``src,dst,<name>``; zero entries are skipped when `sparse`."""
    idx = np.argwhere(M != 0) if sparse else np.argwhere(np.ones_like(M, dtype=bool))
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["src", "dst", name])
        for i, j in idx:
            w.writerow([i + 1, j + 1, fmt(M[i, j])])


def read_matrix(path, n, name="value"):
    M = np.zeros((n, n))
    for r in _rows(path, ["src", "dst", name]):
        M[_num(r["src"], path, int) - 1, _num(r["dst"], path, int) - 1] = _num(r[name], path)
    return M


def write_vectors(path, columns):
    """``node,<col>...`` with one row per node; `columns` maps name to vector."""
    names = list(columns)
    n = len(next(iter(columns.values())))
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node"] + names)
        for i in range(n):
            w.writerow([i + 1] + [fmt(columns[c][i]) for c in names])


def read_vectors(path, n, names):
    out = {c: np.zeros(n) for c in names}
    for r in _rows(path, ["node"] + list(names)):
        i = _node_index(r, path, n)
        for c in names:
            out[c][i] = _num(r[c], path)
    return out


def write_table(path, header, rows):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])


def write_graph(path, g):
    write_table(path, ["src", "dst", "affinity", "cost"],
                [(i, j, float(a), float(c)) for i, j, a, c in g.edge_list()])


def write_margins(path, sigma_in, sigma_out):
    write_vectors(path, {"sigma_in": sigma_in, "sigma_out": sigma_out})


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if np.isfinite(x) else str(x)
    if isinstance(x, Path):
        return str(x)
    return x


def write_json(path, obj):
    with Path(path).open("w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    path = Path(path)
    if not path.is_file():
        raise InputError(f"file not found: {path}")
    with path.open() as fh:
        return json.load(fh)
