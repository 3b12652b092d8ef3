"""Versioned on-disk filters (KL basis + kd-tree + multilevel basis).

A filter file is an ``.npz`` archive written with fixed zip timestamps so
identical filters produce identical bytes.  ``meta.json`` inside the
archive carries the format version, the fit settings, the domain
dimensions and a content hash over the latter two.
"""

from __future__ import annotations

import io
import json
import zipfile

import numpy as np

from ..detect import AnomalyFilter
from ..errors import FormatError
from ..geometry import PiecewiseField, SimplicialDomain
from ..multilevel import CellBasis, MultilevelBasis
from ..partition import PartitionTree, SplitRule, TreeNode
from ..spectral import KLBasis
from .config import content_hash

FILTER_FORMAT = "mlkl-filter"
FILTER_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _pack_filter(filt: AnomalyFilter) -> dict:
    kl, basis, tree = filt.kl, filt.basis, filt.basis.tree
    nodes = tree.nodes
    flat_index = {id(n): i for i, n in enumerate(nodes)}
    members = [n.member_ids for n in nodes]
    cells = basis.cells
    arrays = {
        "domain_measures": kl.domain.measures,
        "domain_barycenters": kl.domain.barycenters,
        "kl_mean": kl.mean.values,
        "kl_lambdas": kl.lambdas,
        "kl_coords": kl.coords,
        "kl_spectrum": kl.spectrum if kl.spectrum is not None else np.zeros(0),
        "kl_tail": np.array([kl.tail_sum, kl.tail_root_sum]),
        "tree_level": np.array([n.level for n in nodes], dtype=np.int64),
        "tree_index": np.array([n.index for n in nodes], dtype=np.int64),
        "tree_parent": np.array(
            [-1 if n.parent is None else flat_index[id(n.parent)] for n in nodes], dtype=np.int64
        ),
        "tree_axis": np.array([-1 if n.rule is None else n.rule.axis for n in nodes], dtype=np.int64),
        "tree_threshold": np.array([np.nan if n.rule is None else n.rule.threshold for n in nodes]),
        "tree_member_offsets": np.cumsum([0] + [m.size for m in members]).astype(np.int64),
        "tree_members": np.concatenate(members).astype(np.int64),
        "basis_dof_offsets": np.cumsum([0] + [c.dofs.size for c in cells]).astype(np.int64),
        "basis_dofs": np.concatenate([c.dofs for c in cells]).astype(np.int64),
        "basis_a": np.array([c.a for c in cells], dtype=np.int64),
        "basis_cols": np.array([c.a + c.n_details for c in cells], dtype=np.int64),
        "basis_sv_offsets": np.cumsum([0] + [c.singular_values.size for c in cells]).astype(np.int64),
        "basis_sv": np.concatenate([c.singular_values for c in cells]),
        "basis_coeffs": np.concatenate(
            [np.hstack([c.carried, c.details]).reshape(-1) for c in cells]
        ),
    }
    return arrays


def save_filter(path, filt: AnomalyFilter, fit_settings: dict, dims: dict) -> str:
    """Write ``filt`` to ``path``; returns the content hash."""
    digest = content_hash(fit_settings, dims)
    meta = {
        "format": FILTER_FORMAT,
        "version": FILTER_VERSION,
        "config": fit_settings,
        "dims": dims,
        "content_hash": digest,
        "n0": filt.n0,
        "tol": filt.tol,
        "tail_mode": filt.kl.tail_mode,
        "svd_calls": filt.basis.svd_calls,
    }
    arrays = _pack_filter(filt)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        info = zipfile.ZipInfo("meta.json", date_time=_EPOCH)
        zf.writestr(info, json.dumps(meta, sort_keys=True, indent=2))
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=_EPOCH), buf.getvalue())
    return digest


def _build(meta: dict, arr: dict) -> AnomalyFilter:
    dims = meta["dims"]
    grid = (dims["rows"], dims["cols"]) if "rows" in dims else None
    domain = SimplicialDomain(arr["domain_measures"], arr["domain_barycenters"], dims["q"], grid)
    for name in ("kl_coords", "kl_lambdas", "kl_spectrum"):
        arr[name].setflags(write=False)
    kl = KLBasis(
        domain=domain,
        mean=PiecewiseField(domain, arr["kl_mean"]),
        lambdas=arr["kl_lambdas"],
        coords=arr["kl_coords"],
        tail_sum=float(arr["kl_tail"][0]),
        tail_root_sum=float(arr["kl_tail"][1]),
        spectrum=arr["kl_spectrum"],
        tail_mode=meta["tail_mode"],
    )

    offs = arr["tree_member_offsets"]
    nodes = []
    for i in range(arr["tree_level"].size):
        node = TreeNode(
            level=int(arr["tree_level"][i]),
            member_ids=arr["tree_members"][offs[i] : offs[i + 1]],
            index=int(arr["tree_index"][i]),
        )
        if arr["tree_axis"][i] >= 0:
            node.rule = SplitRule(int(arr["tree_axis"][i]), float(arr["tree_threshold"][i]))
        nodes.append(node)
    children: dict[int, list] = {}
    for i, p in enumerate(arr["tree_parent"]):
        if p >= 0:
            nodes[i].parent = nodes[p]
            children.setdefault(int(p), []).append(nodes[i])
    for p, pair in children.items():
        nodes[p].children = tuple(pair)
    levels: list[list] = []
    for node in nodes:
        while len(levels) <= node.level:
            levels.append([])
        levels[node.level].append(node)
    tree = PartitionTree(nodes[0], int(meta["n0"]), levels, domain.n_cells)

    d_off, sv_off = arr["basis_dof_offsets"], arr["basis_sv_offsets"]
    cells = []
    pos = 0
    for i, node in enumerate(nodes):
        dofs = arr["basis_dofs"][d_off[i] : d_off[i + 1]]
        ncol = int(arr["basis_cols"][i])
        block = arr["basis_coeffs"][pos : pos + dofs.size * ncol].reshape(dofs.size, ncol)
        pos += dofs.size * ncol
        a = int(arr["basis_a"][i])
        sv = arr["basis_sv"][sv_off[i] : sv_off[i + 1]]
        cells.append(CellBasis(node.level, node.index, dofs, block[:, :a], block[:, a:], sv))
    if pos != arr["basis_coeffs"].size:
        raise FormatError("basis coefficient array has the wrong length", section="basis_coeffs")
    basis = MultilevelBasis(tree, kl, cells, float(meta["tol"]), int(meta["svd_calls"]))
    return AnomalyFilter(kl, n0=int(meta["n0"]), tol=float(meta["tol"]), basis=basis)


def load_filter(path) -> tuple[AnomalyFilter, dict]:
    """Read a filter written by :func:`save_filter`; returns ``(filter, meta)``.

    Raises
    ------
    FormatError
        If the archive is unreadable, of an unknown version, or its content
        hash does not match its settings.
    """
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
            arr = {}
            for name in zf.namelist():
                if name.endswith(".npy"):
                    arr[name[:-4]] = np.lib.format.read_array(io.BytesIO(zf.read(name)), allow_pickle=False)
    except (zipfile.BadZipFile, KeyError, ValueError, OSError) as exc:
        raise FormatError(f"cannot read filter file {path}: {exc}", section="filter") from exc
    if meta.get("format") != FILTER_FORMAT or meta.get("version") != FILTER_VERSION:
        raise FormatError("not a supported filter file", section="meta.json")
    if content_hash(meta["config"], meta["dims"]) != meta.get("content_hash"):
        raise FormatError("filter content hash does not match its settings", section="meta.json")
    try:
        return _build(meta, arr), meta
    except KeyError as exc:
        raise FormatError(f"filter file lacks array {exc}", section="filter") from exc
