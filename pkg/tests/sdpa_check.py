"""Independent SDPA sparse-format reader and validator for the tests.

Written directly against the .dat-s grammar (comment lines, m, nBLOCK,
block sizes, objective vector, entry lines "k blk i j v"), on purpose not
sharing any code with the exporter it checks.
"""

import numpy as np
import scipy.sparse as sp


class SdpaFile:
    def __init__(self, m, block_sizes, avec, entries, comments):
        self.m = m
        self.block_sizes = block_sizes
        self.avec = avec
        self.entries = entries          # list of (k, blk, i, j, value)
        self.comments = comments


def parse_sdpa(text: str) -> SdpaFile:
    lines = text.splitlines()
    pos = 0
    comments = []
    while pos < len(lines) and lines[pos].lstrip()[:1] in ('"', "*"):
        comments.append(lines[pos])
        pos += 1
    m = int(lines[pos].split()[0]); pos += 1
    nblock = int(lines[pos].split()[0]); pos += 1
    sizes = [int(v) for v in lines[pos].replace(",", " ").split()]; pos += 1
    if len(sizes) != nblock and not (nblock == 0 and sizes == [0]):
        raise ValueError("block size line does not match nBLOCK")
    avec = np.array([float(v) for v in lines[pos].replace(",", " ").split()])
    pos += 1
    if avec.size != m:
        raise ValueError("objective vector length != m")
    entries = []
    for line in lines[pos:]:
        line = line.strip()
        if not line:
            continue
        k, blk, i, j, v = line.split()
        entries.append((int(k), int(blk), int(i), int(j), float(v)))
    return SdpaFile(m, sizes, avec, entries, comments)


def validate_sdpa(text: str):
    """Strict structural checks; raises AssertionError on any violation."""
    f = parse_sdpa(text)
    assert f.m >= 0
    assert all(s != 0 for s in f.block_sizes) or f.block_sizes == [0]
    seen = set()
    for (k, blk, i, j, v) in f.entries:
        assert 0 <= k <= f.m, f"matrix index {k} out of range"
        assert 1 <= blk <= len(f.block_sizes), f"block {blk} out of range"
        size = f.block_sizes[blk - 1]
        if size < 0:
            assert i == j, "diagonal block entry must be diagonal"
            assert 1 <= i <= -size
        else:
            assert 1 <= i <= j <= size, "upper-triangle entry expected"
        assert np.isfinite(v) and v != 0.0
        key = (k, blk, i, j)
        assert key not in seen, f"duplicate entry {key}"
        seen.add(key)
    return f


def reconstruct_program(text: str):
    """Invert the exporter's documented encoding back to (blocks, c, A, b).

    blocks is a list of (kind, size) with kind in {"free", "nonneg", "psd"},
    in the original layout order; used to check the exporter is lossless.
    """
    f = validate_sdpa(text)
    layout_line = None
    for line in f.comments:
        if "momentot layout" in line:
            layout_line = line.split("momentot layout", 1)[1].strip()
    if layout_line is None:
        raise ValueError("missing layout comment")
    blocks = []
    for item in layout_line.split(";"):
        kind, size = item.split(":")
        blocks.append((kind, int(size)))

    # map layout blocks to file blocks and z columns
    col_of = {}               # (file blk, i, j) -> (z column, factor)
    col = 0
    file_blk = 0
    free_cols = []
    for kind, size in blocks:
        if kind == "free":
            free_cols.extend(range(col, col + size))
            col += size
            continue
        file_blk += 1
        if kind == "nonneg":
            for k in range(size):
                col_of[(file_blk, k + 1, k + 1)] = (col, 1.0)
                col += 1
        else:
            for i in range(size):
                for j in range(i, size):
                    col_of[(file_blk, i + 1, j + 1)] = (col, 1.0 if i == j else 2.0)
                    col += 1
    n = col
    free_blk = file_blk + 1 if free_cols else None

    c = np.zeros(n)
    rows = {}
    mirror = {}
    for (k, blk, i, j, v) in f.entries:
        if free_blk is not None and blk == free_blk:
            nf = len(free_cols)
            if i <= nf:
                zcol, value = free_cols[i - 1], v
            else:
                mirror.setdefault(k, {})[i - nf] = v
                continue
        else:
            zcol, factor = col_of[(blk, i, j)]
            value = v * factor
        if k == 0:
            c[zcol] = -value
        else:
            rows.setdefault(k, {})[zcol] = value
    # verify the mirrored half of every split free variable
    for k, mir in mirror.items():
        target = c if k == 0 else None
        for pos, v in mir.items():
            zcol = free_cols[pos - 1]
            if k == 0:
                assert c[zcol] == v, "free split mirror mismatch in objective"
            else:
                assert rows.get(k, {}).get(zcol, 0.0) == -v, \
                    "free split mirror mismatch"
    A = sp.lil_matrix((f.m, n))
    for k, coeffs in rows.items():
        for zcol, v in coeffs.items():
            A[k - 1, zcol] = v
    return blocks, c, A.tocsr(), f.avec
