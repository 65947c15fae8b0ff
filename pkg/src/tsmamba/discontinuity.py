"""Discontinuity degree of 2x2 regions and elimination values of procedures.

A region's degree under a scan order counts the gaps between the sorted scan
indices of its four cells (0 = fully consecutive, 3 = maximal).  A
scan-shift-scan procedure eliminates max(0, d_first - d_second) degrees per
region; the intra/inter split follows the window partition.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from enum import Enum

from .scanorder import (
    Procedure,
    ScanOrder,
    ScanVariant,
    ShiftSpec,
    WindowPartition,
    compose_scan_shift_scan,
    window_tiled_order,
)

__all__ = [
    "RegionKind",
    "Region",
    "RegionRecord",
    "DiscontinuityReport",
    "region_degree",
    "enumerate_regions",
    "elimination",
    "search_procedures",
    "report_to_json",
    "report_to_svg",
    "search_to_csv",
    "pin_report",
]


class RegionKind(Enum):
    IntraWindow = "intra"
    InterWindow = "inter"


@dataclass(frozen=True)
class Region:
    """Axis-aligned 2x2 region anchored at its top-left cell."""

    anchor: tuple
    kind: RegionKind

    @property
    def cells(self):
        r, c = self.anchor
        return ((r, c), (r, c + 1), (r + 1, c), (r + 1, c + 1))


@dataclass(frozen=True)
class RegionRecord:
    anchor: tuple
    kind: RegionKind
    d_first: int
    d_second: int
    eliminated: int


@dataclass(frozen=True)
class DiscontinuityReport:
    procedure: str
    records: tuple        # of RegionRecord
    delta_intra: int
    delta_inter: int

    @property
    def delta(self):
        return self.delta_intra + self.delta_inter

    def verify(self):
        intra = sum(r.eliminated for r in self.records if r.kind is RegionKind.IntraWindow)
        inter = sum(r.eliminated for r in self.records if r.kind is RegionKind.InterWindow)
        if (intra, inter) != (self.delta_intra, self.delta_inter):
            raise AssertionError("per-region records do not sum to stored deltas")
        return self


def region_degree(order, region):
    """Number of gaps among the sorted scan indices of the region's cells."""
    imap = order.index_map()
    try:
        idx = sorted(imap[cell] for cell in region.cells)
    except KeyError as exc:
        raise ValueError(f"region cell {exc.args[0]} outside grid") from exc
    return sum(1 for a, b in zip(idx, idx[1:]) if b - a > 1)


def enumerate_regions(grid_size, partition):
    """All (grid_size - 1)^2 overlapping 2x2 regions, kind-tagged."""
    if grid_size < 2:
        raise ValueError("grid_size must be >= 2")
    regions = []
    for r in range(grid_size - 1):
        for c in range(grid_size - 1):
            anchor = (r, c)
            wids = {partition.window_id(cell)
                    for cell in ((r, c), (r, c + 1), (r + 1, c), (r + 1, c + 1))}
            kind = RegionKind.IntraWindow if len(wids) == 1 else RegionKind.InterWindow
            regions.append(Region(anchor=anchor, kind=kind))
    return regions


def elimination(procedure, partition):
    """Per-region eliminated degrees and the intra/inter totals."""
    first = procedure.first
    second = procedure.shifted_second_order
    if first.size != partition.grid_size or second.size != partition.grid_size:
        raise ValueError("procedure grid size does not match partition")
    records = []
    delta_intra = delta_inter = 0
    for region in enumerate_regions(partition.grid_size, partition):
        d1 = region_degree(first, region)
        d2 = region_degree(second, region)
        elim = max(0, d1 - d2)
        records.append(RegionRecord(anchor=region.anchor, kind=region.kind,
                                    d_first=d1, d_second=d2, eliminated=elim))
        if region.kind is RegionKind.IntraWindow:
            delta_intra += elim
        else:
            delta_inter += elim
    return DiscontinuityReport(
        procedure=procedure.label(),
        records=tuple(records),
        delta_intra=delta_intra,
        delta_inter=delta_inter,
    ).verify()


def analyze(first, shift, second, grid_size, window_size):
    """Convenience wrapper: build the tiled procedure and run elimination."""
    part = WindowPartition(grid_size=grid_size, window_size=window_size)
    if not isinstance(shift, ShiftSpec):
        shift = ShiftSpec.parse(shift)
    proc = compose_scan_shift_scan(first, shift, second, part)
    return elimination(proc, part)


DEFAULT_SHIFTS = tuple(
    f"{name}{k}" for name in ("U", "D", "L", "R", "UL", "UR", "DL", "DR")
    for k in (1, 2, 3)
)


def search_procedures(grid_size, window_size, shifts=None, variants=None):
    """Evaluate all (first, shift, second) triples; ranked report table.

    Sorted by delta descending, ties by delta_inter descending then
    lexicographic procedure label.
    """
    if shifts is None:
        shifts = DEFAULT_SHIFTS
    if not shifts:
        raise ValueError("shift list must be non-empty")
    shifts = [s if isinstance(s, ShiftSpec) else ShiftSpec.parse(s) for s in shifts]
    variants = list(variants or ScanVariant)
    part = WindowPartition(grid_size=grid_size, window_size=window_size)
    reports = []
    for first in variants:
        for shift in shifts:
            for second in variants:
                proc = compose_scan_shift_scan(first, shift, second, part)
                reports.append((first, shift, second, elimination(proc, part)))
    reports.sort(key=lambda t: (-t[3].delta, -t[3].delta_inter, t[3].procedure))
    return reports


# --- serialization ----------------------------------------------------------

def report_to_json(report):
    return json.dumps({
        "procedure": report.procedure,
        "delta": report.delta,
        "delta_intra": report.delta_intra,
        "delta_inter": report.delta_inter,
        "regions": [
            {"anchor": list(r.anchor), "kind": r.kind.value,
             "d_first": r.d_first, "d_second": r.d_second,
             "eliminated": r.eliminated}
            for r in report.records
        ],
    }, separators=(",", ":"))


_ELIM_COLORS = {1: "#2ca02c", 2: "#d62728", 3: "#7f7f7f"}   # green/red/gray


def report_to_svg(report, grid_size, cell_px=24):
    """Grid with eliminated regions marked by degree-colored circles."""
    s = grid_size * cell_px
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{s}" height="{s}" '
        f'viewBox="0 0 {s} {s}">',
        f'<rect width="{s}" height="{s}" fill="white"/>',
    ]
    for i in range(grid_size + 1):
        p = i * cell_px
        lines.append(f'<line x1="0" y1="{p}" x2="{s}" y2="{p}" stroke="#ccc"/>')
        lines.append(f'<line x1="{p}" y1="0" x2="{p}" y2="{s}" stroke="#ccc"/>')
    for rec in report.records:
        if rec.eliminated == 0:
            continue
        color = _ELIM_COLORS.get(rec.eliminated, "#000")
        cx = (rec.anchor[1] + 1) * cell_px
        cy = (rec.anchor[0] + 1) * cell_px
        dash = ' stroke-dasharray="3,2"' if rec.kind is RegionKind.InterWindow else ""
        lines.append(
            f'<circle cx="{cx}" cy="{cy}" r="{cell_px // 2}" fill="none" '
            f'stroke="{color}" stroke-width="2"{dash}/>')
    lines.append("</svg>")
    return "\n".join(lines)


def search_to_csv(results):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["first", "shift", "second", "delta_intra", "delta_inter", "delta"])
    for first, shift, second, rep in results:
        writer.writerow([first.value, shift.name(), second.value,
                         rep.delta_intra, rep.delta_inter, rep.delta])
    return buf.getvalue()


def pin_report(grid_size=8, window_size=4):
    """Elimination values of the named reference procedures under the pinned
    orientations; used by the acceptance tests and the decision log."""
    named = [
        (ScanVariant.Scan1, "U1", ScanVariant.Scan3),
        (ScanVariant.Scan2, "L1", ScanVariant.Scan4),
        (ScanVariant.Scan3, "D1", ScanVariant.Scan1),
        (ScanVariant.Scan4, "R1", ScanVariant.Scan2),
        (ScanVariant.Scan1, "UL3", ScanVariant.Scan3),
        (ScanVariant.Scan1, "UR3", ScanVariant.Scan3),
    ]
    out = {}
    for first, shift, second in named:
        rep = analyze(first, shift, second, grid_size, window_size)
        out[f"{first.value}->{shift}->{second.value}"] = (
            rep.delta, rep.delta_intra, rep.delta_inter)
    return out
