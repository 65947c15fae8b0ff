import random

import pytest

from tsmamba.discontinuity import (
    Region,
    RegionKind,
    analyze,
    elimination,
    enumerate_regions,
    region_degree,
    report_to_json,
    report_to_svg,
    search_procedures,
    search_to_csv,
)
from tsmamba.scanorder import (
    ScanOrder,
    ScanVariant,
    ShiftSpec,
    WindowPartition,
    compose_scan_shift_scan,
    generate_scan,
)


def _order_from_indices(indices, size=8):
    cells = [(i // size, i % size) for i in indices]
    return ScanOrder(size=size, order=tuple(cells))


def _region_at(anchor):
    return Region(anchor=anchor, kind=RegionKind.IntraWindow)


def test_degree_examples_from_contract():
    # build orders whose region indices match the contract examples
    size = 8
    cells = [(0, 0), (0, 1), (1, 0), (1, 1)]
    rest = [(r, c) for r in range(size) for c in range(size) if (r, c) not in cells]

    def order_with(region_indices):
        order = [None] * (size * size)
        for cell, idx in zip(cells, region_indices):
            order[idx] = cell
        it = iter(rest)
        for i in range(size * size):
            if order[i] is None:
                order[i] = next(it)
        return ScanOrder(size=size, order=tuple(order))

    region = _region_at((0, 0))
    assert region_degree(order_with([5, 6, 7, 8]), region) == 0
    assert region_degree(order_with([0, 1, 4, 5]), region) == 1
    assert region_degree(order_with([0, 9, 20, 63]), region) == 3


def test_degree_out_of_bounds():
    scan = generate_scan(ScanVariant.Scan1, 8)
    with pytest.raises(ValueError):
        region_degree(scan, _region_at((7, 7)))


def test_enumerate_regions_counts():
    assert len(enumerate_regions(4, WindowPartition(4, 4))) == 9
    regions = enumerate_regions(8, WindowPartition(8, 4))
    assert len(regions) == 49
    intra = [r for r in regions if r.kind is RegionKind.IntraWindow]
    inter = [r for r in regions if r.kind is RegionKind.InterWindow]
    assert (len(intra), len(inter)) == (36, 13)
    assert len(enumerate_regions(2, WindowPartition(2, 2))) == 1


def test_degree_range_random_orders():
    size = 8
    all_cells = [(r, c) for r in range(size) for c in range(size)]
    regions = enumerate_regions(size, WindowPartition(size, 4))
    rng = random.Random(0)
    for _ in range(200):
        cells = all_cells[:]
        rng.shuffle(cells)
        order = ScanOrder(size=size, order=tuple(cells))
        for region in regions:
            assert region_degree(order, region) in {0, 1, 2, 3}


def test_aligned_quadrants_degree_zero():
    for variant in ScanVariant:
        for size in (4, 8, 16):
            scan = generate_scan(variant, size)
            for r in range(0, size, 2):
                for c in range(0, size, 2):
                    assert region_degree(scan, _region_at((r, c))) == 0


def test_identity_procedure_zero_delta():
    part = WindowPartition(8, 4)
    proc = compose_scan_shift_scan(ScanVariant.Scan1, ShiftSpec(0, 0, "Z0"),
                                   ScanVariant.Scan1, part)
    rep = elimination(proc, part)
    assert rep.delta == 0


def test_eliminated_bounded_by_d_first():
    rep = analyze(ScanVariant.Scan1, "U1", ScanVariant.Scan3, 8, 4)
    for rec in rep.records:
        assert 0 <= rec.eliminated <= rec.d_first
        assert rec.d_first in {0, 1, 2, 3} and rec.d_second in {0, 1, 2, 3}
    assert rep.delta == rep.delta_intra + rep.delta_inter


def test_report_consistency_and_json():
    rep = analyze(ScanVariant.Scan2, "L1", ScanVariant.Scan4, 8, 4)
    rep.verify()
    blob = report_to_json(rep)
    assert '"delta"' in blob and '"regions"' in blob


def test_svg_marks_only_eliminations():
    rep = analyze(ScanVariant.Scan1, "U1", ScanVariant.Scan3, 8, 4)
    svg = report_to_svg(rep, 8)
    n_marks = svg.count("<circle")
    assert n_marks == sum(1 for r in rep.records if r.eliminated > 0)


def test_search_table_sorted_and_csv():
    results = search_procedures(8, 4)
    deltas = [r[3].delta for r in results]
    assert deltas == sorted(deltas, reverse=True)
    assert len(results) == 4 * 24 * 4
    csv_text = search_to_csv(results)
    lines = csv_text.strip().split("\n")
    assert lines[0] == "first,shift,second,delta_intra,delta_inter,delta"
    assert len(lines) == len(results) + 1


def test_search_zero_shift_rows_zero():
    results = search_procedures(8, 4, shifts=[ShiftSpec(0, 0, "Z0")])
    same = [r for r in results if r[0] is r[2]]
    assert all(r[3].delta == 0 for r in same)


def test_search_deterministic():
    a = search_to_csv(search_procedures(8, 4))
    b = search_to_csv(search_procedures(8, 4))
    assert a == b


def test_empty_shift_list_rejected():
    with pytest.raises(ValueError):
        search_procedures(8, 4, shifts=[])
