import numpy as np
import pytest

from conftest import branch_row, bus_row, cost_row, gen_row, make_case
from opflearn.errors import InvalidModel, MalformedRow, MissingBlock, NoSlackBus
from opflearn.netio import (admittance, build_model, bundled_case, format_matpower, parse_matpower,
                            read_case)

TWO_BUS = """function mpc = twobus
mpc.version = '2';
mpc.baseMVA = 100;
% bus data
mpc.bus = [
\t1\t3\t0\t0\t0\t0\t1\t1\t0\t230\t1\t1.1\t0.9;
\t2\t1\t50\t10\t0\t0\t1\t1\t0\t230\t1\t1.1\t0.9;  % a load
];
mpc.gen = [
\t1\t0\t0\t100\t-100\t1\t100\t1\t200\t0;
];
mpc.branch = [
\t1\t2\t0.01\t0.1\t0\t100\t100\t100\t0\t0\t1\t-360\t360;
];
mpc.gencost = [
\t2\t0\t0\t3\t0.01\t10\t5;
];
"""


def test_parse_minimal_fixture():
    raw = parse_matpower(TWO_BUS)
    assert (len(raw.bus), len(raw.gen), len(raw.branch), len(raw.gencost)) == (2, 1, 1, 1)
    assert raw.base_mva == 100.0
    assert raw.bus[1][2] == 50.0


def test_parse_case5_counts():
    raw = read_case(bundled_case("case5"))
    assert (len(raw.bus), len(raw.gen), len(raw.branch)) == (5, 5, 6)


def test_malformed_row_reports_line():
    text = TWO_BUS.replace("\t2\t1\t50", "\t2\tx\t50")
    with pytest.raises(MalformedRow) as e:
        parse_matpower(text)
    assert e.value.line == 7


def test_missing_block():
    text = TWO_BUS.split("mpc.gencost")[0]
    with pytest.raises(MissingBlock):
        parse_matpower(text)


def test_round_trip_case14():
    raw = read_case(bundled_case("case14"))
    again = parse_matpower(format_matpower(raw), name=raw.name)
    assert again == raw


def test_per_unit_load():
    raw = make_case([bus_row(1, 3), bus_row(2, 1, pd=300.0, qd=30.0)], [gen_row(1, 500.0)],
                    [branch_row(1, 2, 0.0, 0.1)])
    m = build_model(raw)
    assert m.pd0.tolist() == [3.0] and m.qd0.tolist() == [0.3]


def test_two_slack_buses_rejected():
    raw = make_case([bus_row(1, 3), bus_row(2, 3)], [gen_row(1, 100.0)], [branch_row(1, 2, 0.0, 0.1)])
    with pytest.raises(NoSlackBus):
        build_model(raw)


def test_non_quadratic_cost_rejected():
    raw = make_case([bus_row(1, 3), bus_row(2, 1)], [gen_row(1, 100.0)], [branch_row(1, 2, 0.0, 0.1)],
                    gencost=[(2, 0, 0, 2, 1.0, 0.0)])
    with pytest.raises(InvalidModel):
        build_model(raw)


def test_out_of_service_generator_dropped_and_islanded_warning():
    raw = make_case([bus_row(1, 3), bus_row(2, 1), bus_row(3, 1)],
                    [gen_row(1, 100.0), gen_row(2, 50.0, status=0)],
                    [branch_row(1, 2, 0.0, 0.1)], gencost=[cost_row(), cost_row()])
    m = build_model(raw)
    assert m.n_gen == 1 and m.gen_ids.tolist() == [1]
    assert any("IslandedBus" in w for w in m.warnings)


def test_case5_dimensions(case5):
    assert case5.n_load == 3 and case5.n_gen == 5 and case5.n_bus == 5


def test_admittance_single_line():
    raw = make_case([bus_row(1, 3), bus_row(2, 1)], [gen_row(1, 100.0)], [branch_row(1, 2, 0.0, 0.1)])
    Y = admittance(build_model(raw))
    np.testing.assert_allclose(Y, [[-10j, 10j], [10j, -10j]], atol=1e-12)


def test_admittance_bus_shunt_only():
    raw = make_case([bus_row(1, 3, bs=5.0), bus_row(2, 1)], [gen_row(1, 100.0)], [])
    Y = admittance(build_model(raw))
    expect = np.zeros((2, 2), complex)
    expect[0, 0] = 0.05j
    np.testing.assert_allclose(Y, expect, atol=1e-15)


def test_admittance_triangle_hand_assembly():
    raw = make_case([bus_row(1, 3), bus_row(2, 1), bus_row(3, 1)], [gen_row(1, 100.0)],
                    [branch_row(1, 2, 0.01, 0.1), branch_row(2, 3, 0.01, 0.1), branch_row(1, 3, 0.01, 0.1)])
    Y = admittance(build_model(raw))
    y = 1 / (0.01 + 0.1j)
    expect = np.array([[2 * y, -y, -y], [-y, 2 * y, -y], [-y, -y, 2 * y]])
    np.testing.assert_allclose(Y, expect, atol=1e-12)


def test_admittance_symmetry_and_zero_row_sums():
    raw = read_case(bundled_case("case14"))
    m = build_model(raw)
    Y = admittance(m)
    unit_tap = np.all(m.tap == 1) and np.all(m.shift == 0)
    if unit_tap:
        np.testing.assert_allclose(Y, Y.T, atol=1e-12)
    # strip charging and shunts: row sums vanish
    branches = [r[:4] + (0.0,) + r[5:8] + (0.0, 0.0) + r[10:] for r in raw.branch]
    bus = [r[:4] + (0.0, 0.0) + r[6:] for r in raw.bus]
    m2 = build_model(make_case(bus, raw.gen, branches, raw.gencost))
    Y2 = admittance(m2)
    np.testing.assert_allclose(Y2, Y2.T, atol=1e-12)
    np.testing.assert_allclose(Y2.sum(axis=1), 0, atol=1e-12)


def test_fingerprint_content_hash(case5):
    assert case5.fingerprint == build_model(read_case(bundled_case("case5"))).fingerprint
    assert case5.fingerprint != build_model(read_case(bundled_case("case14"))).fingerprint
