import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from ltvm import persistence as io
from ltvm.core import CompositeScan, Config
from ltvm.extract import LineFeature
from ltvm.mapupdate import VectorMap
from ltvm.sdf import SdfGrid

floats = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def _random_line(rng):
    p1 = rng.normal(0, 5, 2)
    a = rng.normal(0, 1e-3, (2, 2))
    b = rng.normal(0, 1e-3, (2, 2))
    return LineFeature(p1, p1 + rng.normal(0, 3, 2) + 0.1, a @ a.T, b @ b.T, rng.normal(0, 5, 2),
                       float(rng.integers(10, 100_000)) + rng.random(), np.diag(rng.random(2)))


def _lines_equal(a, b):
    return all(np.asarray(getattr(a, k)).tobytes() == np.asarray(getattr(b, k)).tobytes()
               for k in ("p1", "p2", "q1", "q2", "centroid", "mass", "scatter"))


@settings(max_examples=30)
@given(st.integers(0, 2 ** 32 - 1), st.integers(0, 12), st.integers(0, 10 ** 6))
def test_map_round_trip_bit_exact(seed, n, deployments):
    rng = np.random.default_rng(seed)
    vmap = VectorMap(tuple(_random_line(rng) for _ in range(n)), deployments, Config(rng_seed=seed))
    back = io.parse_map(io.format_map(vmap))
    assert back.deployment_count == deployments and back.config_snapshot == vmap.config_snapshot
    assert len(back) == n and all(_lines_equal(a, b) for a, b in zip(vmap.lines, back.lines))


def test_empty_map_round_trip(tmp_path):
    io.write_map(tmp_path / "m.json", VectorMap())
    back = io.read_map(tmp_path / "m.json")
    assert len(back) == 0 and back.deployment_count == 0


def test_thirty_line_map_is_small(tmp_path):
    rng = np.random.default_rng(1)
    io.write_map(tmp_path / "m.json", VectorMap(tuple(_random_line(rng) for _ in range(30)), 12))
    assert (tmp_path / "m.json").stat().st_size < 16 * 1024


def test_truncated_map_names_byte_offset():
    text = io.format_map(VectorMap((_random_line(np.random.default_rng(2)),)))
    with pytest.raises(io.FormatError) as err:
        io.parse_map(text[:100])
    assert err.value.location.startswith("byte ")
    assert int(err.value.location.split()[1]) <= 100


def test_map_version_and_field_checks():
    doc = json.loads(io.format_map(VectorMap((_random_line(np.random.default_rng(3)),))))
    with pytest.raises(io.VersionError):
        io.parse_map(json.dumps({**doc, "format_version": 2}))
    with pytest.raises(io.FormatError, match="unknown fields"):
        io.parse_map(json.dumps({**doc, "future": 1}))
    bad = json.loads(json.dumps(doc))
    bad["lines"][0]["q1"] = [1, 2]
    with pytest.raises(io.FormatError, match=r"lines\[0\]\.q1"):
        io.parse_map(json.dumps(bad))
    with pytest.raises(io.FormatError):
        io.parse_map(json.dumps({**doc, "format": "something-else"}))


scan_rows = hnp.arrays(np.float64, st.tuples(st.integers(0, 50), st.just(5)),
                       elements=st.floats(-1e4, 1e4, allow_nan=False, allow_infinity=False))


@given(scan_rows)
def test_scan_round_trip_bit_exact(rows):
    rows[:, 0] = np.abs(rows[:, 0]) + 1e-3
    rows[:, 1] = np.clip(rows[:, 1], -3.0, 3.0)
    rows[:, 4] = np.clip(rows[:, 4], -3.0, 3.0)
    scan = CompositeScan(*rows.T) if len(rows) else CompositeScan.empty()
    back = io.parse_scan(io.format_scan(scan))
    for col in ("rho", "alpha", "x", "y", "theta"):
        assert getattr(back, col).tobytes() == getattr(scan, col).tobytes()


def test_large_scan_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    n = 100_000
    scan = CompositeScan(rng.uniform(0.1, 20, n), rng.uniform(-3, 3, n), rng.normal(0, 10, n),
                         rng.normal(0, 10, n), rng.uniform(-3, 3, n))
    io.write_scan(tmp_path / "s.txt", scan)
    back = io.read_scan(tmp_path / "s.txt")
    assert back.rho.tobytes() == scan.rho.tobytes() and back.theta.tobytes() == scan.theta.tobytes()


@pytest.mark.parametrize("text, line", [
    ("# header\n1 0 0 0 0\n0 0 0 0 0\n", 3),
    ("1 0 0 0 0\n-2 0 0 0 0\n", 2),
    ("1 0 0 0\n", 1),
    ("1 0 0 0 zero\n", 1),
    ("1 0 nan 0 0\n", 1),
])
def test_bad_scan_records_name_line(text, line):
    with pytest.raises(io.FormatError) as err:
        io.parse_scan(text)
    assert err.value.location == f"line {line}"


def test_comment_only_scan_is_empty_and_missing_file_differs(tmp_path):
    (tmp_path / "c.txt").write_text("# nothing here\n\n   # still nothing\n")
    assert len(io.read_scan(tmp_path / "c.txt")) == 0
    with pytest.raises(FileNotFoundError):
        io.read_scan(tmp_path / "absent.txt")


def _random_grid(rng, normalized=True):
    h, w = rng.integers(1, 30, 2)
    return SdfGrid(tuple(rng.normal(0, 5, 2)), 0.05, rng.uniform(-0.2, 0.2, (h, w)), rng.random((h, w)),
                   rng.integers(0, 9, (h, w)).astype(float), normalized, int(rng.integers(0, 50)))


@settings(max_examples=30)
@given(st.integers(0, 2 ** 32 - 1), st.booleans())
def test_sdf_round_trip_bit_exact(seed, normalized):
    g = _random_grid(np.random.default_rng(seed), normalized)
    back = io.sdf_from_bytes(io.sdf_to_bytes(g))
    assert back.origin == g.origin and back.resolution == g.resolution
    assert back.normalized == g.normalized and back.deployment_count == g.deployment_count
    for plane in ("values", "weights", "counts"):
        assert getattr(back, plane).tobytes() == getattr(g, plane).tobytes()


def test_sdf_float32_storage_is_smaller_and_close():
    g = _random_grid(np.random.default_rng(5))
    small = io.sdf_to_bytes(g, np.float32)
    assert len(small) < len(io.sdf_to_bytes(g))
    np.testing.assert_allclose(io.sdf_from_bytes(small).values, g.values, rtol=1e-6, atol=1e-7)


def test_sdf_errors_carry_offsets():
    data = io.sdf_to_bytes(_random_grid(np.random.default_rng(6)))
    with pytest.raises(io.FormatError) as err:
        io.sdf_from_bytes(data[:-3])
    assert err.value.location.startswith("byte ")
    with pytest.raises(io.FormatError, match="truncated"):
        io.sdf_from_bytes(data[:10])
    with pytest.raises(io.FormatError):
        io.sdf_from_bytes(b"XXXX" + data[4:])
    bumped = bytearray(data)
    bumped[4] = 9
    with pytest.raises(io.VersionError):
        io.sdf_from_bytes(bytes(bumped))


def test_sdf_png_palette(tmp_path):
    from PIL import Image

    w = np.array([[0.0, 1.0], [0.5, 1.0]])
    g = SdfGrid((0, 0), 0.05, np.zeros((2, 2)), w, np.ones((2, 2)), True, 1)
    io.write_sdf_png(tmp_path / "w.png", g)
    img = np.asarray(Image.open(tmp_path / "w.png"))
    # north up: grid row 1 is the top image row
    assert img.tolist() == [[128, 255], [0, 255]]


def test_manifest_round_trip(tmp_path):
    scans = [tmp_path / "a" / "s0.txt", tmp_path / "a" / "s1.txt", tmp_path / "elsewhere.txt"]
    (tmp_path / "a").mkdir()
    io.write_manifest(tmp_path / "a" / "manifest.txt", scans)
    back = io.read_manifest(tmp_path / "a" / "manifest.txt")
    assert [p.resolve() for p in back] == [p.resolve() for p in scans]
    (tmp_path / "empty.txt").write_text("# none\n")
    with pytest.raises(io.FormatError):
        io.read_manifest(tmp_path / "empty.txt")


def test_labels_round_trip(tmp_path):
    labels = np.array([0, 1, 2, 2, 0], dtype=np.int8)
    io.write_labels(tmp_path / "l.txt", labels)
    assert io.read_labels(tmp_path / "l.txt").tolist() == labels.tolist()
    (tmp_path / "bad.txt").write_text("LTF\nSOFA\n")
    with pytest.raises(io.FormatError, match="line 2"):
        io.read_labels(tmp_path / "bad.txt")
