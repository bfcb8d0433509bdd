"""Protocol container: interpolation semantics and the file round trip."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_params, random_topology
from oscsgm.errors import (
    DimensionMismatchError,
    ScheduleChecksumError,
    ScheduleFormatError,
    ScheduleSchemaError,
    ScheduleVersionError,
    ValidationError,
)
from oscsgm.model import EnergyParams, Topology, flatten_params
from oscsgm.schedule import Schedule, TimeGrid, load_schedule, save_schedule


def two_knot_ramp():
    topo = Topology.uncoupled(1)
    p0 = EnergyParams(alpha=[0.0], beta=[0.0], gamma=[1e-3], f_ext=[0.0])
    p1 = EnergyParams(alpha=[1.0], beta=[0.0], gamma=[1e-3], f_ext=[0.0])
    return Schedule(TimeGrid(4.0, 2), topo, [p0, p1])


def random_schedule(rng, n_points=4):
    topo = random_topology(rng)
    grid = TimeGrid(float(rng.uniform(1, 8)), n_points)
    snaps = [random_params(rng, topo) for _ in range(n_points)]
    return Schedule(grid, topo, snaps, kbt=float(rng.uniform(1e-3, 1e-1)))


class TestInterpolation:
    def test_knot_times_return_exact_snapshots(self):
        s = two_knot_ramp()
        assert s.params_at(0.0) is s.snapshots[0]
        assert s.params_at(4.0) is s.snapshots[1]

    def test_midpoint_is_average(self):
        s = two_knot_ramp()
        assert s.params_at(2.0).alpha[0] == 0.5

    def test_linear_in_between(self):
        rng = np.random.default_rng(5)
        s = random_schedule(rng)
        times = s.grid.times()
        flat = np.stack([flatten_params(p) for p in s.snapshots])
        for t in rng.uniform(0, s.grid.tau, 25):
            got = flatten_params(s.params_at(float(t)))
            want = np.array([np.interp(t, times, flat[:, j]) for j in range(flat.shape[1])])
            assert np.allclose(got, want, rtol=1e-14, atol=1e-15)

    def test_reverse_lookup_mirrors_forward(self):
        rng = np.random.default_rng(6)
        s = random_schedule(rng)
        for t in rng.uniform(0, s.grid.tau, 20):
            a = flatten_params(s.reverse_params_at(float(t)))
            b = flatten_params(s.params_at(s.grid.tau - float(t)))
            assert np.allclose(a, b, rtol=0, atol=1e-15)

    def test_time_outside_range_rejected(self):
        s = two_knot_ramp()
        with pytest.raises(ValidationError):
            s.params_at(-0.5)
        with pytest.raises(ValidationError):
            s.params_at(4.0 + 1e-6)

    def test_interpolated_gamma_stays_positive(self):
        s = two_knot_ramp()
        for t in np.linspace(0, 4, 17):
            assert np.all(s.params_at(float(t)).gamma > 0)


class TestTimeGrid:
    def test_uniform_times(self):
        g = TimeGrid(4.0, 5)
        assert np.allclose(g.times(), [0, 1, 2, 3, 4])
        assert g.times()[0] == 0.0 and g.times()[-1] == 4.0

    def test_validation(self):
        with pytest.raises(ValidationError):
            TimeGrid(0.0, 5)
        with pytest.raises(ValidationError):
            TimeGrid(4.0, 1)
        with pytest.raises(ValidationError):
            TimeGrid(4.0, 3, [0.0, 2.0, 3.0])  # endpoint not tau
        with pytest.raises(ValidationError):
            TimeGrid(4.0, 3, [0.0, 0.0, 4.0])  # not strictly increasing

    def test_geometric_spacing(self):
        g = TimeGrid.geometric(4.0, 6, growth=1.7)
        t = g.times()
        assert t[0] == 0.0 and t[-1] == 4.0
        gaps = np.diff(t)
        assert np.all(gaps[1:] > gaps[:-1])

    def test_custom_times_are_frozen(self):
        g = TimeGrid(4.0, 3, [0.0, 1.0, 4.0])
        with pytest.raises(ValueError):
            g.times()[1] = 2.0


class TestScheduleConstruction:
    def test_snapshot_count_must_match_grid(self):
        topo = Topology.uncoupled(1)
        p = EnergyParams(alpha=[0.0], beta=[0.0], gamma=[1.0], f_ext=[0.0])
        with pytest.raises(DimensionMismatchError):
            Schedule(TimeGrid(4.0, 3), topo, [p, p])

    def test_snapshot_shape_must_match_topology(self):
        topo = Topology.complete(2)
        p = EnergyParams(alpha=[0.0], beta=[0.0], gamma=[1.0], f_ext=[0.0])
        with pytest.raises(DimensionMismatchError):
            Schedule(TimeGrid(4.0, 2), topo, [p, p])

    def test_kbt_must_be_positive(self):
        s = two_knot_ramp()
        with pytest.raises(ValidationError):
            Schedule(s.grid, s.topology, s.snapshots, kbt=0.0)

    def test_constant_protocol(self):
        topo = Topology.uncoupled(2)
        p = EnergyParams.initial(topo)
        s = Schedule.constant(TimeGrid(4.0, 15), topo, p)
        assert all(q is p for q in s.snapshots)
        assert s.params_at(1.234) == p


class TestFileRoundTrip:
    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2 ** 31))
    def test_round_trip_is_bit_exact(self, seed, tmp_path_factory):
        rng = np.random.default_rng(seed)
        s = random_schedule(rng)
        path = tmp_path_factory.mktemp("sched") / "s.sched"
        save_schedule(s, path)
        t = load_schedule(path)
        assert t == s
        assert np.array_equal(t.flat, s.flat)

    def test_round_trip_preserves_extreme_floats(self, tmp_path):
        topo = Topology.uncoupled(2)
        p = EnergyParams(alpha=[1e-300, -1.7976931348623157e308 / 4],
                         beta=[0.1 + 0.2, -0.0],
                         gamma=[5e-324 * 1e10, 1.0], f_ext=[np.pi, 1 / 3])
        s = Schedule(TimeGrid(4.0, 2), topo, [p, p])
        save_schedule(s, tmp_path / "s.sched")
        t = load_schedule(tmp_path / "s.sched")
        assert np.array_equal(t.flat, s.flat)

    def test_grid_topology_metadata_survives(self, tmp_path):
        topo = Topology.from_grid(3, 3, coupling_range=1.5)
        s = Schedule.constant(TimeGrid(4.0, 3), topo, EnergyParams.initial(topo))
        save_schedule(s, tmp_path / "g.sched")
        t = load_schedule(tmp_path / "g.sched")
        assert t.topology.grid == (3, 3)
        assert t.topology.coupling_range == 1.5
        assert t.topology.edges == topo.edges

    def test_kbt_survives(self, tmp_path):
        s = two_knot_ramp()
        s2 = Schedule(s.grid, s.topology, s.snapshots, kbt=0.042)
        save_schedule(s2, tmp_path / "k.sched")
        assert load_schedule(tmp_path / "k.sched").kbt == 0.042

    def test_nonuniform_times_survive(self, tmp_path):
        topo = Topology.uncoupled(1)
        p = EnergyParams(alpha=[0.0], beta=[0.0], gamma=[1.0], f_ext=[0.0])
        g = TimeGrid.geometric(4.0, 5)
        s = Schedule(g, topo, [p] * 5)
        save_schedule(s, tmp_path / "t.sched")
        assert np.array_equal(load_schedule(tmp_path / "t.sched").grid.times(), g.times())


class TestFileCorruption:
    @pytest.fixture
    def saved(self, tmp_path):
        rng = np.random.default_rng(77)
        s = random_schedule(rng)
        path = tmp_path / "base.sched"
        save_schedule(s, path)
        return path, s

    def test_truncation_detected(self, saved):
        path, _ = saved
        text = path.read_text()
        path.write_text(text[: len(text) // 2])
        with pytest.raises(ScheduleChecksumError):
            load_schedule(path)

    def test_edited_value_detected(self, saved):
        path, s = saved
        text = path.read_text()
        token = repr(float(s.snapshots[0].alpha[0]))
        path.write_text(text.replace(token, "999.0", 1))
        with pytest.raises(ScheduleChecksumError):
            load_schedule(path)

    def test_unknown_version_distinct_from_corruption(self, saved):
        path, _ = saved
        lines = path.read_text().splitlines(keepends=True)
        lines[0] = lines[0].replace("v1", "v2")
        body = "".join(lines[:-1])
        import hashlib
        digest = hashlib.sha256(body.encode()).hexdigest()
        path.write_text(body + f"checksum sha256 {digest}\n")
        with pytest.raises(ScheduleVersionError):
            load_schedule(path)

    def test_missing_checksum_line(self, saved):
        path, _ = saved
        lines = path.read_text().splitlines(keepends=True)
        path.write_text("".join(lines[:-1]))
        with pytest.raises(ScheduleChecksumError):
            load_schedule(path)

    def test_wrong_file_kind_rejected(self, tmp_path):
        path = tmp_path / "junk.sched"
        path.write_text("x0,x1\n0.1,0.2\n")
        with pytest.raises(ScheduleFormatError):
            load_schedule(path)

    def test_schema_error_on_dropped_line(self, saved):
        # remove one parameter line and re-stamp the checksum: structure error
        path, _ = saved
        lines = path.read_text().splitlines(keepends=True)
        drop = next(i for i, ln in enumerate(lines) if ln.startswith("beta "))
        del lines[drop]
        body = "".join(lines[:-1])
        import hashlib
        digest = hashlib.sha256(body.encode()).hexdigest()
        path.write_text(body + f"checksum sha256 {digest}\n")
        with pytest.raises(ScheduleSchemaError):
            load_schedule(path)

    def test_version_and_checksum_errors_are_format_errors(self):
        assert issubclass(ScheduleVersionError, ScheduleFormatError)
        assert issubclass(ScheduleChecksumError, ScheduleFormatError)
        assert issubclass(ScheduleSchemaError, ScheduleFormatError)
