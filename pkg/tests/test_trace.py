import pytest

from routesim.env import EXPRESSWAY, LOCAL1, LOCAL2, default_scenario
from routesim.trace import TraceError, build_trace, load_trace, save_trace, share_table


def grid(periods, chooser):
    """Choice grid from a function (period, traveler) -> route."""
    scenario = default_scenario()
    return {t: {a: chooser(t, a) for a in scenario.traveler_ids}
            for t in range(1, periods + 1)}


def default_chooser(t, a):
    group_local = LOCAL1 if a <= 9 else LOCAL2
    return group_local if (a + t) % 2 == 0 else EXPRESSWAY


class TestBuildTrace:
    def test_reconstructs_states(self):
        trace = build_trace(default_scenario(), grid(10, default_chooser))
        assert trace.periods == 10
        for t in range(1, 11):
            assert sum(trace.state(t).volume_by_route.values()) == 15

    def test_memory_entries_are_complete_and_ordered(self):
        trace = build_trace(default_scenario(), grid(10, default_chooser))
        entries = trace.memory_entries(4)
        assert [e.period for e in entries] == list(range(1, 11))
        for e in entries:
            assert e.own_time == trace.state(e.period).time_by_route[e.action]

    def test_incomplete_grid_rejected(self):
        choices = grid(5, default_chooser)
        del choices[3][7]
        with pytest.raises(TraceError, match="period 3"):
            build_trace(default_scenario(), choices)

    def test_choice_set_violation_rejected(self):
        choices = grid(5, default_chooser)
        choices[2][1] = LOCAL2  # group-1 traveler on group-2's arterial
        with pytest.raises(TraceError, match="period 2"):
            build_trace(default_scenario(), choices)

    def test_noncontiguous_periods_rejected(self):
        choices = grid(5, default_chooser)
        choices[7] = choices.pop(5)
        with pytest.raises(TraceError, match="contiguous"):
            build_trace(default_scenario(), choices)


class TestCsvRoundTrip:
    def test_save_load_round_trip(self, tmp_path):
        trace = build_trace(default_scenario(), grid(12, default_chooser))
        path = tmp_path / "trace.csv"
        save_trace(trace, path)
        loaded = load_trace(path, default_scenario())
        assert loaded.choices == trace.choices
        assert loaded.periods == 12

    def test_header_validated(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("period,agent,route\n1,1,expressway\n")
        with pytest.raises(TraceError, match="header"):
            load_trace(path, default_scenario())

    def test_bpr_inconsistent_times_rejected_with_diagnostics(self, tmp_path):
        trace = build_trace(default_scenario(), grid(8, default_chooser))
        path = tmp_path / "trace.csv"
        save_trace(trace, path)
        lines = path.read_text().splitlines()
        cells = lines[1].split(",")
        cells[-1] = f"{float(cells[-1]) + 1.0:.4f}"  # 1 minute off
        lines[1] = ",".join(cells)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(TraceError) as excinfo:
            load_trace(path, default_scenario())
        message = str(excinfo.value)
        assert "period 1" in message
        assert "BPR" in message

    def test_wrong_group_label_rejected(self, tmp_path):
        trace = build_trace(default_scenario(), grid(4, default_chooser))
        path = tmp_path / "trace.csv"
        save_trace(trace, path)
        lines = path.read_text().splitlines()
        cells = lines[1].split(",")
        cells[2] = "2"  # traveler 1 is in group 1
        lines[1] = ",".join(cells)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(TraceError, match="group"):
            load_trace(path, default_scenario())


class TestShareTable:
    def test_exact_shares(self):
        # traveler 4 rides local1 for exactly 7 of 8 periods in the block
        def chooser(t, a):
            if a == 4:
                return LOCAL1 if t <= 7 else EXPRESSWAY
            return default_chooser(t, a)

        trace = build_trace(default_scenario(), grid(8, chooser))
        table = share_table(trace, 1, 8)
        assert table[4]["local"] == pytest.approx(0.875, abs=1e-12)
        assert table[4]["expressway"] == pytest.approx(0.125, abs=1e-12)

    def test_block_bounds_checked(self):
        trace = build_trace(default_scenario(), grid(6, default_chooser))
        with pytest.raises(TraceError):
            share_table(trace, 1, 7)
