"""Experiment drivers, report rows and the serialised artifacts."""

import csv
import json

import pytest

from chargeplan import (
    ExperimentSpec,
    ODDemand,
    ValidationError,
    emit_reports,
    plan_result_to_dict,
    run_experiment,
    write_csv,
)
from chargeplan.harness import (
    ReportRow,
    _saturation_budget,
    _scaled_demands,
    demand_weighted_betweenness,
)
from chargeplan.network import Scenario
from chargeplan.reports import CSV_COLUMNS, write_svg_chart

from conftest import default_params, make_network


def diamond_scenario(budget=6):
    net = make_network(
        [(1, 2, 1.0), (2, 4, 1.0), (1, 3, 1.0), (3, 4, 1.0)],
        node_econ={n: (5.0, 10.0) for n in (1, 2, 3, 4)},
    )
    return Scenario(
        network=net,
        demands=(ODDemand(1, 4, ev_flow=120.0, ncd_flow=480.0),),
        params=default_params(budget=budget),
        candidate_stations=(2, 3),
    )


def spec_for(kind, **kwargs):
    kwargs.setdefault("scenario", diamond_scenario())
    kwargs.setdefault("k_routes", 4)
    return ExperimentSpec(kind=kind, **kwargs)


class TestExperimentSpec:
    def test_unknown_kind_rejected(self):
        with pytest.raises(ValidationError):
            spec_for("frobnicate")

    def test_sweep_needs_grid(self):
        with pytest.raises(ValidationError):
            spec_for("sweep-budget")

    def test_sweep_grid_must_ascend(self):
        with pytest.raises(ValidationError):
            spec_for("sweep-budget", grid=(6, 2))

    def test_jobs_and_subset_bounds(self):
        with pytest.raises(ValidationError):
            spec_for("solve", jobs=0)
        with pytest.raises(ValidationError):
            spec_for("generalise", subset_size=0)


class TestReportRow:
    def _row(self, **overrides):
        fields = dict(
            experiment="solve", param="budget", value=6.0, planner="joint",
            theta=30.0, travel=10.0, queue=12.0, charge=8.0,
            total_chargers=6.0, ev_avg_cost=1.0, x={2: 3.0}, y={2: 20.0},
            gap=1e-7, runtime=0.1, feasible=True, converged=True,
        )
        fields.update(overrides)
        return ReportRow(**fields)

    def test_component_sum_enforced(self):
        self._row()
        with pytest.raises(ValidationError):
            self._row(charge=9.0)

    def test_infeasible_rows_skip_the_check(self):
        nan = float("nan")
        self._row(theta=nan, travel=nan, queue=nan, charge=nan, feasible=False)


class TestHelpers:
    def test_saturation_budget(self):
        assert _saturation_budget([(2, 100.0), (4, 90.0), (6, 90.001)]) == 4.0
        assert _saturation_budget([(2, 100.0), (4, 90.0), (6, 80.0)]) is None
        assert _saturation_budget([(2, 100.0)]) is None
        assert _saturation_budget(
            [(2, 50.0), (4, 50.0), (6, 50.0)]
        ) == 2.0

    def test_scaled_demands(self):
        scaled = _scaled_demands((ODDemand(1, 2, 10.0, 90.0),), 0.25)
        assert scaled[0].ev_flow == pytest.approx(25.0)
        assert scaled[0].ncd_flow == pytest.approx(75.0)
        assert scaled[0].total_flow == pytest.approx(100.0)

    def test_demand_weighted_betweenness(self):
        net = make_network([(1, 2, 1.0), (2, 3, 1.0), (3, 2, 1.0), (2, 1, 1.0)])
        score = demand_weighted_betweenness(net, (ODDemand(1, 3, 10.0, 90.0),))
        assert score[2] == pytest.approx(100.0)
        assert score[1] == pytest.approx(100.0)
        assert score[3] == pytest.approx(100.0)


class TestExperiments:
    def test_solve_runs_all_three_planners(self):
        outcome = run_experiment(spec_for("solve"))
        assert outcome.exit_code == 0
        planners = sorted(row.planner for row in outcome.rows)
        assert planners == ["joint", "place-only", "price-only"]
        assert all(row.feasible for row in outcome.rows)
        joint = next(r for r in outcome.rows if r.planner == "joint")
        for row in outcome.rows:
            assert joint.theta <= row.theta + 1e-6 * row.theta
        assert "gain_vs_price-only" in outcome.summary

    def test_solve_parallel_jobs_match_serial(self):
        serial = run_experiment(spec_for("solve", jobs=1))
        parallel = run_experiment(spec_for("solve", jobs=3))
        for a, b in zip(serial.rows, parallel.rows):
            assert a.planner == b.planner
            assert a.theta == pytest.approx(b.theta, rel=1e-9)

    def test_sweep_budget_joint_is_monotone(self):
        outcome = run_experiment(spec_for("sweep-budget", grid=(2, 4, 6)))
        joint = [r.theta for r in outcome.rows if r.planner == "joint" and r.feasible]
        assert len(joint) == 3
        assert all(b <= a + 1e-6 * a for a, b in zip(joint, joint[1:]))
        assert outcome.summary["experiment"] == "sweep-budget"
        assert "saturation_budget" in outcome.summary

    def test_sensitivity_mu_rows(self):
        outcome = run_experiment(spec_for("sensitivity-mu", grid=(2.0, 4.0, 8.0)))
        assert [r.value for r in outcome.rows] == [2.0, 4.0, 8.0]
        assert all(r.feasible for r in outcome.rows)
        # Faster service shrinks the queueing component.
        queues = [r.queue for r in outcome.rows]
        assert queues[0] >= queues[-1]

    def test_sensitivity_alpha_reports_slope(self):
        outcome = run_experiment(
            spec_for("sensitivity-alpha", grid=(0.1, 0.2, 0.3))
        )
        assert all(r.feasible for r in outcome.rows)
        assert outcome.summary["chargers_per_percent_alpha"] is not None

    def test_resilience_adaptive_never_loses(self):
        outcome = run_experiment(
            spec_for("resilience", scenario=diamond_scenario(budget=8),
                     failure_sets=((2,), (3,)))
        )
        by_key = {(r.planner, r.value): r for r in outcome.rows}
        for index in (0.0, 1.0):
            fixed = by_key[("fixed", index)]
            adaptive = by_key[("adaptive", index)]
            assert adaptive.theta <= fixed.theta + 1e-9 * fixed.theta
        assert outcome.summary["max_saving"] >= 0.0

    def test_resilience_unknown_failure_node_rejected(self):
        with pytest.raises(ValidationError):
            run_experiment(
                spec_for("resilience", failure_sets=((99,),))
            )

    def test_generalise_visits_every_node(self):
        outcome = run_experiment(spec_for("generalise", subset_size=2))
        assert outcome.summary["nodes_evaluated"] == 4
        assert outcome.summary["best_theta"] < float("inf")
        assert outcome.results["best"].report.feasible

    def test_equilibrium_reports_flows(self):
        outcome = run_experiment(spec_for("equilibrium"))
        assert outcome.exit_code == 0
        assert outcome.summary["converged"]
        assert len(outcome.summary["link_flows"]) == 4
        # Station components are zero without any chargers installed.
        row = outcome.rows[0]
        assert row.queue == 0.0
        assert row.charge == 0.0


class TestReports:
    def test_csv_schema_and_determinism(self, tmp_path):
        outcome = run_experiment(spec_for("solve"))
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_csv(p1, outcome.rows)
        write_csv(p2, outcome.rows)
        assert p1.read_bytes() == p2.read_bytes()
        with open(p1, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            assert tuple(header) == CSV_COLUMNS
            assert "runtime" not in header
            assert len(list(reader)) == len(outcome.rows)

    def test_empty_rows_write_header_only(self, tmp_path):
        path = tmp_path / "empty.csv"
        write_csv(path, [])
        lines = path.read_text().splitlines()
        assert len(lines) == 1
        assert lines[0].split(",")[0] == "experiment"

    def test_emit_reports_artifacts(self, tmp_path):
        outcome = run_experiment(spec_for("solve"))
        emit_reports(outcome, tmp_path)
        assert (tmp_path / "solve.csv").exists()
        summary = json.loads((tmp_path / "solve_summary.json").read_text())
        assert summary["experiment"] == "solve"
        plans = sorted(p.name for p in tmp_path.glob("plan_*.json"))
        assert plans == ["plan_joint.json", "plan_place-only.json", "plan_price-only.json"]
        svgs = list(tmp_path.glob("*.svg"))
        assert svgs
        assert svgs[0].read_text().startswith("<svg")

    def test_plan_result_dict_shape(self, diamond_catalog):
        from chargeplan import plan_joint

        result = plan_joint(diamond_catalog, default_params(budget=6))
        doc = plan_result_to_dict(result, diamond_catalog)
        assert {n["id"] for n in doc["nodes"]} == {1, 2, 3, 4}
        assert len(doc["links"]) == 4
        assert doc["social_cost"] == pytest.approx(result.social_cost)
        total = sum(doc["components"].values())
        assert total == pytest.approx(result.social_cost, rel=1e-9)
        placed = sum(n["chargers"] for n in doc["nodes"])
        assert placed == pytest.approx(float(result.design.x.sum()))

    def test_svg_chart_contains_series(self, tmp_path):
        path = tmp_path / "chart.svg"
        write_svg_chart(
            path,
            {"joint": [(1, 10.0), (2, 8.0)], "price-only": [(1, 12.0), (2, 11.0)]},
            title="t", xlabel="budget", ylabel="cost",
        )
        text = path.read_text()
        assert "polyline" in text
        assert "joint" in text and "price-only" in text


class TestCli:
    def test_solve_end_to_end(self, tmp_path, capsys):
        from chargeplan.cli import main
        from chargeplan.synthetic import save_scenario

        save_scenario(diamond_scenario(), tmp_path, "tiny")
        out = tmp_path / "out"
        code = main([
            "solve", "--scenario", str(tmp_path / "tiny.json"),
            "--out", str(out), "--k-routes", "4",
        ])
        assert code == 0
        assert (out / "solve.csv").exists()
        stdout = capsys.readouterr().out
        assert "joint" in stdout

    def test_unknown_scenario_path_errors(self, tmp_path):
        from chargeplan.cli import main

        with pytest.raises(SystemExit):
            main(["solve"])  # --scenario is required
