import csv
import os
from pathlib import Path

import pytest
import yaml

from peerclust import cli

DATA = Path(__file__).parent / "data"


def minimal_config(out_dir, **overrides):
    cfg = {
        "dataset": {"kind": "gaussian_mixture", "k": 2, "n_per": 20,
                    "means": [[-3.0], [3.0]], "variance": 0.5, "seed": 1},
        "partition": {"m": 2, "scheme": "homogeneous"},
        "topology": {"kind": "path"},
        "run": {"K": 2, "T": 50, "B": 1, "rho": 1.0, "alpha": "auto_theorem1",
                "loss": {"kind": "kmeans"}, "init": "warm_start_per_class"},
        "seed": 1,
        "repeats": 1,
        "output_dir": str(out_dir),
    }
    cfg.update(overrides)
    return cfg


def write_config(tmp_path, cfg, name="exp.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return path


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_config_round_trip_idempotent(tmp_path):
    cfg = minimal_config(tmp_path / "out")
    once = yaml.safe_load(cli.dump_config(cfg))
    twice = yaml.safe_load(cli.dump_config(once))
    assert once == twice == cfg


def test_cmd_run_smoke(tmp_path):
    out = tmp_path / "out"
    path = write_config(tmp_path, minimal_config(out))
    assert cli.main(["run", str(path)]) == 0
    rows = read_rows(out / "trace_r0.csv")
    assert rows[0] == cli.TRACE_HEADER
    assert len(rows) == 51  # header + one row per round
    assert (out / "centers_r0.csv").exists()
    assert (out / "assignment_r0.csv").exists()
    summary = read_rows(out / "summary.csv")
    assert summary[0] == cli.SUMMARY_HEADER
    assert len(summary) == 2


def test_cmd_run_repeats(tmp_path):
    out = tmp_path / "out"
    path = write_config(tmp_path, minimal_config(out, repeats=5))
    assert cli.main(["run", str(path)]) == 0
    for r in range(5):
        assert (out / f"trace_r{r}.csv").exists()
    summary = read_rows(out / "summary.csv")
    assert len(summary) == 2


def test_output_schemas(tmp_path):
    out = tmp_path / "out"
    path = write_config(tmp_path, minimal_config(out))
    cli.main(["run", str(path)])
    centers = read_rows(out / "centers_r0.csv")
    assert centers[0] == ["user", "cluster", "f0"]
    assignment = read_rows(out / "assignment_r0.csv")
    assert assignment[0] == ["user", "local_index", "global_index", "cluster"]
    assert len(assignment) == 1 + 40


def test_invalid_topology_exit_code(tmp_path, capsys):
    cfg = minimal_config(tmp_path / "out")
    cfg["partition"]["m"] = 1
    cfg["topology"]["kind"] = "ring"
    path = write_config(tmp_path, cfg)
    assert cli.main(["run", str(path)]) == 2
    assert "config error" in capsys.readouterr().err


def test_unknown_key_rejected(tmp_path):
    cfg = minimal_config(tmp_path / "out")
    cfg["bogus"] = 1
    path = write_config(tmp_path, cfg)
    assert cli.main(["run", str(path)]) == 2


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning",
                            "ignore:invalid value:RuntimeWarning")
def test_numeric_failure_exit_code(tmp_path, capsys):
    cfg = minimal_config(tmp_path / "out")
    cfg["run"]["alpha"] = 1e9
    path = write_config(tmp_path, cfg)
    assert cli.main(["run", str(path)]) == 3
    assert "numeric failure" in capsys.readouterr().err


def test_io_failure_exit_code(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = minimal_config(blocker / "out")  # parent is a file
    path = write_config(tmp_path, cfg)
    assert cli.main(["run", str(path)]) == 4


def test_set_override(tmp_path):
    out = tmp_path / "out"
    path = write_config(tmp_path, minimal_config(out))
    assert cli.main(["run", str(path), "--set", "run.T=7"]) == 0
    assert len(read_rows(out / "trace_r0.csv")) == 8


def test_env_var_output_dir(tmp_path, monkeypatch):
    out = tmp_path / "from_env"
    path = write_config(tmp_path, minimal_config(tmp_path / "ignored"))
    monkeypatch.setenv(cli.OUTPUT_DIR_ENV, str(out))
    assert cli.main(["run", str(path)]) == 0
    assert (out / "trace_r0.csv").exists()


def test_run_outputs_bytewise_deterministic(tmp_path):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    path = write_config(tmp_path, minimal_config(out_a, repeats=2))
    cli.main(["run", str(path)])
    cli.main(["run", str(path), "--output-dir", str(out_b)])
    for name in ["trace_r0.csv", "trace_r1.csv", "centers_r0.csv",
                 "assignment_r0.csv", "summary.csv"]:
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes()


def iris_config(out_dir, **run_overrides):
    run = {"K": 3, "T": 200, "B": 1, "rho": 10.0, "alpha": "auto_experimental",
           "loss": {"kind": "kmeans"}, "init": "warm_start_per_class"}
    run.update(run_overrides)
    return {
        "dataset": {"kind": "csv", "path": str(DATA / "iris.csv"), "label_column": 4},
        "partition": {"m": 10, "scheme": "homogeneous"},
        "topology": {"kind": "ring"},
        "run": run,
        "seed": 1,
        "repeats": 2,
        "output_dir": str(out_dir),
    }


def test_sweep_rho_gap_decreasing(tmp_path):
    out = tmp_path / "sweep"
    cfg = iris_config(out)
    cfg["sweep"] = {"parameter": "rho", "values": [1, 10, 100, 1000]}
    path = write_config(tmp_path, cfg)
    assert cli.main(["sweep", str(path)]) == 0
    rows = read_rows(out / "summary.csv")
    assert len(rows) == 5
    gaps = [float(r[5]) for r in rows[1:]]
    assert all(a > b for a, b in zip(gaps, gaps[1:]))
    assert (out / "rho_1" / "trace_r0.csv").exists()
    assert (out / "rho_1000" / "trace_r1.csv").exists()


def test_sweep_b_accuracy_stable(tmp_path):
    out = tmp_path / "bsweep"
    cfg = iris_config(out, T=150)
    cfg["sweep"] = {"parameter": "B", "values": [1, 10]}
    path = write_config(tmp_path, cfg)
    assert cli.main(["sweep", str(path)]) == 0
    rows = read_rows(out / "summary.csv")
    accs = [float(r[1]) for r in rows[1:]]
    assert abs(accs[0] - accs[1]) <= 0.01


def test_sweep_m_repartitions(tmp_path):
    out = tmp_path / "msweep"
    cfg = iris_config(out, T=100)
    cfg["repeats"] = 1
    cfg["sweep"] = {"parameter": "m", "values": [5, 10]}
    path = write_config(tmp_path, cfg)
    assert cli.main(["sweep", str(path)]) == 0
    rows = read_rows(out / "summary.csv")
    assert len(rows) == 3
    a5 = read_rows(out / "m_5" / "assignment_r0.csv")
    a10 = read_rows(out / "m_10" / "assignment_r0.csv")
    assert {r[0] for r in a5[1:]} == {str(i) for i in range(5)}
    assert {r[0] for r in a10[1:]} == {str(i) for i in range(10)}


def test_sweep_requires_section(tmp_path):
    path = write_config(tmp_path, minimal_config(tmp_path / "out"))
    assert cli.main(["sweep", str(path)]) == 2


def test_outlier_demo_minimal_fraction_both_clean(tmp_path, capsys):
    out = tmp_path / "demo"
    cfg = iris_config(out, T=300)
    del cfg["run"]["alpha"]  # demo defaults to the reference step rule
    cfg["partition"] = {"m": 5, "scheme": "homogeneous"}
    cfg["repeats"] = 2
    cfg["outlier"] = {"fraction": 0.02, "noise_mean": 11.0, "noise_variance": 1.0,
                      "huber_delta": 0.05}
    path = write_config(tmp_path, cfg)
    assert cli.main(["outlier-demo", str(path)]) == 0
    rows = read_rows(out / "outlier_report.csv")
    assert rows[0] == cli.OUTLIER_HEADER
    verdicts = {r[0]: r[4] for r in rows[1:]}
    assert verdicts == {"kmeans": "True", "huber": "True"}


def test_parallel_jobs_match_sequential(tmp_path):
    out_a, out_b = tmp_path / "seq", tmp_path / "par"
    cfg = minimal_config(out_a, repeats=3)
    path = write_config(tmp_path, cfg)
    cli.main(["run", str(path)])
    cfg_b = minimal_config(out_b, repeats=3, jobs=3)
    path_b = write_config(tmp_path, cfg_b, name="par.yaml")
    cli.main(["run", str(path_b)])
    for r in range(3):
        assert (out_a / f"trace_r{r}.csv").read_bytes() == \
            (out_b / f"trace_r{r}.csv").read_bytes()
    assert (out_a / "summary.csv").read_bytes() == (out_b / "summary.csv").read_bytes()


def test_mahalanobis_metric_warns(tmp_path, capsys):
    matrix = tmp_path / "metric.csv"
    matrix.write_text("1,0,0,0\n0,1,0,0\n0,0,1,0\n0,0,0,1\n")
    out = tmp_path / "out"
    cfg = iris_config(out, T=20)
    cfg["repeats"] = 1
    cfg["run"]["loss"] = {"kind": "kmeans", "mahalanobis_csv": str(matrix)}
    path = write_config(tmp_path, cfg)
    assert cli.main(["run", str(path)]) == 0
    assert "mahalanobis" in capsys.readouterr().err


def test_custom_topology_from_edge_file(tmp_path):
    edges = tmp_path / "topo.txt"
    edges.write_text("# tiny ring of 4\n0 1\n1 2\n2 3\n3 0\n")
    out = tmp_path / "out"
    cfg = minimal_config(out)
    cfg["partition"]["m"] = 4
    cfg["dataset"]["n_per"] = 40
    cfg["topology"] = {"kind": "custom", "edges_file": str(edges)}
    path = write_config(tmp_path, cfg)
    assert cli.main(["run", str(path)]) == 0
    assignment = read_rows(out / "assignment_r0.csv")
    assert {r[0] for r in assignment[1:]} == {"0", "1", "2", "3"}


def test_selftest_subcommand():
    assert cli.main(["selftest"]) == 0


def test_relative_dataset_path_resolves_against_config(tmp_path):
    out = tmp_path / "out"
    cfg = iris_config(out, T=20)
    cfg["dataset"]["path"] = os.path.relpath(DATA / "iris.csv", tmp_path)
    cfg["repeats"] = 1
    path = write_config(tmp_path, cfg)
    assert cli.main(["run", str(path)]) == 0
