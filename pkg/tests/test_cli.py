import csv
import io
import math
import os

import pytest

from mgsynth.cli import (
    BENCH_HEADER,
    EXIT_CONFIG,
    EXIT_OK,
    front_header,
    main,
    read_tree_file,
    write_tree_file,
)
from mgsynth.evaluate import REPORT_HEADER
from mgsynth.grammar import cycle_tokens

THREE_GRID = ("cgc_h w1 smooth_2h w0.6 none jacobi_2h residual_2h cgs_2h_g w1 "
              "coarsening_2h_g residual_h_g x0_h")

SMALL_RUN = """
[problem]
name = poisson2d
level = 5
depth = 3
[search]
mu = 8
lambda = 8
initial_population = 16
init_depth_min = 4
init_depth_max = 12
generations = 2
seed = 3
[evaluation]
cost_model = ops
repeats = 1
smoothers = jacobi,rbgs
[output]
top = 4
"""


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def config(tmp_path):
    p = tmp_path / "run.ini"
    p.write_text(SMALL_RUN)
    return str(p)


@pytest.fixture
def vcycle_file(tmp_path):
    p = tmp_path / "v11.tree"
    write_tree_file(str(p), cycle_tokens(5, 1, 1, 1, "rbgs", 1.15), "poisson2d", 5)
    return str(p)


def test_golden_headers():
    assert REPORT_HEADER == ["tree", "level", "n", "t", "rho", "converged", "rank_metric"]
    assert BENCH_HEADER == ["cycle", "n", "t", "rho", "converged"]
    assert front_header("t,rho") == ["tree", "t", "rho", "rank_metric"]
    assert front_header("t,n") == ["tree", "t", "n", "rank_metric"]


def test_tree_file_round_trip(tmp_path):
    path = str(tmp_path / "x.tree")
    write_tree_file(path, THREE_GRID, "poisson2d", 3)
    info = read_tree_file(path)
    assert info == {"problem": "poisson2d", "depth": 3, "tree": THREE_GRID}


def test_evolve_small_run(tmp_path, config, capsys):
    out = str(tmp_path / "out")
    code, _, _ = run(capsys, "evolve", "--config", config, "--out", out)
    assert code == EXIT_OK
    rows = read_csv(os.path.join(out, "front.csv"))
    assert rows[0] == front_header("t,rho")
    assert 1 <= len(rows) - 1 <= 16
    for row in rows[1:]:
        assert all(math.isfinite(float(v)) for v in row[1:])
    final = read_csv(os.path.join(out, "final.csv"))
    assert final[0] == REPORT_HEADER and len(final) - 1 <= 4
    assert sorted(os.listdir(os.path.join(out, "checkpoints")))[-1] == "checkpoint_0002.json"


def test_evolve_zero_generations(tmp_path, config, capsys):
    out = str(tmp_path / "out")
    assert run(capsys, "evolve", "--config", config, "--out", out, "--generations", "0")[0] == EXIT_OK
    pop = read_csv(os.path.join(out, "population.csv"))
    assert len(pop) - 1 == 8


def test_evolve_worker_count_does_not_change_results(tmp_path, config, capsys):
    fronts = []
    for workers in ("1", "4"):
        out = str(tmp_path / f"w{workers}")
        assert run(capsys, "evolve", "--config", config, "--out", out, "--workers", workers)[0] == EXIT_OK
        fronts.append(open(os.path.join(out, "front.csv")).read())
    assert fronts[0] == fronts[1]


def test_evolve_resume_reproduces_run(tmp_path, config, capsys):
    full = str(tmp_path / "full")
    assert run(capsys, "evolve", "--config", config, "--out", full)[0] == EXIT_OK
    part = str(tmp_path / "part")
    assert run(capsys, "evolve", "--config", config, "--out", part, "--generations", "1")[0] == EXIT_OK
    ck = os.path.join(part, "checkpoints", "checkpoint_0001.json")
    resumed = str(tmp_path / "resumed")
    assert run(capsys, "evolve", "--config", config, "--out", resumed, "--resume", ck)[0] == EXIT_OK
    for name in ("front.csv", "population.csv"):
        assert open(os.path.join(full, name)).read() == open(os.path.join(resumed, name)).read()


def test_evolve_missing_checkpoint(tmp_path, config, capsys):
    code, _, err = run(capsys, "evolve", "--config", config, "--out", str(tmp_path / "o"),
                       "--resume", str(tmp_path / "nothing"))
    assert code == EXIT_CONFIG and "checkpoint" in err


def test_evaluate_prints_report_row(vcycle_file, capsys):
    code, out, _ = run(capsys, "evaluate", vcycle_file, "--level", "7")
    assert code == EXIT_OK
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == REPORT_HEADER
    assert rows[1][1] == "7" and int(rows[1][2]) == 9 and rows[1][5] == "True"


def test_evaluate_epsilon_override(vcycle_file, capsys):
    _, out, _ = run(capsys, "evaluate", vcycle_file, "--level", "7", "--epsilon", "1e-3")
    n = int(list(csv.reader(io.StringIO(out)))[1][2])
    assert 2 <= n < 9


def test_malformed_tree_reports_token(tmp_path, capsys):
    path = str(tmp_path / "bad.tree")
    write_tree_file(path, "smooth_h w1 bogus", "poisson2d", 5)
    code, _, err = run(capsys, "evaluate", path)
    assert code == EXIT_CONFIG
    assert "token 2" in err


def test_missing_tree_file(capsys):
    assert run(capsys, "evaluate", "/nonexistent.tree")[0] == EXIT_CONFIG


def test_bench_reference_cycles(capsys):
    code, out, _ = run(capsys, "bench", "--level", "7", "--cycles", "V(1,1),V(2,2),W(1,1),F(1,1)",
                        "--omega", "1.15")
    assert code == EXIT_OK
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == BENCH_HEADER
    assert [(r[0], int(r[1])) for r in rows[1:]] == [("V(1,1)", 9), ("V(2,2)", 7), ("W(1,1)", 9), ("F(1,1)", 9)]


def test_bench_empty_cycle_list(capsys):
    code, out, _ = run(capsys, "bench", "--level", "5", "--cycles", "")
    assert code == EXIT_OK
    assert out.strip().splitlines() == [",".join(BENCH_HEADER)]


def test_bench_bad_cycle(capsys):
    assert run(capsys, "bench", "--cycles", "Q(1,1)")[0] == EXIT_CONFIG


def test_render_vcycle(vcycle_file, tmp_path, capsys):
    path = str(tmp_path / "v.dot")
    assert run(capsys, "render", vcycle_file, "--out", path)[0] == EXIT_OK
    text = open(path).read()
    assert text.count("fillcolor=black") == 1
    assert text.count("rbgs") == 0 and text.count("jacobi (red-black)") == 8
    pydot = pytest.importorskip("pydot")
    assert pydot.graph_from_dot_data(text)


def test_render_three_grid(tmp_path, capsys):
    path = str(tmp_path / "t.tree")
    write_tree_file(path, THREE_GRID, "poisson2d", 3)
    code, out, _ = run(capsys, "render", path, "--level", "5")
    assert code == EXIT_OK
    assert 'label="jacobi ω=0.6", shape=ellipse, level="2h"' in out


def test_exit_codes(capsys):
    assert run(capsys, "bench", "--problem", "heat")[0] == EXIT_CONFIG
    assert run(capsys, "frobnicate")[0] == EXIT_CONFIG
    assert run(capsys, "bench", "--config", "/nonexistent.ini")[0] == EXIT_CONFIG
