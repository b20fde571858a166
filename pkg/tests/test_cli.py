import shutil
import subprocess

import numpy as np
import pytest

from latentbandit.cli import main, parse_policies, ValidationError
from latentbandit.data import RatingsTable, synth_model, write_ratings
from latentbandit.model import load_model
from latentbandit.reporting import read_csv

OUTPUTS = ("steps.csv", "summary.csv", "groups.csv", "trace.csv")


def _records(path):
    _, header, rows = read_csv(path)
    return [dict(zip(header, r)) for r in rows]


@pytest.fixture(scope="module")
def ratings_csv(tmp_path_factory):
    """Sparse integer ratings from 120 users of a 4-group model."""
    rng = np.random.default_rng(0)
    model = synth_model(4, 30, 3.0, rng)
    users, items, vals = [], [], []
    for u in range(120):
        g = u % 4
        for v in np.flatnonzero(rng.uniform(size=30) < 0.7):
            r = rng.normal(model.mu[g, v], model.sigma[g, v])
            users.append(u)
            items.append(v)
            vals.append(float(np.clip(np.rint(r), 1, 5)))
    t = RatingsTable([f"u{u}" for u in range(120)], [f"i{v}" for v in range(30)], np.array(users), np.array(items), np.array(vals))
    path = tmp_path_factory.mktemp("data") / "r.csv"
    write_ratings(t, path)
    return path


def _synth_args(out, *extra):
    return ["simulate", "--synth", "groups=3,items=12,separation=2,seed=1", "--out-dir", str(out), *extra]


class TestPolicyGrammar:
    def test_parse(self):
        specs = parse_policies("lba:beta=1,tie=random,tree:depth=10,oracle")
        assert [s.name for s in specs] == ["lba", "tree", "oracle"]
        assert specs[0].params == {"beta": "1", "tie": "random"}

    @pytest.mark.parametrize("text", ["", "bogus", "lba:gamma=1", "beta=1,lba"])
    def test_invalid(self, text):
        with pytest.raises(ValidationError):
            parse_policies(text)


class TestCluster:
    def test_sixteen_groups_and_determinism(self, tmp_path, ratings_csv):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        for out in (a, b):
            assert main(["cluster", "--ratings", str(ratings_csv), "--k", "16", "--scale", "1,5", "--seed", "7", "--out", str(out)]) == 0
        assert load_model(a).num_groups == 16
        assert a.read_bytes() == b.read_bytes()

    def test_k_too_large(self, tmp_path, ratings_csv, capsys):
        code = main(["cluster", "--ratings", str(ratings_csv), "--k", "500", "--scale", "1,5", "--out", str(tmp_path / "m.json")])
        assert code == 2
        assert "k=500" in capsys.readouterr().err

    def test_out_of_scale(self, tmp_path, ratings_csv, capsys):
        code = main(["cluster", "--ratings", str(ratings_csv), "--k", "2", "--scale", "2,4", "--out", str(tmp_path / "m.json")])
        assert code == 2
        assert "outside scale" in capsys.readouterr().err


class TestSimulate:
    def test_minimal_run_schema_valid(self, tmp_path):
        out = tmp_path / "o"
        assert main(_synth_args(out, "--users-per-group", "1", "--horizon", "1")) == 0
        files = [str(out / f) for f in OUTPUTS]
        assert main(["check-schema", *files]) == 0
        rows = _records(out / "steps.csv")
        assert {r["policy"] for r in rows} == {"lba(beta=1)", "lba(beta=0)", "tree", "oracle"}

    def test_model_file_and_trace(self, tmp_path):
        assert main(["synth-model", "--groups", "3", "--items", "10", "--seed", "2", "--out", str(tmp_path / "m.json")]) == 0
        out = tmp_path / "o"
        args = ["simulate", "--model", str(tmp_path / "m.json"), "--policies", "lba:beta=0.5,explore:samples=8,random"]
        assert main([*args, "--horizon", "4", "--users-per-group", "2", "--out-dir", str(out), "--score-trace"]) == 0
        assert main(["check-schema", str(out / "trace.csv"), str(out / "scores.csv"), str(tmp_path / "m.json")]) == 0
        rows = _records(out / "trace.csv")
        assert len(rows) == 3 * 3 * 4

    def test_identical_reruns(self, tmp_path):
        outs = [tmp_path / "a", tmp_path / "b"]
        for out, jobs in zip(outs, ("1", "3")):
            assert main(_synth_args(out, "--users-per-group", "3", "--horizon", "5", "--jobs", jobs)) == 0
        for f in (*OUTPUTS, "tree.tree.json"):
            assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()

    def test_env_output_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("LATENTBANDIT_OUTPUT_DIR", str(tmp_path / "env"))
        assert main(["simulate", "--synth", "groups=2,items=4", "--policies", "oracle", "--users-per-group", "1", "--horizon", "2"]) == 0
        assert (tmp_path / "env" / "summary.csv").is_file()

    def test_unknown_policy_lists_available(self, tmp_path, capsys):
        assert main(_synth_args(tmp_path, "--policies", "ucb")) == 2
        err = capsys.readouterr().err
        assert "cbb" in err and "lba" in err

    def test_cbb_not_implemented(self, tmp_path, capsys):
        assert main(_synth_args(tmp_path, "--policies", "cbb", "--horizon", "2")) == 3
        assert "not implemented" in capsys.readouterr().err

    def test_horizon_beyond_items(self, tmp_path):
        assert main(_synth_args(tmp_path, "--horizon", "13")) == 2


@pytest.fixture(scope="module")
def summaries(tmp_path_factory):
    base = tmp_path_factory.mktemp("rep")
    paths = {}
    for g in (2, 3, 4, 5):
        out = base / f"k{g}"
        args = ["simulate", "--synth", f"groups={g},items=8,seed=0", "--policies", "lba,oracle"]
        assert main([*args, "--users-per-group", "2", "--horizon", "3", "--out-dir", str(out)]) == 0
        paths[g] = out / "summary.csv"
    return base, paths


class TestReport:
    def test_merge_four(self, summaries, tmp_path, capsys):
        _, paths = summaries
        assert main(["report", *map(str, paths.values()), "--csv", str(tmp_path / "t.csv")]) == 0
        header = (tmp_path / "t.csv").read_text().splitlines()[0]
        for g in (2, 3, 4, 5):
            assert f"{g}" in header
        assert "*" in capsys.readouterr().out

    def test_single(self, summaries, tmp_path):
        _, paths = summaries
        assert main(["report", str(paths[2]), "--csv", str(tmp_path / "t.csv")]) == 0
        assert len((tmp_path / "t.csv").read_text().splitlines()) == 3

    def test_conflicting_horizons(self, summaries, tmp_path, capsys):
        base, paths = summaries
        out = base / "h2"
        main(["simulate", "--synth", "groups=6,items=8,seed=0", "--policies", "oracle", "--users-per-group", "1", "--horizon", "2", "--out-dir", str(out)])
        assert main(["report", str(paths[2]), str(out / "summary.csv")]) == 2
        err = capsys.readouterr().err
        assert "2" in err and "3" in err

    def test_schema_mismatch(self, summaries, capsys):
        base, paths = summaries
        assert main(["report", str(base / "k2" / "steps.csv")]) == 2

    def test_check_schema_rejects_garbage(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("a,b\n1,2\n")
        assert main(["check-schema", str(p)]) == 2


@pytest.mark.skipif(shutil.which("latentbandit") is None, reason="console script not installed")
def test_console_script(tmp_path):
    proc = subprocess.run(["latentbandit", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "latentbandit" in proc.stdout
