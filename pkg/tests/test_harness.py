import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from lrbandits.exceptions import ConfigError
from lrbandits.harness.cli import main
from lrbandits.harness.config import EXPERIMENTS, ExperimentConfig, default_config, parse_config, parse_text
from lrbandits.harness.experiments import nearest_rank, run_experiment

SMALL = {
    "pe_split": "m = 8\nr = 1\nT_grid = 400, 800\nseeds = 2\nalpha_grid = 0, 0.5\n",
    "pe_regularization": "m = 8\nr = 1\nT_grid = 400\nseeds = 2\ntau_grid = 1e-4, 1e-1\n",
    "pe_vs_T": "m = 8\nr = 1\nT_grid = 400, 800\nseeds = 2\n",
    "pe_vs_m": "m_grid = 5, 8\nT_grid = 500\nseeds = 2\n",
    "maxnorm_vs_m": "m_grid = 5, 8\nT_grid = 500\nseeds = 2\n",
    "bpi_vs_T": "m = 8\nr = 1\nT_grid = 400\nseeds = 2\n",
    "regret_vs_T": "m = 5\nr = 1\nT_grid = 600\nT1 = 200\nseeds = 2\n",
}


def _cfg(eid, extra=""):
    return parse_text(f"experiment_id = {eid}\n" + SMALL[eid] + extra)


def test_defaults_and_comments():
    cfg = parse_text("# a comment\nexperiment_id = pe_vs_T   # trailing\n\nT_grid = 1e3, 1e4\n")
    assert cfg.T_grid == (1000, 10000)
    assert cfg.m == 50 and cfg.seeds == 50 and cfg.sigma_noise == 1.0
    assert cfg.tau == 1e-4 and cfg.split_alpha == 0.0 and cfg.delta == 0.01
    assert default_config("regret_vs_T").m == 20


def test_malformed_value_names_key_and_line():
    with pytest.raises(ConfigError) as exc:
        parse_text("experiment_id = pe_vs_T\nr = two\n")
    assert exc.value.key == "r" and exc.value.line == 2
    assert "r" in str(exc.value)


@pytest.mark.parametrize("text, key", [
    ("experiment_id = pe_vs_T\nbogus = 1\n", "bogus"),
    ("experiment_id = pe_vs_T\nm = 3\nm = 4\n", "m"),
    ("experiment_id = nope\n", "experiment_id"),
    ("m = 3\n", "experiment_id"),
    ("experiment_id = pe_vs_T\noracle = true\n", "oracle"),
    ("experiment_id = pe_vs_T\nsplit_alpha = 1\n", "split_alpha"),
    ("experiment_id = pe_vs_T\nT_grid = 1000, 2.5\n", "T_grid"),
    ("experiment_id = pe_vs_T\nm = 4\nr = 5\n", "r"),
    ("experiment_id = pe_vs_T\ndelta = 0.5\n", "delta"),
])
def test_invalid_configs(text, key):
    with pytest.raises(ConfigError) as exc:
        parse_text(text)
    if key is not None:
        assert exc.value.key == key


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "absent.cfg")


@pytest.mark.parametrize("eid", EXPERIMENTS)
def test_every_experiment_runs(eid, tmp_path):
    res = run_experiment(_cfg(eid), out_dir=tmp_path)
    raw = (tmp_path / f"{eid}_raw.csv").read_text().splitlines()
    summary = (tmp_path / f"{eid}_summary.csv").read_text().splitlines()
    assert raw[0].split(",") == res.raw_header and len(raw) == len(res.raw_rows) + 1
    assert summary[0].split(",")[-4:] in (["n_seeds", "median", "q05", "q95"], ["median", "q05", "q95", "bound"])
    for row in res.summary_rows:
        assert row[len(res.summary_header) - 4 - ("bound" in res.summary_header)] == 2


def test_split_alpha_maps_to_floor(tmp_path):
    res = run_experiment(_cfg("pe_vs_T", "split_alpha = 0.8\n"), write=False)
    T_i, T1_i = res.raw_header.index("T"), res.raw_header.index("T1")
    assert {(row[T_i], row[T1_i]) for row in res.raw_rows} == {(400, 320), (800, 640)}
    res = run_experiment(_cfg("pe_split"), write=False)
    assert {(row[T_i], row[T1_i]) for row in res.raw_rows} == {(400, 0), (400, 200), (800, 0), (800, 400)}


def test_regret_traces_written(tmp_path):
    res = run_experiment(_cfg("regret_vs_T"), out_dir=tmp_path)
    files = sorted(p.name for p in (tmp_path / "traces").iterdir())
    assert files == ["regret_vs_T_T600_seed0.csv", "regret_vs_T_T600_seed1.csv"]
    last = (tmp_path / "traces" / files[0]).read_text().splitlines()[-1].split(",")
    assert last[0] == "600"
    assert float(last[-1]) == pytest.approx(res.raw_rows[0][2])


@pytest.mark.parametrize("eid", ["pe_vs_T", "bpi_vs_T", "regret_vs_T"])
def test_output_is_deterministic(eid, tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    run_experiment(_cfg(eid), out_dir=a)
    run_experiment(_cfg(eid), out_dir=b)
    run_experiment(_cfg(eid), jobs=2, out_dir=c)
    for name in (f"{eid}_raw.csv", f"{eid}_summary.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes() == (c / name).read_bytes()


def test_seed_changes_output():
    r0 = run_experiment(_cfg("pe_vs_T"), write=False)
    r1 = run_experiment(_cfg("pe_vs_T", "base_seed = 7\ninstance_seed = 0\n"), write=False)
    assert r0.raw_rows != r1.raw_rows


def test_oracle_mode_recovers_truth():
    text = ("experiment_id = pe_vs_T\nm = 10\nr = 2\nT_grid = 500, 2000\nseeds = 1\n"
            "sigma_noise = 0\ntau = 1e-12\noracle = true\ntest_mode = true\n")
    res = run_experiment(parse_text(text), write=False)
    i = res.raw_header.index("abs_err")
    est = res.raw_header.index("estimator")
    errs = [row[i] for row in res.raw_rows if row[est] == "RSPE"]
    assert errs and max(errs) <= 1e-6


def write_cfg(path, text):
    path.write_text(text)
    return str(path)


def test_cli_exit_codes(tmp_path, capsys):
    good = write_cfg(tmp_path / "good.cfg", "experiment_id = bpi_vs_T\n" + SMALL["bpi_vs_T"])
    assert main(["run", good, "--out", str(tmp_path / "out"), "--seeds", "1"]) == 0
    out = capsys.readouterr().out
    assert "bpi_vs_T_raw.csv" in out
    assert len((tmp_path / "out" / "bpi_vs_T_raw.csv").read_text().splitlines()) == 1 + 3
    bad = write_cfg(tmp_path / "bad.cfg", "experiment_id = bpi_vs_T\nr = two\n")
    assert main(["run", bad]) == 2
    assert "r" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.cfg")]) == 2
    # a file where the output directory should be makes the run itself fail
    blocker = tmp_path / "blocker"
    blocker.write_text("")
    assert main(["run", good, "--out", str(blocker / "sub")]) == 1


def test_cli_lists_experiments(capsys):
    assert main(["list-experiments"]) == 0
    names = [line.split("\t")[0] for line in capsys.readouterr().out.splitlines()]
    assert names == list(EXPERIMENTS)


def test_nearest_rank_examples():
    xs = [5, 1, 4, 2, 3]
    assert nearest_rank(xs, 0.5) == 3
    assert nearest_rank(xs, 0.05) == 1
    assert nearest_rank(xs, 0.95) == 5
    assert nearest_rank(list(range(1, 21)), 0.95) == 19
    with pytest.raises(ValueError):
        nearest_rank([], 0.5)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50), st.floats(0.0, 1.0))
def test_nearest_rank_property(xs, q):
    v = nearest_rank(xs, q)
    assert v in xs
    below = sum(x <= v for x in xs)
    assert below >= max(1, math.ceil(q * len(xs)))
    assert sum(x < v for x in xs) < max(1, math.ceil(q * len(xs)))


def test_config_is_frozen():
    cfg = default_config("pe_vs_T")
    with pytest.raises(Exception):
        cfg.m = 3
    assert isinstance(cfg.replace(m=5), ExperimentConfig)
    with pytest.raises(ConfigError):
        cfg.replace(seeds=0)
