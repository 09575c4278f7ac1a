import json

import pytest
import yaml

from parkslam import io
from parkslam.cli import apply_overrides, main

SMALL_LOT = {"slots_per_row": 4, "free_zone_length": 15.0, "n_tags": 12}


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def error_of(err):
    return json.loads(err.strip().splitlines()[-1])["error"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "cfg.yaml").write_text(yaml.safe_dump({"lot": SMALL_LOT, "robust": True}))
    return d


@pytest.fixture(scope="module")
def pipeline(workdir):
    """simulate -> map -> localize, run once for the module."""
    cfg = workdir / "cfg.yaml"
    ds, smap, tr = workdir / "ds.jsonl", workdir / "map.jsonl", workdir / "trace.jsonl"
    assert main(["simulate", "--config", str(cfg), "--seed", "5", "--noise-profile", "default",
                 "--out", str(ds)]) == 0
    assert main(["map", "--config", str(cfg), "--dataset", str(ds), "--out", str(smap),
                 "--report", str(workdir / "map_report.json")]) == 0
    assert main(["localize", "--config", str(cfg), "--map", str(smap), "--dataset", str(ds),
                 "--out", str(tr)]) == 0
    return ds, smap, tr


def test_pipeline_outputs(pipeline, workdir, capsys):
    ds, smap, tr = pipeline
    capsys.readouterr()
    assert len(io.import_map(smap).slots) == 8
    assert len(io.import_trace(tr)) == len(io.import_dataset(ds).frames)
    assert (workdir / "map_report.json").exists()


def test_evaluate_prints_report(pipeline, capsys):
    ds, smap, tr = pipeline
    code, out, _ = run(["evaluate", "--trace", tr, "--map", smap, "--dataset", ds], capsys)
    assert code == 0
    rep = json.loads(out)["report"]
    assert rep["trace_lateral_std"] <= 0.3
    assert rep["id_accuracy"] == 1.0


def test_plot_writes_svg(pipeline, workdir, capsys):
    _, smap, tr = pipeline
    out_svg = workdir / "map.svg"
    code, out, _ = run(["plot", "--map", smap, "--trace", f"run={tr}", "--with-reference", "--out", out_svg],
                       capsys)
    assert code == 0
    assert json.loads(out)["traces"] == ["reference", "run"]
    assert out_svg.read_text().startswith("<?xml")


def test_simulate_seed_from_flag_is_deterministic(workdir, capsys):
    cfg = workdir / "cfg.yaml"
    a, b = workdir / "a.jsonl", workdir / "b.jsonl"
    for path in (a, b):
        code, _, _ = run(["simulate", "--config", cfg, "--seed", 9, "--noise-profile", "zero", "--out", path],
                         capsys)
        assert code == 0
    assert a.read_bytes() == b.read_bytes()


def test_set_override_wins_over_config(workdir, capsys):
    cfg = workdir / "cfg.yaml"
    code, out, _ = run(["simulate", "--config", cfg, "--seed", 1, "--noise-profile", "zero",
                        "--set", "lot.slots_per_row=3", "--out", workdir / "o.jsonl"], capsys)
    assert code == 0
    assert len(io.import_dataset(workdir / "o.jsonl").lot.slots) == 6


def test_seed_and_profile_from_config(workdir, capsys):
    cfg = workdir / "full.yaml"
    cfg.write_text(yaml.safe_dump({"lot": SMALL_LOT, "seed": 2, "noise_profile": "zero"}))
    code, out, _ = run(["simulate", "--config", cfg, "--out", workdir / "c.jsonl"], capsys)
    assert code == 0
    assert json.loads(out)["seed"] == 2


@pytest.mark.parametrize("argv", [
    ["simulate", "--noise-profile", "zero", "--out", "x.jsonl"],
    ["simulate", "--seed", "1", "--out", "x.jsonl"],
])
def test_missing_mandatory_flag_is_config_error(argv, capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    code, _, err = run(argv, capsys)
    assert code != 0
    assert error_of(err) == "ConfigError"


def test_map_requires_robust_choice(pipeline, workdir, capsys):
    ds = pipeline[0]
    code, _, err = run(["map", "--dataset", ds, "--out", workdir / "m2.jsonl"], capsys)
    assert code != 0
    assert error_of(err) == "ConfigError"


def test_no_robust_flag_overrides_config(pipeline, workdir, capsys):
    ds = pipeline[0]
    code, out, _ = run(["map", "--config", workdir / "cfg.yaml", "--no-robust", "--dataset", ds,
                        "--out", workdir / "naive.jsonl"], capsys)
    assert code == 0
    assert json.loads(out)["robust"] is False


def test_missing_input_is_io_failure(tmp_path, capsys):
    code, _, err = run(["map", "--robust", "--dataset", tmp_path / "nope.jsonl", "--out", tmp_path / "m.jsonl"],
                       capsys)
    assert code != 0
    assert error_of(err) == "IoFailure"


def test_garbage_dataset_is_parse_error(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("this is not json\n")
    code, _, err = run(["map", "--robust", "--dataset", bad, "--out", tmp_path / "m.jsonl"], capsys)
    assert code != 0
    assert error_of(err) == "ParseError"


def test_unknown_setting_is_config_error(pipeline, tmp_path, capsys):
    ds = pipeline[0]
    code, _, err = run(["map", "--robust", "--set", "mapping.bogus=1", "--dataset", ds,
                        "--out", tmp_path / "m.jsonl"], capsys)
    assert code != 0
    assert error_of(err) == "ConfigError"


def test_bad_noise_profile_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--seed", "1", "--noise-profile", "loud", "--out", "x"])
    assert exc.value.code != 0
    assert error_of(capsys.readouterr().err) == "UsageError"


def test_evaluate_with_nothing_is_config_error(capsys):
    code, _, err = run(["evaluate"], capsys)
    assert code != 0
    assert error_of(err) == "ConfigError"


def test_apply_overrides_nested():
    cfg = apply_overrides({"a": {"b": 1}}, ["a.c=[1, 2]", "d=true"])
    assert cfg == {"a": {"b": 1, "c": [1, 2]}, "d": True}
