import json
import shutil

import jsonschema
import pytest

from difftree import pipeline
from difftree.cli import main
from difftree.errors import ConfigInvalid, StageFailure

# small settings that keep a full run to a few seconds; one direction K so the
# bundled one-to-one label map always covers every topic
FAST = {"iterations": "200", "restarts": "1", "direction_k": "10", "discipline_k": "5",
        "cv_repeats": "3", "q_permutations": "99"}

ARTIFACTS = ["corpus.jsonl", "corpus.csv", "geocodes.csv", "parse_report.json", "model_discipline.txt",
             "model_direction.txt", "topics.json", "labels.csv", "diffusion_series.csv", "stage_timeline.csv",
             "stages.json", "trees.json", "trees/knowledge.json", "trees/knowledge.dot", "trees/factor.json",
             "trees/factor.dot", "cv.csv", "cv.json", "lr2_fits.csv", "models.json", "forecast.csv",
             "forecast.json", "qstat.json", "qstat.csv", "report.json", "report.txt", "manifest.json"]


@pytest.fixture(scope="module")
def example_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("example")
    assert main(["example", str(d)]) == 0
    return d


def _cfg(example_dir, out, **extra):
    return pipeline.load_config(example_dir / "pipeline.ini", {**FAST, **extra}, out)


@pytest.fixture(scope="module")
def full_run(example_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("out")
    cfg = _cfg(example_dir, out)
    return cfg, pipeline.run_pipeline(cfg)


def test_full_run_writes_every_artifact(full_run):
    cfg, manifest = full_run
    assert list(manifest.order) == list(pipeline.STAGES)
    assert all(manifest.stages[s]["status"] == "ran" for s in pipeline.STAGES)
    for name in ARTIFACTS:
        assert (cfg.output_dir / name).is_file(), name
    assert list((cfg.output_dir / "trees").glob("dd_*.dot"))


def test_report_validates_and_lists_three_models(full_run):
    cfg, _ = full_run
    report = json.loads((cfg.output_dir / "report.json").read_text())
    jsonschema.validate(report, pipeline.REPORT_SCHEMA)
    assert [row["model"] for row in report["forecast"]["cv"]] == ["LR1", "LR2", "MLM"]
    text = (cfg.output_dir / "report.txt").read_text()
    assert "Cross-validation" in text and "not run" not in text


def test_rerun_skips_everything_with_identical_outputs(full_run, example_dir):
    cfg, first = full_run
    again = pipeline.run_pipeline(_cfg(example_dir, cfg.output_dir))
    for s in pipeline.STAGES:
        assert again.stages[s]["status"] == "skipped", s
        assert again.stages[s]["outputs"] == first.stages[s]["outputs"], s


def test_changed_parameter_reruns_only_downstream(example_dir, tmp_path):
    cfg = _cfg(example_dir, tmp_path)
    pipeline.run_pipeline(cfg)
    changed = pipeline.run_pipeline(_cfg(example_dir, tmp_path, cv_repeats="4"))
    status = {s: changed.stages[s]["status"] for s in pipeline.STAGES}
    assert status["forecast"] == "ran" and status["report"] == "ran"
    assert all(status[s] == "skipped" for s in ("parse", "topics", "classify", "stages", "trees", "qstat"))


def test_tampered_output_triggers_rerun(example_dir, tmp_path):
    cfg = _cfg(example_dir, tmp_path)
    pipeline.run_pipeline(cfg, ["parse"])
    (tmp_path / "corpus.csv").write_text("tampered\n")
    again = pipeline.run_pipeline(cfg, ["parse"])
    assert again.stages["parse"]["status"] == "ran"


def test_partial_run_marks_sections_not_run(example_dir, tmp_path):
    cfg = _cfg(example_dir, tmp_path)
    manifest = pipeline.run_pipeline(cfg, ["stages", "report"])
    assert set(manifest.order) == {"parse", "topics", "classify", "stages", "report"}
    report = json.loads((tmp_path / "report.json").read_text())
    jsonschema.validate(report, pipeline.REPORT_SCHEMA)
    assert report["forecast"] == {"status": "not run"}
    assert report["trees"] == {"status": "not run"}
    assert report["stages"]["status"] == "ok"


def test_schedule_adds_prerequisites():
    assert pipeline.schedule(["forecast"]) == ["parse", "topics", "classify", "forecast"]
    assert pipeline.schedule(["trees"]) == ["parse", "topics", "classify", "stages", "trees"]
    assert pipeline.schedule(["parse"]) == ["parse"]


def test_missing_gazetteer_is_named(example_dir, tmp_path):
    bad = tmp_path / "in"
    shutil.copytree(example_dir, bad)
    (bad / "gazetteer.tsv").unlink()
    with pytest.raises(ConfigInvalid) as info:
        pipeline.load_config(bad / "pipeline.ini")
    assert "inputs.gazetteer" in str(info.value)


@pytest.mark.parametrize("key,value,field", [
    ("seed", "abc", "seed"), ("min_year", "2030", "min_year"), ("beta", "-1", "beta"),
    ("cv_folds", "1", "cv_folds"), ("q_permutations", "10", "q_permutations"),
    ("direction_k", "10 9", "direction_k"), ("no_such_key", "1", "no_such_key"),
])
def test_invalid_settings_are_named(example_dir, tmp_path, key, value, field):
    with pytest.raises(ConfigInvalid) as info:
        pipeline.load_config(example_dir / "pipeline.ini", {key: value}, tmp_path)
    assert field in str(info.value)


def test_output_dir_priority(example_dir, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert pipeline.load_config(example_dir / "pipeline.ini").output_dir.name == "difftree-out"
    monkeypatch.setenv(pipeline.OUTPUT_DIR_ENV, str(tmp_path / "from-env"))
    assert pipeline.load_config(example_dir / "pipeline.ini").output_dir == tmp_path / "from-env"
    assert pipeline.load_config(example_dir / "pipeline.ini", output_dir=tmp_path / "arg").output_dir \
        == tmp_path / "arg"


def _bad_label_map(example_dir, tmp_path):
    bad = tmp_path / "in"
    shutil.copytree(example_dir, bad)
    lines = (bad / "label_map.ini").read_text().splitlines()
    # drop the first topic mapping so one topic has no direction
    first = next(i for i, line in enumerate(lines) if "=" in line and not line.lstrip().startswith("#"))
    (bad / "label_map.ini").write_text("\n".join(lines[:first] + lines[first + 1:]) + "\n")
    return bad


def test_stage_failure_leaves_partial_manifest(example_dir, tmp_path):
    bad = _bad_label_map(example_dir, tmp_path)
    out = tmp_path / "out"
    cfg = pipeline.load_config(bad / "pipeline.ini", FAST, out)
    with pytest.raises(StageFailure) as info:
        pipeline.run_pipeline(cfg)
    assert info.value.stage == "classify"
    manifest = pipeline.load_manifest(out)
    assert manifest.stages["classify"]["status"] == "failed"
    assert manifest.stages["topics"]["status"] == "ran"
    assert "forecast" not in manifest.stages


# ---------------------------------------------------------------------------
# command line


def _fast_flags():
    return [f"--set={k}={v}" for k, v in FAST.items()]


def test_cli_all_prints_statuses_and_report(example_dir, tmp_path, capsys):
    code = main(["all", "-c", str(example_dir / "pipeline.ini"), "-o", str(tmp_path), *_fast_flags()])
    out = capsys.readouterr().out
    assert code == 0
    assert "report    ran" in out and "difftree report" in out


def test_cli_flags_override_config(example_dir, tmp_path):
    code = main(["parse", "-c", str(example_dir / "pipeline.ini"), "-o", str(tmp_path), "--seed", "5",
                 "--set", "min_year=2012", "--set", "parameters.max_year=2019"])
    assert code == 0
    report = json.loads((tmp_path / "parse_report.json").read_text())
    years = [json.loads(line)["year"] for line in (tmp_path / "corpus.jsonl").read_text().splitlines()]
    assert min(years) >= 2012 and max(years) <= 2019
    assert report["after_year_filter"] == len(years)


def test_cli_env_output_dir(example_dir, tmp_path, monkeypatch):
    monkeypatch.setenv(pipeline.OUTPUT_DIR_ENV, str(tmp_path / "env-out"))
    assert main(["parse", "-c", str(example_dir / "pipeline.ini")]) == 0
    assert (tmp_path / "env-out" / "manifest.json").is_file()


def test_cli_exit_codes(example_dir, tmp_path, capsys):
    assert main(["parse", "-c", str(tmp_path / "missing.ini")]) == 2
    assert main(["parse", "-c", str(example_dir / "pipeline.ini"), "--set", "bogus"]) == 2
    bad = _bad_label_map(example_dir, tmp_path)
    assert main(["classify", "-c", str(bad / "pipeline.ini"), "-o", str(tmp_path / "o"), *_fast_flags()]) == 3
    assert "classify" in capsys.readouterr().err


def test_cli_standalone_qstat(tmp_path, capsys):
    path = tmp_path / "s.csv"
    path.write_text("value,stratum\n1,A\n2,A\n3,B\n6,B\n")
    assert main(["qstat", "--csv", str(path), "--permutations", "99", "--seed", "3"]) == 0
    out = capsys.readouterr().out.strip()
    assert out.startswith("q=0.642857 ssw=5 sst=14 p=")
    assert out.endswith("n_perm=99 seed=3")
