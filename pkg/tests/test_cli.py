"""
Command-line tests: subcommands, exit codes and error rendering.
"""
import json

import pytest

from kvtier.cli.log import logger
from kvtier.config import TRACE_PRESETS
from kvtier.main import main
from kvtier.services.metrics import read_reports
from kvtier.services.trace import read_trace

TINY = ["--layers", "2", "--prompt-len", "8", "--decode-len", "4", "--entry-bytes", "64", "--weight-bytes", "128"]


def write_config(tmp_path, **kw) -> str:
    doc = {
        "memory": {"hbm_capacity": 2 * 128 + 6 * 64},
        "trace": {
            "header": {"num_layers": 2, "prompt_len": 8, "decode_len": 4, "entry_bytes": 64,
                       "weight_bytes_per_layer": 128},
            "sparsity": 0.5,
            "churn": 0.3,
            "seed": 2,
        },
        "policies": [{"kind": "static"}],
        "sa": {"max_iters": 10},
        "output_dir": str(tmp_path / "out"),
    }
    doc.update(kw)
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.fixture(autouse=True)
def detach_log_handlers():
    yield
    for handler in list(logger.handlers):
        logger.removeHandler(handler)


def stderr_detail(capsys) -> dict:
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


# ============================================================================
# gen-trace
# ============================================================================

@pytest.mark.parametrize("preset", ["low-variation", "high-variation"])
def test_gen_trace_presets(tmp_path, capsys, preset):
    out = tmp_path / f"{preset}.kvtrace"
    assert main(["gen-trace", "--out", str(out), "--preset", preset, "--seed", "4", *TINY]) == 0
    trace = read_trace(out)
    assert len(trace.steps) == 8
    printed = capsys.readouterr().out
    assert "mean_set_size" in printed
    assert "kv_footprint_bytes: 1536" in printed
    assert "preset: " + TRACE_PRESETS[preset]["name"] in printed


def test_gen_trace_help_describes_presets(capsys):
    with pytest.raises(SystemExit) as err:
        main(["gen-trace", "--help"])
    assert err.value.code == 0
    text = " ".join(capsys.readouterr().out.split())
    for key, preset in TRACE_PRESETS.items():
        assert f"{key}: {preset['name']}" in text
        assert preset["description"] in text


def test_gen_trace_is_seeded(tmp_path):
    a, b = tmp_path / "a.kvtrace", tmp_path / "b.kvtrace"
    main(["gen-trace", "--out", str(a), "--seed", "9", "--quiet", *TINY])
    main(["gen-trace", "--out", str(b), "--seed", "9", "--quiet", *TINY])
    assert a.read_bytes() == b.read_bytes()


def test_gen_trace_rejects_full_sparsity(tmp_path, capsys):
    code = main(["gen-trace", "--out", str(tmp_path / "x.kvtrace"), "--sparsity", "1.0", *TINY])
    assert code == 2
    assert stderr_detail(capsys)["code"] == "SPEC_INVALID"
    assert not (tmp_path / "x.kvtrace").exists()


# ============================================================================
# convert-scores
# ============================================================================

def test_convert_scores(tmp_path):
    scores = tmp_path / "scores.txt"
    scores.write_text("1 0 0.1,0.9,0.3\n")
    out = tmp_path / "t.kvtrace"
    args = ["convert-scores", "--scores", str(scores), "--sparsity", "0.34", "--out", str(out),
            "--layers", "1", "--prompt-len", "3", "--decode-len", "1", "--quiet"]
    assert main(args) == 0
    assert out.read_text() == "KVTRACE v1 L=1 P=3 N=1 E=4096 W=0\n1 0 1,2\n"


def test_convert_scores_missing_file(tmp_path, capsys):
    code = main(["convert-scores", "--scores", str(tmp_path / "none.txt"), "--sparsity", "0.5",
                 "--out", str(tmp_path / "t.kvtrace")])
    assert code == 2
    assert stderr_detail(capsys)["code"] == "TRACE_NOT_FOUND"


def test_convert_scores_bad_row(tmp_path, capsys):
    scores = tmp_path / "scores.txt"
    scores.write_text("1 0 0.1,0.9\n")
    code = main(["convert-scores", "--scores", str(scores), "--sparsity", "0.5", "--out", str(tmp_path / "t"),
                 "--layers", "1", "--prompt-len", "3", "--decode-len", "1"])
    assert code == 2
    detail = stderr_detail(capsys)
    assert detail["code"] == "SCORE_FORMAT"
    assert detail["context"]["n"] == 1


# ============================================================================
# run
# ============================================================================

def test_run_single_policy(tmp_path, capsys):
    assert main(["run", write_config(tmp_path)]) == 0
    reports = read_reports(tmp_path / "out" / "reports.csv")
    assert [r.policy for r in reports] == ["static"]
    assert "vs_static" in capsys.readouterr().out


def test_run_output_dir_and_seed_override(tmp_path):
    config = write_config(tmp_path, policies=[{"kind": "sa"}])
    assert main(["run", config, "--output-dir", str(tmp_path / "a"), "--seed", "3", "--quiet"]) == 0
    assert main(["run", config, "--output-dir", str(tmp_path / "b"), "--seed", "3", "--quiet"]) == 0
    assert (tmp_path / "a" / "sa_log.csv").read_bytes() == (tmp_path / "b" / "sa_log.csv").read_bytes()
    assert not (tmp_path / "out").exists()


def test_run_per_step(tmp_path):
    assert main(["run", write_config(tmp_path), "--per-step", "--quiet"]) == 0
    assert (tmp_path / "out" / "per_step_0_static.csv").is_file()


def test_run_missing_trace(tmp_path, capsys):
    config = write_config(tmp_path, trace="missing.kvtrace")
    assert main(["run", config]) == 2
    detail = stderr_detail(capsys)
    assert detail["code"] == "TRACE_NOT_FOUND"
    assert detail["context"]["path"].endswith("missing.kvtrace")


def test_run_missing_config(tmp_path, capsys):
    assert main(["run", str(tmp_path / "nope.json")]) == 2
    assert stderr_detail(capsys)["code"] == "CONFIG_INVALID"


def test_run_invalid_field_path(tmp_path, capsys):
    config = write_config(tmp_path, policies=[{"kind": "page", "page_size": 0}])
    assert main(["run", config]) == 2
    detail = stderr_detail(capsys)
    assert "policies.0" in detail["message"]


def test_run_bad_sweep_value(tmp_path, capsys):
    config = write_config(tmp_path, sweep={"axis": "sparsity", "values": [0.5, 1.0]})
    assert main(["run", config]) == 2
    detail = stderr_detail(capsys)
    assert detail["code"] == "CONFIG_INVALID"
    assert detail["context"]["fields"] == ["sweep.values.1"]
    assert not (tmp_path / "out").exists()


def test_run_negative_seed(tmp_path, capsys):
    assert main(["run", write_config(tmp_path), "--seed=-1"]) == 2
    detail = stderr_detail(capsys)
    assert detail["code"] == "CONFIG_INVALID"
    assert detail["context"]["fields"] == ["seed"]


def test_run_infeasible_memory(tmp_path, capsys):
    config = write_config(tmp_path, memory={"hbm_capacity": 10})
    assert main(["run", config]) == 3
    detail = stderr_detail(capsys)
    assert detail["code"] == "CAPACITY_EXCEEDED"
    assert detail["context"]["policy"] == "static"


def test_jobs_must_be_positive(tmp_path, capsys):
    assert main(["run", write_config(tmp_path), "--jobs", "0"]) == 2
    assert stderr_detail(capsys)["context"] == {"jobs": 0}


def test_unknown_command_exits_with_usage():
    with pytest.raises(SystemExit) as err:
        main(["frobnicate"])
    assert err.value.code == 2
