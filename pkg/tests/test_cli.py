import json
import textwrap
from pathlib import Path

import pytest

from onefactor.cli import dumps, load_config, main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text))
    return str(p)


def test_dumps_is_deterministic_and_handles_nonfinite():
    doc = {"b": float("nan"), "a": [1, 0.1, float("inf")], "c": True, "d": None}
    text = dumps(doc)
    assert text.index('"a"') < text.index('"b"')
    assert '"nan"' in text and '"inf"' in text and "0.10000000000000001" in text
    assert json.loads(text)["c"] is True


def test_config_inline_comments_and_quotes(tmp_path):
    cfg = load_config(
        write(
            tmp_path,
            """
            [constants]
            k = 2   # mean reversion
            [model]
            sigma = "0.2"
            [grid]
            n_x = 101 ; points
            [tol]
            residual_tol = 1e-9
            [output]
            name = demo
            """,
        )
    )
    assert cfg.constants["k"] == 2.0
    assert cfg.section("model")["sigma"] == "0.2"
    assert cfg.grid.n_x == 101 and cfg.residual_tol == 1e-9 and cfg.name == "demo"


def test_classify_constant(tmp_path):
    assert main(["classify", "--config", str(CONFIGS / "constant.ini"), "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "constant_classify.json").read_text())
    assert doc["case"] == "Corollary/CaseA"
    assert abs(doc["constants"]["m"] - 2.0) <= 1e-8
    assert [f["label"] for f in doc["fields"]] == ["Z1", "Z2", "Z3", "Z4"]


def test_classify_negative_control(tmp_path):
    cfg = write(tmp_path, "[model]\nsigma = 1\ndrift = x^3\n[output]\nname = cubic\n")
    assert main(["classify", "--config", cfg, "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "cubic_classify.json").read_text())
    assert doc["case"] == "None" and doc["counts"]["total"] == "0+1+1+∞"


def test_classify_heat_form(tmp_path):
    assert main(["classify", "--config", str(CONFIGS / "heat.ini"), "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "heat_classify.json").read_text())["case"] == "HeatForm"


@pytest.mark.parametrize("cfg", ["schwartz_verify.ini", "exp_perturbation.ini", "exp_limit.ini"])
def test_verify_passes(cfg, tmp_path):
    assert main(["verify", "--config", str(CONFIGS / cfg), "--out", str(tmp_path)]) == 0


def test_verify_documented_failure_exit_code(tmp_path):
    cfg = write(tmp_path, "[verify]\nselector = stated-power-sigma\nm = 1\nc1 = 0.5\n[output]\nname = pw\n")
    assert main(["verify", "--config", cfg, "--out", str(tmp_path)]) == 1
    doc = json.loads((tmp_path / "pw_verify.json").read_text())
    assert doc["status"] == "documented discrepancy" and doc["discrepancy"] == "power-sigma-drift"


def test_verify_user_expression(tmp_path):
    cfg = write(
        tmp_path,
        """
        [model]
        sigma = 1
        drift = x
        [verify]
        selector = expr
        lnF = exp(-t)*x + exp(-2*t)*(-0.25)
        [grid]
        n_t = 201
        """,
    )
    assert main(["verify", "--config", cfg, "--out", str(tmp_path)]) == 0


def test_tol_override(tmp_path):
    args = ["verify", "--config", str(CONFIGS / "schwartz_verify.ini"), "--out", str(tmp_path)]
    assert main(args + ["--tol", "1e-14"]) == 1
    assert main(args + ["--tol", "-1"]) == 2


@pytest.mark.parametrize(
    "text",
    [
        "[model]\nsigma = 1 +\ndrift = x\n",
        "[model]\nsigma = 1\n",
        "[model]\nsigma = y\ndrift = x\n",
        "[model]\nsigma = 1\ndrift = x\n[grid]\nn_x = 4\n",
        "not an ini file",
    ],
)
def test_input_errors(text, tmp_path):
    assert main(["classify", "--config", write(tmp_path, text), "--out", str(tmp_path)]) == 2


def test_missing_config_file(tmp_path):
    assert main(["classify", "--config", str(tmp_path / "none.ini")]) == 2


def test_unknown_selector(tmp_path):
    cfg = write(tmp_path, "[verify]\nselector = banana\n")
    assert main(["verify", "--config", cfg, "--out", str(tmp_path)]) == 2


def test_numerical_failure_exit_code(tmp_path):
    # explicit Euler far beyond its stability limit
    cfg = write(
        tmp_path,
        """
        [model]
        sigma = 1
        drift = 0
        [solve]
        g = exp(-x^2)
        theta = 0
        [grid]
        n_x = 201
        n_t = 3
        """,
    )
    assert main(["solve", "--config", cfg, "--out", str(tmp_path)]) == 3


def test_profiles_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["profiles", "--config", str(CONFIGS / "profiles.ini"), "--out", str(out)]) == 0
    names = sorted(p.name for p in a.iterdir())
    assert "exp_perturbation_eps0.1_t1.csv" in names and "sine_perturbation_eps0.01_t1.csv" in names
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()


def test_timedep_command(tmp_path):
    assert main(["timedep", "--config", str(CONFIGS / "timedep.ini"), "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "timedep_timedep.json").read_text())["dimension"] == 6


def test_solve_command(tmp_path):
    assert main(["solve", "--config", str(CONFIGS / "solve_schwartz.ini"), "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "solve_schwartz_solve.json").read_text())
    assert doc["compare"]["max_rel_error"] <= 1e-4
