import json
from pathlib import Path

import pandas as pd
import pytest

from app.main import main

DEMO_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "demo_integrator.json"
ARTIFACTS = ("constants.json", "net.csv", "words.csv", "bundle.csv", "funnel.csv", "bundle_oracle.csv", "distance.csv")

DEMO = {
    "system": {"catalog": "integrator"},
    "instance": {"t0": 0.0, "theta": 1.0, "x0": [0.0], "p": 2.0, "r": 1.0},
    "plan": {"beta": 1.0, "N": 1, "q": 1, "sigma": 1.0},
    "oracle": {"substeps": 8},
    "sampling": {"validation_samples": 2000, "covering_samples": 2000},
    "seed": 7,
}


@pytest.fixture(autouse=True)
def isolated(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    for variable in ("FUNNELKIT_SEED", "FUNNELKIT_WORD_CAP", "FUNNELKIT_OUT_DIR", "LOG_LEVEL"):
        monkeypatch.delenv(variable, raising=False)


def write_config(tmp_path, name="run.json", **sections):
    data = {**DEMO, **sections}
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def read_json(path):
    return json.loads(path.read_text())


class TestRun:
    def test_demo_pipeline(self, tmp_path):
        out = tmp_path / "out"
        assert main(["run", "--config", write_config(tmp_path), "--out", str(out)]) == 0

        funnel = pd.read_csv(out / "funnel.csv")
        assert len(funnel) == 4
        assert funnel.groupby("i").size().tolist() == [1, 3]
        assert sorted(funnel.loc[funnel["i"] == 1, "x1"]) == [-1.0, 0.0, 1.0]

        manifest = read_json(out / "manifest.json")
        assert manifest["counts"]["words"] == 3
        assert manifest["counts"]["slice_sizes"] == [1, 3]
        assert manifest["counts"]["h_uniform"] <= 1e-12
        assert manifest["config"]["command"] == "run"
        assert manifest["config"]["seed"] == 7
        for name in ARTIFACTS:
            assert name in manifest["files"]
        assert "seconds" not in manifest["counts"]

    def test_constants_payload(self, tmp_path):
        out = tmp_path / "out"
        assert main(["derive", "--config", write_config(tmp_path), "--out", str(out)]) == 0
        payload = read_json(out / "constants.json")
        assert set(payload) == {"system", "instance", "constants", "plan", "modulus", "error_budget"}
        assert payload["plan"]["N"] == 1

    def test_zero_budget_gives_one_trajectory(self, tmp_path):
        config = write_config(tmp_path, instance={**DEMO["instance"], "r": 0.0})
        out = tmp_path / "out"
        assert main(["run", "--config", config, "--out", str(out)]) == 0
        assert read_json(out / "manifest.json")["counts"]["words"] == 1
        assert len(pd.read_csv(out / "funnel.csv")) == 2

    @pytest.mark.parametrize("planar", [False, True])
    def test_reruns_are_byte_identical(self, tmp_path, planar):
        config = str(DEMO_CONFIG)
        if planar:
            config = write_config(tmp_path, system={"catalog": "rotator"}, instance={"x0": [0.5, -0.25]},
                                  plan={"beta": 2.0, "N": 2, "q": 2, "sigma": 1.0})
        first, second = tmp_path / "first", tmp_path / "second"
        assert main(["run", "--config", config, "--out", str(first)]) == 0
        assert main(["run", "--config", config, "--out", str(second)]) == 0
        for name in ARTIFACTS:
            assert (first / name).read_bytes() == (second / name).read_bytes(), name


class TestFailures:
    def test_net_cap_exits_with_capacity_code(self, tmp_path):
        config = write_config(tmp_path, system={"catalog": "rotator"}, instance={"x0": [0.0, 0.0]},
                              plan={"beta": 1.0, "N": 1, "q": 1, "sigma": 1e-4}, caps={"net_points": 100})
        out = tmp_path / "out"
        assert main(["run", "--config", config, "--out", str(out)]) == 2
        record = read_json(out / "error.json")
        assert record["error"] == "CapacityError"
        assert record["details"]["cap"] == 100
        assert not (out / "manifest.json").exists()

    def test_word_cap_flag(self, tmp_path):
        out = tmp_path / "out"
        assert main(["enumerate", "--config", write_config(tmp_path), "--out", str(out), "--cap", "2"]) == 2
        assert read_json(out / "error.json")["details"]["found"] == 3

    def test_invalid_config(self, tmp_path):
        config = write_config(tmp_path, plan={"epsilon": 1.0, "beta": 1.0})
        out = tmp_path / "out"
        assert main(["derive", "--config", config, "--out", str(out)]) == 1
        record = read_json(out / "error.json")
        assert record["error"] == "InputValidationError"
        assert any("mode conflict" in error for error in record["details"]["errors"])

    def test_dsl_syntax_error(self, tmp_path):
        system = {"expressions": ["x1 + * u1"], "n": 1, "m": 1, "gamma1": 1, "gamma2": 0, "gamma3": 1, "c": 1}
        out = tmp_path / "out"
        assert main(["derive", "--config", write_config(tmp_path, system=system), "--out", str(out)]) == 1
        assert "position" in read_json(out / "error.json")["details"]

    def test_study_without_plans(self, tmp_path):
        assert main(["study", "--config", write_config(tmp_path), "--out", str(tmp_path / "out")]) == 1


class TestSubcommands:
    def test_count_only(self, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["enumerate", "--config", write_config(tmp_path), "--out", str(out), "--count-only"]) == 0
        assert "words=3" in capsys.readouterr().out
        assert not (out / "words.csv").exists()
        assert read_json(out / "manifest.json")["counts"] == {"words": 3}

    def test_enumerate_writes_words(self, tmp_path):
        out = tmp_path / "out"
        assert main(["enumerate", "--config", write_config(tmp_path), "--out", str(out)]) == 0
        assert len(pd.read_csv(out / "words.csv")) == 3

    def test_net(self, tmp_path):
        out = tmp_path / "out"
        assert main(["net", "--config", write_config(tmp_path), "--out", str(out)]) == 0
        counts = read_json(out / "manifest.json")["counts"]
        assert counts["net_points"] == 2
        assert counts["covering_passed"] is True

    def test_oracle_funnel(self, tmp_path):
        out = tmp_path / "out"
        assert main(["funnel", "--config", write_config(tmp_path), "--out", str(out), "--mode", "oracle"]) == 0
        assert len(pd.read_csv(out / "funnel_oracle.csv")) == 4

    def test_distance(self, tmp_path):
        out = tmp_path / "out"
        assert main(["distance", "--config", write_config(tmp_path), "--out", str(out)]) == 0
        table = pd.read_csv(out / "distance.csv")
        assert table["metric"].tolist() == ["uniform", "slice_theta", "funnel"]
        assert (table["hausdorff"] <= 1e-12).all()

    def test_validate(self, tmp_path):
        out = tmp_path / "out"
        assert main(["validate", "--config", write_config(tmp_path), "--out", str(out)]) == 0
        report = read_json(out / "validation.json")
        assert report["growth"]["violations"] == 0
        assert report["lipschitz"]["violations"] == 0

    def test_study(self, tmp_path):
        study = {
            "plans": [
                {"label": "coarse", "beta": 8.0, "N": 2, "q": 2, "sigma": 2.0},
                {"label": "medium", "beta": 8.0, "N": 4, "q": 4, "sigma": 1.0},
                {"label": "fine", "beta": 8.0, "N": 8, "q": 8, "sigma": 0.5},
            ],
            "reference_points": [[-1.0], [-0.5], [0.0], [0.5], [1.0]],
        }
        config = write_config(tmp_path, plan={"beta": 8.0, "N": 2, "q": 2, "sigma": 2.0, "omega_slope": 0.0},
                              study=study)
        out = tmp_path / "out"
        assert main(["study", "--config", config, "--out", str(out)]) == 0
        table = pd.read_csv(out / "study.csv")
        assert table["label"].tolist() == ["coarse", "medium", "fine"]
        assert table["slice_directed"].tolist() == pytest.approx([1.0, 0.5, 0.0])
        assert read_json(out / "manifest.json")["counts"]["study_rows"] == 3
