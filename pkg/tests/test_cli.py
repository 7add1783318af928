import json

import numpy as np
import pytest

from duedl import cli, synthdata, tnsr

TINY = ["--epochs", "1", "--base-width", "2", "--depth", "1", "--batch-size", "4"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert cli.main(["generate-data", "--out", str(data), "--n", "8", "--n-val", "2", "--n-test", "2",
                     "--size", "32", "--seed", "1"]) == 0
    assert cli.main(["train", "--data", str(data), "--out", str(root / "run"), "--quiet", "--seed", "2"] + TINY) == 0
    return root


class TestCommands:
    def test_generate_matches_library(self, workspace):
        ds = synthdata.read(workspace / "data")
        ref = synthdata.generate(1, 8, 32, 32, n_val=2, n_test=2)
        np.testing.assert_array_equal(ds.samples["s00003"].image, ref.samples["s00003"].image)

    def test_train_outputs(self, workspace):
        run = json.loads((workspace / "run" / "run.json").read_text())
        assert run["config"]["seed"] == 2 and run["config"]["epochs"] == 1
        assert len(run["epochs"]) == 1
        assert (workspace / "run" / "checkpoint" / "index.json").exists()

    def test_config_file_and_flag_precedence(self, workspace, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"epochs": 3, "lr": 0.5, "base_width": 2, "depth": 1}))
        assert cli.main(["train", "--data", str(workspace / "data"), "--out", str(tmp_path / "r"),
                         "--config", str(cfg), "--epochs", "1", "--quiet"]) == 0
        run = json.loads((tmp_path / "r" / "run.json").read_text())
        assert run["config"]["epochs"] == 1 and run["config"]["lr"] == 0.5

    def test_evaluate_and_report(self, workspace, capsys):
        out = workspace / "eval"
        assert cli.main(["evaluate", "--checkpoint", str(workspace / "run" / "checkpoint"),
                         "--data", str(workspace / "data"), "--out", str(out), "--csv"]) == 0
        rep = json.loads((out / "report.json").read_text())
        assert rep["count"] == 2 and len(rep["per_sample"]) == 2
        assert (out / "report.csv").read_text().startswith("name,mean_dice")
        capsys.readouterr()
        assert cli.main(["report", str(out / "report.json"), "--format", "csv"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 2 and lines[1].startswith("report,")

    def test_predict(self, workspace):
        out = workspace / "pred"
        assert cli.main(["predict", "--checkpoint", str(workspace / "run" / "checkpoint"),
                         "--data", str(workspace / "data"), "--out", str(out)]) == 0
        p = tnsr.load(out / "s00010.p.tnsr")
        u = tnsr.load(out / "s00010.u.tnsr")
        lab = tnsr.load(out / "s00010.labels.tnsr")
        assert p.shape == (4, 32, 32) and u.shape == (32, 32) and lab.shape == (32, 32)
        np.testing.assert_allclose(p.sum(axis=0), 1.0, atol=1e-12)
        np.testing.assert_array_equal(lab, p.argmax(axis=0))

    def test_corrupt(self, workspace):
        out = workspace / "noisy"
        assert cli.main(["corrupt", "--in", str(workspace / "data"), "--out", str(out),
                         "--kind", "blur", "--sigma", "0.05"]) == 0
        assert synthdata.read(out).generator["corruption"]["kind"] == "blur"

    def test_protocol_robustness_with_checkpoint(self, workspace, capsys):
        out = workspace / "rob"
        assert cli.main(["protocol", "robustness", "--data", str(workspace / "data"), "--out", str(out),
                         "--checkpoint", str(workspace / "run" / "checkpoint")]) == 0
        doc = json.loads((out / "robustness.json").read_text())
        assert sorted(doc) == ["sigma=0.05", "sigma=0.1", "sigma=0.15"]
        assert "sigma=0.1" in capsys.readouterr().out


class TestExitCodes:
    def test_usage(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["train"])
        assert exc.value.code == cli.EXIT_USAGE
        with pytest.raises(SystemExit) as exc:
            cli.main(["no-such-command"])
        assert exc.value.code == cli.EXIT_USAGE

    def test_bad_config_value(self, workspace, tmp_path):
        assert cli.main(["train", "--data", str(workspace / "data"), "--out", str(tmp_path),
                         "--lr", "-1"]) == cli.EXIT_USAGE

    def test_ood_protocol_needs_data(self, workspace, tmp_path):
        assert cli.main(["protocol", "ood", "--data", str(workspace / "data"),
                         "--out", str(tmp_path)]) == cli.EXIT_USAGE

    def test_missing_dataset(self, tmp_path):
        assert cli.main(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path)]) == cli.EXIT_DATA

    def test_corrupt_checkpoint(self, workspace, tmp_path):
        import shutil
        ck = tmp_path / "ck"
        shutil.copytree(workspace / "run" / "checkpoint", ck)
        (ck / "params.tnsr").write_bytes(b"garbage")
        assert cli.main(["evaluate", "--checkpoint", str(ck), "--data", str(workspace / "data"),
                         "--out", str(tmp_path / "e")]) == cli.EXIT_DATA

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence(self, workspace, tmp_path):
        code = cli.main(["train", "--data", str(workspace / "data"), "--out", str(tmp_path), "--quiet",
                         "--lr", "1e300", "--epochs", "3", "--base-width", "2", "--depth", "1"])
        assert code == cli.EXIT_NUMERIC
