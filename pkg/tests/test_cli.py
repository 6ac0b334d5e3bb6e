import json

import pytest

from priornav.cli import main


@pytest.fixture(scope="module")
def suite_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_suite")
    code = main([
        "generate", "--seed", "321", "--episodes", "2",
        "--landmarks-min", "3", "--landmarks-max", "4", "--out", str(out),
    ])
    assert code == 0
    return out


def read_stdout(capsys):
    return capsys.readouterr().out


class TestGenerate:
    def test_writes_manifest_and_episodes(self, suite_dir):
        manifest = json.loads((suite_dir / "suite.json").read_text())
        assert manifest["seed"] == 321
        assert len(manifest["episodes"]) == 2
        for name in manifest["episodes"]:
            assert (suite_dir / name).exists()


class TestRun:
    def test_run_writes_reports_and_prints_summary(self, suite_dir, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"detector": "oracle", "navigator": "oracle", "budget": 80}))
        out_dir = tmp_path / "run"
        code = main([
            "run", "--suite", str(suite_dir), "--config", str(cfg),
            "--parallelism", "2", "--out-dir", str(out_dir),
        ])
        assert code == 0
        printed = json.loads(read_stdout(capsys))
        assert printed["episodes"] == 2
        assert (out_dir / "results.csv").exists()
        assert (out_dir / "summary.json").exists()
        on_disk = json.loads((out_dir / "summary.json").read_text())
        assert on_disk == printed

    def test_bad_config_exits_2(self, suite_dir, tmp_path, capsys):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"policy": {"alpa": 0.5}}))
        code = main(["run", "--suite", str(suite_dir), "--config", str(cfg)])
        assert code == 2
        assert "error" in capsys.readouterr().err

    def test_missing_suite_exits_2(self, tmp_path, capsys):
        code = main(["run", "--suite", str(tmp_path / "missing")])
        assert code == 2

    def test_unreadable_episode_exits_3(self, suite_dir, tmp_path, capsys):
        import shutil

        broken = tmp_path / "broken"
        shutil.copytree(suite_dir, broken)
        (broken / "episode_000.json").write_text("{")
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"detector": "oracle", "navigator": "oracle", "budget": 30}))
        code = main(["run", "--suite", str(broken), "--config", str(cfg)])
        assert code == 3
        printed = json.loads(read_stdout(capsys))
        assert printed["errors"][0]["id"] == "episode_000"


@pytest.fixture(scope="module")
def finished_run(suite_dir, tmp_path_factory):
    out_dir = tmp_path_factory.mktemp("finished")
    cfg = out_dir / "cfg.json"
    cfg.write_text(json.dumps({"detector": "oracle", "navigator": "oracle", "budget": 80}))
    assert main([
        "run", "--suite", str(suite_dir), "--config", str(cfg),
        "--out-dir", str(out_dir / "run"),
    ]) in (0, 3)
    return out_dir / "run"


class TestMetricsAndPlot:
    def test_metrics_recomputes_stored_scores(self, suite_dir, finished_run, capsys):
        code = main(["metrics", "--suite", str(suite_dir), "--run-dir", str(finished_run)])
        assert code == 0
        recomputed = json.loads(read_stdout(capsys))
        stored = json.loads((finished_run / "summary.json").read_text())
        for key in ("sr", "spl", "osr", "ndtw"):
            assert recomputed[key] == pytest.approx(stored[key], abs=1e-12)

    def test_metrics_without_run_dir_exits_2(self, suite_dir, tmp_path, capsys):
        code = main(["metrics", "--suite", str(suite_dir), "--run-dir", str(tmp_path / "nope")])
        assert code == 2

    def test_plot_overlay(self, suite_dir, finished_run, tmp_path, capsys):
        out = tmp_path / "ep.svg"
        code = main([
            "plot", "--episode", str(suite_dir / "episode_000.json"),
            "--run-dir", str(finished_run), "--out", str(out),
        ])
        assert code == 0
        body = out.read_text()
        assert body.startswith("<svg")
        assert "<ellipse" in body and "<polyline" in body

    def test_plot_scene_only(self, suite_dir, tmp_path, capsys):
        out = tmp_path / "bare.svg"
        code = main(["plot", "--episode", str(suite_dir / "episode_001.json"), "--out", str(out)])
        assert code == 0
        assert "<ellipse" not in out.read_text()


class TestParse:
    def test_text_round_trip(self, capsys):
        code = main(["parse", "--text", "go forward to the piano. stop at the table."])
        assert code == 0
        ir = json.loads(read_stdout(capsys))
        assert [lm["label"] for lm in ir["landmarks"]] == ["piano", "table"]

    def test_ir_file_validates(self, tmp_path, capsys):
        assert main(["parse", "--text", "stop at the sofa."]) == 0
        ir_json = read_stdout(capsys)
        p = tmp_path / "ir.json"
        p.write_text(ir_json)
        assert main(["parse", "--ir", str(p)]) == 0
        assert json.loads(read_stdout(capsys)) == json.loads(ir_json)

    def test_unparseable_text_exits_2(self, capsys):
        code = main(["parse", "--text", "interpretive dance toward the fridge"])
        assert code == 2
        assert "error" in capsys.readouterr().err

    def test_invalid_ir_file_exits_2(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps({"landmarks": []}))
        code = main(["parse", "--ir", str(p)])
        assert code == 2
