import json

import pytest

from chainforge.cli import main
from chainforge.module_db import default_database, save_database


@pytest.fixture()
def scene_path(tmp_path, db_path):
    path = tmp_path / "scene.json"
    code = main(
        [
            "synth",
            "--chain",
            "I-T0-G0",
            "--db",
            str(db_path),
            "--joints",
            "10,20",
            "--seed",
            "7",
            "--out",
            str(path),
        ]
    )
    assert code == 0
    return path


class TestSynth:
    def test_marker_count(self, scene_path):
        doc = json.loads(scene_path.read_text())
        assert len(doc) == 4  # three masters plus the collinear joint's bundle

    def test_deterministic(self, tmp_path, db_path):
        paths = []
        for name in ("a.json", "b.json"):
            path = tmp_path / name
            assert (
                main(
                    [
                        "synth",
                        "--chain",
                        "I-T0-G0",
                        "--db",
                        str(db_path),
                        "--joints",
                        "0,30",
                        "--seed",
                        "7",
                        "--out",
                        str(path),
                    ]
                )
                == 0
            )
            paths.append(path)
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_bad_chain(self, tmp_path, db_path, capsys):
        code = main(
            [
                "synth",
                "--chain",
                "X0",
                "--db",
                str(db_path),
                "--joints",
                "",
                "--seed",
                "1",
                "--out",
                str(tmp_path / "s.json"),
            ]
        )
        assert code == 1
        assert "position 0" in capsys.readouterr().err


class TestIdentify:
    def test_prints_chain_and_thetas(self, scene_path, db_path, capsys):
        assert main(["identify", "--scene", str(scene_path), "--db", str(db_path)]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0] == "I-T0-G0"
        assert out[1].startswith("theta I-001 10.0")
        assert out[2].startswith("theta T-001 20.0")

    def test_writes_model(self, scene_path, db_path, tmp_path, capsys):
        out_path = tmp_path / "robot.model.json"
        assert (
            main(
                [
                    "identify",
                    "--scene",
                    str(scene_path),
                    "--db",
                    str(db_path),
                    "--out",
                    str(out_path),
                    "--format",
                    "json",
                ]
            )
            == 0
        )
        doc = json.loads(out_path.read_text())
        assert doc["metadata"]["description"] == ["I-T0-G0"]
        assert doc["metadata"]["method"] == "geometric"

    def test_optimization_method(self, scene_path, db_path, capsys):
        assert (
            main(
                [
                    "identify",
                    "--scene",
                    str(scene_path),
                    "--db",
                    str(db_path),
                    "--method",
                    "optimization",
                ]
            )
            == 0
        )
        assert capsys.readouterr().out.splitlines()[0] == "I-T0-G0"

    def test_no_tool_exit_2(self, tmp_path, db_path, capsys):
        scene = tmp_path / "notool.json"
        assert (
            main(
                [
                    "synth",
                    "--chain",
                    "L-l0",
                    "--db",
                    str(db_path),
                    "--joints",
                    "",
                    "--seed",
                    "2",
                    "--out",
                    str(scene),
                ]
            )
            == 0
        )
        code = main(["identify", "--scene", str(scene), "--db", str(db_path)])
        assert code == 2
        assert "NoToolModule" in capsys.readouterr().err

    def test_missing_db_exit_1(self, scene_path, tmp_path, capsys):
        code = main(
            ["identify", "--scene", str(scene_path), "--db", str(tmp_path / "nope.json")]
        )
        assert code == 1

    def test_rejected_markers_on_stderr(self, tmp_path, db_path, capsys):
        scene = tmp_path / "spurious.json"
        main(
            [
                "synth",
                "--chain",
                "I-T0-G0",
                "--db",
                str(db_path),
                "--joints",
                "10,20",
                "--seed",
                "7",
                "--spurious",
                "2",
                "--out",
                str(scene),
            ]
        )
        capsys.readouterr()
        assert main(["identify", "--scene", str(scene), "--db", str(db_path)]) == 0
        captured = capsys.readouterr()
        assert captured.out.splitlines()[0] == "I-T0-G0"
        assert captured.err.count("UnknownMarker") == 2

    def test_tree_flag(self, tmp_path, db_path, capsys):
        scene = tmp_path / "climb.json"
        from chainforge.descriptor import parse
        from chainforge.module_db import load_database
        from chainforge.synth import synthesize, write_scene

        db = load_database(db_path)
        obs = synthesize(
            parse("G'-I0-T'0-L0-T'90-T180-I'0-G0"),
            [30.0, -45.0, 60.0, -30.0, 90.0],
            db,
            assignment=["G-002", "I-001", "T-001", "L-001", "T-002", "T-003", "I-002", "G-001"],
        )
        write_scene(scene, obs)
        assert main(["identify", "--scene", str(scene), "--db", str(db_path), "--tree"]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0] == "G'-I0-T'0-L0-T'90-T180-I'0-G0"
        assert len([line for line in out if not line.startswith("theta")]) == 2

    def test_env_var_db(self, scene_path, db_path, capsys, monkeypatch):
        monkeypatch.setenv("CHAINFORGE_DB", str(db_path))
        assert main(["identify", "--scene", str(scene_path)]) == 0
        assert capsys.readouterr().out.splitlines()[0] == "I-T0-G0"

    def test_no_db_anywhere(self, scene_path, capsys, monkeypatch):
        monkeypatch.delenv("CHAINFORGE_DB", raising=False)
        assert main(["identify", "--scene", str(scene_path)]) == 1


class TestParse:
    def test_echoes_canonical(self, capsys):
        assert main(["parse", "--chain", "G'-I0-T'0-L0-T'90-T180-I'0-G0"]) == 0
        assert capsys.readouterr().out.strip() == "G'-I0-T'0-L0-T'90-T180-I'0-G0"

    def test_out_of_set_angle(self, capsys):
        assert main(["parse", "--chain", "I-T45-G0"]) == 1
        assert "45" in capsys.readouterr().err


class TestDbValidate:
    def test_ok(self, db_path, capsys):
        assert main(["db-validate", "--db", str(db_path)]) == 0
        assert "ok types 11 modules 52" in capsys.readouterr().out

    def test_duplicate_marker_named(self, tmp_path, capsys):
        db = default_database()
        path = tmp_path / "dup.json"
        save_database(db, path)
        doc = json.loads(path.read_text())
        doc["modules"][1]["master_marker_id"] = doc["modules"][0]["master_marker_id"]
        path.write_text(json.dumps(doc))
        assert main(["db-validate", "--db", str(path)]) == 1
        assert str(doc["modules"][0]["master_marker_id"]) in capsys.readouterr().err


class TestRoundtrip:
    def test_zero_noise_all_exact(self, db_path, capsys):
        code = main(
            [
                "roundtrip",
                "--chain",
                "I-T0-G0",
                "--db",
                str(db_path),
                "--joints",
                "10,20",
                "--trials",
                "5",
                "--seed",
                "3",
            ]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "exact 5" in out
        assert "method_agreement 1.000000" in out

    def test_noisy_reports_errors(self, db_path, capsys):
        code = main(
            [
                "roundtrip",
                "--chain",
                "I-T0-G0",
                "--db",
                str(db_path),
                "--joints",
                "10,20",
                "--sigma-pos",
                "2",
                "--sigma-rot",
                "2",
                "--trials",
                "5",
                "--seed",
                "3",
            ]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "theta_max_deg" in out

    def test_zero_trials_usage_error(self, db_path):
        assert (
            main(
                [
                    "roundtrip",
                    "--chain",
                    "I-T0-G0",
                    "--db",
                    str(db_path),
                    "--joints",
                    "10,20",
                    "--trials",
                    "0",
                    "--seed",
                    "3",
                ]
            )
            == 1
        )
