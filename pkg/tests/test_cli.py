import csv
import json
from pathlib import Path

import numpy as np
import pytest

import soarmor as sm
from soarmor.cli import main


def write_config(tmp_path, body) -> str:
    path = tmp_path / "run.ini"
    path.write_text(body)
    return str(path)


def run(args):
    return main(args)


BASE = """
[model]
mesh_m = {m}
k_max = 40.0

[sweep]
k_min = 10.0
k_max = 30.0
count = {sweep_count}
rom_order = {rom_order}

[study]
k_min = 10.0
k_max = 30.0
count = 3
checkpoints = 2, 3
stop_window = 1

[verify]
k0 = 20.0
r_values = {r_values}
slope_margin = {slope_margin}

[run]
verbosity = 0
"""


def base_config(tmp_path, m=8, sweep_count=4, rom_order=0, r_values="1, 2",
                slope_margin=0.5):
    return write_config(tmp_path, BASE.format(m=m, sweep_count=sweep_count,
                                              rom_order=rom_order, r_values=r_values,
                                              slope_margin=slope_margin))


class TestAssemble:
    def test_m1_manifest(self, tmp_path):
        cfg = base_config(tmp_path, m=1)
        out = tmp_path / "out"
        assert run(["assemble", "--config", cfg, "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["n"] == 4
        assert manifest["command"] == "assemble"
        assert len(manifest["config_hash"]) == 64
        for name in ("M", "D", "K", "B", "C"):
            assert (out / f"{name}.mtx").exists()

    def test_m64_manifest(self, tmp_path):
        cfg = base_config(tmp_path, m=64)
        out = tmp_path / "out64"
        assert run(["assemble", "--config", cfg, "--out", str(out)]) == 0
        assert json.loads((out / "manifest.json").read_text())["n"] == 4225

    def test_missing_neumann_exits_2(self, tmp_path, capsys):
        cfg = base_config(tmp_path, m=2)
        assert run(["assemble", "--config", cfg, "--out", str(tmp_path / "x")]) == 2
        assert "model error" in capsys.readouterr().err

    def test_resolution_warning_recorded(self, tmp_path):
        cfg = base_config(tmp_path, m=4)
        out = tmp_path / "warn"
        run(["assemble", "--config", cfg, "--out", str(out)])
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["resolution"]["under_resolved"] is True

    def test_matrices_roundtrip(self, tmp_path, model8):
        cfg = base_config(tmp_path, m=8)
        out = tmp_path / "rt"
        run(["assemble", "--config", cfg, "--out", str(out)])
        M = sm.read_matrix_market(out / "M.mtx")
        np.testing.assert_allclose(M.toarray(), model8.M.toarray(), atol=1e-15)


class TestConfigHandling:
    def test_unknown_key_exits_1(self, tmp_path, capsys):
        cfg = write_config(tmp_path, "[model]\nmesh_n = 8\n")
        assert run(["assemble", "--config", cfg]) == 1
        assert "unknown key" in capsys.readouterr().err

    def test_unknown_section_exits_1(self, tmp_path):
        cfg = write_config(tmp_path, "[modell]\nmesh_m = 8\n")
        assert run(["assemble", "--config", cfg]) == 1

    def test_missing_file_exits_1(self, tmp_path):
        assert run(["assemble", "--config", str(tmp_path / "nope.ini")]) == 1

    def test_bad_value_exits_1(self, tmp_path):
        cfg = write_config(tmp_path, "[model]\nmesh_m = eight\n")
        assert run(["assemble", "--config", cfg]) == 1


class TestReduce:
    def test_interleaved_provenance_14_13_13(self, tmp_path):
        cfg = write_config(tmp_path, """
[model]
mesh_m = 16

[expansion]
wave_numbers = 20, 60, 100

[reduce]
order = 40

[run]
verbosity = 0
""")
        out = tmp_path / "red"
        assert run(["reduce", "--config", cfg, "--out", str(out)]) == 0
        rows = list(csv.DictReader(open(out / "basis_provenance.csv")))
        counts = {}
        for row in rows:
            counts[row["k0"]] = counts.get(row["k0"], 0) + 1
        assert counts == {"20.0": 14, "60.0": 13, "100.0": 13}
        manifest = json.loads((out / "manifest.json").read_text())
        assert [p["columns"] for p in manifest["point_counts"]] == [14, 13, 13]

    def test_rank_one_rom(self, tmp_path):
        cfg = write_config(tmp_path, """
[model]
mesh_m = 8

[reduce]
order = 1

[run]
verbosity = 0
""")
        out = tmp_path / "r1"
        assert run(["reduce", "--config", cfg, "--out", str(out)]) == 0
        rom_m = sm.read_matrix_market(out / "rom_M.mtx")
        assert rom_m.shape == (1, 1)

    def test_sequential_budgets_echoed(self, tmp_path):
        cfg = write_config(tmp_path, """
[model]
mesh_m = 8

[expansion]
wave_numbers = 2, 18
schedule = sequential
budgets = 4, 6

[reduce]
order = 10

[run]
verbosity = 0
""")
        out = tmp_path / "seq"
        assert run(["reduce", "--config", cfg, "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert [p["slots"] for p in manifest["point_counts"]] == [4, 6]
        rows = list(csv.DictReader(open(out / "basis_provenance.csv")))
        assert [row["k0"] for row in rows[:4]] == ["2.0"] * 4

    def test_basis_export_is_readable(self, tmp_path):
        cfg = write_config(tmp_path,
                           "[model]\nmesh_m = 8\n[reduce]\norder = 5\n[run]\nverbosity = 0\n")
        out = tmp_path / "basis"
        run(["reduce", "--config", cfg, "--out", str(out)])
        V = sm.read_matrix_market(out / "basis.mtx")
        assert V.shape == (81, 5)
        assert np.abs(V.conj().T @ V - np.eye(5)).max() <= 1e-10


class TestSweep:
    def test_single_k_matches_eval_fom(self, tmp_path, model8):
        cfg = write_config(tmp_path, """
[model]
mesh_m = 8

[sweep]
k_min = 20.0
k_max = 20.0
count = 1

[run]
verbosity = 0
""")
        out = tmp_path / "sw"
        assert run(["sweep", "--config", cfg, "--out", str(out)]) == 0
        rows = list(csv.DictReader(open(out / "transfer.csv")))
        assert len(rows) == 13
        expected = sm.eval_fom(model8, 20.0).value
        for row in rows:
            i = int(row["output_index"])
            got = complex(float(row["value_re"]), float(row["value_im"]))
            assert got == pytest.approx(complex(expected[i, 0]), rel=1e-12)

    def test_rom_agrees_with_fom_at_expansion_point(self, tmp_path):
        cfg = write_config(tmp_path, """
[model]
mesh_m = 8

[expansion]
wave_numbers = 20

[sweep]
k_min = 20.0
k_max = 20.0
count = 1
rom_order = 6

[run]
verbosity = 0
""")
        out = tmp_path / "swr"
        assert run(["sweep", "--config", cfg, "--out", str(out)]) == 0
        rows = list(csv.DictReader(open(out / "transfer.csv")))
        fom = {r["output_index"]: complex(float(r["value_re"]), float(r["value_im"]))
               for r in rows if r["source"] == "fom"}
        rom_ = {r["output_index"]: complex(float(r["value_re"]), float(r["value_im"]))
                for r in rows if r["source"] == "rom"}
        num = np.linalg.norm([fom[i] - rom_[i] for i in fom])
        den = np.linalg.norm(list(fom.values()))
        assert num <= 1e-8 * den

    def test_empty_grid_is_usage_error(self, tmp_path):
        cfg = base_config(tmp_path, sweep_count=0)
        assert run(["sweep", "--config", cfg, "--out", str(tmp_path / "e")]) == 1


class TestStudyCommand:
    def test_outputs_and_exit_code(self, tmp_path):
        cfg = base_config(tmp_path)
        out = tmp_path / "study"
        assert run(["study", "--config", cfg, "--out", str(out)]) == 0
        for name in ("study.csv", "stopping.csv", "study_two.svg", "study_sup.svg",
                     "manifest.json"):
            assert (out / name).exists()

    def test_idempotent_outputs(self, tmp_path):
        cfg = base_config(tmp_path)
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        run(["study", "--config", cfg, "--out", str(out_a)])
        run(["study", "--config", cfg, "--out", str(out_b)])
        assert (out_a / "study.csv").read_bytes() == (out_b / "study.csv").read_bytes()
        assert (out_a / "manifest.json").read_bytes() == (out_b / "manifest.json").read_bytes()

    def test_norm_override(self, tmp_path):
        cfg = base_config(tmp_path)
        out = tmp_path / "sup_only"
        assert run(["study", "--config", cfg, "--out", str(out), "--norm", "sup"]) == 0
        rows = list(csv.DictReader(open(out / "study.csv")))
        assert {row["norm"] for row in rows} == {"sup"}

    def test_manifest_embeds_config_hash(self, tmp_path):
        cfg = base_config(tmp_path)
        out = tmp_path / "hash"
        run(["study", "--config", cfg, "--out", str(out)])
        manifest = json.loads((out / "manifest.json").read_text())
        import hashlib
        assert manifest["config_hash"] == hashlib.sha256(Path(cfg).read_bytes()).hexdigest()


class TestVerifyOrderCommand:
    def test_pass_exits_0(self, tmp_path):
        cfg = base_config(tmp_path)
        out = tmp_path / "v0"
        assert run(["verify-order", "--config", cfg, "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["passed"] is True

    def test_property_failure_exits_3(self, tmp_path, capsys):
        cfg = base_config(tmp_path, r_values="1", slope_margin="9.0")
        out = tmp_path / "v3"
        assert run(["verify-order", "--config", cfg, "--out", str(out)]) == 3
        assert "order check failed" in capsys.readouterr().err
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["passed"] is False
        assert manifest["failures"]

    def test_fit_report_written(self, tmp_path):
        cfg = base_config(tmp_path)
        out = tmp_path / "vr"
        run(["verify-order", "--config", cfg, "--out", str(out)])
        rows = list(csv.DictReader(open(out / "order_fits.csv")))
        assert {row["estimator"] for row in rows} == {"hat", "tilde"}
        assert all(float(row["slope"]) >= float(row["slope_required"]) for row in rows)
