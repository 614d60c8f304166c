import csv
import io

import numpy as np
import pytest

from simkit import ModelError, make_davis_skodje, make_linear2d
from simkit.cli import main, portrait_csv, preset_names, preset_text
from simkit.experiments import ExperimentConfig, render_csv, run_checks, run_sweep

PRESETS = ("fig1", "fig2", "fig3", "fig4", "mint0", "hamiltonian", "lagrangian-exact")


def _rows(text):
    lines = text.splitlines()
    assert lines[0].startswith("# config-sha256: ")
    return list(csv.DictReader(io.StringIO("\n".join(lines[1:]))))


def test_presets_ship():
    assert set(PRESETS) <= set(preset_names())


@pytest.mark.parametrize("name", PRESETS)
def test_preset_passes(name, tmp_path, capsys):
    out = tmp_path / f"{name}.csv"
    assert main(["preset", name, "--out", str(out)]) == 0
    err = capsys.readouterr().err
    assert "FAIL" not in err
    rows = _rows(out.read_text(encoding="utf-8"))
    assert rows and all(r["converged"] == "1" for r in rows)


def test_fig1_table(tmp_path):
    out = tmp_path / "fig1.csv"
    main(["preset", "fig1", "--out", str(out)])
    rows = _rows(out.read_text(encoding="utf-8"))
    assert len(rows) == 10
    assert [float(r["sweep_value"]) for r in rows] == pytest.approx(list(np.linspace(-20, -2, 10)))
    assert max(float(r["abs_error"]) for r in rows) <= 1e-6
    dist = [abs(float(r["z1"]) - 5.0) for r in rows]
    assert dist == sorted(dist)


def test_mint0_single_row(tmp_path):
    out = tmp_path / "m.csv"
    main(["preset", "mint0", "--out", str(out)])
    (row,) = _rows(out.read_text(encoding="utf-8"))
    assert float(row["t0_min"]) == pytest.approx(-2.6056, abs=1e-3)
    assert float(row["ratio"]) == pytest.approx(0.9993, abs=1e-4)


def test_output_is_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["preset", "fig3", "--out", str(a)])
    main(["preset", "fig3", "--out", str(b)])
    assert a.read_bytes() == b.read_bytes()


def test_number_format(tmp_path):
    out = tmp_path / "f.csv"
    main(["preset", "fig4", "--out", str(out)])
    row = _rows(out.read_text(encoding="utf-8"))[0]
    assert float(row["z2"]) == float(repr(float(row["z2"])))
    assert "," not in row["z2"] and row["wall_time"] == ""


def test_timing_column(tmp_path):
    out = tmp_path / "t.csv"
    main(["preset", "fig4", "--timing", "--out", str(out)])
    assert all(float(r["wall_time"]) >= 0.0 for r in _rows(out.read_text(encoding="utf-8")))


def test_overrides_change_config_and_hash(tmp_path):
    text = preset_text("fig4")
    base = ExperimentConfig.from_text(text)
    changed = ExperimentConfig.from_text(text, ["model.gamma=5.0", "sweep.num=3"])
    assert base.digest() != changed.digest()
    var, values = changed.sweep_values()
    assert var == "t0" and len(values) == 3
    out = tmp_path / "o.csv"
    assert main(["preset", "fig4", "--set", "sweep.num=2", "--out", str(out)]) == 0
    assert len(_rows(out.read_text(encoding="utf-8"))) == 2


def test_run_command_with_config_file(tmp_path):
    cfg = tmp_path / "zdp.ini"
    cfg.write_text("""
[model]
name = linear2d
gamma = 2.0
[method]
name = zdp_local
rpv = z2
rpv_values = 5.0
[sweep]
variable = m
values = 1, 2, 3
[check]
oracle = auto
max.abs_error = 1e-10
""", encoding="utf-8")
    out = tmp_path / "zdp.csv"
    assert main(["run", str(cfg), "--out", str(out)]) == 0
    rows = _rows(out.read_text(encoding="utf-8"))
    assert [float(r["z1"]) for r in rows] == pytest.approx([2.5, 4.0, 4.642857142857143], rel=1e-12)


def test_failing_check_sets_exit_code(tmp_path, capsys):
    out = tmp_path / "x.csv"
    code = main(["preset", "fig4", "--set", "check.max.abs_error=1e-30", "--out", str(out)])
    assert code == 2
    assert "FAIL" in capsys.readouterr().err


def test_failing_point_is_identified(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("""
[model]
name = linear3d
gamma1 = 2.0
gamma2 = 4.0
[method]
name = fcm
rpv = z1, z3
rpv_values = 1.0, 2.0
[sweep]
variable = z1
values = 1.0, 2.0
[check]
oracle = none
""", encoding="utf-8")
    code = main(["run", str(cfg), "--out", str(tmp_path / "bad.csv")])
    assert code == 1
    assert "sweep_value=1.0" in capsys.readouterr().err


@pytest.mark.parametrize("text", [
    "[model]\nname = linear2d\ngamma = 1\n",
    "[model]\nname = linear2d\ngamma = 1\n[method]\nname = magic\nrpv = z2\nrpv_values = 1\n",
    "[model]\nname = linear2d\ngamma = 1\n[method]\nname = bvp\nrpv = z2\nrpv_values = 1\nK = 0\n",
    "[model]\nname = linear2d\ngamma = 1\n[method]\nname = qssa\nrpv = z7\nrpv_values = 1\n",
    "[model]\nname = linear3d\ngamma1 = 1\ngamma2 = 2\n[method]\nname = fet\nrpv = z1\nrpv_values = 1\n",
    "[model]\nname = linear2d\ngamma = 1\n[method]\nname = qssa\nrpv = z2\nrpv_values = 1\n"
    "[sweep]\nvariable = gamma\nvalues = 1, 3, 2\n",
    "[model]\nname = linear2d\ngamma = 1\n[method]\nname = qssa\nrpv = z2\nrpv_values = 1\n"
    "[sweep]\nvariable = gamma\nvalues = 1, inf\n",
    "[model]\nname = linear2d\ngamma = 1\n[method]\nname = qssa\nrpv = z2\nrpv_values = 1\n[extra]\n",
])
def test_invalid_configs_rejected(text):
    with pytest.raises(ModelError):
        ExperimentConfig.from_text(text)


def test_invalid_config_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[model]\nname = linear2d\ngamma = -1\n[method]\nname = qssa\nrpv = z2\nrpv_values = 1\n")
    assert main(["run", str(cfg)]) == 2
    assert "error" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.ini")]) == 2
    assert main(["preset", "nope"]) == 2


@pytest.mark.parametrize("expr", ["__import__('os').getcwd()", "z1.real", "open", "z1 +", "[z1]"])
def test_expressions_are_sandboxed(expr):
    with pytest.raises(ModelError):
        ExperimentConfig.from_text(preset_text("lagrangian-exact"), [f"method.k2={expr}"])


def test_state_dependent_coefficient(tmp_path):
    cfg = tmp_path / "ds.ini"
    cfg.write_text("""
[model]
name = davis_skodje
gamma = 3.0
[method]
name = optimize
rpv = z1
rpv_values = 2.0
objective = lagrangian
k1 = 1
k2 = gamma / (z1 + 1)
t0 = -1
[check]
oracle = sim
max.abs_error = 1e-6
""", encoding="utf-8")
    assert main(["run", str(cfg), "--out", str(tmp_path / "ds.csv")]) == 0


def test_worker_pool_keeps_order():
    cfg = ExperimentConfig.from_text(preset_text("fig3"), ["output.workers=2"])
    _, rows = run_sweep(cfg)
    values = [r.sweep_value for r in rows]
    assert values == sorted(values)
    serial = ExperimentConfig.from_text(preset_text("fig3"))
    assert render_csv(cfg, rows).splitlines()[1:] == render_csv(serial, run_sweep(serial)[1]).splitlines()[1:]
    assert all(c.passed for c in run_checks(cfg, rows))


def test_preset_list_and_show(capsys):
    assert main(["preset", "list"]) == 0
    assert "fig1" in capsys.readouterr().out
    assert main(["preset", "fig1", "--show"]) == 0
    assert "[model]" in capsys.readouterr().out


def _portrait(model, **kw):
    return list(csv.DictReader(io.StringIO(portrait_csv(model, **kw))))


def test_portrait_linear_sim_is_diagonal():
    rows = _portrait(make_linear2d(2.0), grid=3, samples=11)
    sim = [r for r in rows if r["kind"] == "sim"]
    assert sim and all(float(r["z1"]) == float(r["z2"]) for r in sim)


def test_portrait_davis_skodje_sim_curve():
    rows = _portrait(make_davis_skodje(3.0), grid=3, samples=11)
    for r in (r for r in rows if r["kind"] == "sim"):
        z1 = float(r["z1"])
        assert float(r["z2"]) == pytest.approx(z1 / (1.0 + z1), abs=1e-15)


def test_portrait_trajectories_reach_equilibrium():
    rows = _portrait(make_davis_skodje(3.0), grid=4, samples=6)
    traj = [r for r in rows if r["kind"] == "trajectory"]
    ids = {r["id"] for r in traj}
    assert len(ids) == 16
    for i in ids:
        last = [r for r in traj if r["id"] == i][-1]
        assert float(last["t"]) == 10.0
        assert np.hypot(float(last["z1"]), float(last["z2"])) < 1e-3


def test_portrait_command(tmp_path):
    out = tmp_path / "p.csv"
    assert main(["portrait", "linear2d", "--gamma", "2", "--grid", "2", "--samples", "3",
                 "--out", str(out)]) == 0
    assert out.read_text(encoding="utf-8").startswith("kind,id,t,z1,z2\n")
