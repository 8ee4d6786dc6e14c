import json

import numpy as np

from pbal.cli import main


def read_csv_rows(path):
    lines = path.read_text().strip().splitlines()
    header = lines[0].split(",")
    return header, [line.split(",") for line in lines[1:]]


def test_run_transport_smoke(tmp_path):
    out = tmp_path / "run"
    code = main(["run", "--scenario", "transport", "--n", "50",
                 "--t-end", "1.0", "--out", str(out)])
    assert code == 0
    header, rows = read_csv_rows(out / "snapshots.csv")
    assert header == ["t", "i", "x_left", "x_right", "q", "rho"]
    times = sorted({row[0] for row in rows})
    assert len(times) == 11  # default snapshot count
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["n"] == 50
    assert manifest["step_stats"]["accepted"] > 0


def test_run_growth_terminal_mass(tmp_path):
    out = tmp_path / "growth"
    code = main(["run", "--scenario", "growth_transport", "--n", "100",
                 "--out", str(out)])
    assert code == 0
    _, rows = read_csv_rows(out / "snapshots.csv")
    t_final = max(float(r[0]) for r in rows)
    mass = sum(float(r[4]) for r in rows if float(r[0]) == t_final)
    assert abs(mass - np.e) / np.e <= 1e-6


def test_run_invalid_n(tmp_path):
    assert main(["run", "--scenario", "transport", "--n", "0",
                 "--out", str(tmp_path)]) == 2


def test_run_unknown_scenario(tmp_path):
    assert main(["run", "--scenario", "nonsense", "--n", "10",
                 "--out", str(tmp_path)]) == 2


def test_run_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["run", "--scenario", "repulsive_source", "--n", "40",
                     "--out", str(out)]) == 0
    assert (a / "snapshots.csv").read_bytes() == (b / "snapshots.csv").read_bytes()


def test_run_collision_exit_code(tmp_path):
    # attractive kink potential with v == 1: particles collide in finite time
    doc = {
        "congestion": {"v": "1", "v_sup": 1.0},
        "advection": {"F": "2", "G": "1", "lambda": "1"},
        "potential": {"W": "abs(x)", "dxW_neg": "-1", "dxW_pos": "1"},
        "source": {},
        "metadata": {"name": "colliding", "branch": "w_repulsive",
                     "initial": {"blocks": [[-0.5, 0.5, 1.0]]}},
    }
    path = tmp_path / "colliding.json"
    path.write_text(json.dumps(doc))
    code = main(["run", "--scenario", str(path), "--n", "8",
                 "--t-end", "2.0", "--out", str(tmp_path / "out")])
    assert code == 3


def test_sweep_requires_two_n(tmp_path, capsys):
    assert main(["sweep", "--scenario", "transport", "--n", "100"]) == 2


def test_sweep_transport(tmp_path, capsys):
    out = tmp_path / "sweep"
    code = main(["sweep", "--scenario", "transport", "--n", "50", "100", "200",
                 "--t-end", "0.5", "--out", str(out)])
    assert code == 0
    header, rows = read_csv_rows(out / "sweep.csv")
    assert header == ["n", "l1_spacetime", "rate"]
    dists = [float(r[1]) for r in rows]
    assert len(dists) == 2
    assert dists[1] < dists[0]


def test_sweep_stationary_bounded_by_init_quantization(tmp_path):
    # zero fields: the space-time distance equals the init-quantization gap,
    # so every table entry is below twice the init L1 distance and decreasing
    doc = {
        "congestion": {"v": "1", "v_sup": 1.0},
        "advection": {"V": "0", "F": "0", "G": "0", "lambda": "1"},
        "potential": {"W": "0"},
        "source": {},
        "metadata": {"name": "stationary", "branch": "w_repulsive",
                     "initial": {"blocks": [[-1.0, -0.5, 1.0], [0.0, 1.0, 0.5]]}},
    }
    path = tmp_path / "stationary.json"
    path.write_text(json.dumps(doc))
    out = tmp_path / "sweep"
    code = main(["sweep", "--scenario", str(path), "--n", "50", "100", "200",
                 "--t-end", "1.0", "--out", str(out)])
    assert code == 0
    _, rows = read_csv_rows(out / "sweep.csv")
    dists = {int(r[0]): float(r[1]) for r in rows}

    from pbal import InitialDensity, l1_distance, quantile_init, to_density
    rho0 = InitialDensity.from_blocks([(-1.0, -0.5, 1.0), (0.0, 1.0, 0.5)])
    exact = to_density(quantile_init(rho0, 4000))  # fine proxy for rho0
    for n, d in dists.items():
        init_gap = l1_distance(to_density(quantile_init(rho0, n)), exact)
        assert d <= 2.0 * init_gap + 1e-9
    assert dists[100] < dists[50]


def test_sweep_plot_and_svg(tmp_path):
    out = tmp_path / "plot"
    code = main(["run", "--scenario", "attractive_congested", "--n", "30",
                 "--t-end", "0.5", "--out", str(out), "--plot"])
    assert code == 0
    svg = (out / "density.svg").read_text()
    assert svg.startswith("<svg") and "polyline" in svg


def test_audit_transport_green(tmp_path):
    out = tmp_path / "audit"
    code = main(["audit", "--scenario", "transport", "--n", "60",
                 "--t-end", "1.0", "--out", str(out)])
    assert code == 0
    good_v = json.loads((out / "good_v.json").read_text())
    assert good_v == []
    bounds = json.loads((out / "bounds.json").read_text())
    assert all(rec["ok"] for rec in bounds)
    entropy = json.loads((out / "entropy.json").read_text())
    assert entropy["res_neg"] <= 1e-5  # transport residual is exactly zero up to quadrature


def test_audit_flags_and_violation_exit(tmp_path, monkeypatch):
    # custom phi/c grids are honored; an injected good-v violation exits 1
    out = tmp_path / "audit1"
    code = main(["audit", "--scenario", "transport", "--n", "40",
                 "--snapshots", "65", "--phi-grid", "2x3", "--c-grid", "0,0.5",
                 "--out", str(out)])
    assert code == 0
    entropy = json.loads((out / "entropy.json").read_text())
    assert len(entropy["residuals"]) == 2 * 3 * 2 * 2  # 2 widths x (2x3) x 2 cs

    from pbal import diagnostics as dg

    def fake_audit(traj, s, c_grid=None, slack=1e-10):
        return [dg.GoodVViolation(0.0, "constant", 0, 0.5, 1.0, 0.0)]

    monkeypatch.setattr("pbal.cli.diagnostics.good_v_audit", fake_audit)
    code = main(["audit", "--scenario", "transport", "--n", "20",
                 "--snapshots", "65", "--out", str(tmp_path / "audit2")])
    assert code == 1


def test_audit_malformed_scenario(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{oops")
    assert main(["audit", "--scenario", str(path), "--n", "10",
                 "--out", str(tmp_path / "a")]) == 2


def test_validate_grid_too_small(tmp_path, capsys):
    code = main(["validate", "--scenario", "repulsive_source", "--n", "50",
                 "--j", "100", "--x-max", "1.0"])
    assert code == 2
    err = capsys.readouterr().err
    assert "envelope" in err


def test_validate_transport(tmp_path):
    # first-order upwind smears the two-block jumps; refinement must help
    finals = {}
    for j in (500, 2000):
        out = tmp_path / f"val{j}"
        code = main(["validate", "--scenario", "transport", "--n", "200",
                     "--j", str(j), "--t-end", "1.0", "--x-max", "4.0",
                     "--out", str(out)])
        assert code == 0
        _, rows = read_csv_rows(out / "validate.csv")
        finals[j] = float(rows[-1][1])
    assert finals[2000] < finals[500]
    assert finals[2000] <= 0.2


def test_scenario_file_end_to_end(tmp_path):
    doc = {
        "congestion": {"v": "max(1 - r, 0)", "v_sup": 1.0, "vprime_bound": "1",
                       "decay_g": "2*r"},
        "advection": {"V": "1", "F": "1", "G": "1", "lambda": "1"},
        "potential": {"W": "0"},
        "source": {},
        "metadata": {"name": "file_scenario", "branch": "v_decays",
                     "initial": {"blocks": [[0.0, 1.0, 0.5]]}},
    }
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(doc))
    out = tmp_path / "out"
    assert main(["run", "--scenario", str(path), "--n", "20",
                 "--out", str(out)]) == 0
    assert (out / "snapshots.csv").exists()


def test_initial_csv_override(tmp_path):
    csv = tmp_path / "init.csv"
    xs = np.linspace(-1, 1, 101)
    ys = np.maximum(1 - np.abs(xs), 0)
    csv.write_text("\n".join(f"{x},{y}" for x, y in zip(xs, ys)))
    out = tmp_path / "out"
    code = main(["run", "--scenario", "transport", "--n", "30",
                 "--initial", str(csv), "--out", str(out)])
    assert code == 0
