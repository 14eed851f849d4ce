import csv
import io
import json

import pytest

from kgbutcher import ptree
from kgbutcher.cli import OUTPUT_ENV, main

SMALL = ["--grid-n", "32", "--T", "0.2", "--dt", "0.02"]


def run(argv):
    out, err = io.StringIO(), io.StringIO()
    code = main(argv, out, err)
    return code, out.getvalue(), err.getvalue()


def rows(text):
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def test_trees_counts():
    code, out, _ = run(["trees", "--p", "2", "--max-order", "4"])
    assert code == 0
    r = rows(out)
    assert [int(x["count"]) for x in r] == [1, 1, 2, 5, 14]
    assert [float(x["bound"]) for x in r] == [1, 4, 16, 64, 256]


def test_trees_keys_round_trip():
    code, out, _ = run(["trees", "--p", "3", "--max-order", "2", "--keys"])
    assert code == 0
    keys = out.split()
    assert len(keys) == 1 + 1 + 3
    assert all(ptree.parse(k).key == k for k in keys)


def test_classical_zero_coupling_all_agree():
    code, out, _ = run(["classical", "--lambda", "0", *SMALL])
    assert code == 0
    doc = json.loads(out.split("\n\n# schema")[0])
    res = doc["results"]
    assert doc["schema_version"] == 1
    assert res["reference_vs_free"] < 1e-12
    assert res["series_vs_free"] == 0
    assert max(res["series_vs_reference"], *res["errors_vs_reference"]) < 1e-12


def test_classical_reference_only(tmp_path):
    code, _, _ = run(["--out", str(tmp_path), "classical", "--reference-only", "--lambda", "0.1", *SMALL])
    assert code == 0
    doc = json.loads((tmp_path / "classical.json").read_text())
    assert doc["reference_only"] and "order_norms" not in doc["results"]
    ts = rows((tmp_path / "classical_timeseries.csv").read_text())
    assert len(ts) == 11 and "series_norm" not in ts[0]


def test_classical_nonzero_coupling_outputs(tmp_path):
    code, _, _ = run(["--out", str(tmp_path), "classical", "--lambda", "0.05", "--order", "2", *SMALL])
    assert code == 0
    res = json.loads((tmp_path / "classical.json").read_text())["results"]
    assert len(res["order_norms"]) == 3 and res["inside_radius"]
    e = res["errors_vs_reference"]
    assert e[0] > e[1] > e[2]


def test_quantum_order_zero_exact(tmp_path):
    code, _, _ = run(["--out", str(tmp_path), "quantum", "--order", "1"])
    assert code == 0
    res = json.loads((tmp_path / "quantum.json").read_text())["results"]
    assert res["heisenberg"]["0"]["exact"] and res["heisenberg"]["1"]["exact"]
    assert res["passing_u_sign"] == res["expected_u_sign"] == 1
    assert not res["negative_control"]["1"]["exact"]
    assert res["unitarity"]["1"]["exact"]


def test_quantum_plus_kernel_flips_sign(tmp_path):
    code, _, _ = run(["--out", str(tmp_path), "quantum", "--order", "1", "--kernel", "plus"])
    assert code == 0
    res = json.loads((tmp_path / "quantum.json").read_text())["results"]
    assert res["passing_u_sign"] == -1


def test_sweep_lambda_fit(tmp_path):
    code, _, err = run(
        ["--out", str(tmp_path), "sweep", "classical", "--param", "lambda", "--values", "2^-6,2^-5,2^-4",
         "--fit", "--order", "2", "--levels", "4"]
    )
    assert code == 0, err
    fits = {r["metric"]: float(r["slope"]) for r in rows((tmp_path / "sweep_fit.csv").read_text())}
    assert fits["error_2"] == pytest.approx(3.0, abs=0.1)
    assert fits["error_1"] == pytest.approx(2.0, abs=0.1)
    assert len(rows((tmp_path / "sweep.csv").read_text())) == 3


def test_sweep_dt_fit(tmp_path):
    code, _, err = run(
        ["--out", str(tmp_path), "sweep", "classical", "--param", "dt", "--values", "0.02,0.01,0.005", "--fit",
         "--order", "0", "--grid-n", "128", "--phi0", "gaussian:1", "--phi1", "zero", "--T", "0.2"]
    )
    assert code == 0, err
    fits = {r["metric"]: float(r["slope"]) for r in rows((tmp_path / "sweep_fit.csv").read_text())}
    assert fits["free_residual"] == pytest.approx(2.0, abs=0.1)


def test_sweep_quantum_dtau(tmp_path):
    code, _, err = run(["--out", str(tmp_path), "sweep", "quantum", "--param", "dtau", "--values", "0.1,0.05"])
    assert code == 0, err
    r = rows((tmp_path / "sweep.csv").read_text())
    assert float(r[1]["heisenberg_dev_2"]) < float(r[0]["heisenberg_dev_2"])


@pytest.mark.parametrize(
    "argv,needle",
    [
        (["sweep", "classical", "--param", "lambda", "--values", ""], "values"),
        (["sweep", "classical", "--param", "mass", "--values", "1,2"], "sweepable"),
        (["sweep", "classical", "--param", "lambda", "--values", "a,b"], "values"),
        (["sweep", "classical", "--param", "lambda", "--values", "1", "--nmax", "3"], "nmax"),
    ],
)
def test_sweep_errors(argv, needle):
    code, out, err = run(argv)
    assert code == 2 and out == ""
    assert needle in json.loads(err)["message"]


def test_validation_reports_every_bad_key():
    code, _, err = run(["classical", "--grid-n", "7", "--p", "1", "--dt", "-1", "--mass", "0", "--scheme", "rk4"])
    assert code == 2
    doc = json.loads(err)
    keys = {p.split(":")[0] for p in doc["problems"]}
    assert {"grid_n", "p", "dt", "mass", "scheme"} <= keys
    assert doc["error"] and doc["exit_code"] == 2


def test_config_file_with_flag_override(tmp_path):
    cfgfile = tmp_path / "run.cfg"
    cfgfile.write_text("# trees\np = 3\nmax_order = 3  # inline comment\n")
    code, out, _ = run(["trees", "--config", str(cfgfile)])
    assert [int(r["count"]) for r in rows(out)] == [1, 1, 3, 12]
    code, out, _ = run(["trees", "--config", str(cfgfile), "--max-order", "1"])
    assert len(rows(out)) == 2
    cfgfile.write_text("p = 3\nbogus = 1\nnot a pair\n")
    code, _, err = run(["trees", "--config", str(cfgfile)])
    assert code == 2 and "not a pair" in err


def test_unknown_key_in_config(tmp_path):
    cfgfile = tmp_path / "run.cfg"
    cfgfile.write_text("nmax = 3\n")
    code, _, err = run(["trees", "--config", str(cfgfile)])
    assert code == 2 and "nmax: not a key" in err


def test_env_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "o"))
    code, out, _ = run(["trees"])
    assert code == 0 and out == ""
    assert (tmp_path / "o" / "trees.csv").exists()


def test_outputs_are_byte_identical():
    a = run(["classical", "--lambda", "0.1", "--order", "2", *SMALL])[1]
    b = run(["classical", "--lambda", "0.1", "--order", "2", *SMALL])[1]
    assert a == b and a


def test_fock_cutoff_exit_code():
    code, out, err = run(["quantum", "--nmax", "2", "--order", "2"])
    assert code == 4 and out == ""
    assert json.loads(err)["exit_code"] == 4


def test_divergence_exit_code():
    code, _, err = run(
        ["classical", "--reference-only", "--lambda", "50", "--data-norm", "20", "--T", "3", "--dt", "0.01",
         "--grid-n", "16"]
    )
    assert code == 3, err


def test_argparse_errors_exit_two():
    assert run(["nonsense"])[0] == 2
