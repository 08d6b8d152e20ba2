import json

import numpy as np
import pytest

from ultrafast.cli import main
from ultrafast.io import (
    ArrayFile,
    ChecksumError,
    ConfigError,
    ExperimentConfig,
    ShapeError,
    load_config,
    read_array,
    save_config,
    write_array,
    write_heatmap,
)


def small_config(tmp_path, **psf):
    d = ExperimentConfig().to_dict()
    d["simulation"].update(grid_n=12, n_frames=12, noise_levels=[0.0, 0.05])
    d["medium"]["density_per_mm2"] = 20.0
    d["recon"].update(K=3, sweep=[0, 3, 6])
    d["psf"].update(half_width=2.5e-4, compounded_exact=False, F_sweep=[0.3, 0.4],
                    theta_sweep=[0.0], audit_depths=[0.02], **psf)
    path = tmp_path / "config.json"
    save_config(ExperimentConfig.from_dict(d), path)
    return path


def _run(capsys, argv):
    code = main([str(a) for a in argv])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.mark.parametrize("data", [np.arange(6.0).reshape(2, 3),
                                  (np.arange(4) + 1j * np.arange(4)[::-1]).reshape(4, 1, 1),
                                  np.zeros(0)])
def test_array_round_trip_is_bitwise(tmp_path, data):
    af = ArrayFile(data, axes=tuple("abc"[: data.ndim]), units={"x": "m"}, provenance={"seed": 3})
    write_array(tmp_path / "a.ufa", af)
    back = read_array(tmp_path / "a.ufa")
    assert back.data.dtype == af.data.dtype and back.data.shape == data.shape
    assert back.data.tobytes() == af.data.tobytes()
    assert back.axes == af.axes and back.units == af.units and back.provenance == af.provenance


def test_truncated_file_fails_checksum(tmp_path):
    path = tmp_path / "a.ufa"
    write_array(path, ArrayFile(np.arange(10.0)))
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ChecksumError):
        read_array(path)


def test_header_shape_mismatch(tmp_path):
    path = tmp_path / "a.ufa"
    write_array(path, ArrayFile(np.arange(4.0)))
    raw = path.read_bytes()
    # rewrite the shape in place with a same-length string, keeping the payload hash valid
    assert b'"shape": [4]' in raw
    path.write_bytes(raw.replace(b'"shape": [4]', b'"shape": [5]'))
    with pytest.raises(ShapeError):
        read_array(path)


def test_missing_directory(tmp_path):
    with pytest.raises(FileNotFoundError):
        write_array(tmp_path / "nope" / "a.ufa", ArrayFile(np.zeros(2)))


def test_config_round_trip(tmp_path):
    path = small_config(tmp_path)
    config = load_config(path)
    again = ExperimentConfig.from_json(config.to_json())
    assert again.to_dict() == config.to_dict()
    assert config.params().n_frames == 12


@pytest.mark.parametrize("mutate", [
    lambda d: d.update(bogus=1),
    lambda d: d["acquisition"].update(speed=3),
    lambda d: d.update(schema_version=99),
    lambda d: d["simulation"].update(noise_levels=[-0.1]),
    lambda d: d["recon"].update(K=-1),
    lambda d: d["medium"].update(density_per_mm2=0.0),
    lambda d: d.update(inputs={"frames": "/does/not/exist.ufa"}),
])
def test_config_errors(mutate):
    d = ExperimentConfig().to_dict()
    mutate(d)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(d).validate()


def test_invalid_json():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json("{not json")


def test_heatmap(tmp_path):
    img = np.array([[0.0, 1.0], [2.0, np.nan]])
    write_heatmap(tmp_path / "h.pgm", img, units="dB", title="t")
    raw = (tmp_path / "h.pgm").read_bytes()
    assert raw.startswith(b"P5\n2 2\n255\n")
    assert list(raw[-4:]) == [0, 128, 255, 0]
    side = json.loads((tmp_path / "h.pgm.json").read_text())
    assert side["vmin"] == 0.0 and side["vmax"] == 2.0 and side["units"] == "dB"


def test_cli_psf_report_is_deterministic(tmp_path, capsys):
    cfg = small_config(tmp_path)
    outputs = []
    for name in ("a", "b"):
        code, out, _ = _run(capsys, ["psf-report", "--config", cfg, "--out", tmp_path / name])
        assert code == 0 and json.loads(out)["status"] == "ok"
        outputs.append({p.name: p.read_bytes() for p in sorted((tmp_path / name).iterdir())})
    assert outputs[0] == outputs[1]
    assert "kernel_exact.ufa" in outputs[0] and "error_table.json" in outputs[0]
    assert sum(n.startswith("kernel_exact_F") for n in outputs[0]) == 2


def test_cli_flow_sim_and_svd_filter(tmp_path, capsys):
    cfg = small_config(tmp_path)
    code, out, _ = _run(capsys, ["flow-sim", "--config", cfg, "--out", tmp_path / "flow", "--seed", "5"])
    assert code == 0
    result = json.loads(out)
    assert len(result["table"]["noise_sweep"]) == 2
    assert (tmp_path / "flow" / "power_doppler_noise0.pgm").exists()
    frames = read_array(tmp_path / "flow" / "frames.ufa")
    assert frames.data.shape == (12, 12, 12) and frames.provenance["seed"] == 5

    code, out, _ = _run(capsys, ["svd-filter", "--input", tmp_path / "flow" / "frames.ufa", "--K", "2",
                                 "--out", tmp_path / "svd"])
    assert code == 0 and json.loads(out)["shape"] == [144, 12]
    assert read_array(tmp_path / "svd" / "power_doppler.ufa").data.shape == (12, 12)


def test_cli_doppler(tmp_path, capsys):
    code, out, _ = _run(capsys, ["doppler", "--n-frames", "64", "--out", tmp_path])
    res = json.loads(out)
    assert code == 0
    assert abs(res["peak_frequency"] - res["expected_axial"]) <= res["bin_width"]


def test_cli_covariance_and_singvals(tmp_path, capsys):
    code, out, _ = _run(capsys, ["covariance-1d", "--mz", "4", "--mt", "3", "--model", "blood",
                                 "--samples", "200", "--out", tmp_path / "c"])
    res = json.loads(out)
    assert code == 0 and res["size"] == 24 and res["min_eigenvalue_ratio"] >= -1e-8
    code, out, _ = _run(capsys, ["singvals", "--mz", "8", "--mt", "4", "--realizations", "10",
                                 "--clutter-speeds", "0.01", "--out", tmp_path / "s"])
    res = json.loads(out)
    assert code == 0 and set(res["ks_vs_noise"]) == {"clutter_0.01", "blood"}


def test_cli_audit(tmp_path, capsys):
    code, out, _ = _run(capsys, ["audit-appendix", "--depths", "0.02", "0.04", "--out", tmp_path])
    rows = json.loads(out)["audit"]
    assert code == 0 and len(rows) == 2
    assert rows[0]["max_abs_error"] > rows[1]["max_abs_error"]


def test_cli_failure_record(tmp_path, capsys):
    code, _, err = _run(capsys, ["svd-filter", "--input", tmp_path / "missing.ufa", "--out", tmp_path])
    record = json.loads(err.strip().splitlines()[-1])
    assert code != 0 and record["status"] == "error" and record["command"] == "svd-filter"
    with pytest.raises(SystemExit) as exc:
        main(["doppler", "--direction", "sideways"])
    assert exc.value.code == 2
    assert json.loads(capsys.readouterr().err.strip())["error"] == "UsageError"


def test_cli_bad_config(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"recon": {"K": -3}}))
    code, _, err = _run(capsys, ["flow-sim", "--config", bad, "--out", tmp_path])
    assert code == 1 and json.loads(err)["error"] == "ConfigError"
