import json

import numpy as np
import pytest

from tsmamba.cli import main
from tsmamba.numerics import Tensor, read_tstf, write_pnm, write_tstf


def test_unknown_subcommand_exit_2(capsys):
    assert main(["bogus"]) == 2


def test_scan_gen_and_check(tmp_path, capsys):
    out = tmp_path / "order.json"
    svg = tmp_path / "order.svg"
    assert main(["scan", "gen", "--variant", "scan1", "--size", "8",
                 "--out", str(out), "--svg", str(svg)]) == 0
    obj = json.loads(out.read_text())
    assert len(obj["order"]) == 64
    assert "<svg" in svg.read_text()
    assert main(["scan", "check", str(out)]) == 0
    payload = json.loads(capsys.readouterr().out)["payload"]
    assert payload["bijective"] and payload["continuous"]


def test_scan_gen_bad_variant(capsys):
    assert main(["scan", "gen", "--variant", "scan9", "--size", "8"]) == 2
    assert "error" in capsys.readouterr().err


def test_scan_check_rejects_broken_order(tmp_path, capsys):
    p = tmp_path / "broken.json"
    p.write_text(json.dumps({"variant": "x", "size": 2,
                             "order": [[0, 0], [0, 0], [1, 0], [1, 1]]}))
    assert main(["scan", "check", str(p)]) == 1


def test_disc_analyze_payload(tmp_path, capsys):
    svg = tmp_path / "disc.svg"
    assert main(["disc", "analyze", "--first", "scan1", "--shift", "U1",
                 "--second", "scan3", "--grid", "8", "--window", "4",
                 "--svg", str(svg)]) == 0
    env = json.loads(capsys.readouterr().out)
    p = env["payload"]
    assert p["delta"] == p["delta_intra"] + p["delta_inter"]
    assert len(p["regions"]) == 49
    assert "<svg" in svg.read_text()


def test_disc_analyze_envelope_deterministic(capsys):
    main(["disc", "analyze", "--first", "scan1", "--shift", "U1",
          "--second", "scan3"])
    a = capsys.readouterr().out
    main(["disc", "analyze", "--first", "scan1", "--shift", "U1",
          "--second", "scan3"])
    b = capsys.readouterr().out
    assert a == b


def test_disc_search_csv(tmp_path):
    out = tmp_path / "search.csv"
    assert main(["disc", "search", "--grid", "8", "--window", "4",
                 "--out", str(out)]) == 0
    lines = out.read_text().strip().split("\n")
    assert lines[0] == "first,shift,second,delta_intra,delta_inter,delta"
    assert len(lines) == 1 + 4 * 24 * 4


def _write_frames(directory, n=3, size=16, seed=0):
    rng = np.random.default_rng(seed)
    for k in range(n):
        frame = rng.random((3, size, size)).astype(np.float32)
        write_pnm(directory / f"frame_{k:03d}.ppm", Tensor(frame))


def test_traj_select(tmp_path, capsys):
    frames = tmp_path / "frames"
    frames.mkdir()
    _write_frames(frames, n=4)
    out = tmp_path / "sel.json"
    toks = tmp_path / "sel.tstf"
    assert main(["traj", "select", "--frames", str(frames), "--radius", "0",
                 "--s", "3", "--out", str(out), "--tokens-out", str(toks)]) == 0
    env = json.loads(out.read_text())
    idx = np.array(env["payload"]["indices"])
    assert idx.shape == (16, 3)
    assert read_tstf(toks).dims[1:] == (3, 32)


def test_traj_select_empty_dir(tmp_path, capsys):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["traj", "select", "--frames", str(empty)]) == 2


def test_ssm_run_round_trip(tmp_path, capsys):
    seq = np.random.default_rng(1).normal(0, 1, (12, 4)).astype(np.float32)
    inp = tmp_path / "seq.tstf"
    out = tmp_path / "out.tstf"
    write_tstf(inp, Tensor(seq))
    assert main(["ssm", "run", "--input", str(inp), "--out", str(out),
                 "--state-dim", "4", "--seed", "0"]) == 0
    y = read_tstf(out)
    assert y.dims == (12, 4)
    assert np.all(np.isfinite(y.data))


def test_ssm_run_rejects_bad_rank(tmp_path):
    inp = tmp_path / "bad.tstf"
    write_tstf(inp, Tensor(np.zeros((2, 3, 4), dtype=np.float32)))
    assert main(["ssm", "run", "--input", str(inp),
                 "--out", str(inp) + ".o"]) == 2


def test_grad_check_passes(capsys):
    assert main(["grad", "check", "--length", "6", "--channels", "2",
                 "--state-dim", "3"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_model_count(capsys):
    assert main(["model", "count", "--channels", "32"]) == 0
    env = json.loads(capsys.readouterr().out)
    assert env["payload"]["params"] > 0


def test_model_forward_toy(tmp_path):
    frames = tmp_path / "frames"
    frames.mkdir()
    _write_frames(frames, n=2, size=16)
    out = tmp_path / "sr.tstf"
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"channels": 6, "state_dim": 4}))
    assert main(["model", "forward", "--frames", str(frames),
                 "--config", str(cfg), "--out", str(out)]) == 0
    assert read_tstf(out).dims == (3, 64, 64)


def test_model_forward_bad_config_key(tmp_path):
    frames = tmp_path / "frames"
    frames.mkdir()
    _write_frames(frames, n=1, size=16)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"nope": 1}))
    assert main(["model", "forward", "--frames", str(frames),
                 "--config", str(cfg), "--out", str(frames / "x.tstf")]) == 2


def test_loss_eval_fixed_point(tmp_path, capsys):
    arr = np.random.default_rng(2).random((3, 8, 8)).astype(np.float32)
    p = tmp_path / "a.tstf"
    write_tstf(p, Tensor(arr))
    assert main(["loss", "eval", "--sr", str(p), "--hr", str(p)]) == 0
    env = json.loads(capsys.readouterr().out)
    assert env["payload"]["spatial"] == pytest.approx(1e-4, abs=1e-12)


def test_threads_flag_validated(tmp_path, capsys):
    assert main(["--threads", "0", "model", "count"]) == 2
    assert main(["--threads", "8", "model", "count"]) == 0
