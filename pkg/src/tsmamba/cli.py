"""Unified command-line interface.

Subcommands: scan gen|check, disc analyze|search, traj select, ssm run,
grad check, model forward|count, loss eval.  All JSON outputs are wrapped in
a ReportEnvelope carrying the tool version, the command, and content digests
of every input file, so identical inputs give byte-identical reports.

Exit codes: 0 success, 1 internal invariant violation, 2 invalid arguments.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .discontinuity import (
    analyze,
    report_to_json,
    report_to_svg,
    search_procedures,
    search_to_csv,
)
from .model import (
    LossConfig,
    TsMambaWeights,
    TsmaConfig,
    charbonnier_loss,
    count_params_macs,
    total_loss,
    trajectory_loss,
    ts_mamba_forward,
)
from .numerics import (
    ModelConfig,
    Tensor,
    read_pnm,
    read_tstf,
    write_pnm,
    write_tstf,
)
from .scanorder import (
    ScanVariant,
    ShiftSpec,
    generate_scan,
    scan_from_json,
    scan_to_json,
    scan_to_svg,
)
from .ssm import (
    SelectiveScanParams,
    gradient_check,
    selective_scan_forward,
)
from .trajectory import (
    TokenField,
    block_matching_flow,
    generate_tokens,
    initial_trajectories,
    propagate_trajectories,
    select_tokens,
)
from .trajectory import GWeights


class CliError(Exception):
    """Invalid arguments or inputs; maps to exit code 2."""


def _digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _envelope(command, inputs, payload):
    return {
        "version": __version__,
        "command": command,
        "inputs": {os.path.basename(p): _digest(p) for p in inputs},
        "payload": payload,
    }


def _emit(obj, out_path=None):
    text = json.dumps(obj, separators=(",", ":"), sort_keys=True)
    if out_path:
        with open(out_path, "w") as f:
            f.write(text + "\n")
    else:
        sys.stdout.write(text + "\n")


def _threads(args):
    n = getattr(args, "threads", None)
    if n is None:
        n = int(os.environ.get("TSM_THREADS", "1"))
    if n < 1:
        raise CliError("--threads must be >= 1")
    return n


# --- scan -------------------------------------------------------------------

def cmd_scan_gen(args):
    try:
        variant = ScanVariant(args.variant)
    except ValueError:
        raise CliError(f"unknown variant {args.variant!r}")
    scan = generate_scan(variant, args.size)
    if args.out:
        with open(args.out, "w") as f:
            f.write(scan_to_json(scan) + "\n")
    else:
        sys.stdout.write(scan_to_json(scan) + "\n")
    if args.svg:
        with open(args.svg, "w") as f:
            f.write(scan_to_svg(scan) + "\n")
    return 0


def cmd_scan_check(args):
    with open(args.path) as f:
        scan = scan_from_json(f.read())
    payload = {
        "size": scan.size,
        "bijective": scan.is_bijective(),
        "continuous": scan.is_continuous(),
    }
    _emit(_envelope("scan check", [args.path], payload))
    return 0 if payload["bijective"] else 1


# --- disc -------------------------------------------------------------------

def cmd_disc_analyze(args):
    try:
        first = ScanVariant(args.first)
        second = ScanVariant(args.second)
        shift = ShiftSpec.parse(args.shift)
    except ValueError as exc:
        raise CliError(str(exc))
    report = analyze(first, shift, second, args.grid, args.window)
    payload = json.loads(report_to_json(report))
    _emit(_envelope("disc analyze", [], payload), args.out)
    if args.svg:
        with open(args.svg, "w") as f:
            f.write(report_to_svg(report, args.grid) + "\n")
    return 0


def cmd_disc_search(args):
    results = search_procedures(args.grid, args.window)
    text = search_to_csv(results)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return 0


# --- traj -------------------------------------------------------------------

def _load_frames(directory):
    paths = sorted(
        os.path.join(directory, p) for p in os.listdir(directory)
        if p.endswith((".pgm", ".ppm", ".tstf"))
    )
    if not paths:
        raise CliError(f"no frames in {directory}")
    frames = []
    for p in paths:
        if p.endswith(".tstf"):
            frames.append(read_tstf(p))
        else:
            frames.append(read_pnm(p))
    return paths, frames


def cmd_traj_select(args):
    paths, frames = _load_frames(args.frames)
    config = ModelConfig()
    rng = np.random.default_rng(args.seed)
    weights = GWeights.random(config, rng, c_in=frames[0].dims[0])
    h, w = frames[0].dims[1], frames[0].dims[2]
    t = config.token_size
    fields = []
    for k, frame in enumerate(frames):
        _, field = generate_tokens(frame, config, weights)
        field.frame_index = k
        fields.append(field)
    traj = initial_trajectories(config, h // t, w // t, h, w)
    flow_paths = []
    for k in range(1, len(frames)):
        if args.flows:
            fp = os.path.join(args.flows, f"flow_{k:04d}.tstf")
            flow = read_tstf(fp)
            flow_paths.append(fp)
        else:
            flow = block_matching_flow(frames[k], frames[k - 1], args.radius)
        traj = propagate_trajectories(traj, flow, config)
    pool = list(reversed(fields[:-1])) or [fields[0]]
    while len(pool) < args.s:
        pool.append(pool[-1])
    sel = select_tokens(fields[-1], pool, traj, args.s, t)
    payload = {
        "indices": sel.indices.tolist(),
        "scores": [[round(v, 8) for v in row] for row in sel.scores.tolist()],
    }
    _emit(_envelope("traj select", paths + flow_paths, payload), args.out)
    if args.tokens_out:
        write_tstf(args.tokens_out, sel.selected)
    return 0


# --- ssm --------------------------------------------------------------------

def _params_from_file(path, length, channels, state_dim, seed):
    if path:
        blob = read_tstf(path)
        flat = blob.data.reshape(-1).astype(np.float64)
        c, n, L = channels, state_dim, length
        need = c * n + c + L * c + L * n + L * n
        if flat.size != need:
            raise CliError(f"parameter file holds {flat.size} values, need {need}")
        o = 0
        def take(shape):
            nonlocal o
            k = int(np.prod(shape))
            out = flat[o:o + k].reshape(shape)
            o += k
            return out
        return SelectiveScanParams(A=take((c, n)), D=take((c,)),
                                   dt=take((L, c)), B=take((L, n)), C=take((L, n)))
    return SelectiveScanParams.init(channels, state_dim, length,
                                    np.random.default_rng(seed))


def cmd_ssm_run(args):
    seq = read_tstf(args.input)
    if len(seq.dims) != 2:
        raise CliError("ssm input must be a [L, C] TSTF tensor")
    L, C = seq.dims
    params = _params_from_file(args.params, L, C, args.state_dim, args.seed)
    out, _ = selective_scan_forward(params, seq)
    write_tstf(args.out, out)
    payload = {"length": L, "channels": C, "state_dim": int(params.A.shape[1])}
    _emit(_envelope("ssm run", [args.input] + ([args.params] if args.params else []),
                    payload))
    return 0


def cmd_grad_check(args):
    rng = np.random.default_rng(args.seed)
    params = SelectiveScanParams.init(args.channels, args.state_dim, args.length, rng)
    u = rng.normal(0.0, 1.0, (args.length, args.channels))
    err = gradient_check(params, u, rng=rng)
    ok = err < args.tol
    print(f"max relative error {err:.3e} tol {args.tol:.1e} -> "
          f"{'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


# --- model ------------------------------------------------------------------

def cmd_model_forward(args):
    paths, frames = _load_frames(args.frames)
    config = ModelConfig()
    if args.config:
        with open(args.config) as f:
            for k, v in json.load(f).items():
                if not hasattr(config, k):
                    raise CliError(f"unknown config key {k!r}")
                setattr(config, k, v)
        config.validate()
    if args.weights:
        weights = _load_weight_bundle(args.weights, config)
    else:
        weights = TsMambaWeights.random(config, seed=args.seed)
    out = ts_mamba_forward(frames, None, weights, config)
    if args.out.endswith(".tstf"):
        write_tstf(args.out, out)
    else:
        write_pnm(args.out, out)
    return 0


def _load_weight_bundle(directory, config):
    manifest_path = os.path.join(directory, "manifest.json")
    if not os.path.exists(manifest_path):
        raise CliError(f"weight bundle missing manifest.json in {directory}")
    with open(manifest_path) as f:
        manifest = json.load(f)
    weights = TsMambaWeights.random(config, seed=0)
    layers = _flatten_weight_layers(weights)
    missing = [name for name in layers if name not in manifest]
    if missing:
        raise CliError("weight bundle missing layers: " + ", ".join(sorted(missing)))
    for name, setter in layers.items():
        t = read_tstf(os.path.join(directory, manifest[name]))
        setter(t.data.astype(np.float64))
    return weights


def _flatten_weight_layers(weights):
    """name -> setter for every weight array in the bundle."""
    layers = {}

    def bind(obj, attr, name):
        def setter(arr, obj=obj, attr=attr):
            cur = getattr(obj, attr)
            if tuple(arr.shape) != tuple(np.asarray(cur).shape):
                raise CliError(f"layer {name}: shape {arr.shape} != {np.asarray(cur).shape}")
            setattr(obj, attr, arr)
        layers[name] = setter

    g = weights.g
    bind(g, "conv_w", "g.conv_w"); bind(g, "conv_b", "g.conv_b")
    bind(g, "proj_w", "g.proj_w"); bind(g, "proj_b", "g.proj_b")
    for i, _ in enumerate(g.res):
        for j, part in enumerate(("w1", "b1", "w2", "b2")):
            name = f"g.res{i}.{part}"
            def set_part(arr, i=i, j=j, name=name):
                blk = list(g.res[i])
                if tuple(arr.shape) != tuple(np.asarray(blk[j]).shape):
                    raise CliError(f"layer {name}: bad shape {arr.shape}")
                blk[j] = arr
                g.res[i] = tuple(blk)
            layers[name] = set_part
    t = weights.tsma
    bind(t, "concat_proj_w", "tsma.concat_proj_w")
    bind(t, "concat_proj_b", "tsma.concat_proj_b")
    bind(t, "fusion_w", "tsma.fusion_w"); bind(t, "fusion_b", "tsma.fusion_b")
    bind(t, "ln_gamma", "tsma.ln_gamma"); bind(t, "ln_beta", "tsma.ln_beta")
    for bname, params in t.block_params.items():
        for part in ("A", "D", "dt", "B", "C"):
            bind(params, part, f"tsma.{bname}.{part}")
    r = weights.r
    bind(r, "head_w", "r.head_w"); bind(r, "head_b", "r.head_b")
    bind(r, "up1_w", "r.up1_w"); bind(r, "up1_b", "r.up1_b")
    bind(r, "up2_w", "r.up2_w"); bind(r, "up2_b", "r.up2_b")
    bind(r, "tail_w", "r.tail_w"); bind(r, "tail_b", "r.tail_b")
    for i, _ in enumerate(r.res):
        for j, part in enumerate(("w1", "b1", "w2", "b2")):
            name = f"r.res{i}.{part}"
            def set_part(arr, i=i, j=j, name=name):
                blk = list(r.res[i])
                if tuple(arr.shape) != tuple(np.asarray(blk[j]).shape):
                    raise CliError(f"layer {name}: bad shape {arr.shape}")
                blk[j] = arr
                r.res[i] = tuple(blk)
            layers[name] = set_part
    return layers


def cmd_model_count(args):
    config = ModelConfig(channels=args.channels)
    counts = count_params_macs(config, (args.height, args.width))
    _emit(_envelope("model count", [], counts), args.out)
    return 0


# --- loss -------------------------------------------------------------------

def cmd_loss_eval(args):
    sr = read_tstf(args.sr)
    hr = read_tstf(args.hr)
    spa = charbonnier_loss(sr, hr, epsilon=args.epsilon)
    payload = {"spatial": spa}
    if args.lr_traj and args.hr_traj:
        lt = read_tstf(args.lr_traj)
        ht = read_tstf(args.hr_traj)
        # [depth, N, 2] stacks
        from .trajectory import TrajectorySet
        lr_set = TrajectorySet(0, args.lr_height, args.lr_width,
                               [lt.data[m].astype(np.float64) for m in range(lt.dims[0])])
        hr_set = TrajectorySet(0, args.lr_height * args.scale,
                               args.lr_width * args.scale,
                               [ht.data[m].astype(np.float64) for m in range(ht.dims[0])])
        trj = trajectory_loss(lr_set, hr_set, args.scale)
        payload["trajectory"] = trj
        payload["total"] = total_loss(spa, trj, lam=args.lam)
    inputs = [args.sr, args.hr] + [p for p in (args.lr_traj, args.hr_traj) if p]
    _emit(_envelope("loss eval", inputs, payload), args.out)
    return 0


# --- parser -----------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="tsm", description=__doc__)
    p.add_argument("--threads", type=int, default=None,
                   help="worker cap (default: env TSM_THREADS or 1)")
    sub = p.add_subparsers(dest="group", required=True)

    scan = sub.add_parser("scan").add_subparsers(dest="cmd", required=True)
    g = scan.add_parser("gen")
    g.add_argument("--variant", required=True)
    g.add_argument("--size", type=int, required=True)
    g.add_argument("--out")
    g.add_argument("--svg")
    g.set_defaults(func=cmd_scan_gen)
    c = scan.add_parser("check")
    c.add_argument("path")
    c.set_defaults(func=cmd_scan_check)

    disc = sub.add_parser("disc").add_subparsers(dest="cmd", required=True)
    a = disc.add_parser("analyze")
    a.add_argument("--first", required=True)
    a.add_argument("--shift", required=True)
    a.add_argument("--second", required=True)
    a.add_argument("--grid", type=int, default=8)
    a.add_argument("--window", type=int, default=4)
    a.add_argument("--out")
    a.add_argument("--svg")
    a.set_defaults(func=cmd_disc_analyze)
    s = disc.add_parser("search")
    s.add_argument("--grid", type=int, default=8)
    s.add_argument("--window", type=int, default=4)
    s.add_argument("--out")
    s.set_defaults(func=cmd_disc_search)

    traj = sub.add_parser("traj").add_subparsers(dest="cmd", required=True)
    t = traj.add_parser("select")
    t.add_argument("--frames", required=True)
    t.add_argument("--flows")
    t.add_argument("--radius", type=int, default=2)
    t.add_argument("--s", type=int, default=3)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out")
    t.add_argument("--tokens-out")
    t.set_defaults(func=cmd_traj_select)

    ssm = sub.add_parser("ssm").add_subparsers(dest="cmd", required=True)
    r = ssm.add_parser("run")
    r.add_argument("--input", required=True)
    r.add_argument("--params")
    r.add_argument("--state-dim", type=int, default=8)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_ssm_run)

    grad = sub.add_parser("grad").add_subparsers(dest="cmd", required=True)
    gc = grad.add_parser("check")
    gc.add_argument("--length", type=int, default=12)
    gc.add_argument("--channels", type=int, default=3)
    gc.add_argument("--state-dim", type=int, default=4)
    gc.add_argument("--tol", type=float, default=1e-5)
    gc.add_argument("--seed", type=int, default=0)
    gc.set_defaults(func=cmd_grad_check)

    model = sub.add_parser("model").add_subparsers(dest="cmd", required=True)
    f = model.add_parser("forward")
    f.add_argument("--frames", required=True)
    f.add_argument("--weights")
    f.add_argument("--config")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_model_forward)
    mc = model.add_parser("count")
    mc.add_argument("--channels", type=int, default=32)
    mc.add_argument("--height", type=int, default=180)
    mc.add_argument("--width", type=int, default=320)
    mc.add_argument("--out")
    mc.set_defaults(func=cmd_model_count)

    loss = sub.add_parser("loss").add_subparsers(dest="cmd", required=True)
    le = loss.add_parser("eval")
    le.add_argument("--sr", required=True)
    le.add_argument("--hr", required=True)
    le.add_argument("--lr-traj")
    le.add_argument("--hr-traj")
    le.add_argument("--lr-height", type=int, default=0)
    le.add_argument("--lr-width", type=int, default=0)
    le.add_argument("--scale", type=int, default=4)
    le.add_argument("--epsilon", type=float, default=1e-4)
    le.add_argument("--lam", type=float, default=0.1)
    le.add_argument("--out")
    le.set_defaults(func=cmd_loss_eval)

    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        _threads(args)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except AssertionError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
