"""Command line: ``simulate``, ``analyze``, ``track`` and ``keyrate-sweep``."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import socket
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import config as configmod
from .config import ConfigError, RunConfig, Seeds
from .core import db_to_transmittance
from .decoy import EstimationError, analytic_estimate, estimate_from_tallies, read_tally_file, \
    standard_errors
from .metrics import emit_metrics, write_metrics
from .postprocessing.keyfile import write_key
from .tracking import rms, run_tracking

log = logging.getLogger("droneqkd")


def _config(args) -> RunConfig:
    if args.config:
        cfg = configmod.load_config(args.config)
    else:
        cfg = configmod.load_preset(args.preset or "paper-defaults")
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seeds=Seeds.from_master(args.seed))
    if getattr(args, "duration", None) is not None:
        cfg = cfg.replace(duration_s=args.duration)
    if getattr(args, "gate_rate", None) is not None:
        cfg = cfg.replace(params=cfg.params.replace(gate_rate=args.gate_rate))
    return cfg


def _address(text: str):
    host, _, port = text.rpartition(":")
    if not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {text!r}")
    return host or "127.0.0.1", int(port)


def _connect(address, timeout: float) -> socket.socket:
    """Connect, retrying while the transmitter is not yet listening."""
    deadline = time.monotonic() + timeout
    while True:
        try:
            return socket.create_connection(address)
        except ConnectionRefusedError:
            if time.monotonic() >= deadline:
                raise
            time.sleep(0.2)


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out or cfg.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump_window(cfg: RunConfig, out: Path, window: int, max_gates: int) -> None:
    from .session import PhysicalLayer

    small = cfg.replace(duration_s=cfg.window_s * (window + 1))
    phys = PhysicalLayer(small)
    pulses = phys.transmitter_view(window, shared=True)
    raw = phys.receiver_view(window, shared=True)
    n = min(max_gates, len(pulses))
    trimmed = dataclasses.replace(pulses, intensity=pulses.intensity[:n], basis=pulses.basis[:n],
                                  bit=pulses.bit[:n], photons=pulses.photons[:n],
                                  jitter=pulses.jitter[:n])
    trimmed.dump(out / f"pulses_w{window}.csv")
    raw.events.stripped().dump(out / f"events_w{window}.bin")


def cmd_simulate(args) -> int:
    from . import session

    cfg = _config(args)
    out = _out_dir(args, cfg)
    if args.dump_window is not None:
        _dump_window(cfg, out, args.dump_window, args.dump_gates)

    if args.listen or args.connect:
        role = session.TRANSMITTER if args.listen else session.RECEIVER
        if args.listen:
            srv = socket.create_server(args.listen)
            log.info("transmitter listening on %s:%d", *args.listen)
            sock, _ = srv.accept()
            srv.close()
        else:
            sock = _connect(args.connect, args.connect_timeout)
        with sock:
            ep = session.run_endpoint(cfg, role, sock)
        metrics = emit_metrics(session.chunks_for(ep, ep.phys), cfg.window_s)
        write_metrics(metrics, out / f"metrics_{role}.csv")
        key_path = write_key(out / f"key_{role}.qkdk", ep.final_key())
        audit = session.audit_endpoint(ep)
        audit["passed"] = (audit["key_bits_disclosed_total"] == 0
                           and not audit["leak_mismatch_blocks"])
        (out / f"audit_{role}.json").write_text(json.dumps(audit, indent=2) + "\n")
        print(f"{role}: {len(ep.windows)} windows, {ep.final_key().size} key bits -> {key_path}")
        return 0 if audit["passed"] else 1

    result = session.run_session(cfg)
    write_metrics(result.metrics, out / "metrics.csv")
    for role, ep in (("transmitter", result.transmitter), ("receiver", result.receiver)):
        result.key_files[role] = str(write_key(out / f"key_{role}.qkdk", ep.final_key()))
    report = {"summary": result.summary(), "audit": result.audit,
              "estimate": result.estimate.as_dict() if result.estimate else None,
              "assumptions": _assumptions(cfg)}
    (out / "audit.json").write_text(json.dumps(report, indent=2) + "\n")
    for k, v in result.summary().items():
        print(f"{k:>26}: {v:.6g}" if isinstance(v, float) else f"{k:>26}: {v}")
    print(f"{'audit':>26}: {'passed' if result.audit['passed'] else 'FAILED'}")
    return 0 if result.audit["passed"] else 1


def _assumptions(cfg: RunConfig) -> dict:
    return {
        "ldpc": f"column weight {cfg.postprocessing.column_weight}, "
                f"n={cfg.postprocessing.block_size}, "
                f"m=ceil({cfg.ldpc_budget_factor}*H2(qber)*n), sum-product BP",
        "verification": "64-bit polynomial hash mod 2^64-59",
        "privacy_amplification": "Toeplitz hashing, 128-bit safety margin",
        "e0": 0.5,
        "key_rate_f": cfg.params.ec_efficiency_f,
    }


def cmd_analyze(args) -> int:
    cfg = _config(args)
    try:
        tallies = read_tally_file(args.tally)
        est = estimate_from_tallies(tallies, cfg.params)
    except (OSError, EstimationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    fields = est.as_dict()
    errs = standard_errors(tallies)
    if args.format == "json":
        print(json.dumps({"estimate": fields, "standard_errors": errs}, indent=2))
        return 0
    if args.format == "text":
        for k, v in fields.items():
            print(f"{k:>14} = {v:.6g}")
        for k, v in errs.items():
            print(f"{'sigma ' + k:>14} = {v:.3g}")
        print()
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["field", "value"])
    for k, v in fields.items():
        w.writerow([k, repr(float(v))])
    return 0


def cmd_track(args) -> int:
    cfg = _config(args)
    tcfg = cfg.drone if args.station == "drone" else cfg.ground
    if args.open_loop:
        tcfg = tcfg.open_loop()
    seed = args.seed if args.seed is not None else cfg.seeds.channel
    series = run_tracking(tcfg, args.duration or cfg.duration_s, seed)
    out = Path(args.out) if args.out else Path(f"tracking_{args.station}.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    series.to_csv(out)
    rx, ry = rms(series)
    print(f"{args.station}: rms x {rx:.3f} um, rms y {ry:.3f} um, "
          f"mean coupling {series.coupling.mean():.4f} -> {out}")
    return 0


def cmd_keyrate_sweep(args) -> int:
    cfg = _config(args)
    params = cfg.params
    y0 = args.y0
    if y0 is None:
        y0 = 4 * (cfg.channel.background_rate + cfg.detector.dark_rate) * params.gate_width
    e_int = args.intrinsic_error
    if e_int is None:
        e_int = 1.0 / (1.0 + cfg.channel.extinction_ratio)
    losses = np.arange(args.loss_min, args.loss_max + 0.5 * args.step, args.step)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["loss_db", "eta", "Q_mu", "E_mu", "Y1_lower", "e1_upper", "R_per_gate",
                    "R_per_second"])
        for loss in losses:
            eta = db_to_transmittance(float(loss))
            est = analytic_estimate(eta, y0, e_int, params)
            w.writerow([f"{loss:.4g}", f"{eta:.6g}", f"{est.Q_mu:.6g}", f"{est.E_mu:.6g}",
                        f"{est.Y1_lower:.6g}", f"{est.e1_upper:.6g}", f"{est.R_per_gate:.6g}",
                        f"{est.R_per_second:.6g}"])
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="droneqkd",
                                description="Drone-to-ground decoy-state BB84 simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        g = sp.add_mutually_exclusive_group()
        g.add_argument("--config", metavar="PATH", help="YAML run configuration")
        g.add_argument("--preset", choices=configmod.PRESETS, help="shipped configuration")
        if seed:
            sp.add_argument("--seed", type=int, help="master seed for every random stream")

    sp = sub.add_parser("simulate", help="full two-party session")
    common(sp)
    sp.add_argument("--out", metavar="DIR", help="output directory")
    sp.add_argument("--duration", type=float, help="override run.duration_s")
    sp.add_argument("--gate-rate", type=float, help="override protocol.gate_rate (Hz)")
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--listen", type=_address, metavar="ADDR",
                   help="run the transmitter, waiting for the receiver on HOST:PORT")
    g.add_argument("--connect", type=_address, metavar="ADDR",
                   help="run the receiver, connecting to the transmitter at HOST:PORT")
    sp.add_argument("--connect-timeout", type=float, default=30.0, metavar="S",
                    help="seconds to keep retrying --connect (default 30)")
    sp.add_argument("--dump-window", type=int, metavar="W",
                    help="also write pulse CSV and event dump for window W")
    sp.add_argument("--dump-gates", type=int, default=10_000,
                    help="gates written to the pulse CSV (default 10000)")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("analyze", help="decoy estimate from a tally CSV")
    common(sp, seed=False)
    sp.add_argument("tally", help="CSV with columns intensity,sent,detected,errors")
    sp.add_argument("--format", choices=("text", "csv", "json"), default="text")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("track", help="tracking-loop run to a CSV series")
    common(sp)
    sp.add_argument("--station", choices=("drone", "ground"), default="drone")
    sp.add_argument("--duration", type=float)
    sp.add_argument("--open-loop", action="store_true", help="disable both loops")
    sp.add_argument("--out", metavar="PATH")
    sp.set_defaults(func=cmd_track)

    sp = sub.add_parser("keyrate-sweep", help="analytic secure rate versus loss")
    common(sp, seed=False)
    sp.add_argument("--loss-min", type=float, default=10.0)
    sp.add_argument("--loss-max", type=float, default=40.0)
    sp.add_argument("--step", type=float, default=0.5)
    sp.add_argument("--y0", type=float, help="background yield per gate (default from config)")
    sp.add_argument("--intrinsic-error", type=float,
                    help="misalignment error (default 1/(1+extinction_ratio))")
    sp.add_argument("--out", metavar="PATH")
    sp.set_defaults(func=cmd_keyrate_sweep)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
