"""Command-line entry points wiring calibration, training, closed-loop runs,
replay verification and log evaluation.

Exit codes: 0 success, 2 configuration error, 3 runtime abort.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

from .calibration import InsufficientData
from .config import (
    ConfigError,
    config_from_dict,
    list_presets,
    load_config,
    load_stim_preset,
)
from .fixtures import get_fixture, list_fixtures
from .gateway import BindFailure, GatewayServer, LoopRunner
from .labels import Movement, StimChannel
from .loop import LoopSession, run_calibration, run_closed_loop, train_model
from .persist import (
    ModelFormatError,
    load_calibration,
    load_model,
    model_hash,
    model_kind,
    save_calibration,
    save_model,
)
from .plant import MailboxIntent
from .sessionlog import CorruptLog, IoFailure, read_session
from .stim import SafetyViolation
from . import report

CONFIG_EXIT = 2
RUNTIME_EXIT = 3


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _config_error(message: str) -> CliError:
    return CliError(message, CONFIG_EXIT)


def _runtime_error(message: str) -> CliError:
    return CliError(message, RUNTIME_EXIT)


# -- shared config assembly ---------------------------------------------------


def _add_common(p: argparse.ArgumentParser, mode: str) -> None:
    p.add_argument("--config", type=Path, help="run configuration file (YAML)")
    p.add_argument("--fixture", help=f"simulated participant ({', '.join(list_fixtures())})")
    p.add_argument("--seed", type=int, help="session RNG seed")
    if mode != "calibrate":
        p.add_argument("--model", choices=("lda", "gbdt"), help="decoder kind (trained in-process)")
        p.add_argument("--model-file", type=Path, help="pre-trained decoder file")
        p.add_argument("--preset", help=f"stimulation preset ({', '.join(list_presets())})")
        p.add_argument(
            "--stim",
            action=argparse.BooleanOptionalAction,
            default=None,
            help="enable/disable stimulation output",
        )


def _build_config(args, mode: str):
    """RunConfig + fixture from --config file and/or flag overrides."""
    if args.config is not None:
        if not args.config.is_file():
            raise _config_error(f"config file not found: {args.config}")
        config = load_config(args.config)
        if args.fixture:
            config = replace(config, fixture=args.fixture)
        fixture = get_fixture(config.fixture)
    else:
        fixture = get_fixture(args.fixture or "synthetic_healthy")
        config = fixture.run_config()
    overrides: dict = {"mode": mode}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "model", None):
        overrides["model"] = args.model
    if getattr(args, "stim", None) is not None:
        overrides["stim_enabled"] = args.stim
    config = replace(config, **overrides)
    if getattr(args, "preset", None):
        stim, model = load_stim_preset(args.preset)
        config = replace(config, stim=stim, model=model)
    return config, fixture


def _load_model_arg(args, config=None):
    """Load --model-file if given. Returns (model, config); the config's
    decoder kind is corrected to the file's so the log header describes the
    decoder that actually ran (replay retrains from the header)."""
    if getattr(args, "model_file", None) is None:
        return None, config
    if not args.model_file.is_file():
        raise _config_error(f"model file not found: {args.model_file}")
    try:
        model = load_model(args.model_file)
    except ModelFormatError as e:
        raise _config_error(f"cannot load model: {e}")
    if config is not None:
        config = replace(config, model=model_kind(model))
    return model, config


# -- subcommands ----------------------------------------------------------------


def cmd_calibrate(args) -> int:
    config, fixture = _build_config(args, "calibrate")
    cal = run_calibration(config, fixture)
    save_calibration(cal, args.out)
    counts = {
        Movement(c).name.lower(): int((cal.labels == int(c)).sum()) for c in cal.classes
    }
    print(f"calibration: {cal.n_samples} labeled feature vectors -> {args.out}")
    print(f"per class: {counts}")
    return 0


def cmd_train(args) -> int:
    if not args.calibration.is_file():
        raise _config_error(f"calibration file not found: {args.calibration}")
    cal = load_calibration(args.calibration)
    config = config_from_dict({"model": args.model, "mode": "calibrate"})
    model = train_model(config, cal)
    save_model(model, args.out)
    print(f"trained {args.model} on {cal.n_samples} samples -> {args.out}")
    print(f"model hash: {model_hash(model)}")
    return 0


def _report_run(result, out: Path | None) -> None:
    log = result.log
    print(
        f"{len(log.features_t_us)} feature ticks, {len(log.stim_t_us)} stim commands, "
        f"tick p99 {result.tick_p99_ms:.2f} ms, wall {result.wall_s:.1f} s"
    )
    if out is not None:
        out.write_bytes(result.data)
        print(f"session log -> {out}")


def cmd_simulate(args) -> int:
    config, fixture = _build_config(args, "simulate")
    model, config = _load_model_arg(args, config)
    result = run_closed_loop(config, model=model, fixture=fixture)
    _report_run(result, args.out)
    return 0


def cmd_run(args) -> int:
    config, fixture = _build_config(args, "run")
    model, config = _load_model_arg(args, config)
    intent = MailboxIntent() if args.interactive else None
    session = LoopSession(config, model=model, fixture=fixture, intent=intent)
    runner = LoopRunner(session, decimation=args.decimation, pace=True)
    static = args.static
    if static is None:
        default_static = Path("frontend/dist")
        static = default_static if default_static.is_dir() else None
    server = GatewayServer(runner, args.bind, static_dir=static).start()
    print(f"gateway: ws://{server.host}:{server.port}  tcp {server.host}:{server.tcp_port}")
    if static is not None:
        print(f"ui: http://{server.host}:{server.port}/  (assets from {static})")
    print(f"session: {session.duration_s:.0f} s ({session.n_ticks} ticks); Ctrl-C stops early")
    try:
        result = server.wait()
    except KeyboardInterrupt:
        runner.stop()
        result = server.wait(timeout=5.0)
    finally:
        server.close()
    if result is None:
        raise _runtime_error("loop did not finish")
    _report_run(result, args.out)
    return 0


def cmd_replay(args) -> int:
    if not args.log.is_file():
        raise _config_error(f"log file not found: {args.log}")
    original = args.log.read_bytes()
    log = read_session(args.log)
    config = report.header_config(log)
    model, config = _load_model_arg(args, config)
    result = run_closed_loop(config, model=model)
    if args.out is not None:
        args.out.write_bytes(result.data)
        print(f"regenerated log -> {args.out}")
    if result.data == original:
        print(f"replay identical: {len(original)} bytes reproduced from (fixture={config.fixture}, seed={config.seed})")
        return 0
    n = min(len(result.data), len(original))
    offset = next(
        (i for i in range(n) if result.data[i] != original[i]),
        n,
    )
    raise _runtime_error(
        f"replay diverged at byte {offset} "
        f"(original {len(original)} bytes, regenerated {len(result.data)})"
    )


def _format_value(value) -> str:
    if isinstance(value, float):
        return f"{value:.4f}"
    if isinstance(value, list):
        return "[" + ", ".join(_format_value(v) for v in value) + "]"
    return str(value)


def _format_report(tree: dict, indent: int = 0) -> str:
    lines = []
    pad = "  " * indent
    for key, value in tree.items():
        if isinstance(value, dict):
            lines.append(f"{pad}{key}:")
            lines.append(_format_report(value, indent + 1))
        elif isinstance(value, list) and value and isinstance(value[0], dict):
            lines.append(f"{pad}{key}:")
            for item in value:
                body = ", ".join(f"{k}={_format_value(v)}" for k, v in item.items())
                lines.append(f"{pad}  - {body}")
        else:
            lines.append(f"{pad}{key}: {_format_value(value)}")
    return "\n".join(lines)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _eval_csvs(log, out_dir: Path) -> list[Path]:
    import numpy as np

    files = []
    # reference vs predicted cursor, joined on the shared feature-tick clock
    t, ri, ci = np.intersect1d(log.reference_t_us, log.cursor_t_us, return_indices=True)
    pred_by_t = dict(zip(log.predictions_t_us.tolist(), log.predictions_label.tolist()))
    rows = [
        (
            int(tt),
            f"{log.reference_xy[r, 0]:.6f}",
            f"{log.reference_xy[r, 1]:.6f}",
            Movement(int(log.reference_label[r])).name.lower(),
            f"{log.cursor_xy[c, 0]:.6f}",
            f"{log.cursor_xy[c, 1]:.6f}",
            (
                Movement(pred_by_t[int(tt)]).name.lower()
                if int(tt) in pred_by_t
                else ""
            ),
        )
        for tt, r, c in zip(t.tolist(), ri, ci)
    ]
    p = out_dir / "trajectory.csv"
    _write_csv(
        p,
        ["t_us", "reference_x", "reference_y", "reference_label", "cursor_x", "cursor_y", "predicted"],
        rows,
    )
    files.append(p)

    p = out_dir / "stim_commands.csv"
    _write_csv(
        p,
        ["t_us", "channel", "current_ma", "pulse_freq_hz", "duration_s"],
        (
            (
                int(t),
                StimChannel(int(ch)).name.lower(),
                f"{ma:.3f}",
                f"{hz:.1f}",
                f"{du:.3f}",
            )
            for t, ch, ma, hz, du in zip(
                log.stim_t_us,
                log.stim_channel,
                log.stim_current_ma,
                log.stim_pulse_freq_hz,
                log.stim_duration_s,
            )
        ),
    )
    files.append(p)

    p = out_dir / "angle.csv"
    _write_csv(
        p,
        ["t_us", "angle_deg"],
        ((int(t), f"{a:.5f}") for t, a in zip(log.angle_t_us, log.angle_deg)),
    )
    files.append(p)
    return files


def cmd_eval(args) -> int:
    if not args.log.is_file():
        raise _config_error(f"log file not found: {args.log}")
    log = read_session(args.log)
    summary = report.evaluate(log)
    text = _format_report(summary)
    print(text)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "report.txt").write_text(text + "\n")
        (args.out / "report.json").write_text(json.dumps(summary, indent=2) + "\n")
        files = _eval_csvs(log, args.out)
        print(f"\nwrote {args.out / 'report.txt'}, {args.out / 'report.json'}")
        for f in files:
            print(f"wrote {f}")
    return 0


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="emgfes",
        description="EMG-driven closed-loop FES control engine (simulated bench)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="record a labeled calibration session")
    _add_common(p, "calibrate")
    p.add_argument("--out", type=Path, required=True, help="calibration output file (npz)")
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("train", help="train a decoder from a calibration file")
    p.add_argument("--model", choices=("lda", "gbdt"), required=True)
    p.add_argument("--calibration", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="model output file")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("simulate", help="run the closed loop headless (deterministic)")
    _add_common(p, "simulate")
    p.add_argument("--out", type=Path, help="session log output file")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("run", help="run the closed loop wall-paced behind the gateway")
    _add_common(p, "run")
    p.add_argument("--out", type=Path, help="session log output file")
    p.add_argument("--bind", help="gateway host:port (default $EMGFES_BIND or 127.0.0.1:8765)")
    p.add_argument("--static", type=Path, help="UI asset directory served over HTTP")
    p.add_argument("--decimation", type=int, default=3, help="broadcast every Nth tick")
    p.add_argument(
        "--interactive",
        action="store_true",
        help="drive intent from gateway IntentInput messages instead of the reference script",
    )
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("replay", help="re-run a logged session and verify byte identity")
    p.add_argument("--log", type=Path, required=True)
    p.add_argument("--out", type=Path, help="write the regenerated log here")
    p.add_argument(
        "--model-file",
        type=Path,
        help="decoder used for the original session, if it was not trained in-process",
    )
    p.set_defaults(fn=cmd_replay)

    p = sub.add_parser("eval", help="evaluate a session log: text report + CSV series")
    p.add_argument("--log", type=Path, required=True)
    p.add_argument("--out", type=Path, help="directory for report.txt/json and CSV series")
    p.set_defaults(fn=cmd_eval)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except (ConfigError, ValueError, TypeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return CONFIG_EXIT
    except (SafetyViolation, IoFailure, CorruptLog, InsufficientData, BindFailure, ModelFormatError, OSError) as e:
        print(f"aborted: {e}", file=sys.stderr)
        return RUNTIME_EXIT


if __name__ == "__main__":
    sys.exit(main())
