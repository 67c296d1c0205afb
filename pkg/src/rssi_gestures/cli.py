"""Command-line interface.

Configuration is a flat key=value mapping resolved as
defaults <- ``--config`` file <- ``--set key=value`` flags (and ``--seed``).
Exit codes: 0 success, 1 usage, 2 data error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import functools
import logging
import signal
import sys
import threading
from pathlib import Path

import numpy as np

from rssi_gestures import bundle
from rssi_gestures.evaluate import (LABEL_ORDER, EvalReport, calibrate_recognizer, confusion_csv, decision_counts,
                                    evaluate_splits, soak, train_recognizer)
from rssi_gestures.ingest import (ParseError, extract_gesture_windows, read_rssi_log, split_train_test,
                                  write_rssi_log)
from rssi_gestures.knn_dtw import DtwConfig
from rssi_gestures.labels import GESTURES
from rssi_gestures.live import (BoundedSampleQueue, InducerConfig, InducerPermissionError, PollerThread,
                                QueueSource, ReplaySource, induce, iter_source)
from rssi_gestures.lstm import ModelFormatError, TrainConfig
from rssi_gestures.lstm.train import expand_grid, grid_search_cv
from rssi_gestures.pipeline import GateConfig, Recognizer, recognize_stream
from rssi_gestures.signal_model import (ChannelParams, SamplingMode, SamplingProfile, background_session,
                                        generate_dataset)

log = logging.getLogger("rssi_gestures")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3

DEFAULTS: dict[str, object] = {
    # channel and sampling
    "l0": -40.0,
    "path_loss_exponent": 2.0,
    "sigma": 1.0,
    "nakagami_m": 4.0,
    "nakagami_omega": 1.0,
    "distance_m": 2.0,
    "profile": "induced",
    "beacon_interval_ms": 102.0,
    "induced_rate_hz": 200.0,
    "jitter_fraction": 0.2,
    "quantize": False,
    # synthesis
    "scenarios": "induced",
    "per_class": 300,
    "per_file_per_class": 50,
    "gap_s": 10.0,
    # data and preprocessing
    "data": "",
    "window_s": 4.0,
    "hop_s": 1.0,
    "tau": 50,
    # model and training
    "hidden": 200,
    "layers": 2,
    "learning_rate": 0.001,
    "batch_size": 50,
    "dropout": 0.5,
    "init_range": 0.08,
    "max_grad_norm": 25.0,
    "iterations": 600,
    "combined": False,
    "combined_iterations": 1000,
    "forget_bias": 1.0,
    # evaluation
    "splits": 10,
    "train_ratio": 0.75,
    "knn": False,
    "knn_k": 1,
    "dtw_band": "none",
    "dtw_metric": "l1",
    "eval_pipeline": False,
    # grid search
    "folds": 4,
    "grid_tau": "",
    "grid_window_s": "",
    "grid_layers": "",
    "grid_hidden": "",
    # noise soak and calibration
    "model": "",
    "soak_minutes": 30.0,
    "activity_per_min": 2.0,
    "activity_depth_db": 2.0,
    "calibrate": True,
    "calibration_minutes": 10.0,
    "recall_retention": 0.95,
    # online recognition
    "source": "",
    "interface": "",
    "poll_rate_hz": 200.0,
    "duration_s": 0.0,
    "noise_transparent_pull": False,
    "variance_threshold": "model",
    # traffic induction
    "target": "192.168.1.1",
    "rate_hz": 700.0,
    "payload_bytes": 56,
    "allow_udp_fallback": True,
}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def _coerce(key: str, raw: str):
    default = DEFAULTS[key]
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise UsageError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_assignments(lines, origin: str) -> dict[str, object]:
    out = {}
    for n, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{origin}:{n}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise UsageError(f"{origin}:{n}: unknown configuration key {key!r}")
        out[key] = _coerce(key, value)
    return out


def resolve_config(config_file: str | None, sets: list[str], seed: int | None) -> dict[str, object]:
    cfg = dict(DEFAULTS)
    if config_file:
        try:
            text = Path(config_file).read_text()
        except OSError as e:
            raise UsageError(f"cannot read config file: {e}") from None
        cfg.update(parse_assignments(text.splitlines(), config_file))
    cfg.update(parse_assignments(sets, "--set"))
    cfg["seed"] = 0 if seed is None else seed
    return cfg


def format_config(cfg: dict) -> str:
    return "".join(f"{k}={cfg[k]}\n" for k in sorted(cfg))


# --- config to domain objects ----------------------------------------------

def _usage_on_invalid(factory):
    """Invalid configuration values surface as usage errors, not runtime failures."""
    @functools.wraps(factory)
    def wrapper(*args, **kwargs):
        try:
            return factory(*args, **kwargs)
        except ValueError as e:
            raise UsageError(str(e)) from None
    return wrapper


@_usage_on_invalid
def channel_params(cfg) -> ChannelParams:
    return ChannelParams(cfg["l0"], cfg["path_loss_exponent"], cfg["sigma"], cfg["nakagami_m"],
                         cfg["nakagami_omega"], cfg["distance_m"])


@_usage_on_invalid
def sampling_profile(cfg, mode: str | None = None) -> SamplingProfile:
    mode = mode or cfg["profile"]
    try:
        m = SamplingMode(mode)
    except ValueError:
        raise UsageError(f"unknown sampling profile {mode!r} (use induced or beacon-only)") from None
    return SamplingProfile(m, cfg["beacon_interval_ms"], cfg["induced_rate_hz"], cfg["jitter_fraction"])


@_usage_on_invalid
def train_config(cfg, seed: int | None = None) -> TrainConfig:
    iterations = cfg["combined_iterations"] if cfg["combined"] else cfg["iterations"]
    return TrainConfig(hidden=cfg["hidden"], layers=cfg["layers"], learning_rate=cfg["learning_rate"],
                       batch_size=cfg["batch_size"], dropout=cfg["dropout"], init_range=cfg["init_range"],
                       max_grad_norm=cfg["max_grad_norm"], iterations=iterations,
                       forget_bias=cfg["forget_bias"], seed=cfg["seed"] if seed is None else seed)


@_usage_on_invalid
def dtw_config(cfg) -> DtwConfig:
    band = cfg["dtw_band"]
    return DtwConfig(k=cfg["knn_k"], band=None if str(band).lower() in ("", "none") else int(band),
                     metric=cfg["dtw_metric"])


def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def data_files(cfg) -> list[Path]:
    spec = cfg["data"]
    if not spec:
        raise UsageError("no input data: set data=<file or directory>[,<more>]")
    files = []
    for part in str(spec).split(","):
        p = Path(part.strip())
        if p.is_dir():
            files.extend(sorted(p.rglob("*.log")))
        elif p.is_file():
            files.append(p)
        else:
            raise DataError(f"data path {p} does not exist")
    if not files:
        raise DataError(f"no .log files found under {spec}")
    return files


def load_labelled_windows(cfg, window_s: float | None = None):
    window_s = cfg["window_s"] if window_s is None else window_s
    windows = []
    for f in data_files(cfg):
        windows.extend(extract_gesture_windows(read_rssi_log(f), window_s))
    if not windows:
        raise DataError("no gesture windows could be extracted from the input data")
    return windows


def _derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def _fmt(x: float) -> str:
    return f"{x:.4f}"


# --- commands --------------------------------------------------------------

def cmd_synth(cfg, out: Path) -> int:
    params = channel_params(cfg)
    per_file = min(cfg["per_file_per_class"], cfg["per_class"])
    if per_file <= 0 or cfg["per_class"] <= 0:
        raise UsageError("per_class and per_file_per_class must be positive")
    written = 0
    for si, scenario in enumerate(s.strip() for s in cfg["scenarios"].split(",") if s.strip()):
        profile = sampling_profile(cfg, scenario)
        target = out / scenario
        target.mkdir(parents=True, exist_ok=True)
        remaining = cfg["per_class"]
        fi = 0
        while remaining > 0:
            count = min(per_file, remaining)
            seed = _derive_seed(cfg["seed"], si, fi)
            session = generate_dataset(params, profile, per_class_count=count, gap_s=cfg["gap_s"],
                                       seed=seed, quantize=cfg["quantize"])
            name = f"session_{fi:03d}"
            write_rssi_log(target / f"{name}.log",
                           session.to_log(session_id=f"{scenario}/{name}", scenario=scenario))
            remaining -= count
            fi += 1
            written += 1
        log.info("wrote %d session files for scenario %s", fi, scenario)
    print(f"files={written}")
    return EXIT_OK


def cmd_train(cfg, out: Path) -> int:
    windows = load_labelled_windows(cfg)
    tcfg = train_config(cfg)
    log.info("training on %d windows for %d iterations", len(windows), tcfg.iterations)
    rec, losses, elapsed, _, _ = train_recognizer(windows, cfg["tau"], tcfg, cfg["window_s"], cfg["hop_s"])
    bundle.save_recognizer(out / "model.bin", rec)
    with open(out / "loss.csv", "w") as fh:
        fh.write("iteration,loss\n")
        fh.writelines(f"{i},{loss!r}\n" for i, loss in enumerate(losses))
    log.info("training took %.1f s; final loss %.4f", elapsed, losses[-1])
    print(f"model={out / 'model.bin'}")
    return EXIT_OK


def _write_report_files(out: Path, reports: list[EvalReport]):
    with open(out / "accuracies.csv", "w") as fh:
        fh.write("split," + ",".join(r.name for r in reports) + "\n")
        for i in range(len(reports[0].split_accuracies)):
            fh.write(f"{i}," + ",".join(_fmt(r.split_accuracies[i]) for r in reports) + "\n")
    for r in reports:
        suffix = "" if r.name == "lstm" else "_knn"
        (out / f"confusion{suffix}.csv").write_text(confusion_csv(r.confusion))
    with open(out / "per_class.csv", "w") as fh:
        fh.write("method," + ",".join(str(g) for g in GESTURES) + ",mean,std\n")
        for r in reports:
            pc = r.per_class()
            fh.write(r.name + "," + ",".join(_fmt(pc[g]) for g in GESTURES)
                     + f",{_fmt(r.mean)},{_fmt(r.std)}\n")
    # wall-clock timings are not reproducible, so they live apart from the CSVs
    (out / "summary.txt").write_text("\n".join(r.summary() for r in reports) + "\n")


def cmd_eval(cfg, out: Path) -> int:
    windows = load_labelled_windows(cfg)
    knn = dtw_config(cfg) if cfg["knn"] else None
    reports = evaluate_splits(windows, cfg["tau"], train_config(cfg), cfg["window_s"], cfg["splits"],
                              cfg["train_ratio"], cfg["seed"], knn, cfg["eval_pipeline"],
                              progress=lambda r, res: log.info("split %d done", r))
    _write_report_files(out, reports)
    for r in reports:
        print(r.summary())
    return EXIT_OK


def cmd_gridsearch(cfg, out: Path) -> int:
    window_values = _float_list(cfg["grid_window_s"]) or [cfg["window_s"]]
    grid = {}
    if cfg["grid_tau"]:
        grid["tau"] = _int_list(cfg["grid_tau"])
    if cfg["grid_layers"]:
        grid["layers"] = _int_list(cfg["grid_layers"])
    if cfg["grid_hidden"]:
        grid["hidden"] = _int_list(cfg["grid_hidden"])
    if not grid and not cfg["grid_window_s"]:
        raise UsageError("empty grid: set at least one of grid_tau, grid_window_s, grid_layers, grid_hidden")
    rows = []
    for window_s in window_values:
        windows = load_labelled_windows(cfg, window_s)
        _, results = grid_search_cv(windows, expand_grid(grid), train_config(cfg), cfg["tau"], window_s,
                                    cfg["folds"], cfg["seed"])
        for res in results:
            rows.append((window_s, res))
    rows.sort(key=lambda wr: (-wr[1].mean, wr[1].n_parameters))
    base = train_config(cfg)
    with open(out / "gridsearch.csv", "w") as fh:
        fh.write("rank,window_s,tau,layers,hidden,n_parameters,mean_accuracy,std_accuracy,fold_scores\n")
        for rank, (window_s, res) in enumerate(rows, 1):
            p = res.params
            fh.write(f"{rank},{window_s!r},{p.get('tau', cfg['tau'])},{p.get('layers', base.layers)},"
                     f"{p.get('hidden', base.hidden)},{res.n_parameters},{_fmt(res.mean)},{_fmt(res.std)},"
                     + ";".join(_fmt(s) for s in res.fold_scores) + "\n")
    best_w, best = rows[0]
    print(f"best window_s={best_w} {best.params} accuracy={best.mean:.1f}%")
    return EXIT_OK


def _load_model(cfg) -> Recognizer:
    if not cfg["model"]:
        raise UsageError("no model: set model=<path to model.bin>")
    path = Path(cfg["model"])
    if not path.is_file():
        raise DataError(f"model file {path} does not exist")
    rec = bundle.load_recognizer(path)
    rec.noise_transparent_pull = cfg["noise_transparent_pull"]
    if cfg["variance_threshold"] != "model":
        rec.gate = GateConfig(float(cfg["variance_threshold"]))
    return rec


def _background(cfg, minutes: float, seed: int):
    depth = cfg["activity_depth_db"]
    return background_session(channel_params(cfg), sampling_profile(cfg), minutes * 60.0, seed,
                              events_per_min=cfg["activity_per_min"], depth_db=(0.25 * depth, depth),
                              quantize=cfg["quantize"])


def cmd_fp_soak(cfg, out: Path) -> int:
    rec = _load_model(cfg)
    if cfg["calibrate"]:
        windows = load_labelled_windows(cfg, rec.windowing.window_s)
        # held-out gesture windows: the test side of a fixed split
        _, held_out = split_train_test(windows, cfg["train_ratio"], cfg["seed"])
        noise = _background(cfg, cfg["calibration_minutes"], _derive_seed(cfg["seed"], 1))
        rec.thresholds = calibrate_recognizer(rec, held_out, noise, cfg["recall_retention"])
        bundle.save_recognizer(out / "model_calibrated.bin", rec)
        log.info("calibrated logit thresholds %s", rec.thresholds)
    session = _background(cfg, cfg["soak_minutes"], _derive_seed(cfg["seed"], 2))
    decisions = soak(rec, session.timestamps_ms, session.rssi_dbm, end_ms=cfg["soak_minutes"] * 60000.0)
    with open(out / "soak_predictions.csv", "w") as fh:
        fh.write("time_s,label\n")
        fh.writelines(f"{t:.3f},{lab}\n" for t, lab in decisions)
    counts = decision_counts(decisions)
    total = max(len(decisions), 1)
    with open(out / "soak_report.csv", "w") as fh:
        fh.write("label,count,percent\n")
        for lab in LABEL_ORDER:
            fh.write(f"{lab},{counts[lab]},{_fmt(100.0 * counts[lab] / total)}\n")
    print(f"windows={len(decisions)} noise={100.0 * counts[LABEL_ORDER[-1]] / total:.1f}%")
    return EXIT_OK


class _Stop(Exception):
    pass


def cmd_run(cfg, out: Path) -> int:
    rec = _load_model(cfg)
    source = cfg["source"]
    poller = None
    if source.startswith("replay:"):
        path = Path(source[len("replay:"):])
        if not path.is_file():
            raise DataError(f"replay file {path} does not exist")
        samples = iter_source(ReplaySource(read_rssi_log(path)))
    elif source.startswith("proc"):
        path = source.split(":", 1)[1] if ":" in source else "/proc/net/wireless"
        queue = BoundedSampleQueue(1024)
        poller = PollerThread(queue, path, cfg["poll_rate_hz"], cfg["interface"] or None)
        poller.start()
        if cfg["duration_s"] > 0:
            threading.Timer(cfg["duration_s"], poller.stop).start()
        samples = iter_source(QueueSource(queue))
    else:
        raise UsageError("source must be replay:<log file> or proc[:<path>]")

    def on_sigint(signum, frame):
        raise _Stop

    previous = signal.signal(signal.SIGINT, on_sigint)
    sys.stdout.write("time_s,label\n")
    try:
        for t, lab in recognize_stream(samples, rec):
            sys.stdout.write(f"{t:.3f},{lab}\n")
            sys.stdout.flush()
    except _Stop:
        log.info("interrupted; partial output flushed")
    finally:
        signal.signal(signal.SIGINT, previous)
        sys.stdout.flush()
        if poller is not None:
            poller.stop()
            if poller.queue.dropped:
                log.warning("dropped %d samples on queue overflow", poller.queue.dropped)
    return EXIT_OK


def cmd_induce(cfg, out: Path) -> int:
    icfg = _usage_on_invalid(InducerConfig)(cfg["target"], cfg["rate_hz"], cfg["payload_bytes"],
                                            cfg["allow_udp_fallback"])
    stop = threading.Event()
    previous = signal.signal(signal.SIGINT, lambda *_: stop.set())
    try:
        stats = induce(icfg, stop, cfg["duration_s"] or None)
    finally:
        signal.signal(signal.SIGINT, previous)
    print(stats.format())
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "gridsearch": cmd_gridsearch,
    "fp-soak": cmd_fp_soak,
    "run": cmd_run,
    "induce": cmd_induce,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rssi-gestures", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="key=value configuration file")
    parser.add_argument("--seed", type=int, help="random seed (default 0)")
    parser.add_argument("--out", default="out", help="output directory (default ./out)")
    parser.add_argument("-s", "--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration key; repeatable")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("command", choices=sorted(COMMANDS))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.seed is not None and args.seed < 0:
            raise UsageError("--seed must be a non-negative integer")
        cfg = resolve_config(args.config, args.set, args.seed)
        out = Path(args.out)
        if args.command not in ("run", "induce"):
            out.mkdir(parents=True, exist_ok=True)
            (out / f"{args.command}.config").write_text(format_config(cfg))
        log.info("resolved configuration:\n%s", format_config(cfg).rstrip())
        return COMMANDS[args.command](cfg, out)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ParseError, ModelFormatError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except InducerPermissionError as e:
        print(f"permission error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
