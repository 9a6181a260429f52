"""Command-line entry point: ``dadnet run|sweep|spectrogram|compare``.

Exit codes: 0 on success, 2 for invalid configs or arguments, 3 when
training diverges.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from dadnet import container, experiment, spectral
from dadnet import data_pipeline as dp
from dadnet.errors import FormatError, InvalidArgumentError, TrainingDivergedError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def _std_list(text):
    try:
        return [float(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid std list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dadnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch metrics")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="override [experiment] seed")
    common.add_argument("--out-dir", help="override [experiment] out_dir")
    common.add_argument("--epochs-override", type=int, help="override [training] epochs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="train and evaluate one decoder")
    p.add_argument("config")

    p = sub.add_parser("sweep", parents=[common], help="noise robustness curve")
    p.add_argument("config")
    p.add_argument("--stds", type=_std_list, help="noise stds, e.g. '0,1e-3,1e-2'")
    p.add_argument("--decoders", default=None,
                   help="comma-separated decoders to sweep (default: the config's decoder)")

    p = sub.add_parser("spectrogram", help="magnitude spectrogram of a WAV or ACSD tensor")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--n-fft", type=int, default=spectral.N_FFT)
    p.add_argument("--hop", type=int, default=spectral.HOP)

    p = sub.add_parser("compare", parents=[common], help="run two configs side by side")
    p.add_argument("config_a")
    p.add_argument("config_b")
    return parser


def _load(path, args):
    cfg = experiment.load_config(path)
    return experiment.apply_overrides(cfg, args.seed, args.out_dir, args.epochs_override)


def _print_rows(rows, columns):
    print(",".join(columns))
    for row in rows:
        print(",".join(repr(row[c]) if isinstance(row[c], float) else str(row[c]) for c in columns))


def cmd_run(args):
    report = experiment.run_experiment(_load(args.config, args))
    _print_rows([report.row], experiment.REPORT_COLUMNS)


def cmd_sweep(args):
    cfg = _load(args.config, args)
    decoders = tuple(d.strip() for d in args.decoders.split(",")) if args.decoders else None
    for d in decoders or ():
        if d not in experiment.DECODERS:
            raise InvalidArgumentError(f"unknown decoder {d!r}")
    rows = experiment.run_sweep(cfg, args.stds, decoders)
    _print_rows(rows, ("decoder", "std", "test_mse"))


def cmd_spectrogram(args):
    src = Path(args.input)
    rate = None
    if src.suffix.lower() == ".wav":
        samples, rate = dp.read_wav(src)
        signal = samples.astype(np.float64) / dp.PCM16_SCALE
    else:
        tensors = container.read(src)
        if not tensors:
            raise FormatError(f"{src}: container holds no tensors")
        signal = tensors[0].reshape(-1)
    spec = spectral.spectrogram(signal, args.n_fft, args.hop)
    out = Path(args.out)
    np.savetxt(out, spec, delimiter=",", fmt="%.17g",
               header=",".join(f"bin_{k}" for k in range(spec.shape[1])), comments="")
    meta = {"n_fft": args.n_fft, "hop": args.hop, "window": spectral.WINDOW,
            "db_floor": spectral.DB_FLOOR, "frames": spec.shape[0], "bins": spec.shape[1],
            "sample_rate": rate, "input": str(src)}
    out.with_suffix(out.suffix + ".json").write_text(json.dumps(meta, indent=2))
    print(f"{spec.shape[0]} frames x {spec.shape[1]} bins -> {out}")


def cmd_compare(args):
    cfgs = [_load(args.config_a, args), _load(args.config_b, args)]
    rows = experiment.run_compare(cfgs, args.out_dir)
    _print_rows(rows, experiment.REPORT_COLUMNS)


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "spectrogram": cmd_spectrogram, "compare": cmd_compare}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except TrainingDivergedError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (FormatError, InvalidArgumentError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
