"""Experiment configs, end-to-end runs, reports and checkpoints.

Configs are INI files. Every key is optional; unknown sections or keys are
rejected with the offending line number. Defaults give the desk-scale
synthetic profile (n=50, 25% CS ratio, 2000/500 split, 30 epochs at
learning rate 1e-3); longer schedules and other learning rates are
reachable through ``[training]``.

Example::

    [experiment]
    name = desk
    decoder = admm-dad
    seed = 0

    [data]
    source = synthetic
    n = 50

    [decoder]
    layers = 5
"""

from __future__ import annotations

import configparser
import csv
import json
import logging
import math
import re
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from dadnet import admm_dad, container, ista_baseline
from dadnet import data_pipeline as dp
from dadnet import training as tr
from dadnet.errors import FormatError, InvalidArgumentError

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("decoder", "dataset", "cs_ratio", "L", "test_mse", "gen_error")
HISTORY_COLUMNS = ("epoch", "train_mse", "test_mse", "gen_error")
DEFAULT_SWEEP_STDS = (1e-4, 1e-3, 1e-2, 1e-1)
DECODERS = ("admm-dad", "ista")


class ConfigError(FormatError):
    """Invalid experiment config; the message carries ``path:line``."""


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _float_or_auto(text: str):
    return "auto" if text.strip().lower() == "auto" else float(text)


def _stds(text: str):
    return tuple(float(t) for t in re.split(r"[,\s]+", text.strip()) if t)


# section -> key -> (attribute, parser)
SCHEMA = {
    "experiment": {
        "name": ("name", str),
        "decoder": ("decoder", str),
        "seed": ("seed", int),
        "out_dir": ("out_dir", str),
    },
    "data": {
        "source": ("source", str),
        "path": ("data_path", str),
        "n": ("n", int),
        "atoms": ("atoms", int),
        "sparsity": ("sparsity", int),
        "train_count": ("train_count", int),
        "test_count": ("test_count", int),
        "train_fraction": ("train_fraction", float),
        "max_signals": ("max_signals", int),
        "noise_std": ("noise_std", float),
        "noise_in_training": ("noise_in_training", _bool),
        "downsample": ("downsample", str),
    },
    "measurement": {
        "cs_ratio": ("cs_ratio", float),
    },
    "decoder": {
        "layers": ("layers", int),
        "lambda": ("lam", float),
        "rho": ("rho", float),
        "redundancy_ratio": ("redundancy_ratio", float),
        "b_out": ("b_out", _float_or_auto),
        "b_out_factor": ("b_out_factor", float),
        "ista_step": ("ista_step", _float_or_auto),
        "ista_threshold": ("ista_threshold", float),
        "learn_threshold": ("learn_threshold", _bool),
    },
    "training": {
        "learning_rate": ("learning_rate", float),
        "batch_size": ("batch_size", int),
        "epochs": ("epochs", int),
        "beta1": ("beta1", float),
        "beta2": ("beta2", float),
        "epsilon": ("epsilon", float),
    },
    "sweep": {
        "stds": ("sweep_stds", _stds),
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    decoder: str = "admm-dad"
    seed: int = 0
    out_dir: str = "runs"
    # data
    source: str = "synthetic"
    data_path: str | None = None
    n: int = 50
    atoms: int = 100
    sparsity: int = 3
    train_count: int = 2000
    test_count: int = 500
    train_fraction: float = 0.7
    max_signals: int | None = None
    noise_std: float = 1e-4
    noise_in_training: bool = True
    downsample: str = "pair"
    # measurement
    cs_ratio: float = 0.25
    # decoder
    layers: int = 5
    lam: float = admm_dad.DEFAULT_LAMBDA
    rho: float = admm_dad.DEFAULT_RHO
    redundancy_ratio: float = 5.0
    b_out: float | str = "auto"
    b_out_factor: float = 1.1
    ista_step: float | str = "auto"
    ista_threshold: float = ista_baseline.DEFAULT_THRESHOLD
    learn_threshold: bool = False
    # training
    learning_rate: float = 1e-3
    batch_size: int = 128
    epochs: int = 30
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    # sweep
    sweep_stds: tuple = DEFAULT_SWEEP_STDS
    source_file: str | None = field(default=None, compare=False)

    def train_config(self) -> tr.TrainConfig:
        return tr.TrainConfig(self.learning_rate, self.batch_size, self.epochs, self.seeds()["train"],
                              self.beta1, self.beta2, self.epsilon)

    def seeds(self) -> dict[str, int]:
        """Independent sub-seeds derived from the experiment seed."""
        names = ("ensemble", "data", "noise", "init", "train", "sweep")
        state = np.random.SeedSequence(self.seed).generate_state(len(names))
        return {k: int(v) for k, v in zip(names, state)}

    def snapshot(self) -> dict:
        d = asdict(self)
        d["sweep_stds"] = list(self.sweep_stds)
        d["seeds"] = self.seeds()
        return d


def _locate(lines: list[str], section: str | None, key: str | None) -> int:
    current = None
    for no, line in enumerate(lines, 1):
        stripped = line.strip()
        m = re.match(r"\[([^\]]+)\]", stripped)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return no
            continue
        if current == section and key is not None:
            m = re.match(r"([^=:\s]+)\s*[=:]", stripped)
            if m and m.group(1).lower() == key:
                return no
    return 0


def parse_config_text(text: str, path: str = "<config>") -> ExperimentConfig:
    lines = text.splitlines()
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=path)
    except configparser.Error as exc:
        lineno = getattr(exc, "lineno", 0) or 0
        msg = str(exc).splitlines()[0]
        raise ConfigError(f"{path}:{lineno}: {msg}") from None

    values = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{path}:{_locate(lines, section, None)}: unknown section [{section}]")
        for key, raw in parser.items(section):
            where = f"{path}:{_locate(lines, section, key)}"
            if key not in SCHEMA[section]:
                raise ConfigError(f"{where}: unknown key {key!r} in [{section}]")
            attr, conv = SCHEMA[section][key]
            try:
                values[attr] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"{where}: invalid value for {key!r}: {exc}") from None
            values.setdefault("_lines", {})[attr] = where

    where = values.pop("_lines", {})
    cfg = ExperimentConfig(**values, source_file=path)
    _validate(cfg, where, path)
    return cfg


def _validate(cfg: ExperimentConfig, where: dict, path: str) -> None:
    def fail(attr, msg):
        raise ConfigError(f"{where.get(attr, path + ':0')}: {msg}")

    if cfg.decoder not in DECODERS:
        fail("decoder", f"decoder must be one of {DECODERS}, got {cfg.decoder!r}")
    if cfg.source not in ("synthetic", "wav", "pnm"):
        fail("source", f"unknown data source {cfg.source!r}")
    if cfg.source != "synthetic":
        if not cfg.data_path:
            fail("source", f"source {cfg.source!r} needs a data path")
        data_path = Path(cfg.data_path)
        if not data_path.is_absolute() and cfg.source_file:
            data_path = Path(cfg.source_file).parent / data_path
        if not data_path.is_dir():
            fail("data_path", f"data path {cfg.data_path!r} does not exist")
    if cfg.downsample not in ("pair", "fir"):
        fail("downsample", "downsample must be 'pair' or 'fir'")
    if not 0 < cfg.cs_ratio < 1:
        fail("cs_ratio", "cs_ratio must lie in (0, 1)")
    if not cfg.redundancy_ratio > 1:
        fail("redundancy_ratio", "redundancy_ratio must exceed 1")
    if cfg.layers < 1:
        fail("layers", "layers must be at least 1")
    if not (cfg.lam > 0 and cfg.rho > 0):
        fail("lam" if not cfg.lam > 0 else "rho", "lambda and rho must be positive")
    if cfg.b_out != "auto" and not cfg.b_out > 0:
        fail("b_out", "b_out must be positive or 'auto'")
    if cfg.noise_std < 0:
        fail("noise_std", "noise_std must be nonnegative")
    if cfg.epochs < 0:
        fail("epochs", "epochs must be nonnegative")
    if cfg.batch_size < 1:
        fail("batch_size", "batch_size must be positive")
    if cfg.source == "synthetic" and not 0 <= cfg.sparsity < cfg.atoms:
        fail("sparsity", "need 0 <= sparsity < atoms")
    if cfg.train_count < 1 or cfg.test_count < 1:
        fail("train_count", "train_count and test_count must be positive")
    if any(s < 0 for s in cfg.sweep_stds) or not cfg.sweep_stds:
        fail("sweep_stds", "sweep stds must be a nonempty list of nonnegative numbers")


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}:0: cannot read config: {exc.strerror}") from None
    return parse_config_text(text, str(p))


def apply_overrides(cfg: ExperimentConfig, seed=None, out_dir=None, epochs=None) -> ExperimentConfig:
    changes = {}
    if seed is not None:
        changes["seed"] = seed
    if out_dir is not None:
        changes["out_dir"] = str(out_dir)
    if epochs is not None:
        if epochs < 0:
            raise ConfigError("--epochs-override must be nonnegative")
        changes["epochs"] = epochs
    return replace(cfg, **changes) if changes else cfg


# ------------------------------------------------------------------- build


def build_dataset(cfg: ExperimentConfig) -> dp.Dataset:
    seeds = cfg.seeds()
    if cfg.source == "synthetic":
        X = dp.synth_sparse_dataset(cfg.n, cfg.atoms, cfg.sparsity,
                                    cfg.train_count + cfg.test_count, seeds["data"])
        X_train, X_test = X[:cfg.train_count], X[cfg.train_count:]
    else:
        data_path = Path(cfg.data_path)
        if not data_path.is_absolute() and cfg.source_file:
            data_path = Path(cfg.source_file).parent / data_path
        X = dp.load_signals(cfg.source, data_path, downsample=cfg.downsample)
        if cfg.max_signals is not None:
            X = X[:cfg.max_signals]
        train_idx, test_idx = dp.split_indices(X.shape[0], cfg.train_fraction, seeds["data"])
        X_train, X_test = X[train_idx], X[test_idx]
    ensemble = dp.make_ensemble(X_train.shape[1], cfg.cs_ratio, cfg.noise_std, seeds["ensemble"])
    return dp.build_dataset(X_train, X_test, ensemble, seeds["noise"], cfg.noise_in_training, cfg.source)


def build_model(cfg: ExperimentConfig, dataset: dp.Dataset, decoder: str | None = None):
    kind = decoder or cfg.decoder
    A = dataset.ensemble.A_tilde
    n = A.shape[1]
    if kind == "admm-dad":
        N = int(round(cfg.redundancy_ratio * n))
        b_out = cfg.b_out_factor * dataset.max_train_norm if cfg.b_out == "auto" else cfg.b_out
        return tr.AdmmDadModel(admm_dad.DecoderConfig(N, n, cfg.layers, cfg.lam, cfg.rho, b_out), A)
    if kind == "ista":
        base = ista_baseline.IstaConfig.for_matrix(A, cfg.layers, cfg.ista_threshold, cfg.learn_threshold)
        if cfg.ista_step != "auto":
            base = replace(base, step_size=cfg.ista_step)
        return tr.IstaModel(base, A)
    raise InvalidArgumentError(f"unknown decoder {kind!r}")


# ------------------------------------------------------------- checkpoints

_KIND_CODES = {"admm-dad": 1.0, "ista": 2.0}
_HEADER_FIELDS = ("kind", "L", "lam", "rho", "B_out", "N", "n", "step_size", "threshold",
                  "learn_threshold", "ensemble_seed", "cs_ratio", "noise_std")


def save_checkpoint(path, model, params: dict, ensemble: dp.MeasurementEnsemble) -> None:
    """Write header scalars, parameters and the measurement matrix as float64 ACSD."""
    c = model.config
    if model.kind == "admm-dad":
        header = [_KIND_CODES["admm-dad"], c.L, c.lam, c.rho, c.B_out, c.N, c.n, math.nan, math.nan, 0.0]
        tensors = [params["Phi"]]
    else:
        header = [_KIND_CODES["ista"], c.L, math.nan, math.nan, math.nan, math.nan, c.n,
                  c.step_size, c.threshold, float(c.learn_threshold)]
        tensors = [params["Psi"]] + ([np.asarray(params["tau"])] if c.learn_threshold else [])
    seed = math.nan if ensemble.seed is None else float(ensemble.seed)
    header += [seed, ensemble.cs_ratio, ensemble.noise_std]
    container.write(path, [np.array(header, dtype=np.float64), *tensors, ensemble.A_tilde],
                    container.VERSION_F64)


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`. Returns ``(model, params, meta)``."""
    tensors = container.read(path)
    if len(tensors) < 3 or tensors[0].shape != (len(_HEADER_FIELDS),):
        raise FormatError(f"{path}: not a decoder checkpoint")
    meta = dict(zip(_HEADER_FIELDS, tensors[0].tolist()))
    A = tensors[-1]
    if meta["kind"] == _KIND_CODES["admm-dad"]:
        cfg = admm_dad.DecoderConfig(int(meta["N"]), int(meta["n"]), int(meta["L"]),
                                     meta["lam"], meta["rho"], meta["B_out"])
        model = tr.AdmmDadModel(cfg, A)
        params = {"Phi": tensors[1]}
    elif meta["kind"] == _KIND_CODES["ista"]:
        learn = bool(meta["learn_threshold"])
        cfg = ista_baseline.IstaConfig(int(meta["n"]), int(meta["L"]), meta["step_size"],
                                       meta["threshold"], learn)
        model = tr.IstaModel(cfg, A)
        params = {"Psi": tensors[1]}
        if learn:
            params["tau"] = tensors[2]
    else:
        raise FormatError(f"{path}: unknown decoder kind {meta['kind']}")
    return model, params, meta


# ------------------------------------------------------------------ runs


@dataclass
class RunReport:
    config: dict
    metrics: tr.MetricsReport
    timings: dict
    checkpoint_path: str
    report_path: str
    row: dict

    @property
    def test_mse(self) -> float:
        return self.metrics.test_mse


def report_row(cfg: ExperimentConfig, decoder: str, metrics: tr.MetricsReport) -> dict:
    return {
        "decoder": decoder,
        "dataset": cfg.source,
        "cs_ratio": cfg.cs_ratio,
        "L": cfg.layers,
        "test_mse": metrics.test_mse,
        "gen_error": metrics.generalization_error,
    }


def write_rows(path, columns, rows) -> None:
    """CSV with floats at full precision (``repr``)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in columns])


def run_dir(cfg: ExperimentConfig, decoder: str) -> Path:
    return Path(cfg.out_dir) / f"{cfg.name}-{decoder}"


def train_decoder(cfg: ExperimentConfig, dataset: dp.Dataset | None = None, decoder: str | None = None):
    """Build and train one decoder. Returns ``(model, params, metrics, dataset)``."""
    dataset = dataset or build_dataset(cfg)
    model = build_model(cfg, dataset, decoder)
    params = model.init_params(cfg.seeds()["init"])
    params, metrics = tr.train(model, dataset, cfg.train_config(), params)
    return model, params, metrics, dataset


def run_experiment(cfg: ExperimentConfig | str | Path, decoder: str | None = None,
                   dataset: dp.Dataset | None = None) -> RunReport:
    """Train, evaluate and write ``report.csv``, ``history.csv``, ``config.json``
    and ``checkpoint.acsd`` into ``<out_dir>/<name>-<decoder>/``."""
    if not isinstance(cfg, ExperimentConfig):
        cfg = load_config(cfg)
    decoder = decoder or cfg.decoder
    t0 = time.perf_counter()
    dataset = dataset or build_dataset(cfg)
    t1 = time.perf_counter()
    model, params, metrics, _ = train_decoder(cfg, dataset, decoder)
    t2 = time.perf_counter()

    out = run_dir(cfg, decoder)
    out.mkdir(parents=True, exist_ok=True)
    row = report_row(cfg, decoder, metrics)
    report_path = out / "report.csv"
    write_rows(report_path, REPORT_COLUMNS, [row])
    write_rows(out / "history.csv", HISTORY_COLUMNS,
               [{"epoch": h.epoch, "train_mse": h.train_mse, "test_mse": h.test_mse,
                 "gen_error": h.gen_error} for h in metrics.history])
    ckpt = out / "checkpoint.acsd"
    save_checkpoint(ckpt, model, params, dataset.ensemble)

    snapshot = cfg.snapshot()
    snapshot["decoder"] = decoder
    snapshot["resolved"] = _resolved(model)
    timings = {"data_s": t1 - t0, "train_s": t2 - t1}
    sidecar = {
        "config": snapshot,
        "metrics": {"train_mse": metrics.train_mse, "test_mse": metrics.test_mse,
                    "gen_error": metrics.generalization_error},
        "timings": timings,
        "checkpoint": str(ckpt),
    }
    (out / "config.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    log.info("%s: test_mse=%r gen_error=%r", decoder, metrics.test_mse, metrics.generalization_error)
    return RunReport(snapshot, metrics, timings, str(ckpt), str(report_path), row)


def _resolved(model) -> dict:
    c = model.config
    if model.kind == "admm-dad":
        return {"N": c.N, "n": c.n, "L": c.L, "lambda": c.lam, "rho": c.rho, "B_out": c.B_out}
    return {"n": c.n, "L": c.L, "step_size": c.step_size, "threshold": c.threshold,
            "learn_threshold": c.learn_threshold}


def emit_robustness_curve(rows, path) -> list[dict]:
    """Write ``(decoder, std, test_mse)`` rows sorted ascending by std."""
    rows = [{"decoder": r[0], "std": float(r[1]), "test_mse": float(r[2])} for r in rows]
    if not rows:
        raise InvalidArgumentError("no sweep results to write")
    rows.sort(key=lambda r: r["std"])
    write_rows(path, ("decoder", "std", "test_mse"), rows)
    return rows


def run_sweep(cfg: ExperimentConfig, stds=None, decoders=None) -> list[dict]:
    """Train each decoder, then evaluate it under increasing test-time noise."""
    stds = tuple(sorted(stds if stds is not None else cfg.sweep_stds))
    dataset = build_dataset(cfg)
    results = []
    for decoder in decoders or (cfg.decoder,):
        report = run_experiment(cfg, decoder, dataset)
        model, params, _ = load_checkpoint(report.checkpoint_path)
        for std, err in tr.robustness_sweep(model, params, dataset.X_test, dataset.ensemble,
                                            stds, cfg.seeds()["sweep"]):
            results.append((decoder, std, err))
    out = Path(cfg.out_dir) / f"{cfg.name}-sweep.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    return emit_robustness_curve(results, out)


def run_compare(cfgs, out_dir=None) -> list[dict]:
    """Run several configs and write their report rows side by side."""
    rows = [run_experiment(cfg).row for cfg in cfgs]
    out = Path(out_dir or cfgs[0].out_dir) / "compare.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_rows(out, REPORT_COLUMNS, rows)
    return rows
