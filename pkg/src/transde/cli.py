"""Command-line entry point: ``transde {synth,decompose,train,score,eval,ablate}``.

Every command accepts ``--config FILE`` (flat JSON whose keys mirror
:class:`RunConfig`); explicit flags override file values.  Every output
directory receives ``config.json`` echoing the fully resolved configuration;
that file can be passed back through ``--config`` to repeat the run.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np
from threadpoolctl import threadpool_limits

from transde.data import (ANOMALY_KINDS, SynthConfig, TimeSeriesDataset, load_dataset, save_csv,
                          save_raw, synthesize_pair, window_origins)
from transde.decomposition import DEFAULT_ALPHA, decompose_batch
from transde.detection import DEFAULT_RATIO, evaluate, roc_auc, score_series, threshold_from_ratio
from transde.encoder import PATCH_LEVELS, EncoderConfig
from transde.errors import ConfigError, DataError, TransDeError
from transde.losses import LOSS_VARIANTS, LossConfig
from transde.model import NORMALIZE_MODES, TransDe
from transde.plotting import scores_svg
from transde.training import TrainConfig, train

log = logging.getLogger("transde")

ADJUST_MODES = ("on", "off", "both")
SYNTH = "synth"
ECHO_KEY = "_run"


@dataclass
class RunConfig:
    train_data: str = SYNTH
    test_data: Optional[str] = None
    window: int = 60
    patch_sizes: list = field(default_factory=lambda: [3, 5])
    alpha: float = DEFAULT_ALPHA
    d_model: int = 128
    heads: int = 1
    layers: int = 2
    patch_level: str = "both"
    normalize: str = "input"
    lr: float = 1e-4
    batch_size: int = 32
    epochs: int = 3
    seed: int = 0
    train_stride: Optional[int] = None
    score_stride: Optional[int] = None
    loss_variant: str = "symmetric-kl"
    stop_intra: bool = True
    stop_inter: bool = True
    ratio: object = DEFAULT_RATIO  # a fraction, or "labels" for the labelled anomaly rate
    point_adjust: str = "on"
    out_dir: str = "transde-out"
    synth_T: int = 4000
    synth_d: int = 3
    synth_kinds: list = field(default_factory=lambda: list(ANOMALY_KINDS))
    synth_rate: float = 0.05
    threads: int = 1

    def validate(self) -> "RunConfig":
        if self.patch_level not in PATCH_LEVELS:
            raise ConfigError(f"patch_level must be one of {PATCH_LEVELS}")
        if self.loss_variant not in LOSS_VARIANTS:
            raise ConfigError(f"loss_variant must be one of {LOSS_VARIANTS}")
        if self.normalize not in NORMALIZE_MODES:
            raise ConfigError(f"normalize must be one of {NORMALIZE_MODES}")
        if self.point_adjust not in ADJUST_MODES:
            raise ConfigError(f"point_adjust must be one of {ADJUST_MODES}")
        if self.ratio != "labels" and not (isinstance(self.ratio, (int, float)) and 0 < self.ratio < 1):
            raise ConfigError("ratio must be a fraction in (0, 1) or 'labels'")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        return self

    # -- derived configs -------------------------------------------------

    def encoder(self) -> EncoderConfig:
        return EncoderConfig(self.window, tuple(self.patch_sizes), self.d_model, self.heads,
                             self.layers, self.patch_level)

    def training(self) -> TrainConfig:
        return TrainConfig(lr=self.lr, batch_size=self.batch_size, epochs=self.epochs,
                           seed=self.seed, stride=self.train_stride)

    def loss(self) -> LossConfig:
        return LossConfig(self.loss_variant, self.stop_intra, self.stop_inter)

    def synth(self) -> SynthConfig:
        return SynthConfig(T=self.synth_T, d=self.synth_d, seed=self.seed,
                           kinds=tuple(self.synth_kinds), anomaly_rate=self.synth_rate)


_FIELD_NAMES = {f.name for f in fields(RunConfig)}


# ---------------------------------------------------------------------------
# config resolution
# ---------------------------------------------------------------------------


def _int_list(text: str) -> list:
    try:
        return [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _str_list(text: str) -> list:
    return [p.strip() for p in text.split(",") if p.strip()]


def _ratio(text: str):
    if text == "labels":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("ratio must be a number or 'labels'") from None


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    """Flags mirroring RunConfig.  Defaults are suppressed so only explicit flags override."""
    S = argparse.SUPPRESS
    p.add_argument("--config", default=None, help="JSON file with RunConfig keys")
    p.add_argument("--data", dest="train_data", default=S, help=f"data file or '{SYNTH}'")
    p.add_argument("--test-data", dest="test_data", default=S)
    p.add_argument("--window", type=int, default=S)
    p.add_argument("--patch-sizes", type=_int_list, default=S)
    p.add_argument("--alpha", type=float, default=S)
    p.add_argument("--d-model", type=int, default=S)
    p.add_argument("--heads", type=int, default=S)
    p.add_argument("--layers", type=int, default=S)
    p.add_argument("--patch-level", choices=PATCH_LEVELS, default=S)
    p.add_argument("--normalize", choices=NORMALIZE_MODES, default=S)
    p.add_argument("--lr", type=float, default=S)
    p.add_argument("--batch-size", type=int, default=S)
    p.add_argument("--epochs", type=int, default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--train-stride", type=int, default=S)
    p.add_argument("--score-stride", type=int, default=S)
    p.add_argument("--loss-variant", choices=LOSS_VARIANTS, default=S)
    p.add_argument("--stop-intra", action=argparse.BooleanOptionalAction, default=S)
    p.add_argument("--stop-inter", action=argparse.BooleanOptionalAction, default=S)
    p.add_argument("--ratio", type=_ratio, default=S)
    p.add_argument("--adjust", dest="point_adjust", choices=ADJUST_MODES, default=S)
    p.add_argument("--out", dest="out_dir", default=S)
    p.add_argument("--synth-T", dest="synth_T", type=int, default=S)
    p.add_argument("--synth-d", dest="synth_d", type=int, default=S)
    p.add_argument("--synth-kinds", type=_str_list, default=S)
    p.add_argument("--synth-rate", type=float, default=S)
    p.add_argument("--threads", type=int, default=S)


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values: dict = {}
    if args.config:
        path = Path(args.config)
        try:
            loaded = json.loads(path.read_text(encoding="utf-8"))
        except OSError:
            raise ConfigError(f"missing config file: {path}") from None
        except ValueError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        loaded.pop(ECHO_KEY, None)
        unknown = set(loaded) - _FIELD_NAMES
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values.update(loaded)
    values.update({k: v for k, v in vars(args).items() if k in _FIELD_NAMES})
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()


def _write_config(out: Path, command: str, cfg: RunConfig, **extra) -> None:
    # run metadata lives under one key so the echo can be passed back via --config
    echo = {**asdict(cfg), ECHO_KEY: {"command": command, **extra}}
    (out / "config.json").write_text(json.dumps(echo, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_train(cfg: RunConfig) -> TimeSeriesDataset:
    if cfg.train_data == SYNTH:
        return synthesize_pair(cfg.synth())[0]
    return load_dataset(cfg.train_data, split="train")


def _load_test(cfg: RunConfig) -> TimeSeriesDataset:
    source = cfg.test_data or cfg.train_data
    if source == SYNTH:
        return synthesize_pair(cfg.synth())[1]
    return load_dataset(source, split="test")


def _ratio_for(cfg: RunConfig, labels) -> float:
    if cfg.ratio == "labels":
        if labels is None:
            raise DataError("ratio 'labels' needs labelled data")
        return float(np.mean(labels))
    return float(cfg.ratio)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    train_ds, test_ds = synthesize_pair(cfg.synth())
    if args.format == "raw":
        save_raw(train_ds, out / "train.f32")
        save_raw(test_ds, out / "test.f32")
    else:
        save_csv(train_ds, out / "train.csv")
        save_csv(test_ds, out / "test.csv")
    (out / "anomalies.json").write_text(json.dumps(test_ds.anomalies, indent=2) + "\n", encoding="utf-8")
    _write_config(out, "synth", cfg, format=args.format)
    return 0


def cmd_decompose(cfg: RunConfig, args) -> int:
    """Trend and cyclical CSVs for a series, cut into windows (latest window wins on overlap)."""
    out = _out_dir(cfg)
    ds = load_dataset(cfg.train_data, split="train")
    W = args.decompose_window or ds.T
    origins = window_origins(ds.T, W, W, cover_tail=True)
    view = np.lib.stride_tricks.sliding_window_view(ds.values, W, axis=0)
    comps = decompose_batch(np.ascontiguousarray(view[origins].transpose(0, 2, 1)), cfg.alpha)
    trend = np.empty_like(ds.values)
    cyclical = np.empty_like(ds.values)
    for o, c in zip(origins, comps):
        trend[o:o + W] = c[0]
        cyclical[o:o + W] = c[1]
    save_csv(TimeSeriesDataset(trend, name="trend"), out / "trend.csv")
    save_csv(TimeSeriesDataset(cyclical, name="cyclical"), out / "cyclical.csv")
    _write_config(out, "decompose", cfg, decompose_window=W)
    return 0


def _fit(cfg: RunConfig, train_ds: TimeSeriesDataset):
    model = TransDe(cfg.encoder(), alpha=cfg.alpha, normalize=cfg.normalize, seed=cfg.seed)
    model.extra_config = {"loss_variant": cfg.loss_variant, "stop_intra": cfg.stop_intra,
                          "stop_inter": cfg.stop_inter, "lr": cfg.lr, "epochs": cfg.epochs,
                          "batch_size": cfg.batch_size, "train_stride": cfg.train_stride}
    history = train(train_ds, model, cfg.training(), cfg.loss())
    return model, history


def cmd_train(cfg: RunConfig, args) -> int:
    cfg.encoder()  # validate before touching data
    out = _out_dir(cfg)
    model, history = _fit(cfg, _load_train(cfg))
    model.save(out / "model.ckpt")
    with (out / "loss.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "mean_loss_intra"])
        for epoch, value in enumerate(history, start=1):
            writer.writerow([epoch, repr(float(value))])
    _write_config(out, "train", cfg)
    return 0


def _check_checkpoint(cfg: RunConfig, args, model: TransDe) -> None:
    """Explicit architecture flags must agree with the checkpoint."""
    given = vars(args)
    for key in ("window", "patch_sizes", "d_model", "heads", "layers", "patch_level"):
        if key in given:
            stored = getattr(model.config, key)
            wanted = tuple(given[key]) if key == "patch_sizes" else given[key]
            if stored != wanted:
                raise ConfigError(f"checkpoint/config mismatch on {key}: checkpoint has {stored}, "
                                  f"requested {wanted}")


def cmd_score(cfg: RunConfig, args) -> int:
    ckpt = Path(args.checkpoint) if args.checkpoint else Path(cfg.out_dir) / "model.ckpt"
    model = TransDe.load(ckpt)
    _check_checkpoint(cfg, args, model)
    test_ds = _load_test(cfg)
    out = _out_dir(cfg)
    scores = score_series(test_ds, model, stride=cfg.score_stride).scores
    rho = threshold_from_ratio(scores, _ratio_for(cfg, test_ds.labels))
    preds = (scores >= rho).astype(np.int64)
    with (out / "scores.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["timestamp", "score", "prediction", "label"])
        for t in range(test_ds.T):
            label = "" if test_ds.labels is None else int(test_ds.labels[t])
            writer.writerow([t, repr(float(scores[t])), int(preds[t]), label])
    if args.plot:
        svg = scores_svg(scores, test_ds.labels, rho, title=f"{test_ds.name} anomaly score")
        (out / "scores.svg").write_text(svg, encoding="utf-8")
    _write_config(out, "score", cfg, checkpoint=str(ckpt), threshold=rho)
    return 0


def read_scores_csv(path) -> tuple:
    """Return ``(scores, labels or None)`` from a scores CSV."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "score" not in rows[0]:
        raise DataError(f"{path}: expected a 'score' column")
    try:
        scores = np.array([float(r["score"]) for r in rows])
        raw = [r.get("label", "") for r in rows]
        labels = None if any(v in ("", None) for v in raw) else np.array([int(v) for v in raw])
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    return scores, labels


def _report(scores, labels, ratio: float, adjust: bool) -> dict:
    report, rho, _ = evaluate(scores, labels, ratio, adjust)
    return {**report.to_dict(), "threshold": rho, "point_adjusted": adjust}


def cmd_eval(cfg: RunConfig, args) -> int:
    scores, labels = read_scores_csv(args.scores)
    if args.labels:
        labels = load_dataset(args.labels, split="test").labels
    if labels is None:
        raise DataError("evaluation needs labels")
    if labels.shape != scores.shape:
        raise DataError(f"labels length {labels.size} does not match scores length {scores.size}")
    ratio = _ratio_for(cfg, labels)
    if cfg.point_adjust == "both":
        result = {"raw": _report(scores, labels, ratio, False),
                  "adjusted": _report(scores, labels, ratio, True)}
    else:
        result = _report(scores, labels, ratio, cfg.point_adjust == "on")
    if 0 < labels.sum() < labels.size:
        result["roc_auc"] = roc_auc(scores, labels)
    out = _out_dir(cfg)
    (out / "metrics.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _write_config(out, "eval", cfg, scores=str(args.scores))
    print(json.dumps(result, sort_keys=True))
    return 0


ABLATION_AXES = {
    "stop": [(True, True), (True, False), (False, True), (False, False)],
    "patch-level": list(PATCH_LEVELS),
    "loss": list(LOSS_VARIANTS),
}
ABLATION_COLUMNS = ["stop_intra", "stop_inter", "patch_level", "loss_variant", "precision", "recall",
                    "f1", "adjusted_precision", "adjusted_recall", "adjusted_f1", "roc_auc"]


def ablation_grid(cfg: RunConfig, axes, grid: Optional[dict] = None) -> list:
    """Cross product of the requested axes; unrequested axes keep the base value."""
    grid = dict(grid or {})
    stops = grid.get("stops", ABLATION_AXES["stop"] if "stop" in axes else [(cfg.stop_intra, cfg.stop_inter)])
    levels = grid.get("patch_levels", ABLATION_AXES["patch-level"] if "patch-level" in axes else [cfg.patch_level])
    losses = grid.get("loss_variants", ABLATION_AXES["loss"] if "loss" in axes else [cfg.loss_variant])
    unknown = set(grid) - {"stops", "patch_levels", "loss_variants"}
    if unknown:
        raise ConfigError(f"unknown grid keys: {sorted(unknown)}")
    combos = []
    for (si, se), level, loss in itertools.product(stops, levels, losses):
        combos.append(replace(cfg, stop_intra=bool(si), stop_inter=bool(se),
                              patch_level=level, loss_variant=loss).validate())
    return combos


def cmd_ablate(cfg: RunConfig, args) -> int:
    grid = None
    if args.grid:
        try:
            grid = json.loads(Path(args.grid).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"unreadable grid file: {exc}") from None
    combos = ablation_grid(cfg, args.axis or [], grid)
    train_ds, test_ds = _load_train(cfg), _load_test(cfg)
    if test_ds.labels is None:
        raise DataError("ablation needs labelled test data")
    ratio = _ratio_for(cfg, test_ds.labels)
    out = _out_dir(cfg)
    rows = []
    for run in combos:
        model, _ = _fit(run, train_ds)
        scores = score_series(test_ds, model, stride=run.score_stride).scores
        raw, _, _ = evaluate(scores, test_ds.labels, ratio, False)
        adj, _, _ = evaluate(scores, test_ds.labels, ratio, True)
        auc = roc_auc(scores, test_ds.labels) if 0 < test_ds.labels.sum() < test_ds.T else float("nan")
        rows.append([run.stop_intra, run.stop_inter, run.patch_level, run.loss_variant,
                     raw.precision, raw.recall, raw.f1, adj.precision, adj.recall, adj.f1, auc])
        log.info("ablation %s", rows[-1])
    with (out / "ablation.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ABLATION_COLUMNS)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
    _write_config(out, "ablate", cfg, axes=list(args.axis or []), grid=grid)
    return 0


COMMANDS = {"synth": cmd_synth, "decompose": cmd_decompose, "train": cmd_train,
            "score": cmd_score, "eval": cmd_eval, "ablate": cmd_ablate}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="transde", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic train/test pair")
    _add_run_flags(p)
    p.add_argument("--format", choices=("csv", "raw"), default="csv")

    p = sub.add_parser("decompose", help="write trend and cyclical components of a series")
    _add_run_flags(p)
    p.add_argument("--decompose-window", type=int, default=None,
                   help="window length (default: the whole series)")

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_run_flags(p)

    p = sub.add_parser("score", help="score a test series with a checkpoint")
    _add_run_flags(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--plot", action="store_true", help="also write scores.svg")

    p = sub.add_parser("eval", help="metrics from a scores CSV")
    _add_run_flags(p)
    p.add_argument("--scores", required=True)
    p.add_argument("--labels", default=None, help="labelled data file (default: the CSV's label column)")

    p = sub.add_parser("ablate", help="train and evaluate an ablation grid")
    _add_run_flags(p)
    p.add_argument("--axis", action="append", choices=sorted(ABLATION_AXES),
                   help="ablation axis to sweep (repeatable)")
    p.add_argument("--grid", default=None, help="JSON with optional stops/patch_levels/loss_variants")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        with threadpool_limits(limits=cfg.threads):
            return COMMANDS[args.command](cfg, args)
    except TransDeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
