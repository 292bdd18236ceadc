"""Command-line pipeline: gen-data, train-gan, augment, train-clf, evaluate, diagnose.

Every option can also come from ``--config file.json`` (keys are the option
names with dashes replaced by underscores); explicit flags win over the
file, the file wins over defaults, and unknown keys are rejected.

One ``--seed`` drives all randomness.  Each stage derives its own seed from
it with :func:`incident_detect.data.derive_seed`, so ``train-gan`` and
``train-clf`` run with the same master seed see the same train/test split.

Outputs are built in memory and written at the end through temp files and
``os.replace``; a failing command leaves nothing behind.  Each command also
writes ``manifest-<command>.json`` with the config hash, seeds, versions,
per-stage wall-clock times and a file inventory.

Exit codes: 0 success, 1 usage or configuration error, 2 undefined metric,
3 training divergence.  Set ``INCIDENT_DETECT_CHECK_FINITE=0`` to skip the
per-operation NaN/Inf checks.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import re
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import dumps, gan_payload, load_gan, load_transformer, transformer_payload
from .data import (
    PROFILES,
    SplitSpec,
    atomic_write_text,
    derive_seed,
    fit_normalizer,
    format_float,
    generate_oracle_dataset,
    get_profile,
    load_csv,
    split,
    table_to_csv_text,
)
from .diagnostics import compare
from .exceptions import (
    ConfigurationError,
    IncidentDetectError,
    TrainingDivergenceError,
    UndefinedMetricError,
)
from .gan import GanConfig, augment_to_ratio, parse_ratio, synthetic_row_count, train_gan
from .metrics import FAR_MODES, report_from_scores
from .transformer import TransformerConfig, classify, train_classifier

EXIT_OK, EXIT_CONFIG, EXIT_UNDEFINED, EXIT_DIVERGED = 0, 1, 2, 3

PATH_KEYS = {"data", "gan", "model", "real", "synthetic", "output"}


def _widths(value):
    if isinstance(value, str):
        value = [v for v in value.split(",") if v.strip()]
    return tuple(int(v) for v in value)


def _ratio(value):
    inc, non = parse_ratio(value)
    return f"{inc}:{non}"


def _bool(value):
    if isinstance(value, bool):
        return value
    raise ConfigurationError(f"expected true/false, got {value!r}")


# (dest, type, default, help); a default of None marks a required option
_COMMON = [
    ("seed", int, 0, "master seed"),
    ("output", str, None, "output directory (created if missing)"),
]
_LABEL = [("label_column", str, "label", "name of the 0/1 label column")]

OPTIONS = {
    "gen-data": [
        ("profile", str, "default", f"oracle profile: {', '.join(sorted(PROFILES))}"),
        ("n_incident", int, 1600, "incident rows"),
        ("n_non", int, 7240, "non-incident rows"),
    ]
    + _LABEL,
    "train-gan": [
        ("data", str, None, "dataset CSV"),
        ("split", float, 0.6, "train fraction used to hold out test incidents; >= 1 uses all incidents"),
        ("noise_dim", int, 16, "noise vector size"),
        ("gen_hidden", _widths, (64, 64), "generator hidden widths, comma separated"),
        ("disc_hidden", _widths, (64, 32), "discriminator hidden widths, comma separated"),
        ("batch_size", int, 64, "batch size m"),
        ("d_steps_per_g_step", int, 5, "discriminator updates per generator update"),
        ("epochs", int, 500, "training epochs"),
        ("lr", float, 2e-4, "Adam learning rate"),
        ("beta1", float, 0.5, "Adam beta1"),
        ("loss_mode", str, "paper", "generator loss: paper or non_saturating"),
    ]
    + _LABEL,
    "augment": [
        ("data", str, None, "dataset CSV"),
        ("gan", str, None, "GAN checkpoint JSON from train-gan"),
        ("ratio", _ratio, "1:1", "target incident:non-incident ratio, e.g. 1:4, 2:3, 1:1"),
    ]
    + _LABEL,
    "train-clf": [
        ("data", str, None, "dataset CSV (may contain synthetic rows)"),
        ("split", float, 0.6, "train fraction of the stratified split"),
        ("normalizer", str, "zscore", "feature scaling fitted on the train split: zscore or minmax"),
        ("d_model", int, 32, "embedding width"),
        ("n_heads", int, 4, "attention heads"),
        ("n_layers", int, 2, "encoder layers"),
        ("d_ff", int, 64, "feed-forward width"),
        ("pe_base", float, 100.0, "positional-encoding base"),
        ("dropout_rate", float, 0.0, "dropout rate"),
        ("epochs", int, 30, "training epochs"),
        ("batch_size", int, 64, "mini-batch size"),
        ("lr", float, 1e-3, "Adam learning rate"),
    ]
    + _LABEL,
    "evaluate": [
        ("model", str, None, "classifier checkpoint JSON from train-clf"),
        ("data", str, None, "test CSV"),
        ("threshold", float, 0.5, "decision threshold"),
        ("far_mode", str, "paper", "primary FAR definition: paper or conventional"),
        ("timing", _bool, False, "store the scoring wall-clock time in the report"),
    ]
    + _LABEL,
    "diagnose": [
        ("real", str, "", "real-sample CSV"),
        ("synthetic", str, "", "synthetic-sample CSV"),
        ("data", str, "", "augmented CSV: compares its real incidents with its synthetic rows"),
    ]
    + _LABEL,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="incident-detect", description="GAN rebalancing + transformer incident detection")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for command, options in OPTIONS.items():
        p = sub.add_parser(command)
        p.add_argument("--config", default=argparse.SUPPRESS, help="JSON file with option values")
        for dest, conv, default, help_text in options + _COMMON:
            flag = "--" + dest.replace("_", "-")
            names = [flag, "-o"] if dest == "output" else [flag]
            if dest == "n_non":
                names.append("--n-non-incident")
            if conv is _bool:
                p.add_argument(*names, dest=dest, action="store_true", default=argparse.SUPPRESS, help=help_text)
            else:
                p.add_argument(*names, dest=dest, default=argparse.SUPPRESS, help=help_text)
    return parser


def resolve_config(command: str, flags: dict) -> dict:
    """Merge defaults, ``--config`` file and explicit flags, converting types."""
    options = {dest: (conv, default) for dest, conv, default, _ in OPTIONS[command] + _COMMON}
    merged = {dest: default for dest, (_, default) in options.items()}
    config_path = flags.pop("config", None)
    if config_path:
        try:
            file_values = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {config_path}: {exc}") from None
        if not isinstance(file_values, dict):
            raise ConfigurationError("config file must hold a JSON object")
        unknown = sorted(set(file_values) - set(options))
        if unknown:
            raise ConfigurationError(f"unknown config keys for {command}: {', '.join(unknown)}")
        merged.update(file_values)
    merged.update(flags)
    resolved = {}
    for dest, (conv, _) in options.items():
        value = merged[dest]
        if value is None:
            raise ConfigurationError(f"--{dest.replace('_', '-')} is required")
        try:
            resolved[dest] = conv(value)
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"bad value for {dest}: {value!r} ({exc})") from None
    return resolved


def config_hash(config: dict) -> str:
    """SHA-256 of the canonical JSON config, ignoring file-system paths."""
    hashed = {k: (list(v) if isinstance(v, tuple) else v) for k, v in config.items() if k not in PATH_KEYS}
    blob = json.dumps(hashed, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


class Run:
    """Collects outputs and timings for one command, then writes them atomically."""

    def __init__(self, command: str, config: dict):
        self.command = command
        self.config = config
        self.hash = config_hash(config)
        self.seed = config["seed"]
        self.outputs: dict[str, str] = {}
        self.stages: dict[str, float] = {}
        self.seeds: dict[str, int] = {}

    def stamp(self, payload: dict) -> dict:
        return {"seed": self.seed, "config_hash": self.hash, **payload}

    @contextmanager
    def stage(self, name: str):
        start = time.perf_counter()
        yield
        self.stages[name] = time.perf_counter() - start

    def stage_seed(self, stage: str) -> int:
        self.seeds[stage] = derive_seed(self.seed, stage)
        return self.seeds[stage]

    def add(self, name: str, text: str) -> None:
        self.outputs[name] = text

    def finish(self) -> Path:
        out = Path(self.config["output"])
        out.mkdir(parents=True, exist_ok=True)
        inventory = []
        for name, text in self.outputs.items():
            atomic_write_text(out / name, text)
            data = text.encode("utf-8")
            inventory.append({"file": name, "bytes": len(data), "sha256": hashlib.sha256(data).hexdigest()})
        manifest = {
            "command": self.command,
            "config_hash": self.hash,
            "seed": self.seed,
            "stage_seeds": self.seeds,
            "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.config.items()},
            "versions": {
                "incident_detect": __version__,
                "numpy": np.__version__,
                "python": platform.python_version(),
            },
            "stage_seconds": self.stages,
            "outputs": inventory,
        }
        atomic_write_text(out / f"manifest-{self.command}.json", json.dumps(manifest, indent=2) + "\n")
        return out


def _real_split(table, fraction: float, seed: int):
    return split(table.real_rows(), SplitSpec(train_fraction=fraction, stratified=True, seed=seed))


def cmd_gen_data(run: Run) -> int:
    cfg = run.config
    profile = get_profile(cfg["profile"])
    with run.stage("generate"):
        table, truth = generate_oracle_dataset(profile, cfg["n_incident"], cfg["n_non"], run.stage_seed("data"))
    run.add("dataset.csv", table_to_csv_text(table, cfg["label_column"]))
    truth["data_seed"] = truth.pop("seed")
    run.add("ground_truth.json", json.dumps(run.stamp({**truth, "profile_name": cfg["profile"]}), indent=2) + "\n")
    run.finish()
    return EXIT_OK


def cmd_train_gan(run: Run) -> int:
    cfg = run.config
    with run.stage("load"):
        table = load_csv(cfg["data"], cfg["label_column"])
    split_seed = run.stage_seed("split")
    if cfg["split"] >= 1:
        source = table.real_rows()
    else:
        source, _ = _real_split(table, cfg["split"], split_seed)
    minority = source.incidents()
    gan_cfg = GanConfig(
        noise_dim=cfg["noise_dim"],
        gen_hidden=cfg["gen_hidden"],
        disc_hidden=cfg["disc_hidden"],
        batch_size=cfg["batch_size"],
        d_steps_per_g_step=cfg["d_steps_per_g_step"],
        epochs=cfg["epochs"],
        lr=cfg["lr"],
        beta1=cfg["beta1"],
        seed=run.stage_seed("gan"),
        loss_mode=cfg["loss_mode"],
    )
    if len(minority) < 2 * gan_cfg.batch_size:
        raise ConfigurationError(
            f"only {len(minority)} incident rows available for GAN training; need at least {2 * gan_cfg.batch_size}"
        )
    with run.stage("train"):
        model = train_gan(minority, gan_cfg)
    payload = gan_payload(
        model,
        seed=run.seed,
        config_hash=run.hash,
        feature_names=list(table.feature_names),
        n_training_rows=len(minority),
    )
    run.add("gan.json", dumps(payload))
    lines = ["epoch,loss_d,loss_g,mean_d_real,mean_d_fake"]
    for rec in model.history:
        cells = [str(rec["epoch"])] + [
            "" if rec[k] is None else format_float(rec[k]) for k in ("loss_d", "loss_g", "mean_d_real", "mean_d_fake")
        ]
        lines.append(",".join(cells))
    run.add("gan_history.csv", "\n".join(lines) + "\n")
    run.finish()
    return EXIT_OK


def cmd_augment(run: Run) -> int:
    cfg = run.config
    with run.stage("load"):
        table = load_csv(cfg["data"], cfg["label_column"])
        model, meta = load_gan(cfg["gan"])
    if list(table.feature_names) != meta.get("feature_names", list(table.feature_names)):
        raise ConfigurationError("dataset columns differ from the columns the GAN was trained on")
    k = synthetic_row_count(table.n_incident, table.n_non_incident, cfg["ratio"])
    with run.stage("generate"):
        out = augment_to_ratio(table, model, cfg["ratio"], np.random.default_rng(run.stage_seed("augment")))
    report = {
        "ratio": cfg["ratio"],
        "n_incident_before": table.n_incident,
        "n_non_incident": table.n_non_incident,
        "target_incident": table.n_incident + k,
        "synthetic_rows": k,
        "n_rows_after": len(out),
    }
    run.add("augmented.csv", table_to_csv_text(out, cfg["label_column"]))
    run.add("augmentation.json", json.dumps(run.stamp(report), indent=2) + "\n")
    run.finish()
    return EXIT_OK


def cmd_train_clf(run: Run) -> int:
    cfg = run.config
    with run.stage("load"):
        table = load_csv(cfg["data"], cfg["label_column"])
    split_seed = run.stage_seed("split")
    # real rows: stratified split, the test part stays purely real
    train_real, test = _real_split(table, cfg["split"], split_seed)
    train = train_real
    synthetic = table.synthetic_rows()
    if len(synthetic):
        # the same fraction of synthetic rows joins training so the augmented ratio carries over
        synth_train, _ = split(synthetic, SplitSpec(cfg["split"], stratified=False, seed=split_seed))
        train = train_real.append(synth_train)
    normalizer = fit_normalizer(train, cfg["normalizer"])
    model_cfg = TransformerConfig(
        n_features=table.n_features,
        d_model=cfg["d_model"],
        n_heads=cfg["n_heads"],
        n_layers=cfg["n_layers"],
        d_ff=cfg["d_ff"],
        pe_base=cfg["pe_base"],
        dropout_rate=cfg["dropout_rate"],
    )
    seed = run.stage_seed("classifier")
    with run.stage("train"):
        model, history = train_classifier(
            normalizer.transform(train.features),
            train.labels,
            model_cfg,
            epochs=cfg["epochs"],
            batch_size=cfg["batch_size"],
            lr=cfg["lr"],
            seed=seed,
        )
    payload = transformer_payload(
        model,
        normalizer,
        seed=run.seed,
        config_hash=run.hash,
        feature_names=list(table.feature_names),
        label_column=cfg["label_column"],
        n_train=len(train),
        n_train_synthetic=int(train.synthetic.sum()),
        n_test=len(test),
    )
    run.add("classifier.json", dumps(payload))
    run.add("clf_history.csv", "epoch,loss\n" + "".join(f"{i},{format_float(v)}\n" for i, v in enumerate(history)))
    run.add("test.csv", table_to_csv_text(test, cfg["label_column"]))
    run.finish()
    return EXIT_OK


def cmd_evaluate(run: Run) -> int:
    cfg = run.config
    if cfg["far_mode"] not in FAR_MODES:
        raise ConfigurationError(f"far_mode must be one of {FAR_MODES}")
    with run.stage("load"):
        model, normalizer, meta = load_transformer(cfg["model"])
        table = load_csv(cfg["data"], cfg["label_column"])
    if list(table.feature_names) != meta.get("feature_names", list(table.feature_names)):
        raise ConfigurationError("test columns differ from the columns the classifier was trained on")
    X = table.features if normalizer is None else normalizer.transform(table.features)
    start = time.perf_counter()
    scores = classify(X, model)
    elapsed = time.perf_counter() - start
    run.stages["score"] = elapsed
    report = report_from_scores(scores, table.labels, cfg["threshold"], cfg["far_mode"])
    # wall-clock time would break byte-identical reports, so it is opt-in
    report.eval_wall_clock_seconds = elapsed if cfg["timing"] else None
    run.add("evaluation.json", report.to_json(seed=run.seed, config_hash=run.hash, n_samples=len(table)))
    run.add("roc.csv", report.roc_csv())
    run.finish()
    if report.undefined:
        print(f"error: undefined metrics: {', '.join(report.undefined)}", file=sys.stderr)
        return EXIT_UNDEFINED
    return EXIT_OK


def _safe_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name)


def cmd_diagnose(run: Run) -> int:
    cfg = run.config
    with run.stage("load"):
        if cfg["data"]:
            table = load_csv(cfg["data"], cfg["label_column"])
            names = table.feature_names
            real = table.real_rows().incidents()
            synthetic = table.synthetic_rows().features
        elif cfg["real"] and cfg["synthetic"]:
            real_table = load_csv(cfg["real"], cfg["label_column"])
            synth_table = load_csv(cfg["synthetic"], cfg["label_column"])
            if real_table.feature_names != synth_table.feature_names:
                raise ConfigurationError("real and synthetic files have different feature columns")
            names = real_table.feature_names
            real, synthetic = real_table.features, synth_table.features
        else:
            raise ConfigurationError("diagnose needs --data, or both --real and --synthetic")
    with run.stage("compare"):
        report = compare(real, synthetic, list(names))
    report.extra = {"seed": run.seed, "config_hash": run.hash}
    run.add("distribution.json", json.dumps(report.to_dict(), indent=1) + "\n")
    for i, name in enumerate(names):
        run.add(f"ecdf_{_safe_name(name)}.csv", report.ecdf_csv(i))
        run.add(f"kde_{_safe_name(name)}.csv", report.kde_csv(i))
    run.finish()
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-gan": cmd_train_gan,
    "augment": cmd_augment,
    "train-clf": cmd_train_clf,
    "evaluate": cmd_evaluate,
    "diagnose": cmd_diagnose,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    flags = vars(args)
    command = flags.pop("command")
    try:
        config = resolve_config(command, flags)
        return COMMANDS[command](Run(command, config))
    except UndefinedMetricError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNDEFINED
    except TrainingDivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except IncidentDetectError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def entry_point() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
