"""Command-line orchestration: dataset preparation, enrollment, verification,
evaluation campaigns, attack campaigns, and report emission.

One JSON config file drives everything; individual values can be overridden
on the command line with ``--section.key=value`` tokens (parsed as JSON where
possible). Every report embeds the config hash, master seed, and package
version, and identical configs reproduce identical outputs byte for byte.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 verification
reject (verify only).
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import os
from pathlib import Path

import click
import numpy as np

from . import __version__
from . import attacks as atk
from . import matching_eval as me
from . import sl_eval
from . import transform as tr
from .errors import ConfigError, NeurolockError
from .ingest import (Protocol, SyntheticSpec, read_csv_matrix, read_edf,
                     synthesize, write_csv_matrix)
from .pipeline import (DspConfig, FeatureDataset, build_feature_dataset,
                       write_feature_csv)
from .system import AuthSystem, SystemConfig

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_REJECT = 4

DEFAULT_CONFIG = {
    "dataset": {
        "kind": "synthetic",          # synthetic | csv | edf
        "path": None,                 # directory for csv/edf datasets
        "fs": 160.0,
        "synthetic": {
            "n_subjects": 8,
            "n_channels": 8,
            "duration_s": 62.0,
            "fs": 160.0,
            "noise_level": 0.1,
        },
    },
    "dsp": {
        "prefilter": [0.5, 42.0],
        "band": [13.0, 30.0],
        "frame_seconds": 2.0,
        "overlap": 0.0,
        "fir_order": 330,
        "rho_bins": None,
    },
    "features": {"kind": "graph"},
    "transform": {
        "delta": 0.5,
        "enroll_frames": 10,
        "query_frames": 1,
        "theta": 0.389,
        "lost_key": True,
        "master_key": 24141,
        "calibration_margin": 1.0,
    },
    "eval": {"revocability_keys": 0, "unlink_keys": 0},
    "attack": {
        "case": "feature_space",
        "theta": 0.389,
        "max_attempts": 20000,
        "seed": 0,
        "second_attack_keys": 0,
    },
    "slx": {"split": 0.8, "n_users": None, "seeds": 5},
    "output_dir": "out",
    "master_seed": 1234,
}


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------

def _deep_merge(base: dict, update: dict, path="") -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _deep_merge(base[key], value, where)
        else:
            out[key] = value
    return out


def _apply_override(config: dict, token: str) -> None:
    token = token.lstrip("-")
    if "=" not in token:
        raise ConfigError(f"override {token!r} must look like section.key=value")
    dotted, raw_value = token.split("=", 1)
    try:
        value = json.loads(raw_value)
    except json.JSONDecodeError:
        value = raw_value
    node = config
    *parents, leaf = dotted.split(".")
    for part in parents:
        if part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"unknown config path {dotted!r}")
        node = node[part]
    if leaf not in node:
        raise ConfigError(f"unknown config path {dotted!r}")
    node[leaf] = value


def load_config(config_path: str | None, overrides: tuple[str, ...],
                seed_flag: int | None) -> dict:
    config = copy.deepcopy(DEFAULT_CONFIG)
    if config_path:
        try:
            user = json.loads(Path(config_path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {config_path!r} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from None
        config = _deep_merge(config, user)
    for token in overrides:
        _apply_override(config, token)
    env_seed = os.environ.get("NEUROLOCK_SEED")
    if env_seed is not None:
        config["master_seed"] = int(env_seed)
    if seed_flag is not None:
        config["master_seed"] = seed_flag
    return config


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _atomic_csv(path: Path, header: list, rows) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# dataset loading
# ---------------------------------------------------------------------------

def load_recordings(config: dict) -> list:
    ds = config["dataset"]
    if ds["kind"] == "synthetic":
        syn = ds["synthetic"]
        spec = SyntheticSpec(
            n_subjects=syn["n_subjects"], n_channels=syn["n_channels"],
            duration_s=syn["duration_s"], fs=syn["fs"],
            master_seed=config["master_seed"], noise_level=syn["noise_level"])
        return synthesize(spec)
    if ds["path"] is None:
        raise ConfigError(f"dataset kind {ds['kind']!r} needs dataset.path")
    root = Path(ds["path"])
    suffix = ".csv" if ds["kind"] == "csv" else ".edf"
    paths = sorted(root.glob(f"*{suffix}"))
    if not paths:
        raise ConfigError(f"no {suffix} files in {root}")
    recordings = []
    for path in paths:
        stem = path.stem
        if "_" not in stem:
            raise ConfigError(
                f"{path.name}: expected <subject>_<PROTOCOL>{suffix} naming")
        subject, proto_text = stem.rsplit("_", 1)
        try:
            protocol = Protocol(proto_text.upper())
        except ValueError:
            raise ConfigError(f"{path.name}: unknown protocol {proto_text!r}") from None
        if ds["kind"] == "csv":
            recordings.append(read_csv_matrix(path, fs=ds["fs"],
                                              protocol_tag=protocol,
                                              subject_id=subject))
        else:
            recordings.append(read_edf(path, protocol_tag=protocol,
                                       subject_id=subject))
    return recordings


def load_features(config: dict) -> FeatureDataset:
    recordings = load_recordings(config)
    dsp_cfg = config["dsp"]
    dc = DspConfig(prefilter=tuple(dsp_cfg["prefilter"]), band=tuple(dsp_cfg["band"]),
                   frame_seconds=dsp_cfg["frame_seconds"], overlap=dsp_cfg["overlap"],
                   fir_order=dsp_cfg["fir_order"], rho_bins=dsp_cfg["rho_bins"])
    return build_feature_dataset(recordings, dc, config["features"]["kind"])


def system_config(config: dict) -> SystemConfig:
    t = config["transform"]
    return SystemConfig(delta=t["delta"], enroll_frames=t["enroll_frames"],
                        query_frames=t["query_frames"], theta=t["theta"],
                        lost_key=t["lost_key"], master_key=t["master_key"],
                        calibration_margin=t["calibration_margin"])


# ---------------------------------------------------------------------------
# CLI scaffolding
# ---------------------------------------------------------------------------

def run_guarded(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        raise SystemExit(EXIT_CONFIG)
    except NeurolockError as exc:
        click.echo(f"data error: {exc}", err=True)
        raise SystemExit(EXIT_DATA)
    except FileNotFoundError as exc:
        click.echo(f"data error: {exc}", err=True)
        raise SystemExit(EXIT_DATA)


_common = [
    click.option("--config", "config_path", type=str, default=None,
                 help="JSON config file."),
    click.option("--seed", "seed_flag", type=int, default=None,
                 help="Override the master seed."),
    click.argument("overrides", nargs=-1, type=click.UNPROCESSED),
]


def common_options(fn):
    for option in reversed(_common):
        fn = option(fn)
    return fn


@click.group()
@click.version_option(version=__version__, prog_name="neurolock")
def main():
    """Cancellable EEG-template pipeline and evaluation harness."""


def _out_dir(config: dict) -> Path:
    out = Path(config["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _stamp(config: dict) -> dict:
    return {"config_hash": config_hash(config),
            "master_seed": config["master_seed"],
            "version": __version__}


@main.command(context_settings={"ignore_unknown_options": True})
@common_options
def synth(config_path, seed_flag, overrides):
    """Write the synthetic dataset as CSV matrices."""
    def body():
        config = load_config(config_path, overrides, seed_flag)
        out = _out_dir(config) / "dataset"
        out.mkdir(parents=True, exist_ok=True)
        recordings = load_recordings({**config,
                                      "dataset": {**config["dataset"],
                                                  "kind": "synthetic"}})
        for rec in recordings:
            write_csv_matrix(rec, out / f"{rec.subject_id}_{rec.protocol_tag.value}.csv")
        manifest = {"fs": recordings[0].fs,
                    "subjects": sorted({r.subject_id for r in recordings}),
                    "protocols": sorted({r.protocol_tag.value for r in recordings}),
                    **_stamp(config)}
        _atomic_write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True))
        click.echo(f"wrote {len(recordings)} recordings to {out}")
    run_guarded(body)


@main.command(context_settings={"ignore_unknown_options": True})
@common_options
def extract(config_path, seed_flag, overrides):
    """Extract per-frame feature vectors to one CSV per subject and protocol."""
    def body():
        config = load_config(config_path, overrides, seed_flag)
        dataset = load_features(config)
        out = _out_dir(config) / "features"
        out.mkdir(parents=True, exist_ok=True)
        for (subject, protocol), matrix in sorted(dataset.vectors.items(),
                                                  key=lambda kv: (kv[0][0], kv[0][1].value)):
            write_feature_csv(out / f"{subject}_{protocol.value}.csv", matrix,
                              dataset.names)
        manifest = {"feature_kind": dataset.feature_kind, "dim": dataset.dim,
                    "subjects": dataset.subjects,
                    "protocols": [p.value for p in dataset.protocols],
                    **_stamp(config)}
        _atomic_write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True))
        click.echo(f"wrote {len(dataset.vectors)} feature files to {out}")
    run_guarded(body)


@main.command(context_settings={"ignore_unknown_options": True})
@click.option("--subject", required=True, help="Subject id to enroll.")
@click.option("--key", "user_key", type=int, required=True, help="User key.")
@click.option("--out", "template_path", type=str, default=None,
              help="Template file path (default: <output_dir>/<subject>.ceeg).")
@common_options
def enroll(subject, user_key, template_path, config_path, seed_flag, overrides):
    """Enroll one subject and write the template file."""
    def body():
        config = load_config(config_path, overrides, seed_flag)
        dataset = load_features(config)
        if subject not in dataset.subjects:
            raise ConfigError(f"unknown subject {subject!r}")
        sys_cfg = system_config(config)
        keys = {s: (user_key if s == subject else sys_cfg.master_key)
                for s in dataset.subjects}
        system = AuthSystem(dataset, sys_cfg, user_keys=keys)
        path = Path(template_path) if template_path else \
            _out_dir(config) / f"{subject}.ceeg"
        tr.save_template(system.users[subject].template, path)
        click.echo(f"enrolled {subject} -> {path}")
    run_guarded(body)


@main.command(context_settings={"ignore_unknown_options": True})
@click.option("--template", "template_path", required=True, help="Template file.")
@click.option("--subject", required=True, help="Subject supplying query frames.")
@click.option("--key", "user_key", type=int, required=True,
              help="User key the account is provisioned with.")
@click.option("--theta", type=float, default=None,
              help="Decision threshold (default from config).")
@click.option("--from-frame", "from_frame", type=int, default=None,
              help="First query frame (default: first post-enrollment frame).")
@click.option("--frames", "n_frames", type=int, default=None,
              help="Frames averaged into the query (default: query_frames).")
@common_options
def verify(template_path, subject, user_key, theta, from_frame, n_frames,
           config_path, seed_flag, overrides):
    """Generate a query from the subject's frames and match the template."""
    def body():
        config = load_config(config_path, overrides, seed_flag)
        enrolled = tr.load_template(template_path)
        dataset = load_features(config)
        if subject not in dataset.subjects:
            raise ConfigError(f"unknown subject {subject!r}")
        sys_cfg = system_config(config)
        claimed = enrolled.meta.subject_id
        if claimed not in dataset.subjects:
            raise ConfigError(f"template subject {claimed!r} not in dataset")
        keys = {s: (user_key if s == claimed else sys_cfg.master_key)
                for s in dataset.subjects}
        system = AuthSystem(dataset, sys_cfg, user_keys=keys)
        start = sys_cfg.enroll_frames if from_frame is None else from_frame
        query = system.query_template(claimed, subject, start, n_frames)
        threshold = sys_cfg.theta if theta is None else theta
        result = tr.match(query, enrolled, threshold)
        decision = "ACCEPT" if result.decision else "REJECT"
        click.echo(f"{decision} score={result.score:.6f} raw={result.raw} "
                   f"threshold={result.threshold}")
        if not result.decision:
            raise SystemExit(EXIT_REJECT)
    run_guarded(body)


@main.command(context_settings={"ignore_unknown_options": True})
@common_options
def eval(config_path, seed_flag, overrides):
    """Run the evaluation protocol and emit report, ROC, and histograms."""
    def body():
        config = load_config(config_path, overrides, seed_flag)
        dataset = load_features(config)
        sys_cfg = system_config(config)
        report = me.evaluate(dataset, sys_cfg,
                             revocability_keys=config["eval"]["revocability_keys"],
                             unlink_keys=config["eval"]["unlink_keys"],
                             seed=config["master_seed"],
                             config_hash=config_hash(config), version=__version__)
        out = _out_dir(config)
        _atomic_write(out / "eval_report.json", report.to_json())
        _atomic_csv(out / "roc.csv", ["threshold", "far", "frr"],
                    ([repr(v) for v in row] for row in report.roc))
        scores = me.protocol_score_set(dataset, sys_cfg.enroll_frames,
                                       sys_cfg.query_frames, sys_cfg)
        edges = np.linspace(0.0, 1.0, 51)
        g_hist = np.histogram(scores.genuine, bins=edges)[0]
        i_hist = np.histogram(scores.impostor, bins=edges)[0]
        _atomic_csv(out / "score_histograms.csv",
                    ["bin_low", "bin_high", "genuine", "impostor"],
                    ([repr(edges[k]), repr(edges[k + 1]), int(g_hist[k]),
                      int(i_hist[k])] for k in range(50)))
        click.echo(f"EER {report.eer:.4f} at threshold {report.threshold_at_eer:.4f}; "
                   f"|d'| {report.d_prime_abs:.3f}; reports in {out}")
    run_guarded(body)


@main.command(context_settings={"ignore_unknown_options": True})
@common_options
def attack(config_path, seed_flag, overrides):
    """Run the hill-climbing campaign (and optional second attack)."""
    def body():
        config = load_config(config_path, overrides, seed_flag)
        dataset = load_features(config)
        sys_cfg = system_config(config)
        system = AuthSystem(dataset, sys_cfg)
        a_cfg = config["attack"]
        attack_config = atk.AttackConfig(
            case=atk.AttackCase(a_cfg["case"]), theta=a_cfg["theta"],
            max_attempts=a_cfg["max_attempts"], seed=a_cfg["seed"])
        report = atk.run_hill_climb_campaign(system, attack_config,
                                             config_hash=config_hash(config))
        out = _out_dir(config)
        payload = report.to_json_dict()
        payload["master_seed"] = config["master_seed"]
        if a_cfg["second_attack_keys"]:
            solutions = [atk.Solution(o.subject, "feature", o.solution,
                                      "computational")
                         for o in report.outcomes
                         if o.success and attack_config.case is atk.AttackCase.FEATURE_SPACE]
            second = atk.second_attack(system, solutions,
                                       n_keys=a_cfg["second_attack_keys"],
                                       theta=attack_config.theta,
                                       seed=config["master_seed"])
            payload["second_attack"] = second.to_json_dict()
        _atomic_write(out / "attack_report.json",
                      json.dumps(payload, indent=2, sort_keys=True))
        _atomic_csv(out / "attack_trace.csv", ["subject", "attempt", "score"],
                    ([outcome.subject, attempt, repr(score)]
                     for outcome in report.outcomes
                     for attempt, score in outcome.trace))
        click.echo(f"SR {report.success_rate:.3f}; reports in {out}")
    run_guarded(body)


@main.command(context_settings={"ignore_unknown_options": True})
@common_options
def slx(config_path, seed_flag, overrides):
    """Compare classification-style vs authentication-style evaluation."""
    def body():
        config = load_config(config_path, overrides, seed_flag)
        dataset = load_features(config)
        proto = dataset.protocols[0]
        per_subject = {s: dataset.frames(s, proto) for s in dataset.subjects}
        seeds = tuple(range(config["slx"]["seeds"]))
        rows = sl_eval.pitfall_report(
            per_subject,
            configs=[
                {"evaluation": "classification", "split": config["slx"]["split"]},
                {"evaluation": "authentication", "split": config["slx"]["split"],
                 "n_users": config["slx"]["n_users"]},
            ],
            seeds=seeds)
        out = _out_dir(config)
        payload = {"rows": rows, **_stamp(config)}
        _atomic_write(out / "slx_report.json",
                      json.dumps(payload, indent=2, sort_keys=True))
        _atomic_csv(out / "slx_table.csv",
                    ["method", "evaluation", "split", "n_users",
                     "accuracy", "far", "frr", "classifier_eer"],
                    ([row["method"], row["evaluation"], row["split"],
                      row["n_users"], repr(row["accuracy"]), repr(row["far"]),
                      repr(row["frr"]), repr(row["classifier_eer"])]
                     for row in rows))
        click.echo(f"wrote pitfall table ({len(rows)} rows) to {out}")
    run_guarded(body)


if __name__ == "__main__":
    main()
