"""Experiment runner: ``acdm-bench generate|train|rollout|evaluate|report``.

A run is described by one JSON file with the sections ``data``, ``model``,
``objective``, ``rollout``, ``eval`` and ``run``. Values are resolved in the
order defaults, preset, file, ``--set key.path=value`` overrides and finally
the ``ACDM_BENCH_SEED`` environment variable. Only the summary table goes to
stdout; diagnostics go to stderr.

Exit codes: 2 invalid config, 3 missing checkpoint, 4 non-finite training loss.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import subprocess
import sys
import time
from multiprocessing import Pool
from pathlib import Path

import numpy as np

from . import __version__
from .backbones import BackboneSpec, build, param_count
from .data import (
    NormStats,
    apply_mask,
    compute_norm_stats,
    denormalize,
    fluid_mask,
    normalize,
    read_flowseq,
    write_flowseq,
)
from .fluid import SimConfig, generate_trajectory
from .metrics import (
    EvalReport,
    default_probe,
    pearson_over_time,
    rate_of_change,
    rollout_mse,
    temporal_spectrum_probe,
    tke_spectrum,
)
from .objectives import ObjectiveConfig, TrainingDiverged, train
from .sampler import RolloutConfig, posterior_ensemble
from .tensor import CheckpointError, load_weights, save_weights

log = logging.getLogger("acdm_bench")

EXIT_CONFIG, EXIT_CHECKPOINT, EXIT_NAN = 2, 3, 4

PROFILES = {
    "fast": {"nx": 64, "ny": 32, "total_steps": 900, "warmup_cut": 300},
    "full": {"nx": 128, "ny": 64, "total_steps": 1300, "warmup_cut": 300},
}

DEFAULTS = {
    "preset": None,
    "data": {
        "dir": "data",
        "profile": "fast",
        "nx": None,
        "ny": None,
        "total_steps": None,
        "warmup_cut": None,
        "dt": 0.05,
        "export_stride": 2,
        "export_factor": 1,
        "cg_tol": 1e-6,
        "splits": {
            "train": list(range(200, 901, 50)),
            "test-low": [100, 120, 140, 160, 180],
            "test-high": [920, 940, 960, 980, 1000],
        },
        "var": {"re_start": 200, "re_end": 900},
    },
    "model": {
        "kind": "unet",
        "width": 16,
        "levels": 3,
        "emb_dim": None,
        "norm": True,
        "attention": False,
        "groups": 8,
        "blocks": 4,
        "layers": 7,
        "modes": [16, 8],
        "fno_layers": 4,
        "dtype": "float32",
    },
    "objective": {
        "variant": "acdm",
        "k": 2,
        "loss": "huber",
        "delta": 1.0,
        "R": 20,
        "m": 8,
        "n": 1e-2,
        "sigma_min": 1e-6,
        "pretrain_steps": 0,
    },
    "rollout": {
        "split": "test-high",
        "start": 0,
        "horizon": None,
        "ensemble_size": 1,
        "schedule_clip": None,
    },
    "eval": {"metrics": ["mse", "pearson", "rate_of_change", "tke", "temporal_spectrum"],
             "probe": None},
    "run": {
        "seed": None,
        "method": None,
        "steps": 2000,
        "batch": 8,
        "lr": 1e-4,
        "lr_schedule": "constant",
        "seq_len": 16,
        "output": "runs/default",
    },
}

# Presets carry desk-scale step budgets instead of epoch counts.
PRESETS = {
    "acdm-R20": {"objective": {"variant": "acdm", "R": 20},
                 "run": {"steps": 3000, "lr": 1e-3, "lr_schedule": "cosine"},
                 "rollout": {"ensemble_size": 5}},
    "acdm-ncn": {"objective": {"variant": "acdm-ncn", "R": 20},
                 "run": {"steps": 3000, "lr": 1e-3, "lr_schedule": "cosine"},
                 "rollout": {"ensemble_size": 5}},
    "unet": {"objective": {"variant": "next-step", "k": 1},
             "run": {"steps": 2000, "lr": 1e-3, "lr_schedule": "cosine"}},
    "unet-ut-m8": {"objective": {"variant": "unrolled", "k": 1, "m": 8},
                   "run": {"steps": 500, "batch": 1, "lr": 1e-3, "lr_schedule": "cosine"}},
    "unet-tn-1e-2": {"objective": {"variant": "train-noise", "k": 1, "n": 1e-2},
                     "run": {"steps": 2000, "lr": 1e-3, "lr_schedule": "cosine"}},
    "resnet-dil": {"model": {"kind": "resnet-dilated"},
                   "objective": {"variant": "next-step", "k": 1},
                   "run": {"steps": 2000, "lr": 1e-3, "lr_schedule": "cosine"}},
    "fno-16": {"model": {"kind": "fno", "modes": [16, 8]},
               "objective": {"variant": "next-step", "k": 1},
               "run": {"steps": 2000, "lr": 1e-3, "lr_schedule": "cosine"}},
    "refiner-R4-s1e-6": {"objective": {"variant": "refiner", "k": 1, "R": 4, "sigma_min": 1e-6},
                         "run": {"steps": 2000, "lr": 1e-3, "lr_schedule": "cosine"},
                         "rollout": {"ensemble_size": 5}},
}


METRICS = ("mse", "pearson", "rate_of_change", "tke", "temporal_spectrum")


class ConfigError(ValueError):
    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


class MissingCheckpoint(FileNotFoundError):
    pass


# ---------------------------------------------------------------------------
# config resolution


def version_string() -> str:
    """``<version>`` plus a git-describe suffix when run from a checkout."""
    try:
        out = subprocess.run(["git", "describe", "--tags", "--always", "--dirty"],
                             cwd=Path(__file__).resolve().parent, capture_output=True,
                             text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        here = f"{path}.{key}" if path else key
        if key not in out:
            raise ConfigError(here, "unknown key")
        # splits is an open mapping of split name -> Re list; var may be null
        if isinstance(out[key], dict) and key != "splits" and not (key == "var" and val is None):
            if not isinstance(val, dict):
                raise ConfigError(here, "expected an object")
            out[key] = _merge(out[key], val, here)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _set_override(over: dict, expr: str) -> None:
    if "=" not in expr:
        raise ConfigError(expr, "override must look like section.key=value")
    key, text = expr.split("=", 1)
    parts = key.strip().split(".")
    node = over
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = _parse_value(text)


def resolve_config(path=None, preset: str | None = None, overrides=(), env=None) -> dict:
    """Merge defaults, preset, file, overrides and env into one validated config."""
    env = os.environ if env is None else env
    user: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError("config", f"file {p} does not exist")
        try:
            user = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError("config", "top level must be an object")
    sets: dict = {}
    for expr in overrides:
        _set_override(sets, expr)
    name = preset or sets.get("preset") or user.get("preset")
    cfg = copy.deepcopy(DEFAULTS)
    if name is not None:
        if name not in PRESETS:
            raise ConfigError("preset", f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        cfg = _merge(cfg, PRESETS[name])
        cfg["preset"] = name
    cfg = _merge(cfg, user)
    cfg = _merge(cfg, sets)
    if name is not None:
        cfg["preset"] = name
    if env.get("ACDM_BENCH_SEED") not in (None, ""):
        try:
            cfg["run"]["seed"] = int(env["ACDM_BENCH_SEED"])
        except ValueError:
            raise ConfigError("ACDM_BENCH_SEED", "must be an integer") from None
    validate(cfg)
    return cfg


def _check_type(cfg: dict, path: str, types, allow_none: bool = False):
    node = cfg
    for p in path.split("."):
        node = node[p]
    if node is None and allow_none:
        return
    if isinstance(node, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
        raise ConfigError(path, f"expected {types}, got a boolean")
    if not isinstance(node, types):
        raise ConfigError(path, f"expected {getattr(types, '__name__', types)}, got {node!r}")


def validate(cfg: dict) -> None:
    """Raise ConfigError naming the offending field."""
    _check_type(cfg, "run.seed", int, allow_none=True)
    if cfg["run"]["seed"] is None:
        raise ConfigError("run.seed", "a seed is mandatory")
    for key in ("run.steps", "run.batch", "run.seq_len", "rollout.start", "rollout.ensemble_size",
                "data.export_stride", "data.export_factor"):
        _check_type(cfg, key, int)
    for key in ("data.nx", "data.ny", "data.total_steps", "data.warmup_cut", "rollout.horizon"):
        _check_type(cfg, key, int, allow_none=True)
    for key in ("run.lr", "data.dt", "data.cg_tol"):
        _check_type(cfg, key, (int, float))
    if cfg["run"]["steps"] < 0:
        raise ConfigError("run.steps", "must be >= 0")
    if cfg["run"]["batch"] < 1:
        raise ConfigError("run.batch", "must be >= 1")
    if not cfg["run"]["lr"] > 0:
        raise ConfigError("run.lr", "must be positive")
    if cfg["run"]["lr_schedule"] not in ("constant", "cosine"):
        raise ConfigError("run.lr_schedule", "must be 'constant' or 'cosine'")
    if cfg["data"]["profile"] not in PROFILES:
        raise ConfigError("data.profile", f"must be one of {sorted(PROFILES)}")
    splits = cfg["data"]["splits"]
    if not isinstance(splits, dict) or "train" not in splits:
        raise ConfigError("data.splits", "needs at least a 'train' list")
    for name, values in splits.items():
        if not isinstance(values, list) or not values or \
                not all(isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0 for v in values):
            raise ConfigError(f"data.splits.{name}", "must be a non-empty list of positive Reynolds numbers")
    var = cfg["data"]["var"]
    if var is not None and (not isinstance(var, dict) or set(var) != {"re_start", "re_end"}):
        raise ConfigError("data.var", "must be null or {re_start, re_end}")
    if cfg["rollout"]["split"] not in list(splits) + ["var"]:
        raise ConfigError("rollout.split", f"unknown split {cfg['rollout']['split']!r}")
    unknown = set(cfg["eval"]["metrics"]) - set(METRICS)
    if unknown:
        raise ConfigError("eval.metrics", f"unknown metrics {sorted(unknown)}")
    probe = cfg["eval"]["probe"]
    if probe is not None and (not isinstance(probe, list) or len(probe) != 2
                              or not all(isinstance(v, int) for v in probe)):
        raise ConfigError("eval.probe", "must be null or [x index, y index]")
    for section, fn in (("data", lambda: sim_config(cfg, 500.0)),
                        ("objective", lambda: objective_config(cfg)),
                        ("model", lambda: backbone_spec(cfg, 4)),
                        ("rollout", lambda: rollout_config(cfg, 10))):
        try:
            fn()
        except (TypeError, ValueError) as exc:
            raise ConfigError(section, str(exc)) from None


def sim_config(cfg: dict, reynolds: float, reynolds_end: float | None = None) -> SimConfig:
    d = cfg["data"]
    prof = PROFILES[d["profile"]]
    pick = lambda k: prof[k] if d[k] is None else d[k]
    return SimConfig(nx=pick("nx"), ny=pick("ny"), dt=d["dt"], reynolds=float(reynolds),
                     reynolds_end=None if reynolds_end is None else float(reynolds_end),
                     total_steps=pick("total_steps"), warmup_cut=pick("warmup_cut"),
                     export_stride=d["export_stride"], export_factor=d["export_factor"],
                     cg_tol=d["cg_tol"])


def objective_config(cfg: dict) -> ObjectiveConfig:
    return ObjectiveConfig(**cfg["objective"])


def backbone_spec(cfg: dict, channels: int) -> BackboneSpec:
    obj = objective_config(cfg)
    m = dict(cfg["model"])
    stepped = obj.diffusion or obj.variant == "refiner"
    if m["emb_dim"] is None:
        m["emb_dim"] = 32 if stepped else 0
    m["modes"] = tuple(m["modes"])
    extra = 1 if stepped else 0
    return BackboneSpec(in_channels=(obj.k + extra) * channels, out_channels=channels, **m)


def rollout_config(cfg: dict, horizon: int) -> RolloutConfig:
    obj = objective_config(cfg)
    variant = obj.variant if obj.variant in ("acdm", "acdm-ncn", "refiner") else "next-step"
    ro = cfg["rollout"]
    return RolloutConfig(horizon=ro["horizon"] or horizon, k=obj.k, variant=variant, R=obj.R,
                         sigma_min=obj.sigma_min, ensemble_size=ro["ensemble_size"],
                         seed=cfg["run"]["seed"], schedule_clip=ro["schedule_clip"])


def method_name(cfg: dict) -> str:
    return cfg["run"]["method"] or cfg["preset"] or cfg["objective"]["variant"]


def provenance(cfg: dict) -> dict:
    return {"config": cfg, "version": version_string(), "method": method_name(cfg)}


def _write_json(path: Path, obj: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1))


def print_table(headers: list[str], rows: list[list]) -> None:
    cells = [headers] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    for i, r in enumerate(cells):
        print("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
        if i == 0:
            print("  ".join("-" * w for w in widths))


# ---------------------------------------------------------------------------
# data


def sequence_jobs(cfg: dict) -> list[tuple[str, str, float, float | None]]:
    jobs = []
    for split, values in cfg["data"]["splits"].items():
        for re in values:
            jobs.append((split, f"re{re:g}", float(re), None))
    var = cfg["data"]["var"]
    if var is not None:
        jobs.append(("var", f"re{var['re_start']:g}-{var['re_end']:g}",
                     float(var["re_start"]), float(var["re_end"])))
    return jobs


def _generate_one(args):
    cfg, split, name, re, re_end = args
    out = Path(cfg["data"]["dir"]) / split / f"{name}.flowseq"
    t0 = time.time()
    traj = generate_trajectory(sim_config(cfg, re, re_end), seed=cfg["run"]["seed"])
    traj.meta["provenance"] = {"version": version_string(), "config": cfg}
    write_flowseq(traj, out)
    return split, name, traj.T + 1, time.time() - t0, str(out)


def cmd_generate(cfg: dict, jobs: int = 1) -> int:
    work = [(cfg,) + j for j in sequence_jobs(cfg)]
    if jobs > 1:
        with Pool(min(jobs, len(work))) as pool:
            done = pool.map(_generate_one, work)
    else:
        done = [_generate_one(w) for w in work]
    _write_json(Path(cfg["data"]["dir"]) / "dataset.json", provenance(cfg))
    print_table(["split", "sequence", "states", "seconds"],
                [[s, n, t, f"{sec:.1f}"] for s, n, t, sec, _ in done])
    return 0


def split_dir(cfg: dict, split: str) -> Path:
    d = Path(cfg["data"]["dir"]) / split
    if not d.is_dir() or not any(d.glob("*.flowseq")):
        raise ConfigError("data.dir", f"no sequences in {d}; run 'generate' first")
    return d


def load_split(cfg: dict, split: str):
    return [read_flowseq(p) for p in sorted(split_dir(cfg, split).glob("*.flowseq"))]


# ---------------------------------------------------------------------------
# training


def run_dir(cfg: dict) -> Path:
    return Path(cfg["run"]["output"])


def cmd_train(cfg: dict) -> int:
    raw = load_split(cfg, "train")
    stats = compute_norm_stats(raw)
    mask = fluid_mask(raw[0])
    trajs = []
    for tr in raw:
        tr = normalize(tr, stats)
        tr.states = apply_mask(tr.states, mask, tr.n_fields)
        trajs.append(tr)
    spec = backbone_spec(cfg, trajs[0].states.shape[1])
    model = build(spec, cfg["run"]["seed"])
    obj = objective_config(cfg)
    out = run_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    r = cfg["run"]
    log.info("training %s (%d parameters) for %d steps", method_name(cfg), param_count(model), r["steps"])
    t0 = time.time()
    losses = train(model, obj, trajs, r["steps"], batch_size=r["batch"], lr=r["lr"], seed=r["seed"],
                   masks=[mask] * len(trajs), seq_len=r["seq_len"], n_fields=trajs[0].n_fields,
                   lr_schedule=r["lr_schedule"],
                   on_step=lambda s, v: (s + 1) % 100 == 0 and log.info("step %d loss %.4g", s + 1, v))
    seconds = time.time() - t0
    save_weights(out / "model.acwt", model.state_dict())
    stats.save(out / "stats.json")
    with open(out / "loss.csv", "w") as fh:
        fh.write("step,loss\n")
        fh.writelines(f"{i},{v!r}\n" for i, v in enumerate(losses))
    tail = float(np.mean(losses[-100:])) if losses else float("nan")
    _write_json(out / "run.json", {**provenance(cfg), "parameters": param_count(model),
                                   "train_seconds": seconds, "final_loss": tail})
    print_table(["method", "parameters", "steps", "final loss", "seconds"],
                [[method_name(cfg), param_count(model), r["steps"], f"{tail:.4g}", f"{seconds:.1f}"]])
    return 0


def load_model(cfg: dict, channels: int, checkpoint=None):
    path = Path(checkpoint) if checkpoint else run_dir(cfg) / "model.acwt"
    if not path.is_file():
        raise MissingCheckpoint(f"checkpoint {path} not found")
    model = build(backbone_spec(cfg, channels), cfg["run"]["seed"])
    try:
        model.load_state_dict(load_weights(path))
    except (CheckpointError, KeyError, ValueError) as exc:
        raise MissingCheckpoint(f"checkpoint {path} unusable: {exc}") from None
    return model


# ---------------------------------------------------------------------------
# rollout and evaluation


def cmd_rollout(cfg: dict, checkpoint=None, split: str | None = None) -> int:
    split = split or cfg["rollout"]["split"]
    refs = sorted(split_dir(cfg, split).glob("*.flowseq"))
    stats_path = (Path(checkpoint).parent if checkpoint else run_dir(cfg)) / "stats.json"
    first = read_flowseq(refs[0])
    model = load_model(cfg, first.states.shape[1], checkpoint)
    if not stats_path.is_file():
        raise MissingCheckpoint(f"normalization statistics {stats_path} not found")
    stats = NormStats.load(stats_path)
    out = run_dir(cfg) / "rollout" / split
    rows = []
    for ref_path in refs:
        raw = read_flowseq(ref_path)
        mask = fluid_mask(raw)
        ref = normalize(raw, stats)
        ref.states = apply_mask(ref.states, mask, ref.n_fields)
        start = cfg["rollout"]["start"]
        rc = rollout_config(cfg, ref.T + 1 - start - cfg["objective"]["k"])
        t0 = time.time()
        members = posterior_ensemble(model, ref, rc, start=start, mask=mask)
        for i, mem in enumerate(members):
            phys = denormalize(mem, stats)
            phys.meta["provenance"] = provenance(cfg)
            write_flowseq(phys, out / ref_path.stem / f"member{i}.flowseq")
        rows.append([ref_path.stem, len(members), rc.horizon, f"{time.time() - t0:.1f}"])
    stats.save(out / "stats.json")
    _write_json(out / "rollout.json", {**provenance(cfg), "split": split,
                                       "reference": str(split_dir(cfg, split))})
    print_table(["sequence", "members", "horizon", "seconds"], rows)
    return 0


def _pred_files(pred_dir: Path) -> list[tuple[str, int, Path]]:
    """(sequence, member, path) for ``seq/memberN.flowseq`` or ``seq.flowseq``."""
    found = []
    for p in sorted(pred_dir.rglob("*.flowseq")):
        if p.stem.startswith("member") and p.stem[6:].isdigit():
            found.append((p.parent.name, int(p.stem[6:]), p))
        else:
            found.append((p.stem, 0, p))
    return found


def evaluate_dirs(cfg: dict, pred_dir, ref_dir) -> EvalReport:
    pred_dir, ref_dir = Path(pred_dir), Path(ref_dir)
    stats_path = pred_dir / "stats.json"
    stats = NormStats.load(stats_path) if stats_path.is_file() else None
    metrics = cfg["eval"]["metrics"]
    rep = EvalReport()
    files = _pred_files(pred_dir)
    if not files:
        raise ConfigError("pred", f"no .flowseq predictions in {pred_dir}")
    for seq, member, path in files:
        ref_path = ref_dir / f"{seq}.flowseq"
        if not ref_path.is_file():
            raise ConfigError("ref", f"no reference {ref_path} for prediction {path}")
        pred, ref = read_flowseq(path), read_flowseq(ref_path)
        start, n_init = pred.meta.get("start", 0), pred.meta.get("n_init", 0)
        ref_states = ref.states[start:start + pred.T + 1]
        if ref_states.shape != pred.states.shape:
            raise ConfigError("ref", f"{ref_path} covers {ref_states.shape[0]} of {pred.T + 1} states")
        p, r = pred.states, ref_states
        if stats is not None:
            p, r = normalize(p, stats), normalize(r, stats)
        mask = fluid_mask(ref)
        nf = ref.n_fields
        p, r = p[n_init:], r[n_init:]
        if "mse" in metrics:
            rep.add_series("mse", seq, member, rollout_mse(p, r, mask, nf)[1])
        if "pearson" in metrics:
            rep.add_series("pearson", seq, member, pearson_over_time(p, r, mask, nf))
        if "rate_of_change" in metrics and p.shape[0] > 1:
            rep.add_series("rate_of_change", seq, member, rate_of_change(p, pred.dt, mask, nf))
        if "tke" in metrics and p.shape[0] > 1:
            rep.add_series("tke", seq, member, tke_spectrum(p)[1])
        if "temporal_spectrum" in metrics and p.shape[0] > 1:
            probe = cfg["eval"]["probe"]
            probe = tuple(probe) if probe is not None else default_probe(ref)
            rep.add_series("temporal_spectrum", seq, member, temporal_spectrum_probe(p, probe)[1])
    return rep


def cmd_evaluate(cfg: dict, pred_dir=None, ref_dir=None, out_dir=None) -> int:
    split = cfg["rollout"]["split"]
    pred_dir = Path(pred_dir) if pred_dir else run_dir(cfg) / "rollout" / split
    ref_dir = Path(ref_dir) if ref_dir else split_dir(cfg, split)
    out_dir = Path(out_dir) if out_dir else run_dir(cfg) / "eval"
    if not pred_dir.is_dir():
        raise ConfigError("pred", f"{pred_dir} does not exist")
    rep = evaluate_dirs(cfg, pred_dir, ref_dir)
    rep.write(out_dir, {**provenance(cfg), "pred": str(pred_dir), "ref": str(ref_dir)})
    summ = rep.summary()
    print_table(["metric", "series", "mean", "std"],
                [[m, summ[m]["n_series"], f"{summ[m]['mean']:.6g}", f"{summ[m]['std']:.3g}"]
                 for m in rep.metrics()])
    return 0


REPORT_METRICS = ("mse", "pearson", "rate_of_change")


def report_rows(dirs) -> list[list[str]]:
    """One row per method (merging dirs of the same method), sorted by name."""
    by_method: dict[str, EvalReport] = {}
    for d in dirs:
        d = Path(d)
        meta_path = d / "report.json"
        if not meta_path.is_file():
            raise ConfigError("report", f"{meta_path} not found")
        method = json.loads(meta_path.read_text()).get("method") or d.name
        merged = by_method.setdefault(method, EvalReport())
        for metric, rows in EvalReport.read(d).rows.items():
            merged.rows[metric].extend((f"{d}/{run}", m, i, v) for run, m, i, v in rows)
    out = []
    for method in sorted(by_method):
        summ = by_method[method].summary()
        cells = [method]
        for m in REPORT_METRICS:
            cells.append(f"{summ[m]['mean']:.4g} ± {summ[m]['std']:.2g}" if m in summ else "-")
        out.append(cells)
    return out


def cmd_report(dirs, csv_out=None) -> int:
    rows = report_rows(dirs)
    headers = ["method"] + list(REPORT_METRICS)
    if csv_out:
        import csv

        with open(csv_out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(headers)
            w.writerows(rows)
    print_table(headers, rows)
    return 0


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="acdm-bench", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"acdm-bench {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("config", nargs="?", help="JSON run config")
        p.add_argument("--preset", choices=sorted(PRESETS))
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key by dotted path (value parsed as JSON)")
        return p

    g = with_config(sub.add_parser("generate", help="simulate the dataset splits"))
    g.add_argument("--jobs", type=int, default=1, help="maximum worker processes")
    with_config(sub.add_parser("train", help="train a model, write checkpoint and loss log"))
    r = with_config(sub.add_parser("rollout", help="roll out a trained model on a split"))
    r.add_argument("--checkpoint")
    r.add_argument("--split")
    e = with_config(sub.add_parser("evaluate", help="score predictions against references"))
    e.add_argument("--pred")
    e.add_argument("--ref")
    e.add_argument("--out")
    rp = sub.add_parser("report", help="compare evaluated methods")
    rp.add_argument("dirs", nargs="+", help="evaluation output directories")
    rp.add_argument("--csv", help="also write the table as CSV")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            return cmd_report(args.dirs, args.csv)
        cfg = resolve_config(args.config, args.preset, args.overrides)
        if args.command == "generate":
            return cmd_generate(cfg, max(1, args.jobs))
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "rollout":
            return cmd_rollout(cfg, args.checkpoint, args.split)
        return cmd_evaluate(cfg, args.pred, args.ref, args.out)
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingCheckpoint as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except TrainingDiverged as exc:
        print(f"error: training diverged at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_NAN


if __name__ == "__main__":
    sys.exit(main())
