"""``setflow`` command line: gen-toy, train, eval, sample, interpolate, analyze-phases.

Exit codes: 0 success, 2 usage error, 3 data/parse error, 4 numeric abort.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, CheckpointError
from .config import RunConfig, config_diff, read_config_file, write_config_file
from .data import (
    CircleSource,
    CloudSource,
    FixedSetSource,
    OffParseError,
    build_manifest,
    between_peak_mass,
    find_circular_peaks,
    gen_circle_set,
    load_point_clouds,
    peak_spacings,
    phase_histogram,
    read_cloud,
    read_manifest,
    write_cloud,
    write_manifest,
)
from .model import (
    EntitySet,
    NumericError,
    SetFlowModel,
    interpolate,
    reported_per_entity_ll,
    sample_sets,
)
from .numerics import AdamState
from .training import LogRow, TrainState, train

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4

TRAIN_LOG_HEADER = ["step", "joint_ll", "per_entity_ll", "wallclock_s"]
EVAL_HEADER = ["split", "n_sets", "mean_per_entity_ll", "two_sem", "seed"]
HIST_HEADER = ["histogram", "bin_lo", "bin_hi", "count"]


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# --------------------------------------------------------------------------
# data loading


def write_toy(path, n_sets: int, lo: int, hi: int, seed: int,
              radial_sd: float = 0.1, angular_sd: float = 0.3) -> None:
    """Toy sets as a JSON-lines manifest plus a ``.bin`` cloud blob of all points."""
    if lo < 3 or hi < lo:
        raise UsageError(f"invalid size range {lo}..{hi} (need 3 <= a <= b)")
    path = Path(path)
    blob = path.with_suffix(".bin")
    rng = np.random.default_rng(seed)
    rows, chunks, offset = [], [], 0
    for i in range(n_sets):
        N = int(rng.integers(lo, hi + 1))
        pts, spec = gen_circle_set(N, rng, radial_sd, angular_sd)
        rows.append({"set": i, "size": N, "offset": offset, "cx": spec.cx, "cy": spec.cy,
                     "radius": spec.radius, "phase": spec.phase})
        chunks.append(pts)
        offset += N
    header = {"kind": "toy", "blob": blob.name, "n_sets": n_sets, "seed": seed,
              "size_range": [lo, hi], "radial_sd": radial_sd, "angular_sd": angular_sd}
    with open(path, "w") as fh:
        for rec in [header, *rows]:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    write_cloud(blob, np.concatenate(chunks) if chunks else np.zeros((0, 2)))


def read_toy(path) -> tuple[dict, list[np.ndarray]]:
    path = Path(path)
    with open(path) as fh:
        recs = [json.loads(line) for line in fh if line.strip()]
    header, rows = recs[0], recs[1:]
    pts = read_cloud(path.parent / header["blob"])
    return header, [pts[r["offset"]:r["offset"] + r["size"]] for r in rows]


def _manifest_kind(path: Path) -> str | None:
    with open(path) as fh:
        first = fh.readline()
    try:
        return json.loads(first).get("kind")
    except (json.JSONDecodeError, AttributeError):
        return None


def load_pointcloud_data(path: Path, cfg: RunConfig, out_dir: Path | None = None):
    """Point-cloud dataset from a ModelNet-style directory or a manifest."""
    d = cfg.data
    if path.is_dir():
        classes = list(d.classes) or None
        entries = build_manifest(path, classes, seed=d.split_seed)
        root = path
        if out_dir is not None:
            write_manifest(out_dir / "manifest.jsonl", entries, root=path.resolve())
    else:
        header, entries = read_manifest(path)
        root = Path(header.get("root", path.parent))
        if d.classes:
            entries = [e for e in entries if e.cls in d.classes]
    if not entries:
        raise DataError(f"no point-cloud models found at {path}")
    names = sorted({e.cls for e in entries})
    return load_point_clouds(entries, root, d.n_points, seed=d.split_seed, class_names=names)


def training_source(data: str, cfg: RunConfig, out_dir: Path):
    if data == "circles":
        return CircleSource(cfg.data.radial_sd, cfg.data.angular_sd)
    path = Path(data)
    if not path.exists():
        raise DataError(f"data path {data} does not exist")
    if path.is_file() and _manifest_kind(path) == "toy":
        _, sets = read_toy(path)
        return FixedSetSource(sets)
    ds = load_pointcloud_data(path, cfg, out_dir).subset("train")
    if len(ds) == 0:
        raise DataError("training split is empty")
    return CloudSource(ds.clouds, ds.labels if cfg.data.labels else None)


def evaluation_sets(data: str, cfg: RunConfig, split: str, size: int, seed: int) -> list:
    """Test sets as ``(X, label)``; point-cloud models are subsampled to ``size`` entities."""
    path = Path(data)
    if not path.exists():
        raise DataError(f"data path {data} does not exist")
    if path.is_file() and path.suffix == ".bin":
        arr = read_cloud(path)
        arr = arr[None] if arr.ndim == 2 else arr
        return [(x, None) for x in arr]
    if path.is_file() and _manifest_kind(path) == "toy":
        return [(x, None) for x in read_toy(path)[1]]
    ds = load_pointcloud_data(path, cfg).subset(split)
    rng = np.random.default_rng([seed, 1])
    sets = []
    for cloud, label in zip(ds.clouds, ds.labels):
        if len(cloud) < size:
            raise DataError(f"cloud has {len(cloud)} < {size} points")
        idx = rng.choice(len(cloud), size=size, replace=False)
        sets.append((cloud[idx], int(label) if cfg.data.labels else None))
    return sets


# --------------------------------------------------------------------------
# commands


def cmd_gen_toy(args) -> int:
    lo, _, hi = args.size_range.partition("..")
    try:
        lo, hi = int(lo), int(hi or lo)
    except ValueError:
        raise UsageError(f"--size-range must look like a..b, got {args.size_range!r}") from None
    if args.sets < 0:
        raise UsageError("--sets must be >= 0")
    write_toy(args.out, args.sets, lo, hi, args.seed, args.radial_sd, args.angular_sd)
    return 0


def _load_run_config(args) -> RunConfig:
    flat = dict(read_config_file(args.config)) if args.config else {}
    for item in args.set or []:
        key, eq, val = item.partition("=")
        if not eq:
            raise UsageError(f"--set expects key=value, got {item!r}")
        flat[key.strip()] = val
    if args.steps is not None:
        flat["train.steps"] = str(args.steps)
    if args.seed is not None:
        flat["train.seed"] = str(args.seed)
    try:
        return RunConfig.preset(args.preset).with_overrides(flat).validate()
    except (KeyError, ValueError) as exc:
        raise UsageError(str(exc)) from None


class _DirLock:
    def __init__(self, directory: Path):
        self.path = directory / ".lock"

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise UsageError(f"{self.path.parent} is locked by another training run "
                             f"(remove {self.path} if stale)") from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with _DirLock(out):
        if args.resume:
            ck = Checkpoint.load(args.resume)
            diff = config_diff(ck.config, cfg)
            if diff:
                lines = "\n".join(f"  {k}: checkpoint={a!r} requested={b!r}" for k, (a, b) in diff.items())
                raise UsageError(f"resume config does not match checkpoint:\n{lines}")
            model = ck.build_model()
            state = TrainState(model, ck.adam, ck.build_rng(), ck.step)
            if state.adam is None:
                raise UsageError("checkpoint has no optimizer state; cannot resume")
        else:
            rng = np.random.default_rng(cfg.train.seed)
            model = SetFlowModel(cfg.model, rng)
            state = TrainState(model, AdamState(lr=cfg.train.lr), rng, 0)
        write_config_file(out / "config.ini", cfg)
        source = training_source(args.data, cfg, out)
        if getattr(source, "entity_dim", cfg.model.entity_dim) != cfg.model.entity_dim:
            raise UsageError(f"data entity dim {source.entity_dim} != model.entity_dim "
                             f"{cfg.model.entity_dim}")

        log_path = out / "train_log.csv"
        new_log = not log_path.exists() or not args.resume
        log_fh = open(log_path, "w" if new_log else "a", newline="")
        writer = csv.writer(log_fh)
        if new_log:
            writer.writerow(TRAIN_LOG_HEADER)

        def on_log(st: TrainState, row: LogRow):
            writer.writerow([row.step, repr(row.joint_ll), repr(row.per_entity_ll),
                             f"{row.wallclock_s:.3f}"])
            log_fh.flush()
            Checkpoint.capture(cfg, st.model, st.step, st.adam, st.rng).save(out / "latest.ckpt")

        tcfg = cfg.train_config()
        tcfg.steps = max(0, cfg.train.steps - state.step)
        try:
            train(state.model, source, tcfg, state.rng, state=state, on_log=on_log)
        except NumericError as exc:
            Checkpoint.capture(cfg, state.model, state.step, state.adam, state.rng).save(
                out / "nan_abort.ckpt")
            print(f"numeric abort at step {state.step + 1}: {exc}; "
                  f"diagnostic checkpoint in {out / 'nan_abort.ckpt'}", file=sys.stderr)
            return EXIT_NUMERIC
        finally:
            log_fh.close()
        Checkpoint.capture(cfg, state.model, state.step, state.adam, state.rng).save(out / "latest.ckpt")
    return 0


def _load_ckpt(path) -> Checkpoint:
    try:
        return Checkpoint.load(path)
    except (OSError, CheckpointError) as exc:
        raise DataError(f"cannot load checkpoint {path}: {exc}") from None


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("SETFLOW_THREADS", "1")))
    except ValueError:
        return 1


def cmd_eval(args) -> int:
    ck = _load_ckpt(args.ckpt)
    cfg = ck.config
    sets = evaluation_sets(args.data, cfg, args.split, args.size, args.seed)
    if not sets:
        raise DataError(f"no sets in split {args.split!r}")
    D = cfg.model.entity_dim
    bad = {x.shape[-1] for x, _ in sets} - {D}
    if bad:
        raise UsageError(f"data entity dimension {sorted(bad)} does not match the checkpoint "
                         f"(model.entity_dim = {D})")
    model = ck.build_model()
    summary = reported_per_entity_ll(model, sets, seed=args.seed, workers=_threads())
    w = csv.writer(sys.stdout)
    w.writerow(EVAL_HEADER)
    w.writerow([args.split, summary.n_sets, repr(summary.mean), repr(summary.two_sem), args.seed])
    return 0


def _write_sets_csv(path, sets, lead_name="set_id", extra=None):
    D = sets.shape[-1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([lead_name, *(extra or {}).keys(), "entity_id", *[f"x{j}" for j in range(D)]])
        for i, X in enumerate(sets):
            ex = [v[i] for v in (extra or {}).values()]
            for j, row in enumerate(X):
                w.writerow([i, *ex, j, *map(repr, row.tolist())])


def cmd_sample(args) -> int:
    ck = _load_ckpt(args.ckpt)
    model = ck.build_model()
    if model.config.conditional and args.label is None:
        raise UsageError("conditional model: --label is required")
    if not model.config.conditional and args.label is not None:
        raise UsageError("--label given but the model is unconditional")
    if args.size < 1 or args.count < 1:
        raise UsageError("--size and --count must be >= 1")
    X, _ = sample_sets(model, args.count, args.size, args.label, rng=args.seed)
    out = Path(args.out)
    write_cloud(out, X)
    _write_sets_csv(out.with_suffix(".csv"), X)
    return 0


def cmd_interpolate(args) -> int:
    ck = _load_ckpt(args.ckpt)
    model = ck.build_model()
    a, b = read_cloud(args.a), read_cloud(args.b)
    if a.shape != b.shape or a.ndim != 2:
        raise UsageError(f"sets must be [s, D] with equal shapes, got {a.shape} and {b.shape}")
    if a.shape[1] != model.entity_dim:
        raise UsageError(f"set dimension {a.shape[1]} != model.entity_dim {model.entity_dim}")
    if args.steps < 1:
        raise UsageError("--steps must be >= 1")
    conditional = model.config.conditional
    if conditional and (args.label_a is None or args.label_b is None):
        raise UsageError("conditional model: --label-a and --label-b are required")
    rng = np.random.default_rng(args.seed)
    za, zb = rng.standard_normal((2, model.global_dim))
    sa = EntitySet(a, za, args.label_a if conditional else None)
    sb = EntitySet(b, zb, args.label_b if conditional else None)
    ts = np.arange(args.steps + 1) / args.steps
    frames = np.stack([interpolate(model, sa, sb, float(t)).entities for t in ts])
    out = Path(args.out)
    write_cloud(out, frames)
    _write_sets_csv(out.with_suffix(".csv"), frames, "step", {"t": [repr(float(t)) for t in ts]})
    return 0


def cmd_analyze_phases(args) -> int:
    rng = np.random.default_rng(args.seed)
    if args.ckpt in (None, "none"):
        sets = [gen_circle_set(args.size, rng)[0] for _ in range(args.sets)]
    else:
        model = _load_ckpt(args.ckpt).build_model()
        if model.entity_dim != 2:
            raise UsageError("phase analysis needs a model with entity_dim 2")
        sets = []
        for start in range(0, args.sets, 1024):
            X, _ = sample_sets(model, min(1024, args.sets - start), args.size, rng=rng)
            sets.extend(X)
    hist = phase_histogram(sets, bins=args.bins)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HIST_HEADER)
        for name, edges, counts in (("phase", hist.edges, hist.counts),
                                    ("radius", hist.radius_edges, hist.radius_counts)):
            for lo, hi, c in zip(edges[:-1], edges[1:], counts):
                w.writerow([name, repr(float(lo)), repr(float(hi)), int(c)])
    peaks = find_circular_peaks(hist.counts, hist.edges)
    summary = {
        "sets": args.sets, "failed_fits": hist.n_failed,
        "peaks": [round(float(p), 4) for p in peaks],
        "spacings": [round(float(s), 4) for s in peak_spacings(peaks)],
        "between_peak_mass": round(between_peak_mass(hist.aligned, args.size), 4),
        "median_radius": round(float(np.median(hist.radii)), 4) if len(hist.radii) else None,
    }
    print(json.dumps(summary))
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="setflow", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-toy", help="generate circle sets")
    g.add_argument("--sets", type=int, required=True)
    g.add_argument("--size-range", default="3..6")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="manifest path; points go to <out>.bin")
    g.add_argument("--radial-sd", type=float, default=0.1)
    g.add_argument("--angular-sd", type=float, default=0.3)
    g.set_defaults(func=cmd_gen_toy)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config")
    t.add_argument("--data", required=True,
                   help="'circles' (fresh toy sets), a gen-toy manifest, a point-cloud manifest, "
                        "or a ModelNet-style directory")
    t.add_argument("--out", required=True)
    t.add_argument("--resume")
    t.add_argument("--preset", default="toy", choices=["toy", "pointcloud"])
    t.add_argument("--set", action="append", metavar="KEY=VALUE")
    t.add_argument("--steps", type=int)
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="mean per-entity test log-likelihood +- 2 SEM")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--seed", type=int, default=42)
    e.add_argument("--size", type=int, default=1000, help="entities per point-cloud test set")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sample", help="sample sets")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--size", type=int, required=True)
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--label", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    i = sub.add_parser("interpolate", help="interpolate between two sets in noise space")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--a", required=True)
    i.add_argument("--b", required=True)
    i.add_argument("--steps", type=int, default=8)
    i.add_argument("--label-a", type=int)
    i.add_argument("--label-b", type=int)
    i.add_argument("--seed", type=int, default=42)
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_interpolate)

    a = sub.add_parser("analyze-phases", help="phase/radius histograms of fitted circles")
    a.add_argument("--ckpt", default="none", help="checkpoint, or 'none' for the generator")
    a.add_argument("--size", type=int, default=3)
    a.add_argument("--sets", type=int, default=10_000)
    a.add_argument("--bins", type=int, default=36)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_analyze_phases)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"setflow {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OffParseError, FileNotFoundError, CheckpointError) as exc:
        print(f"setflow {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"setflow {args.command}: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
