"""Command-line pipeline: fit, extract, eval, slice, ablate.

Every command echoes its resolved configuration into the output
directory as a flat key=value file (``run.cfg``); passing the same file
back through ``--config`` reproduces the run.  Flags win over config
file entries.  Exit codes: 0 success, 2 usage, 3 validation, 4 runtime.
"""

from __future__ import annotations

import argparse
import csv
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cloud import PointCloud, load_point_cloud, normalize
from .errors import ConfigError, ParseError, SdfitError
from .figures import save_ablation_figure, save_history_figure, save_slice_figure
from .losses import (BASELINES, DISPLACEMENTS, METRICS, PROJECTION_GRADIENTS,
                     TARGETS, WEIGHT_MODES, LossConfig)
from .metrics import (evaluate_against_points, evaluate_reconstruction,
                      slice_field, write_report, write_report_csv, write_slice_csv,
                      write_slice_image)
from .model import ArchSpec, SdfNetwork, load_network
from .shapes import sample_surface, shape_from_name
from .surface import GridSpec, export_mesh, field_of, import_mesh, marching_cubes
from .training import TrainConfig, fit

# Candidate grids mirrored from the ablation protocol.
DEFAULT_ALPHA_GRID = (0.0, 0.001, 0.01, 0.1, 1.0)
DEFAULT_DELTA_GRID = (0.0, 1.0, 10.0, 100.0)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_RUNTIME = 4


class UsageError(SdfitError):
    pass


@dataclass
class RunConfig:
    """Flat record of one command's knobs; serializes to key=value."""

    command: str = ""
    input: str = ""          # file path; empty when a shape is used
    shape: str = ""          # sphere | box | torus; empty when a file is used
    shape_size: float = 1.0
    points: int = 5000
    seed: int = 0
    out: str = ""
    # architecture
    width: int = 256
    depth: int = 8
    skip_layer: int = 4
    activation: str = "softplus"
    sharpness: float = 100.0
    geometric_init: bool = True
    init_radius: float = 0.5
    # training
    iterations: int = 5000
    batch_size: int = 1000
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    checkpoint_every: int = 0
    log_every: int = 100
    cosine_lr_decay: bool = False
    independent_queries: bool = False
    # loss
    baseline: str = "neural-pull"
    alpha: float = 0.01
    delta: float = 10.0
    weight_mode: str = "predicted-distance"
    metric: str = "cosine"
    target: str = "projection"
    projection_gradient: str = "through"
    displacement: str = "signed"
    auto_balance: bool = False
    eikonal_weight: float = 0.1
    # extraction / evaluation
    grid_res: int = 128
    grid_iso: float = 0.0
    eval_samples: int = 30000
    # slice
    slice_axis: str = "z"
    slice_offset: float = 0.0
    slice_res: int = 256
    # ablation grids (comma lists; empty = single value from the knobs above)
    grid_alphas: str = ""
    grid_deltas: str = ""
    grid_weight_modes: str = ""
    grid_metrics: str = ""
    grid_targets: str = ""
    # normalization transform (echoed by fit for downstream commands)
    center: tuple = (0.0, 0.0, 0.0)
    scale: float = 1.0

    def arch(self) -> ArchSpec:
        return ArchSpec(depth=self.depth, width=self.width, skip_layer=self.skip_layer,
                        activation=self.activation, sharpness=self.sharpness,
                        geometric_init=self.geometric_init, init_radius=self.init_radius)

    def loss_config(self) -> LossConfig:
        return LossConfig(baseline=self.baseline, alpha=self.alpha, delta=self.delta,
                          weight_mode=self.weight_mode, metric=self.metric,
                          target=self.target, projection_gradient=self.projection_gradient,
                          displacement=self.displacement, auto_balance=self.auto_balance,
                          eikonal_weight=self.eikonal_weight)

    def train_config(self) -> TrainConfig:
        return TrainConfig(iterations=self.iterations, batch_size=self.batch_size,
                           learning_rate=self.learning_rate, beta1=self.beta1,
                           beta2=self.beta2, adam_epsilon=self.adam_epsilon,
                           seed=self.seed, checkpoint_every=self.checkpoint_every,
                           log_every=self.log_every, cosine_lr_decay=self.cosine_lr_decay,
                           independent_queries=self.independent_queries,
                           loss=self.loss_config())

    def grid(self) -> GridSpec:
        return GridSpec(resolution=(self.grid_res,) * 3, iso=self.grid_iso)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            for key, value in vars(self).items():
                if isinstance(value, tuple):
                    value = ",".join(repr(float(v)) for v in value)
                fh.write(f"{key}={value}\n")

    @staticmethod
    def read(path) -> dict:
        values = {}
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ParseError(f"{path}:{lineno}: expected key=value")
                key, _, raw = line.partition("=")
                values[key.strip()] = raw.strip()
        return values


_BOOL_KEYS = {"geometric_init", "cosine_lr_decay", "independent_queries", "auto_balance"}


def _coerce(key: str, raw: str):
    proto = RunConfig()
    if not hasattr(proto, key):
        raise ConfigError(f"unknown config key {key!r}")
    current = getattr(proto, key)
    if key in _BOOL_KEYS:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key} must be a boolean, got {raw!r}")
    if isinstance(current, int) and not isinstance(current, bool):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, tuple):
        return tuple(float(x) for x in raw.split(","))
    return raw


def build_run_config(args, command: str) -> RunConfig:
    """Defaults <- config file <- explicit flags."""
    cfg = RunConfig()
    if getattr(args, "config", None):
        for key, raw in RunConfig.read(args.config).items():
            if key == "command":
                continue
            setattr(cfg, key, _coerce(key, raw))
    for key in vars(RunConfig()):
        if key == "command":
            continue
        flag = getattr(args, key, None)
        if flag is not None:
            setattr(cfg, key, flag)
    cfg.command = command
    return cfg


def _resolve_cloud(cfg: RunConfig) -> tuple[PointCloud, object]:
    """Load or sample the input, normalized; returns (cloud, shape|None)."""
    if cfg.input and cfg.shape:
        raise UsageError("exactly one input source: --input or --shape")
    if cfg.input:
        raw = load_point_cloud(cfg.input)
        shape = None
    elif cfg.shape:
        shape = shape_from_name(cfg.shape, cfg.shape_size)
        raw = sample_surface(shape, cfg.points, seed=cfg.seed)
    else:
        raise UsageError("an input source is required: --input or --shape")
    pc = normalize(raw)
    cfg.center = tuple(float(c) for c in pc.center)
    cfg.scale = float(pc.scale)
    return pc, shape


def _require_out(cfg: RunConfig) -> Path:
    if not cfg.out:
        raise UsageError("--out is required")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_checkpoint_with_transform(path) -> tuple[SdfNetwork, np.ndarray, float]:
    net = load_network(path)
    cfg_path = Path(path).parent / "run.cfg"
    center, scale = np.zeros(3), 1.0
    if cfg_path.exists():
        stored = RunConfig.read(cfg_path)
        if "center" in stored:
            center = np.array([float(x) for x in stored["center"].split(",")])
        if "scale" in stored:
            scale = float(stored["scale"])
    return net, center, scale


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_fit(args) -> int:
    cfg = build_run_config(args, "fit")
    out = _require_out(cfg)
    pc, _ = _resolve_cloud(cfg)
    cfg.write(out / "run.cfg")
    result = fit(pc, cfg.train_config(), arch=cfg.arch(), out_dir=out)
    save_history_figure(result.history, out / "history.png")
    last = result.history.records[-1]
    print(f"fit: {cfg.iterations} steps, baseline {last[1]:.3e}, "
          f"alignment {last[2]:.3e}, probe consistency {last[4]:.3e}")
    print(f"fit: artifacts in {out}")
    return EXIT_OK


def cmd_extract(args) -> int:
    cfg = build_run_config(args, "extract")
    if not args.checkpoint:
        raise UsageError("--checkpoint is required")
    net, center, scale = _load_checkpoint_with_transform(args.checkpoint)
    if not args.out:
        raise UsageError("--out is required")
    out_path = Path(args.out)
    if out_path.parent != Path("."):
        out_path.parent.mkdir(parents=True, exist_ok=True)
    grid = cfg.grid()
    mesh = marching_cubes(field_of(net), grid)
    if mesh.is_empty():
        print("extract: field has no crossing at this iso value; empty mesh",
              file=sys.stderr)
    if not args.raw:
        mesh = mesh.transformed(lambda p: p / scale + center)
    export_mesh(mesh, out_path)
    cfg.out = str(out_path.parent)
    cfg.write(out_path.with_suffix(out_path.suffix + ".cfg"))
    print(f"extract: {len(mesh.vertices)} vertices, {len(mesh.faces)} faces -> {out_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = build_run_config(args, "eval")
    out = _require_out(cfg)
    if bool(args.mesh) == bool(args.checkpoint):
        raise UsageError("exactly one of --mesh or --checkpoint is required")
    if args.mesh:
        mesh = import_mesh(args.mesh)
    else:
        net, center, scale = _load_checkpoint_with_transform(args.checkpoint)
        mesh = marching_cubes(field_of(net), cfg.grid())
        if mesh.is_empty():
            raise ConfigError("extracted mesh is empty; nothing to evaluate")
        mesh = mesh.transformed(lambda p: p / scale + center)
    if bool(args.gt_mesh) == bool(cfg.shape):
        raise UsageError("exactly one ground truth: --gt-mesh or --shape")
    if args.gt_mesh:
        report = evaluate_reconstruction(mesh, import_mesh(args.gt_mesh),
                                         cfg.eval_samples, cfg.seed)
    else:
        shape = shape_from_name(cfg.shape, cfg.shape_size)
        gt = sample_surface(shape, cfg.eval_samples, seed=cfg.seed)
        report = evaluate_against_points(mesh, gt.positions, gt.normals,
                                         cfg.eval_samples, cfg.seed)
    write_report(report, out / "report.txt")
    write_report_csv(report, out / "report.csv")
    cfg.write(out / "run.cfg")
    print(f"eval: cd {report.cd:.6f}, nc {report.nc:.4f} -> {out}/report.txt")
    return EXIT_OK


def cmd_slice(args) -> int:
    cfg = build_run_config(args, "slice")
    out = _require_out(cfg)
    if not args.checkpoint:
        raise UsageError("--checkpoint is required")
    net, _, _ = _load_checkpoint_with_transform(args.checkpoint)
    sl = slice_field(net, axis=cfg.slice_axis, offset=cfg.slice_offset,
                     resolution=cfg.slice_res)
    write_slice_csv(sl, out / "slice.csv")
    write_slice_image(sl, out / "slice.png")
    save_slice_figure(sl, out / "slice_contours.png")
    cfg.write(out / "run.cfg")
    print(f"slice: {cfg.slice_axis}={cfg.slice_offset:g} res {cfg.slice_res} -> "
          f"{out}/slice.csv, slice.png, slice_contours.png")
    return EXIT_OK


# --- ablation grid ---------------------------------------------------------

@dataclass
class AblationVariant:
    label: str
    alpha: float
    delta: float
    weight_mode: str
    metric: str
    target: str


_WEIGHT_TAGS = {"predicted-distance": "pred", "euclidean-distance": "eucl", "none": "none"}
_METRIC_TAGS = {"cosine": "cos", "mse": "mse", "mse-normalized": "msen"}
_TARGET_TAGS = {"projection": "proj", "fixed-nearest-surface-point": "fixed"}


def _variant_label(alpha, delta, weight_mode, metric, target) -> str:
    return (f"a{alpha:g}_d{delta:g}_w{_WEIGHT_TAGS[weight_mode]}"
            f"_m{_METRIC_TAGS[metric]}_t{_TARGET_TAGS[target]}")


def _parse_grid(raw: str | None, default_single: float, full: tuple) -> list[float]:
    if raw is None:
        return [default_single]
    if raw == "full":
        return list(full)
    return [float(x) for x in raw.split(",")]


def _parse_choices(raw: str | None, default_single: str, allowed) -> list[str]:
    if raw is None:
        return [default_single]
    vals = [x.strip() for x in raw.split(",")]
    for v in vals:
        if v not in allowed:
            raise ConfigError(f"invalid grid value {v!r}; allowed: {allowed}")
    return vals


def run_variant(payload: tuple) -> dict:
    """Train, extract, and evaluate one ablation cell (worker-safe)."""
    cfg_vars, variant, out_dir = payload
    cfg = RunConfig(**cfg_vars)
    cfg.command = "fit"
    cfg.alpha = variant.alpha
    cfg.delta = variant.delta
    cfg.weight_mode = variant.weight_mode
    cfg.metric = variant.metric
    cfg.target = variant.target
    cfg.out = str(out_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pc, shape = _resolve_cloud(cfg)
    cfg.write(out / "run.cfg")
    result = fit(pc, cfg.train_config(), arch=cfg.arch(), out_dir=out)
    save_history_figure(result.history, out / "history.png")
    mesh = marching_cubes(field_of(result.net), cfg.grid())
    if mesh.is_empty():
        raise ConfigError(f"variant {variant.label}: empty extraction")
    mesh = mesh.transformed(pc.denormalize)
    if shape is not None:
        gt = sample_surface(shape, cfg.eval_samples, seed=cfg.seed + 1)
        report = evaluate_against_points(mesh, gt.positions, gt.normals,
                                         cfg.eval_samples, cfg.seed)
    else:
        raw = load_point_cloud(cfg.input)
        if raw.normals is None:
            raise ConfigError("ablate with --input needs normals for NC")
        report = evaluate_against_points(mesh, raw.positions, raw.normals,
                                         cfg.eval_samples, cfg.seed)
    mean_consistency = result.history.records[-1][4]
    return {"variant": variant.label, "cd": repr(report.cd), "nc": repr(report.nc),
            "mean_consistency": repr(mean_consistency),
            "alpha": variant.alpha, "delta": variant.delta,
            "weight_mode": variant.weight_mode, "metric": variant.metric,
            "target": variant.target}


ABLATION_COLUMNS = ["variant", "cd", "nc", "mean_consistency", "alpha", "delta",
                    "weight_mode", "metric", "target"]


def cmd_ablate(args) -> int:
    cfg = build_run_config(args, "ablate")
    out = _require_out(cfg)
    alphas = _parse_grid(cfg.grid_alphas or None, cfg.alpha, DEFAULT_ALPHA_GRID)
    deltas = _parse_grid(cfg.grid_deltas or None, cfg.delta, DEFAULT_DELTA_GRID)
    weight_modes = _parse_choices(cfg.grid_weight_modes or None, cfg.weight_mode,
                                  WEIGHT_MODES)
    metrics = _parse_choices(cfg.grid_metrics or None, cfg.metric, METRICS)
    targets = _parse_choices(cfg.grid_targets or None, cfg.target, TARGETS)
    cfg.grid_alphas = ",".join(str(a) for a in alphas)
    cfg.grid_deltas = ",".join(str(d) for d in deltas)
    cfg.grid_weight_modes = ",".join(weight_modes)
    cfg.grid_metrics = ",".join(metrics)
    cfg.grid_targets = ",".join(targets)
    variants = [
        AblationVariant(_variant_label(a, d, w, m, t), a, d, w, m, t)
        for a in alphas for d in deltas for w in weight_modes
        for m in metrics for t in targets
    ]
    cfg.write(out / "run.cfg")
    payloads = [(dict(vars(cfg)), v, out / v.label) for v in variants]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(run_variant, payloads))
    else:
        rows = [run_variant(p) for p in payloads]
    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=ABLATION_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    save_ablation_figure(rows, out / "ablation.png")
    print(f"ablate: {len(rows)} variants -> {out}/ablation.csv, ablation.png")
    for row in rows:
        print(f"  {row['variant']}: cd {float(row['cd']):.6f} nc {float(row['nc']):.4f}"
              f" consistency {float(row['mean_consistency']):.3e}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file; flags win")
    p.add_argument("--seed", type=int, help="master seed for all randomness")
    p.add_argument("--out", help="output directory")


def _add_input(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", help="point cloud file (.xyz or ascii .ply)")
    p.add_argument("--shape", help="analytic input: sphere | box | torus")
    p.add_argument("--shape-size", dest="shape_size", type=float)
    p.add_argument("--points", type=int, help="surface samples for --shape")


def _add_train(p: argparse.ArgumentParser) -> None:
    p.add_argument("--iters", dest="iterations", type=int)
    p.add_argument("--batch", dest="batch_size", type=int)
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.add_argument("--log-every", dest="log_every", type=int)
    p.add_argument("--cosine-lr", dest="cosine_lr_decay", action="store_const", const=True)
    p.add_argument("--independent-queries", dest="independent_queries",
                   action="store_const", const=True)
    p.add_argument("--width", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--skip-layer", dest="skip_layer", type=int)
    p.add_argument("--activation", choices=("softplus", "sine"))
    p.add_argument("--sharpness", type=float)
    p.add_argument("--no-geometric-init", dest="geometric_init",
                   action="store_const", const=False)
    p.add_argument("--init-radius", dest="init_radius", type=float)


def _add_loss(p: argparse.ArgumentParser) -> None:
    p.add_argument("--baseline", choices=BASELINES)
    p.add_argument("--alpha", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--weight-mode", dest="weight_mode", choices=WEIGHT_MODES)
    p.add_argument("--metric", choices=METRICS)
    p.add_argument("--target", choices=TARGETS)
    p.add_argument("--proj-grad", dest="projection_gradient", choices=PROJECTION_GRADIENTS)
    p.add_argument("--displacement", choices=DISPLACEMENTS)
    p.add_argument("--auto-balance", dest="auto_balance", action="store_const", const=True)
    p.add_argument("--eikonal-weight", dest="eikonal_weight", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sdfit",
        description="Fit neural signed distance fields to point clouds, "
                    "extract and evaluate meshes.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="train a field on a point cloud")
    _add_common(p); _add_input(p); _add_train(p); _add_loss(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("extract", help="marching cubes mesh from a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", help="network checkpoint (.npz)")
    p.add_argument("--res", dest="grid_res", type=int)
    p.add_argument("--iso", dest="grid_iso", type=float)
    p.add_argument("--raw", action="store_true",
                   help="keep normalized coordinates (skip de-normalization)")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("eval", help="chamfer + normal consistency vs ground truth")
    _add_common(p)
    p.add_argument("--mesh", help="reconstructed mesh file")
    p.add_argument("--checkpoint", help="checkpoint to extract and evaluate")
    p.add_argument("--gt-mesh", dest="gt_mesh", help="ground-truth mesh file")
    p.add_argument("--shape", help="analytic ground truth: sphere | box | torus")
    p.add_argument("--shape-size", dest="shape_size", type=float)
    p.add_argument("--res", dest="grid_res", type=int)
    p.add_argument("--samples", dest="eval_samples", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("slice", help="cross-section CSV + images from a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", help="network checkpoint (.npz)")
    p.add_argument("--axis", dest="slice_axis", choices=("x", "y", "z"))
    p.add_argument("--offset", dest="slice_offset", type=float)
    p.add_argument("--res", dest="slice_res", type=int)
    p.set_defaults(func=cmd_slice)

    p = sub.add_parser("ablate", help="grid of loss variants -> CSV + figure")
    _add_common(p); _add_input(p); _add_train(p); _add_loss(p)
    p.add_argument("--alphas", dest="grid_alphas", help="comma list or 'full' "
                   f"(full = {','.join(str(a) for a in DEFAULT_ALPHA_GRID)})")
    p.add_argument("--deltas", dest="grid_deltas", help="comma list or 'full' "
                   f"(full = {','.join(str(d) for d in DEFAULT_DELTA_GRID)})")
    p.add_argument("--weight-modes", dest="grid_weight_modes", help="comma list")
    p.add_argument("--metrics", dest="grid_metrics", help="comma list")
    p.add_argument("--targets", dest="grid_targets", help="comma list")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--eval-samples", dest="eval_samples", type=int)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ParseError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except SdfitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
