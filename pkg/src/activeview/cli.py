"""Command line entry point: run scenarios, generate synthetic scenes, compare strategies.

Exit codes are 0 on success, 2 for bad input (missing files, invalid
configuration) and 3 when the pipeline itself fails.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import synth
from .attention import OracleProvider, RemoteProvider
from .errors import ActiveViewError, DomainError, ParseError
from .pipeline import STRATEGIES, ActionHints, AttentionConfig, PipelineConfig, run, selected_visibility, write_run
from .scene import Aabb, load_cloud
from .scoring import ScoringWeights, VisibilityParams

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_PIPELINE = 3
ENDPOINT_ENV = "ACTIVEVIEW_ENDPOINT"


class InputError(ActiveViewError):
    """Bad scenario file, configuration or command line value."""


@dataclass(frozen=True)
class GroundTruthSpec:
    target: tuple
    euler_deg: tuple = (0.0, 0.0, 0.0)
    gripper: int = 0
    collision: int = 0
    target_point_count: int = 0


@dataclass(frozen=True, eq=False)
class Scenario:
    id: str
    scene_path: str
    config: PipelineConfig
    seed: int = 0
    ground_truth: GroundTruthSpec = None
    hints: ActionHints = field(default_factory=ActionHints)
    prng: str = synth.PRNG


@dataclass
class RunReport:
    scenario_id: str
    strategy: str
    seed: int
    prng: str
    translation: list
    coarse_error: float = None
    fine_error: float = None
    localization_error: float = None
    voxel_size: float = None
    visibility_fraction: float = None
    heatmap_flags: dict = field(default_factory=dict)
    provider: str = "oracle"
    fell_back: bool = False
    timings: dict = field(default_factory=dict)

    def to_dict(self, with_timings=True):
        d = dataclasses.asdict(self)
        if not with_timings:
            d.pop("timings")
        return d


# --------------------------------------------------------------------------
# Scenario parsing
# --------------------------------------------------------------------------

_SCALARS = {
    "crop_to_workspace": bool, "splat_radius": int, "subdivision_level": int,
    "candidate_radius_scale": float, "min_elevation": float, "k": int, "zoom_z": float,
    "fov_alpha": float, "fine_half_extent": float, "sampling": str, "distance_mode": str,
    "diversity_mode": str, "zoom_mode": str, "strategy": str, "instruction": str,
}
_TUPLES = {"coarse_image_size": int, "fine_image_size": int, "grid_resolution": int,
           "fine_grid_resolution": int}
_SECTIONS = {"visibility", "weights", "attention"}


def _cast(key, value, kind):
    if kind is bool:
        if not isinstance(value, bool):
            raise InputError(f"config.{key} must be a boolean, got {value!r}")
        return value
    if kind is str:
        if not isinstance(value, str):
            raise InputError(f"config.{key} must be a string, got {value!r}")
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InputError(f"config.{key} must be a number, got {value!r}")
    if kind is int and value != int(value):
        raise InputError(f"config.{key} must be an integer, got {value!r}")
    return kind(value)


def parse_config(table, seed=0):
    """Build a ``PipelineConfig`` from a scenario ``[config]`` table."""
    table = dict(table)
    unknown = set(table) - set(_SCALARS) - set(_TUPLES) - _SECTIONS - {"workspace_min", "workspace_max"}
    if unknown:
        raise InputError(f"unknown config keys: {sorted(unknown)}")
    kw = {"seed": seed}
    if ("workspace_min" in table) != ("workspace_max" in table):
        raise InputError("workspace_min and workspace_max must be given together")
    try:
        if "workspace_min" in table:
            kw["workspace"] = Aabb(table["workspace_min"], table["workspace_max"])
        for key, kind in _SCALARS.items():
            if key in table:
                kw[key] = _cast(key, table[key], kind)
        for key, kind in _TUPLES.items():
            if key in table:
                vals = table[key]
                if not isinstance(vals, list):
                    raise InputError(f"config.{key} must be a list")
                kw[key] = tuple(_cast(key, v, kind) for v in vals)
        if "visibility" in table:
            kw["visibility"] = VisibilityParams(**table["visibility"])
        if "weights" in table:
            w = table["weights"]
            kw["weights"] = ScoringWeights(*w) if isinstance(w, list) else ScoringWeights(**w)
        if "attention" in table:
            kw["attention"] = AttentionConfig(**table["attention"])
        return PipelineConfig(**kw)
    except TypeError as exc:
        raise InputError(f"invalid config: {exc}") from None
    except (DomainError, ValueError) as exc:
        raise InputError(f"invalid config: {exc}") from None


def load_scenario(path, seed=None):
    """Read a TOML (or ``.json``) scenario; relative scene paths resolve against its directory."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise InputError(f"cannot read scenario {path}: {exc.strerror}") from None
    try:
        if path.endswith(".json"):
            doc = json.loads(raw)
        else:
            doc = tomllib.loads(raw.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise InputError(f"cannot parse scenario {path}: {exc}") from None

    if "scene" not in doc:
        raise InputError(f"scenario {path} has no scene entry")
    scene_path = os.path.join(os.path.dirname(os.path.abspath(path)), doc["scene"])
    if not os.path.exists(scene_path):
        raise InputError(f"scene file not found: {scene_path}")
    run_seed = int(doc.get("seed", 0)) if seed is None else int(seed)
    config = parse_config(doc.get("config", {}), run_seed)

    gt = None
    if "ground_truth" in doc:
        g = doc["ground_truth"]
        try:
            gt = GroundTruthSpec(tuple(float(x) for x in g["target"]),
                                 tuple(float(x) for x in g.get("euler_deg", (0, 0, 0))),
                                 int(g.get("gripper", 0)), int(g.get("collision", 0)),
                                 int(g.get("target_point_count", 0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"invalid ground_truth: {exc}") from None
        if len(gt.target) != 3:
            raise InputError("ground_truth.target must have three entries")
    hints = ActionHints()
    if gt is not None:
        hints = ActionHints(gt.euler_deg, gt.gripper, gt.collision)
    if "hints" in doc:
        h = doc["hints"]
        hints = ActionHints(tuple(h.get("euler_deg", (0, 0, 0))), int(h.get("gripper", 0)),
                            int(h.get("collision", 0)))
    scenario_id = str(doc.get("id", os.path.splitext(os.path.basename(path))[0]))
    return Scenario(scenario_id, scene_path, config, run_seed, gt, hints, str(doc.get("prng", synth.PRNG)))


# --------------------------------------------------------------------------
# Running
# --------------------------------------------------------------------------

def make_provider(scenario, cloud, provider=None):
    """Oracle or remote heatmap provider as configured (``provider`` overrides)."""
    att = scenario.config.attention
    kind = provider or att.provider
    oracle = None
    if scenario.ground_truth is not None:
        pts = None
        if att.occlusion_aware and scenario.ground_truth.target_point_count:
            pts = cloud.positions[: scenario.ground_truth.target_point_count]
        oracle = OracleProvider(scenario.ground_truth.target, att.sigma_px, pts)
    if kind == "oracle":
        if oracle is None:
            raise InputError("the oracle provider needs a ground_truth target")
        return oracle
    if kind == "remote":
        endpoint = os.environ.get(ENDPOINT_ENV) or att.endpoint
        if not endpoint:
            raise InputError(f"remote provider needs attention.endpoint or {ENDPOINT_ENV}")
        fallback = oracle if att.fallback_to_oracle else None
        return RemoteProvider(endpoint, att.timeout_ms / 1000.0, fallback)
    raise InputError(f"unknown provider {kind!r}")


def run_scenario(scenario, out_dir=None, provider=None, strategy=None, artifacts=True):
    """Run the pipeline on a scenario and return ``(RunReport, StageTrace)``."""
    try:
        cloud = load_cloud(scenario.scene_path)
    except (OSError, ParseError, ActiveViewError) as exc:
        raise InputError(f"cannot load scene {scenario.scene_path}: {exc}") from None
    config = scenario.config
    if strategy is not None:
        config = dataclasses.replace(config, strategy=strategy)
    prov = make_provider(scenario, cloud, provider)
    trace = run(cloud, config, prov, scenario.hints)

    translation = trace.action.translation
    voxel = float(np.max(trace.coarse.volume.voxel_size))
    report = RunReport(scenario.id, config.strategy, scenario.seed, scenario.prng,
                       [float(x) for x in translation], voxel_size=voxel,
                       provider=provider or config.attention.provider,
                       fell_back=bool(getattr(prov, "fell_back", False)),
                       timings=dict(trace.timings))
    report.heatmap_flags = {"coarse": [h.flag for h in trace.coarse.heatmaps]}
    if trace.fine is not None:
        report.heatmap_flags["fine"] = [h.flag for h in trace.fine.heatmaps]
    report.visibility_fraction = float(selected_visibility(trace, cloud))
    if scenario.ground_truth is not None:
        gt = np.asarray(scenario.ground_truth.target)
        report.coarse_error = float(np.linalg.norm(trace.coarse.focus - gt))
        if trace.fine is not None:
            report.fine_error = float(np.linalg.norm(trace.fine.translation - gt))
        report.localization_error = float(np.linalg.norm(translation - gt))

    if out_dir is not None:
        write_run(trace, out_dir, images=artifacts, volumes=artifacts)
        with open(os.path.join(out_dir, "report.json"), "w") as fh:
            json.dump(report.to_dict(with_timings=False), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return report, trace


CSV_FIELDS = ("strategy", "trial", "seed", "localization_error", "coarse_error", "fine_error",
              "visibility_fraction")


def compare_strategies(scenario, strategies, trials=1, provider=None):
    """Per-strategy rows and a summary; only ``random`` varies across trials."""
    if scenario.ground_truth is None:
        raise InputError("compare needs a scenario with ground_truth")
    for s in strategies:
        if s not in STRATEGIES:
            raise InputError(f"unknown strategy {s!r}; expected some of {STRATEGIES}")
    if trials < 1:
        raise InputError(f"trials must be positive, got {trials}")
    rows = []
    for s in strategies:
        cached = None
        for t in range(trials):
            seed = scenario.seed + t
            if s == "random" or cached is None:
                sc = dataclasses.replace(scenario, seed=seed,
                                         config=dataclasses.replace(scenario.config, seed=seed))
                cached, _ = run_scenario(sc, provider=provider, strategy=s)
            rows.append({"strategy": s, "trial": t, "seed": seed,
                         **{k: getattr(cached, k) for k in CSV_FIELDS[3:]}})
    summary = {}
    for s in strategies:
        errs = [r["localization_error"] for r in rows if r["strategy"] == s]
        vis = [r["visibility_fraction"] for r in rows if r["strategy"] == s]
        summary[s] = {"trials": len(errs), "mean_error": float(np.mean(errs)),
                      "median_error": float(np.median(errs)), "max_error": float(np.max(errs)),
                      "mean_visibility": float(np.mean(vis))}
    return rows, summary


def rows_to_csv(rows):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: ("" if r[k] is None else (repr(r[k]) if isinstance(r[k], float) else r[k]))
                         for k in CSV_FIELDS})
    return buf.getvalue()


# --------------------------------------------------------------------------
# argparse glue
# --------------------------------------------------------------------------

def _parse_params(items):
    params = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise InputError(f"--param expects key=value, got {item!r}")
        try:
            params[key] = json.loads(value)
        except ValueError:
            params[key] = value
    return params


def cmd_run(args):
    scenario = load_scenario(args.scenario, args.seed)
    report, _ = run_scenario(scenario, args.out, args.provider, args.strategy)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))


def cmd_synth(args):
    scene = synth.generate(args.kind, args.seed, **_parse_params(args.param))
    path = synth.write_scene(scene, args.out)
    print(path)


def cmd_compare(args):
    scenario = load_scenario(args.scenario, args.seed)
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    rows, summary = compare_strategies(scenario, strategies, args.trials, args.provider)
    text = rows_to_csv(rows)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "compare.csv"), "w") as fh:
            fh.write(text)
        with open(os.path.join(args.out, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    sys.stdout.write(text)
    print(json.dumps(summary, indent=2, sort_keys=True))


def build_parser():
    parser = argparse.ArgumentParser(prog="activeview", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the pipeline on a scenario")
    p.add_argument("scenario")
    p.add_argument("--out", help="run directory for trace, images and volumes")
    p.add_argument("--provider", choices=("oracle", "remote"))
    p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("synth", help="write a seeded synthetic scene and scenario")
    p.add_argument("kind", choices=synth.KINDS)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--param", action="append", metavar="KEY=VALUE", help="generator parameter")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("compare", help="compare view-selection strategies on a scenario")
    p.add_argument("scenario")
    p.add_argument("--strategies", default=",".join(STRATEGIES))
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--provider", choices=("oracle", "remote"))
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="directory for compare.csv and summary.json")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        args.func(args)
    except (InputError, DomainError, ParseError) as exc:
        print(f"activeview: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ActiveViewError as exc:
        print(f"activeview: pipeline error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    except OSError as exc:
        print(f"activeview: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
