"""Command-line pipeline: one subcommand per stage, one workspace directory per stage.

Every stage writes ``<stage>/stage.json`` holding the sha256 of each file it
produced and of each predecessor's ``stage.json``, so the manifests form a
hash chain that later stages (and ``report``) verify.

Exit codes: 0 success, 2 usage or configuration mismatch, 3 missing
artifact, 4 corrupt artifact.
"""

from __future__ import annotations

import argparse
import logging
import shutil
import sys
from pathlib import Path

from . import __version__
from .distill import (DEFAULT_FRACTION, DEFAULT_STEPS, MissingSurrogateError, SurrogateSet, distill_all, stitch,
                      subsample_data)
from .io import ArtifactError, CorruptArtifactError, MissingArtifactError, dump_json, load_json, sha256_file
from .profile import (LatencyProfile, MissingLatencyError, ProfileError, global_latency, load_profile, parse_profile,
                      save_profile, simulate_profile, speedup)
from .saliency import ablation_sensitivity, fixed_batch, rank_blocks, saliency_report, select_frozen
from .report import pareto_svg
from .search import (Observation, archive_json, knee_select, least_latency_select, make_setup, mobo_run,
                     run_log_csv)
from .toynet.config import ALTERNATIVES, PRESETS, BlockKind, ConfigError, NetworkConfig
from .toynet.data import DatasetSpec, generate_dataset, load_dataset, save_dataset
from .toynet.metrics import batch_psnr
from .toynet.network import Network, build_network
from .toynet.train import finetune, load_network, save_network, train_base, validation_psnr


EXIT_OK, EXIT_USAGE, EXIT_MISSING, EXIT_CORRUPT = 0, 2, 3, 4

STAGES = ("data", "base", "saliency", "profile", "distill", "search", "finetune", "report")
DEPENDS = {
    "data": (),
    "base": ("data",),
    "saliency": ("data", "base"),
    "profile": ("saliency",),
    "distill": ("data", "base", "saliency"),
    "search": ("data", "base", "saliency", "profile", "distill"),
    "finetune": ("data", "base", "saliency", "distill", "search"),
    "report": ("data", "base", "saliency", "profile", "distill", "search", "finetune"),
}
ARTIFACT = {
    "data": ("dataset", "gen-data"),
    "base": ("base network", "train-base"),
    "saliency": ("saliency report", "saliency"),
    "profile": ("latency profile", "profile"),
    "distill": ("SurrogateSet", "distill"),
    "search": ("search archive", "search"),
    "finetune": ("fine-tuned network", "finetune"),
}
MANIFEST = "stage.json"


class UsageError(Exception):
    pass


# ----------------------------------------------------------------- workspace
class Workspace:
    def __init__(self, root: Path):
        self.root = Path(root)

    def stage_dir(self, stage: str) -> Path:
        return self.root / stage

    def manifest_path(self, stage: str) -> Path:
        return self.stage_dir(stage) / MANIFEST

    def fresh(self, stage: str) -> Path:
        d = self.stage_dir(stage)
        if d.exists():
            shutil.rmtree(d)
        d.mkdir(parents=True)
        return d

    def run_config(self) -> dict:
        path = self.root / "run.json"
        if not path.exists():
            raise MissingArtifactError(f"no run configuration at {path}; run `blocksurgeon gen-data` first")
        return load_json(path)

    def require(self, stage: str) -> dict:
        """Manifest of ``stage`` after checking its files and its inputs' hashes."""
        path = self.manifest_path(stage)
        if not path.exists():
            what, cmd = ARTIFACT[stage]
            raise MissingArtifactError(f"missing {what} ({self.stage_dir(stage)}); run `blocksurgeon {cmd}` first")
        manifest = load_json(path)
        d = self.stage_dir(stage)
        try:
            outputs, inputs = manifest["outputs"], manifest["inputs"]
        except (KeyError, TypeError):
            raise CorruptArtifactError(f"malformed stage manifest {path}") from None
        for rel, digest in outputs.items():
            f = d / rel
            if not f.exists():
                raise CorruptArtifactError(f"{f} is listed in {path} but missing")
            if sha256_file(f) != digest:
                raise CorruptArtifactError(f"{f} does not match the hash recorded in {path}")
        for dep, digest in inputs.items():
            dep_path = self.manifest_path(dep)
            if not dep_path.exists() or sha256_file(dep_path) != digest:
                raise CorruptArtifactError(f"stage {stage!r} was built from a different {dep!r} stage; rerun it")
        return manifest

    def seal(self, stage: str, params: dict) -> None:
        d = self.stage_dir(stage)
        outputs = {p.relative_to(d).as_posix(): sha256_file(p)
                   for p in sorted(d.rglob("*")) if p.is_file() and p.name != MANIFEST}
        inputs = {dep: sha256_file(self.manifest_path(dep)) for dep in DEPENDS[stage]}
        dump_json(self.manifest_path(stage), {"stage": stage, "version": __version__, "params": params,
                                              "inputs": inputs, "outputs": outputs})


# ------------------------------------------------------------------- helpers
def _run_settings(ws: Workspace, args) -> dict:
    cfg = ws.run_config()
    for key in ("preset", "seed"):
        given = getattr(args, key, None)
        if given is not None and given != cfg[key]:
            raise UsageError(f"workspace was created with --{key} {cfg[key]!r}, got {given!r}")
    return cfg


def _parse_kinds(text: str | None) -> tuple[BlockKind, ...]:
    if not text:
        return ALTERNATIVES
    try:
        kinds = tuple(BlockKind.parse(t.strip()) for t in text.split(",") if t.strip())
    except ConfigError as e:
        raise UsageError(str(e)) from None
    kinds = tuple(k for k in dict.fromkeys(kinds) if k is not BlockKind.BASE)
    if not kinds:
        raise UsageError("--kinds must name at least one alternative")
    return tuple(sorted(kinds, key=lambda k: k.index))


def _dataset(ws: Workspace):
    ws.require("data")
    ds = load_dataset(ws.stage_dir("data"))
    return ds, *ds.split()


def _network(path: Path) -> Network:
    try:
        net, _ = load_network(path)
    except ConfigError as e:
        raise CorruptArtifactError(f"{path}: {e}") from None
    return net


def _teacher(ws: Workspace) -> Network:
    """Base network carrying the frozen-slot decision from the saliency stage."""
    ws.require("base")
    ws.require("saliency")
    net = _network(ws.stage_dir("base") / "network")
    frozen = load_json(ws.stage_dir("saliency") / "ranking.json")["frozen"]
    return Network(net.config.with_frozen(frozen), net.params)


def _load_profile_stage(ws: Workspace) -> LatencyProfile:
    ws.require("profile")
    try:
        return parse_profile(load_json(ws.stage_dir("profile") / "profile.json"))
    except ProfileError as e:
        raise CorruptArtifactError(str(e)) from None


# ------------------------------------------------------------------ commands
def cmd_gen_data(ws: Workspace, args) -> None:
    if args.preset is not None and args.preset not in PRESETS:
        raise UsageError(f"unknown preset {args.preset!r}")
    preset = args.preset or "desk"
    seed = 0 if args.seed is None else args.seed
    spec = DatasetSpec(count=args.count, size=args.size, seed=seed)
    ws.root.mkdir(parents=True, exist_ok=True)
    dump_json(ws.root / "run.json", {"preset": preset, "seed": seed, "dataset": spec.to_dict(), "version": __version__})
    d = ws.fresh("data")
    save_dataset(d, generate_dataset(spec))
    ws.seal("data", {"seed": seed, "spec": spec.to_dict()})
    print(f"dataset: {spec.count} pairs of {spec.size}x{spec.size} -> {d}")


def cmd_train_base(ws: Workspace, args) -> None:
    cfg = _run_settings(ws, args)
    ds, train, val = _dataset(ws)
    net = build_network(PRESETS[cfg["preset"]](), seed=cfg["seed"])
    result = train_base(net, ds, epochs=args.epochs, lr=args.lr, seed=cfg["seed"])
    d = ws.fresh("base")
    blurred = batch_psnr(val.blurred, val.sharp)
    save_network(d / "network", result.network, {"val_psnr": result.val_psnr})
    dump_json(d / "training.json", {"val_psnr": result.val_psnr, "blurred_psnr": blurred,
                                    "epoch_losses": result.epoch_losses})
    ws.seal("base", {"epochs": args.epochs, "lr": args.lr, "seed": cfg["seed"], "preset": cfg["preset"]})
    print(f"base network: validation PSNR {result.val_psnr:.3f} dB (blurred input {blurred:.3f} dB)")


def cmd_saliency(ws: Workspace, args) -> None:
    cfg = _run_settings(ws, args)
    _, train, val = _dataset(ws)
    ws.require("base")
    net = _network(ws.stage_dir("base") / "network")
    report = saliency_report(net, fixed_batch(train, cfg["seed"]))
    ranking = rank_blocks(report)
    try:
        frozen = select_frozen(ranking.consensus, args.freeze)
    except ValueError as e:
        raise UsageError(str(e)) from None
    d = ws.fresh("saliency")
    report.save(d / "report.csv", ranking)
    dump_json(d / "ranking.json", {"per_proxy": ranking.per_proxy, "points": ranking.points,
                                   "consensus": ranking.consensus,
                                   "frozen": [s for s in ranking.consensus if s in frozen]})
    dump_json(d / "ablation.json", ablation_sensitivity(net, val))
    ws.seal("saliency", {"freeze": args.freeze, "seed": cfg["seed"]})
    print(f"consensus ranking: {', '.join(ranking.consensus)}; frozen: {', '.join(sorted(frozen)) or 'none'}")


def _build_profile(ws: Workspace, source: str, seed: int, config: NetworkConfig) -> LatencyProfile:
    if source == "simulate":
        return simulate_profile(config, seed=seed, image_size=load_json(ws.root / "run.json")["dataset"]["size"])
    path = Path(source)
    if not path.exists():
        raise MissingArtifactError(f"profile file {path} not found")
    return load_profile(path, config)


def cmd_profile(ws: Workspace, args) -> None:
    cfg = _run_settings(ws, args)
    teacher = _teacher(ws)
    prof = _build_profile(ws, args.profile, cfg["seed"], teacher.config)
    d = ws.fresh("profile")
    save_profile(d / "profile.json", prof)
    ws.seal("profile", {"source": args.profile, "seed": cfg["seed"]})
    base = global_latency(prof, teacher.config.all_base())
    print(f"profile from {args.profile}: all-base latency {base:.3f} ms")


def cmd_distill(ws: Workspace, args) -> None:
    cfg = _run_settings(ws, args)
    if not 0 < args.fraction <= 1:
        raise UsageError(f"--fraction must lie in (0, 1], got {args.fraction}")
    kinds = _parse_kinds(args.kinds)
    _, train, val = _dataset(ws)
    teacher = _teacher(ws)
    subset = subsample_data(train, args.fraction, cfg["seed"])
    surrogates = distill_all(teacher, subset, kinds, steps=args.steps, master_seed=cfg["seed"],
                             eval_inputs=val.blurred, fraction=args.fraction)
    d = ws.fresh("distill")
    surrogates.save(d / "surrogates")
    ws.seal("distill", {"fraction": args.fraction, "steps": args.steps, "seed": cfg["seed"],
                        "kinds": [k.value for k in kinds]})
    print(f"distilled {len(surrogates)} surrogates from {len(subset.sharp)} training pairs")


def cmd_search(ws: Workspace, args) -> None:
    cfg = _run_settings(ws, args)
    if args.budget < 1:
        raise UsageError("--budget must be positive")
    _, train, val = _dataset(ws)
    teacher = _teacher(ws)
    if not ws.manifest_path("profile").exists():
        cmd_profile(ws, args)
    prof = _load_profile_stage(ws)
    ws.require("distill")
    surrogates = SurrogateSet.load(ws.stage_dir("distill") / "surrogates")
    distilled = {k for _, k in surrogates}
    kinds = _parse_kinds(args.kinds) if args.kinds else tuple(sorted(distilled, key=lambda k: k.index))
    missing = [k.value for k in kinds if k not in distilled]
    if missing:
        raise MissingArtifactError(f"SurrogateSet has no surrogates for kinds {missing}; rerun `blocksurgeon distill`")
    setup = make_setup(teacher, surrogates, prof, val, kinds, alpha_floor=args.penalty_floor)
    result = mobo_run(setup, args.budget, seed=cfg["seed"], pool_size=args.pool)
    d = ws.fresh("search")
    dump_json(d / "archive.json", {**archive_json(setup, result), "latency_base": setup.latency_base})
    (d / "run_log.csv").write_text(run_log_csv(setup, result.log, result.archive))
    ws.seal("search", {"budget": args.budget, "seed": cfg["seed"], "kinds": [k.value for k in kinds],
                       "penalty_floor": args.penalty_floor, "pool": args.pool})
    print(f"search: {len(result.log)} evaluations, {len(result.archive)} Pareto members, "
          f"hypervolume {result.hypervolume():.4f}")


def _search_state(ws: Workspace):
    ws.require("search")
    data = load_json(ws.stage_dir("search") / "archive.json")
    try:
        kinds = [BlockKind.parse(k) for k in data["kinds"]]
        log_obs = [Observation.from_dict(o) for o in data["log"]]
        front = [Observation.from_dict(o) for o in data["archive"]]
    except (KeyError, TypeError, ConfigError) as e:
        raise CorruptArtifactError(f"malformed search archive: {e}") from None
    return data, kinds, log_obs, front


def cmd_finetune(ws: Workspace, args) -> None:
    cfg = _run_settings(ws, args)
    ds, train, val = _dataset(ws)
    teacher = _teacher(ws)
    ws.require("distill")
    surrogates = SurrogateSet.load(ws.stage_dir("distill") / "surrogates")
    data, kinds, _, front = _search_state(ws)
    chosen = knee_select(front) if args.select == "knee" else least_latency_select(front)
    choice = {s: kinds[i] for s, i in zip(data["slots"], chosen.indices)}
    stitched = stitch(teacher, surrogates, choice)
    before = validation_psnr(stitched, val)
    result = finetune(stitched, ds, epochs=args.epochs, seed=cfg["seed"] + 1)
    d = ws.fresh("finetune")
    save_network(d / "network", result.network, {"val_psnr": result.val_psnr})
    dump_json(d / "selected.json", {
        "rule": args.select, "kinds": {s: k.value for s, k in result.network.config.kinds().items()},
        "indices": list(chosen.indices), "f1": chosen.f1, "f2": chosen.f2, "latency_ms": chosen.latency_ms,
        "val_psnr_stitched": before, "val_psnr_finetuned": result.val_psnr,
    })
    ws.seal("finetune", {"select": args.select, "epochs": args.epochs, "seed": cfg["seed"] + 1})
    print(f"selected ({args.select}): {', '.join(f'{s}={k.value}' for s, k in choice.items())}; "
          f"PSNR {before:.3f} -> {result.val_psnr:.3f} dB after fine-tuning")


def cmd_report(ws: Workspace, args) -> None:
    _run_settings(ws, args)
    for stage in DEPENDS["report"]:
        ws.require(stage)
    data, kinds, log_obs, front = _search_state(ws)
    base_train = load_json(ws.stage_dir("base") / "training.json")
    sel = load_json(ws.stage_dir("finetune") / "selected.json")
    prof = _load_profile_stage(ws)
    teacher = _teacher(ws)
    base_ms = global_latency(prof, teacher.config.all_base())
    chosen = next((o for o in front if list(o.indices) == sel["indices"]), None)
    if chosen is None:
        raise CorruptArtifactError("selected configuration is not in the search archive")
    summary = {
        "base_val_psnr": base_train["val_psnr"],
        "blurred_val_psnr": base_train["blurred_psnr"],
        "selection_rule": sel["rule"],
        "chosen_config": sel["kinds"],
        "psnr_loss_stitched_db": sel["f1"],
        "finetuned_val_psnr": sel["val_psnr_finetuned"],
        "psnr_loss_finetuned_db": base_train["val_psnr"] - sel["val_psnr_finetuned"],
        "latency_ms": sel["latency_ms"],
        "base_latency_ms": base_ms,
        "speedup": speedup(base_ms, sel["latency_ms"]),
        "evaluations": len(log_obs),
        "pareto_size": len(front),
        "hypervolume": data["hypervolume"],
    }
    d = ws.fresh("report")
    dump_json(d / "summary.json", summary)
    shutil.copyfile(ws.stage_dir("search") / "run_log.csv", d / "run_log.csv")
    (d / "pareto.svg").write_text(pareto_svg(log_obs, front, chosen, base_latency=base_ms))
    ws.seal("report", {})
    print(f"speedup {summary['speedup']:.3f}x at {summary['psnr_loss_finetuned_db']:+.3f} dB PSNR loss -> {d}")


COMMANDS = {
    "gen-data": cmd_gen_data, "train-base": cmd_train_base, "saliency": cmd_saliency, "profile": cmd_profile,
    "distill": cmd_distill, "search": cmd_search, "finetune": cmd_finetune, "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--workspace", type=Path, default=Path("workspace"), help="workspace directory")
    common.add_argument("--preset", choices=sorted(PRESETS), default=None, help="network preset (fixed at gen-data)")
    common.add_argument("--seed", type=int, default=None, help="master seed (fixed at gen-data)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="blocksurgeon", description="Latency-aware block substitution pipeline.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="generate the synthetic blur dataset")
    p.add_argument("--count", type=int, default=DatasetSpec.count)
    p.add_argument("--size", type=int, default=DatasetSpec.size)

    p = sub.add_parser("train-base", parents=[common], help="train the all-base network")
    p.add_argument("--epochs", type=int, default=80)
    p.add_argument("--lr", type=float, default=2e-3)

    p = sub.add_parser("saliency", parents=[common], help="score slots and freeze the most salient")
    p.add_argument("--freeze", type=int, default=1, help="number of slots to freeze")

    profile_help = "'simulate' or a profile JSON path"
    p = sub.add_parser("profile", parents=[common], help="build or load the per-block latency table")
    p.add_argument("--profile", default="simulate", help=profile_help)

    p = sub.add_parser("distill", parents=[common], help="train surrogate blocks")
    p.add_argument("--fraction", type=float, default=DEFAULT_FRACTION)
    p.add_argument("--steps", type=int, default=DEFAULT_STEPS)
    p.add_argument("--kinds", default=None, help="comma list of alternatives, e.g. alt2,alt5")

    p = sub.add_parser("search", parents=[common], help="multi-objective search over substitutions")
    p.add_argument("--budget", type=int, default=120)
    p.add_argument("--kinds", default=None, help="comma list restricting the alternatives")
    p.add_argument("--profile", default="simulate", help=profile_help + " (used when no profile stage exists)")
    p.add_argument("--penalty-floor", type=float, default=0.1)
    p.add_argument("--pool", type=int, default=2000, help="uniform candidates per proposal")

    p = sub.add_parser("finetune", parents=[common], help="fine-tune the selected configuration")
    p.add_argument("--select", choices=("knee", "least-latency"), default="knee")
    p.add_argument("--epochs", type=int, default=10)

    sub.add_parser("report", parents=[common], help="write summary JSON, run log and SVG plot")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    ws = Workspace(args.workspace)
    try:
        COMMANDS[args.command](ws, args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (MissingArtifactError, MissingSurrogateError, MissingLatencyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISSING
    except (CorruptArtifactError, ProfileError, ArtifactError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CORRUPT
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
