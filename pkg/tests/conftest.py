"""Session-wide fixtures: one dataset, one trained base network, one surrogate set."""

from __future__ import annotations

import time

import pytest

from blocksurgeon.distill import SurrogateSet, distill_all, subsample_data
from blocksurgeon.saliency import fixed_batch, rank_blocks, saliency_report, select_frozen
from blocksurgeon.toynet import DatasetSpec, Network, build_network, desk_preset, generate_dataset, train_base


@pytest.fixture(scope="session")
def dataset():
    return generate_dataset(DatasetSpec())


@pytest.fixture(scope="session")
def splits(dataset):
    return dataset.split()


@pytest.fixture(scope="session")
def trained(dataset):
    """Default-preset network trained with default hyperparameters and seed 0."""
    return train_base(build_network(desk_preset(), seed=0), dataset, seed=0)


@pytest.fixture(scope="session")
def base_net(trained):
    return trained.network


@pytest.fixture(scope="session")
def desk_saliency(base_net, splits):
    report = saliency_report(base_net, fixed_batch(splits[0], seed=0))
    return report, rank_blocks(report)


@pytest.fixture(scope="session")
def teacher(base_net, desk_saliency):
    """Trained network with its most salient slot frozen."""
    frozen = select_frozen(desk_saliency[1].consensus, 1)
    return Network(base_net.config.with_frozen(frozen), base_net.params)


@pytest.fixture(scope="session")
def surrogates(teacher, splits) -> SurrogateSet:
    train, val = splits
    return distill_all(teacher, subsample_data(train, 0.25, 0), master_seed=0, workers=1,
                       eval_inputs=val.blurred, fraction=0.25)


PIPELINE = ("gen-data", "train-base", "saliency", "profile", "distill", "search", "finetune", "report")


PIPELINE_SECONDS: dict = {}


def run_pipeline(workspace, seed: int = 0) -> list[int]:
    """Every CLI stage with default settings; returns the exit codes."""
    from blocksurgeon.cli import main

    start = time.perf_counter()
    codes = []
    for stage in PIPELINE:
        extra = ["--preset", "desk", "--seed", str(seed)] if stage == "gen-data" else []
        codes.append(main([stage, "--workspace", str(workspace), *extra]))
    PIPELINE_SECONDS[str(workspace)] = time.perf_counter() - start
    return codes


@pytest.fixture(scope="session")
def pipeline_ws(tmp_path_factory):
    ws = tmp_path_factory.mktemp("pipeline") / "ws"
    codes = run_pipeline(ws)
    assert codes == [0] * len(PIPELINE), codes
    return ws


@pytest.fixture(scope="session")
def pipeline_twin(tmp_path_factory):
    """A second default run with the same seed, for determinism checks."""
    ws = tmp_path_factory.mktemp("twin") / "ws"
    codes = run_pipeline(ws)
    assert codes == [0] * len(PIPELINE), codes
    return ws


def tree_digest(root) -> dict[str, str]:
    import hashlib

    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


ACCEPTANCE: dict[int, tuple[bool, str]] = {}
CRITERIA = 10


def record_acceptance(number: int, ok: bool, detail: str) -> None:
    """Store a criterion verdict for the terminal summary, then fail the test if needed."""
    ACCEPTANCE[number] = (bool(ok), detail)
    assert ok, f"criterion {number}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, CRITERIA + 1):
        if n in ACCEPTANCE:
            ok, detail = ACCEPTANCE[n]
            terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n:2d}: NOT RUN")
