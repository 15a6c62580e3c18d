import time
from pathlib import Path

import pytest

from deftensor.harness import experiments
from deftensor.harness.checkpoint import save_checkpoint
from deftensor.harness.config import ExperimentConfig

DESK_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "desk.cfg"

# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)


class DeskModels:
    """Desk-scale models trained on first use and shared by the whole session.

    ``seconds`` records the wall time spent building each model so runtime
    budgets can be checked regardless of which test asked first.
    """

    def __init__(self, cfg: ExperimentConfig, workdir: Path):
        self.cfg = cfg
        self.workdir = workdir
        self.seconds = {}
        self._cache = {}
        self.splits = experiments.load_splits(cfg)

    @property
    def test(self):
        return self.splits[2]

    def _build(self, key, fn):
        if key not in self._cache:
            t0 = time.perf_counter()
            self._cache[key] = fn()
            self.seconds[key] = time.perf_counter() - t0
        return self._cache[key]

    def base(self):
        """Deterministic tucker network (theta = 1) trained from scratch."""

        def fn():
            model, _ = experiments.train(self.cfg.replace(theta=1.0, epochs=self.cfg.pretrain_epochs), self.splits)
            save_checkpoint(self.workdir / "base.bin", model, config=self.cfg.to_dict())
            return model

        return self._build("base", fn)

    def randomized(self, theta: float):
        """The base network fine-tuned with tensor dropout at ``theta``."""
        self.base()

        def fn():
            cfg = self.cfg.replace(theta=theta, init_checkpoint=str(self.workdir / "base.bin"))
            return experiments.train(cfg, self.splits)[0]

        return self._build(("randomized", theta), fn)

    def binary(self):
        cfg = self.cfg.replace(kernel="binary", theta=1.0, epochs=self.cfg.pretrain_epochs)
        return self._build("binary", lambda: experiments.train(cfg, self.splits)[0])

    def binary_randomized(self, theta: float):
        cfg = self.cfg.replace(kernel="binary-tucker", theta=theta, epochs=self.cfg.pretrain_epochs)
        return self._build(("binary-tucker", theta), lambda: experiments.train(cfg, self.splits)[0])

    def independent_base(self, seed: int):
        """A second baseline with its own seed, used as a transfer-attack substitute."""
        cfg = self.cfg.replace(theta=1.0, epochs=self.cfg.pretrain_epochs, seed=seed)
        return self._build(("base", seed), lambda: experiments.train(cfg, self.splits)[0])


@pytest.fixture(scope="session")
def desk(tmp_path_factory):
    return DeskModels(ExperimentConfig.from_file(DESK_CONFIG), tmp_path_factory.mktemp("desk"))
