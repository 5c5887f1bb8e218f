import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mtda.synth import SynthConfig, make_dataset  # noqa: E402


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """3 devices (1 source), 3 classes, parallel pairs; shared across tests."""
    out = tmp_path_factory.mktemp("smallset")
    cfg = SynthConfig(
        n_classes=3,
        devices=[("A", 0.0), ("B", 0.4), ("C", 1.0)],
        samples_per_device_per_class=8,
        parallel_fraction=0.5,
        seed=77,
    )
    rows = make_dataset(cfg, out)
    return cfg, rows
