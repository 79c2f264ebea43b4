import numpy as np
import pytest

from datamosaic.model import FragmentBank, MosaicProblem


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_problem():
    """4 candidates, 2 clips, 2 dimensions."""
    gen = np.random.default_rng(7)
    bank = FragmentBank(gen.random((4, 2)))
    problem = MosaicProblem(gen.random(2), np.arange(4), 2, 0.15, fragment_id=0)
    return problem, bank


def random_instance(gen, max_candidates=5, max_clips=3, max_dim=4, fragment_id=0):
    k = int(gen.integers(2, max_candidates + 1))
    c = int(gen.integers(1, max_clips + 1))
    d = int(gen.integers(1, max_dim + 1))
    s = k + int(gen.integers(0, 3))
    bank = FragmentBank(gen.random((s, d)))
    candidates = np.sort(gen.choice(s, k, replace=False))
    stddev = float(gen.uniform(0.05, 0.5))
    return MosaicProblem(gen.random(d), candidates, c, stddev, fragment_id), bank


@pytest.fixture(scope="session")
def image_corpus(tmp_path_factory):
    from datamosaic.synthetic import blob_corpus, write_image_corpus

    root = tmp_path_factory.mktemp("imgcorpus")
    write_image_corpus(root / "sources", blob_corpus(12, 1, side=16))
    write_image_corpus(root / "target", blob_corpus(1, 99, side=16))
    return root


@pytest.fixture(scope="session")
def audio_corpus(tmp_path_factory):
    from datamosaic.synthetic import tone_clip, write_audio_clip

    root = tmp_path_factory.mktemp("audiocorpus")
    write_audio_clip(root / "sources" / "a.wav", tone_clip(1, 1.0))
    write_audio_clip(root / "sources" / "b.wav", tone_clip(3, 0.5))
    write_audio_clip(root / "target.wav", tone_clip(2, 0.5))
    return root


def image_config_text(root, out, mode="image-inplace", **extra):
    values = {"mode": mode, "target": root / "target" / "img_00000.png", "sources": root / "sources",
              "output": out, "num_clips": 4, "num_warmup": 20, "num_samples": 10, "render_count": 2,
              "window": 8, "cell_side": 4}
    values.update(extra)
    return "\n".join(f"{k} = {v}" for k, v in values.items())


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
