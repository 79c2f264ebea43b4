import json
import os
import shutil

import numpy as np
import pytest

from datamosaic.artifact import Artifact, read_artifact, write_artifact
from datamosaic.config import PRESETS, validate_config
from datamosaic.exceptions import ConfigError, NumericalError, StaleCorpusError
from datamosaic.jobs import (
    diagnostics_report,
    format_report,
    load_for_render,
    prepare_job,
    render_from_artifact,
    run_job,
)
from datamosaic.parallel import WORKERS_ENV, resolve_workers

from conftest import image_config_text


def tree_bytes(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir()) if p.is_file()}


class TestConfig:
    def test_collects_all_errors(self, tmp_path):
        text = "mode = image-inplace\nstddev = 0\nwindow = 4\nstride = 8\nnum_clips = 0\nbogus = 1"
        with pytest.raises(ConfigError) as info:
            validate_config(text, check_paths=False)
        errors = info.value.errors
        assert any("stddev must be positive" in e for e in errors)
        assert any(e.startswith("stride:") for e in errors)
        assert any(e.startswith("num_clips:") for e in errors)
        assert any(e.startswith("bogus:") for e in errors)
        assert any(e.startswith("target:") for e in errors)

    def test_missing_paths_rejected(self, tmp_path):
        text = f"mode = audio\ntarget = {tmp_path / 'nope.wav'}\nsources = {tmp_path / 'nodir'}\noutput = {tmp_path}"
        with pytest.raises(ConfigError) as info:
            validate_config(text)
        assert len(info.value.errors) == 2

    @pytest.mark.parametrize("preset,warmup", [("image-default", 1000), ("audio-default", 20000),
                                               ("low-compute", 10)])
    def test_presets(self, preset, warmup):
        mode = "audio" if preset.startswith("audio") else "image-inplace"
        cfg = validate_config(f"mode = {mode}\ntarget = t\nsources = s\noutput = o\npreset = {preset}",
                              check_paths=False)
        assert cfg.inference.num_warmup == warmup
        assert cfg.num_clips == 30 and cfg.inference.kernel == "gibbs"
        assert set(PRESETS) == {"image-default", "audio-default", "low-compute"}

    def test_overrides_win(self):
        cfg = validate_config("mode = image-photographic\ntarget = t\nsources = s\noutput = o\nstddev = 0.1",
                              {"stddev": "0.2", "num-chains": "3"}, check_paths=False)
        assert cfg.stddev == 0.2 and cfg.inference.num_chains == 3

    def test_audio_defaults(self):
        cfg = validate_config("mode = audio\ntarget = t\nsources = s\noutput = o", check_paths=False)
        assert (cfg.nfft, cfg.hop, cfg.top_k, cfg.stddev) == (8192, 8192, 200, 3.0)
        hann = validate_config("mode = audio\ntarget = t\nsources = s\noutput = o\nanalysis_window = hann",
                               check_paths=False)
        assert hann.hop == 4096

    def test_bad_types(self):
        with pytest.raises(ConfigError, match="num_samples: must be an integer"):
            validate_config("mode = audio\ntarget = t\nsources = s\noutput = o\nnum_samples = many",
                            check_paths=False)

    def test_worker_env(self, monkeypatch):
        monkeypatch.setenv(WORKERS_ENV, "3")
        assert resolve_workers(1) == 3
        monkeypatch.delenv(WORKERS_ENV)
        assert resolve_workers(2) == 2


class TestArtifact:
    def test_round_trip(self, tmp_path):
        sels = [np.arange(12).reshape(2, 3, 2), np.zeros((2, 3, 2), np.int64)]
        traces = [np.array([[1.5, -np.inf, 2.0], [0.1, 0.2, np.nan]]), np.zeros((2, 3))]
        art = Artifact({"n_fragments": 2, "num_clips": 2, "x": 1}, sels, traces)
        back = read_artifact(write_artifact(tmp_path / "a", art))
        assert back.manifest["x"] == 1
        for a, b in zip(sels, back.selections):
            np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(back.traces[0], traces[0])

    def test_records_are_lines(self, tmp_path):
        art = Artifact({"n_fragments": 1, "num_clips": 3}, [np.array([[[4, 5, 6]]])], [np.zeros((1, 1))])
        write_artifact(tmp_path, art)
        line = (tmp_path / "records.jsonl").read_text().strip()
        assert json.loads(line) == {"fragment_id": 0, "chain": 0, "sample": 0, "slots": [4, 5, 6]}


@pytest.fixture(scope="module")
def inplace_run(image_corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("runs") / "inplace"
    cfg = validate_config(image_config_text(image_corpus, out))
    return cfg, run_job(cfg)


class TestRunJob:
    def test_outputs(self, inplace_run):
        cfg, art = inplace_run
        names = sorted(p.name for p in cfg.output.iterdir())
        assert names == ["manifest.json", "records.jsonl", "render_000.png", "render_001.png", "traces.jsonl"]
        m = art.manifest
        assert m["n_fragments"] == 4 and m["num_clips"] == 4
        assert len(m["fragments"]) == 4 and len(m["renders"]) == 2
        assert all(sel.shape == (2, 10, 4) for sel in art.selections)
        assert all(tr.shape == (2, 30) for tr in art.traces)

    def test_worker_count_independent(self, inplace_run, image_corpus, tmp_path):
        cfg, _ = inplace_run
        cfg2 = validate_config(image_config_text(image_corpus, tmp_path / "w3", workers=3))
        run_job(cfg2)
        a, b = tree_bytes(cfg.output), tree_bytes(tmp_path / "w3")
        ma, mb = (json.loads(x.pop("manifest.json")) for x in (a, b))
        for m in (ma, mb):
            m["config"].pop("output")
        assert a == b and ma == mb

    def test_render_reproducible(self, inplace_run):
        cfg, art = inplace_run
        a, da = render_from_artifact(cfg.output, seed=5, render_index=1)
        b, db = render_from_artifact(cfg.output, draws=da)
        assert da == db and a.tobytes() == b.tobytes()
        first, draws0 = render_from_artifact(cfg.output, seed=art.manifest["master_seed"], render_index=0)
        assert draws0 == art.manifest["renders"][0]

    def test_stale_corpus(self, inplace_run, image_corpus, tmp_path):
        cfg, _ = inplace_run
        srcs = tmp_path / "srcs"
        shutil.copytree(image_corpus / "sources", srcs)
        manifest = json.loads((cfg.output / "manifest.json").read_text())
        manifest["config"]["sources"] = str(srcs)
        art_dir = tmp_path / "art"
        shutil.copytree(cfg.output, art_dir)
        (art_dir / "manifest.json").write_text(json.dumps(manifest))
        load_for_render(art_dir)
        from datamosaic.synthetic import blob_corpus, write_image_corpus

        write_image_corpus(srcs, blob_corpus(1, 1234, side=16))
        with pytest.raises(StaleCorpusError):
            load_for_render(art_dir)

    def test_fragment_independence(self, inplace_run):
        from datamosaic.jobs import draw_indices

        _, art = inplace_run
        full = draw_indices(art.selections, 3, 0)
        reduced = draw_indices(art.drop_fragment(2).selections, 3, 0)
        # Fragment ids shift after the dropped one; earlier fragments keep their draws.
        assert reduced[:2] == full[:2]
        assert len(set(draw_indices(art.selections, 3, r)[0] for r in range(20))) > 1

    def test_single_sample_render_is_deterministic(self, inplace_run):
        cfg, art = inplace_run
        single = Artifact(art.manifest, [s[:1, :1] for s in art.selections], art.traces)
        loaded = load_for_render(cfg.output)
        a, da = render_from_artifact(single, seed=1, loaded=(single,) + tuple(loaded[1:]))
        b, db = render_from_artifact(single, seed=2, loaded=(single,) + tuple(loaded[1:]))
        assert da == db == [0] * art.n_fragments
        assert a.tobytes() == b.tobytes()

    def test_diagnostics(self, inplace_run):
        _, art = inplace_run
        report = diagnostics_report(art)
        assert report["rhat_available"] and len(report["fragments"]) == 4
        assert all(r["mean_residual"] > 0 for r in report["fragments"])
        text = format_report(report)
        assert "split R-hat" in text and "median" in text

    def test_photographic_and_failure_cleanup(self, image_corpus, tmp_path, monkeypatch):
        cfg = validate_config(image_config_text(image_corpus, tmp_path / "ph", mode="image-photographic"))
        art = run_job(cfg)
        assert art.n_fragments == 16
        assert all(sel.max() < 12 for sel in art.selections)

        import datamosaic.parallel as par

        def boom(*a, **k):
            raise NumericalError("synthetic failure", fragment_id=3, chain_index=0)

        monkeypatch.setattr(par, "run_chain", boom)
        bad = validate_config(image_config_text(image_corpus, tmp_path / "bad"))
        with pytest.raises(NumericalError, match="fragment_id=3"):
            run_job(bad)
        assert not (tmp_path / "bad").exists()

    def test_overlapping_grid(self, image_corpus, tmp_path):
        cfg = validate_config(image_config_text(image_corpus, tmp_path / "ov", stride=4, render_count=1))
        assert len(prepare_job(cfg).problems) == 9
        run_job(cfg)

    def test_audio_job(self, audio_corpus, tmp_path):
        text = "\n".join([
            "mode = audio", f"target = {audio_corpus / 'target.wav'}",
            f"sources = {audio_corpus / 'sources'}", f"output = {tmp_path / 'au'}",
            "nfft = 1024", "num_clips = 3", "num_warmup = 10", "num_samples = 5", "top_k = 6",
            "render_count = 1"])
        cfg = validate_config(text)
        prepared = prepare_job(cfg)
        assert all(p.candidates.size == 6 for p in prepared.problems)
        assert prepared.problems[0].target.size == 513
        art = run_job(cfg)
        assert (tmp_path / "au" / "render_000.wav").exists()
        clip, _ = render_from_artifact(tmp_path / "au", seed=1)
        assert clip.samples.size == art.n_fragments * 1024
        assert art.manifest["audio"]["db_reference"] > 0


class TestDiagnostics:
    def _art(self, traces, warmup=0):
        n = len(traces)
        return Artifact({"n_fragments": n, "num_clips": 1, "num_warmup": warmup,
                         "fragments": [{"mean_residual": 0.1}] * n},
                        [np.zeros((t.shape[0], 1, 1), np.int64) for t in traces], traces)

    def test_identical_chains(self):
        report = diagnostics_report(self._art([np.ones((2, 20)), np.full((2, 20), 3.0)]))
        assert [r["split_rhat"] for r in report["fragments"]] == [1.0, 1.0]
        assert report["flagged"] == []

    def test_single_chain_unavailable(self):
        report = diagnostics_report(self._art([np.ones((1, 20))]))
        assert not report["rhat_available"] and report["fragments"][0]["split_rhat"] is None
        assert "unavailable" in format_report(report)

    def test_under_warmed_run_flagged(self):
        from datamosaic.inference import InferenceConfig, run_chains
        from datamosaic.model import FragmentBank, MosaicProblem

        gen = np.random.default_rng(0)
        bank = FragmentBank(gen.random((30, 16)))
        problem = MosaicProblem(gen.random(16), np.arange(30), 5, 0.01)
        post = run_chains(problem, bank, InferenceConfig("rwmh", 0, 50, 1, 4, 0))
        report = diagnostics_report(self._art([post.traces]))
        assert report["flagged"] == [0]


@pytest.mark.skipif((os.cpu_count() or 1) < 4, reason="speed scaling check needs >= 4 cores")
def test_worker_speedup(image_corpus, tmp_path):
    import time

    times = {}
    for w in (1, 4):
        cfg = validate_config(image_config_text(image_corpus, tmp_path / f"s{w}", mode="image-photographic",
                                                num_warmup=400, workers=w, render_count=0))
        start = time.perf_counter()
        run_job(cfg)
        times[w] = time.perf_counter() - start
    assert times[1] / times[4] >= 1.5
