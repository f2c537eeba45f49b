"""Smoke test for the stemscore_py extension module.

Build and install first, for example:

    pip install maturin
    maturin develop --release -m crates/python/Cargo.toml
    python python/smoke_test.py
"""

import math
import tempfile
from pathlib import Path

import stemscore_py as ss


def close(a, b, tol=1e-12):
    return abs(a - b) <= tol


def main():
    # interval and aggregation primitives
    lower, upper, branch = ss.consensus_interval(
        [[0.1, 0.9], [0.05, 0.15, 0.7, 0.1], [0.02] * 6 + [0.8, 0.08]]
    )
    assert 0.0 <= lower < upper <= 1.0, (lower, upper)
    assert branch in ("overlap_majority", "conservative", "fallback")
    assert ss.consensus_interval([[0.5, 0.5], [0.25] * 4, [0.125] * 8])[2] == "fallback"
    assert close(ss.song_score([(0.2, 0.4, 0.5), (0.3, 0.5, 0.5)]), 0.35)

    # metrics
    assert close(ss.mse([1.0, 2.0], [2.0, 4.0]), 2.5)
    assert close(ss.lcc([1.0, 2.0, 3.0], [1.0, 3.0, 2.0]), 0.5)
    assert close(ss.srcc([1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 4.0, 3.0]), 0.8)
    assert close(ss.ktau([1.0, 2.0, 3.0, 4.0], [1.0, 3.0, 2.0, 4.0]), 4.0 / 6.0)
    try:
        ss.lcc([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    except ValueError:
        pass
    else:
        raise AssertionError("constant input must raise")

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        manifest = ss.gen_data(tmp / "corpus", songs=30, seed=1, dim=8, dims=2)
        config = "\n".join(
            [
                "batch_size = 8",
                "window = 12",
                "hop = 6",
                "[model]",
                "head_hidden = 8",
                "[model.encoder]",
                "dim = 8",
                "heads = 2",
                "blocks = 1",
            ]
        )
        result = ss.train(manifest, config, epochs=3, seed=2)
        assert len(result.val_srcc) <= 3
        assert set(result.test_report) == {"dim_0", "dim_1"}
        assert result.test_report_tsv.splitlines()[0].startswith("dimension")
        train_ids, val_ids, test_ids = result.split
        assert len(train_ids) + len(val_ids) + len(test_ids) == 30

        model = result.take_model()
        assert model.dimensions == ["dim_0", "dim_1"]
        assert model.window == 12 and model.hop == 6
        ckpt = tmp / "model.bin"
        model.save(ckpt)
        loaded = ss.Model.load(ckpt)
        assert loaded.parameter_count == model.parameter_count
        scores = loaded.score(manifest)
        assert scores == model.score(manifest)
        assert len(scores) == 30 * 2
        for song_id, dim, score, width in scores:
            assert 0.0 <= score <= 5.0 and width > 0.0
        report = loaded.evaluate(manifest)
        assert all(math.isfinite(m["srcc"]) for m in report.values())

        try:
            ss.Model.load(tmp / "missing.bin")
        except OSError:
            pass
        else:
            raise AssertionError("missing checkpoint must raise")

    print("smoke test passed")


if __name__ == "__main__":
    main()
