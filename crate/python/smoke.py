"""Smoke test for the compiled extension module.

Build it first, e.g. ``maturin develop -m crates/python/Cargo.toml``, then run
``python python/smoke.py``.
"""

import json
import math
import os
import tempfile

import story_reorg_py as sr


def close(a, b, tol=1e-6):
    return all(abs(x - y) <= tol for ra, rb in zip(a, b) for x, y in zip(ra, rb))


def main():
    basis, rank = sr.orthonormal_basis([[1.0, 2.0, 0.0], [2.0, 4.0, 0.0]])
    assert rank == 1, rank
    assert math.isclose(sum(v * v for v in basis[0]), 1.0, rel_tol=1e-12)
    assert close(sr.project_rows([[1.0, 1.0, 0.0]], [[1.0, 0.0, 0.0]]), [[1.0, 0.0, 0.0]])

    # two one-token frames with no identity rows
    story = sr.StoryBundle([[[1.0, 1.0, 0.0]], [[1.0, 0.0, 0.0]]], (0, 0), (0, 1))
    out = story.reorganize()
    assert close(out.frame(0), [[0.0, 1.0, 0.0]]), out.frame(0)

    story = sr.StoryBundle.synth(frames=3, dim=32, tokens_per_frame=5, seed=7)
    out = story.reorganize()
    report = json.loads(story.report(out))
    assert report["mean_offdiag_after"] < report["mean_offdiag_before"], report
    assert story.reorganize(id_source="per_frame", interference_weight=0.0) == story

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "story.reb")
        out.write(path)
        back = sr.StoryBundle.read(path)
        assert back == out
        assert back.layout(1) == ((1, 5), (5, 10)), back.layout(1)
        assert json.loads(back.provenance_json)["seed"] == 7

        with open(path, "r+b") as f:
            f.truncate(20)
        try:
            sr.StoryBundle.read(path)
        except ValueError as e:
            assert "REB1" in str(e)
        else:
            raise AssertionError("truncated file was accepted")

    print("ok:", repr(story))


if __name__ == "__main__":
    main()
