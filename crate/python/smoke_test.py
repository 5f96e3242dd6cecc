"""Smoke test for the kernood_py extension.

Build first with `cargo build -p kernood-py --release`, then run
`python3 python/smoke_test.py` from the repository root. Pass a path to the
built library to override the default lookup.
"""

import importlib.machinery
import importlib.util
import math
import pathlib
import sys

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load(path=None):
    if path is None:
        candidates = [
            ROOT / "target" / profile / "libkernood_py.so"
            for profile in ("release", "debug")
        ]
        path = next((p for p in candidates if p.exists()), None)
        if path is None:
            sys.exit("libkernood_py.so not found; run `cargo build -p kernood-py` first")
    loader = importlib.machinery.ExtensionFileLoader("kernood_py", str(path))
    spec = importlib.util.spec_from_file_location("kernood_py", str(path), loader=loader)
    module = importlib.util.module_from_spec(spec)
    loader.exec_module(module)
    return module


def main():
    k = load(sys.argv[1] if len(sys.argv) > 1 else None)

    assert k.rbf_distance([1.0, 2.0, 3.0]) == 5.0
    assert abs(k.rbf_similarity(5.0, 1.0) - 1.5 * math.exp(-5.0)) < 1e-12
    k_const, mean = k.extract_features([0.7] * 10, 2.0)
    assert k_const == 1.5 and abs(mean - 0.7) < 1e-12
    assert k.extract_features([1.0, 3.0], 1.0, variant="mean_only") == [2.0]
    assert k.c_factor(2) == 1.0
    assert abs(k.auroc([0.1, 0.4, 0.4, 0.9], [0, 0, 1, 1]) - 0.875) < 1e-12

    stat, alarm = k.cusum([0.4] * 5 + [0.55] * 20, 0.4, 0.05, 1.0)
    assert alarm == 5 + 10, alarm
    assert len(stat) == 25

    train = [k.simulate("linear", 100, seed)[0] for seed in range(45)]
    rows, onset = k.simulate("linear", 100, 1000, kind="arno", level="strong", onset=50, ar_order=1)
    assert onset == 50 and len(rows) == 4 and len(rows[0]) == 100

    det = k.Detector(sigma=10.0, seed=7)
    try:
        det.score(rows)
    except k.KernoodError:
        pass
    else:
        raise AssertionError("untrained detector must refuse to score")
    det.fit(train)
    scores = det.score(rows)
    assert det.n_dims == 4 and det.first_scored == 9
    assert len(scores) == 100 - det.first_scored
    assert all(0.0 < s < 1.0 for s in scores)
    pre = sum(scores[: onset - det.first_scored]) / (onset - det.first_scored)
    post = sum(scores[onset - det.first_scored :]) / (100 - onset)
    assert post > pre, (pre, post)

    again = k.Detector.from_json(det.to_json())
    assert again.score(rows) == scores

    try:
        k.Detector(variant="nope")
    except k.KernoodError:
        pass
    else:
        raise AssertionError("unknown variant must raise")

    print(f"kernood_py smoke test ok: mean score {pre:.3f} before onset, {post:.3f} after")


if __name__ == "__main__":
    main()
