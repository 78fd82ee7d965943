"""Smoke test for the elrdd extension module.

Build first:  pip install -e crates/py --no-build-isolation
Then run:     python python/smoke_test.py
"""

import json
import random

import elrdd


def main():
    k = elrdd.kernel_constants("triangular")
    assert abs(k["varpi"] + 0.1) < 1e-8, k["varpi"]
    assert abs(k["gamma2"] - 4.8) < 1e-8, k["gamma2"]

    sample = elrdd.generate("sharp_model1", 3000, seed=5)
    assert len(sample) == 3000
    assert "y" in sample.columns

    result = elrdd.analyze(sample, elrdd.Design.sharp("y"), levels=[0.95])
    est = result.point_estimate[0]
    lo, hi = result.interval(0.95)
    assert lo <= est <= hi
    assert abs(est - elrdd.dgp_truth("sharp_model1")[0]) < 0.3
    assert result.h > 0 and result.bartlett_factor > 0
    report = json.loads(result.to_json())
    assert report["plan"]["h"] == result.h

    lr = elrdd.lr_at(sample, elrdd.Design.sharp("y"), result.h, [est])
    assert lr < 1e-6, lr

    x = [i / 500 - 1 for i in range(1000)]
    d = [1.0 if v >= 0 else 0.0 for v in x]
    rng = random.Random(1)
    y = [0.2 * v + 0.5 * dv + 0.3 * v * v + rng.gauss(0, 0.1) for v, dv in zip(x, d)]
    manual = elrdd.Sample(x, 0.0, {"y": y, "d": d})
    fuzzy = elrdd.analyze(manual, elrdd.Design("fuzzy", y=["y"], d="d"), intervals=False)
    assert abs(fuzzy.point_estimate[0] - 0.5) < 0.1, fuzzy.point_estimate

    try:
        elrdd.analyze(manual, elrdd.Design.fuzzy("y", "missing"))
    except ValueError as e:
        assert "missing" in str(e)
    else:
        raise AssertionError("missing column accepted")

    cov = elrdd.simulate("sharp_model1", 1000, reps=40, seed=3, levels=[0.95], intervals=False)
    c = cov.coverage(0.95, bartlett=True, mode="estimated")
    assert 0.7 <= c <= 1.0, c
    assert cov.failures == 0
    print(f"ok: estimate {est:.4f} CI [{lo:.4f}, {hi:.4f}] h {result.h:.4f} coverage {c:.3f}")


if __name__ == "__main__":
    main()
