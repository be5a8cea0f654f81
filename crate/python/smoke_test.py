"""Smoke test for the sddeid extension module.

Install first:  pip install --no-build-isolation ./crates/python
"""

import math

import sddeid


def main():
    paths = sddeid.simulate("logistic", t_end=2.0, dt=0.01, paths=3, seed=7)
    assert len(paths) == 3
    assert len(paths[0]) == 201 and paths[0].dim == 1
    assert paths[0].states() != paths[1].states()
    again = sddeid.simulate("logistic", t_end=2.0, dt=0.01, paths=3, seed=7)
    assert again[2].states() == paths[2].states()

    lo, hi = paths[0].valid_range("CD")
    f = paths[0].drift_estimate("CD", lo)
    c = paths[0].cov_estimate("KM", lo)
    assert len(f) == 1 and len(c) == 1 and c[0] >= 0.0
    assert len(paths[0].augmented()[0]) == 2

    drift_names, diff_names = sddeid.library_names("logistic")
    assert "X(t)X(t-tau)" in drift_names, drift_names
    assert len(diff_names) > 0

    theta = [[1.0, 0.1 * k, 0.01 * k * k] for k in range(20)]
    y = [2.0 * r[0] - 3.0 * r[2] for r in theta]
    coef, status = sddeid.stls(theta, y, 0.1)
    assert abs(coef[0] - 2.0) < 1e-9 and coef[1] == 0.0 and abs(coef[2] + 3.0) < 1e-9, coef
    print("stls:", coef, status)

    cfg = sddeid.Config(seed=3)
    cfg.paths = 20
    cfg.eps = 0.05
    cfg.t_end = 5.0
    cfg.drift_method = "FD"
    assert sddeid.Config.from_toml(cfg.to_toml()).label == cfg.label
    fit, row = sddeid.identify(cfg)
    assert row["status"] == "ok", row
    drift = fit.drift(0)
    assert "X(t)X(t-tau)" in drift, drift
    assert math.isfinite(fit.eval_drift([0.5, 0.5])[0])
    print(cfg)
    print(fit.report())

    try:
        cfg.eps = -1.0
        sddeid.identify(cfg)
    except ValueError as e:
        print("rejected:", e)
    else:
        raise AssertionError("negative eps accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
