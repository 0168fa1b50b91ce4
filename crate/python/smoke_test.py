"""Quick end-to-end check of the Python bindings.

Build and install first:  pip install --no-build-isolation ./crates/qotto-py
"""

import math

import qotto


def close(a, b, rel):
    return abs(a - b) <= rel * abs(b)


def main():
    rate = qotto.effective_dephasing_rate(256.0, 128.0, 1024.0)
    assert abs(rate - 15.94) < 0.01, rate

    re, im = qotto.steady_displacement(256.0, 128.0, 1024.0)
    assert abs(re - 0.24903) < 1e-5 and abs(im - 0.015564) < 1e-6, (re, im)

    de = qotto.decoupling_energy(0.5, 2.0, 10.0)
    assert close(de, 8 * 0.25 * 10 / (400 + 4), 1e-12), de

    lo, hi = qotto.dissipated_heat_bounds(256.0, 128.0, 1024.0, 0.5, 1.84375, 0.4857, 0.0524)
    assert 0 < lo < hi

    qs = qotto.quasistatic(1.0, math.hypot(1.0, 0.5), 0.0524, 0.4857)
    assert abs(qs["eta"] - 0.106) < 5e-4, qs

    assert "fig2" in qotto.Config.presets()
    cfg = qotto.Config("fig2")
    back = qotto.Config.from_toml(cfg.to_toml())
    assert back.hash() == cfg.hash()
    try:
        cfg.with_overrides(["strokes.tau_h=-1"])
    except ValueError:
        pass
    else:
        raise AssertionError("negative duration accepted")

    rec = qotto.run_cycle(cfg)
    assert rec["start_distance"] < 1e-6
    assert abs(rec["first_law_residual"]) < 1e-6
    print(f"fig2 steady cycle: W_ext(tot) = {rec['tot']['w_ext']:.6e}, eta(sys) = {rec['sys']['eta']:.5f}")

    chain = qotto.chain_coefficients(cfg, 8.0, 6)
    assert all(abs(w - 10.0) < 1e-7 for w in chain["omega"])

    opt = qotto.maximize_power(qotto.Config("paper-4.1"), target="sys", max_evals=20)
    assert opt["power"] == opt["record"]["sys"]["power"]
    print("smoke test passed")


if __name__ == "__main__":
    main()
