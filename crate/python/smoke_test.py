"""Quick checks of the Python bindings. Run: python3 python/smoke_test.py"""

import math

import steer_py as st


def main():
    r = st.solve(lambda t, z: [-v for v in z], [1.0], 0.0, 1.0, rtol=1e-6, atol=1e-6)
    assert abs(r["z"][0] - math.exp(-1.0)) < 1e-5, r
    assert r["nfe"] == 6 * (r["accepted"] + r["rejected"]) + 1

    r = st.solve(lambda t, z: [z[1], -z[0]], [0.0, 1.0], 0.0, math.pi, method="rk4", steps=50)
    assert r["nfe"] == 200
    assert abs(r["z"][0]) < 1e-5

    try:
        st.solve(lambda t, z: 1 / 0, [1.0], 0.0, 1.0)
    except ZeroDivisionError:
        pass
    else:
        raise AssertionError("callback error was swallowed")

    s = st.Sampler("uniform", 0.0, 0.125, b=0.124)
    xs = s.sample(10000, seed=1)
    assert all(0.001 <= x <= 0.249 for x in xs)
    assert xs == s.sample(10000, seed=1)
    try:
        st.Sampler("uniform", 0.0, 0.125, b=0.2)
    except ValueError as e:
        assert "violates the end-time bound" in str(e)
    else:
        raise AssertionError("bound violation accepted")

    mog = st.Mixture([-2.0, 2.0], [0.5, 0.5], [0.5, 0.5])
    assert abs(mog.entropy() - 1.4188) < 1e-3

    assert abs(st.stiff_solution(1000.0, 25.0) - 3.0) < 1e-9
    assert st.grad_check("rk4", 4) <= 1e-4
    assert st.grad_check("dopri5") <= 1e-3
    assert st.picard_taylor_error(8) < 1e-6

    mean, std = st.triangular_stats(1.0, 100000, seed=3)
    assert abs(mean) <= 3 * std / math.sqrt(100000)

    c = st.contraction(z0=0.0, trials=200, seed=1)
    assert c["hypotheses_hold"]

    rec = st.train_stiff(b=0.124, hidden=16, epochs=3, n_train=40, grid_points=201, seed=1)
    assert rec["status"] == "ok" and rec["sampler_kind"] == "uniform"
    assert len(rec["history"]) == 3

    out = st.train_cnf(b=0.375, iterations=20, seed=2)
    assert out["status"] == "ok" and math.isfinite(out["final_nll"])

    print("python smoke test passed (steer_py", st.__version__ + ")")


if __name__ == "__main__":
    main()
