"""Smoke test for the dnnrto_py extension module.

Build and install first:  pip install --no-build-isolation ./crates/python
"""

import math
import os
import random
import tempfile

import dnnrto_py as d


def close(a, b, tol):
    return abs(a - b) <= tol * max(1.0, abs(b))


def main():
    assert close(d.swish(1.0), 1.0 / (1.0 + math.exp(-1.0)), 1e-15)

    rng = random.Random(0)
    iid = [rng.gauss(0.0, 1.0) for _ in range(20000)]
    ess = d.ess(iid)
    assert 0.8 * len(iid) <= ess <= 1.2 * len(iid), ess
    acf = d.autocorrelation(iid, 5)
    assert len(acf) == 5 and all(abs(r) < 0.05 for r in acf)

    rows = [[rng.gauss(0, 1), rng.gauss(0, 1)] for _ in range(500)]
    rem, rec = d.error_metrics(rows, rows)
    assert rem == 0.0 and rec == 0.0

    a = [[rng.gauss(0, 1) for _ in range(4)] for _ in range(6)]
    assert d.covariance_identity_check(a) < 1e-10

    net = d.Mlp(3, 2, 2, 8, seed=1)
    assert net.widths == [3, 8, 8, 2]
    v = [0.1, -0.2, 0.3]
    jac = net.input_jacobian(v)
    h = 1e-6
    for j in range(3):
        up, dn = list(v), list(v)
        up[j] += h
        dn[j] -= h
        fd = [(p - m) / (2 * h) for p, m in zip(net.forward(up), net.forward(dn))]
        for i in range(2):
            assert close(fd[i], jac[i][j], 1e-6), (i, j, fd[i], jac[i][j])

    xs = [[rng.uniform(-1, 1)] for _ in range(32)]
    ys = [[math.sin(2 * x[0])] for x in xs]
    fit = d.Mlp.fit(xs, ys, 2, 16, learning_rate=5e-3, epochs=2000, seed=0)
    assert fit.loss(xs, ys) < 1e-3
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "net.bin")
        fit.save(path)
        back = d.Mlp.load(path)
        assert back.forward([0.3]) == fit.forward([0.3])

    prob = d.Problem("rbf9", mesh=10)
    assert prob.num_params == 9 and prob.num_obs == 71
    u = [0.0] * 9
    obs = prob.forward(u)
    jp = prob.jacobian(u)
    assert len(obs) == 71 and len(jp) == 71 and len(jp[0]) == 9

    out = d.run(
        '[problem]\nexample = "linear"\n'
        '[sampler]\nmethod = "rto"\nn_samps = 500\nthreads = 1\n'
    )
    assert out["acceptance_probability"] == 1.0
    assert len(out["samples"]) == 500

    print("python smoke test passed")


if __name__ == "__main__":
    main()
