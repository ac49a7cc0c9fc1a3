"""Exercise the hardy_factor_py extension end to end.

Build and install it first:

    pip install --no-build-isolation -e crates/python
"""

import json
import math

import hardy_factor_py as hf


def main() -> None:
    ns = [hf.constants(n, 1.0, 1.0, 1.0)["N"] for n in range(6)]
    assert ns == [127, 168, 209, 250, 291, 332], ns

    x, y = hf.gamlen_gaudet(1, 1)
    report = hf.check_families(x, y)
    assert report["jones_x"]["passed"] and report["capon"]["passed"]
    assert math.isclose(report["alpha"], 0.5)
    assert hf.Family.from_json(x.to_json()).to_json() == x.to_json()

    dim = hf.basis_len(2)
    assert dim == 49
    e = [0.0] * dim
    e[0] = 1.0
    assert math.isclose(hf.mixed_norm(e, 2), 1.0)

    ident = hf.Operator.scaled_identity(2)
    m = hf.exhaustive_moments(ident, x, y, "W", ("0:0", "1:0", "0:0", "1:1"))
    assert m["second_moment"] == 0.0 and m["method"] == "exhaustive"

    t = hf.Operator.generate(3, 0.5, 1.0, "diagonal-plus-noise", seed=4)
    assert hf.Operator.from_json(t.to_json()).gram() == t.gram()
    est = t.norm_estimate()
    assert est["lower"] <= est["upper"] <= 1.0 + 1e-9

    mc = hf.mc_moments(t, x.lift(3), y.lift(3), "Z", ("1:0", "1:0", "1:1", "1:1"), trials=2000, seed=1)
    assert mc["second_moment"] <= mc["bound"]

    fact = hf.factorize(t, n=1, m0=2, eta0=0.2, delta=0.5, gamma=1.0, seed=11)
    assert fact.residual <= 1e-9, fact.residual
    check = fact.verify(t)
    assert check["passed"], check
    bundle = json.loads(fact.to_json())
    assert bundle["N"] == 3

    try:
        hf.factorize(t, n=1, m0=5, eta0=0.2, delta=0.5, gamma=1.0)
    except hf.HardyFactorError as err:
        assert "exceeds" in str(err)
    else:
        raise AssertionError("expected a precondition error")

    print("smoke test passed: residual", fact.residual, "attempts", fact.attempts)


if __name__ == "__main__":
    main()
