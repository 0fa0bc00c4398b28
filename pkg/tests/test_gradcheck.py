import numpy as np

from scopeseg.gradcheck import STEP, TOLERANCE, check_coordinates, rel_error, run_gradcheck


def test_constants():
    assert STEP == 1e-5 and TOLERANCE == 1e-4


def test_rel_error_floor():
    assert rel_error(0.0, 0.0) == 0.0
    assert rel_error(1.0, 1.0 + 1e-6) < 1e-5
    assert rel_error(1e-9, 0.0) < 1e-2


def test_default_seed_passes_every_component():
    rows = run_gradcheck(0)
    assert len(rows) >= 6
    names = {r.component for r in rows}
    for expected in ("conv", "pool", "gcn", "ce", "soft_cldice", "end_to_end"):
        assert any(n.startswith(expected) for n in names), expected
    assert all(f"net.gcn{j}" in names for j in range(1, 12))
    for r in rows:
        assert r.ok, r
        assert r.checked > 0


def test_perturbed_gradients_are_caught():
    rows = run_gradcheck(0, count=4, perturb=1e-2)
    assert not any(r.ok for r in rows)


def test_check_coordinates_on_quadratic():
    x = np.array([1.0, -2.0, 3.0])
    rng = np.random.default_rng(0)
    res = check_coordinates("quad", x, 2 * x, lambda: (float((x**2).sum()), b""), rng, 3)
    assert res.ok and res.checked == 3 and res.rejected == 0
    np.testing.assert_array_equal(x, [1.0, -2.0, 3.0])


def test_check_coordinates_rejects_kinks():
    x = np.array([0.0, 0.0, 0.0, 1.0])
    rng = np.random.default_rng(0)
    # |x| has a kink at 0: the sign pattern changes across the step there
    res = check_coordinates(
        "abs", x, np.sign(x), lambda: (float(np.abs(x).sum()), np.sign(x).tobytes()), rng, 3, max_draws=200
    )
    assert res.rejected > 0 and res.checked == 3 and res.ok
