import math

import shlab

SCENARIO = """
grid.nx = 16
physics.T = 0.2
physics.a = 0.5
friction.gamma = 0.2
initial.h = "1 + 0.2*sin(2*pi*x1)*cos(2*pi*x2)"
initial.u1 = "0.3"
initial.u2 = "0.1*cos(2*pi*x1)"
workbench.nodes = 9
workbench.patches = 2
"""


def close(a, b, tol):
    return abs(a - b) <= tol * (1.0 + abs(b))


def main():
    grid = shlab.Grid(16)
    assert (grid.nx, grid.ny) == (16, 16) and close(grid.dx, 1 / 16, 1e-15)
    xs = grid.centers()

    rhs = [8 * math.pi**2 * math.sin(2 * math.pi * x) * math.sin(2 * math.pi * y) for x, y in xs]
    u = shlab.poisson_solve(grid, rhs)
    assert all(close(v, r / (8 * math.pi**2), 1e-10) for v, r in zip(u, rhs))

    (vx, vy), mean, _ = shlab.helmholtz(grid, [1.5] * len(xs), [math.sin(2 * math.pi * x) for x, _ in xs])
    assert close(mean[0], 1.5, 1e-14) and max(map(abs, vx)) < 1e-12

    assert close(shlab.lambda_max_traceless(3.0, 4.0), 5.0, 1e-15)

    n = len(xs)
    qx, qy = shlab.friction_shrink(grid, [3.0] * n, [4.0] * n, [1.0] * n, gamma=2.0, dt=1.0)
    assert close(qx[0], 1.8, 1e-14) and close(qy[0], 2.4, 1e-14)

    try:
        shlab.Grid(7)
    except ValueError:
        pass
    else:
        raise AssertionError("odd grid accepted")

    scenario = shlab.Scenario.from_toml(SCENARIO)
    traj = scenario.simulate()
    mass = traj.mass()
    assert max(abs(m - mass[0]) for m in mass) < 1e-12
    assert traj.energy_residual() <= 1e-12
    h, _, _ = traj.state()
    assert min(h) > 0 and close(shlab.integrate(grid, h), mass[0], 1e-12)

    bench = scenario.workbench()
    lam = bench.find_lambda0()
    sub = bench.subsolution(lam)
    ok, margin, _ = sub.certificate()
    assert ok and margin > 0
    nxt, accepted = sub.improve(step=0, seed=1)
    assert nxt.certificate()[0]
    assert not accepted or nxt.energy_gap() > sub.energy_gap()

    print(f"shlab {shlab.__version__}: lambda0 {lam:.4f}, I {sub.energy_gap():.4f} -> {nxt.energy_gap():.4f}")
    print("smoke test passed")


if __name__ == "__main__":
    main()
