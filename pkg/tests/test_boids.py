import math

import numpy as np
import pytest

from gridcast.boids import (
    Agent,
    SceneObject,
    WorldConfig,
    agents_to_objects,
    avoidance_step,
    init_world,
    rasterize,
    simulate_objects,
)
from gridcast.errors import ConfigError, SimulationError


def test_config_rejects_zero_agents():
    with pytest.raises(ConfigError):
        WorldConfig(n_agents=0)


def test_config_rejects_tiny_world():
    with pytest.raises(ConfigError):
        WorldConfig(width=4, height=50)


def test_config_rejects_nonpositive_separation():
    with pytest.raises(ConfigError):
        WorldConfig(separation_radius=0.0)


def test_init_single_agent_speed_and_bounds():
    cfg = WorldConfig(n_agents=1, seed=5)
    (agent,) = init_world(cfg)
    assert abs(agent.speed - cfg.speed) < 1e-12
    assert 0 <= agent.x < cfg.width and 0 <= agent.y < cfg.height


def test_init_world_deterministic_in_seed():
    cfg = WorldConfig(seed=99)
    assert init_world(cfg) == init_world(cfg)
    other = init_world(WorldConfig(seed=100))
    assert other != init_world(cfg)


def test_init_world_no_initial_overlap():
    cfg = WorldConfig(n_agents=12, seed=3)
    agents = init_world(cfg)
    for i, a in enumerate(agents):
        for b in agents[i + 1 :]:
            assert math.hypot(a.x - b.x, a.y - b.y) >= 2 * cfg.radius


def test_init_world_impossible_packing_raises():
    # 40 radius-2 agents cannot fit an 8x8 world without overlap.
    cfg = WorldConfig(width=8, height=8, n_agents=40, seed=0)
    with pytest.raises(SimulationError):
        init_world(cfg)


def test_single_agent_goes_straight():
    cfg = WorldConfig(n_agents=1, seed=1)
    a = Agent(x=25.0, y=25.0, vx=cfg.speed, vy=0.0, radius=2.0)
    (moved,) = avoidance_step([a], cfg)
    assert moved.x == pytest.approx(25.0 + cfg.speed)
    assert moved.y == pytest.approx(25.0)
    assert moved.vy == pytest.approx(0.0)


def test_head_on_pair_turns_symmetrically():
    cfg = WorldConfig(seed=2)
    left = Agent(x=23.0, y=25.0, vx=cfg.speed, vy=0.0, radius=2.0)
    right = Agent(x=27.0, y=25.0, vx=-cfg.speed, vy=0.0, radius=2.0)
    a, b = avoidance_step([left, right], cfg)
    ta = math.atan2(a.vy, a.vx)
    tb = math.atan2(b.vy, b.vx) - math.pi  # heading relative to its start
    # Separation pushes straight along x here, so the turn direction comes
    # from the coincident-tiebreak-free geometry: magnitudes must match.
    assert abs(abs(ta) - abs((tb + math.pi) % (2 * math.pi) - math.pi)) < 1e-9


def test_avoidance_raises_min_distance_over_disabled_run():
    cfg = WorldConfig(n_agents=10, seed=11)
    off = WorldConfig(n_agents=10, seed=11, separation_gain=0.0)

    def min_pairwise(config):
        agents = init_world(config)
        smallest = math.inf
        for _ in range(300):
            agents = avoidance_step(agents, config)
            for i, a in enumerate(agents):
                for b in agents[i + 1 :]:
                    smallest = min(smallest, math.hypot(a.x - b.x, a.y - b.y))
        return smallest

    assert min_pairwise(cfg) > min_pairwise(off)


def test_speed_conserved_and_contained_long_run():
    cfg = WorldConfig(n_agents=6, seed=21)
    agents = init_world(cfg)
    for _ in range(10_000):
        agents = avoidance_step(agents, cfg)
        for a in agents:
            assert abs(a.speed - cfg.speed) < 1e-9
            assert 0.0 <= a.x < cfg.width and 0.0 <= a.y < cfg.height


def test_coincident_agents_separate_deterministically():
    cfg = WorldConfig(seed=7)
    pair = [
        Agent(x=10.0, y=10.0, vx=cfg.speed, vy=0.0, radius=2.0),
        Agent(x=10.0, y=10.0, vx=cfg.speed, vy=0.0, radius=2.0),
    ]
    assert avoidance_step(pair, cfg) == avoidance_step(pair, cfg)
    # The pushes point in distinct seed-determined directions, so the pair
    # must come apart once the turn clamp stops binding.
    agents = pair
    for _ in range(30):
        agents = avoidance_step(agents, cfg)
        for a in agents:
            assert math.isfinite(a.x) and math.isfinite(a.y)
    a, b = agents
    assert math.hypot(a.x - b.x, a.y - b.y) > 0.0


def test_rasterize_empty():
    assert rasterize([], 9, 9).sum() == 0


def test_rasterize_radius2_disk_is_13_cells():
    # Object centered on cell (4,4)'s center; enumerate the 5x5 block by hand:
    # offsets with di^2+dj^2 <= 4 are the plus-shape of 13 cells.
    frame = rasterize([SceneObject(x=4.5, y=4.5, radius=2.0)], 9, 9)
    assert frame.sum() == 13
    expected = np.zeros((9, 9), dtype=np.uint8)
    for di in range(-2, 3):
        for dj in range(-2, 3):
            if di * di + dj * dj <= 4:
                expected[4 + di, 4 + dj] = 1
    assert np.array_equal(frame, expected)


def test_rasterize_permutation_invariant(rng):
    objs = [
        SceneObject(x=float(rng.uniform(0, 20)), y=float(rng.uniform(0, 20)), radius=2.0)
        for _ in range(6)
    ]
    a = rasterize(objs, 20, 20)
    b = rasterize(list(reversed(objs)), 20, 20)
    assert np.array_equal(a, b)


def test_rasterize_clips_at_borders():
    frame = rasterize([SceneObject(x=0.0, y=0.0, radius=2.0)], 10, 10)
    assert frame[0, 0] == 1
    assert frame.sum() < 13


def test_simulate_objects_deterministic():
    cfg = WorldConfig(n_agents=4, seed=8)
    a = simulate_objects(cfg, 20)
    b = simulate_objects(cfg, 20)
    assert a == b
    assert len(a) == 20


def test_agents_to_objects_roundtrip_fields():
    cfg = WorldConfig(n_agents=3, seed=4)
    agents = init_world(cfg)
    objs = agents_to_objects(agents)
    for agent, obj in zip(agents, objs):
        assert (agent.x, agent.y, agent.radius) == (obj.x, obj.y, obj.radius)
