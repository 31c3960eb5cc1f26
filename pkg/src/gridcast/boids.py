"""Multi-agent motion with collision avoidance only, plus grid rasterization.

Agents move at constant speed and steer away from neighbours inside a
separation radius; alignment and cohesion are deliberately absent.  World
units equal grid cells, so a frame of the simulation rasterizes directly
onto an occupancy grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, SimulationError

# Push applied between exactly coincident agents, whose 1/distance
# repulsion is undefined.
COINCIDENT_PUSH = 1e3
_COINCIDENT_EPS = 1e-12


@dataclass(frozen=True)
class SceneObject:
    """A disk-shaped object in continuous world coordinates."""

    x: float
    y: float
    radius: float


@dataclass
class Agent:
    x: float
    y: float
    vx: float
    vy: float
    radius: float

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)


@dataclass(frozen=True)
class WorldConfig:
    width: int = 50
    height: int = 50
    n_agents: int = 10
    radius: float = 2.0
    speed: float = 0.5
    max_turn: float = 0.3
    separation_radius: float = 6.0
    separation_gain: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise ConfigError(f"world must be at least 8x8, got {self.width}x{self.height}")
        if self.n_agents < 1:
            raise ConfigError(f"n_agents must be >= 1, got {self.n_agents}")
        if self.separation_radius <= 0:
            raise ConfigError("separation_radius must be positive")
        if self.speed <= 0 or self.radius <= 0:
            raise ConfigError("speed and radius must be positive")


def init_world(config: WorldConfig) -> list[Agent]:
    """Place agents uniformly without initial overlap; headings uniform."""
    rng = np.random.default_rng(config.seed & 0xFFFFFFFFFFFFFFFF)
    positions: list[tuple[float, float]] = []
    rejections = 0
    limit = 10 * config.n_agents**2
    while len(positions) < config.n_agents:
        x = rng.uniform(0.0, config.width)
        y = rng.uniform(0.0, config.height)
        if any(
            math.hypot(x - px, y - py) < 2.0 * config.radius for px, py in positions
        ):
            rejections += 1
            if rejections > limit:
                raise SimulationError(
                    f"could not place {config.n_agents} agents without overlap "
                    f"after {rejections} rejections"
                )
            continue
        positions.append((x, y))
    agents = []
    for x, y in positions:
        heading = rng.uniform(0.0, 2.0 * math.pi)
        agents.append(
            Agent(
                x=x,
                y=y,
                vx=config.speed * math.cos(heading),
                vy=config.speed * math.sin(heading),
                radius=config.radius,
            )
        )
    return agents


def _coincident_direction(seed: int, i: int, j: int) -> tuple[float, float]:
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, i, j])
    angle = rng.uniform(0.0, 2.0 * math.pi)
    return math.cos(angle), math.sin(angle)


def _wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def avoidance_step(agents: list[Agent], config: WorldConfig) -> list[Agent]:
    """Advance every agent one frame under the separation rule.

    The separation vector sums (p_i - p_j) / |p_i - p_j|^2 over neighbours
    closer than the separation radius; the heading turns toward
    v + separation_gain * s by at most max_turn, speed is renormalized, and
    walls reflect the normal velocity component.
    """
    out = []
    for i, a in enumerate(agents):
        sx = sy = 0.0
        for j, b in enumerate(agents):
            if j == i:
                continue
            dx = a.x - b.x
            dy = a.y - b.y
            dist = math.hypot(dx, dy)
            if dist >= config.separation_radius:
                continue
            if dist < _COINCIDENT_EPS:
                ux, uy = _coincident_direction(config.seed, i, j)
                sx += COINCIDENT_PUSH * ux
                sy += COINCIDENT_PUSH * uy
            else:
                sx += dx / (dist * dist)
                sy += dy / (dist * dist)

        dx = a.vx + config.separation_gain * sx
        dy = a.vy + config.separation_gain * sy
        heading = math.atan2(a.vy, a.vx)
        if dx != 0.0 or dy != 0.0:
            desired = math.atan2(dy, dx)
            turn = _wrap_angle(desired - heading)
            turn = max(-config.max_turn, min(config.max_turn, turn))
            heading += turn
        vx = config.speed * math.cos(heading)
        vy = config.speed * math.sin(heading)

        x = a.x + vx
        y = a.y + vy
        if x < 0.0:
            x, vx = -x, -vx
        elif x >= config.width:
            x, vx = 2.0 * config.width - x, -vx
        if y < 0.0:
            y, vy = -y, -vy
        elif y >= config.height:
            y, vy = 2.0 * config.height - y, -vy
        # A reflected point can land exactly on the wall; keep the box half-open.
        x = min(max(x, 0.0), math.nextafter(config.width, 0.0))
        y = min(max(y, 0.0), math.nextafter(config.height, 0.0))

        out.append(Agent(x=x, y=y, vx=vx, vy=vy, radius=a.radius))
    return out


def rasterize(objects, height: int, width: int) -> np.ndarray:
    """Binary H×W frame: cell (i,j) is 1 iff its center (j+0.5, i+0.5) lies
    within some object's radius."""
    frame = np.zeros((height, width), dtype=np.uint8)
    for obj in objects:
        r = obj.radius
        i_lo = max(0, math.floor(obj.y - r - 0.5))
        i_hi = min(height - 1, math.ceil(obj.y + r - 0.5))
        j_lo = max(0, math.floor(obj.x - r - 0.5))
        j_hi = min(width - 1, math.ceil(obj.x + r - 0.5))
        if i_lo > i_hi or j_lo > j_hi:
            continue
        ii, jj = np.meshgrid(
            np.arange(i_lo, i_hi + 1), np.arange(j_lo, j_hi + 1), indexing="ij"
        )
        d2 = (jj + 0.5 - obj.x) ** 2 + (ii + 0.5 - obj.y) ** 2
        hit = d2 <= r * r
        frame[i_lo : i_hi + 1, j_lo : j_hi + 1] |= hit.astype(np.uint8)
    return frame


def agents_to_objects(agents: list[Agent]) -> list[SceneObject]:
    return [SceneObject(x=a.x, y=a.y, radius=a.radius) for a in agents]


def simulate_objects(config: WorldConfig, n_frames: int) -> list[list[SceneObject]]:
    """Run the world for ``n_frames`` and snapshot the objects of each frame."""
    if n_frames < 1:
        raise ConfigError(f"n_frames must be >= 1, got {n_frames}")
    agents = init_world(config)
    frames = [agents_to_objects(agents)]
    for _ in range(n_frames - 1):
        agents = avoidance_step(agents, config)
        frames.append(agents_to_objects(agents))
    return frames


def with_seed(config: WorldConfig, seed: int) -> WorldConfig:
    return replace(config, seed=seed)
