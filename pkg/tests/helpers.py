"""Small hand-built scenes for unit tests."""

import numpy as np

from corridor.scene import AgentTrack, Scene


def ego_log(v=0.0, heading=0.0, t_lo=-5.0, t_hi=5.0, dt=0.5):
    t = np.arange(t_lo, t_hi + dt / 2, dt)
    px = v * t * np.cos(heading)
    py = v * t * np.sin(heading)
    return np.column_stack([t, px, py, np.full_like(t, heading), np.full_like(t, v)])


def static_agent(agent_id, x, y, theta=0.0, half_length=2.0, half_width=1.0, times=(-5.0, 5.0)):
    poses = np.array([[t, x, y, theta] for t in times])
    return AgentTrack(agent_id, half_length, half_width, poses)


def simple_scene(v=0.0, agents=(), curbs=(), lanes=()):
    return Scene(dt=0.5, horizon=6, wheelbase=2.5, ego_log=ego_log(v), agents=agents, curbs=curbs, lanes=lanes)
