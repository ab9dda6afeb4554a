"""Run configuration, checkpoint documents and atomic file output."""

from __future__ import annotations

import base64
import dataclasses
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .env import ObsMode
from .neural import Activation, AdamState, Mlp, ShapeError
from .reward import RewardConfig
from .td3_agent import ReplayBuffer, Td3Agent, Td3Config
from .world_sim import Route, ScenarioConfig

CHECKPOINT_TAG = "TD3CKPT"
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Every tunable of a training or evaluation run, as one flat record."""

    # learner
    gamma: float = 0.99
    lr: float = 3e-4
    batch: int = 64
    exploration_noise_sigma: float = 0.1
    exploration_steps: int = 10000
    policy_delay: int = 2
    tau: float = 0.005
    target_noise_sigma: float = 0.2
    target_noise_clip: float = 0.5
    episodes: int = 2000
    max_steps: int = 500
    buffer_capacity: int = 5000
    hidden_units: int = 256
    hidden_layers: int = 2
    # reward
    c_collision: float = 100.0
    v_limit: float = 8.33
    include_speed_term: bool = True
    speed_weight: float = 0.05
    # scenario and map
    scenario: str = "desk"
    veh: int = 4
    ped: int = 2
    route: str = "Left"
    dt: float = 0.1
    lane_width: float = 3.5
    arm_length: float = 60.0
    spawn_distance: float = 30.0
    traffic_speed_limit: float = 8.33
    crosswalk_fraction: float = 0.8
    # environment and run
    obs_mode: str = "vector"
    goal_radius: float = 2.0
    checkpoint_every: int = 100
    out_dir: str = "runs/default"
    seed: int = 0

    def __post_init__(self) -> None:
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            want = {"float": float, "int": int, "bool": bool, "str": str}[f.type]
            if want is float and isinstance(value, int) and not isinstance(value, bool):
                object.__setattr__(self, f.name, float(value))
            elif not isinstance(value, want) or (want is int and isinstance(value, bool)):
                raise ConfigError(f"config key '{f.name}' expects {f.type}, got {value!r}")
        try:
            ObsMode(self.obs_mode)
            Route(self.route)
            self.td3()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.hidden_units < 1 or self.hidden_layers < 1:
            raise ConfigError("config keys 'hidden_units' and 'hidden_layers' must be >= 1")
        if self.veh < 0 or self.ped < 0:
            raise ConfigError("config keys 'veh' and 'ped' must be >= 0")
        if self.checkpoint_every < 1:
            raise ConfigError("config key 'checkpoint_every' must be >= 1")

    def td3(self) -> Td3Config:
        return Td3Config(
            gamma=self.gamma, lr=self.lr, batch=self.batch, exploration_noise_sigma=self.exploration_noise_sigma,
            exploration_steps=self.exploration_steps, policy_delay=self.policy_delay, tau=self.tau,
            target_noise_sigma=self.target_noise_sigma, target_noise_clip=self.target_noise_clip,
            episodes=self.episodes, max_steps=self.max_steps, buffer_capacity=self.buffer_capacity,
            hidden=(self.hidden_units,) * self.hidden_layers,
        )

    def reward(self) -> RewardConfig:
        return RewardConfig(self.c_collision, self.v_limit, self.include_speed_term, self.speed_weight)

    def scenario_config(self, seed: Optional[int] = None) -> ScenarioConfig:
        return ScenarioConfig(
            veh=self.veh, ped=self.ped, route=Route(self.route), seed=self.seed if seed is None else seed,
            dt=self.dt, lane_width=self.lane_width, arm_length=self.arm_length,
            spawn_distance=self.spawn_distance, traffic_speed_limit=self.traffic_speed_limit,
            crosswalk_fraction=self.crosswalk_fraction, name=self.scenario,
        )

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


CONFIG_KEYS = tuple(f.name for f in dataclasses.fields(RunConfig))


def config_from_dict(doc: dict, source: str = "<config>") -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    unknown = sorted(set(doc) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"{source}: unknown config key '{unknown[0]}'")
    for key, value in doc.items():
        if isinstance(value, (dict, list)) or value is None:
            raise ConfigError(f"{source}: config key '{key}' must be a scalar")
    try:
        return RunConfig(**doc)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return config_from_dict(doc, str(path))


def canonical_json(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, indent=1, ensure_ascii=True, allow_nan=False) + "\n"


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        os.chmod(tmp, 0o644)
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_config(cfg: RunConfig, path: str | Path) -> None:
    atomic_write_text(path, canonical_json(cfg.to_dict()))


# ------------------------------------------------------------------ checkpoints


def _encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a)
    dtype = "<f8" if a.dtype.kind == "f" else "<i8"
    return {"dtype": dtype, "shape": list(a.shape),
            "data": base64.b64encode(a.astype(dtype).tobytes()).decode("ascii")}


def _decode_array(doc: dict, where: str) -> np.ndarray:
    try:
        raw = base64.b64decode(doc["data"].encode("ascii"), validate=True)
        a = np.frombuffer(raw, dtype=np.dtype(doc["dtype"])).copy()
        return a.reshape(doc["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{where}: malformed array ({exc})") from None


def _encode_net(net: Mlp) -> dict:
    layers = [{"weight": _encode_array(w), "bias": _encode_array(b)} for w, b in zip(net.weights, net.biases)]
    return {"layer_sizes": list(net.layer_sizes), "output_activation": net.output_activation.value,
            "layers": layers}


def _decode_net(doc: dict, name: str, expect: Mlp) -> Mlp:
    sizes = tuple(doc.get("layer_sizes", ()))
    layers = doc.get("layers", [])
    if sizes != expect.layer_sizes or len(layers) != len(expect.weights):
        raise CheckpointError(f"{name}: layer sizes {list(sizes)} do not match {list(expect.layer_sizes)}")
    ws, bs = [], []
    for k, (layer, w0, b0) in enumerate(zip(layers, expect.weights, expect.biases)):
        w = _decode_array(layer["weight"], f"{name} layer {k} weight")
        b = _decode_array(layer["bias"], f"{name} layer {k} bias")
        if w.shape != w0.shape:
            raise CheckpointError(f"{name} layer {k}: weight shape {list(w.shape)}, expected {list(w0.shape)}")
        if b.shape != b0.shape:
            raise CheckpointError(f"{name} layer {k}: bias shape {list(b.shape)}, expected {list(b0.shape)}")
        ws.append(w)
        bs.append(b)
    try:
        return Mlp.from_layers(ws, bs, Activation(doc["output_activation"]))
    except (ShapeError, KeyError, ValueError) as exc:
        raise CheckpointError(f"{name}: {exc}") from None


def _encode_opt(opt: AdamState) -> dict:
    return {"m": _encode_array(opt.m), "v": _encode_array(opt.v), "lr": opt.lr, "beta1": opt.beta1,
            "beta2": opt.beta2, "eps": opt.eps, "step": opt.step}


def _decode_opt(doc: dict, name: str, net: Mlp) -> AdamState:
    m = _decode_array(doc["m"], f"{name} optimizer m")
    v = _decode_array(doc["v"], f"{name} optimizer v")
    if m.shape != net.params.shape or v.shape != net.params.shape:
        raise CheckpointError(f"{name} optimizer: moment shape {list(m.shape)}, expected {list(net.params.shape)}")
    return AdamState(m, v, doc["lr"], doc["beta1"], doc["beta2"], doc["eps"], int(doc["step"]))


def _encode_buffer(buf: ReplayBuffer) -> dict:
    n = buf.size
    return {"capacity": buf.capacity, "cursor": buf.cursor, "size": n, "pushed": buf.pushed,
            "states": _encode_array(buf.states[:n]), "actions": _encode_array(buf.actions[:n]),
            "rewards": _encode_array(buf.rewards[:n]), "next_states": _encode_array(buf.next_states[:n]),
            "done_codes": _encode_array(buf.done_codes[:n]), "ids": _encode_array(buf.ids[:n])}


def _decode_buffer(doc: dict, obs_size: int) -> ReplayBuffer:
    buf = ReplayBuffer(obs_size, int(doc["capacity"]))
    n = int(doc["size"])
    for name in ("states", "actions", "rewards", "next_states", "done_codes", "ids"):
        arr = _decode_array(doc[name], f"replay {name}")
        target = getattr(buf, name)
        if arr.shape[0] != n or arr.shape[1:] != target.shape[1:]:
            raise CheckpointError(f"replay {name}: shape {list(arr.shape)} does not match the buffer")
        target[:n] = arr
    buf.size, buf.cursor, buf.pushed = n, int(doc["cursor"]), int(doc["pushed"])
    return buf


@dataclass
class CheckpointData:
    config: RunConfig
    agent: Td3Agent
    episode: int = 0
    buffer: Optional[ReplayBuffer] = None


def checkpoint_document(cfg: RunConfig, agent: Td3Agent, episode: int = 0,
                        buffer: Optional[ReplayBuffer] = None) -> dict:
    doc = {
        "format": CHECKPOINT_TAG,
        "version": CHECKPOINT_VERSION,
        "config": cfg.to_dict(),
        "obs_size": agent.obs_size,
        "networks": {name: _encode_net(net) for name, net in agent.networks().items()},
        "optimizers": {name: _encode_opt(opt) for name, opt in agent.optimizers().items()},
        "updates": agent.updates,
        "actor_updates": agent.actor_updates,
        "env_steps": agent.env_steps,
        "episode": episode,
        "rng_state": agent.rng.bit_generator.state,
    }
    if buffer is not None:
        doc["replay"] = _encode_buffer(buffer)
    return doc


def save_checkpoint(path: str | Path, cfg: RunConfig, agent: Td3Agent, episode: int = 0,
                    buffer: Optional[ReplayBuffer] = None) -> None:
    atomic_write_text(path, canonical_json(checkpoint_document(cfg, agent, episode, buffer)))


def load_checkpoint(path: str | Path) -> CheckpointData:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not a checkpoint document (line {exc.lineno}: {exc.msg})") from None
    return checkpoint_from_document(doc, str(path))


def checkpoint_from_document(doc: dict, source: str = "<checkpoint>") -> CheckpointData:
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_TAG:
        raise CheckpointError(f"{source}: missing {CHECKPOINT_TAG} format tag")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{source}: checkpoint version {doc.get('version')} is not supported "
                              f"(expected {CHECKPOINT_VERSION})")
    try:
        cfg = config_from_dict(doc["config"], f"{source} config")
        obs_size = int(doc["obs_size"])
        agent = Td3Agent.create(obs_size, cfg.td3(), seed=0)
        nets = {name: _decode_net(doc["networks"][name], name, net) for name, net in agent.networks().items()}
        for name, net in nets.items():
            setattr(agent, name, net)
        for name, net_name in (("actor", "actor"), ("critic1", "critic1"), ("critic2", "critic2")):
            setattr(agent, f"{name}_opt", _decode_opt(doc["optimizers"][name], name, nets[net_name]))
        agent.updates = int(doc["updates"])
        agent.actor_updates = int(doc["actor_updates"])
        agent.env_steps = int(doc["env_steps"])
        agent.rng.bit_generator.state = doc["rng_state"]
        buffer = _decode_buffer(doc["replay"], obs_size) if "replay" in doc else None
        return CheckpointData(cfg, agent, int(doc["episode"]), buffer)
    except KeyError as exc:
        raise CheckpointError(f"{source}: missing field {exc}") from None
