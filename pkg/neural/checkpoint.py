import json
import os

import numpy as np

from .modules import INIT_SCHEME, MlpPolicy, ShapeError

PARAM_NAMES = ("w1", "b1", "w2", "b2")


def save_policy(policy: MlpPolicy, path: str) -> str:
    """JSON checkpoint; floats are written with repr so the round trip is bit-exact."""
    payload = {
        "header": {
            "num_prompts": policy.num_prompts,
            "num_responses": policy.num_responses,
            "hidden": policy.hidden_size,
            "seed": policy.seed,
            "init": INIT_SCHEME,
        },
        "params": {
            name: param.tolist() for name, param in zip(PARAM_NAMES, policy.parameters())
        },
    }
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as f:
        json.dump(payload, f)
    return path


def load_policy(path: str) -> MlpPolicy:
    with open(path) as f:
        payload = json.load(f)
    header = payload["header"]
    params = [np.asarray(payload["params"][name], dtype=np.float64) for name in PARAM_NAMES]
    policy = MlpPolicy(*params, seed=header.get("seed"))
    expected = (header["hidden"], header["num_prompts"], header["num_responses"])
    if (policy.hidden_size, policy.num_prompts, policy.num_responses) != expected:
        raise ShapeError(f"checkpoint {path} does not match its header {header}")
    return policy
