from dataclasses import dataclass
from typing import Dict, List, Tuple

from experiment_tools.seeding import make_rng
from neural.distributions import PreferencePair

TASK_MODES = ("main", "appendix_b1")


@dataclass(frozen=True)
class ToyTask:
    """
    Preference data over a tiny prompt/response space. In `main` mode every
    prompt has one (chosen, rejected) pair and its two remaining responses are
    out-of-distribution; `appendix_b1` uses all four responses in two pairs.
    """

    num_prompts: int
    num_responses: int
    pairs: Tuple[PreferencePair, ...]
    ood_indices: Tuple[Tuple[int, ...], ...]
    seed: int
    mode: str = "main"

    def pairs_for(self, prompt: int) -> List[PreferencePair]:
        return [pair for pair in self.pairs if pair.prompt == prompt]

    def roles(self, prompt: int) -> Dict[int, str]:
        roles = {response: "ood" for response in self.ood_indices[prompt]}
        for pair in self.pairs_for(prompt):
            roles[pair.chosen] = "chosen"
            roles[pair.rejected] = "rejected"
        return roles

    def to_dict(self) -> Dict:
        return {
            "num_prompts": self.num_prompts,
            "num_responses": self.num_responses,
            "pairs": [list(pair) for pair in self.pairs],
            "ood_indices": [list(ood) for ood in self.ood_indices],
            "seed": self.seed,
            "mode": self.mode,
        }


def generate_toy_task(
    seed: int, num_prompts: int = 4, num_responses: int = 4, mode: str = "main"
) -> ToyTask:
    if mode not in TASK_MODES:
        raise ValueError(f"unknown task mode '{mode}', expected one of {TASK_MODES}")
    if num_responses < 2 or (mode == "appendix_b1" and num_responses < 4):
        raise ValueError(f"{num_responses} responses are too few for mode '{mode}'")

    rng = make_rng(seed, "task")
    pairs, ood_indices = [], []
    for prompt in range(num_prompts):
        order = [int(i) for i in rng.permutation(num_responses)]
        if mode == "main":
            pairs.append(PreferencePair(prompt, order[0], order[1]))
            ood_indices.append(tuple(sorted(order[2:])))
        else:
            pairs.append(PreferencePair(prompt, order[0], order[1]))
            pairs.append(PreferencePair(prompt, order[2], order[3]))
            ood_indices.append(tuple(sorted(order[4:])))
    return ToyTask(
        num_prompts=num_prompts,
        num_responses=num_responses,
        pairs=tuple(pairs),
        ood_indices=tuple(ood_indices),
        seed=seed,
        mode=mode,
    )
