"""File formats (see docs/formats.md).

MDP files are JSON documents; floats are written with ``repr`` so a
load/save round trip is bit-exact for finite doubles.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from dhrl.abstraction import StatePartition
from dhrl.augment import AugmentedMdp, AugmentedState
from dhrl.mdp import FiniteMdp, InvalidMdpError

MDP_FORMAT = "dhrl-mdp"
FORMAT_VERSION = 1


class FormatError(ValueError):
    pass


def atomic_write(path, text: str):
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def mdp_to_dict(mdp: FiniteMdp) -> dict:
    return {
        "format": MDP_FORMAT,
        "version": FORMAT_VERSION,
        "num_states": mdp.num_states,
        "num_actions": mdp.num_actions,
        "discount": mdp.discount,
        "reward": mdp.reward.ravel().tolist(),
        "transition": mdp.transition.ravel().tolist(),
    }


def mdp_from_dict(doc: dict) -> FiniteMdp:
    if doc.get("format") != MDP_FORMAT:
        raise FormatError(f"expected format {MDP_FORMAT!r}, got {doc.get('format')!r}")
    try:
        S, A = int(doc["num_states"]), int(doc["num_actions"])
        reward = np.array(doc["reward"], dtype=np.float64)
        transition = np.array(doc["transition"], dtype=np.float64)
        discount = float(doc["discount"])
    except KeyError as exc:
        raise FormatError(f"missing field {exc.args[0]!r}") from None
    if reward.size != S * A:
        raise FormatError(f"reward has {reward.size} entries, expected {S * A}")
    if transition.size != S * A * S:
        raise FormatError(f"transition has {transition.size} entries, expected {S * A * S}")
    return FiniteMdp(transition.reshape(S, A, S), reward.reshape(S, A), discount)


def dumps_mdp(mdp: FiniteMdp) -> str:
    return json.dumps(mdp_to_dict(mdp), indent=1) + "\n"


def loads_mdp(text: str) -> FiniteMdp:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return mdp_from_dict(doc)


def save_mdp(mdp: FiniteMdp, path):
    atomic_write(path, dumps_mdp(mdp))


def load_mdp(path, validate: bool = True) -> FiniteMdp:
    mdp = loads_mdp(Path(path).read_text(encoding="utf-8"))
    if validate:
        try:
            mdp.checked()
        except InvalidMdpError as exc:
            raise FormatError(f"{path}: {exc}") from None
    return mdp


def sidecar_lines(aug: AugmentedMdp) -> list[str]:
    """``index,base_state,history`` with the history space-separated, oldest first."""
    lines = ["index,base_state,history"]
    for i, x in enumerate(aug.states):
        lines.append(f"{i},{x.base_state},{' '.join(map(str, x.action_history))}")
    return lines


def save_augmented(aug: AugmentedMdp, mdp_path, sidecar_path):
    save_mdp(aug.mdp, mdp_path)
    atomic_write(sidecar_path, "\n".join(sidecar_lines(aug)) + "\n")


def load_sidecar(path) -> list[AugmentedState]:
    rows = Path(path).read_text(encoding="utf-8").splitlines()[1:]
    out = []
    for i, row in enumerate(rows):
        idx, s, hist = row.split(",")
        if int(idx) != i:
            raise FormatError(f"sidecar row {i + 2}: index {idx} out of order")
        out.append(AugmentedState(int(s), tuple(int(a) for a in hist.split())))
    return out


def partition_lines(part: StatePartition, beliefs: np.ndarray | None = None) -> list[str]:
    """``augmented_index,block_index,belief_0,...`` (belief columns optional)."""
    width = 0 if beliefs is None else beliefs.shape[1]
    header = ["augmented_index", "block_index"] + [f"belief_{i}" for i in range(width)]
    lines = [",".join(header)]
    for i, b in enumerate(part.block_of):
        cells = [str(i), str(int(b))]
        if beliefs is not None:
            cells += [repr(float(v)) for v in beliefs[i]]
        lines.append(",".join(cells))
    return lines


def save_partition(part: StatePartition, path, beliefs: np.ndarray | None = None):
    atomic_write(path, "\n".join(partition_lines(part, beliefs)) + "\n")


def load_partition(path, epsilon: float = 0.0) -> StatePartition:
    """Read a partition table; blocks are renumbered densely if needed."""
    rows = Path(path).read_text(encoding="utf-8").splitlines()
    labels = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row.strip():
            continue
        cells = row.split(",")
        try:
            idx, block = int(cells[0]), int(cells[1])
        except (ValueError, IndexError):
            raise FormatError(f"{path}:{lineno}: expected 'augmented_index,block_index,...'") from None
        if idx != len(labels):
            raise FormatError(f"{path}:{lineno}: augmented index {idx} out of order")
        labels.append(block)
    return StatePartition.from_labels(labels, epsilon)


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"
