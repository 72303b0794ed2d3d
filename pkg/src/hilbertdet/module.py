"""Lightweight parameter registry plus a versioned checkpoint format.

A Module auto-registers Tensor attributes that carry gradients and nested
Module attributes; named_parameters() flattens to dotted keys, which is also
the checkpoint key scheme (stage{i}.block{j}.<leaf>), so ablated
configurations can partially load what they share.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

CHECKPOINT_VERSION = 1


class Module:
    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self.__dict__.setdefault("_params", {})[name] = value
        elif isinstance(value, Module):
            self.__dict__.setdefault("_children", {})[name] = value
        object.__setattr__(self, name, value)

    def register(self, name: str, child) -> None:
        """Register a child under an explicit name (for dynamic children)."""
        setattr(self, name, child)

    def extra_parameter_groups(self):
        """Override to expose parameters held in non-Module containers."""
        return ()

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, t in self.__dict__.get("_params", {}).items():
            out[prefix + name] = t
        for name, group in self.extra_parameter_groups():
            for leaf, t in group.items():
                out[f"{prefix}{name}.{leaf}"] = t
        for name, child in self.__dict__.get("_children", {}).items():
            out.update(child.named_parameters(prefix=f"{prefix}{name}."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def parameter_count(self) -> int:
        return sum(t.data.size for t in self.parameters())

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.grad = None


def save_checkpoint(path: str, module: Module, meta: dict | None = None) -> None:
    arrays = {f"param/{k}": v.data for k, v in module.named_parameters().items()}
    arrays["__checkpoint_version__"] = np.asarray(CHECKPOINT_VERSION)
    if meta:
        import json

        arrays["__meta_json__"] = np.frombuffer(
            json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8
        )
    np.savez(path, **arrays)


def load_checkpoint(path: str, module: Module, strict: bool = True) -> dict:
    """Load matching parameters in place; returns {loaded, skipped, missing}."""
    with np.load(path) as z:
        version = int(z["__checkpoint_version__"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(
                f"checkpoint version {version} != supported {CHECKPOINT_VERSION}"
            )
        stored = {k[len("param/"):]: z[k] for k in z.files if k.startswith("param/")}
    params = module.named_parameters()
    loaded, skipped = [], []
    for k, arr in stored.items():
        if k in params and params[k].data.shape == arr.shape:
            params[k].data[...] = arr
            loaded.append(k)
        else:
            skipped.append(k)
    missing = [k for k in params if k not in stored]
    if strict and (skipped or missing):
        raise ValueError(
            f"checkpoint mismatch: {len(skipped)} unplaceable, {len(missing)} missing"
        )
    return {"loaded": loaded, "skipped": skipped, "missing": missing}
