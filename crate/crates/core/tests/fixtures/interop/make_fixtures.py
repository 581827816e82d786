"""Writes interop fixtures with the reference Python safetensors writer.

Run from this directory: python3 make_fixtures.py
"""
import json

import torch
from safetensors.torch import save_file

g = torch.Generator().manual_seed(1234)


def rand(shape, dtype):
    return (torch.randn(tuple(shape), generator=g) * 0.05).to(dtype)


base = {
    "model.layers.0.self_attn.q_proj.weight": rand((4, 3), torch.bfloat16),
    "model.layers.0.mlp.up_proj.weight": rand((2, 2, 2), torch.float16),
    "model.norm.weight": 1.0 + rand((5,), torch.float32),
    "scalar": torch.tensor(0.25, dtype=torch.float32),
    "empty": torch.zeros((0, 3), dtype=torch.bfloat16),
}
post = {k: (v.float() + rand(tuple(v.shape), torch.float32)).to(v.dtype) for k, v in base.items()}

save_file(base, "base.safetensors", metadata={"source": "reference-writer"})
save_file(post, "post.safetensors")

expected = {
    k: {
        "dtype": str(base[k].dtype).replace("torch.", ""),
        "shape": list(base[k].shape),
        "delta": (post[k].float() - base[k].float()).flatten().tolist(),
        "post": post[k].float().flatten().tolist(),
    }
    for k in base
}
with open("expected.json", "w") as f:
    json.dump(expected, f, indent=1, sort_keys=True)
