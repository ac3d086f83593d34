"""Entropy-weighted fine-tuning for masked diffusion language models."""

import json

from ._weft import (
    DenoiserConfig,
    Model,
    check_answer,
    decode_tokens,
    encode,
    entropy,
    expected_mask_prob,
    mask_plan,
    rate,
    t_i_from_t,
    transition,
)
from . import _weft


def verify(profile="fast", seed=20240601, inject_beta_sign_flip=False):
    """Run the property suite and return the report as a dict."""
    return json.loads(_weft.verify_json(profile, seed, inject_beta_sign_flip))


def dataset(task, seed, split="train", n=8, modulus=10):
    return json.loads(_weft.dataset_json(task, seed, split, n, modulus))


__all__ = [
    "DenoiserConfig",
    "Model",
    "check_answer",
    "dataset",
    "decode_tokens",
    "encode",
    "entropy",
    "expected_mask_prob",
    "mask_plan",
    "rate",
    "t_i_from_t",
    "transition",
    "verify",
]
