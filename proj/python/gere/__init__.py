"""Python wrapper around the compiled _gere extension.

When running against a CMake build tree (not an installed wheel), set
GERE_EXT_DIR to the directory containing the _gere shared object.
"""

import os
import sys

_ext_dir = os.environ.get("GERE_EXT_DIR")
if _ext_dir and _ext_dir not in sys.path:
    sys.path.insert(0, _ext_dir)

try:
    from . import _gere  # installed wheel keeps the extension inside the package
except ImportError:
    import _gere  # build-tree layout via GERE_EXT_DIR

ActivationState = _gere.ActivationState
classify_state = _gere.classify_state
combine_losses = _gere.combine_losses
f1_avg = _gere.f1_avg
kl_logit_loss = _gere.kl_logit_loss
l1_feature_loss = _gere.l1_feature_loss
l2_feature_loss = _gere.l2_feature_loss
pack_states = _gere.pack_states
plan_bi = _gere.plan_bi
plan_vanilla_mix = _gere.plan_vanilla_mix
replay_count = _gere.replay_count
tm_loss = _gere.tm_loss
unpack_states = _gere.unpack_states

__all__ = [
    "ActivationState",
    "classify_state",
    "combine_losses",
    "f1_avg",
    "kl_logit_loss",
    "l1_feature_loss",
    "l2_feature_loss",
    "pack_states",
    "plan_bi",
    "plan_vanilla_mix",
    "replay_count",
    "tm_loss",
    "unpack_states",
]
