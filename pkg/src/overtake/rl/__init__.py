"""PPO with a shared multi-agent policy for the overtaking task."""

from .env import SCRIPTED, SELF_PLAY, EnvConfig, OvertakeEnv, StepOut
from .network import PolicyNet, backward, forward, init_policy, policy_forward
from .observation import OBS_SIZE, ActionScaler, ObsConfig, build_observation, scale_action
from .ppo import (Batch, LossInfo, PpoConfig, backprop_and_step, gae_advantages, loss_and_grads,
                  ppo_loss, ppo_update, sample_action)
from .reward import COMPONENTS, RewardWeights, TrackPos, compute_reward, overtake_term
from .rollout import Rollout, collect_rollout
from .train import (TrainConfig, TrainingDiverged, config_hash, load_checkpoint,
                    policy_signature, save_checkpoint, train, train_config_from_dict)

__all__ = [
    "SCRIPTED", "SELF_PLAY", "EnvConfig", "OvertakeEnv", "StepOut", "PolicyNet", "backward",
    "forward", "init_policy", "policy_forward", "OBS_SIZE", "ActionScaler", "ObsConfig",
    "build_observation", "scale_action", "Batch", "LossInfo", "PpoConfig", "backprop_and_step",
    "gae_advantages", "loss_and_grads", "ppo_loss", "ppo_update", "sample_action", "COMPONENTS",
    "RewardWeights", "TrackPos", "compute_reward", "overtake_term", "Rollout", "collect_rollout",
    "TrainConfig", "TrainingDiverged", "config_hash", "load_checkpoint", "policy_signature",
    "save_checkpoint", "train", "train_config_from_dict",
]
