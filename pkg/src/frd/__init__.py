"""Federated reinforcement distillation on CartPole with numpy actor-critic agents."""

__version__ = "0.1.0"
