from .buffer import (CSV_HEADER, ReplayBuffer, Transition, epsilon_greedy, is_terminated,
                     make_expert_buffer, mc_return)
from .images import GlyphDataset, MaskedImageEnv, glyph_generate, glyph_template
from .tabular import (TabularMDP, brute_force_optimal, chain_mdp, dp_policy_evaluation,
                      exact_policy_value, greedy_policy, grid_mdp, mc_policy_evaluation,
                      sample_returns, uniform_policy, value_iteration)

__all__ = [
    "CSV_HEADER", "ReplayBuffer", "Transition", "epsilon_greedy", "is_terminated",
    "make_expert_buffer", "mc_return", "GlyphDataset", "MaskedImageEnv", "glyph_generate",
    "glyph_template", "TabularMDP", "brute_force_optimal", "chain_mdp", "dp_policy_evaluation",
    "exact_policy_value", "greedy_policy", "grid_mdp", "mc_policy_evaluation", "sample_returns",
    "uniform_policy", "value_iteration",
]
