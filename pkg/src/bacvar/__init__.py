"""Risk-averse planning in Bayes-adaptive MDPs via CVaR.

Modules: ``mdp`` (domains), ``belief`` (conjugate posteriors), ``cvar``
(risk measures), ``game`` (perturbation game), ``gp`` (GP-LCB proposals),
``mcts`` (the tree-search planner), ``vi`` (CVaR value iteration), ``pg``
(CVaR policy gradient), ``evaluation`` and ``cli``.
"""
__version__ = "0.1.0"
