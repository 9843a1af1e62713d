"""Restricted normalizing-flow policies with an analytic mean.

Modules: ``nonlinear`` (squareplus family), ``autodiff`` (reverse-mode tape),
``distributions`` (normal / student-t bases and mixtures), ``lrs`` (odd linear
rational spline), ``realnvp`` (odd coupling layer), ``policy`` (conditioner and
policy distributions), ``rl`` (toy envs and A2C), ``verify`` (conformance
checks), ``config`` / ``checkpoint`` / ``cli`` (command line).
"""
__version__ = "0.1.0"
