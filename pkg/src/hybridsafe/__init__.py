"""hybridsafe: quantitative safety and robustness analysis of hybrid
programs under bounded sensor attacks, with a sequent-calculus proof
kernel for simulation-distance arguments."""

__version__ = "0.1.0"
