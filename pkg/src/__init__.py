"""Human-prior dexterous grasping toolkit (run modules with python -m src.<name>)."""
