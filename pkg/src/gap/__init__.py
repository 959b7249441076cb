"""Goal-aware prediction lab.

Learn goal-conditioned latent dynamics that reconstruct the goal-state
residual, plan with latent-space MPC, and measure how redistributing model
error toward low-cost trajectories changes downstream task success.

Submodules:
    ndiff     - minimal reverse-mode autodiff, Adam, checkpoint io
    envs      - PointNav2D and BlockPush2D ground-truth environments
    data      - random-policy collection, dataset files, hindsight relabeling
    models    - the goal-aware model family and its training loop
    planner   - latent-space CEM planning and replanning execution
    theorylab - selection-optimality condition checker and noise-injection study
    analysis  - error profiles over best-k trajectory cohorts, success tables
    cli       - the `gap` command-line entry point
"""

__version__ = "0.1.0"
