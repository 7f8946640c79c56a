"""Cell-free massive MIMO coexistence toolkit.

Uplink analysis of broadband users sharing a cell-free deployment with
spread-spectrum machine-type devices: deployment generation, channel
estimation statistics, closed-form effective SINRs and finite-blocklength
rates, Monte-Carlo validation oracles, heuristic power control, and a
maximin energy-efficiency solver with a batch evaluation harness.
"""

__version__ = "0.1.0"
