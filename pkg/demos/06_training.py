"""Overfit the tiny network on one blob batch and watch Dice climb."""
import sys

from mlrupp.training import TrainCfg, decrease_fraction, demo_train

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 100
cfg = TrainCfg(steps=steps)
model, trace = demo_train(cfg)
for rec in trace[:: max(1, steps // 10)]:
    print(f"step {rec['step']:4d}  loss {rec['loss']:.4f}  dice {rec['dice']:.3f}")
print(f"final dice {trace[-1]['dice']:.3f}; loss fell on {100 * decrease_fraction(trace):.0f}% of steps after 20")
print("parameters:", model.num_params())
