"""
Learning the inverse immersion
==============================

Sample 2000 (x, z) pairs from (20, 500], train the 4-8-8-3 network with
plain SGD and compare training and validation losses.
"""
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from lipkkl import TrainConfig, build_dataset, default_observer, lorenz_system, train
from lipkkl.analysis import network_lipschitz

ds = build_dataset(lorenz_system(), default_observer(), sigma=0.0, m=2000, t_burn=20.0, t_end=500.0, seed=0)
print(len(ds), "records, t in", ds.t.min(), ds.t.max())

# %%
# 300 epochs takes a few seconds
net, hist = train(ds, TrainConfig(gamma=100.0, epochs=300))
print(f"train {hist.train_loss[-1]:.4f}  val {hist.val_loss:.4f}  "
      f"L_S >= {network_lipschitz(net, ds.z):.2f} (gamma = 100)")

# %%
plt.semilogy(hist.train_loss)
plt.xlabel("epoch")
plt.ylabel("training loss")
plt.savefig("training.png", dpi=120)
net.save("model_gamma100.json")
