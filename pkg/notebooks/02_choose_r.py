# %% [markdown]
# # Choosing the transformation
#
# Data come from the proportional odds model (r = 1).  Each r on a coarse
# grid is fitted on the training split and scored on the validation split.

# %%
from deepict import EmConfig, NetConfig, SimConfig, generate
from deepict.study import select_r

ds = generate(SimConfig(n=500, case=1, r_true=1.0, seed=3))
base = EmConfig(net_config=NetConfig(widths=(4, 50, 50, 1)))
grid = [0.0, 0.5, 1.0, 2.0]

# %%
chosen, table = select_r(ds.part("train"), ds.part("validation"), grid, base, seed=0)
for row in table:
    print(f"r={row['r']:.1f}  validation loglik {row['validation_loglik']:9.3f}  IBS {row['ibs']:.4f}")
print("chosen by loglik:", chosen)

# %%
chosen_ibs, _ = select_r(ds.part("train"), ds.part("validation"), grid, base, seed=0, criterion="ibs")
print("chosen by IBS:", chosen_ibs)
