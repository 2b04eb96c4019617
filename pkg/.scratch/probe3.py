import json, time
import numpy as np
from scipy import stats
from qjoin.catalog import generate_catalog
from qjoin.bench import build_informative_workload, noisy_eval
from qjoin.ppo import PPOConfig, VQCSettings, model_config_from_name, train, save_checkpoint

cat = generate_catalog(101, 5, 5)
wl = build_informative_workload(404, cat, 500, 4, min_median_ratio=3.0)
full = VQCSettings(use_dru=True, dru_repetitions=5)
ppo = PPOConfig(total_episodes=10_000, seed=0, lr_classical=1e-3, episodes_per_update=32)

t0 = time.time()
cfg = model_config_from_name("q-actor", n_max=4, vqc=full)
r = train(wl, 0, cfg, ppo)
save_checkpoint("/root/pkg/.scratch/qactor3.json", r.model, 0, r.episodes)
print("q-actor:", {"final": r.final_rolling_median, "test": r.test_median,
      "curve": [(p.episode, round(p.rolling_median,2)) for p in r.curve[::20]],
      "min": (time.time()-t0)/60}, flush=True)

grid = [0.0, 0.01, 0.02, 0.03, 0.04, 0.05]
t0 = time.time()
rows = noisy_eval("/root/pkg/.scratch/qactor3.json", wl, 0, grid, trajectories=128, seed=7)
med = [float(np.median([x.relative_cost for x in rows if x.noise_p == p])) for p in grid]
rho = float(stats.spearmanr(grid, med).statistic)
print("noisy:", {"medians": [round(m,3) for m in med], "spearman": rho,
      "min": (time.time()-t0)/60}, flush=True)
json.dump({"medians": med, "rho": rho}, open("/root/pkg/.scratch/probe3_results.json", "w"))
