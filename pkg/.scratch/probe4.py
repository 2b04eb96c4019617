import json, time
import numpy as np
from scipy import stats
from qjoin.catalog import generate_catalog
from qjoin.bench import build_informative_workload, noisy_eval
from qjoin.ppo import PPOConfig, VQCSettings, model_config_from_name, train, save_checkpoint

cat = generate_catalog(101, 5, 5)
wl = build_informative_workload(404, cat, 500, 4, min_median_ratio=3.0)
ppo = PPOConfig(total_episodes=10_000, seed=0, lr_classical=1e-3, episodes_per_update=32)
grid = [0.0, 0.01, 0.02, 0.03, 0.04, 0.05]

t0 = time.time()
cfg = model_config_from_name("q-actor", n_max=4, vqc=VQCSettings(use_dru=True, dru_repetitions=2))
r = train(wl, 0, cfg, ppo)
save_checkpoint("/root/pkg/.scratch/qactor8L.json", r.model, 0, r.episodes)
print("q-actor 8L:", {"final": r.final_rolling_median, "test": r.test_median,
      "min": (time.time()-t0)/60}, flush=True)

rows = noisy_eval("/root/pkg/.scratch/qactor8L.json", wl, 0, grid, trajectories=128, seed=7)
med8 = [float(np.median([x.relative_cost for x in rows if x.noise_p == p])) for p in grid]
rho8 = float(stats.spearmanr(grid, med8).statistic)
print("noisy 8L:", {"medians": [round(m,3) for m in med8], "spearman": rho8}, flush=True)
json.dump({"medians8": med8, "rho8": rho8}, open("/root/pkg/.scratch/probe4_results.json", "w"))
