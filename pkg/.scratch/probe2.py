import json, time
import numpy as np
from scipy import stats
from qjoin.catalog import generate_catalog
from qjoin.bench import build_informative_workload, noisy_eval
from qjoin.ppo import PPOConfig, VQCSettings, model_config_from_name, train, save_checkpoint

cat = generate_catalog(101, 8, 5)
wl = build_informative_workload(404, cat, 500, 4, min_median_ratio=3.0)
out = {}
full = VQCSettings(use_dru=True, dru_repetitions=5)

cls = []
for fold, seed in [(0,0),(1,1),(2,2),(3,3),(4,4)]:
    t0 = time.time()
    cfg = model_config_from_name("classical", n_max=4)
    r = train(wl, fold, cfg, PPOConfig(total_episodes=10_000, seed=seed))
    best = min(p.rolling_median for p in r.curve)
    cls.append({"fold": fold, "seed": seed, "best_rolling": best,
                "final_rolling": r.final_rolling_median, "test_median": r.test_median,
                "curve_sample": [(p.episode, round(p.rolling_median,3)) for p in r.curve[::20]],
                "min": (time.time()-t0)/60})
    print("classical", cls[-1], flush=True)
out["classical"] = cls

t0 = time.time()
cfg = model_config_from_name("q-critic", n_max=4, vqc=full)
r = train(wl, 0, cfg, PPOConfig(total_episodes=10_000, seed=0))
out["qcritic"] = {"final_rolling": r.final_rolling_median, "test_median": r.test_median,
                  "curve_sample": [(p.episode, round(p.rolling_median,3)) for p in r.curve[::20]],
                  "min": (time.time()-t0)/60}
print("q-critic", out["qcritic"], flush=True)

t0 = time.time()
cfg = model_config_from_name("q-actor", n_max=4, vqc=full)
r = train(wl, 0, cfg, PPOConfig(total_episodes=10_000, seed=0))
save_checkpoint("/root/pkg/.scratch/qactor2.json", r.model, 0, r.episodes)
out["qactor"] = {"final_rolling": r.final_rolling_median, "test_median": r.test_median,
                 "curve_sample": [(p.episode, round(p.rolling_median,3)) for p in r.curve[::20]],
                 "min": (time.time()-t0)/60}
print("q-actor", out["qactor"], flush=True)

grid = [0.0, 0.01, 0.02, 0.03, 0.04, 0.05]
t0 = time.time()
rows = noisy_eval("/root/pkg/.scratch/qactor2.json", wl, 0, grid, trajectories=128, seed=7)
med = [float(np.median([r.relative_cost for r in rows if r.noise_p == p])) for p in grid]
rho = float(stats.spearmanr(grid, med).statistic)
out["noisy"] = {"medians": med, "spearman": rho, "min": (time.time()-t0)/60}
print("noisy", out["noisy"], flush=True)
json.dump(out, open("/root/pkg/.scratch/probe2_results.json", "w"), indent=1)
