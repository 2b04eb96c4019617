import json
import time
import numpy as np
from scipy import stats
from qjoin.catalog import generate_catalog, make_workload
from qjoin.ppo import (PPOConfig, VQCSettings, model_config_from_name, train,
                       save_checkpoint)
from qjoin.bench import noisy_eval, summarize

cat = generate_catalog(101, 8, 5)
wl = make_workload(202, cat, 500, 4)
out = {}

t0 = time.time()
qc_cfg = model_config_from_name("q-critic", n_max=4, vqc=VQCSettings(use_dru=True, dru_repetitions=5))
res_qc = train(wl, fold=0, model_config=qc_cfg, ppo_config=PPOConfig(total_episodes=10_000, seed=0))
out["qcritic"] = {
    "final_rolling": res_qc.final_rolling_median,
    "test_median": res_qc.test_median,
    "curve_tail": [(p.episode, p.rolling_median) for p in res_qc.curve[-5:]],
    "minутes": (time.time() - t0) / 60,
}
print("q-critic:", out["qcritic"], flush=True)

t0 = time.time()
qa_cfg = model_config_from_name("q-actor", n_max=4, vqc=VQCSettings(use_dru=True, dru_repetitions=5))
res_qa = train(wl, fold=0, model_config=qa_cfg, ppo_config=PPOConfig(total_episodes=10_000, seed=0))
save_checkpoint("/root/pkg/.scratch/qactor_probe.json", res_qa.model, 0, res_qa.episodes)
out["qactor"] = {
    "final_rolling": res_qa.final_rolling_median,
    "test_median": res_qa.test_median,
    "minutes": (time.time() - t0) / 60,
}
print("q-actor:", out["qactor"], flush=True)

import tempfile, os
from qjoin.catalog import save_workload
wl_path = "/root/pkg/.scratch/probe_wl.json"
save_workload(wl_path, wl)
grid = [0.0, 0.01, 0.02, 0.03, 0.04, 0.05]
t0 = time.time()
rows = noisy_eval("/root/pkg/.scratch/qactor_probe.json", wl, 0, grid, trajectories=128, seed=7)
medians = [rec["median"] for rec in summarize(rows)]
by_p = sorted({r.noise_p for r in rows})
med_by_p = []
for p in by_p:
    vals = [r.relative_cost for r in rows if r.noise_p == p]
    med_by_p.append(float(np.median(vals)))
rho = stats.spearmanr(by_p, med_by_p).statistic
out["noisy"] = {"medians": med_by_p, "spearman": float(rho), "minutes": (time.time() - t0) / 60}
print("noisy:", out["noisy"], flush=True)
json.dump(out, open("/root/pkg/.scratch/probe_results.json", "w"), indent=1)
