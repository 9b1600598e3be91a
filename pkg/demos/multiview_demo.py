"""Register a shuffled ring of six scans into one model.

Run: python demos/multiview_demo.py
"""

from scanreg.config import load_config
from scanreg.evaluation import evaluate, make_base_surface, synth_generate
from scanreg.multiview import register_all, session_report

cfg = load_config("configs/synthetic.json", environ={}).to_multiview()
base = make_base_surface(20000, seed=0)
scans, truth = synth_generate(base, 6, overlap=0.6, noise_sigma=5e-4, seed=0)

result = register_all(scans, cfg)
report = session_report(result)
for entry in report["tmse_history"]:
    verdict = "accepted" if entry["reliable"] else "rejected"
    print(f"pass {entry['pass']} scan {entry['scan']}: tmse {entry['tmse']:.4f} <= {entry['threshold']:.3f}? {verdict}")

errors = evaluate(result.transforms, truth)
print(f"pairwise registrations: {result.pairwise_calls}")
print(f"model points: {len(result.model.points)} (scans total {sum(len(s) for s in scans)})")
print(f"mean rotation error {errors.e_R:.2e}, mean translation error {errors.e_t:.2e}")
