"""End-to-end tour: corpus, a short training run, sampling, validation, int8, latency.

    python3 demos/walkthrough.py [steps]

The default of 1500 steps finishes in a couple of minutes and is far too short
for good samples; pass 20000 for the full desk run.
"""

import logging
import sys
import time

from planoforge.corpus import CorpusConfig, generate_corpus
from planoforge.diffusion import DenoiserModel, TrainConfig, checkpoint_bytes, dequantize, quantize, train
from planoforge.edgesim import poisson_scenario, render_table2, run_load, table2
from planoforge.pipeline import sampling_report

logging.basicConfig(level=logging.INFO, format="%(message)s")
steps = int(sys.argv[1]) if len(sys.argv) > 1 else 1500

ds = generate_corpus(CorpusConfig())
print(f"corpus: {len(ds.planograms)} planograms over {len(ds.stores)} stores, {len(ds.catalog)} products")

t0 = time.perf_counter()
model, history = train(ds, TrainConfig(steps=steps), log_every=max(steps // 5, 1))
print(f"trained {model.parameter_count:,} parameters for {steps} steps in {time.perf_counter() - t0:.0f}s")

baseline = sampling_report(DenoiserModel.create(None, seed=0), ds, 50, seed=1)
trained = sampling_report(model, ds, 50, seed=1)
print("\nuntrained model\n" + baseline.render())
print("\ntrained model\n" + trained.render())

artifact, rep = quantize(model)
print(f"\nint8 checkpoint: {len(artifact):,} bytes vs {len(checkpoint_bytes(model, 'f32')):,} fp32"
      f" (ratio {rep.size_ratio:.3f}, max weight error {rep.max_abs_error:.1e})")
q = sampling_report(dequantize(artifact), ds, 50, seed=1)
print(f"satisfaction fp {100 * trained.overall:.1f}% vs int8 {100 * q.overall:.1f}%")

print("\n" + render_table2(table2()))
stats = run_load(poisson_scenario(rate_per_s=20, duration_s=30, seed=3, burst=5))
print(f"\n20 bursts/s of 5 stores for 30s: p50 {stats.p50_ms:.0f} ms, p99 {stats.p99_ms:.0f} ms,"
      f" {stats.cold_starts} cold starts, {stats.containers} containers")
