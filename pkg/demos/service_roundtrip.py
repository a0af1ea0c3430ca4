"""Start the REST service in-process, validate and generate, then roll back.

    python3 demos/service_roundtrip.py
"""

from fastapi.testclient import TestClient

from planoforge.corpus import CorpusConfig, generate_corpus
from planoforge.diffusion import DenoiserConfig, DenoiserModel
from planoforge.domain import fixture_to_dict, planogram_to_dict
from planoforge.service import ModelSnapshot, ServiceState, create_app

ds = generate_corpus(CorpusConfig(store_count=5, planograms_per_store=4))
state = ServiceState(ds.catalog, ds.constraints)
client = TestClient(create_app(state))

for version, seed in (("v1", 1), ("v2", 2)):
    m = DenoiserModel.create(DenoiserConfig(widths=(4, 8, 8), time_dim=8), seed=seed, zero_output=False)
    m.metadata["schedule"] = {"T": 20, "beta1": 1e-3, "betaT": 0.3}
    state.load(ModelSnapshot.from_model(version, m, ds.catalog, ds.constraints))
print("health:", client.get("/v1/health").json())

r = client.post("/v1/planograms/validate", json={"planogram": planogram_to_dict(ds.planograms[0])})
print("corpus planogram overall:", r.json()["overall"])

r = client.post("/v1/planograms/generate", json={"fixture": fixture_to_dict(ds.planograms[0].fixture), "seed": 7})
out = r.json()
print(f"generated by {out['model_version']}: overall {out['planograms'][0]['report']['overall']:.2f}")

print("rollback:", client.post("/v1/admin/rollback").json())
print("health:", client.get("/v1/health").json())
print(client.get("/v1/metrics").text)
