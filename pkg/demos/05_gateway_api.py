"""Walk the HTTP/JSON API end to end without opening a port.

Uses the in-process test client against the same app `ledgerlens serve`
would run. Run after demo 02:

    python3 demos/05_gateway_api.py
"""

import json

from fastapi.testclient import TestClient

from ledgerlens import ServiceConfig, build_app, build_orchestrator

config = ServiceConfig(
    model_path="demo-data/model.json",
    data_path="demo-data/transactions.csv",
    allowlist_path="demo-data/allowlist.txt",
    clusters_path="demo-data/counterparties.csv",
    now="2024-12-30T12:00:00+00:00",
)
client = TestClient(build_app(build_orchestrator(config), config))

print("GET /v1/health ->", client.get("/v1/health").json())

model_info = client.get("/v1/model").json()
print(f"GET /v1/model  -> {model_info['trees']} trees, "
      f"schema v{model_info['feature_schema']['version']}")

session_id = client.post("/v1/sessions").json()["session_id"]
print(f"POST /v1/sessions -> {session_id[:12]}...")

body = client.post(
    f"/v1/sessions/{session_id}/messages",
    json={"text": "On September 20, 2024, at 11:00 PM (UTC+9), I received 0.8 BTC "
                  "(worth about $51,200) to my address 1A2b3C from the counterparty "
                  "bc1qxxx. Please check if this transaction looks suspicious."},
).json()
print(f"\nPOST message -> reply:\n  {body['reply']}")
print(f"  scores: {body['scores']}")

trace = client.get(f"/v1/sessions/{session_id}/traces/{body['trace_id']}").json()
print(f"\nGET trace -> stages: {[m['Stage'] for m in trace['messages']]}")

# Machine-to-machine batch scoring, no session involved.
batch = client.post(
    "/v1/detect",
    json={"transactions": [{
        "tx_id": "batch-001",
        "timestamp": "2024-11-02T03:15:00+00:00",
        "receiving_address": "1A2b3C...",
        "counterparty_address": "3FreshMixerAddressXXXXXXXXXXXXXXX",
        "value_btc": 0.5,
        "usd_value": 31000.0,
        "direction": "outgoing",
    }]},
).json()
print(f"\nPOST /v1/detect -> {json.dumps(batch, indent=2)}")
