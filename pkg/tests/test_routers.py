import pytest
from fastapi.testclient import TestClient

from controller.commitment import SqlCommitmentLedger
from controller.proofchain import chain_digest, serialize
from main import app
from routers.commitments import get_ledger


@pytest.fixture
def client():
    ledger = SqlCommitmentLedger("sqlite://")
    app.dependency_overrides[get_ledger] = lambda: ledger
    with TestClient(app) as test_client:
        yield test_client
    app.dependency_overrides.clear()
    ledger.close()


def test_commit_then_replay_conflict(client, honest_proof):
    body = serialize(honest_proof)

    created = client.post("/v1/commitments/", content=body, params={"label": "victim"})
    assert created.status_code == 201
    assert created.json()["proof_digest"] == chain_digest(honest_proof).hex()
    assert created.json()["label"] == "victim"

    again = client.post("/v1/commitments/", content=body)
    assert again.status_code == 409


def test_replay_check(client, honest_proof, noisy_proof):
    client.post("/v1/commitments/", content=serialize(honest_proof))

    committed = client.post("/v1/commitments/replay", content=serialize(honest_proof)).json()
    fresh = client.post("/v1/commitments/replay", content=serialize(noisy_proof)).json()

    assert committed == {"proof_digest": chain_digest(honest_proof).hex(), "committed": True}
    assert fresh["committed"] is False


def test_listing_pages(client, honest_proof, noisy_proof):
    client.post("/v1/commitments/", content=serialize(honest_proof))
    client.post("/v1/commitments/", content=serialize(noisy_proof))

    page = client.get("/v1/commitments/", params={"page": 2, "page_size": 1}).json()

    assert page["total"] == 2
    assert page["page"] == 2
    assert [e["proof_digest"] for e in page["entries"]] == [chain_digest(noisy_proof).hex()]
    assert client.get("/v1/commitments/", params={"page": 0}).status_code == 422


def test_malformed_proof_is_bad_request(client):
    response = client.post("/v1/commitments/", content=b"not a proof")
    assert response.status_code == 400
    assert response.json()["data"]["error"] == "FormatError"
    assert response.json()["data"]["offset"] == 0
