"""
[네트워크 파일 검증 테스트]
======================================================
검증 항목:
  [T1] 저장 -> 로드 시 구조 동일 + 가중치 비트 동일 (network_id 일치)
  [T2] 손상된 문서: stride 0, 잘린 가중치, 필드 누락, 버전 불일치, 알 수 없는 가중치, JSON 문법 오류
       -> NetworkFormatError 와 JSON pointer 위치

실행법: pytest tools/test_network_store.py
======================================================
"""
import json

import numpy as np
import pytest

from engine.errors import NetworkFormatError
from engine.network import ssrn_like, init_network, network_id, structurally_equal
from engine.transform import transform
from infra.network_store import network_to_dict, network_from_dict, save_network, load_network


def small_net(seed=0):
    return init_network(ssrn_like(bands=8, num_classes=4, width=6, spectral_width=10), seed=seed)


# ============================================================
# T1: round trip
# ============================================================
def test_round_trip_is_bit_exact(tmp_path, rng, randomize):
    net = randomize(small_net(), rng)
    path = str(tmp_path / "nets" / "ssrn.json")
    save_network(net, path)
    back = load_network(path)
    assert structurally_equal(net, back)
    assert network_id(net) == network_id(back)
    for a, b in zip(net.layers, back.layers):
        for key in a.weights:
            assert a.weights[key].astype("<f4").tobytes() == b.weights[key].tobytes()


def test_transformed_network_round_trip(tmp_path):
    tppi, _ = transform(small_net())
    path = str(tmp_path / "tppi.json")
    save_network(tppi, path)
    back = load_network(path)
    assert back.name == tppi.name
    assert network_id(back) == network_id(tppi)


def test_untrained_network_has_no_weight_payload():
    doc = network_to_dict(ssrn_like(bands=8, num_classes=4))
    assert all(layer["weights"] == {} for layer in doc["layers"])
    assert not network_from_dict(doc).has_weights()


# ============================================================
# T2: malformed documents
# ============================================================
def _first_conv(doc):
    return next(i for i, layer in enumerate(doc["layers"]) if layer["kind"] in ("Conv3d", "Conv2d"))


def test_zero_stride_is_reported_at_params():
    doc = network_to_dict(small_net())
    i = _first_conv(doc)
    key = "stride_d" if "stride_d" in doc["layers"][i]["params"] else "stride_h"
    doc["layers"][i]["params"][key] = 0
    with pytest.raises(NetworkFormatError) as exc:
        network_from_dict(doc)
    assert exc.value.path == f"/layers/{i}/params"


def test_truncated_weight_blob():
    doc = network_to_dict(small_net())
    i = _first_conv(doc)
    entry = doc["layers"][i]["weights"]["weight"]
    expected = int(np.prod(entry["shape"]))
    entry["data"] = network_to_dict(small_net())["layers"][i]["weights"]["bias"]["data"]
    found = len(small_net().layers[i].weights["bias"])
    with pytest.raises(NetworkFormatError) as exc:
        network_from_dict(doc)
    assert exc.value.path == f"/layers/{i}/weights/weight/data"
    assert f"expected {expected} values, found {found}" in str(exc.value)


def test_missing_field_and_bad_version():
    doc = network_to_dict(small_net())
    del doc["layers"][2]["kind"]
    with pytest.raises(NetworkFormatError, match="missing field 'kind'") as exc:
        network_from_dict(doc)
    assert exc.value.path == "/layers/2/kind"

    doc = network_to_dict(small_net())
    doc["format_version"] = 99
    with pytest.raises(NetworkFormatError) as exc:
        network_from_dict(doc)
    assert exc.value.path == "/format_version"

    doc = network_to_dict(small_net())
    doc["bands"] = "eight"
    with pytest.raises(NetworkFormatError, match="expected an integer"):
        network_from_dict(doc)


def test_unknown_weight_key():
    doc = network_to_dict(small_net())
    i = _first_conv(doc)
    doc["layers"][i]["weights"]["scale"] = doc["layers"][i]["weights"]["bias"]
    with pytest.raises(NetworkFormatError, match="unexpected weight array 'scale'"):
        network_from_dict(doc)


def test_inconsistent_graph_is_reported_at_layers():
    doc = network_to_dict(ssrn_like(bands=8, num_classes=4))
    doc["num_classes"] = 5
    with pytest.raises(NetworkFormatError) as exc:
        network_from_dict(doc)
    assert exc.value.path == "/layers"


def test_invalid_json_file(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"format_version": 1, "layers": [')
    with pytest.raises(NetworkFormatError, match="invalid JSON"):
        load_network(str(path))
    path.write_text(json.dumps([1, 2, 3]))
    with pytest.raises(NetworkFormatError, match="root must be an object"):
        load_network(str(path))


@pytest.mark.parametrize("key,value", [("stride_h", "two"), ("kh", None), ("pad_hw", [1]), ("out_channels", 2.5),
                                       ("kd", True), ("bias", 1)])
def test_badly_typed_param_is_located(key, value):
    doc = network_to_dict(small_net())
    i = _first_conv(doc)
    doc["layers"][i]["params"][key] = value
    with pytest.raises(NetworkFormatError) as exc:
        network_from_dict(doc)
    assert exc.value.path == f"/layers/{i}/params/{key}"


def test_badly_typed_header_and_containers():
    for key, value, where in (("input_rank", "4", "/input_rank"), ("input_rank", 5, "/input_rank"),
                              ("sample_size_m", 0, "/sample_size_m"), ("name", 7, "/name")):
        doc = network_to_dict(small_net())
        doc[key] = value
        with pytest.raises(NetworkFormatError) as exc:
            network_from_dict(doc)
        assert exc.value.path == where
    doc = network_to_dict(small_net())
    doc["layers"][0]["weights"] = ["weight"]
    with pytest.raises(NetworkFormatError) as exc:
        network_from_dict(doc)
    assert exc.value.path == "/layers/0/weights"
    doc = network_to_dict(small_net())
    doc["layers"][0]["weights"]["weight"]["shape"] = 5
    with pytest.raises(NetworkFormatError) as exc:
        network_from_dict(doc)
    assert exc.value.path == "/layers/0/weights/weight/shape"
