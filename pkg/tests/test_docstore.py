import os
import struct
import threading
import zlib

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from catcache.docstore import (BackendLatencyModel, DocumentRecord, FileDocStore, LatencyMeter,
                               SimulatedDocStore)
from catcache.errors import DocNotFound, StorageError


def rec(store, req=b"q", resp=b"r", at=1):
    return store.new_record(req, resp, at)


@pytest.fixture(params=["sim", "file"])
def store(request, tmp_path):
    s = SimulatedDocStore() if request.param == "sim" else FileDocStore(tmp_path / "docs.log")
    yield s
    s.close()


def test_put_fetch_delete(store):
    a = store.put(rec(store, b"req-a", b"resp-a", 10))
    b = store.put(rec(store, b"req-b", b"\x00\xffbinary", 20))
    assert a != b
    got = store.fetch(b)
    assert (got.doc_id, got.request_body, got.response_body, got.stored_at) == (b, b"req-b", b"\x00\xffbinary", 20)
    store.delete(a)
    store.delete(a)  # idempotent
    with pytest.raises(DocNotFound):
        store.fetch(a)
    assert len(store) == 1 and store.ids() == [b]
    assert store.calls["put"] == 2 and store.calls["fetch"] == 2 and store.calls["delete"] == 2


def test_no_search_operation(store):
    assert not any(hasattr(store, name) for name in ("search", "query", "scan", "find"))


def test_simulated_store_charges_meter():
    meter = LatencyMeter()
    s = SimulatedDocStore(BackendLatencyModel(fetch_latency=5.0, put_latency=3.0), meter)
    d = s.put(rec(s))
    s.fetch(d)
    s.fetch(d)
    assert meter.elapsed_ms == 13.0


def test_record_json_roundtrip():
    r = DocumentRecord("doc-1", b"\x01\x02", b"{}", 5)
    assert DocumentRecord.from_json(r.to_json()) == r


def test_file_store_recovers_after_reopen(tmp_path):
    path = tmp_path / "d.log"
    s = FileDocStore(path)
    ids = [s.put(rec(s, b"q%d" % i, b"r%d" % i, i)) for i in range(20)]
    for i in ids[::2]:
        s.delete(i)
    s.close()
    s2 = FileDocStore(path)
    assert sorted(s2.ids()) == sorted(ids[1::2])
    assert s2.fetch(ids[3]).response_body == b"r3"
    new = s2.put(rec(s2))
    assert new not in ids  # sequence continues past recovered ids
    s2.close()


def test_file_store_truncates_torn_tail(tmp_path):
    path = tmp_path / "d.log"
    s = FileDocStore(path)
    keep = s.put(rec(s, resp=b"keep"))
    s.close()
    good_size = os.path.getsize(path)
    with open(path, "ab") as fh:
        payload = b'{"doc_id":"doc-000000000009","request_body":""'
        fh.write(struct.pack("<II", len(payload) + 50, zlib.crc32(payload)) + payload)
    s2 = FileDocStore(path)
    assert s2.ids() == [keep]
    assert os.path.getsize(path) == good_size
    s2.put(rec(s2))
    s2.close()
    assert len(FileDocStore(path)) == 2


def test_file_store_detects_corruption_on_fetch(tmp_path):
    path = tmp_path / "d.log"
    s = FileDocStore(path)
    d = s.put(rec(s, resp=b"hello world"))
    with open(path, "r+b") as fh:
        fh.seek(20)
        fh.write(b"#")
    with pytest.raises(StorageError):
        s.fetch(d)
    s.close()


def test_file_store_open_failure_is_storage_error(tmp_path):
    (tmp_path / "dir").mkdir()
    with pytest.raises(StorageError):
        FileDocStore(tmp_path / "dir")


def test_file_store_write_failure_is_storage_error(tmp_path):
    s = FileDocStore(tmp_path / "d.log")
    s.close()  # fd is now invalid
    with pytest.raises(StorageError):
        s.put(rec(s))


def test_file_store_concurrent_puts(tmp_path):
    s = FileDocStore(tmp_path / "d.log")
    out = []

    def worker(k):
        for i in range(50):
            out.append(s.put(rec(s, resp=b"%d-%d" % (k, i))))

    ts = [threading.Thread(target=worker, args=(k,)) for k in range(4)]
    for t in ts:
        t.start()
    for t in ts:
        t.join()
    assert len(set(out)) == 200
    s.close()
    s2 = FileDocStore(tmp_path / "d.log")
    assert len(s2) == 200
    assert all(s2.fetch(d).response_body for d in out)


@settings(max_examples=25, deadline=None)
@given(ops=st.lists(st.tuples(st.booleans(), st.binary(max_size=40)), min_size=1, max_size=40))
def test_property_file_store_matches_dict_model(tmp_path_factory, ops):
    path = tmp_path_factory.mktemp("prop") / "d.log"
    s = FileDocStore(path)
    model = {}
    for is_put, body in ops:
        if is_put or not model:
            model[s.put(rec(s, resp=body))] = body
        else:
            victim = sorted(model)[len(body) % len(model)]
            s.delete(victim)
            del model[victim]
    s.close()
    s2 = FileDocStore(path)
    assert sorted(s2.ids()) == sorted(model)
    for d, body in model.items():
        assert s2.fetch(d).response_body == body
    s2.close()
