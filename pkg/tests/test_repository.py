import os
from pathlib import Path

import pytest

from tablevault import Repository, TabularData, init_repository, layout, opexec
from tablevault import _fsio
from tablevault.errors import (
    AccessDenied,
    NameConflict,
    NotFound,
    RepositoryConflict,
    StateError,
    ValidationError,
)

from util import build_document_store, state_digest


def simple_frame():
    return TabularData(
        columns=[("file_name", "string"), ("model_response", "string")],
        rows=[
            ["little_red_riding_hood.pdf", "fiction"],
            ["titanic.pdf", "nonfiction"],
        ],
    )


# -- init ----------------------------------------------------------------------


def test_init_creates_canonical_layout(tmp_path):
    repo = init_repository(tmp_path / "example_repository", "alice")
    for rel in (layout.TABLES, layout.CODE_MODULES, layout.ACTIVE_LOG, layout.ARCHIVE):
        assert (repo.root / rel).is_dir()
    assert repo.list_tables() == []
    ops = [o for o in repo.operations() if o["op_type"] == "init_repository"]
    assert ops and ops[0]["author"] == "alice"
    repo.close()


def test_init_on_existing_repository_opens_idempotently(tmp_path):
    first = init_repository(tmp_path / "r", "alice")
    first.create_table("t")
    first.close()
    digest = state_digest(tmp_path / "r")
    second = init_repository(tmp_path / "r", "bob")
    assert second.list_tables() == ["t"]
    assert state_digest(tmp_path / "r") == digest
    second.close()


def test_init_on_regular_file_is_a_conflict(tmp_path):
    target = tmp_path / "file.txt"
    target.write_text("data")
    with pytest.raises(RepositoryConflict):
        init_repository(target, "alice")
    full = tmp_path / "full"
    full.mkdir()
    (full / "junk").write_text("x")
    with pytest.raises(RepositoryConflict):
        init_repository(full, "alice")


# -- create_table -----------------------------------------------------------------


def test_create_table(repo):
    handle = repo.create_table("document-store")
    assert handle.name == "document-store"
    assert repo.list_tables() == ["document-store"]
    assert repo.last_op_id


def test_create_table_duplicate_is_name_conflict(repo):
    repo.create_table("document-store")
    with pytest.raises(NameConflict):
        repo.create_table("document-store")


@pytest.mark.parametrize("name", ["9bad name", "Bad", "", "a" * 129, "no spaces"])
def test_create_table_invalid_identifier(repo, name):
    with pytest.raises(ValidationError):
        repo.create_table(name)


# -- create_instance ------------------------------------------------------------------


def test_create_instance_external_awaits_write(repo):
    repo.create_table("openai-response")
    iid = repo.create_instance("openai-response", external=True)
    listed = repo.list_instances("openai-response")
    assert [i["instance_id"] for i in listed] == [iid]
    assert listed[0]["status"] == "temporary"
    # invisible to committed resolution
    assert repo.latest_committed("openai-response") is None
    with pytest.raises(NotFound):
        repo.get_dataframe("openai-response")


def test_create_instance_missing_table(repo):
    with pytest.raises(NotFound):
        repo.create_instance("ghost-table")


def test_pending_external_instance_is_a_singleton(repo):
    repo.create_table("t")
    repo.create_instance("t", external=True)
    with pytest.raises(StateError):
        repo.create_instance("t", external=True)


def test_allow_external_gate(repo):
    repo.create_table("sealed", allow_external=False)
    with pytest.raises(ValidationError):
        repo.create_instance("sealed", external=True)
    repo.create_instance("sealed")  # managed instances still allowed


# -- write_instance ----------------------------------------------------------------------


def test_write_instance_records_exactly_one_ingestion_event(repo):
    repo.create_table("openai-response")
    repo.create_instance("openai-response", external=True)
    iid = repo.write_instance(
        simple_frame(), "openai-response", description="manual format corrections"
    )
    lineage_doc = repo.query_metadata("openai-response", "lineage", instance_id=iid)
    assert lineage_doc["edges"] == []
    ingestion = lineage_doc["ingestion"]
    assert ingestion["description"] == "manual format corrections"
    assert ingestion["author"] == "alice"
    assert ingestion["digest"]
    events = [
        e
        for e in opexec.read_events(repo.root)
        if e.get("event") == "ingestion" and e.get("instance") == iid
    ]
    assert len(events) == 1


def test_write_instance_empty_frame_commits(repo):
    repo.create_table("t")
    repo.create_instance("t", external=True)
    frame = TabularData(columns=[("a", "int"), ("b", "string")], rows=[])
    iid = repo.write_instance(frame, "t", description="empty import")
    assert repo.get_dataframe("t", iid).n_rows == 0


def test_write_instance_dangling_artifact_is_validation_error(repo):
    repo.create_table("t")
    repo.create_instance("t", external=True)
    frame = TabularData(columns=[("doc", "artifact_string")], rows=[["missing.pdf"]])
    before = state_digest(repo.root)
    with pytest.raises(ValidationError):
        repo.write_instance(frame, "t", description="bad", artifacts={})
    assert state_digest(repo.root) == before
    # the pending instance is still there for a corrected retry
    frame_ok = TabularData(columns=[("doc", "artifact_string")], rows=[["ok.pdf"]])
    repo.write_instance(frame_ok, "t", description="good", artifacts={"ok.pdf": b"%PDF"})


def test_write_instance_without_pending_external_is_state_error(repo):
    repo.create_table("t")
    with pytest.raises(StateError):
        repo.write_instance(simple_frame(), "t", description="no pending")


# -- get_dataframe ------------------------------------------------------------------------


def test_get_dataframe_latest_and_historical_are_stable(repo):
    repo.create_table("t")
    repo.create_instance("t", external=True)
    v1 = repo.write_instance(
        TabularData(columns=[("x", "int")], rows=[[1]]), "t", description="v1"
    )
    repo.create_instance("t", external=True)
    v2 = repo.write_instance(
        TabularData(columns=[("x", "int")], rows=[[2]]), "t", description="v2"
    )
    assert repo.latest_committed("t") == v2
    assert repo.get_dataframe("t").rows == [[2]]
    first = repo.get_dataframe("t", v1)
    second = repo.get_dataframe("t", v1)
    assert first == second
    assert first.rows == [[1]]
    assert first.to_csv_bytes() == second.to_csv_bytes()


def test_temporary_instance_readable_only_by_author(repo_factory, stories):
    alice = repo_factory("shared", author="alice")
    build_document_store(alice, stories)
    iid = alice.create_instance("document-store")
    # stage a partial dataframe the way an execution would
    bob = Repository(alice.root, author="bob")
    with pytest.raises(AccessDenied):
        bob.get_dataframe("document-store", iid)
    bob.close()


def test_get_dataframe_no_committed_instance(repo):
    repo.create_table("t")
    with pytest.raises(NotFound):
        repo.get_dataframe("t")
    with pytest.raises(NotFound):
        repo.get_dataframe("ghost")


# -- deletion and archival ------------------------------------------------------------------


def seeded_table(repo, name, versions=1):
    repo.create_table(name)
    ids = []
    for v in range(versions):
        repo.create_instance(name, external=True)
        ids.append(
            repo.write_instance(
                TabularData(columns=[("x", "int")], rows=[[v]]),
                name,
                description=f"v{v}",
                artifacts={"blob.bin": bytes([v])},
            )
        )
    return ids


def test_delete_instance_archives_metadata_and_removes_data(repo):
    (iid,) = seeded_table(repo, "t", versions=1)
    receipt = repo.delete_instance("t", iid)
    assert receipt.instances == (iid,)
    with pytest.raises(NotFound):
        repo.get_dataframe("t", iid)
    # metadata still queryable from the archive
    doc = repo.query_metadata("t", "lineage", instance_id=iid, archived=True)
    assert doc["ingestion"]["description"] == "v0"
    archive = layout.archive_instance_dir(repo.root, "t", iid)
    assert (archive / "lineage.yaml").exists()
    assert not (archive / "data.csv").exists()
    assert not (archive / "artifacts").exists()


def test_delete_table_archives_every_instance(repo):
    ids = seeded_table(repo, "t", versions=3)
    before_files = [
        p for p in _fsio.walk_files(layout.table_dir(repo.root, "t"))
    ]
    assert before_files
    receipt = repo.delete_table("t")
    assert set(receipt.instances) == set(ids)
    assert not layout.table_dir(repo.root, "t").exists()
    archived_sets = 0
    data_files = 0
    for iid in ids:
        archive = layout.archive_instance_dir(repo.root, "t", iid)
        assert (archive / "description.yaml").exists()
        archived_sets += 1
        data_files += sum(
            1
            for p in _fsio.walk_files(archive)
            if p.name == "data.csv" or "artifacts" in p.parts
        )
    assert archived_sets == 3
    assert data_files == 0
    assert "t" not in repo.list_tables()


def test_deleted_table_name_can_be_recreated_fresh(repo):
    seeded_table(repo, "t", versions=2)
    repo.delete_table("t")
    repo.create_table("t")
    assert repo.list_instances("t") == []
    assert repo.latest_committed("t") is None


def test_delete_missing_targets(repo):
    with pytest.raises(NotFound):
        repo.delete_table("ghost")
    repo.create_table("t")
    with pytest.raises(NotFound):
        repo.delete_instance("t", "20990101T000000.000000_zzzzzz")
    iid = repo.create_instance("t")
    with pytest.raises(StateError):
        repo.delete_instance("t", iid)  # temporary, not committed


# -- builder and code-module documents ----------------------------------------------------------


def test_create_builder_file_and_duplicate(repo):
    repo.create_table("document-store")
    path = repo.create_builder_file("document-store", "document-store-index")
    assert path.exists()
    assert path.read_text() == ""
    with pytest.raises(NameConflict):
        repo.create_builder_file("document-store", "document-store-index")
    with pytest.raises(NotFound):
        repo.create_builder_file("ghost", "b")


def test_create_code_module_and_duplicate(repo):
    path = repo.create_code_module("openai_helper")
    assert path.exists()
    assert repo.list_code_modules() == ["openai_helper"]
    with pytest.raises(NameConflict):
        repo.create_code_module("openai_helper")


def test_executed_snapshot_survives_later_edits(repo, stories):
    build_document_store(repo, stories)
    iid = repo.latest_committed("document-store")
    snapshot = repo.query_metadata(
        "document-store", "builders", instance_id=iid, name="document-store-index"
    )
    live_path = repo.builder_path("document-store", "document-store-index")
    live_path.write_text("builder_type: 'IndexBuilder'\n# edited afterwards\n")
    unchanged = repo.query_metadata(
        "document-store", "builders", instance_id=iid, name="document-store-index"
    )
    assert unchanged == snapshot
    assert unchanged != live_path.read_text()


# -- metadata queries -----------------------------------------------------------------------------


def test_query_metadata_operations_includes_create_table(repo):
    repo.create_table("t")
    events = repo.query_metadata("t", "operations")
    assert any(e.get("op_type") == "create_table" for e in events)


def test_query_metadata_is_itself_recorded(repo):
    repo.create_table("t")
    repo.query_metadata("t", "description", caller="carol")
    queries = [
        e
        for e in opexec.read_events(repo.root)
        if e.get("event") == "query" and e.get("author") == "carol"
    ]
    assert len(queries) == 1
    assert queries[0]["selector"]["facet"] == "description"


def test_query_metadata_unknown_selector(repo):
    with pytest.raises(NotFound):
        repo.query_metadata("ghost", "description")
    repo.create_table("t")
    with pytest.raises(NotFound):
        repo.query_metadata("t", "nonsense")


# -- invariants ------------------------------------------------------------------------------------


def test_layout_walk_finds_no_stray_files(repo, stories):
    build_document_store(repo, stories)
    seeded_table(repo, "extra", versions=2)
    repo.delete_instance("extra", repo.committed_instances("extra")[0])
    assert repo.audit() == []


def test_immutability_digest_constant_until_archival(repo):
    (iid,) = seeded_table(repo, "t", versions=1)
    frame = repo.get_dataframe("t", iid)
    digest1 = frame.data_digest(layout.artifacts_dir(repo.root, "t", iid))
    recorded = repo.query_metadata("t", "description", instance_id=iid)["data_digest"]
    assert digest1 == recorded
    again = repo.get_dataframe("t", iid)
    assert again.data_digest(layout.artifacts_dir(repo.root, "t", iid)) == digest1


def test_env_var_repo_opens(tmp_path, monkeypatch):
    r = init_repository(tmp_path / "envrepo", "alice")
    r.create_table("t")
    r.close()
    monkeypatch.setenv("TABLEVAULT_REPO", str(tmp_path / "envrepo"))
    from tablevault.cli import main

    assert main(["table", "list", "--json"]) == 0


def test_author_registry_collects_every_author_seen(repo):
    repo.create_table("t")
    repo.query_metadata("t", "description", caller="carol")
    bob = Repository(repo.root, author="bob")
    bob.create_instance("t")
    bob.close()
    assert {"alice", "bob", "carol"} <= repo.authors()
