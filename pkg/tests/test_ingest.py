import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kddgan.ingest import (
    ColumnSpec, EmptySourceError, ParseError, cardinality, class_distribution, clean,
    load_label_map, load_schema, map_labels, parse_nslkdd, to_nslkdd, validate_schema,
)

from conftest import FEATURES, record


def test_builtin_schema_has_41_features_and_one_label():
    schema = load_schema()
    assert len(schema) == 42
    assert [c.kind for c in schema].count("label") == 1
    assert [c.name for c in schema if c.kind == "categorical"] == ["protocol_type", "service", "flag"]
    assert [c.position for c in schema] == list(range(42))


def test_schema_validation_rejects_gaps_and_double_labels():
    with pytest.raises(ValueError):
        validate_schema([ColumnSpec("a", "continuous", 0), ColumnSpec("y", "label", 2)])
    with pytest.raises(ValueError):
        validate_schema([ColumnSpec("a", "label", 0), ColumnSpec("y", "label", 1)])
    with pytest.raises(ValueError):
        ColumnSpec("a", "numeric", 0)


def test_43_field_line_drops_difficulty():
    ds = parse_nslkdd(record("smurf", difficulty=21, src_bytes=1032))
    assert len(ds) == 1
    assert len(ds.feature_specs) == 41
    assert ds.labels[0] == "smurf"
    assert ds.column("src_bytes")[0] == 1032.0
    assert len(ds.row(0)) == 42


def test_42_field_line_and_stream_input():
    text = record("normal") + "\n" + record("neptune", count=300) + "\n"
    ds = parse_nslkdd(io.BytesIO(text.encode()))
    assert list(ds.labels) == ["normal", "neptune"]
    assert ds.column("count")[1] == 300


def test_empty_source():
    with pytest.raises(EmptySourceError, match="empty source"):
        parse_nslkdd("")
    with pytest.raises(EmptySourceError):
        parse_nslkdd("\n  \n")


def test_bad_field_count_reports_line_number():
    text = record() + "\n" + "1,2,3\n"
    with pytest.raises(ParseError) as err:
        parse_nslkdd(text)
    assert err.value.line == 2
    assert "line 2" in str(err.value)


def test_star_token_kept_as_missing_marker():
    ds = parse_nslkdd(record(src_bytes="*"))
    assert len(ds) == 1
    assert np.isnan(ds.column("src_bytes")[0])
    assert ds.tokens["src_bytes"] == {0: "*"}
    assert ds.row(0)[FEATURES.index("src_bytes")] == "*"


def test_clean_replaces_sentinels_with_zero():
    ds = parse_nslkdd("\n".join([record(src_bytes="99999"), record(dst_bytes="*"), record(src_bytes=5)]))
    out, rep = clean(ds)
    assert len(out) == 3
    assert list(out.column("src_bytes")) == [0.0, 0.0, 5.0]
    assert list(out.column("dst_bytes")) == [0.0, 0.0, 0.0]
    assert rep.cells_replaced == 2
    assert rep.rows_dropped == 0


def test_sentinels_match_whole_cells_only():
    ds = parse_nslkdd("\n".join([record(src_bytes="999990"), record(service="*x")]))
    out, rep = clean(ds)
    assert rep.cells_replaced == 0
    assert out.column("src_bytes")[0] == 999990.0
    assert out.column("service")[1] == "*x"


def test_categorical_sentinel_becomes_zero_token():
    out, rep = clean(parse_nslkdd(record(flag="*")))
    assert out.column("flag")[0] == "0"
    assert rep.cells_replaced == 1


def test_clean_identity_on_clean_data():
    text = "\n".join(record(count=i) for i in range(5))
    ds = parse_nslkdd(text)
    out, rep = clean(ds)
    assert rep.as_dict() == {"rows_in": 5, "rows_dropped": 0, "cells_replaced": 0}
    assert to_nslkdd(out) == to_nslkdd(ds)


def test_one_missing_row_in_1000_is_dropped():
    lines = [record(count=i % 50) for i in range(1000)]
    lines[417] = record(duration="")
    out, rep = clean(parse_nslkdd("\n".join(lines)))
    assert len(out) == 999
    assert rep.rows_dropped == 1


def test_unparseable_non_sentinel_cell_is_missing():
    out, rep = clean(parse_nslkdd("\n".join([record(hot="abc"), record()])))
    assert len(out) == 1 and rep.rows_dropped == 1


def test_drop_missing_off_keeps_rows():
    out, rep = clean(parse_nslkdd("\n".join([record(hot=""), record()])), drop_missing=False)
    assert len(out) == 2 and rep.rows_dropped == 0


def test_clean_is_idempotent(small_ds):
    once, _ = clean(small_ds)
    twice, rep = clean(once)
    assert to_nslkdd(twice) == to_nslkdd(once)
    assert rep.rows_dropped == 0 and rep.cells_replaced == 0


def test_cardinality():
    ds = parse_nslkdd("\n".join([record(protocol_type="tcp"), record(protocol_type="udp"), record(protocol_type="tcp")]))
    assert cardinality(ds, "protocol_type") == 2
    assert cardinality(ds, "duration") == 1
    with pytest.raises(KeyError):
        cardinality(ds, "nope")


def test_class_distribution_ordering():
    ds = parse_nslkdd("\n".join([record("a"), record("b"), record("a")]))
    hist = class_distribution(ds)
    assert hist.entries == {"a": 2, "b": 1}
    assert hist.total == 3
    assert hist.to_csv() == "class,count\na,2\nb,1\n"


def test_class_distribution_of_empty_selection():
    ds = parse_nslkdd(record("a"))
    hist = class_distribution(ds.take([]))
    assert hist.entries == {} and hist.total == 0


def test_synthetic_sample_has_normal_as_mode_and_neptune_as_top_attack(small_ds):
    names = list(class_distribution(small_ds).entries)
    assert names[0] == "normal" and names[1] == "neptune"


def test_protocol_type_cardinality_is_three(small_ds):
    assert cardinality(small_ds, "protocol_type") == 3


def test_map_labels_relabels_and_filters(small_ds):
    raw = class_distribution(small_ds).entries
    out, dropped = map_labels(small_ds, {"back": "DDoS", "pod": "DDoS", "*": "other"}, keep={"DDoS"})
    assert set(out.labels) == {"DDoS"}
    assert len(out) == raw.get("back", 0) + raw.get("pod", 0)
    assert dropped == {"other": len(small_ds) - len(out)}


def test_map_labels_identity(small_ds):
    labels = set(small_ds.labels)
    out, dropped = map_labels(small_ds, {k: k for k in labels})
    assert dropped == {}
    assert to_nslkdd(out) == to_nslkdd(small_ds)


def test_map_labels_names_unmapped_label():
    ds = parse_nslkdd("\n".join([record("normal"), record("zz_unknown")]))
    with pytest.raises(KeyError, match="zz_unknown"):
        map_labels(ds, {"normal": "normal"})


def test_default_label_map_covers_report_classes():
    m = load_label_map()
    report = {v for v in m.values()} - {"other"}
    assert report == {"DDoS", "ipsweep", "neptune", "nmap", "normal", "portsweep", "satan", "smurf"}
    assert m["neptune"] == "neptune" and m["back"] == "DDoS" and m["*"] == "other"


def test_take_keeps_tokens_aligned():
    ds = parse_nslkdd("\n".join([record(), record(src_bytes="*"), record()]))
    sub = ds.take([1, 2])
    assert sub.tokens == {"src_bytes": {0: "*"}}


finite = st.floats(min_value=-1e12, max_value=1e12, allow_nan=False, allow_infinity=False)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(finite, finite, st.integers(0, 10**9)), min_size=1, max_size=8))
def test_serialize_parse_roundtrip_is_bit_exact(cells):
    text = "\n".join(record(duration=repr(a), dst_host_serror_rate=repr(b), count=c) for a, b, c in cells)
    ds = parse_nslkdd(text)
    again = parse_nslkdd(to_nslkdd(ds))
    for name in FEATURES:
        x, y = ds.column(name), again.column(name)
        if x.dtype == object:
            assert list(x) == list(y)
        else:
            assert x.tobytes() == y.tobytes()


@settings(max_examples=40, deadline=None)
@given(st.lists(st.sampled_from(["a", "b", "c", "d"]), min_size=1, max_size=30))
def test_histogram_sums_to_rows_and_cardinality_bounded(labels):
    ds = parse_nslkdd("\n".join(record(lab, protocol_type=lab) for lab in labels))
    hist = class_distribution(ds)
    assert sum(hist.entries.values()) == hist.total == len(labels)
    assert 1 <= cardinality(ds, "protocol_type") <= len(labels)
