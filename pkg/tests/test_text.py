from artkit.artformer.config import ArtFormerConfig
from artkit.dataset import template_vocabulary
from artkit.text import MAX_TOKENS, bucket, bucket_ids, parse_counts, tokenize


def test_tokenize():
    assert tokenize("Two Drawers.") == ["two", "drawers"]
    assert len(tokenize("two drawers")) == 2
    assert len(tokenize(" ".join(["x"] * 100))) == MAX_TOKENS


def test_bucket_range_and_stability():
    ids = bucket_ids("a cabinet with two drawers", 16, "s")
    assert all(1 <= i < 16 for i in ids)
    assert ids == bucket_ids("A cabinet, with two drawers!", 16, "s")
    assert bucket("door", 4096, "a") != bucket("door", 4096, "b") or bucket("door", 4096, "c") != bucket("door", 4096, "a")


def test_template_vocabulary_has_no_collisions():
    cfg = ArtFormerConfig()
    words = template_vocabulary()
    buckets = {bucket(w, cfg.text_buckets, cfg.text_salt) for w in words}
    assert len(words) > 40 and len(buckets) == len(words)


def test_parse_counts():
    assert parse_counts("two drawers and one hinged door") == {"drawer": 2, "door": 1}
    assert parse_counts("four sliding drawers") == {"drawer": 4, "door": 0}
    assert parse_counts("the drawers slide out and the doors swing") == {"drawer": 0, "door": 0}
    assert parse_counts("a bottle with a screw cap") == {"drawer": 0, "door": 0}
    assert parse_counts("a single door") == {"drawer": 0, "door": 1}
