"""
A synthetic document corpus and its zero-shot splits
====================================================

Every document carries three views: a rendered image, a clean content
string (what a good OCR engine would read) and a noisy one. Class names are
built from the same keywords that appear in the documents, which is what
lets a model generalize to classes it never trained on.
"""

from collections import Counter

from contentalign import SyntheticSpec, generate_synthetic_corpus, make_sequential_splits, validate_split

corpus = generate_synthetic_corpus(SyntheticSpec())
print(f"{len(corpus)} records, {len(corpus.classes)} classes")

# a class name is its keywords joined by spaces
for c in corpus.classes[:4]:
    print(f"  class {c.index:2d}: {c.name}")

# one record, both content channels side by side
rid = corpus.ids[0]
print("\nclean :", corpus.text(rid, "clean")[:100])
print("noisy :", corpus.text(rid, "noisy")[:100])

# four sequential splits hold out four contiguous classes each
for split in make_sequential_splits(corpus.classes):
    unseen = [corpus.classes[k].name for k in sorted(split.unseen)]
    problems = validate_split(split, corpus)
    print(f"\nsplit {split.name}: {len(split.seen)} seen, unseen {unseen}, problems {problems or 'none'}")

print("\nrecords per class:", sorted(Counter(corpus.labels().tolist()).values())[:3], "...")
