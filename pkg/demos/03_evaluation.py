"""Exact-match containment, token F1, and report aggregation."""
from cocoa import exact_match, f1_score, normalize_answer

pairs = [
    ("Paris", ["Paris"]),
    ("it is in Paris, France", ["Paris"]),
    ("New York City", ["York New"]),           # containment is order-sensitive
    ("carthage", ["art"]),                     # tokens, not raw substrings
    ("the eiffel tower in paris", ["Paris"]),  # long answers dilute precision
]

print(f"{'prediction':<28} {'golds':<16} EM    F1")
for prediction, golds in pairs:
    em = exact_match(prediction, golds)
    f1 = f1_score(prediction, golds)
    print(f"{prediction:<28} {str(golds):<16} {em}   {f1:.4f}")

print()
print("normalization drops case, punctuation, and articles:")
for text in ("The Eiffel Tower!", "U.S.A.", "a an the"):
    print(f"  {text!r} -> {normalize_answer(text)}")

# Aggregate scoring works directly on pipeline records; see demo 02 for how
# records are produced and `cocoa eval` for the command-line path.
