"""Average precision straight from its definition, kept deliberately naive."""


def precision_at(ranked, relevant, k):
    return sum(1 for item in ranked[:k] if item in relevant) / k


def oracle_ap(ranked, relevant):
    if not relevant:
        return None
    total = 0.0
    for k in range(1, len(ranked) + 1):
        rel_k = 1 if ranked[k - 1] in relevant else 0
        total += precision_at(ranked, relevant, k) * rel_k
    return total / len(relevant)
