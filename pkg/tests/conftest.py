import numpy as np
import pytest

from signrec.graph import Interaction, build_graph


def random_interactions(rng, n, m, p_pos=0.3, p_neg=0.15):
    rows = []
    for u in range(n):
        for i in range(m):
            r = rng.random()
            if r < p_pos:
                rows.append(Interaction(u, i, 1))
            elif r < p_pos + p_neg:
                rows.append(Interaction(u, i, 0))
    return rows


def random_graph(rng, n, m, p_pos=0.3, p_neg=0.15):
    return build_graph(random_interactions(rng, n, m, p_pos, p_neg), n, m)


def dense_adjacency(graph, sign):
    a = np.zeros((graph.order, graph.order))
    for v in range(graph.order):
        nbrs = graph.pos_adj(v) if sign == 1 else graph.neg_adj(v)
        a[v, nbrs] = 1.0
    return a


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE: dict[str, tuple[str, str]] = {}


def record_criterion(name, status, detail):
    """Remember one acceptance outcome for the end-of-run summary."""
    ACCEPTANCE[name] = (status, detail)
    print(f"[{status}] criterion {name}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE, key=lambda k: int(k.split()[0].rstrip("abc"))):
        status, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{status:4}  {name}: {detail}")
