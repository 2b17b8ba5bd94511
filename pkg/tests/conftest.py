import numpy as np
import pytest

from handoff_lab.corpus import build_all_instances, build_vocabulary, parse_dialog_file, CandidateSet
from handoff_lab.memn2n import Encoder, Hyperparams, MemN2N

TOY_TEXT = """\
1 hi\thello what can i help you with today
2 book a table in rome\ti'm on it
3 resto_a R_rating 5
4 resto_b R_rating 3
5 <SILENCE>\twhat do you think of this option: resto_a
6 no\tsure let me find an other option for you
7 <SILENCE>\twhat do you think of this option: resto_b
8 yes\tgreat let me do the reservation

1 hello\thello what can i help you with today
2 book a table in paris\ti'm on it
3 resto_c R_rating 7
4 <SILENCE>\twhat do you think of this option: resto_c
5 yes\tgreat let me do the reservation
6 thanks\tyou're welcome
"""


class World:
    def __init__(self, text=TOY_TEXT, d=5, hops=2, memory_cap=8):
        self.dialogs = parse_dialog_file(text)
        texts = []
        for dlg in self.dialogs:
            for e in dlg.exchanges:
                if e.bot not in texts:
                    texts.append(e.bot)
        self.cands = CandidateSet.from_texts(texts)
        self.vocab = build_vocabulary(self.dialogs, [], self.cands, n_turn_markers=6)
        self.encoder = Encoder(self.vocab, self.cands, memory_cap)
        self.instances = build_all_instances(self.dialogs, self.cands)
        self.data = self.encoder.encode(self.instances)
        self.hyper = Hyperparams(d=d, hops=hops, memory_cap=memory_cap)
        self.model = MemN2N.from_encoder(self.hyper, self.encoder)


@pytest.fixture
def world():
    return World()


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria (minutes)")


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS):
            terminalreporter.write_line(line)
