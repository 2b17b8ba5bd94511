"""bAbI-dialog corpus files: parsing, serialization, vocabularies and per-turn instances.

A dialog file is a sequence of numbered lines, dialogs separated by one blank
line.  Exchange lines look like ``N user text<TAB>bot text``; knowledge-base
lines look like ``N entity attribute value`` and carry no tab.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

PAD = "<PAD>"
UNK = "<UNK>"
PAD_ID = 0
UNK_ID = 1
USER_MARK = "$user"
BOT_MARK = "$bot"
DEFAULT_TURN_MARKERS = 64

Tokens = tuple[str, ...]


class CorpusError(ValueError):
    """Malformed corpus or candidate data."""


class ParseError(CorpusError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def tokenize(text: str) -> Tokens:
    return tuple(text.split())


@dataclass(frozen=True)
class Exchange:
    user: Tokens
    bot: Tokens


@dataclass(frozen=True)
class KbFact:
    entity: str
    attribute: str
    value: str


@dataclass(frozen=True)
class DialogLine:
    line_no: int
    kind: Union[Exchange, KbFact]

    def to_text(self) -> str:
        if isinstance(self.kind, Exchange):
            return f"{self.line_no} {' '.join(self.kind.user)}\t{' '.join(self.kind.bot)}"
        k = self.kind
        return f"{self.line_no} {k.entity} {k.attribute} {k.value}"


@dataclass(frozen=True)
class Dialog:
    lines: tuple[DialogLine, ...]

    def __post_init__(self):
        if not self.lines:
            raise CorpusError("dialog has no lines")
        if not any(isinstance(ln.kind, Exchange) for ln in self.lines):
            raise CorpusError("dialog has no exchange line")
        for i, ln in enumerate(self.lines, start=1):
            if ln.line_no != i:
                raise CorpusError(f"line numbers not consecutive: expected {i}, got {ln.line_no}")

    @classmethod
    def from_parts(cls, parts: Iterable[Union[Exchange, KbFact]]) -> "Dialog":
        return cls(tuple(DialogLine(i, p) for i, p in enumerate(parts, start=1)))

    @property
    def exchanges(self) -> list[Exchange]:
        return [ln.kind for ln in self.lines if isinstance(ln.kind, Exchange)]

    @property
    def facts(self) -> list[KbFact]:
        return [ln.kind for ln in self.lines if isinstance(ln.kind, KbFact)]


def _parse_line(raw: str, lineno: int) -> DialogLine:
    num, sep, rest = raw.partition(" ")
    if not sep or not num.isdigit() or int(num) < 1:
        raise ParseError(lineno, f"malformed line number in {raw!r}")
    n_tabs = rest.count("\t")
    if n_tabs > 1:
        raise ParseError(lineno, "more than one tab separator")
    if n_tabs == 1:
        user, bot = rest.split("\t")
        return DialogLine(int(num), Exchange(tokenize(user), tokenize(bot)))
    fields = rest.split()
    if len(fields) != 3:
        raise ParseError(lineno, f"knowledge-base line needs 3 fields, got {len(fields)}")
    return DialogLine(int(num), KbFact(*fields))


def parse_dialog_file(text: str) -> list[Dialog]:
    dialogs: list[Dialog] = []
    current: list[DialogLine] = []
    start = 1

    def flush():
        if not current:
            return
        try:
            dialogs.append(Dialog(tuple(current)))
        except CorpusError as exc:
            raise ParseError(start, str(exc)) from None
        current.clear()

    for lineno, raw in enumerate(text.split("\n"), start=1):
        raw = raw.rstrip("\r")
        if not raw.strip():
            flush()
            continue
        if not current:
            start = lineno
        line = _parse_line(raw, lineno)
        if current and line.line_no == 1:
            # tolerate files that restart numbering without a blank separator
            flush()
            start = lineno
        elif line.line_no != len(current) + 1:
            raise ParseError(lineno, f"expected line number {len(current) + 1}, got {line.line_no}")
        current.append(line)
    flush()
    return dialogs


def serialize_dialogs(dialogs: Sequence[Dialog]) -> str:
    blocks = ["".join(ln.to_text() + "\n" for ln in d.lines) for d in dialogs]
    return "\n".join(blocks)


@dataclass(frozen=True)
class CandidateSet:
    candidates: tuple[Tokens, ...]
    index_of: dict[str, int] = field(compare=False, repr=False)

    @classmethod
    def from_texts(cls, texts: Iterable[Sequence[str]]) -> "CandidateSet":
        cands: list[Tokens] = []
        index: dict[str, int] = {}
        for toks in texts:
            toks = tuple(toks)
            key = " ".join(toks)
            if key in index:
                raise CorpusError(f"duplicate candidate: {key!r}")
            index[key] = len(cands)
            cands.append(toks)
        return cls(tuple(cands), index)

    def __len__(self) -> int:
        return len(self.candidates)

    def lookup(self, tokens: Sequence[str]) -> int:
        key = " ".join(tokens)
        try:
            return self.index_of[key]
        except KeyError:
            raise CorpusError(f"response not in candidate set: {key!r}") from None

    def to_text(self) -> str:
        return "".join(f"{i} {' '.join(c)}\n" for i, c in enumerate(self.candidates, start=1))


def load_candidates(text: str) -> CandidateSet:
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        num, sep, rest = raw.partition(" ")
        if not sep or not num.isdigit():
            raise ParseError(lineno, f"malformed candidate line {raw!r}")
        rows.append(tokenize(rest))
    return CandidateSet.from_texts(rows)


def turn_marker(k: int) -> str:
    return f"#{k}"


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "token_to_id", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def id(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def ids(self, tokens: Iterable[str]) -> list[int]:
        get = self.token_to_id.get
        return [get(t, UNK_ID) for t in tokens]

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()[:16]


def dialog_tokens(dialog: Dialog) -> set[str]:
    out: set[str] = set()
    for ln in dialog.lines:
        k = ln.kind
        if isinstance(k, Exchange):
            out.update(k.user)
            out.update(k.bot)
        else:
            out.update((k.entity, k.attribute, k.value))
    return out


def build_vocabulary(
    train: Sequence[Dialog],
    dev: Sequence[Dialog],
    cands: CandidateSet,
    n_turn_markers: int = DEFAULT_TURN_MARKERS,
) -> Vocabulary:
    seen: set[str] = {USER_MARK, BOT_MARK}
    seen.update(turn_marker(k) for k in range(1, n_turn_markers + 1))
    for d in list(train) + list(dev):
        seen |= dialog_tokens(d)
    for c in cands.candidates:
        seen.update(c)
    seen -= {PAD, UNK}
    return Vocabulary((PAD, UNK) + tuple(sorted(seen)))


@dataclass(frozen=True)
class Instance:
    """One system turn: the history before it, the user query and the gold response."""

    memory: tuple[Tokens, ...]
    query: Tokens
    answer: int
    dialog_id: int = 0
    turn_index: int = 0


def memory_sentences(lines: Iterable[DialogLine]) -> list[Tokens]:
    sents: list[Tokens] = []
    turn = 0
    for ln in lines:
        k = ln.kind
        if isinstance(k, Exchange):
            turn += 1
            mark = turn_marker(turn)
            sents.append(k.user + (USER_MARK, mark))
            sents.append(k.bot + (BOT_MARK, mark))
        else:
            sents.append((k.entity, k.attribute, k.value))
    return sents


def build_instances(dialog: Dialog, cands: CandidateSet, dialog_id: int = 0) -> list[Instance]:
    out = []
    sents: list[Tokens] = []
    turn = 0
    for ln in dialog.lines:
        k = ln.kind
        if isinstance(k, KbFact):
            sents.append((k.entity, k.attribute, k.value))
            continue
        out.append(Instance(tuple(sents), k.user, cands.lookup(k.bot), dialog_id, turn))
        turn += 1
        mark = turn_marker(turn)
        sents.append(k.user + (USER_MARK, mark))
        sents.append(k.bot + (BOT_MARK, mark))
    return out


def build_all_instances(dialogs: Sequence[Dialog], cands: CandidateSet, first_id: int = 0) -> list[Instance]:
    out = []
    for i, d in enumerate(dialogs):
        out.extend(build_instances(d, cands, first_id + i))
    return out


def read_dialogs(path) -> list[Dialog]:
    with open(path, encoding="utf-8") as fh:
        return parse_dialog_file(fh.read())


def write_dialogs(path, dialogs: Sequence[Dialog]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize_dialogs(dialogs))
