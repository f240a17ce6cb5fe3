"""Dialog corpus model, line-delimited file format, vocabularies, synthetic data.

Corpus files are UTF-8 with one JSON object per line. An optional first line
is a header carrying the label inventory; every other line is one dialog:

    {"sentiment_labels": [...], "act_labels": [...], "neutral_sentiment": "Neutral"}
    {"id": "d1", "utterances": [{"speaker": 1, "tokens": ["hi"],
                                 "sentiment": "Neutral", "act": "Statement"}, ...]}

Labels travel as names on disk and are resolved to dense ids on load.
"""

from __future__ import annotations

import json
import random
import warnings
from collections import Counter
from dataclasses import dataclass, field

PAD_ID = 0
UNK_ID = 1

SENTIMENT_NAMES = ["Negative", "Neutral", "Positive"]
ACT_NAMES = ["Statement", "Question", "Agreement", "Disagreement"]

# synthetic generator: token emission fidelity (the label rule noise is a parameter)
_ACT_MARKER_ACC = 0.90
_SENT_MARKER_ACC = 0.85
_MARKERS_PER_LABEL = 5


class CorpusError(ValueError):
    """Malformed or inconsistent corpus content."""


class ConfigError(ValueError):
    """Invalid configuration value."""


@dataclass
class Utterance:
    speaker: int          # 1-based speaker id
    tokens: list[str]
    sentiment: int        # label id
    act: int              # label id


@dataclass
class Dialog:
    id: str
    utterances: list[Utterance]

    def __len__(self) -> int:
        return len(self.utterances)

    @property
    def speakers(self) -> list[int]:
        return [u.speaker for u in self.utterances]


@dataclass
class LabelVocab:
    sentiment_names: list[str]
    act_names: list[str]
    neutral_sentiment: int | None = None

    def __post_init__(self):
        if len(set(self.sentiment_names)) != len(self.sentiment_names):
            raise CorpusError("duplicate sentiment label names")
        if len(set(self.act_names)) != len(self.act_names):
            raise CorpusError("duplicate act label names")
        if self.neutral_sentiment is not None and not (
            0 <= self.neutral_sentiment < len(self.sentiment_names)
        ):
            raise CorpusError("neutral sentiment index out of range")

    @property
    def n_sentiments(self) -> int:
        return len(self.sentiment_names)

    @property
    def n_acts(self) -> int:
        return len(self.act_names)

    def header(self) -> dict:
        neutral = (
            None
            if self.neutral_sentiment is None
            else self.sentiment_names[self.neutral_sentiment]
        )
        return {
            "sentiment_labels": list(self.sentiment_names),
            "act_labels": list(self.act_names),
            "neutral_sentiment": neutral,
        }

    @classmethod
    def from_header(cls, obj: dict) -> "LabelVocab":
        sentiments = list(obj["sentiment_labels"])
        acts = list(obj["act_labels"])
        neutral_name = obj.get("neutral_sentiment")
        neutral = None
        if neutral_name is not None:
            if neutral_name not in sentiments:
                raise CorpusError(f"neutral sentiment {neutral_name!r} not in sentiment_labels")
            neutral = sentiments.index(neutral_name)
        return cls(sentiments, acts, neutral)


class TokenVocab:
    """token -> id map with reserved ids 0=PAD, 1=UNK."""

    def __init__(self, tokens: list[str]):
        self.tokens = ["<pad>", "<unk>"] + list(tokens)
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise CorpusError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, tokens: list[str]) -> list[int]:
        return [self.index.get(tok, UNK_ID) for tok in tokens]


def validate_dialog(dialog: Dialog, vocab: LabelVocab, n_speakers: int | None = None) -> None:
    """Check the structural invariants of one dialog; raise CorpusError otherwise."""
    if not dialog.utterances:
        raise CorpusError(f"dialog {dialog.id!r}: must contain at least one utterance")
    for k, utt in enumerate(dialog.utterances):
        where = f"dialog {dialog.id!r}, utterance {k + 1}"
        if not isinstance(utt.speaker, int) or utt.speaker < 1:
            raise CorpusError(f"{where}: speaker must be a positive integer")
        if n_speakers is not None and utt.speaker > n_speakers:
            raise CorpusError(f"{where}: speaker {utt.speaker} exceeds n_speakers={n_speakers}")
        if not utt.tokens or not all(isinstance(t, str) and t for t in utt.tokens):
            raise CorpusError(f"{where}: tokens must be a non-empty list of non-empty strings")
        if not (0 <= utt.sentiment < vocab.n_sentiments):
            raise CorpusError(f"{where}: sentiment id {utt.sentiment} out of range")
        if not (0 <= utt.act < vocab.n_acts):
            raise CorpusError(f"{where}: act id {utt.act} out of range")


def validate_corpus(dialogs: list[Dialog], vocab: LabelVocab, n_speakers: int | None = None) -> None:
    for dialog in dialogs:
        validate_dialog(dialog, vocab, n_speakers)


def _normalize_speakers(raw: list[int]) -> list[int]:
    """Renumber speakers to 1..S in order of first appearance."""
    mapping: dict[int, int] = {}
    out = []
    for s in raw:
        if s not in mapping:
            mapping[s] = len(mapping) + 1
        out.append(mapping[s])
    return out


class _LabelResolver:
    """Name -> id resolution against a declared header or by accumulation."""

    def __init__(self, header: LabelVocab | None):
        self.header = header
        self.seen_sentiments: dict[str, int] = {}
        self.seen_acts: dict[str, int] = {}

    def sentiment(self, name: str, lineno: int) -> int:
        if self.header is not None:
            if name not in self.header.sentiment_names:
                raise CorpusError(f"line {lineno}: unknown sentiment label {name!r}")
            return self.header.sentiment_names.index(name)
        return self.seen_sentiments.setdefault(name, len(self.seen_sentiments))

    def act(self, name: str, lineno: int) -> int:
        if self.header is not None:
            if name not in self.header.act_names:
                raise CorpusError(f"line {lineno}: unknown act label {name!r}")
            return self.header.act_names.index(name)
        return self.seen_acts.setdefault(name, len(self.seen_acts))

    def vocab(self) -> LabelVocab:
        if self.header is not None:
            return self.header
        return LabelVocab(list(self.seen_sentiments), list(self.seen_acts), None)


def _parse_dialog(obj: dict, lineno: int, resolver: _LabelResolver) -> Dialog:
    try:
        dialog_id = obj["id"]
        raw_utts = obj["utterances"]
    except (KeyError, TypeError) as exc:
        raise CorpusError(f"line {lineno}: dialog object missing {exc}") from None
    if not isinstance(raw_utts, list) or not raw_utts:
        raise CorpusError(f"line {lineno}: 'utterances' must be a non-empty list")
    utterances = []
    for k, raw in enumerate(raw_utts):
        try:
            speaker = raw["speaker"]
            tokens = raw["tokens"]
            sentiment = resolver.sentiment(raw["sentiment"], lineno)
            act = resolver.act(raw["act"], lineno)
        except (KeyError, TypeError) as exc:
            raise CorpusError(f"line {lineno}: utterance {k + 1} missing {exc}") from None
        utterances.append(Utterance(speaker, list(tokens), sentiment, act))
    speakers = _normalize_speakers([u.speaker for u in utterances])
    for utt, s in zip(utterances, speakers):
        utt.speaker = s
    return Dialog(str(dialog_id), utterances)


def load_corpus(path) -> tuple[list[Dialog], LabelVocab]:
    """Parse a corpus file into dialogs plus the label vocabulary."""
    dialogs: list[Dialog] = []
    resolver: _LabelResolver | None = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            if resolver is None:
                if isinstance(obj, dict) and "sentiment_labels" in obj:
                    resolver = _LabelResolver(LabelVocab.from_header(obj))
                    continue
                resolver = _LabelResolver(None)
            if not isinstance(obj, dict):
                raise CorpusError(f"line {lineno}: expected a JSON object")
            dialogs.append(_parse_dialog(obj, lineno, resolver))
    if resolver is None:
        warnings.warn(f"corpus file {path} is empty", stacklevel=2)
        return [], LabelVocab([], [], None)
    vocab = resolver.vocab()
    validate_corpus(dialogs, vocab)
    return dialogs, vocab


def write_corpus(path, dialogs: list[Dialog], vocab: LabelVocab, include_header: bool = True) -> None:
    """Write dialogs in the line-delimited format (labels as names)."""
    with open(path, "w", encoding="utf-8") as fh:
        if include_header:
            fh.write(json.dumps(vocab.header()) + "\n")
        for dialog in dialogs:
            obj = {
                "id": dialog.id,
                "utterances": [
                    {
                        "speaker": u.speaker,
                        "tokens": u.tokens,
                        "sentiment": vocab.sentiment_names[u.sentiment],
                        "act": vocab.act_names[u.act],
                    }
                    for u in dialog.utterances
                ],
            }
            fh.write(json.dumps(obj) + "\n")


def remap_labels(dialogs: list[Dialog], source: LabelVocab, target: LabelVocab) -> list[Dialog]:
    """Re-express label ids from one vocabulary in another (names must exist)."""
    try:
        sent_map = [target.sentiment_names.index(n) for n in source.sentiment_names]
        act_map = [target.act_names.index(n) for n in source.act_names]
    except ValueError as exc:
        raise CorpusError(f"label not present in target vocabulary: {exc}") from None
    out = []
    for d in dialogs:
        utts = [
            Utterance(u.speaker, list(u.tokens), sent_map[u.sentiment], act_map[u.act])
            for u in d.utterances
        ]
        out.append(Dialog(d.id, utts))
    return out


def build_token_vocab(dialogs: list[Dialog], min_count: int = 1) -> TokenVocab:
    """Frequency-filtered vocabulary; id order is count desc, then lexicographic."""
    if min_count < 1:
        raise ConfigError("min_count must be >= 1")
    counts = Counter()
    for d in dialogs:
        for u in d.utterances:
            counts.update(u.tokens)
    kept = sorted(
        (tok for tok, c in counts.items() if c >= min_count),
        key=lambda tok: (-counts[tok], tok),
    )
    return TokenVocab(kept)


def split_corpus(dialogs: list[Dialog], fractions: tuple[float, ...], seed: int) -> tuple[list[Dialog], ...]:
    """Seeded random partition of dialogs by the given fractions (must sum to 1)."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1, got {fractions}")
    order = list(range(len(dialogs)))
    random.Random(seed).shuffle(order)
    parts: list[list[Dialog]] = []
    start = 0
    for i, frac in enumerate(fractions):
        stop = len(dialogs) if i == len(fractions) - 1 else start + round(frac * len(dialogs))
        parts.append([dialogs[j] for j in order[start:stop]])
        start = stop
    return tuple(parts)


def _marker_words(names: list[str]) -> dict[int, list[str]]:
    return {
        i: [f"{name.lower()}{j}" for j in range(_MARKERS_PER_LABEL)]
        for i, name in enumerate(names)
    }


def _flip_sentiment(s: int) -> int:
    # Negative <-> Positive; Neutral is its own opposite
    return {0: 2, 1: 1, 2: 0}[s]


def gen_synthetic(
    seed: int,
    n_dialogs: int,
    n_utt_range: tuple[int, int] = (4, 10),
    n_speakers: int = 2,
    vocab_size: int = 60,
    noise: float = 0.1,
) -> tuple[list[Dialog], LabelVocab]:
    """Generate dialogs with a planted sentiment-act correlation.

    Acts follow a Markov chain. The sentiment of an utterance is tied to
    (previous sentiment, own act): Agreement copies the previous sentiment,
    Disagreement flips Positive<->Negative, anything else resamples. With
    probability `noise` the rule is ignored and the sentiment resampled.

    Tokens come from unigram distributions conditioned on the utterance's own
    (sentiment, act) pair: every utterance carries an act marker, but only
    statements and questions carry a sentiment marker. The text is therefore
    informative but imperfect, and the sentiment of agreement/disagreement
    turns is only recoverable by combining neighbors' labels with the rule.
    """
    lo, hi = n_utt_range
    if n_speakers < 2:
        raise ConfigError("n_speakers must be >= 2")
    if not (2 <= lo <= hi <= 30):
        raise ConfigError(f"n_utt_range must lie within [2, 30], got {n_utt_range}")
    if not (0.0 <= noise <= 1.0):
        raise ConfigError("noise must be within [0, 1]")
    if n_dialogs < 0:
        raise ConfigError("n_dialogs must be >= 0")
    n_markers = _MARKERS_PER_LABEL * (len(ACT_NAMES) + len(SENTIMENT_NAMES))
    if vocab_size < n_markers + 4:
        raise ConfigError(f"vocab_size must be >= {n_markers + 4}")

    rng = random.Random(seed)
    act_words = _marker_words(ACT_NAMES)
    sent_words = _marker_words(SENTIMENT_NAMES)
    fillers = [f"w{k}" for k in range(vocab_size - n_markers)]

    # row = previous act, column = next act (Statement, Question, Agreement,
    # Disagreement); replies lean on the agreement/disagreement acts so the
    # sentiment rule applies to most of the dialog
    transitions = {
        None: [0.55, 0.30, 0.075, 0.075],
        0: [0.20, 0.15, 0.30, 0.35],
        1: [0.30, 0.05, 0.35, 0.30],
        2: [0.20, 0.15, 0.35, 0.30],
        3: [0.20, 0.15, 0.30, 0.35],
    }
    agreement = ACT_NAMES.index("Agreement")
    disagreement = ACT_NAMES.index("Disagreement")

    def sample_marker(words: dict[int, list[str]], true_label: int, accuracy: float) -> str:
        if rng.random() < accuracy:
            bucket = true_label
        else:
            bucket = rng.choice([k for k in words if k != true_label])
        return rng.choice(words[bucket])

    dialogs = []
    for d in range(n_dialogs):
        n = rng.randint(lo, hi)
        speakers = [1]
        for _ in range(n - 1):
            if rng.random() < 0.7:
                speakers.append(rng.choice([s for s in range(1, n_speakers + 1) if s != speakers[-1]]))
            else:
                speakers.append(speakers[-1])
        speakers = _normalize_speakers(speakers)

        acts, sentiments = [], []
        for i in range(n):
            prev_act = acts[-1] if acts else None
            act = rng.choices(range(len(ACT_NAMES)), weights=transitions[prev_act])[0]
            acts.append(act)
            if i > 0 and act == agreement and rng.random() >= noise:
                s = sentiments[-1]
            elif i > 0 and act == disagreement and rng.random() >= noise:
                s = _flip_sentiment(sentiments[-1])
            else:
                s = rng.randrange(len(SENTIMENT_NAMES))
            sentiments.append(s)

        utterances = []
        for spk, act, s in zip(speakers, acts, sentiments):
            tokens = [sample_marker(act_words, act, _ACT_MARKER_ACC)]
            if act not in (agreement, disagreement):
                tokens.append(sample_marker(sent_words, s, _SENT_MARKER_ACC))
            tokens += [rng.choice(fillers) for _ in range(rng.randint(1, 3))]
            rng.shuffle(tokens)
            utterances.append(Utterance(spk, tokens, s, act))
        dialogs.append(Dialog(f"syn-{d:05d}", utterances))

    vocab = LabelVocab(list(SENTIMENT_NAMES), list(ACT_NAMES), SENTIMENT_NAMES.index("Neutral"))
    return dialogs, vocab
