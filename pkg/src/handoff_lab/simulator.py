"""Restaurant-booking dialog simulator with switchable user behaviors.

The ORIGINAL user policy exhibits four behaviors that the MODIFIED policy never
shows: volunteering a price range in the opening request, updating the
location, rejecting two or more proposals, and asking for the phone number.
Training on MODIFIED dialogs and testing on ORIGINAL ones reproduces the
"new behavior at deployment" setting.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .corpus import CandidateSet, Dialog, Exchange, KbFact

TEMPLATE_VERSION = 1

CUISINES = ("british", "cantonese", "french", "indian", "italian",
            "japanese", "korean", "spanish", "thai", "vietnamese")
LOCATIONS = ("bangkok", "beijing", "bombay", "hanoi", "london",
             "madrid", "paris", "rome", "seoul", "tokyo")
PRICES = ("cheap", "moderate", "expensive")
PARTY_SIZES = (2, 4, 6, 8)
NUMBER_WORDS = {2: "two", 4: "four", 6: "six", 8: "eight"}
RATINGS = tuple(range(1, 9))
SLOTS = ("cuisine", "location", "party", "price")

SILENCE = "<SILENCE>"
GREETING_BOT = "hello what can i help you with today"
ON_IT = "i'm on it"
ASK = {
    "cuisine": "any preference on a type of cuisine",
    "location": "where should it be",
    "party": "how many people would be in your party",
    "price": "which price range are looking for",
}
LOOKING = "ok let me look into some options for you"
UPDATE_ACK = "sure is there anything else to update"
PROPOSE = "what do you think of this option:"
REJECT_ACK = "sure let me find an other option for you"
ACCEPT_ACK = "great let me do the reservation"
HERE_IT_IS = "here it is"
ANYTHING_ELSE = "is there anything i can help you with"
WELCOME = "you're welcome"

# frozen with TEMPLATE_VERSION; candidate indices depend on this order
BOT_TEMPLATES = (GREETING_BOT, ON_IT, *ASK.values(), LOOKING, UPDATE_ACK,
                 REJECT_ACK, ACCEPT_ACK, ANYTHING_ELSE, WELCOME)

_GREET = ("hi", "hello", "good morning")
_REQUEST = ("i'd like to book a table", "can you book a table",
            "may i have a table", "can you make a restaurant reservation")
_VOLUNTEER = {
    "cuisine": ("with {} food", "with {} cuisine"),
    "location": ("in {}",),
    "party": ("for {} people", "for {}"),
    "price": ("in a {} price range",),
}
_ANSWER = {
    "cuisine": ("{} food please", "i love {} food", "with {} cuisine"),
    "location": ("{} please", "in {}", "i'd like it in {}"),
    "party": ("for {} please", "we will be {}", "{} people"),
    "price": ("in a {} price range please", "i am looking for a {} restaurant"),
}
_UPDATE = {
    "cuisine": ("instead could it be with {} food", "actually i would prefer {} food"),
    "location": ("instead could it be in {}", "actually i would prefer in {}"),
    "party": ("instead could it be for {} people", "actually we will be {}"),
    "price": ("instead could it be in a {} price range", "actually i would prefer a {} restaurant"),
}
_REJECT = ("no this does not work for me", "no i don't like that")
_ACCEPT = ("let's do it", "that looks great", "i love that")
_ASK_ADDRESS = ("may i have the address of the restaurant", "can you provide the address",
                "what is the address")
_ASK_PHONE = ("may i have the phone number of the restaurant", "what is the phone number",
              "can you provide the phone number")
_THANKS = ("you rock", "thanks", "thank you")
_BYE = ("no thank you", "no")


@dataclass(frozen=True)
class Restaurant:
    name: str
    cuisine: str
    location: str
    price_range: str
    party_size: int
    rating: int
    phone: str
    address: str

    def facts(self) -> list[KbFact]:
        return [
            KbFact(self.name, "R_phone", self.phone),
            KbFact(self.name, "R_cuisine", self.cuisine),
            KbFact(self.name, "R_address", self.address),
            KbFact(self.name, "R_location", self.location),
            KbFact(self.name, "R_number", NUMBER_WORDS[self.party_size]),
            KbFact(self.name, "R_price", self.price_range),
            KbFact(self.name, "R_rating", str(self.rating)),
        ]


@dataclass(frozen=True)
class KnowledgeBase:
    restaurants: tuple[Restaurant, ...]
    cuisines: tuple[str, ...]
    locations: tuple[str, ...]

    def matches(self, cuisine: str, location: str, party: int, price: str) -> list[Restaurant]:
        """Restaurants for a goal, best rated first; capacity must cover the party."""
        hits = [r for r in self.restaurants
                if r.cuisine == cuisine and r.location == location
                and r.price_range == price and r.party_size >= party]
        return sorted(hits, key=lambda r: -r.rating)

    def to_json(self) -> str:
        return json.dumps({
            "template_version": TEMPLATE_VERSION,
            "cuisines": list(self.cuisines),
            "locations": list(self.locations),
            "restaurants": [asdict(r) for r in self.restaurants],
        }, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "KnowledgeBase":
        raw = json.loads(text)
        return cls(tuple(Restaurant(**r) for r in raw["restaurants"]),
                   tuple(raw["cuisines"]), tuple(raw["locations"]))


def generate_kb(seed: int, n_cuisines: int, n_locations: int, ratings_per_size: int = 1) -> KnowledgeBase:
    if not (1 <= n_cuisines <= len(CUISINES) and 1 <= n_locations <= len(LOCATIONS)):
        raise ValueError("cuisine/location counts out of range")
    if not 1 <= ratings_per_size * len(PARTY_SIZES) <= len(RATINGS):
        raise ValueError("ratings_per_size too large for distinct ratings per group")
    rng = np.random.default_rng(seed)
    cuisines, locations = CUISINES[:n_cuisines], LOCATIONS[:n_locations]
    out = []
    for c in cuisines:
        for loc in locations:
            for p in PRICES:
                k = ratings_per_size * len(PARTY_SIZES)
                ratings = rng.choice(RATINGS, size=k, replace=False)
                for i, r in enumerate(ratings):
                    name = f"resto_{loc}_{p}_{c}_{r}stars"
                    size = PARTY_SIZES[i // ratings_per_size]
                    out.append(Restaurant(name, c, loc, p, size, int(r),
                                          f"{name}_phone", f"{name}_address"))
    return KnowledgeBase(tuple(out), cuisines, locations)


@dataclass(frozen=True)
class BehaviorPolicy:
    may_volunteer_price: bool
    may_update_location: bool
    max_rejections: Optional[int]  # None: bounded only by the number of matches
    may_ask_phone: bool


ORIGINAL = BehaviorPolicy(True, True, None, True)
MODIFIED = BehaviorPolicy(False, False, 1, False)
POLICIES = {"original": ORIGINAL, "modified": MODIFIED}


@dataclass(frozen=True)
class GeneratorConfig:
    p_volunteer: float = 0.5
    p_update: float = 0.5
    max_extra_rejections: int = 3
    p_address: float = 0.5
    p_phone: float = 0.75


@dataclass(frozen=True)
class BehaviorFlags:
    t1_volunteered_price: bool = False
    t2_updated_location: bool = False
    t3_rejected_two_or_more: bool = False
    t4_asked_phone: bool = False

    def count(self) -> int:
        return sum(asdict(self).values())


def api_call(cuisine: str, location: str, party: int, price: str) -> str:
    return f"api_call {cuisine} {location} {NUMBER_WORDS[party]} {price}"


def build_candidates(kb: KnowledgeBase) -> CandidateSet:
    texts = list(BOT_TEMPLATES)
    for c in kb.cuisines:
        for loc in kb.locations:
            for n in PARTY_SIZES:
                for p in PRICES:
                    texts.append(api_call(c, loc, n, p))
    for r in sorted(kb.restaurants, key=lambda r: r.name):
        texts.append(f"{PROPOSE} {r.name}")
        texts.append(f"{HERE_IT_IS} {r.address}")
        texts.append(f"{HERE_IT_IS} {r.phone}")
    return CandidateSet.from_texts(t.split() for t in texts)


def _pick(rng: np.random.Generator, options: Sequence[str]) -> str:
    return options[int(rng.integers(len(options)))]


def _value_word(slot: str, value) -> str:
    return NUMBER_WORDS[value] if slot == "party" else value


def generate_dialog(kb: KnowledgeBase, policy: BehaviorPolicy, rng: np.random.Generator,
                    config: GeneratorConfig = GeneratorConfig()) -> Dialog:
    if not kb.restaurants:
        raise ValueError("empty knowledge base")
    domains = {"cuisine": kb.cuisines, "location": kb.locations,
               "party": PARTY_SIZES, "price": PRICES}

    def sample_goal():
        return {s: d[int(rng.integers(len(d)))] for s, d in domains.items()}

    goal = sample_goal()
    while not kb.matches(goal["cuisine"], goal["location"], goal["party"], goal["price"]):
        goal = sample_goal()

    ex: list = []

    def say(user: str, bot: str):
        ex.append(Exchange(tuple(user.split()), tuple(bot.split())))

    say(_pick(rng, _GREET), GREETING_BOT)

    volunteered = [s for s in SLOTS if rng.random() < config.p_volunteer]
    if not policy.may_volunteer_price and "price" in volunteered:
        volunteered.remove("price")
    order = [volunteered[i] for i in rng.permutation(len(volunteered))]
    request = _pick(rng, _REQUEST)
    for s in order:
        request += " " + _pick(rng, _VOLUNTEER[s]).format(_value_word(s, goal[s]))
    say(request, ON_IT)

    missing = [s for s in SLOTS if s not in volunteered]
    user = SILENCE
    for s in missing:
        say(user, ASK[s])
        user = _pick(rng, _ANSWER[s]).format(_value_word(s, goal[s]))
    say(user, LOOKING)
    say(SILENCE, api_call(goal["cuisine"], goal["location"], goal["party"], goal["price"]))

    if rng.random() < config.p_update:
        slots = [s for s in SLOTS if policy.may_update_location or s != "location"]
        for _ in range(100):
            slot = slots[int(rng.integers(len(slots)))]
            options = [v for v in domains[slot] if v != goal[slot]]
            if not options:
                continue
            new = dict(goal)
            new[slot] = options[int(rng.integers(len(options)))]
            if kb.matches(new["cuisine"], new["location"], new["party"], new["price"]):
                say(_pick(rng, _UPDATE[slot]).format(_value_word(slot, new[slot])), UPDATE_ACK)
                say("no", LOOKING)
                say(SILENCE, api_call(new["cuisine"], new["location"], new["party"], new["price"]))
                goal = new
                break

    hits = kb.matches(goal["cuisine"], goal["location"], goal["party"], goal["price"])
    for i in rng.permutation(len(hits)):
        ex.extend(hits[i].facts())

    cap = config.max_extra_rejections if policy.max_rejections is None else policy.max_rejections
    n_reject = int(rng.integers(min(cap, len(hits) - 1) + 1))
    user = SILENCE
    for i in range(n_reject):
        say(user, f"{PROPOSE} {hits[i].name}")
        say(_pick(rng, _REJECT), REJECT_ACK)
        user = SILENCE
    chosen = hits[n_reject]
    say(user, f"{PROPOSE} {chosen.name}")
    say(_pick(rng, _ACCEPT), ACCEPT_ACK)

    extras = []
    if rng.random() < config.p_address:
        extras.append((_ASK_ADDRESS, chosen.address))
    if policy.may_ask_phone and rng.random() < config.p_phone:
        extras.append((_ASK_PHONE, chosen.phone))
    for i in rng.permutation(len(extras)):
        asks, value = extras[i]
        say(_pick(rng, asks), f"{HERE_IT_IS} {value}")
    say(_pick(rng, _THANKS), ANYTHING_ELSE)
    say(_pick(rng, _BYE), WELCOME)
    return Dialog.from_parts(ex)


@dataclass
class Dataset:
    train: list[Dialog]
    dev: list[Dialog]
    test: list[Dialog]
    kb: KnowledgeBase
    candidates: CandidateSet


def generate_dataset(policy: BehaviorPolicy, n_train: int, n_dev: int, n_test: int, seed: int,
                     n_cuisines: int = 3, n_locations: int = 3,
                     config: GeneratorConfig = GeneratorConfig()) -> Dataset:
    """Train/dev follow `policy`; the test split always uses the ORIGINAL policy.

    Each split draws from its own child seed, so datasets built with different
    train policies but the same seed share their knowledge base and test set.
    """
    if min(n_train, n_dev, n_test) < 1:
        raise ValueError("split sizes must be >= 1")
    kb_ss, train_ss, dev_ss, test_ss = np.random.SeedSequence(seed).spawn(4)
    kb = generate_kb(int(kb_ss.generate_state(1)[0]), n_cuisines, n_locations)

    def split(ss, n, pol):
        rng = np.random.default_rng(ss)
        return [generate_dialog(kb, pol, rng, config) for _ in range(n)]

    return Dataset(split(train_ss, n_train, policy), split(dev_ss, n_dev, policy),
                   split(test_ss, n_test, ORIGINAL), kb, build_candidates(kb))


# -- detection ---------------------------------------------------------------

def _text(tokens) -> str:
    return " ".join(tokens)


def _api_fields(dialog: Dialog) -> list[tuple[str, ...]]:
    return [e.bot for e in dialog.exchanges if e.bot and e.bot[0] == "api_call"]


def detect_behaviors(dialog: Dialog) -> BehaviorFlags:
    exchanges = dialog.exchanges
    opening = next((e for e in exchanges if _text(e.bot) == ON_IT), None)
    if opening is None and len(exchanges) > 1:
        opening = exchanges[1]
    t1 = opening is not None and any(tok in PRICES for tok in opening.user)

    locations = {f[2] for f in _api_fields(dialog) if len(f) >= 5}
    t2 = any(_text(e.bot) == UPDATE_ACK and locations.intersection(e.user) for e in exchanges)

    t3 = sum(_text(e.bot) == REJECT_ACK for e in exchanges) >= 2
    t4 = any("phone" in e.user for e in exchanges)
    return BehaviorFlags(t1, t2, bool(t3), t4)


def proposal_ratings(dialog: Dialog) -> list[int]:
    ratings = {f.entity: int(f.value) for f in dialog.facts if f.attribute == "R_rating"}
    out = []
    for e in dialog.exchanges:
        if _text(e.bot[:-1]) == PROPOSE and e.bot[-1] in ratings:
            out.append(ratings[e.bot[-1]])
    return out


def dataset_stats(dialogs: Sequence[Dialog]) -> dict:
    counts = {"t1_volunteered_price": 0, "t2_updated_location": 0,
              "t3_rejected_two_or_more": 0, "t4_asked_phone": 0}
    histogram = [0] * 5
    for d in dialogs:
        flags = detect_behaviors(d)
        for k, v in asdict(flags).items():
            counts[k] += int(v)
        histogram[flags.count()] += 1
    return {"n_dialogs": len(dialogs), "counts": counts, "histogram": histogram}
