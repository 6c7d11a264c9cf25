"""A self-contained synthetic review world for end-to-end tests and demos.

Fifty restaurant-like products spread over eight cuisines.  Each product
gets a signature set of dishes and adjectives; its reviews come in two
registers.  Tidy reviews read like consensus summaries (20-30 tokens, no
first person, no symbol clutter) and pass the default candidate filter.
Chatty reviews ramble in first person about parking and weekdays and are
exactly what the filter is meant to reject.  Every held-out product also
gets one canonical consensus reference built from its signature words,
which is what generated summaries are scored against.

Everything derives from a single seed; the same seed always produces the
same corpus, references, and split.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, Review

CUISINES = {
    "pizza": ("crust", "cheese", "pepperoni", "slices", "margherita", "dough"),
    "sushi": ("salmon", "rice", "rolls", "tuna", "wasabi", "nigiri"),
    "burger": ("patty", "fries", "bun", "bacon", "pickles", "shake"),
    "taco": ("salsa", "tortilla", "carnitas", "guacamole", "beans", "lime"),
    "noodle": ("broth", "ramen", "dumplings", "scallions", "pork", "egg"),
    "curry": ("naan", "lentils", "paneer", "chutney", "basmati", "masala"),
    "bbq": ("brisket", "ribs", "coleslaw", "cornbread", "sausage", "sauce"),
    "bakery": ("croissant", "sourdough", "muffins", "espresso", "scones", "tart"),
}

POSITIVE = ("great", "fresh", "tasty", "warm", "crisp", "lovely", "tender", "rich")
NEGATIVE = ("bad", "stale", "cold", "greasy", "bland", "soggy", "dry", "salty")

# tidy templates: 20-30 tokens, third person, symbol-free; all four share the
# "the <dish> was <adjective>" consensus backbone but differ in filler words
TIDY_TEMPLATES = (
    "the {d1} was {a1} and the {d2} was {a2} while the {d3} stayed {a3} "
    "so the food here felt {a4} to everyone",
    "the {d1} here was {a1} while the {d2} seemed {a2} and the {d3} was {a3} "
    "so the food felt {a4} overall tonight",
    "diners said the {d1} was {a1} and the {d2} seemed {a2} while the {d3} "
    "came out {a3} so the food here felt {a4}",
    "the {d1} was {a1} the {d2} was {a2} and the {d3} seemed {a3} overall "
    "the food here felt {a4} to most guests",
)

REFERENCE_TEMPLATE = ("the {d1} was {a1} and the {d2} was {a2} while the {d3} "
                      "seemed {a3} so the food here felt {a4} overall")

# chatty reviews never mention the signature dishes: they are pure register
# noise for the candidate filter to reject
CHATTY_TEMPLATES = (
    "i came here with my friends last {w} and we argued about {j} for ages "
    "before anyone even looked at a menu",
    "honestly my {r} picked this spot so i just stared at my phone and "
    "thought about {j} while we waited forever",
    "i parked around the corner while my {r} kept complaining about {j} and "
    "i barely remember what i actually ordered that {w}",
    "my {r} and i were late because of {j} so i mostly talked about {w} "
    "plans instead of the meal honestly",
)

WEEKDAYS = ("monday", "tuesday", "friday", "sunday")
RELATIVES = ("cousin", "roommate", "neighbor", "coworker")
DISTRACTIONS = ("parking", "traffic", "football", "homework", "weather")


@dataclass
class ToyDataset:
    corpus: Corpus                 # every review of every product
    train_corpus: Corpus           # reviews of training products only
    references: dict[str, str]     # held-out product -> consensus reference
    eval_products: list[str]
    categories: dict[str, str]     # product -> cuisine name


def _product_signature(rng, cuisine: str, positive: bool):
    dishes = list(rng.choice(CUISINES[cuisine], size=3, replace=False))
    pool = POSITIVE if positive else NEGATIVE
    adjectives = list(rng.choice(pool, size=4, replace=False))
    return dishes, adjectives


def _fill(template: str, rng, dishes, adjectives) -> str:
    d = rng.permutation(dishes)
    a = rng.permutation(adjectives)
    return template.format(
        d1=d[0], d2=d[1], d3=d[2], a1=a[0], a2=a[1], a3=a[2], a4=a[3],
        w=rng.choice(WEEKDAYS), r=rng.choice(RELATIVES), j=rng.choice(DISTRACTIONS),
    )


def generate_toy_dataset(products: int = 50, reviews_per_product: int = 20,
                         seed: int = 0, eval_every: int = 5,
                         tidy_fraction: float = 0.4) -> ToyDataset:
    """Build the toy world; every `eval_every`-th product is held out."""
    rng = np.random.default_rng(seed)
    cuisine_names = list(CUISINES)
    reviews, train_reviews = [], []
    references: dict[str, str] = {}
    eval_products: list[str] = []
    categories: dict[str, str] = {}

    for i in range(products):
        pid = f"prod{i:03d}"
        cuisine = cuisine_names[i % len(cuisine_names)]
        categories[pid] = cuisine
        positive = rng.random() < 0.5
        dishes, adjectives = _product_signature(rng, cuisine, positive)
        held_out = eval_every > 0 and i % eval_every == eval_every - 1

        for j in range(reviews_per_product):
            if rng.random() < tidy_fraction:
                template = TIDY_TEMPLATES[int(rng.integers(len(TIDY_TEMPLATES)))]
            else:
                template = CHATTY_TEMPLATES[int(rng.integers(len(CHATTY_TEMPLATES)))]
            review = Review(pid, f"{pid}-r{j:02d}", _fill(template, rng, dishes, adjectives))
            reviews.append(review)
            if not held_out:
                train_reviews.append(review)

        if held_out:
            eval_products.append(pid)
            references[pid] = _fill(REFERENCE_TEMPLATE, rng, dishes, adjectives)

    return ToyDataset(
        corpus=Corpus(reviews),
        train_corpus=Corpus(train_reviews),
        references=references,
        eval_products=eval_products,
        categories=categories,
    )


def two_topic_corpus(docs_per_topic: int = 40, doc_len: int = 12,
                     seed: int = 0) -> tuple[Corpus, list[int]]:
    """Reviews drawn from two disjoint vocabularies; returns (corpus, topic ids)."""
    pool_a = [f"alpha{i}" for i in range(12)]
    pool_b = [f"beta{i}" for i in range(12)]
    rng = np.random.default_rng(seed)
    reviews, labels = [], []
    for d in range(2 * docs_per_topic):
        topic = d % 2
        pool = pool_a if topic == 0 else pool_b
        words = rng.choice(pool, size=doc_len)
        reviews.append(Review(f"p{topic}", f"doc{d:03d}", " ".join(words)))
        labels.append(topic)
    return Corpus(reviews), labels
