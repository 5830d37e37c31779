"""Real-time carousel ranking.

Offline: implicit-feedback ALS over user-item and user-category purchase
counts, plus Beta priors seeded from the interaction history. Online: priors
updated from a sessionized event log, carousels scored by a blend of
prior-weighted affinity and category discovery, and assigned to page zones
by score-and-sort.
"""

from .domain import (
    Carousel,
    CategoryMap,
    EventType,
    InteractionEvent,
    category_of,
    parse_event,
    serialize_event,
)
from .factorization import (
    EmbeddingTable,
    InteractionMatrix,
    TrainConfig,
    als_objective,
    build_matrix,
    predict_affinity,
    train_als,
)
from .ingestion import EventLog, FeedbackApplier, SessionRule, append_event, apply_feedback, sessionize
from .priors import BetaPrior, PriorStore, expected_lambda, fold_events, get_or_init, update_prior
from .scoring import (
    CarouselScore,
    DiscoveryInputs,
    ScoringConfig,
    ScoringStores,
    ZoneRanking,
    affinity_score,
    combined_score,
    discovery_carousel_score,
    discovery_score,
    position_weight,
    rank_carousels,
    score_carousels,
)

__version__ = "0.1.0"
