"""Cross-chain Aave V3 Pool event extraction, CSV sharding, and risk analytics."""

from .decoder import DecodedEvent, decode, encode
from .gateway import (
    ErrorKind,
    FixtureGateway,
    GatewayError,
    HttpGateway,
    LogQuery,
    RawLog,
    classify_error,
)
from .registry import ChainConfig, EventSchema, Registry, load_registry, topic0_of
from .raymath import RAY, SECONDS_PER_YEAR, compounded_interest, linear_interest, percent_mul, ray_div, ray_mul
from .reserve import ReserveState, update_state
from .risk import (
    AssetParams,
    HealthReport,
    LiquidationQuote,
    Position,
    health_factor,
    liquidation_quote,
    replay,
)
from .scanner import ScanPlan, ScanSummary, resize, scan_event
from .sink import ShardManifest, ShardWriter, part_filename, validate_output

__version__ = "0.1.0"

__all__ = [
    "AssetParams",
    "ChainConfig",
    "DecodedEvent",
    "ErrorKind",
    "EventSchema",
    "FixtureGateway",
    "GatewayError",
    "HealthReport",
    "HttpGateway",
    "LiquidationQuote",
    "LogQuery",
    "Position",
    "RAY",
    "RawLog",
    "Registry",
    "ReserveState",
    "ScanPlan",
    "ScanSummary",
    "SECONDS_PER_YEAR",
    "ShardManifest",
    "ShardWriter",
    "classify_error",
    "compounded_interest",
    "decode",
    "encode",
    "health_factor",
    "linear_interest",
    "liquidation_quote",
    "load_registry",
    "part_filename",
    "percent_mul",
    "ray_div",
    "ray_mul",
    "replay",
    "resize",
    "scan_event",
    "topic0_of",
    "update_state",
    "validate_output",
    "__version__",
]
