"""Health factor, liquidation quoting, and position replay.

Health factor is the liquidation-threshold-weighted collateral value over
total debt value; a position becomes liquidatable strictly below 1, and the
close factor jumps from half to full at 0.95 (inclusive). The quote applies
the bonus to the price-converted base collateral and carves the protocol fee
out of the bonus, so quantity conservation (liquidator + fee == total) holds
exactly by construction.

All arithmetic is exact rational; token quantities only ever meet prices at
the USD boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from fractions import Fraction
from typing import Iterable, Mapping

from .decoder import DecodedEvent
from .raymath import ray_div, ray_mul
from .reserve import ReserveState, update_state

CLOSE_FACTOR_PIVOT = Fraction(95, 100)
BONUS_BPS_BASE = 10_000

Amount = Fraction  # token amounts; ints coerce exactly


class RiskError(Exception):
    pass


class UnknownAsset(RiskError):
    pass


class NegativeAmount(RiskError):
    pass


class NotLiquidatable(RiskError):
    def __init__(self, health_factor: Fraction | None):
        text = "inf" if health_factor is None else f"{float(health_factor):.6f}"
        super().__init__(f"position is not liquidatable (health factor {text})")
        self.health_factor = health_factor


class InsufficientCollateral(RiskError):
    pass


class OrderViolation(RiskError):
    """Replay input not strictly ordered by (block_number, log_index)."""


@dataclass(frozen=True)
class AssetParams:
    symbol: str
    decimals: int
    price: Fraction  # USD per whole token
    liquidation_threshold: Fraction  # fraction of value counted as collateral
    ltv: Fraction
    liquidation_bonus_bps: int = BONUS_BPS_BASE
    protocol_fee_share: Fraction = Fraction(1, 5)  # of the bonus

    @property
    def bonus_rate(self) -> Fraction:
        """beta = (LB - 10000) / 10000."""
        return Fraction(self.liquidation_bonus_bps - BONUS_BPS_BASE, BONUS_BPS_BASE)

    def validate(self) -> None:
        if self.decimals < 0:
            raise ValueError(f"{self.symbol}: negative decimals")
        if self.price <= 0:
            raise ValueError(f"{self.symbol}: price must be positive")
        if not 0 <= self.liquidation_threshold <= 1:
            raise ValueError(f"{self.symbol}: liquidation threshold outside [0, 1]")
        if not 0 <= self.ltv <= 1:
            raise ValueError(f"{self.symbol}: ltv outside [0, 1]")
        if self.liquidation_bonus_bps < BONUS_BPS_BASE:
            raise ValueError(f"{self.symbol}: liquidation bonus below {BONUS_BPS_BASE} bps")
        if not 0 <= self.protocol_fee_share <= 1:
            raise ValueError(f"{self.symbol}: protocol fee share outside [0, 1]")


@dataclass
class Position:
    user: str
    collateral: dict[str, Amount] = dc_field(default_factory=dict)
    collateral_enabled: dict[str, bool] = dc_field(default_factory=dict)
    debt: dict[str, Amount] = dc_field(default_factory=dict)

    def is_collateral_enabled(self, asset: str) -> bool:
        return self.collateral_enabled.get(asset, False)


@dataclass(frozen=True)
class HealthReport:
    health_factor: Fraction | None  # None means no debt: infinite
    liquidatable: bool
    close_factor: Fraction

    @property
    def infinite(self) -> bool:
        return self.health_factor is None


@dataclass(frozen=True)
class LiquidationQuote:
    debt_repaid: Fraction
    base_collateral: Fraction
    total_collateral: Fraction
    protocol_fee: Fraction
    liquidator_receives: Fraction
    liquidator_profit_usd: Fraction


def _checked_amount(value, what: str) -> Fraction:
    amount = Fraction(value)
    if amount < 0:
        raise NegativeAmount(f"{what} is negative: {amount}")
    return amount


def _params_for(asset: str, params: Mapping[str, AssetParams]) -> AssetParams:
    try:
        return params[asset]
    except KeyError:
        raise UnknownAsset(f"no parameters for asset {asset!r}") from None


def health_factor(position: Position, params: Mapping[str, AssetParams]) -> HealthReport:
    """Evaluate the position's health and close factor.

    Zero total debt yields an infinite health factor and close factor 0;
    disabled collateral is excluded from the numerator.
    """
    weighted_collateral = Fraction(0)
    for asset, amount in position.collateral.items():
        amount = _checked_amount(amount, f"collateral {asset}")
        p = _params_for(asset, params)
        if not position.is_collateral_enabled(asset):
            continue
        weighted_collateral += (
            amount * p.price * p.liquidation_threshold / 10**p.decimals
        )

    total_debt = Fraction(0)
    for asset, amount in position.debt.items():
        amount = _checked_amount(amount, f"debt {asset}")
        p = _params_for(asset, params)
        total_debt += amount * p.price / 10**p.decimals

    if total_debt == 0:
        return HealthReport(health_factor=None, liquidatable=False, close_factor=Fraction(0))

    h = weighted_collateral / total_debt
    if h <= CLOSE_FACTOR_PIVOT:
        close = Fraction(1)
    elif h < 1:
        close = Fraction(1, 2)
    else:
        close = Fraction(0)
    return HealthReport(health_factor=h, liquidatable=h < 1, close_factor=close)


def liquidation_quote(
    position: Position,
    params: Mapping[str, AssetParams],
    debt_asset: str,
    collateral_asset: str,
    debt_to_cover,
    strict: bool = False,
) -> LiquidationQuote:
    """Price a liquidation of ``debt_to_cover`` against the position.

    The repaid debt is capped at close_factor * outstanding debt. When the
    bonus-inflated collateral exceeds what the user holds, the default mode
    clamps the seizure to the available balance and scales the repaid debt
    proportionally; ``strict`` raises InsufficientCollateral instead.
    """
    report = health_factor(position, params)
    if not report.liquidatable:
        raise NotLiquidatable(report.health_factor)

    if debt_asset not in position.debt:
        raise UnknownAsset(f"position has no debt in {debt_asset!r}")
    if collateral_asset not in position.collateral:
        raise UnknownAsset(f"position has no collateral in {collateral_asset!r}")

    debt_params = _params_for(debt_asset, params)
    coll_params = _params_for(collateral_asset, params)
    outstanding = _checked_amount(position.debt[debt_asset], f"debt {debt_asset}")
    available = _checked_amount(
        position.collateral[collateral_asset], f"collateral {collateral_asset}"
    )
    debt_to_cover = _checked_amount(debt_to_cover, "debt_to_cover")

    repaid = min(debt_to_cover, report.close_factor * outstanding)
    price_ratio = debt_params.price / coll_params.price
    scale = Fraction(10) ** (coll_params.decimals - debt_params.decimals)
    base = repaid * price_ratio * scale

    beta = coll_params.bonus_rate
    total = base * (1 + beta)
    if total > available:
        if strict:
            raise InsufficientCollateral(
                f"quote needs {float(total):.6f} {collateral_asset}, "
                f"position holds {float(available):.6f}"
            )
        ratio = available / total
        repaid *= ratio
        base *= ratio
        total = available

    fee = total * beta * coll_params.protocol_fee_share
    received = total - fee

    usd_per_coll_unit = coll_params.price / 10**coll_params.decimals
    usd_per_debt_unit = debt_params.price / 10**debt_params.decimals
    profit_usd = fee * usd_per_coll_unit + (
        base * usd_per_coll_unit - repaid * usd_per_debt_unit
    )

    return LiquidationQuote(
        debt_repaid=repaid,
        base_collateral=base,
        total_collateral=total,
        protocol_fee=fee,
        liquidator_receives=received,
        liquidator_profit_usd=profit_usd,
    )


# -- replay ---------------------------------------------------------------------


@dataclass
class Anomaly:
    key: tuple[int, int]
    user: str
    asset: str
    detail: str


@dataclass
class ReplayResult:
    positions: dict[str, Position]
    anomalies: list[Anomaly]
    reserves: dict[str, ReserveState]

    def position(self, user: str) -> Position:
        return self.positions[user]


def _event_view(ev) -> tuple[str, str, tuple[int, int], int, dict[str, str]]:
    """Normalize a DecodedEvent or a CSV row dict into (chain, name, key, ts, fields)."""
    if isinstance(ev, DecodedEvent):
        return (
            ev.chain_name,
            ev.event_name,
            ev.key,
            ev.block_timestamp,
            ev.field_map(),
        )
    chain = ev["chain"]
    name = ev["event"]
    key = (int(ev["block_number"]), int(ev["log_index"]))
    ts = int(ev["block_timestamp"])
    skip = {"chain", "event", "block_number", "block_timestamp",
            "transaction_hash", "log_index", "contract_address", "usd_value"}
    fields = {k: v for k, v in ev.items() if k not in skip}
    return chain, name, key, ts, fields


class _Book:
    """Mutable per-user balance ledger with clamp-at-zero semantics."""

    def __init__(self, indexed: bool):
        self.indexed = indexed
        self.positions: dict[str, Position] = {}
        self.anomalies: list[Anomaly] = []

    def position(self, user: str) -> Position:
        if user not in self.positions:
            self.positions[user] = Position(user=user)
        return self.positions[user]

    def add(self, side: str, user: str, asset: str, amount: int, key) -> None:
        book = getattr(self.position(user), side)
        book[asset] = book.get(asset, 0) + amount

    def sub(self, side: str, user: str, asset: str, amount: int, key) -> None:
        book = getattr(self.position(user), side)
        balance = book.get(asset, 0) - amount
        if balance < 0:
            self.anomalies.append(Anomaly(
                key=key, user=user, asset=asset,
                detail=f"{side} balance went {balance} on {asset}; clamped to 0",
            ))
            balance = 0
        book[asset] = balance


def replay(
    events: Iterable,
    mode: str = "nominal",
) -> ReplayResult:
    """Reconstruct per-user positions from a chronologically ordered stream.

    ``nominal`` books raw event amounts; ``indexed`` stores scaled balances
    and advances per-reserve indices from ReserveDataUpdated events, so the
    returned balances include accrued interest.
    """
    if mode not in ("nominal", "indexed"):
        raise ValueError(f"unknown replay mode {mode!r}")
    indexed = mode == "indexed"
    book = _Book(indexed)
    reserves: dict[str, ReserveState] = {}
    chain_seen: str | None = None
    last_key: tuple[int, int] | None = None
    last_ts = 0

    def reserve_at(asset: str, ts: int) -> ReserveState:
        state = reserves.get(asset, ReserveState(last_update_timestamp=ts))
        if state.last_update_timestamp < ts:
            state = update_state(state, ts)
        reserves[asset] = state
        return state

    for ev in events:
        chain, name, key, ts, fm = _event_view(ev)
        if chain_seen is None:
            chain_seen = chain
        elif chain != chain_seen:
            raise ValueError(
                f"replay requires a single chain stream (saw {chain_seen!r} and {chain!r})"
            )
        if last_key is not None and key <= last_key:
            raise OrderViolation(f"event key {key} not above {last_key}")
        last_key = key
        last_ts = max(last_ts, ts)

        if name == "ReserveDataUpdated":
            reserves[fm["reserve"]] = ReserveState(
                liquidity_index=int(fm["liquidityIndex"]),
                variable_borrow_index=int(fm["variableBorrowIndex"]),
                current_liquidity_rate=int(fm["liquidityRate"]),
                current_variable_borrow_rate=int(fm["variableBorrowRate"]),
                current_stable_borrow_rate=int(fm["stableBorrowRate"]),
                last_update_timestamp=ts,
            )
            continue
        if name == "ReserveUsedAsCollateralEnabled":
            book.position(fm["user"]).collateral_enabled[fm["reserve"]] = True
            continue
        if name == "ReserveUsedAsCollateralDisabled":
            book.position(fm["user"]).collateral_enabled[fm["reserve"]] = False
            continue

        if name in ("Supply", "Withdraw", "Borrow", "Repay"):
            asset = fm["reserve"]
            amount = int(fm["amount"])
            if indexed:
                state = reserve_at(asset, ts)
                index = (
                    state.liquidity_index
                    if name in ("Supply", "Withdraw")
                    else state.variable_borrow_index
                )
                amount = ray_div(amount, index)
            if name == "Supply":
                book.add("collateral", fm["onBehalfOf"], asset, amount, key)
            elif name == "Withdraw":
                book.sub("collateral", fm["user"], asset, amount, key)
            elif name == "Borrow":
                book.add("debt", fm["onBehalfOf"], asset, amount, key)
            else:
                book.sub("debt", fm["user"], asset, amount, key)
            continue

        if name == "LiquidationCall":
            user = fm["user"]
            debt_amount = int(fm["debtToCover"])
            coll_amount = int(fm["liquidatedCollateralAmount"])
            if indexed:
                debt_state = reserve_at(fm["debtAsset"], ts)
                coll_state = reserve_at(fm["collateralAsset"], ts)
                debt_amount = ray_div(debt_amount, debt_state.variable_borrow_index)
                coll_amount = ray_div(coll_amount, coll_state.liquidity_index)
            book.sub("debt", user, fm["debtAsset"], debt_amount, key)
            book.sub("collateral", user, fm["collateralAsset"], coll_amount, key)
            continue
        # FlashLoan, MintedToTreasury, mode/rebalance events: no balance effect

    if indexed:
        for asset in list(reserves):
            reserves[asset] = (
                update_state(reserves[asset], last_ts)
                if reserves[asset].last_update_timestamp < last_ts
                else reserves[asset]
            )
        for position in book.positions.values():
            for asset, scaled in list(position.collateral.items()):
                state = reserves.get(asset)
                if state is not None:
                    position.collateral[asset] = ray_mul(int(scaled), state.liquidity_index)
            for asset, scaled in list(position.debt.items()):
                state = reserves.get(asset)
                if state is not None:
                    position.debt[asset] = ray_mul(int(scaled), state.variable_borrow_index)

    return ReplayResult(
        positions=book.positions, anomalies=book.anomalies, reserves=reserves
    )
