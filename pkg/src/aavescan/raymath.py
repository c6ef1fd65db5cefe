"""27-decimal fixed-point ("ray") arithmetic and interest-accrual factors.

All values are unsigned Python ints at scale 10**27 (RAY == 1.0). rayMul,
rayDiv and percentMul round half up, matching the deployed protocol; the two
interest factors use the protocol's own truncating divisions so that replayed
indices can reproduce on-chain values bit for bit.
"""

from __future__ import annotations

RAY = 10**27
HALF_RAY = RAY // 2

PERCENTAGE_FACTOR = 10**4  # basis points; 10_000 == 100%
HALF_PERCENTAGE_FACTOR = PERCENTAGE_FACTOR // 2

SECONDS_PER_YEAR = 365 * 24 * 60 * 60  # 31_536_000

MAX_UINT256 = 2**256 - 1


class RayOverflow(ArithmeticError):
    """Result exceeds the 256-bit magnitude the protocol operates in."""


def _check_range(value: int, op: str) -> int:
    if value < 0 or value > MAX_UINT256:
        raise RayOverflow(f"{op} result out of uint256 range")
    return value


def ray_mul(a: int, b: int) -> int:
    """Multiply two rays, rounding half up.

    Args:
        a: Ray
        b: Ray
    Returns:
        a * b in ray
    """
    return _check_range((a * b + HALF_RAY) // RAY, "ray_mul")


def ray_div(a: int, b: int) -> int:
    """Divide two rays, rounding half up.

    Args:
        a: Ray numerator
        b: Ray denominator, nonzero
    Returns:
        a / b in ray
    """
    if b == 0:
        raise ZeroDivisionError("ray_div by zero")
    return _check_range((a * RAY + b // 2) // b, "ray_div")


def percent_mul(amount: int, bps: int) -> int:
    """``amount`` scaled by a basis-point percentage, rounding half up."""
    if not 0 <= bps <= PERCENTAGE_FACTOR:
        raise ValueError(f"percentage {bps} outside [0, {PERCENTAGE_FACTOR}] bps")
    return _check_range(
        (amount * bps + HALF_PERCENTAGE_FACTOR) // PERCENTAGE_FACTOR, "percent_mul"
    )


def linear_interest(rate: int, last_ts: int, now_ts: int) -> int:
    """Linear accrual factor RAY + rate * dt / SECONDS_PER_YEAR.

    ``rate`` is a per-year ray rate. The division truncates, as on chain.
    """
    if now_ts < last_ts:
        raise ValueError(f"now_ts {now_ts} before last_ts {last_ts}")
    return RAY + rate * (now_ts - last_ts) // SECONDS_PER_YEAR


def compounded_interest(rate: int, last_ts: int, now_ts: int) -> int:
    """Three-term binomial approximation of (1 + rate/SPY)^dt in ray.

    RAY + n*x + n(n-1)/2 * x^2 + n(n-1)(n-2)/6 * x^3 with n = elapsed
    seconds and x = rate / SECONDS_PER_YEAR, staged exactly as the protocol
    stages it (rayMul for the rate powers, truncating div for the rest).
    """
    if now_ts < last_ts:
        raise ValueError(f"now_ts {now_ts} before last_ts {last_ts}")
    n = now_ts - last_ts
    if n == 0:
        return RAY

    n_minus_1 = n - 1
    n_minus_2 = n - 2 if n > 2 else 0

    base_pow2 = ray_mul(rate, rate) // (SECONDS_PER_YEAR * SECONDS_PER_YEAR)
    base_pow3 = ray_mul(base_pow2, rate) // SECONDS_PER_YEAR

    second_term = n * n_minus_1 * base_pow2 // 2
    third_term = n * n_minus_1 * n_minus_2 * base_pow3 // 6

    return _check_range(
        RAY + rate * n // SECONDS_PER_YEAR + second_term + third_term,
        "compounded_interest",
    )
