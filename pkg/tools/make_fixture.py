"""Generate the bundled synthetic daily index fixture.

Produces src/marketgan/data/sp500_fixture.csv: twenty years of daily
adjusted closes (2001..2020) on a US-market-like trading calendar,
simulated from a GJR-GARCH(1,1) volatility process with Student-t shocks
plus a rare downward-jump component. The parameters are calibrated so
the log returns exhibit the usual large-cap index regularities: near-zero
return autocorrelation, strong positive autocorrelation of absolute
returns, negative skewness, excess kurtosis well above 3, a negative
short-lag leverage correlation, and kurtosis decaying under temporal
aggregation.

The output is deterministic; rerunning this script reproduces the file
byte for byte. The frozen statistics asserted in the test suite were
computed from this exact output.
"""

import csv
import datetime
import pathlib

import numpy as np

SEED = 390
START_YEAR = 2001
END_YEAR = 2020
START_PRICE = 1283.27

# GJR-GARCH(1,1): sigma2 <- OMEGA + (ALPHA + GJR*neg) * eps^2 + BETA * sigma2
OMEGA = 7.0e-6
ALPHA = 0.03
GJR = 0.12
BETA = 0.84
MU = 3.4e-4          # daily drift
T_DOF = 6.0          # Student-t degrees of freedom for shocks
JUMP_PROB = 0.0045   # daily probability of a crash-style jump
JUMP_MEAN = 0.032    # mean magnitude of the (downward) jump
JUMP_STD = 0.010
MAX_ABS_RETURN = 0.145  # hard cap, far out in the tail


def easter_sunday(year: int) -> datetime.date:
    # anonymous Gregorian computus
    a = year % 19
    b, c = divmod(year, 100)
    d, e = divmod(b, 4)
    f = (b + 8) // 25
    g = (b - f + 1) // 3
    h = (19 * a + b - d - g + 15) % 30
    i, k = divmod(c, 4)
    l = (32 + 2 * e + 2 * i - h - k) % 7
    m = (a + 11 * h + 22 * l) // 451
    month, day = divmod(h + l - 7 * m + 114, 31)
    return datetime.date(year, month, day + 1)


def nth_weekday(year, month, weekday, n) -> datetime.date:
    d = datetime.date(year, month, 1)
    offset = (weekday - d.weekday()) % 7
    return d + datetime.timedelta(days=offset + 7 * (n - 1))


def last_weekday(year, month, weekday) -> datetime.date:
    if month == 12:
        d = datetime.date(year, 12, 31)
    else:
        d = datetime.date(year, month + 1, 1) - datetime.timedelta(days=1)
    return d - datetime.timedelta(days=(d.weekday() - weekday) % 7)


def observed(d: datetime.date) -> datetime.date:
    if d.weekday() == 5:
        return d - datetime.timedelta(days=1)
    if d.weekday() == 6:
        return d + datetime.timedelta(days=1)
    return d


def market_holidays(year: int) -> set:
    mon, thu, fri = 0, 3, 4
    days = {
        observed(datetime.date(year, 1, 1)),
        nth_weekday(year, 1, mon, 3),          # MLK day
        nth_weekday(year, 2, mon, 3),          # Presidents day
        easter_sunday(year) - datetime.timedelta(days=2),  # Good Friday
        last_weekday(year, 5, mon),            # Memorial day
        observed(datetime.date(year, 7, 4)),
        nth_weekday(year, 9, mon, 1),          # Labor day
        nth_weekday(year, 11, thu, 4),         # Thanksgiving
        observed(datetime.date(year, 12, 25)),
    }
    if year >= 2001:  # Juneteenth arrived later than this calendar's range ends
        pass
    return days


SPECIAL_CLOSURES = {
    # September 2001 market closure
    datetime.date(2001, 9, 11), datetime.date(2001, 9, 12),
    datetime.date(2001, 9, 13), datetime.date(2001, 9, 14),
    # Reagan and Ford funerals
    datetime.date(2004, 6, 11), datetime.date(2007, 1, 2),
    # Hurricane Sandy
    datetime.date(2012, 10, 29), datetime.date(2012, 10, 30),
    # G.H.W. Bush funeral
    datetime.date(2018, 12, 5),
}


def trading_days():
    days = []
    d = datetime.date(START_YEAR, 1, 1)
    end = datetime.date(END_YEAR, 12, 31)
    holidays = set()
    for year in range(START_YEAR, END_YEAR + 1):
        holidays |= market_holidays(year)
    holidays |= SPECIAL_CLOSURES
    while d <= end:
        if d.weekday() < 5 and d not in holidays:
            days.append(d)
        d += datetime.timedelta(days=1)
    return days


def simulate_returns(n: int, seed: int = SEED) -> np.ndarray:
    rng = np.random.default_rng(seed)
    # standardized Student-t shocks (unit variance)
    z = rng.standard_t(T_DOF, size=n) / np.sqrt(T_DOF / (T_DOF - 2.0))
    jumps = rng.uniform(size=n) < JUMP_PROB
    jump_sizes = np.abs(rng.normal(JUMP_MEAN, JUMP_STD, size=n))
    r = np.empty(n)
    sigma2 = OMEGA / (1.0 - ALPHA - 0.5 * GJR - BETA)  # unconditional level
    eps_prev = 0.0
    neg_prev = 0.0
    for t in range(n):
        sigma2 = OMEGA + (ALPHA + GJR * neg_prev) * eps_prev ** 2 + BETA * sigma2
        eps = np.sqrt(sigma2) * z[t]
        r_t = MU + eps
        if jumps[t]:
            r_t -= jump_sizes[t]
        r_t = float(np.clip(r_t, -MAX_ABS_RETURN, MAX_ABS_RETURN))
        eps_prev = r_t - MU
        neg_prev = 1.0 if eps_prev < 0 else 0.0
        r[t] = r_t
    return r


def main():
    days = trading_days()
    returns = simulate_returns(len(days) - 1)
    prices = START_PRICE * np.concatenate([[1.0], np.exp(np.cumsum(returns))])
    out = pathlib.Path(__file__).resolve().parents[1] / "src" / "marketgan" / "data"
    out.mkdir(parents=True, exist_ok=True)
    target = out / "sp500_fixture.csv"
    with open(target, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["date", "adjusted_close"])
        for day, price in zip(days, prices):
            writer.writerow([day.isoformat(), f"{price:.4f}"])
    print(f"wrote {target} ({len(days)} rows)")
    r = np.diff(np.log(np.round(prices, 4)))
    mean = r.mean()
    d = r - mean
    m2 = (d ** 2).mean()
    skew = (d ** 3).mean() / m2 ** 1.5
    kurt = (d ** 4).mean() / m2 ** 2 - 3
    print(f"n={len(r)} mean={mean:.3e} std={np.sqrt(m2):.5f} "
          f"skew={skew:.4f} exkurt={kurt:.3f} max|r|={np.abs(r).max():.5f}")


if __name__ == "__main__":
    main()
