"""Digital backend: continuous PAV detection, period learning and sparse sampling.

The engine is a tick-driven state machine. A driver asks
:meth:`SparseEngine.next_active_tick` (or :meth:`SparseEngine.step`) whether
a triplet should be acquired, then hands the CDS-corrected sample to
:meth:`SparseEngine.push`. In CONTINUOUS mode every tick fires; in SPARSE
mode only ticks inside the predicted peak and valley windows do.
"""

import csv
import math
import statistics
from collections import deque
from dataclasses import dataclass, field

from . import _validation as v
from .errors import StateError
from .vitals import PEAK, VALLEY, vitals_over_windows

CONTINUOUS = "CONTINUOUS"
SPARSE = "SPARSE"
FIRE = "FIRE"
IDLE = "IDLE"

_OTHER = {PEAK: VALLEY, VALLEY: PEAK}


@dataclass(frozen=True)
class SparseConfig:
    fs: float = 100.0
    learn_cycles: int = 4
    stability_tol: float = 0.10
    w_init_divisor: int = 8
    w_max_divisor: int = 2
    w_shrink_floor: int = 3
    w_shrink_step: int = 2
    w_shrink_to_init: bool = True
    hits_before_shrink: int = 3
    period_ema_alpha: float = 0.5
    period_gate: float = 0.25
    value_jump_frac: float = 0.5
    history_len: int = 4
    hr_window_s: float = 8.0
    smoothing_taps: int = 5
    refractory_frac: float = 0.25
    refractory_initial_s: float = 0.2
    warmup_s: float = 2.4
    warmup_chunks: int = 3
    hysteresis_frac: float = 0.5
    event_timeout_s: float = 2.5
    event_timeout_periods: float = 2.5
    fit_half_frac: float = 0.2

    def __post_init__(self):
        v.check_positive("fs", self.fs)
        v.check_int("learn_cycles", self.learn_cycles, 1)
        if not 0 < self.stability_tol < 1:
            raise v.ConfigError("stability_tol", f"must lie in (0, 1), got {self.stability_tol!r}")
        v.check_int("w_init_divisor", self.w_init_divisor, 1)
        v.check_int("w_max_divisor", self.w_max_divisor, 1)
        v.check_int("w_shrink_floor", self.w_shrink_floor, 1)
        v.check_int("w_shrink_step", self.w_shrink_step, 0)
        v.check_int("hits_before_shrink", self.hits_before_shrink, 1)
        v.check_range("period_ema_alpha", self.period_ema_alpha, 0.0, 1.0)
        v.check_range("period_gate", self.period_gate, 0.0, 1.0)
        v.check_positive("value_jump_frac", self.value_jump_frac)
        v.check_int("history_len", self.history_len, 1)
        v.check_positive("hr_window_s", self.hr_window_s)
        v.check_int("smoothing_taps", self.smoothing_taps, 1, 15)
        v.check_positive("refractory_frac", self.refractory_frac, strict=False)
        v.check_positive("refractory_initial_s", self.refractory_initial_s, strict=False)
        v.check_positive("warmup_s", self.warmup_s)
        v.check_int("warmup_chunks", self.warmup_chunks, 1)
        v.check_range("hysteresis_frac", self.hysteresis_frac, 0.0, 1.0)
        v.check_positive("event_timeout_s", self.event_timeout_s)
        v.check_positive("event_timeout_periods", self.event_timeout_periods)
        v.check_positive("fit_half_frac", self.fit_half_frac)

    def w_init(self, t_est):
        return max(self.w_shrink_floor, math.ceil(t_est * self.fs / self.w_init_divisor - 1e-9))

    def w_max(self, t_est):
        return max(self.w_init(t_est), math.ceil(t_est * self.fs / self.w_max_divisor - 1e-9))


REFERENCE_SPARSE = SparseConfig()
"""Window starts at ``ceil(T fs / 8)``; after misses widen it, hits shrink it back to that width."""


@dataclass
class PavEvent:
    """A detected peak or valley.

    ``red`` and ``ir`` are the full CDS-corrected input currents at the
    extremum. ``red_dc`` / ``ir_dc`` are the parts subtracted by the I-DACs,
    so ``red_ac = red - red_dc`` is the residual seen by the ADC.
    """

    t_s: float
    kind: str
    red: float
    ir: float
    red_dc: float = 0.0
    ir_dc: float = 0.0
    low_confidence: bool = False
    mode: str = CONTINUOUS

    @property
    def red_ac(self):
        return self.red - self.red_dc

    @property
    def ir_ac(self):
        return self.ir - self.ir_dc


@dataclass
class Miss:
    t_s: float
    kind: str
    reason: str
    red: float = math.nan
    ir: float = math.nan


@dataclass
class Window:
    kind: str
    center_s: float
    first: int
    last: int


@dataclass
class SparseState:
    mode: str = CONTINUOUS
    t_est_s: float = math.nan
    w: int = 0
    w_max: int = 0
    next_peak_center_s: float = math.nan
    next_valley_center_s: float = math.nan
    pav_history: deque = field(default_factory=lambda: deque(maxlen=16))
    consecutive_misses: int = 0
    consecutive_hits: int = 0
    sample_counter: int = 0
    window_counter: int = 0


# --- small numerics -------------------------------------------------------------

def fit_vertex(xs, ys, kind):
    """Least-squares parabola through ``(xs, ys)``; returns ``(x_v, y_v)`` or None.

    None when fewer than three points, when the curvature has the wrong sign
    for ``kind`` or when the vertex lies outside ``[xs[0], xs[-1]]``.
    """
    n = len(xs)
    if n < 3:
        return None
    x0 = sum(xs) / n
    s2 = s3 = s4 = sy = sxy = sx2y = 0.0
    for x, y in zip(xs, ys):
        d = x - x0
        d2 = d * d
        s2 += d2
        s3 += d2 * d
        s4 += d2 * d2
        sy += y
        sxy += d * y
        sx2y += d2 * y
    # normal equations for y = a + b d + c d^2 with sum(d) = 0
    m = [[n, 0.0, s2], [0.0, s2, s3], [s2, s3, s4]]
    rhs = [sy, sxy, sx2y]
    sol = _solve3(m, rhs)
    if sol is None:
        return None
    a, b, c = sol
    if (kind == PEAK and c >= 0) or (kind == VALLEY and c <= 0):
        return None
    d_v = -b / (2 * c)
    x_v = x0 + d_v
    if not xs[0] < x_v < xs[-1]:
        return None
    return x_v, a + b * d_v + c * d_v * d_v


def eval_fit(xs, ys, x):
    """Value at ``x`` of the least-squares parabola (or line for two points)."""
    n = len(xs)
    if n == 1:
        return ys[0]
    x0 = sum(xs) / n
    d = [xi - x0 for xi in xs]
    if n == 2:
        b = (ys[1] - ys[0]) / (xs[1] - xs[0])
        return sum(ys) / 2 + b * (x - x0)
    s2 = sum(t * t for t in d)
    s3 = sum(t ** 3 for t in d)
    s4 = sum(t ** 4 for t in d)
    sol = _solve3([[n, 0.0, s2], [0.0, s2, s3], [s2, s3, s4]],
                  [sum(ys), sum(t * y for t, y in zip(d, ys)),
                   sum(t * t * y for t, y in zip(d, ys))])
    if sol is None:
        return sum(ys) / n
    a, b, c = sol
    dx = x - x0
    return a + b * dx + c * dx * dx


def _solve3(m, r):
    (a, b, c), (d, e, f), (g, h, i) = m
    det = a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g)
    if det == 0 or not math.isfinite(det):
        return None
    x = (r[0] * (e * i - f * h) - b * (r[1] * i - f * r[2]) + c * (r[1] * h - e * r[2])) / det
    y = (a * (r[1] * i - f * r[2]) - r[0] * (d * i - f * g) + c * (d * r[2] - r[1] * g)) / det
    z = (a * (e * r[2] - r[1] * h) - b * (d * r[2] - r[1] * g) + r[0] * (d * h - e * g)) / det
    return x, y, z


# --- continuous-mode detector ---------------------------------------------------

class ContinuousDetector:
    """Peak/valley detector on the IR channel of a uniformly sampled stream.

    A causal moving average (``smoothing_taps`` wide) is tracked with a
    zigzag rule: an extremum is confirmed once the smoothed signal has moved
    ``h`` away from it, which is the smoothed first difference changing sign
    and staying changed. ``h`` starts from the signal range seen during a
    short warm-up and afterwards follows the recent peak-valley spans.
    Same-kind events closer than the refractory interval are suppressed.
    Confirmed extrema are refined by a parabola fit on the raw samples.
    """

    def __init__(self, cfg, t_est=None):
        self.cfg = cfg
        self.t_est = t_est
        self.reset()

    def reset(self):
        cfg = self.cfg
        self.raw = deque(maxlen=int(cfg.fs * 6) + 16)
        self.win = deque(maxlen=cfg.smoothing_taps)
        self.win_sum = 0.0
        self.h = None
        self.warm = []
        self.seeking = None
        self.hi = self.lo = None
        self.last_t = {PEAK: None, VALLEY: None}
        self.last_val = {PEAK: None, VALLEY: None}
        self.spans = deque(maxlen=4)
        self.last_event_t = None
        self.start_t = None

    @property
    def refractory_s(self):
        if self.t_est and self.t_est > 0:
            return self.cfg.refractory_frac * self.t_est
        return self.cfg.refractory_initial_s

    def push(self, tick, t, ir, red, low=False, red_dc=0.0, ir_dc=0.0):
        """Feed one sample; returns the (possibly empty) list of confirmed events."""
        rec = (tick, t, ir, red, low, red_dc, ir_dc)
        self.raw.append(rec)
        if self.start_t is None:
            self.start_t = t
        if low:
            # a clipped sample says nothing about the waveform shape
            return []
        if self.h is None:
            self.warm.append(rec)
            if t - self.warm[0][1] >= self.cfg.warmup_s - 0.5 / self.cfg.fs:
                return self._finish_warmup()
            return []
        out = self._advance(rec)
        timeout = max(self.cfg.event_timeout_s,
                      self.cfg.event_timeout_periods * (self.t_est or 0.0))
        ref = self.last_event_t if self.last_event_t is not None else self.start_t
        if not out and t - ref > timeout:
            self._restart_warmup()
        return out

    def _restart_warmup(self):
        keep_t = self.t_est
        last_t, last_val = dict(self.last_t), dict(self.last_val)
        self.reset()
        self.t_est = keep_t
        self.last_t, self.last_val = last_t, last_val

    def _finish_warmup(self):
        recs = self.warm
        self.warm = []
        n = len(recs)
        k = self.cfg.warmup_chunks
        ranges = []
        for j in range(k):
            chunk = [r[2] for r in recs[j * n // k:(j + 1) * n // k]]
            if chunk:
                ranges.append(max(chunk) - min(chunk))
        span = statistics.median(ranges)
        if not span > 0:
            self.warm = recs[n // k:]
            return []
        self.h = self.cfg.hysteresis_frac * span
        out = []
        for rec in recs:
            out.extend(self._advance(rec))
        return out

    def _advance(self, rec):
        tick, t, ir, *_ = rec
        win = self.win
        if len(win) == win.maxlen:
            self.win_sum -= win[0]
        win.append(ir)
        self.win_sum += ir
        if len(win) < win.maxlen:
            return []
        y = self.win_sum / len(win)
        delay = (len(win) - 1) / 2.0
        tc = t - delay / self.cfg.fs
        if self.seeking is None:
            if self.hi is None:
                self.hi = self.lo = (y, tc)
                return []
            if y > self.hi[0]:
                self.hi = (y, tc)
            if y < self.lo[0]:
                self.lo = (y, tc)
            if y < self.hi[0] - self.h:
                return self._confirm(PEAK, self.hi, (y, tc))
            if y > self.lo[0] + self.h:
                return self._confirm(VALLEY, self.lo, (y, tc))
            return []
        if self.seeking == PEAK:
            if y > self.hi[0]:
                self.hi = (y, tc)
            elif y < self.hi[0] - self.h:
                return self._confirm(PEAK, self.hi, (y, tc))
        else:
            if y < self.lo[0]:
                self.lo = (y, tc)
            elif y > self.lo[0] + self.h:
                return self._confirm(VALLEY, self.lo, (y, tc))
        return []

    def _confirm(self, kind, ext, now):
        _, t_ext = ext
        prev = self.last_t[kind]
        if prev is not None and t_ext - prev < self.refractory_s:
            # too soon after the previous same-kind event: keep looking
            if kind == PEAK:
                self.hi = now
            else:
                self.lo = now
            return []
        ev = self._refine(kind, t_ext)
        self.last_t[kind] = ev.t_s
        other = self.last_val[_OTHER[kind]]
        if other is not None:
            self.spans.append(abs(ext[0] - other))
            self.h = self.cfg.hysteresis_frac * statistics.median(self.spans)
        self.last_val[kind] = ext[0]
        self.last_event_t = now[1]
        self.seeking = _OTHER[kind]
        if kind == PEAK:
            self.lo = now
        else:
            self.hi = now
        return [ev]

    def _refine(self, kind, t_ext):
        fs = self.cfg.fs
        period = self.t_est
        prev = self.last_t[kind]
        if not period and prev is not None:
            period = min(2.0, max(1 / 3, t_ext - prev))
        period = period or 0.5
        half = max(2, int(round(self.cfg.fit_half_frac * period * fs)))
        recs = [r for r in self.raw if abs(r[1] - t_ext) <= (half + 0.5) / fs]
        nearest = min(self.raw, key=lambda r: abs(r[1] - t_ext))
        xs = [r[1] for r in recs]
        fit = fit_vertex(xs, [r[2] for r in recs], kind)
        if fit is None:
            t_v, ir_v = nearest[1], nearest[2]
            red_v = nearest[3]
        else:
            t_v, ir_v = fit
            red_v = eval_fit(xs, [r[3] for r in recs], t_v)
        low = any(r[4] for r in recs)
        return PavEvent(t_v, kind, red_v, ir_v, nearest[5], nearest[6], low, CONTINUOUS)


def detect_pavs_continuous(t, ir, red=None, cfg=None):
    """Run the continuous detector over whole arrays; returns the event list."""
    cfg = cfg or SparseConfig()
    red = ir if red is None else red
    det = ContinuousDetector(cfg)
    out = []
    for k, (tk, a, b) in enumerate(zip(t, ir, red)):
        out.extend(det.push(k, float(tk), float(a), float(b)))
    return out


def learn_period(events, cfg=None):
    """``(t_est, stable)`` from the last ``learn_cycles`` peak-to-peak intervals."""
    cfg = cfg or SparseConfig()
    peaks = [e.t_s for e in events if e.kind == PEAK]
    if len(peaks) < cfg.learn_cycles + 1:
        return math.nan, False
    ivs = [b - a for a, b in zip(peaks[-cfg.learn_cycles - 1:-1], peaks[-cfg.learn_cycles:])]
    mean = sum(ivs) / len(ivs)
    if not mean > 0:
        return mean, False
    stable = all(abs(iv - mean) <= cfg.stability_tol * mean + 1e-12 for iv in ivs)
    return mean, stable


# --- sparse-mode pieces ---------------------------------------------------------

def window_ticks(center_s, w, t0, fs):
    """First and last tick of a ``w``-sample window centered on ``center_s``."""
    c = int(round((center_s - t0) * fs))
    first = c - (w - 1) // 2
    return first, first + w - 1


def schedule_windows(state, cfg):
    """Upcoming ``(center_s, w, kind)`` windows; SPARSE mode only."""
    if state.mode != SPARSE:
        raise StateError("windows are only scheduled in SPARSE mode")
    return sorted([(state.next_peak_center_s, state.w, PEAK),
                   (state.next_valley_center_s, state.w, VALLEY)])


def _history(state, kind):
    return [e.ir for e in state.pav_history if e.kind == kind]


def process_window(samples, kind, state, cfg):
    """Judge one window. ``samples`` is a list of ``(t, ir, red, low, red_dc, ir_dc)``.

    The IR channel is fitted with a parabola. A PAV is accepted when the
    fitted extremum lies strictly inside the window, no sample is flagged
    saturated, and its value is within ``value_jump_frac`` of the current
    peak-valley span from the median of recent same-kind values.
    """
    if not samples:
        return Miss(math.nan, kind, "empty")
    xs = [s[0] for s in samples]
    irs = [s[1] for s in samples]
    fit = fit_vertex(xs, irs, kind)
    if fit is None:
        j = irs.index(max(irs) if kind == PEAK else min(irs))
        return Miss(xs[j], kind, "edge", samples[j][2], irs[j])
    t_v, ir_v = fit
    red_v = eval_fit(xs, [s[2] for s in samples], t_v)
    if any(s[3] for s in samples):
        return Miss(t_v, kind, "saturated", red_v, ir_v)
    same = _history(state, kind)
    other = _history(state, _OTHER[kind])
    if same and other:
        span = abs(statistics.median(_history(state, PEAK)) - statistics.median(_history(state, VALLEY)))
        if abs(ir_v - statistics.median(same)) > cfg.value_jump_frac * span:
            return Miss(t_v, kind, "value-jump", red_v, ir_v)
    nearest = min(samples, key=lambda s: abs(s[0] - t_v))
    return PavEvent(t_v, kind, red_v, ir_v, nearest[4], nearest[5], False, SPARSE)


def update_period(state, interval, cfg):
    """EMA period update. Returns False (state untouched) when gated out."""
    t_est = state.t_est_s
    n = max(1, int(round(interval / t_est)))
    interval = interval / n
    new = (1 - cfg.period_ema_alpha) * t_est + cfg.period_ema_alpha * interval
    if abs(new - t_est) > cfg.period_gate * t_est:
        return False
    state.t_est_s = new
    state.w_max = cfg.w_max(new)
    state.w = min(state.w, state.w_max)
    return True


def handle_miss(state, cfg):
    """Expand the window; returns True when the engine must revert to CONTINUOUS."""
    state.consecutive_misses += 1
    state.consecutive_hits = 0
    if state.w >= state.w_max:
        return True
    state.w = min(2 * state.w, state.w_max)
    return False


def handle_hit(state, cfg):
    state.consecutive_misses = 0
    state.consecutive_hits += 1
    if state.consecutive_hits >= cfg.hits_before_shrink and cfg.w_shrink_step > 0:
        floor = cfg.w_shrink_floor
        if cfg.w_shrink_to_init:
            floor = max(floor, cfg.w_init(state.t_est_s))
        if state.w > floor:
            state.w = max(floor, state.w - cfg.w_shrink_step)
        state.consecutive_hits = 0


# --- engine ---------------------------------------------------------------------

@dataclass
class LogRow:
    t_s: float
    kind: str
    red_ac: float
    ir_ac: float
    miss: bool
    mode: str
    w: int
    t_est_s: float


class SparseEngine:
    """Tick-driven backend state machine.

    Ticks are integers; tick ``k`` is at ``t0 + k / fs``. Events from both
    modes accumulate in :attr:`events`; :attr:`log` additionally records
    misses, and :attr:`transitions` records every mode change with a reason.
    """

    def __init__(self, cfg=None, t0=0.0, allow_sparse=True):
        self.cfg = cfg or SparseConfig()
        self.t0 = t0
        self.allow_sparse = allow_sparse
        self.state = SparseState(pav_history=deque(maxlen=2 * self.cfg.history_len))
        self.detector = ContinuousDetector(self.cfg)
        self.session_events = []
        self.events = []
        self.log = []
        self.transitions = [(t0, None, CONTINUOUS, "start")]
        self.windows = []
        self.buffer = {}
        self.last_tick = None

    @property
    def mode(self):
        return self.state.mode

    def tick_time(self, k):
        return self.t0 + k / self.cfg.fs

    def step(self, k):
        """Sampling command for tick ``k``: ``FIRE`` or ``IDLE``."""
        return FIRE if self.next_active_tick(k) == k else IDLE

    def next_active_tick(self, k):
        if self.state.mode == CONTINUOUS:
            return k
        return min(max(w.first, k) for w in self.windows if w.last >= k)

    def push(self, k, red, ir, low=False, red_dc=0.0, ir_dc=0.0):
        """Hand over the CDS-corrected sample of tick ``k``; returns new events."""
        if self.last_tick is not None and k <= self.last_tick:
            raise StateError(f"tick {k} is not after tick {self.last_tick}")
        self.last_tick = k
        st = self.state
        st.sample_counter += 1
        t = self.tick_time(k)
        if st.mode == CONTINUOUS:
            evs = self.detector.push(k, t, ir, red, low, red_dc, ir_dc)
            for ev in evs:
                self._record(ev)
                self.session_events.append(ev)
            if evs and any(e.kind == PEAK for e in evs):
                t_est, stable = learn_period(self.session_events, self.cfg)
                if stable and self.allow_sparse:
                    self._enter_sparse(k, t_est)
            if self.detector.t_est is None and len(self.session_events) >= 3:
                t_est, _ = learn_period(self.session_events, SparseConfig(learn_cycles=2))
                if t_est == t_est:
                    self.detector.t_est = t_est
            return evs
        self.buffer[k] = (t, ir, red, low, red_dc, ir_dc)
        out = []
        while True:
            due = [w for w in self.windows if w.last <= k]
            if not due or st.mode != SPARSE:
                break
            w = min(due, key=lambda x: x.last)
            self.windows.remove(w)
            ev = self._close_window(w, k)
            if ev is not None:
                out.append(ev)
        if st.mode == SPARSE:
            oldest = min(w.first for w in self.windows)
            for key in [key for key in self.buffer if key < oldest]:
                del self.buffer[key]
        return out

    def _record(self, ev):
        self.events.append(ev)
        st = self.state
        self.log.append(LogRow(ev.t_s, ev.kind, ev.red_ac, ev.ir_ac, False, st.mode, st.w, st.t_est_s))

    def _enter_sparse(self, k, t_est):
        st = self.state
        cfg = self.cfg
        st.mode = SPARSE
        st.t_est_s = t_est
        st.w = cfg.w_init(t_est)
        st.w_max = cfg.w_max(t_est)
        st.consecutive_hits = st.consecutive_misses = 0
        st.pav_history.clear()
        for ev in self.session_events[-2 * cfg.history_len:]:
            st.pav_history.append(ev)
        self.transitions.append((self.tick_time(k), CONTINUOUS, SPARSE, "stable period"))
        self.buffer = {}
        self.windows = []
        for kind in (PEAK, VALLEY):
            last = [e.t_s for e in self.session_events if e.kind == kind]
            center = last[-1] + t_est if last else self.tick_time(k) + t_est / 2
            self._schedule(kind, center, k)

    def _schedule(self, kind, center, k):
        st = self.state
        while True:
            first, last = window_ticks(center, st.w, self.t0, self.cfg.fs)
            if first > k:
                break
            center += st.t_est_s
        if kind == PEAK:
            st.next_peak_center_s = center
        else:
            st.next_valley_center_s = center
        self.windows.append(Window(kind, center, first, last))

    def _close_window(self, w, k):
        st = self.state
        cfg = self.cfg
        st.window_counter += 1
        samples = [self.buffer[j] for j in range(w.first, w.last + 1) if j in self.buffer]
        res = process_window(samples, w.kind, st, cfg)
        if isinstance(res, PavEvent):
            prev = [e.t_s for e in st.pav_history if e.kind == w.kind]
            if prev and not update_period(st, res.t_s - prev[-1], cfg):
                res = Miss(res.t_s, w.kind, "period-gate", res.red, res.ir)
        if isinstance(res, PavEvent):
            handle_hit(st, cfg)
            st.pav_history.append(res)
            self._record(res)
            self._schedule(w.kind, res.t_s + st.t_est_s, k)
            return res
        self.log.append(LogRow(res.t_s, res.kind, res.red - 0.0, res.ir - 0.0, True,
                               st.mode, st.w, st.t_est_s))
        if handle_miss(st, cfg):
            self._revert(k, res.reason)
        else:
            self._schedule(w.kind, w.center_s + st.t_est_s, k)
        return None

    def _revert(self, k, reason):
        st = self.state
        st.mode = CONTINUOUS
        st.pav_history.clear()
        st.consecutive_hits = st.consecutive_misses = 0
        st.next_peak_center_s = st.next_valley_center_s = math.nan
        self.windows = []
        self.buffer = {}
        self.session_events = []
        self.detector = ContinuousDetector(self.cfg)
        self.transitions.append((self.tick_time(k), SPARSE, CONTINUOUS, f"miss at w_max ({reason})"))

    def mode_intervals(self, t_end):
        """``[(t_start, t_stop, mode)]`` covering ``[t0, t_end)``."""
        out = []
        for i, (t, _, to, _) in enumerate(self.transitions):
            stop = self.transitions[i + 1][0] if i + 1 < len(self.transitions) else t_end
            if stop > t:
                out.append((t, min(stop, t_end), to))
        return out

    def first_sparse_entry(self):
        for t, _, to, _ in self.transitions:
            if to == SPARSE:
                return t
        return None


def run_on_arrays(red, ir, cfg=None, t0=0.0, low=None):
    """Drive an engine over pre-sampled tick arrays (sample ``k`` at ``t0 + k/fs``)."""
    eng = SparseEngine(cfg, t0)
    n = len(ir)
    red = [float(x) for x in red]
    ir = [float(x) for x in ir]
    k = 0
    while k < n:
        k = eng.next_active_tick(k)
        if k >= n:
            break
        eng.push(k, red[k], ir[k], bool(low[k]) if low is not None else False)
        k += 1
    return eng


EVENT_COLUMNS = ("t_s", "kind", "red_ac", "ir_ac", "miss", "mode", "w", "t_est_s")
VITALS_COLUMNS = ("t_s", "hr_bpm", "spo2_pct", "flags")


def write_event_log(rows, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVENT_COLUMNS)
        for r in rows:
            w.writerow([repr(float(r.t_s)), r.kind, repr(float(r.red_ac)), repr(float(r.ir_ac)),
                        int(r.miss), r.mode, r.w, repr(float(r.t_est_s))])
    return path


def write_vitals(reports, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(VITALS_COLUMNS)
        for r in reports:
            w.writerow([repr(float(r.window_end_s)), repr(float(r.hr_bpm)),
                        repr(float(r.spo2_pct)), "|".join(r.flags)])
    return path


def engine_vitals(engine, t_end, calib=None):
    return vitals_over_windows(engine.events, engine.t0, t_end, engine.cfg.hr_window_s, calib)
