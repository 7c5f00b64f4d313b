"""Pythia: a reinforcement-learning prefetcher.

Each demand access seen at the L2 becomes a state (two program features), the
agent picks a prefetch offset epsilon-greedily from a tile-coded Q-table
(QVStore), and every decision waits in an evaluation queue (EQ) until its
reward is known. Evicting an entry from the EQ triggers a SARSA update.

Q-values are stored as signed fixed point with 16 fractional bits.
"""

from collections import Counter, deque
from dataclasses import dataclass, field

from .hashing import MASK64, SHIFT_CONSTANTS, fold, mix64
from .prefetch import D_MAX, LINE_SHIFT, PrefetchDecision, Prefetcher
from .trace import LINES_PER_PAGE

DEFAULT_ACTIONS = (-6, -3, -1, 0, 1, 3, 4, 5, 10, 11, 12, 16, 22, 23, 30, 32)

Q_FRAC_BITS = 16
Q_MIN = -(1 << 31)
Q_MAX = (1 << 31) - 1

DELTA_BITS = 7
DELTA_MASK = (1 << DELTA_BITS) - 1


class ConfigError(ValueError):
    def __init__(self, key, reason, path=None):
        self.key = key
        self.reason = reason
        self.path = path
        where = f"{path}: " if path else ""
        super().__init__(f"{where}{key}: {reason}")


@dataclass
class PythiaConfig:
    actions: tuple = DEFAULT_ACTIONS
    r_at: int = 20
    r_al: int = 12
    r_cl: int = -12
    r_in_h: int = -14
    r_in_l: int = -8
    r_np_h: int = -2
    r_np_l: int = -4
    alpha: float = 0.0065
    gamma: float = 0.556
    epsilon: float = 0.002
    vaults: int = 2
    planes_per_vault: int = 3
    plane_rows: int = 128
    q_bits: int = 16
    eq_size: int = 256
    high_bw_threshold: float = 0.5
    state_bits: int = 21

    def validate(self):
        if 0 not in self.actions:
            raise ConfigError("pythia.actions", "must contain the no-prefetch offset 0")
        if any(abs(a) >= LINES_PER_PAGE for a in self.actions):
            raise ConfigError("pythia.actions", "offsets must lie within (-64, 64)")
        if not 0 < self.alpha <= 1:
            raise ConfigError("pythia.alpha", "must satisfy 0 < alpha <= 1")
        if not 0 <= self.gamma < 1:
            raise ConfigError("pythia.gamma", "must satisfy 0 <= gamma < 1")
        if not 0 <= self.epsilon <= 1:
            raise ConfigError("pythia.epsilon", "must lie in [0, 1]")
        if self.vaults < 1 or self.vaults > 2:
            raise ConfigError("pythia.vaults", "one vault per feature; 1 or 2 features exist")
        if self.planes_per_vault < 1 or self.vaults * self.planes_per_vault > len(SHIFT_CONSTANTS):
            raise ConfigError("pythia.planes_per_vault", "out of range")
        rows = self.plane_rows
        if rows <= 0 or rows & (rows - 1):
            raise ConfigError("pythia.plane_rows", "must be a power of two")
        if self.eq_size < 1:
            raise ConfigError("pythia.eq_size", "must be positive")
        if not 0 <= self.high_bw_threshold <= 1:
            raise ConfigError("pythia.high_bw_threshold", "must lie in [0, 1]")
        return self


# -- features -----------------------------------------------------------------


class FeatureHistory:
    """Per-PC last line and the global delta sequence feeding the state."""

    def __init__(self):
        self.last_line_by_pc = {}
        self.last_line = None
        self.deltas = deque([0, 0, 0, 0], maxlen=4)


def pc_delta_feature(pc, delta):
    return ((pc << DELTA_BITS) | (delta & DELTA_MASK)) & MASK64


def delta_sequence_feature(deltas):
    """Shift-xor fold of deltas, oldest first, in 7-bit two's-complement lanes."""
    acc = 0
    for d in deltas:
        acc = ((acc << DELTA_BITS) ^ (d & DELTA_MASK)) & MASK64
    return acc


def extract_state(pc, addr, history):
    """State (PC+delta, last-4 deltas) for a demand; updates ``history`` afterwards."""
    line = addr >> LINE_SHIFT
    prev = history.last_line_by_pc.get(pc)
    delta = line - prev if prev is not None else 0
    gdelta = line - history.last_line if history.last_line is not None else 0
    seq = (history.deltas[1], history.deltas[2], history.deltas[3], gdelta)
    state = (pc_delta_feature(pc, delta), delta_sequence_feature(seq))
    history.last_line_by_pc[pc] = line
    history.last_line = line
    history.deltas.append(gdelta)
    return state


def plane_index(feature_value, shift_constant, rows):
    """Row of a plane: ``mix64(feature + shift) mod rows``."""
    return mix64(feature_value + shift_constant) & (rows - 1)


# -- QVStore ------------------------------------------------------------------


def _split(total, parts):
    base, rem = divmod(total, parts)
    return [base + (1 if i < rem else 0) for i in range(parts)]


class QvStore:
    """Vaults of tile-coded planes holding partial Q-values (raw fixed point).

    ``tables[v][p][row][action]``; a feature-action value is the sum of the
    vault's planes, and a state-action value the max over vaults.
    """

    def __init__(self, vaults, planes, rows, n_actions, init=0.0, state_bits=21,
                 frac_bits=Q_FRAC_BITS):
        self.vaults = vaults
        self.planes = planes
        self.rows = rows
        self.n_actions = n_actions
        self.state_bits = state_bits
        self.scale = 1 << frac_bits
        shares = _split(round(init * self.scale), planes)
        self.tables = [[[[shares[p]] * n_actions for _ in range(rows)] for p in range(planes)]
                       for _ in range(vaults)]
        self.shifts = [SHIFT_CONSTANTS[v * planes:(v + 1) * planes] for v in range(vaults)]
        self._memo = {}

    def rows_for(self, state):
        """Per-vault tuples of plane rows for ``state`` (one feature per vault)."""
        key = tuple(state[:self.vaults])
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        out = []
        for v in range(self.vaults):
            reduced = fold(state[v], self.state_bits)
            out.append(tuple(plane_index(reduced, s, self.rows) for s in self.shifts[v]))
        out = tuple(out)
        if len(self._memo) > 1 << 16:
            self._memo.clear()
        self._memo[key] = out
        return out

    def vault_sums(self, rows, a):
        out = []
        for planes, rv in zip(self.tables, rows):
            t = 0
            for p, r in enumerate(rv):
                t += planes[p][r][a]
            out.append(t)
        return out

    def q_raw(self, rows, a):
        return max(self.vault_sums(rows, a))

    def q_vector_raw(self, rows):
        best = None
        for v in range(self.vaults):
            planes = self.tables[v]
            rv = rows[v]
            if self.planes == 3:
                sums = [x + y + z for x, y, z in zip(planes[0][rv[0]], planes[1][rv[1]], planes[2][rv[2]])]
            else:
                sums = [sum(col) for col in zip(*(planes[p][r] for p, r in enumerate(rv)))]
            best = sums if best is None else [b if b >= s else s for b, s in zip(best, sums)]
        return best

    def q_lookup(self, state, action_index):
        return self.q_raw(self.rows_for(state), action_index) / self.scale

    def add(self, rows, a, delta_raw, vault=None):
        """Spread ``delta_raw`` over the planes of the vault that wins for (rows, a)."""
        if vault is not None:
            v = vault
        elif self.vaults == 1:
            v = 0
        else:
            sums = self.vault_sums(rows, a)
            v = sums.index(max(sums))
        for p, share in enumerate(_split(delta_raw, self.planes)):
            row = self.tables[v][p][rows[v][p]]
            row[a] = min(Q_MAX, max(Q_MIN, row[a] + share))
        return v

    def set_cell(self, vault, plane, row, a, value):
        self.tables[vault][plane][row][a] = round(value * self.scale)


def q_lookup(qv, state, action_index):
    return qv.q_lookup(state, action_index)


def greedy_action(qv, rows):
    q = qv.q_vector_raw(rows)
    return q.index(max(q))


def select_action(qv, state, rng, epsilon):
    """Uniform random action with probability epsilon, else argmax (lowest index on ties)."""
    if rng.random() < epsilon:
        return rng.randrange(qv.n_actions)
    return greedy_action(qv, qv.rows_for(state))


def sarsa_update(qv, s1, a1, r, s2, a2, alpha, gamma):
    """One SARSA step on Q(s1, a1); returns the applied change in Q units."""
    rows1 = qv.rows_for(s1)
    rows2 = qv.rows_for(s2)
    return _sarsa_rows(qv, rows1, a1, r, rows2, a2, alpha, gamma)


def _sarsa_rows(qv, rows1, a1, r, rows2, a2, alpha, gamma, q2_raw=None):
    scale = qv.scale
    sums = qv.vault_sums(rows1, a1)
    q1 = max(sums)
    if q2_raw is None:
        q2_raw = qv.q_raw(rows2, a2)
    delta = alpha * (r + gamma * q2_raw / scale - q1 / scale)
    delta_raw = round(delta * scale)
    if delta_raw:
        qv.add(rows1, a1, delta_raw, vault=sums.index(q1))
    return delta_raw / scale


# -- agent --------------------------------------------------------------------


class EqEntry:
    __slots__ = ("state", "rows", "action_index", "prefetch_line", "filled", "reward")

    def __init__(self, state, rows, action_index, prefetch_line=None):
        self.state = state
        self.rows = rows
        self.action_index = action_index
        self.prefetch_line = prefetch_line
        self.filled = False
        self.reward = None

    def assign(self, reward):
        if self.reward is not None:
            raise RuntimeError("EQ entry reward is write-once")
        self.reward = reward

    def mark_filled(self):
        self.filled = True


@dataclass
class PythiaStats:
    decisions: int = 0
    explored: int = 0
    rewards_assigned: int = 0
    entries_evicted: int = 0
    rewarded_at_eviction: int = 0
    reward_counts: Counter = field(default_factory=Counter)
    action_counts: Counter = field(default_factory=Counter)


class Pythia(Prefetcher):
    """Pythia as a prefetcher; trains on every demand it is shown.

    ``bandwidth`` is a callable ``now -> usage fraction`` supplied by the
    harness. With ``log_decisions`` set, every decision is appended to
    ``decision_log`` as ``(state, action_index, explored)``.
    """

    name = "pythia"

    def __init__(self, config=None, rng=None, d_max=D_MAX, bandwidth=None, log_decisions=False):
        super().__init__(d_max)
        self.config = (config or PythiaConfig()).validate()
        cfg = self.config
        self.actions = tuple(cfg.actions)
        self.rng = rng
        self.qv = QvStore(cfg.vaults, cfg.planes_per_vault, cfg.plane_rows, len(self.actions),
                          init=1.0 / (1.0 - cfg.gamma), state_bits=cfg.state_bits)
        self.history = FeatureHistory()
        self.eq = deque()
        self._by_line = {}
        self.bandwidth = bandwidth or (lambda now: 0.0)
        self.stats = PythiaStats()
        self.log_decisions = log_decisions
        self.decision_log = []

    # -- reward helpers --

    def _give(self, entry, reward):
        entry.assign(reward)
        self.stats.rewards_assigned += 1
        self.stats.reward_counts[reward] += 1

    def _unindex(self, entry):
        lst = self._by_line.get(entry.prefetch_line)
        if lst is not None:
            lst.remove(entry)
            if not lst:
                del self._by_line[entry.prefetch_line]

    # -- Algorithm: train and predict --

    def step(self, pc, addr, bw_usage, now=0):
        """Train on one demand and return the line numbers to prefetch."""
        cfg = self.config
        line = addr >> LINE_SHIFT

        for entry in self._by_line.get(line, ()):
            if entry.reward is None:
                self._give(entry, cfg.r_at if entry.filled else cfg.r_al)
                break

        state = extract_state(pc, addr, self.history)
        rows = self.qv.rows_for(state)
        qvec = self.qv.q_vector_raw(rows)
        explored = self.rng is not None and cfg.epsilon > 0 and self.rng.random() < cfg.epsilon
        if explored:
            a = self.rng.randrange(len(self.actions))
        else:
            a = qvec.index(max(qvec))
        self.stats.decisions += 1
        self.stats.explored += explored
        self.stats.action_counts[a] += 1
        if self.log_decisions:
            self.decision_log.append((state, a, explored))

        high_bw = bw_usage > cfg.high_bw_threshold
        offset = self.actions[a]
        entry = EqEntry(state, rows, a)
        out = []
        if offset == 0:
            self._give(entry, cfg.r_np_h if high_bw else cfg.r_np_l)
        else:
            target = line + offset
            page = line // LINES_PER_PAGE
            if target // LINES_PER_PAGE != page:
                self._give(entry, cfg.r_cl)
            else:
                entry.prefetch_line = target
                self._by_line.setdefault(target, []).append(entry)
                for k in range(1, self.degree + 1):
                    t = line + k * offset
                    if t // LINES_PER_PAGE != page:
                        break
                    out.append(t)

        self.eq.append(entry)
        if len(self.eq) > cfg.eq_size:
            old = self.eq.popleft()
            self.stats.entries_evicted += 1
            if old.prefetch_line is not None:
                self._unindex(old)
            if old.reward is None:
                self._give(old, cfg.r_in_h if high_bw else cfg.r_in_l)
            self.stats.rewarded_at_eviction += old.reward is not None
            _sarsa_rows(self.qv, old.rows, old.action_index, old.reward, rows, a,
                        cfg.alpha, cfg.gamma, q2_raw=qvec[a])
        return out

    def on_prefetch_fill(self, line):
        for entry in self._by_line.get(line, ()):
            entry.mark_filled()

    # -- prefetcher port --

    def on_demand(self, pc, addr, hit_level, now):
        lines = self.step(pc, addr, self.bandwidth(now), now)
        return PrefetchDecision([t << LINE_SHIFT for t in lines], pc, addr)

    def on_fill(self, addr, now):
        self.on_prefetch_fill(addr >> LINE_SHIFT)


def pythia_step(agent, pc, addr, bw_usage, now=0):
    """Run one demand through ``agent``; returns the first prefetch line or None."""
    lines = agent.step(pc, addr, bw_usage, now)
    return lines[0] if lines else None
