"""Experiment configuration, seeded trial execution, regret traces, and CSV output."""

import configparser
import csv
import io
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from clogb.algorithms import ALGORITHMS, AlgoConfig, Problem, make_policy, play_round
from clogb.environments import InstanceSpec, sample_outcomes, synth_instance
from clogb.oracles import BRUTE_FORCE_LIMIT, brute_force_oracle

CSV_HEADER = ("round", "algorithm", "seed", "inst_regret", "cum_regret")
OPTIMUM_MODES = ("auto", "brute_force", "oracle_proxy")


class ConfigError(ValueError):
    """Invalid configuration; the message names the file and line where possible."""


@dataclass
class ExperimentConfig:
    instance: InstanceSpec = field(default_factory=InstanceSpec)
    algorithms: list = field(default_factory=lambda: [("clogucb", AlgoConfig())])
    T: int = 1000
    seeds: int = 1
    master_seed: int = 0
    out_dir: str = "results"
    optimum_mode: str = "auto"
    workers: int = 1
    resample_instance: bool = False

    def __post_init__(self):
        if self.T < 1:
            raise ConfigError("T must be >= 1")
        if self.seeds < 1:
            raise ConfigError("seeds must be >= 1")
        if self.optimum_mode not in OPTIMUM_MODES:
            raise ConfigError(f"optimum_mode must be one of {OPTIMUM_MODES}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not self.algorithms:
            raise ConfigError("at least one algorithm is required")
        for name, _ in self.algorithms:
            if name not in ALGORITHMS:
                raise ConfigError(f"unknown algorithm {name!r}; expected one of {sorted(ALGORITHMS)}")


@dataclass
class RegretTrace:
    algorithm: str
    seed: int
    inst_regret: np.ndarray
    wall_time: float = 0.0
    optimum_mode: str = "brute_force"
    potential_violations: int = 0
    nonconverged: int = 0

    @property
    def cum_regret(self):
        return np.cumsum(self.inst_regret)

    @property
    def final(self):
        return float(self.cum_regret[-1])


# ---------------------------------------------------------------------------
# config files

def _parse_bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_edges(text):
    """'0-1, 1-2, 0-2' -> [(0, 1), (1, 2), (0, 2)]."""
    edges = []
    for tok in text.replace(",", " ").split():
        a, sep, b = tok.partition("-")
        if not sep:
            raise ValueError(f"edge {tok!r} is not of the form u-v")
        edges.append((int(a), int(b)))
    return edges


def _optional_float(text):
    return None if text.strip().lower() in ("", "none", "default") else float(text)



_INSTANCE_PARSERS = {
    "variant": str, "d": int, "L": float, "seed": int, "time_varying": _parse_bool,
    "kappa_mode": str, "m": int, "K": int, "n_servers": int, "n_users": int,
    "budget": int, "user_triggering": _parse_bool, "n_channels": int, "n_nodes": int,
    "source": int, "dest": int, "edge_prob": float, "edges": _parse_edges,
}
_ALGO_PARSERS = {
    "delta": _optional_float, "kappa_mode": str, "projection_mode": str,
    "agnostic_bonus_scale": float, "radius_scale": float, "mle_tol": _optional_float,
    "mle_max_iter": int, "epsilon": float, "t0_scale": float, "ridge_lambda": float,
    "variance_floor": float,
}
_EXPERIMENT_PARSERS = {
    "T": int, "seeds": int, "master_seed": int, "out_dir": str, "optimum_mode": str,
    "workers": int, "algorithms": str, "instance_file": str, "resample_instance": _parse_bool,
}


def _line_of(text, section, key):
    """1-based line number of ``key`` inside ``[section]``, or None."""
    current = None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
        elif current == section and line.split("=", 1)[0].split(":", 1)[0].strip() == key:
            return no
    return None


def _section_line(text, section):
    for no, raw in enumerate(text.splitlines(), 1):
        if raw.strip() == f"[{section}]":
            return no
    return None


class _Reader:
    def __init__(self, text, source):
        self.text, self.source = text, source
        # keys are case-sensitive (K and k would otherwise collide)
        self.cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        self.cp.optionxform = str
        try:
            self.cp.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigError(f"{source}: {exc}") from exc

    def where(self, section, key=None):
        no = _line_of(self.text, section, key) if key else _section_line(self.text, section)
        return f"{self.source}:{no}" if no else self.source

    def typed(self, section, parsers):
        out = {}
        if not self.cp.has_section(section):
            return out
        for key, raw in self.cp.items(section):
            if key not in parsers:
                raise ConfigError(f"{self.where(section, key)}: unknown key {key!r} in [{section}]; "
                                  f"allowed: {', '.join(sorted(parsers))}")
            try:
                out[key] = parsers[key](raw)
            except ValueError as exc:
                raise ConfigError(f"{self.where(section, key)}: bad value for {key!r}: {exc}") from exc
        return out

    def build(self, section, factory, values):
        try:
            return factory(**values)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{self.where(section)}: {exc}") from exc


def load_instance_spec(path):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_instance_spec(text, source=str(path))


def parse_instance_spec(text, source="<instance>"):
    reader = _Reader(text, source)
    if not reader.cp.has_section("instance"):
        raise ConfigError(f"{source}: missing [instance] section")
    return reader.build("instance", InstanceSpec, reader.typed("instance", _INSTANCE_PARSERS))


def parse_config(text, source="<config>", base_dir="."):
    reader = _Reader(text, source)
    known = {"experiment", "instance"}
    for sec in reader.cp.sections():
        if sec not in known and not sec.startswith("algo:"):
            raise ConfigError(f"{reader.where(sec)}: unknown section [{sec}]")
    exp = reader.typed("experiment", _EXPERIMENT_PARSERS)
    inst_file = exp.pop("instance_file", None)
    if inst_file is not None:
        if reader.cp.has_section("instance"):
            raise ConfigError(f"{reader.where('experiment', 'instance_file')}: "
                              "give either instance_file or an [instance] section, not both")
        path = inst_file if os.path.isabs(inst_file) else os.path.join(base_dir, inst_file)
        try:
            instance = load_instance_spec(path)
        except OSError as exc:
            raise ConfigError(f"{reader.where('experiment', 'instance_file')}: {exc}") from exc
    else:
        instance = reader.build("instance", InstanceSpec, reader.typed("instance", _INSTANCE_PARSERS))
    names = [n.strip() for n in exp.pop("algorithms", "clogucb").split(",") if n.strip()]
    for n in names:
        if n not in ALGORITHMS:
            raise ConfigError(f"{reader.where('experiment', 'algorithms')}: unknown algorithm {n!r}; "
                              f"expected one of {sorted(ALGORITHMS)}")
    shared = reader.typed("algo:*", _ALGO_PARSERS) if reader.cp.has_section("algo:*") else {}
    algos = []
    for n in names:
        values = dict(shared)
        values.update(reader.typed(f"algo:{n}", _ALGO_PARSERS))
        values.setdefault("kappa_mode", instance.kappa_mode)
        algos.append((n, reader.build(f"algo:{n}", AlgoConfig, values)))
    for sec in reader.cp.sections():
        if sec.startswith("algo:") and sec != "algo:*" and sec[5:] not in names:
            raise ConfigError(f"{reader.where(sec)}: [{sec}] names an algorithm not in the run list")
    return reader.build("experiment", ExperimentConfig, dict(instance=instance, algorithms=algos, **exp))


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_config(text, source=str(path), base_dir=os.path.dirname(os.path.abspath(path)))


_SWEEP_TARGETS = {}
for _f in fields(InstanceSpec):
    _SWEEP_TARGETS[_f.name] = ("instance", _INSTANCE_PARSERS[_f.name])
for _key in ("T", "seeds", "master_seed"):
    _SWEEP_TARGETS[_key] = ("experiment", int)
for _key, _p in _ALGO_PARSERS.items():
    _SWEEP_TARGETS.setdefault(_key, ("algo", _p))


def with_param(config, name, text):
    """Copy of ``config`` with one instance/experiment/algorithm field set from text."""
    if name not in _SWEEP_TARGETS:
        raise ConfigError(f"cannot sweep unknown parameter {name!r}")
    where, parser = _SWEEP_TARGETS[name]
    try:
        value = parser(text)
        if where == "instance":
            return replace(config, instance=replace(config.instance, **{name: value}))
        if where == "experiment":
            return replace(config, **{name: value})
        algos = [(n, c.with_overrides(**{name: value})) for n, c in config.algorithms]
        return replace(config, algorithms=algos)
    except ValueError as exc:
        raise ConfigError(f"bad value {text!r} for {name}: {exc}") from exc


# ---------------------------------------------------------------------------
# running


def trial_seed(master_seed, trial_index):
    return int(master_seed) ^ int(trial_index)


def choose_optimum_mode(config, env):
    if config.optimum_mode != "auto":
        if config.optimum_mode == "brute_force" and env.feasible_action_count() > BRUTE_FORCE_LIMIT:
            raise ConfigError("brute_force optimum needs at most 1e6 feasible actions")
        return config.optimum_mode
    small = env.m <= 20 if env.variant != "pmc" else env.n_servers <= 12
    if small and env.feasible_action_count() <= BRUTE_FORCE_LIMIT:
        return "brute_force"
    return "oracle_proxy"


def _optimum_value(env, mu, mode):
    if mode == "brute_force":
        return brute_force_oracle(env, mu).value
    res = env.oracle(mu)
    return res.alpha * res.value


def run_trial(config, algorithm, algo_config, trial_index):
    """One (algorithm, seed) simulation; pure function of its arguments."""
    seed = trial_seed(config.master_seed, trial_index)
    inst_seed = seed if config.resample_instance else config.instance.seed
    truth, env = synth_instance(inst_seed, config.instance)
    mode = choose_optimum_mode(config, env)
    problem = Problem(d=config.instance.d, T=config.T, L=config.instance.L,
                      kappa_exact=truth.kappa_exact(),
                      static_features=truth.feature_schedule.static)
    outcome_ss, policy_ss = np.random.SeedSequence(seed).spawn(2)
    outcome_rng = np.random.default_rng(outcome_ss)
    policy = make_policy(algorithm, env, problem, algo_config, np.random.default_rng(policy_ss))
    inst = np.empty(config.T)
    opt_cache = {}
    start = time.perf_counter()
    for t in range(1, config.T + 1):
        features = truth.features(t)
        mu = truth.means(t)
        key = mu.tobytes()
        if key not in opt_cache:
            if truth.feature_schedule.static:
                opt_cache.clear()
            opt_cache[key] = _optimum_value(env, mu, mode)
        outcomes = sample_outcomes(truth, features, outcome_rng)
        action, _ = play_round(policy, t, features, env, outcomes)
        inst[t - 1] = opt_cache[key] - env.expected_reward(action, mu)
    wall = time.perf_counter() - start
    potential = getattr(policy, "potential", None)
    return RegretTrace(
        algorithm, seed, inst, wall, mode,
        potential.violations if potential is not None else 0,
        getattr(policy, "nonconverged", 0),
    )


def _run_task(args):
    return run_trial(*args)


@dataclass
class ExperimentResult:
    traces: list
    summary: list
    optimum_mode: str
    notes: list = field(default_factory=list)


def summarize(traces):
    rows = []
    names = []
    for tr in traces:
        if tr.algorithm not in names:
            names.append(tr.algorithm)
    for name in names:
        group = [tr for tr in traces if tr.algorithm == name]
        finals = np.array([tr.final for tr in group])
        rows.append({
            "algorithm": name,
            "seeds": len(group),
            "mean_final_regret": float(np.mean(finals)),
            "std_final_regret": float(np.std(finals)),
            "mean_wall_time": float(np.mean([tr.wall_time for tr in group])),
            "potential_violations": int(sum(tr.potential_violations for tr in group)),
        })
    return rows


def run_experiment(config, write=True):
    tasks = [(config, name, cfg, i) for name, cfg in config.algorithms for i in range(config.seeds)]
    if config.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            traces = list(pool.map(_run_task, tasks))
    else:
        traces = [_run_task(task) for task in tasks]
    mode = traces[0].optimum_mode
    notes = []
    if mode == "oracle_proxy":
        notes.append("optimum is the oracle's own solution scaled by alpha; "
                     "for pmc the regret is alpha-approximate against greedy")
    result = ExperimentResult(traces, summarize(traces), mode, notes)
    if write:
        os.makedirs(config.out_dir, exist_ok=True)
        emit_csv(traces, os.path.join(config.out_dir, "regret.csv"))
        write_summary(result, os.path.join(config.out_dir, "summary.csv"))
    return result


# ---------------------------------------------------------------------------
# output


def _fmt(x):
    return repr(float(x))


def emit_csv(traces, path):
    if not traces:
        raise ValueError("no traces to write")
    ordered = sorted(traces, key=lambda tr: (tr.algorithm, tr.seed))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for tr in ordered:
        for t, (inst, cum) in enumerate(zip(tr.inst_regret, tr.cum_regret), 1):
            writer.writerow((t, tr.algorithm, tr.seed, _fmt(inst), _fmt(cum)))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())
    return path


def read_csv(path):
    """Inverse of :func:`emit_csv`: {(algorithm, seed): (inst, cum)} arrays."""
    data = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_HEADER:
            raise ValueError(f"unexpected header {header}")
        for row in reader:
            key = (row[1], int(row[2]))
            inst, cum = data.setdefault(key, ([], []))
            inst.append(float(row[3]))
            cum.append(float(row[4]))
    return {k: (np.array(a), np.array(b)) for k, (a, b) in data.items()}


def write_summary(result, path):
    cols = ("algorithm", "seeds", "mean_final_regret", "std_final_regret",
            "mean_wall_time", "potential_violations")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(cols)
        for row in result.summary:
            writer.writerow([_fmt(row[c]) if isinstance(row[c], float) else row[c] for c in cols])
        for note in result.notes:
            fh.write(f"# {note}\n")
    return path


def format_summary(result):
    lines = [f"{'algorithm':<16}{'seeds':>6}{'mean regret':>14}{'std':>12}{'wall s':>10}"]
    for row in result.summary:
        lines.append(f"{row['algorithm']:<16}{row['seeds']:>6}{row['mean_final_regret']:>14.3f}"
                     f"{row['std_final_regret']:>12.3f}{row['mean_wall_time']:>10.2f}")
    lines.extend(f"note: {n}" for n in result.notes)
    return "\n".join(lines)


def sweep(config, param, values):
    """Run one experiment per value; output goes to ``<out_dir>_<param>=<value>``."""
    results = {}
    for text in values:
        cfg = with_param(config, param, text)
        cfg = replace(cfg, out_dir=f"{config.out_dir.rstrip(os.sep)}_{param}={text}")
        results[text] = run_experiment(cfg)
    return results
