"""Command line: ``pfd run``, ``pfd verify`` and ``pfd list-presets``.

Exit codes
----------
0  success
1  invalid configuration or usage
2  numerical failure (the partial trace is still written)
3  verification failure

Configuration files are INI with three sections::

    [problem]
    kind = gan            # gan | vi | rl
    n = 8
    seed = 0

    [algorithm]
    preset = minimax_gan

    [run]
    outer_steps = 500
    seed = 0

``[problem]`` keys: ``kind``; ``seed``; for ``gan`` ``n``, ``target``,
``init`` (whitespace-separated masses), ``metric`` (``line`` or ``random``);
for ``vi`` ``n``, ``prior``, ``likelihood``; for ``rl`` ``instance`` (an MDP
table file, relative to the config file) or ``states``/``actions``/``gamma``
for a random instance.

``[algorithm]`` takes either ``preset`` or the explicit ``functional``,
``estimator``, ``descent`` and ``grad_kind`` keys.

``[run]`` keys: ``outer_steps``, ``learning_rate``, ``lr_decay``,
``critic_learning_rate``, ``saddle_method``, ``inner_steps``,
``inner_learning_rate``, ``samples``, ``tolerance``, ``seed``, ``out_dir``,
``timing``, ``trace_residual``.  With a preset, unset keys keep the preset's
values; with an explicit wiring they default to ``learning_rate = 0.1``,
``inner_steps = 100``, ``seed = 0``.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import io
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ._validation import ConfigError, NumericalError, PFDError, check_prob_vector
from .divergences import LatentModel
from .engine import DESCENTS, FUNCTIONALS, GRAD_KINDS, SADDLE_METHODS, PfdConfig, pfd_run
from .estimators import ESTIMATOR_KINDS, EstimatorConfig
from .mdp import load_mdp
from .presets import DESCRIPTIONS, GAN_PRESETS, PRESETS, RL_PRESETS, VI_PRESETS, build_preset
from .problems import random_latent_model, random_mdp, random_target
from .space import make_rng, uniform
from .transport import MetricSpace

__all__ = ["RunConfig", "parse_config", "serialize_config", "to_pfd_config", "main", "TRACE_HEADER"]

TRACE_HEADER = ("step", "j_value", "grad_norm", "influence_residual", "tv_to_target", "wall_ms")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_VERIFY = 0, 1, 2, 3

_PROBLEM_KEYS = {
    "kind": str, "seed": int, "n": int, "target": "vector", "init": "vector", "metric": str,
    "prior": "vector", "likelihood": "vector", "instance": str, "states": int, "actions": int,
    "gamma": float,
}
_ALGORITHM_KEYS = {"preset": str, "functional": str, "estimator": str, "descent": str, "grad_kind": str}
_RUN_KEYS = {
    "outer_steps": int, "learning_rate": float, "lr_decay": float, "critic_learning_rate": float,
    "saddle_method": str, "inner_steps": int, "inner_learning_rate": float, "samples": int,
    "tolerance": float, "seed": int, "out_dir": str, "timing": bool, "trace_residual": bool,
}
_SECTIONS = {"problem": _PROBLEM_KEYS, "algorithm": _ALGORITHM_KEYS, "run": _RUN_KEYS}
_KIND_FOR_FUNCTIONAL = {"js": "gan", "ns": "gan", "w1": "gan", "vi": "vi", "rl": "rl"}


@dataclass(frozen=True)
class RunConfig:
    """Validated contents of a configuration file.

    ``problem``, ``algorithm`` and ``run`` are sorted tuples of ``(key,
    value)`` pairs with typed values, so two configs compare equal exactly
    when they describe the same run.  ``base_dir`` resolves relative
    instance paths.
    """

    problem: tuple
    algorithm: tuple
    run: tuple
    base_dir: str = "."
    source: str = "<config>"

    def get(self, section, key, default=None):
        return dict(getattr(self, section)).get(key, default)


def _key_lines(text):
    """``(section, key) -> line number`` for error messages."""
    lines = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            lines.setdefault((section, None), lineno)
        elif section and line and line[0] not in "#;":
            key = re.split(r"[=:]", line, maxsplit=1)[0].strip().lower()
            lines.setdefault((section, key), lineno)
    return lines


def _convert(kind, raw, where):
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind == "vector":
            return tuple(float(x) for x in raw.replace(",", " ").split())
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _check_choice(value, choices, where):
    if value not in choices:
        raise ConfigError(f"{where}: unknown value {value!r}; expected one of {tuple(choices)}")


def parse_config_text(text, source="<config>", base_dir="."):
    lines = _key_lines(text)

    def where(section, key=None):
        line = lines.get((section, key), lines.get((section, None)))
        loc = f"{source}:{line}" if line else source
        return f"{loc}: [{section}]" + (f" {key}" if key else "")

    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"{where(section)}: unknown section; expected {tuple(_SECTIONS)}")
    values = {}
    for section, spec in _SECTIONS.items():
        if not parser.has_section(section):
            if section == "run":
                values[section] = {}
                continue
            raise ConfigError(f"{source}: missing section [{section}]")
        out = {}
        for key, raw in parser.items(section):
            if key not in spec:
                raise ConfigError(f"{where(section, key)}: unknown key; expected one of {tuple(spec)}")
            out[key] = _convert(spec[key], raw, where(section, key))
        values[section] = out

    prob, alg, run = values["problem"], values["algorithm"], values["run"]
    if "kind" not in prob:
        raise ConfigError(f"{where('problem')}: missing key 'kind'")
    _check_choice(prob["kind"], ("gan", "vi", "rl"), where("problem", "kind"))
    kind = prob["kind"]
    allowed = {
        "gan": {"kind", "seed", "n", "target", "init", "metric"},
        "vi": {"kind", "seed", "n", "prior", "likelihood"},
        "rl": {"kind", "seed", "instance", "states", "actions", "gamma"},
    }[kind]
    for key in prob:
        if key not in allowed:
            raise ConfigError(f"{where('problem', key)}: key does not apply to kind = {kind}")
    if kind in ("gan", "vi"):
        vectors = ("target",) if kind == "gan" else ("prior", "likelihood")
        if "n" not in prob and not all(v in prob for v in vectors):
            raise ConfigError(f"{where('problem')}: missing key 'n'")
        if kind == "vi" and ("prior" in prob) != ("likelihood" in prob):
            raise ConfigError(f"{where('problem')}: give both 'prior' and 'likelihood' or neither")
        if "metric" in prob:
            _check_choice(prob["metric"], ("line", "random"), where("problem", "metric"))
    else:
        if "instance" in prob:
            for key in ("states", "actions", "gamma"):
                if key in prob:
                    raise ConfigError(f"{where('problem', key)}: cannot be combined with 'instance'")
            path = Path(base_dir) / prob["instance"]
            if not path.is_file():
                raise ConfigError(f"{where('problem', 'instance')}: cannot read {str(path)!r}")
        elif not {"states", "actions"} <= set(prob):
            raise ConfigError(f"{where('problem')}: missing key 'instance' (or 'states' and 'actions')")

    if "preset" in alg:
        for key in alg:
            if key != "preset":
                raise ConfigError(f"{where('algorithm', key)}: cannot be combined with 'preset'")
        _check_choice(alg["preset"], PRESETS, where("algorithm", "preset"))
        family = {**{p: "gan" for p in GAN_PRESETS}, **{p: "vi" for p in VI_PRESETS},
                  **{p: "rl" for p in RL_PRESETS}}[alg["preset"]]
        if family != kind:
            raise ConfigError(f"{where('algorithm', 'preset')}: {alg['preset']} needs kind = {family}")
    else:
        if "functional" not in alg:
            raise ConfigError(f"{where('algorithm')}: missing key 'preset' (or 'functional')")
        _check_choice(alg["functional"], FUNCTIONALS, where("algorithm", "functional"))
        if _KIND_FOR_FUNCTIONAL[alg["functional"]] != kind:
            raise ConfigError(f"{where('algorithm', 'functional')}: {alg['functional']} does not fit kind = {kind}")
        for key, choices in (("estimator", ESTIMATOR_KINDS), ("descent", DESCENTS), ("grad_kind", GRAD_KINDS)):
            if key in alg:
                _check_choice(alg[key], choices, where("algorithm", key))
    if "saddle_method" in run:
        _check_choice(run["saddle_method"], SADDLE_METHODS, where("run", "saddle_method"))
    for key in ("outer_steps",):
        if key in run and run[key] < 0:
            raise ConfigError(f"{where('run', key)}: must be >= 0")
    for key in ("learning_rate", "inner_learning_rate", "critic_learning_rate", "tolerance"):
        if key in run and not run[key] > 0:
            raise ConfigError(f"{where('run', key)}: must be positive")
    for key in ("inner_steps", "samples"):
        if key in run and run[key] < 1:
            raise ConfigError(f"{where('run', key)}: must be >= 1")

    cfg = RunConfig(
        problem=tuple(sorted(prob.items())),
        algorithm=tuple(sorted(alg.items())),
        run=tuple(sorted(run.items())),
        base_dir=str(base_dir),
        source=source,
    )
    # building the run surfaces remaining problems (bad masses, wrong sizes)
    try:
        to_pfd_config(cfg)
    except ConfigError:
        raise
    except PFDError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return cfg


def parse_config(path):
    """Read and validate a configuration file; errors carry line numbers."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {str(path)!r}: {exc.strerror}") from None
    return parse_config_text(text, source=str(path), base_dir=str(path.parent))


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return " ".join(repr(float(v)) for v in value)
    return str(value)


def serialize_config(cfg):
    out = io.StringIO()
    for section in ("problem", "algorithm", "run"):
        out.write(f"[{section}]\n")
        for key, value in getattr(cfg, section):
            out.write(f"{key} = {_format_value(value)}\n")
        out.write("\n")
    return out.getvalue()


def _build_problem(cfg):
    prob = dict(cfg.problem)
    rng = make_rng(prob.get("seed", 0))
    kind = prob["kind"]
    if kind == "gan":
        nu = check_prob_vector(prob["target"], "target") if "target" in prob else random_target(rng, prob["n"])
        if "n" in prob and nu.size != prob["n"]:
            raise ConfigError(f"{cfg.source}: target has {nu.size} entries but n = {prob['n']}")
        init = check_prob_vector(prob["init"], "init") if "init" in prob else None
        if init is not None and init.size != nu.size:
            raise ConfigError(f"{cfg.source}: init has {init.size} entries but target has {nu.size}")
        if prob.get("metric") == "random":
            metric = MetricSpace.random(rng, nu.size)
        else:
            metric = MetricSpace.line(nu.size)
        return {"nu": nu, "init": init, "metric": metric}
    if kind == "vi":
        if "prior" in prob:
            model = LatentModel(prior=np.array(prob["prior"]), likelihood=np.array(prob["likelihood"]))
            if "n" in prob and model.n != prob["n"]:
                raise ConfigError(f"{cfg.source}: prior has {model.n} entries but n = {prob['n']}")
            return model
        return random_latent_model(rng, prob["n"])
    if "instance" in prob:
        return load_mdp(Path(cfg.base_dir) / prob["instance"])
    return random_mdp(rng, prob["states"], prob["actions"], prob.get("gamma", 0.9))


def to_pfd_config(cfg):
    """Turn a :class:`RunConfig` into the :class:`~pfd.engine.PfdConfig` it describes."""
    alg, run = dict(cfg.algorithm), dict(cfg.run)
    context = _build_problem(cfg)
    over = {k: run[k] for k in ("outer_steps", "learning_rate", "lr_decay", "critic_learning_rate",
                                "saddle_method", "seed", "timing", "trace_residual") if k in run}
    est = {k: run[k] for k in ("inner_steps", "samples", "tolerance") if k in run}
    if "inner_learning_rate" in run:
        est["learning_rate"] = run["inner_learning_rate"]
    if "preset" in alg:
        return build_preset(alg["preset"], context, **over, **{
            ("inner_learning_rate" if k == "learning_rate" else k): v for k, v in est.items()})
    functional = alg["functional"]
    if functional == "vi":
        ctx = {"model": context}
        target = context.posterior
    elif functional == "rl":
        ctx = {"mdp": context}
        target = None
    else:
        ctx = {k: v for k, v in context.items() if k != "init"}
        over.setdefault("init", context["init"])
        target = context["nu"]
    fields = dict(
        functional=functional,
        context=ctx,
        estimator=EstimatorConfig(kind=alg.get("estimator", "exact"), **{"inner_steps": 100, **est}),
        descent=alg.get("descent", "gradient"),
        grad_kind=alg.get("grad_kind", "exact_chain_rule"),
        target=target,
    )
    fields.update({"learning_rate": 0.1, "seed": 0, **over})
    return PfdConfig(**fields)


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------


def _num(x):
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_trace(trace, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(TRACE_HEADER)
        for rec in trace:
            writer.writerow([_num(v) for v in rec])


def write_result(path, cfg, pfd_cfg, result=None, error=None):
    lines = []
    alg = dict(cfg.algorithm)
    lines.append(f"algorithm = {alg.get('preset', alg.get('functional'))}")
    lines.append(f"functional = {pfd_cfg.functional}")
    if error is not None:
        lines.append("status = numerical_failure")
        lines.append(f"failed_step = {error.step}")
        lines.append(f"error = {error}")
    else:
        lines.append("status = ok")
        last = result.trace[-1]
        lines.append(f"steps = {last.step}")
        lines.append(f"final_j = {_num(last.j_value)}")
        if last.tv_to_target is not None:
            lines.append(f"final_tv = {_num(last.tv_to_target)}")
        measure = np.asarray(result.measure)
        if measure.ndim == 1:
            lines.append("measure = " + " ".join(_num(x) for x in measure))
        else:
            lines.append("policy =")
            for s, row in enumerate(measure):
                lines.append(f"  {s}: " + " ".join(_num(x) for x in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _run_one(config_path, out_dir):
    """Returns ``(exit code, message)``; never raises on expected failures."""
    try:
        cfg = parse_config(config_path)
        out = Path(out_dir or cfg.get("run", "out_dir") or "out")
        pfd_cfg = to_pfd_config(cfg)
    except ConfigError as exc:
        return EXIT_CONFIG, f"error: {exc}"
    if out_dir is None and cfg.get("run", "out_dir") is not None:
        out = Path(cfg.base_dir) / cfg.get("run", "out_dir")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        return EXIT_CONFIG, f"error: cannot create {str(out)!r}: {exc.strerror}"
    try:
        result = pfd_run(pfd_cfg)
    except NumericalError as exc:
        write_trace(exc.trace or [], out / "trace.csv")
        write_result(out / "result.txt", cfg, pfd_cfg, error=exc)
        return EXIT_NUMERICAL, f"numerical failure: {exc}"
    except ConfigError as exc:
        return EXIT_CONFIG, f"error: {exc}"
    write_trace(result.trace, out / "trace.csv")
    write_result(out / "result.txt", cfg, pfd_cfg, result=result)
    return EXIT_OK, f"wrote {out / 'trace.csv'} ({len(result.trace)} rows)"


def cmd_run(configs, out_dir, jobs=1, stdout=sys.stdout, stderr=sys.stderr):
    if len(configs) == 1:
        jobs_out = [_run_one(configs[0], out_dir)]
    else:
        # several configs: one sub-directory per config stem
        base = Path(out_dir) if out_dir else None
        dirs = [str(base / Path(c).stem) if base else None for c in configs]
        if len({Path(c).stem for c in configs}) != len(configs) and base is not None:
            print("error: config files must have distinct names", file=stderr)
            return EXIT_CONFIG
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                jobs_out = list(pool.map(_run_one, configs, dirs))
        else:
            jobs_out = [_run_one(c, d) for c, d in zip(configs, dirs)]
    for code, message in jobs_out:
        print(message, file=stdout if code == EXIT_OK else stderr)
    return max(code for code, _ in jobs_out)


def cmd_verify(suites, stdout=sys.stdout, stderr=sys.stderr):
    from . import verify

    names = list(verify.SUITES) if not suites else suites
    for name in names:
        if name not in verify.SUITES:
            print(f"error: unknown suite {name!r}; expected one of {tuple(verify.SUITES)}", file=stderr)
            return EXIT_CONFIG
    failed = []
    for name in names:
        try:
            results = verify.run_suite(name)
        except Exception as exc:  # a crashing check is a failing check
            results = [verify.CheckResult(name, "crashed", float("inf"), 0.0, f"{type(exc).__name__}: {exc}")]
        for res in results:
            print(res.line(), file=stdout)
            if not res.passed:
                failed.append(f"{res.suite}/{res.name}")
    if failed:
        print(f"{len(failed)} check(s) failed: {', '.join(failed)}", file=stdout)
        return EXIT_VERIFY
    print("all checks passed", file=stdout)
    return EXIT_OK


def cmd_list_presets(stdout=sys.stdout):
    for name in PRESETS:
        print(f"{name:<20} {DESCRIPTIONS[name]}", file=stdout)
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _parser():
    p = _Parser(prog="pfd", description="Probability functional descent on finite spaces.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    r = sub.add_parser("run", help="run a configuration and write trace.csv and result.txt")
    r.add_argument("--config", action="append", required=True, help="INI file (repeatable)")
    r.add_argument("--out", default=None, help="output directory")
    r.add_argument("--jobs", type=int, default=1, help="run several configs concurrently")
    v = sub.add_parser("verify", help="run the numerical verification suites")
    v.add_argument("names", nargs="*", metavar="suite", help="suite names (default all)")
    v.add_argument("--suite", action="append", default=None, help="suite name (repeatable)")
    sub.add_parser("list-presets", help="list the algorithm presets")
    return p


def main(argv=None, stdout=sys.stdout, stderr=sys.stderr):
    stdout = stdout if stdout is not None else io.StringIO()
    try:
        args = _parser().parse_args(argv)
    except ConfigError as exc:
        print(f"usage error: {exc}", file=stderr)
        return EXIT_CONFIG
    if args.command == "run":
        if args.jobs < 1:
            print("usage error: --jobs must be >= 1", file=stderr)
            return EXIT_CONFIG
        return cmd_run(args.config, args.out, args.jobs, stdout, stderr)
    if args.command == "verify":
        return cmd_verify(args.names + (args.suite or []), stdout, stderr)
    return cmd_list_presets(stdout)


def entry_point():
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
