"""Command line front end.

Exit codes: 0 success, 1 requirement failure (symbolic runs), 2 usage,
configuration or artifact errors, 3 internal errors.
"""

from __future__ import annotations

import functools
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import click

from . import artifacts
from .config import ScenarioConfig, config_summary, load_config
from .errors import ArtifactMismatch, ConfigError, ContractViolation, GuaranteeViolation, MemoryBudgetExceeded, ParameterError
from .ev_baseline import DEFAULT_HALF_WIDTHS, compare_charging_modes, sweep_deadband
from .experiments import TARGETS, baseline_trace, build_model, synthesize, verdict
from .grid_model import MODES, GridModel
from .multiphase import run_multiphase, run_robustness, summarize_by_delta
from .plotting import write_trace_svg

logger = logging.getLogger(__name__)

EXIT_SPEC_FAIL = 1
EXIT_USAGE = 2
EXIT_INTERNAL = 3


@dataclass
class Context:
    cfg: ScenarioConfig
    out: Path
    seed: int
    force: bool

    def path(self, name: str) -> Path:
        return self.out / name


def _handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigError, ParameterError, ArtifactMismatch, FileExistsError, MemoryBudgetExceeded, ContractViolation) as exc:
            logger.warning('command_rejected error=%s', exc)
            click.echo(f'error: {exc}', err=True)
            raise SystemExit(EXIT_USAGE)
        except click.exceptions.Exit:
            raise
        except SystemExit:
            raise
        except Exception as exc:  # pylint: disable=broad-except
            logger.exception('command_failed')
            click.echo(f'internal error: {exc}', err=True)
            raise SystemExit(EXIT_INTERNAL)

    return wrapper


def _mode(ctx: Context, mode: Optional[str]) -> str:
    return mode or ctx.cfg.mode


def _model_path(ctx: Context, mode: str) -> Path:
    return ctx.path(f'model_{mode}.npz')


def _controller_path(ctx: Context, mode: str, target: str) -> Path:
    return ctx.path(f'controller_{mode}_{target}.npz')


@click.group()
@click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None, help='Scenario TOML file.')
@click.option('--out', 'out_dir', type=click.Path(file_okay=False), default=None, help='Output directory.')
@click.option('--seed', type=int, default=None, help='Base seed for randomised runs.')
@click.option('--force', is_flag=True, help='Overwrite existing artifacts.')
@click.pass_context
def main(click_ctx: click.Context, config_path, out_dir, seed, force):
    """Symbolic EV frequency-response controllers for the GB grid."""
    level = os.environ.get('FREQSYNTH_LOG_LEVEL', 'INFO').upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format='%(asctime)s %(levelname)s %(name)s %(message)s')
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        click.echo(f'error: {exc}', err=True)
        raise SystemExit(EXIT_USAGE)
    out = Path(out_dir or cfg.out_dir)
    click_ctx.obj = Context(
        cfg=cfg,
        out=out,
        seed=int(seed if seed is not None else cfg.robustness.base_seed),
        force=force,
    )


mode_option = click.option('--mode', type=click.Choice(MODES), default=None, help='Charging mode (defaults to the config).')


@main.command()
@mode_option
@click.pass_obj
@_handle_errors
def abstract(ctx: Context, mode):
    """Build and store the symbolic model."""
    mode = _mode(ctx, mode)
    path = artifacts.ensure_writable(_model_path(ctx, mode), ctx.force)
    started = time.perf_counter()
    model = build_model(ctx.cfg, mode)
    artifacts.save_model(path, model)
    ood = int(model.transitions.ood.sum())
    click.echo(
        f'cells={model.n_cells} inputs={model.n_inputs} pairs={model.n_cells * model.n_inputs} '
        f'ood_pairs={ood} seconds={time.perf_counter() - started:.1f} -> {path}'
    )


@main.command()
@mode_option
@click.option('--target', type=click.Choice(TARGETS), required=True)
@click.option('--export-csv', is_flag=True, help='Also write the lookup table as CSV.')
@click.pass_obj
@_handle_errors
def synth(ctx: Context, mode, target, export_csv):
    """Solve the reach-avoid game for I1 or I2."""
    mode = _mode(ctx, mode)
    path = artifacts.ensure_writable(_controller_path(ctx, mode, target), ctx.force)
    model_path = _model_path(ctx, mode)
    if not model_path.exists():
        raise ConfigError(f'{model_path} not found; run `abstract` first')
    model = artifacts.load_model(model_path, expected_hash=ctx.cfg.model_hash(mode))
    started = time.perf_counter()
    controller = synthesize(model, ctx.cfg, target, mode)
    seconds = time.perf_counter() - started
    artifacts.save_controller(path, controller)
    if export_csv:
        artifacts.export_controller_csv(path.with_suffix('.csv'), controller)
    fraction = len(controller.winning) / controller.n_cells
    click.echo(
        f'target={target} winning={len(controller.winning)} fraction={fraction:.4f} '
        f'iterations={controller.iterations} seconds={seconds:.1f} -> {path}'
    )


def _hashes(cfg: ScenarioConfig, mode: str, symbolic: bool) -> dict:
    """Provenance keys every artifact of a run carries."""
    out = {'config_hash': cfg.config_hash(mode)}
    if symbolic:
        out['model_hash'] = cfg.model_hash(mode)
        out['controller_hash'] = {t: cfg.controller_hash(mode, t) for t in TARGETS}
    return out


def _emit_run(ctx: Context, stem: str, trace, payload, title: str, comparison=None) -> None:
    csv_path = ctx.path(f'{stem}.csv')
    for p in (csv_path, ctx.path(f'{stem}.json'), ctx.path(f'{stem}.svg')):
        artifacts.ensure_writable(p, ctx.force)
    meta = {'stem': stem, 'loss_mw': payload.get('loss_mw'), 'mode': payload.get('mode')}
    meta.update({k: payload[k] for k in ('config_hash', 'model_hash', 'controller_hash') if k in payload})
    artifacts.write_trace_csv(csv_path, trace, meta)
    artifacts.write_json(ctx.path(f'{stem}.json'), payload)
    write_trace_svg(
        ctx.path(f'{stem}.svg'),
        trace,
        ctx.cfg.spec(payload.get('mode')),
        title,
        comparison=comparison,
        comparison_label='baseline',
    )
    click.echo(f"{stem}: passed={payload['passed']} min_f_hz={payload['min_f_hz']:.3f} -> {csv_path}")


def _simulate(ctx: Context, mode: str, controller_kind: str, robust: bool) -> int:
    cfg = ctx.cfg
    spec = cfg.spec(mode)
    common = {'mode': mode, 'w': cfg.w(mode), 'config': config_summary(cfg, mode)}
    if controller_kind == 'baseline':
        trace = baseline_trace(cfg, mode)
        payload = verdict(trace, cfg.loss_mw, spec, controller='baseline', **common, **_hashes(cfg, mode, False))
        _emit_run(ctx, f'baseline_{mode}', trace, payload, f'Baseline controller ({mode})')
        return 0

    loaded = {}
    for target in TARGETS:
        cpath = _controller_path(ctx, mode, target)
        if not cpath.exists():
            raise ConfigError(f'{cpath} not found; run `synth --target {target}` first')
        loaded[target] = artifacts.load_controller(cpath, expected_hash=cfg.controller_hash(mode, target))
    delta = cfg.robustness.delta_max if robust else 0.0
    stem = f'symbolic_{mode}' + (f'_d{delta:g}_s{ctx.seed}' if robust else '')
    error = ''
    try:
        trace = run_multiphase(
            GridModel(cfg.params(mode)),
            loaded['i1'],
            loaded['i2'],
            spec,
            cfg.w(mode),
            cfg.horizon_s,
            x0=cfg.x0,
            delta_max=delta,
            seed=ctx.seed,
            hold_margin=cfg.supervisor.hold_margin,
        )
    except GuaranteeViolation as exc:
        logger.warning('guarantee_violation controller=%s cell=%s', exc.controller, exc.cell)
        error = str(exc)
        trace = exc.trace
        if trace is None or len(trace) == 0:
            click.echo(f'error: {exc}', err=True)
            return EXIT_SPEC_FAIL
    payload = verdict(
        trace,
        cfg.loss_mw,
        spec,
        controller='symbolic',
        delta_max=delta,
        seed=ctx.seed,
        error=error,
        **common,
        **_hashes(cfg, mode, True),
    )
    if error:
        payload['passed'] = False
    # drawn underneath at its own fine step
    reference = baseline_trace(cfg, mode)
    _emit_run(ctx, stem, trace, payload, f'Symbolic controller ({mode})', comparison=reference)
    return 0 if payload['passed'] else EXIT_SPEC_FAIL


@main.command()
@mode_option
@click.option('--controller', 'controller_kind', type=click.Choice(('baseline', 'symbolic')), default='symbolic')
@click.option('--robust', is_flag=True, help='Inject participation uncertainty.')
@click.pass_obj
@_handle_errors
def simulate(ctx: Context, mode, controller_kind, robust):
    """Closed-loop run with trace CSV, verdict JSON and SVG plot."""
    code = _simulate(ctx, _mode(ctx, mode), controller_kind, robust)
    if code:
        raise SystemExit(code)


@main.command()
@mode_option
@click.pass_obj
@_handle_errors
def baseline(ctx: Context, mode):
    """Shorthand for ``simulate --controller baseline``."""
    _simulate(ctx, _mode(ctx, mode), 'baseline', False)


@main.command()
@click.option('--mode', type=click.Choice(MODES + ('both',)), default='both')
@click.option('--half-width', 'half_widths', type=float, multiple=True, help='Deadband half widths in Hz.')
@click.pass_obj
@_handle_errors
def sweep(ctx: Context, mode, half_widths):
    """Steady-state frequency of the baseline over deadband widths."""
    path = artifacts.ensure_writable(ctx.path('sweep.csv'), ctx.force)
    widths = half_widths or DEFAULT_HALF_WIDTHS
    modes = MODES if mode == 'both' else (mode,)
    rows = [row for m in modes for row in sweep_deadband(widths, m, ctx.cfg)]
    artifacts.write_sweep_csv(path, rows, metadata={'kind': 'sweep', 'config_hash': ctx.cfg.config_hash()})
    for r in rows:
        flag = '' if r.settled else ' (unsettled)'
        click.echo(f'{r.mode} +-{r.half_width_hz:.2f} Hz -> {r.steady_f_hz:.3f} Hz{flag}')


@main.command()
@mode_option
@click.option('--runs', type=int, default=None, help='Seeds per delta (defaults to the config).')
@click.option('--delta', 'deltas', type=float, multiple=True, help='Uncertainty levels (defaults to the config).')
@click.pass_obj
@_handle_errors
def robustness(ctx: Context, mode, runs, deltas):
    """Seeded symbolic runs with participation uncertainty."""
    mode = _mode(ctx, mode)
    cfg = ctx.cfg
    path = artifacts.ensure_writable(ctx.path(f'robustness_{mode}.csv'), ctx.force)
    controllers = {}
    for target in TARGETS:
        cpath = _controller_path(ctx, mode, target)
        if not cpath.exists():
            raise ConfigError(f'{cpath} not found; run `synth --target {target}` first')
        controllers[target] = artifacts.load_controller(cpath, expected_hash=cfg.controller_hash(mode, target))
    n = runs if runs is not None else cfg.robustness.seeds
    seeds = range(ctx.seed, ctx.seed + n)
    rows = run_robustness(
        GridModel(cfg.params(mode)),
        controllers['i1'],
        controllers['i2'],
        cfg.spec(mode),
        cfg.w(mode),
        cfg.horizon_s,
        seeds=seeds,
        deltas=deltas or (cfg.robustness.delta_max,),
        x0=cfg.x0,
        hold_margin=cfg.supervisor.hold_margin,
    )
    provenance = {'mode': mode, **_hashes(cfg, mode, True)}
    artifacts.write_robustness_csv(path, rows, metadata=provenance)
    summary = summarize_by_delta(rows)
    artifacts.write_json(
        ctx.path(f'robustness_{mode}.json'),
        {**provenance, 'summary': [s.__dict__ for s in summary]},
    )
    for s in summary:
        worst = '-' if s.worst_settle_s is None else f'{s.worst_settle_s:.1f} s'
        click.echo(f'delta={s.delta_max:g} runs={s.runs} pass_rate={s.pass_rate:.2%} worst_settle={worst}')
    if any(s.pass_rate < 1.0 for s in summary):
        raise SystemExit(EXIT_SPEC_FAIL)


@main.command()
@click.argument('trace_path', type=click.Path(exists=True, dir_okay=False))
@click.option('--verdict', 'verdict_path', type=click.Path(exists=True, dir_okay=False), default=None)
@mode_option
@click.option('--loss-mw', type=float, default=None)
@click.pass_obj
@_handle_errors
def check(ctx: Context, trace_path, verdict_path, mode, loss_mw):
    """Re-evaluate a trace CSV; compare with a stored verdict when given."""
    try:
        trace, meta = artifacts.read_trace_csv(trace_path)
    except ValueError as exc:
        raise ConfigError(f'{trace_path}: {exc}') from exc
    mode = mode or meta.get('mode') or ctx.cfg.mode
    loss = loss_mw if loss_mw is not None else float(meta.get('loss_mw') or ctx.cfg.loss_mw)
    payload = verdict(trace, loss, ctx.cfg.spec(mode), mode=mode)
    req = payload['requirements']
    click.echo(
        f"psi1={req['psi1']['holds']} psi2={req['psi2']['holds']} psi3={req['psi3']['holds']} "
        f"two_stage={payload['two_stage']['psi']['holds']}"
    )
    if verdict_path:
        stored = artifacts.read_json(verdict_path)
        same = (
            stored.get('two_stage', {}).get('psi', {}).get('holds') == payload['two_stage']['psi']['holds']
            and stored.get('requirements', {}).get('psi', {}).get('holds') == req['psi']['holds']
        )
        click.echo('consistent' if same else 'inconsistent')
        if not same:
            raise SystemExit(EXIT_SPEC_FAIL)


@main.command()
@click.pass_obj
@_handle_errors
def compare(ctx: Context):
    """Baseline response with no EVs, unidirectional and bidirectional charging."""
    path = artifacts.ensure_writable(ctx.path('compare.csv'), ctx.force)
    results = compare_charging_modes(ctx.cfg)
    artifacts.write_rows_csv(
        path,
        ('strategy', 'min_f_hz', 'final_f_hz'),
        ((c.strategy, f'{c.min_f_hz:.4f}', f'{c.final_f_hz:.4f}') for c in results),
        metadata={'kind': 'compare', 'config_hash': ctx.cfg.config_hash()},
    )
    for c in results:
        click.echo(f'{c.strategy}: min={c.min_f_hz:.3f} Hz final={c.final_f_hz:.3f} Hz')


__all__ = ['main']
