from flask import Blueprint, current_app, request

from . import __version__
from .artifacts import parse_trace_csv
from .config import ScenarioConfig
from .errors import ContractViolation, NumericalError, ParameterError
from .experiments import verdict
from .grid_model import MODES, GridModel


bp = Blueprint('main', __name__)


def _scenario() -> ScenarioConfig:
    return current_app.config.get('SCENARIO') or ScenarioConfig()


def _mode_arg(cfg: ScenarioConfig) -> str:
    mode = (request.args.get('mode') or cfg.mode).strip().lower()
    if mode not in MODES:
        raise ValueError(f'mode must be one of {", ".join(MODES)}.')
    return mode


def _float_arg(name: str, default: float) -> float:
    raw = request.args.get(name)
    if raw in (None, ''):
        return float(default)
    try:
        return float(raw)
    except ValueError:
        raise ValueError(f'{name} must be a number.') from None


@bp.route('/health')
def health():
    return {'status': 'ok', 'version': __version__}


@bp.route('/api/check', methods=['POST'])
def check_trace():
    """Evaluate the grid-code requirements and the two-stage property on a trace.

    Body: trace CSV (``t,f_hz,g,l,p,u,w,phase``, optional ``# {json}`` first line).
    Params:
      - loss_mw (optional): loss size, defaults to the scenario loss
      - mode (optional): ``uni`` or ``bi``, selects the I1/I2 intervals
    """
    cfg = _scenario()
    try:
        mode = _mode_arg(cfg)
        loss_mw = _float_arg('loss_mw', cfg.loss_mw)
    except ValueError as e:
        return {'error': str(e)}, 400
    body = request.get_data(as_text=True)
    if not body.strip():
        return {'error': 'Request body must be trace CSV.'}, 400
    try:
        trace, meta = parse_trace_csv(body)
    except (ValueError, ContractViolation) as e:
        return {'error': f'Malformed trace: {e}'}, 400
    try:
        payload = verdict(trace, loss_mw, cfg.spec(mode), mode=mode, samples=len(trace))
    except Exception as e:  # pragma: no cover
        current_app.logger.exception('check_failed')
        return {'error': str(e)}, 500
    current_app.logger.info(
        'api_check mode=%s samples=%d passed=%s', mode, len(trace), payload['passed'],
        extra={'mode': mode, 'samples': len(trace)},
    )
    return payload


@bp.route('/api/steady-state')
def steady_state():
    """Post-loss steady state for a constant participation ``u``."""
    cfg = _scenario()
    try:
        mode = _mode_arg(cfg)
        u = _float_arg('u', 0.0)
        loss_mw = _float_arg('loss_mw', cfg.loss_mw)
        if not (0.0 <= u <= 1.0):
            raise ValueError('u must lie in [0, 1].')
        if loss_mw < 0:
            raise ValueError('loss_mw must be non-negative.')
    except ValueError as e:
        return {'error': str(e)}, 400
    params = cfg.params(mode)
    scenario = cfg.with_overrides(loss_mw=loss_mw)
    try:
        x = GridModel(params).steady_state(u, scenario.w(mode))
    except (NumericalError, ParameterError) as e:
        return {'error': str(e)}, 400
    return {
        'mode': mode,
        'u': u,
        'loss_mw': loss_mw,
        'w': scenario.w(mode),
        'state': x._asdict(),
        'f_hz': x.absolute_hz(params.f_nom),
    }
