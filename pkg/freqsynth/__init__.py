import os
from flask import Flask

__version__ = '0.1.0'


def create_app(scenario=None):
    """Application factory for the analysis service.

    The scenario comes from ``scenario`` when given, otherwise from the TOML
    file named by ``FREQSYNTH_CONFIG`` (built-in defaults when unset).
    """
    app = Flask(__name__)

    from .config import load_config
    if scenario is None:
        path = os.environ.get('FREQSYNTH_CONFIG')
        try:
            scenario = load_config(path) if path else load_config(None)
        except Exception:
            app.logger.exception('Scenario config %s could not be loaded; using defaults', path)
            scenario = load_config(None)
    app.config['SCENARIO'] = scenario

    from . import routes  # type: ignore
    app.register_blueprint(routes.bp)
    return app


if __name__ == '__main__':
    port = int(os.environ.get('PORT', 5000))
    create_app().run(host='0.0.0.0', port=port)
