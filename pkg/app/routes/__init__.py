from flask import Blueprint, request, jsonify
from datetime import datetime
import logging

from pydantic import ValidationError

from app.errors import CodecError, ConfigError, IsacError
from app.schemas import BistaticFactorRequest, RunManifest, SceneConfig

logger = logging.getLogger(__name__)

# Create blueprints
scene_bp = Blueprint('scene', __name__)
run_bp = Blueprint('run', __name__)
main_bp = Blueprint('main', __name__)

pipeline_service = None


def get_pipeline_service():
    """Lazily build the pipeline service so importing the routes stays cheap."""
    global pipeline_service
    if pipeline_service is None:
        from app.services.pipeline import PipelineService
        pipeline_service = PipelineService()
    return pipeline_service


def _point(name: str):
    raw = request.args.get(name)
    if raw is None:
        raise ValueError(f'missing query parameter {name!r}')
    parts = raw.split(',')
    if len(parts) != 2:
        raise ValueError(f'{name} must be "x,y"')
    return tuple(float(v) for v in parts)


@scene_bp.route('/scenes/validate', methods=['POST'])
def validate_scene():
    """Validate a scene document and summarize its geometry."""
    try:
        data = request.get_json(silent=True)
        if data is None:
            return jsonify({'error': 'Request body must be a JSON object'}), 400

        try:
            scene = SceneConfig.model_validate(data)
        except ValidationError as e:
            return jsonify({'error': f'Validation error: {str(e)}'}), 400

        summary = get_pipeline_service().summarize_scene(scene)
        logger.info(f"Validated scene: {scene.num_receivers} receiver(s), {scene.num_frames} frames")
        return jsonify({'message': 'Scene is valid', 'data': summary}), 200

    except Exception as e:
        logger.error(f"Error validating scene: {str(e)}")
        return jsonify({'error': 'Internal server error'}), 500


@scene_bp.route('/geometry/bistatic-factor', methods=['GET'])
def get_bistatic_factor():
    """Bistatic angle and Doppler scale factor for tx, rx and target given as 'x,y'."""
    from app.services.microdoppler import bistatic_factor
    try:
        try:
            query = BistaticFactorRequest(tx=_point('tx'), rx=_point('rx'), p=_point('p'))
        except (ValueError, ValidationError) as e:
            return jsonify({'error': f'Validation error: {str(e)}'}), 400

        try:
            sample = bistatic_factor(query.tx, query.rx, query.p)
        except ValueError as e:
            return jsonify({'error': str(e)}), 400
        return jsonify(sample.to_dict()), 200

    except Exception as e:
        logger.error(f"Error computing bistatic factor: {str(e)}")
        return jsonify({'error': 'Internal server error'}), 500


@run_bp.route('/runs', methods=['POST'])
def create_run():
    """Run a manifest synchronously and return its evaluation report."""
    try:
        data = request.get_json(silent=True)
        if data is None:
            return jsonify({'error': 'Request body must be a JSON object'}), 400

        try:
            manifest = RunManifest.model_validate(data)
        except ValidationError as e:
            return jsonify({'error': f'Validation error: {str(e)}'}), 400

        try:
            report = get_pipeline_service().run(manifest)
        except ConfigError as e:
            return jsonify({'error': f'Configuration error: {str(e)}'}), 400
        except (CodecError, OSError) as e:
            return jsonify({'error': f'I/O error: {str(e)}'}), 400
        except IsacError as e:
            return jsonify({'error': f'Stage failure: {str(e)}'}), 500

        logger.info(f"Completed run into {manifest.output_dir}")
        return jsonify({
            'message': 'Run completed',
            'report': report.model_dump(mode='json'),
            'stage_seconds': report.stage_seconds
        }), 201

    except Exception as e:
        logger.error(f"Error running manifest: {str(e)}")
        return jsonify({'error': 'Internal server error'}), 500


@main_bp.route('/status', methods=['GET'])
def health_check():
    """Health check endpoint."""
    from app.config import Config
    return jsonify({
        'status': 'healthy',
        'message': 'Service is running',
        'output_dir': Config.OUTPUT_DIR,
        'max_workers': Config.MAX_WORKERS,
        'timestamp': datetime.utcnow().isoformat()
    }), 200
