"""
The ``tinypose`` command line.

Sub-commands::

    simulate      write synthetic scenes from a scene spec file
    predict-sim   add simulated prediction maps to scene directories
    hypgen        write the pose hypotheses of scene directories
    train         fit the quality regressor on simulated scenes
    estimate      estimate the poses in scene directories
    evaluate      recall of estimates against ground truth
    report        compare evaluation summaries of several runs

Exit codes: 0 success, 2 usage error, 3 data error, 4 internal invariant
violation.
"""

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, List, Optional, Sequence, TypeVar

from .config import Config, NoiseSettings, default_config_path, load_config
from .errors import DataError, InvariantViolation, SceneMismatchError
from .evaluation import (compare_summaries, match_and_recall, summarize,
                         write_comparison_csv, write_recall_csv)
from .gbrt import TreeEnsemble, train_gbrt, write_training_log
from .hypgen import generate_hypotheses
from .pipeline import OBJECTIVES, PoseEstimator, read_estimate, \
    write_estimate
from .render import CameraIntrinsics
from .scenegen import (generate_scene, read_predictions, read_scene,
                       simulate_predictions, spec_from_dict,
                       write_predictions, write_scene)
from .scoring import build_training_set
from .storages import read_json, write_json
from .version import __version__

__all__ = ('main', 'build_parser')

logger = logging.getLogger(__name__)

T = TypeVar('T')
R = TypeVar('R')

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_INVARIANT = 4


def _map(func: Callable[[T], R], items: Sequence[T], jobs: int) -> List[R]:
    """
    Apply ``func`` to every item, in worker processes when ``jobs > 1``.
    Results keep the item order.
    """
    if jobs <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(func, items))


def _scene_dirs(paths: Iterable[str]) -> List[Path]:
    """
    Scene directories named on the command line; a directory without a
    ``scene.json`` is searched one level deep.
    """
    found: List[Path] = []
    for path in map(Path, paths):
        if (path / 'scene.json').exists():
            found.append(path)
        elif path.is_dir():
            found.extend(sorted(p.parent for p in path.glob('*/scene.json')))
        else:
            raise DataError(f'{path} is not a scene directory')
    if not found:
        raise DataError('No scene directories found')
    return found


def _load_scene_with_maps(directory: Path):
    scene = read_scene(directory)
    maps = read_predictions(directory)
    if maps is None:
        raise DataError(f'{directory} has no prediction maps; run '
                        f'predict-sim first')
    return scene, maps


# Workers get plain tuples so that they pickle for process pools

def _simulate_one(task) -> str:
    spec, config, out = task
    scene = generate_scene(spec, CameraIntrinsics.from_settings(config.render),
                           config.scene, config.render,
                           config.select.epsilon_v_fraction,
                           config.select.voxel_fraction)
    write_scene(Path(out) / scene.scene_id, scene)
    return scene.scene_id


def _predict_one(task) -> str:
    directory, noise, seed = task
    scene = read_scene(directory)
    write_predictions(directory, simulate_predictions(scene, noise,
                                                      seed=seed))
    return scene.scene_id


def _hypgen_one(task) -> str:
    directory, config, seed, out = task
    scene, maps = _load_scene_with_maps(directory)
    hypotheses = generate_hypotheses(
        maps, scene.depth, scene.camera, scene.models, config.hypgen,
        scene.spec.seed if seed is None else seed)
    write_json(Path(out) / f'{scene.scene_id}.json',
               dict(hypotheses.to_dict(), scene_id=scene.scene_id))
    return scene.scene_id


def _training_one(task):
    directory, config, seed = task
    return build_training_set([_load_scene_with_maps(directory)], config,
                              seed)


def _estimate_one(task) -> str:
    directory, config, ensemble, objective, solver, seed, out = task
    scene, maps = _load_scene_with_maps(directory)
    estimator = PoseEstimator(scene.models, config, ensemble, objective,
                              solver)
    write_estimate(out, estimator.estimate_scene(scene, maps, seed))
    return scene.scene_id


def cmd_simulate(args, config: Config) -> int:
    spec_path = Path(args.spec)
    spec = spec_from_dict(read_json(spec_path), spec_path.parent)
    seed = spec.seed if args.seed is None else args.seed
    tasks = [(spec.with_seed(seed + index), config, args.out)
             for index in range(args.count)]
    for scene_id in _map(_simulate_one, tasks, args.jobs):
        logger.info('Wrote scene %s', scene_id)
    return EXIT_OK


def cmd_predict_sim(args, config: Config) -> int:
    noise = NoiseSettings.noiseless() if args.noiseless else config.noise
    tasks = [(d, noise, args.seed) for d in _scene_dirs(args.scenes)]
    for scene_id in _map(_predict_one, tasks, args.jobs):
        logger.info('Simulated predictions of %s', scene_id)
    return EXIT_OK


def cmd_hypgen(args, config: Config) -> int:
    tasks = [(d, config, args.seed, args.out)
             for d in _scene_dirs(args.scenes)]
    for scene_id in _map(_hypgen_one, tasks, args.jobs):
        logger.info('Wrote hypotheses of %s', scene_id)
    return EXIT_OK


def cmd_train(args, config: Config) -> int:
    directories = _scene_dirs(args.scenes)
    held = int(len(directories) * config.gbrt.holdout_fraction)
    per_scene = _map(_training_one,
                     [(d, config, args.seed) for d in directories],
                     args.jobs)

    training = [s for samples in per_scene[:len(per_scene) - held]
                for s in samples]
    holdout = [s for samples in per_scene[len(per_scene) - held:]
               for s in samples] if held else []
    if not training:
        raise DataError('The scenes produced no training samples')

    ensemble = train_gbrt(training, config.gbrt, holdout)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ensemble.save(out)
    log_path = Path(args.log) if args.log \
        else out.with_name(out.stem + '.log.csv')
    write_training_log(log_path, ensemble)
    logger.info('Wrote %s and %s', out, log_path)
    return EXIT_OK


def cmd_estimate(args, config: Config) -> int:
    ensemble = None
    if args.objective == 'learned':
        if not args.ensemble:
            raise DataError('The learned objective needs --ensemble')
        ensemble = TreeEnsemble.load(args.ensemble)

    Path(args.out).mkdir(parents=True, exist_ok=True)
    solver = args.solver or config.select.solver
    tasks = [(d, config, ensemble, args.objective, solver, args.seed,
              args.out) for d in _scene_dirs(args.scenes)]
    for scene_id in _map(_estimate_one, tasks, args.jobs):
        logger.info('Wrote estimate of %s', scene_id)
    return EXIT_OK


def cmd_evaluate(args, config: Config) -> int:
    k_l = config.evaluate.k_l if args.k_l is None else args.k_l
    assignment = args.assignment or config.evaluate.assignment
    scenes = {}
    for directory in _scene_dirs([args.scenes]):
        scene = read_scene(directory)
        scenes[scene.scene_id] = scene

    reports = []
    for path in sorted(Path(args.estimates).glob('*.json')):
        scene_id, poses = read_estimate(path)
        if scene_id not in scenes:
            raise SceneMismatchError(f'No scene {scene_id!r} for estimate '
                                     f'{path}')
        reports.append(match_and_recall(poses, scenes[scene_id], k_l,
                                        assignment))
    if not reports:
        raise DataError(f'No estimates found in {args.estimates}')

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_recall_csv(out / 'recall.csv', reports)
    summary = summarize(reports)
    summary.update(k_l=k_l, assignment=assignment)
    write_json(out / 'summary.json', summary)
    logger.info('Recall %.4f over %d instances in %d scenes',
                summary['recall'], summary['num_gt'], len(reports))
    return EXIT_OK


def cmd_report(args, config: Config) -> int:
    summaries = {}
    for path in map(Path, args.summaries):
        name = path.parent.name if path.name == 'summary.json' \
            else path.stem
        if name in summaries:
            raise DataError(f'Two summaries are named {name!r}')
        summaries[name] = read_json(path)

    rows = compare_summaries(summaries)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_comparison_csv(out / 'comparison.csv', rows)
    write_json(out / 'comparison.json', {'runs': rows})
    return EXIT_OK


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', default=None,
                        help='TOML config file (default: $TINYPOSE_CONFIG)')
    common.add_argument('--jobs', type=int, default=1,
                        help='parallel scene workers')
    common.add_argument('--seed', type=int, default=None,
                        help='override the seed of every scene')
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument('-v', '--verbose', action='store_true')
    verbosity.add_argument('-q', '--quiet', action='store_true')
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(
        prog='tinypose',
        description='Multi-instance 6D pose estimation on depth images.')
    parser.add_argument('--version', action='version',
                        version=f'%(prog)s {__version__}')
    commands = parser.add_subparsers(dest='command', metavar='command')
    commands.required = True

    simulate = commands.add_parser('simulate', parents=[common],
                                   help='write synthetic scenes')
    simulate.add_argument('spec', help='scene spec JSON file')
    simulate.add_argument('--out', required=True,
                          help='directory receiving the scenes')
    simulate.add_argument('--count', type=int, default=1)
    simulate.set_defaults(handler=cmd_simulate)

    predict = commands.add_parser('predict-sim', parents=[common],
                                  help='simulate prediction maps')
    predict.add_argument('scenes', nargs='+')
    predict.add_argument('--noiseless', action='store_true',
                         help='perfect maps instead of the configured noise')
    predict.set_defaults(handler=cmd_predict_sim)

    hypgen = commands.add_parser('hypgen', parents=[common],
                                 help='write pose hypotheses')
    hypgen.add_argument('scenes', nargs='+')
    hypgen.add_argument('--out', required=True)
    hypgen.set_defaults(handler=cmd_hypgen)

    train = commands.add_parser('train', parents=[common],
                                help='train the quality regressor')
    train.add_argument('scenes', nargs='+')
    train.add_argument('--out', required=True, help='ensemble JSON file')
    train.add_argument('--log', default=None,
                       help='training log CSV (default: next to --out)')
    train.set_defaults(handler=cmd_train)

    estimate = commands.add_parser('estimate', parents=[common],
                                   help='estimate poses')
    estimate.add_argument('scenes', nargs='+')
    estimate.add_argument('--ensemble', default=None)
    estimate.add_argument('--solver', choices=('exact', 'greedy'),
                          default=None)
    estimate.add_argument('--objective', choices=OBJECTIVES,
                          default='learned')
    estimate.add_argument('--out', required=True)
    estimate.set_defaults(handler=cmd_estimate)

    evaluate = commands.add_parser('evaluate', parents=[common],
                                   help='recall against ground truth')
    evaluate.add_argument('estimates', help='directory of estimate reports')
    evaluate.add_argument('scenes', help='directory of scene directories')
    evaluate.add_argument('--k-l', dest='k_l', type=float, default=None)
    evaluate.add_argument('--assignment', choices=('greedy', 'hungarian'),
                          default=None)
    evaluate.add_argument('--out', required=True)
    evaluate.set_defaults(handler=cmd_evaluate)

    report = commands.add_parser('report', parents=[common],
                                 help='compare evaluation summaries')
    report.add_argument('summaries', nargs='+')
    report.add_argument('--out', required=True)
    report.set_defaults(handler=cmd_report)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK

    level = logging.DEBUG if args.verbose else \
        logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level,
                        format='%(levelname)s: %(name)s: %(message)s')

    try:
        if args.jobs < 1:
            raise DataError('--jobs must be at least 1')
        config = load_config(args.config or default_config_path())
        return args.handler(args, config)
    except InvariantViolation as exc:
        logger.error('Internal invariant violated: %s', exc)
        return EXIT_INVARIANT
    except (DataError, OSError) as exc:
        logger.error('%s', exc)
        return EXIT_DATA


if __name__ == '__main__':
    sys.exit(main())
