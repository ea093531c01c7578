# app.py
"""
Command-line entry point for SpikeTrace
Subcommands: synth, train, eval, analyze, gatemap, energy
"""
import argparse
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

import config
from utils.analytics_utils import GateMapAnalyzer, generate_metric_report
from utils.demo_utils import make_dataset
from utils.energy_utils import OpCounter, energy_report, model_energy_report
from utils.event_utils import Clip, EmbeddingSequence, EventConfig, EventEncoder
from utils.export_utils import ReportGenerator, TensorFileIO, generate_report_filename
from utils.gate_utils import GateNetConfig
from utils.logging_utils import get_logger, setup_logging
from utils.training_utils import ClipDataset, TrainConfig, Trainer, build_model, evaluate, load_model
from utils.validation_utils import ConfigValidator, DataFormatError, NumericError, SpikeTraceError, ValidationError

logger = get_logger('app')


class UsageError(SpikeTraceError):
    """Bad command-line arguments"""
    kind = 'usage'


class CliParser(argparse.ArgumentParser):
    """Argument parser that raises instead of exiting"""

    def error(self, message):
        raise UsageError(message)


def exit_code_for(error: Exception) -> int:
    if isinstance(error, UsageError):
        return config.EXIT_CODES['usage']
    if isinstance(error, NumericError):
        return config.EXIT_CODES['numeric']
    return config.EXIT_CODES['data']


def report_error(error: Exception) -> int:
    """Write the machine-readable error line to stderr and return the exit code"""
    code = exit_code_for(error)
    kind = getattr(error, 'kind', 'io')
    print(json.dumps({'error': kind, 'exit_code': code, 'message': str(error)}, sort_keys=True), file=sys.stderr)
    return code


def load_run_config(path: Optional[str]) -> Dict:
    """Read a JSON run config; missing sections fall back to defaults"""
    if not path:
        return {}
    try:
        run_config = json.loads(Path(path).read_text())
    except OSError as e:
        raise DataFormatError(f"cannot read config {path}: {e}")
    except json.JSONDecodeError as e:
        raise DataFormatError(f"config {path} is not valid JSON: {e}")
    ConfigValidator.validate_run_config(run_config)
    return run_config


def parse_metrics(text: str) -> List[str]:
    metrics = [m.strip() for m in text.split(',') if m.strip()]
    unknown = sorted(set(metrics) - set(config.METRIC_SETTINGS['available_metrics']))
    if unknown:
        raise UsageError(f"unknown metrics: {', '.join(unknown)}")
    return metrics


def cmd_synth(args) -> int:
    entries = make_dataset(args.clips, args.out, base_seed=args.seed, with_embeddings=not args.no_embeddings,
                           frames=args.frames, size=args.size)
    print(f"wrote {len(entries)} clips to {args.out}")
    return config.EXIT_CODES['ok']


def cmd_train(args) -> int:
    run_config = load_run_config(args.config)
    event_config = EventConfig.from_dict(run_config.get('event', {}))
    model_values = dict(run_config.get('model', {}))
    if args.sdtb_only:
        model_values['sdtb_only'] = True
    if args.fixed_lif:
        model_values['learnable_lif'] = False
    gate_config = GateNetConfig.from_dict(model_values)
    train_values = dict(run_config.get('train', {}))
    if args.seed is not None:
        train_values['seed'] = args.seed
    if args.epochs is not None:
        train_values['epochs'] = args.epochs
    train_config = TrainConfig.from_dict(train_values)

    dataset = ClipDataset.from_directory(args.data, event_config)
    model = build_model(dataset, gate_config, event_config, seed=train_config.seed)
    checkpoint = Path(args.out)
    log_path = Path(args.log) if args.log else checkpoint.with_suffix('.csv')
    Trainer(model, train_config).fit(dataset, checkpoint_path=checkpoint, log_path=log_path)
    print(f"checkpoint {checkpoint}, epoch log {log_path}")
    return config.EXIT_CODES['ok']


def cmd_eval(args) -> int:
    model, _ = load_model(args.ckpt)
    dataset = ClipDataset.from_directory(args.data, model.event_config)
    scores, summary = evaluate(model, dataset)
    out = Path(args.out) if args.out else Path(args.data) / generate_report_filename('scores', 'csv')
    ReportGenerator.generate_csv_export(scores, out)
    summary['scores_csv'] = str(out)
    print(json.dumps(summary, sort_keys=True))
    return config.EXIT_CODES['ok']


def cmd_analyze(args) -> int:
    metrics = parse_metrics(args.metrics)
    dataset = ClipDataset.from_directory(args.data)
    report = generate_metric_report(dataset.clips, dataset.embeddings, metrics, dataset.names,
                                    tau_anom=args.tau_anom)
    out = Path(args.out) if args.out else Path(args.data) / generate_report_filename('metrics', 'csv')
    ReportGenerator.generate_csv_export(report, out)
    print(f"metrics for {len(dataset)} clips written to {out}")
    return config.EXIT_CODES['ok']


def cmd_gatemap(args) -> int:
    model, _ = load_model(args.ckpt)
    frames = TensorFileIO.read(args.clip)
    clip = Clip(np.clip(frames, 0.0, 1.0))
    emb = EmbeddingSequence.from_array(TensorFileIO.read(args.embedding)) if args.embedding else None
    if model.config.channels > len(config.EVENT_SETTINGS['channels_pixel']) and emb is None:
        raise ValidationError("this checkpoint was trained with embeddings; pass --embedding")
    pooled, _ = EventEncoder(model.event_config).pooled_channels(clip, emb)
    video = emb.video_vector()[None] if (emb is not None and model.video_dim) else None
    result = model(pooled[None], video)
    gate_maps = result.gate.gate_maps.data[0]

    out_dir = Path(args.out)
    stem = Path(args.clip).stem
    paths = ReportGenerator.write_gatemaps(gate_maps, out_dir, stem)

    bf, inf, per_frame = GateMapAnalyzer.boundary_interior_fire(gate_maps)
    overlap = GateMapAnalyzer.clip_edge_overlap(clip, gate_maps, model.config.grid)
    rows = [{'frame': t, 'BF': per_frame[t, 0], 'IF': per_frame[t, 1], **overlap[t - 1]}
            for t in range(1, len(gate_maps))]
    rows.append({'frame': 'clip', 'BF': bf, 'IF': inf,
                 **pd.DataFrame(overlap).mean().to_dict()})
    ReportGenerator.generate_csv_export(rows, out_dir / f'{stem}_fire.csv')
    print(f"wrote {len(paths)} gate maps to {out_dir}")
    return config.EXIT_CODES['ok']


def cmd_energy(args) -> int:
    if args.full_scale:
        cfg = GateNetConfig.full_scale(channels=config.ENERGY_SETTINGS['channels'],
                                        frames=config.ENERGY_SETTINGS['frames'])
        snn, ann = OpCounter.count_dense_ops(cfg, 'snn'), OpCounter.count_dense_ops(cfg, 'ann')
        report = energy_report(OpCounter.total(snn), args.rate, OpCounter.total(ann), snn, ann)
    else:
        if not args.ckpt or not args.data:
            raise UsageError("energy needs --ckpt and --data unless --full-scale is given")
        model, _ = load_model(args.ckpt)
        report = model_energy_report(model, ClipDataset.from_directory(args.data, model.event_config))
    text = ReportGenerator.generate_json_report(report.to_dict(), args.out)
    if args.stages:
        ReportGenerator.generate_csv_export(report.stage_table(), args.stages)
    print(text, end='')
    return config.EXIT_CODES['ok']


def build_parser() -> CliParser:
    parser = CliParser(prog='spiketrace', description=config.APP_DESCRIPTION)
    parser.add_argument('--log-level', default=None, help='override the configured log level')
    sub = parser.add_subparsers(dest='command', parser_class=CliParser)

    p = sub.add_parser('synth', help='write a synthetic dataset')
    p.add_argument('--out', required=True)
    p.add_argument('--clips', type=int, default=config.SYNTH_SETTINGS['clips_per_class'],
                   help='clips per class; the dataset holds 2 x N clips')
    p.add_argument('--frames', type=int, default=config.SYNTH_SETTINGS['frames'])
    p.add_argument('--size', type=int, default=config.SYNTH_SETTINGS['size'])
    p.add_argument('--seed', type=int, default=config.SYNTH_SETTINGS['seed'])
    p.add_argument('--no-embeddings', action='store_true')
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser('train', help='train the gate network')
    p.add_argument('--data', required=True)
    p.add_argument('--config', default=None)
    p.add_argument('--epochs', type=int, default=None)
    p.add_argument('--seed', type=int, default=None)
    p.add_argument('--out', required=True, help='checkpoint path')
    p.add_argument('--log', default=None, help='epoch CSV path')
    p.add_argument('--sdtb-only', action='store_true', help='ignore the video embedding in the main head')
    p.add_argument('--fixed-lif', action='store_true', help='freeze tau and V_th at their initial values')
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser('eval', help='score a dataset with a checkpoint')
    p.add_argument('--data', required=True)
    p.add_argument('--ckpt', required=True)
    p.add_argument('--out', default=None)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser('analyze', help='compute temporal statistics per clip')
    p.add_argument('--data', required=True)
    p.add_argument('--metrics', default=','.join(config.METRIC_SETTINGS['default_metrics']))
    p.add_argument('--tau-anom', type=float, default=config.METRIC_SETTINGS['tau_anom'])
    p.add_argument('--out', default=None)
    p.set_defaults(handler=cmd_analyze)

    p = sub.add_parser('gatemap', help='export per-frame gate maps')
    p.add_argument('--clip', required=True)
    p.add_argument('--embedding', default=None)
    p.add_argument('--ckpt', required=True)
    p.add_argument('--out', required=True)
    p.set_defaults(handler=cmd_gatemap)

    p = sub.add_parser('energy', help='operation counts and energy per clip')
    p.add_argument('--ckpt', default=None)
    p.add_argument('--data', default=None)
    p.add_argument('--out', default=None)
    p.add_argument('--stages', default=None, help='per-stage CSV path')
    p.add_argument('--full-scale', action='store_true')
    p.add_argument('--rate', type=float, default=0.124, help='firing rate used with --full-scale')
    p.set_defaults(handler=cmd_energy)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if not getattr(args, 'handler', None):
            raise UsageError("a subcommand is required")
        setup_logging(args.log_level)
        return args.handler(args)
    except (SpikeTraceError, OSError) as e:
        return report_error(e)


if __name__ == "__main__":
    sys.exit(main())
