"""
Command-line interface for dcmr
"""

import sys
import argparse
import json
from dataclasses import fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from . import __version__
from .ablation import directions_of, preset_config, run_seeds
from .archive import read_archive
from .checkpoint import load_checkpoint, save_checkpoint
from .config import (
    Config, DcmConfig, EvalConfig, LossConfig, RunConfig, SynthConfig, TrainConfig, default_values,
)
from .dataset import load_manifest
from .evaluate import evaluate_directions, retrieve_top_k
from .exceptions import ConfigError, DatasetError, DcmrException, UsageError
from .logger import get_logger
from .models import TextEmbedding
from .synth import synth_generate, write_dataset
from .trainer import init_training_params, train_run
from .translate import TranslationCache, augment_dataset, make_translator

CHECKPOINT_FILE = "checkpoint.dcmc"
LOG_FILE = "train_log.jsonl"


def _keys(*sections) -> List[str]:
    return [f.name for section in sections for f in fields(section)]


# Flags each subcommand accepts beyond --config, --seed and --out.
COMMAND_KEYS: Dict[str, List[str]] = {
    "synth": _keys(SynthConfig),
    "translate": ["manifest", "translate_languages", "backend", "cache_dir", "workers"],
    "train": ["manifest", "resume"] + _keys(DcmConfig, LossConfig, TrainConfig),
    "eval": ["manifest", "checkpoint"] + _keys(DcmConfig, LossConfig)
            + ["split", "language", "direction", "block_size", "workers"],
    "retrieve": ["manifest", "checkpoint", "queries"] + _keys(DcmConfig, LossConfig, EvalConfig),
    "ablate": ["manifest", "preset", "seeds"] + _keys(DcmConfig, LossConfig, TrainConfig, EvalConfig),
}

COMMAND_HELP = {
    "synth": "Generate a synthetic embedding dataset",
    "translate": "Add machine-translated captions to a dataset",
    "train": "Train both branches and write a checkpoint",
    "eval": "Report retrieval metrics as JSON",
    "retrieve": "Rank videos for query embeddings",
    "ablate": "Train and evaluate an ablation preset over several seeds",
}


class ArgumentParser(argparse.ArgumentParser):
    """argparse that raises instead of exiting on bad usage"""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _emit(data: Dict[str, Any]) -> None:
    print(json.dumps(data))


def _require_file(run: RunConfig, key: str) -> Path:
    value = run.get(key)
    if not value:
        raise ConfigError(f"--{key.replace('_', '-')} is required")
    path = Path(value)
    if not path.is_file():
        raise ConfigError(f"{key} not found: {path}")
    return path


def _require_out(run: RunConfig) -> Path:
    if not run.get("out"):
        raise ConfigError("--out is required")
    return Path(run["out"])


class CLI:
    """Command-line interface handler"""

    def run(self, args: Optional[Sequence[str]] = None) -> int:
        """Run CLI with arguments; 0 on success, 1 on usage or config errors, 2 otherwise"""
        parser = self._create_parser()

        if args is None:
            args = sys.argv[1:]

        if not args:
            parser.print_help(sys.stderr)
            return 1

        try:
            parsed_args = parser.parse_args(list(args))
            run = self._load_config(parsed_args)
            logger = get_logger()
            logger.info("dcmr %s: start", parsed_args.command)
            code = parsed_args.func(run)
            logger.info("dcmr %s: done", parsed_args.command)
            return code
        except SystemExit as e:
            # --help and --version
            return e.code if isinstance(e.code, int) else 0
        except (UsageError, ConfigError) as e:
            print(f"Error: {e}", file=sys.stderr)
            return 1
        except DcmrException as e:
            print(f"Error: {e}", file=sys.stderr)
            return 2
        except KeyboardInterrupt:
            print("\nAborted", file=sys.stderr)
            return 130

    def _create_parser(self) -> argparse.ArgumentParser:
        """Create argument parser"""
        parser = ArgumentParser(
            prog='dcmr',
            description='Dual cross-modal text-to-video retrieval',
        )

        parser.add_argument('--version', action='version', version=f'dcmr v{__version__}')

        subparsers = parser.add_subparsers(dest='command', parser_class=ArgumentParser,
                                           required=True, metavar='COMMAND')
        defaults = default_values()
        handlers = {
            "synth": self.cmd_synth,
            "translate": self.cmd_translate,
            "train": self.cmd_train,
            "eval": self.cmd_eval,
            "retrieve": self.cmd_retrieve,
            "ablate": self.cmd_ablate,
        }
        for command, handler in handlers.items():
            sub = subparsers.add_parser(command, help=COMMAND_HELP[command],
                                        description=COMMAND_HELP[command])
            sub.add_argument('--config', metavar='FILE', help='JSON file of settings')
            sub.add_argument('--seed', help='Random seed')
            sub.add_argument('--out', metavar='DIR', help='Output directory')
            for key in COMMAND_KEYS[command]:
                if key == "seed":
                    continue
                self._add_key_flag(sub, key, defaults[key])
            sub.set_defaults(func=handler)

        return parser

    @staticmethod
    def _add_key_flag(parser: argparse.ArgumentParser, key: str, default: Any) -> None:
        flag = '--' + key.replace('_', '-')
        if isinstance(default, bool):
            parser.add_argument(flag, dest=key, nargs='?', const='true', metavar='BOOL',
                                help=f'(default: {str(default).lower()})')
        elif isinstance(default, list):
            parser.add_argument(flag, dest=key, metavar='A,B',
                                help=f'(default: {",".join(map(str, default))})')
        elif default is None:
            parser.add_argument(flag, dest=key, metavar='PATH')
        else:
            parser.add_argument(flag, dest=key, help=f'(default: {default})')

    @staticmethod
    def _load_config(parsed_args: argparse.Namespace) -> RunConfig:
        known = default_values()
        overrides = {key: value for key, value in vars(parsed_args).items()
                     if key in known and key != "config" and value is not None}
        return RunConfig.load(parsed_args.config, overrides=overrides)

    def _params(self, run: RunConfig):
        """Checkpoint parameters and loss settings, or seeded fresh ones"""
        if run.get("checkpoint"):
            checkpoint = load_checkpoint(_require_file(run, "checkpoint"))
            return checkpoint.params, checkpoint.loss
        return init_training_params(run.dcm, run.loss, run.train.seed), run.loss

    def cmd_synth(self, run: RunConfig) -> int:
        """Handle synth command"""
        out = _require_out(run)
        dataset = synth_generate(run.synth)
        manifest_path = write_dataset(dataset, out)
        splits = {split: len(dataset.items(split)) for split in ("train", "val", "test")}
        _emit({"manifest": str(manifest_path), "items": len(dataset.manifest.items),
               "splits": splits, "seed": run.synth.seed, "config_hash": run.config_hash})
        return 0

    def cmd_translate(self, run: RunConfig) -> int:
        """Handle translate command"""
        manifest = _require_file(run, "manifest")
        languages = run["translate_languages"]
        cache = TranslationCache(run.get("cache_dir") or Config.get_cache_dir())
        translator = make_translator(run["backend"], run.eval.workers)
        out_path = augment_dataset(manifest, languages, translator, cache=cache, out_dir=run.get("out"))
        _emit({"manifest": str(out_path), "languages": list(languages), "backend": run["backend"]})
        return 0

    def cmd_train(self, run: RunConfig) -> int:
        """Handle train command"""
        dataset = load_manifest(_require_file(run, "manifest"))
        out = _require_out(run)
        resume = load_checkpoint(_require_file(run, "resume")) if run.get("resume") else None
        checkpoint_path = out / CHECKPOINT_FILE
        log_path = out / LOG_FILE
        if resume is None and log_path.exists():
            log_path.unlink()

        checkpoint, records = train_run(dataset, run.dcm, run.train, loss=run.loss, resume=resume,
                                        checkpoint_path=checkpoint_path, log_path=log_path)
        if not records:
            save_checkpoint(checkpoint, checkpoint_path)
        _emit({
            "checkpoint": str(checkpoint_path),
            "log": str(log_path),
            "epoch": checkpoint.epoch,
            "step": checkpoint.step,
            "final_loss": records[-1].mean_loss if records else None,
            "seed": run.train.seed,
            "config_hash": run.config_hash,
        })
        return 0

    def cmd_eval(self, run: RunConfig) -> int:
        """Handle eval command"""
        dataset = load_manifest(_require_file(run, "manifest"))
        params, loss = self._params(run)
        settings = run.eval
        reports = evaluate_directions(
            dataset, settings.split, params, language=settings.language,
            directions=directions_of(settings.direction), normalize=loss.normalize,
            temperature=loss.temperature, block_size=settings.block_size,
            workers=settings.workers, seed=run.train.seed, config_hash=run.config_hash,
        )
        for report in reports:
            print(report.to_json())
        return 0

    def cmd_retrieve(self, run: RunConfig) -> int:
        """Handle retrieve command"""
        dataset = load_manifest(_require_file(run, "manifest"))
        archive = read_archive(_require_file(run, "queries"))
        params, loss = self._params(run)
        settings = run.eval

        queries = []
        for query_id, vectors in archive.records:
            if vectors.shape[0] != 1:
                raise DatasetError("queries must hold exactly one vector each", [query_id])
            queries.append(TextEmbedding(query_id, settings.language, vectors[0]))
        if not queries:
            raise DatasetError("query file is empty")

        results = retrieve_top_k(queries, dataset, settings.split, params, k=settings.top_k,
                                 normalize=loss.normalize, temperature=loss.temperature,
                                 block_size=settings.block_size, workers=settings.workers)
        for query, ranked in zip(queries, results):
            _emit({
                "query_id": query.caption_id,
                "language": query.language,
                "results": [{"video_id": vid, "score": score} for vid, score in ranked],
            })
        return 0

    def cmd_ablate(self, run: RunConfig) -> int:
        """Handle ablate command"""
        dataset = load_manifest(_require_file(run, "manifest"))
        configured = preset_config(run, run["preset"])
        _emit(run_seeds(dataset, configured, configured["seeds"]))
        return 0


def main():
    """Main entry point"""
    cli = CLI()
    sys.exit(cli.run())


if __name__ == '__main__':
    main()
