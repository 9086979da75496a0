"""The six CLI commands as plain functions returning their artifacts.

Each command takes a PipelineConfig (plus positional inputs where the
CLI has them) and leaves files under the configured output directory;
the CLI layer only parses flags and maps exceptions to exit codes, so
everything here is directly scriptable from Python as well.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import fields
from pathlib import Path

import numpy as np

from stepsmith.audiofeat import NormalizationStats, apply_normalization
from stepsmith.beatgrid import beat_frames
from stepsmith.errors import DataError
from stepsmith.evalmetrics import (
    PlacementEval,
    SelectionEval,
    difficulty_report,
    evaluate_placement,
    selection_scores,
)
from stepsmith.models import (
    PlacementModel,
    SamplingConfig,
    SelectionModel,
    generate_steps,
    load_checkpoint,
    placement_forward,
    predict_placements,
    selection_forward,
    train_placement,
    train_selection,
)
from stepsmith.pipeline.cache import featurize_many, featurize_wav, load_entry
from stepsmith.pipeline.config import (
    PipelineConfig,
    checkpoint_path,
    placement_model_config,
    selection_model_config,
    train_run_config,
)
from stepsmith.pipeline.dataset import (
    beats_in_song,
    build_split_examples,
    chart_examples,
    discover_songs,
    song_tempo,
)
from stepsmith.pipeline.difficulty import default_difficulty, plan_difficulties
from stepsmith.simfile import Chart, Simfile, parse_simfile, write_simfile
from stepsmith.tempo import estimate_tempo, onset_envelope


def cmd_featurize(cfg: PipelineConfig) -> list:
    """Fill the feature cache for every song in the dataset."""
    entries = discover_songs(cfg.dataset_dir)
    paths = featurize_many([e.wav_path for e in entries], cfg.cache_dir,
                           workers=cfg.workers)
    for entry, path in zip(entries, paths):
        print(f"{entry.song_id}: {Path(path).name}")
    return paths


def cmd_train_placement(cfg: PipelineConfig):
    data = build_split_examples(cfg)
    dataset = {"train": data.placement["train"], "valid": data.placement["valid"],
               "norm": data.norm}
    Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
    model = PlacementModel(placement_model_config(cfg), seed=cfg.seed)
    report = train_placement(model, dataset, train_run_config(cfg, "placement"))
    print(f"placement: {report.epochs_run} epochs, "
          f"best valid pr-auc {report.best_value:.4f}")
    return report


def cmd_train_selection(cfg: PipelineConfig):
    data = build_split_examples(cfg)
    dataset = {"train": data.selection["train"], "valid": data.selection["valid"],
               "norm": data.norm}
    Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
    model = SelectionModel(selection_model_config(cfg), seed=cfg.seed)
    report = train_selection(model, dataset, train_run_config(cfg, "selection"))
    print(f"selection: {report.epochs_run} epochs, "
          f"best valid loss {report.best_value:.4f}")
    return report


def _load_models(cfg: PipelineConfig) -> tuple:
    placement = PlacementModel(placement_model_config(cfg), seed=cfg.seed)
    p_extra = load_checkpoint(checkpoint_path(cfg, "placement"), placement)
    selection = SelectionModel(selection_model_config(cfg), seed=cfg.seed)
    load_checkpoint(checkpoint_path(cfg, "selection"), selection)
    norm = NormalizationStats(mean=p_extra["norm/mean"].astype(np.float64),
                              std=p_extra["norm/std"].astype(np.float64))
    return placement, selection, norm


def _write_rows(path: Path, header: list, rows: list) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def cmd_evaluate(cfg: PipelineConfig) -> dict:
    """Score both models on the test split; returns the CSV paths."""
    placement_model, selection_model, _ = _load_models(cfg)
    data = build_split_examples(cfg, augment_selection=False)
    test_ids = set(data.songs["test"])
    if not test_ids:
        raise DataError("evaluation needs a nonempty test split")

    entries = [e for e in discover_songs(cfg.dataset_dir) if e.song_id in test_ids]
    cache_paths = featurize_many([e.wav_path for e in entries], cfg.cache_dir,
                                 workers=cfg.workers)
    p_rows, s_rows = [], []
    p_evals, s_evals, charts_by_id = {}, {}, {}
    for entry, cache_file in zip(entries, cache_paths):
        sim = parse_simfile(entry.sm_path.read_text(encoding="utf-8"))
        cachedf = load_entry(cache_file)
        tempo = song_tempo(sim)
        spec = apply_normalization(cachedf.spec, data.norm)
        n_beats = beats_in_song(spec, tempo, cachedf.duration_s)
        for chart in sim.charts:
            if not chart.rows:
                continue
            chart_id = f"{entry.song_id}/{chart.coarse_difficulty}"
            p_ex, s_ex = chart_examples(chart, spec, tempo, n_beats,
                                        cfg.context_beats)
            probs = np.stack([placement_forward(placement_model, ex) for ex in p_ex])
            targets = np.stack([ex.target.slots for ex in p_ex])
            p_eval = evaluate_placement(probs.ravel(), targets.ravel())
            p_evals[chart_id], charts_by_id[chart_id] = p_eval, chart
            p_rows.append([entry.song_id, chart.coarse_difficulty,
                           chart.fine_difficulty]
                          + [getattr(p_eval, f.name) for f in fields(PlacementEval)])
            if s_ex:
                dists = [selection_forward(selection_model, ex) for ex in s_ex]
                s_eval = selection_scores([int(np.argmax(d)) for d in dists],
                                          [ex.target for ex in s_ex], probs=dists)
                s_evals[chart_id] = s_eval
                s_rows.append([entry.song_id, chart.coarse_difficulty,
                               chart.fine_difficulty]
                              + [getattr(s_eval, f.name) for f in fields(SelectionEval)])

    out = Path(cfg.out_dir)
    written = {
        "placement": _write_rows(
            out / "placement_metrics.csv",
            ["song", "coarse", "fine"] + [f.name for f in fields(PlacementEval)],
            p_rows),
        "selection": _write_rows(
            out / "selection_metrics.csv",
            ["song", "coarse", "fine"] + [f.name for f in fields(SelectionEval)],
            s_rows),
        "placement_by_difficulty": _write_rows(
            out / "placement_by_difficulty.csv", ["metric", "difficulty", "mean"],
            difficulty_report(p_evals, charts_by_id, "coarse")),
        "selection_by_difficulty": _write_rows(
            out / "selection_by_difficulty.csv", ["metric", "difficulty", "mean"],
            difficulty_report(s_evals, charts_by_id, "coarse")),
    }
    for name, path in written.items():
        print(f"{name}: {path}")
    return written


def cmd_generate(cfg: PipelineConfig, audio_path) -> Path:
    """Full pipeline on one WAV: tempo, features, 5 charts, one simfile."""
    audio_path = Path(audio_path)
    placement_model, selection_model, norm = _load_models(cfg)

    cached = load_entry(featurize_wav(audio_path, cfg.cache_dir))
    tempo = estimate_tempo(onset_envelope(cached.spec), cached.spec.hop_s)
    spec = apply_normalization(cached.spec, norm)

    anchor = cfg.difficulty or default_difficulty(tempo.bpm,
                                                  cached.duration_s / 60.0)
    plan = plan_difficulties(anchor, cfg.difficulty_overrides or None)
    n_beats = beats_in_song(spec, tempo, cached.duration_s)

    charts = []
    for coarse, fine in plan.entries:
        frames = beat_frames(spec, tempo, n_beats, fine)
        placements = predict_placements(placement_model, frames, tempo.bpm, fine,
                                        threshold=cfg.threshold)
        if not placements:
            warnings.warn(f"no placements above threshold for {coarse}; "
                          "emitting an empty chart")
            charts.append(Chart(coarse, fine, ()))
            continue
        rows = generate_steps(selection_model, placements, spec, tempo,
                              SamplingConfig(temperature=cfg.temperature,
                                             seed=cfg.seed))
        charts.append(Chart(coarse, fine, tuple(rows)))

    sim = Simfile(
        title=audio_path.stem,
        music_path=audio_path.name,
        offset_s=tempo.offset_s,
        bpm_segments=((0.0, tempo.bpm),),
        stop_segments=(),
        charts=tuple(charts),
    )
    out = Path(cfg.out_dir) / f"{audio_path.stem}.sm"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(write_simfile(sim), encoding="utf-8")
    print(f"{out}: bpm {tempo.bpm:.2f}, difficulties "
          + ",".join(str(fine) for _, fine in plan.entries))
    return out


def cmd_tempo(cfg: PipelineConfig, audio_path):
    """Print `bpm offset confidence` for one WAV."""
    cached = load_entry(featurize_wav(audio_path, cfg.cache_dir))
    tempo = estimate_tempo(onset_envelope(cached.spec), cached.spec.hop_s)
    print(f"{tempo.bpm:.2f} {tempo.offset_s:.3f} {tempo.confidence:.3f}")
    return tempo
