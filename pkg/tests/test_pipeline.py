import math
import os
from pathlib import Path

import numpy as np
import pytest

from stepsmith.errors import DataError, UsageError
from stepsmith.pipeline import (
    PipelineConfig,
    build_split_examples,
    cmd_evaluate,
    cmd_generate,
    cmd_tempo,
    cmd_train_placement,
    cmd_train_selection,
    default_difficulty,
    discover_songs,
    featurize_wav,
    load_config,
    load_entry,
    plan_difficulties,
)
from stepsmith.pipeline.cli import main
from stepsmith.pipeline.config import (
    checkpoint_path,
    placement_model_config,
    selection_model_config,
)
from stepsmith.simfile import Chart, Simfile, parse_simfile, write_simfile
from tests.helpers import click_track, random_grid_chart, write_wav_pcm16

BPM = 120.0
OFFSET = 0.25
SONG_SECONDS = 8.0


def make_song(song_dir: Path, seed: int, n_charts: int = 2) -> None:
    song_dir.mkdir(parents=True)
    rng = np.random.default_rng(seed)
    write_wav_pcm16(song_dir / "song.wav",
                    click_track(BPM, OFFSET, SONG_SECONDS, seed=seed))
    charts = []
    for k in range(n_charts):
        chart = random_grid_chart(rng, max_measures=2)
        while not chart.rows:
            chart = random_grid_chart(rng, max_measures=2)
        charts.append(Chart(("Hard", "Medium", "Easy")[k % 3],
                            chart.fine_difficulty, chart.rows))
    sim = Simfile(title=song_dir.name, music_path="song.wav", offset_s=OFFSET,
                  bpm_segments=((0.0, BPM),), stop_segments=(),
                  charts=tuple(charts))
    (song_dir / f"{song_dir.name}.sm").write_text(write_simfile(sim),
                                                  encoding="utf-8")


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("dataset")
    for i in range(3):
        make_song(root / f"song{i}", seed=100 + i)
    return root


def toy_config(dataset_dir, work: Path, **extra) -> PipelineConfig:
    base = dict(
        dataset_dir=str(dataset_dir),
        cache_dir=str(work / "cache"),
        out_dir=str(work / "out"),
        context_beats=2,
        placement_conv_units=(1, 2),
        placement_lstm_units=8,
        placement_head_units=(16, 8),
        selection_conv_units=(1, 2),
        selection_lstm_units=8,
        selection_head_units=(16, 8),
        lstm_dropout=0.0,
        head_dropout=0.0,
        batch_size=4,
        selection_batch_size=4,
        batches_per_epoch=4,
        max_epochs=2,
        temperature=0.0,
    )
    base.update(extra)
    return PipelineConfig(**base)


class TestConfig:
    def test_defaults(self):
        assert load_config() == PipelineConfig()

    def test_file_parsing_and_precedence(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text(
            "# a comment\n"
            "seed = 7\n"
            "threshold = 0.25   # trailing comment\n"
            "placement_conv_units = 4, 8\n"
            "\n"
            "out_dir = from_file\n"
        )
        cfg = load_config(str(cfg_file), {"out_dir": "from_flag"})
        assert cfg.seed == 7
        assert cfg.threshold == 0.25
        assert cfg.placement_conv_units == (4, 8)
        assert cfg.out_dir == "from_flag"  # flag beats file
        assert cfg.temperature == 1.0  # untouched default

    def test_unknown_key_rejected(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("thresold = 0.5\n")
        with pytest.raises(UsageError, match="thresold"):
            load_config(str(cfg_file))

    def test_unparseable_value_rejected(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("seed = seven\n")
        with pytest.raises(UsageError, match="seed"):
            load_config(str(cfg_file))

    def test_missing_equals_rejected(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("just some words\n")
        with pytest.raises(UsageError, match="key = value"):
            load_config(str(cfg_file))

    @pytest.mark.parametrize("overrides", [
        {"threshold": 1.5},
        {"temperature": -0.1},
        {"lstm_dropout": 1.0},
        {"placement_conv_units": "16"},
        {"difficulty_overrides": "9,8,7"},
        {"batch_size": 0},
        {"lr": 0.0},
    ])
    def test_invariants_enforced(self, overrides):
        with pytest.raises(UsageError):
            load_config(None, overrides)

    def test_model_config_mapping(self):
        cfg = load_config(None, {"context_beats": 4,
                                 "placement_conv_units": "2,3",
                                 "selection_lstm_units": 32,
                                 "head_dropout": 0.25})
        pc = placement_model_config(cfg)
        assert (pc.context_beats, pc.conv_units, pc.head_dropout) == (4, (2, 3), 0.25)
        sc = selection_model_config(cfg)
        assert (sc.lstm_units, sc.head_dropout) == (32, 0.25)

    def test_checkpoint_path_resolution(self):
        cfg = load_config(None, {"out_dir": "runs"})
        assert checkpoint_path(cfg, "placement") == os.path.join("runs", "placement.ckpt")
        cfg = load_config(None, {"placement_checkpoint": "elsewhere.ckpt"})
        assert checkpoint_path(cfg, "placement") == "elsewhere.ckpt"


class TestDifficulty:
    def test_formula_examples(self):
        assert default_difficulty(120.0, 2.0) == 9
        assert default_difficulty(40.0, 1.0) == 5  # raw 0 clamps up
        assert default_difficulty(120.0, 0.5) == 7  # 30 s at 120 bpm
        # log2(16) = 4 cancels the additive constant, leaving floor(bpm/10)
        assert default_difficulty(120.0, 16.0) == 12
        assert default_difficulty(160.0, 16.0) == 16

    def test_formula_monotone_in_bpm(self):
        ratings = [default_difficulty(bpm, 3.0) for bpm in (80, 110, 140, 170, 200)]
        assert ratings == sorted(ratings)

    def test_bad_inputs(self):
        with pytest.raises(DataError):
            default_difficulty(0.0, 2.0)
        with pytest.raises(DataError):
            default_difficulty(120.0, 0.0)

    def test_default_plan(self):
        plan = plan_difficulties(11)
        assert plan.entries == (("Challenge", 11), ("Hard", 10), ("Medium", 9),
                                ("Easy", 8), ("Beginner", 7))

    def test_minimum_anchor_keeps_beginner_at_one(self):
        assert plan_difficulties(5).entries[-1] == ("Beginner", 1)

    def test_overrides_verbatim(self):
        plan = plan_difficulties(overrides=[13, 11, 9, 7, 5])
        assert [fine for _, fine in plan.entries] == [13, 11, 9, 7, 5]

    def test_plan_structure(self):
        for d in (5, 9, 17, 30):
            fines = [fine for _, fine in plan_difficulties(d).entries]
            assert fines == [d - k for k in range(5)]
            assert [c for c, _ in plan_difficulties(d).entries] == [
                "Challenge", "Hard", "Medium", "Easy", "Beginner"]

    def test_plan_errors(self):
        with pytest.raises(UsageError):
            plan_difficulties(4)
        with pytest.raises(UsageError):
            plan_difficulties(None)
        with pytest.raises(UsageError):
            plan_difficulties(overrides=[9, 8, 7])
        with pytest.raises(UsageError):
            plan_difficulties(overrides=[9, 8, 7, 6, 0])


class TestCache:
    def test_featurize_writes_content_addressed_entry(self, tmp_path):
        from stepsmith.audiofeat import load_wav, mel_features
        import hashlib

        wav = tmp_path / "a.wav"
        write_wav_pcm16(wav, click_track(100.0, 0.1, 2.0))
        path = featurize_wav(wav, tmp_path / "cache")
        assert path.name == hashlib.sha256(wav.read_bytes()).hexdigest() + ".npz"
        entry = load_entry(path)
        direct = mel_features(load_wav(wav))
        # entries store the model-facing float32 view of the features
        assert np.array_equal(entry.spec.data, direct.data.astype(np.float32))
        assert entry.duration_s == pytest.approx(2.0, abs=1e-3)

    def test_second_run_is_a_cache_hit(self, tmp_path, monkeypatch):
        import stepsmith.pipeline.cache as cache_mod

        wav = tmp_path / "a.wav"
        write_wav_pcm16(wav, click_track(100.0, 0.1, 1.5))
        first = featurize_wav(wav, tmp_path / "cache")

        def exploding(clip):
            raise AssertionError("featurize recomputed on a warm cache")

        monkeypatch.setattr(cache_mod, "mel_features", exploding)
        assert featurize_wav(wav, tmp_path / "cache") == first

    def test_different_audio_different_entry(self, tmp_path):
        a, b = tmp_path / "a.wav", tmp_path / "b.wav"
        write_wav_pcm16(a, click_track(100.0, 0.1, 1.5))
        write_wav_pcm16(b, click_track(130.0, 0.2, 1.5))
        assert featurize_wav(a, tmp_path / "c") != featurize_wav(b, tmp_path / "c")

    def test_renamed_entry_refused_and_recomputed(self, tmp_path):
        wav = tmp_path / "a.wav"
        write_wav_pcm16(wav, click_track(100.0, 0.1, 1.5))
        cache = tmp_path / "cache"
        path = featurize_wav(wav, cache)
        bogus = path.with_name("0" * 64 + ".npz")
        path.rename(bogus)
        with pytest.raises(DataError, match="hash mismatch"):
            load_entry(bogus)
        assert featurize_wav(wav, cache) == path  # clean recompute
        assert path.exists()

    def test_corrupt_entry_recomputed(self, tmp_path):
        wav = tmp_path / "a.wav"
        write_wav_pcm16(wav, click_track(100.0, 0.1, 1.5))
        cache = tmp_path / "cache"
        path = featurize_wav(wav, cache)
        path.write_bytes(b"not an npz")
        again = featurize_wav(wav, cache)
        assert again == path
        assert load_entry(again).spec.data.shape[1:] == (80, 3)

    def test_parallel_matches_serial(self, tmp_path):
        from stepsmith.pipeline import featurize_many

        wavs = []
        for i in range(2):
            wav = tmp_path / f"w{i}.wav"
            write_wav_pcm16(wav, click_track(90.0 + i * 25, 0.1, 1.2))
            wavs.append(wav)
        serial = featurize_many(wavs, tmp_path / "c1", workers=1)
        parallel = featurize_many(wavs, tmp_path / "c2", workers=2)
        assert [p.name for p in serial] == [p.name for p in parallel]
        for a, b in zip(serial, parallel):
            assert np.array_equal(load_entry(a).spec.data, load_entry(b).spec.data)


class TestDataset:
    def test_discover(self, dataset_dir):
        entries = discover_songs(dataset_dir)
        assert [e.song_id for e in entries] == [
            "song0/song0", "song1/song1", "song2/song2"]
        assert all(e.wav_path.is_file() for e in entries)

    def test_missing_audio_rejected(self, tmp_path):
        make_song(tmp_path / "s", seed=1)
        (tmp_path / "s" / "song.wav").unlink()
        with pytest.raises(DataError, match="missing audio"):
            discover_songs(tmp_path)

    def test_empty_dir_rejected(self, tmp_path):
        with pytest.raises(DataError, match="no .sm files"):
            discover_songs(tmp_path)

    def test_split_examples_structure(self, dataset_dir, tmp_path):
        cfg = toy_config(dataset_dir, tmp_path)
        data = build_split_examples(cfg)
        assert sum(len(v) for v in data.songs.values()) == 3
        assert all(len(v) == 1 for v in data.songs.values())
        ex = data.placement["train"][0]
        assert ex.past_ctx.shape == (cfg.context_beats, 32, 80, 3)
        assert data.norm.mean.shape == (80, 3)
        sel = data.selection["train"][0]
        assert sel.history.shape == (64,)
        assert sel.audio_past.shape == (8, 9, 80, 3)

    def test_selection_augmentation_quadruples_train_only(self, dataset_dir, tmp_path):
        cfg = toy_config(dataset_dir, tmp_path)
        with_aug = build_split_examples(cfg)
        without = build_split_examples(cfg, augment_selection=False)
        assert len(with_aug.selection["train"]) == 4 * len(without.selection["train"])
        for split in ("valid", "test"):
            assert len(with_aug.selection[split]) == len(without.selection[split])
        assert len(with_aug.placement["train"]) == len(without.placement["train"])


@pytest.fixture(scope="module")
def trained(dataset_dir, tmp_path_factory):
    work = tmp_path_factory.mktemp("trained")
    cfg = toy_config(dataset_dir, work)
    p_report = cmd_train_placement(cfg)
    s_report = cmd_train_selection(cfg)
    return cfg, p_report, s_report


class TestCommands:
    def test_training_artifacts(self, trained):
        cfg, p_report, s_report = trained
        out = Path(cfg.out_dir)
        assert (out / "placement.ckpt").is_file()
        assert (out / "selection.ckpt").is_file()
        p_curve = (out / "placement_curve.csv").read_text().splitlines()
        assert p_curve[0] == "epoch,train_loss,valid_loss,valid_prauc,lr"
        assert len(p_curve) == p_report.epochs_run + 1
        s_curve = (out / "selection_curve.csv").read_text().splitlines()
        assert s_curve[0] == "epoch,train_loss,valid_loss,valid_acc,lr"
        assert s_report.epochs_run == 2

    def test_training_is_deterministic(self, dataset_dir, trained, tmp_path):
        cfg_again = toy_config(dataset_dir, tmp_path)
        cmd_train_placement(cfg_again)
        original = Path(trained[0].out_dir) / "placement.ckpt"
        repeat = Path(cfg_again.out_dir) / "placement.ckpt"
        assert repeat.read_bytes() == original.read_bytes()

    def test_evaluate_writes_metric_csvs(self, trained):
        import csv

        cfg = trained[0]
        written = cmd_evaluate(cfg)
        with open(written["placement"]) as fh:
            rows = list(csv.reader(fh))
        assert rows[0][:3] == ["song", "coarse", "fine"]
        assert "pr_auc" in rows[0] and "max_f1" in rows[0]
        assert len(rows) >= 2  # at least one test chart scored
        bce = float(rows[1][rows[0].index("bce")])
        assert math.isfinite(bce) and bce > 0
        with open(written["selection"]) as fh:
            srows = list(csv.reader(fh))
        assert srows[0][3:] == ["loss", "accuracy", "hold_accuracy", "step_accuracy"]
        with open(written["placement_by_difficulty"]) as fh:
            drows = list(csv.reader(fh))
        assert drows[0] == ["metric", "difficulty", "mean"]
        assert len(drows) > 1

    def test_generate_end_to_end(self, trained, tmp_path):
        cfg = trained[0]
        wav = tmp_path / "fresh.wav"
        write_wav_pcm16(wav, click_track(BPM, OFFSET, 10.0, seed=7))
        out = cmd_generate(cfg, wav)
        assert out.name == "fresh.sm"
        sim = parse_simfile(out.read_text())
        assert len(sim.charts) == 5
        coarse = [c.coarse_difficulty for c in sim.charts]
        assert coarse == ["Challenge", "Hard", "Medium", "Easy", "Beginner"]
        fines = [c.fine_difficulty for c in sim.charts]
        assert fines == [fines[0] - k for k in range(5)]
        assert len(sim.bpm_segments) == 1
        period = 60.0 / sim.bpm_segments[0][1]
        for chart in sim.charts:
            for beat, _ in chart.rows:
                assert 0.0 <= sim.offset_s + beat * period <= 10.0

    def test_generate_is_reproducible(self, trained, tmp_path):
        cfg = trained[0]
        wav = tmp_path / "again.wav"
        write_wav_pcm16(wav, click_track(BPM, OFFSET, 6.0, seed=8))
        first = cmd_generate(cfg, wav).read_bytes()
        second = cmd_generate(cfg, wav).read_bytes()
        assert first == second

    def test_generate_difficulty_override(self, trained, tmp_path):
        from dataclasses import replace

        cfg = replace(trained[0], difficulty=12)
        wav = tmp_path / "anchored.wav"
        write_wav_pcm16(wav, click_track(BPM, OFFSET, 6.0, seed=9))
        sim = parse_simfile(cmd_generate(cfg, wav).read_text())
        assert [c.fine_difficulty for c in sim.charts] == [12, 11, 10, 9, 8]

    def test_generate_fine_overrides(self, trained, tmp_path):
        from dataclasses import replace

        cfg = replace(trained[0], difficulty_overrides=(13, 11, 9, 7, 5))
        wav = tmp_path / "custom.wav"
        write_wav_pcm16(wav, click_track(BPM, OFFSET, 6.0, seed=10))
        sim = parse_simfile(cmd_generate(cfg, wav).read_text())
        assert [c.fine_difficulty for c in sim.charts] == [13, 11, 9, 7, 5]

    def test_tempo_command(self, tmp_path, capsys):
        wav = tmp_path / "t.wav"
        write_wav_pcm16(wav, click_track(150.0, 0.2, 8.0, seed=11))
        cfg = PipelineConfig(cache_dir=str(tmp_path / "cache"))
        est = cmd_tempo(cfg, wav)
        line = capsys.readouterr().out.strip().splitlines()[-1]
        bpm, offset, conf = (float(x) for x in line.split())
        assert bpm == pytest.approx(est.bpm, abs=0.005)
        assert bpm == pytest.approx(150.0, abs=0.05)
        assert 0.0 <= conf <= 1.0


class TestCli:
    def test_tempo_via_main(self, tmp_path, capsys):
        wav = tmp_path / "t.wav"
        write_wav_pcm16(wav, click_track(120.0, 0.25, 6.0, seed=12))
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text(f"cache_dir = {tmp_path / 'cache'}\n")
        assert main(["tempo", str(wav), "--config", str(cfg_file)]) == 0
        out = capsys.readouterr().out.strip()
        assert len(out.split()) == 3
        assert float(out.split()[0]) == pytest.approx(120.0, abs=0.05)

    def test_unknown_config_key_exits_1(self, tmp_path, capsys):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("not_a_key = 3\n")
        assert main(["tempo", "whatever.wav", "--config", str(cfg_file)]) == 1
        assert "not_a_key" in capsys.readouterr().err

    def test_missing_audio_exits_2(self, tmp_path, capsys):
        assert main(["tempo", str(tmp_path / "absent.wav")]) == 2

    def test_bad_usage_exits_1(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["tempo"])  # missing WAV argument
        assert exc.value.code == 1
        with pytest.raises(SystemExit) as exc:
            main(["not-a-command"])
        assert exc.value.code == 1

    def test_featurize_via_main(self, dataset_dir, tmp_path, capsys):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text(
            f"dataset_dir = {dataset_dir}\ncache_dir = {tmp_path / 'cache'}\n")
        assert main(["featurize", "--config", str(cfg_file)]) == 0
        assert len(list((tmp_path / "cache").glob("*.npz"))) == 3
        assert main(["featurize", "--config", str(cfg_file)]) == 0  # warm hit

    def test_generate_via_main_with_flags(self, trained, tmp_path, capsys):
        cfg = trained[0]
        wav = tmp_path / "cli.wav"
        write_wav_pcm16(wav, click_track(BPM, OFFSET, 6.0, seed=13))
        cfg_file = tmp_path / "run.cfg"
        lines = [f"{key} = {format_value(val)}" for key, val in cfg_items(cfg)]
        # pin the checkpoints explicitly: --out below moves the output dir,
        # which is also the default checkpoint location
        lines += [f"placement_checkpoint = {Path(cfg.out_dir) / 'placement.ckpt'}",
                  f"selection_checkpoint = {Path(cfg.out_dir) / 'selection.ckpt'}"]
        cfg_file.write_text("\n".join(lines) + "\n")
        code = main(["generate", str(wav), "--config", str(cfg_file),
                     "--difficulty", "9", "--temperature", "0",
                     "--out", str(tmp_path / "gen_out")])
        assert code == 0
        sim = parse_simfile((tmp_path / "gen_out" / "cli.sm").read_text())
        assert [c.fine_difficulty for c in sim.charts] == [9, 8, 7, 6, 5]


def format_value(value):
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def cfg_items(cfg: PipelineConfig):
    from dataclasses import fields

    defaults = PipelineConfig()
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if value != getattr(defaults, f.name):
            yield f.name, value
