"""Shared builders for test inputs: random grid charts and synthetic audio."""

import wave

import numpy as np

from stepsmith.simfile import (
    COARSE_DIFFICULTIES,
    SLOTS_PER_BEAT,
    Chart,
    Simfile,
    StepSymbol,
)

SAFE_TEXT = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789_-"


def random_name(rng, lo=1, hi=12):
    n = int(rng.integers(lo, hi + 1))
    return "".join(SAFE_TEXT[i] for i in rng.integers(0, len(SAFE_TEXT), size=n))


def slot_beat(k):
    """Canonical float for grid slot k: the single division k/48."""
    return float(int(k)) / SLOTS_PER_BEAT


def random_grid_chart(rng, max_measures=4):
    """Random chart with all beats on the 1/48 grid and valid hold pairing."""
    total_slots = max_measures * 4 * SLOTS_PER_BEAT
    n_rows = int(rng.integers(0, 25))
    slots = sorted(int(k) for k in rng.choice(total_slots - SLOTS_PER_BEAT, size=n_rows, replace=False))
    digits_at = {k: [0, 0, 0, 0] for k in slots}
    open_cols = []
    for col in range(4):
        held = False
        for k in slots:
            r = rng.random()
            if held:
                if r < 0.45:
                    digits_at[k][col] = 3
                    held = False
            else:
                if r < 0.30:
                    digits_at[k][col] = 1
                elif r < 0.42:
                    digits_at[k][col] = 2
                    held = True
        if held:
            open_cols.append(col)
    if open_cols:
        closer = (slots[-1] if slots else 0) + int(rng.integers(1, SLOTS_PER_BEAT))
        digits_at.setdefault(closer, [0, 0, 0, 0])
        for col in open_cols:
            digits_at[closer][col] = 3
    rows = []
    for k in sorted(digits_at):
        sym = StepSymbol.from_digits(digits_at[k])
        if sym.index != 0:
            rows.append((slot_beat(k), sym))
    coarse = COARSE_DIFFICULTIES[int(rng.integers(0, len(COARSE_DIFFICULTIES)))]
    return Chart(coarse, int(rng.integers(1, 15)), tuple(rows))


def random_grid_simfile(rng, max_charts=3):
    bpms = [(0.0, float(rng.uniform(60.0, 240.0)))]
    for _ in range(int(rng.integers(0, 3))):
        bpms.append((bpms[-1][0] + float(rng.uniform(0.5, 8.0)), float(rng.uniform(60.0, 240.0))))
    stops = []
    beat = 0.0
    for _ in range(int(rng.integers(0, 3))):
        beat += float(rng.uniform(0.25, 6.0))
        stops.append((beat, float(rng.uniform(0.0, 1.5))))
    charts = tuple(random_grid_chart(rng) for _ in range(int(rng.integers(1, max_charts + 1))))
    return Simfile(
        title=random_name(rng),
        music_path=random_name(rng) + ".wav",
        offset_s=float(rng.uniform(-1.0, 1.0)),
        bpm_segments=tuple(bpms),
        stop_segments=tuple(stops),
        charts=charts,
    )


def write_wav_pcm16(path, samples, sample_rate=44100):
    """Write mono (n,) or stereo (n, 2) float samples as 16-bit PCM."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    pcm = np.clip(np.rint(x * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(x.shape[1])
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(pcm.tobytes())
    return path


def tone(freq_hz, duration_s, sample_rate=44100, amplitude=0.5):
    t = np.arange(int(round(duration_s * sample_rate))) / sample_rate
    return amplitude * np.sin(2.0 * np.pi * freq_hz * t)


def click_track(bpm, offset_s, duration_s, sample_rate=44100, amplitude=0.8, seed=0):
    """Sharp-attack click at every beat; identical burst each time."""
    n = int(round(duration_s * sample_rate))
    out = np.zeros(n)
    rng = np.random.default_rng(seed)
    click_len = int(0.025 * sample_rate)
    decay = np.exp(-np.arange(click_len) / (0.004 * sample_rate))
    burst = rng.standard_normal(click_len) * decay
    period = 60.0 / bpm
    t = offset_s
    while t < duration_s:
        s = int(round(t * sample_rate))
        if s >= 0:
            e = min(n, s + click_len)
            if e > s:
                out[s:e] += burst[: e - s]
        t += period
    peak = np.max(np.abs(out))
    return amplitude * out / peak if peak > 0 else out


def burst_placement_example(rng, cfg):
    """Context-predictive toy example: two of the per-beat sample windows
    carry a strong burst and the matching quarter-of-beat slots are hot,
    so placements are learnable from the audio context alone."""
    from stepsmith.beatgrid import PlacementExample, PlacementVector

    shape = (cfg.context_beats, cfg.samples_per_beat, cfg.bands, cfg.channels)
    past = rng.standard_normal(shape).astype(np.float32) * 0.05
    future = rng.standard_normal(shape).astype(np.float32) * 0.05
    slots = np.zeros(cfg.slots, dtype=np.uint8)
    hot = rng.choice(cfg.samples_per_beat, size=2, replace=False)
    for s in hot:
        past[-1, s] += 4.0
        future[0, s] += 4.0
        slots[s * (cfg.slots // cfg.samples_per_beat)] = 1
    # small aux keeps toy-width gates out of saturation
    aux = np.tile([1.2, 0.7], (cfg.context_beats, 1)).astype(np.float32)
    return PlacementExample(past, future, aux, aux.copy(),
                            PlacementVector(slots, 0))


# repeating sequence whose every length-4 window is distinct, so the
# next symbol is a deterministic function of any history >= 4
CYCLE_PATTERN_TEXTS = ("1000", "0100", "0010", "0001",
                       "1001", "0110", "1000", "0011")


def cyclic_selection_example(phase, cfg, pattern=None):
    from stepsmith.beatgrid import SelectionExample
    from stepsmith.simfile import StepSymbol

    if pattern is None:
        pattern = [StepSymbol.from_text(t).index for t in CYCLE_PATTERN_TEXTS]
    n = len(pattern)
    hist = [pattern[(phase + k) % n] for k in range(cfg.history_steps)]
    target = pattern[(phase + cfg.history_steps) % n]
    patch = np.zeros((cfg.audio_steps, cfg.patch_frames, cfg.bands,
                      cfg.channels), np.float32)
    return SelectionExample(
        history=np.asarray(hist, np.int32),
        delta_beats=np.full((cfg.history_steps, 2), 0.5, np.float32),
        audio_past=patch,
        audio_future=patch.copy(),
        target=target,
    )
