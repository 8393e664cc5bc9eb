"""In-memory synthetic experiments: overfit run and ablation benchmark."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RunConfig, config_from_dict
from .data import SynthSpec, generate_synthetic
from .dsp import band_bins
from .opticalflow import LKParams
from .skinlabel import generate_labels, rasterize_skin
from .train import Sample, evaluate, predict, skin_target, train, variant_config


def bin_centred_hr(fps: float, T: int, lo_bpm: float, hi_bpm: float, rng) -> float:
    """A random HR in ``[lo, hi]`` bpm that falls exactly on a DFT bin."""
    bins = band_bins(T, fps)
    hrs = bins * fps / T * 60.0
    hrs = hrs[(hrs >= lo_bpm) & (hrs <= hi_bpm)]
    return float(rng.choice(hrs))


def synthetic_sample(spec: SynthSpec, seed: int, net_cfg, clip_id: str,
                     track: bool = True) -> Sample:
    """Render a clip and build its skin label by tracking the seed ring."""
    syn = generate_synthetic(spec, seed)
    if track:
        label, _ = generate_labels(syn.clip.frames, syn.landmarks[0], LKParams(), 1, 1)
        masks = label.masks
    else:
        masks = rasterize_skin(syn.landmarks, spec.H, spec.W).masks
    return Sample(clip_id, syn.clip.frames, syn.ppg.values, syn.hr, spec.fps,
                  skin_target(masks, net_cfg))


@dataclass(frozen=True)
class BenchmarkSpec:
    n_train: int = 12
    n_test: int = 20
    T: int = 64
    size: int = 32
    # the network pools time by 4, so its output runs at fps / 4; keeping HR
    # below fps / 8 avoids aliasing in the predicted trace
    fps: float = 20.0
    hr_range: tuple = (50.0, 135.0)
    noise_std: float = 0.002
    distractor_amplitude: float = 0.05
    drift_max: float = 0.05
    epochs: int = 10
    lr: float = 1e-3
    lffg_channels: int = 8
    stsc_channels: int = 16
    skin_channels: int = 8
    seed: int = 0


def benchmark_config(b: BenchmarkSpec) -> RunConfig:
    return config_from_dict(dict(
        T=b.T, H=b.size, W=b.size, lffg_channels=b.lffg_channels,
        stsc_channels=b.stsc_channels, skin_channels=b.skin_channels,
        lr=b.lr, epochs=b.epochs, seed=b.seed, val_fraction=0.0))


def benchmark_samples(b: BenchmarkSpec, net_cfg, n: int, offset: int) -> list:
    """Clips whose background flickers at an in-band rate unrelated to the pulse."""
    rng = np.random.default_rng([b.seed, offset])
    out = []
    for i in range(n):
        hr = bin_centred_hr(b.fps, b.T, *b.hr_range, rng)
        distractor = bin_centred_hr(b.fps, b.T, *b.hr_range, rng) / 60.0
        while abs(distractor * 60 - hr) < 1e-9:
            distractor = bin_centred_hr(b.fps, b.T, *b.hr_range, rng) / 60.0
        drift = tuple(rng.uniform(-b.drift_max, b.drift_max, size=2))
        spec = SynthSpec(hr=hr, fps=b.fps, T=b.T, H=b.size, W=b.size,
                         noise_std=b.noise_std, drift=drift,
                         distractor_amplitude=b.distractor_amplitude, distractor_hz=distractor)
        out.append(synthetic_sample(spec, offset + i, net_cfg, f"synth_{offset + i:04d}"))
    return out


def ablation_benchmark(b: BenchmarkSpec = BenchmarkSpec(), variants=("full", "no_skinmap"),
                       progress=None) -> dict:
    """Train each variant on the same clips; returns ``slug -> EvalReport`` on held-out clips."""
    base = benchmark_config(b)
    train_set = benchmark_samples(b, base.net, b.n_train, 0)
    test_set = benchmark_samples(b, base.net, b.n_test, 10_000)
    reports = {}
    for slug in variants:
        cfg = variant_config(base, slug)
        res = train(cfg, train_set, (), progress=progress)
        res.net.load_state_dict(res.best_state)
        reports[slug] = evaluate(res.net, test_set)
    return reports


@dataclass(frozen=True)
class OverfitSpec:
    hr: float = 75.0     # 1.25 Hz, a bin centre for fps=10, T=32
    fps: float = 10.0
    T: int = 32
    size: int = 32
    epochs: int = 200
    lr: float = 1e-4
    seed: int = 0


def overfit_run(o: OverfitSpec = OverfitSpec(), progress=None):
    """Train the micro network on a single clip.

    Returns ``(train_result, final_L_r, inferred_hr, sample)`` where the loss
    and HR come from the best checkpoint in inference mode.
    """
    cfg = config_from_dict(dict(T=o.T, H=o.size, W=o.size, lr=o.lr, epochs=o.epochs,
                                seed=o.seed, val_fraction=0.0))
    spec = SynthSpec(hr=o.hr, fps=o.fps, T=o.T, H=o.size, W=o.size)
    smp = synthetic_sample(spec, o.seed, cfg.net, "overfit")
    res = train(cfg, [smp], progress=progress)
    res.net.load_state_dict(res.best_state)
    _, hr = predict(res.net, smp.frames, o.fps)
    return res, res.best_val, hr, smp


__all__ = ["BenchmarkSpec", "OverfitSpec", "ablation_benchmark", "benchmark_config",
           "benchmark_samples", "bin_centred_hr", "overfit_run", "synthetic_sample"]
