"""Protocol descriptions of the public speller datasets the method was evaluated on.

Only the acquisition parameters live here; recordings are never shipped. Use
``protocol_for(name, samples_per_channel)`` to obtain the ``ProtocolMeta`` a
converted recording must declare in its header.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

from .dataset import DatasetError, ProtocolMeta, SynthConfig


@dataclass(frozen=True)
class DatasetPreset:
    name: str
    n_subjects: int
    n_train_trials: int
    n_test_trials: int
    participants: str
    modality: str
    n_channels: int
    n_symbols: int
    n_stimuli: int
    max_iterations: int
    soa_seconds: float
    overhead_seconds: float
    levels: tuple[str, ...]
    grouping: str

    @property
    def n_flashes(self) -> int:
        return self.n_stimuli // len(self.levels)

    def protocol(self, samples_per_channel: int, n_channels: int | None = None) -> ProtocolMeta:
        return ProtocolMeta(
            n_symbols=self.n_symbols,
            levels=self.levels,
            n_flashes=self.n_flashes,
            max_iterations=self.max_iterations,
            soa_seconds=self.soa_seconds,
            flashes_per_iteration=self.n_stimuli,
            overhead_seconds=self.overhead_seconds,
            n_channels=n_channels or self.n_channels,
            samples_per_channel=samples_per_channel,
            grouping=self.grouping,
        )

    def synth_config(self, seed: int, **sizes: Any) -> SynthConfig:
        """Synthetic subject generated under this protocol; ``sizes`` carries the remaining SynthConfig fields."""
        return SynthConfig(
            n_iterations=self.max_iterations,
            n_flashes=self.n_flashes,
            n_levels=len(self.levels),
            soa_seconds=self.soa_seconds,
            level_names=self.levels,
            n_symbols=self.n_symbols,
            overhead_seconds=self.overhead_seconds,
            grouping=self.grouping,
            seed=seed,
            **sizes,
        )


_TWO_LEVEL = ("outer", "inner")
_GRID = ("row", "column")

PRESETS: dict[str, DatasetPreset] = {
    preset.name: preset
    for preset in (
        DatasetPreset("AMUSE", 16, 384, 809, "healthy", "auditory", 61, 30, 12, 15, 0.175, 18.25, _TWO_LEVEL, "pooled"),
        DatasetPreset("CenterSpeller", 13, 220, 538, "healthy", "visual", 63, 30, 12, 10, 0.217, 8.25, _TWO_LEVEL, "pooled"),
        DatasetPreset("MVEP", 15, 270, 606, "healthy", "visual", 57, 30, 12, 10, 0.266, 11.7, _TWO_LEVEL, "pooled"),
        DatasetPreset("P300Speller", 10, 120, 60, "healthy", "visual", 8, 36, 12, 8, 0.250, 7.25, _GRID, "per_level"),
        DatasetPreset("ALSP300Speller", 8, 120, 160, "ALS", "visual", 16, 36, 12, 10, 0.250, 8.0, _GRID, "per_level"),
        DatasetPreset("Akimpech", 27, 432, 790, "healthy", "visual", 10, 36, 12, 15, 0.188, 4.0, _GRID, "per_level"),
    )
}


def get_preset(name: str) -> DatasetPreset:
    try:
        return PRESETS[name]
    except KeyError as exc:
        known = ", ".join(sorted(PRESETS))
        raise DatasetError(f"unknown dataset preset {name!r}; known presets: {known}") from exc


def protocol_for(name: str, samples_per_channel: int, n_channels: int | None = None) -> ProtocolMeta:
    return get_preset(name).protocol(samples_per_channel, n_channels=n_channels)
