"""Profile CSV reading, writing and resampling."""

import logging
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from .exceptions import IngestError, ProfileError
from .models import InputPaths, LoadProfile, ProfileBundle, ProfileRole, TimeGrid

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
HEADER_LINE = 1


def _line(row: int) -> int:
    """File line of a data row (header on line 1)."""
    return row + HEADER_LINE + 1


def _parse_float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        return np.nan


def read_profile_csv(path: Union[str, Path], role: ProfileRole) -> LoadProfile:
    """
    Read a `timestamp,value` CSV into a LoadProfile.

    Raises:
        IngestError: unreadable file, missing columns, bad timestamps or
            values, duplicates, non-increasing or irregular spacing
    """
    path = str(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise IngestError(path, None, f"cannot read CSV: {e}") from e

    columns = [c.strip().lower() for c in frame.columns]
    if "timestamp" not in columns or "value" not in columns:
        raise IngestError(path, HEADER_LINE, f"expected columns timestamp,value; found {','.join(frame.columns)}")
    frame.columns = columns
    if len(frame) < 2:
        raise IngestError(path, None, "need at least two rows to infer the step")

    stamps = pd.to_datetime(frame["timestamp"].str.strip(), errors="coerce", utc=True)
    bad = np.flatnonzero(stamps.isna().to_numpy())
    if bad.size:
        raise IngestError(path, _line(int(bad[0])), f"unparseable timestamp {frame['timestamp'].iloc[bad[0]]!r}")
    values = frame["value"].map(_parse_float)
    bad = np.flatnonzero(~np.isfinite(values.to_numpy(dtype=float)))
    if bad.size:
        raise IngestError(path, _line(int(bad[0])), f"non-numeric or non-finite value {frame['value'].iloc[bad[0]]!r}")

    duplicated = np.flatnonzero(stamps.duplicated().to_numpy())
    if duplicated.size:
        raise IngestError(path, _line(int(duplicated[0])), f"duplicate timestamp {stamps.iloc[duplicated[0]]}")
    seconds = stamps.diff().dt.total_seconds().to_numpy()[1:]
    backwards = np.flatnonzero(seconds <= 0)
    if backwards.size:
        raise IngestError(path, _line(int(backwards[0]) + 1), "timestamps are not increasing")
    irregular = np.flatnonzero(seconds != seconds[0])
    if irregular.size:
        raise IngestError(
            path, _line(int(irregular[0]) + 1), f"step of {seconds[irregular[0]]:.0f} s breaks the {seconds[0]:.0f} s grid"
        )

    array = values.to_numpy(dtype=float)
    if role in (ProfileRole.SENSITIVE, ProfileRole.HOT_WATER_DRAW):
        negative = np.flatnonzero(array < 0)
        if negative.size:
            raise IngestError(path, _line(int(negative[0])), f"negative {role.value} value {array[negative[0]]}")
    try:
        grid = TimeGrid(start=stamps.iloc[0].tz_convert(None).to_pydatetime(), step_seconds=int(seconds[0]), count=len(array))
        return LoadProfile(grid=grid, values=array, role=role)
    except (ValidationError, ProfileError) as e:
        raise IngestError(path, None, str(e)) from e


def write_profile_csv(profile: LoadProfile, path: Union[str, Path]) -> None:
    """Write `timestamp,value` with 17 significant digits."""
    frame = pd.DataFrame({
        "timestamp": profile.grid.timestamps().strftime("%Y-%m-%dT%H:%M:%S"),
        "value": profile.values,
    })
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)


def to_hourly(profile: LoadProfile) -> LoadProfile:
    """Hourly version of a sub-hourly profile: draws are summed, everything else averaged."""
    step = profile.grid.step_seconds
    if step == 3600:
        return profile
    if step > 3600:
        raise ProfileError(f"{profile.role.value} profile has {step} s steps; control needs hourly or finer")
    slots = 3600 // step
    start = pd.Timestamp(profile.grid.start)
    if start != start.floor("h") or profile.grid.count % slots:
        raise ProfileError(f"{profile.role.value} profile does not cover whole clock hours")
    blocks = profile.values.reshape(-1, slots)
    hourly = blocks.sum(axis=1) if profile.role == ProfileRole.HOT_WATER_DRAW else blocks.mean(axis=1)
    grid = TimeGrid(start=profile.grid.start, step_seconds=3600, count=profile.grid.count // slots)
    return LoadProfile(grid=grid, values=hourly, role=profile.role)


def _aligned(profile: LoadProfile, grid: TimeGrid, path: str) -> None:
    if profile.grid.start != grid.start:
        raise IngestError(path, _line(0), f"starts at {profile.grid.start}, sensitive load at {grid.start}")
    if profile.grid.end < grid.end:
        raise IngestError(path, _line(profile.grid.count - 1), f"ends before the sensitive load ({grid.end})")


def ingest_profiles(
    inputs: InputPaths,
    require_draws: bool = False,
    require_weather: bool = False,
    base_dir: Optional[Union[str, Path]] = None,
) -> ProfileBundle:
    """
    Read, resample and align the input CSVs.

    Sub-hourly companions are averaged (draws summed) to hourly for
    control and kept at their own step for dispatch. Companions longer
    than the sensitive load are cut to its span.
    """

    def resolve(value: Optional[str]) -> Optional[str]:
        if value is None:
            return None
        return str(Path(base_dir) / value) if base_dir is not None and not Path(value).is_absolute() else value

    if inputs.sensitive is None:
        raise IngestError("inputs.sensitive", None, "no sensitive load file given")
    if require_draws and inputs.hot_water_draw is None:
        raise IngestError("inputs.hot_water_draw", None, "EWH configured but no hot-water draw file given")
    if require_weather and inputs.outdoor_temp is None:
        raise IngestError("inputs.outdoor_temp", None, "ERH configured but no outdoor temperature file given")

    sensitive_path = resolve(inputs.sensitive)
    sensitive = to_hourly(read_profile_csv(sensitive_path, ProfileRole.SENSITIVE))
    grid = sensitive.grid

    hourly: Dict[ProfileRole, LoadProfile] = {}
    fine: Dict[ProfileRole, LoadProfile] = {}
    for role, value in (
        (ProfileRole.HOT_WATER_DRAW, inputs.hot_water_draw),
        (ProfileRole.OUTDOOR_TEMP, inputs.outdoor_temp),
        (ProfileRole.IRRADIANCE, inputs.irradiance),
    ):
        path = resolve(value)
        if path is None:
            continue
        raw = read_profile_csv(path, role)
        _aligned(raw, grid, path)
        if raw.grid.step_seconds < 3600:
            slots = 3600 // raw.grid.step_seconds
            raw = raw.slice(0, grid.count * slots)
            fine[role] = raw
        hourly[role] = to_hourly(raw).slice(0, grid.count)
        logger.debug(f"[Ingest] {role.value}: {raw.grid.count} rows at {raw.grid.step_seconds} s from {path}")

    logger.info(f"[Ingest] {grid.count} hours from {grid.start}, {len(fine)} sub-hourly companion(s)")
    return ProfileBundle(
        sensitive=sensitive,
        hot_water_draw=hourly.get(ProfileRole.HOT_WATER_DRAW),
        outdoor_temp=hourly.get(ProfileRole.OUTDOOR_TEMP),
        irradiance=hourly.get(ProfileRole.IRRADIANCE),
        fine=fine,
    )


def write_bundle(bundle: ProfileBundle, directory: Union[str, Path], prefix: str = "") -> InputPaths:
    """Write every profile of a bundle; sub-hourly companions replace their hourly files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written: Dict[str, str] = {}
    for field, role in (
        ("sensitive", ProfileRole.SENSITIVE),
        ("hot_water_draw", ProfileRole.HOT_WATER_DRAW),
        ("outdoor_temp", ProfileRole.OUTDOOR_TEMP),
        ("irradiance", ProfileRole.IRRADIANCE),
    ):
        profile = bundle.fine.get(role)
        if profile is None:
            profile = bundle.hourly(role)
        if profile is None:
            continue
        path = directory / f"{prefix}{role.value}.csv"
        write_profile_csv(profile, path)
        written[field] = str(path)
    return InputPaths(**written)
