"""Command-line surface: synth, noise, track, eval, segment.

Configuration precedence is defaults < ``--config`` file < explicit
flags; the effective configuration is dumped next to the outputs so
any run can be reproduced with ``--config``.

Exit codes: 0 success, 2 usage or config parse failure, 3 missing
input, 4 data mismatch, 1 unexpected error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .admm import AdmmParams
from .imaging import (
    GrayImage,
    ImageError,
    add_gaussian_noise,
    frame_noise_seed,
    load_image,
    load_sequence,
    write_sequence,
)
from .linearize import FeatureSet
from .segmentation import affinity_from_C, segmentation_error, spectral_cluster
from .synthlab import PRESETS, SynthError, make_preset
from .tracker import LOST, TrackerConfig, track_sequence, positions_from_results
from .trackio import (
    EvalReport,
    TrackIOError,
    TrackTable,
    atomic_write_text,
    dump_config,
    evaluate_tracks,
    load_config_file,
    read_tracks_csv,
    write_labels_csv,
    write_report_json,
    write_tracks_csv,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_MISMATCH = 4


class CliError(Exception):
    def __init__(self, kind: str, code: int, message: str):
        super().__init__(message)
        self.kind = kind
        self.code = code


@dataclass
class RunConfig:
    method: str = "multibody"
    patch: int = 7
    levels: int = 4
    gamma: float = 1.8e4
    lam: float = 1.0e4
    sigma2: float = 0.0
    seed: int = 0
    eps: float = 5.0  # evaluation drift tolerance in px
    eps_admm: float = 1e-6
    rho0: float = 0.1
    rho_max: float = 1e10
    eta: float = 1.1
    max_admm_iter: int = 300
    max_taylor: int = 10
    eps_outer: float = 0.01
    k: int = 2
    preset: str = "two-body"
    frames: int = 10
    features: int = 30
    size: int = 256
    overlay: bool = False

    def validate(self):
        if self.patch < 3 or self.patch % 2 == 0:
            raise CliError("config", EXIT_USAGE, f"patch size must be odd and >= 3, got {self.patch}")
        if self.sigma2 < 0:
            raise CliError("config", EXIT_USAGE, f"sigma2 must be >= 0, got {self.sigma2}")
        if self.method not in ("klt", "l1klt", "multibody"):
            raise CliError("config", EXIT_USAGE, f"unknown method {self.method!r}")
        return self

    def tracker_config(self) -> TrackerConfig:
        return TrackerConfig(
            method=self.method,
            levels=self.levels,
            half=(self.patch - 1) // 2,
            max_taylor=self.max_taylor,
            eps_outer=self.eps_outer,
            admm=AdmmParams(
                gamma=self.gamma,
                lam=self.lam,
                rho0=self.rho0,
                rho_max=self.rho_max,
                eta=self.eta,
                eps=self.eps_admm,
                max_iter=self.max_admm_iter,
            ),
        )

    def to_text(self) -> str:
        values = {}
        for f in fields(self):
            v = getattr(self, f.name)
            values[f.name] = str(v).lower() if isinstance(v, bool) else repr(v) if isinstance(v, float) else str(v)
        return dump_config(values)


_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _coerce(name: str, raw: str, target_type):
    try:
        if target_type is bool:
            low = raw.lower()
            if low in _BOOL_TRUE:
                return True
            if low in _BOOL_FALSE:
                return False
            raise ValueError(raw)
        return target_type(raw)
    except ValueError:
        raise CliError("config", EXIT_USAGE, f"config key {name}: cannot parse {raw!r}") from None


def build_run_config(args) -> RunConfig:
    cfg = RunConfig()
    types = {f.name: f.type for f in fields(cfg)}
    typemap = {"str": str, "int": int, "float": float, "bool": bool}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise CliError("missing-input", EXIT_MISSING, f"config file not found: {path}")
        try:
            file_values = load_config_file(path)
        except TrackIOError as exc:
            raise CliError("config", EXIT_USAGE, str(exc)) from None
        for key, raw in file_values.items():
            if key not in types:
                raise CliError("config", EXIT_USAGE, f"unknown config key {key!r}")
            setattr(cfg, key, _coerce(key, raw, typemap[str(types[key])]))
    for f in fields(cfg):
        cli_val = getattr(args, f.name, None)
        if cli_val is not None:
            setattr(cfg, f.name, cli_val)
    return cfg.validate()


def _require_dir(path, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise CliError("missing-input", EXIT_MISSING, f"{what} directory not found: {p}")
    return p


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError("missing-input", EXIT_MISSING, f"{what} not found: {p}")
    return p


def _load_frames(cfg: RunConfig, in_dir: Path) -> list[GrayImage]:
    try:
        frames = load_sequence(in_dir)
    except ImageError as exc:
        raise CliError("missing-input", EXIT_MISSING, str(exc)) from None
    if cfg.sigma2 > 0:
        frames = [
            add_gaussian_noise(fr, cfg.sigma2, frame_noise_seed(cfg.seed, i))
            for i, fr in enumerate(frames)
        ]
    return frames


def _initial_features(path: Path) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    table = read_tracks_csv(path)
    return table.ids, table.positions[0].copy(), table.labels


def _status_matrix(results, n):
    rows = [np.full(n, "tracked", dtype=object)]
    for res in results:
        rows.append(res.status.copy())
    return np.stack(rows)


def _write_overlays(out_dir: Path, frames, positions, status):
    from PIL import Image, ImageDraw

    for t in range(1, len(frames)):
        arr = np.rint(frames[t].data * 255.0).astype(np.uint8)
        im = Image.fromarray(arr, mode="L").convert("RGB")
        draw = ImageDraw.Draw(im)
        for j in range(positions.shape[1]):
            if status[t, j] == LOST:
                continue
            x0, y0 = positions[t - 1, j]
            x1, y1 = positions[t, j]
            draw.line([x0, y0, x1, y1], fill=(0, 255, 0), width=1)
            draw.rectangle([x1 - 1, y1 - 1, x1 + 1, y1 + 1], fill=(255, 0, 0))
        path = out_dir / f"overlay_{t:06d}.png"
        tmp = path.with_name(path.name + ".tmp")
        im.save(tmp, format="PNG")
        tmp.replace(path)


def _dump_effective_config(cfg: RunConfig, out_dir: Path):
    atomic_write_text(out_dir / "run_config.cfg", cfg.to_text())


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = build_run_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        seq = make_preset(
            cfg.preset, cfg.seed, n_frames=cfg.frames, features_per_body=cfg.features, size=cfg.size
        )
    except SynthError as exc:
        raise CliError("config", EXIT_USAGE, str(exc)) from None
    frames = seq.frames
    if cfg.sigma2 > 0:
        frames = [
            add_gaussian_noise(fr, cfg.sigma2, frame_noise_seed(cfg.seed, i))
            for i, fr in enumerate(frames)
        ]
    write_sequence(out_dir, frames, ext="pgm")
    ids = np.arange(seq.n_features)
    status = np.where(seq.visible, "visible", "occluded").astype(object)
    table = TrackTable(ids=ids, positions=seq.tracks, labels=seq.labels, status=status)
    write_tracks_csv(out_dir / "truth.csv", table)
    meta = dict(seq.meta)
    meta["sigma2"] = cfg.sigma2
    meta["n_features"] = int(seq.n_features)
    write_report_json(out_dir / "meta.json", meta)
    fmats = [
        [None if F is None else F.F.tolist() for F in per_body]
        for per_body in seq.fundamentals
    ]
    write_report_json(out_dir / "fmats.json", {"per_body_frame_pairs": fmats})
    print(f"wrote {len(frames)} frames, {seq.n_features} tracks to {out_dir}")
    return EXIT_OK


def cmd_noise(args) -> int:
    cfg = build_run_config(args)
    in_dir = _require_dir(args.in_dir, "input sequence")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    frames = load_sequence(in_dir)
    noisy = [
        add_gaussian_noise(fr, cfg.sigma2, frame_noise_seed(cfg.seed, i))
        for i, fr in enumerate(frames)
    ]
    write_sequence(out_dir, noisy, ext="pgm")
    print(f"wrote {len(noisy)} noisy frames (sigma2={cfg.sigma2}) to {out_dir}")
    return EXIT_OK


def _run_tracking(cfg: RunConfig, in_dir: Path, features_path: Path):
    frames = _load_frames(cfg, in_dir)
    try:
        ids, centers, labels = _initial_features(features_path)
    except TrackIOError as exc:
        raise CliError("missing-input", EXIT_MISSING, str(exc)) from None
    fs0 = FeatureSet(centers, (cfg.patch - 1) // 2)
    results = track_sequence(frames, fs0, cfg.tracker_config())
    positions = positions_from_results(centers, results)
    status = _status_matrix(results, fs0.n)
    return frames, ids, labels, results, positions, status


def cmd_track(args) -> int:
    cfg = build_run_config(args)
    in_dir = _require_dir(args.in_dir, "input sequence")
    features_path = _require_file(args.features_csv or (in_dir / "truth.csv"), "initial feature CSV")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    frames, ids, _, results, positions, status = _run_tracking(cfg, in_dir, features_path)
    write_tracks_csv(out_dir / "tracks.csv", TrackTable(ids=ids, positions=positions, status=status))
    _dump_effective_config(cfg, out_dir)
    if cfg.method in ("l1klt", "multibody"):
        lines = ["frame,iteration,residual_m,residual_W,residual_Z,objective,rho"]
        for t, res in enumerate(results):
            d = res.final_admm
            if d is None:
                continue
            for i in range(d.n_iter):
                lines.append(
                    f"{t + 1},{i},{d.residual_m[i]:.12e},{d.residual_W[i]:.12e},"
                    f"{d.residual_Z[i]:.12e},{d.objective[i]:.12e},{d.rho[i]:.12e}"
                )
        atomic_write_text(out_dir / "diagnostics.csv", "\n".join(lines) + "\n")
    if cfg.overlay:
        _write_overlays(out_dir, frames, positions, status)
    n_lost = int(np.sum(status[-1] == LOST))
    print(f"tracked {ids.size} features over {len(frames)} frames ({n_lost} lost) -> {out_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = build_run_config(args)
    tracks_path = _require_file(args.tracks, "tracks CSV")
    truth_path = _require_file(args.truth, "ground-truth CSV")
    try:
        tracks = read_tracks_csv(tracks_path)
        truth = read_tracks_csv(truth_path)
        report = evaluate_tracks(tracks, truth, cfg.eps, include_occluded=args.include_occluded)
    except TrackIOError as exc:
        raise CliError("data-mismatch", EXIT_MISMATCH, str(exc)) from None
    print(report.table())
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_report_json(out_dir / "report.json", report.to_dict())
    return EXIT_OK


def cmd_segment(args) -> int:
    cfg = build_run_config(args)
    in_dir = _require_dir(args.in_dir, "input sequence")
    features_path = _require_file(args.features_csv or (in_dir / "truth.csv"), "initial feature CSV")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.method = "multibody"
    frames, ids, truth_labels, results, positions, status = _run_tracking(
        cfg, in_dir, features_path
    )
    if cfg.k < 1 or cfg.k > ids.size:
        raise CliError("data-mismatch", EXIT_MISMATCH, f"cannot split {ids.size} tracks into {cfg.k} motions")
    rows = []
    errors = []
    for t, res in enumerate(results):
        labels_full = np.full(ids.size, -1, dtype=int)
        if res.C is not None and res.active_ids.size >= cfg.k:
            S = affinity_from_C(res.C)
            labels = spectral_cluster(S, cfg.k, seed=cfg.seed)
            labels_full[res.active_ids] = labels
            if truth_labels is not None:
                active = res.active_ids
                errors.append(segmentation_error(labels, truth_labels[active]))
        for j, tid in enumerate(ids):
            rows.append((t + 1, int(tid), int(labels_full[j])))
    lines = ["frame,track_id,label"] + [f"{f},{tid},{lab}" for f, tid, lab in rows]
    atomic_write_text(out_dir / "labels.csv", "\n".join(lines) + "\n")
    # Final-pair labels in the plain track_id,label format as well.
    final_labels = np.full(ids.size, -1, dtype=int)
    res = results[-1]
    if res.C is not None and res.active_ids.size >= cfg.k:
        final_labels[res.active_ids] = spectral_cluster(
            affinity_from_C(res.C), cfg.k, seed=cfg.seed
        )
    write_labels_csv(out_dir / "labels_final.csv", ids, final_labels)
    _dump_effective_config(cfg, out_dir)
    payload = {"k": cfg.k, "n_pairs": len(results)}
    if errors:
        payload["per_pair_error"] = errors
        payload["average_error"] = float(np.mean(errors))
        print(f"segmentation error: {float(np.mean(errors)):.4f} over {len(errors)} frame pairs")
    else:
        print(f"segmented {len(results)} frame pairs (no truth labels given)")
    write_report_json(out_dir / "segmentation.json", payload)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--method", choices=("klt", "l1klt", "multibody"), default=None)
    p.add_argument("--patch", type=int, default=None, help="odd patch size in px (default 7)")
    p.add_argument("--levels", type=int, default=None, help="pyramid levels (default 4)")
    p.add_argument("--gamma", type=float, default=None, help="data term weight")
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="outlier term weight")
    p.add_argument("--sigma2", type=float, default=None, help="Gaussian noise variance")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--eps", type=float, default=None, help="evaluation drift tolerance in px")
    p.add_argument("--eps-admm", dest="eps_admm", type=float, default=None)
    p.add_argument("--rho0", type=float, default=None)
    p.add_argument("--rho-max", dest="rho_max", type=float, default=None)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--max-admm-iter", dest="max_admm_iter", type=int, default=None)
    p.add_argument("--max-taylor", dest="max_taylor", type=int, default=None)
    p.add_argument("--eps-outer", dest="eps_outer", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mbtrack",
        description="Segmentation-free multi-body feature tracking and motion segmentation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic multi-body sequence")
    _add_common(p)
    p.add_argument("--preset", choices=PRESETS, default=None)
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--features", dest="features", type=int, default=None, help="features per body")
    p.add_argument("--size", type=int, default=None, help="frame size in px")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("noise", help="inject Gaussian noise into a sequence")
    _add_common(p)
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_noise)

    p = sub.add_parser("track", help="track features through a sequence")
    _add_common(p)
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument(
        "--features", dest="features_csv", default=None,
        help="initial feature CSV (default <in>/truth.csv)",
    )
    p.add_argument("--out", required=True)
    p.add_argument("--overlay", action="store_true", default=None)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="count tracking errors against ground truth")
    _add_common(p)
    p.add_argument("--tracks", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--include-occluded", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("segment", help="track and segment motions frame by frame")
    _add_common(p)
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument(
        "--features", dest="features_csv", default=None,
        help="initial feature CSV (default <in>/truth.csv)",
    )
    p.add_argument("--k", type=int, default=None, help="number of motions")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_segment)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except CliError as exc:
        print(f"mbtrack: error[{exc.kind}]: {exc}", file=sys.stderr)
        return exc.code
    except (TrackIOError, ImageError, SynthError) as exc:
        print(f"mbtrack: error[input]: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except Exception as exc:  # pragma: no cover - unexpected
        print(f"mbtrack: error[internal]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
