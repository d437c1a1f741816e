"""Command-line entry point: ``semsound run`` and ``semsound inspect``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from .coordinator import Coordinator, DeviceRegistration, RoundResult
from .dsp import write_wav
from .errors import SemSoundError
from .kg import KnowledgeGraph, load_kg
from .scenario import DeviceSpec, ScenarioConfig, load_scenario
from .sync import SenderConfig, SessionConfig, SyncReport, compute_metrics, run_session

logger = logging.getLogger(__name__)


@dataclass
class RunOutput:
    reports: list[SyncReport] = field(default_factory=list)
    files: list[Path] = field(default_factory=list)
    status: int = 0


def _f(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def _listener_kg(config: ScenarioConfig, global_kg: KnowledgeGraph) -> KnowledgeGraph:
    role = config.listener.role
    if role is None:
        return global_kg
    roots = [role] + [e for e, _ in config.listener.profile.targets if e in global_kg]
    return global_kg.extract_local(roots, config.policy.hop_limit)


def _sender_kg(dev: DeviceSpec, local: KnowledgeGraph, global_kg: KnowledgeGraph) -> KnowledgeGraph:
    """Role-local knowledge plus the sound entities the device itself captures."""
    kg = local
    for ev in dev.events:
        if ev.entity not in kg:
            kg = kg.add_entity(ev.entity, global_kg.entity(ev.entity).category)
    return kg


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[object]]) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def run(config: ScenarioConfig, out_dir: str | Path, audio: bool = False) -> RunOutput:
    """Run every round of a scenario and write its report, traces and (optionally) audio."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = RunOutput()

    coordinator = Coordinator(config.global_kg, config.policy)
    for dev in config.devices:
        coordinator.register(DeviceRegistration(dev.device_id, dev.role, dev.private_kg))
    state: RoundResult = coordinator.run_round(0.0)
    listener_kg = _listener_kg(config, state.global_kg)
    round_length = max(dev.length for dev in config.devices)
    scenes = [dev.scene() for dev in config.devices]

    report_blocks: list[str] = []
    delivery_rows: list[list[object]] = []
    frame_rows: list[list[object]] = []
    feedback_rows: list[list[object]] = []
    n_dev = len(config.devices)

    for round_index in range(1, config.rounds + 1):
        senders = tuple(
            SenderConfig(
                dev.device_id,
                dev.scene(),
                dev.channel,
                _sender_kg(dev, state.locals[dev.device_id], state.global_kg),
                state.role_filters[dev.device_id],
            )
            for dev in config.devices
        )
        session = SessionConfig(
            senders=senders,
            profile=config.listener.profile,
            listener_kg=listener_kg,
            latency_budget=config.latency_budget,
            q=config.q,
            seed=config.seed,
            sample_rate=config.sample_rate,
            frame_length=config.frame_length,
            hop=config.hop,
            render_audio=audio,
        )
        trace = run_session(session)
        report = compute_metrics(trace, scenes, config.listener.profile, listener_kg)
        result.reports.append(report)

        for i, stream in enumerate(trace.streams):
            frame_id = (round_index - 1) * n_dev + i
            frame_rows.append([frame_id, round_index, stream.sender_id])
            for rec in sorted(stream.records, key=lambda r: r.seq):
                delivery_rows.append(
                    [frame_id, rec.seq, rec.status.value, _f(rec.send_time), _f(rec.arrival_time), rec.received_entity or ""]
                )
            result.files.append(_write_tokens(out, round_index, stream))
        if audio:
            path = out / f"listener_r{round_index}.wav"
            write_wav(path, trace.output)
            result.files.append(path)

        for ev in config.feedback.get(round_index, ()):
            coordinator.submit(ev)
            feedback_rows.append([_f(ev.time), ev.listener_id, *ev.key, ev.verdict])
        update = coordinator.maybe_update(round_index * round_length)
        if update is not None:
            state = update
            listener_kg = _listener_kg(config, state.global_kg)
        block = [f"round_index={round_index}\n", report.to_text()]
        block.append(f"edges_updated={update.edges_updated if update else 0}\n")
        block.append(f"devices_served={len(update.locals) if update else 0}\n")
        report_blocks.append("".join(block))

    report_path = out / "report.txt"
    report_path.write_text("\n".join(report_blocks), encoding="utf-8")
    deliveries = out / "deliveries.csv"
    _write_csv(
        deliveries,
        ["frame_id", "seq", "status", "send_time_s", "arrival_time_s", "received_entity"],
        delivery_rows,
    )
    frames = out / "frames.csv"
    _write_csv(frames, ["frame_id", "round", "device"], frame_rows)
    feedback = out / "feedback.csv"
    _write_csv(feedback, ["time_s", "listener_id", "head", "relation", "tail", "verdict"], feedback_rows)
    result.files[:0] = [report_path, deliveries, frames, feedback]
    missing = [p for p in result.files if not p.exists()]
    if missing:
        raise OSError(f"declared output not written: {missing[0]}")
    return result


def _write_tokens(out: Path, round_index: int, stream) -> Path:
    path = out / f"tokens_r{round_index}_{stream.sender_id}.csv"
    rows = [
        [tok.seq, tok.entity, tok.kind.value, _f(tok.onset), _f(tok.duration), _f(tok.salience), stream.status_of(tok.seq).value]
        for tok in stream.tokens
    ]
    _write_csv(path, ["seq", "entity", "kind", "onset_s", "duration_s", "salience", "status"], rows)
    return path


def inspect_kg(path: str | Path, source: str, target: str) -> str:
    kg = load_kg(path)
    value = kg.relevance(source, target)
    lines = [f"relevance {source} -> {target} = {value!r}"]
    steps = kg.best_path(source, target)
    if steps is None:
        lines.append("no path")
    elif not steps:
        lines.append(f"path: {source}")
    else:
        parts = [source] + [f"-[{t.relation} {t.prob!r}]-> {t.tail}" for t in steps]
        lines.append("path: " + " ".join(parts))
    return "\n".join(lines) + "\n"


def _run_one(scenario: str, out_dir: str, seed: int | None, audio: bool) -> int:
    config = load_scenario(scenario)
    if seed is not None:
        config = replace(config, seed=seed)
    run(config, out_dir, audio)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semsound", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one or more scenario files")
    p_run.add_argument("scenario", nargs="+")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p_run.add_argument("--audio", action="store_true", help="write rendered stereo WAV per round")
    p_run.add_argument("--jobs", type=int, default=1, help="parallel scenarios (independent runs)")

    p_inspect = sub.add_parser("inspect", help="relevance and best path between two KG entities")
    p_inspect.add_argument("kg_file")
    p_inspect.add_argument("--from", dest="source", required=True)
    p_inspect.add_argument("--to", dest="target", required=True)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "inspect":
            sys.stdout.write(inspect_kg(args.kg_file, args.source, args.target))
            return 0
        if len(args.scenario) == 1:
            return _run_one(args.scenario[0], args.out, args.seed, args.audio)
        jobs = [
            (s, str(Path(args.out) / Path(s).stem), args.seed, args.audio) for s in args.scenario
        ]
        if args.jobs > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                codes = list(pool.map(_run_one, *zip(*jobs)))
        else:
            codes = [_run_one(*job) for job in jobs]
        return max(codes)
    except (SemSoundError, OSError, ValueError, KeyError) as exc:
        message = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"error: {type(exc).__name__}: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
