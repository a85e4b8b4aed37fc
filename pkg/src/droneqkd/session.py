"""End-to-end session: physical simulation, two protocol endpoints, audit.

Each party runs a sequential state machine over an ordered byte stream. The
physical layer is a deterministic function of the seeds, so in socket mode
both processes simulate it and each keeps only its own view: the transmitter
sees its pulse record, the receiver sees SYNC and detector time tags.

Per window the exchange is::

    R->T BASIS_ANNOUNCE   T->R MATCH_SET    R->T SAMPLE_SEED
    R->T SAMPLE_BITS      T->R SAMPLE_BITS  T->R TALLY_REPORT

then, for every full block of key bits, ``EC_SYNDROME`` (T), ``EC_HASH``
(R: digest or failure), ``EC_HASH`` (T: match or mismatch) and ``PA_SEED`` (T).
"""
from __future__ import annotations

import hashlib
import logging
import socket
import threading
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import rng as rngmod
from .channel import ArrivalBlock, ChannelState, background_events, transmit_block
from .config import RunConfig
from .core import IntensityClass
from .decoy import DecoyEstimate, EstimationError, Tally, estimate_from_tallies, secure_key_length
from .detector import DetectionBlock, apply_dead_time, dark_counts, detect_block, gate_filter
from .framing import Frame, FrameError, encode_frame, read_frame
from .messages import (Abort, BasisAnnounce, EcHash, EcSyndrome, MatchSet, Message, PaSeed,
                       SampleBits, SampleSeed, TallyReport, decode_payload)
from .metrics import Chunk
from .postprocessing.hashing import LEAK_BITS, poly_hash
from .postprocessing.keyblock import BlockStatus, KeyBlock
from .postprocessing.ldpc import DecodeFailure, build_code, check_bits_for, decode, syndrome
from .postprocessing.toeplitz import toeplitz_extract
from .sifting import (ProtocolError, SiftedBlock, detected_counts, disclosed_positions,
                      sample_split, sift, sift_transmitter, tally)
from .timesync import ClockModel, assign_gates, recover_clock
from .tracking import run_tracking
from .transmitter import PulseBlock, generate_block

log = logging.getLogger(__name__)

TRANSMITTER = "transmitter"
RECEIVER = "receiver"


class ProtocolAbort(RuntimeError):
    """The session ended with an ABORT frame; ``reason`` is its text."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


# ---------------------------------------------------------------- physical layer

@dataclass(frozen=True, eq=False)
class ReceiverRaw:
    window: int
    events: DetectionBlock
    sync_ticks: np.ndarray


class PhysicalLayer:
    """Seeded drone-to-ground simulation, one window at a time.

    With ``pointing=False`` the link has constant loss (no tracking modulation).
    """

    def __init__(self, cfg: RunConfig, pointing: bool = True):
        self.cfg = cfg
        seeds = cfg.seeds
        self.drone = self.ground = None
        if pointing:
            self.drone = run_tracking(cfg.drone, cfg.duration_s, rngmod.stream(
                seeds.channel, "drone-tracking").integers(2 ** 63))
            self.ground = run_tracking(cfg.ground, cfg.duration_s, rngmod.stream(
                seeds.channel, "ground-tracking").integers(2 ** 63))
        ch = cfg.channel
        self.channel = ChannelState(cfg.budget, ch.extinction_ratio, ch.background_rate,
                                    ch.timing_jitter_sigma, self.drone, self.ground)
        self._cache: Dict[int, tuple] = {}
        self._lock = threading.Lock()

    def gate_range(self, w: int):
        n = self.cfg.gates_per_window
        return w * n, n

    def _simulate(self, w: int):
        cfg, seeds = self.cfg, self.cfg.seeds
        start, n = self.gate_range(w)
        period = cfg.params.period
        pulses, sync = generate_block(rngmod.stream(seeds.transmitter, "pulses", w), cfg.params,
                                      n, start, cfg.channel.source_jitter_sigma)
        gen_ch = rngmod.stream(seeds.channel, "photons", w)
        arrivals = transmit_block(pulses, self.channel, gen_ch)
        delay = self.channel.propagation_delay
        t0, t1 = start * period + delay, (start + n) * period + delay
        if cfg.channel.background_rate > 0:
            arrivals = ArrivalBlock.concat([arrivals, background_events(gen_ch, self.channel,
                                                                        t0, t1)])
        gen_rx = rngmod.stream(seeds.receiver, "detectors", w)
        det = cfg.detector
        clicks = [detect_block(arrivals, det, gen_rx, cfg.clock)]
        if det.dark_rate > 0:
            clicks.append(dark_counts(gen_rx, det, t0, t1, cfg.clock))
        events = apply_dead_time(DetectionBlock.merge(clicks), det.dead_time, det.tdc_resolution)

        # SYNC: one strong classical pulse per `divider` gates through the same optics
        sel = np.arange(0, n, cfg.sync.divider)
        gen_sync = rngmod.stream(seeds.channel, "sync", w)
        kept = sel[gen_sync.random(sel.size) >= cfg.sync.loss_probability]
        emit = (start + kept) * period + sync.jitter[kept]
        jitter = gen_sync.normal(0.0, cfg.sync.jitter_sigma, kept.size) \
            if cfg.sync.jitter_sigma > 0 else 0.0
        sync_ticks = cfg.clock.to_ticks(emit + delay + jitter, det.tdc_resolution)
        return pulses, ReceiverRaw(w, events, sync_ticks)

    def _get(self, w: int, slot: int, keep: bool):
        with self._lock:
            entry = self._cache.get(w)
            if entry is None:
                entry = [*self._simulate(w), 2 if keep else 1]
                self._cache[w] = entry
            value = entry[slot]
            entry[2] -= 1
            if entry[2] <= 0:
                del self._cache[w]
            return value

    def transmitter_view(self, w: int, shared: bool = False) -> PulseBlock:
        return self._get(w, 0, shared)

    def receiver_view(self, w: int, shared: bool = False) -> ReceiverRaw:
        return self._get(w, 1, shared)

    def tracking_chunk(self, w: int):
        if self.drone is None:
            return (0.0, 0.0, 0.0, 0.0), (0, 0)
        lo, hi = w * self.cfg.window_s, (w + 1) * self.cfg.window_s
        d, g = self.drone.window(lo, hi), self.ground.window(lo, hi)
        sq = (float(np.sum(d.error_x ** 2)), float(np.sum(d.error_y ** 2)),
              float(np.sum(g.error_x ** 2)), float(np.sum(g.error_y ** 2)))
        return sq, (len(d), len(g))


def receiver_clock_model(raw: ReceiverRaw, cfg: RunConfig,
                         previous: Optional[ClockModel]) -> ClockModel:
    """Fit this window's SYNC train; gate numbering continues from ``previous``."""
    period = cfg.params.period
    divider = cfg.sync.divider
    t = raw.sync_ticks * cfg.detector.tdc_resolution
    first = float(t.min())
    if previous is None:
        first_gate = 0
    else:
        g, _ = assign_gates(np.array([first]), previous)
        first_gate = int(g[0])
    m = recover_clock(t, period * divider, origin=first, origin_gate=0)
    return ClockModel(m.offset, m.drift, period, m.fit_residual_rms, first_gate)


def receiver_detections(raw: ReceiverRaw, clock: ClockModel, cfg: RunConfig,
                        start: int, n: int):
    """Gate-assigned, squashed detections: (gates, bases, bits) sorted by gate.

    Several clicks in one gate are reduced to one chosen uniformly at random
    among the clicked detectors.
    """
    events, gates = gate_filter(raw.events, clock, cfg.params.gate_width,
                                cfg.detector.tdc_resolution)
    inside = (gates >= start) & (gates < start + n)
    gates, det = gates[inside], events.detector[inside].astype(np.int64)
    tiebreak = rngmod.stream(cfg.seeds.receiver, "squash", raw.window).random(gates.size)
    order = np.lexsort((tiebreak, gates))
    gates, det = gates[order], det[order]
    first = np.ones(gates.size, dtype=bool)
    first[1:] = gates[1:] != gates[:-1]
    gates, det = gates[first], det[first]
    return gates, (det // 2).astype(np.int8), (det % 2).astype(np.int8)


# ---------------------------------------------------------------- framed link

class Link:
    """Sequenced, session-tagged frames over a connected stream socket."""

    def __init__(self, sock: socket.socket, session_id: bytes, role: str):
        self.sock = sock
        self.session_id = session_id
        self.role = role
        self.seq_out = 0
        self.seq_in = -1
        self.transcript: List[tuple] = []  # (direction, frame bytes)
        self.frames: List[tuple] = []  # (direction, Message)

    def send(self, msg: Message) -> None:
        data = encode_frame(Frame(msg.frame_type, self.session_id, self.seq_out, msg.encode()))
        self.seq_out += 1
        self.sock.sendall(data)
        self.transcript.append(("out", data))
        self.frames.append(("out", msg))

    def recv(self, expected):
        try:
            frame = read_frame(self.sock)
        except FrameError as exc:
            raise ProtocolAbort(f"{self.role}: bad frame: {exc}") from exc
        data = encode_frame(frame)
        self.transcript.append(("in", data))
        if frame.session_id != self.session_id:
            self.abort("session id mismatch")
        if frame.sequence != self.seq_in + 1:
            self.abort(f"sequence {frame.sequence} after {self.seq_in}")
        self.seq_in = frame.sequence
        try:
            msg = decode_payload(frame.type_tag, frame.payload)
        except FrameError as exc:
            self.abort(f"undecodable {frame.type_tag.name}: {exc}")
        self.frames.append(("in", msg))
        if isinstance(msg, Abort):
            raise ProtocolAbort(msg.reason)
        if not isinstance(msg, expected):
            self.abort(f"expected {expected.__name__}, got {type(msg).__name__}")
        return msg

    def abort(self, reason: str):
        try:
            self.send(Abort(f"{self.role}: {reason}"))
        except OSError:
            pass
        raise ProtocolAbort(f"{self.role}: {reason}")

    def transcript_digest(self) -> str:
        h = hashlib.sha256()
        for direction, data in self.transcript:
            h.update(direction.encode() + data)
        return h.hexdigest()


# ---------------------------------------------------------------- endpoints

@dataclass
class WindowRecord:
    window: int
    sifted_bits: int
    sample_compared: int
    sample_errors: int
    tallies: Dict[IntensityClass, Tally]
    estimate: Optional[DecoyEstimate]
    key_gates: np.ndarray = field(repr=False)
    disclosed_gates: np.ndarray = field(repr=False)


class Endpoint:
    role = ""

    def __init__(self, cfg: RunConfig, phys: PhysicalLayer, link: Link, shared: bool):
        self.cfg = cfg
        self.phys = phys
        self.link = link
        self.shared = shared
        self.windows: List[WindowRecord] = []
        self.cumulative = {c: Tally(0, 0) for c in IntensityClass}
        self.buffer_bits = np.zeros(0, dtype=np.uint8)
        self.buffer_gates = np.zeros(0, dtype=np.int64)
        self.blocks: List[KeyBlock] = []
        self.key_parts: List[np.ndarray] = []
        self.code_seed = rngmod.stream(cfg.seeds.transmitter, "ldpc-code").bytes(32)

    # shared bookkeeping
    def _record_window(self, w, sifted: SiftedBlock, sample, key, tallies, own, peer):
        for c in IntensityClass:
            self.cumulative[c] = self.cumulative[c] + tallies[c]
        try:
            est = estimate_from_tallies(tallies, self.cfg.params)
        except EstimationError:
            est = None
        sig = sifted.intensity[disclosed_positions(sifted, sample)] == IntensityClass.SIGNAL
        errors = np.asarray(own)[sig] != np.asarray(peer)[sig]
        nonvac = int(np.count_nonzero(sifted.intensity != IntensityClass.VACUUM))
        self.windows.append(WindowRecord(w, nonvac, int(sig.sum()), int(errors.sum()),
                                         tallies, est, sifted.gates[key],
                                         sifted.gates[disclosed_positions(sifted, sample)]))
        self.buffer_bits = np.concatenate([self.buffer_bits, sifted.bits[key].astype(np.uint8)])
        self.buffer_gates = np.concatenate([self.buffer_gates, sifted.gates[key]])

    def cumulative_estimate(self) -> Optional[DecoyEstimate]:
        try:
            return estimate_from_tallies(self.cumulative, self.cfg.params)
        except EstimationError:
            return None

    def cumulative_qber(self) -> float:
        t = self.cumulative[IntensityClass.SIGNAL]
        return t.error_rate

    def _next_block(self) -> Optional[KeyBlock]:
        n = self.cfg.postprocessing.block_size
        if self.buffer_bits.size < n:
            return None
        block = KeyBlock(len(self.blocks), self.buffer_bits[:n].copy(),
                         self.buffer_gates[:n].copy())
        self.buffer_bits = self.buffer_bits[n:]
        self.buffer_gates = self.buffer_gates[n:]
        self.blocks.append(block)
        return block

    def _output_length(self, block: KeyBlock) -> int:
        est = self.cumulative_estimate()
        if est is None:
            return 0
        return secure_key_length(block.bits.size, est, block.leak_bits_accounted)

    def _code_for(self, qber: float):
        m = check_bits_for(qber, self.cfg.postprocessing.block_size, self.cfg.ldpc_budget_factor)
        m = min(m, self.cfg.postprocessing.block_size - 1)
        return build_code(self.code_seed, self.cfg.postprocessing.block_size, m,
                          self.cfg.postprocessing.column_weight)

    def run(self) -> None:
        try:
            for w in range(self.cfg.n_windows):
                self.window(w)
        finally:
            try:
                self.link.sock.shutdown(socket.SHUT_WR)
            except OSError:
                pass

    def final_key(self) -> np.ndarray:
        if not self.key_parts:
            return np.zeros(0, dtype=np.uint8)
        return np.concatenate(self.key_parts).astype(np.uint8)


class TransmitterEndpoint(Endpoint):
    role = TRANSMITTER

    def window(self, w: int) -> None:
        link = self.link
        pulses = self.phys.transmitter_view(w, self.shared)
        ann = link.recv(BasisAnnounce)
        if ann.window != w:
            link.abort(f"announcement for window {ann.window}, expected {w}")
        try:
            codes, sifted = sift_transmitter(pulses, ann.gates, ann.bases)
        except ProtocolError as exc:
            link.abort(str(exc))
        sent = tuple(int(v) for v in np.bincount(pulses.intensity, minlength=3)[:3])
        link.send(MatchSet(w, codes, sent))

        seed = link.recv(SampleSeed)
        sample, key = sample_split(sifted, self.cfg.params.sample_fraction, seed.seed)
        disclosed = disclosed_positions(sifted, sample)
        theirs = link.recv(SampleBits)
        if not np.array_equal(theirs.gates, sifted.gates[disclosed]):
            link.abort("disclosed gate set differs")
        own = sifted.bits[disclosed].astype(np.uint8)
        link.send(SampleBits(w, sifted.gates[disclosed], own))
        try:
            tallies = tally(sifted, sent, detected_counts(codes), sample, own, theirs.bits)
        except EstimationError as exc:
            link.abort(str(exc))
        link.send(TallyReport(w, tuple((t.sent, t.detected, t.compared, t.errors)
                                       for t in (tallies[c] for c in IntensityClass))))
        self._record_window(w, sifted, sample, key, tallies, own, theirs.bits)
        while (block := self._next_block()) is not None:
            self.reconcile(block)

    def reconcile(self, block: KeyBlock) -> None:
        link = self.link
        qber = min(max(self.cumulative_qber(), self.cfg.postprocessing.qber_floor), 0.49)
        code = self._code_for(qber)
        syn = syndrome(code, block.bits)
        link.send(EcSyndrome(block.block_id, code.n, qber, self.code_seed, syn))
        block.disclose(syn.size)
        reply = link.recv(EcHash)
        if reply.block_id != block.block_id:
            link.abort("verification for the wrong block")
        if reply.status == EcHash.FAILED:
            block.discard("decode failure")
            return
        if reply.status != EcHash.HASH:
            link.abort("unexpected verification status")
        block.disclose(LEAK_BITS)
        block.advance(BlockStatus.CORRECTED)
        if poly_hash(block.bits, reply.hash_key) != reply.digest:
            link.send(EcHash(block.block_id, EcHash.MISMATCH))
            block.discard("hash mismatch")
            return
        link.send(EcHash(block.block_id, EcHash.MATCH))
        block.advance(BlockStatus.VERIFIED)
        out_len = self._output_length(block)
        pa_seed = rngmod.stream(self.cfg.seeds.transmitter, "pa-seed", block.block_id).bytes(32)
        link.send(PaSeed(block.block_id, out_len, pa_seed))
        block.advance(BlockStatus.AMPLIFIED, toeplitz_extract(pa_seed, block.bits, out_len))
        self.key_parts.append(block.bits)


class ReceiverEndpoint(Endpoint):
    role = RECEIVER

    def __init__(self, *args, **kw):
        super().__init__(*args, **kw)
        self.clock: Optional[ClockModel] = None
        self.clock_models: List[ClockModel] = []

    def window(self, w: int) -> None:
        link, cfg = self.link, self.cfg
        raw = self.phys.receiver_view(w, self.shared)
        start, n = self.phys.gate_range(w)
        self.clock = receiver_clock_model(raw, cfg, self.clock)
        self.clock_models.append(self.clock)
        gates, bases, bits = receiver_detections(raw, self.clock, cfg, start, n)
        link.send(BasisAnnounce(w, gates, bases))
        match = link.recv(MatchSet)
        if match.window != w:
            link.abort(f"match set for window {match.window}, expected {w}")
        try:
            sifted = sift(gates, bases, bits, match.codes)
        except ProtocolError as exc:
            link.abort(str(exc))

        seed = rngmod.stream(cfg.seeds.sampling, "sample-seed", w).bytes(32)
        link.send(SampleSeed(w, seed))
        sample, key = sample_split(sifted, cfg.params.sample_fraction, seed)
        disclosed = disclosed_positions(sifted, sample)
        own = sifted.bits[disclosed].astype(np.uint8)
        link.send(SampleBits(w, sifted.gates[disclosed], own))
        theirs = link.recv(SampleBits)
        if not np.array_equal(theirs.gates, sifted.gates[disclosed]):
            link.abort("disclosed gate set differs")
        try:
            tallies = tally(sifted, match.sent_counts, detected_counts(match.codes), sample,
                            own, theirs.bits)
        except EstimationError as exc:
            link.abort(str(exc))
        report = link.recv(TallyReport)
        mine = tuple((t.sent, t.detected, t.compared, t.errors)
                     for t in (tallies[c] for c in IntensityClass))
        if tuple(map(tuple, report.rows)) != mine:
            link.abort("tally report disagrees with local tally")
        self._record_window(w, sifted, sample, key, tallies, own, theirs.bits)
        while (block := self._next_block()) is not None:
            self.reconcile(block)

    def reconcile(self, block: KeyBlock) -> None:
        link = self.link
        msg = link.recv(EcSyndrome)
        if msg.block_id != block.block_id or msg.n != block.bits.size:
            link.abort("syndrome for an unexpected block")
        if msg.code_seed != self.code_seed:
            link.abort("unexpected code seed")
        code = self._code_for(msg.qber_prior)
        if msg.syndrome.size != code.m:
            link.abort("syndrome length does not match the code budget")
        block.disclose(msg.syndrome.size)
        try:
            corrected, _ = decode(code, block.bits, msg.syndrome, msg.qber_prior)
        except DecodeFailure:
            link.send(EcHash(block.block_id, EcHash.FAILED))
            block.discard("decode failure")
            return
        block.advance(BlockStatus.CORRECTED, corrected)
        hash_key = rngmod.stream(self.cfg.seeds.receiver, "hash-key", block.block_id).bytes(8)
        link.send(EcHash(block.block_id, EcHash.HASH, hash_key, poly_hash(block.bits, hash_key)))
        block.disclose(LEAK_BITS)
        verdict = link.recv(EcHash)
        if verdict.status == EcHash.MISMATCH:
            block.discard("hash mismatch")
            return
        if verdict.status != EcHash.MATCH:
            link.abort("unexpected verification verdict")
        block.advance(BlockStatus.VERIFIED)
        pa = link.recv(PaSeed)
        if pa.block_id != block.block_id:
            link.abort("privacy amplification seed for the wrong block")
        if pa.output_len != self._output_length(block):
            link.abort(f"output length {pa.output_len} differs from local bound")
        block.advance(BlockStatus.AMPLIFIED, toeplitz_extract(pa.seed, block.bits,
                                                              pa.output_len))
        self.key_parts.append(block.bits)


# ---------------------------------------------------------------- orchestration

def session_id_for(cfg: RunConfig) -> bytes:
    s = cfg.seeds
    return rngmod.stream(s.transmitter, "session-id", s.receiver).bytes(8)


def _run_endpoint(ep: Endpoint, errors: list) -> None:
    try:
        ep.run()
    except BaseException as exc:  # surfaced by the orchestrator
        errors.append((ep.role, exc))


def run_pair(cfg: RunConfig, phys: Optional[PhysicalLayer] = None):
    """Run both endpoints in one process over a socket pair; returns (tx, rx)."""
    phys = phys or PhysicalLayer(cfg)
    a, b = socket.socketpair()
    sid = session_id_for(cfg)
    tx = TransmitterEndpoint(cfg, phys, Link(a, sid, TRANSMITTER), shared=True)
    rx = ReceiverEndpoint(cfg, phys, Link(b, sid, RECEIVER), shared=True)
    errors: list = []
    threads = [threading.Thread(target=_run_endpoint, args=(ep, errors), daemon=True)
               for ep in (tx, rx)]
    try:
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    finally:
        a.close()
        b.close()
    if errors:
        aborts = [e for _, e in errors if isinstance(e, ProtocolAbort)]
        if aborts:
            raise aborts[0]
        raise errors[0][1]
    return tx, rx


def run_endpoint(cfg: RunConfig, role: str, sock: socket.socket) -> Endpoint:
    """One party of a two-process session over an already connected socket."""
    cls = TransmitterEndpoint if role == TRANSMITTER else ReceiverEndpoint
    ep = cls(cfg, PhysicalLayer(cfg), Link(sock, session_id_for(cfg), role), shared=False)
    ep.run()
    return ep


def chunks_for(ep: Endpoint, phys: PhysicalLayer) -> List[Chunk]:
    cfg = ep.cfg
    out = []
    for rec in ep.windows:
        sq, n = phys.tracking_chunk(rec.window)
        secure = rec.estimate.R_per_second * cfg.window_s if rec.estimate else 0.0
        out.append(Chunk(rec.window * cfg.window_s, (rec.window + 1) * cfg.window_s,
                         rec.sifted_bits, rec.sample_compared, rec.sample_errors, secure, sq, n))
    return out


# ---------------------------------------------------------------- audit

def audit_endpoint(ep: Endpoint) -> dict:
    """Frame-hygiene and leak-accounting checks on one party's transcript."""
    key_gates = {rec.window: rec.key_gates for rec in ep.windows}
    leaks_in_frames: Dict[int, int] = {}
    disclosed_key_bits = 0
    ec_started = False
    bits_before_ec = 0
    for _, msg in ep.link.frames:
        if isinstance(msg, SampleBits):
            hit = int(np.isin(msg.gates, key_gates.get(msg.window, [])).sum())
            disclosed_key_bits += hit
            if not ec_started:
                bits_before_ec += hit
        elif isinstance(msg, EcSyndrome):
            ec_started = True
            leaks_in_frames[msg.block_id] = leaks_in_frames.get(msg.block_id, 0) \
                + int(msg.syndrome.size)
        elif isinstance(msg, EcHash) and msg.status == EcHash.HASH:
            leaks_in_frames[msg.block_id] = leaks_in_frames.get(msg.block_id, 0) + LEAK_BITS
    mismatched = [b.block_id for b in ep.blocks
                  if b.leak_bits_accounted != leaks_in_frames.get(b.block_id, 0)]
    return {
        "role": ep.role,
        "frames": len(ep.link.transcript),
        "key_bits_disclosed_before_ec": bits_before_ec,
        "key_bits_disclosed_total": disclosed_key_bits,
        "leak_bits_in_frames": int(sum(leaks_in_frames.values())),
        "leak_bits_accounted": int(sum(b.leak_bits_accounted for b in ep.blocks)),
        "leak_mismatch_blocks": mismatched,
        "transcript_sha256": ep.link.transcript_digest(),
    }


def audit_pair(tx: Endpoint, rx: Endpoint) -> dict:
    report = {"transmitter": audit_endpoint(tx), "receiver": audit_endpoint(rx)}
    unequal = [a.block_id for a, b in zip(tx.blocks, rx.blocks)
               if a.status == BlockStatus.AMPLIFIED and not np.array_equal(a.bits, b.bits)]
    status_differs = [a.block_id for a, b in zip(tx.blocks, rx.blocks) if a.status != b.status]
    index_differs = [rec.window for rec, other in zip(tx.windows, rx.windows)
                     if not np.array_equal(rec.key_gates, other.key_gates)]
    report["blocks"] = len(tx.blocks)
    report["blocks_amplified"] = sum(b.status == BlockStatus.AMPLIFIED for b in tx.blocks)
    report["blocks_discarded"] = sum(b.status == BlockStatus.DISCARDED for b in tx.blocks)
    report["amplified_blocks_unequal"] = unequal
    report["block_status_differs"] = status_differs
    report["key_index_sets_differ"] = index_differs
    report["final_keys_identical"] = bool(np.array_equal(tx.final_key(), rx.final_key()))
    report["passed"] = (
        not unequal and not status_differs and not index_differs
        and report["final_keys_identical"]
        and all(report[r]["key_bits_disclosed_before_ec"] == 0
                and report[r]["key_bits_disclosed_total"] == 0
                and not report[r]["leak_mismatch_blocks"]
                and report[r]["leak_bits_in_frames"] == report[r]["leak_bits_accounted"]
                for r in ("transmitter", "receiver"))
    )
    return report


@dataclass
class SessionResult:
    config: RunConfig
    transmitter: Endpoint
    receiver: Endpoint
    metrics: list
    chunks: List[Chunk]
    estimate: Optional[DecoyEstimate]
    audit: dict
    key_files: dict = field(default_factory=dict)

    @property
    def total_sifted_bits(self) -> int:
        return sum(rec.sifted_bits for rec in self.transmitter.windows)

    @property
    def sampled_qber(self) -> float:
        return self.transmitter.cumulative_qber()

    def summary(self) -> dict:
        tx = self.transmitter
        duration = self.config.n_windows * self.config.window_s
        key_bits = int(tx.final_key().size)
        est = self.estimate
        return {
            "windows": len(tx.windows),
            "total_sifted_bits": self.total_sifted_bits,
            "sifted_rate_hz": self.total_sifted_bits / duration if duration else 0.0,
            "sampled_qber": self.sampled_qber,
            "secure_rate_hz_asymptotic": est.R_per_second if est else 0.0,
            "final_key_bits": key_bits,
            "final_key_rate_hz": key_bits / duration if duration else 0.0,
            "blocks": len(tx.blocks),
            "blocks_amplified": self.audit.get("blocks_amplified", 0),
            "blocks_discarded": self.audit.get("blocks_discarded", 0),
        }


def run_session(cfg: RunConfig) -> SessionResult:
    """Full in-process session with both parties; see ``run_endpoint`` for two processes."""
    from .metrics import emit_metrics

    phys = PhysicalLayer(cfg)
    tx, rx = run_pair(cfg, phys)
    chunks = chunks_for(tx, phys)
    metrics = emit_metrics(chunks, cfg.window_s)
    return SessionResult(cfg, tx, rx, metrics, chunks, tx.cumulative_estimate(),
                         audit_pair(tx, rx))
