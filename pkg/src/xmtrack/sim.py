"""Synthetic cross-modal sequence generator and end-to-end tracking harness.

A Scenario scripts the ground-truth motion (straight line or fixed-rate
turn), a modality schedule (RGB/NIR segments), over-exposure windows and an
observation-noise model.  ``generate`` renders 64x64 synthetic frames whose
channel statistics carry the modality signal (color frames have distinct
per-channel means, single-band frames are channel-collapsed, invalid frames
are almost entirely white) and emits noisy stub-tracker observations with a
confidence score.

``run`` replays a generated sequence through the full pipeline — classify,
(toy) feature adaptation, observation, motion filter — under one of four
motion configurations used by the ablation harness:

* ``off``  raw observations; box frozen during invalid windows
* ``kf``   constant-velocity filter, fixed observation noise, no inflation
* ``ekf``  coordinated-turn filter (scenario turn rate), fixed noise
* ``ctp``  coordinated-turn + reliability-weighted noise + Q inflation
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .adapter import (
    DEFAULT_DIM,
    DEFAULT_SEARCH_TOKENS,
    DEFAULT_TEMPLATE_TOKENS,
    AdapterStack,
    apply_stack,
    random_adapter_stack,
)
from .ctp import (
    BBox,
    FrameInput,
    MotionKind,
    MotionModel,
    SessionConfig,
    TrackerSession,
    DEFAULT_EPSILON,
    DEFAULT_THETA,
    turn_transition,
)
from .metrics import TrackRun, cle, iou
from .state_switch import (
    DEFAULT_RHO,
    Image,
    SwitchWeights,
    TriState,
    TriStateDecision,
    classify,
    separator_switch_weights,
)

# Rendering constants.  Color frames get distinct per-channel means; the
# single-band frames replicate one luminance field across all channels, so a
# channel-difference statistic separates the two by construction.  Pixels are
# clipped below the white level so only invalid frames trip the detector.
RGB_CHANNEL_MEANS = (140.0, 95.0, 55.0)
NIR_MEAN = 120.0
PIXEL_NOISE = 12.0
PIXEL_MAX = 245
INVALID_WHITE_FRACTION = 0.94
TARGET_BOOST = 40.0

MODALITIES = ("rgb", "nir")


def _check_windows(windows, frames, who):
    prev_end = None
    for start, end in sorted(windows):
        if not (0 <= start < end <= frames):
            raise ValueError(f"{who}: window [{start}, {end}) outside [0, {frames})")
        if prev_end is not None and start < prev_end:
            raise ValueError(f"{who}: overlapping windows at {start}")
        prev_end = end


@dataclass
class Scenario:
    """Deterministic script for one synthetic sequence."""

    name: str
    frames: int
    frame_width: int = 512
    frame_height: int = 512
    image_width: int = 64
    image_height: int = 64
    initial_box: tuple = (256.0, 256.0, 30.0, 30.0)  # (cx, cy, w, h)
    velocity: tuple = (4.0, 0.0)  # px/frame
    turn_rate: float = 0.0  # rad/frame; 0 = straight line
    modality_schedule: list = field(default_factory=list)  # (start, end, "rgb"|"nir")
    invalid_windows: list = field(default_factory=list)  # (start, end), half-open
    sigma: float = 2.0  # observation noise, px
    switch_radius: int = 2  # frames around a modality switch with damped confidence
    switch_noise_boost: float = 1.0  # observation noise multiplier near switches
    seed: int = 0

    def __post_init__(self):
        if self.frames <= 0:
            raise ValueError("Scenario: frames must be positive")
        if self.sigma < 0:
            raise ValueError("Scenario: sigma must be non-negative")
        if self.switch_noise_boost < 1.0:
            raise ValueError("Scenario: switch_noise_boost must be >= 1")
        self.modality_schedule = [
            (int(s), int(e), str(m)) for s, e, m in self.modality_schedule
        ]
        self.invalid_windows = [(int(s), int(e)) for s, e in self.invalid_windows]
        for _, _, mod in self.modality_schedule:
            if mod not in MODALITIES:
                raise ValueError(f"Scenario: unknown modality {mod!r}")
        _check_windows(
            [(s, e) for s, e, _ in self.modality_schedule], self.frames, "Scenario schedule"
        )
        _check_windows(self.invalid_windows, self.frames, "Scenario invalid windows")

    # -- per-frame schedule queries ------------------------------------

    def scheduled_modality(self, t: int) -> str:
        for start, end, mod in self.modality_schedule:
            if start <= t < end:
                return mod
        return "rgb"  # gaps between segments default to RGB

    def is_invalid(self, t: int) -> bool:
        return any(start <= t < end for start, end in self.invalid_windows)

    def switch_frames(self) -> list[int]:
        return [
            t
            for t in range(1, self.frames)
            if self.scheduled_modality(t) != self.scheduled_modality(t - 1)
        ]

    def near_switch(self, t: int) -> bool:
        return any(abs(t - sw) <= self.switch_radius for sw in self.switch_frames())

    def initial_bbox(self) -> BBox:
        cx, cy, w, h = self.initial_box
        return BBox(cx=cx, cy=cy, w=w, h=h)

    def gt_boxes(self) -> list[BBox]:
        """Ground-truth path: the same discrete turn model the filter uses."""
        f = turn_transition(self.turn_rate)
        x = np.array(
            [
                self.initial_box[0],
                self.initial_box[1],
                self.initial_box[2],
                self.initial_box[3],
                self.velocity[0],
                self.velocity[1],
                0.0,
                0.0,
            ]
        )
        boxes = []
        for _ in range(self.frames):
            boxes.append(BBox(cx=x[0], cy=x[1], w=x[2], h=x[3]))
            x = f @ x
        return boxes


@dataclass
class FrameRecord:
    index: int
    image: Image
    gt: BBox
    modality: str  # scheduled modality (rgb/nir), even under an invalid window
    valid: bool
    observed: BBox
    s: float


@dataclass
class Sequence:
    scenario: Scenario
    records: list[FrameRecord]


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def _box_to_image_rect(b: BBox, sc: Scenario) -> tuple[int, int, int, int] | None:
    sx = sc.image_width / sc.frame_width
    sy = sc.image_height / sc.frame_height
    x0 = int(math.floor((b.cx - b.w / 2) * sx))
    x1 = int(math.ceil((b.cx + b.w / 2) * sx))
    y0 = int(math.floor((b.cy - b.h / 2) * sy))
    y1 = int(math.ceil((b.cy + b.h / 2) * sy))
    x0, x1 = max(0, x0), min(sc.image_width, x1)
    y0, y1 = max(0, y0), min(sc.image_height, y1)
    if x0 >= x1 or y0 >= y1:
        return None
    return x0, x1, y0, y1


def render_frame(sc: Scenario, t: int, gt: BBox, rng: np.random.Generator) -> Image:
    iw, ih = sc.image_width, sc.image_height
    if sc.is_invalid(t):
        # Over-exposed: white except a fixed fraction of dark survivors.
        flat = np.full(iw * ih, 255, dtype=np.int64)
        n_dark = int(round((1.0 - INVALID_WHITE_FRACTION) * iw * ih))
        dark_idx = rng.choice(iw * ih, size=n_dark, replace=False)
        flat[dark_idx] = 80
        hwc = np.repeat(flat.reshape(ih, iw, 1), 3, axis=2)
        return Image(width=iw, height=ih, channels=3, pixels=hwc.astype(np.uint8))

    rect = _box_to_image_rect(gt, sc)
    if sc.scheduled_modality(t) == "nir":
        # One luminance field replicated across channels (channel-collapsed).
        band = rng.normal(NIR_MEAN, PIXEL_NOISE, (ih, iw))
        if rect:
            x0, x1, y0, y1 = rect
            band[y0:y1, x0:x1] += TARGET_BOOST
        band = np.clip(band, 0, PIXEL_MAX)
        hwc = np.repeat(band.reshape(ih, iw, 1), 3, axis=2)
    else:
        chans = [
            rng.normal(mu, PIXEL_NOISE, (ih, iw)) for mu in RGB_CHANNEL_MEANS
        ]
        if rect:
            x0, x1, y0, y1 = rect
            chans[0][y0:y1, x0:x1] += TARGET_BOOST  # target pops in the red channel
        hwc = np.stack([np.clip(c, 0, PIXEL_MAX) for c in chans], axis=2)
    return Image(width=iw, height=ih, channels=3, pixels=np.rint(hwc).astype(np.uint8))


# ---------------------------------------------------------------------------
# stub appearance tracker
# ---------------------------------------------------------------------------

DIMS_NOISE_SCALE = 0.5  # w/h observation noise relative to center noise


def stub_tracker(
    record_gt: BBox,
    prev_box: BBox | None,
    sigma: float,
    rng: np.random.Generator,
) -> tuple[BBox, float]:
    """Noisy observation of the ground truth plus a confidence score.

    ``prev_box`` is an interface slot for appearance models that need a warm
    start; this stub's noise is centered on the ground truth and ignores it.
    s = clamp(1 - CLE/20, 0, 1): confidence degrades linearly with the
    center error and bottoms out at 0 beyond 20 px.
    """
    noise = rng.normal(0.0, 1.0, 4) * sigma if sigma > 0 else np.zeros(4)
    obs = BBox(
        cx=record_gt.cx + noise[0],
        cy=record_gt.cy + noise[1],
        w=max(1.0, record_gt.w + DIMS_NOISE_SCALE * noise[2]),
        h=max(1.0, record_gt.h + DIMS_NOISE_SCALE * noise[3]),
    )
    s = min(1.0, max(0.0, 1.0 - cle(obs, record_gt) / 20.0))
    return obs, s


def _invalid_observation(sc: Scenario, rng: np.random.Generator) -> BBox:
    # Maximally uninformative: uniform over the frame.  Filters are expected
    # to ignore it; the 'off' baseline freezes instead of consuming it.
    return BBox(
        cx=float(rng.uniform(0, sc.frame_width)),
        cy=float(rng.uniform(0, sc.frame_height)),
        w=float(rng.uniform(5.0, sc.frame_width / 4)),
        h=float(rng.uniform(5.0, sc.frame_height / 4)),
    )


def generate(sc: Scenario) -> Sequence:
    """Render the whole scripted sequence.  Deterministic given the seed."""
    rng = np.random.default_rng(sc.seed)
    gts = sc.gt_boxes()
    records = []
    for t in range(sc.frames):
        image = render_frame(sc, t, gts[t], rng)
        valid = not sc.is_invalid(t)
        if valid:
            sigma_eff = sc.sigma * (sc.switch_noise_boost if sc.near_switch(t) else 1.0)
            observed, s = stub_tracker(gts[t], None, sigma_eff, rng)
            if sc.near_switch(t):
                s *= 0.5  # switching uncertainty damps confidence
        else:
            observed, s = _invalid_observation(sc, rng), 0.0
        records.append(
            FrameRecord(
                index=t,
                image=image,
                gt=gts[t],
                modality=sc.scheduled_modality(t),
                valid=valid,
                observed=observed,
                s=s,
            )
        )
    return Sequence(scenario=sc, records=records)


# ---------------------------------------------------------------------------
# end-to-end harness
# ---------------------------------------------------------------------------

MOTION_PRESETS = ("off", "kf", "ekf", "ctp")


@dataclass
class HarnessConfig:
    motion: str = "ctp"
    rho: float = DEFAULT_RHO
    epsilon: float = DEFAULT_EPSILON
    theta: float = DEFAULT_THETA
    turn_rate: float | None = None  # None: take the scenario's rate (ekf/ctp)
    run_adapter: bool = True
    seed: int = 0  # drives the toy feature stream only

    def __post_init__(self):
        if self.motion not in MOTION_PRESETS:
            raise ValueError(
                f"HarnessConfig: motion {self.motion!r} not one of {MOTION_PRESETS}"
            )


def _session_for(config: HarnessConfig, sc: Scenario) -> SessionConfig | None:
    if config.motion == "off":
        return None
    rate = sc.turn_rate if config.turn_rate is None else config.turn_rate
    if config.motion == "kf":
        motion = MotionModel(MotionKind.CONSTANT_VELOCITY)
    else:
        motion = MotionModel(MotionKind.COORDINATED_TURN, turn_rate=rate)
    return SessionConfig(
        theta=config.theta,
        epsilon=config.epsilon,
        rho=config.rho,
        motion=motion,
        use_reliability=(config.motion == "ctp"),
        inflate_on_invalid=(config.motion == "ctp"),
    )


def classify_sequence(
    seq: Sequence,
    weights: SwitchWeights | None = None,
    rho: float = DEFAULT_RHO,
) -> list[TriStateDecision]:
    """Tri-state decision per frame (weights default to the built-in separator)."""
    w = weights or separator_switch_weights()
    return [
        classify(rec.image, rec.image.features(), w, rho) for rec in seq.records
    ]


def _frame_tags(sc: Scenario, t: int) -> list[str]:
    tags = [sc.scheduled_modality(t)]
    if sc.is_invalid(t):
        tags.append("invalid-window")
    if sc.near_switch(t):
        tags.append("switch")
    return tags


def run(
    seq: Sequence,
    config: HarnessConfig | None = None,
    decisions: list[TriStateDecision] | None = None,
    switch_weights: SwitchWeights | None = None,
) -> TrackRun:
    """Track one generated sequence end to end.

    ``decisions`` may be precomputed (e.g. shared across ablation presets);
    otherwise each frame is classified with ``switch_weights`` (default: the
    built-in separator weights).
    """
    config = config or HarnessConfig()
    sc = seq.scenario
    if decisions is None:
        decisions = classify_sequence(seq, switch_weights, config.rho)
    if len(decisions) != len(seq.records):
        raise ValueError("run: decisions misaligned with sequence")

    b0 = seq.records[0].gt
    session_cfg = _session_for(config, sc)
    session = (
        TrackerSession(b0, sc.frame_width, sc.frame_height, session_cfg)
        if session_cfg is not None
        else None
    )

    # Toy feature stream for the adapter stage.  The features carry no
    # tracking signal; they exercise the NIR-path machinery (including the
    # frozen-template rule) inside the real frame loop.
    feat_rng = np.random.default_rng(config.seed)
    stack: AdapterStack | None = None
    f_dyn = None
    if config.run_adapter:
        stack = random_adapter_stack(feat_rng, layers=2, d=DEFAULT_DIM)
        f_dyn = feat_rng.standard_normal((DEFAULT_TEMPLATE_TOKENS, DEFAULT_DIM))

    preds = [b0]
    tags = [_frame_tags(sc, 0)]
    last_pred = b0
    for t in range(1, len(seq.records)):
        rec = seq.records[t]
        dec = decisions[t]

        if config.run_adapter and dec.state != TriState.INVALID:
            f_sr = feat_rng.standard_normal((DEFAULT_SEARCH_TOKENS, DEFAULT_DIM))
            f_out = apply_stack(f_sr, f_dyn, dec.m, dec.state, stack)
            # dynamic template: slow update from fresh features on valid
            # frames, frozen while the state is invalid
            f_dyn = 0.9 * f_dyn + 0.1 * f_out[: DEFAULT_TEMPLATE_TOKENS, :]

        if session is None:
            if dec.state == TriState.INVALID:
                pred = last_pred  # frozen box
            else:
                pred = rec.observed
        else:
            pred = session.step(
                FrameInput(observed=rec.observed, s=rec.s, decision=dec)
            )
        preds.append(pred)
        tags.append(_frame_tags(sc, t))
        last_pred = pred

    return TrackRun(pred=preds, gt=[r.gt for r in seq.records], tags=tags)


# ---------------------------------------------------------------------------
# ablation suites
# ---------------------------------------------------------------------------


def _suite_schedule(frames: int, segment: int = 25) -> list:
    sched = []
    mod = "rgb"
    for start in range(0, frames, segment):
        sched.append((start, min(frames, start + segment), mod))
        mod = "nir" if mod == "rgb" else "rgb"
    return sched


def ablation_suite(base_seed: int) -> list[Scenario]:
    """Three invalid-heavy scenarios (left turn, right turn, straight).

    Noise bursts near modality switches (boosted sigma, damped confidence)
    plus two long over-exposure windows per scenario give each motion
    configuration something distinct to fail on.
    """
    frames = 150
    speed = 4.0
    turn = 0.025
    radius = speed / turn  # 160 px turning circle, centred on the frame
    common = dict(
        frames=frames,
        sigma=2.0,
        switch_radius=2,
        switch_noise_boost=8.0,
        modality_schedule=_suite_schedule(frames),
        invalid_windows=[(55, 73), (110, 128)],
    )
    scenarios = []
    for label, rate in (("turn-left", turn), ("turn-right", -turn)):
        start_x = 256.0 - math.copysign(radius, rate)
        scenarios.append(
            Scenario(
                name=f"{label}-{base_seed}",
                initial_box=(start_x, 256.0, 34.0, 34.0),
                velocity=(0.0, -speed),
                turn_rate=rate,
                seed=base_seed * 3 + (0 if rate > 0 else 1),
                **common,
            )
        )
    diag = speed / math.sqrt(2.0)
    scenarios.append(
        Scenario(
            name=f"straight-{base_seed}",
            initial_box=(70.0, 70.0, 34.0, 34.0),
            velocity=(diag, diag),
            turn_rate=0.0,
            seed=base_seed * 3 + 2,
            **common,
        )
    )
    return scenarios


def run_ablation_suite(base_seed: int) -> dict[str, dict[str, float]]:
    """Pooled PR/SR per motion preset over one three-scenario suite."""
    per_preset = {name: {"hits_pr": 0, "hits_sr": 0, "n": 0} for name in MOTION_PRESETS}
    for sc in ablation_suite(base_seed):
        seq = generate(sc)
        decisions = classify_sequence(seq)
        for preset in MOTION_PRESETS:
            tr = run(seq, HarnessConfig(motion=preset, seed=base_seed), decisions)
            for p, g in zip(tr.pred, tr.gt):
                per_preset[preset]["n"] += 1
                if cle(p, g) < 20.0:
                    per_preset[preset]["hits_pr"] += 1
                if iou(p, g) > 0.5:
                    per_preset[preset]["hits_sr"] += 1
    table = {}
    for preset, acc in per_preset.items():
        table[preset] = {
            "PR": 100.0 * acc["hits_pr"] / acc["n"],
            "SR": 100.0 * acc["hits_sr"] / acc["n"],
        }
    return table


def scenario_to_dict(sc: Scenario) -> dict:
    return asdict(sc)


def scenario_from_dict(d: dict) -> Scenario:
    d = dict(d)
    d["initial_box"] = tuple(d.get("initial_box", (256.0, 256.0, 30.0, 30.0)))
    d["velocity"] = tuple(d.get("velocity", (4.0, 0.0)))
    d["modality_schedule"] = [tuple(x) for x in d.get("modality_schedule", [])]
    d["invalid_windows"] = [tuple(x) for x in d.get("invalid_windows", [])]
    return Scenario(**d)
