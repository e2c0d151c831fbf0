"""Synthetic end-to-end run: train, estimate, propose, detect, link, evaluate.

Everything is a function of :class:`PipelineConfig`, so two runs with the
same configuration write byte-identical files.
"""
import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import detector, fileio, metrics
from .boxes import Box
from .detector import Detection, LinkConfig, Tube
from .flow import DEFAULT_BOUND, motion_input
from .model import DEFAULT_SCALES, boxes_to_binary_map, build_network, hybrid_fuse, multiscale_estimate
from .netspec import load_spec
from .proposals import DEFAULT_COUNT, DEFAULT_SUPPRESS_IOU, generate_proposals
from .synth import NUM_CLASSES, SceneConfig, gen_action_video, scene_seed
from .train import TrainSchedule, fine_tune

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    seed: int = 0
    train_scenes: int = 200
    test_scenes: int = 50
    frames: int = 8
    image_size: tuple = (64, 64)
    train_frames: tuple = (0, 4)  # frames of each training video used for training
    appearance_spec: str = "toy_afcn"
    motion_spec: str = "toy_mfcn"
    spatial_spec: str = "cls_spatial"
    temporal_spec: str = "cls_temporal"
    fcn_iterations: int = 300
    fcn_batch: int = 16
    fcn_milestones: tuple = ((0, 0.05), (180, 0.005))
    cls_iterations: int = 300
    cls_batch: int = 32
    cls_milestones: tuple = ((0, 0.01), (210, 0.001))
    scales: tuple = DEFAULT_SCALES
    flow_bound: float = DEFAULT_BOUND
    proposals: int = DEFAULT_COUNT
    suppress_iou: float = DEFAULT_SUPPRESS_IOU
    detect_nms_iou: float = 0.3  # per-class NMS; None keeps every proposal
    link_overlap_weight: float = 1.0
    link_score_mode: str = "mean"
    link_max_tubes: int = 1
    grid_criterion: str = "coverage"
    weights_dir: str = None  # load trained weights from here instead of training
    output_dir: str = None

    def __post_init__(self):
        self.image_size = tuple(int(v) for v in self.image_size)
        self.train_frames = tuple(int(v) for v in self.train_frames)
        self.scales = tuple(float(s) for s in self.scales)
        self.fcn_milestones = tuple((int(i), float(r)) for i, r in self.fcn_milestones)
        self.cls_milestones = tuple((int(i), float(r)) for i, r in self.cls_milestones)
        if self.train_scenes < 1 or self.test_scenes < 1:
            raise ConfigError("train_scenes and test_scenes must be positive")
        if self.frames < 4:
            raise ConfigError("videos need at least 4 frames for the temporal grid")
        if any(not 0 <= t < self.frames for t in self.train_frames):
            raise ConfigError(f"train_frames {self.train_frames} outside 0..{self.frames - 1}")
        if self.weights_dir is not None:
            for name in STREAMS:
                path = Path(self.weights_dir) / f"{name}.weights"
                if not path.is_file():
                    raise ConfigError(f"weights file not found: {path}")

    def to_dict(self):
        return dataclasses.asdict(self)

    def hash(self):
        """Hash of the fields that influence results (paths excluded)."""
        d = {k: v for k, v in self.to_dict().items() if k not in ("output_dir", "weights_dir")}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def provenance(self):
        return fileio.Provenance(self.seed, self.hash())

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except ValueError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"{path}: unknown field(s) {sorted(unknown)}")
        return cls(**data)

    def scene_config(self):
        return SceneConfig(size=self.image_size, frames=self.frames)

    def link_config(self):
        return LinkConfig(self.link_overlap_weight, self.link_score_mode, self.link_max_tubes)


STREAMS = ("appearance", "motion", "spatial", "temporal")


def video_id(split, index):
    return f"{split}{index:04d}"


def make_videos(cfg, split):
    n = cfg.train_scenes if split == "train" else cfg.test_scenes
    return [gen_action_video(scene_seed(cfg.seed, split, i), cfg.scene_config()) for i in range(n)]


def stream_input(video, t, stream, bound=DEFAULT_BOUND):
    """Appearance frame or 4-channel motion tensor for frame ``t``."""
    if stream == "appearance":
        return video.frames[t]
    return motion_input(video.flows, t, bound)


def _schedule(milestones, iterations, batch):
    return TrainSchedule(batch_size=batch, milestones=list(milestones), total_iterations=iterations,
                         frozen_layers=0, reduced_layers=0, input_size=None, target_size=None)


def train_fcn(cfg, videos, stream):
    spec = load_spec(cfg.appearance_spec if stream == "appearance" else cfg.motion_spec)
    h, w = cfg.image_size
    data = [(stream_input(v, t, stream, cfg.flow_bound), boxes_to_binary_map(v.boxes[t], h, w))
            for v in videos for t in cfg.train_frames]
    net = build_network(spec, seed=cfg.seed)
    sched = _schedule(cfg.fcn_milestones, cfg.fcn_iterations, cfg.fcn_batch)
    return fine_tune(net, data, sched, seed=cfg.seed)


def estimate_maps(cfg, anet, mnet, video, frames=None):
    """Appearance, motion and hybrid maps, each ``(T, H, W)``."""
    frames = range(len(video.frames)) if frames is None else frames
    a = np.stack([multiscale_estimate(anet, stream_input(video, t, "appearance"), cfg.scales)
                  for t in frames])
    m = np.stack([multiscale_estimate(mnet, stream_input(video, t, "motion", cfg.flow_bound), cfg.scales)
                  for t in frames])
    return a, m, hybrid_fuse(a, m)


def propose(cfg, amap):
    return generate_proposals(amap, cfg.proposals, cfg.suppress_iou)


def _crops(cfg, net, video, t, boxes, stream):
    h, w = net.spec.input_size
    x = stream_input(video, t, stream, cfg.flow_bound)
    return [detector.crop_and_resize(x, b, h, w) for b in boxes]


def train_classifiers(cfg, videos, proposals_by_frame):
    """Spatial and temporal proposal classifiers with ``NUM_CLASSES + 1`` outputs.

    Positives are ground-truth crops labelled with their class; negatives
    are proposals with IoU < 0.25 against every ground-truth box.
    """
    nets = {}
    for stream, spec_name, src in (("spatial", cfg.spatial_spec, "appearance"),
                                   ("temporal", cfg.temporal_spec, "motion")):
        net = build_network(load_spec(spec_name), seed=cfg.seed)
        data = []
        for vi, v in enumerate(videos):
            for t in cfg.train_frames:
                props = [b for b, _ in proposals_by_frame[(vi, t)]]
                pos, neg = detector.select_training_examples(props, v.boxes[t])
                labels = [v.labels[v.boxes[t].index(b)] for b in pos] + [NUM_CLASSES] * len(neg)
                data.extend(zip(_crops(cfg, net, v, t, pos + neg, src), labels))
        sched = _schedule(cfg.cls_milestones, cfg.cls_iterations, cfg.cls_batch)
        nets[stream] = fine_tune(net, data, sched, seed=cfg.seed, dense=False)
    return nets["spatial"], nets["temporal"]


def detect_video(cfg, snet, tnet, video, vid, proposals_per_frame):
    dets = []
    for t, props in enumerate(proposals_per_frame):
        boxes = [b for b, _ in props]
        if not boxes:
            continue
        s = detector.classify_proposals(snet, _crops(cfg, snet, video, t, boxes, "appearance"))
        m = detector.classify_proposals(tnet, _crops(cfg, tnet, video, t, boxes, "motion"))
        dets.extend(detector.detect_frame(boxes, detector.fuse_streams(s, m), NUM_CLASSES, t, vid,
                                          cfg.detect_nms_iou))
    return dets


def gt_tubes(video, vid):
    """One ground-truth tube per actor."""
    return [Tube(label, 0, [frame[i] for frame in video.boxes], 1.0, vid)
            for i, label in enumerate(video.labels)]


@dataclass
class PipelineResult:
    metrics: dict
    files: list = field(default_factory=list)
    networks: dict = field(default_factory=dict)


def load_or_train(cfg, train_videos):
    if cfg.weights_dir is not None:
        return {s: fileio.load_network(Path(cfg.weights_dir) / f"{s}.weights", load_spec(spec))
                for s, spec in zip(STREAMS, (cfg.appearance_spec, cfg.motion_spec,
                                             cfg.spatial_spec, cfg.temporal_spec))}
    nets = {"appearance": train_fcn(cfg, train_videos, "appearance"),
            "motion": train_fcn(cfg, train_videos, "motion")}
    log.info("trained actionness networks")
    props = {}
    for vi, v in enumerate(train_videos):
        _, _, hmaps = estimate_maps(cfg, nets["appearance"], nets["motion"], v, cfg.train_frames)
        for t, hm in zip(cfg.train_frames, hmaps):
            props[(vi, t)] = propose(cfg, hm)
    nets["spatial"], nets["temporal"] = train_classifiers(cfg, train_videos, props)
    log.info("trained proposal classifiers")
    return nets


def run_pipeline(cfg: PipelineConfig):
    """Run every stage; writes artifacts under ``cfg.output_dir`` when set."""
    t0 = time.perf_counter()
    prov = cfg.provenance()
    train_videos = make_videos(cfg, "train") if cfg.weights_dir is None else []
    test_videos = make_videos(cfg, "test")
    nets = load_or_train(cfg, train_videos)
    link_cfg = cfg.link_config()
    grid_cfg = metrics.GridProtocolConfig(criterion=cfg.grid_criterion)

    grid = {"appearance": [], "motion": [], "hybrid": []}
    all_props, all_gt, dets, tubes, gts, gtt = [], [], [], [], [], []
    proposal_records, annotation_records, hybrid_maps = [], [], []
    for i, v in enumerate(test_videos):
        vid = video_id("test", i)
        a, m, hm = estimate_maps(cfg, nets["appearance"], nets["motion"], v)
        for name, maps in (("appearance", a), ("motion", m), ("hybrid", hm)):
            grid[name].append((maps, v.boxes))
        props = [propose(cfg, hm[t]) for t in range(len(hm))]
        all_props.extend([b for b, _ in p] for p in props)
        all_gt.extend(v.boxes)
        vdets = detect_video(cfg, nets["spatial"], nets["temporal"], v, vid, props)
        dets.extend(vdets)
        tubes.extend(detector.link_video(vdets, len(v.frames), NUM_CLASSES, link_cfg, vid))
        for t, boxes in enumerate(v.boxes):
            gts.extend(((vid, t), b, lab) for b, lab in zip(boxes, v.labels))
            annotation_records.append((vid, t, list(zip(boxes, v.labels))))
            proposal_records.append((vid, t, props[t]))
            hybrid_maps.append((vid, t, hm[t]))
        gtt.extend(gt_tubes(v, vid))

    out = {}
    for name in grid:
        out[f"grid_map_{name}"], _, out[f"grid_skipped_{name}"] = metrics.mean_grid_ap(grid[name], grid_cfg)
    out[f"proposal_recall_top{cfg.proposals}_iou0.5"] = metrics.proposal_recall(all_props, all_gt, 0.5)
    fap, vap = metrics.frame_ap(dets, gts), metrics.video_ap(tubes, gtt)
    out["frame_ap"], out["video_ap"] = fap.mean, vap.mean
    for k in sorted(fap.per_class):
        out[f"frame_ap_class{k}"] = fap.per_class[k]
        out[f"video_ap_class{k}"] = vap.per_class.get(k, 0.0)
    curves = {
        "recall_vs_count": metrics.recall_vs_count(all_props, all_gt, 0.5, range(1, cfg.proposals + 1)),
        "recall_vs_iou": metrics.recall_vs_iou(all_props, all_gt, cfg.proposals),
    }
    log.info("pipeline finished in %.1f s", time.perf_counter() - t0)

    files = []
    if cfg.output_dir is not None:
        root = Path(cfg.output_dir)
        for s in STREAMS:
            fileio.write_weights(root / "weights" / f"{s}.weights", nets[s], prov)
            files.append(root / "weights" / f"{s}.weights")
        for vid, t, hm in hybrid_maps:
            path = root / "maps" / f"{vid}_{t:03d}.amap"
            fileio.write_amap(path, hm, prov)
            files.append(path)
        writers = (("annotations.txt", fileio.write_annotations, annotation_records),
                   ("proposals.txt", fileio.write_proposals, proposal_records),
                   ("detections.txt", fileio.write_detections, dets),
                   ("tubes.txt", fileio.write_tubes, tubes),
                   ("metrics.txt", fileio.write_metrics, out))
        for name, fn, payload in writers:
            fn(root / name, payload, prov)
            files.append(root / name)
        for name, pts in curves.items():
            fileio.write_curve(root / f"{name}.txt", pts, prov)
            files.append(root / f"{name}.txt")
        # the saved copy omits output_dir so runs into different directories match byte for byte
        dataclasses.replace(cfg, output_dir=None).save(root / "config.json")
        files.append(root / "config.json")
    return PipelineResult(out, files, nets)
