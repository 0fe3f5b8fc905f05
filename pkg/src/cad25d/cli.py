"""Command-line pipeline: data generation, training, evaluation, retrieval and plotting.

Every stage reads its defaults from ``DEFAULTS``; ``--config`` points to a JSON
file whose top-level keys are stage names (``gen_data``, ``train_pose`` ...)
holding overrides.  Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import nn
from .data import io as dio
from .data.furniture import FurnitureParams, distinct_families, generate_furniture, sample_in_family
from .data.plotting import plot_curves
from .data.scenes import SceneConfig, generate_scene, random_background
from .evaluation import (angular_error, depth_coverage_filter, object_masked_stats, pose_angular_error,
                         pose_auc, pose_fraction_curve, six_stats, stats_table_csv)
from .pose import (NormalImageEncoding, PoseNet, RenderedView, StyleHead, StylePairSet, azimuth_to_bin,
                   build_pose_dataset, crop_inputs, predict_in_batches, read_pair_labels, rerank_top_n,
                   train_pose, train_style, write_pair_labels)
from .render import (DEFAULT_LIGHT, Camera, MeshError, NormalMap, ViewPose, dump_obj, load_obj,
                     render_view, sample_views, shade_normals)
from .retrieval import BoundingBox, LibraryView, RetrievalCandidate, knn_retrieve, make_template, results_csv
from .skipnet import HypercolumnSpec, SkipNet, TrunkSpec, predict_normal_map, train_skipnet

log = logging.getLogger("cad25d")

_TRAIN = dict(learning_rate=0.001, momentum=0.9, dropout_prob=0.5, batch_size=32, steps=200,
              batch_images=5, pixels_per_image=1000, weight_decay=0.0)

DEFAULTS: dict[str, dict] = {
    "gen_data": dict(n_scenes=10, n_objects=2, width=64, height=64, fov_deg=60.0, depth_dropout=0.0,
                     scene_classes=["chair", "sofa", "bed"], model_class="chair", n_families=3,
                     models_per_family=2, splits=[0.6, 0.2, 0.2]),
    "render_views": dict(elev=4, azim=36, elevations=None, width=64, height=64, fov_deg=50.0, radius=2.5),
    "train_normals": dict(_TRAIN, taps=["1_2", "2_2", "3_3", "deep"], head_widths=[128, 64], augment=True),
    "eval_normals": dict(split="test"),
    "train_pose": dict(_TRAIN, learning_rate=0.01, dropout_prob=0.5, steps=300, input_size=32, hidden=256,
                       embed_dim=64, composites=2, cls="chair"),
    "eval_pose": dict(split="test", normals="gt", depth_filter=True, coverage_threshold=0.5,
                      delta_max=45.0, composites=1),
    "train_style": dict(_TRAIN, learning_rate=0.001, dropout_prob=0.0, steps=100, margin=1.0,
                        negatives_per_positive=1),
    "retrieve": dict(split="test", normals="gt", k=35, scoring="geom", stride=4, scales=[0.75, 1.0, 1.25],
                     pad_frac=0.2, prune_deg=20.0),
    "rerank": dict(n=30),
    "plot": dict(title=""),
}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


# -- helpers ----------------------------------------------------------------------------

def _write_csv(path: Path, header, rows) -> None:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(out.getvalue())


def _fmt(v: float) -> str:
    return f"{v:.6f}"


def _need(args, *names) -> None:
    missing = [n for n in names if getattr(args, n) is None]
    if missing:
        raise UsageError(f"{args.command}: missing --{missing[0].replace('_', '-')}")


def _load_manifest(path, kind: str | None = None) -> dio.DatasetManifest:
    m = dio.DatasetManifest.load(path)
    if kind is not None and m.kind != kind:
        raise DataError(f"{path}: expected a {kind} manifest, got {m.kind}")
    return m


def _save_net(path: Path, state: dict, arch: dict) -> None:
    nn.save(path, state)
    path.with_suffix(".json").write_text(json.dumps(arch, indent=2, sort_keys=True) + "\n")


def _arch(path: Path) -> dict:
    side = Path(path).with_suffix(".json")
    if not side.is_file():
        raise DataError(f"missing architecture file {side}")
    return json.loads(side.read_text())


def load_skipnet(path) -> SkipNet:
    a = _arch(path)
    net = SkipNet(TrunkSpec(input_size=a["input_size"]), HypercolumnSpec(tuple(a["taps"])),
                  tuple(a["head_widths"]))
    net.load_state(nn.load(path))
    return net


def load_posenet(path) -> tuple[PoseNet, NormalImageEncoding]:
    a = _arch(path)
    net = PoseNet(TrunkSpec(deep_channels=0, input_size=a["input_size"]), a["hidden"], a["embed_dim"],
                  cls=a["cls"])
    net.load_state(nn.load(path))
    return net, NormalImageEncoding(tuple(a["means"]))


def _view_record_to_view(m: dio.DatasetManifest, r: dict) -> RenderedView:
    nm = dio.nmf_to_normal_map(m.path(r["normals"]).read_bytes())
    img = dio.decode_png8(m.path(r["image"]).read_bytes())
    return RenderedView(r["model_id"], ViewPose(r["azimuth_deg"], r["elevation_deg"]), img, nm)


# -- stages -----------------------------------------------------------------------------

def cmd_gen_data(args, cfg) -> None:
    c = cfg["gen_data"]
    out = Path(args.out)
    (out / "scenes").mkdir(parents=True, exist_ok=True)
    (out / "models").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    scfg = SceneConfig(width=c["width"], height=c["height"], fov_deg=c["fov_deg"],
                       classes=tuple(c["scene_classes"]), depth_dropout=c["depth_dropout"])
    splits = dio.assign_splits(c["n_scenes"], c["splits"])
    recs, rows = [], []
    for i in range(c["n_scenes"]):
        sid = f"scene{i:04d}"
        s = generate_scene(rng, c["n_objects"], scfg, scene_id=sid)
        files = {k: f"scenes/{sid}_{k}.{ext}" for k, ext in
                 (("image", "png"), ("depth", "nmf"), ("normals", "nmf"), ("objects_index", "nmf"))}
        (out / files["image"]).write_bytes(dio.encode_png8(s.image))
        (out / files["depth"]).write_bytes(dio.depth_map_to_nmf(s.depth))
        (out / files["normals"]).write_bytes(dio.normal_map_to_nmf(s.normals))
        (out / files["objects_index"]).write_bytes(dio.write_nmf(s.object_index.astype(np.float32)))
        recs.append(dict(id=sid, split=splits[i], **files, objects=[o.to_dict() for o in s.objects]))
        rows.append([sid, splits[i], len(s.objects), s.skipped])
    dio.DatasetManifest(out, "scenes", recs, dict(config=c, seed=args.seed)).save(out / "manifest.json")
    _write_csv(out / "scenes.csv", ["scene_id", "split", "objects", "skipped"], rows)

    protos = distinct_families(c["n_families"], c["model_class"], rng)
    mrecs, mrows = [], []
    n_models = c["n_families"] * c["models_per_family"]
    msplits = dio.assign_splits(n_models, c["splits"])
    # interleave families so every split sees several of them
    order = [(f, j) for j in range(c["models_per_family"]) for f in range(c["n_families"])]
    for k, (f, j) in enumerate(order):
        p = protos[f] if j == 0 else sample_in_family(protos[f], rng)
        mid = f"{c['model_class']}{k:03d}"
        mesh = generate_furniture(p, seed=k, model_id=mid)
        rel = f"models/{mid}.obj"
        (out / rel).write_text(dump_obj(mesh))
        mrecs.append(dict(id=mid, split=msplits[k], obj=rel, cls=p.cls, style_family=p.style_family,
                          params=p.to_dict()))
        mrows.append([mid, msplits[k], p.cls, p.style_family])
    dio.DatasetManifest(out, "models", mrecs, dict(config=c, seed=args.seed)).save(out / "models.json")
    _write_csv(out / "models.csv", ["model_id", "split", "class", "style_family"], mrows)


def cmd_render_views(args, cfg) -> None:
    _need(args, "manifest")
    c = dict(cfg["render_views"])
    if args.elev is not None:
        c["elev"] = args.elev
    if args.azim is not None:
        c["azim"] = args.azim
    m = _load_manifest(args.manifest, "models")
    out = Path(args.out)
    cam = Camera(c["width"], c["height"], c["fov_deg"])
    poses = sample_views(c["elev"], c["azim"], c["elevations"], c["radius"])
    recs, rows = [], []
    for r in m.records:
        try:
            mesh = load_obj(m.path(r["obj"]).read_text(), r["id"], r["cls"], r["style_family"])
        except MeshError as exc:
            raise DataError(f"model {r['id']}: {exc}") from exc
        mesh.albedo = tuple(r["params"]["albedo"]) if "params" in r else mesh.albedo
        (out / r["id"]).mkdir(parents=True, exist_ok=True)
        for pose in poses:
            _, nmap = render_view(mesh, pose, cam)
            vid = f"{r['id']}/e{pose.elevation_deg:03.0f}_a{pose.azimuth_deg:03.0f}"
            (out / f"{vid}.nmf").write_bytes(dio.normal_map_to_nmf(nmap))
            (out / f"{vid}.png").write_bytes(dio.encode_png8(shade_normals(nmap, mesh.color(), DEFAULT_LIGHT)))
            recs.append(dict(id=vid, split=r["split"], model_id=r["id"], cls=r["cls"],
                             style_family=r["style_family"], azimuth_deg=pose.azimuth_deg,
                             elevation_deg=pose.elevation_deg, normals=f"{vid}.nmf", image=f"{vid}.png"))
            rows.append([vid, r["id"], f"{pose.azimuth_deg:g}", f"{pose.elevation_deg:g}", int(nmap.mask.sum())])
    dio.DatasetManifest(out, "views", recs, dict(config=c)).save(out / "views.json")
    _write_csv(out / "views.csv", ["view_id", "model_id", "azimuth_deg", "elevation_deg", "pixels"], rows)


def _scene_arrays(m: dio.DatasetManifest, split: str):
    recs = m.split(split)
    if not recs:
        raise DataError(f"no scenes in split {split!r}")
    return recs, [dio.load_scene_record(m, r) for r in recs]


def cmd_train_normals(args, cfg) -> None:
    _need(args, "manifest")
    c = cfg["train_normals"]
    m = _load_manifest(args.manifest, "scenes")
    _, scenes = _scene_arrays(m, "train")
    images = [s[0] for s in scenes]
    normals = [np.where(s[2].mask[..., None], s[2].normals, np.nan) for s in scenes]
    size = images[0].shape[0]
    net = SkipNet(TrunkSpec(input_size=size), HypercolumnSpec(tuple(c["taps"])), tuple(c["head_widths"]),
                  seed=args.seed)
    tc = nn.TrainConfig.from_dict(dict(c, seed=args.seed))
    rows = train_skipnet(net, images, normals, tc, log_every=max(1, tc.steps // 10), augment_data=c["augment"])
    out = Path(args.out)
    _save_net(out / "normals.ckpt", net.state(),
              dict(input_size=size, taps=list(c["taps"]), head_widths=list(c["head_widths"])))
    _write_csv(out / "normals_train.csv", ["step", "loss"], [[s, _fmt(l)] for s, l, _ in rows])


def cmd_eval_normals(args, cfg) -> None:
    _need(args, "manifest")
    if (args.checkpoint is None) == (args.pred_dir is None):
        raise UsageError("eval-normals: give exactly one of --checkpoint or --pred-dir")
    c = cfg["eval_normals"]
    m = _load_manifest(args.manifest, "scenes")
    recs, scenes = _scene_arrays(m, args.split or c["split"])
    net = load_skipnet(args.checkpoint) if args.checkpoint else None
    all_err, per_class = [], {}
    for r, (image, _, gt, _, objects) in zip(recs, scenes):
        if net is not None:
            pred = predict_normal_map(net, image)
        else:
            f = Path(args.pred_dir) / f"{r['id']}.nmf"
            if not f.is_file():
                raise DataError(f"missing prediction {f}")
            pred = dio.nmf_to_normal_map(f.read_bytes())
        all_err.append(angular_error(pred, gt))
        masks = {}
        for o in objects:
            masks[o["cls"]] = masks.get(o["cls"], np.zeros_like(o["mask"])) | o["mask"]
        for cls in masks:
            per_class.setdefault(cls, []).append(angular_error(pred, gt, masks[cls]))
    table = {"global": six_stats(np.concatenate(all_err))}
    for cls in sorted(per_class):
        e = np.concatenate(per_class[cls])
        if len(e):
            table[cls] = six_stats(e)
    (Path(args.out) / "normals_stats.csv").write_text(stats_table_csv(table))


def _views(m: dio.DatasetManifest, split: str | None, cls: str | None = None) -> list[RenderedView]:
    recs = [r for r in m.records if (split is None or r["split"] == split) and (cls is None or r["cls"] == cls)]
    return [_view_record_to_view(m, r) for r in recs]


def cmd_train_pose(args, cfg) -> None:
    _need(args, "manifest")
    c = cfg["train_pose"]
    cls = args.cls or c["cls"]
    m = _load_manifest(args.manifest, "views")
    views = _views(m, "train", cls)
    if not views:
        raise DataError(f"no training views of class {cls!r}")
    rng = np.random.default_rng(args.seed)
    enc = NormalImageEncoding.fit([v.normals for v in views])
    data = build_pose_dataset(views, enc, c["input_size"], rng, c["composites"], random_background)
    net = PoseNet(TrunkSpec(deep_channels=0, input_size=c["input_size"]), c["hidden"], c["embed_dim"],
                  seed=args.seed, cls=cls)
    tc = nn.TrainConfig.from_dict(dict(c, seed=args.seed))
    rows = []
    try:
        train_pose(net, data, tc, log_every=max(1, tc.steps // 10), curve=rows)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    out = Path(args.out)
    _save_net(out / "pose.ckpt", net.state(), dict(input_size=c["input_size"], hidden=c["hidden"],
                                                   embed_dim=c["embed_dim"], cls=cls, means=list(enc.means)))
    _write_csv(out / "pose_train.csv", ["step", "loss"], [[s, _fmt(l)] for s, l in rows])


def _pose_instances(args, c, net: PoseNet, enc: NormalImageEncoding, normals_net):
    """(instance id, image crop, encoded normal crop, true bin) for the chosen split."""
    m = _load_manifest(args.manifest)
    split = args.split or c["split"]
    size = net.trunk_spec.input_size
    mode = args.normals or c["normals"]
    if mode == "pred" and normals_net is None:
        raise UsageError("--normals pred needs --normals-checkpoint")
    rng = np.random.default_rng(args.seed)

    def pick(image, gt: NormalMap) -> NormalMap:
        if mode == "gt":
            return gt
        if mode == "constant":
            return NormalMap.constant(*gt.mask.shape)
        return predict_normal_map(normals_net, image)

    out = []
    if m.kind == "views":
        for r in m.records:
            if r["split"] != split or r["cls"] != net.cls:
                continue
            v = _view_record_to_view(m, r)
            for j in range(c["composites"]):
                img = np.where(v.normals.mask[..., None], v.image, random_background(rng, *v.image.shape[:2]))
                a, b = crop_inputs(img, pick(img, v.normals), v.box, size, enc)
                out.append((f"{r['id']}#{j}", a, b, azimuth_to_bin(r["azimuth_deg"])))
    elif m.kind == "scenes":
        for r in m.split(split):
            image, depth, gt, _, objects = dio.load_scene_record(m, r)
            objs = [o for o in objects if o["cls"] == net.cls]
            objs = depth_coverage_filter([(depth, o["box"], o) for o in objs], c["coverage_threshold"],
                                         enabled=c["depth_filter"])
            if objs:
                nmap = pick(image, gt)
            for _, box, o in objs:
                a, b = crop_inputs(image, nmap, box, size, enc)
                out.append((f"{r['id']}:{o['object_id']}", a, b, azimuth_to_bin(o["azimuth_deg"])))
    else:
        raise DataError(f"cannot evaluate pose on a {m.kind} manifest")
    if not out:
        raise DataError(f"no {net.cls} instances in split {split!r}")
    return out


def cmd_eval_pose(args, cfg) -> None:
    _need(args, "manifest", "checkpoint")
    c = cfg["eval_pose"]
    net, enc = load_posenet(args.checkpoint)
    normals_net = load_skipnet(args.normals_checkpoint) if args.normals_checkpoint else None
    inst = _pose_instances(args, c, net, enc, normals_net)
    pred = predict_in_batches(net, np.stack([i[1] for i in inst]), np.stack([i[2] for i in inst]))
    truth = np.array([i[3] for i in inst])
    err = pose_angular_error(pred, truth)
    curve = pose_fraction_curve(err)
    out = Path(args.out)
    _write_csv(out / "pose_errors.csv", ["instance", "true_bin", "pred_bin", "error_deg"],
               [[i[0], int(t), int(p), f"{e:g}"] for i, t, p, e in zip(inst, truth, pred, err)])
    (out / "pose_curve.csv").write_text(curve.to_csv())
    _write_csv(out / "pose_summary.csv", ["instances", "auc", "median_error_deg"],
               [[len(inst), _fmt(pose_auc(curve, c["delta_max"])), f"{np.median(err):g}"]])


def style_pairs(records: list[dict], rng: np.random.Generator, negatives_per_positive: int = 1):
    """Positive pairs share a style family (different models, same view); negatives do not."""
    by_view: dict[tuple, list[dict]] = {}
    for r in records:
        by_view.setdefault((r["azimuth_deg"], r["elevation_deg"]), []).append(r)
    rows = []
    for key in sorted(by_view):
        group = sorted(by_view[key], key=lambda r: r["id"])
        for q in group:
            pos = [r for r in group if r["style_family"] == q["style_family"] and r["model_id"] != q["model_id"]]
            neg = [r for r in group if r["style_family"] != q["style_family"]]
            for p in pos:
                rows.append((q["id"], p["id"], True))
                for _ in range(negatives_per_positive if neg else 0):
                    rows.append((q["id"], neg[int(rng.integers(len(neg)))]["id"], False))
    return rows


def cmd_train_style(args, cfg) -> None:
    _need(args, "manifest", "checkpoint")
    c = cfg["train_style"]
    pose_net, enc = load_posenet(args.checkpoint)
    m = _load_manifest(args.manifest, "views")
    recs = [r for r in m.records if r["split"] == "train" and r["cls"] == pose_net.cls]
    rng = np.random.default_rng(args.seed)
    if args.pairs:
        try:
            rows = read_pair_labels(Path(args.pairs).read_text())
        except ValueError as exc:
            raise DataError(str(exc)) from exc
    else:
        rows = style_pairs(recs, rng, c["negatives_per_positive"])
    index = {r["id"]: k for k, r in enumerate(recs)}
    unknown = [q for q, o, _ in rows for q in (q, o) if q not in index]
    if unknown:
        raise DataError(f"pair file names unknown view {unknown[0]!r}")
    size = pose_net.trunk_spec.input_size
    views = [_view_record_to_view(m, r) for r in recs]
    crops = [crop_inputs(v.image, v.normals, v.box, size, enc) for v in views]
    images, nimgs = np.stack([a for a, _ in crops]), np.stack([b for _, b in crops])
    pairs = StylePairSet([index[q] for q, _, _ in rows], [index[o] for _, o, _ in rows], [l for *_, l in rows])
    head = StyleHead.from_pose(pose_net)
    tc = nn.TrainConfig.from_dict(dict(c, seed=args.seed))
    log_rows = []
    try:
        train_style(head, images, nimgs, pairs, tc, c["margin"], log_every=max(1, tc.steps // 10), curve=log_rows)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    out = Path(args.out)
    (out / "pairs.tsv").write_text(write_pair_labels(rows))
    _save_net(out / "style.ckpt", head.net.state(), _arch(args.checkpoint))
    _write_csv(out / "style_train.csv", ["step", "loss"], [[s, _fmt(l)] for s, l in log_rows])


def _library(vm: dio.DatasetManifest) -> dict[str, list[LibraryView]]:
    lib: dict[str, list[LibraryView]] = {}
    for r in vm.records:
        nm = dio.nmf_to_normal_map(vm.path(r["normals"]).read_bytes())
        lib.setdefault(r["cls"], []).append(LibraryView(r["model_id"], ViewPose(r["azimuth_deg"], r["elevation_deg"]),
                                                        make_template(nm), None, r["style_family"]))
    return lib


def cmd_retrieve(args, cfg) -> None:
    _need(args, "manifest", "views")
    c = cfg["retrieve"]
    m = _load_manifest(args.manifest, "scenes")
    lib = _library(_load_manifest(args.views, "views"))
    normals_net = load_skipnet(args.normals_checkpoint) if args.normals_checkpoint else None
    mode = args.normals or c["normals"]
    if mode == "pred" and normals_net is None:
        raise UsageError("--normals pred needs --normals-checkpoint")
    rows = []
    for r in m.split(args.split or c["split"]):
        image, _, gt, _, objects = dio.load_scene_record(m, r)
        q = predict_normal_map(normals_net, image) if mode == "pred" else gt
        for o in objects:
            if o["cls"] not in lib:
                log.warning("no library views for class %s", o["cls"])
                continue
            cands = knn_retrieve(q, o["box"], lib[o["cls"]], k=c["k"], scoring=c["scoring"],
                                 prune_deg=c["prune_deg"], stride=c["stride"], scales=tuple(c["scales"]),
                                 pad_frac=c["pad_frac"])
            rows.append((f"{r['id']}:{o['object_id']}", cands))
    (Path(args.out) / "retrieval.csv").write_text(results_csv(rows))


def _read_results(text: str) -> list[tuple[str, list[RetrievalCandidate]]]:
    groups: dict[str, list[RetrievalCandidate]] = {}
    try:
        for row in csv.DictReader(io.StringIO(text)):
            win = BoundingBox(int(row["wx"]), int(row["wy"]), int(row["ww"]), int(row["wh"]))
            groups.setdefault(row["query_id"], []).append(RetrievalCandidate(
                row["model_id"], ViewPose(float(row["azimuth_deg"]), float(row["elevation_deg"])),
                float(row["score"]), win))
    except (KeyError, ValueError) as exc:
        raise DataError(f"malformed retrieval CSV: {exc}") from exc
    return list(groups.items())


def cmd_rerank(args, cfg) -> None:
    _need(args, "manifest", "views", "retrieval", "checkpoint")
    n = cfg["rerank"]["n"]
    if n < 1:
        raise UsageError("rerank: n must be at least 1")
    net, enc = load_posenet(args.checkpoint)
    head = StyleHead(net)
    size = net.trunk_spec.input_size
    m = _load_manifest(args.manifest, "scenes")
    vm = _load_manifest(args.views, "views")
    by_key = {(r["model_id"], float(r["azimuth_deg"]), float(r["elevation_deg"])): r for r in vm.records}
    scenes = {r["id"]: r for r in m.records}
    cache: dict[str, np.ndarray] = {}

    def view_embedding(c: RetrievalCandidate) -> np.ndarray:
        r = by_key.get((c.model_id, float(c.pose.azimuth_deg), float(c.pose.elevation_deg)))
        if r is None:
            raise DataError(f"no rendered view for {c.model_id} at {c.pose}")
        if r["id"] not in cache:
            v = _view_record_to_view(vm, r)
            cache[r["id"]] = head.embed(*crop_inputs(v.image, v.normals, v.box, size, enc))[0]
        return cache[r["id"]]

    rows = []
    for qid, cands in _read_results(Path(args.retrieval).read_text()):
        sid, _, oid = qid.partition(":")
        if sid not in scenes:
            raise DataError(f"unknown scene {sid!r} in retrieval results")
        image, _, gt, _, objects = dio.load_scene_record(m, scenes[sid])
        obj = next((o for o in objects if str(o["object_id"]) == oid), None)
        if obj is None:
            raise DataError(f"unknown object {qid!r}")
        q = head.embed(*crop_inputs(image, gt, obj["box"], size, enc))[0]
        rows.append((qid, rerank_top_n(q, cands, n, [view_embedding(c) for c in cands])))
    (Path(args.out) / "reranked.csv").write_text(results_csv(rows))


def cmd_plot(args, cfg) -> None:
    if not args.inputs:
        raise UsageError("plot: give at least one --inputs CSV")
    labels = args.labels or [Path(p).stem for p in args.inputs]
    if len(labels) != len(args.inputs):
        raise UsageError("plot: --labels must match --inputs")
    try:
        svg = plot_curves({l: Path(p).read_text() for l, p in zip(labels, args.inputs)},
                          title=cfg["plot"]["title"])
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    (Path(args.out) / (args.name or "plot.svg")).write_text(svg)


COMMANDS = {
    "gen-data": cmd_gen_data, "render-views": cmd_render_views, "train-normals": cmd_train_normals,
    "eval-normals": cmd_eval_normals, "train-pose": cmd_train_pose, "eval-pose": cmd_eval_pose,
    "train-style": cmd_train_style, "retrieve": cmd_retrieve, "rerank": cmd_rerank, "plot": cmd_plot,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cad25d", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS), metavar="COMMAND",
                   help="one of: " + ", ".join(COMMANDS))
    p.add_argument("--config", help="JSON file of per-stage overrides")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--manifest", help="input dataset manifest")
    p.add_argument("--views", help="rendered-views manifest (retrieval library)")
    p.add_argument("--checkpoint")
    p.add_argument("--normals-checkpoint", dest="normals_checkpoint")
    p.add_argument("--normals", choices=["gt", "pred", "constant"])
    p.add_argument("--pred-dir", dest="pred_dir")
    p.add_argument("--split", choices=list(dio.SPLITS))
    p.add_argument("--class", dest="cls")
    p.add_argument("--pairs", help="style pair labels file")
    p.add_argument("--retrieval", help="retrieval CSV to re-rank")
    p.add_argument("--elev", type=int)
    p.add_argument("--azim", type=int)
    p.add_argument("--inputs", nargs="+")
    p.add_argument("--labels", nargs="+")
    p.add_argument("--name", help="output file name for plot")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def load_config(path: str | None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is None:
        return cfg
    try:
        user = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(user, dict):
        raise UsageError("config must be a JSON object")
    for stage, over in user.items():
        if stage not in cfg or not isinstance(over, dict):
            raise UsageError(f"unknown config section {stage!r}")
        bad = set(over) - set(cfg[stage])
        if bad:
            raise UsageError(f"unknown keys in {stage}: {sorted(bad)}")
        cfg[stage].update(over)
    return cfg


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.seed < 0 or args.seed >= 2**64:
            raise UsageError("--seed must be an unsigned 64-bit integer")
        cfg = load_config(args.config)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        Path(args.out).mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return 1
    except (DataError, dio.FormatError, nn.CheckpointError, MeshError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
