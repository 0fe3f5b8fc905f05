"""Drive every CLI stage on a tiny configuration."""

import json
from pathlib import Path

from cad25d.cli import main

TINY_CONFIG = {
    "gen_data": {"n_scenes": 5, "n_families": 2, "models_per_family": 3},
    "render_views": {"elev": 1, "azim": 12, "width": 48, "height": 48},
    "train_normals": {"steps": 4, "batch_images": 2, "pixels_per_image": 200, "taps": ["1_2", "2_2"],
                      "head_widths": [16, 8]},
    "train_pose": {"steps": 4, "batch_size": 8, "input_size": 16, "hidden": 16, "embed_dim": 8},
    "train_style": {"steps": 3, "batch_size": 4},
    "retrieve": {"k": 5, "stride": 8, "scales": [1.0]},
    "rerank": {"n": 3},
}


def run(argv):
    code = main([str(a) for a in argv])
    if code != 0:
        raise RuntimeError(f"stage {argv[0]} exited with {code}")


def run_pipeline(root: Path, seed: int = 0) -> dict[str, Path]:
    """Run all stages under ``root``; returns the output directory of each."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    cfg = root / "config.json"
    cfg.write_text(json.dumps(TINY_CONFIG))
    d = {k: root / k for k in ("data", "views", "normals", "pose", "pose_scenes", "style", "retrieval", "plot")}
    common = ["--config", cfg, "--seed", seed]
    run(["gen-data", "--out", d["data"], *common])
    run(["render-views", "--manifest", d["data"] / "models.json", "--out", d["views"], *common])
    run(["train-normals", "--manifest", d["data"] / "manifest.json", "--out", d["normals"], *common])
    run(["eval-normals", "--manifest", d["data"] / "manifest.json", "--checkpoint", d["normals"] / "normals.ckpt",
         "--out", d["normals"], *common])
    run(["train-pose", "--manifest", d["views"] / "views.json", "--out", d["pose"], *common])
    run(["eval-pose", "--manifest", d["views"] / "views.json", "--checkpoint", d["pose"] / "pose.ckpt",
         "--out", d["pose"], *common])
    run(["eval-pose", "--manifest", d["data"] / "manifest.json", "--checkpoint", d["pose"] / "pose.ckpt",
         "--normals", "pred", "--normals-checkpoint", d["normals"] / "normals.ckpt", "--split", "train",
         "--out", d["pose_scenes"], *common])
    run(["train-style", "--manifest", d["views"] / "views.json", "--checkpoint", d["pose"] / "pose.ckpt",
         "--out", d["style"], *common])
    run(["retrieve", "--manifest", d["data"] / "manifest.json", "--views", d["views"] / "views.json",
         "--split", "train", "--out", d["retrieval"], *common])
    run(["rerank", "--manifest", d["data"] / "manifest.json", "--views", d["views"] / "views.json",
         "--retrieval", d["retrieval"] / "retrieval.csv", "--checkpoint", d["style"] / "style.ckpt",
         "--out", d["retrieval"], *common])
    run(["plot", "--inputs", d["pose"] / "pose_curve.csv", d["pose"] / "pose_train.csv",
         "--labels", "curve", "loss", "--out", d["plot"], *common])
    return d


def csv_outputs(root: Path) -> dict[str, bytes]:
    root = Path(root)
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*.csv"))}
