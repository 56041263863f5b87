# main.py
"""
TPPI toolkit 명령행 진입점.
  python main.py <command> [options]
종료 코드: 0 성공 | 1 검증 불일치 / 일반 오류 | 2 변환 불가·TPPI 위반·잘못된 입력 | 3 학습 발산
"""
import argparse
import sys

import pandas as pd

from config import Config
from infra.utils import get_logger
from engine.errors import (
    TppiError, ShapeError, DataFormatError, NetworkFormatError, TransformError,
    TppiViolationError, TrainingDiverged, ConfigError,
)

logger = get_logger("Main")

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_INVALID = 2
EXIT_DIVERGED = 3


# =========================================================
# 🔧 [공통 헬퍼]
# =========================================================
def _parse_size(text):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise ConfigError(f"image size must look like HxW, got '{text}'")
    return h, w


def _parse_int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma separated integer list, got '{text}'")


def _load_net_or_preset(spec, bands=None, num_classes=None, m=None):
    from engine.network import PRESETS, make_preset
    from infra.network_store import load_network

    if spec in PRESETS:
        kwargs = {k: v for k, v in (("bands", bands), ("num_classes", num_classes), ("m", m)) if v is not None}
        return make_preset(spec, **kwargs)
    return load_network(spec)


def _palette_for(args, gt, num_classes):
    from data.hsi_io import load_palette, default_palette

    if getattr(args, "palette", None):
        return load_palette(args.palette)[0]
    if gt is not None and gt.palette:
        return gt.palette
    return default_palette(num_classes)


def _write_report(kind, payload, path):
    from infra.report_writer import ReportWriter
    if path:
        ReportWriter().write_json(kind, payload, path)


def _prediction_map(net, cube):
    """TPPI 망이면 image-mode (pad_to_full), 아니면 patch-mode 로 전체 맵"""
    from engine.inference import predict_image, predict_patchwise
    from engine.network import validate_tppi

    if validate_tppi(net):
        return predict_patchwise(net, cube, "all", retain_logits=False)
    return predict_image(net, cube, pad_to_full=True, retain_logits=False)


# =========================================================
# ▶️ [Commands]
# =========================================================
def _cmd_gen(args):
    from data.hsi_io import save_cube, save_gt, normalize_cube
    from data.synthetic import SceneSpec, gen_synthetic

    spec = SceneSpec(args.height, args.width, args.bands, args.classes, seed=args.seed,
                     noise_sigma=args.noise, regions=args.regions, unlabeled_frac=args.unlabeled_frac)
    cube, gt = gen_synthetic(spec)
    if args.normalize:
        cube = normalize_cube(cube, args.normalize)
    save_cube(cube, args.out_cube)
    save_gt(gt, args.out_gt)
    logger.info(f"✅ [gen] {cube.name} -> {args.out_cube}, {args.out_gt}")
    return EXIT_OK


def _cmd_preset(args):
    from engine.network import make_preset, init_network, check_network
    from infra.network_store import save_network

    net = make_preset(args.name, bands=args.bands, num_classes=args.classes, m=args.m)
    check_network(net)
    if args.init_seed is not None:
        net = init_network(net, seed=args.init_seed)
    save_network(net, args.out)
    logger.info(f"✅ [preset] {net.name} ({len(net.layers)} layers) -> {args.out}")
    return EXIT_OK


def _cmd_transform(args):
    from engine.transform import transform
    from infra.network_store import load_network, save_network

    net = load_network(args.inp)
    out, report = transform(net)
    save_network(out, args.out)
    _write_report("transform", report.to_dict(), args.report)
    print(f"retrain_required: {str(report.retrain_required).lower()}")
    return EXIT_OK


def _cmd_predict(args):
    from data.hsi_io import load_cube, load_gt, save_map, save_probabilities, check_pair
    from engine.inference import predict_patchwise, predict_image, predict_tiled
    from engine.metrics import evaluate_map
    from infra.network_store import load_network
    from trainer import split_dataset

    net = load_network(args.net)
    cube = load_cube(args.cube)
    retain = bool(args.logits)
    if args.mode == "patch":
        cmap = predict_patchwise(net, cube, "all", batch=args.batch, retain_logits=retain)
    elif args.mode == "image":
        cmap = predict_image(net, cube, pad_to_full=args.pad_full, retain_logits=retain)
    else:
        if not args.tile:
            raise ConfigError("--mode tiled needs --tile N")
        cmap = predict_tiled(net, cube, args.tile, pad_to_full=args.pad_full, retain_logits=retain)

    gt = load_gt(args.gt) if args.gt else None
    save_map(cmap, _palette_for(args, gt, net.num_classes), args.out)
    if retain:
        save_probabilities(cmap, args.logits)

    payload = {"map": {"height": cmap.height, "width": cmap.width, **cmap.provenance}}
    if gt is not None:
        check_pair(cube, gt)
        exclude = None
        if args.split_seed is not None:
            ds = split_dataset(gt, seed=args.split_seed)
            exclude = ds.mask("train", "val")
        if (cmap.height, cmap.width) != (gt.height, gt.width):
            raise ShapeError(f"map {cmap.height}x{cmap.width} cannot be scored against a "
                             f"{gt.height}x{gt.width} ground truth (use --pad-full)", axis="rows")
        payload["metrics"] = evaluate_map(cmap, gt, exclude).to_dict()
    _write_report("predict", payload, args.report)
    return EXIT_OK


def _train_one(net, cube, gt, cfg, out):
    """한 seed 학습 -> (prediction-phase MetricsReport). 네트워크와 <out>.log.json 저장"""
    from engine.metrics import evaluate_map
    from infra.network_store import save_network
    from trainer import split_dataset, train, evaluate_test_phase

    ds = split_dataset(gt, cfg.train_frac, cfg.val_frac, cfg.seed, cfg.stratified, cube=cube, m=net.m)
    try:
        trained, log = train(net, ds, cfg)
    except TrainingDiverged as e:
        if e.checkpoint is not None:
            save_network(e.checkpoint, f"{out}.last-good")
        if e.log is not None:
            _write_report("train_log", e.log.to_dict(), f"{out}.log.json")
        raise

    save_network(trained, out)
    payload = log.to_dict()
    payload["test_phase"] = evaluate_test_phase(trained, ds, cfg.precision, cfg.algo).to_dict()
    prediction = evaluate_map(_prediction_map(trained, cube), gt, ds.mask("train", "val"))
    payload["prediction_phase"] = prediction.to_dict()
    _write_report("train_log", payload, f"{out}.log.json")
    logger.info(f"✅ [train] seed {cfg.seed} | test OA {payload['test_phase']['oa']:.4f} | "
                f"prediction OA {prediction.oa:.4f}")
    return prediction


def _cmd_train(args):
    from dataclasses import replace

    from data.hsi_io import load_cube, load_gt, check_pair
    from engine.metrics import summarize_runs
    from infra.report_writer import ReportWriter
    from trainer import TrainConfig

    if args.seeds < 1:
        raise ConfigError(f"--seeds must be >= 1, got {args.seeds}")
    cube = load_cube(args.cube)
    gt = load_gt(args.gt)
    check_pair(cube, gt)
    overrides = {"epochs": args.epochs, "lr": args.lr, "batch_size": args.batch_size, "seed": args.seed,
                 "precision": args.precision}
    if args.cfg:
        cfg = TrainConfig.from_yaml(args.cfg, **overrides)
    else:
        cfg = TrainConfig.from_dict({k: v for k, v in overrides.items() if v is not None})

    net = _load_net_or_preset(args.net_template, bands=cube.bands, num_classes=gt.num_classes, m=args.m)
    if args.seeds == 1:
        _train_one(net, cube, gt, cfg, args.out)
        return EXIT_OK

    # seed, seed+1, ... 마다 <out>.seed<k> 와 로그, 마지막에 <out>.summary.csv
    reports = []
    for k in range(args.seeds):
        run_cfg = replace(cfg, seed=cfg.seed + k)
        reports.append(_train_one(net, cube, gt, run_cfg, f"{args.out}.seed{run_cfg.seed}"))
    summary = summarize_runs(reports)
    target = ReportWriter().write_summary_csv(summary, f"{args.out}.summary.csv")
    logger.info(f"📊 [train] {args.seeds} seeds | OA {summary.loc['oa', 'mean']:.4f} "
                f"± {summary.loc['oa', 'std']:.4f} -> {target}")
    return EXIT_OK


def _cmd_verify(args):
    from data.hsi_io import load_cube
    from engine.inference import verify_equivalence
    from infra.network_store import load_network

    net = load_network(args.net)
    cube = load_cube(args.cube)
    report = verify_equivalence(net, cube, tolerance=args.tolerance, image_algo=args.algo)
    _write_report("verify", report.to_dict(), args.report)
    print(f"max_abs_logit_diff: {report.max_abs_logit_diff:.6g}")
    print(f"argmax_disagreements: {report.argmax_disagreements} / {report.pixels_compared}")
    return EXIT_OK if report.argmax_disagreements == 0 else EXIT_FAIL


def _cmd_flops(args):
    from engine.network import count_flops
    from infra.network_store import load_network

    net = load_network(args.net)
    h, w = _parse_size(args.image_size)
    report = count_flops(net, h, w, mode=args.mode, model=args.model, count_adds=args.count_adds)
    table = pd.DataFrame([{
        "layer": l.layer_id, "kind": l.kind, "image_macs": l.image_macs,
        "patch_macs": l.patch_macs_total, "ratio": None if l.ratio is None else str(l.ratio),
    } for l in report.layers if l.is_conv])
    print(table.to_string(index=False))
    if report.ratio is not None:
        print(f"patch/image ratio: {report.ratio} (m^2 = {net.m * net.m})")
    _write_report("flops", report.to_dict(), args.report)
    return EXIT_OK


def _cmd_bench(args):
    from bench import bench
    from data.hsi_io import load_cube
    from infra.network_store import load_network

    net = load_network(args.net)
    net_patch = load_network(args.net_patch) if args.net_patch else None
    cube = load_cube(args.cube)
    modes = tuple(m.strip() for m in args.modes.split(",") if m.strip())
    report = bench(net, cube, modes, args.runs, net_patch=net_patch, batch=args.batch, tile=args.tile,
                   seed=args.seed)
    _write_report("bench", report.to_dict(), args.report)
    if args.csv:
        from infra.report_writer import ReportWriter
        ReportWriter().write_table([{"mode": k, "median": v.median, "min": v.min, "max": v.max,
                                     "flops": report.flops.get("image" if k == "tiled" else k)}
                                    for k, v in report.timings.items()], args.csv)
    if report.speedup is not None:
        print(f"speedup: {report.speedup:.2f}")
    return EXIT_OK


def _cmd_sweep(args):
    from bench import sweep
    from data.hsi_io import load_cube, load_gt, check_pair
    from engine.network import make_preset, init_network
    from engine.transform import transform
    from infra.report_writer import ReportWriter
    from trainer import TrainConfig, split_dataset, train

    cube = load_cube(args.cube)
    gt = load_gt(args.gt) if args.gt else None
    num_classes = gt.num_classes if gt is not None else args.classes
    splits = {}

    def make_net(m):
        tppi, _ = transform(make_preset(args.preset, bands=cube.bands, num_classes=num_classes, m=m))
        if gt is None or not args.epochs:
            return init_network(tppi, seed=args.seed or 0)
        check_pair(cube, gt)
        cfg = TrainConfig(epochs=args.epochs, seed=args.seed or 0)
        ds = split_dataset(gt, cfg.train_frac, cfg.val_frac, cfg.seed, cfg.stratified, cube=cube, m=m)
        splits[m] = ds.mask("train", "val")
        return train(tppi, ds, cfg)[0]

    report = sweep(cube, _parse_int_list(args.m_list), make_net, args.runs,
                   gt=gt if args.epochs else None, exclude_for=splits.get)
    writer = ReportWriter()
    if args.csv:
        writer.write_sweep_csv(report, args.csv)
    if args.report:
        writer.write_json("sweep", report.to_dict(), args.report)
    return EXIT_OK


COMMANDS = {
    "gen": _cmd_gen,
    "preset": _cmd_preset,
    "transform": _cmd_transform,
    "predict": _cmd_predict,
    "train": _cmd_train,
    "verify": _cmd_verify,
    "flops": _cmd_flops,
    "bench": _cmd_bench,
    "sweep": _cmd_sweep,
}


# =========================================================
# 🧭 [Argument parser]
# =========================================================
def build_parser():
    parser = argparse.ArgumentParser(prog="tppi", description="TPPI toolkit")
    parser.add_argument("--threads", type=int, default=None, help="worker cap (overrides TPPI_THREADS)")
    parser.add_argument("--seed", type=int, default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic scene")
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--bands", type=int, default=8)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--regions", type=int, default=None)
    p.add_argument("--unlabeled-frac", type=float, default=0.0)
    p.add_argument("--normalize", choices=("minmax", "zscore"), default=None)
    p.add_argument("--out-cube", required=True)
    p.add_argument("--out-gt", required=True)

    p = sub.add_parser("preset", help="write a preset network file")
    p.add_argument("--name", default="ssrn-like")
    p.add_argument("--bands", type=int, default=200)
    p.add_argument("--classes", type=int, default=16)
    p.add_argument("--m", type=int, default=Config.PATCH_SIZE)
    p.add_argument("--init-seed", type=int, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("transform", help="rewrite a patch classifier into a TPPI network")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None)

    p = sub.add_parser("predict", help="classify a cube")
    p.add_argument("--net", required=True)
    p.add_argument("--cube", required=True)
    p.add_argument("--mode", choices=("patch", "image", "tiled"), default="image")
    p.add_argument("--pad-full", action="store_true")
    p.add_argument("--tile", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--logits", default=None, help="write per-class probability planes to this cube path")
    p.add_argument("--gt", default=None)
    p.add_argument("--split-seed", type=int, default=None, help="exclude the train/val pixels of this split")
    p.add_argument("--palette", default=None)
    p.add_argument("--report", default=None)

    p = sub.add_parser("train", help="train a network on pixel patches")
    p.add_argument("--net-template", required=True, help="network file or preset name")
    p.add_argument("--cube", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--cfg", default=None, help="YAML training config")
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--precision", choices=("float32", "float64"), default=None)
    p.add_argument("--seeds", type=int, default=1, help="train N runs (seed, seed+1, ...) and write <out>.summary.csv")
    p.add_argument("--out", required=True)

    p = sub.add_parser("verify", help="check patch-mode / image-mode equivalence")
    p.add_argument("--net", required=True)
    p.add_argument("--cube", required=True)
    p.add_argument("--tolerance", type=float, default=None)
    p.add_argument("--algo", choices=("direct", "im2col"), default="direct")
    p.add_argument("--report", default=None)

    p = sub.add_parser("flops", help="per-layer MAC counts")
    p.add_argument("--net", required=True)
    p.add_argument("--image-size", required=True)
    p.add_argument("--mode", choices=("both", "patch", "image"), default="both")
    p.add_argument("--model", choices=("nominal", "exact"), default="nominal")
    p.add_argument("--count-adds", action="store_true")
    p.add_argument("--report", default=None)

    p = sub.add_parser("bench", help="time patch-mode vs image-mode prediction")
    p.add_argument("--net", required=True)
    p.add_argument("--net-patch", default=None, help="network used for patch mode (defaults to --net)")
    p.add_argument("--cube", required=True)
    p.add_argument("--modes", default="patch,image")
    p.add_argument("--runs", type=int, default=Config.BENCH_RUNS)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--tile", type=int, default=None)
    p.add_argument("--report", default=None)
    p.add_argument("--csv", default=None)

    p = sub.add_parser("sweep", help="bench across patch sizes")
    p.add_argument("--m-list", default=",".join(str(m) for m in Config.SWEEP_M_LIST))
    p.add_argument("--cube", required=True)
    p.add_argument("--gt", default=None)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--preset", default="ssrn-like")
    p.add_argument("--epochs", type=int, default=0)
    p.add_argument("--runs", type=int, default=Config.BENCH_RUNS)
    p.add_argument("--csv", default=None)
    p.add_argument("--report", default=None)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        Config.THREADS = max(1, args.threads)
    if args.seed is None:
        args.seed = Config.SEED if args.command in ("gen", "sweep") else None
    logger.info(f"🚀 [{args.command}] start (threads={Config.THREADS})")

    try:
        code = COMMANDS[args.command](args)
    except TrainingDiverged as e:
        logger.error(f"❌ [{args.command}] training diverged: {e}")
        return EXIT_DIVERGED
    except TppiViolationError as e:
        logger.error(f"❌ [{args.command}] {e}")
        for v in e.violations:
            print(f"  {v.layer_id}: rule {v.rule} ({v.message})", file=sys.stderr)
        return EXIT_INVALID
    except (TransformError, ShapeError, DataFormatError, NetworkFormatError, ConfigError) as e:
        logger.error(f"❌ [{args.command}] {e}")
        return EXIT_INVALID
    except (TppiError, OSError) as e:
        logger.error(f"❌ [{args.command}] {e}")
        return EXIT_FAIL

    marker = "✅" if code == EXIT_OK else "⚠️"
    logger.info(f"{marker} [{args.command}] exit {code}")
    return code


if __name__ == "__main__":
    sys.exit(main())
