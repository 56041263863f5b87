import sys
import os
import time
import tempfile

# 프로젝트 루트 경로 추가
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config import Config
from infra.utils import get_logger
from data.synthetic import SceneSpec, gen_synthetic
from engine.network import ssrn_like, count_flops
from engine.transform import transform
from engine.inference import verify_equivalence, predict_image
from engine.metrics import evaluate_map
from infra.network_store import save_network, load_network
from trainer import TrainConfig, split_dataset, train
from bench import bench

logger = get_logger("SystemVerifier")


def verify_system(m=5, epochs=15):
    """합성 장면 하나로 gen -> train -> transform -> verify -> bench 전체 흐름을 점검합니다"""
    logger.info("🚀 [System Verification] Starting diagnostics...")

    # 1. 합성 장면
    try:
        logger.info("🔹 [Step 1] Generating synthetic scene...")
        cube, gt = gen_synthetic(SceneSpec(32, 32, 10, 4, seed=Config.SEED))
        logger.info(f"✅ {cube.name} ({gt.labeled_count()} labeled pixels)")
    except Exception as e:
        logger.error(f"❌ Scene Generation Failed: {e}")
        return False

    # 2. 학습 (TPPP 원본, patch 단위)
    try:
        logger.info(f"🔹 [Step 2] Training ssrn-like (m={m}, {epochs} epochs)...")
        cfg = TrainConfig(epochs=epochs, lr=0.05, seed=Config.SEED)
        ds = split_dataset(gt, cfg.train_frac, cfg.val_frac, cfg.seed, cube=cube, m=m)
        net = ssrn_like(bands=cube.bands, num_classes=gt.num_classes, m=m, width=8, spectral_width=16)
        trained, log = train(net, ds, cfg)
        logger.info(f"✅ best val OA {log.best_val_oa}")
    except Exception as e:
        logger.error(f"❌ Training Failed: {e}")
        return False

    # 3. TPPI 변환 + 저장/로드
    try:
        logger.info("🔹 [Step 3] Transforming to TPPI and round-tripping the file...")
        tppi, report = transform(trained)
        with tempfile.TemporaryDirectory() as folder:
            path = os.path.join(folder, "tppi.json")
            save_network(tppi, path)
            tppi = load_network(path)
        logger.info(f"✅ {len(report.rewrites)} rewrites, retrain_required={report.retrain_required}")
    except Exception as e:
        logger.error(f"❌ Transform Failed: {e}")
        return False

    # 4. patch-mode / image-mode 동등성
    try:
        logger.info("🔹 [Step 4] Verifying patch/image equivalence...")
        eq = verify_equivalence(tppi, cube)
        cmap = predict_image(tppi, cube, pad_to_full=True, retain_logits=False)
        oa = evaluate_map(cmap, gt, ds.mask("train", "val")).oa

        print("\n" + "=" * 40)
        print("🧮 [Equivalence]")
        print(f"   - max |logit diff|: {eq.max_abs_logit_diff:.3g}")
        print(f"   - argmax disagreements: {eq.argmax_disagreements} / {eq.pixels_compared}")
        print(f"   - image-mode OA: {oa:.4f}")
        print("=" * 40 + "\n")

        if eq.argmax_disagreements:
            logger.error("❌ Patch and image maps disagree!")
            return False
    except Exception as e:
        logger.error(f"❌ Equivalence Check Failed: {e}")
        return False

    # 5. 속도 비교
    try:
        logger.info("🔹 [Step 5] Benchmarking patch-mode vs image-mode...")
        t0 = time.perf_counter()
        result = bench(tppi, cube, runs=2, net_patch=trained)
        flops = count_flops(tppi, cube.height, cube.width)
        logger.info(f"✅ speedup {result.speedup:.2f}x | FLOPs ratio {flops.ratio} "
                    f"({time.perf_counter() - t0:.1f}s)")
    except Exception as e:
        logger.error(f"❌ Benchmark Failed: {e}")
        return False

    logger.info("🎉 [System Verification] All steps passed.")
    return True


if __name__ == "__main__":
    sys.exit(0 if verify_system() else 1)
