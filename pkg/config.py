# config.py
import os
from dotenv import load_dotenv

load_dotenv(dotenv_path=".env.local")
load_dotenv()


class Config:
    # ==========================================
    # 🧵 [실행 환경]
    # ==========================================
    # 워커 스레드 상한 (결과는 스레드 수와 무관하게 비트 단위로 동일)
    THREADS = int(os.getenv("TPPI_THREADS", "1") or 1)
    SEED = int(os.getenv("TPPI_SEED", "0") or 0)

    # ==========================================
    # 📝 [로깅]
    # ==========================================
    # 빈 문자열이면 파일 핸들러를 붙이지 않습니다 (테스트/CI 용)
    LOG_FILE = os.getenv("TPPI_LOG_FILE", "tppi.log")
    LOG_LEVEL = os.getenv("TPPI_LOG_LEVEL", "INFO")
    LOG_MAX_BYTES = 10 * 1024 * 1024
    LOG_BACKUP_COUNT = 5

    # ==========================================
    # 🔢 [수치 커널]
    # ==========================================
    PRECISION = "float32"       # float32 | float64 (float64 = 오라클/grad-check 모드)
    CONV_ALGO = "direct"        # direct (고정 누적 순서) | im2col (BLAS)
    BORDER_MODE = "mirror"      # mirror | zero (zero 는 ablation 전용)
    BN_EPSILON = 1e-5
    # NaN/Inf 검사 (디버그 실행에서만 켜기)
    DEBUG_CHECKS = os.getenv("TPPI_DEBUG", "0") == "1"

    # ==========================================
    # 🎓 [학습 파라미터]
    # ==========================================
    BATCH_SIZE = 100
    LEARNING_RATE = 0.01
    MOMENTUM = 0.9
    WEIGHT_DECAY = 0.0001
    EPOCHS = 200

    # [데이터 분할] 클래스별 20% / 16% / 나머지 test
    TRAIN_FRAC = 0.20
    VAL_FRAC = 0.16
    STRATIFIED = True
    MIN_PIXELS_PER_CLASS = 3    # 미만이면 경고 후 best-effort 분할

    # ==========================================
    # 🗺️ [예측 설정]
    # ==========================================
    PATCH_SIZE = 7              # m (홀수만 허용)
    PREDICT_BATCH = 1024        # patch-mode 한 번에 처리할 패치 수
    EQUIVALENCE_TOLERANCE = 0.0
    DISAGREEMENT_CAP = 100      # EquivalenceReport 에 남길 픽셀 좌표 최대 개수

    # ==========================================
    # ⏱️ [벤치마크]
    # ==========================================
    BENCH_RUNS = 5
    SWEEP_M_LIST = (3, 5, 7, 9)

    # ==========================================
    # 📄 [리포트 포맷]
    # ==========================================
    SCHEMA_VERSION = 1
    NETWORK_FORMAT_VERSION = 1
    CUBE_FORMAT_VERSION = 1
    SWEEP_CSV_COLUMNS = ["m", "patch_time", "image_time", "patch_flops", "image_flops", "oa"]
