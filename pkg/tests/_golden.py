"""Golden-fixture setup shared by the model tests; ``python tests/_golden.py`` re-records it."""
import json
from pathlib import Path

from pasturefuse.autodiff import RngStream
from pasturefuse.fusion import FusionConfig
from pasturefuse.model import BackboneSpec, DualViewModel, ModelConfig, predict

PATH = Path(__file__).with_name("fixtures") / "golden_predict.json"


def golden_model() -> DualViewModel:
    cfg = ModelConfig(BackboneSpec(view_size=8, patch=4, d_model=8),
                      FusionConfig(kind="gated_dwconv", depth=2, d_model=8, dropout_p=0.2),
                      head_hidden=8)
    return DualViewModel(cfg, RngStream(2026).child("golden"))


def golden_image():
    return RngStream(2026).child("golden-image").random((32, 32, 3))


def golden_prediction() -> dict:
    return predict(golden_model(), golden_image())


if __name__ == "__main__":
    PATH.write_text(json.dumps(golden_prediction(), indent=2) + "\n")
    print(PATH.read_text())
