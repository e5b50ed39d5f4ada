# src/training/orchestrator.py
"""
Run flow for the CLI: data -> training -> held-out evaluation, with each node
returning a dict merged into TrainingFlowState. Also assembles the trained G
and Q into the inference pipeline (policy, attention map, generated image).
"""
import os
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

import numpy as np
from langgraph.graph import END, StateGraph
from pydantic import BaseModel, Field

from src.attention.gradcam import AttentionMap, gradcam_map, overlay
from src.config import RuntimeSettings, TrainConfig, load_settings
from src.data.dataset import POLICY_CLASSES, PairedDataset, load_dataset, load_manifest, split_dataset
from src.errors import InputContractError
from src.evaluation.metrics import evaluate_samples
from src.evaluation.report import append_to_metrics_log, write_text_report
from src.networks.checkpoint import ModelBundle
from src.training.trainer import TrainingResult, run_training
from src.utils.image_utils import save_gray_png, save_rgb_png, save_uint8_png
from src.utils.logging_utils import get_logger

LOG = get_logger("orchestrator")

INFERENCE_ARTIFACTS = ("generated.png", "attention.png", "overlay.png", "policy.txt")


class TrainingFlowState(BaseModel):
    """Shared state for the training flow."""
    data_path: str = ""
    out_dir: str = ""
    resume: Optional[str] = None
    resplit: bool = False
    seed: int = 0
    manifest_counts: Dict[str, int] = Field(default_factory=dict)
    training_summary: Dict[str, Any] = Field(default_factory=dict)
    final_checkpoint: str = ""
    evaluation: Dict[str, str] = Field(default_factory=dict)


class TrainingOrchestrator:
    def __init__(self, config: TrainConfig, settings: RuntimeSettings = None, progress: bool = False):
        self.config = config
        self.settings = settings or load_settings()
        self.progress = progress
        self.dataset: Optional[PairedDataset] = None
        self.result: Optional[TrainingResult] = None
        self.app = self._build_workflow().compile()

    # -------------------------
    #  Node implementations
    # -------------------------
    def _data_node(self, state: TrainingFlowState) -> Dict[str, Any]:
        manifest = load_manifest(state.data_path)
        if state.resplit:
            manifest = split_dataset(manifest, self.config.split_ratios, self.config.seed)
        for line in manifest.reference_report():
            LOG.debug(line)
        self.dataset = load_dataset(manifest, self.config.resolution, self.settings.threads)
        counts = manifest.counts_per_split()
        LOG.info("[ORCHESTRATOR][DATA] pairs=%d splits=%s", len(manifest), counts)
        return {"manifest_counts": counts}

    def _training_node(self, state: TrainingFlowState) -> Dict[str, Any]:
        self.result = run_training(self.config, self.dataset, state.out_dir, resume=state.resume,
                                   progress=self.progress)
        LOG.info("[ORCHESTRATOR][TRAINING] final=%s", self.result.final_checkpoint)
        return {"training_summary": self.result.summary, "final_checkpoint": self.result.final_checkpoint}

    def _evaluation_node(self, state: TrainingFlowState) -> Dict[str, Any]:
        held_out = self.dataset.split("val")
        if len(held_out) < 2:
            LOG.info("[ORCHESTRATOR][EVALUATION] skipped: fewer than 2 validation pairs")
            return {}
        report = evaluate_samples(self.result.bundle, held_out, "model", "val", self.config.seed,
                                  self.settings.threads, gradcam_layer=self.config.gradcam_layer)
        path = write_text_report(report, os.path.join(state.out_dir, "eval_val.tsv"))
        append_to_metrics_log(report, self.result.metrics_path, "split=val generated=model")
        return {"evaluation": dict(line.split("\t", 1) for line in report.to_lines()) | {"path": path}}

    def _build_workflow(self) -> StateGraph:
        workflow = StateGraph(TrainingFlowState)

        workflow.add_node("data", self._data_node)
        workflow.add_node("training", self._training_node)
        workflow.add_node("evaluation", self._evaluation_node)

        workflow.set_entry_point("data")
        workflow.add_edge("data", "training")
        workflow.add_edge("training", "evaluation")
        workflow.add_edge("evaluation", END)

        return workflow

    def run(self, data_path: str, out_dir: str, resume: str = None, resplit: bool = False) -> TrainingFlowState:
        state = TrainingFlowState(data_path=data_path, out_dir=out_dir, resume=resume, resplit=resplit,
                                  seed=self.config.seed)
        final = self.app.invoke(state.model_dump())
        return TrainingFlowState(**final)


# -------------------------
#  Inference assembly
# -------------------------
@dataclass
class InferenceResult:
    policy_id: int
    policy_name: str
    probs: np.ndarray
    attention: AttentionMap
    generated: np.ndarray  # (1, 3, H, W) in [-1, 1]

    def policy_lines(self) -> List[str]:
        lines = [
            f"policy_id={self.policy_id}",
            f"policy_name={self.policy_name}",
            "probabilities=" + ",".join(f"{p:.8f}" for p in self.probs),
        ]
        for cid, p in enumerate(self.probs, 1):
            lines.append(f"{cid}\t{POLICY_CLASSES.get(cid, '?')}\t{p:.8f}")
        if self.attention.all_zero:
            lines.append("attention=all_zero")
        return lines


class DesignerPipeline:
    """Trained G + Q: one image in, policy + attention map + generated after-image out."""

    def __init__(self, bundle: ModelBundle):
        self.bundle = bundle
        self.generator = bundle.generator.eval()
        self.classifier = bundle.classifier.eval()

    @property
    def resolution(self) -> int:
        return int(self.bundle.metadata.get("config", {}).get("resolution", 64))

    @property
    def gradcam_layer(self) -> int:
        return int(self.bundle.metadata.get("config", {}).get("gradcam_layer", -1))

    def check_input(self, image: np.ndarray):
        _, _, h, w = image.shape
        if h % 16 or w % 16:
            raise InputContractError(
                f"input resolution {w}x{h} must be divisible by 16 (8 for the generator, 16 for the policy "
                f"classifier); resize it or drop --native to use the model resolution {self.resolution}")

    def infer(self, image: np.ndarray, seed: int = 0, gradcam_layer: Optional[int] = None) -> InferenceResult:
        """gradcam_layer defaults to the one the checkpoint was trained with."""
        self.check_input(image)
        rng = np.random.default_rng(seed)
        generated = self.generator.forward(image, rng=rng).data
        layer = self.gradcam_layer if gradcam_layer is None else gradcam_layer
        amap = gradcam_map(self.classifier, image, layer=layer)
        probs = amap.probs
        pid = int(np.argmax(probs)) + 1
        return InferenceResult(pid, POLICY_CLASSES.get(pid, "?"), probs, amap, generated)

    def write_artifacts(self, result: InferenceResult, image: np.ndarray, out_dir: str) -> Dict[str, str]:
        os.makedirs(out_dir, exist_ok=True)
        paths = {name: os.path.join(out_dir, name) for name in INFERENCE_ARTIFACTS}
        save_rgb_png(result.generated, paths["generated.png"])
        save_gray_png(result.attention.values, paths["attention.png"])
        save_uint8_png(overlay(image, result.attention), paths["overlay.png"])
        with open(paths["policy.txt"], "w", encoding="utf-8") as f:
            f.write("\n".join(result.policy_lines()) + "\n")
        return paths


def assemble_pipeline(bundle: ModelBundle) -> DesignerPipeline:
    return DesignerPipeline(bundle)
