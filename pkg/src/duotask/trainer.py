"""Training loops for the four modes (single-task ASR / speaker, joint MTL,
disjoint MTL), validation with early stopping and model selection, and
checkpoint/resume plumbing.

A disjoint step backpropagates the weighted speech loss and the weighted
speaker loss on two independent graphs; the shared-encoder gradients add up
to lambda_s * grad_s + lambda_k * grad_k before the configured clipping
placement is applied. All randomness is derived from (seed, purpose, step),
so a resumed run continues bitwise-identically.
"""

from __future__ import annotations

import csv
import os
import time

import numpy as np

from . import checkpoint as ckpt
from . import evaluation
from . import tensor as T
from .corpus.batching import speaker_batches, speaker_class_index, speech_batches
from .corpus.manifest import AudioStore
from .corpus.wavio import SAMPLE_RATE
from .encoder import FeatureCache
from .losses import aam_softmax_loss, combine, ctc_loss, LossReport
from .model import init_model
from .optim import (Adam, ParameterPartition, clip_array, combine_task_grads,
                    ensure_grads, freeze_mask, lr_at, zero_grads)
from .seeds import derive_rng

METRIC_COLUMNS = ["step", "lr", "L", "L_s", "L_k", "WER_val", "EER_val"]


def select_model(candidates):
    """argmin of 0.25*WER + 0.75*EER over candidate dicts; when one metric is
    absent (single-task runs) the other carries the whole criterion. Ties go
    to the earliest entry."""
    if not candidates:
        raise ValueError("select_model needs at least one candidate")
    best = None
    best_score = None
    for cand in candidates:
        score = selection_score(cand.get("wer"), cand.get("eer"))
        if best_score is None or score < best_score:
            best, best_score = cand, score
    return best


def selection_score(wer, eer):
    if wer is None and eer is None:
        raise ValueError("candidate has neither WER nor EER")
    if wer is None:
        return eer
    if eer is None:
        return wer
    return 0.25 * wer + 0.75 * eer


class _BatchStream:
    """Deterministic epoch-indexed batch stream with a (epoch, cursor) state
    small enough to live in a checkpoint manifest."""

    def __init__(self, build_epoch):
        self.build_epoch = build_epoch
        self.epoch = 0
        self.cursor = 0
        self._batches = None

    def next(self):
        if self._batches is None:
            self._batches = self.build_epoch(self.epoch)
        if self.cursor >= len(self._batches):
            self.epoch += 1
            self.cursor = 0
            self._batches = self.build_epoch(self.epoch)
        batch = self._batches[self.cursor]
        self.cursor += 1
        return batch

    def state(self):
        return {"epoch": self.epoch, "cursor": self.cursor}

    def restore(self, state):
        self.epoch = int(state["epoch"])
        self.cursor = int(state["cursor"])
        self._batches = None


class Trainer:
    def __init__(self, run_cfg, vocab, train_manifest, val_manifest=None,
                 val_trials=None, trial_manifest=None, run_dir=None):
        self.cfg = run_cfg
        self.vocab = vocab
        self.train_manifest = train_manifest
        self.val_manifest = val_manifest
        self.val_trials = val_trials
        self.trial_manifest = trial_manifest
        self.run_dir = run_dir

        self.seed = run_cfg.trainer.seed
        self.mode = run_cfg.trainer.mode
        self.weights = run_cfg.weights()
        self.schedule = run_cfg.schedule()

        self.class_index = speaker_class_index(train_manifest)
        self.model = init_model(run_cfg.encoder, run_cfg.heads, vocab,
                                len(self.class_index), seed=self.seed)
        self.params = self.model.named_parameters()
        self.partition = ParameterPartition.from_model(self.model)
        self.adam = Adam(self.params, beta1=run_cfg.optim.beta1,
                         beta2=run_cfg.optim.beta2, eps=run_cfg.optim.adam_eps)

        self.train_store = AudioStore(train_manifest)
        self.val_store = AudioStore(val_manifest) if val_manifest is not None else None
        self.trial_store = AudioStore(trial_manifest) if trial_manifest is not None else None
        self.cache = FeatureCache(self.model.encoder)
        self.full_samples = {}
        for man in (train_manifest, val_manifest, trial_manifest):
            if man is not None:
                for r in man.rows:
                    self.full_samples[r.id] = int(round(r.duration_s * SAMPLE_RATE))

        self.speech_stream = _BatchStream(self._build_speech_epoch)
        self.speaker_stream = _BatchStream(self._build_speaker_epoch)

        self.step = 0
        self.best_val_loss = None
        self.steps_since_improve = 0
        self.best_selection = None   # {"score", "step", "wer", "eer"}
        self.history = []
        self.stop_requested = False

    # ---- batch streams ---------------------------------------------------

    def _build_speech_epoch(self, epoch):
        rng = derive_rng(self.seed, "speech-epoch", epoch)
        return speech_batches(self.train_manifest, self.vocab,
                              self.cfg.trainer.speech_batch_samples, rng,
                              self.train_store, class_index=self.class_index)

    def _build_speaker_epoch(self, epoch):
        rng = derive_rng(self.seed, "speaker-epoch", epoch)
        return speaker_batches(self.train_manifest, self.class_index,
                               self.cfg.trainer.speaker_crop_s,
                               self.cfg.trainer.speaker_batch_items, rng,
                               self.train_store)

    # ---- forward losses ----------------------------------------------------

    def _encode_batch(self, batch, training, rng):
        """Encode via the frozen-feature cache (whole utterances hit it)."""
        waves = [batch.samples[i, :n] for i, n in enumerate(batch.lengths)]
        fulls = [self.full_samples.get(u, -1) for u in batch.utt_ids]
        frames, flens = self.cache.batch(batch.utt_ids, waves, fulls)
        return self.model.encoder.encode_frames(frames, flens, training=training, rng=rng)

    def speech_task_loss(self, batch, training, rng):
        enc = self._encode_batch(batch, training, rng)
        logp = self.model.speech_logprobs(enc)
        return ctc_loss(logp, enc.frame_lengths, batch.targets)

    def speaker_task_loss(self, batch, training, rng):
        enc = self._encode_batch(batch, training, rng)
        emb = self.model.speaker_embedding(enc)
        logits = self.model.speaker_logits(emb)
        return aam_softmax_loss(logits, batch.labels,
                                scale=self.cfg.losses.aam_scale,
                                margin=self.cfg.losses.aam_margin)

    def task_gradients(self, task, batch, lam, step=None):
        """Isolated weighted backward for one task; returns (loss value,
        gradient dict). The forward rng is derived from (seed, task, step)."""
        step = self.step if step is None else step
        rng = derive_rng(self.seed, f"fwd-{task}", step)
        zero_grads(self.params)
        if task == "speech":
            loss = self.speech_task_loss(batch, True, rng)
        else:
            loss = self.speaker_task_loss(batch, True, rng)
        if np.isnan(loss.data):
            raise RuntimeError(f"{task} loss is NaN at step {step}")
        (lam * loss).backward()
        grads = {n: p.grad.copy() for n, p in self.params.items() if p.grad is not None}
        zero_grads(self.params)
        return float(loss.data), grads

    # ---- optimization steps --------------------------------------------------

    def _apply_grads(self, grads):
        zero_grads(self.params)
        for name, g in grads.items():
            self.params[name].grad = g
        names = self.partition.trainable_names(
            freeze_mask(self.step, self.cfg.optim.freeze_base_until))
        ensure_grads(self.params, names)
        self.adam.step(lr_at(self.step, self.schedule), names)
        self.step += 1

    def disjoint_step(self, speech_batch, speaker_batch):
        """Two forwards, one per task, gradients merged per the clip placement."""
        ls, g_s = self.task_gradients("speech", speech_batch, self.weights.lambda_s)
        lk, g_k = self.task_gradients("speaker", speaker_batch, self.weights.lambda_k)
        merged = combine_task_grads(g_s, g_k, self.cfg.optim.clip_placement,
                                    self.cfg.optim.clip_bound)
        self._apply_grads(merged)
        total = self.weights.lambda_s * ls + self.weights.lambda_k * lk
        return LossReport(total=total, speech=ls, speaker=lk, iteration=self.step)

    def joint_step(self, batch):
        """One forward through the encoder; both heads on the same output."""
        if batch.speaker_labels is None:
            raise ValueError("joint step needs speaker labels on the batch")
        if not batch.targets:
            raise ValueError("joint step needs transcripts on the batch")
        rng = derive_rng(self.seed, "fwd-speech", self.step)
        zero_grads(self.params)
        enc = self._encode_batch(batch, True, rng)
        loss_s = ctc_loss(self.model.speech_logprobs(enc), enc.frame_lengths, batch.targets)
        emb = self.model.speaker_embedding(enc)
        loss_k = aam_softmax_loss(self.model.speaker_logits(emb), batch.speaker_labels,
                                  scale=self.cfg.losses.aam_scale,
                                  margin=self.cfg.losses.aam_margin)
        total, report = combine(loss_s, loss_k, self.weights, self.step)
        total.backward()
        grads = {n: clip_array(p.grad, self.cfg.optim.clip_bound)
                 for n, p in self.params.items() if p.grad is not None}
        self._apply_grads(grads)
        report.iteration = self.step
        return report

    def single_task_step(self, task, batch):
        lam = 1.0
        loss, grads = self.task_gradients(task, batch, lam)
        merged = {n: clip_array(g, self.cfg.optim.clip_bound) for n, g in grads.items()}
        self._apply_grads(merged)
        if task == "speech":
            return LossReport(total=loss, speech=loss, speaker=None, iteration=self.step)
        return LossReport(total=loss, speech=None, speaker=loss, iteration=self.step)

    def step_once(self):
        if self.mode == "mtl_disjoint":
            return self.disjoint_step(self.speech_stream.next(), self.speaker_stream.next())
        if self.mode == "mtl_joint":
            return self.joint_step(self.speech_stream.next())
        if self.mode == "stl_asr":
            return self.single_task_step("speech", self.speech_stream.next())
        if self.mode == "stl_skr":
            return self.single_task_step("speaker", self.speaker_stream.next())
        raise ValueError(f"unknown mode {self.mode!r}")

    # ---- validation ------------------------------------------------------------

    def _val_losses(self):
        """Eval-mode weighted loss on the validation split."""
        rng = derive_rng(self.seed, "val-batches", self.step)
        loss_s = loss_k = None
        if self.mode != "stl_skr":
            batches = speech_batches(self.val_manifest, self.vocab,
                                     self.cfg.trainer.speech_batch_samples, rng,
                                     self.val_store, class_index=self.class_index)
            vals = [float(self.speech_task_loss(b, False, None).data) for b in batches]
            loss_s = float(np.mean(vals))
        if self.mode != "stl_asr":
            krng = derive_rng(self.seed, "val-speaker", self.step)
            kbatches = speaker_batches(self.val_manifest, self.class_index,
                                       self.cfg.trainer.speaker_crop_s,
                                       self.cfg.trainer.speaker_batch_items, krng,
                                       self.val_store)
            vals = [float(self.speaker_task_loss(b, False, None).data) for b in kbatches]
            loss_k = float(np.mean(vals))
        total = (self.weights.lambda_s * (loss_s or 0.0)
                 + self.weights.lambda_k * (loss_k or 0.0))
        return total, loss_s, loss_k

    def _val_eer(self):
        cond = self.cfg.trainer.val_eer_crop
        if cond == "train":
            cond = f"crop:{self.cfg.trainer.speaker_crop_s}"
        rng = derive_rng(self.seed, "val-crop", self.step)
        embeddings, _ = evaluation.embed_manifest(
            self.model, self.trial_manifest, cond, rng=rng, store=self.trial_store,
            cache=self.cache)
        return evaluation.eer(evaluation.score_trials(self.val_trials, embeddings))

    def validate(self):
        """Deterministic metrics on the held-out splits; updates the early
        stopping and model-selection state."""
        if self.val_manifest is None or len(self.val_manifest) == 0:
            raise ValueError("validation requires a non-empty validation split")
        metrics = {"step": self.step, "lr": lr_at(self.step, self.schedule)}
        with T.no_grad():
            total, loss_s, loss_k = self._val_losses()
            metrics["val_loss"] = total
            metrics["val_loss_s"] = loss_s
            metrics["val_loss_k"] = loss_k
            metrics["wer"] = None
            metrics["eer"] = None
            if self.mode != "stl_skr":
                metrics["wer"] = evaluation.wer_on_manifest(
                    self.model, self.val_manifest, self.vocab, self.val_store,
                    cache=self.cache)
            if self.mode != "stl_asr" and self.val_trials is not None:
                metrics["eer"] = self._val_eer()

        if self.best_val_loss is None or metrics["val_loss"] < self.best_val_loss:
            self.best_val_loss = metrics["val_loss"]
            self.steps_since_improve = 0
        else:
            self.steps_since_improve += self.cfg.trainer.validate_every
        if self.steps_since_improve >= self.cfg.trainer.early_stop_patience:
            self.stop_requested = True

        if metrics["wer"] is not None or metrics["eer"] is not None:
            score = selection_score(metrics["wer"], metrics["eer"])
            if self.best_selection is None or score < self.best_selection["score"]:
                self.best_selection = {"score": score, "step": self.step,
                                       "wer": metrics["wer"], "eer": metrics["eer"]}
                if self.run_dir is not None:
                    self.save(os.path.join(self.run_dir, "checkpoints", "best"))
        self.history.append(metrics)
        return metrics

    # ---- checkpointing -------------------------------------------------------

    def save(self, out_dir):
        ckpt.save_checkpoint(
            out_dir, self.model, self.cfg, self.vocab, step=self.step, adam=self.adam,
            streams={"speech": self.speech_stream.state(),
                     "speaker": self.speaker_stream.state()},
            best={"val_loss": self.best_val_loss, "selection": self.best_selection},
            patience={"steps_since_improve": self.steps_since_improve},
            history=self.history,
        )

    def restore(self, ckpt_dir):
        manifest, arrays = ckpt.load_checkpoint(ckpt_dir)
        ckpt.restore_model_arrays(self.model, arrays)
        for name in self.adam.m:
            self.adam.m[name] = arrays[f"adam_m/{name}"].copy()
            self.adam.v[name] = arrays[f"adam_v/{name}"].copy()
        self.adam.t = {n: int(t) for n, t in manifest["adam_t"].items()}
        self.step = manifest["step"]
        self.speech_stream.restore(manifest["streams"]["speech"])
        self.speaker_stream.restore(manifest["streams"]["speaker"])
        self.best_val_loss = manifest["best"].get("val_loss")
        self.best_selection = manifest["best"].get("selection")
        self.steps_since_improve = manifest["patience"].get("steps_since_improve", 0)
        self.history = manifest["history"]

    # ---- orchestration -----------------------------------------------------

    def _append_metrics_csv(self, metrics):
        path = os.path.join(self.run_dir, "metrics.csv")
        new = not os.path.exists(path)

        def fmt(v):
            return "" if v is None else f"{v:.10g}"

        with open(path, "a", newline="") as fh:
            writer = csv.writer(fh)
            if new:
                writer.writerow(METRIC_COLUMNS)
            writer.writerow([
                metrics["step"], fmt(metrics["lr"]),
                fmt(metrics.get("train_loss")),
                fmt(metrics.get("train_loss_s")),
                fmt(metrics.get("train_loss_k")),
                fmt(metrics.get("wer")), fmt(metrics.get("eer")),
            ])

    def run(self):
        """The full protocol: freeze/schedule/clip per step, periodic
        validation with early stopping, best/last checkpoints, CSV log."""
        if self.run_dir is not None:
            os.makedirs(self.run_dir, exist_ok=True)
            from .config import dump_config
            dump_config(self.cfg, os.path.join(self.run_dir, "config.json"))

        t0 = time.time()
        if self.cfg.trainer.total_steps == 0:
            if self.run_dir is not None:
                self.save(os.path.join(self.run_dir, "checkpoints", "last"))
            return {"steps": 0, "stopped_early": False, "best": None,
                    "wall_seconds": time.time() - t0}

        last_report = None
        while self.step < self.cfg.trainer.total_steps:
            last_report = self.step_once()
            if self.step % self.cfg.trainer.validate_every == 0 or \
                    self.step >= self.cfg.trainer.total_steps:
                metrics = self.validate()
                metrics["train_loss"] = last_report.total
                metrics["train_loss_s"] = last_report.speech
                metrics["train_loss_k"] = last_report.speaker
                if self.run_dir is not None:
                    self._append_metrics_csv(metrics)
                if self.stop_requested:
                    break

        if self.run_dir is not None:
            self.save(os.path.join(self.run_dir, "checkpoints", "last"))
        return {
            "steps": self.step,
            "stopped_early": self.stop_requested,
            "best": self.best_selection,
            "wall_seconds": time.time() - t0,
        }


def run(run_cfg, vocab, train_manifest, val_manifest, val_trials, trial_manifest,
        run_dir=None):
    trainer = Trainer(run_cfg, vocab, train_manifest, val_manifest, val_trials,
                      trial_manifest, run_dir=run_dir)
    report = trainer.run()
    return report, trainer
