"""Run configuration: a strict JSON schema, defaults, and the paper bundle.

Configs are plain JSON documents. Validation is strict (unknown keys are
rejected with their path) and normalization fills every default, so a
normalized config round-trips through JSON unchanged and hashes stably.
"""

import hashlib
import json

from .harness import QUERY_ATTACKS, TRANSFER_ATTACKS
from .oracle import FeedbackMode
from .taxonomy import DataQuality, DataQuantity, Interactivity, ThreatModel


class ConfigError(ValueError):
    pass


_BUDGET_MODES = ("iters", "seconds", "queries")
_BUDGET_KIND = {"iters": "iterations", "seconds": "wallclock", "queries": "queries"}
ALL_ATTACKS = TRANSFER_ATTACKS + QUERY_ATTACKS


def _check_keys(obj, allowed, path):
    unknown = set(obj) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} at {path}")


def _require(obj, key, path):
    if key not in obj:
        raise ConfigError(f"missing required key {key!r} at {path}")
    return obj[key]


def _normalize_dataset(cfg, path):
    _check_keys(cfg, ("source", "generator", "n", "shape", "classes", "seed",
                      "params", "images", "labels", "train_n"), path)
    source = _require(cfg, "source", path)
    if source == "synthetic":
        out = {
            "source": "synthetic",
            "generator": _require(cfg, "generator", path),
            "n": int(_require(cfg, "n", path)),
            "shape": [int(d) for d in cfg.get("shape", [1, 16, 16])],
            "classes": int(cfg.get("classes", 4)),
            "seed": int(cfg.get("seed", 0)),
            "params": dict(cfg.get("params", {})),
        }
    elif source == "idx":
        out = {
            "source": "idx",
            "images": str(_require(cfg, "images", path)),
            "labels": str(_require(cfg, "labels", path)),
        }
    else:
        raise ConfigError(f"unknown dataset source {source!r} at {path}")
    if "train_n" in cfg and cfg["train_n"] is not None:
        out["train_n"] = int(cfg["train_n"])
    return out


def _normalize_train(cfg, path):
    if cfg is None:
        return None
    _check_keys(cfg, ("epochs", "batch_size", "learning_rate", "optimizer",
                      "momentum", "seed", "adversarial"), path)
    adv = cfg.get("adversarial")
    if adv is not None:
        _check_keys(adv, ("pgd_steps", "pgd_epsilon", "pgd_step_size"), f"{path}.adversarial")
        adv = {
            "pgd_steps": int(adv.get("pgd_steps", 7)),
            "pgd_epsilon": float(adv.get("pgd_epsilon", 16 / 255)),
            "pgd_step_size": adv.get("pgd_step_size"),
        }
    return {
        "epochs": int(cfg.get("epochs", 8)),
        "batch_size": int(cfg.get("batch_size", 32)),
        "learning_rate": float(cfg.get("learning_rate", 0.03)),
        "optimizer": str(cfg.get("optimizer", "sgd-momentum")),
        "momentum": float(cfg.get("momentum", 0.9)),
        "seed": int(cfg.get("seed", 0)),
        "adversarial": adv,
    }


def _normalize_model(cfg, path):
    _check_keys(cfg, ("arch", "path", "train"), path)
    out = {"arch": cfg.get("arch"), "path": cfg.get("path"),
           "train": _normalize_train(cfg.get("train"), f"{path}.train")}
    if out["path"] is None and (out["arch"] is None or out["train"] is None):
        raise ConfigError(f"model at {path} needs either a path or arch+train")
    return out


def _normalize_threat_model(cfg, path):
    _check_keys(cfg, ("interactive", "feedback", "data_quality", "data_quantity",
                      "pretrained_surrogate"), path)
    interactive = bool(_require(cfg, "interactive", path))
    feedback = cfg.get("feedback")
    if interactive:
        if feedback is None:
            raise ConfigError(f"interactive threat model at {path} needs a feedback entry")
        _check_keys(feedback, ("kind", "k"), f"{path}.feedback")
        kind = _require(feedback, "kind", f"{path}.feedback")
        if kind not in ("hard-label", "top-k", "full-scores"):
            raise ConfigError(f"unknown feedback kind {kind!r} at {path}.feedback")
        feedback = {"kind": kind}
        if kind == "top-k":
            feedback["k"] = int(_require(cfg["feedback"], "k", f"{path}.feedback"))
    elif feedback is not None:
        raise ConfigError(f"non-interactive threat model at {path} cannot declare feedback")
    quality = cfg.get("data_quality", "none")
    quantity = cfg.get("data_quantity", "insufficient")
    if quality not in ("none", "partial", "complete"):
        raise ConfigError(f"unknown data_quality {quality!r} at {path}")
    if quantity not in ("insufficient", "sufficient"):
        raise ConfigError(f"unknown data_quantity {quantity!r} at {path}")
    return {
        "interactive": interactive,
        "feedback": feedback,
        "data_quality": quality,
        "data_quantity": quantity,
        "pretrained_surrogate": bool(cfg.get("pretrained_surrogate", False)),
    }


def threat_model_from_config(cfg) -> ThreatModel:
    feedback = None
    if cfg["interactive"] and cfg["feedback"] is not None:
        f = cfg["feedback"]
        if f["kind"] == "top-k":
            feedback = FeedbackMode.top_k(f["k"])
        else:
            feedback = FeedbackMode(f["kind"])
    return ThreatModel(
        interactive=Interactivity.WITH_INTERACTIVE if cfg["interactive"]
        else Interactivity.NO_INTERACTIVE,
        feedback=feedback,
        data_quality={q.value: q for q in DataQuality}[cfg["data_quality"]],
        data_quantity={q.value: q for q in DataQuantity}[cfg["data_quantity"]],
        pretrained_surrogate=cfg["pretrained_surrogate"],
    )


def _normalize_setting(cfg, path):
    _check_keys(cfg, ("name", "goal", "epsilon", "target_model", "target_offset"), path)
    goal = cfg.get("goal", "untargeted")
    if goal not in ("untargeted", "targeted"):
        raise ConfigError(f"unknown goal {goal!r} at {path}")
    target_model = cfg.get("target_model", "standard")
    if target_model not in ("standard", "adversarial"):
        raise ConfigError(f"unknown target_model {target_model!r} at {path}")
    return {
        "name": str(_require(cfg, "name", path)),
        "goal": goal,
        "epsilon": float(cfg.get("epsilon", 16 / 255)),
        "target_model": target_model,
        "target_offset": int(cfg.get("target_offset", 1)),
    }


_TOP_KEYS = (
    "plan_id", "master_seed", "out_dir", "dataset", "models", "threat_model",
    "attacks", "settings", "budget", "seeds_per_run", "batch_size",
    "representative_iteration", "override_threat_model", "trace_every", "threads",
)


def normalize_config(cfg):
    """Validate strictly and fill defaults; raises ConfigError on any problem."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    _check_keys(cfg, _TOP_KEYS, "$")
    models = _require(cfg, "models", "$")
    _check_keys(models, ("target", "adversarial_target", "surrogates"), "$.models")
    budget = cfg.get("budget", {"mode": "iters", "value": 10})
    _check_keys(budget, ("mode", "value"), "$.budget")
    if budget.get("mode") not in _BUDGET_MODES:
        raise ConfigError(f"budget mode must be one of {_BUDGET_MODES}")

    attacks = []
    for i, att in enumerate(cfg.get("attacks", [])):
        _check_keys(att, ("id", "params", "threat_model"), f"$.attacks[{i}]")
        attack_id = _require(att, "id", f"$.attacks[{i}]")
        if attack_id not in ALL_ATTACKS:
            raise ConfigError(f"unknown attack id {attack_id!r} at $.attacks[{i}]")
        entry = {"id": attack_id, "params": dict(att.get("params", {}))}
        if att.get("threat_model") is not None:
            entry["threat_model"] = _normalize_threat_model(
                att["threat_model"], f"$.attacks[{i}].threat_model"
            )
        else:
            entry["threat_model"] = None
        attacks.append(entry)

    settings = cfg.get("settings")
    if settings is None:
        settings = [{"name": "default"}]
    normalized_settings = [
        _normalize_setting(s, f"$.settings[{i}]") for i, s in enumerate(settings)
    ]
    names = [s["name"] for s in normalized_settings]
    if len(set(names)) != len(names):
        raise ConfigError("setting names must be unique")

    out = {
        "plan_id": str(cfg.get("plan_id", "run")),
        "master_seed": int(cfg.get("master_seed", 0)),
        "out_dir": cfg.get("out_dir"),
        "dataset": _normalize_dataset(_require(cfg, "dataset", "$"), "$.dataset"),
        "models": {
            "target": _normalize_model(_require(models, "target", "$.models"), "$.models.target"),
            "adversarial_target": (
                _normalize_model(models["adversarial_target"], "$.models.adversarial_target")
                if models.get("adversarial_target") is not None
                else None
            ),
            "surrogates": [
                _normalize_model(m, f"$.models.surrogates[{i}]")
                for i, m in enumerate(models.get("surrogates", []))
            ],
        },
        "threat_model": _normalize_threat_model(
            _require(cfg, "threat_model", "$"), "$.threat_model"
        ),
        "attacks": attacks,
        "settings": normalized_settings,
        "budget": {"mode": budget["mode"], "value": float(_require(budget, "value", "$.budget"))},
        "seeds_per_run": int(cfg.get("seeds_per_run", 100)),
        "batch_size": int(cfg.get("batch_size", 5)),
        "representative_iteration": cfg.get("representative_iteration"),
        "override_threat_model": bool(cfg.get("override_threat_model", False)),
        "trace_every": int(cfg.get("trace_every", 1)),
        "threads": int(cfg.get("threads", 1)),
    }
    if any(s["target_model"] == "adversarial" for s in normalized_settings):
        if out["models"]["adversarial_target"] is None:
            raise ConfigError(
                "a setting uses the adversarial target but $.models.adversarial_target is missing"
            )
    return out


def budget_from_config(cfg_budget):
    from .harness import Budget

    return Budget(_BUDGET_KIND[cfg_budget["mode"]], cfg_budget["value"])


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False)


def config_hash(cfg):
    return hashlib.sha256(canonical_json(cfg).encode("utf-8")).hexdigest()


def paper_protocol():
    """The default experiment bundle: the appendix protocol at desk scale.

    16/255 budget with step epsilon/T (T = 40 targeted / 10 untargeted), 100
    seeds in batches of 5, surrogate architectures disjoint from the target,
    and the hard-setting sweep (untargeted 16/255 and 8/255, targeted
    16/255, untargeted against an adversarially trained target). The
    wall-clock budget is 60 seconds per batch, the desk-scale stand-in for
    30 minutes per batch.
    """
    train = {"epochs": 6, "batch_size": 32, "learning_rate": 0.03,
             "optimizer": "sgd-momentum", "seed": 11, "adversarial": None}
    adv_train = dict(train)
    adv_train["adversarial"] = {"pgd_steps": 7, "pgd_epsilon": 16 / 255, "pgd_step_size": None}
    return normalize_config({
        "plan_id": "paper-protocol",
        "master_seed": 7,
        "dataset": {
            "source": "synthetic", "generator": "shapes", "n": 500,
            "shape": [1, 16, 16], "classes": 4, "seed": 3,
            "params": {"noise": 0.08},
        },
        "models": {
            "target": {"arch": "conv", "train": train},
            "adversarial_target": {"arch": "conv", "train": adv_train},
            "surrogates": [
                {"arch": "linear", "train": dict(train, seed=12)},
                {"arch": "mlp", "train": dict(train, seed=13)},
            ],
        },
        "threat_model": {
            "interactive": False,
            "data_quality": "complete", "data_quantity": "insufficient",
            "pretrained_surrogate": True,
        },
        "attacks": [{"id": a} for a in TRANSFER_ATTACKS],
        "settings": [
            {"name": "untargeted-16", "goal": "untargeted", "epsilon": 16 / 255},
            {"name": "untargeted-8", "goal": "untargeted", "epsilon": 8 / 255},
            {"name": "targeted-16", "goal": "targeted", "epsilon": 16 / 255},
            {"name": "untargeted-16-robust", "goal": "untargeted", "epsilon": 16 / 255,
             "target_model": "adversarial"},
        ],
        "budget": {"mode": "seconds", "value": 60},
        "seeds_per_run": 100,
        "batch_size": 5,
    })
