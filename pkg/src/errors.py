# -*- coding: utf-8 -*-
"""
Error types raised across the toolkit.

Every error named by an operation has its own class so callers (and the CLI)
can react to it by name. All of them derive from DexPriorError.
"""
from __future__ import annotations


class DexPriorError(Exception):
    """Base class; the CLI maps these to a non-zero exit status."""


class ConfigError(DexPriorError):
    pass


# ── Hand models / keypoints ──────────────────────────────────────────────────
class MissingJoint(DexPriorError):
    pass


class DuplicateJoint(DexPriorError):
    pass


class NonFinite(DexPriorError):
    pass


class DegenerateCloud(DexPriorError):
    pass


# ── Retargeting ──────────────────────────────────────────────────────────────
class CollinearPalm(DexPriorError):
    pass


class DegenerateBone(DexPriorError):
    pass


# ── Pose prior ───────────────────────────────────────────────────────────────
class KTooLarge(DexPriorError):
    pass


# ── Ingestion ────────────────────────────────────────────────────────────────
class ParseError(DexPriorError):
    pass


class EmptyFile(DexPriorError):
    pass


class BadMesh(DexPriorError):
    pass


class MissingAffordance(DexPriorError):
    pass


class NoValidPixels(DexPriorError):
    pass


# ── Rewards / simulator ──────────────────────────────────────────────────────
class EmptySet(DexPriorError):
    pass


class EpisodeOver(DexPriorError):
    pass


class NotAttached(DexPriorError):
    pass


# ── Agent ────────────────────────────────────────────────────────────────────
class ShapeMismatch(DexPriorError):
    pass


class NonFiniteLoss(DexPriorError):
    pass


# ── Evaluation ───────────────────────────────────────────────────────────────
class IncompleteLog(DexPriorError):
    pass


class NotSuccessful(DexPriorError):
    pass


class MissingConsensus(DexPriorError):
    pass


class ReplayMismatch(DexPriorError):
    pass
