import logging
from typing import Optional

import numpy as np

from .core import ChannelKind, FieldFrame, SampleSequence

logger = logging.getLogger(__name__)


def monotone_running_max(values: np.ndarray, anchor: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Running maximum along axis 0 of a (T, ...) array, floored by ``anchor``.

    Parameters
    ----------
    values : np.ndarray
        Predicted frames stacked along the first axis
    anchor : np.ndarray, optional
        Frame of shape ``values.shape[1:]`` that no output value may fall below

    Returns
    -------
    np.ndarray
        Array of the same shape, non-decreasing along axis 0
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim < 1 or values.shape[0] == 0:
        raise ValueError("Need at least one frame")
    out = values.copy()
    if anchor is not None:
        anchor = np.asarray(anchor, dtype=np.float64)
        if anchor.shape != values.shape[1:]:
            raise ValueError(
                f"Anchor shape {anchor.shape} does not match frame shape {values.shape[1:]}"
            )
        out[0] = np.maximum(out[0], anchor)
    return np.maximum.accumulate(out, axis=0)


def enforce_positive_direction(
    pred_seq: SampleSequence, anchor: Optional[FieldFrame] = None
) -> SampleSequence:
    """
    Replace every decrease of predicted damage by the previous step's value.

    The first predicted frame is clamped from below by ``anchor``, the last
    known ground-truth frame before the predicted window. Without an anchor
    the first predicted frame anchors itself.
    """
    if pred_seq.channel_kind is not ChannelKind.FRACTURE_DAMAGE:
        raise ValueError(
            f"Positive direction applies to fracture damage, got {pred_seq.channel_kind.value}"
        )
    values = pred_seq.as_array()
    anchor_values = None
    if anchor is not None:
        if anchor.shape != pred_seq.shape:
            raise ValueError(f"Anchor {anchor.shape} and prediction {pred_seq.shape} differ")
        anchor_values = anchor.values
    corrected = monotone_running_max(values, anchor_values)
    n_raised = int((corrected > values).sum())
    if n_raised:
        logger.debug(f"{pred_seq.sample_id}: raised {n_raised} decreasing pixel values")
    return SampleSequence.from_array(
        pred_seq.sample_id,
        corrected,
        pred_seq.channel_kind,
        pred_seq.metadata,
        start_index=pred_seq.frames[0].time_index,
    )
