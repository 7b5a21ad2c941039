import numpy as np
import pytest

from rhyme_mimic import datasets, gmm
from rhyme_mimic.game import RhymeLine, RhymeScript


def make_script(
    n_lines=3,
    sing_ms=3000,
    wait_ms=10000,
    repeat_limit=1,
    match_streak=5,
    pose_classes=None,
):
    if pose_classes is None:
        pose_classes = [datasets.POSE_CLASSES[i % len(datasets.POSE_CLASSES)] for i in range(n_lines)]
    lines = tuple(
        RhymeLine(
            index=i,
            lyric_text=f"line {i}",
            pose_class=pose_classes[i],
            audio_ref=f"audio/{i}.ogg",
            image_ref=f"images/{i}.png",
            sing_duration_ms=sing_ms,
            wait_timeout_ms=wait_ms,
            encourage_text=f"bravo {i}",
        )
        for i in range(n_lines)
    )
    return RhymeScript(
        title="test rhyme",
        lines=lines,
        repeat_limit=repeat_limit,
        match_streak=match_streak,
    )


def coco_document(points, confidence=0.9, timestamp_ms=0, extra_people=()):
    """Wire document with one 18-joint person (plus optional extras)."""
    people = []
    for pts, conf in [(points, confidence), *extra_people]:
        flat = []
        for x, y in pts:
            flat.extend((float(x), float(y), float(conf)))
        people.append({"pose_keypoints_2d": flat})
    return {"people": people, "timestamp_ms": timestamp_ms}


@pytest.fixture(scope="session")
def anchor_classifier():
    """Classifier trained on tight clusters around the 8 anchor gestures."""
    data = datasets.generate_synthetic(8, 20, spread=datasets.WELL_SEPARATED_SPREAD, seed=11)
    return gmm.train(data, gmm.TrainingConfig(rng_seed=11))


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
