import enum


class GestureLabel(enum.IntEnum):
    """Classification targets.

    The integer values double as class indices for the three gesture
    logits; ``NOISE`` sits outside the logit range.
    """

    SWIPE = 0
    PUSH = 1
    PULL = 2
    NOISE = 3

    @classmethod
    def parse(cls, text: str) -> "GestureLabel":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown gesture label: {text!r}") from None

    def __str__(self) -> str:
        return self.name.capitalize()


GESTURES = (GestureLabel.SWIPE, GestureLabel.PUSH, GestureLabel.PULL)
N_CLASSES = len(GESTURES)
