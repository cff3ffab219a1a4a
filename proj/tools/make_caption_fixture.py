#!/usr/bin/env python3
"""Regenerates fixtures/pinwheel_captions.jsonl.

The corpus imitates per-frame egocentric narrations of one pinwheel session:
one caption per frame, labeled with the recipe step being performed. Per-step
frame counts follow the single-video sample counts of the reference
evaluation (5671 frames in total). Captions are drawn from step-specific
narration pools, generic filler narrations, and occasional narrations of a
neighbouring step, so that similarity and classification are imperfect.
"""

import json
import random
import sys

STEP_COUNTS = [11, 16, 773, 152, 523, 153, 387, 466, 407, 338, 355, 1752, 338]

STEP_POOLS = [
    ["#C C places a tortilla on the board", "#C C picks up the tortilla",
     "#C C puts the tortilla on the chopping board", "#C C opens a packet of tortillas"],
    ["#C C scoops peanut butter with a knife", "#C C opens the jar",
     "#C C dips the knife into the jar", "#C C holds the jar of butter"],
    ["#C C spreads something on a tortilla", "#C C spreads butter on the bread",
     "#C C spreads peanut butter on the tortilla with a knife", "#C C rubs the knife on the tortilla",
     "#C C smears the spread on the flatbread"],
    ["#C C wipes the knife with a tissue", "#C C cleans the knife with a paper towel",
     "#C C picks a paper towel", "#C C wipes the blade"],
    ["#C C scoops jam from the jar", "#C C opens the jelly jar",
     "#C C dips the knife in the jam", "#C C takes jelly with the knife"],
    ["#C C spreads jam on the tortilla", "#C C spreads jelly over the butter",
     "#C C smears jelly on the bread", "#C C spreads something red on the tortilla"],
    ["#C C wipes the knife again", "#C C cleans the knife with the towel",
     "#C C drops the paper towel", "#C C cleans the knife"],
    ["#C C rolls the tortilla", "#C C folds the tortilla into a roll",
     "#C C rolls the bread tightly", "#C C presses the rolled tortilla"],
    ["#C C inserts a toothpick into the roll", "#C C picks a toothpick",
     "#C C pushes toothpicks into the tortilla", "#C C sticks a toothpick in the wrap"],
    ["#C C cuts the end of the roll", "#C C trims the tortilla with a knife",
     "#C C cuts the wrap with a knife", "#C C removes the end of the roll"],
    ["#C C slides a thread under the roll", "#C C pulls out dental floss",
     "#C C places the floss under the tortilla", "#C C holds a string"],
    ["#C C cuts the roll with a thread", "#C C pulls the floss across the roll",
     "#C C slices the tortilla with floss", "#C C crosses the string over the roll",
     "#C C cuts the wrap into pieces"],
    ["#C C places the pieces on a plate", "#C C arranges the pinwheels on the plate",
     "#C C moves the food to a plate", "#C C puts the rolls on a dish"],
]

FILLER = [
    "#C C looks around", "#C C moves his hand", "#C C holds the knife",
    "#C C adjusts the board", "#C C touches the table", "#O a man stands in the kitchen",
]


def main(path):
    rng = random.Random(20230615)
    frame = 0
    with open(path, "w", encoding="utf-8") as out:
        for step, count in enumerate(STEP_COUNTS):
            for _ in range(count):
                roll = rng.random()
                if roll < 0.75:
                    text = rng.choice(STEP_POOLS[step])
                elif roll < 0.90:
                    text = rng.choice(FILLER)
                else:
                    neighbour = min(max(step + rng.choice([-1, 1]), 0), len(STEP_COUNTS) - 1)
                    text = rng.choice(STEP_POOLS[neighbour])
                record = {"frame_index": frame, "text": text, "step": step}
                out.write(json.dumps(record, separators=(",", ":")) + "\n")
                frame += 1


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "fixtures/pinwheel_captions.jsonl")
