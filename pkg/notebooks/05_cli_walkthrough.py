# %% [markdown]
# # Command line walkthrough
#
# Every subcommand is also callable in-process through `setflow.cli.main`,
# which returns the exit code.

# %%
import tempfile
from pathlib import Path

from setflow.cli import main

work = Path(tempfile.mkdtemp())
tiny = ["--set", "model.hidden=16", "--set", "model.deepset_features=16", "--set", "io.log_interval=10"]

# %%
main(["gen-toy", "--sets", "200", "--seed", "1", "--out", str(work / "toy.jsonl")])
main(["train", "--data", "circles", "--out", str(work / "run"), "--steps", "30", *tiny])
main(["train", "--data", "circles", "--out", str(work / "run"), "--resume", str(work / "run" / "latest.ckpt"),
      "--steps", "60", *tiny])
print((work / "run" / "train_log.csv").read_text())

# %%
ckpt = str(work / "run" / "latest.ckpt")
main(["eval", "--ckpt", ckpt, "--data", str(work / "toy.jsonl")])
main(["sample", "--ckpt", ckpt, "--size", "4", "--count", "2", "--out", str(work / "samples.bin")])
print((work / "samples.csv").read_text())
main(["analyze-phases", "--ckpt", ckpt, "--size", "3", "--sets", "500", "--out", str(work / "phases.csv")])
