"""Cluster the learned features and inspect what the clusters contain.

Loads the probe checkpoint written by 05_desk_experiment.py, embeds the test
patches with the frozen encoder, agglomerates the features into 10 Ward
clusters, and prints the per-cluster label composition (the fractions of each
class inside every cluster). Also exports deterministic 2D PCA coordinates per
patch for plotting, and shows how strongly each cluster leans on single brains.
"""

import os
import sys

import numpy as np

from _common import banner
from patchcontrast.corpus import SplitSpec, load_corpus
from patchcontrast.evaluate import (
    cluster_composition,
    embed_2d,
    ward_cluster,
    write_cluster_csv,
    write_embedding_csv,
)
from patchcontrast.trainer import evaluate_on_sections, load_checkpoint

EXPERIMENT = "demo_out/experiment"
OUT = "demo_out/clusters"

if not os.path.exists(f"{EXPERIMENT}/probe.ckpt"):
    sys.exit("run 05_desk_experiment.py first; it writes the checkpoint this demo clusters")

params, _, _, config, _, model_config = load_checkpoint(f"{EXPERIMENT}/probe.ckpt")
corpus = load_corpus(f"{EXPERIMENT}/corpus")
with open(f"{EXPERIMENT}/split.json") as f:
    split = SplitSpec.from_json(f.read())

banner("embedding held-out patches with the frozen encoder")
block, features, labels, brains = evaluate_on_sections(
    params, model_config, corpus, split.test_sections, config.patch_side
)
print(f"{features.shape[0]} test patches -> {features.shape[1]}-d features "
      f"(probe top-1 {100 * block.top1:.1f}%)")

banner("agglomerative Ward clustering into 10 clusters")
report = ward_cluster(features, k=10)
table = cluster_composition(report, labels, top_m=3)
names = corpus.manifest.class_names
for cluster in sorted(table):
    size = int((report.assignments == cluster).sum())
    rows = ", ".join(f"{names[label]} ({pct:.1f}%)" for label, pct in table[cluster])
    print(f"  cluster {cluster + 1:2d} ({size:3d} patches): {rows}")

banner("brain composition per cluster (appearance effects group by brain)")
for cluster in sorted(table):
    members = report.assignments == cluster
    counts = np.bincount(brains[members], minlength=3)
    shares = ", ".join(f"brain {b}: {100 * n / members.sum():.0f}%" for b, n in enumerate(counts))
    print(f"  cluster {cluster + 1:2d}: {shares}")

os.makedirs(OUT, exist_ok=True)
write_cluster_csv(f"{OUT}/clusters.csv", table, names)
coords = embed_2d(features, seed=0)
write_embedding_csv(f"{OUT}/embedding.csv", coords, labels, brains, report.assignments)
print(f"\nwrote {OUT}/clusters.csv (cluster,label,percent) and "
      f"{OUT}/embedding.csv (x,y,label,brain_id,cluster)")
