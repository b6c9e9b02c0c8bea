"""
Scoring a pair and mapping the inconsistency
============================================

VSM asks, position by position: of the cells that match *semantically*
(same content), what fraction also match *visually* (same appearance)?
A repainted region keeps its semantic match but loses the visual one, so
it drags VSM below 1 and lights up in the map.
"""

import json

import numpy as np

from _common import ensure_checkpoint, ensure_samples, OUT
from vsmatch.disentangle import read_params
from vsmatch.metric import VsmConfig, vsm, write_report
from vsmatch.store import load_manifest, read_mask, read_stack, resolve_path

manifest = ensure_samples()
params, meta = read_params(ensure_checkpoint())
record = load_manifest(manifest)[0]

stack_1 = read_stack(resolve_path(manifest, record.stack_path_1), record.image_id_1)
edited_2 = read_stack(
    resolve_path(manifest, record.inconsistent_stack_path_2), record.image_id_2 + "p"
)
clean_2 = read_stack(resolve_path(manifest, record.stack_path_2), record.image_id_2)
mask_1 = read_mask(resolve_path(manifest, record.subject_mask_path_1))
mask_2 = read_mask(resolve_path(manifest, record.subject_mask_path_2))

# Reference vs its untouched partner: everything that matches semantically
# also matches visually. Reference vs the repainted partner: the region's
# cells fail the visual test.
cfg = VsmConfig(t_s=0.0, t_v=0.6)
consistent = vsm(stack_1, clean_2, params, mask_1, mask_2, cfg)
edited = vsm(stack_1, edited_2, params, mask_1, mask_2, cfg)
print(f"sample {record.sample_id}")
print(f"  VSM vs untouched partner: {consistent.vsm:.3f} "
      f"({len(consistent.j_s)} semantic matches)")
print(f"  VSM vs repainted partner: {edited.vsm:.3f}")

# The inconsistency map is zero where appearance survived and rises where a
# semantic match lost its visual twin. At this toy scale the absolute values
# are small, so render relative to the map's own peak.
report_dir = OUT / "score"
paths = write_report(edited, report_dir, prefix="demo")
grid = edited.inconsistency_map.shape[0]
peak = float(edited.inconsistency_map.max())
print(f"\ninconsistency map ({grid}x{grid}, '#' = map peak {peak:.3f}):")
levels = " .:*#"
for row in edited.inconsistency_map:
    print("   " + "".join(levels[min(int(v / peak * (len(levels) - 1) + 0.999), 4)]
                          if peak > 0 else " " for v in row))

true_region = read_mask(resolve_path(manifest, record.region_mask_path_1))
inside = edited.inconsistency_map[true_region.bits.astype(bool)].mean()
outside = edited.inconsistency_map[(mask_1.bits & ~true_region.bits).astype(bool)].mean()
print(f"mean map value inside the planted region {inside:.3f} "
      f"vs elsewhere in the subject {outside:.3f}")

with open(paths[0]) as handle:
    keys = sorted(json.load(handle))
print(f"\nreport -> {paths[0]} (keys: {', '.join(keys)})")
print(f"raw map -> {paths[1]}; preview image -> {paths[2]}")
