"""KNN and radius graphs over proposal centers, checked against brute force."""
import numpy as np

from relate3d.oracles import brute_force_knn, brute_force_radius
from relate3d.scenes import SceneSpec, generate_scene
from relate3d.spatial_graph import graph_degree_stats, knn_graph, radius_graph

# Ties go to the lower index, and k is clamped to n - 1.
line = [(0, 0, 0), (1, 0, 0), (2, 0, 0)]
print("k=1 on a line:", knn_graph(line, 1).neighbors)
print("k=10 on a line:", knn_graph(line, 10).neighbors)

# Dense clusters vs sparse lanes: radius graphs adapt, KNN always has k neighbors.
for pattern, n in (("clusters", 24), ("multi_lane", 12)):
    centers = generate_scene(SceneSpec(pattern, num_objects=n, seed=0)).proposals.centers()
    for name, g in (("knn k=16", knn_graph(centers, 16)), ("radius r=6", radius_graph(centers, 6.0))):
        print(f"{pattern:10s} {name:10s} degree {graph_degree_stats(g)}")

# Exact agreement with the O(n^2) construction.
rng = np.random.default_rng(1)
c = rng.uniform(-30, 30, size=(150, 3))
same = [list(r) for r in knn_graph(c, 16).neighbors] == brute_force_knn(c, 16)
same &= [list(r) for r in radius_graph(c, 6.0).neighbors] == brute_force_radius(c, 6.0)
print("matches brute force:", same)
