#pragma once

#include "clintraj/elpigraph.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace clintraj {

enum class SegmentKind { internal, terminal, cycle, isolated };

std::string to_string(SegmentKind kind);

/// Partition of the edges into maximal non-branching paths.
struct SegmentDecomposition {
    std::vector<std::vector<std::size_t>> segments;  // node paths
    std::vector<SegmentKind> kinds;
    std::vector<std::size_t> edge_segment;           // edge index -> segment index

    /// Segments containing node v (one for degree <= 2, deg(v) for branching nodes).
    std::vector<std::size_t> segments_of_node(std::size_t v) const;
};

/// Depth-first walk over edges starting from leaf and branching nodes in index
/// order. Components that are pure cycles become one segment; isolated nodes
/// become singleton segments.
SegmentDecomposition decompose_segments(const PrincipalGraph& g);

/// Segment label per point: the segment of the nearest node; at a branching
/// node, the candidate segment containing the second-nearest node among the
/// nodes of the candidate segments.
std::vector<std::size_t> partition_by_segments(const Points& x, const PrincipalGraph& g,
                                               const SegmentDecomposition& seg);

/// Segment of the nearest edge, per point. Reference labeling for comparison.
std::vector<std::size_t> nearest_edge_segments(const Points& x, const PrincipalGraph& g,
                                               const SegmentDecomposition& seg);

/// Node whose nearest points are most significantly enriched for
/// `target_class` (largest 2x2 chi-square among positively enriched nodes).
std::size_t select_root(const PrincipalGraph& g, const PartitionVector& partition, const std::vector<int>& labels,
                        int target_class);

struct Trajectory {
    std::size_t id = 0;
    std::vector<std::size_t> path;  // root ... leaf
};

/// One trajectory per leaf other than the root, ordered by leaf index.
std::vector<Trajectory> extract_trajectories(const PrincipalGraph& g, std::size_t root);

enum class PseudotimeMetric { edge_count, euclidean };

struct PseudotimeAssignment {
    std::size_t root = 0;
    std::vector<Projection> projections;
    std::vector<double> pseudotime;
    std::vector<std::vector<std::size_t>> trajectories_of_point;
    std::vector<Trajectory> trajectories;

    /// Indices of the points whose projection lies on the trajectory.
    std::vector<std::size_t> points_on(std::size_t trajectory) const;
};

/// Edge-count distances from `root` (breadth-first).
std::vector<std::size_t> edge_distances(const PrincipalGraph& g, std::size_t root);

/// Pt = |root -> a| + eps when a is nearer the root than b, else |root -> a| - eps,
/// for the projection {p, eps} onto edge (a, b).
PseudotimeAssignment compute_pseudotime(const Points& x, const PrincipalGraph& g, std::size_t root,
                                        PseudotimeMetric metric = PseudotimeMetric::edge_count);

}  // namespace clintraj
